//! Sweep execution: expand the axis into points, solve each point's
//! benchmarks once, run the seeded simulations on a fixed worker pool and
//! write the results.
//!
//! Every run draws from the stream `run_index` of the base seed, so the same
//! run index sees the same random numbers at every point and on any number
//! of workers. Jobs are collected in queue order before anything is written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use collusion_core::additive::sample_phi;
use collusion_core::analysis::classify_cycle;
use collusion_core::market::{solve_ce, solve_cne, EquilibriumConfig, EquilibriumPair, MarketError};
use collusion_core::metrics::{bootstrap_ci, sample_mean, CollusionSummary};
use collusion_core::qlearn::{simulate, QlearnError};
use collusion_core::{Environment64, LearningConfig64};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{MarketBlock, ResolvedConfig, SweepSpec};
use crate::error::{Result, RunnerError};
use crate::results::{
    create_dir, qdump_name, trace_name, write_json, write_jsonl, write_qdump, write_trace, Manifest, PointSummary,
    RunRecord, Status, CONFIG_FILE, MANIFEST_FILE, POINTS_FILE, QDUMPS_DIR, RECORDS_FILE, SUMMARY_FILE, TRACES_DIR,
};

/// Streams above this bit are reserved for sweep-level randomness, below it
/// for runs.
const AUX_STREAM: u64 = 1 << 63;
const PHI_STREAM: u64 = AUX_STREAM | (1 << 62);

/// Market and penalty of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub coords: BTreeMap<String, f64>,
    pub market: MarketBlock,
    pub rho: f64,
}

impl SweepPoint {
    pub fn learning(&self, base: &LearningConfig64) -> LearningConfig64 {
        LearningConfig64 {
            rho: self.rho,
            ..base.clone()
        }
    }
}

fn phi_coords(phi: &[f64; 4]) -> BTreeMap<String, f64> {
    ["phi_bb", "phi_bs", "phi_sb", "phi_ss"]
        .iter()
        .zip(phi)
        .map(|(k, v)| (k.to_string(), *v))
        .collect()
}

/// Points in queue order; a config without a sweep has the base point only.
pub fn sweep_points(cfg: &ResolvedConfig) -> Vec<SweepPoint> {
    let base = &cfg.market;
    let rho = cfg.learning.rho;
    let point = |index: usize, coords: BTreeMap<String, f64>, market: MarketBlock, rho: f64| SweepPoint {
        index,
        coords,
        market,
        rho,
    };
    let scalar_axis = |name: &str, values: &crate::config::AxisValues, set: &dyn Fn(&mut MarketBlock, &mut f64, f64)| {
        values
            .expand()
            .expect("validated")
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let mut market = base.clone();
                let mut r = rho;
                set(&mut market, &mut r, v);
                point(i, BTreeMap::from([(name.to_string(), v)]), market, r)
            })
            .collect()
    };
    match &cfg.sweep {
        None => vec![point(0, BTreeMap::new(), base.clone(), rho)],
        Some(SweepSpec::Beta { values }) => scalar_axis("beta", values, &|m, _, v| m.beta = [v, v]),
        Some(SweepSpec::U0 { values }) => scalar_axis("u0", values, &|m, _, v| m.u0 = [v, v]),
        Some(SweepSpec::Delta { values }) => scalar_axis("delta", values, &|m, _, v| m.delta = v),
        Some(SweepSpec::Rho { values }) => scalar_axis("rho", values, &|_, r, v| *r = v),
        Some(SweepSpec::PhiGrid { entries, values }) => {
            let values = values.expand().expect("validated");
            let combos: Vec<Vec<f64>> = match entries.len() {
                1 => values.iter().map(|v| vec![*v]).collect(),
                _ => values
                    .iter()
                    .flat_map(|a| values.iter().map(move |b| vec![*a, *b]))
                    .collect(),
            };
            combos
                .into_iter()
                .enumerate()
                .map(|(i, combo)| {
                    let mut market = base.clone();
                    let mut coords = BTreeMap::new();
                    for (e, v) in entries.iter().zip(combo) {
                        market.phi[e.column()] = v;
                        coords.insert(format!("phi_{}", e.name()), v);
                    }
                    point(i, coords, market, rho)
                })
                .collect()
        }
        Some(SweepSpec::PhiRandom { samples }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(PHI_STREAM);
            (0..*samples)
                .map(|i| {
                    let phi = sample_phi(&mut rng).to_array();
                    let market = MarketBlock { phi, ..base.clone() };
                    point(i, phi_coords(&phi), market, rho)
                })
                .collect()
        }
    }
}

/// Worker count and optional artifacts; none of them changes the records.
#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// Pool size; available parallelism when absent.
    pub workers: Option<usize>,
    pub save_qdumps: bool,
    pub save_traces: bool,
    /// Print one progress line per finished point to stderr.
    pub progress: bool,
}

/// A prepared point: its environment and whether the competitive benchmark
/// is a global best response.
struct Prepared {
    env: Environment64,
    learning: LearningConfig64,
    global_best_response: bool,
}

fn market_reason(e: MarketError) -> String {
    let e = QlearnError::from(e);
    format!("{}: {e}", e.reason())
}

fn prepare(point: &SweepPoint, cfg: &ResolvedConfig) -> std::result::Result<Prepared, String> {
    let params = point.market.params().map_err(market_reason)?;
    let eq_cfg = EquilibriumConfig::default();
    let cne = solve_cne(&params, &eq_cfg).map_err(market_reason)?;
    let ce = solve_ce(&params, &eq_cfg).map_err(market_reason)?;
    let eq = EquilibriumPair::from_solutions(&cne, &ce);
    let learning = point.learning(&cfg.learning);
    let env = Environment64::new(&params, &eq, &learning).map_err(|e| format!("{}: {e}", e.reason()))?;
    Ok(Prepared {
        env,
        learning,
        global_best_response: cne.global_best_response,
    })
}

struct Job<'a> {
    point: &'a SweepPoint,
    prepared: &'a Prepared,
    run_index: u64,
}

fn base_record(cfg: &ResolvedConfig, hash: &str, point: &SweepPoint, run_index: u64) -> RunRecord {
    RunRecord {
        config_hash: hash.to_string(),
        preset: cfg.preset,
        point: point.index,
        coords: point.coords.clone(),
        phi: point.market.phi,
        seed: cfg.seed,
        run_index,
        update_target: cfg.learning.update_target,
        status: Status::Skipped,
        reason: None,
        delta_tilde: None,
        platform_means: None,
        exceeded_one: None,
        cycle_category: None,
        cycle_period: None,
        final_temperature: None,
        trace: None,
        qdumps: None,
        wall_time_secs: 0.0,
    }
}

fn run_job(job: &Job, cfg: &ResolvedConfig, hash: &str, dir: &Path, opts: &ExecOptions) -> Result<RunRecord> {
    let mut rec = base_record(cfg, hash, job.point, job.run_index);
    let env = &job.prepared.env;
    let run = match simulate(env, &job.prepared.learning, job.run_index) {
        Ok(run) => run,
        Err(e) => {
            rec.status = Status::Rejected;
            rec.reason = Some(format!("{}: {e}", e.reason()));
            return Ok(rec);
        }
    };
    rec.wall_time_secs = run.wall_time_secs;
    rec.final_temperature = Some(run.final_temperature);
    if !run.delta_tilde.is_finite() || !run.q_tables.iter().all(|q| q.is_finite()) {
        rec.status = Status::Rejected;
        rec.reason = Some("non-finite: collusive level or Q-table is not finite".into());
        return Ok(rec);
    }
    let summary = CollusionSummary::from_run(&run, &env.eq);
    let cycle = classify_cycle(
        &run.tail_actions,
        env.grid.shape(),
        cfg.analysis.window,
        cfg.analysis.max_period,
    );
    rec.status = Status::Ok;
    rec.delta_tilde = Some(run.delta_tilde);
    rec.platform_means = Some(summary.platform_means);
    rec.exceeded_one = Some(summary.exceeded_one);
    rec.cycle_category = Some(cycle.category.label().to_string());
    rec.cycle_period = Some(cycle.period);
    if opts.save_traces {
        let name = trace_name(job.point.index, job.run_index);
        write_trace(&dir.join(&name), &run.tail_actions)?;
        rec.trace = Some(name);
    }
    if opts.save_qdumps {
        let names = [0, 1].map(|i| qdump_name(job.point.index, job.run_index, i));
        for (i, name) in names.iter().enumerate() {
            write_qdump(&dir.join(name), &run.q_tables[i], i as u32)?;
        }
        rec.qdumps = Some(names);
    }
    Ok(rec)
}

/// Mean and bootstrap band of the finished runs of one point.
fn summarize(
    point: &SweepPoint,
    prepared: &std::result::Result<Prepared, String>,
    records: &[RunRecord],
    cfg: &ResolvedConfig,
) -> PointSummary {
    let deltas: Vec<f64> = records.iter().filter_map(|r| r.delta_tilde).collect();
    let n_ok = deltas.len();
    let (status, reason) = match prepared {
        Err(reason) => (Status::Skipped, Some(reason.clone())),
        Ok(_) if n_ok == 0 => (Status::Rejected, Some("every run was rejected".to_string())),
        Ok(_) => (Status::Ok, None),
    };
    let (mean, ci) = if n_ok > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(AUX_STREAM | point.index as u64);
        let ci = bootstrap_ci(&deltas, cfg.bootstrap.level, cfg.bootstrap.resamples, &mut rng).expect("non-empty sample");
        (Some(sample_mean(&deltas).expect("non-empty sample")), Some(ci))
    } else {
        (None, None)
    };
    let ok = prepared.as_ref().ok();
    PointSummary {
        point: point.index,
        coords: point.coords.clone(),
        phi: point.market.phi,
        status,
        reason,
        equilibrium: ok.map(|p| p.env.eq.clone()),
        global_best_response: ok.map(|p| p.global_best_response),
        rho: point.rho,
        n_runs: records.len(),
        n_ok,
        n_rejected: records.iter().filter(|r| r.status == Status::Rejected).count(),
        mean,
        ci_lo: ci.map(|c| c.0),
        ci_hi: ci.map(|c| c.1),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The per-sweep CSV.
pub fn summary_csv(points: &[PointSummary]) -> String {
    let names: Vec<String> = points
        .iter()
        .flat_map(|p| p.coords.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["point".to_string()];
    header.extend(names.iter().cloned());
    header.extend(
        ["mean", "ci_lo", "ci_hi", "n_ok", "n_rejected", "status", "reason"]
            .iter()
            .map(|s| s.to_string()),
    );
    wtr.write_record(&header).expect("in-memory write");
    for p in points {
        let mut row = vec![p.point.to_string()];
        row.extend(names.iter().map(|n| fmt_opt(p.coords.get(n).copied())));
        row.push(fmt_opt(p.mean));
        row.push(fmt_opt(p.ci_lo));
        row.push(fmt_opt(p.ci_hi));
        row.push(p.n_ok.to_string());
        row.push(p.n_rejected.to_string());
        row.push(serde_json::to_value(p.status).expect("status").as_str().expect("string").to_string());
        row.push(p.reason.clone().unwrap_or_default());
        wtr.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// What a finished sweep left on disk.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub hash: String,
    pub manifest: Manifest,
    pub points: Vec<PointSummary>,
    pub records: Vec<RunRecord>,
}

impl SweepOutcome {
    pub fn all_failed(&self) -> bool {
        self.manifest.ok == 0
    }
}

/// Runs every (point, run) job of `cfg` and writes `<out_root>/<hash>/`.
/// Per-point failures are recorded, never fatal; only I/O errors abort.
pub fn run_sweep(cfg: &ResolvedConfig, out_root: &Path, opts: &ExecOptions) -> Result<SweepOutcome> {
    let hash = cfg.hash();
    let dir = out_root.join(&hash);
    create_dir(&dir)?;
    if opts.save_traces {
        create_dir(&dir.join(TRACES_DIR))?;
    }
    if opts.save_qdumps {
        create_dir(&dir.join(QDUMPS_DIR))?;
    }
    write_json(&dir.join(CONFIG_FILE), cfg)?;

    let points = sweep_points(cfg);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| RunnerError::Config(format!("workers: cannot start pool: {e}")))?;

    let (prepared, per_point) = pool.install(|| -> Result<_> {
        let prepared: Vec<std::result::Result<Prepared, String>> =
            points.par_iter().map(|p| prepare(p, cfg)).collect();
        let jobs: Vec<Job> = points
            .iter()
            .zip(&prepared)
            .filter_map(|(point, prep)| prep.as_ref().ok().map(|p| (point, p)))
            .flat_map(|(point, prepared)| {
                (0..cfg.runs_per_point as u64).map(move |run_index| Job {
                    point,
                    prepared,
                    run_index,
                })
            })
            .collect();
        let done: Vec<RunRecord> = jobs
            .par_iter()
            .map(|job| {
                let rec = run_job(job, cfg, &hash, &dir, opts);
                if opts.progress {
                    if let Ok(r) = &rec {
                        eprintln!(
                            "point {} run {}: {}",
                            r.point,
                            r.run_index,
                            r.delta_tilde.map_or_else(|| r.reason.clone().unwrap_or_default(), |d| format!("{d:.4}"))
                        );
                    }
                }
                rec
            })
            .collect::<Result<_>>()?;
        let mut done = done.into_iter().peekable();
        let mut per_point = Vec::with_capacity(points.len());
        for (point, prep) in points.iter().zip(&prepared) {
            let records: Vec<RunRecord> = match prep {
                Ok(_) => (0..cfg.runs_per_point).map(|_| done.next().expect("one record per job")).collect(),
                Err(reason) => (0..cfg.runs_per_point as u64)
                    .map(|r| RunRecord {
                        reason: Some(reason.clone()),
                        ..base_record(cfg, &hash, point, r)
                    })
                    .collect(),
            };
            per_point.push(records);
        }
        Ok((prepared, per_point))
    })?;

    let summaries: Vec<PointSummary> = points
        .iter()
        .zip(&prepared)
        .zip(&per_point)
        .map(|((point, prep), records)| summarize(point, prep, records, cfg))
        .collect();
    let records: Vec<RunRecord> = per_point.into_iter().flatten().collect();
    let manifest = Manifest::from_points(&summaries);

    write_jsonl(&dir.join(RECORDS_FILE), &records)?;
    write_jsonl(&dir.join(POINTS_FILE), &summaries)?;
    crate::results::write_bytes(&dir.join(SUMMARY_FILE), summary_csv(&summaries).as_bytes())?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;

    Ok(SweepOutcome {
        dir,
        hash,
        manifest,
        points: summaries,
        records,
    })
}
