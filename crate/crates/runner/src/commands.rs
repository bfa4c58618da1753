//! Everything a subcommand does besides parsing its arguments.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use collusion_core::additive::{fit_additive_model, AdditiveConfig, AdditiveData, AdditiveModel};
use collusion_core::analysis::{analyze_run, RunAnalysis, SensitivityReport};
use collusion_core::market::{solve_ce, solve_cne, EquilibriumConfig};
use collusion_core::qlearn::simulate;
use collusion_core::{Environment64, LearningConfig64, RunResult64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::MarketBlock;
use crate::error::{Result, RunnerError};
use crate::results::{
    create_dir, read_qdump, read_trace, write_bytes, write_json, ResultSet, RunRecord, Status, CONFIG_FILE,
};
use crate::sweep::sweep_points;

/// Benchmarks of one market, as printed by `solve-eq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub market: MarketBlock,
    pub p_star: [f64; 2],
    pub p_coll: [f64; 2],
    pub pi_star: f64,
    pub pi_coll: f64,
    pub shares_star: [f64; 2],
    pub shares_coll: [f64; 2],
    pub foc_residual_star: f64,
    pub foc_residual_coll: f64,
    pub global_best_response: bool,
}

pub fn solve_eq(market: &MarketBlock) -> Result<EquilibriumReport> {
    let params = market.params().map_err(|e| RunnerError::Config(format!("market: {e}")))?;
    let cfg = EquilibriumConfig::default();
    let failed = |e: collusion_core::market::MarketError| RunnerError::Unsolved(e.to_string());
    let cne = solve_cne(&params, &cfg).map_err(failed)?;
    let ce = solve_ce(&params, &cfg).map_err(failed)?;
    Ok(EquilibriumReport {
        market: market.clone(),
        p_star: cne.prices,
        p_coll: ce.prices,
        pi_star: cne.profit,
        pi_coll: ce.profit,
        shares_star: cne.shares.platforms[0],
        shares_coll: ce.shares.platforms[0],
        foc_residual_star: cne.foc_residual,
        foc_residual_coll: ce.foc_residual,
        global_best_response: cne.global_best_response,
    })
}

/// Results directories named by `paths`: each path is either a results
/// directory or a parent holding several of them.
pub fn expand_result_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(CONFIG_FILE).is_file() {
            out.push(p.clone());
            continue;
        }
        let entries = std::fs::read_dir(p).map_err(RunnerError::io(p))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join(CONFIG_FILE).is_file())
            .collect();
        found.sort();
        out.extend(found);
    }
    if out.is_empty() {
        let shown = paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ");
        return Err(RunnerError::Io {
            path: PathBuf::from(shown),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no results found"),
        });
    }
    Ok(out)
}

/// Category × metric table of one sweep point.
#[derive(Debug, Clone)]
pub struct PointAnalysis {
    pub point: usize,
    pub report: SensitivityReport,
}

/// Rebuilds the environment of every finished point, recovers each run's
/// final tables (from the dumps, or by replaying the seeded run and checking
/// it reproduces the stored level) and audits them. Writes
/// `analysis/point-NNNNN.{csv,json}` into the results directory.
pub fn analyze(dir: &Path, workers: Option<usize>) -> Result<Vec<PointAnalysis>> {
    let set = ResultSet::load(dir)?;
    let cfg = &set.config;
    let points = sweep_points(cfg);
    let out_dir = dir.join("analysis");
    create_dir(&out_dir)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| RunnerError::Config(format!("workers: cannot start pool: {e}")))?;

    let mut out = Vec::new();
    for summary in set.points.iter().filter(|p| p.status == Status::Ok) {
        let point = points
            .get(summary.point)
            .filter(|p| p.market.phi == summary.phi)
            .ok_or_else(|| RunnerError::results(dir, format!("point {} does not match the config", summary.point)))?;
        let eq = summary
            .equilibrium
            .clone()
            .ok_or_else(|| RunnerError::results(dir, format!("point {} has no equilibrium", summary.point)))?;
        let params = point
            .market
            .params()
            .map_err(|e| RunnerError::results(dir, e.to_string()))?;
        let learning = point.learning(&cfg.learning);
        let env = Environment64::new(&params, &eq, &learning).map_err(|e| RunnerError::results(dir, e.to_string()))?;

        let records: Vec<&RunRecord> = set.records_of(summary.point).collect();
        let analyses: Vec<std::result::Result<RunAnalysis, String>> = pool.install(|| {
            records
                .par_iter()
                .map(|rec| -> Result<std::result::Result<RunAnalysis, String>> {
                    if rec.status != Status::Ok {
                        return Ok(Err(format!(
                            "run {}: {}",
                            rec.run_index,
                            rec.reason.clone().unwrap_or_default()
                        )));
                    }
                    let run = recover_run(dir, rec, &env, &learning)?;
                    Ok(Ok(analyze_run(&run, &env, &cfg.analysis)))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut runs = Vec::new();
        let mut rejected = Vec::new();
        for a in analyses {
            match a {
                Ok(r) => runs.push(r),
                Err(e) => rejected.push(e),
            }
        }
        let report = SensitivityReport::from_runs(runs, records.len(), rejected);
        let stem = format!("point-{:05}", summary.point);
        write_bytes(&out_dir.join(format!("{stem}.csv")), report.to_csv().as_bytes())?;
        write_json(&out_dir.join(format!("{stem}.json")), &report)?;
        out.push(PointAnalysis {
            point: summary.point,
            report,
        });
    }
    Ok(out)
}

fn recover_run(dir: &Path, rec: &RunRecord, env: &Environment64, learning: &LearningConfig64) -> Result<RunResult64> {
    let stored = rec.delta_tilde.expect("finished runs carry a level");
    if let (Some(dumps), Some(trace)) = (&rec.qdumps, &rec.trace) {
        let (q0, _) = read_qdump(&dir.join(&dumps[0]))?;
        let (q1, _) = read_qdump(&dir.join(&dumps[1]))?;
        return Ok(RunResult64 {
            delta_tilde: stored,
            delta_trace: [Vec::new(), Vec::new()],
            tail_actions: read_trace(&dir.join(trace))?,
            q_tables: [q0, q1],
            cycle: None,
            seed: rec.seed,
            run_index: rec.run_index,
            update_target: rec.update_target,
            final_temperature: rec.final_temperature.unwrap_or(f64::NAN),
            wall_time_secs: rec.wall_time_secs,
        });
    }
    let run = simulate(env, learning, rec.run_index).map_err(|e| RunnerError::results(dir, e.to_string()))?;
    if run.delta_tilde.to_bits() != stored.to_bits() {
        return Err(RunnerError::results(
            dir,
            format!(
                "replaying point {} run {} gives {} instead of the stored {stored}",
                rec.point, rec.run_index, run.delta_tilde
            ),
        ));
    }
    Ok(run)
}

/// Fit summary written next to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_samples: usize,
    pub delta0: f64,
    pub r_squared: f64,
    pub n_univariate_perms: usize,
    pub n_bivariate_perms: usize,
}

/// Fits the additive model of Δ̃ on Φ to the finished runs of `dirs` and
/// writes `model.json`, `fit.json`, `univariate.csv` and `bivariate.csv`
/// into `out`.
pub fn fit_additive(dirs: &[PathBuf], cfg: &AdditiveConfig, out: &Path) -> Result<(AdditiveModel, FitSummary)> {
    let mut phi = Vec::new();
    let mut y = Vec::new();
    for d in dirs {
        let set = ResultSet::load(d)?;
        for r in set.records.iter().filter(|r| r.status == Status::Ok) {
            phi.push(r.phi);
            y.push(r.delta_tilde.expect("finished runs carry a level"));
        }
    }
    let where_ = dirs.first().cloned().unwrap_or_default();
    let data = AdditiveData::new(phi, y).map_err(|e| RunnerError::results(&where_, e.to_string()))?;
    let model = fit_additive_model(&data, cfg).map_err(|e| RunnerError::results(&where_, e.to_string()))?;
    let summary = FitSummary {
        n_samples: model.n_samples,
        delta0: model.delta0,
        r_squared: model.r_squared(&data),
        n_univariate_perms: model.n_univariate_perms,
        n_bivariate_perms: model.n_bivariate_perms,
    };
    create_dir(out)?;
    write_json(&out.join("model.json"), &model)?;
    write_json(&out.join("fit.json"), &summary)?;
    write_bytes(&out.join("univariate.csv"), model.univariate_csv(201).as_bytes())?;
    write_bytes(&out.join("bivariate.csv"), model.bivariate_csv(41).as_bytes())?;
    Ok((model, summary))
}

/// Joins the point summaries of several sweeps into one long CSV with the
/// benchmarks alongside each mean and band.
pub fn report(dirs: &[PathBuf]) -> Result<String> {
    let sets = dirs.iter().map(|d| ResultSet::load(d)).collect::<Result<Vec<_>>>()?;
    let coords: Vec<String> = sets
        .iter()
        .flat_map(|s| s.points.iter().flat_map(|p| p.coords.keys().cloned()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["config_hash", "preset", "axis", "point"].map(String::from).to_vec();
    header.extend(coords.iter().cloned());
    header.extend(
        [
            "phi_bb_at", "phi_bs_at", "phi_sb_at", "phi_ss_at", "rho_at", "p_star_b", "p_star_s", "p_coll_b",
            "p_coll_s", "pi_star", "pi_coll", "mean", "ci_lo", "ci_hi", "n_ok", "n_rejected", "status", "reason",
        ]
        .map(String::from),
    );
    wtr.write_record(&header).expect("in-memory write");
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for set in &sets {
        let hash = set.config.hash();
        let axis = set.config.sweep.as_ref().map_or("none", |s| s.axis_name());
        for p in &set.points {
            let eq = p.equilibrium.as_ref();
            let mut row = vec![
                hash.clone(),
                set.config.preset.as_str().to_string(),
                axis.to_string(),
                p.point.to_string(),
            ];
            row.extend(coords.iter().map(|c| f(p.coords.get(c).copied())));
            row.extend(p.phi.iter().map(|v| v.to_string()));
            row.push(p.rho.to_string());
            row.push(f(eq.map(|e| e.p_star[0])));
            row.push(f(eq.map(|e| e.p_star[1])));
            row.push(f(eq.map(|e| e.p_coll[0])));
            row.push(f(eq.map(|e| e.p_coll[1])));
            row.push(f(eq.map(|e| e.pi_star)));
            row.push(f(eq.map(|e| e.pi_coll)));
            row.push(f(p.mean));
            row.push(f(p.ci_lo));
            row.push(f(p.ci_hi));
            row.push(p.n_ok.to_string());
            row.push(p.n_rejected.to_string());
            row.push(serde_json::to_value(p.status).expect("status").as_str().expect("string").to_string());
            row.push(p.reason.clone().unwrap_or_default());
            wtr.write_record(&row).expect("in-memory write");
        }
    }
    Ok(String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8"))
}
