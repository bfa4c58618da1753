//! The learning loop.

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::PriceGrid;
use super::policy::{q_update, q_update_penalized, BoltzmannSampler, UpdateRule, UpdateTarget};
use super::profits::{grid_solver, init_q, ProfitTable};
use super::table::QTable;
use super::{LearningConfig, QlearnError, MIN_PROFIT_GAP};
use crate::analysis::CycleRecord;
use crate::market::{EquilibriumPair, MarketParams};
use crate::scalar::Real;

/// Everything shared by the runs of one parameter point; immutable once built.
#[derive(Debug, Clone)]
pub struct Environment<F: Real> {
    pub params: MarketParams<F>,
    pub eq: EquilibriumPair<F>,
    pub grid: PriceGrid<F>,
    pub profits: ProfitTable<F>,
}

impl<F: Real> Environment<F> {
    /// Builds the grid from the equilibria and solves every grid profile.
    pub fn new(params: &MarketParams<F>, eq: &EquilibriumPair<F>, cfg: &LearningConfig<F>) -> Result<Self, QlearnError> {
        cfg.validate()?;
        check_gap(eq)?;
        let grid = PriceGrid::from_equilibrium(eq, cfg.epsilon, cfg.m)?;
        let profits = ProfitTable::build(params, &grid, &grid_solver())?;
        Ok(Self {
            params: params.clone(),
            eq: eq.clone(),
            grid,
            profits,
        })
    }

    /// An environment over an explicit grid and profit table.
    pub fn from_parts(
        params: MarketParams<F>,
        eq: EquilibriumPair<F>,
        grid: PriceGrid<F>,
        profits: ProfitTable<F>,
    ) -> Result<Self, QlearnError> {
        check_gap(&eq)?;
        if grid.shape() != profits.shape() {
            return Err(QlearnError::InvalidConfig("grid and profit table sizes differ".into()));
        }
        Ok(Self {
            params,
            eq,
            grid,
            profits,
        })
    }

    /// `Δ = (π − π*)/(π^C − π*)`.
    pub fn collusive_level(&self, profit: F) -> F {
        (profit - self.eq.pi_star) / self.eq.profit_gap()
    }
}

fn check_gap<F: Real>(eq: &EquilibriumPair<F>) -> Result<(), QlearnError> {
    let gap = eq.profit_gap();
    if !(gap.abs() >= F::lit(MIN_PROFIT_GAP)) {
        return Err(QlearnError::DegenerateDenominator {
            gap: gap.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Outcome of one learning run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult<F: Real> {
    /// Collusive level averaged over the last `K` steps and both platforms.
    pub delta_tilde: F,
    /// Per-platform `Δ_t` over the last `K` steps, oldest first.
    pub delta_trace: [Vec<F>; 2],
    /// Joint actions (state indices) of the last `W` steps, oldest first.
    pub tail_actions: Vec<u32>,
    pub q_tables: [QTable<F>; 2],
    /// Limit-cycle classification, filled in by the analysis.
    pub cycle: Option<CycleRecord>,
    pub seed: u64,
    pub run_index: u64,
    pub update_target: UpdateTarget,
    pub final_temperature: F,
    pub wall_time_secs: f64,
}

impl<F: Real> RunResult<F> {
    /// Mean `Δ_t` of each platform over the reported window.
    pub fn platform_means(&self) -> [F; 2] {
        let mean = |v: &[F]| v.iter().copied().sum::<F>() / F::from_usize(v.len()).unwrap();
        [mean(&self.delta_trace[0]), mean(&self.delta_trace[1])]
    }
}

/// Random stream of run `run_index` under `seed`; independent of scheduling.
pub fn run_rng(seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}

/// One run in a prepared environment, with its own stream `run_index`.
pub fn simulate<F: Real>(env: &Environment<F>, cfg: &LearningConfig<F>, run_index: u64) -> Result<RunResult<F>, QlearnError> {
    cfg.validate()?;
    if env.grid.m() != cfg.m {
        return Err(QlearnError::InvalidConfig(format!(
            "environment grid has {} prices per side, config asks for {}",
            env.grid.m(),
            cfg.m
        )));
    }
    let started = Instant::now();
    let shape = env.grid.shape();
    let delta = env.params.delta;
    let schedule = cfg.schedule(delta);
    let rule: UpdateRule<F> = cfg.update_rule(delta);
    let mut rng = run_rng(cfg.seed, run_index);

    let mut q = [init_q(&env.profits, 0, delta), init_q(&env.profits, 1, delta)];
    let prices: Vec<[F; 2]> = (0..shape.n_actions()).map(|a| env.grid.action_prices(a)).collect();
    let penalize = cfg.rho > F::zero();
    let half = F::lit(0.5);

    let t_steps = cfg.t_steps;
    let k = cfg.k_report as u64;
    let w = (cfg.tail_window as u64).min(t_steps);
    let mut trace = [Vec::with_capacity(k as usize), Vec::with_capacity(k as usize)];
    let mut tail: VecDeque<u32> = VecDeque::with_capacity(w as usize);

    let mut sampler = BoltzmannSampler::new();
    let mut state = shape.state(rng.random_range(0..shape.n_actions()), rng.random_range(0..shape.n_actions()));
    let mut temp = schedule.at(0);

    for t in 0..t_steps {
        temp = schedule.at(t);
        let a1 = sampler.sample(q[0].row(state), temp, schedule.floor, &mut rng);
        let a2 = sampler.sample(q[1].row(state), temp, schedule.floor, &mut rng);
        let next = shape.state(a1, a2);
        let reward = env.profits.get(next);
        if penalize {
            let (p1, p2) = (prices[a1], prices[a2]);
            let mean = [half * (p1[0] + p2[0]), half * (p1[1] + p2[1])];
            q_update_penalized(&mut q[0], state, a1, reward[0], next, p1, mean, cfg.rho, &rule);
            q_update_penalized(&mut q[1], state, a2, reward[1], next, p2, mean, cfg.rho, &rule);
        } else {
            q_update(&mut q[0], state, a1, reward[0], next, &rule);
            q_update(&mut q[1], state, a2, reward[1], next, &rule);
        }

        if t >= t_steps - k {
            // market profit, not the penalized reward
            trace[0].push(env.collusive_level(reward[0]));
            trace[1].push(env.collusive_level(reward[1]));
        }
        if t >= t_steps - w {
            tail.push_back(next as u32);
        }
        state = next;
    }

    let n = F::from_u64(2 * k).unwrap();
    let delta_tilde = trace.iter().flatten().copied().sum::<F>() / n;
    Ok(RunResult {
        delta_tilde,
        delta_trace: trace,
        tail_actions: tail.into(),
        q_tables: q,
        cycle: None,
        seed: cfg.seed,
        run_index,
        update_target: cfg.update_target,
        final_temperature: temp,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Builds the environment and performs run 0 of `cfg.seed`.
pub fn run_simulation<F: Real>(
    params: &MarketParams<F>,
    eq: &EquilibriumPair<F>,
    cfg: &LearningConfig<F>,
) -> Result<RunResult<F>, QlearnError> {
    let env = Environment::new(params, eq, cfg)?;
    simulate(&env, cfg, 0)
}
