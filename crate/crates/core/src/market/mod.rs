//! Static two-sided platform market.
//!
//! Users on each side `k ∈ {buyer, seller}` pick one of `N` platforms or the
//! outside option. Joining platform `i` yields the deterministic utility
//! `φ_kb·x_b⁽ⁱ⁾ + φ_ks·x_s⁽ⁱ⁾ − p_k⁽ⁱ⁾`, where `x⁽ⁱ⁾` are the masses of users
//! on platform `i`. Idiosyncratic Gumbel tastes with scale `β_k` turn the
//! choice into a multinomial logit whose shares depend on the shares
//! themselves, so the demand system is a fixed point.

mod equilibrium;
mod linalg;
mod optimize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub use equilibrium::{
    solve_ce, solve_cne, solve_equilibria, CeSolution, CneSolution, EquilibriumConfig,
    EquilibriumPair,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MarketError {
    #[error("invalid market parameters: {0}")]
    InvalidParams(String),
    #[error("share fixed point did not converge after {max_iter} iterations (residual {residual:e})")]
    NonConvergence { max_iter: usize, residual: f64 },
    #[error("no equilibrium found: {0}")]
    NoEquilibriumFound(String),
}

/// The two sides of the market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Buyer = 0,
    Seller = 1,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Buyer, Side::Seller];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Side {
        match self {
            Side::Buyer => Side::Seller,
            Side::Seller => Side::Buyer,
        }
    }
}

/// Linear network externalities `Φ = [φ_bb, φ_bs; φ_sb, φ_ss]`.
///
/// Row `k` holds the utility a side-`k` user gets per unit mass of buyers
/// (first column) and sellers (second column) on the same platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ExternalityMatrix<F: Real> {
    pub bb: F,
    pub bs: F,
    pub sb: F,
    pub ss: F,
}

impl<F: Real> ExternalityMatrix<F> {
    /// Entries in the row-major order `[φ_bb, φ_bs; φ_sb, φ_ss]`.
    pub fn new(bb: F, bs: F, sb: F, ss: F) -> Self {
        Self { bb, bs, sb, ss }
    }

    pub fn zero() -> Self {
        Self::new(F::zero(), F::zero(), F::zero(), F::zero())
    }

    pub fn from_array(a: [F; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [F; 4] {
        [self.bb, self.bs, self.sb, self.ss]
    }

    /// `(φ_kb, φ_ks)` for side `k`.
    pub fn row(&self, side: Side) -> [F; 2] {
        match side {
            Side::Buyer => [self.bb, self.bs],
            Side::Seller => [self.sb, self.ss],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Relabels buyers as sellers and vice versa.
    pub fn swap_sides(&self) -> Self {
        Self::new(self.ss, self.sb, self.bs, self.bb)
    }
}

/// Everything the static model needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MarketParams<F: Real> {
    pub n_platforms: usize,
    /// Taste heterogeneity `β_k`, indexed by [`Side`].
    pub beta: [F; 2],
    /// Outside-option utility `u⁰_k`, indexed by [`Side`].
    pub u0: [F; 2],
    pub delta: F,
    pub phi: ExternalityMatrix<F>,
}

impl<F: Real> MarketParams<F> {
    pub fn new(
        n_platforms: usize,
        beta: [F; 2],
        u0: [F; 2],
        delta: F,
        phi: ExternalityMatrix<F>,
    ) -> Result<Self, MarketError> {
        let params = Self {
            n_platforms,
            beta,
            u0,
            delta,
            phi,
        };
        params.validate()?;
        Ok(params)
    }

    /// Duopoly with identical `β` and `u⁰` on both sides.
    pub fn symmetric(beta: F, u0: F, delta: F, phi: ExternalityMatrix<F>) -> Result<Self, MarketError> {
        Self::new(2, [beta, beta], [u0, u0], delta, phi)
    }

    /// The default experimental setting: `β = 1`, `u⁰ = −2`, `δ = 0.05`.
    pub fn baseline(phi: ExternalityMatrix<F>) -> Self {
        Self::symmetric(F::one(), F::lit(-2.0), F::lit(0.05), phi).expect("baseline params valid")
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if self.n_platforms < 2 {
            return Err(MarketError::InvalidParams(format!(
                "n_platforms must be at least 2, got {}",
                self.n_platforms
            )));
        }
        if !self.beta.iter().all(|b| b.is_finite() && *b > F::zero()) {
            return Err(MarketError::InvalidParams(format!(
                "beta must be positive, got {:?}",
                self.beta
            )));
        }
        if !self.u0.iter().all(|u| u.is_finite()) {
            return Err(MarketError::InvalidParams("u0 must be finite".into()));
        }
        if !(self.delta > F::zero() && self.delta < F::one()) {
            return Err(MarketError::InvalidParams(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !self.phi.is_finite() {
            return Err(MarketError::InvalidParams("phi entries must be finite".into()));
        }
        Ok(())
    }

    pub fn swap_sides(&self) -> Self {
        Self {
            n_platforms: self.n_platforms,
            beta: [self.beta[1], self.beta[0]],
            u0: [self.u0[1], self.u0[0]],
            delta: self.delta,
            phi: self.phi.swap_sides(),
        }
    }
}

/// Prices `(p_b⁽ⁱ⁾, p_s⁽ⁱ⁾)` charged by every platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PriceProfile<F: Real>(pub Vec<[F; 2]>);

impl<F: Real> PriceProfile<F> {
    pub fn new(prices: Vec<[F; 2]>) -> Self {
        Self(prices)
    }

    /// Every platform charges the same price pair.
    pub fn symmetric(n_platforms: usize, prices: [F; 2]) -> Self {
        Self(vec![prices; n_platforms])
    }

    /// Platform `i` deviates to `own` while every rival charges `rival`.
    pub fn unilateral(n_platforms: usize, i: usize, own: [F; 2], rival: [F; 2]) -> Self {
        let mut prices = vec![rival; n_platforms];
        prices[i] = own;
        Self(prices)
    }

    pub fn n_platforms(&self) -> usize {
        self.0.len()
    }

    pub fn platform(&self, i: usize) -> [F; 2] {
        self.0[i]
    }

    /// Mean price on each side across platforms.
    pub fn mean(&self) -> [F; 2] {
        let n = F::from_usize(self.0.len()).unwrap();
        let mut acc = [F::zero(); 2];
        for p in &self.0 {
            acc[0] = acc[0] + p[0];
            acc[1] = acc[1] + p[1];
        }
        [acc[0] / n, acc[1] / n]
    }
}

/// User masses per option; index 0 of the logit is the outside option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SharesProfile<F: Real> {
    pub outside: [F; 2],
    pub platforms: Vec<[F; 2]>,
}

impl<F: Real> SharesProfile<F> {
    pub fn platform(&self, i: usize) -> [F; 2] {
        self.platforms[i]
    }

    /// `Σ_{i=0..N} x_k⁽ⁱ⁾` for each side.
    pub fn totals(&self) -> [F; 2] {
        let mut t = self.outside;
        for x in &self.platforms {
            t[0] = t[0] + x[0];
            t[1] = t[1] + x[1];
        }
        t
    }
}

/// Utilities `u_k⁽ⁱ⁾` of joining each platform; the outside option is `params.u0`.
pub fn utilities<F: Real>(
    prices: &PriceProfile<F>,
    shares: &SharesProfile<F>,
    params: &MarketParams<F>,
) -> Vec<[F; 2]> {
    prices
        .0
        .iter()
        .zip(&shares.platforms)
        .map(|(p, x)| {
            let mut u = [F::zero(); 2];
            for side in Side::BOTH {
                let [kb, ks] = params.phi.row(side);
                u[side.index()] = kb * x[0] + ks * x[1] - p[side.index()];
            }
            u
        })
        .collect()
}

/// Damped iterations between attempts to finish with Newton's method.
const NEWTON_HANDOFF: usize = 200;

/// Settings for the share fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ShareSolver<F: Real> {
    pub tol: F,
    pub max_iter: usize,
    /// Primary damping `η` in `x ← (1−η)x + η·Logit(x)`.
    pub damping: F,
    /// Damping tried when the primary iteration fails.
    pub fallback_damping: F,
    /// Newton refinement after the damped iteration, and Newton as a last resort.
    pub newton: bool,
}

impl<F: Real> Default for ShareSolver<F> {
    fn default() -> Self {
        Self {
            tol: F::lit(1e-10),
            max_iter: 100_000,
            damping: F::lit(0.5),
            fallback_damping: F::lit(0.1),
            newton: true,
        }
    }
}

impl<F: Real> ShareSolver<F> {
    pub fn with_tol(tol: F) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    /// Solves the simultaneous logit fixed point for the given prices.
    pub fn solve(
        &self,
        prices: &PriceProfile<F>,
        params: &MarketParams<F>,
    ) -> Result<SharesProfile<F>, MarketError> {
        let n = prices.n_platforms();
        debug_assert_eq!(n, params.n_platforms);
        // Start from the externality-free logit.
        let (_, start) = logit_map(prices, &vec![[F::zero(); 2]; n], params);
        let mut best_residual = F::infinity();

        for eta in [self.damping, self.fallback_damping] {
            match self.damped(prices, params, start.clone(), eta) {
                Ok(x) => return Ok(self.finish(prices, params, x)),
                Err(r) => best_residual = best_residual.min(r),
            }
        }
        if self.newton {
            if let Some(x) = newton_solve(prices, params, start, self.tol, 200) {
                return Ok(self.finish(prices, params, x));
            }
        }
        Err(MarketError::NonConvergence {
            max_iter: self.max_iter,
            residual: best_residual.to_f64_lossy(),
        })
    }

    fn damped(
        &self,
        prices: &PriceProfile<F>,
        params: &MarketParams<F>,
        mut x: Vec<[F; 2]>,
        eta: F,
    ) -> Result<Vec<[F; 2]>, F> {
        let keep = F::one() - eta;
        let mut best = F::infinity();
        let mut best_at = 0usize;
        for it in 0..self.max_iter {
            let (_, y) = logit_map(prices, &x, params);
            let r = sup_diff(&x, &y);
            if !r.is_finite() {
                return Err(F::infinity());
            }
            if r <= self.tol {
                return Ok(y);
            }
            if self.newton && it > 0 && it % NEWTON_HANDOFF == 0 {
                // slow linear convergence: Newton finishes from the current iterate
                if let Some(z) = newton_solve(prices, params, x.clone(), self.tol, 50) {
                    return Ok(z);
                }
            }
            if r < best * F::lit(0.999) {
                best = r;
                best_at = it;
            } else if it - best_at > 2_000 {
                // stalled or cycling
                return Err(best);
            }
            for (xi, yi) in x.iter_mut().zip(&y) {
                xi[0] = keep * xi[0] + eta * yi[0];
                xi[1] = keep * xi[1] + eta * yi[1];
            }
        }
        Err(best)
    }

    fn finish(
        &self,
        prices: &PriceProfile<F>,
        params: &MarketParams<F>,
        x: Vec<[F; 2]>,
    ) -> SharesProfile<F> {
        let x = if self.newton { newton_polish(prices, params, x) } else { x };
        let (outside, y) = logit_map(prices, &x, params);
        // Return the image of the converged point so the outside share is consistent.
        SharesProfile {
            outside,
            platforms: y,
        }
    }
}

/// Solves the share fixed point with [`ShareSolver`] at the given tolerance.
pub fn solve_shares<F: Real>(
    prices: &PriceProfile<F>,
    params: &MarketParams<F>,
    tol: F,
    max_iter: usize,
) -> Result<SharesProfile<F>, MarketError> {
    ShareSolver {
        tol,
        max_iter,
        ..ShareSolver::default()
    }
    .solve(prices, params)
}

/// Sup-norm residual `|Logit(x) − x|` of a shares profile.
pub fn share_residual<F: Real>(
    prices: &PriceProfile<F>,
    shares: &SharesProfile<F>,
    params: &MarketParams<F>,
) -> F {
    let (_, y) = logit_map(prices, &shares.platforms, params);
    sup_diff(&shares.platforms, &y)
}

/// One application of the logit map: utilities at `x`, then softmax per side.
/// Returns the outside shares and the platform shares.
pub(crate) fn logit_map<F: Real>(
    prices: &PriceProfile<F>,
    x: &[[F; 2]],
    params: &MarketParams<F>,
) -> ([F; 2], Vec<[F; 2]>) {
    let n = prices.n_platforms();
    let mut out = vec![[F::zero(); 2]; n];
    let mut outside = [F::zero(); 2];
    let mut scaled = vec![F::zero(); n];
    for side in Side::BOTH {
        let k = side.index();
        let [kb, ks] = params.phi.row(side);
        let beta = params.beta[k];
        let u_out = params.u0[k] / beta;
        let mut m = u_out;
        for j in 0..n {
            let u = (kb * x[j][0] + ks * x[j][1] - prices.0[j][k]) / beta;
            scaled[j] = u;
            m = m.max(u);
        }
        let z_out = (u_out - m).exp();
        let mut total = z_out;
        for s in scaled.iter_mut() {
            *s = (*s - m).exp();
            total = total + *s;
        }
        outside[k] = z_out / total;
        for j in 0..n {
            out[j][k] = scaled[j] / total;
        }
    }
    (outside, out)
}

fn sup_diff<F: Real>(a: &[[F; 2]], b: &[[F; 2]]) -> F {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| [(x[0] - y[0]).abs(), (x[1] - y[1]).abs()])
        .fold(F::zero(), |m, d| if d > m || d.is_nan() { d } else { m })
}

/// Newton step on `G(x) = x − Logit(x)`; variables ordered side-major.
fn newton_step<F: Real>(
    prices: &PriceProfile<F>,
    params: &MarketParams<F>,
    x: &[[F; 2]],
) -> Option<(Vec<[F; 2]>, F)> {
    let n = x.len();
    let dim = 2 * n;
    let (_, y) = logit_map(prices, x, params);
    let mut jac = vec![F::zero(); dim * dim];
    let mut rhs = vec![F::zero(); dim];
    for side in Side::BOTH {
        let k = side.index();
        let row_phi = params.phi.row(side);
        for i in 0..n {
            let r = k * n + i;
            rhs[r] = y[i][k] - x[i][k];
            for l in 0..2 {
                for j in 0..n {
                    let c = l * n + j;
                    let kron = if i == j { F::one() } else { F::zero() };
                    let d = y[i][k] * (kron - y[j][k]) * row_phi[l] / params.beta[k];
                    let id = if r == c { F::one() } else { F::zero() };
                    jac[r * dim + c] = id - d;
                }
            }
        }
    }
    let step = linalg::solve_dense(&mut jac, &mut rhs, dim)?;
    let next: Vec<[F; 2]> = (0..n)
        .map(|i| [x[i][0] + step[i], x[i][1] + step[n + i]])
        .collect();
    if next.iter().any(|v| !(v[0].is_finite() && v[1].is_finite())) {
        return None;
    }
    let (_, ny) = logit_map(prices, &next, params);
    Some((next.clone(), sup_diff(&next, &ny)))
}

/// A few Newton steps from an already converged point, kept while they help.
fn newton_polish<F: Real>(
    prices: &PriceProfile<F>,
    params: &MarketParams<F>,
    mut x: Vec<[F; 2]>,
) -> Vec<[F; 2]> {
    let (_, y) = logit_map(prices, &x, params);
    let mut r = sup_diff(&x, &y);
    for _ in 0..3 {
        if r == F::zero() {
            break;
        }
        match newton_step(prices, params, &x) {
            Some((nx, nr)) if nr < r => {
                x = nx;
                r = nr;
            }
            _ => break,
        }
    }
    x
}

/// Newton with step halving, used when damped iteration cannot converge
/// (fixed points that are repelling under the logit map).
fn newton_solve<F: Real>(
    prices: &PriceProfile<F>,
    params: &MarketParams<F>,
    mut x: Vec<[F; 2]>,
    tol: F,
    max_iter: usize,
) -> Option<Vec<[F; 2]>> {
    let (_, y) = logit_map(prices, &x, params);
    let mut r = sup_diff(&x, &y);
    for _ in 0..max_iter {
        if r <= tol {
            return Some(x);
        }
        let (full, _) = newton_step(prices, params, &x)?;
        let mut t = F::one();
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<[F; 2]> = x
                .iter()
                .zip(&full)
                .map(|(a, b)| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
                .collect();
            let (_, cy) = logit_map(prices, &cand, params);
            let cr = sup_diff(&cand, &cy);
            if cr < r {
                x = cand;
                r = cr;
                accepted = true;
                break;
            }
            t = t * F::lit(0.5);
        }
        if !accepted {
            return None;
        }
    }
    (r <= tol).then_some(x)
}

/// `x_b⁽ⁱ⁾·p_b⁽ⁱ⁾ + x_s⁽ⁱ⁾·p_s⁽ⁱ⁾` at given shares.
pub fn profit_at<F: Real>(prices: &PriceProfile<F>, shares: &SharesProfile<F>, i: usize) -> F {
    let p = prices.0[i];
    let x = shares.platforms[i];
    x[0] * p[0] + x[1] * p[1]
}

/// Profit of platform `i` at the solved shares.
pub fn platform_profit<F: Real>(
    i: usize,
    prices: &PriceProfile<F>,
    params: &MarketParams<F>,
    solver: &ShareSolver<F>,
) -> Result<F, MarketError> {
    let shares = solver.solve(prices, params)?;
    Ok(profit_at(prices, &shares, i))
}

/// Profits of every platform at the solved shares.
pub fn all_profits<F: Real>(
    prices: &PriceProfile<F>,
    params: &MarketParams<F>,
    solver: &ShareSolver<F>,
) -> Result<Vec<F>, MarketError> {
    let shares = solver.solve(prices, params)?;
    Ok((0..prices.n_platforms())
        .map(|i| profit_at(prices, &shares, i))
        .collect())
}

/// Joint profit `Π_tot(p_b, p_s)` when every platform charges the same pair.
pub fn total_collusive_profit<F: Real>(
    p_b: F,
    p_s: F,
    params: &MarketParams<F>,
    solver: &ShareSolver<F>,
) -> Result<F, MarketError> {
    let prices = PriceProfile::symmetric(params.n_platforms, [p_b, p_s]);
    asymmetric_total_profit(&prices, params, solver)
}

/// Joint profit `Π_a` with no symmetry assumption.
pub fn asymmetric_total_profit<F: Real>(
    prices: &PriceProfile<F>,
    params: &MarketParams<F>,
    solver: &ShareSolver<F>,
) -> Result<F, MarketError> {
    Ok(all_profits(prices, params, solver)?
        .into_iter()
        .fold(F::zero(), |a, b| a + b))
}
