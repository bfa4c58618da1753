//! Numerical competitive (CNE) and collusive (CE) equilibria of the
//! one-shot game, restricted to symmetric price pairs.

use serde::{Deserialize, Serialize};

use super::optimize::{maximize_2d, scan_2d};
use super::{
    asymmetric_total_profit, platform_profit, MarketError, MarketParams, PriceProfile,
    ShareSolver, SharesProfile,
};
use crate::scalar::Real;

/// Solver settings shared by [`solve_cne`] and [`solve_ce`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EquilibriumConfig<F: Real> {
    pub shares: ShareSolver<F>,
    /// Multi-starts for the best-response iteration / joint-profit ascent.
    pub starts: usize,
    /// Points per axis of the coarse scans.
    pub scan_points: usize,
    /// Search box per side is `[box_lo·β_k, box_hi·β_k]`.
    pub box_lo: F,
    pub box_hi: F,
    pub br_tol: F,
    pub br_max_iter: usize,
    pub foc_tol: F,
    pub fd_step: F,
    pub line_tol: F,
    /// Run every start even after one has converged, to collect
    /// alternative equilibria; otherwise stop at the first verified one.
    pub exhaustive: bool,
}

impl<F: Real> Default for EquilibriumConfig<F> {
    fn default() -> Self {
        Self {
            shares: ShareSolver::with_tol(F::lit(1e-13)),
            starts: 5,
            scan_points: 21,
            box_lo: F::lit(-5.0),
            box_hi: F::lit(10.0),
            br_tol: F::lit(1e-9),
            br_max_iter: 300,
            foc_tol: F::lit(1e-6),
            fd_step: F::lit(1e-5),
            line_tol: F::lit(1e-11),
            exhaustive: false,
        }
    }
}

/// Symmetric competitive Nash equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CneSolution<F: Real> {
    pub prices: [F; 2],
    /// Per-platform profit `π*`.
    pub profit: F,
    pub shares: SharesProfile<F>,
    /// Sup-norm of the own-price profit gradient.
    pub foc_residual: F,
    /// Best-response (or Newton) iterates of the selected start.
    pub trace: Vec<[F; 2]>,
    /// Other converged equilibria found from different starts; only
    /// searched for with [`EquilibriumConfig::exhaustive`].
    pub alternatives: Vec<[F; 2]>,
    /// The prices are a global best response to themselves. False for a
    /// local first-order solution, used when best-response iteration cycles
    /// (user shares can tip between fixed points under strong within-side
    /// externalities, which makes best responses jump).
    pub global_best_response: bool,
}

/// Symmetric joint-profit maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CeSolution<F: Real> {
    pub prices: [F; 2],
    /// Per-platform profit `π^C = Π_tot / N`.
    pub profit: F,
    pub shares: SharesProfile<F>,
    pub foc_residual: F,
    /// Other local maxima reached from the remaining starts.
    pub alternatives: Vec<[F; 2]>,
}

/// The benchmark pair used for normalizing collusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EquilibriumPair<F: Real> {
    pub p_star: [F; 2],
    pub p_coll: [F; 2],
    pub pi_star: F,
    pub pi_coll: F,
    /// Per-platform `(x_b, x_s)` at the CNE.
    pub shares_star: [F; 2],
    /// Per-platform `(x_b, x_s)` at the CE.
    pub shares_coll: [F; 2],
    pub foc_residual_star: F,
    pub foc_residual_coll: F,
}

impl<F: Real> EquilibriumPair<F> {
    pub fn from_solutions(cne: &CneSolution<F>, ce: &CeSolution<F>) -> Self {
        Self {
            p_star: cne.prices,
            p_coll: ce.prices,
            pi_star: cne.profit,
            pi_coll: ce.profit,
            shares_star: cne.shares.platforms[0],
            shares_coll: ce.shares.platforms[0],
            foc_residual_star: cne.foc_residual,
            foc_residual_coll: ce.foc_residual,
        }
    }

    /// A pair with prescribed prices and profits, shares left at zero.
    pub fn from_values(p_star: [F; 2], p_coll: [F; 2], pi_star: F, pi_coll: F) -> Self {
        Self {
            p_star,
            p_coll,
            pi_star,
            pi_coll,
            shares_star: [F::zero(); 2],
            shares_coll: [F::zero(); 2],
            foc_residual_star: F::zero(),
            foc_residual_coll: F::zero(),
        }
    }

    pub fn profit_gap(&self) -> F {
        self.pi_coll - self.pi_star
    }
}

struct Problem<'a, F: Real> {
    params: &'a MarketParams<F>,
    cfg: &'a EquilibriumConfig<F>,
}

impl<'a, F: Real> Problem<'a, F> {
    fn lo(&self) -> [F; 2] {
        [self.cfg.box_lo * self.params.beta[0], self.cfg.box_lo * self.params.beta[1]]
    }

    fn hi(&self) -> [F; 2] {
        [self.cfg.box_hi * self.params.beta[0], self.cfg.box_hi * self.params.beta[1]]
    }

    fn spacing(&self) -> [F; 2] {
        let steps = F::from_usize(self.cfg.scan_points - 1).unwrap();
        let (lo, hi) = (self.lo(), self.hi());
        [(hi[0] - lo[0]) / steps, (hi[1] - lo[1]) / steps]
    }

    /// Profit of platform 0 charging `own` while every rival charges `rival`.
    fn own_profit(&self, own: [F; 2], rival: [F; 2]) -> Option<F> {
        let prices = PriceProfile::unilateral(self.params.n_platforms, 0, own, rival);
        platform_profit(0, &prices, self.params, &self.cfg.shares).ok()
    }

    /// Per-platform joint profit at a symmetric pair.
    fn joint_profit(&self, p: [F; 2]) -> Option<F> {
        let prices = PriceProfile::symmetric(self.params.n_platforms, p);
        let n = F::from_usize(self.params.n_platforms).unwrap();
        asymmetric_total_profit(&prices, self.params, &self.cfg.shares)
            .ok()
            .map(|t| t / n)
    }

    fn best_response_global(&self, rival: [F; 2]) -> [F; 2] {
        let scan = scan_2d(|p| self.own_profit(p, rival), self.lo(), self.hi(), self.cfg.scan_points);
        let start = scan
            .iter()
            .fold(None::<&([F; 2], F)>, |b, c| match b {
                Some(b) if b.1 >= c.1 => Some(b),
                _ => Some(c),
            })
            .map(|c| c.0)
            .unwrap_or(rival);
        self.best_response_local(rival, start, self.spacing(), self.cfg.line_tol)
    }

    fn best_response_local(&self, rival: [F; 2], start: [F; 2], half_width: [F; 2], tol: F) -> [F; 2] {
        maximize_2d(|p| self.own_profit(p, rival), start, half_width, tol, BR_SWEEPS).0
    }

    fn in_box(&self, p: [F; 2]) -> bool {
        let (lo, hi) = (self.lo(), self.hi());
        (0..2).all(|k| p[k] >= lo[k] && p[k] <= hi[k])
    }

    fn gradient(&self, f: impl Fn([F; 2]) -> Option<F>, p: [F; 2]) -> Option<[F; 2]> {
        let h = self.cfg.fd_step;
        let two_h = h + h;
        let mut g = [F::zero(); 2];
        for k in 0..2 {
            let mut up = p;
            let mut dn = p;
            up[k] = up[k] + h;
            dn[k] = dn[k] - h;
            g[k] = (f(up)? - f(dn)?) / two_h;
        }
        Some(g)
    }

    /// Own-price profit gradient at the symmetric profile `p`.
    fn own_gradient(&self, p: [F; 2]) -> Option<[F; 2]> {
        self.gradient(|q| self.own_profit(q, p), p)
    }

    /// Symmetric solutions of the own-price first-order conditions, by
    /// Newton's method on the gradient from `seeds` and from the scan cells
    /// that bracket a root. Local maxima of own profit are preferred; saddle
    /// points are returned only when there is no local maximum (strong
    /// negative cross-side externalities make a platform prefer splitting
    /// its two prices, so no symmetric profile is a local maximum).
    fn first_order_candidates(&self, seeds: &[[F; 2]]) -> Vec<([F; 2], F, Vec<[F; 2]>)> {
        // Cells of a fine scan where both gradient components change sign.
        let n = 3 * self.cfg.scan_points.max(3);
        let scan = scan_2d(
            |p| {
                let g = self.own_gradient(p)?;
                Some(F::from_usize(sign_code(g[0]) * 3 + sign_code(g[1])).unwrap())
            },
            self.lo(),
            self.hi(),
            n,
        );
        let mut starts: Vec<[F; 2]> = seeds.to_vec();
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let corners = [i * n + j, i * n + j + 1, (i + 1) * n + j, (i + 1) * n + j + 1];
                let codes: Option<Vec<usize>> = corners
                    .iter()
                    .map(|&c| scan[c].1.is_finite().then(|| scan[c].1.to_usize().unwrap_or(0)))
                    .collect();
                let Some(codes) = codes else { continue };
                let flips = |part: fn(usize) -> usize| {
                    codes.iter().any(|&c| part(c) == 0) && codes.iter().any(|&c| part(c) == 2)
                };
                if flips(|c| c / 3) && flips(|c| c % 3) {
                    let (a, b) = (scan[corners[0]].0, scan[corners[3]].0);
                    starts.push([(a[0] + b[0]) / F::lit(2.0), (a[1] + b[1]) / F::lit(2.0)]);
                }
            }
        }
        let mut maxima: Vec<([F; 2], F, Vec<[F; 2]>)> = Vec::new();
        let mut saddles: Vec<([F; 2], F, Vec<[F; 2]>)> = Vec::new();
        for start in starts {
            let Some((p, res, trace)) = self.newton_foc(start) else {
                continue;
            };
            // far outside the box profits vanish and the gradient with them
            if res > self.cfg.foc_tol || !self.in_box(p) {
                continue;
            }
            let found: Vec<[F; 2]> = maxima.iter().chain(&saddles).map(|c| c.0).collect();
            if !distinct(&found, p, F::lit(1e-6)) {
                continue;
            }
            if self.is_local_max(p) {
                maxima.push((p, res, trace));
            } else {
                saddles.push((p, res, trace));
            }
        }
        if maxima.is_empty() {
            saddles
        } else {
            maxima
        }
    }

    fn is_global_best_response(&self, p: [F; 2]) -> bool {
        let global = self.best_response_global(p);
        sup_norm([global[0] - p[0], global[1] - p[1]]) <= F::lit(1e-6)
    }

    fn newton_foc(&self, start: [F; 2]) -> Option<([F; 2], F, Vec<[F; 2]>)> {
        let h = F::lit(1e-4) * self.params.beta[0].min(self.params.beta[1]);
        let two_h = h + h;
        let mut p = start;
        let mut g = self.own_gradient(p)?;
        let mut trace = vec![p];
        for _ in 0..60 {
            if sup_norm(g) <= self.cfg.foc_tol * F::lit(1e-2) {
                break;
            }
            let mut jac = [[F::zero(); 2]; 2];
            for k in 0..2 {
                let (mut up, mut dn) = (p, p);
                up[k] = up[k] + h;
                dn[k] = dn[k] - h;
                let (gu, gd) = (self.own_gradient(up)?, self.own_gradient(dn)?);
                jac[0][k] = (gu[0] - gd[0]) / two_h;
                jac[1][k] = (gu[1] - gd[1]) / two_h;
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det == F::zero() || !det.is_finite() {
                break;
            }
            let step = [
                (jac[1][1] * g[0] - jac[0][1] * g[1]) / det,
                (jac[0][0] * g[1] - jac[1][0] * g[0]) / det,
            ];
            let mut t = F::one();
            let mut improved = false;
            for _ in 0..30 {
                let cand = [p[0] - t * step[0], p[1] - t * step[1]];
                if let Some(gc) = self.own_gradient(cand) {
                    if sup_norm(gc) < sup_norm(g) {
                        (p, g) = (cand, gc);
                        improved = true;
                        break;
                    }
                }
                t = t * F::lit(0.5);
            }
            if !improved {
                break;
            }
            trace.push(p);
        }
        Some((p, sup_norm(g), trace))
    }

    /// Own profit has a negative definite Hessian at the symmetric profile `p`.
    fn is_local_max(&self, p: [F; 2]) -> bool {
        let h = F::lit(1e-3) * self.params.beta[0].min(self.params.beta[1]);
        let f = |d0: F, d1: F| self.own_profit([p[0] + d0, p[1] + d1], p);
        let z = F::zero();
        let vals = (|| {
            let c = f(z, z)?;
            let h00 = (f(h, z)? - c - c + f(-h, z)?) / (h * h);
            let h11 = (f(z, h)? - c - c + f(z, -h)?) / (h * h);
            let h01 = (f(h, h)? - f(h, -h)? - f(-h, h)? + f(-h, -h)?) / (F::lit(4.0) * h * h);
            Some((h00, h11, h01))
        })();
        matches!(vals, Some((h00, h11, h01)) if h00 < z && h00 * h11 - h01 * h01 > z)
    }

    /// Multi-start points spread over the search box.
    fn starts(&self) -> Vec<[F; 2]> {
        let (lo, hi) = (self.lo(), self.hi());
        let at = |a: f64, b: f64| {
            [
                lo[0] + F::lit(a) * (hi[0] - lo[0]),
                lo[1] + F::lit(b) * (hi[1] - lo[1]),
            ]
        };
        let all = [
            at(0.5, 0.5),
            at(0.25, 0.25),
            at(0.75, 0.75),
            at(0.25, 0.75),
            at(0.75, 0.25),
            at(0.4, 0.4),
            at(0.6, 0.6),
            at(0.4, 0.6),
            at(0.6, 0.4),
        ];
        all.into_iter().take(self.cfg.starts.max(1)).collect()
    }
}

/// 0, 1, 2 for a negative, zero, positive value.
fn sign_code<F: Real>(v: F) -> usize {
    if v < F::zero() {
        0
    } else if v > F::zero() {
        2
    } else {
        1
    }
}

/// Coordinate-ascent sweeps per best-response evaluation.
const BR_SWEEPS: usize = 40;

/// Line-search tolerance of a best response relative to the last step.
const INEXACT_BR: f64 = 1e-3;

/// Best-response iterations without a 10% smaller step before a run is abandoned.
const BR_STALL: usize = 20;

fn sup_norm<F: Real>(v: [F; 2]) -> F {
    v[0].abs().max(v[1].abs())
}

fn distinct<F: Real>(found: &[[F; 2]], p: [F; 2], tol: F) -> bool {
    found
        .iter()
        .all(|q| (q[0] - p[0]).abs() > tol || (q[1] - p[1]).abs() > tol)
}

/// Symmetric CNE by damped simultaneous best-response iteration from
/// several starts, taken in order until one converges to a global best
/// response (all of them with [`EquilibriumConfig::exhaustive`], keeping the
/// candidate with the smallest own-price gradient).
///
/// When best responses cycle, the symmetric solutions of the first-order
/// conditions are used instead. Unless exhaustive, they are tried as soon
/// as the first start cycles at every damping, and accepted at once if one
/// of them is a global best response to itself.
pub fn solve_cne<F: Real>(
    params: &MarketParams<F>,
    cfg: &EquilibriumConfig<F>,
) -> Result<CneSolution<F>, MarketError> {
    params.validate()?;
    let prob = Problem { params, cfg };
    let local_width = [F::lit(0.5) * params.beta[0], F::lit(0.5) * params.beta[1]];
    let accept = F::lit(1e-6);
    let mut candidates: Vec<([F; 2], F, Vec<[F; 2]>)> = Vec::new();
    let mut stalled: Vec<[F; 2]> = Vec::new();
    // first-order candidates and the number of seeds they were found from
    let mut first_order: Option<(Vec<([F; 2], F, Vec<[F; 2]>)>, usize)> = None;

    for (k, start) in prob.starts().into_iter().enumerate() {
        for eta in [1.0, 0.5, 0.25] {
            let eta = F::lit(eta);
            let mut p = start;
            let mut trace = vec![p];
            let mut br = prob.best_response_global(p);
            let mut converged = false;
            let (mut best_step, mut best_at) = (F::infinity(), 0usize);
            for it in 0..cfg.br_max_iter {
                let step = [br[0] - p[0], br[1] - p[1]];
                let size = sup_norm(step);
                if size <= cfg.br_tol {
                    converged = true;
                    break;
                }
                if size < best_step * F::lit(0.9) {
                    (best_step, best_at) = (size, it);
                } else if it - best_at > BR_STALL {
                    break;
                }
                p = [p[0] + eta * step[0], p[1] + eta * step[1]];
                trace.push(p);
                // best responses only as precise as the iteration needs them
                let tol = cfg.line_tol.max(size * F::lit(INEXACT_BR));
                br = prob.best_response_local(p, br, local_width, tol);
            }
            if !converged {
                stalled.push(p);
                continue;
            }
            // A local ascent can stall on a non-global best response.
            let global = prob.best_response_global(p);
            if sup_norm([global[0] - p[0], global[1] - p[1]]) > accept {
                continue;
            }
            let foc = prob
                .gradient(|q| prob.own_profit(q, p), p)
                .map(sup_norm)
                .unwrap_or(F::infinity());
            candidates.push((p, foc, trace));
            break;
        }
        if !cfg.exhaustive && candidates.iter().any(|c| c.1 <= cfg.foc_tol) {
            break;
        }
        if !cfg.exhaustive && k == 0 && candidates.is_empty() {
            // a cycling regime: the first-order route is far cheaper than
            // iterating best responses from the remaining starts
            let found = prob.first_order_candidates(&stalled);
            if let Some(c) = found.iter().find(|c| prob.is_global_best_response(c.0)) {
                candidates.push(c.clone());
                break;
            }
            first_order = Some((found, stalled.len()));
        }
    }

    let mut global_best_response = true;
    if !candidates.iter().any(|c| c.1 <= cfg.foc_tol) {
        candidates = match first_order {
            Some((found, seeds)) if seeds == stalled.len() => found,
            _ => prob.first_order_candidates(&stalled),
        };
        global_best_response = false;
    }
    let best = candidates
        .iter()
        .filter(|c| c.1 <= cfg.foc_tol)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or_else(|| {
            MarketError::NoEquilibriumFound(format!(
                "neither best-response iteration nor the first-order conditions converged from {} starts",
                cfg.starts
            ))
        })?;
    if !global_best_response {
        global_best_response = prob.is_global_best_response(best.0);
    }
    let prices = best.0;
    let mut alternatives: Vec<[F; 2]> = Vec::new();
    for c in &candidates {
        if c.1 <= cfg.foc_tol && distinct(&[prices], c.0, accept) && distinct(&alternatives, c.0, accept) {
            alternatives.push(c.0);
        }
    }
    let profile = PriceProfile::symmetric(params.n_platforms, prices);
    let shares = cfg.shares.solve(&profile, params)?;
    let profit = super::profit_at(&profile, &shares, 0);
    Ok(CneSolution {
        prices,
        profit,
        shares,
        foc_residual: best.1,
        trace: best.2.clone(),
        alternatives,
        global_best_response,
    })
}

/// Symmetric joint-profit maximum: coarse scan, then local ascent from the
/// best scan cells.
pub fn solve_ce<F: Real>(
    params: &MarketParams<F>,
    cfg: &EquilibriumConfig<F>,
) -> Result<CeSolution<F>, MarketError> {
    params.validate()?;
    let prob = Problem { params, cfg };
    let n = cfg.scan_points.max(3) + 10;
    let scan = scan_2d(|p| prob.joint_profit(p), prob.lo(), prob.hi(), n);
    let at = |i: usize, j: usize| scan[i * n + j].1;

    // Local maxima of the scan, best first; fall back to the best cells.
    let mut seeds: Vec<(usize, F)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = at(i, j);
            if !v.is_finite() {
                continue;
            }
            let mut is_peak = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) != (0, 0) && a >= 0 && b >= 0 && (a as usize) < n && (b as usize) < n {
                        is_peak &= v >= at(a as usize, b as usize);
                    }
                }
            }
            if is_peak {
                seeds.push((i * n + j, v));
            }
        }
    }
    let mut ranked: Vec<(usize, F)> = scan.iter().enumerate().map(|(i, c)| (i, c.1)).collect();
    let by_value = |a: &(usize, F), b: &(usize, F)| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    };
    seeds.sort_by(by_value);
    ranked.sort_by(by_value);
    for r in ranked {
        if seeds.len() >= cfg.starts {
            break;
        }
        if r.1.is_finite() && seeds.iter().all(|s| s.0 != r.0) {
            seeds.push(r);
        }
    }
    seeds.truncate(cfg.starts.max(1));

    let steps = F::from_usize(n - 1).unwrap();
    let width = [
        (prob.hi()[0] - prob.lo()[0]) / steps,
        (prob.hi()[1] - prob.lo()[1]) / steps,
    ];
    let mut results: Vec<([F; 2], F)> = seeds
        .iter()
        .map(|s| maximize_2d(|p| prob.joint_profit(p), scan[s.0].0, width, cfg.line_tol, 400))
        .filter(|r| r.1.is_finite())
        .collect();
    if results.is_empty() {
        return Err(MarketError::NoEquilibriumFound(
            "joint profit could not be evaluated at any start".into(),
        ));
    }
    results.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let (prices, _) = results[0];
    let foc = prob
        .gradient(|q| prob.joint_profit(q), prices)
        .map(sup_norm)
        .unwrap_or(F::infinity());
    if !(foc <= cfg.foc_tol) {
        return Err(MarketError::NoEquilibriumFound(format!(
            "joint-profit maximum has gradient {foc:e} above tolerance"
        )));
    }
    let accept = F::lit(1e-6);
    let mut alternatives: Vec<[F; 2]> = Vec::new();
    for r in &results[1..] {
        if distinct(&[prices], r.0, accept) && distinct(&alternatives, r.0, accept) {
            alternatives.push(r.0);
        }
    }
    let profile = PriceProfile::symmetric(params.n_platforms, prices);
    let shares = cfg.shares.solve(&profile, params)?;
    let n_f = F::from_usize(params.n_platforms).unwrap();
    let total = (0..params.n_platforms)
        .map(|i| super::profit_at(&profile, &shares, i))
        .fold(F::zero(), |a, b| a + b);
    Ok(CeSolution {
        prices,
        profit: total / n_f,
        shares,
        foc_residual: foc,
        alternatives,
    })
}

/// Solves both benchmarks.
pub fn solve_equilibria<F: Real>(
    params: &MarketParams<F>,
    cfg: &EquilibriumConfig<F>,
) -> Result<EquilibriumPair<F>, MarketError> {
    let cne = solve_cne(params, cfg)?;
    let ce = solve_ce(params, cfg)?;
    Ok(EquilibriumPair::from_solutions(&cne, &ce))
}
