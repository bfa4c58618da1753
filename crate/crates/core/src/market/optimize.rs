//! Derivative-free maximizers used by the equilibrium solvers.
//!
//! Objectives return `None` where the share fixed point fails; those points
//! are treated as `−∞`.

use crate::scalar::Real;

fn value<F: Real>(v: Option<F>) -> F {
    match v {
        Some(x) if !x.is_nan() => x,
        _ => F::neg_infinity(),
    }
}

/// Enough golden-section steps to shrink any finite bracket below `tol`.
const MAX_GOLDEN_STEPS: usize = 200;

/// Golden-section search for a maximum of `f` on `[lo, hi]`.
pub(crate) fn golden_max<F: Real>(
    mut f: impl FnMut(F) -> Option<F>,
    mut lo: F,
    mut hi: F,
    tol: F,
) -> (F, F) {
    let inv_phi = F::lit(0.618_033_988_749_894_8);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = value(f(c));
    let mut fd = value(f(d));
    // the cap stops the loop once the bracket is below the float spacing
    for _ in 0..MAX_GOLDEN_STEPS {
        if (hi - lo).abs() <= tol {
            break;
        }
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = value(f(c));
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = value(f(d));
        }
    }
    // Endpoints are candidates too: the bracket may not contain an interior maximum.
    let mid = (lo + hi) / F::lit(2.0);
    let mut best = (mid, value(f(mid)));
    for (x, v) in [(c, fc), (d, fd)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Coordinate ascent over a shrinking bracket, starting at `center` with
/// half-widths `half_width`. Each coordinate is refined by golden section;
/// a coordinate's bracket shrinks to a few times its last move.
pub(crate) fn maximize_2d<F: Real>(
    mut f: impl FnMut([F; 2]) -> Option<F>,
    center: [F; 2],
    half_width: [F; 2],
    tol: F,
    max_sweeps: usize,
) -> ([F; 2], F) {
    let mut c = center;
    let mut w = half_width;
    let mut best = value(f(c));
    let four = F::lit(4.0);
    for sweep in 0..max_sweeps {
        let prev = c;
        for k in 0..2 {
            let (x, v) = golden_max(
                |t| {
                    let mut p = c;
                    p[k] = t;
                    f(p)
                },
                c[k] - w[k],
                c[k] + w[k],
                tol,
            );
            if v >= best {
                c[k] = x;
                best = v;
            }
        }
        let moved = [(c[0] - prev[0]).abs(), (c[1] - prev[1]).abs()];
        if sweep > 0 && moved[0] <= tol && moved[1] <= tol {
            break;
        }
        for k in 0..2 {
            w[k] = (four * moved[k]).max(four * tol);
        }
    }
    (c, best)
}

/// Evaluates `f` on an `n × n` grid spanning `lo..=hi` per coordinate.
pub(crate) fn scan_2d<F: Real>(
    mut f: impl FnMut([F; 2]) -> Option<F>,
    lo: [F; 2],
    hi: [F; 2],
    n: usize,
) -> Vec<([F; 2], F)> {
    let mut out = Vec::with_capacity(n * n);
    let denom = F::from_usize(n - 1).unwrap();
    for i in 0..n {
        for j in 0..n {
            let fi = F::from_usize(i).unwrap() / denom;
            let fj = F::from_usize(j).unwrap() / denom;
            let p = [lo[0] + fi * (hi[0] - lo[0]), lo[1] + fj * (hi[1] - lo[1])];
            out.push((p, value(f(p))));
        }
    }
    out
}
