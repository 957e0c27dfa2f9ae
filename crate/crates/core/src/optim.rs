//! Scalar minimization helpers shared by the boosting line search and the
//! initial-parameter fit.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
///
/// Stops when the bracket is narrower than `abs_tol` or after `max_iter`
/// shrinks. Returns the best point evaluated, which includes both ends.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    abs_tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let mut best = (lo, f(lo));
    let f_hi = f(hi);
    if f_hi < best.1 {
        best = (hi, f_hi);
    }
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..max_iter {
        if hi - lo <= abs_tol {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    for (x, fx) in [(a, fa), (b, fb)] {
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Cyclic coordinate descent on a two-argument function, each coordinate
/// minimized by golden section on its fixed bracket. Suited to jointly
/// convex (or coordinate-wise unimodal) objectives.
pub fn coordinate_descent_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    start: (f64, f64),
    bracket_a: (f64, f64),
    bracket_b: (f64, f64),
    tol: f64,
    max_rounds: usize,
) -> (f64, f64) {
    let (mut a, mut b) = start;
    let mut current = f(a, b);
    for _ in 0..max_rounds {
        let (na, _) = golden_section(|t| f(t, b), bracket_a.0, bracket_a.1, tol, 200);
        if f(na, b) < current {
            a = na;
            current = f(a, b);
        }
        let (nb, _) = golden_section(|t| f(a, t), bracket_b.0, bracket_b.1, tol, 200);
        let moved_b = f(a, nb) < current;
        let prev = current;
        if moved_b {
            b = nb;
            current = f(a, b);
        }
        if prev - current <= 1e-15 * prev.abs().max(1.0) && (na - a).abs() <= tol {
            break;
        }
    }
    (a, b)
}
