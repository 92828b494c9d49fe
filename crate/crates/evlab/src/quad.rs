//! Adaptive Simpson quadrature.
//!
//! Small and self-contained: the crate only ever integrates smooth or
//! piecewise-smooth scalar functions on finite intervals (stepwise-validity
//! checks and adjuster integrals after the `u = 1/x` substitution), so a
//! classic recursive Simpson rule with Richardson extrapolation is plenty.

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Uses adaptive interval halving with the standard `|S_fine - S_coarse| <
/// 15 tol` acceptance test and returns the Richardson-extrapolated value.
/// Recursion depth is capped; at the cap the current fine estimate is used.
/// Non-finite function values poison the result (the caller sees NaN or
/// infinity rather than a silently wrong number).
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = midpoint(a, b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    step(&f, a, b, fa, fm, fb, whole, tol.max(f64::MIN_POSITIVE), MAX_DEPTH)
}

const MAX_DEPTH: u32 = 52;

fn midpoint(a: f64, b: f64) -> f64 {
    a + 0.5 * (b - a)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = midpoint(a, b);
    let lm = midpoint(a, m);
    let rm = midpoint(m, b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
