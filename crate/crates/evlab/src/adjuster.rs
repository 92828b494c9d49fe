//! Adjusters and e-lifting.
//!
//! An adjuster is a non-decreasing `A: [1, inf) -> [0, inf]` with
//! `int_1^inf A(x) / x^2 dx <= 1`. Applied to the running maximum of an
//! e-process, it produces a new e-process for the same null that stays valid
//! at *arbitrary* stopping times of the global filtration, including rules
//! that peek at other hypotheses' streams; that is the repair used by the
//! stopped e-BH session when the stopping rule is not local.
//!
//! Built-in families:
//!
//! * `Power { k }`: `A(x) = k x^(1-k)` for `k` in `(0, 1)`; integral exactly 1.
//! * `SqrtMinusOne`: `A(x) = sqrt(x) - 1`; integral exactly 1.
//! * `Custom`: piecewise-linear tables loaded from two-column text files.
//!   Left of the first knot the table is constant, beyond the last knot it
//!   extrapolates with the final segment's slope (so a truncated identity
//!   table is correctly classified as divergent).
//!
//! Validity is certified numerically: [`adjuster_validity`] integrates
//! `A(x)/x^2` after the substitution `u = 1/x` over dyadic levels
//! `[2^-(j+1), 2^-j]` with adaptive Simpson on each level, extrapolates the
//! geometric tail from the measured increment ratio, and declares divergence
//! when the accumulated mass exceeds `10 G` or the increments stop
//! contracting. Compound panels are certified against the relaxed budget
//! `G` via [`compound_adjuster_validity`].

use crate::eprocess::EProcessState;
use crate::quad::adaptive_simpson;
use crate::{Error, Result};

/// Piecewise-linear adjuster table with strictly increasing abscissas.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjusterTable {
    knots: Vec<(f64, f64)>,
}

impl AdjusterTable {
    /// Validate and build a table: knots finite, abscissas strictly
    /// increasing and at least 1, values nonnegative and non-decreasing.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::AdjusterSpec("table needs at least one knot".into()));
        }
        for &(x, a) in &knots {
            if !x.is_finite() || !a.is_finite() {
                return Err(Error::AdjusterSpec(format!("non-finite knot ({x}, {a})")));
            }
            if x < 1.0 {
                return Err(Error::AdjusterSpec(format!("abscissa {x} below 1")));
            }
            if a < 0.0 {
                return Err(Error::AdjusterSpec(format!("negative value {a} at {x}")));
            }
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::AdjusterSpec(format!(
                    "abscissas must increase strictly: {} then {}",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::AdjusterSpec(format!(
                    "values must be non-decreasing: {} then {}",
                    w[0].1, w[1].1
                )));
            }
        }
        Ok(Self { knots })
    }

    /// Parse the two-column text format: one `x value` pair per line,
    /// whitespace separated; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut knots = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::Parse(format!(
                    "line {}: expected two columns, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let x: f64 = fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: bad abscissa: {e}", lineno + 1)))?;
            let a: f64 = fields[1]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: bad value: {e}", lineno + 1)))?;
            knots.push((x, a));
        }
        Self::new(knots)
    }

    #[must_use]
    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    fn eval(&self, x: f64) -> f64 {
        let first = self.knots[0];
        if x <= first.0 {
            return first.1;
        }
        let last = *self.knots.last().expect("non-empty");
        if x >= last.0 {
            let slope = if self.knots.len() >= 2 {
                let prev = self.knots[self.knots.len() - 2];
                (last.1 - prev.1) / (last.0 - prev.0)
            } else {
                0.0
            };
            if x.is_infinite() {
                return if slope > 0.0 { f64::INFINITY } else { last.1 };
            }
            return last.1 + slope * (x - last.0);
        }
        let idx = self.knots.partition_point(|k| k.0 < x);
        let (x1, a1) = self.knots[idx];
        if x1 == x {
            return a1;
        }
        let (x0, a0) = self.knots[idx - 1];
        a0 + (a1 - a0) * (x - x0) / (x1 - x0)
    }
}

/// An adjuster specification.
#[derive(Debug, Clone, PartialEq)]
pub enum AdjusterSpec {
    /// `A(x) = k x^(1-k)`, `k` in `(0, 1)`.
    Power { k: f64 },
    /// `A(x) = sqrt(x) - 1`.
    SqrtMinusOne,
    Custom(AdjusterTable),
}

impl AdjusterSpec {
    pub fn validate(&self) -> Result<()> {
        if let AdjusterSpec::Power { k } = self {
            if !(*k > 0.0 && *k < 1.0) {
                return Err(Error::AdjusterSpec(format!(
                    "power exponent must lie in (0, 1), got {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Evaluate an adjuster at `x >= 1`.
pub fn adjuster_value(spec: &AdjusterSpec, x: f64) -> Result<f64> {
    spec.validate()?;
    if x.is_nan() || x < 1.0 {
        return Err(Error::Input(format!("adjusters are defined on [1, inf), got {x}")));
    }
    Ok(match spec {
        AdjusterSpec::Power { k } => k * x.powf(1.0 - k),
        AdjusterSpec::SqrtMinusOne => x.sqrt() - 1.0,
        AdjusterSpec::Custom(table) => table.eval(x),
    })
}

/// Outcome of a numeric validity check.
#[derive(Debug, Clone)]
pub struct ValidityReport {
    /// Estimated `int_1^inf A(x)/x^2 dx` (a lower bound when `divergent`).
    pub integral: f64,
    /// Integral certainly exceeds the cap `10 G` or its increments never
    /// contract; the estimate is then only a lower bound.
    pub divergent: bool,
    /// Integral within `bound * (1 + tol)` and not divergent.
    pub pass: bool,
    /// The budget the integral was compared against (`1`, or `G` for
    /// compound panels).
    pub bound: f64,
}

/// Certify a single adjuster: passes when `int A(x)/x^2 dx <= 1 + tol`.
pub fn adjuster_validity(spec: &AdjusterSpec, tol: f64) -> Result<ValidityReport> {
    spec.validate()?;
    check_tol(tol)?;
    let (integral, divergent) = improper_tail_integral(|x| evaluate_unchecked(spec, x), 10.0);
    Ok(ValidityReport {
        integral,
        divergent,
        pass: !divergent && integral <= 1.0 + tol,
        bound: 1.0,
    })
}

/// Certify a weighted compound panel of `G` adjusters: passes when
/// `int sum_g w_g A_g(x) / x^2 dx <= G (1 + tol)`.
///
/// Individual components need not be valid on their own; only the sum is
/// budgeted. Weights must be finite and nonnegative.
pub fn compound_adjuster_validity(
    components: &[(f64, AdjusterSpec)],
    tol: f64,
) -> Result<ValidityReport> {
    if components.is_empty() {
        return Err(Error::Input("compound panel needs at least one component".into()));
    }
    check_tol(tol)?;
    for (w, spec) in components {
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::Parameter(format!("component weight must be nonnegative, got {w}")));
        }
        spec.validate()?;
    }
    let g = components.len() as f64;
    let (integral, divergent) = improper_tail_integral(
        |x| components.iter().map(|(w, s)| w * evaluate_unchecked(s, x)).sum(),
        10.0 * g,
    );
    Ok(ValidityReport {
        integral,
        divergent,
        pass: !divergent && integral <= g * (1.0 + tol),
        bound: g,
    })
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::Parameter(format!("tolerance must be nonnegative, got {tol}")));
    }
    Ok(())
}

// Spec already validated; skip per-point revalidation inside quadrature loops.
fn evaluate_unchecked(spec: &AdjusterSpec, x: f64) -> f64 {
    match spec {
        AdjusterSpec::Power { k } => k * x.powf(1.0 - k),
        AdjusterSpec::SqrtMinusOne => x.sqrt() - 1.0,
        AdjusterSpec::Custom(table) => table.eval(x),
    }
}

const LEVELS: i32 = 64;
// Increment ratio above which the dyadic sums are treated as non-contracting.
// Linear-tail tables approach ratio 1, powers k in (0,1) stay at 2^(k-1).
const RATIO_CAP: f64 = 0.999;
const ABS_FLOOR: f64 = 1e-13;
const SIMPSON_TOL: f64 = 1e-12;

// int_1^inf f(x)/x^2 dx computed as int_0^1 f(1/u) du over dyadic levels.
// Returns (estimate, divergent).
fn improper_tail_integral<F: Fn(f64) -> f64>(f: F, cap: f64) -> (f64, bool) {
    let integrand = |u: f64| f(1.0 / u);
    let mut total = 0.0;
    let mut prev_inc = 0.0;
    let mut ratio = f64::NAN;
    for j in 0..LEVELS {
        let hi = 0.5f64.powi(j);
        let inc = adaptive_simpson(integrand, hi / 2.0, hi, SIMPSON_TOL).max(0.0);
        if !inc.is_finite() {
            return (f64::INFINITY, true);
        }
        total += inc;
        if total > cap {
            return (total, true);
        }
        if j > 0 {
            ratio = if prev_inc > 0.0 {
                inc / prev_inc
            } else if inc == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
        }
        if j >= 8 && inc <= ABS_FLOOR {
            // Remaining mass is below measurement noise.
            return (total, false);
        }
        prev_inc = inc;
    }
    // A NaN ratio (single level, so never updated) also counts as divergent.
    if ratio.is_nan() || ratio >= RATIO_CAP {
        return (total, true);
    }
    let tail = prev_inc * ratio / (1.0 - ratio);
    let total = total + tail;
    (total, total > cap)
}

/// E-lift: apply an adjuster to a process's running maximum.
///
/// Returns 1 before any observation (`n = 0`), otherwise
/// `A(max_{0<=i<=n} M_i)`. The caller is responsible for certifying the
/// adjuster once via [`adjuster_validity`]; this function only enforces
/// structural validity.
pub fn elift(state: &EProcessState, spec: &AdjusterSpec) -> Result<f64> {
    lift_log_running_max(spec, state.log_running_max(), state.n())
}

pub(crate) fn lift_log_running_max(
    spec: &AdjusterSpec,
    log_running_max: f64,
    n: u64,
) -> Result<f64> {
    spec.validate()?;
    if n == 0 {
        return Ok(1.0);
    }
    adjuster_value(spec, log_running_max.exp())
}
