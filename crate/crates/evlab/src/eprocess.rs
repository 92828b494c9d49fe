//! E-processes from stepwise e-values.
//!
//! An e-process for hypothesis `g` starts at `M_0 = 1` and multiplies in one
//! nonnegative factor per observation; under the null, each factor has
//! conditional expectation at most one given the past, so `M_n` is a
//! nonnegative supermartingale with `E[M_tau] <= 1` at any *local* stopping
//! time. Values are stored in the log domain: a zero factor sends
//! `log_value` to `-inf` and the process is absorbed there (it can never
//! recover, and keeping the `-inf` avoids `NaN` from `-inf + inf` when a
//! later factor is infinite).
//!
//! # Factor families
//!
//! * betting: responses in `{-1, +1}`; the null-mean bet `1 + y/2` (and the
//!   generalized `1 + (y - mu_0)/2` for composite locations via
//!   [`StepwiseFactorSpec::Betting`]).
//! * gaussian: `exp(eta_n y - eta_n^2 sigma_gg / 2)` with a predictable rate
//!   schedule `eta_n`; exactly fair under `Y ~ N(0, sigma_gg)`.
//! * sprt: likelihood ratio `q(y|x) / p(y|x)` of an alternative against the
//!   null conditional law.
//! * universal_nb: universal-inference ratio for a negative binomial GLM
//!   with binary group covariate, plug-in numerator and refreshed null MLE
//!   denominator (see [`EProcessState::observe_nb`]).
//! * catoni: `exp(phi(lambda_n (y - mu(x))) - lambda_n^2 v(x) / 2)` with the
//!   bounded influence function [`catoni_phi`]; valid for heavy-tailed `Y`
//!   with mean bounded by `mu(x)` and second moment about `mu(x)` bounded by
//!   `v(x)`. The two-sided variant averages the two one-sided processes.
//!
//! Composite nulls are handled by running one state per parameter on a finite
//! grid and taking the infimum ([`infimum_log_value`]); the infimum of
//! e-processes over a family is an e-process for the union null.
//!
//! # Checkpointing
//!
//! [`checkpoint_record`] serializes a state to a single-line text record:
//! whitespace-separated `family n log_value log_running_max` followed by the
//! family's sufficient statistics in fixed order (only `universal_nb` has
//! any: `dispersion count0 count1 sum0 sum1 log_numerator sum_lgamma_y_r
//! sum_lgamma_y1`). Floats use Rust's shortest round-trip formatting, so
//! parsing a record recovers the state bit for bit.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use crate::stream::Covariate;
use crate::{Error, Result};

/// Floor applied to fitted NB means so that log-links and pmf evaluations
/// stay finite when a group has seen only zero counts.
pub const NB_MEAN_FLOOR: f64 = 1e-8;

fn clamp_mean(m: f64) -> f64 {
    m.max(NB_MEAN_FLOOR)
}

// ---------------------------------------------------------------------------
// Stepwise factors
// ---------------------------------------------------------------------------

/// Betting factor for sign responses under the fair-coin null: `1 + y/2`.
pub fn betting_factor(y: f64) -> Result<f64> {
    if y != 1.0 && y != -1.0 {
        return Err(Error::Input(format!("betting response must be -1 or +1, got {y}")));
    }
    Ok(1.0 + y / 2.0)
}

/// Gaussian stepwise factor `exp(eta y - eta^2 sigma_gg / 2)`.
///
/// Fair when `y ~ N(0, sigma_gg)` for any fixed `eta` (the Gaussian MGF
/// identity), so any predictable rate schedule yields an e-process.
pub fn gaussian_factor(eta: f64, sigma_gg: f64, y: f64) -> Result<f64> {
    if !(sigma_gg > 0.0 && sigma_gg.is_finite()) {
        return Err(Error::Parameter(format!("gaussian variance must be positive, got {sigma_gg}")));
    }
    if !eta.is_finite() {
        return Err(Error::Parameter(format!("gaussian rate must be finite, got {eta}")));
    }
    if y.is_nan() {
        return Err(Error::Input("gaussian response is NaN".into()));
    }
    Ok((eta * y - eta * eta * sigma_gg / 2.0).exp())
}

/// Likelihood-ratio factor `alt(x, y) / null(x, y)`.
///
/// A vanishing null density with positive alternative density yields an
/// infinite e-value (allowed); both densities vanishing at the observed point
/// is an input error, as are negative or NaN density values.
pub fn sprt_factor<N, A>(null_density: N, alt_density: A, x: &Covariate, y: f64) -> Result<f64>
where
    N: Fn(&Covariate, f64) -> f64,
    A: Fn(&Covariate, f64) -> f64,
{
    let p = null_density(x, y);
    let q = alt_density(x, y);
    if p.is_nan() || p < 0.0 {
        return Err(Error::Input(format!("null density returned {p}")));
    }
    if q.is_nan() || q < 0.0 {
        return Err(Error::Input(format!("alternative density returned {q}")));
    }
    if p == 0.0 {
        if q == 0.0 {
            return Err(Error::Input(
                "both null and alternative densities vanish at the observation".into(),
            ));
        }
        return Ok(f64::INFINITY);
    }
    Ok(q / p)
}

/// Catoni's bounded influence function: `log(1 + x + x^2/2)` for `x >= 0`,
/// `-log(1 - x + x^2/2)` for `x < 0`. Odd, non-decreasing, and dominated by
/// `log(1 + x + x^2/2)` from both sides, which is what makes the factor fair.
#[must_use]
pub fn catoni_phi(x: f64) -> f64 {
    if x >= 0.0 {
        (1.0 + x + x * x / 2.0).ln()
    } else {
        -(1.0 - x + x * x / 2.0).ln()
    }
}

/// Catoni stepwise factor `exp(phi(lambda (y - mu)) - lambda^2 v / 2)`.
///
/// Valid for the one-sided null `E[Y | X] <= mu` when `v` bounds the
/// conditional second moment `E[(Y - mu)^2 | X]`. Requires `lambda > 0`,
/// finite `mu`, and finite `v >= 0`.
pub fn catoni_factor(lambda: f64, mu: f64, v: f64, y: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("catoni rate must be positive, got {lambda}")));
    }
    if !mu.is_finite() {
        return Err(Error::Parameter(format!("catoni mean target must be finite, got {mu}")));
    }
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Parameter(format!("catoni second-moment bound must be nonnegative, got {v}")));
    }
    if y.is_nan() {
        return Err(Error::Input("catoni response is NaN".into()));
    }
    Ok((catoni_phi(lambda * (y - mu)) - lambda * lambda * v / 2.0).exp())
}

/// Catoni factor for the mirrored null `E[Y | X] >= mu`: by oddness of phi
/// this is the upper factor evaluated at the reflected response `2 mu - y`.
pub fn catoni_mirror_factor(lambda: f64, mu: f64, v: f64, y: f64) -> Result<f64> {
    catoni_factor(lambda, mu, v, 2.0 * mu - y)
}

// ---------------------------------------------------------------------------
// Negative binomial machinery (NB2 parametrization)
// ---------------------------------------------------------------------------

/// Log-pmf of the NB2 distribution with mean `m > 0` and dispersion `a > 0`
/// (`Var = m + a m^2`; `r = 1/a` is the shape):
///
/// `lgamma(y + r) - lgamma(r) - lgamma(y + 1) + r log(r / (r + m)) + y log(m / (r + m))`.
pub fn nb_logpmf(y: u64, mean: f64, dispersion: f64) -> Result<f64> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Parameter(format!("NB mean must be positive, got {mean}")));
    }
    if !(dispersion > 0.0 && dispersion.is_finite()) {
        return Err(Error::Parameter(format!("NB dispersion must be positive, got {dispersion}")));
    }
    let r = 1.0 / dispersion;
    let yf = y as f64;
    // r log(r/(r+m)) written as -r log1p(m/r) to stay accurate in the small
    // dispersion (near-Poisson) regime.
    Ok(ln_gamma(yf + r) - ln_gamma(r) - ln_gamma(yf + 1.0) - r * (mean / r).ln_1p()
        + yf * (mean.ln() - (r + mean).ln()))
}

/// Null NB GLM MLE: `gamma_hat = log(clamped sample mean)`.
///
/// Under the null the group effect is zero, so for any fixed dispersion the
/// intercept MLE is the log of the pooled sample mean, floored at
/// [`NB_MEAN_FLOOR`] to keep the log-link finite on all-zero histories.
pub fn nb_mle_null(history: &[(u8, u64)], dispersion: f64) -> Result<f64> {
    check_dispersion(dispersion)?;
    if history.is_empty() {
        return Err(Error::Input("NB MLE needs a non-empty history".into()));
    }
    let total: f64 = history.iter().map(|&(_, y)| y as f64).sum();
    Ok(clamp_mean(total / history.len() as f64).ln())
}

/// Full NB GLM MLE `(beta_hat, gamma_hat)` for the model
/// `Y | X = x ~ NB(exp(x beta + gamma), a)` with binary `x`.
///
/// With both groups observed the MLE is exact in closed form from the group
/// means (clamped at [`NB_MEAN_FLOOR`]); with only one group observed the
/// group effect is not identified and `beta_hat = 0` with the pooled
/// intercept is returned.
pub fn nb_mle_full(history: &[(u8, u64)], dispersion: f64) -> Result<(f64, f64)> {
    check_dispersion(dispersion)?;
    if history.is_empty() {
        return Err(Error::Input("NB MLE needs a non-empty history".into()));
    }
    for &(x, _) in history {
        if x > 1 {
            return Err(Error::Input(format!("NB group covariate must be 0 or 1, got {x}")));
        }
    }
    let mut count = [0u64; 2];
    let mut sum = [0.0f64; 2];
    for &(x, y) in history {
        count[x as usize] += 1;
        sum[x as usize] += y as f64;
    }
    Ok(full_mle_from_moments(count, sum))
}

fn full_mle_from_moments(count: [u64; 2], sum: [f64; 2]) -> (f64, f64) {
    match (count[0], count[1]) {
        (0, 0) => (0.0, 0.0),
        (0, n1) => (0.0, clamp_mean(sum[1] / n1 as f64).ln()),
        (n0, 0) => (0.0, clamp_mean(sum[0] / n0 as f64).ln()),
        (n0, n1) => {
            let gamma = clamp_mean(sum[0] / n0 as f64).ln();
            let beta = clamp_mean(sum[1] / n1 as f64).ln() - gamma;
            (beta, gamma)
        }
    }
}

fn check_dispersion(dispersion: f64) -> Result<()> {
    if !(dispersion > 0.0 && dispersion.is_finite()) {
        return Err(Error::Parameter(format!("NB dispersion must be positive, got {dispersion}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Process state
// ---------------------------------------------------------------------------

/// Family-specific sufficient statistics carried by a state.
#[derive(Debug, Clone, PartialEq)]
pub enum SuffStats {
    /// Product-form families: the log value *is* the state.
    None,
    UniversalNb(NbAccumulator),
}

/// Running sufficient statistics of the universal-inference NB process.
#[derive(Debug, Clone, PartialEq)]
pub struct NbAccumulator {
    pub dispersion: f64,
    /// Observations per group.
    pub count: [u64; 2],
    /// Count totals per group.
    pub sum: [f64; 2],
    /// Accumulated plug-in log numerator `sum_i log p(y_i | x_i, beta_{i-1}, gamma_{i-1})`.
    pub log_numerator: f64,
    /// `sum_i lgamma(y_i + r)`.
    pub sum_lgamma_y_r: f64,
    /// `sum_i lgamma(y_i + 1)`.
    pub sum_lgamma_y1: f64,
}

impl NbAccumulator {
    fn new(dispersion: f64) -> Self {
        Self {
            dispersion,
            count: [0, 0],
            sum: [0.0, 0.0],
            log_numerator: 0.0,
            sum_lgamma_y_r: 0.0,
            sum_lgamma_y1: 0.0,
        }
    }

    fn full_mle(&self) -> (f64, f64) {
        full_mle_from_moments(self.count, self.sum)
    }

    // Log-likelihood of the whole history at the refreshed null MLE, in
    // closed form from the sufficient statistics.
    fn log_denominator(&self) -> f64 {
        let n = (self.count[0] + self.count[1]) as f64;
        let total = self.sum[0] + self.sum[1];
        let m0 = clamp_mean(total / n);
        let r = 1.0 / self.dispersion;
        self.sum_lgamma_y_r - n * ln_gamma(r) - self.sum_lgamma_y1 - n * r * (m0 / r).ln_1p()
            + total * (m0.ln() - (r + m0).ln())
    }
}

/// State of one e-process: step count, log value, log running maximum, and
/// family sufficient statistics. Starts at `M_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EProcessState {
    n: u64,
    log_value: f64,
    log_running_max: f64,
    suff: SuffStats,
}

impl Default for EProcessState {
    fn default() -> Self {
        Self::new()
    }
}

impl EProcessState {
    /// Fresh product-form state at `M_0 = 1`.
    #[must_use]
    pub fn new() -> Self {
        Self { n: 0, log_value: 0.0, log_running_max: 0.0, suff: SuffStats::None }
    }

    /// Fresh universal-inference NB state with a known dispersion.
    pub fn new_universal_nb(dispersion: f64) -> Result<Self> {
        check_dispersion(dispersion)?;
        Ok(Self {
            n: 0,
            log_value: 0.0,
            log_running_max: 0.0,
            suff: SuffStats::UniversalNb(NbAccumulator::new(dispersion)),
        })
    }

    #[must_use]
    pub fn n(&self) -> u64 {
        self.n
    }

    #[must_use]
    pub fn log_value(&self) -> f64 {
        self.log_value
    }

    #[must_use]
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }

    #[must_use]
    pub fn log_running_max(&self) -> f64 {
        self.log_running_max
    }

    #[must_use]
    pub fn running_max(&self) -> f64 {
        self.log_running_max.exp()
    }

    #[must_use]
    pub fn suff(&self) -> &SuffStats {
        &self.suff
    }

    /// Multiply one stepwise factor into a product-form process.
    ///
    /// A zero factor absorbs the process at zero (and an absorbed process
    /// stays at zero no matter what follows, including infinite factors).
    /// Negative or NaN factors are input errors; `universal_nb` states must
    /// be stepped with [`EProcessState::observe_nb`] instead so their
    /// sufficient statistics stay in sync.
    pub fn apply_factor(&mut self, factor: f64) -> Result<()> {
        if !matches!(self.suff, SuffStats::None) {
            return Err(Error::Input(
                "universal_nb state is stepped with observe_nb, not apply_factor".into(),
            ));
        }
        if factor.is_nan() || factor < 0.0 {
            return Err(Error::Input(format!("stepwise factor must be in [0, inf], got {factor}")));
        }
        self.n += 1;
        if self.log_value != f64::NEG_INFINITY {
            if factor == 0.0 {
                self.log_value = f64::NEG_INFINITY;
            } else {
                self.log_value += factor.ln();
            }
        }
        self.log_running_max = self.log_running_max.max(self.log_value);
        Ok(())
    }

    /// Ingest one `(group, count)` observation into a universal-inference NB
    /// process.
    ///
    /// The numerator gains the plug-in likelihood `p(y | x, beta_hat,
    /// gamma_hat)` fitted on the history *before* this observation (the
    /// initial plug-in is `(0, 0)`); the denominator is the full history's
    /// likelihood at the refreshed null MLE, recomputed in closed form from
    /// the sufficient statistics. O(1) per observation.
    pub fn observe_nb(&mut self, group: u8, count: u64) -> Result<()> {
        let SuffStats::UniversalNb(acc) = &mut self.suff else {
            return Err(Error::Input(
                "observe_nb applies only to universal_nb states; use apply_factor".into(),
            ));
        };
        if group > 1 {
            return Err(Error::Input(format!("NB group covariate must be 0 or 1, got {group}")));
        }
        let (beta, gamma) = acc.full_mle();
        let plug_mean = (f64::from(group) * beta + gamma).exp();
        acc.log_numerator += nb_logpmf(count, clamp_mean(plug_mean), acc.dispersion)?;

        let r = 1.0 / acc.dispersion;
        acc.count[group as usize] += 1;
        acc.sum[group as usize] += count as f64;
        acc.sum_lgamma_y_r += ln_gamma(count as f64 + r);
        acc.sum_lgamma_y1 += ln_gamma(count as f64 + 1.0);

        self.log_value = acc.log_numerator - acc.log_denominator();
        self.n += 1;
        self.log_running_max = self.log_running_max.max(self.log_value);
        Ok(())
    }
}

/// Log of the infimum over grid members: the e-process for a composite null
/// run as a finite parameter grid.
pub fn infimum_log_value(states: &[EProcessState]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Input("infimum over an empty grid".into()));
    }
    Ok(states.iter().map(EProcessState::log_value).fold(f64::INFINITY, f64::min))
}

// ---------------------------------------------------------------------------
// Checkpoint records
// ---------------------------------------------------------------------------

/// Family discriminant used in checkpoint records and configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyTag {
    Betting,
    Gaussian,
    Sprt,
    UniversalNb,
    Catoni,
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FamilyTag::Betting => "betting",
            FamilyTag::Gaussian => "gaussian",
            FamilyTag::Sprt => "sprt",
            FamilyTag::UniversalNb => "universal_nb",
            FamilyTag::Catoni => "catoni",
        };
        f.write_str(s)
    }
}

impl FromStr for FamilyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "betting" => Ok(FamilyTag::Betting),
            "gaussian" => Ok(FamilyTag::Gaussian),
            "sprt" => Ok(FamilyTag::Sprt),
            "universal_nb" => Ok(FamilyTag::UniversalNb),
            "catoni" => Ok(FamilyTag::Catoni),
            other => Err(Error::Parse(format!("unknown factor family `{other}`"))),
        }
    }
}

/// Serialize a state to its single-line checkpoint record.
///
/// Errors if the family tag and the state's sufficient statistics disagree.
pub fn checkpoint_record(family: FamilyTag, state: &EProcessState) -> Result<String> {
    let mut line = format!(
        "{family} {} {} {}",
        state.n, state.log_value, state.log_running_max
    );
    match (&state.suff, family) {
        (SuffStats::None, FamilyTag::UniversalNb) => {
            return Err(Error::Input(
                "universal_nb checkpoint needs NB sufficient statistics".into(),
            ));
        }
        (SuffStats::None, _) => {}
        (SuffStats::UniversalNb(_), tag) if tag != FamilyTag::UniversalNb => {
            return Err(Error::Input(format!(
                "state carries NB sufficient statistics but family is {tag}"
            )));
        }
        (SuffStats::UniversalNb(acc), _) => {
            line.push_str(&format!(
                " {} {} {} {} {} {} {} {}",
                acc.dispersion,
                acc.count[0],
                acc.count[1],
                acc.sum[0],
                acc.sum[1],
                acc.log_numerator,
                acc.sum_lgamma_y_r,
                acc.sum_lgamma_y1
            ));
        }
    }
    Ok(line)
}

/// Parse a checkpoint record produced by [`checkpoint_record`].
///
/// Rejects malformed syntax, NaN fields, inconsistent counts, and violated
/// state invariants (`log_running_max` must dominate both zero and the
/// current log value). Never panics on arbitrary input.
pub fn parse_checkpoint_record(line: &str) -> Result<(FamilyTag, EProcessState)> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 4 {
        return Err(Error::Parse(format!(
            "checkpoint record needs at least 4 fields, got {}",
            tokens.len()
        )));
    }
    let family: FamilyTag = tokens[0].parse()?;
    let n: u64 = tokens[1]
        .parse()
        .map_err(|e| Error::Parse(format!("bad step count `{}`: {e}", tokens[1])))?;
    let log_value = parse_f64(tokens[2], "log_value")?;
    let log_running_max = parse_f64(tokens[3], "log_running_max")?;
    if log_value.is_nan() || log_running_max.is_nan() {
        return Err(Error::Parse("checkpoint log fields must not be NaN".into()));
    }
    if log_running_max < 0.0 || log_running_max < log_value {
        return Err(Error::Parse(format!(
            "log_running_max {log_running_max} must dominate 0 and log_value {log_value}"
        )));
    }

    let suff = if family == FamilyTag::UniversalNb {
        if tokens.len() != 12 {
            return Err(Error::Parse(format!(
                "universal_nb record needs 12 fields, got {}",
                tokens.len()
            )));
        }
        let dispersion = parse_f64(tokens[4], "dispersion")?;
        if !(dispersion > 0.0 && dispersion.is_finite()) {
            return Err(Error::Parse(format!("dispersion must be positive, got {dispersion}")));
        }
        let count0: u64 = tokens[5]
            .parse()
            .map_err(|e| Error::Parse(format!("bad count0 `{}`: {e}", tokens[5])))?;
        let count1: u64 = tokens[6]
            .parse()
            .map_err(|e| Error::Parse(format!("bad count1 `{}`: {e}", tokens[6])))?;
        if count0.checked_add(count1) != Some(n) {
            return Err(Error::Parse(format!(
                "group counts {count0} + {count1} must equal n = {n}"
            )));
        }
        let sum0 = parse_f64(tokens[7], "sum0")?;
        let sum1 = parse_f64(tokens[8], "sum1")?;
        let log_numerator = parse_f64(tokens[9], "log_numerator")?;
        let sum_lgamma_y_r = parse_f64(tokens[10], "sum_lgamma_y_r")?;
        let sum_lgamma_y1 = parse_f64(tokens[11], "sum_lgamma_y1")?;
        for (name, v) in [
            ("sum0", sum0),
            ("sum1", sum1),
            ("log_numerator", log_numerator),
            ("sum_lgamma_y_r", sum_lgamma_y_r),
            ("sum_lgamma_y1", sum_lgamma_y1),
        ] {
            if !v.is_finite() {
                return Err(Error::Parse(format!("{name} must be finite, got {v}")));
            }
        }
        if sum0 < 0.0 || sum1 < 0.0 {
            return Err(Error::Parse("count sums must be nonnegative".into()));
        }
        SuffStats::UniversalNb(NbAccumulator {
            dispersion,
            count: [count0, count1],
            sum: [sum0, sum1],
            log_numerator,
            sum_lgamma_y_r,
            sum_lgamma_y1,
        })
    } else {
        if tokens.len() != 4 {
            return Err(Error::Parse(format!(
                "{family} record needs exactly 4 fields, got {}",
                tokens.len()
            )));
        }
        SuffStats::None
    };

    Ok((family, EProcessState { n, log_value, log_running_max, suff }))
}

fn parse_f64(token: &str, name: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad {name} `{token}`: {e}")))
}

// ---------------------------------------------------------------------------
// Family specifications and single-member processes
// ---------------------------------------------------------------------------

/// Predictable rate schedule for the gaussian and catoni families.
#[derive(Clone)]
pub enum RateSchedule {
    Constant(f64),
    /// The callback sees only the 1-based step index, which makes
    /// predictability structural: it cannot read the incoming observation.
    Predictable(Arc<dyn Fn(u64) -> f64 + Send + Sync>),
}

impl RateSchedule {
    /// Rate for step `n` (1-based). Must be finite and nonnegative.
    pub fn eval(&self, n: u64) -> Result<f64> {
        let rate = match self {
            RateSchedule::Constant(c) => *c,
            RateSchedule::Predictable(f) => f(n),
        };
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::Parameter(format!(
                "rate schedule produced {rate} at step {n}; rates must be finite and nonnegative"
            )));
        }
        Ok(rate)
    }
}

impl fmt::Debug for RateSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateSchedule::Constant(c) => write!(f, "Constant({c})"),
            RateSchedule::Predictable(_) => f.write_str("Predictable(..)"),
        }
    }
}

/// Conditional target (mean or second-moment bound) for the catoni family.
#[derive(Clone)]
pub enum TargetFn {
    Constant(f64),
    OfCovariate(Arc<dyn Fn(&Covariate) -> f64 + Send + Sync>),
}

impl TargetFn {
    fn eval(&self, x: &Covariate) -> f64 {
        match self {
            TargetFn::Constant(c) => *c,
            TargetFn::OfCovariate(f) => f(x),
        }
    }
}

impl fmt::Debug for TargetFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetFn::Constant(c) => write!(f, "Constant({c})"),
            TargetFn::OfCovariate(_) => f.write_str("OfCovariate(..)"),
        }
    }
}

/// A conditional density or mass function `(x, y) -> f(y | x)`.
pub type DensityFn = Arc<dyn Fn(&Covariate, f64) -> f64 + Send + Sync>;

/// Conditional law `y | x` for the SPRT family.
#[derive(Clone)]
pub enum ConditionalLaw {
    /// Sign responses: mass `prob_plus_one` on `+1`, the rest on `-1`.
    BernoulliSign { prob_plus_one: f64 },
    Custom(DensityFn),
}

impl ConditionalLaw {
    pub fn density(&self, x: &Covariate, y: f64) -> f64 {
        match self {
            ConditionalLaw::BernoulliSign { prob_plus_one } => {
                if y == 1.0 {
                    *prob_plus_one
                } else if y == -1.0 {
                    1.0 - prob_plus_one
                } else {
                    0.0
                }
            }
            ConditionalLaw::Custom(f) => f(x, y),
        }
    }

    fn validate(&self) -> Result<()> {
        if let ConditionalLaw::BernoulliSign { prob_plus_one } = self {
            if !(*prob_plus_one >= 0.0 && *prob_plus_one <= 1.0) {
                return Err(Error::Parameter(format!(
                    "Bernoulli mass must lie in [0, 1], got {prob_plus_one}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for ConditionalLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionalLaw::BernoulliSign { prob_plus_one } => {
                write!(f, "BernoulliSign({prob_plus_one})")
            }
            ConditionalLaw::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Which one-sided catoni null to test, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatoniSide {
    /// `E[Y | X] <= mu(X)`.
    MeanAtMost,
    /// `E[Y | X] >= mu(X)`.
    MeanAtLeast,
    /// Two-sided: the average of the two one-sided processes.
    MeanEquals,
}

/// Full specification of one stepwise factor family.
#[derive(Debug, Clone)]
pub enum StepwiseFactorSpec {
    /// Sign responses; null mean `2 * null_theta - 1`. The factor is
    /// `1 + (y - (2 null_theta - 1)) / 2`, which reduces to [`betting_factor`]
    /// at `null_theta = 1/2`.
    Betting { null_theta: f64 },
    Gaussian { variance: f64, rate: RateSchedule },
    Sprt { null: ConditionalLaw, alt: ConditionalLaw },
    UniversalNb { dispersion: f64 },
    Catoni { mean: TargetFn, second_moment: TargetFn, rate: RateSchedule, side: CatoniSide },
}

impl StepwiseFactorSpec {
    #[must_use]
    pub fn family(&self) -> FamilyTag {
        match self {
            StepwiseFactorSpec::Betting { .. } => FamilyTag::Betting,
            StepwiseFactorSpec::Gaussian { .. } => FamilyTag::Gaussian,
            StepwiseFactorSpec::Sprt { .. } => FamilyTag::Sprt,
            StepwiseFactorSpec::UniversalNb { .. } => FamilyTag::UniversalNb,
            StepwiseFactorSpec::Catoni { .. } => FamilyTag::Catoni,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StepwiseFactorSpec::Betting { null_theta } => {
                if !(*null_theta >= 0.0 && *null_theta <= 1.0) {
                    return Err(Error::Parameter(format!(
                        "betting null_theta must lie in [0, 1], got {null_theta}"
                    )));
                }
            }
            StepwiseFactorSpec::Gaussian { variance, .. } => {
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(Error::Parameter(format!(
                        "gaussian variance must be positive, got {variance}"
                    )));
                }
            }
            StepwiseFactorSpec::Sprt { null, alt } => {
                null.validate()?;
                alt.validate()?;
            }
            StepwiseFactorSpec::UniversalNb { dispersion } => check_dispersion(*dispersion)?,
            StepwiseFactorSpec::Catoni { mean, second_moment, .. } => {
                if let TargetFn::Constant(mu) = mean {
                    if !mu.is_finite() {
                        return Err(Error::Parameter(format!(
                            "catoni mean target must be finite, got {mu}"
                        )));
                    }
                }
                if let TargetFn::Constant(v) = second_moment {
                    if !(*v >= 0.0 && v.is_finite()) {
                        return Err(Error::Parameter(format!(
                            "catoni second-moment bound must be nonnegative, got {v}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One grid member: a factor spec plus its running state (two states for the
/// two-sided catoni variant, whose process value is their average).
#[derive(Debug, Clone)]
pub struct MemberProcess {
    spec: StepwiseFactorSpec,
    state: EProcessState,
    mirror: Option<EProcessState>,
}

impl MemberProcess {
    pub fn new(spec: StepwiseFactorSpec) -> Result<Self> {
        spec.validate()?;
        let state = match &spec {
            StepwiseFactorSpec::UniversalNb { dispersion } => {
                EProcessState::new_universal_nb(*dispersion)?
            }
            _ => EProcessState::new(),
        };
        let mirror = matches!(
            spec,
            StepwiseFactorSpec::Catoni { side: CatoniSide::MeanEquals, .. }
        )
        .then(EProcessState::new);
        Ok(Self { spec, state, mirror })
    }

    #[must_use]
    pub fn spec(&self) -> &StepwiseFactorSpec {
        &self.spec
    }

    #[must_use]
    pub fn state(&self) -> &EProcessState {
        &self.state
    }

    /// Second one-sided state, present only for two-sided catoni members.
    #[must_use]
    pub fn mirror_state(&self) -> Option<&EProcessState> {
        self.mirror.as_ref()
    }

    #[must_use]
    pub fn n(&self) -> u64 {
        self.state.n()
    }

    /// Current log process value (the average of the two one-sided values
    /// for two-sided catoni members).
    #[must_use]
    pub fn log_value(&self) -> f64 {
        match &self.mirror {
            None => self.state.log_value(),
            Some(m) => log_mean_two(self.state.log_value(), m.log_value()),
        }
    }

    /// Advance the member by one observation `(x, y)`.
    pub fn step(&mut self, x: &Covariate, y: f64) -> Result<f64> {
        let n_next = self.state.n() + 1;
        match &self.spec {
            StepwiseFactorSpec::Betting { null_theta } => {
                if y != 1.0 && y != -1.0 {
                    return Err(Error::Input(format!(
                        "betting response must be -1 or +1, got {y}"
                    )));
                }
                let null_mean = 2.0 * null_theta - 1.0;
                self.state.apply_factor(1.0 + (y - null_mean) / 2.0)?;
            }
            StepwiseFactorSpec::Gaussian { variance, rate } => {
                let eta = rate.eval(n_next)?;
                self.state.apply_factor(gaussian_factor(eta, *variance, y)?)?;
            }
            StepwiseFactorSpec::Sprt { null, alt } => {
                let factor = sprt_factor(|x, y| null.density(x, y), |x, y| alt.density(x, y), x, y)?;
                self.state.apply_factor(factor)?;
            }
            StepwiseFactorSpec::UniversalNb { .. } => {
                let group = x.group().ok_or_else(|| {
                    Error::Input("universal_nb needs a binary group covariate".into())
                })?;
                self.state.observe_nb(group, as_count(y)?)?;
            }
            StepwiseFactorSpec::Catoni { mean, second_moment, rate, side } => {
                let lambda = rate.eval(n_next)?;
                let mu = mean.eval(x);
                let v = second_moment.eval(x);
                match side {
                    CatoniSide::MeanAtMost => {
                        self.state.apply_factor(catoni_factor(lambda, mu, v, y)?)?;
                    }
                    CatoniSide::MeanAtLeast => {
                        self.state.apply_factor(catoni_mirror_factor(lambda, mu, v, y)?)?;
                    }
                    CatoniSide::MeanEquals => {
                        self.state.apply_factor(catoni_factor(lambda, mu, v, y)?)?;
                        let mirror = self.mirror.as_mut().expect("two-sided member has a mirror");
                        mirror.apply_factor(catoni_mirror_factor(lambda, mu, v, y)?)?;
                    }
                }
            }
        }
        Ok(self.log_value())
    }
}

fn as_count(y: f64) -> Result<u64> {
    if !y.is_finite() || y < 0.0 || y.fract() != 0.0 || y > 2f64.powi(53) {
        return Err(Error::Input(format!("count response must be a nonnegative integer, got {y}")));
    }
    Ok(y as u64)
}

// log((e^a + e^b) / 2) without overflow; -inf absorbs correctly.
fn log_mean_two(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    let lo = a.min(b);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if hi == f64::INFINITY {
        return f64::INFINITY;
    }
    hi + (lo - hi).exp().ln_1p() - std::f64::consts::LN_2
}
