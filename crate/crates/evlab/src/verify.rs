//! Built-in verification suites: fast, deterministic re-checks of the
//! library's numerical claims, runnable from the CLI (`verify <suite>`).
//!
//! Each suite prints one verdict per check. Randomized checks draw from a
//! fixed internal seed, so a suite either always passes or always fails for
//! a given build; there is no flakiness to tune.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, Normal};

use crate::adjuster::{adjuster_validity, AdjusterSpec, AdjusterTable};
use crate::ebh::{bh, compound_from_rejection, ebh, EValueVector, RejectionSet};
use crate::eprocess::{catoni_factor, catoni_mirror_factor, nb_logpmf};
use crate::quad::adaptive_simpson;
use crate::simlab::{enumerate_counterexample, trial_rng};
use crate::{Error, Result};

const VERIFY_SEED: u64 = 0x5eed_e11a;

/// A verification suite name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Ebh,
    Adjusters,
    Stepwise,
    Counterexample,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ebh" => Ok(Suite::Ebh),
            "adjusters" => Ok(Suite::Adjusters),
            "stepwise" => Ok(Suite::Stepwise),
            "counterexample" => Ok(Suite::Counterexample),
            "all" => Ok(Suite::All),
            other => Err(Error::Parse(format!(
                "unknown suite `{other}` (expected ebh, adjusters, stepwise, counterexample, or all)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Suite::Ebh => "ebh",
            Suite::Adjusters => "adjusters",
            Suite::Stepwise => "stepwise",
            Suite::Counterexample => "counterexample",
            Suite::All => "all",
        };
        f.write_str(name)
    }
}

/// One named check with its verdict.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.to_string(), pass, detail }
    }
}

/// A suite's verdicts.
#[derive(Debug, Clone, serde::Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    #[must_use]
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// One line per check plus a trailing summary line.
    #[must_use]
    pub fn render(&self) -> String {
        let mut out = String::new();
        for check in &self.checks {
            let verdict = if check.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!("{verdict}  {}: {}\n", check.name, check.detail));
        }
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        out.push_str(&format!(
            "suite {}: {}/{} checks passed\n",
            self.suite,
            self.checks.len() - failed,
            self.checks.len()
        ));
        out
    }
}

/// Run one suite (or all of them) and collect verdicts.
pub fn run_suite(suite: Suite) -> Result<VerifyReport> {
    let checks = match suite {
        Suite::Ebh => ebh_checks()?,
        Suite::Adjusters => adjuster_checks()?,
        Suite::Stepwise => stepwise_checks()?,
        Suite::Counterexample => counterexample_checks()?,
        Suite::All => {
            let mut all = ebh_checks()?;
            all.extend(adjuster_checks()?);
            all.extend(stepwise_checks()?);
            all.extend(counterexample_checks()?);
            all
        }
    };
    Ok(VerifyReport { suite: suite.to_string(), checks })
}

fn random_evalues(rng: &mut rand_chacha::ChaCha12Rng, g: usize) -> Vec<f64> {
    (0..g)
        .map(|_| {
            let u = rng.random::<f64>();
            if u < 0.10 {
                0.0
            } else if u < 0.15 {
                f64::INFINITY
            } else {
                let z: f64 = rng.sample(StandardNormal);
                (2.0 * z).exp()
            }
        })
        .collect()
}

fn ebh_checks() -> Result<Vec<Check>> {
    let alphas = [0.05, 0.1, 0.2];
    let mut rng = trial_rng(VERIFY_SEED, 1);

    // e-BH on E equals BH on 1/E, with IEEE reciprocal conventions.
    let mut duality_ok = 0usize;
    let trials = 1000;
    for t in 0..trials {
        let g = 1 + t % 12;
        let alpha = alphas[t % 3];
        let values = random_evalues(&mut rng, g);
        let e = EValueVector::new(values.clone())?;
        let p: Vec<f64> = values.iter().map(|&v| 1.0 / v).collect();
        if ebh(&e, alpha)? == bh(&p, alpha)? {
            duality_ok += 1;
        }
    }

    // Raising one e-value never shrinks the rejection set.
    let mut monotone_ok = 0usize;
    for t in 0..trials {
        let g = 1 + t % 12;
        let alpha = alphas[t % 3];
        let mut values = random_evalues(&mut rng, g);
        let before = ebh(&EValueVector::new(values.clone())?, alpha)?;
        let idx = rng.random_range(0..g);
        values[idx] *= 1.0 + rng.random::<f64>() * 5.0;
        if values[idx].is_nan() {
            values[idx] = f64::INFINITY;
        }
        let after = ebh(&EValueVector::new(values)?, alpha)?;
        if before.iter().all(|m| after.contains(m)) {
            monotone_ok += 1;
        }
    }

    // Compound e-values reconstructed from a rejection set reproduce it.
    let mut roundtrip_ok = 0usize;
    for t in 0..trials {
        let g = 1 + t % 10;
        let alpha = alphas[t % 3];
        let members: BTreeSet<usize> =
            (1..=g).filter(|_| rng.random::<f64>() < 0.4).collect();
        let set = RejectionSet::new(g, members)?;
        let compound = compound_from_rejection(&set, alpha)?;
        if ebh(&compound, alpha)? == set {
            roundtrip_ok += 1;
        }
    }

    Ok(vec![
        Check::new(
            "ebh duality with bh on reciprocals",
            duality_ok == trials,
            format!("{duality_ok}/{trials} random vectors agree"),
        ),
        Check::new(
            "ebh monotonicity under single-entry increase",
            monotone_ok == trials,
            format!("{monotone_ok}/{trials} perturbations kept the set"),
        ),
        Check::new(
            "compound round-trip ebh(compound(R)) == R",
            roundtrip_ok == trials,
            format!("{roundtrip_ok}/{trials} random sets reproduced"),
        ),
    ])
}

fn adjuster_checks() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut exact = |name: &str, spec: &AdjusterSpec| -> Result<()> {
        let report = adjuster_validity(spec, 1e-6)?;
        let err = (report.integral - 1.0).abs();
        checks.push(Check::new(
            name,
            !report.divergent && err <= 1e-6,
            format!("integral {} (|error| {err:.3e})", report.integral),
        ));
        Ok(())
    };
    exact("sqrt_minus_one integral", &AdjusterSpec::SqrtMinusOne)?;
    for k in [0.25, 0.5, 0.75] {
        exact(&format!("power k={k} integral"), &AdjusterSpec::Power { k })?;
    }

    // The identity is not an adjuster: its integral diverges. A truncated
    // identity table keeps the unit slope beyond its last knot, so the
    // certifier must flag it.
    let identity = AdjusterTable::new(vec![(1.0, 1.0), (2.0, 2.0)])?;
    let report = adjuster_validity(&AdjusterSpec::Custom(identity), 1e-6)?;
    checks.push(Check::new(
        "identity table flagged divergent",
        report.divergent && !report.pass,
        format!("divergent = {}, integral cap {}", report.divergent, report.integral),
    ));

    // A constant table A = 2 converges to integral 2 and must fail the
    // budget without being called divergent.
    let constant = AdjusterTable::new(vec![(1.0, 2.0), (2.0, 2.0)])?;
    let report = adjuster_validity(&AdjusterSpec::Custom(constant), 1e-6)?;
    checks.push(Check::new(
        "constant table A=2 fails the unit budget",
        !report.divergent && !report.pass && (report.integral - 2.0).abs() <= 1e-6,
        format!("integral {}", report.integral),
    ));
    Ok(checks)
}

/// Expected factor after one step of a fresh member, under a discrete null
/// law given as `(y, probability)` pairs.
fn discrete_mean_factor(
    spec: &crate::eprocess::StepwiseFactorSpec,
    law: &[(f64, f64)],
) -> Result<f64> {
    use crate::eprocess::MemberProcess;
    use crate::stream::Covariate;
    let mut total = 0.0;
    for &(y, p) in law {
        let mut member = MemberProcess::new(spec.clone())?;
        member.step(&Covariate::Absent, y)?;
        total += member.log_value().exp() * p;
    }
    Ok(total)
}

fn stepwise_checks() -> Result<Vec<Check>> {
    use crate::eprocess::{ConditionalLaw, RateSchedule, StepwiseFactorSpec};
    let mut checks = Vec::new();

    // Betting: sign responses, generalized null mean. The sum is exact.
    let mut worst: f64 = 0.0;
    for theta in [0.3, 0.5, 0.7] {
        let spec = StepwiseFactorSpec::Betting { null_theta: theta };
        let mean =
            discrete_mean_factor(&spec, &[(1.0, theta), (-1.0, 1.0 - theta)])?;
        worst = worst.max((mean - 1.0).abs());
    }
    checks.push(Check::new(
        "betting factor integrates to 1",
        worst <= 1e-12,
        format!("worst |error| {worst:.3e} over null theta in {{0.3, 0.5, 0.7}}"),
    ));

    // Gaussian: integral against the exact-variance normal null.
    let mut worst: f64 = 0.0;
    for (variance, rate) in [(1.0, 0.25), (1.0, 1.0), (4.0, 0.5)] {
        let spec = StepwiseFactorSpec::Gaussian {
            variance,
            rate: RateSchedule::Constant(rate),
        };
        let null = Normal::new(0.0, variance.sqrt()).expect("normal null");
        let half_width = 12.0 * variance.sqrt();
        let mean = adaptive_simpson(
            |y| {
                let f = discrete_mean_factor(&spec, &[(y, 1.0)]).expect("factor");
                f * null.pdf(y)
            },
            -half_width,
            half_width,
            1e-10,
        );
        worst = worst.max((mean - 1.0).abs());
    }
    checks.push(Check::new(
        "gaussian factor integrates to 1",
        worst <= 1e-6,
        format!("worst |error| {worst:.3e} over (variance, rate) grid"),
    ));

    // SPRT on sign responses: the likelihood ratio telescopes exactly.
    let mut worst: f64 = 0.0;
    for (p0, p1) in [(0.5, 0.7), (0.3, 0.6)] {
        let spec = StepwiseFactorSpec::Sprt {
            null: ConditionalLaw::BernoulliSign { prob_plus_one: p0 },
            alt: ConditionalLaw::BernoulliSign { prob_plus_one: p1 },
        };
        let mean = discrete_mean_factor(&spec, &[(1.0, p0), (-1.0, 1.0 - p0)])?;
        worst = worst.max((mean - 1.0).abs());
    }
    checks.push(Check::new(
        "sprt factor integrates to 1",
        worst <= 1e-12,
        format!("worst |error| {worst:.3e} over two Bernoulli instances"),
    ));

    // Universal-inference NB, single step with a fixed plug-in: the factor
    // against the true null is plug-in pmf over null pmf, so its null mean
    // is the plug-in's total mass.
    let mut worst: f64 = 0.0;
    for (m_plug, m_null, a) in [(1.0, 2.5, 0.5), (2.5, 1.0, 0.5), (0.5, 0.5, 2.0)] {
        let mut mean = 0.0;
        let mut y = 0u64;
        loop {
            let null_mass = nb_logpmf(y, m_null, a)?.exp();
            let factor = (nb_logpmf(y, m_plug, a)? - nb_logpmf(y, m_null, a)?).exp();
            mean += factor * null_mass;
            y += 1;
            if y > 50 && null_mass < 1e-18 && (y as f64) > 20.0 * (m_plug + m_null) {
                break;
            }
            if y > 2_000_000 {
                break;
            }
        }
        worst = worst.max((mean - 1.0).abs());
    }
    checks.push(Check::new(
        "universal_nb single-step factor integrates to 1",
        worst <= 1e-6,
        format!("worst |error| {worst:.3e} over three (plug-in, null, dispersion) triples"),
    ));

    // Catoni: sub-unit mean under every null law matching the declared mean
    // and second-moment bound, for both one-sided directions.
    let mut worst: f64 = f64::NEG_INFINITY;
    for lambda in [0.1, 0.5, 1.0] {
        for law in 0..3 {
            let (upper, lower) = catoni_null_means(lambda, law);
            worst = worst.max(upper).max(lower);
        }
    }
    checks.push(Check::new(
        "catoni factor mean stays at or below 1",
        worst <= 1.0 + 1e-6,
        format!("max mean {worst:.12} over lambda x {{two-point, uniform, normal}} nulls"),
    ));

    Ok(checks)
}

/// Null means of the Catoni factor and its mirrored variant under one of
/// three mean-zero laws: two-point on {-1, +1} (v = 1), uniform on [-1, 1]
/// (v = 1/3), standard normal (v = 1).
fn catoni_null_means(lambda: f64, law: usize) -> (f64, f64) {
    match law {
        0 => {
            let v = 1.0;
            let mean = |f: &dyn Fn(f64) -> f64| 0.5 * f(1.0) + 0.5 * f(-1.0);
            (
                mean(&|y| catoni_factor(lambda, 0.0, v, y).expect("factor")),
                mean(&|y| catoni_mirror_factor(lambda, 0.0, v, y).expect("factor")),
            )
        }
        1 => {
            let v = 1.0 / 3.0;
            let mean = |f: &dyn Fn(f64) -> f64| {
                adaptive_simpson(|y| 0.5 * f(y), -1.0, 1.0, 1e-11)
            };
            (
                mean(&|y| catoni_factor(lambda, 0.0, v, y).expect("factor")),
                mean(&|y| catoni_mirror_factor(lambda, 0.0, v, y).expect("factor")),
            )
        }
        _ => {
            let v = 1.0;
            let null = Normal::new(0.0, 1.0).expect("normal null");
            let mean = |f: &dyn Fn(f64) -> f64| {
                adaptive_simpson(|y| f(y) * null.pdf(y), -12.0, 12.0, 1e-11)
            };
            (
                mean(&|y| catoni_factor(lambda, 0.0, v, y).expect("factor")),
                mean(&|y| catoni_mirror_factor(lambda, 0.0, v, y).expect("factor")),
            )
        }
    }
}

fn counterexample_checks() -> Result<Vec<Check>> {
    let table = enumerate_counterexample()?;
    let expected_tau = [2u64, 1, 2, 1];
    let expected_stopped = [2.25, 1.5, 0.75, 0.5];
    let mut checks = Vec::new();
    for (i, outcome) in table.outcomes.iter().enumerate() {
        let label = format!("({:+}, {:+})", outcome.y[0] as i64, outcome.y[1] as i64);
        checks.push(Check::new(
            &format!("tau at {label}"),
            outcome.tau == expected_tau[i],
            format!("tau = {} (want {})", outcome.tau, expected_tau[i]),
        ));
        checks.push(Check::new(
            &format!("stopped value at {label}"),
            outcome.m1_stopped == expected_stopped[i],
            format!("M1_tau = {} (want {})", outcome.m1_stopped, expected_stopped[i]),
        ));
    }
    checks.push(Check::new(
        "expectation of the stopped process",
        table.expected_stopped_value == 1.25,
        format!("E[M1_tau] = {} (want 1.25 exactly)", table.expected_stopped_value),
    ));
    Ok(checks)
}
