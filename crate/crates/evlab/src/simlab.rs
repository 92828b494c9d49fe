//! Simulation lab: scenario generators, exact counterexample enumeration,
//! asynchrony reindexing, and Monte Carlo FDR estimation.
//!
//! Cross-hypothesis dependence is injected through a Gaussian copula: one
//! latent equicorrelated (or fully specified) normal vector per tick, pushed
//! through each hypothesis's marginal. `rho = 1` (comonotone) and exactly
//! singular covariances are supported via the PSD-tolerant factorization in
//! `linalg`. All randomness is ChaCha12 with one stream per Monte Carlo
//! trial, so trial `t` is reproducible in isolation and the generator name
//! is recorded in every summary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ebh::{fdp, NullIndicator};
use crate::linalg::{lower_mul, psd_cholesky};
use crate::session::{ProcessConfig, Session, StopContext, StoppingRule};
use crate::stream::{Covariate, Observation};
use crate::{Error, Result};

/// Name recorded in summaries for reproducibility audits.
pub const GENERATOR_NAME: &str = "chacha12/stream-per-trial";

/// Scenario family plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioKind {
    /// Sign streams `Y_g in {-1, +1}` with `P(Y_g = +1) = theta_g`, coupled
    /// by an equicorrelated Gaussian copula with off-diagonal `rho`.
    CorrelatedCoins { theta: Vec<f64>, rho: f64 },
    /// Jointly Gaussian ticks with the given mean and covariance.
    Mvn { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// NB GLM counts: shared binary group covariate `x ~ Bernoulli(p)`,
    /// gene `g` has mean `exp(beta_g x + gamma_g)` and dispersion `a_g`,
    /// coupled by an equicorrelated Gaussian copula.
    NbGlm {
        beta: Vec<f64>,
        gamma: Vec<f64>,
        dispersion: Vec<f64>,
        prob_group_one: f64,
        rho: f64,
    },
    /// Two sign streams where stream 2 runs `lag` ticks ahead of stream 1:
    /// tick `i` reveals `(B_i, B_{i+lag})` for one iid base sequence `B` with
    /// `P(B = +1) = theta`. With `lag >= 1`, stream 2 foretells stream 1.
    Foreteller { lag: u64, theta: f64 },
}

/// A fully specified scenario: kind, horizon, and base seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub horizon: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Number of hypotheses the scenario drives.
    #[must_use]
    pub fn g(&self) -> usize {
        match &self.kind {
            ScenarioKind::CorrelatedCoins { theta, .. } => theta.len(),
            ScenarioKind::Mvn { mean, .. } => mean.len(),
            ScenarioKind::NbGlm { beta, .. } => beta.len(),
            ScenarioKind::Foreteller { .. } => 2,
        }
    }

    /// Ground truth: which hypotheses are true nulls under this scenario's
    /// parameters (coins: `theta = 1/2`; MVN: zero mean; NB GLM: zero group
    /// effect; foreteller: fair base coin).
    pub fn truth(&self) -> Result<NullIndicator> {
        let is_null = match &self.kind {
            ScenarioKind::CorrelatedCoins { theta, .. } => {
                theta.iter().map(|&t| t == 0.5).collect()
            }
            ScenarioKind::Mvn { mean, .. } => mean.iter().map(|&m| m == 0.0).collect(),
            ScenarioKind::NbGlm { beta, .. } => beta.iter().map(|&b| b == 0.0).collect(),
            ScenarioKind::Foreteller { theta, .. } => vec![*theta == 0.5; 2],
        };
        NullIndicator::new(is_null)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ScenarioKind::CorrelatedCoins { theta, rho } => {
                if theta.is_empty() {
                    return Err(Error::Parameter("coins scenario needs at least one stream".into()));
                }
                for &t in theta {
                    check_probability(t, "theta")?;
                }
                check_correlation(*rho)?;
                psd_cholesky(&equicorrelation(theta.len(), *rho))?;
            }
            ScenarioKind::Mvn { mean, cov } => {
                if mean.is_empty() {
                    return Err(Error::Parameter("mvn scenario needs at least one stream".into()));
                }
                if mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::Parameter("mvn mean must be finite".into()));
                }
                if cov.len() != mean.len() {
                    return Err(Error::Parameter(format!(
                        "covariance is {}x? but mean has {} entries",
                        cov.len(),
                        mean.len()
                    )));
                }
                psd_cholesky(cov)?;
            }
            ScenarioKind::NbGlm { beta, gamma, dispersion, prob_group_one, rho } => {
                let g = beta.len();
                if g == 0 {
                    return Err(Error::Parameter("nb_glm scenario needs at least one gene".into()));
                }
                if gamma.len() != g || dispersion.len() != g {
                    return Err(Error::Parameter(format!(
                        "beta, gamma, dispersion must agree in length: {g}, {}, {}",
                        gamma.len(),
                        dispersion.len()
                    )));
                }
                if beta.iter().chain(gamma).any(|v| !v.is_finite()) {
                    return Err(Error::Parameter("beta and gamma must be finite".into()));
                }
                for &a in dispersion {
                    if !(a > 0.0 && a.is_finite()) {
                        return Err(Error::Parameter(format!(
                            "dispersion must be positive, got {a}"
                        )));
                    }
                }
                check_probability(*prob_group_one, "prob_group_one")?;
                check_correlation(*rho)?;
                psd_cholesky(&equicorrelation(g, *rho))?;
            }
            ScenarioKind::Foreteller { theta, .. } => {
                check_probability(*theta, "theta")?;
            }
        }
        Ok(())
    }

    /// Generate the scenario's stream with the base seed (trial 0).
    pub fn generate(&self) -> Result<Vec<Observation>> {
        self.generate_for_trial(0)
    }

    /// Generate the stream for Monte Carlo trial `trial` (an independent
    /// ChaCha stream under the same base seed).
    pub fn generate_for_trial(&self, trial: u64) -> Result<Vec<Observation>> {
        self.validate()?;
        let mut rng = trial_rng(self.seed, trial);
        let n = self.horizon;
        match &self.kind {
            ScenarioKind::CorrelatedCoins { theta, rho } => {
                let chol = psd_cholesky(&equicorrelation(theta.len(), *rho))?;
                let thresholds: Vec<f64> = theta.iter().map(|&t| normal_quantile(t)).collect();
                Ok((0..n)
                    .map(|_| {
                        let z = correlated_normals(&chol, &mut rng);
                        let y = z
                            .iter()
                            .zip(&thresholds)
                            .map(|(&z, &c)| if z <= c { 1.0 } else { -1.0 })
                            .collect();
                        Observation::plain(y)
                    })
                    .collect())
            }
            ScenarioKind::Mvn { mean, cov } => {
                let chol = psd_cholesky(cov)?;
                Ok((0..n)
                    .map(|_| {
                        let z = correlated_normals(&chol, &mut rng);
                        let y = z.iter().zip(mean).map(|(&z, &m)| m + z).collect();
                        Observation::plain(y)
                    })
                    .collect())
            }
            ScenarioKind::NbGlm { beta, gamma, dispersion, prob_group_one, rho } => {
                let chol = psd_cholesky(&equicorrelation(beta.len(), *rho))?;
                let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
                Ok((0..n)
                    .map(|_| {
                        let x: u8 = u8::from(rng.random::<f64>() < *prob_group_one);
                        let z = correlated_normals(&chol, &mut rng);
                        let y = z
                            .iter()
                            .enumerate()
                            .map(|(g, &z)| {
                                let u = std_normal.cdf(z).min(1.0 - 1e-12);
                                let mean = (beta[g] * f64::from(x) + gamma[g]).exp();
                                nb_quantile(u, mean, dispersion[g]) as f64
                            })
                            .collect();
                        Observation::new(Covariate::Binary(x), y)
                    })
                    .collect())
            }
            ScenarioKind::Foreteller { lag, theta } => {
                let total = n as u64 + lag;
                let base: Vec<f64> = (0..total)
                    .map(|_| if rng.random::<f64>() < *theta { 1.0 } else { -1.0 })
                    .collect();
                Ok((0..n)
                    .map(|i| Observation::plain(vec![base[i], base[i + *lag as usize]]))
                    .collect())
            }
        }
    }
}

fn check_probability(p: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn check_correlation(rho: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Parameter(format!("rho must lie in [-1, 1], got {rho}")));
    }
    Ok(())
}

fn equicorrelation(g: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..g)
        .map(|i| (0..g).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect()
}

fn correlated_normals(chol: &[Vec<f64>], rng: &mut ChaCha12Rng) -> Vec<f64> {
    let eps: Vec<f64> = (0..chol.len()).map(|_| rng.sample(StandardNormal)).collect();
    lower_mul(chol, &eps)
}

fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
    }
}

/// RNG for one Monte Carlo trial: same key, independent ChaCha stream.
pub(crate) fn trial_rng(seed: u64, trial: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// NB2 quantile via pmf recursion: the smallest `y` with `CDF(y) >= u`.
pub(crate) fn nb_quantile(u: f64, mean: f64, dispersion: f64) -> u64 {
    let r = 1.0 / dispersion;
    let p_stay = mean / (r + mean);
    let mut pmf = (-r * (mean / r).ln_1p()).exp();
    let mut cum = pmf;
    let mut y = 0u64;
    while cum < u {
        y += 1;
        pmf *= (y as f64 - 1.0 + r) / y as f64 * p_stay;
        cum += pmf;
        if pmf == 0.0 {
            // Numerically exhausted mass; u was effectively 1.
            break;
        }
    }
    y
}

// ---------------------------------------------------------------------------
// The foreteller counterexample, exactly
// ---------------------------------------------------------------------------

/// The stopping rule of the two-stream counterexample: stop at `n = 1` when
/// stream 2's first e-value reveals a tail (its value falls below `cutoff`),
/// otherwise stop at `n = 2`.
///
/// The rule reads only e-values, so the cutoff separating "first coin was
/// tails" depends on the process: raw betting values at `n = 1` are
/// `{0.5, 1.5}` (use `cutoff = 1`), sqrt-lifted values are
/// `{0, sqrt(1.5) - 1}` (use e.g. `cutoff = 0.1`). Either way it is a
/// stopping time of the joint filtration but not of stream 1's own.
#[must_use]
pub fn counterexample_rule(cutoff: f64) -> StoppingRule {
    StoppingRule::Custom(std::sync::Arc::new(move |ctx: &StopContext| {
        Ok(ctx.n >= 2 || ctx.evalues.value(2) < cutoff)
    }))
}

/// One of the four equally likely outcomes of the counterexample.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CounterexampleOutcome {
    /// Stream 1's first two responses; stream 2's first response equals `y[1]`.
    pub y: [f64; 2],
    /// Stream 1's e-process after one and two ticks.
    pub m1: [f64; 2],
    pub tau: u64,
    /// Stream 1's e-process at the stopping time.
    pub m1_stopped: f64,
    pub probability: f64,
}

/// The exact distribution table of the counterexample and the resulting
/// expectation `E[M^1_tau]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CounterexampleTable {
    pub outcomes: Vec<CounterexampleOutcome>,
    pub expected_stopped_value: f64,
}

/// Enumerate the fair-coin foreteller counterexample with `lag = 1` exactly.
///
/// Both streams carry the null (fair coins), the rule is
/// [`counterexample_rule`] with cutoff 1, and yet `E[M^1_tau] = 1.25 > 1`:
/// the stopped process of a *true null* is no longer an e-value because the
/// rule used stream 2's look at stream 1's future. All arithmetic is dyadic,
/// so the table is exact in `f64`.
pub fn enumerate_counterexample() -> Result<CounterexampleTable> {
    let rule = counterexample_rule(1.0);
    let mut outcomes = Vec::with_capacity(4);
    let mut expectation = 0.0;
    for &y1 in &[1.0, -1.0] {
        for &y2 in &[1.0, -1.0] {
            // Tick 1 reveals (Y^1_1, Y^2_1) = (y1, y2); tick 2 reveals
            // (Y^1_2, Y^2_2) = (y2, B_3). B_3 influences nothing here.
            let stream = vec![
                Observation::plain(vec![y1, y2]),
                Observation::plain(vec![y2, 1.0]),
            ];
            let panel = || {
                vec![
                    ProcessConfig::single(
                        crate::eprocess::StepwiseFactorSpec::Betting { null_theta: 0.5 },
                    );
                    2
                ]
            };

            // Full two-tick path for the M^1 column.
            let mut unstopped = Session::new(panel(), 0.5)?;
            for obs in &stream {
                unstopped.step(obs, None)?;
            }
            let m1 = [
                unstopped.history()[0].evalues.value(1),
                unstopped.history()[1].evalues.value(1),
            ];

            // Stopped run for tau and M^1_tau.
            let mut stopped = Session::new(panel(), 0.5)?;
            let result = stopped.run(&stream, &rule)?;

            let outcome = CounterexampleOutcome {
                y: [y1, y2],
                m1,
                tau: result.tau,
                m1_stopped: result.final_evalues.value(1),
                probability: 0.25,
            };
            expectation += outcome.probability * outcome.m1_stopped;
            outcomes.push(outcome);
        }
    }
    Ok(CounterexampleTable { outcomes, expected_stopped_value: expectation })
}

// ---------------------------------------------------------------------------
// Asynchrony reindexing
// ---------------------------------------------------------------------------

/// Reindex asynchronous per-stream values onto a shared global clock.
///
/// `schedule[s][k]` is the number of local steps stream `s` completes during
/// global tick `k` (at least 1: every stream advances). The synchronized
/// value at `(s, k)` is stream `s`'s local value after its first
/// `schedule[s][0] + ... + schedule[s][k]` steps. Block sums must not exceed
/// the available local values, and all streams must cover the same number of
/// global ticks.
pub fn reindex(schedule: &[Vec<usize>], local_values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if schedule.is_empty() || schedule.len() != local_values.len() {
        return Err(Error::Input(format!(
            "schedule covers {} streams but values cover {}",
            schedule.len(),
            local_values.len()
        )));
    }
    let ticks = schedule[0].len();
    if schedule.iter().any(|s| s.len() != ticks) {
        return Err(Error::Input("streams must agree on the number of global ticks".into()));
    }
    let mut out = Vec::with_capacity(schedule.len());
    for (s, (blocks, values)) in schedule.iter().zip(local_values).enumerate() {
        let mut cursor = 0usize;
        let mut row = Vec::with_capacity(ticks);
        for (k, &b) in blocks.iter().enumerate() {
            if b == 0 {
                return Err(Error::Input(format!(
                    "stream {s}: block {k} is empty; every stream advances each tick"
                )));
            }
            cursor = cursor.checked_add(b).ok_or_else(|| {
                Error::Input(format!("stream {s}: block sizes overflow"))
            })?;
            if cursor > values.len() {
                return Err(Error::Input(format!(
                    "stream {s}: blocks need {cursor} local values but only {} exist",
                    values.len()
                )));
            }
            row.push(values[cursor - 1]);
        }
        out.push(row);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Monte Carlo FDR
// ---------------------------------------------------------------------------

/// Per-trial record of a Monte Carlo run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub tau: u64,
    pub stopped_by_rule: bool,
    pub fdp: f64,
    pub rejected: Vec<usize>,
    pub final_evalues: Vec<f64>,
}

/// Aggregate statistics of a Monte Carlo run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub alpha: f64,
    /// Mean FDP across trials: the FDR estimate.
    pub mean_fdr: f64,
    pub fdr_std_error: f64,
    pub mean_tau: f64,
    /// Fraction of trials stopped by the rule (the rest exhausted the
    /// stream).
    pub rule_stop_fraction: f64,
    /// Per-hypothesis fraction of trials in which it was rejected at tau.
    pub rejection_frequency: Vec<f64>,
    /// Mean stopped e-value per hypothesis, true nulls only (None for
    /// alternatives).
    pub null_evalue_mean: Vec<Option<f64>>,
    pub null_evalue_std_error: Vec<Option<f64>>,
    /// Ground-truth null indicator used for the FDP.
    pub truth: Vec<bool>,
    /// RNG identification for reproducibility audits.
    pub generator: String,
}

/// A full Monte Carlo outcome: the summary plus every trial's record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MonteCarloRun {
    pub summary: MonteCarloSummary,
    pub trials: Vec<TrialRecord>,
}

/// Estimate the FDR of stopped e-BH under a scenario, process panel, and
/// stopping rule.
///
/// Each trial generates an independent stream (ChaCha stream `t`), drives a
/// fresh session until the rule fires or the stream is exhausted, and
/// records the FDP of the final rejection set against the scenario's ground
/// truth. Trials run in parallel but aggregate in trial order, so results
/// are bit-for-bit reproducible for a fixed seed. Requires `trials >= 100`.
pub fn mc_fdr(
    scenario: &ScenarioSpec,
    processes: &[ProcessConfig],
    rule: &StoppingRule,
    alpha: f64,
    trials: usize,
) -> Result<MonteCarloRun> {
    if trials < 100 {
        return Err(Error::Parameter(format!(
            "Monte Carlo FDR needs at least 100 trials, got {trials}"
        )));
    }
    scenario.validate()?;
    if scenario.horizon == 0 {
        return Err(Error::Parameter("Monte Carlo FDR needs a positive horizon".into()));
    }
    if processes.len() != scenario.g() {
        return Err(Error::Parameter(format!(
            "{} processes configured for {} hypotheses",
            processes.len(),
            scenario.g()
        )));
    }
    let truth = scenario.truth()?;
    // Certify adjusters once; per-trial sessions skip re-certification.
    Session::new(processes.to_vec(), alpha)?;

    let records: Vec<TrialRecord> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<TrialRecord> {
            let stream = scenario.generate_for_trial(trial)?;
            let mut session = Session::precertified(processes.to_vec(), alpha)?;
            let result = session.run(&stream, rule)?;
            Ok(TrialRecord {
                trial,
                tau: result.tau,
                stopped_by_rule: result.stopped_by_rule,
                fdp: fdp(&result.final_rejections, &truth)?,
                rejected: result.final_rejections.to_vec(),
                final_evalues: result.final_evalues.values().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let g = scenario.g();
    let nf = trials as f64;
    let mean_fdr = records.iter().map(|r| r.fdp).sum::<f64>() / nf;
    let fdr_var =
        records.iter().map(|r| (r.fdp - mean_fdr).powi(2)).sum::<f64>() / (nf - 1.0);
    let mean_tau = records.iter().map(|r| r.tau as f64).sum::<f64>() / nf;
    let rule_stop_fraction =
        records.iter().filter(|r| r.stopped_by_rule).count() as f64 / nf;
    let mut rejection_frequency = vec![0.0; g];
    for r in &records {
        for &idx in &r.rejected {
            rejection_frequency[idx - 1] += 1.0 / nf;
        }
    }
    let mut null_evalue_mean = vec![None; g];
    let mut null_evalue_std_error = vec![None; g];
    for gi in 1..=g {
        if !truth.is_null(gi) {
            continue;
        }
        let mean = records.iter().map(|r| r.final_evalues[gi - 1]).sum::<f64>() / nf;
        let var = records
            .iter()
            .map(|r| (r.final_evalues[gi - 1] - mean).powi(2))
            .sum::<f64>()
            / (nf - 1.0);
        null_evalue_mean[gi - 1] = Some(mean);
        null_evalue_std_error[gi - 1] = Some((var / nf).sqrt());
    }

    let summary = MonteCarloSummary {
        trials,
        alpha,
        mean_fdr,
        fdr_std_error: (fdr_var / nf).sqrt(),
        mean_tau,
        rule_stop_fraction,
        rejection_frequency,
        null_evalue_mean,
        null_evalue_std_error,
        truth: (1..=g).map(|gi| truth.is_null(gi)).collect(),
        generator: GENERATOR_NAME.to_string(),
    };
    Ok(MonteCarloRun { summary, trials: records })
}
