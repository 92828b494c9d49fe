//! TOML experiment configuration.
//!
//! A config is a single key-value tree with one top-level `seed` feeding all
//! randomness; unknown keys are rejected everywhere (a typo must fail, not
//! silently run a different experiment). [`ExperimentConfig::from_toml`]
//! parses text without touching the filesystem; [`ExperimentConfig::build`]
//! resolves custom adjuster tables relative to the config's directory and
//! assembles the runtime objects.
//!
//! ```toml
//! seed = 7
//! alpha = 0.1
//! trials = 10000
//!
//! [scenario]
//! kind = "correlated_coins"
//! theta = [0.5, 0.5]
//! rho = 0.9
//! horizon = 50
//!
//! [[process]]
//! family = "betting"
//! copies = 2
//!
//! [rule]
//! kind = "rejection_count"
//! count = 1
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adjuster::{AdjusterSpec, AdjusterTable};
use crate::eprocess::{
    CatoniSide, ConditionalLaw, RateSchedule, StepwiseFactorSpec, TargetFn,
};
use crate::session::{ProcessConfig, StoppingRule};
use crate::simlab::{counterexample_rule, ScenarioKind, ScenarioSpec};
use crate::{Error, Result};

/// A parsed experiment file. Field validation beyond shape (arities, ranges,
/// table files) happens in [`ExperimentConfig::build`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of all randomness. Mandatory: a missing seed is an error, not an
    /// implicit default.
    pub seed: u64,
    pub alpha: f64,
    /// `0` = exact counterexample enumeration, `1` = single trajectory,
    /// `>= 100` = Monte Carlo; anything else is rejected.
    pub trials: u64,
    pub scenario: ScenarioConfig,
    #[serde(rename = "process")]
    pub processes: Vec<ProcessEntry>,
    pub rule: RuleConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    /// Artifact directory; defaults to `<config stem>.out` next to the
    /// working directory when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    CorrelatedCoins { theta: Vec<f64>, rho: f64, horizon: usize },
    Mvn { mean: Vec<f64>, cov: Vec<Vec<f64>>, horizon: usize },
    NbGlm {
        beta: Vec<f64>,
        gamma: Vec<f64>,
        dispersion: Vec<f64>,
        prob_group_one: f64,
        rho: f64,
        horizon: usize,
    },
    Foreteller { lag: u64, theta: f64, horizon: usize },
}

/// One hypothesis's process; `copies` expands it into that many consecutive
/// hypotheses so all-null panels stay terse.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessEntry {
    Betting {
        #[serde(default = "default_null_theta")]
        null_theta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        adjuster: Option<AdjusterConfig>,
        #[serde(default = "default_copies")]
        copies: usize,
    },
    Gaussian {
        variance: f64,
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        adjuster: Option<AdjusterConfig>,
        #[serde(default = "default_copies")]
        copies: usize,
    },
    Sprt {
        /// `P(Y = +1)` under the null and the alternative (sign responses).
        null_prob_plus_one: f64,
        alt_prob_plus_one: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        adjuster: Option<AdjusterConfig>,
        #[serde(default = "default_copies")]
        copies: usize,
    },
    UniversalNb {
        dispersion: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        adjuster: Option<AdjusterConfig>,
        #[serde(default = "default_copies")]
        copies: usize,
    },
    Catoni {
        mean: f64,
        second_moment: f64,
        rate: f64,
        side: CatoniSideConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        adjuster: Option<AdjusterConfig>,
        #[serde(default = "default_copies")]
        copies: usize,
    },
}

fn default_null_theta() -> f64 {
    0.5
}

fn default_copies() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatoniSideConfig {
    MeanAtMost,
    MeanAtLeast,
    MeanEquals,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdjusterConfig {
    SqrtMinusOne,
    Power { k: f64 },
    /// Two-column knot table loaded from `path`, resolved relative to the
    /// config file's directory.
    Custom { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleConfig {
    FixedHorizon { horizon: u64 },
    Threshold { hypothesis: usize, level: f64 },
    RejectionCount { count: usize },
    FirstOf { rules: Vec<RuleConfig> },
    /// The counterexample's rule: stop at `n = 1` iff hypothesis 2's e-value
    /// falls below `cutoff`, else at `n = 2`.
    CounterexampleTau {
        #[serde(default = "default_cutoff")]
        cutoff: f64,
    },
}

fn default_cutoff() -> f64 {
    1.0
}

/// Bounds the runner turns into report verdicts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    /// FDR bound; defaults to `alpha`. Passes when `mean_fdr <= bound + 3 SE`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fdr_bound: Option<f64>,
    /// Bound on each true null's mean stopped e-value (`mean <= bound + 3 SE`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_evalue_bound: Option<f64>,
    /// Declare that this config reproduces a violation: checks that would
    /// fail are reported as VIOLATION-REPRODUCED and count as the expected
    /// outcome.
    #[serde(default)]
    pub expect_violation: bool,
}

/// Runtime objects resolved from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub seed: u64,
    pub alpha: f64,
    pub trials: u64,
    pub scenario: ScenarioSpec,
    pub processes: Vec<ProcessConfig>,
    pub rule: StoppingRule,
    pub checks: ChecksConfig,
}

impl ExperimentConfig {
    /// Parse config text. Shape errors (syntax, unknown keys, missing
    /// mandatory fields) surface here with the TOML position; no files are
    /// read and no values are range-checked yet.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Read and parse a config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Resolve the config into runtime objects. `config_dir` anchors
    /// relative adjuster-table paths.
    pub fn build(&self, config_dir: &Path) -> Result<Experiment> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.trials > 1 && self.trials < 100 {
            return Err(Error::Config(format!(
                "trials must be 0 (exact enumeration), 1 (single trajectory), \
                 or at least 100 (Monte Carlo); got {}",
                self.trials
            )));
        }
        let scenario = self.scenario.build(self.seed);
        scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
        let mut processes = Vec::new();
        for entry in &self.processes {
            let (config, copies) = entry.build(config_dir)?;
            for _ in 0..copies {
                processes.push(config.clone());
            }
        }
        if processes.len() != scenario.g() {
            return Err(Error::Config(format!(
                "{} processes configured for a {}-hypothesis scenario",
                processes.len(),
                scenario.g()
            )));
        }
        if self.trials == 0 {
            self.check_enumerable(&processes)?;
        }
        let rule = self.rule.build()?;
        Ok(Experiment {
            seed: self.seed,
            alpha: self.alpha,
            trials: self.trials,
            scenario,
            processes,
            rule,
            checks: self.checks.clone(),
        })
    }

    /// `trials = 0` means exact enumeration, which is defined only for the
    /// bundled counterexample setup: lag-1 fair-coin foreteller, two raw
    /// betting processes, and the counterexample rule at cutoff 1.
    fn check_enumerable(&self, processes: &[ProcessConfig]) -> Result<()> {
        let scenario_ok = matches!(
            self.scenario,
            ScenarioConfig::Foreteller { lag: 1, theta, .. } if theta == 0.5
        );
        let processes_ok = processes.iter().all(|p| {
            p.adjuster.is_none()
                && p.members.len() == 1
                && matches!(
                    p.members[0],
                    StepwiseFactorSpec::Betting { null_theta } if null_theta == 0.5
                )
        });
        let rule_ok = matches!(self.rule, RuleConfig::CounterexampleTau { cutoff } if cutoff == 1.0);
        if scenario_ok && processes_ok && rule_ok {
            Ok(())
        } else {
            Err(Error::Config(
                "trials = 0 requests exact enumeration, which is defined for the \
                 lag-1 fair-coin foreteller with two raw betting processes and \
                 the counterexample rule at cutoff 1"
                    .into(),
            ))
        }
    }
}

impl ScenarioConfig {
    fn build(&self, seed: u64) -> ScenarioSpec {
        match self.clone() {
            ScenarioConfig::CorrelatedCoins { theta, rho, horizon } => ScenarioSpec {
                kind: ScenarioKind::CorrelatedCoins { theta, rho },
                horizon,
                seed,
            },
            ScenarioConfig::Mvn { mean, cov, horizon } => ScenarioSpec {
                kind: ScenarioKind::Mvn { mean, cov },
                horizon,
                seed,
            },
            ScenarioConfig::NbGlm { beta, gamma, dispersion, prob_group_one, rho, horizon } => {
                ScenarioSpec {
                    kind: ScenarioKind::NbGlm { beta, gamma, dispersion, prob_group_one, rho },
                    horizon,
                    seed,
                }
            }
            ScenarioConfig::Foreteller { lag, theta, horizon } => ScenarioSpec {
                kind: ScenarioKind::Foreteller { lag, theta },
                horizon,
                seed,
            },
        }
    }
}

impl ProcessEntry {
    fn build(&self, config_dir: &Path) -> Result<(ProcessConfig, usize)> {
        let (spec, adjuster, copies) = match self.clone() {
            ProcessEntry::Betting { null_theta, adjuster, copies } => {
                (StepwiseFactorSpec::Betting { null_theta }, adjuster, copies)
            }
            ProcessEntry::Gaussian { variance, rate, adjuster, copies } => (
                StepwiseFactorSpec::Gaussian { variance, rate: RateSchedule::Constant(rate) },
                adjuster,
                copies,
            ),
            ProcessEntry::Sprt { null_prob_plus_one, alt_prob_plus_one, adjuster, copies } => (
                StepwiseFactorSpec::Sprt {
                    null: ConditionalLaw::BernoulliSign { prob_plus_one: null_prob_plus_one },
                    alt: ConditionalLaw::BernoulliSign { prob_plus_one: alt_prob_plus_one },
                },
                adjuster,
                copies,
            ),
            ProcessEntry::UniversalNb { dispersion, adjuster, copies } => {
                (StepwiseFactorSpec::UniversalNb { dispersion }, adjuster, copies)
            }
            ProcessEntry::Catoni { mean, second_moment, rate, side, adjuster, copies } => (
                StepwiseFactorSpec::Catoni {
                    mean: TargetFn::Constant(mean),
                    second_moment: TargetFn::Constant(second_moment),
                    rate: RateSchedule::Constant(rate),
                    side: match side {
                        CatoniSideConfig::MeanAtMost => CatoniSide::MeanAtMost,
                        CatoniSideConfig::MeanAtLeast => CatoniSide::MeanAtLeast,
                        CatoniSideConfig::MeanEquals => CatoniSide::MeanEquals,
                    },
                },
                adjuster,
                copies,
            ),
        };
        if copies == 0 {
            return Err(Error::Config("copies must be at least 1".into()));
        }
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        let mut config = ProcessConfig::single(spec);
        if let Some(adj) = adjuster {
            config = config.with_adjuster(adj.build(config_dir)?);
        }
        Ok((config, copies))
    }
}

impl AdjusterConfig {
    fn build(&self, config_dir: &Path) -> Result<AdjusterSpec> {
        match self {
            AdjusterConfig::SqrtMinusOne => Ok(AdjusterSpec::SqrtMinusOne),
            AdjusterConfig::Power { k } => Ok(AdjusterSpec::Power { k: *k }),
            AdjusterConfig::Custom { path } => {
                let resolved = config_dir.join(path);
                let text = std::fs::read_to_string(&resolved).map_err(|e| {
                    Error::Config(format!(
                        "adjuster table {}: {e}",
                        resolved.display()
                    ))
                })?;
                Ok(AdjusterSpec::Custom(AdjusterTable::parse(&text)?))
            }
        }
    }
}

impl RuleConfig {
    fn build(&self) -> Result<StoppingRule> {
        match self {
            RuleConfig::FixedHorizon { horizon } => Ok(StoppingRule::FixedHorizon(*horizon)),
            RuleConfig::Threshold { hypothesis, level } => {
                Ok(StoppingRule::Threshold { hypothesis: *hypothesis, level: *level })
            }
            RuleConfig::RejectionCount { count } => Ok(StoppingRule::RejectionCount(*count)),
            RuleConfig::FirstOf { rules } => {
                let built = rules.iter().map(RuleConfig::build).collect::<Result<Vec<_>>>()?;
                Ok(StoppingRule::FirstOf(built))
            }
            RuleConfig::CounterexampleTau { cutoff } => {
                if !cutoff.is_finite() {
                    return Err(Error::Config(format!(
                        "counterexample cutoff must be finite, got {cutoff}"
                    )));
                }
                Ok(counterexample_rule(*cutoff))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COINS: &str = r#"
seed = 7
alpha = 0.1
trials = 200

[scenario]
kind = "correlated_coins"
theta = [0.5, 0.5, 0.8]
rho = 0.9
horizon = 50

[[process]]
family = "betting"
copies = 3

[rule]
kind = "rejection_count"
count = 1
"#;

    #[test]
    fn parses_and_builds_a_coins_config() {
        let config = ExperimentConfig::from_toml(COINS).unwrap();
        assert_eq!(config.seed, 7);
        let exp = config.build(Path::new(".")).unwrap();
        assert_eq!(exp.processes.len(), 3);
        assert_eq!(exp.scenario.g(), 3);
        assert!(exp.checks.fdr_bound.is_none());
    }

    #[test]
    fn missing_alpha_is_a_parse_error_naming_the_field() {
        let text = COINS.replace("alpha = 0.1\n", "");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        match err {
            Error::Parse(msg) => assert!(msg.contains("alpha"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        for (from, to) in [
            ("seed = 7", "seed = 7\ntypo_key = 1"),
            ("rho = 0.9", "rho = 0.9\ntypo_key = 1"),
            ("family = \"betting\"", "family = \"betting\"\ntypo_key = 1"),
            ("count = 1", "count = 1\ntypo_key = 1"),
        ] {
            let text = COINS.replace(from, to);
            let err = ExperimentConfig::from_toml(&text).unwrap_err();
            match err {
                Error::Parse(msg) => {
                    assert!(msg.contains("typo_key") || msg.contains("unknown"), "{msg}")
                }
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn arity_mismatch_is_a_config_error() {
        let text = COINS.replace("copies = 3", "copies = 2");
        let config = ExperimentConfig::from_toml(&text).unwrap();
        match config.build(Path::new(".")) {
            Err(Error::Config(msg)) => assert!(msg.contains("2 processes"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn trials_gap_is_rejected() {
        let text = COINS.replace("trials = 200", "trials = 50");
        let config = ExperimentConfig::from_toml(&text).unwrap();
        assert!(matches!(config.build(Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn enumeration_demands_the_counterexample_setup() {
        let good = r#"
seed = 1
alpha = 0.05
trials = 0

[scenario]
kind = "foreteller"
lag = 1
theta = 0.5
horizon = 2

[[process]]
family = "betting"
copies = 2

[rule]
kind = "counterexample_tau"

[checks]
expect_violation = true
"#;
        let config = ExperimentConfig::from_toml(good).unwrap();
        assert!(config.build(Path::new(".")).is_ok());

        let bad = good.replace("lag = 1", "lag = 2");
        let config = ExperimentConfig::from_toml(&bad).unwrap();
        assert!(matches!(config.build(Path::new(".")), Err(Error::Config(_))));

        let bad = good.replace("kind = \"counterexample_tau\"", "kind = \"fixed_horizon\"\nhorizon = 2");
        let config = ExperimentConfig::from_toml(&bad).unwrap();
        assert!(matches!(config.build(Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn all_families_and_nested_rules_parse() {
        let text = r#"
seed = 3
alpha = 0.2
trials = 100

[scenario]
kind = "nb_glm"
beta = [0.0, 1.0, 0.0, 0.0, 0.0]
gamma = [0.0, 0.0, 0.0, 0.0, 0.0]
dispersion = [0.5, 0.5, 0.5, 0.5, 0.5]
prob_group_one = 0.5
rho = 0.0
horizon = 30

[[process]]
family = "universal_nb"
dispersion = 0.5
copies = 2

[[process]]
family = "gaussian"
variance = 4.0
rate = 0.5

[[process]]
family = "sprt"
null_prob_plus_one = 0.5
alt_prob_plus_one = 0.7

[[process]]
family = "catoni"
mean = 1.0
second_moment = 3.0
rate = 0.25
side = "mean_equals"

[process.adjuster]
kind = "power"
k = 0.5

[rule]
kind = "first_of"

[[rule.rules]]
kind = "fixed_horizon"
horizon = 30

[[rule.rules]]
kind = "threshold"
hypothesis = 1
level = 10.0
"#;
        let config = ExperimentConfig::from_toml(text).unwrap();
        let exp = config.build(Path::new(".")).unwrap();
        assert_eq!(exp.processes.len(), 5);
        assert!(exp.processes[4].adjuster.is_some());
        assert!(matches!(exp.rule, StoppingRule::FirstOf(ref v) if v.len() == 2));
    }

    #[test]
    fn custom_adjuster_table_is_resolved_relative_to_config_dir() {
        let dir = std::env::temp_dir().join(format!("evlab-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("table.tsv"), "1 0\n4 1\n9 2\n").unwrap();
        let text = COINS.replace(
            "family = \"betting\"\ncopies = 3",
            "family = \"betting\"\ncopies = 3\n\n[process.adjuster]\nkind = \"custom\"\npath = \"table.tsv\"",
        );
        let config = ExperimentConfig::from_toml(&text).unwrap();
        let exp = config.build(&dir).unwrap();
        assert!(exp.processes.iter().all(|p| p.adjuster.is_some()));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn config_echo_round_trips_through_toml() {
        let config = ExperimentConfig::from_toml(COINS).unwrap();
        let echoed = toml::to_string(&config).unwrap();
        let reparsed = ExperimentConfig::from_toml(&echoed).unwrap();
        assert_eq!(toml::to_string(&reparsed).unwrap(), echoed);
    }
}
