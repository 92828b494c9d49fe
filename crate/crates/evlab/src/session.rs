//! Stopped e-BH sessions.
//!
//! A session runs `G` e-processes on one shared observation stream, applies
//! e-BH after every tick, and evaluates a *global* stopping rule. The rule
//! sees the look-ahead filtration: everything observed so far plus the next
//! tick's covariate, but never the next responses. Stopping this way is what
//! breaks naive validity (a rule may stop hypothesis `g`'s process using
//! other streams' information, and a stopped e-process under a non-local
//! stopping time can have expectation above one), so each process can carry
//! an adjuster; adjusted processes remain valid at every global rule.
//!
//! Rule predicates receive only `(n, e-values, rejection set, next
//! covariate)` through [`StopContext`]. That interface is the enforcement
//! mechanism for the filtration restriction: a custom rule physically cannot
//! read responses that have not been revealed to it.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::adjuster::{self, AdjusterSpec};
use crate::ebh::{ebh, EValueVector, RejectionSet};
use crate::eprocess::{MemberProcess, StepwiseFactorSpec};
use crate::stream::{Covariate, Observation};
use crate::{Error, Result};

/// Recipe for one hypothesis's process: a non-empty grid of factor specs
/// (the process value is the infimum over the grid) and an optional
/// adjuster applied to the infimum's running maximum.
#[derive(Debug, Clone)]
pub struct ProcessConfig {
    pub members: Vec<StepwiseFactorSpec>,
    pub adjuster: Option<AdjusterSpec>,
}

impl ProcessConfig {
    #[must_use]
    pub fn single(spec: StepwiseFactorSpec) -> Self {
        Self { members: vec![spec], adjuster: None }
    }

    #[must_use]
    pub fn grid(specs: Vec<StepwiseFactorSpec>) -> Self {
        Self { members: specs, adjuster: None }
    }

    #[must_use]
    pub fn with_adjuster(mut self, spec: AdjusterSpec) -> Self {
        self.adjuster = Some(spec);
        self
    }
}

/// Running state for one hypothesis: grid members, the infimum's running
/// maximum, and the optional adjuster.
#[derive(Debug, Clone)]
pub struct HypothesisProcess {
    members: Vec<MemberProcess>,
    adjuster: Option<AdjusterSpec>,
    n: u64,
    log_inf_value: f64,
    log_inf_running_max: f64,
}

impl HypothesisProcess {
    pub fn new(config: ProcessConfig) -> Result<Self> {
        if config.members.is_empty() {
            return Err(Error::Parameter("process grid must be non-empty".into()));
        }
        if let Some(adj) = &config.adjuster {
            adj.validate()?;
        }
        let members = config
            .members
            .into_iter()
            .map(MemberProcess::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            members,
            adjuster: config.adjuster,
            n: 0,
            log_inf_value: 0.0,
            log_inf_running_max: 0.0,
        })
    }

    #[must_use]
    pub fn members(&self) -> &[MemberProcess] {
        &self.members
    }

    #[must_use]
    pub fn adjuster(&self) -> Option<&AdjusterSpec> {
        self.adjuster.as_ref()
    }

    /// Log of the raw (unadjusted) infimum process value.
    #[must_use]
    pub fn log_raw_value(&self) -> f64 {
        self.log_inf_value
    }

    /// Current e-value: the adjusted running maximum when an adjuster is
    /// configured, otherwise the raw infimum value.
    pub fn evalue(&self) -> Result<f64> {
        match &self.adjuster {
            Some(adj) => adjuster::lift_log_running_max(adj, self.log_inf_running_max, self.n),
            None => Ok(self.log_inf_value.exp()),
        }
    }

    fn step(&mut self, x: &Covariate, y: f64) -> Result<f64> {
        for member in &mut self.members {
            member.step(x, y)?;
        }
        // Member values, not raw states: two-sided catoni members report
        // their averaged value.
        self.log_inf_value = self
            .members
            .iter()
            .map(MemberProcess::log_value)
            .fold(f64::INFINITY, f64::min);
        self.n += 1;
        self.log_inf_running_max = self.log_inf_running_max.max(self.log_inf_value);
        self.evalue()
    }
}

/// One recorded tick: the e-values after the tick and the e-BH rejection set
/// they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub n: u64,
    pub evalues: EValueVector,
    pub rejections: RejectionSet,
}

/// What a stopping rule is allowed to see.
#[derive(Debug)]
pub struct StopContext<'a> {
    /// Ticks consumed so far (1-based once running).
    pub n: u64,
    pub evalues: &'a EValueVector,
    pub rejections: &'a RejectionSet,
    /// The *next* tick's covariate when already revealed (the look-ahead
    /// part of the filtration); responses are never visible here.
    pub next_covariate: Option<&'a Covariate>,
}

/// A custom stop predicate over the joint history.
pub type StopPredicate = Arc<dyn Fn(&StopContext) -> Result<bool> + Send + Sync>;

/// Global stopping rules, evaluated after each tick.
#[derive(Clone)]
pub enum StoppingRule {
    /// Stop once `n >= horizon`.
    FixedHorizon(u64),
    /// Stop once hypothesis `hypothesis`'s e-value reaches `level`.
    Threshold { hypothesis: usize, level: f64 },
    /// Stop once e-BH rejects at least `count` hypotheses.
    RejectionCount(usize),
    /// Stop when any sub-rule fires.
    FirstOf(Vec<StoppingRule>),
    Custom(StopPredicate),
}

impl fmt::Debug for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingRule::FixedHorizon(n) => write!(f, "FixedHorizon({n})"),
            StoppingRule::Threshold { hypothesis, level } => {
                write!(f, "Threshold {{ hypothesis: {hypothesis}, level: {level} }}")
            }
            StoppingRule::RejectionCount(k) => write!(f, "RejectionCount({k})"),
            StoppingRule::FirstOf(rules) => f.debug_tuple("FirstOf").field(rules).finish(),
            StoppingRule::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Result of driving a session against a stream under a rule.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppedResult {
    /// Ticks consumed when the run ended.
    pub tau: u64,
    /// False when the stream was exhausted before the rule fired.
    pub stopped_by_rule: bool,
    pub final_evalues: EValueVector,
    pub final_rejections: RejectionSet,
}

/// A panel of hypothesis processes sharing one stream, with e-BH applied
/// after every tick.
#[derive(Debug, Clone)]
pub struct Session {
    alpha: f64,
    processes: Vec<HypothesisProcess>,
    history: Vec<HistoryRecord>,
    next_covariate: Option<Covariate>,
}

impl Session {
    /// Build a session. Each configured adjuster is certified numerically
    /// here (integral within `1e-6` of budget), so invalid adjusters are
    /// rejected before any data flows.
    pub fn new(processes: Vec<ProcessConfig>, alpha: f64) -> Result<Self> {
        for config in &processes {
            if let Some(adj) = &config.adjuster {
                let report = adjuster::adjuster_validity(adj, 1e-6)?;
                if !report.pass {
                    return Err(Error::AdjusterSpec(format!(
                        "adjuster failed validity certification: integral {} (divergent: {})",
                        report.integral, report.divergent
                    )));
                }
            }
        }
        Self::precertified(processes, alpha)
    }

    /// Build a session whose adjusters were already certified (for example
    /// by a previous [`Session::new`] with the same configuration). Skips
    /// the certification quadrature; everything else is validated as usual.
    pub fn precertified(processes: Vec<ProcessConfig>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if processes.is_empty() {
            return Err(Error::Parameter("session needs at least one hypothesis".into()));
        }
        let processes = processes
            .into_iter()
            .map(HypothesisProcess::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { alpha, processes, history: Vec::new(), next_covariate: None })
    }

    #[must_use]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of hypotheses.
    #[must_use]
    pub fn g(&self) -> usize {
        self.processes.len()
    }

    /// Ticks consumed so far.
    #[must_use]
    pub fn n(&self) -> u64 {
        self.history.len() as u64
    }

    #[must_use]
    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    #[must_use]
    pub fn latest(&self) -> Option<&HistoryRecord> {
        self.history.last()
    }

    #[must_use]
    pub fn processes(&self) -> &[HypothesisProcess] {
        &self.processes
    }

    /// Consume one tick and record the refreshed e-values and rejection set.
    ///
    /// `next_covariate` is the following tick's covariate when the caller has
    /// already revealed it; rules evaluated after this step may read it.
    pub fn step(
        &mut self,
        obs: &Observation,
        next_covariate: Option<Covariate>,
    ) -> Result<&HistoryRecord> {
        if obs.y.len() != self.processes.len() {
            return Err(Error::Input(format!(
                "observation carries {} responses for {} hypotheses",
                obs.y.len(),
                self.processes.len()
            )));
        }
        let mut values = Vec::with_capacity(self.processes.len());
        for (process, &y) in self.processes.iter_mut().zip(&obs.y) {
            values.push(process.step(&obs.x, y)?);
        }
        let evalues = EValueVector::new(values)?;
        let rejections = ebh(&evalues, self.alpha)?;
        let n = self.history.len() as u64 + 1;
        self.history.push(HistoryRecord { n, evalues, rejections });
        self.next_covariate = next_covariate;
        Ok(self.history.last().expect("just pushed"))
    }

    /// Evaluate a stopping rule at the current state.
    ///
    /// Before any tick has been consumed only `FixedHorizon(0)` can fire;
    /// data-dependent rules return false.
    pub fn evaluate_stop(&self, rule: &StoppingRule) -> Result<bool> {
        match rule {
            StoppingRule::FixedHorizon(horizon) => Ok(self.n() >= *horizon),
            StoppingRule::Threshold { hypothesis, level } => {
                if *hypothesis == 0 || *hypothesis > self.g() {
                    return Err(Error::Rule(format!(
                        "threshold rule names hypothesis {hypothesis} of {}",
                        self.g()
                    )));
                }
                if level.is_nan() {
                    return Err(Error::Rule("threshold level is NaN".into()));
                }
                Ok(self
                    .latest()
                    .is_some_and(|rec| rec.evalues.value(*hypothesis) >= *level))
            }
            StoppingRule::RejectionCount(count) => {
                Ok(self.latest().is_some_and(|rec| rec.rejections.len() >= *count))
            }
            StoppingRule::FirstOf(rules) => {
                if rules.is_empty() {
                    return Err(Error::Rule("first_of needs at least one sub-rule".into()));
                }
                for rule in rules {
                    if self.evaluate_stop(rule)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            StoppingRule::Custom(predicate) => match self.latest() {
                None => Ok(false),
                Some(rec) => predicate(&StopContext {
                    n: rec.n,
                    evalues: &rec.evalues,
                    rejections: &rec.rejections,
                    next_covariate: self.next_covariate.as_ref(),
                }),
            },
        }
    }

    /// Drive the session through `stream`, stopping as soon as `rule` fires
    /// (evaluated after each tick, with the next covariate revealed).
    ///
    /// If the stream runs out first, the result carries
    /// `stopped_by_rule = false` and `tau` equal to the full length consumed.
    pub fn run(&mut self, stream: &[Observation], rule: &StoppingRule) -> Result<StoppedResult> {
        if stream.is_empty() {
            return Err(Error::Input("observation stream is empty".into()));
        }
        let mut stopped_by_rule = false;
        for (i, obs) in stream.iter().enumerate() {
            let next = stream.get(i + 1).map(|o| o.x);
            self.step(obs, next)?;
            if self.evaluate_stop(rule)? {
                stopped_by_rule = true;
                break;
            }
        }
        let last = self.latest().expect("at least one tick consumed");
        Ok(StoppedResult {
            tau: self.n(),
            stopped_by_rule,
            final_evalues: last.evalues.clone(),
            final_rejections: last.rejections.clone(),
        })
    }

    /// Write the trajectory as TSV: `n`, one e-value column per hypothesis,
    /// and the rejection-set bitmask (needs `G <= 64`).
    pub fn write_trajectory<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "n")?;
        for g in 1..=self.g() {
            write!(out, "\te_{g}")?;
        }
        writeln!(out, "\trejected_mask")?;
        for rec in &self.history {
            write!(out, "{}", rec.n)?;
            for &e in rec.evalues.values() {
                write!(out, "\t{e}")?;
            }
            writeln!(out, "\t{}", rec.rejections.bitmask()?)?;
        }
        Ok(())
    }
}
