//! Experiment runner: executes a config end to end and writes artifacts.
//!
//! Three execution modes keyed by `trials`: `0` enumerates the bundled
//! counterexample exactly, `1` runs a single trajectory, and `>= 100` runs
//! the Monte Carlo FDR study. Every mode writes `summary.json` (the full
//! [`RunReport`]); Monte Carlo and single-trajectory modes add `trials.tsv`
//! and `trajectory.tsv`, enumeration adds `counterexample.tsv`. Trials may
//! run in parallel, but artifacts are written once by this module after
//! aggregation, and all numeric outputs are byte-identical across reruns of
//! the same config (wall time in the metadata is the one exception).

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ChecksConfig, Experiment, ExperimentConfig};
use crate::ebh::fdp;
use crate::session::Session;
use crate::simlab::{
    enumerate_counterexample, mc_fdr, CounterexampleTable, MonteCarloSummary, TrialRecord,
    GENERATOR_NAME,
};
use crate::{Error, Result};

/// Outcome of one declared bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictStatus {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    /// The config declared a violation as the expected outcome and the run
    /// reproduced it; counts as success for the exit status.
    #[serde(rename = "VIOLATION-REPRODUCED")]
    ViolationReproduced,
}

impl VerdictStatus {
    #[must_use]
    pub fn ok(self) -> bool {
        !matches!(self, VerdictStatus::Fail)
    }
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictStatus::Pass => "PASS",
            VerdictStatus::Fail => "FAIL",
            VerdictStatus::ViolationReproduced => "VIOLATION-REPRODUCED",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub status: VerdictStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub generator: String,
    pub alpha: f64,
    pub trials: u64,
    pub wall_time_secs: f64,
}

/// The full run record: config echo, aggregate results, and verdicts. The
/// verdicts are a pure function of the other fields, and the process exit
/// status is a pure function of the verdicts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub meta: RunMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<MonteCarloSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleTable>,
    pub verdicts: Vec<Verdict>,
}

impl RunReport {
    /// True when every verdict is PASS or an expected VIOLATION-REPRODUCED.
    #[must_use]
    pub fn ok(&self) -> bool {
        self.verdicts.iter().all(|v| v.status.ok())
    }

    /// Human-readable summary (the `summary` output and the `report`
    /// subcommand's body).
    #[must_use]
    pub fn render(&self) -> String {
        let mut out = String::new();
        let m = &self.meta;
        out.push_str(&format!(
            "seed {}  alpha {}  trials {}  generator {}  wall {:.3}s\n",
            m.seed, m.alpha, m.trials, m.generator, m.wall_time_secs
        ));
        if let Some(s) = &self.summary {
            out.push_str(&format!(
                "mean FDR {} (SE {})  mean tau {}  rule-stop fraction {}\n",
                s.mean_fdr, s.fdr_std_error, s.mean_tau, s.rule_stop_fraction
            ));
            out.push_str(&format!("rejection frequency {:?}\n", s.rejection_frequency));
            for (i, mean) in s.null_evalue_mean.iter().enumerate() {
                if let (Some(mean), Some(se)) = (mean, s.null_evalue_std_error[i]) {
                    out.push_str(&format!(
                        "null hypothesis {}: mean stopped e-value {mean} (SE {se})\n",
                        i + 1
                    ));
                }
            }
        }
        if let Some(table) = &self.counterexample {
            out.push_str("exact enumeration (y1, y2; M1_1, M1_2; tau; M1_tau):\n");
            for o in &table.outcomes {
                out.push_str(&format!(
                    "  ({:+}, {:+})  {} {}  tau={}  {}\n",
                    o.y[0] as i64, o.y[1] as i64, o.m1[0], o.m1[1], o.tau, o.m1_stopped
                ));
            }
            out.push_str(&format!(
                "expected stopped value {}\n",
                table.expected_stopped_value
            ));
        }
        for v in &self.verdicts {
            out.push_str(&format!("{}  {}: {}\n", v.status, v.name, v.detail));
        }
        out.push_str(&format!(
            "overall: {}\n",
            if self.ok() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// CLI flag overrides applied to the parsed config before building.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
}

/// A completed run: the report plus where its artifacts went.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub out_dir: PathBuf,
}

/// Execute the config at `config_path` and write artifacts.
///
/// The output directory is, in order of precedence: `out_dir`, the config's
/// `output_dir` key, or `<config stem>.out` in the working directory.
pub fn run_scenario(
    config_path: &Path,
    overrides: &Overrides,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut config = ExperimentConfig::from_path(config_path)?;
    if let Some(t) = overrides.trials {
        config.trials = t;
    }
    if let Some(s) = overrides.seed {
        config.seed = s;
    }
    if let Some(a) = overrides.alpha {
        config.alpha = a;
    }
    let config_dir = config_path.parent().unwrap_or_else(|| Path::new("."));
    let experiment = config.build(config_dir)?;
    let out = resolve_out_dir(config_path, &config, out_dir);
    std::fs::create_dir_all(&out)?;

    let mut report = match experiment.trials {
        0 => run_enumeration(&experiment, &out)?,
        1 => run_single_trajectory(&experiment, &out)?,
        _ => run_monte_carlo(&experiment, &out)?,
    };
    report.config = config;
    report.meta.wall_time_secs = started.elapsed().as_secs_f64();
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(out.join("summary.json"), json)?;
    Ok(RunOutcome { report, out_dir: out })
}

fn resolve_out_dir(
    config_path: &Path,
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> PathBuf {
    if let Some(dir) = out_dir {
        return dir.to_path_buf();
    }
    if let Some(dir) = &config.output_dir {
        return PathBuf::from(dir);
    }
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    PathBuf::from(format!("{stem}.out"))
}

/// Report skeleton; `config` and wall time are filled in by the caller.
fn blank_report(experiment: &Experiment) -> RunReport {
    RunReport {
        config: ExperimentConfig {
            seed: experiment.seed,
            alpha: experiment.alpha,
            trials: experiment.trials,
            scenario: crate::config::ScenarioConfig::Foreteller {
                lag: 0,
                theta: 0.5,
                horizon: 0,
            },
            processes: Vec::new(),
            rule: crate::config::RuleConfig::FixedHorizon { horizon: 0 },
            checks: ChecksConfig::default(),
            output_dir: None,
        },
        meta: RunMeta {
            seed: experiment.seed,
            generator: GENERATOR_NAME.to_string(),
            alpha: experiment.alpha,
            trials: experiment.trials,
            wall_time_secs: 0.0,
        },
        summary: None,
        counterexample: None,
        verdicts: Vec::new(),
    }
}

fn run_enumeration(experiment: &Experiment, out: &Path) -> Result<RunReport> {
    let table = enumerate_counterexample()?;
    let violated = table.expected_stopped_value > 1.0;
    let status = match (violated, experiment.checks.expect_violation) {
        (true, true) => VerdictStatus::ViolationReproduced,
        (true, false) => VerdictStatus::Fail,
        (false, true) => VerdictStatus::Fail,
        (false, false) => VerdictStatus::Pass,
    };
    let verdict = Verdict {
        name: "stopped_null_expectation".to_string(),
        status,
        detail: format!(
            "E[M1_tau] = {} vs e-value bound 1: a true null's stopped process \
             exceeds 1 in expectation under a stopping rule that reads the \
             other stream's look-ahead",
            table.expected_stopped_value
        ),
    };

    let mut tsv = String::from("y1\ty2\tm1_1\tm1_2\ttau\tm1_stopped\tprobability\n");
    for o in &table.outcomes {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            o.y[0], o.y[1], o.m1[0], o.m1[1], o.tau, o.m1_stopped, o.probability
        ));
    }
    std::fs::write(out.join("counterexample.tsv"), tsv)?;

    let mut report = blank_report(experiment);
    report.counterexample = Some(table);
    report.verdicts = vec![verdict];
    Ok(report)
}

fn run_single_trajectory(experiment: &Experiment, out: &Path) -> Result<RunReport> {
    let stream = experiment.scenario.generate()?;
    let truth = experiment.scenario.truth()?;
    let mut session = Session::new(experiment.processes.clone(), experiment.alpha)?;
    let result = session.run(&stream, &experiment.rule)?;

    let mut trajectory = Vec::new();
    session.write_trajectory(&mut trajectory)?;
    std::fs::write(out.join("trajectory.tsv"), trajectory)?;

    let record = TrialRecord {
        trial: 0,
        tau: result.tau,
        stopped_by_rule: result.stopped_by_rule,
        fdp: fdp(&result.final_rejections, &truth)?,
        rejected: result.final_rejections.to_vec(),
        final_evalues: result.final_evalues.values().to_vec(),
    };
    write_trials_tsv(&out.join("trials.tsv"), std::slice::from_ref(&record))?;

    let mut report = blank_report(experiment);
    report.verdicts = vec![Verdict {
        name: "trajectory_completed".to_string(),
        status: VerdictStatus::Pass,
        detail: format!(
            "tau = {} ({}), rejected {:?}, fdp {}",
            record.tau,
            if record.stopped_by_rule { "rule" } else { "stream exhausted" },
            record.rejected,
            record.fdp
        ),
    }];
    Ok(report)
}

fn run_monte_carlo(experiment: &Experiment, out: &Path) -> Result<RunReport> {
    let run = mc_fdr(
        &experiment.scenario,
        &experiment.processes,
        &experiment.rule,
        experiment.alpha,
        experiment.trials as usize,
    )?;
    write_trials_tsv(&out.join("trials.tsv"), &run.trials)?;

    // Re-run trial 0 to export one concrete trajectory.
    let stream = experiment.scenario.generate_for_trial(0)?;
    let mut session = Session::precertified(experiment.processes.clone(), experiment.alpha)?;
    session.run(&stream, &experiment.rule)?;
    let mut trajectory = Vec::new();
    session.write_trajectory(&mut trajectory)?;
    std::fs::write(out.join("trajectory.tsv"), trajectory)?;

    let verdicts = monte_carlo_verdicts(&run.summary, &experiment.checks);
    let mut report = blank_report(experiment);
    report.summary = Some(run.summary);
    report.verdicts = verdicts;
    Ok(report)
}

/// Turn declared bounds into verdicts. With `expect_violation`, a failed
/// bound is the declared outcome (VIOLATION-REPRODUCED) and an all-pass run
/// is a failure to reproduce.
fn monte_carlo_verdicts(summary: &MonteCarloSummary, checks: &ChecksConfig) -> Vec<Verdict> {
    let mut verdicts = Vec::new();
    let flip = |raw_pass: bool| -> VerdictStatus {
        match (raw_pass, checks.expect_violation) {
            (true, _) => VerdictStatus::Pass,
            (false, true) => VerdictStatus::ViolationReproduced,
            (false, false) => VerdictStatus::Fail,
        }
    };

    let bound = checks.fdr_bound.unwrap_or(summary.alpha);
    let limit = bound + 3.0 * summary.fdr_std_error;
    verdicts.push(Verdict {
        name: "fdr".to_string(),
        status: flip(summary.mean_fdr <= limit),
        detail: format!(
            "mean FDR {} vs bound {bound} + 3 SE = {limit}",
            summary.mean_fdr
        ),
    });

    if let Some(bound) = checks.null_evalue_bound {
        let mut worst: Option<(usize, f64, f64)> = None;
        let mut all_within = true;
        for (i, mean) in summary.null_evalue_mean.iter().enumerate() {
            let (Some(mean), Some(se)) = (mean, summary.null_evalue_std_error[i]) else {
                continue;
            };
            let excess = mean - bound - 3.0 * se;
            if excess > 0.0 {
                all_within = false;
            }
            if worst.is_none_or(|(_, _, w)| excess > w) {
                worst = Some((i + 1, *mean, excess));
            }
        }
        let detail = match worst {
            Some((g, mean, _)) => format!(
                "max null mean stopped e-value {mean} (hypothesis {g}) vs bound {bound} + 3 SE"
            ),
            None => "scenario has no true nulls".to_string(),
        };
        verdicts.push(Verdict {
            name: "null_evalue".to_string(),
            status: flip(all_within),
            detail,
        });
    }

    if checks.expect_violation
        && verdicts.iter().all(|v| v.status == VerdictStatus::Pass)
    {
        verdicts.push(Verdict {
            name: "expected_violation".to_string(),
            status: VerdictStatus::Fail,
            detail: "config declared expect_violation but every bound passed".to_string(),
        });
    }
    verdicts
}

fn write_trials_tsv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let g = records.first().map_or(0, |r| r.final_evalues.len());
    let mut out = Vec::new();
    write!(out, "trial\ttau\tstopped_by_rule\tfdp\trejected")?;
    for gi in 1..=g {
        write!(out, "\te_{gi}")?;
    }
    writeln!(out)?;
    for r in records {
        let rejected = if r.rejected.is_empty() {
            "-".to_string()
        } else {
            r.rejected.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        };
        write!(out, "{}\t{}\t{}\t{}\t{rejected}", r.trial, r.tau, r.stopped_by_rule, r.fdp)?;
        for &e in &r.final_evalues {
            write!(out, "\t{e}")?;
        }
        writeln!(out)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a previously written report for the `report` subcommand.
pub fn load_report(results_dir: &Path) -> Result<RunReport> {
    let path = results_dir.join("summary.json");
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
