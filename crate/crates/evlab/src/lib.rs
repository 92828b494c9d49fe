//! Sequential, anytime-valid multiple hypothesis testing with e-processes.
//!
//! The crate is organized around one workflow: grow a panel of e-processes
//! (one per hypothesis) on a shared observation stream, stop the whole panel
//! with a global stopping rule, and feed the stopped e-values to the e-BH
//! procedure. Because a rule that is a stopping time for the *joint*
//! filtration need not be one for any single hypothesis's local filtration,
//! stopped e-values can silently stop being e-values; the [`adjuster`] module
//! provides the lifting that restores validity, and the [`simlab`] module can
//! reproduce the exact two-stream counterexample where the naive approach
//! fails.
//!
//! Module map:
//!
//! * [`ebh`]: the e-BH procedure, its p-value dual, FDP bookkeeping, and
//!   compound e-value constructions.
//! * [`eprocess`]: single-hypothesis e-process state plus the stepwise factor
//!   families (betting, Gaussian, SPRT, universal-inference NB GLM, Catoni).
//! * [`adjuster`]: adjusters (nonnegative, non-decreasing `A` with
//!   `int_1^inf A(x)/x^2 dx <= 1`), numeric validity certification, and
//!   e-lifting of running maxima.
//! * [`session`]: the stopped e-BH session engine with global stopping rules
//!   evaluated under the look-ahead filtration.
//! * [`simlab`]: scenario generators (correlated coins, MVN, NB GLM,
//!   foreteller), exact counterexample enumeration, asynchrony reindexing,
//!   and Monte Carlo FDR estimation.
//! * [`config`] / [`runner`] / [`verify`]: the config-driven experiment
//!   front end used by the `evlab` binary.

pub mod adjuster;
pub mod config;
pub mod ebh;
pub mod eprocess;
mod error;
pub(crate) mod linalg;
pub mod quad;
pub mod runner;
pub mod session;
pub mod simlab;
pub mod stream;
pub mod verify;

pub use error::{Error, Result};
