//! Shared observation types for sessions and the simulation lab.

/// Covariate attached to one global tick.
///
/// All hypotheses observe the same tick, so the covariate is shared; families
/// that ignore covariates accept [`Covariate::Absent`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Covariate {
    Absent,
    Real(f64),
    /// Group membership, `0` or `1` (the NB GLM design).
    Binary(u8),
}

impl Covariate {
    /// Group index for binary covariates.
    pub fn group(&self) -> Option<u8> {
        match self {
            Covariate::Binary(b) => Some(*b),
            _ => None,
        }
    }
}

/// One global tick: a shared covariate and one response per hypothesis.
///
/// Counts are carried as exact `f64` integers so that every family shares a
/// single response type; count-based families validate integrality on entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Covariate,
    pub y: Vec<f64>,
}

impl Observation {
    #[must_use]
    pub fn new(x: Covariate, y: Vec<f64>) -> Self {
        Self { x, y }
    }

    /// Covariate-free tick.
    #[must_use]
    pub fn plain(y: Vec<f64>) -> Self {
        Self { x: Covariate::Absent, y }
    }
}
