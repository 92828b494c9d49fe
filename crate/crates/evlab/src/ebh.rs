//! The e-BH procedure and its bookkeeping.
//!
//! Throughout, `G` hypotheses are indexed `1..=G`. Given an e-value vector
//! `E = (E_1, ..., E_G)` and a level `alpha`, e-BH rejects the hypotheses
//! with the `g*` largest e-values, where `g*` is the largest `g` such that
//! `g * E_(g) / G >= 1 / alpha` (`E_(g)` is the g-th largest entry). The
//! procedure is self-consistent: its output is exactly the largest set `R`
//! satisfying `E_g >= G / (alpha * |R|)` for every `g` in `R`, which is what
//! the enumeration oracle in the test suite checks against.
//!
//! e-BH is dual to Benjamini-Hochberg: running [`bh`] on the reciprocals
//! `1/E` (with `1/0 = inf` and `1/inf = 0`) at the same level rejects the
//! same set. Reciprocals of e-values are not p-values in general, so [`bh`]
//! accepts any nonnegative entries including values above one and infinity.
//!
//! The compound constructions close the loop: [`compound_from_rejection`]
//! turns any rejection set into the canonical compound e-value vector
//! `E_g = (G / alpha) * 1{g in R} / max(|R|, 1)`, and
//! [`compound_validity_mc`] estimates whether a randomized family of such
//! vectors satisfies the compound constraint (expected sum over true nulls
//! at most `G`).

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::{Error, Result};

/// A validated vector of e-values: non-empty, entries in `[0, +inf]`, no NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct EValueVector(Vec<f64>);

impl EValueVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("e-value vector must be non-empty".into()));
        }
        for (i, &e) in values.iter().enumerate() {
            if e.is_nan() {
                return Err(Error::Input(format!("e-value {} is NaN", i + 1)));
            }
            if e < 0.0 {
                return Err(Error::Input(format!("e-value {} is negative: {e}", i + 1)));
            }
        }
        Ok(Self(values))
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    #[must_use]
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Entry for hypothesis `g` (1-based).
    #[must_use]
    pub fn value(&self, g: usize) -> f64 {
        self.0[g - 1]
    }

    /// Entrywise reciprocals with the conventions `1/0 = inf`, `1/inf = 0`.
    ///
    /// IEEE division already implements both conventions.
    #[must_use]
    pub fn reciprocals(&self) -> Vec<f64> {
        self.0.iter().map(|&e| 1.0 / e).collect()
    }
}

/// Which hypotheses are true nulls, indexed `1..=G`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NullIndicator(Vec<bool>);

impl NullIndicator {
    pub fn new(is_null: Vec<bool>) -> Result<Self> {
        if is_null.is_empty() {
            return Err(Error::Input("null indicator must be non-empty".into()));
        }
        Ok(Self(is_null))
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// True if hypothesis `g` (1-based) is a true null.
    #[must_use]
    pub fn is_null(&self, g: usize) -> bool {
        self.0[g - 1]
    }

    #[must_use]
    pub fn null_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// A rejection set over hypotheses `1..=g_total`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectionSet {
    g_total: usize,
    members: BTreeSet<usize>,
}

impl RejectionSet {
    pub fn new(g_total: usize, members: BTreeSet<usize>) -> Result<Self> {
        if g_total == 0 {
            return Err(Error::Input("rejection set needs at least one hypothesis".into()));
        }
        if let Some(&bad) = members.iter().find(|&&m| m == 0 || m > g_total) {
            return Err(Error::Input(format!(
                "rejection member {bad} outside 1..={g_total}"
            )));
        }
        Ok(Self { g_total, members })
    }

    #[must_use]
    pub fn empty(g_total: usize) -> Self {
        Self { g_total, members: BTreeSet::new() }
    }

    #[must_use]
    pub fn g_total(&self) -> usize {
        self.g_total
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.members.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    #[must_use]
    pub fn contains(&self, g: usize) -> bool {
        self.members.contains(&g)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    #[must_use]
    pub fn to_vec(&self) -> Vec<usize> {
        self.members.iter().copied().collect()
    }

    /// Bitmask with bit `g - 1` set for each rejected hypothesis `g`.
    /// Only defined for `G <= 64`.
    pub fn bitmask(&self) -> Result<u64> {
        if self.g_total > 64 {
            return Err(Error::Input(format!(
                "bitmask export supports at most 64 hypotheses, got {}",
                self.g_total
            )));
        }
        Ok(self.members.iter().fold(0u64, |m, &g| m | (1u64 << (g - 1))))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// The e-value cutoff `G / (alpha * r)` a size-`r` rejection set must clear.
///
/// Exposed so that the procedure, the compound construction, and test
/// oracles all evaluate the *same floating-point expression*; the exact
/// round-trip `ebh(compound_from_rejection(R, a), a) == R` depends on it.
#[must_use]
pub fn ebh_threshold(g_total: usize, alpha: f64, r: usize) -> f64 {
    g_total as f64 / (alpha * r as f64)
}

/// The e-BH procedure at level `alpha`.
///
/// Returns the rejection set `{g : E_g >= E_(g*)}` where `g*` is the largest
/// rank whose order statistic clears [`ebh_threshold`]; empty if no rank
/// qualifies. Infinite e-values always reject themselves. `G = 1` is allowed.
pub fn ebh(evalues: &EValueVector, alpha: f64) -> Result<RejectionSet> {
    check_alpha(alpha)?;
    let g_total = evalues.len();
    let mut sorted = evalues.values().to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut g_star = 0;
    for r in 1..=g_total {
        if sorted[r - 1] >= ebh_threshold(g_total, alpha, r) {
            g_star = r;
        }
    }
    if g_star == 0 {
        return Ok(RejectionSet::empty(g_total));
    }
    let cutoff = sorted[g_star - 1];
    let members = evalues
        .values()
        .iter()
        .enumerate()
        .filter(|&(_, &e)| e >= cutoff)
        .map(|(i, _)| i + 1)
        .collect();
    RejectionSet::new(g_total, members)
}

/// The Benjamini-Hochberg step-up procedure at level `alpha`.
///
/// Entries must be nonnegative and non-NaN; values above one and `inf` are
/// allowed so that reciprocal e-values qualify as inputs. Rejects
/// `{g : p_g <= p_(k*)}` for the largest `k*` with `p_(k*) <= k* * alpha / G`.
pub fn bh(pvalues: &[f64], alpha: f64) -> Result<RejectionSet> {
    check_alpha(alpha)?;
    if pvalues.is_empty() {
        return Err(Error::Input("p-value vector must be non-empty".into()));
    }
    for (i, &p) in pvalues.iter().enumerate() {
        if p.is_nan() {
            return Err(Error::Input(format!("p-value {} is NaN", i + 1)));
        }
        if p < 0.0 {
            return Err(Error::Input(format!("p-value {} is negative: {p}", i + 1)));
        }
    }
    let g_total = pvalues.len();
    let mut sorted = pvalues.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);

    let mut k_star = 0;
    for k in 1..=g_total {
        if sorted[k - 1] <= alpha * k as f64 / g_total as f64 {
            k_star = k;
        }
    }
    if k_star == 0 {
        return Ok(RejectionSet::empty(g_total));
    }
    let cutoff = sorted[k_star - 1];
    let members = pvalues
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p <= cutoff)
        .map(|(i, _)| i + 1)
        .collect();
    RejectionSet::new(g_total, members)
}

/// False discovery proportion of `rejections` against ground truth: the
/// number of rejected true nulls over `max(|R|, 1)`.
pub fn fdp(rejections: &RejectionSet, truth: &NullIndicator) -> Result<f64> {
    if truth.len() != rejections.g_total() {
        return Err(Error::Input(format!(
            "truth has {} hypotheses but rejection set has {}",
            truth.len(),
            rejections.g_total()
        )));
    }
    let false_discoveries = rejections.iter().filter(|&g| truth.is_null(g)).count();
    Ok(false_discoveries as f64 / rejections.len().max(1) as f64)
}

/// The canonical compound e-values certifying a rejection set:
/// `E_g = (G / alpha) * 1{g in R} / max(|R|, 1)`.
///
/// When `R` came from any procedure controlling FDR at `alpha`, the vector is
/// compound valid, and running e-BH on it recovers `R` exactly.
pub fn compound_from_rejection(rejections: &RejectionSet, alpha: f64) -> Result<EValueVector> {
    check_alpha(alpha)?;
    let g_total = rejections.g_total();
    let member_value = ebh_threshold(g_total, alpha, rejections.len().max(1));
    let values = (1..=g_total)
        .map(|g| if rejections.contains(g) { member_value } else { 0.0 })
        .collect();
    EValueVector::new(values)
}

/// Monte Carlo estimate of compound validity.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CompoundValidityEstimate {
    pub trials: usize,
    /// `G`, the bound the expected null sum must not exceed.
    pub bound: f64,
    /// Sample mean of `sum_{g null} E_g` across trials.
    pub mean_sum: f64,
    /// Standard error of the mean.
    pub std_error: f64,
    /// `mean_sum <= bound + 3 * std_error`.
    pub pass: bool,
}

/// Estimate `E[sum over true nulls of E_g]` for a randomized e-value family
/// and compare it to the compound bound `G`.
///
/// The sampler is called once per trial with a deterministically seeded RNG
/// and must return vectors of a fixed dimension together with their ground
/// truth. Requires `trials >= 100`; passes when the sample mean is at most
/// `G + 3 * SE`, so an exactly tight family (zero variance at the bound)
/// still passes.
pub fn compound_validity_mc<F>(
    mut sampler: F,
    trials: usize,
    seed: u64,
) -> Result<CompoundValidityEstimate>
where
    F: FnMut(&mut ChaCha12Rng) -> Result<(EValueVector, NullIndicator)>,
{
    if trials < 100 {
        return Err(Error::Parameter(format!(
            "compound validity estimation needs at least 100 trials, got {trials}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut g_total = None;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for t in 0..trials {
        let (evalues, truth) = sampler(&mut rng)?;
        match g_total {
            None => {
                if truth.len() != evalues.len() {
                    return Err(Error::Input(format!(
                        "sampler returned {} e-values but {} truth entries",
                        evalues.len(),
                        truth.len()
                    )));
                }
                g_total = Some(evalues.len());
            }
            Some(g) => {
                if evalues.len() != g || truth.len() != g {
                    return Err(Error::Input(format!(
                        "sampler changed dimension from {g} at trial {t}"
                    )));
                }
            }
        }
        let null_sum: f64 = (1..=evalues.len())
            .filter(|&g| truth.is_null(g))
            .map(|g| evalues.value(g))
            .sum();
        // Welford update.
        let delta = null_sum - mean;
        mean += delta / (t + 1) as f64;
        m2 += delta * (null_sum - mean);
    }
    let bound = g_total.expect("trials >= 100") as f64;
    let variance = m2 / (trials - 1) as f64;
    let std_error = (variance / trials as f64).sqrt();
    Ok(CompoundValidityEstimate {
        trials,
        bound,
        mean_sum: mean,
        std_error,
        pass: mean <= bound + 3.0 * std_error,
    })
}
