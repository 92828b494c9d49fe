//! Shared oracles for the integration suites: definition-chasing
//! reimplementations that the library must agree with exactly.

use std::collections::BTreeSet;

use evlab::ebh::RejectionSet;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// e-BH by exhaustive subset enumeration.
///
/// A set S is self-consistent when every member's e-value clears the
/// threshold `G / (alpha |S|)`. Self-consistent sets are closed under union,
/// so the union of all of them is the unique maximal one, and that maximal
/// set is what the step-up procedure rejects. Only feasible for small G.
pub fn ebh_by_enumeration(evalues: &[f64], alpha: f64) -> RejectionSet {
    let g = evalues.len();
    assert!(g <= 16, "enumeration oracle is exponential in G");
    let mut best: BTreeSet<usize> = BTreeSet::new();
    for mask in 1u32..(1 << g) {
        let size = mask.count_ones() as usize;
        if size <= best.len() {
            continue;
        }
        let threshold = g as f64 / (alpha * size as f64);
        let consistent = (0..g)
            .filter(|i| mask & (1 << i) != 0)
            .all(|i| evalues[i] >= threshold);
        if consistent {
            best = (0..g).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).collect();
        }
    }
    RejectionSet::new(g, best).expect("oracle set is in range")
}

/// Random e-value vectors mixing zeros, infinities, and log-normal bulk.
pub fn random_evalues(rng: &mut ChaCha12Rng, g: usize) -> Vec<f64> {
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
