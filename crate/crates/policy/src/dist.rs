//! Factorized categorical policy over the two action axes.

use isli_core::env::ACTION_LEVELS;
use isli_core::ActionId;
use rand::Rng;

/// Log-probabilities of one head's logits (max-shifted).
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

fn split(row: &[f64]) -> (&[f64], &[f64]) {
    assert_eq!(row.len(), 2 * ACTION_LEVELS, "expected two 13-way heads");
    row.split_at(ACTION_LEVELS)
}

/// Joint log-probability of `action` under one logits row.
pub fn log_prob(row: &[f64], action: ActionId) -> f64 {
    let (x, y) = split(row);
    log_softmax(x)[action.x] + log_softmax(y)[action.y]
}

/// Sum of the two heads' entropies.
pub fn entropy(row: &[f64]) -> f64 {
    let (x, y) = split(row);
    [x, y]
        .iter()
        .map(|h| -log_softmax(h).iter().map(|lp| lp.exp() * lp).sum::<f64>())
        .sum()
}

pub fn sample<R: Rng>(row: &[f64], rng: &mut R) -> (ActionId, f64) {
    let (x, y) = split(row);
    let (lx, ly) = (log_softmax(x), log_softmax(y));
    let (ix, iy) = (sample_index(&lx, rng), sample_index(&ly, rng));
    (ActionId::new(ix, iy), lx[ix] + ly[iy])
}

/// Per-head argmax.
pub fn greedy(row: &[f64]) -> ActionId {
    let (x, y) = split(row);
    ActionId::new(argmax(x), argmax(y))
}
