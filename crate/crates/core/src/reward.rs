//! Shaped prober reward: leader-interaction term with a distance mask,
//! leader-distance penalty and action-smoothing penalty.

use serde::{Deserialize, Serialize};

use crate::dynamics::SwarmState;
use crate::geom::Vec2;

pub const WEIGHT_MLI: f64 = 2.0;
pub const WEIGHT_LD: f64 = 0.05;
pub const WEIGHT_AS: f64 = 0.05;

/// Slack on the "distance did not increase" comparison.
pub const MASK_EPS: f64 = 1e-6;
pub const MASK_PENALIZED: f64 = 0.25;

/// Share of interactions per agent; uniform before the first contact.
pub fn ratio(q: &[u64]) -> Vec<f64> {
    let total: u64 = q.iter().sum();
    if total == 0 {
        return vec![1.0 / q.len() as f64; q.len()];
    }
    q.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Softmax of the raw counts, max-shifted.
pub fn softmax(q: &[u64]) -> Vec<f64> {
    let max = q.iter().copied().max().unwrap_or(0);
    let exps: Vec<f64> = q.iter().map(|&c| (-((max - c) as f64)).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Average of [`ratio`] and [`softmax`].
pub fn mixture(q: &[u64]) -> Vec<f64> {
    ratio(q)
        .into_iter()
        .zip(softmax(q))
        .map(|(r, s)| 0.5 * (r + s))
        .collect()
}

/// `mask · (N · Q_L − 1)`, in `[−1, N−1]` for an unpenalized step.
pub fn mli(q: &[u64], mask: f64, leader_index: usize, n_agents: usize) -> f64 {
    mask * (n_agents as f64 * mixture(q)[leader_index] - 1.0)
}

/// 1 when the prober-leader distance did not grow, 1/4 otherwise.
pub fn distance_mask(prev_dist: f64, cur_dist: f64) -> f64 {
    if cur_dist <= prev_dist + MASK_EPS {
        1.0
    } else {
        MASK_PENALIZED
    }
}

pub fn leader_distance(state: &SwarmState) -> f64 {
    state.prober_leader_distance()
}

/// Magnitude of the change in commanded prober velocity.
pub fn action_smoothing(v_prev: Vec2, v_cur: Vec2) -> f64 {
    (v_prev - v_cur).norm()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_mli: f64,
    pub r_ld: f64,
    pub r_as: f64,
    pub r_total: f64,
    pub mask: f64,
    /// Mixture distribution over agents.
    pub mixture: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RewardInputs<'a> {
    pub q: &'a [u64],
    pub leader_index: usize,
    pub prev_leader_distance: f64,
    pub leader_distance: f64,
    pub prev_velocity: Vec2,
    pub velocity: Vec2,
}

pub fn total(inputs: &RewardInputs<'_>) -> RewardBreakdown {
    let n = inputs.q.len();
    let mask = distance_mask(inputs.prev_leader_distance, inputs.leader_distance);
    let mixture = mixture(inputs.q);
    let r_mli = mask * (n as f64 * mixture[inputs.leader_index] - 1.0);
    let r_ld = inputs.leader_distance;
    let r_as = action_smoothing(inputs.prev_velocity, inputs.velocity);
    RewardBreakdown {
        r_mli,
        r_ld,
        r_as,
        r_total: WEIGHT_MLI * r_mli - WEIGHT_LD * r_ld - WEIGHT_AS * r_as,
        mask,
        mixture,
    }
}
