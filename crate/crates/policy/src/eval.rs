//! Episode rollouts for evaluation, ratio datasets and identification.

use isli_core::env::ACTION_LEVELS;
use isli_core::estimator::{identify, Identification, RatioDataset, RatioRecord, RoleDensities};
use isli_core::rng::{derive_seed, keyed_rng, stream};
use isli_core::trace::EpisodeTrace;
use isli_core::{reward, ActionId, Env, EnvConfig};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::GraphBatch;
use crate::dist;
use crate::error::Result;
use crate::network::{Policy, PolicyState};

#[derive(Clone, Copy, Debug)]
pub enum Actor<'a> {
    /// Sample from the policy, or take the per-axis argmax when `greedy`.
    Policy { policy: &'a Policy, greedy: bool },
    /// Uniform over the action grid.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub n_agents: usize,
    pub leader_index: usize,
    pub episode_return: f64,
    pub length: usize,
    pub terminated: bool,
    /// `ratios[k - 1]` is the interaction ratio vector after step `k`.
    pub ratios: Vec<Vec<f64>>,
    pub actions: Vec<ActionId>,
    pub rewards: Vec<f64>,
    pub trace: Option<EpisodeTrace>,
}

/// Seed of held-out evaluation episode `episode` under `master`.
pub fn eval_episode_seed(master: u64, episode: u64) -> u64 {
    derive_seed(master, &[stream::EVAL, episode])
}

/// Run one episode to completion. `action_seed` drives sampling.
pub fn run_episode(
    actor: Actor,
    env_config: &EnvConfig,
    seed: u64,
    action_seed: u64,
    record_trace: bool,
) -> Result<EpisodeRecord> {
    let mut config = env_config.clone();
    config.seed = seed;
    let mut env = Env::new(config)?;
    let mut rng = keyed_rng(action_seed, &[stream::ACTION]);
    let mut state = match actor {
        Actor::Policy { policy, .. } => Some(PolicyState::zeros(&policy.config, 1)),
        Actor::Random => None,
    };
    let mut trace = record_trace.then(|| EpisodeTrace::new(env.state()));
    let mut rec = EpisodeRecord {
        seed,
        n_agents: env_config.n_agents,
        leader_index: env.state().leader_index,
        episode_return: 0.0,
        length: 0,
        terminated: false,
        ratios: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        trace: None,
    };
    let mut first = true;
    loop {
        let action = match (actor, state.as_mut()) {
            (Actor::Policy { policy, greedy }, Some(h)) => {
                let batch = GraphBatch::from_snapshots([env.observation()])?;
                let out = policy.step(&batch, &[first], h)?;
                *h = out.state;
                let row = out.logits.row(0);
                if greedy {
                    dist::greedy(row)
                } else {
                    dist::sample(row, &mut rng).0
                }
            }
            _ => ActionId::new(
                rng.gen_range(0..ACTION_LEVELS),
                rng.gen_range(0..ACTION_LEVELS),
            ),
        };
        first = false;
        let result = env.step(action)?;
        if let Some(t) = trace.as_mut() {
            t.push(env.state(), action, &result);
        }
        rec.ratios.push(reward::ratio(&result.info.q));
        rec.actions.push(action);
        rec.rewards.push(result.reward);
        rec.episode_return += result.reward;
        rec.length += 1;
        if result.done() {
            rec.terminated = result.terminated;
            break;
        }
    }
    rec.trace = trace;
    Ok(rec)
}

/// Per-step labeled ratio vectors of a set of episodes.
pub fn ratio_dataset<'a>(episodes: impl IntoIterator<Item = &'a EpisodeRecord>) -> RatioDataset {
    let mut records = Vec::new();
    for (e, ep) in episodes.into_iter().enumerate() {
        for (i, r) in ep.ratios.iter().enumerate() {
            records.push(RatioRecord {
                episode: e,
                k: i + 1,
                leader_index: ep.leader_index,
                ratios: r.clone(),
            });
        }
    }
    RatioDataset { records }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedEpisode {
    pub episode: usize,
    pub seed: u64,
    pub n_agents: usize,
    pub v_max: f64,
    pub leader_index: usize,
    pub estimate: usize,
    pub confidence: f64,
    pub correct: bool,
    pub episode_return: f64,
    pub length: usize,
    pub underflow_steps: usize,
    /// Posterior after each update, starting with the prior.
    pub timeline: Vec<Vec<f64>>,
}

pub fn identify_episode(
    episode: usize,
    rec: &EpisodeRecord,
    v_max: f64,
    densities: &RoleDensities,
    update_every: usize,
) -> Result<IdentifiedEpisode> {
    let Identification {
        timeline,
        posterior,
        underflow_steps,
    } = identify(rec.n_agents, &rec.ratios, densities, update_every)?;
    Ok(IdentifiedEpisode {
        episode,
        seed: rec.seed,
        n_agents: rec.n_agents,
        v_max,
        leader_index: rec.leader_index,
        estimate: posterior.estimate,
        confidence: posterior.confidence,
        correct: posterior.estimate == rec.leader_index,
        episode_return: rec.episode_return,
        length: rec.length,
        underflow_steps,
        timeline,
    })
}

/// Mean and standard error of the mean.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, f64::NAN);
    }
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
