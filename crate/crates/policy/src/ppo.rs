//! Recurrent PPO: rollout collection, GAE and clipped-surrogate updates.

use std::rc::Rc;
use std::time::Instant;

use isli_core::env::ACTION_LEVELS;
use isli_core::rng::{derive_seed, keyed_rng, stream};
use isli_core::{ActionId, EnvConfig, GraphSnapshot, VecEnv};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::autodiff::{Tape, Var};
use crate::batch::GraphBatch;
use crate::dist;
use crate::error::{PolicyError, Result};
use crate::network::{Policy, PolicyState};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub anneal_lr: bool,
    pub rollout_len: usize,
    pub num_envs: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
    pub total_timesteps: u64,
    /// Multiplies env rewards before advantage estimation.
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            ent_coef: 0.01,
            vf_coef: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr: 3e-4,
            anneal_lr: true,
            rollout_len: 128,
            num_envs: 64,
            epochs: 4,
            minibatches: 8,
            max_grad_norm: 0.5,
            total_timesteps: 1_000_000,
            reward_scale: 1.0,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.into()));
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.gamma > 0.0
            && self.gamma <= 1.0
            && self.gae_lambda > 0.0
            && self.gae_lambda <= 1.0)
        {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if self.rollout_len == 0 || self.num_envs == 0 || self.epochs == 0 || self.minibatches == 0
        {
            return bad("rollout_len, num_envs, epochs and minibatches must be positive");
        }
        if self.num_envs % self.minibatches != 0 {
            return bad("num_envs must be divisible by minibatches (minibatches split envs)");
        }
        if !(self.lr > 0.0 && self.max_grad_norm > 0.0 && self.reward_scale > 0.0) {
            return bad("lr, max_grad_norm and reward_scale must be positive");
        }
        if self.vf_coef < 0.0 || self.ent_coef < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.rollout_len * self.num_envs
    }

    pub fn num_updates(&self) -> u64 {
        (self.total_timesteps / self.batch_size() as u64).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStat {
    pub env: usize,
    pub episode_return: f64,
    pub length: usize,
}

/// `T` steps of `E` envs, time-major (`row = t * E + e`).
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub num_envs: usize,
    pub steps: usize,
    pub observations: Vec<GraphSnapshot>,
    /// Set on the first step of an episode.
    pub resets: Vec<bool>,
    pub actions: Vec<ActionId>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Raw env rewards.
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Critic value of the final observation on truncation, else 0.
    pub truncation_values: Vec<f64>,
    /// Recurrent state entering the segment.
    pub h0: PolicyState,
    /// Critic values of the observations following the segment.
    pub last_values: Vec<f64>,
    pub finished: Vec<EpisodeStat>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Vectorized envs plus the recurrent and sampling state carried across rollouts.
pub struct Collector {
    envs: VecEnv,
    observations: Vec<GraphSnapshot>,
    starts: Vec<bool>,
    state: PolicyState,
    rng: ChaCha8Rng,
    returns: Vec<f64>,
}

impl Collector {
    pub fn new(
        env_config: &EnvConfig,
        num_envs: usize,
        seed: u64,
        policy: &Policy,
    ) -> Result<Self> {
        let envs = VecEnv::new(
            env_config.clone(),
            num_envs,
            derive_seed(seed, &[stream::EPISODE]),
        )?;
        Ok(Self {
            observations: envs.observations(),
            envs,
            starts: vec![true; num_envs],
            state: PolicyState::zeros(&policy.config, num_envs),
            rng: keyed_rng(seed, &[stream::ACTION]),
            returns: vec![0.0; num_envs],
        })
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn collect(&mut self, policy: &Policy, steps: usize) -> Result<RolloutBatch> {
        let e_n = self.envs.len();
        let n = steps * e_n;
        let mut b = RolloutBatch {
            num_envs: e_n,
            steps,
            observations: Vec::with_capacity(n),
            resets: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            truncation_values: Vec::with_capacity(n),
            h0: self.state.clone(),
            last_values: Vec::new(),
            finished: Vec::new(),
        };
        for _ in 0..steps {
            let batch = GraphBatch::from_snapshots(&self.observations)?;
            let out = policy.step(&batch, &self.starts, &self.state)?;
            let mut actions = Vec::with_capacity(e_n);
            for e in 0..e_n {
                let (a, lp) = dist::sample(out.logits.row(e), &mut self.rng);
                actions.push(a);
                b.log_probs.push(lp);
            }
            let results = self.envs.step(&actions)?;
            b.values.extend_from_slice(&out.values);
            b.resets.extend_from_slice(&self.starts);
            b.actions.extend_from_slice(&actions);
            let next_obs: Vec<GraphSnapshot> =
                results.iter().map(|r| r.observation.clone()).collect();
            for (e, r) in results.into_iter().enumerate() {
                b.rewards.push(r.reward);
                b.dones.push(r.done());
                self.returns[e] += r.reward;
                let mut tv = 0.0;
                if r.truncated && !r.terminated {
                    let last = r
                        .info
                        .final_observation
                        .as_ref()
                        .ok_or(PolicyError::Empty("final observation"))?;
                    let one = GraphBatch::from_snapshots([last])?;
                    tv = policy.step(&one, &[false], &out.state.select(&[e]))?.values[0];
                }
                b.truncation_values.push(tv);
                if r.done() {
                    b.finished.push(EpisodeStat {
                        env: e,
                        episode_return: self.returns[e],
                        length: r.info.episode_length.unwrap_or(0),
                    });
                    self.returns[e] = 0.0;
                }
                self.starts[e] = r.done();
            }
            b.observations
                .append(&mut std::mem::replace(&mut self.observations, next_obs));
            self.state = out.state;
        }
        let batch = GraphBatch::from_snapshots(&self.observations)?;
        b.last_values = policy.step(&batch, &self.starts, &self.state)?.values;
        Ok(b)
    }
}

/// Generalized advantage estimation over time-major rows with `lanes`
/// envs. Returns `(advantages, returns)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let lanes = last_values.len();
    let n = rewards.len();
    assert!(lanes > 0 && n % lanes == 0 && values.len() == n && dones.len() == n);
    let steps = n / lanes;
    let mut adv = vec![0.0; n];
    for e in 0..lanes {
        let mut running = 0.0;
        for t in (0..steps).rev() {
            let r = t * lanes + e;
            let next_v = if t + 1 == steps {
                last_values[e]
            } else {
                values[r + lanes]
            };
            let keep = if dones[r] { 0.0 } else { 1.0 };
            let delta = rewards[r] + gamma * next_v * keep - values[r];
            running = delta + gamma * lambda * keep * running;
            adv[r] = running;
        }
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Rewards as seen by the critic: scaled, plus the discounted truncation value.
pub fn shaped_rewards(batch: &RolloutBatch, config: &PpoConfig) -> Vec<f64> {
    batch
        .rewards
        .iter()
        .zip(&batch.truncation_values)
        .map(|(r, tv)| config.reward_scale * r + config.gamma * tv)
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossMetrics {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Per-row targets for one loss evaluation.
pub struct LossInputs<'a> {
    pub actions: &'a [ActionId],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

/// Build the PPO loss on `tape` from network outputs. Returns the scalar
/// loss variable and the (value-only) metrics.
pub fn ppo_loss(
    tape: &mut Tape,
    logits: Var,
    values: Var,
    inputs: &LossInputs,
    config: &PpoConfig,
) -> (Var, LossMetrics) {
    let rows = inputs.actions.len();
    let ax: Rc<[usize]> = inputs.actions.iter().map(|a| a.x).collect();
    let ay: Rc<[usize]> = inputs.actions.iter().map(|a| a.y).collect();
    let lx = tape.slice_cols(logits, 0, ACTION_LEVELS);
    let ly = tape.slice_cols(logits, ACTION_LEVELS, ACTION_LEVELS);
    let lx = tape.log_softmax_rows(lx);
    let ly = tape.log_softmax_rows(ly);
    let px = tape.pick_cols(lx, ax);
    let py = tape.pick_cols(ly, ay);
    let logp = tape.add(px, py);

    let mut ent_terms = Vec::with_capacity(2);
    for l in [lx, ly] {
        let p = tape.exp(l);
        let pl = tape.mul(p, l);
        ent_terms.push(tape.group_sum_cols(pl, ACTION_LEVELS));
    }
    let neg_ent = tape.add(ent_terms[0], ent_terms[1]);
    let neg_ent = tape.mean(neg_ent);

    let old = tape.constant(Tensor::column(inputs.old_log_probs));
    let adv = tape.constant(Tensor::column(inputs.advantages));
    let log_ratio = tape.sub(logp, old);
    let ratio = tape.exp(log_ratio);
    let s1 = tape.mul(ratio, adv);
    let clipped = tape.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    let s2 = tape.mul(clipped, adv);
    let surr = tape.minimum(s1, s2);
    let pg = tape.mean(surr);
    let pg = tape.scale(pg, -1.0);

    let ret = tape.constant(Tensor::column(inputs.returns));
    let err = tape.sub(values, ret);
    let sq = tape.mul(err, err);
    let vl = tape.mean(sq);
    let vl = tape.scale(vl, 0.5);

    let v_term = tape.scale(vl, config.vf_coef);
    let e_term = tape.scale(neg_ent, config.ent_coef);
    let loss = tape.add(pg, v_term);
    let loss = tape.add(loss, e_term);

    let lr = tape.value(log_ratio);
    let mut kl = 0.0;
    let mut clipped_n = 0usize;
    for &x in &lr.data {
        kl += x.exp_m1() - x;
        if (x.exp() - 1.0).abs() > config.clip {
            clipped_n += 1;
        }
    }
    let metrics = LossMetrics {
        loss: tape.value(loss).item(),
        policy_loss: tape.value(pg).item(),
        value_loss: tape.value(vl).item(),
        entropy: -tape.value(neg_ent).item(),
        approx_kl: kl / rows as f64,
        clip_fraction: clipped_n as f64 / rows as f64,
    };
    (loss, metrics)
}

/// Rows of `batch` (time-major, `E` lanes) belonging to `envs`, time-major
/// over `envs.len()` lanes.
pub fn lane_rows(batch_envs: usize, steps: usize, envs: &[usize]) -> Vec<usize> {
    (0..steps)
        .flat_map(|t| envs.iter().map(move |&e| t * batch_envs + e))
        .collect()
}

/// Evaluate the loss on the given envs of a batch. With `grads` set, also
/// return parameter gradients.
pub fn minibatch_loss(
    policy: &Policy,
    batch: &RolloutBatch,
    envs: &[usize],
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
    grads: bool,
) -> Result<(LossMetrics, Option<Vec<Tensor>>)> {
    let rows = lane_rows(batch.num_envs, batch.steps, envs);
    let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<f64>>();
    let graphs = GraphBatch::from_snapshots(rows.iter().map(|&r| &batch.observations[r]))?;
    let resets: Vec<bool> = rows.iter().map(|&r| batch.resets[r]).collect();
    let actions: Vec<ActionId> = rows.iter().map(|&r| batch.actions[r]).collect();
    let (old, adv, ret) = (pick(&batch.log_probs), pick(advantages), pick(returns));
    let h0 = batch.h0.select(envs);

    let mut tape = Tape::new();
    let p = if grads {
        policy.params.bind(&mut tape)
    } else {
        policy.params.bind_constant(&mut tape)
    };
    let out = policy.forward(&mut tape, &p, &graphs, envs.len(), &resets, &h0)?;
    let inputs = LossInputs {
        actions: &actions,
        old_log_probs: &old,
        advantages: &adv,
        returns: &ret,
    };
    let (loss, metrics) = ppo_loss(&mut tape, out.logits, out.values, &inputs, config);
    if !metrics.loss.is_finite() {
        return Err(PolicyError::NonFinite("loss"));
    }
    let g = if grads {
        Some(tape.backward(loss))
    } else {
        None
    };
    Ok((metrics, g))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub update: u64,
    pub global_step: u64,
    /// Mean return of episodes finished during the rollout (empty if none).
    pub mean_return: Option<f64>,
    pub episodes: usize,
    pub lr: f64,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub explained_variance: f64,
    pub grad_norm: f64,
}

pub fn explained_variance(pred: &[f64], target: &[f64]) -> f64 {
    let var = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
    };
    let resid: Vec<f64> = target.iter().zip(pred).map(|(t, p)| t - p).collect();
    let vt = var(target);
    if vt == 0.0 {
        f64::NAN
    } else {
        1.0 - var(&resid) / vt
    }
}

pub fn normalize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    x.iter().map(|v| (v - m) / (sd + 1e-8)).collect()
}

/// Epochs of minibatch updates over one rollout. On a non-finite loss or
/// gradient the parameters and optimizer are restored and the error returned.
pub fn ppo_update(
    policy: &mut Policy,
    opt: &mut Adam,
    batch: &RolloutBatch,
    config: &PpoConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateMetrics> {
    let (adv, ret) = gae(
        &shaped_rewards(batch, config),
        &batch.values,
        &batch.dones,
        &batch.last_values,
        config.gamma,
        config.gae_lambda,
    );
    let adv = normalize(&adv);
    let saved: (ParamSet, Adam) = (policy.params.clone(), opt.clone());
    let chunk = batch.num_envs / config.minibatches.min(batch.num_envs);
    let mut order: Vec<usize> = (0..batch.num_envs).collect();
    let mut sums = LossMetrics::default();
    let mut grad_norm = 0.0;
    let mut count = 0usize;
    let result = (|| {
        for _ in 0..config.epochs {
            order.shuffle(rng);
            for envs in order.chunks(chunk) {
                let (m, g) = minibatch_loss(policy, batch, envs, &adv, &ret, config, true)?;
                let g = g.expect("gradients requested");
                if !g.iter().all(Tensor::is_finite) {
                    return Err(PolicyError::NonFinite("gradient"));
                }
                grad_norm += opt.step(&mut policy.params, &g, lr, Some(config.max_grad_norm));
                sums.loss += m.loss;
                sums.policy_loss += m.policy_loss;
                sums.value_loss += m.value_loss;
                sums.entropy += m.entropy;
                sums.approx_kl += m.approx_kl;
                sums.clip_fraction += m.clip_fraction;
                count += 1;
            }
        }
        if !policy.params.is_finite() {
            return Err(PolicyError::NonFinite("parameters"));
        }
        Ok(())
    })();
    if let Err(e) = result {
        policy.params = saved.0;
        *opt = saved.1;
        return Err(e);
    }
    let c = count as f64;
    let finished = &batch.finished;
    Ok(UpdateMetrics {
        update: 0,
        global_step: 0,
        mean_return: (!finished.is_empty()).then(|| {
            finished.iter().map(|s| s.episode_return).sum::<f64>() / finished.len() as f64
        }),
        episodes: finished.len(),
        lr,
        loss: sums.loss / c,
        policy_loss: sums.policy_loss / c,
        value_loss: sums.value_loss / c,
        entropy: sums.entropy / c,
        approx_kl: sums.approx_kl / c,
        clip_fraction: sums.clip_fraction / c,
        explained_variance: explained_variance(&batch.values, &ret),
        grad_norm: grad_norm / c,
    })
}

pub struct TrainOutcome {
    pub policy: Policy,
    pub metrics: Vec<UpdateMetrics>,
    /// Wall-clock seconds since the start, one per update.
    pub wall_times: Vec<f64>,
    /// First error that stopped training early.
    pub error: Option<PolicyError>,
}

/// Collect, estimate and update until `total_timesteps`. The callback runs
/// after every update (logging, checkpoints); its error stops training.
pub fn train<F>(
    config: &PpoConfig,
    env_config: &EnvConfig,
    mut policy: Policy,
    mut on_update: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&UpdateMetrics, &Policy) -> Result<()>,
{
    config.validate()?;
    let start = Instant::now();
    let mut collector = Collector::new(env_config, config.num_envs, config.seed, &policy)?;
    let mut opt = Adam::new(&policy.params);
    let mut rng = keyed_rng(config.seed, &[stream::SHUFFLE]);
    let updates = config.num_updates();
    let mut metrics = Vec::with_capacity(updates as usize);
    let mut wall_times = Vec::with_capacity(updates as usize);
    let mut error = None;
    for u in 1..=updates {
        let lr = if config.anneal_lr {
            config.lr * (1.0 - (u - 1) as f64 / updates as f64)
        } else {
            config.lr
        };
        let step = (|| {
            let batch = collector.collect(&policy, config.rollout_len)?;
            let mut m = ppo_update(&mut policy, &mut opt, &batch, config, lr, &mut rng)?;
            m.update = u;
            m.global_step = u * config.batch_size() as u64;
            Ok::<_, PolicyError>(m)
        })();
        match step.and_then(|m| on_update(&m, &policy).map(|_| m)) {
            Ok(m) => {
                metrics.push(m);
                wall_times.push(start.elapsed().as_secs_f64());
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    Ok(TrainOutcome {
        policy,
        metrics,
        wall_times,
        error,
    })
}

pub const METRICS_HEADER: [&str; 13] = [
    "update",
    "global_step",
    "mean_return",
    "episodes",
    "lr",
    "loss",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_fraction",
    "explained_variance",
    "grad_norm",
];

impl UpdateMetrics {
    pub fn csv_record(&self) -> Vec<String> {
        let f = |x: f64| format!("{x}");
        vec![
            self.update.to_string(),
            self.global_step.to_string(),
            self.mean_return.map(f).unwrap_or_default(),
            self.episodes.to_string(),
            f(self.lr),
            f(self.loss),
            f(self.policy_loss),
            f(self.value_loss),
            f(self.entropy),
            f(self.approx_kl),
            f(self.clip_fraction),
            f(self.explained_variance),
            f(self.grad_norm),
        ]
    }
}

pub fn write_metrics_csv<W: std::io::Write>(w: W, metrics: &[UpdateMetrics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for m in metrics {
        out.write_record(m.csv_record())?;
    }
    out.flush()?;
    Ok(())
}
