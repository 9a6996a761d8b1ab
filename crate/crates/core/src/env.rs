//! Episode engine: seeded resets, discrete prober actions, termination and
//! truncation, and a vectorized wrapper with auto-reset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, FlockParams, SwarmState};
use crate::error::{CoreError, Result};
use crate::geom::{centroid, Vec2};
use crate::observation::{build_snapshot, update_interactions, GraphSnapshot, InteractionLedger};
use crate::reward::{self, RewardBreakdown, RewardInputs};
use crate::rng::{derive_seed, keyed_rng, stream};

/// Number of velocity levels per axis.
pub const ACTION_LEVELS: usize = 13;

/// Per-axis prober velocity levels, m/s.
pub const LEVEL_VELOCITIES: [f64; ACTION_LEVELS] = [
    -0.30, -0.25, -0.20, -0.15, -0.10, -0.05, 0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30,
];

const SPAWN_ATTEMPTS: usize = 1000;

/// Pair of per-axis level indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionId {
    pub x: usize,
    pub y: usize,
}

impl ActionId {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Row-major id in `0..169`.
    pub fn flat(self) -> usize {
        self.x * ACTION_LEVELS + self.y
    }

    pub fn from_flat(id: usize) -> Result<Self> {
        if id >= ACTION_LEVELS * ACTION_LEVELS {
            return Err(CoreError::ActionOutOfRange(id));
        }
        Ok(Self::new(id / ACTION_LEVELS, id % ACTION_LEVELS))
    }
}

pub fn decode_action(id: ActionId) -> Result<Vec2> {
    let level = |i: usize| {
        LEVEL_VELOCITIES
            .get(i)
            .copied()
            .ok_or(CoreError::ActionOutOfRange(i))
    };
    Ok(Vec2::new(level(id.x)?, level(id.y)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_agents: usize,
    /// Step limit K̄.
    pub max_steps: usize,
    /// Prober-to-centroid distance that terminates the episode.
    pub term_distance: f64,
    pub swarm_radius: f64,
    pub prober_annulus: [f64; 2],
    pub goal_annulus: [f64; 2],
    pub goal_tolerance: f64,
    /// Normalization length for node positions; defaults to `term_distance`.
    pub norm_distance: Option<f64>,
    pub seed: u64,
    pub flock: FlockParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_agents: 15,
            max_steps: 512,
            term_distance: 5.0,
            swarm_radius: 1.5,
            prober_annulus: [2.0, 4.0],
            goal_annulus: [8.0, 12.0],
            goal_tolerance: 0.3,
            norm_distance: None,
            seed: 0,
            flock: FlockParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn v_max(&self) -> f64 {
        self.flock.v_max
    }

    pub fn with_agents(mut self, n: usize) -> Self {
        self.n_agents = n;
        self
    }

    pub fn with_v_max(mut self, v: f64) -> Self {
        self.flock.v_max = v;
        self
    }

    pub fn norm_length(&self) -> f64 {
        self.norm_distance.unwrap_or(self.term_distance)
    }

    pub fn validate(&self) -> Result<()> {
        self.flock.validate()?;
        let fail = |msg: String| Err(CoreError::InvalidConfig(msg));
        if self.n_agents < 2 {
            return fail(format!(
                "n_agents must be at least 2, got {}",
                self.n_agents
            ));
        }
        if self.max_steps < 1 {
            return fail("max_steps must be at least 1".into());
        }
        if !(self.term_distance > self.flock.prober_radius) {
            return fail("term_distance must exceed the prober radius".into());
        }
        let annulus_ok = |a: [f64; 2]| a[0] >= 0.0 && a[0] <= a[1] && a[1].is_finite();
        if !(self.swarm_radius > 0.0
            && annulus_ok(self.prober_annulus)
            && annulus_ok(self.goal_annulus))
        {
            return fail("spawn geometry must be non-negative with ordered annuli".into());
        }
        if !(self.goal_tolerance >= 0.0 && self.norm_length() > 0.0) {
            return fail("goal_tolerance and norm_distance must be positive".into());
        }
        Ok(())
    }
}

fn point_in_annulus<R: Rng>(rng: &mut R, center: Vec2, range: [f64; 2]) -> Vec2 {
    let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let radius = if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    };
    center + radius * Vec2::from_angle(angle)
}

/// Sample a fresh episode from `seed`.
pub fn reset(
    config: &EnvConfig,
    seed: u64,
) -> Result<(SwarmState, GraphSnapshot, InteractionLedger)> {
    config.validate()?;
    let mut rng = keyed_rng(seed, &[stream::EPISODE]);
    let n = config.n_agents;
    let min_gap = config.flock.distance_floor;

    let mut positions: Vec<Vec2> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..SPAWN_ATTEMPTS {
            let r = config.swarm_radius * rng.gen::<f64>().sqrt();
            let p =
                r * Vec2::from_angle(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
            if positions.iter().all(|&q| (q - p).norm() >= min_gap) {
                positions.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(CoreError::SpawnRejected {
                n_agents: n,
                attempts: SPAWN_ATTEMPTS,
            });
        }
    }
    let headings: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
        .collect();
    let leader_index = rng.gen_range(0..n);
    let center = centroid(&positions);
    let prober_position = point_in_annulus(&mut rng, center, config.prober_annulus);
    let goal_position = point_in_annulus(&mut rng, center, config.goal_annulus);

    let state = SwarmState {
        positions,
        headings,
        prober_position,
        prober_velocity: Vec2::ZERO,
        leader_index,
        goal_position,
        leader_integral: Vec2::ZERO,
        sim_time: 0.0,
    };
    let ledger = InteractionLedger::new(&state);
    let obs = build_snapshot(&state, &ledger, &config.flock, config.norm_length(), 0);
    Ok((state, obs, ledger))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub leader_index: usize,
    pub q: Vec<u64>,
    pub reward: RewardBreakdown,
    /// Terminal observation when the vectorized wrapper auto-reset this env.
    pub final_observation: Option<GraphSnapshot>,
    /// Set on the last step of an episode.
    pub episode_return: Option<f64>,
    pub episode_length: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: GraphSnapshot,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Output of [`env_step`]: the successor state and ledger plus the step result.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: SwarmState,
    pub ledger: InteractionLedger,
    pub result: StepResult,
}

/// Advance one step from `(state, ledger)` at step index `k`.
pub fn env_step(
    state: &SwarmState,
    ledger: &InteractionLedger,
    config: &EnvConfig,
    action: ActionId,
    k: usize,
) -> Result<Transition> {
    if k >= config.max_steps {
        return Err(CoreError::StepLimit {
            k,
            max_steps: config.max_steps,
        });
    }
    let velocity = decode_action(action)?;
    let prev_leader_distance = state.prober_leader_distance();
    let next = dynamics::step(state, &config.flock, velocity)?;

    let mut ledger = update_interactions(ledger, &next, &config.flock);
    let breakdown = reward::total(&RewardInputs {
        q: &ledger.q,
        leader_index: next.leader_index,
        prev_leader_distance,
        leader_distance: next.prober_leader_distance(),
        prev_velocity: state.prober_velocity,
        velocity,
    });

    let terminated = (next.prober_position - next.swarm_centroid()).norm() > config.term_distance;
    let goal_reached =
        (next.leader_position() - next.goal_position).norm() <= config.goal_tolerance;
    let truncated = !terminated && (k + 1 == config.max_steps || goal_reached);

    let observation = build_snapshot(&next, &ledger, &config.flock, config.norm_length(), k + 1);
    ledger.advance_positions(&next);

    let result = StepResult {
        observation,
        reward: breakdown.r_total,
        terminated,
        truncated,
        info: StepInfo {
            leader_index: next.leader_index,
            q: ledger.q.clone(),
            reward: breakdown,
            final_observation: None,
            episode_return: None,
            episode_length: None,
        },
    };
    Ok(Transition {
        state: next,
        ledger,
        result,
    })
}

/// Single environment instance.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    state: SwarmState,
    ledger: InteractionLedger,
    observation: GraphSnapshot,
    k: usize,
    done: bool,
    episode_return: f64,
}

impl Env {
    /// Build and reset with `config.seed`.
    pub fn new(config: EnvConfig) -> Result<Self> {
        let seed = config.seed;
        let (state, observation, ledger) = reset(&config, seed)?;
        Ok(Self {
            config,
            state,
            ledger,
            observation,
            k: 0,
            done: false,
            episode_return: 0.0,
        })
    }

    pub fn reset(&mut self, seed: u64) -> Result<GraphSnapshot> {
        let (state, observation, ledger) = reset(&self.config, seed)?;
        self.state = state;
        self.ledger = ledger;
        self.observation = observation.clone();
        self.k = 0;
        self.done = false;
        self.episode_return = 0.0;
        Ok(observation)
    }

    pub fn step(&mut self, action: ActionId) -> Result<StepResult> {
        if self.done {
            return Err(CoreError::EpisodeFinished);
        }
        let Transition {
            state,
            ledger,
            mut result,
        } = env_step(&self.state, &self.ledger, &self.config, action, self.k)?;
        self.state = state;
        self.ledger = ledger;
        self.k += 1;
        self.episode_return += result.reward;
        self.observation = result.observation.clone();
        if result.done() {
            self.done = true;
            result.info.episode_return = Some(self.episode_return);
            result.info.episode_length = Some(self.k);
        }
        Ok(result)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &SwarmState {
        &self.state
    }

    /// Teleport or otherwise edit the world; the ledger is left untouched.
    pub fn state_mut(&mut self) -> &mut SwarmState {
        &mut self.state
    }

    pub fn ledger(&self) -> &InteractionLedger {
        &self.ledger
    }

    pub fn observation(&self) -> &GraphSnapshot {
        &self.observation
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}

/// Seed of episode `episode` of env `env_index` under `master`.
pub fn episode_seed(master: u64, env_index: usize, episode: u64) -> u64 {
    derive_seed(master, &[stream::EPISODE, env_index as u64, episode])
}

/// Batch of independent environments with auto-reset.
#[derive(Clone, Debug)]
pub struct VecEnv {
    envs: Vec<Env>,
    master_seed: u64,
    episodes: Vec<u64>,
}

impl VecEnv {
    pub fn new(config: EnvConfig, num_envs: usize, master_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut envs = Vec::with_capacity(num_envs);
        for e in 0..num_envs {
            let mut env_config = config.clone();
            env_config.seed = episode_seed(master_seed, e, 0);
            envs.push(Env::new(env_config)?);
        }
        Ok(Self {
            envs,
            master_seed,
            episodes: vec![0; num_envs],
        })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    pub fn observations(&self) -> Vec<GraphSnapshot> {
        self.envs.iter().map(|e| e.observation().clone()).collect()
    }

    /// Step every env; finished envs are reset in place and their terminal
    /// observation moved to `info.final_observation`.
    pub fn step(&mut self, actions: &[ActionId]) -> Result<Vec<StepResult>> {
        if actions.len() != self.envs.len() {
            return Err(CoreError::BatchMismatch {
                expected: self.envs.len(),
                got: actions.len(),
            });
        }
        let mut out = Vec::with_capacity(actions.len());
        for (e, (env, &action)) in self.envs.iter_mut().zip(actions).enumerate() {
            let mut result = env.step(action)?;
            if result.done() {
                self.episodes[e] += 1;
                let fresh = env.reset(episode_seed(self.master_seed, e, self.episodes[e]))?;
                result.info.final_observation =
                    Some(std::mem::replace(&mut result.observation, fresh));
            }
            out.push(result);
        }
        Ok(out)
    }
}
