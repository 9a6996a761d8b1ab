//! Ground-truth swarm, leader and prober dynamics.
//!
//! Followers obey overdamped boid-like dynamics driven by the negative
//! gradient of a flocking energy (cohesion + alignment + separation). The
//! cohesion and alignment energies steer headings only: their distance
//! dependence is frozen when differentiating, so the only positional energy
//! force is separation. The leader is velocity-controlled toward the goal and
//! does not respond to the energy. The prober moves with its commanded
//! velocity minus the reaction of the repulsive interaction forces it exerts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geom::{wrap_angle, Vec2};

/// Largest admissible magnitude of each prober velocity component (m/s).
pub const PROBER_SPEED_LIMIT: f64 = 0.3;

const DIRECTION_EPS: f64 = 1e-12;

/// Flocking, leader-control and sensing parameters (SI units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlockParams {
    /// Follower cruise speed along the heading.
    pub v_max: f64,
    pub d_coh: f64,
    pub d_al: f64,
    pub d_sep: f64,
    pub w_coh: f64,
    pub w_al: f64,
    pub w_sep: f64,
    /// Shape exponent of the alignment and separation wells.
    pub alpha: f64,
    /// Weight of edges leaving the leader.
    pub w_leader: f64,
    /// Weight of edges leaving a follower. Part of the graph model only; the
    /// follower-follower term of the cohesion displacement is an unweighted sum.
    pub w_follower: f64,
    pub k_p: f64,
    pub k_i: f64,
    pub k_la: f64,
    /// Sensing and interaction radius of the prober.
    pub prober_radius: f64,
    pub dt: f64,
    /// Floor applied to distances inside 1/d and 1/d² terms.
    pub distance_floor: f64,
    /// Saturate the leader's commanded speed at `v_max`.
    pub cap_leader_speed: bool,
}

impl Default for FlockParams {
    fn default() -> Self {
        Self {
            v_max: 0.3,
            d_coh: 2.0,
            d_al: 1.0,
            d_sep: 0.35,
            w_coh: 1.0,
            w_al: 1.0,
            w_sep: 2.0,
            alpha: 2.0,
            w_leader: 5.0,
            w_follower: 1.0,
            k_p: 0.5,
            k_i: 0.01,
            k_la: 0.5,
            prober_radius: 0.5,
            dt: 0.05,
            distance_floor: 0.05,
            cap_leader_speed: true,
        }
    }
}

impl FlockParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.v_max,
            self.d_coh,
            self.d_al,
            self.d_sep,
            self.w_coh,
            self.w_al,
            self.w_sep,
            self.alpha,
            self.w_leader,
            self.w_follower,
            self.k_p,
            self.k_i,
            self.k_la,
            self.prober_radius,
            self.dt,
            self.distance_floor,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "flock parameters must be finite".into(),
            ));
        }
        let fail = |msg: &str| Err(CoreError::InvalidConfig(msg.to_string()));
        if self.w_leader <= self.w_follower {
            return fail("w_leader must exceed w_follower");
        }
        if !(self.d_sep > 0.0 && self.d_sep < self.d_al && self.d_al <= self.d_coh) {
            return fail("radii must satisfy 0 < d_sep < d_al <= d_coh");
        }
        if self.alpha < 2.0 {
            return fail("alpha must be at least 2");
        }
        if self.dt <= 0.0 || self.prober_radius <= 0.0 || self.distance_floor <= 0.0 {
            return fail("dt, prober_radius and distance_floor must be positive");
        }
        if self.v_max < 0.0 {
            return fail("v_max must be non-negative");
        }
        Ok(())
    }

    /// Parse a flat `key = value` config (TOML subset). Missing keys keep defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let params: FlockParams = toml::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("flat scalar struct always serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_config_string())?;
        Ok(())
    }
}

/// Continuous world state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub positions: Vec<Vec2>,
    pub headings: Vec<f64>,
    pub prober_position: Vec2,
    pub prober_velocity: Vec2,
    pub leader_index: usize,
    pub goal_position: Vec2,
    /// Running integral of the leader's goal error, m·s.
    pub leader_integral: Vec2,
    pub sim_time: f64,
}

impl SwarmState {
    pub fn n_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn leader_position(&self) -> Vec2 {
        self.positions[self.leader_index]
    }

    pub fn heading_vector(&self, i: usize) -> Vec2 {
        Vec2::from_angle(self.headings[i])
    }

    pub fn swarm_centroid(&self) -> Vec2 {
        crate::geom::centroid(&self.positions)
    }

    pub fn prober_leader_distance(&self) -> f64 {
        (self.prober_position - self.leader_position()).norm()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n < 2 || self.headings.len() != n {
            return Err(CoreError::InvalidConfig(format!(
                "state needs at least 2 agents with one heading each (got {n} positions, {} headings)",
                self.headings.len()
            )));
        }
        if self.leader_index >= n {
            return Err(CoreError::InvalidConfig(format!(
                "leader index {} out of range for {n} agents",
                self.leader_index
            )));
        }
        let finite = self.positions.iter().all(|p| p.is_finite())
            && self.headings.iter().all(|h| h.is_finite())
            && self.prober_position.is_finite()
            && self.prober_velocity.is_finite()
            && self.goal_position.is_finite()
            && self.leader_integral.is_finite()
            && self.sim_time.is_finite();
        if !finite {
            return Err(CoreError::NonFinite("swarm state"));
        }
        Ok(())
    }
}

/// Weighted mean displacement from follower `i` toward its in-range neighbours
/// and, with weight `w_leader`, toward the leader regardless of distance.
pub fn cohesion_displacement(state: &SwarmState, params: &FlockParams, i: usize) -> Result<Vec2> {
    let leader = state.leader_index;
    if i == leader {
        return Err(CoreError::NotAFollower(i));
    }
    let pi = state.positions[i];
    let mut sum = Vec2::ZERO;
    let mut count = 0usize;
    for (j, &pj) in state.positions.iter().enumerate() {
        if j == i || j == leader {
            continue;
        }
        let rel = pj - pi;
        if rel.norm() < params.d_coh {
            sum += rel;
            count += 1;
        }
    }
    let to_leader = state.positions[leader] - pi;
    Ok((sum + params.w_leader * to_leader) / (count as f64 + params.w_leader))
}

/// Unit cohesion direction; `Ok(None)` when the displacement vanishes.
pub fn cohesion_direction(
    state: &SwarmState,
    params: &FlockParams,
    i: usize,
) -> Result<Option<Vec2>> {
    Ok(cohesion_displacement(state, params, i)?.normalized(DIRECTION_EPS))
}

/// Cohesion directions of all agents (`None` for the leader and degenerate cases).
pub fn cohesion_directions(state: &SwarmState, params: &FlockParams) -> Vec<Option<Vec2>> {
    (0..state.n_agents())
        .map(|i| {
            if i == state.leader_index {
                None
            } else {
                cohesion_direction(state, params, i).ok().flatten()
            }
        })
        .collect()
}

fn align_weight(d: f64, params: &FlockParams) -> f64 {
    let r = d / params.d_al;
    if r < 1.0 {
        params.w_al / params.alpha * (1.0 - r).powf(params.alpha)
    } else {
        0.0
    }
}

fn separate_energy(d: f64, params: &FlockParams) -> f64 {
    let r = d / params.d_sep;
    if r < 1.0 {
        params.w_sep / params.alpha * (1.0 - r).powf(params.alpha)
    } else {
        0.0
    }
}

/// Alignment energy over unordered agent pairs.
pub fn energy_align(state: &SwarmState, params: &FlockParams) -> f64 {
    let n = state.n_agents();
    let mut e = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (state.positions[i] - state.positions[j]).norm();
            let w = align_weight(d, params);
            if w > 0.0 {
                let mis = 1.0 - state.heading_vector(i).dot(state.heading_vector(j));
                e += w * mis * mis;
            }
        }
    }
    e
}

/// Separation energy over unordered agent pairs.
pub fn energy_separate(state: &SwarmState, params: &FlockParams) -> f64 {
    let n = state.n_agents();
    let mut e = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            e += separate_energy((state.positions[i] - state.positions[j]).norm(), params);
        }
    }
    e
}

/// Cohesion energy with externally supplied (frozen) unit directions.
pub fn energy_cohere_with(state: &SwarmState, params: &FlockParams, dirs: &[Option<Vec2>]) -> f64 {
    dirs.iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|u| (i, u)))
        .map(|(i, u)| {
            let mis = 1.0 - u.dot(state.heading_vector(i));
            0.5 * params.w_coh * mis * mis
        })
        .sum()
}

/// Cohesion energy summed over followers.
pub fn energy_cohere(state: &SwarmState, params: &FlockParams) -> f64 {
    energy_cohere_with(state, params, &cohesion_directions(state, params))
}

pub fn energy_total(state: &SwarmState, params: &FlockParams) -> f64 {
    energy_align(state, params) + energy_separate(state, params) + energy_cohere(state, params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyGradients {
    /// −∂E/∂p_i. Only separation contributes.
    pub forces: Vec<Vec2>,
    /// −∂E/∂θ_i with cohesion directions and pair distances held fixed.
    pub torques: Vec<f64>,
}

pub fn energy_gradients(state: &SwarmState, params: &FlockParams) -> EnergyGradients {
    let n = state.n_agents();
    let mut forces = vec![Vec2::ZERO; n];
    let mut torques = vec![0.0; n];

    for i in 0..n {
        for j in (i + 1)..n {
            let rel = state.positions[i] - state.positions[j];
            let d = rel.norm();

            let w = align_weight(d, params);
            if w > 0.0 {
                let delta = state.headings[i] - state.headings[j];
                let g = 2.0 * w * (1.0 - delta.cos()) * delta.sin();
                torques[i] -= g;
                torques[j] += g;
            }

            let r = d / params.d_sep;
            if r < 1.0 {
                let mag = params.w_sep * (1.0 - r).powf(params.alpha - 1.0) / params.d_sep;
                let push = rel * (mag / d.max(params.distance_floor));
                forces[i] += push;
                forces[j] -= push;
            }
        }
    }

    for (i, dir) in cohesion_directions(state, params).into_iter().enumerate() {
        if let Some(u) = dir {
            let n_i = state.heading_vector(i);
            torques[i] += params.w_coh * (1.0 - u.dot(n_i)) * u.dot(n_i.perp());
        }
    }

    EnergyGradients { forces, torques }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionForces {
    pub per_agent: Vec<Vec2>,
    /// Reaction on the prober, the negated sum of `per_agent`.
    pub prober_reaction: Vec2,
}

/// Repulsive prober forces on agents in `0 < d <= prober_radius`, magnitude 1/d.
pub fn interaction_forces(state: &SwarmState, params: &FlockParams) -> InteractionForces {
    let per_agent: Vec<Vec2> = state
        .positions
        .iter()
        .map(|&p| {
            let rel = p - state.prober_position;
            let d = rel.norm();
            if d > 0.0 && d <= params.prober_radius {
                let df = d.max(params.distance_floor);
                rel / (df * df)
            } else {
                Vec2::ZERO
            }
        })
        .collect();
    let prober_reaction = -per_agent.iter().copied().sum::<Vec2>();
    InteractionForces {
        per_agent,
        prober_reaction,
    }
}

/// Raw leader control law: proportional and integral goal terms plus a pull
/// toward the follower centroid.
pub fn leader_velocity(state: &SwarmState, params: &FlockParams) -> Vec2 {
    let leader = state.leader_index;
    let p_l = state.positions[leader];
    let followers: Vec2 = state
        .positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != leader)
        .map(|(_, &p)| p)
        .sum();
    let follower_mean = followers / (state.n_agents() - 1) as f64;
    params.k_p * (state.goal_position - p_l)
        + params.k_i * state.leader_integral
        + params.k_la * (follower_mean - p_l)
}

/// Leader velocity as applied by [`step`]: the control law, saturated at
/// `v_max` when `cap_leader_speed` is set.
pub fn leader_command(state: &SwarmState, params: &FlockParams) -> Vec2 {
    let v = leader_velocity(state, params);
    let speed = v.norm();
    if params.cap_leader_speed && speed > params.v_max {
        v * (params.v_max / speed)
    } else {
        v
    }
}

/// Advance the world by one explicit Euler step of `params.dt`.
pub fn step(state: &SwarmState, params: &FlockParams, prober_action: Vec2) -> Result<SwarmState> {
    state.validate()?;
    if !prober_action.is_finite() {
        return Err(CoreError::NonFinite("prober action"));
    }
    for c in [prober_action.x, prober_action.y] {
        if c.abs() > PROBER_SPEED_LIMIT + 1e-12 {
            return Err(CoreError::ActionTooFast(c));
        }
    }

    let dt = params.dt;
    let grads = energy_gradients(state, params);
    let contact = interaction_forces(state, params);
    let v_leader = leader_command(state, params);
    let leader = state.leader_index;

    let mut next = state.clone();
    for i in 0..state.n_agents() {
        if i == leader {
            let v = v_leader + contact.per_agent[i];
            next.positions[i] += v * dt;
            if v.norm_sq() > 0.0 {
                next.headings[i] = v.angle();
            }
        } else {
            let v = grads.forces[i] + params.v_max * state.heading_vector(i) + contact.per_agent[i];
            next.positions[i] += v * dt;
            next.headings[i] = wrap_angle(state.headings[i] + grads.torques[i] * dt);
        }
    }
    next.prober_position += (prober_action + contact.prober_reaction) * dt;
    next.prober_velocity = prober_action;
    next.leader_integral += (state.goal_position - state.positions[leader]) * dt;
    next.sim_time += dt;

    next.validate()
        .map_err(|_| CoreError::NonFinite("next swarm state"))?;
    Ok(next)
}
