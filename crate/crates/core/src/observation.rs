//! The prober's partial graph snapshot.
//!
//! Node layout: swarm agents `0..N`, prober at index `N`.
//! Edge layout, in this order:
//! 1. swarm-only (SO) edges `i -> j` for every ordered pair `i != j`, feature 1;
//! 2. one self-edge per node `0..=N`, feature 1;
//! 3. swarm-prober (SP) edges `i -> N`, feature `1 + q_i / Σq` (1 when Σq = 0).
//!
//! Graph-level features are laid out as
//! `[mean speed, speed variance, dir_x, dir_y, centroid speed,
//!   mean alignment, alignment variance, mean angular momentum, mean rotation]`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{FlockParams, SwarmState};
use crate::geom::Vec2;

pub const NODE_FEATURE_DIM: usize = 2;
pub const GRAPH_FEATURE_DIM: usize = 9;

const UNIT_EPS: f64 = 1e-9;

/// Cumulative interaction counts plus the previous-step kinematics needed by
/// the graph-level features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionLedger {
    pub q: Vec<u64>,
    /// Positions at the previous step: agents `0..N`, then the prober.
    pub prev_positions: Vec<Vec2>,
    pub prev_centroid: Vec2,
}

impl InteractionLedger {
    /// Zeroed ledger anchored at the given (initial) state.
    pub fn new(state: &SwarmState) -> Self {
        let mut prev_positions = state.positions.clone();
        prev_positions.push(state.prober_position);
        Self {
            q: vec![0; state.n_agents()],
            prev_positions,
            prev_centroid: state.swarm_centroid(),
        }
    }

    pub fn total(&self) -> u64 {
        self.q.iter().sum()
    }

    /// Roll the stored previous positions forward to `state`.
    pub fn advance_positions(&mut self, state: &SwarmState) {
        self.prev_positions.clear();
        self.prev_positions.extend_from_slice(&state.positions);
        self.prev_positions.push(state.prober_position);
        self.prev_centroid = state.swarm_centroid();
    }
}

/// Count one interaction for every agent within the prober radius.
pub fn update_interactions(
    ledger: &InteractionLedger,
    state: &SwarmState,
    params: &FlockParams,
) -> InteractionLedger {
    let mut next = ledger.clone();
    for (q, &p) in next.q.iter_mut().zip(&state.positions) {
        if (state.prober_position - p).norm() <= params.prober_radius {
            *q += 1;
        }
    }
    next
}

/// SP edge features `1 + q_i / Σq`, all 1 before the first contact.
pub fn sp_edge_features(ledger: &InteractionLedger) -> Vec<f64> {
    let total = ledger.total();
    if total == 0 {
        return vec![1.0; ledger.q.len()];
    }
    ledger
        .q
        .iter()
        .map(|&q| 1.0 + q as f64 / total as f64)
        .collect()
}

/// Normalized positions relative to the prober; the prober node is zero.
pub fn node_features(state: &SwarmState, norm_distance: f64) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = state
        .positions
        .iter()
        .map(|&p| {
            let r = (p - state.prober_position) / norm_distance;
            [r.x, r.y]
        })
        .collect();
    out.push([0.0, 0.0]);
    out
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Aggregate kinematics of the swarm between the previous step and `state`.
/// Zero at `k == 0`.
pub fn graph_features(
    ledger: &InteractionLedger,
    state: &SwarmState,
    dt: f64,
    k: usize,
) -> [f64; GRAPH_FEATURE_DIM] {
    let mut out = [0.0; GRAPH_FEATURE_DIM];
    if k == 0 {
        return out;
    }
    let n = state.n_agents();
    let prev = &ledger.prev_positions[..n];
    let c_prev = ledger.prev_centroid;
    let c_now = state.swarm_centroid();

    let moves: Vec<Vec2> = state
        .positions
        .iter()
        .zip(prev)
        .map(|(&p, &q)| p - q)
        .collect();
    let speeds: Vec<f64> = moves.iter().map(|u| u.norm() / dt).collect();
    let (mean_speed, speed_var) = mean_var(&speeds);

    let shift = c_now - c_prev;
    let direction = shift.normalized(UNIT_EPS).unwrap_or(Vec2::ZERO);
    let centroid_speed = shift.norm() / dt;

    let unit_moves: Vec<Vec2> = moves
        .iter()
        .map(|u| u.normalized(UNIT_EPS).unwrap_or(Vec2::ZERO))
        .collect();
    let alignment: Vec<f64> = unit_moves.iter().map(|u| u.dot(direction)).collect();
    let (mean_align, align_var) = mean_var(&alignment);

    let angular: Vec<f64> = prev
        .iter()
        .zip(&moves)
        .map(|(&p, &u)| (p - c_prev).cross(u / dt))
        .collect();
    let rotation: Vec<f64> = prev
        .iter()
        .zip(&unit_moves)
        .map(|(&p, &u)| {
            (p - c_prev)
                .normalized(UNIT_EPS)
                .unwrap_or(Vec2::ZERO)
                .cross(u)
        })
        .collect();

    out[0] = mean_speed;
    out[1] = speed_var;
    out[2] = direction.x;
    out[3] = direction.y;
    out[4] = centroid_speed;
    out[5] = mean_align;
    out[6] = align_var;
    out[7] = angular.iter().sum::<f64>() / n as f64;
    out[8] = rotation.iter().sum::<f64>() / n as f64;
    out
}

/// Immutable observation handed to the policy at step `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub n_agents: usize,
    /// `N + 1` rows, prober last.
    pub node_features: Vec<[f64; NODE_FEATURE_DIM]>,
    pub senders: Vec<u32>,
    pub receivers: Vec<u32>,
    pub edge_features: Vec<f64>,
    pub graph_features: [f64; GRAPH_FEATURE_DIM],
    pub k: usize,
}

impl GraphSnapshot {
    pub fn n_nodes(&self) -> usize {
        self.n_agents + 1
    }

    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn prober_node(&self) -> usize {
        self.n_agents
    }

    /// Range of the SP edges inside the edge arrays.
    pub fn sp_edge_range(&self) -> std::ops::Range<usize> {
        let n = self.n_agents;
        let start = n * (n - 1) + n + 1;
        start..start + n
    }

    /// SP edge features minus one, i.e. the interaction ratios (uniform-zero
    /// convention: all zero before first contact).
    pub fn sp_ratios(&self) -> Vec<f64> {
        self.edge_features[self.sp_edge_range()]
            .iter()
            .map(|e| e - 1.0)
            .collect()
    }

    /// The same observation with agent `i` renamed `perm[i]`, in canonical
    /// edge order. The prober keeps the last index.
    pub fn relabel(&self, perm: &[usize]) -> crate::Result<GraphSnapshot> {
        let n = self.n_agents;
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(crate::CoreError::InvalidConfig(
                "relabel needs a permutation of the agents".into(),
            ));
        }
        let mut inverse = vec![n; n + 1];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let mut node_features = self.node_features.clone();
        for (i, &p) in perm.iter().enumerate() {
            node_features[p] = self.node_features[i];
        }
        let lookup: std::collections::HashMap<(u32, u32), f64> = self
            .senders
            .iter()
            .zip(&self.receivers)
            .zip(&self.edge_features)
            .map(|((&s, &r), &e)| ((s, r), e))
            .collect();
        let (senders, receivers) = edge_structure(n);
        let edge_features = senders
            .iter()
            .zip(&receivers)
            .map(|(&s, &r)| {
                let key = (inverse[s as usize] as u32, inverse[r as usize] as u32);
                lookup.get(&key).copied().unwrap_or(1.0)
            })
            .collect();
        Ok(GraphSnapshot {
            n_agents: n,
            node_features,
            senders,
            receivers,
            edge_features,
            graph_features: self.graph_features,
            k: self.k,
        })
    }
}

/// Fixed edge structure for `n` agents: (senders, receivers).
pub fn edge_structure(n: usize) -> (Vec<u32>, Vec<u32>) {
    let cap = n * (n - 1) + 2 * n + 1;
    let mut senders = Vec::with_capacity(cap);
    let mut receivers = Vec::with_capacity(cap);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                senders.push(i as u32);
                receivers.push(j as u32);
            }
        }
    }
    for v in 0..=n {
        senders.push(v as u32);
        receivers.push(v as u32);
    }
    for i in 0..n {
        senders.push(i as u32);
        receivers.push(n as u32);
    }
    (senders, receivers)
}

/// Assemble the snapshot for step `k`; `ledger` must already include the
/// interactions of step `k` and still hold the positions of step `k - 1`.
pub fn build_snapshot(
    state: &SwarmState,
    ledger: &InteractionLedger,
    params: &FlockParams,
    norm_distance: f64,
    k: usize,
) -> GraphSnapshot {
    let n = state.n_agents();
    let (senders, receivers) = edge_structure(n);
    let mut edge_features = vec![1.0; senders.len()];
    let sp_start = n * (n - 1) + n + 1;
    edge_features[sp_start..].copy_from_slice(&sp_edge_features(ledger));
    GraphSnapshot {
        n_agents: n,
        node_features: node_features(state, norm_distance),
        senders,
        receivers,
        edge_features,
        graph_features: graph_features(ledger, state, params.dt, k),
        k,
    }
}

/// Write snapshots as JSON lines. Field order per record: `n_agents`,
/// `node_features`, `senders`, `receivers`, `edge_features`,
/// `graph_features`, `k`.
pub fn write_snapshots<W: Write>(mut out: W, snapshots: &[GraphSnapshot]) -> crate::Result<()> {
    for s in snapshots {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_snapshots<R: BufRead>(input: R) -> crate::Result<Vec<GraphSnapshot>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_at(positions: Vec<Vec2>, prober: Vec2) -> SwarmState {
        let n = positions.len();
        SwarmState {
            positions,
            headings: vec![0.0; n],
            prober_position: prober,
            prober_velocity: Vec2::ZERO,
            leader_index: 0,
            goal_position: Vec2::new(10.0, 0.0),
            leader_integral: Vec2::ZERO,
            sim_time: 0.0,
        }
    }

    #[test]
    fn counting_respects_radius() {
        let p = FlockParams::default();
        let s = state_at(
            vec![
                Vec2::new(0.3, 0.0),
                Vec2::new(0.0, 0.5),
                Vec2::new(2.0, 0.0),
            ],
            Vec2::ZERO,
        );
        let l = update_interactions(&InteractionLedger::new(&s), &s, &p);
        assert_eq!(l.q, vec![1, 1, 0]);
        let far = state_at(vec![Vec2::new(3.0, 0.0), Vec2::new(4.0, 0.0)], Vec2::ZERO);
        let l = update_interactions(&InteractionLedger::new(&far), &far, &p);
        assert_eq!(l.q, vec![0, 0]);
    }

    #[test]
    fn sp_features_examples() {
        let s = state_at(vec![Vec2::ZERO; 3], Vec2::ZERO);
        let mut l = InteractionLedger::new(&s);
        assert_eq!(sp_edge_features(&l), vec![1.0, 1.0, 1.0]);
        l.q = vec![2, 1, 1];
        assert_eq!(sp_edge_features(&l), vec![1.5, 1.25, 1.25]);
    }

    #[test]
    fn nrp_examples() {
        let s = state_at(vec![Vec2::new(1.0, 0.0), Vec2::new(3.0, 4.0)], Vec2::ZERO);
        let f = node_features(&s, 5.0);
        assert_eq!(f[0], [0.2, 0.0]);
        assert_eq!(f[2], [0.0, 0.0]);
    }

    #[test]
    fn edge_count_for_three_agents() {
        let s = state_at(
            vec![Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            Vec2::new(3.0, 3.0),
        );
        let snap = build_snapshot(
            &s,
            &InteractionLedger::new(&s),
            &FlockParams::default(),
            5.0,
            0,
        );
        assert_eq!(snap.n_edges(), 13);
        let self_edges = snap
            .senders
            .iter()
            .zip(&snap.receivers)
            .filter(|(a, b)| a == b)
            .count();
        assert_eq!(self_edges, 4);
        for e in snap.sp_edge_range() {
            assert_eq!(snap.receivers[e] as usize, snap.prober_node());
        }
        assert_eq!(snap.graph_features, [0.0; GRAPH_FEATURE_DIM]);
    }

    #[test]
    fn stationary_swarm_has_zero_graph_features() {
        let s = state_at(
            vec![Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            Vec2::new(3.0, 3.0),
        );
        let l = InteractionLedger::new(&s);
        assert_eq!(graph_features(&l, &s, 0.05, 7), [0.0; GRAPH_FEATURE_DIM]);
    }

    #[test]
    fn rigid_translation_features() {
        // Square formation: the radial unit vectors cancel, so R̄ vanishes too.
        let square = vec![
            Vec2::new(1.0, 1.0),
            Vec2::new(-1.0, 1.0),
            Vec2::new(-1.0, -1.0),
            Vec2::new(1.0, -1.0),
        ];
        let before = state_at(square, Vec2::new(3.0, 3.0));
        let l = InteractionLedger::new(&before);
        let dt = 0.05;
        let s_speed = 0.4;
        let mut after = before.clone();
        for p in after.positions.iter_mut() {
            *p += Vec2::new(0.0, s_speed * dt);
        }
        let g = graph_features(&l, &after, dt, 1);
        assert!((g[0] - s_speed).abs() < 1e-12);
        assert!(g[1].abs() < 1e-20);
        assert!(g[2].abs() < 1e-12 && (g[3] - 1.0).abs() < 1e-12);
        assert!((g[4] - s_speed).abs() < 1e-12);
        assert!((g[5] - 1.0).abs() < 1e-12);
        assert!(g[6].abs() < 1e-20);
        assert!(g[7].abs() < 1e-12);
        assert!(g[8].abs() < 1e-12);
    }

    #[test]
    fn translation_has_no_angular_momentum_for_any_shape() {
        let before = state_at(
            vec![Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(0.0, 2.0)],
            Vec2::new(3.0, 3.0),
        );
        let l = InteractionLedger::new(&before);
        let mut after = before.clone();
        for p in after.positions.iter_mut() {
            *p += Vec2::new(0.01, -0.02);
        }
        assert!(graph_features(&l, &after, 0.05, 3)[7].abs() < 1e-12);
    }

    #[test]
    fn snapshot_jsonl_round_trip() {
        let s = state_at(vec![Vec2::ZERO, Vec2::new(1.0, 0.0)], Vec2::new(0.2, 0.1));
        let snap = build_snapshot(
            &s,
            &InteractionLedger::new(&s),
            &FlockParams::default(),
            5.0,
            0,
        );
        let mut buf = Vec::new();
        write_snapshots(&mut buf, &[snap.clone(), snap.clone()]).unwrap();
        let back = read_snapshots(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, vec![snap.clone(), snap]);
    }
}
