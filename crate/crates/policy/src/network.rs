//! TGR graph encoder, S5 sequence core and actor-critic heads.

use std::rc::Rc;

use isli_core::env::ACTION_LEVELS;
use isli_core::observation::{GRAPH_FEATURE_DIM, NODE_FEATURE_DIM};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ScanSpec, Tape, Var};
use crate::batch::GraphBatch;
use crate::error::{PolicyError, Result};
use crate::params::{gaussian, orthogonal, ParamSet};
use crate::tensor::Tensor;

/// Logit columns: `0..13` for the x axis, `13..26` for y.
pub const N_LOGITS: usize = 2 * ACTION_LEVELS;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub gat_heads: usize,
    pub gat_head_dim: usize,
    pub ds_hidden: usize,
    pub rn_hidden: usize,
    /// Width of the gated graph representation.
    pub graph_dim: usize,
    pub t2v_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub state_dim: usize,
    pub head_hidden: usize,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            gat_heads: 4,
            gat_head_dim: 32,
            ds_hidden: 128,
            rn_hidden: 128,
            graph_dim: 128,
            t2v_dim: 128,
            model_dim: 256,
            layers: 4,
            state_dim: 128,
            head_hidden: 128,
            dt_min: 1e-3,
            dt_max: 1e-1,
        }
    }
}

impl PolicyConfig {
    /// Narrow variant that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            gat_heads: 2,
            gat_head_dim: 8,
            ds_hidden: 32,
            rn_hidden: 32,
            graph_dim: 32,
            t2v_dim: 8,
            model_dim: 32,
            layers: 1,
            state_dim: 16,
            head_hidden: 32,
            ..Self::default()
        }
    }

    pub fn gat_width(&self) -> usize {
        self.gat_heads * self.gat_head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.gat_heads,
            self.gat_head_dim,
            self.ds_hidden,
            self.rn_hidden,
            self.graph_dim,
            self.model_dim,
            self.layers,
            self.state_dim,
            self.head_hidden,
        ];
        if dims.contains(&0) || self.t2v_dim < 2 {
            return Err(PolicyError::InvalidConfig(
                "all widths must be positive and t2v_dim at least 2".into(),
            ));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(PolicyError::InvalidConfig(
                "need 0 < dt_min <= dt_max".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct GatIds {
    embed: Dense,
    wq: usize,
    wk: usize,
    wv: usize,
    edge: Dense,
    out: Dense,
}

#[derive(Clone, Copy, Debug)]
struct DsIds {
    phi: Dense,
    rho1: Dense,
    rho2: Dense,
}

#[derive(Clone, Copy, Debug)]
struct RnIds {
    w_send: usize,
    w_recv: usize,
    edge: Dense,
    rho1: Dense,
    rho2: Dense,
}

#[derive(Clone, Copy, Debug)]
struct S5Ids {
    ln_pre: Dense,
    log_neg_re: usize,
    im: usize,
    log_step: usize,
    b_re: usize,
    b_im: usize,
    c_re: usize,
    c_im: usize,
    d: usize,
    glu: Dense,
    ln_post: Dense,
}

#[derive(Clone, Debug)]
struct Layout {
    gat: GatIds,
    ds: DsIds,
    rn: RnIds,
    t2v_omega: usize,
    t2v_phase: usize,
    proj: Dense,
    s5: Vec<S5Ids>,
    actor: (Dense, Dense),
    critic: (Dense, Dense),
}

/// Recurrent state per S5 layer, `lanes x 2P` laid out `[re | im]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub layers: Vec<Tensor>,
}

impl PolicyState {
    pub fn zeros(config: &PolicyConfig, lanes: usize) -> Self {
        Self {
            layers: (0..config.layers)
                .map(|_| Tensor::zeros(lanes, 2 * config.state_dim))
                .collect(),
        }
    }

    pub fn lanes(&self) -> usize {
        self.layers.first().map_or(0, |t| t.rows)
    }

    pub fn reset_lane(&mut self, lane: usize) {
        for t in &mut self.layers {
            t.row_mut(lane).iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// State restricted to the given lanes, in that order.
    pub fn select(&self, lanes: &[usize]) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|t| {
                    let mut out = Tensor::zeros(lanes.len(), t.cols);
                    for (i, &l) in lanes.iter().enumerate() {
                        out.row_mut(i).copy_from_slice(t.row(l));
                    }
                    out
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Tensor::is_finite)
    }
}

/// Intermediate values of one TGR pass.
#[derive(Clone, Copy, Debug)]
pub struct TgrOutput {
    /// `g_GR ⊕ T2V(k)`, one row per graph.
    pub embedding: Var,
    pub g_ds: Var,
    pub g_rn: Var,
    pub gate: Var,
    pub t2v: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `R x 26` action logits.
    pub logits: Var,
    /// `R x 1` state values.
    pub values: Var,
    /// Scan output per S5 layer, `R x 2P`.
    pub states: Vec<Var>,
    pub encoder_out: Var,
    pub lanes: usize,
}

impl ForwardOutput {
    /// Recurrent state after the last time step of every lane.
    pub fn final_state(&self, tape: &Tape) -> PolicyState {
        PolicyState {
            layers: self
                .states
                .iter()
                .map(|&v| {
                    let t = tape.value(v);
                    t.rows_range(t.rows - self.lanes, self.lanes)
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub config: PolicyConfig,
    pub params: ParamSet,
    layout: Layout,
}

fn dense<R: Rng>(
    ps: &mut ParamSet,
    rng: &mut R,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
) -> Dense {
    Dense {
        w: ps.add(format!("{name}.w"), orthogonal(rng, fan_in, fan_out, gain)),
        b: ps.add(format!("{name}.b"), Tensor::zeros(1, fan_out)),
    }
}

fn ones_zeros(ps: &mut ParamSet, name: &str, width: usize) -> Dense {
    Dense {
        w: ps.add(format!("{name}.gain"), Tensor::filled(1, width, 1.0)),
        b: ps.add(format!("{name}.bias"), Tensor::zeros(1, width)),
    }
}

impl Policy {
    pub fn new<R: Rng>(config: PolicyConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut ps = ParamSet::new();
        let tanh_gain = 5.0 / 3.0;
        let gw = c.gat_width();

        let gat = GatIds {
            embed: dense(&mut ps, rng, "gat.embed", NODE_FEATURE_DIM, gw, tanh_gain),
            wq: ps.add("gat.query", orthogonal(rng, gw, gw, 1.0)),
            wk: ps.add("gat.key", orthogonal(rng, gw, gw, 1.0)),
            wv: ps.add("gat.value", orthogonal(rng, gw, gw, 1.0)),
            edge: Dense {
                w: ps.add("gat.edge.w", gaussian(rng, 1, c.gat_heads, 0.1)),
                b: ps.add("gat.edge.b", Tensor::zeros(1, c.gat_heads)),
            },
            out: dense(&mut ps, rng, "gat.out", gw, gw, tanh_gain),
        };
        let ds = DsIds {
            phi: dense(&mut ps, rng, "ds.phi", gw, c.ds_hidden, tanh_gain),
            rho1: dense(
                &mut ps,
                rng,
                "ds.rho1",
                c.ds_hidden + GRAPH_FEATURE_DIM,
                c.ds_hidden,
                tanh_gain,
            ),
            rho2: dense(&mut ps, rng, "ds.rho2", c.ds_hidden, c.graph_dim, 1.0),
        };
        let rn = RnIds {
            w_send: ps.add("rn.psi.send", orthogonal(rng, gw, c.rn_hidden, tanh_gain)),
            w_recv: ps.add("rn.psi.recv", orthogonal(rng, gw, c.rn_hidden, tanh_gain)),
            edge: Dense {
                w: ps.add("rn.psi.edge", gaussian(rng, 1, c.rn_hidden, 1.0)),
                b: ps.add("rn.psi.b", Tensor::zeros(1, c.rn_hidden)),
            },
            rho1: dense(&mut ps, rng, "rn.rho1", c.rn_hidden, c.rn_hidden, tanh_gain),
            rho2: dense(&mut ps, rng, "rn.rho2", c.rn_hidden, c.graph_dim, 1.0),
        };

        // Periodic slots get log-spaced frequencies from 1 down to 1e-3 rad/step.
        let t = c.t2v_dim;
        let omega: Vec<f64> = (0..t)
            .map(|i| match i {
                0 => 1e-3,
                _ => 10f64.powf(-3.0 * (i - 1) as f64 / (t - 2).max(1) as f64),
            })
            .collect();
        let t2v_omega = ps.add("t2v.omega", Tensor::row_vector(&omega));
        let phase: Vec<f64> = (0..t)
            .map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        let t2v_phase = ps.add("t2v.phase", Tensor::row_vector(&phase));

        let proj = dense(&mut ps, rng, "proj", c.graph_dim + t, c.model_dim, 1.0);

        let (m, p) = (c.model_dim, c.state_dim);
        let mut s5 = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let name = |s: &str| format!("s5.{l}.{s}");
            let ln_pre = ones_zeros(&mut ps, &name("ln_pre"), m);
            let log_neg_re = ps.add(name("log_neg_re"), Tensor::filled(1, p, 0.5f64.ln()));
            let im = ps.add(
                name("im"),
                Tensor::row_vector(
                    &(0..p)
                        .map(|n| std::f64::consts::PI * n as f64)
                        .collect::<Vec<_>>(),
                ),
            );
            let (lo, hi) = (c.dt_min.ln(), c.dt_max.ln());
            let log_step = ps.add(
                name("log_step"),
                Tensor::row_vector(&(0..p).map(|_| rng.gen_range(lo..=hi)).collect::<Vec<_>>()),
            );
            let b_std = (1.0 / m as f64).sqrt();
            let c_std = (0.5 / p as f64).sqrt();
            let ids = S5Ids {
                ln_pre,
                log_neg_re,
                im,
                log_step,
                b_re: ps.add(name("b_re"), gaussian(rng, m, p, b_std)),
                b_im: ps.add(name("b_im"), gaussian(rng, m, p, b_std)),
                c_re: ps.add(name("c_re"), gaussian(rng, p, m, c_std)),
                c_im: ps.add(name("c_im"), gaussian(rng, p, m, c_std)),
                d: ps.add(name("d"), gaussian(rng, 1, m, 1.0)),
                glu: dense(&mut ps, rng, &name("glu"), m, 2 * m, 1.0),
                ln_post: ones_zeros(&mut ps, &name("ln_post"), m),
            };
            s5.push(ids);
        }

        let actor = (
            dense(&mut ps, rng, "actor.hidden", m, c.head_hidden, tanh_gain),
            dense(&mut ps, rng, "actor.out", c.head_hidden, N_LOGITS, 0.01),
        );
        let critic = (
            dense(&mut ps, rng, "critic.hidden", m, c.head_hidden, tanh_gain),
            dense(&mut ps, rng, "critic.out", c.head_hidden, 1, 1.0),
        );

        Ok(Self {
            config,
            params: ps,
            layout: Layout {
                gat,
                ds,
                rn,
                t2v_omega,
                t2v_phase,
                proj,
                s5,
                actor,
                critic,
            },
        })
    }

    /// Zero the final layer of the relation path, pinning the gate at one half.
    pub fn zero_relation_output(&mut self) {
        let d = self.layout.rn.rho2;
        for id in [d.w, d.b] {
            self.params
                .get_mut(id)
                .data
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
    }

    /// Zero the final actor and critic layers: uniform actions, zero value.
    pub fn zero_heads(&mut self) {
        for d in [self.layout.actor.1, self.layout.critic.1] {
            for id in [d.w, d.b] {
                self.params
                    .get_mut(id)
                    .data
                    .iter_mut()
                    .for_each(|x| *x = 0.0);
            }
        }
    }

    /// Zero every T2V frequency (constant time embedding).
    pub fn zero_time_frequencies(&mut self) {
        let id = self.layout.t2v_omega;
        self.params
            .get_mut(id)
            .data
            .iter_mut()
            .for_each(|x| *x = 0.0);
    }

    /// Ids of parameters that only the critic uses.
    pub fn critic_param_ids(&self) -> Vec<usize> {
        let (h, o) = self.layout.critic;
        vec![h.w, h.b, o.w, o.b]
    }

    fn linear(tape: &mut Tape, p: &[Var], x: Var, d: Dense) -> Var {
        let y = tape.matmul(x, p[d.w]);
        tape.add_row(y, p[d.b])
    }

    fn affine_norm(tape: &mut Tape, p: &[Var], x: Var, d: Dense) -> Var {
        let n = tape.layer_norm(x, LN_EPS);
        let n = tape.mul_row(n, p[d.w]);
        tape.add_row(n, p[d.b])
    }

    /// Time2Vec of the raw step index: slot 0 linear, the rest sinusoidal.
    pub fn t2v(&self, tape: &mut Tape, p: &[Var], k: &Tensor) -> Var {
        let kv = tape.constant(k.clone());
        let lin = tape.matmul(kv, p[self.layout.t2v_omega]);
        let lin = tape.add_row(lin, p[self.layout.t2v_phase]);
        let t = self.config.t2v_dim;
        let first = tape.slice_cols(lin, 0, 1);
        let rest = tape.slice_cols(lin, 1, t - 1);
        let rest = tape.sin(rest);
        tape.concat_cols(&[first, rest])
    }

    pub fn tgr(&self, tape: &mut Tape, p: &[Var], batch: &GraphBatch) -> TgrOutput {
        let c = &self.config;
        let l = &self.layout;
        let (heads, hd) = (c.gat_heads, c.gat_head_dim);

        // Attention over incoming edges with an additive edge-feature bias.
        let x = tape.constant(batch.node_features.clone());
        let h = Self::linear(tape, p, x, l.gat.embed);
        let h = tape.tanh(h);
        let q = tape.matmul(h, p[l.gat.wq]);
        let k = tape.matmul(h, p[l.gat.wk]);
        let v = tape.matmul(h, p[l.gat.wv]);
        let q_r = tape.gather_rows(q, batch.receivers.clone());
        let k_s = tape.gather_rows(k, batch.senders.clone());
        let v_s = tape.gather_rows(v, batch.senders.clone());
        let qk = tape.mul(q_r, k_s);
        let scores = tape.group_sum_cols(qk, hd);
        let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt());
        let e = tape.constant(batch.edge_features.clone());
        let eb = Self::linear(tape, p, e, l.gat.edge);
        let scores = tape.add(scores, eb);
        let alpha = tape.segment_softmax(scores, batch.receivers.clone());
        let alpha = tape.repeat_cols(alpha, hd);
        let msg = tape.mul(alpha, v_s);
        let agg = tape.segment_sum(msg, batch.receivers.clone(), batch.n_nodes());
        debug_assert_eq!(tape.value(agg).cols, heads * hd);
        let h2 = Self::linear(tape, p, agg, l.gat.out);
        let h2 = tape.tanh(h2);

        // DeepSets: pooled node MLP plus graph-level features.
        let phi = Self::linear(tape, p, h2, l.ds.phi);
        let phi = tape.tanh(phi);
        let pooled = tape.segment_sum(phi, batch.node_graph.clone(), batch.n_graphs);
        let gf = tape.constant(batch.graph_features.clone());
        let ds_in = tape.concat_cols(&[pooled, gf]);
        let r1 = Self::linear(tape, p, ds_in, l.ds.rho1);
        let r1 = tape.tanh(r1);
        let g_ds = Self::linear(tape, p, r1, l.ds.rho2);

        // Relations: ψ(h_s, h_r, e) summed over edges. The first layer is
        // linear in its concatenated input, so it is split per operand.
        let ps_ = tape.matmul(h2, p[l.rn.w_send]);
        let pr_ = tape.matmul(h2, p[l.rn.w_recv]);
        let ps_ = tape.gather_rows(ps_, batch.senders.clone());
        let pr_ = tape.gather_rows(pr_, batch.receivers.clone());
        let pe = Self::linear(tape, p, e, l.rn.edge);
        let psi = tape.add(ps_, pr_);
        let psi = tape.add(psi, pe);
        let psi = tape.tanh(psi);
        let pooled = tape.segment_sum(psi, batch.edge_graph.clone(), batch.n_graphs);
        let r1 = Self::linear(tape, p, pooled, l.rn.rho1);
        let r1 = tape.tanh(r1);
        let g_rn = Self::linear(tape, p, r1, l.rn.rho2);

        let gate = tape.sigmoid(g_rn);
        let g_gr = tape.mul(g_ds, gate);
        let t2v = self.t2v(tape, p, &batch.k);
        let embedding = tape.concat_cols(&[g_gr, t2v]);
        TgrOutput {
            embedding,
            g_ds,
            g_rn,
            gate,
            t2v,
        }
    }

    /// Discretized eigenvalues `λ̄` (`1 x 2P`) and input matrices `B̄`.
    fn discretize(&self, tape: &mut Tape, p: &[Var], ids: &S5Ids) -> (Var, Var, Var) {
        let neg = tape.exp(p[ids.log_neg_re]);
        let lam_re = tape.scale(neg, -1.0);
        let lam_im = p[ids.im];
        let step = tape.exp(p[ids.log_step]);
        let ar = tape.mul(lam_re, step);
        let ai = tape.mul(lam_im, step);
        let mag = tape.exp(ar);
        let cos = tape.cos(ai);
        let sin = tape.sin(ai);
        let lb_re = tape.mul(mag, cos);
        let lb_im = tape.mul(mag, sin);

        // (λ̄ - 1) / Λ as a complex quotient.
        let nr = tape.add_scalar(lb_re, -1.0);
        let rr = tape.mul(lam_re, lam_re);
        let ii = tape.mul(lam_im, lam_im);
        let den = tape.add(rr, ii);
        let a = tape.mul(nr, lam_re);
        let b = tape.mul(lb_im, lam_im);
        let cr = tape.add(a, b);
        let cr = tape.div(cr, den);
        let a = tape.mul(lb_im, lam_re);
        let b = tape.mul(nr, lam_im);
        let ci = tape.sub(a, b);
        let ci = tape.div(ci, den);

        let br_cr = tape.mul_row(p[ids.b_re], cr);
        let bi_ci = tape.mul_row(p[ids.b_im], ci);
        let bb_re = tape.sub(br_cr, bi_ci);
        let bi_cr = tape.mul_row(p[ids.b_im], cr);
        let br_ci = tape.mul_row(p[ids.b_re], ci);
        let bb_im = tape.add(bi_cr, br_ci);

        let lam = tape.concat_cols(&[lb_re, lb_im]);
        (lam, bb_re, bb_im)
    }

    fn s5_layer(
        &self,
        tape: &mut Tape,
        p: &[Var],
        ids: &S5Ids,
        u: Var,
        spec: ScanSpec,
    ) -> (Var, Var) {
        let ps = self.config.state_dim;
        let m = self.config.model_dim;
        let z = Self::affine_norm(tape, p, u, ids.ln_pre);
        let (lam, bb_re, bb_im) = self.discretize(tape, p, ids);
        let u_re = tape.matmul(z, bb_re);
        let u_im = tape.matmul(z, bb_im);
        let uc = tape.concat_cols(&[u_re, u_im]);
        let x = tape.scan(lam, uc, spec);
        let x_re = tape.slice_cols(x, 0, ps);
        let x_im = tape.slice_cols(x, ps, ps);
        let yr = tape.matmul(x_re, p[ids.c_re]);
        let yi = tape.matmul(x_im, p[ids.c_im]);
        let y = tape.sub(yr, yi);
        let dz = tape.mul_row(z, p[ids.d]);
        let y = tape.add(y, dz);
        let g = Self::linear(tape, p, y, ids.glu);
        let a = tape.slice_cols(g, 0, m);
        let b = tape.slice_cols(g, m, m);
        let b = tape.sigmoid(b);
        let glu = tape.mul(a, b);
        let post = Self::affine_norm(tape, p, glu, ids.ln_post);
        (tape.add(u, post), x)
    }

    /// Run the S5 stack over `u` (`R x model_dim`, time-major over `lanes`).
    pub fn encode(
        &self,
        tape: &mut Tape,
        p: &[Var],
        u: Var,
        lanes: usize,
        resets: Rc<[bool]>,
        h0: &PolicyState,
    ) -> (Var, Vec<Var>) {
        assert_eq!(h0.layers.len(), self.config.layers, "state layer count");
        let mut y = u;
        let mut states = Vec::with_capacity(self.config.layers);
        for (ids, h) in self.layout.s5.iter().zip(&h0.layers) {
            let spec = ScanSpec {
                lanes,
                resets: resets.clone(),
                h0: Rc::new(h.clone()),
            };
            let (out, x) = self.s5_layer(tape, p, ids, y, spec);
            y = out;
            states.push(x);
        }
        (y, states)
    }

    pub fn heads(&self, tape: &mut Tape, p: &[Var], y: Var) -> (Var, Var) {
        let (ah, ao) = self.layout.actor;
        let h = Self::linear(tape, p, y, ah);
        let h = tape.tanh(h);
        let logits = Self::linear(tape, p, h, ao);
        let (ch, co) = self.layout.critic;
        let h = Self::linear(tape, p, y, ch);
        let h = tape.tanh(h);
        let values = Self::linear(tape, p, h, co);
        (logits, values)
    }

    /// Full pass over a time-major batch (`row = t * lanes + lane`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &[Var],
        batch: &GraphBatch,
        lanes: usize,
        resets: &[bool],
        h0: &PolicyState,
    ) -> Result<ForwardOutput> {
        if batch.n_graphs % lanes != 0 || resets.len() != batch.n_graphs {
            return Err(PolicyError::InvalidConfig(format!(
                "{} graphs do not tile {lanes} lanes with {} reset flags",
                batch.n_graphs,
                resets.len()
            )));
        }
        if h0.lanes() != lanes {
            return Err(PolicyError::InvalidConfig(
                "initial state lane count mismatch".into(),
            ));
        }
        let tgr = self.tgr(tape, p, batch);
        let u = Self::linear(tape, p, tgr.embedding, self.layout.proj);
        let (y, states) = self.encode(tape, p, u, lanes, resets.into(), h0);
        let (logits, values) = self.heads(tape, p, y);
        Ok(ForwardOutput {
            logits,
            values,
            states,
            encoder_out: y,
            lanes,
        })
    }

    /// One inference step for `lanes` environments.
    pub fn step(
        &self,
        batch: &GraphBatch,
        resets: &[bool],
        state: &PolicyState,
    ) -> Result<StepOutput> {
        let mut tape = Tape::new();
        let p = self.params.bind_constant(&mut tape);
        let lanes = batch.n_graphs;
        let out = self.forward(&mut tape, &p, batch, lanes, resets, state)?;
        let next = out.final_state(&tape);
        if !next.is_finite() {
            return Err(PolicyError::NonFinite("recurrent state"));
        }
        Ok(StepOutput {
            logits: tape.value(out.logits).clone(),
            values: tape.value(out.values).data.clone(),
            state: next,
        })
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub logits: Tensor,
    pub values: Vec<f64>,
    pub state: PolicyState,
}
