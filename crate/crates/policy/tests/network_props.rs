use isli_core::rng::seeded_rng;
use isli_core::{ActionId, Env, EnvConfig, GraphSnapshot};
use isli_policy::autodiff::Tape;
use isli_policy::network::N_LOGITS;
use isli_policy::{GraphBatch, Policy, PolicyConfig, PolicyState, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> PolicyConfig {
    PolicyConfig {
        gat_heads: 2,
        gat_head_dim: 3,
        ds_hidden: 5,
        rn_hidden: 4,
        graph_dim: 4,
        t2v_dim: 3,
        model_dim: 4,
        layers: 2,
        state_dim: 3,
        head_hidden: 5,
        ..PolicyConfig::default()
    }
}

/// Snapshots from a short random walk, so ledgers and kinematics are non-trivial.
fn snapshots(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<GraphSnapshot> {
    let mut config = EnvConfig::default().with_agents(n);
    config.seed = rng.gen();
    let mut env = Env::new(config).unwrap();
    let mut out = vec![env.observation().clone()];
    while out.len() < count {
        let s = env.state();
        let target = s.positions[rng.gen_range(0..n)] - s.prober_position;
        let level = |d: f64| ((d / 0.05).round().clamp(-6.0, 6.0) + 6.0) as usize;
        let a = if rng.gen_bool(0.7) {
            ActionId::new(level(target.x), level(target.y))
        } else {
            ActionId::new(rng.gen_range(0..13), rng.gen_range(0..13))
        };
        let r = env.step(a).unwrap();
        out.push(r.observation);
        if env.is_done() {
            let seed = rng.gen();
            env.reset(seed).unwrap();
        }
    }
    out
}

fn embedding(policy: &Policy, snaps: &[&GraphSnapshot]) -> Tensor {
    let mut tape = Tape::new();
    let p = policy.params.bind_constant(&mut tape);
    let batch = GraphBatch::from_snapshots(snaps.iter().copied()).unwrap();
    let out = policy.tgr(&mut tape, &p, &batch);
    tape.value(out.embedding).clone()
}

#[test]
fn tgr_is_permutation_invariant() {
    let mut rng = seeded_rng(1);
    for trial in 0..100 {
        let policy = Policy::new(PolicyConfig::desk(), &mut rng).unwrap();
        let n = 2 + trial % 12;
        let snap = snapshots(&mut rng, n, 1 + trial % 30).pop().unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let moved = snap.relabel(&perm).unwrap();
        let a = embedding(&policy, &[&snap]);
        let b = embedding(&policy, &[&moved]);
        let diff = a.zip_map(&b, |x, y| x - y).norm_sq().sqrt();
        assert!(
            diff <= 1e-6 * a.norm_sq().sqrt().max(1e-12),
            "trial {trial}: {diff}"
        );
    }
}

#[test]
fn one_network_handles_two_to_sixty_four_agents() {
    let mut rng = seeded_rng(2);
    let policy = Policy::new(PolicyConfig::desk(), &mut rng).unwrap();
    for n in 2..=64 {
        let snap = snapshots(&mut rng, n, 3).pop().unwrap();
        let batch = GraphBatch::from_snapshots([&snap]).unwrap();
        let state = PolicyState::zeros(&policy.config, 1);
        let out = policy.step(&batch, &[true], &state).unwrap();
        assert_eq!(out.logits.shape(), (1, N_LOGITS));
        assert!(out.logits.is_finite() && out.values[0].is_finite());
    }
}

#[test]
fn zeroed_relation_path_halves_deep_sets() {
    let mut rng = seeded_rng(3);
    let mut policy = Policy::new(PolicyConfig::desk(), &mut rng).unwrap();
    policy.zero_relation_output();
    let snaps = snapshots(&mut rng, 6, 4);
    let mut tape = Tape::new();
    let p = policy.params.bind_constant(&mut tape);
    let batch = GraphBatch::from_snapshots(&snaps).unwrap();
    let out = policy.tgr(&mut tape, &p, &batch);
    assert!(tape.value(out.gate).data.iter().all(|&g| g == 0.5));
    let g = policy.config.graph_dim;
    let emb = tape.value(out.embedding);
    let ds = tape.value(out.g_ds);
    for r in 0..emb.rows {
        for j in 0..g {
            assert_eq!(emb.get(r, j), 0.5 * ds.get(r, j));
        }
    }
}

#[test]
fn gate_stays_open_interval() {
    let mut rng = seeded_rng(4);
    let policy = Policy::new(PolicyConfig::desk(), &mut rng).unwrap();
    let snaps = snapshots(&mut rng, 9, 50);
    let mut tape = Tape::new();
    let p = policy.params.bind_constant(&mut tape);
    let batch = GraphBatch::from_snapshots(&snaps).unwrap();
    let out = policy.tgr(&mut tape, &p, &batch);
    assert!(tape
        .value(out.gate)
        .data
        .iter()
        .all(|&g| g > 0.0 && g < 1.0));
}

#[test]
fn time_embedding_behaviour() {
    let mut rng = seeded_rng(5);
    let mut policy = Policy::new(PolicyConfig::desk(), &mut rng).unwrap();
    let phase = policy
        .params
        .get(policy.params.id("t2v.phase").unwrap())
        .clone();
    let mut tape = Tape::new();
    let p = policy.params.bind_constant(&mut tape);
    let v = policy.t2v(&mut tape, &p, &Tensor::column(&[0.0]));
    let at_zero = tape.value(v);
    assert_eq!(at_zero.get(0, 0), phase.data[0]);
    for j in 1..phase.cols {
        assert!((at_zero.get(0, j) - phase.data[j].sin()).abs() < 1e-15);
    }

    // Same graph at two step indices gets two embeddings.
    let mut snap = snapshots(&mut rng, 5, 3).pop().unwrap();
    let a = embedding(&policy, &[&snap]);
    snap.k += 17;
    let b = embedding(&policy, &[&snap]);
    assert_ne!(a, b);

    policy.zero_time_frequencies();
    let mut tape = Tape::new();
    let p = policy.params.bind_constant(&mut tape);
    let v = policy.t2v(&mut tape, &p, &Tensor::column(&[0.0, 5.0, 511.0]));
    let t = tape.value(v);
    for r in 1..3 {
        assert_eq!(t.row(r), t.row(0));
    }
}

#[test]
fn zeroed_heads_are_uniform_with_zero_value() {
    let mut rng = seeded_rng(6);
    let mut policy = Policy::new(PolicyConfig::desk(), &mut rng).unwrap();
    policy.zero_heads();
    let snaps = snapshots(&mut rng, 7, 3);
    let batch = GraphBatch::from_snapshots(&snaps).unwrap();
    let out = policy
        .step(
            &batch,
            &[true, false, true],
            &PolicyState::zeros(&policy.config, 3),
        )
        .unwrap();
    for r in 0..3 {
        let lp = isli_policy::dist::log_prob(out.logits.row(r), ActionId::new(4, 11));
        assert!((lp - 2.0 * (1.0f64 / 13.0).ln()).abs() < 1e-12);
        assert_eq!(out.values[r], 0.0);
    }
}

/// Sequence mode over T steps equals T single steps, with random resets.
#[test]
fn scan_matches_stepping() {
    let mut rng = seeded_rng(7);
    let policy = Policy::new(PolicyConfig::desk(), &mut rng).unwrap();
    let lanes = 3;
    let t_len = 256;
    let per_lane: Vec<Vec<GraphSnapshot>> =
        (0..lanes).map(|_| snapshots(&mut rng, 6, t_len)).collect();
    let resets: Vec<bool> = (0..t_len * lanes)
        .map(|r| r < lanes || rng.gen_bool(0.02))
        .collect();
    let ordered: Vec<&GraphSnapshot> = (0..t_len * lanes)
        .map(|r| &per_lane[r % lanes][r / lanes])
        .collect();

    let mut tape = Tape::new();
    let p = policy.params.bind_constant(&mut tape);
    let batch = GraphBatch::from_snapshots(ordered.iter().copied()).unwrap();
    let h0 = PolicyState::zeros(&policy.config, lanes);
    let seq = policy
        .forward(&mut tape, &p, &batch, lanes, &resets, &h0)
        .unwrap();
    let seq_logits = tape.value(seq.logits).clone();
    let seq_values = tape.value(seq.values).clone();

    let mut state = h0;
    let mut worst: f64 = 0.0;
    for t in 0..t_len {
        let rows = &ordered[t * lanes..(t + 1) * lanes];
        let b = GraphBatch::from_snapshots(rows.iter().copied()).unwrap();
        let out = policy
            .step(&b, &resets[t * lanes..(t + 1) * lanes], &state)
            .unwrap();
        for e in 0..lanes {
            let r = t * lanes + e;
            for j in 0..N_LOGITS {
                worst = worst.max((out.logits.get(e, j) - seq_logits.get(r, j)).abs());
            }
            worst = worst.max((out.values[e] - seq_values.get(r, 0)).abs());
        }
        state = out.state;
    }
    assert!(worst < 1e-5, "step/scan gap {worst:e}");
    assert_eq!(seq.final_state(&tape).layers.len(), policy.config.layers);
}

#[test]
fn resets_restart_the_sequence() {
    let mut rng = seeded_rng(8);
    let policy = Policy::new(PolicyConfig::desk(), &mut rng).unwrap();
    let snaps = snapshots(&mut rng, 5, 20);
    let run = |slice: &[GraphSnapshot], resets: &[bool]| {
        let mut tape = Tape::new();
        let p = policy.params.bind_constant(&mut tape);
        let b = GraphBatch::from_snapshots(slice).unwrap();
        let out = policy
            .forward(
                &mut tape,
                &p,
                &b,
                1,
                resets,
                &PolicyState::zeros(&policy.config, 1),
            )
            .unwrap();
        tape.value(out.logits).clone()
    };
    let mut resets = vec![false; 20];
    resets[12] = true;
    let full = run(&snaps, &resets);
    let suffix = run(&snaps[12..], &[vec![true], vec![false; 7]].concat());
    for r in 0..8 {
        for j in 0..N_LOGITS {
            assert!((full.get(12 + r, j) - suffix.get(r, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn feedthrough_only_layer_matches_hand_computation() {
    let mut rng = seeded_rng(9);
    let config = PolicyConfig {
        model_dim: 2,
        layers: 1,
        ..tiny()
    };
    let mut policy = Policy::new(config, &mut rng).unwrap();
    for name in ["s5.0.b_re", "s5.0.b_im", "s5.0.c_re", "s5.0.c_im"] {
        let id = policy.params.id(name).unwrap();
        policy
            .params
            .get_mut(id)
            .data
            .iter_mut()
            .for_each(|x| *x = 0.0);
    }
    let set = |policy: &mut Policy, name: &str, v: &[f64]| {
        let id = policy.params.id(name).unwrap();
        policy.params.get_mut(id).data.copy_from_slice(v);
    };
    set(&mut policy, "s5.0.d", &[0.7, -1.3]);
    set(&mut policy, "s5.0.ln_pre.gain", &[1.5, 0.5]);
    set(&mut policy, "s5.0.ln_pre.bias", &[0.1, -0.2]);
    set(
        &mut policy,
        "s5.0.glu.w",
        &[0.3, -0.4, 0.9, 0.2, 0.5, 0.8, -0.6, 0.1],
    );
    set(&mut policy, "s5.0.glu.b", &[0.05, 0.0, -0.1, 0.2]);
    set(&mut policy, "s5.0.ln_post.gain", &[2.0, 1.0]);
    set(&mut policy, "s5.0.ln_post.bias", &[0.0, 0.3]);

    let u = [0.4, -1.1];
    let mut tape = Tape::new();
    let p = policy.params.bind_constant(&mut tape);
    let uv = tape.constant(Tensor::from_vec(1, 2, u.to_vec()));
    let (y, _) = policy.encode(
        &mut tape,
        &p,
        uv,
        1,
        vec![true].into(),
        &PolicyState::zeros(&policy.config, 1),
    );
    let got = tape.value(y).clone();

    let ln = |x: [f64; 2]| {
        let m = (x[0] + x[1]) / 2.0;
        let v = ((x[0] - m).powi(2) + (x[1] - m).powi(2)) / 2.0;
        let s = (v + 1e-5).sqrt();
        [(x[0] - m) / s, (x[1] - m) / s]
    };
    let n = ln(u);
    let z = [1.5 * n[0] + 0.1, 0.5 * n[1] - 0.2];
    let y = [0.7 * z[0], -1.3 * z[1]];
    // glu.w is 2 x 4 row-major.
    let w = [[0.3, -0.4, 0.9, 0.2], [0.5, 0.8, -0.6, 0.1]];
    let b = [0.05, 0.0, -0.1, 0.2];
    let lin: Vec<f64> = (0..4)
        .map(|j| y[0] * w[0][j] + y[1] * w[1][j] + b[j])
        .collect();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let glu = [lin[0] * sig(lin[2]), lin[1] * sig(lin[3])];
    let post = ln(glu);
    let expect = [u[0] + 2.0 * post[0], u[1] + post[1] + 0.3];
    for j in 0..2 {
        assert!(
            (got.get(0, j) - expect[j]).abs() < 1e-12,
            "{got:?} vs {expect:?}"
        );
    }
}

#[test]
fn zero_input_stays_bounded() {
    let mut rng = seeded_rng(10);
    let policy = Policy::new(PolicyConfig::desk(), &mut rng).unwrap();
    let m = policy.config.model_dim;
    let mut state = PolicyState::zeros(&policy.config, 1);
    // Drive the state away from zero, then feed zeros for a long time.
    let mut tape = Tape::new();
    let p = policy.params.bind_constant(&mut tape);
    let kick = tape.constant(Tensor::filled(50, m, 3.0));
    let (_, xs) = policy.encode(&mut tape, &p, kick, 1, vec![false; 50].into(), &state);
    state.layers = xs
        .iter()
        .map(|&x| tape.value(x).rows_range(49, 1))
        .collect();
    let start: f64 = state.layers.iter().map(|t| t.norm_sq()).sum();
    let mut tape = Tape::new();
    let p = policy.params.bind_constant(&mut tape);
    let zeros = tape.constant(Tensor::zeros(5000, m));
    let (y, xs) = policy.encode(&mut tape, &p, zeros, 1, vec![false; 5000].into(), &state);
    assert!(tape.value(y).is_finite());
    let end: f64 = xs
        .iter()
        .map(|&x| tape.value(x).rows_range(4999, 1).norm_sq())
        .sum();
    assert!(end <= start + 1e-9, "state grew from {start} to {end}");
}

/// Scalar test loss touching logits and values of every row.
fn probe_loss(
    tape: &mut Tape,
    logits: isli_policy::Var,
    values: isli_policy::Var,
    wl: &Tensor,
    wv: &Tensor,
) -> isli_policy::Var {
    let a = tape.constant(wl.clone());
    let b = tape.constant(wv.clone());
    let lp = tape.log_softmax_rows(logits);
    let x = tape.mul(lp, a);
    let y = tape.mul(values, b);
    let y = tape.tanh(y);
    let sx = tape.sum(x);
    let sy = tape.sum(y);
    tape.add(sx, sy)
}

#[test]
fn full_stack_gradients_match_finite_differences() {
    let mut rng = seeded_rng(11);
    let policy = Policy::new(tiny(), &mut rng).unwrap();
    let lanes = 2;
    let t_len = 4;
    let snaps: Vec<GraphSnapshot> = snapshots(&mut rng, 4, t_len * lanes);
    let resets = vec![true, true, false, false, false, true, false, false];
    let mut h0 = PolicyState::zeros(&policy.config, lanes);
    for t in &mut h0.layers {
        t.data
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-0.5..0.5));
    }
    let batch = GraphBatch::from_snapshots(&snaps).unwrap();
    let wl = Tensor::from_vec(
        8,
        N_LOGITS,
        (0..8 * N_LOGITS)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    );
    let wv = Tensor::from_vec(8, 1, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());

    let loss_at = |params: &isli_policy::ParamSet| {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let out = policy
            .forward(&mut tape, &p, &batch, lanes, &resets, &h0)
            .unwrap();
        let l = probe_loss(&mut tape, out.logits, out.values, &wl, &wv);
        (tape.value(l).item(), tape.backward(l))
    };
    let (_, grads) = loss_at(&policy.params);

    let h = 1e-4;
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut perturbed = policy.params.clone();
    for id in 0..policy.params.len() {
        for i in 0..policy.params.get(id).len() {
            let orig = policy.params.get(id).data[i];
            perturbed.get_mut(id).data[i] = orig + h;
            let (lp, _) = loss_at(&perturbed);
            perturbed.get_mut(id).data[i] = orig - h;
            let (lm, _) = loss_at(&perturbed);
            perturbed.get_mut(id).data[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[id].data[i];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            checked += 1;
            if err >= 1e-3 {
                bad.push((policy.params.names()[id].clone(), i, an, fd));
            }
        }
    }
    assert!(
        bad.is_empty(),
        "{} of {checked} coordinates disagree: {:?}",
        bad.len(),
        &bad[..bad.len().min(10)]
    );
}

#[test]
fn gradient_linearity_and_critic_isolation() {
    let mut rng = seeded_rng(12);
    let policy = Policy::new(tiny(), &mut rng).unwrap();
    let snaps = snapshots(&mut rng, 5, 3);
    let batch = GraphBatch::from_snapshots(&snaps).unwrap();
    let h0 = PolicyState::zeros(&policy.config, 1);
    let grads = |scale: f64, actor_only: bool| {
        let mut tape = Tape::new();
        let p = policy.params.bind(&mut tape);
        let out = policy
            .forward(&mut tape, &p, &batch, 1, &[true, false, false], &h0)
            .unwrap();
        let lp = tape.log_softmax_rows(out.logits);
        let mut l = tape.sum(lp);
        if !actor_only {
            let v = tape.sum(out.values);
            l = tape.add(l, v);
        }
        let l = tape.scale(l, scale);
        tape.backward(l)
    };
    let g1 = grads(1.0, false);
    let g2 = grads(2.0, false);
    for (a, b) in g1.iter().zip(&g2) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((2.0 * x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
    let ga = grads(1.0, true);
    for id in policy.critic_param_ids() {
        assert!(ga[id].data.iter().all(|&x| x == 0.0));
    }
    assert!(ga.iter().any(|t| t.data.iter().any(|&x| x != 0.0)));
}
