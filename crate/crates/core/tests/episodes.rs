use isli_core::dynamics::step;
use isli_core::env::{decode_action, env_step, episode_seed, reset, ACTION_LEVELS};
use isli_core::observation::{graph_features, sp_edge_features, update_interactions};
use isli_core::reward::{self, RewardInputs};
use isli_core::rng::{keyed_rng, seeded_rng};
use isli_core::trace::EpisodeTrace;
use isli_core::{ActionId, Env, EnvConfig, InteractionLedger, SwarmState, Vec2, VecEnv};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Greedy chase of a target point on the action grid.
fn toward(from: Vec2, to: Vec2) -> ActionId {
    let level = |d: f64| ((d / 0.05).round().clamp(-6.0, 6.0) + 6.0) as usize;
    ActionId::new(level(to.x - from.x), level(to.y - from.y))
}

#[test]
fn leader_index_is_uniform_over_resets() {
    let config = EnvConfig::default().with_agents(7);
    let mut counts = [0u32; 7];
    for s in 0..10_000u64 {
        let (state, _, _) = reset(&config, episode_seed(99, 0, s)).unwrap();
        counts[state.leader_index] += 1;
    }
    let expect = 10_000.0 / 7.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expect).powi(2) / expect)
        .sum();
    let p = 1.0 - ChiSquared::new(6.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 = {chi2}, p = {p}, counts {counts:?}");
}

#[test]
fn sixty_four_envs_stay_finite() {
    let config = EnvConfig::default();
    let mut venv = VecEnv::new(config, 64, 2024).unwrap();
    let mut rng = keyed_rng(2024, &[7]);
    let mut episodes = 0;
    for _ in 0..1000 {
        let actions: Vec<ActionId> = (0..64)
            .map(|_| {
                ActionId::new(
                    rng.gen_range(0..ACTION_LEVELS),
                    rng.gen_range(0..ACTION_LEVELS),
                )
            })
            .collect();
        for r in venv.step(&actions).unwrap() {
            assert!(r.reward.is_finite());
            let obs = r.info.final_observation.as_ref().unwrap_or(&r.observation);
            assert!(obs.node_features.iter().flatten().all(|v| v.is_finite()));
            assert!(obs.edge_features.iter().all(|v| v.is_finite()));
            assert!(obs.graph_features.iter().all(|v| v.is_finite()));
            if r.done() {
                episodes += 1;
                assert_eq!(r.observation.k, 0);
                assert!(r.observation.sp_ratios().iter().all(|&x| x == 0.0));
            }
        }
        for env in venv.envs() {
            assert!(env.state().positions.iter().all(|p| p.is_finite()));
        }
    }
    assert!(episodes > 0);
}

#[test]
fn batch_of_one_matches_scalar_env() {
    let config = EnvConfig::default().with_agents(5);
    let mut venv = VecEnv::new(config.clone(), 1, 3).unwrap();
    let mut env_config = config;
    env_config.seed = episode_seed(3, 0, 0);
    let mut env = Env::new(env_config).unwrap();
    for k in 0..100 {
        let a = ActionId::new(k % 13, (k * 7) % 13);
        let b = venv.step(&[a]).unwrap().remove(0);
        let s = env.step(a).unwrap();
        assert_eq!(b.reward, s.reward);
        if s.done() {
            break;
        }
        assert_eq!(b.observation, s.observation);
    }
}

#[test]
fn scripted_episode_rewards_recompose() {
    let config = EnvConfig::default().with_agents(3);
    let (mut state, _, mut ledger) = reset(&config, 17).unwrap();
    let mut env_config = config.clone();
    env_config.seed = 17;
    let mut env = Env::new(env_config).unwrap();
    let mut steps = 0;
    loop {
        let action = toward(state.prober_position, state.leader_position());
        let r = env.step(action).unwrap();

        let v = decode_action(action).unwrap();
        let next = step(&state, &config.flock, v).unwrap();
        let q = update_interactions(&ledger, &next, &config.flock).q;
        let expect = reward::total(&RewardInputs {
            q: &q,
            leader_index: next.leader_index,
            prev_leader_distance: state.prober_leader_distance(),
            leader_distance: next.prober_leader_distance(),
            prev_velocity: state.prober_velocity,
            velocity: v,
        });
        assert_eq!(r.reward, expect.r_total);
        assert_eq!(r.info.q, q);

        let t = env_step(&state, &ledger, &config, action, steps).unwrap();
        state = t.state;
        ledger = t.ledger;
        steps += 1;
        if r.done() {
            break;
        }
    }
    assert!(steps > 10);
    assert!(
        ledger.total() > 0,
        "chasing the leader never touched anyone"
    );
}

#[test]
fn ledger_matches_brute_force_counts() {
    let config = EnvConfig::default().with_agents(6);
    let mut env_config = config.clone();
    env_config.seed = 5;
    let mut env = Env::new(env_config).unwrap();
    let mut brute = vec![0u64; 6];
    let mut prev_q = vec![0u64; 6];
    while !env.is_done() {
        let target = env.state().swarm_centroid();
        let r = env
            .step(toward(env.state().prober_position, target))
            .unwrap();
        let s = env.state();
        for (i, p) in s.positions.iter().enumerate() {
            if (s.prober_position - *p).norm() <= config.flock.prober_radius {
                brute[i] += 1;
            }
        }
        assert_eq!(r.info.q, brute);
        assert!(r.info.q.iter().zip(&prev_q).all(|(a, b)| a >= b));
        prev_q = r.info.q.clone();

        let feats = sp_edge_features(env.ledger());
        assert!(feats.iter().all(|&f| (1.0..=2.0).contains(&f)));
        if env.ledger().total() > 0 {
            let s: f64 = feats.iter().map(|f| f - 1.0).sum();
            assert!((s - 1.0).abs() < 1e-12);
            let ratios = reward::ratio(&env.ledger().q);
            for (f, r) in feats.iter().zip(ratios) {
                assert!((f - 1.0 - r).abs() < 1e-15);
            }
        }
    }
    assert!(brute.iter().sum::<u64>() > 0);
}

#[test]
fn same_seed_same_stream() {
    let config = EnvConfig::default();
    let run = || {
        let mut v = VecEnv::new(config.clone(), 2, 77).unwrap();
        let mut out = Vec::new();
        for k in 0..300 {
            let a = ActionId::new(k % 13, 12 - k % 13);
            out.extend(v.step(&[a, a]).unwrap());
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn teleported_prober_terminates() {
    let mut config = EnvConfig::default().with_agents(4);
    config.seed = 1;
    let mut env = Env::new(config).unwrap();
    let c = env.state().swarm_centroid();
    env.state_mut().prober_position = c + Vec2::new(6.0, 0.0);
    let r = env.step(ActionId::new(6, 6)).unwrap();
    assert!(r.terminated && !r.truncated);
    assert!(env.step(ActionId::new(6, 6)).is_err());
}

#[test]
fn trace_round_trips_and_replays() {
    let mut config = EnvConfig::default().with_agents(5);
    config.seed = 41;
    config.max_steps = 200;
    let mut env = Env::new(config.clone()).unwrap();
    let mut trace = EpisodeTrace::new(env.state());
    let mut rng = seeded_rng(41);
    while !env.is_done() {
        let a = ActionId::new(rng.gen_range(0..13), rng.gen_range(0..13));
        let r = env.step(a).unwrap();
        trace.push(env.state(), a, &r);
    }
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + env.k() + 1);

    let back = EpisodeTrace::read_csv(&buf[..]).unwrap();
    assert_eq!(back.actions(), trace.actions());

    let mut replay = Env::new(config).unwrap();
    let rewards: Vec<f64> = back
        .actions()
        .into_iter()
        .map(|a| replay.step(a).unwrap().reward)
        .collect();
    assert_eq!(rewards, trace.rewards());
}

#[test]
fn rigid_rotation_features() {
    let n = 12;
    let radius = 1.3;
    let omega: f64 = 0.4;
    let dt = 0.001;
    let positions: Vec<Vec2> = (0..n)
        .map(|i| {
            radius * Vec2::from_angle(i as f64 * std::f64::consts::TAU / n as f64)
                + Vec2::new(3.0, -2.0)
        })
        .collect();
    let s0 = SwarmState {
        headings: vec![0.0; n],
        prober_position: Vec2::ZERO,
        prober_velocity: Vec2::ZERO,
        leader_index: 0,
        goal_position: Vec2::ZERO,
        leader_integral: Vec2::ZERO,
        sim_time: 0.0,
        positions: positions.clone(),
    };
    let ledger = InteractionLedger::new(&s0);
    let mut s1 = s0.clone();
    let c = Vec2::new(3.0, -2.0);
    let (sn, cs) = (omega * dt).sin_cos();
    for p in &mut s1.positions {
        let r = *p - c;
        *p = c + Vec2::new(cs * r.x - sn * r.y, sn * r.x + cs * r.y);
    }
    let g = graph_features(&ledger, &s1, dt, 1);
    assert!(g[4] < 1e-9, "centroid speed {}", g[4]);
    assert!(
        (g[8].abs() - 1.0).abs() < 1e-3,
        "rotational tendency {}",
        g[8]
    );
    assert!(
        (g[7] - omega * radius * radius).abs() < 1e-3,
        "angular momentum {}",
        g[7]
    );
}

#[test]
fn relabeled_state_gives_relabeled_snapshot() {
    let mut config = EnvConfig::default().with_agents(5);
    config.seed = 12;
    let mut env = Env::new(config.clone()).unwrap();
    for k in 0..40 {
        env.step(toward(
            env.state().prober_position,
            env.state().positions[k % 5],
        ))
        .unwrap();
    }
    let perm = [3usize, 0, 4, 1, 2];
    let snap = env.observation().relabel(&perm).unwrap();

    let s = env.state();
    let mut t = s.clone();
    let mut ledger = env.ledger().clone();
    for (i, &p) in perm.iter().enumerate() {
        t.positions[p] = s.positions[i];
        t.headings[p] = s.headings[i];
        ledger.q[p] = env.ledger().q[i];
    }
    t.leader_index = perm[s.leader_index];
    let direct = isli_core::observation::build_snapshot(
        &t,
        &ledger,
        &config.flock,
        config.norm_length(),
        env.k(),
    );
    assert_eq!(snap.node_features, direct.node_features);
    assert_eq!(snap.edge_features, direct.edge_features);
    assert_eq!(snap.senders, direct.senders);
    assert!(env.observation().relabel(&[0, 0, 1, 2, 3]).is_err());
}
