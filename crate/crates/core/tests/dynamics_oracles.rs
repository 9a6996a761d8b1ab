use isli_core::dynamics::{
    cohesion_directions, cohesion_displacement, energy_align, energy_cohere_with, energy_gradients,
    energy_separate, interaction_forces, leader_command, leader_velocity, step,
};
use isli_core::geom::wrap_angle;
use isli_core::rng::seeded_rng;
use isli_core::{FlockParams, SwarmState, Vec2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_state(rng: &mut ChaCha8Rng, n: usize, spread: f64, floor: f64) -> SwarmState {
    let mut positions: Vec<Vec2> = Vec::new();
    while positions.len() < n {
        let p = Vec2::new(
            rng.gen_range(-spread..spread),
            rng.gen_range(-spread..spread),
        );
        if positions.iter().all(|q| (*q - p).norm() > 2.0 * floor) {
            positions.push(p);
        }
    }
    SwarmState {
        headings: (0..n).map(|_| rng.gen_range(-3.1..3.1)).collect(),
        prober_position: Vec2::new(
            rng.gen_range(-spread..spread),
            rng.gen_range(-spread..spread),
        ),
        prober_velocity: Vec2::ZERO,
        leader_index: rng.gen_range(0..n),
        goal_position: Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)),
        leader_integral: Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        sim_time: 0.0,
        positions,
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn torques_and_forces_match_central_differences() {
    let params = FlockParams::default();
    let mut rng = seeded_rng(11);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut active_pairs = 0;
    for trial in 0..100 {
        let n = 3 + trial % 6;
        let state = random_state(&mut rng, n, 0.6, params.distance_floor);
        let dirs = cohesion_directions(&state, &params);
        let heading_energy =
            |s: &SwarmState| energy_align(s, &params) + energy_cohere_with(s, &params, &dirs);
        let g = energy_gradients(&state, &params);
        for i in 0..n {
            let mut plus = state.clone();
            let mut minus = state.clone();
            plus.headings[i] += h;
            minus.headings[i] -= h;
            let fd = -(heading_energy(&plus) - heading_energy(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(g.torques[i], fd));

            for axis in 0..2 {
                let mut plus = state.clone();
                let mut minus = state.clone();
                if axis == 0 {
                    plus.positions[i].x += h;
                    minus.positions[i].x -= h;
                } else {
                    plus.positions[i].y += h;
                    minus.positions[i].y -= h;
                }
                let fd = -(energy_separate(&plus, &params) - energy_separate(&minus, &params))
                    / (2.0 * h);
                let analytic = if axis == 0 {
                    g.forces[i].x
                } else {
                    g.forces[i].y
                };
                if analytic != 0.0 {
                    active_pairs += 1;
                }
                worst = worst.max(rel_err(analytic, fd));
            }
        }
    }
    assert!(
        active_pairs > 50,
        "separation barely exercised ({active_pairs})"
    );
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn cohesion_matches_straight_summation() {
    let params = FlockParams::default();
    let mut rng = seeded_rng(3);
    for _ in 0..50 {
        let state = random_state(&mut rng, 4, 2.0, params.distance_floor);
        let l = state.leader_index;
        for i in (0..4).filter(|&i| i != l) {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut count = 0.0;
            for j in 0..4 {
                if j == i || j == l {
                    continue;
                }
                let dx = state.positions[j].x - state.positions[i].x;
                let dy = state.positions[j].y - state.positions[i].y;
                if (dx * dx + dy * dy).sqrt() < params.d_coh {
                    sx += dx;
                    sy += dy;
                    count += 1.0;
                }
            }
            sx += params.w_leader * (state.positions[l].x - state.positions[i].x);
            sy += params.w_leader * (state.positions[l].y - state.positions[i].y);
            let d = cohesion_displacement(&state, &params, i).unwrap();
            assert!((d.x - sx / (count + params.w_leader)).abs() < 1e-12);
            assert!((d.y - sy / (count + params.w_leader)).abs() < 1e-12);
        }
    }
}

#[test]
fn leader_law_term_by_term() {
    let params = FlockParams::default();
    let mut rng = seeded_rng(5);
    for _ in 0..20 {
        let s = random_state(&mut rng, 5, 2.0, params.distance_floor);
        let l = s.leader_index;
        let mut mean = Vec2::ZERO;
        for (j, p) in s.positions.iter().enumerate() {
            if j != l {
                mean += *p / 4.0;
            }
        }
        let pl = s.positions[l];
        let expect = Vec2::new(
            params.k_p * (s.goal_position.x - pl.x)
                + params.k_i * s.leader_integral.x
                + params.k_la * (mean.x - pl.x),
            params.k_p * (s.goal_position.y - pl.y)
                + params.k_i * s.leader_integral.y
                + params.k_la * (mean.y - pl.y),
        );
        assert!((leader_velocity(&s, &params) - expect).norm() < 1e-12);
    }
}

#[test]
fn step_recomposes_from_components() {
    let params = FlockParams::default();
    let mut rng = seeded_rng(8);
    for _ in 0..20 {
        let s = random_state(&mut rng, 4, 0.3, params.distance_floor);
        let action = Vec2::new(0.1, -0.25);
        let next = step(&s, &params, action).unwrap();
        let g = energy_gradients(&s, &params);
        let f = interaction_forces(&s, &params);
        let vl = leader_command(&s, &params);
        for i in 0..4 {
            let v = if i == s.leader_index {
                vl + f.per_agent[i]
            } else {
                g.forces[i] + params.v_max * s.heading_vector(i) + f.per_agent[i]
            };
            assert!((next.positions[i] - (s.positions[i] + v * params.dt)).norm() < 1e-12);
            if i != s.leader_index {
                let th = wrap_angle(s.headings[i] + g.torques[i] * params.dt);
                assert!((wrap_angle(next.headings[i] - th)).abs() < 1e-12);
            }
        }
        let pp = s.prober_position + (action + f.prober_reaction) * params.dt;
        assert!((next.prober_position - pp).norm() < 1e-12);
        assert_eq!(next.prober_velocity, action);
    }
}

#[test]
fn translation_equivariance_and_determinism() {
    let params = FlockParams::default();
    let mut rng = seeded_rng(21);
    for _ in 0..30 {
        let s = random_state(&mut rng, 6, 1.0, params.distance_floor);
        let shift = Vec2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        let mut t = s.clone();
        for p in &mut t.positions {
            *p += shift;
        }
        t.prober_position += shift;
        t.goal_position += shift;
        let a = step(&s, &params, Vec2::new(0.05, 0.3)).unwrap();
        let b = step(&t, &params, Vec2::new(0.05, 0.3)).unwrap();
        for i in 0..6 {
            assert!((b.positions[i] - shift - a.positions[i]).norm() < 1e-9);
        }
        assert!((b.prober_position - shift - a.prober_position).norm() < 1e-9);
        let again = step(&s, &params, Vec2::new(0.05, 0.3)).unwrap();
        assert_eq!(a, again);
    }
}

#[test]
fn separation_pushes_pairs_apart() {
    let params = FlockParams::default();
    let mut rng = seeded_rng(34);
    for _ in 0..100 {
        let s = random_state(&mut rng, 5, 0.3, params.distance_floor);
        let g = energy_gradients(&s, &params);
        // Check each pair's own separation contribution.
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let pair = SwarmState {
                    positions: vec![s.positions[i], s.positions[j]],
                    headings: vec![0.0, 0.0],
                    leader_index: 1,
                    ..s.clone()
                };
                let f = energy_gradients(&pair, &params).forces[0];
                assert!(f.dot(s.positions[i] - s.positions[j]) >= 0.0);
            }
        }
        assert!(g.forces.iter().all(|f| f.is_finite()));
    }
}

#[test]
fn energies_vanish_at_activation_radii() {
    let params = FlockParams::default();
    for (d, which) in [(params.d_al, 0), (params.d_sep, 1)] {
        let s = SwarmState {
            positions: vec![Vec2::ZERO, Vec2::new(d, 0.0)],
            headings: vec![0.0, 3.0],
            prober_position: Vec2::new(50.0, 0.0),
            prober_velocity: Vec2::ZERO,
            leader_index: 1,
            goal_position: Vec2::ZERO,
            leader_integral: Vec2::ZERO,
            sim_time: 0.0,
        };
        let e = if which == 0 {
            energy_align(&s, &params)
        } else {
            energy_separate(&s, &params)
        };
        assert_eq!(e, 0.0);
        let mut inside = s.clone();
        inside.positions[1].x = d * (1.0 - 1e-6);
        let e = if which == 0 {
            energy_align(&inside, &params)
        } else {
            energy_separate(&inside, &params)
        };
        assert!(e > 0.0 && e < 1e-9);
    }
}
