mod common;

use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatnav_core::env::{
    write_log_csv, Env, EnvConfig, EnvWorld, RandomizationConfig, Stage, Termination,
};
use splatnav_core::relight::EnvLight;
use splatnav_core::scene::{gen_forest, load_scene, save_scene, ForestParams};
use splatnav_core::world::{check_collision, CollisionSpec, SpatialIndex, StartGoal};

fn brute_collision(points: &[Vector3<f64>], p: &Vector3<f64>, spec: &CollisionSpec) -> (bool, f64) {
    let mut hit = false;
    let mut d_obs = f64::INFINITY;
    for q in points {
        if (q.z - p.z).abs() > spec.h_tol {
            continue;
        }
        let d = ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt();
        hit |= d <= spec.r_col;
        if d <= spec.obstacle_radius() {
            d_obs = d_obs.min(d);
        }
    }
    (hit, d_obs)
}

#[test]
fn collision_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<Vector3<f64>> = (0..5000)
        .map(|_| Vector3::new(rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0), rng.gen_range(0.0..4.0)))
        .collect();
    let index = SpatialIndex::build(points.clone());
    let spec = CollisionSpec::default();
    for _ in 0..10_000 {
        let p = Vector3::new(rng.gen_range(-1.0..31.0), rng.gen_range(-1.0..31.0), rng.gen_range(0.0..4.0));
        let got = check_collision(&index, &p, &spec);
        let (hit, d) = brute_collision(&points, &p, &spec);
        assert_eq!(got.collided, hit);
        assert_eq!(got.d_obs, d);
    }
}

#[test]
fn scene_file_round_trip() {
    let scene = gen_forest(5, &ForestParams::square(16.0, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.bin");
    save_scene(&scene, &path).unwrap();
    assert_eq!(load_scene(&path).unwrap(), scene);
    assert!(load_scene(&dir.path().join("missing.bin")).is_err());
}

fn world(trees: usize) -> Arc<EnvWorld> {
    let scene = gen_forest(9, &ForestParams::square(60.0, trees)).unwrap();
    Arc::new(EnvWorld::new(scene, None, EnvLight::default_sky(2), &EnvConfig::default()).unwrap())
}

#[test]
fn randomization_draws_stay_in_range() {
    let cfg = RandomizationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let mut noise = Vec::with_capacity(n);
    for _ in 0..n {
        let s = cfg.draw_step(&mut rng, 0.1);
        assert!((0.0..=80.0).contains(&s.latency_ms));
        assert!((10.0..=100.0).contains(&s.control_interval_ms));
        noise.push(s.action_noise);
        let e = cfg.draw_episode(&mut rng, Stage::RandomizedLight);
        assert!(e.camera_position_offset.iter().all(|v| v.abs() <= 0.1));
        assert!(e.camera_orientation_offset_deg.iter().all(|v| v.abs() <= 5.0));
        assert!((0.0..std::f64::consts::TAU).contains(&e.light.rotation));
        assert!((0.3..=1.7).contains(&e.light.intensity));
        assert!(e.light.tint.iter().all(|t| (0.8..=1.2).contains(t)));
    }
    let mean = noise.iter().sum::<f64>() / n as f64;
    let sd = (noise.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!(mean.abs() < 3.0 / (n as f64).sqrt());
    assert!((sd - 1.0).abs() < 3.0 / (2.0 * n as f64).sqrt());
}

#[test]
fn commands_never_act_before_their_latency() {
    let mut env = Env::new(world(20), EnvConfig::default()).unwrap();
    env.reset(17, Stage::StaticLight).unwrap();
    let mut issued = Vec::new();
    for i in 0..80 {
        let t0 = issued.last().map_or(0.0, |(_, t, _): &(usize, f64, f64)| *t);
        let r = env.step(if i % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        let t_issue = r.info.sim_time - r.info.randomization.step.control_interval_ms / 1000.0;
        assert!((t_issue - t0).abs() < 1e-9);
        issued.push((i, r.info.sim_time, r.info.randomization.step.latency_ms));
        for seg in &r.info.segments {
            if let Some(k) = seg.issued_by {
                let start_k = if k == 0 { 0.0 } else { issued[k - 1].1 };
                assert!(seg.t0 + 1e-12 >= start_k + issued[k].2 / 1000.0, "step {k} acted early");
            }
        }
        if r.terminated {
            break;
        }
    }
}

#[test]
fn straight_flight_reaches_goal_dead_ahead() {
    let mut cfg = EnvConfig::default();
    cfg.randomization.enabled = false;
    let mut env = Env::new(world(0), cfg).unwrap();
    let sg = StartGoal {
        start: Vector3::new(5.0, 5.0, 1.5),
        goal: Vector3::new(45.0, 35.0, 1.5),
        yaw: (30.0f64).atan2(40.0),
    };
    env.reset_at(0, Stage::StaticLight, sg).unwrap();
    let mut last = None;
    for _ in 0..600 {
        let r = env.step(0.0).unwrap();
        if r.terminated {
            last = Some(r);
            break;
        }
    }
    let last = last.unwrap();
    assert_eq!(last.reason, Termination::Success);
    assert_eq!(last.info.components.success, 1.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    write_log_csv(&path, env.episode_log()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("seed,step,action"));
    assert_eq!(text.lines().count(), env.episode_log().len() + 1);
}

#[test]
fn flying_into_a_trunk_is_a_collision() {
    let scene = gen_forest(9, &ForestParams::square(60.0, 30)).unwrap();
    let trunk = splatnav_core::scene::trunk_positions(&scene, ForestParams::default().trunk_spacing)[0];
    let mut cfg = EnvConfig::default();
    cfg.randomization.enabled = false;
    let w = Arc::new(EnvWorld::new(scene, None, EnvLight::default_sky(2), &cfg).unwrap());
    let mut env = Env::new(w, cfg).unwrap();
    let target = Vector3::new(trunk[0] as f64, trunk[1] as f64, 1.5);
    let start = target - Vector3::new(6.0, 0.0, 0.0);
    let sg = StartGoal { start, goal: target + Vector3::new(40.0, 0.0, 0.0), yaw: 0.0 };
    env.reset_at(0, Stage::StaticLight, sg).unwrap();
    let mut reason = Termination::Running;
    for _ in 0..100 {
        let r = env.step(0.0).unwrap();
        if r.terminated {
            assert_eq!(r.info.components.collision, 1.0);
            assert!(r.reward <= -50.0 + 10.0);
            reason = r.reason;
            break;
        }
    }
    assert_eq!(reason, Termination::Collision);
}

#[test]
fn episodes_are_reproducible_across_instances() {
    let w = world(30);
    let trace = |seed| {
        let mut env = Env::new(w.clone(), EnvConfig::default()).unwrap();
        let obs = env.reset(seed, Stage::RandomizedLight).unwrap();
        let mut out = vec![obs.image.iter().map(|&b| b as f64).sum::<f64>()];
        for i in 0..30 {
            let r = env.step((i as f64 * 0.37).sin()).unwrap();
            out.push(r.reward);
            out.extend(r.observation.state);
            if r.terminated {
                break;
            }
        }
        out
    };
    assert_eq!(trace(5), trace(5));
    assert_ne!(trace(5), trace(6));
}
