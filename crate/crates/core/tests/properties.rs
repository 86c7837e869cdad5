mod common;

use common::{arc_trajectory, max_curvature};
use midsim::geometry::{apply_perturbation, wrap_angle, PerturbOffsets, PerturbOutcome, PerturbParams, Pose};
use midsim::losses::{collision_loss, geometry_loss, onroad_loss};
use midsim::net::memory_update;
use midsim::net::ops::{argmax, softmax};
use midsim::raster::RenderConfig;
use midsim::sim::{classify_outcome, step_dynamics, Controls, SimConfig, VehicleState, MAX_STEERING};
use midsim::trainer::source_log;
use midsim::world::{make_scenario, ScenarioKind};
use proptest::prelude::*;
use std::f64::consts::PI;

proptest! {
    #[test]
    fn wrap_angle_lands_in_half_open_range(a in -1e4f64..1e4) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        let turns = (a - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn raster_round_trip(
        x in -500.0f64..500.0, y in -500.0f64..500.0, th in -PI..PI, jitter in -0.5f64..0.5,
        u in 0.0f64..128.0, v in 0.0f64..128.0,
    ) {
        let cfg = RenderConfig::desk();
        let f = cfg.frame(Pose::new(x, y, th, 0.0), jitter);
        let (wx, wy) = f.raster_to_world(u, v);
        let (u2, v2) = f.world_to_raster(wx, wy);
        prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
        let rel = f.heading_to_raster(th + 0.3);
        prop_assert!((wrap_angle(f.heading_to_world(rel) - th - 0.3)).abs() < 1e-9);
    }

    #[test]
    fn perturbation_invariants(
        n in 7usize..31, speed in 2.0f64..15.0, kappa in -0.05f64..0.05, th0 in -PI..PI,
        lon in -0.5f64..0.5, lat in -0.5f64..0.5, dh in (-PI / 3.0)..(PI / 3.0),
    ) {
        let traj = arc_trajectory(n, 0.2, speed, kappa, 3.0, -2.0, th0);
        let params = PerturbParams::default();
        let offsets = PerturbOffsets { longitudinal: lon, lateral: lat, heading: dh };
        match apply_perturbation(&traj, offsets, &params).unwrap() {
            PerturbOutcome::Accepted { trajectory, curve, .. } => {
                for i in [0, n - 1] {
                    prop_assert!(trajectory.poses[i].distance(&traj.poses[i]) <= 1e-6);
                    prop_assert!(wrap_angle(trajectory.poses[i].theta - traj.poses[i].theta).abs() <= 1e-6);
                }
                let m = n / 2;
                let (a, b) = (traj.poses[m], trajectory.poses[m]);
                let [fx, fy] = a.forward();
                let (dx, dy) = (b.x - a.x, b.y - a.y);
                prop_assert!((dx * fx + dy * fy).abs() <= 0.5 + 1e-6);
                prop_assert!((-dx * fy + dy * fx).abs() <= 0.5 + 1e-6);
                prop_assert!(wrap_angle(b.theta - a.theta).abs() <= PI / 3.0 + 1e-6);
                let t1 = traj.end_time();
                let pts: Vec<[f64; 2]> = (0..=400 * (n - 1)).map(|i| curve.position(t1 * i as f64 / (400 * (n - 1)) as f64)).collect();
                prop_assert!(max_curvature(&pts) <= params.max_curvature_per_m * 1.01);
            }
            PerturbOutcome::Rejected { max_curvature, .. } => {
                prop_assert!(max_curvature > params.max_curvature_per_m);
            }
        }
    }

    #[test]
    fn zero_range_perturbation_is_identity(n in 5usize..25, speed in 1.0f64..12.0, kappa in -0.05f64..0.05) {
        let traj = arc_trajectory(n, 0.2, speed, kappa, 0.0, 0.0, 0.4);
        let out = apply_perturbation(&traj, PerturbOffsets::default(), &PerturbParams::default()).unwrap();
        let p = out.accepted().expect("identity is accepted").clone();
        for (a, b) in p.poses.iter().zip(&traj.poses) {
            prop_assert!(a.distance(b) < 1e-6);
            prop_assert!(wrap_angle(a.theta - b.theta).abs() < 1e-6);
        }
    }

    #[test]
    fn dynamics_respect_limits(
        speed in 0.0f64..20.0, controls in prop::collection::vec((-5.0f64..5.0, -10.0f64..10.0), 1..60), dt in 0.01f64..0.1,
    ) {
        let mut s = VehicleState::new(Pose::new(0.0, 0.0, 0.0, speed));
        for (rate, acc) in controls {
            s = step_dynamics(&s, Controls { steering_rate: rate, acceleration: acc }, dt).unwrap();
            prop_assert!(s.pose.speed >= 0.0);
            prop_assert!(s.steering.abs() <= MAX_STEERING);
            prop_assert!(s.pose.x.is_finite() && s.pose.y.is_finite());
        }
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..200), shift in -100.0f64..100.0) {
        let mut p = vec![0.0; z.len()];
        softmax(&z, &mut p);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v > 0.0));
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let mut q = vec![0.0; z.len()];
        softmax(&shifted, &mut q);
        prop_assert_eq!(argmax(&p), argmax(&q));
        prop_assert_eq!(argmax(&z), argmax(&p));
    }

    #[test]
    fn memory_counts_every_step(w in 4usize..20, h in 4usize..20, picks in prop::collection::vec((0usize..1000, 0usize..1000), 1..30)) {
        let mut m = vec![0.0f32; w * h];
        for (i, &(u, v)) in picks.iter().enumerate() {
            m = memory_update(&m, w, (u % w, v % h)).unwrap();
            prop_assert_eq!(m.iter().sum::<f32>(), (i + 1) as f32);
        }
        prop_assert!(memory_update(&m, w, (w, 0)).is_err());
    }

    #[test]
    fn overlap_losses_are_nonnegative_and_linear(
        b in prop::collection::vec(0.0f64..1.0, 64), m in prop::collection::vec(prop::bool::ANY, 64), k in 0.0f64..5.0,
    ) {
        let mask: Vec<f32> = m.iter().map(|&x| x as u8 as f32).collect();
        let kb: Vec<f64> = b.iter().map(|v| k * v).collect();
        for f in [collision_loss::<f64>, onroad_loss::<f64>, geometry_loss::<f64>] {
            let (l, lk) = (f(&b, &mask), f(&kb, &mask));
            prop_assert!(l >= 0.0);
            prop_assert!((lk - k * l).abs() <= 1e-12 * (1.0 + lk.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn classification_is_total(
        kind in 0usize..5, variation in 0usize..20, steps in 1usize..80,
        dx in 0.0f64..2.0, dy in -0.3f64..0.3, speed in 0.0f64..15.0,
    ) {
        let sc = make_scenario(ScenarioKind::ALL[kind], variation, 7).unwrap();
        let start = sc.ego_start;
        let (s, c) = start.theta.sin_cos();
        let trace: Vec<(f64, VehicleState)> = (0..steps)
            .map(|i| {
                let f = i as f64;
                let p = Pose::new(start.x + c * dx * f - s * dy * f, start.y + s * dx * f + c * dy * f, start.theta, speed);
                (sc.warmup + 0.1 * f, VehicleState::new(p))
            })
            .collect();
        prop_assert!(classify_outcome(&trace, &[], &sc, &SimConfig::default()).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn worlds_are_deterministic_and_the_expert_behaves(seed in 0u64..1000, index in 0usize..10) {
        let a = source_log(seed, index).unwrap();
        let b = source_log(seed, index).unwrap();
        prop_assert_eq!(&a.log, &b.log);
        prop_assert_eq!(&a.world, &b.world);
        let limit = a.world.lanes.iter().map(|l| l.speed_limit).fold(0.0, f64::max);
        for p in &a.log.poses {
            prop_assert!(p.speed <= limit + 1e-6, "speed {} over {}", p.speed, limit);
            prop_assert!(a.world.contains_point(p.position()), "off road at {:?}", p.position());
        }
    }
}
