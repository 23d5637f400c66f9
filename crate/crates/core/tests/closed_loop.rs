use nalgebra::{Matrix3, Rotation3, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quadplan::control::{se3_control, DesiredAttitude, FlatReference, TrackingController};
use quadplan::data::TaskSampler;
use quadplan::dynamics::{advance, integrate, QuadState};
use quadplan::minsnap::solve_minsnap;
use quadplan::params::Vehicle;
use quadplan::rollout::{rollout_cost, SimConfig};

fn quiet() -> Vehicle {
    Vehicle::preset("crazyflie-default")
        .unwrap()
        .with_overrides([("sigma_m", 0.0)])
        .unwrap()
}

#[test]
fn hover_regulation_from_offset() {
    let v = quiet();
    let target = Vector3::new(5.0, 5.0, 5.0);
    let reference = FlatReference::hover(target, 0.0);
    let mut s = QuadState::hover_at(target + Vector3::new(0.05, 0.0, 0.0), &v.params);
    let ctrl = TrackingController::new(v.params.clone(), v.gains);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..500 {
        let out = ctrl.update(&s, &reference).unwrap();
        s = advance(&s, &out.allocation.rotor_speeds, &v.params, 0.01, 5, &mut rng).unwrap();
    }
    let err = (s.position - target).norm();
    assert!(err < 1e-3, "residual offset {err}");
}

#[test]
fn gentle_tracking_without_saturation() {
    let v = quiet();
    let sampler = TaskSampler::default();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = sampler.sample(&mut rng).unwrap();
        let traj = solve_minsnap(&w, 0.5).unwrap();
        let out = rollout_cost(&traj, &v.params, &v.gains, &SimConfig::default(), &mut rng).unwrap();
        assert!(out.max_error < 0.05, "seed {seed}: {}", out.max_error);
        assert_eq!(out.saturated_ticks, 0, "seed {seed}");
        assert!(!out.crashed);
    }
}

fn spinning_state(v: &Vehicle) -> QuadState {
    let mut s = QuadState::hover_at(Vector3::new(1.0, 2.0, 3.0), &v.params);
    s.velocity = Vector3::new(1.0, -0.5, 0.3);
    s.omega = Vector3::new(2.0, -1.0, 0.5);
    s.rotation = *Rotation3::from_euler_angles(0.2, -0.1, 0.4).matrix();
    s
}

fn fly(v: &Vehicle, cmd: &Vector4<f64>, t: f64, n: usize) -> QuadState {
    let mut s = spinning_state(v);
    let h = t / n as f64;
    for _ in 0..n {
        s = integrate(&s, cmd, &v.params, h).unwrap();
    }
    s
}

#[test]
fn rk4_global_error_is_fourth_order() {
    let v = quiet();
    let hover = v.params.hover_speed();
    let cmd = Vector4::new(hover * 1.05, hover * 0.97, hover * 1.02, hover * 0.99);
    let t = 0.1;
    let truth = fly(&v, &cmd, t, 6400);
    let err = |n| {
        let s = fly(&v, &cmd, t, n);
        (s.position - truth.position).norm() + (s.omega - truth.omega).norm() * 1e-2
    };
    let (e1, e2) = (err(100), err(200));
    let ratio = e1 / e2;
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio} ({e1:e} / {e2:e})");
}

#[test]
fn controller_is_translation_and_yaw_equivariant() {
    let v = quiet();
    let ctrl = TrackingController::new(v.params.clone(), v.gains);
    let mut reference = FlatReference::hover(Vector3::new(1.0, 1.0, 4.0), 0.3);
    reference.vel = Vector3::new(0.5, 0.2, -0.1);
    reference.acc = Vector3::new(1.0, -0.5, 0.2);
    reference.jerk = Vector3::new(0.3, 0.1, 0.0);
    reference.yaw_rate = 0.1;
    let mut s = spinning_state(&v);
    s.rotation = *Rotation3::from_euler_angles(0.05, -0.08, 0.25).matrix();
    let base = ctrl.update(&s, &reference).unwrap().wrench;

    let shift = Vector3::new(-3.0, 2.0, 7.0);
    let mut r2 = reference.clone();
    r2.pos += shift;
    let mut s2 = s.clone();
    s2.position += shift;
    let moved = ctrl.update(&s2, &r2).unwrap().wrench;
    assert!((moved.thrust - base.thrust).abs() < 1e-12);
    assert!((moved.moment - base.moment).norm() < 1e-12);

    let theta = 0.7;
    let rz = *Rotation3::from_axis_angle(&Vector3::z_axis(), theta).matrix();
    let mut r3 = reference.clone();
    r3.pos = rz * r3.pos;
    r3.vel = rz * r3.vel;
    r3.acc = rz * r3.acc;
    r3.jerk = rz * r3.jerk;
    r3.snap = rz * r3.snap;
    r3.yaw += theta;
    let mut s3 = s.clone();
    s3.position = rz * s3.position;
    s3.velocity = rz * s3.velocity;
    s3.rotation = rz * s3.rotation;
    let turned = ctrl.update(&s3, &r3).unwrap().wrench;
    assert!((turned.thrust - base.thrust).abs() < 1e-9 * base.thrust.abs());
    assert!((turned.moment - base.moment).norm() < 1e-9 * (1.0 + base.moment.norm()));
}

#[test]
fn attitude_error_is_antisymmetric() {
    let v = quiet();
    let reference = FlatReference::hover(Vector3::zeros(), 0.0);
    let ra = *Rotation3::from_euler_angles(0.3, -0.2, 0.5).matrix();
    let rb = *Rotation3::from_euler_angles(-0.1, 0.25, -0.4).matrix();
    let moment = |actual: Matrix3<f64>, desired: Matrix3<f64>| {
        let mut s = QuadState::hover_at(Vector3::zeros(), &v.params);
        s.rotation = actual;
        let att = DesiredAttitude {
            rotation: desired,
            omega: Vector3::zeros(),
            omega_dot: Vector3::zeros(),
        };
        se3_control(&s, &reference, &att, &v.gains, &v.params).moment
    };
    let ab = moment(ra, rb);
    let ba = moment(rb, ra);
    assert!(ab.norm() > 1e-6);
    assert!((ab + ba).norm() < 1e-15);
}

#[test]
fn rotation_stays_orthonormal_under_noise() {
    let v = Vehicle::preset("crazyflie-default").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = TaskSampler::default().sample(&mut rng).unwrap();
    let traj = solve_minsnap(&w, 2.0).unwrap();
    let ctrl = TrackingController::new(v.params.clone(), v.gains);
    let mut s = QuadState::hover_at(traj.position(0.0).unwrap(), &v.params);
    for k in 0..200 {
        let t = (k as f64 * 0.01).min(traj.total_duration());
        let r = quadplan::control::eval_reference(&traj, t).unwrap();
        let out = ctrl.update(&s, &r).unwrap();
        s = advance(&s, &out.allocation.rotor_speeds, &v.params, 0.01, 5, &mut rng).unwrap();
        assert!(s.orthonormality_error() < 1e-6);
        assert!(s
            .rotor_speeds
            .iter()
            .all(|w| (v.params.omega_min..=v.params.omega_max).contains(w)));
    }
}
