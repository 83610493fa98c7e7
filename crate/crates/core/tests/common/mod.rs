//! Synthetic motion shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use humotok::features::extract_features;
use humotok::{MotionSequence, PoseFrame, Rotation6D, Skeleton};
use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FPS: f64 = 20.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Haar-uniform rotation from a normalized Gaussian 4-vector.
pub fn random_quat(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]))
}

pub fn random_axis(rng: &mut impl Rng) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if v.norm() > 1e-3 {
            return Unit::new_normalize(v);
        }
    }
}

struct JointWave {
    axis: Unit<Vector3<f64>>,
    amplitude: f64,
    freq: f64,
    phase: f64,
}

/// A walking clip: heading-only root turning at a constant rate, joints
/// oscillating about random axes.
pub fn smooth_clip(frames: usize, seed: u64) -> Vec<PoseFrame> {
    let mut rng = rng(seed);
    let joints = Skeleton::smpl22().joint_count() - 1;
    let waves: Vec<JointWave> = (0..joints)
        .map(|_| JointWave {
            axis: random_axis(&mut rng),
            amplitude: rng.random_range(0.1..0.5),
            freq: rng.random_range(0.3..1.5),
            phase: rng.random_range(0.0..TAU),
        })
        .collect();
    let speed = rng.random_range(0.2..1.2);
    let turn = rng.random_range(-0.5..0.5);
    let heading0 = rng.random_range(-3.0..3.0);
    let (mut x, mut z) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let dt = 1.0 / FPS;
    (0..frames)
        .map(|t| {
            let time = t as f64 * dt;
            let heading = heading0 + turn * time;
            if t > 0 {
                x += speed * dt * heading.sin();
                z += speed * dt * heading.cos();
            }
            let joint_rotations = waves
                .iter()
                .map(|w| {
                    let angle = w.amplitude * (TAU * w.freq * time + w.phase).sin();
                    Rotation6D::from_quat(&UnitQuaternion::from_axis_angle(&w.axis, angle))
                })
                .collect();
            PoseFrame {
                root_position: Vector3::new(x, 0.9 + 0.02 * (TAU * 2.0 * time).sin(), z),
                root_rotation: UnitQuaternion::from_axis_angle(&Vector3::y_axis(), heading),
                joint_rotations,
            }
        })
        .collect()
}

pub fn smooth_motion(frames: usize, seed: u64) -> MotionSequence {
    extract_features(&smooth_clip(frames, seed), &Skeleton::smpl22(), FPS, None).expect("valid synthetic clip")
}

pub fn max_point_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}
