//! Stitching motion clips into one long sequence: align each clip to the
//! end of the previous one, then bridge the junction by interpolating
//! through a neutral standing pose.

use nalgebra::{UnitQuaternion, Vector3};

use crate::error::{invalid, Result};
use crate::features::{
    extract_features, invert_features, invert_features_anchored, MotionSequence, RootAnchor, HUMO263_V1,
};
use crate::pose::PoseFrame;
use crate::rotation::{heading_angle, heading_rotation, slerp, swing_twist, wrap_angle, Rotation6D};
use crate::skeleton::Skeleton;

pub const DEFAULT_TRANSITION_FRAMES: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct ConcatPlan {
    pub transition_len: usize,
    pub neutral: PoseFrame,
}

impl ConcatPlan {
    pub fn new(transition_len: usize, neutral: PoseFrame) -> Result<Self> {
        if transition_len < 2 {
            return Err(invalid("transition_len must be at least 2"));
        }
        neutral.validate()?;
        Ok(ConcatPlan { transition_len, neutral })
    }
}

impl Default for ConcatPlan {
    fn default() -> Self {
        ConcatPlan {
            transition_len: DEFAULT_TRANSITION_FRAMES,
            neutral: PoseFrame::neutral(),
        }
    }
}

/// Rotates `b` about the vertical axis through its first root position so
/// that its first heading matches the heading of `a_tail`.
pub fn align_orientation(a_tail: &PoseFrame, b: &[PoseFrame]) -> Vec<PoseFrame> {
    let Some(first) = b.first() else {
        return Vec::new();
    };
    let delta = wrap_angle(heading_angle(&a_tail.root_rotation) - heading_angle(&first.root_rotation));
    if delta == 0.0 {
        return b.to_vec();
    }
    let turn = heading_rotation(delta);
    let pivot = first.root_position;
    b.iter()
        .map(|p| {
            let offset = turn * (p.root_position - pivot);
            PoseFrame {
                root_position: pivot + offset,
                root_rotation: turn * p.root_rotation,
                joint_rotations: p.joint_rotations.clone(),
            }
        })
        .collect()
}

/// Shifts `b` horizontally so its first root xz equals that of `a_tail`.
pub fn align_translation(a_tail: &PoseFrame, b: &[PoseFrame]) -> Vec<PoseFrame> {
    let Some(first) = b.first() else {
        return Vec::new();
    };
    b.iter()
        .map(|p| {
            let mut q = p.clone();
            q.root_position.x = a_tail.root_position.x + (p.root_position.x - first.root_position.x);
            q.root_position.z = a_tail.root_position.z + (p.root_position.z - first.root_position.z);
            q
        })
        .collect()
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        a
    } else {
        a + (b - a) * t
    }
}

/// Slerp between joint rotations; identical endpoints and t in {0, 1}
/// return the endpoint itself.
pub fn interpolate_rotation(a: &Rotation6D, b: &Rotation6D, t: f64) -> Result<Rotation6D> {
    if a == b || t == 0.0 {
        return Ok(*a);
    }
    if t == 1.0 {
        return Ok(*b);
    }
    let q = slerp(a.to_quat()?.quaternion(), b.to_quat()?.quaternion(), t)?;
    Ok(Rotation6D::from_quat(&q))
}

fn slerp_unit(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, t: f64) -> Result<UnitQuaternion<f64>> {
    if a == b {
        return Ok(*a);
    }
    slerp(a.quaternion(), b.quaternion(), t)
}

/// The `len` frames bridging `from` to `to`. The first `ceil(len/2)` frames
/// move to the neutral pose, reaching it on the last of them; the rest move
/// from neutral towards `to`, stopping one step short of it. Root xz and
/// heading move uniformly over the whole bridge.
pub fn transition(from: &PoseFrame, to: &PoseFrame, neutral: &PoseFrame, len: usize) -> Result<Vec<PoseFrame>> {
    let joints = from.joint_rotations.len();
    if to.joint_rotations.len() != joints || neutral.joint_rotations.len() != joints {
        return Err(invalid("poses in a transition must share a skeleton"));
    }
    let first_half = len.div_ceil(2);
    let second_half = len / 2;
    let (from_twist, from_swing) = swing_twist(&from.root_rotation);
    let (to_twist, to_swing) = swing_twist(&to.root_rotation);
    let (_, neutral_swing) = swing_twist(&neutral.root_rotation);
    let all_same = from.root_rotation == to.root_rotation && from.root_rotation == neutral.root_rotation;

    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let (src, dst, src_swing, dst_swing, t) = if i < first_half {
            (from, neutral, &from_swing, &neutral_swing, (i + 1) as f64 / first_half as f64)
        } else {
            let s = i + 1 - first_half;
            (neutral, to, &neutral_swing, &to_swing, s as f64 / (second_half + 1) as f64)
        };
        let u = (i + 1) as f64 / (len + 1) as f64;
        let joint_rotations = src
            .joint_rotations
            .iter()
            .zip(&dst.joint_rotations)
            .map(|(a, b)| interpolate_rotation(a, b, t))
            .collect::<Result<Vec<_>>>()?;
        let root_rotation = if all_same {
            from.root_rotation
        } else {
            slerp_unit(&from_twist, &to_twist, u)? * slerp_unit(src_swing, dst_swing, t)?
        };
        let root_position = Vector3::new(
            lerp(from.root_position.x, to.root_position.x, u),
            lerp(src.root_position.y, dst.root_position.y, t),
            lerp(from.root_position.z, to.root_position.z, u),
        );
        out.push(PoseFrame {
            root_position,
            root_rotation,
            joint_rotations,
        });
    }
    Ok(out)
}

/// Aligns `next` to the end of `acc` and appends the bridge and the
/// aligned clip.
fn append_clip(acc: &mut Vec<PoseFrame>, next: &[PoseFrame], plan: &ConcatPlan) -> Result<()> {
    let tail = acc.last().ok_or_else(|| invalid("cannot concatenate an empty clip"))?.clone();
    if next.is_empty() {
        return Err(invalid("cannot concatenate an empty clip"));
    }
    let aligned = align_translation(&tail, &align_orientation(&tail, next));
    acc.extend(transition(&tail, &aligned[0], &plan.neutral, plan.transition_len)?);
    acc.extend(aligned);
    Ok(())
}

/// Concatenates pose clips left to right.
pub fn concat_poses(inputs: &[Vec<PoseFrame>], plan: &ConcatPlan) -> Result<Vec<PoseFrame>> {
    if inputs.len() < 2 {
        return Err(invalid("concatenation needs at least two clips"));
    }
    if plan.transition_len < 2 {
        return Err(invalid("transition_len must be at least 2"));
    }
    let joints = plan.neutral.joint_rotations.len();
    if inputs.iter().flatten().any(|p| p.joint_rotations.len() != joints) {
        return Err(invalid("clips and neutral pose use different skeletons"));
    }
    let mut out = inputs[0].clone();
    if out.is_empty() {
        return Err(invalid("cannot concatenate an empty clip"));
    }
    for clip in &inputs[1..] {
        append_clip(&mut out, clip, plan)?;
    }
    Ok(out)
}

/// Like [`concat_poses`] but bridges with caller-supplied frames, one set
/// per junction. Each bridge is placed after the previous clip as given;
/// the next clip is aligned to the bridge's last frame.
pub fn concat_poses_with(inputs: &[Vec<PoseFrame>], bridges: &[Vec<PoseFrame>]) -> Result<Vec<PoseFrame>> {
    if inputs.len() < 2 || bridges.len() != inputs.len() - 1 {
        return Err(invalid("need at least two clips and one bridge per junction"));
    }
    let mut out = inputs[0].clone();
    for (clip, bridge) in inputs[1..].iter().zip(bridges) {
        if clip.is_empty() || out.is_empty() {
            return Err(invalid("cannot concatenate an empty clip"));
        }
        out.extend(bridge.iter().cloned());
        let tail = out.last().expect("non-empty").clone();
        out.extend(align_translation(&tail, &align_orientation(&tail, clip)));
    }
    Ok(out)
}

fn check_motions(inputs: &[MotionSequence]) -> Result<f64> {
    let first = inputs.first().ok_or_else(|| invalid("concatenation needs at least two clips"))?;
    for m in inputs {
        m.require_layout(HUMO263_V1)?;
        if m.fps != first.fps {
            return Err(invalid(format!("clips mix frame rates {} and {}", first.fps, m.fps)));
        }
    }
    Ok(first.fps)
}

/// Feature-level concatenation: reconstructs poses, stitches them and
/// re-extracts features, recomputing contacts from the new velocities.
pub fn concat(inputs: &[MotionSequence], plan: &ConcatPlan, skeleton: &Skeleton) -> Result<MotionSequence> {
    let fps = check_motions(inputs)?;
    let clips = inputs
        .iter()
        .map(|m| invert_features(m, skeleton))
        .collect::<Result<Vec<_>>>()?;
    extract_features(&concat_poses(&clips, plan)?, skeleton, fps, None)
}

/// Feature-level concatenation with externally generated bridges, each
/// reconstructed starting at the end of the clip before it.
pub fn concat_with_bridges(
    inputs: &[MotionSequence],
    bridges: &[MotionSequence],
    skeleton: &Skeleton,
) -> Result<MotionSequence> {
    let fps = check_motions(inputs)?;
    check_motions(bridges)?;
    if inputs.len() < 2 || bridges.len() != inputs.len() - 1 {
        return Err(invalid("need at least two clips and one bridge per junction"));
    }
    let clips = inputs
        .iter()
        .map(|m| invert_features(m, skeleton))
        .collect::<Result<Vec<_>>>()?;
    let mut out = clips[0].clone();
    for (clip, bridge) in clips[1..].iter().zip(bridges) {
        let tail = out.last().expect("non-empty clip").clone();
        let frames = invert_features_anchored(bridge, skeleton, RootAnchor::of(&tail))?;
        out = concat_poses_with(&[out, clip.clone()], &[frames])?;
    }
    extract_features(&out, skeleton, fps, None)
}
