//! The `humo263.v1` per-frame feature vector: parent-relative 6D joint
//! rotations, a 4D root span, redundant root-relative joint positions and
//! four foot-contact flags.

use std::ops::Range;

use nalgebra::{UnitQuaternion, Vector3};

use crate::error::{invalid, Error, Result};
use crate::pose::PoseFrame;
use crate::rotation::{heading_angle, heading_rotation, wrap_angle, Rotation6D};
use crate::skeleton::{Skeleton, BODY_JOINTS};

pub const HUMO263_V1: &str = "humo263.v1";
pub const RAW_LAYOUT: &str = "raw";

/// Non-root joints carried by the feature vector.
pub const FEATURE_JOINTS: usize = BODY_JOINTS - 1;

/// Named spans of the `humo263.v1` layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub rot6d: Range<usize>,
    pub root: Range<usize>,
    pub positions: Range<usize>,
    pub contacts: Range<usize>,
}

pub const HUMO263: FeatureLayout = FeatureLayout {
    rot6d: 0..126,
    root: 126..130,
    positions: 130..193,
    contacts: 193..197,
};

impl FeatureLayout {
    pub const fn dim(&self) -> usize {
        self.contacts.end
    }

    pub fn rot6d_of(&self, joint: usize) -> Range<usize> {
        let s = self.rot6d.start + 6 * joint;
        s..s + 6
    }

    pub fn position_of(&self, joint: usize) -> Range<usize> {
        let s = self.positions.start + 3 * joint;
        s..s + 3
    }
}

pub const HUMO263_DIM: usize = HUMO263.dim();

// Root span offsets.
const ROOT_YAW_RATE: usize = 0;
const ROOT_VX: usize = 1;
const ROOT_VZ: usize = 2;
const ROOT_HEIGHT: usize = 3;

/// Contact joints in span order: left heel, right heel, left toe, right toe.
pub const CONTACT_JOINTS: [&str; 4] = ["left_ankle", "right_ankle", "left_foot", "right_foot"];

/// T x D feature frames, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: usize,
    dim: usize,
    pub fps: f64,
    layout: String,
    data: Vec<f64>,
}

impl MotionSequence {
    pub fn new(frames: usize, dim: usize, fps: f64, layout: impl Into<String>, data: Vec<f64>) -> Result<Self> {
        let layout = layout.into();
        if frames == 0 {
            return Err(invalid("motion needs at least one frame"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(invalid(format!("fps must be positive, got {fps}")));
        }
        if layout.len() > 16 || layout.is_empty() {
            return Err(invalid(format!("layout tag '{layout}' must be 1..=16 bytes")));
        }
        if layout == HUMO263_V1 && dim != HUMO263_DIM {
            return Err(invalid(format!("{HUMO263_V1} needs D = {HUMO263_DIM}, got {dim}")));
        }
        if dim == 0 || data.len() != frames * dim {
            return Err(invalid(format!(
                "data length {} does not match {frames} x {dim}",
                data.len()
            )));
        }
        Ok(MotionSequence {
            frames,
            dim,
            fps,
            layout,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], fps: f64, layout: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("rows have differing lengths"));
        }
        Self::new(rows.len(), dim, fps, layout, rows.concat())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> &str {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn require_layout(&self, layout: &str) -> Result<()> {
        if self.layout != layout {
            return Err(Error::UnsupportedLayout(format!(
                "expected '{layout}', got '{}'",
                self.layout
            )));
        }
        Ok(())
    }
}

/// Default contact speed threshold: 0.005 m/frame at 20 fps, scaled by 20/fps.
pub fn default_contact_threshold(fps: f64) -> f64 {
    0.005 * 20.0 / fps
}

/// World xz position and heading the reconstruction starts from.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RootAnchor {
    pub x: f64,
    pub z: f64,
    pub heading: f64,
}

impl RootAnchor {
    pub fn of(pose: &PoseFrame) -> Self {
        RootAnchor {
            x: pose.root_position.x,
            z: pose.root_position.z,
            heading: heading_angle(&pose.root_rotation),
        }
    }
}

fn contact_indices(skeleton: &Skeleton) -> Result<[usize; 4]> {
    let mut idx = [0; 4];
    for (slot, name) in idx.iter_mut().zip(CONTACT_JOINTS) {
        *slot = skeleton
            .joint_index(name)
            .ok_or_else(|| invalid(format!("skeleton lacks contact joint '{name}'")))?;
    }
    Ok(idx)
}

fn require_body(skeleton: &Skeleton) -> Result<()> {
    if skeleton.joint_count() != BODY_JOINTS {
        return Err(invalid(format!(
            "{HUMO263_V1} needs a {BODY_JOINTS}-joint skeleton, got {}",
            skeleton.joint_count()
        )));
    }
    Ok(())
}

/// Root-relative joint positions in the heading frame, non-root joints only.
fn local_positions(world: &[Vector3<f64>], root: &PoseFrame) -> Vec<Vector3<f64>> {
    let inv = heading_rotation(-heading_angle(&root.root_rotation));
    world[1..].iter().map(|p| inv * (p - root.root_position)).collect()
}

/// Builds `humo263.v1` features from a pose sequence of at least two frames.
pub fn extract_features(
    poses: &[PoseFrame],
    skeleton: &Skeleton,
    fps: f64,
    contact_threshold: Option<f64>,
) -> Result<MotionSequence> {
    require_body(skeleton)?;
    if poses.len() < 2 {
        return Err(invalid("feature extraction needs at least two frames"));
    }
    let threshold = contact_threshold.unwrap_or_else(|| default_contact_threshold(fps));
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(invalid(format!("contact threshold must be positive, got {threshold}")));
    }
    let contact_idx = contact_indices(skeleton)?;
    let world: Vec<Vec<Vector3<f64>>> = poses
        .iter()
        .map(|p| {
            p.validate()?;
            skeleton.forward_kinematics(p)
        })
        .collect::<Result<_>>()?;
    let headings: Vec<f64> = poses.iter().map(|p| heading_angle(&p.root_rotation)).collect();

    let t_len = poses.len();
    let mut data = vec![0.0; t_len * HUMO263_DIM];
    for (t, pose) in poses.iter().enumerate() {
        let row = &mut data[t * HUMO263_DIM..(t + 1) * HUMO263_DIM];
        for (j, r) in pose.joint_rotations.iter().enumerate() {
            row[HUMO263.rot6d_of(j)].copy_from_slice(&r.to_array());
        }
        // Velocities look back one frame; frame 0 borrows frame 1's.
        let cur = t.max(1);
        let prev = cur - 1;
        let dp = poses[cur].root_position - poses[prev].root_position;
        let dp_local = heading_rotation(-headings[prev]) * dp;
        let root = &mut row[HUMO263.root.clone()];
        root[ROOT_YAW_RATE] = wrap_angle(headings[cur] - headings[prev]);
        root[ROOT_VX] = dp_local.x;
        root[ROOT_VZ] = dp_local.z;
        root[ROOT_HEIGHT] = pose.root_position.y;

        for (j, p) in local_positions(&world[t], pose).iter().enumerate() {
            row[HUMO263.position_of(j)].copy_from_slice(p.as_slice());
        }
        for (c, &joint) in contact_idx.iter().enumerate() {
            let speed = (world[cur][joint] - world[prev][joint]).norm();
            row[HUMO263.contacts.start + c] = if speed < threshold { 1.0 } else { 0.0 };
        }
    }
    MotionSequence::new(t_len, HUMO263_DIM, fps, HUMO263_V1, data)
}

/// Reconstructs poses starting at the world origin facing +z.
pub fn invert_features(motion: &MotionSequence, skeleton: &Skeleton) -> Result<Vec<PoseFrame>> {
    invert_features_anchored(motion, skeleton, RootAnchor::default())
}

/// Reconstructs poses by integrating the root span from `anchor`. Joint
/// rotations come straight from the 6D span; the position span is unused.
/// The layout carries the root's heading only, so reconstructed root
/// rotations are pure rotations about +y.
pub fn invert_features_anchored(
    motion: &MotionSequence,
    skeleton: &Skeleton,
    anchor: RootAnchor,
) -> Result<Vec<PoseFrame>> {
    motion.require_layout(HUMO263_V1)?;
    require_body(skeleton)?;
    let mut heading = anchor.heading;
    let mut xz = (anchor.x, anchor.z);
    let mut out = Vec::with_capacity(motion.frames());
    for (t, row) in motion.rows().enumerate() {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(invalid(format!("frame {t} contains non-finite values")));
        }
        let root = &row[HUMO263.root.clone()];
        if t > 0 {
            let step = heading_rotation(heading) * Vector3::new(root[ROOT_VX], 0.0, root[ROOT_VZ]);
            xz = (xz.0 + step.x, xz.1 + step.z);
            heading += root[ROOT_YAW_RATE];
        }
        let joint_rotations = (0..FEATURE_JOINTS)
            .map(|j| Rotation6D::from_slice(&row[HUMO263.rot6d_of(j)]))
            .collect::<Result<Vec<_>>>()?;
        out.push(PoseFrame {
            root_position: Vector3::new(xz.0, root[ROOT_HEIGHT], xz.1),
            root_rotation: UnitQuaternion::from_axis_angle(&Vector3::y_axis(), heading),
            joint_rotations,
        });
    }
    Ok(out)
}

/// Max absolute deviation (meters) between the stored position span and
/// positions recomputed by forward kinematics from the reconstructed poses.
pub fn validate_positions(motion: &MotionSequence, skeleton: &Skeleton) -> Result<f64> {
    let poses = invert_features(motion, skeleton)?;
    let mut worst: f64 = 0.0;
    for (row, pose) in motion.rows().zip(&poses) {
        let world = skeleton.forward_kinematics(pose)?;
        for (j, p) in local_positions(&world, pose).iter().enumerate() {
            let stored = &row[HUMO263.position_of(j)];
            for k in 0..3 {
                worst = worst.max((stored[k] - p[k]).abs());
            }
        }
    }
    Ok(worst)
}

/// World joint positions for each frame of a pose sequence.
pub fn joint_tracks(poses: &[PoseFrame], skeleton: &Skeleton) -> Result<Vec<Vec<Vector3<f64>>>> {
    poses.iter().map(|p| skeleton.forward_kinematics(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_poses(n: usize) -> Vec<PoseFrame> {
        vec![PoseFrame::neutral(); n]
    }

    #[test]
    fn spans_cover_dimension() {
        let l = &HUMO263;
        assert_eq!(l.rot6d.end, l.root.start);
        assert_eq!(l.root.end, l.positions.start);
        assert_eq!(l.positions.end, l.contacts.start);
        assert_eq!(l.dim(), 197);
        assert_eq!(l.rot6d.len(), 126);
        assert_eq!(l.positions.len(), 63);
    }

    #[test]
    fn static_pose_features() {
        let skel = Skeleton::smpl22();
        let m = extract_features(&static_poses(10), &skel, 20.0, None).unwrap();
        assert_eq!(m.dim(), 197);
        let first = m.frame(0).to_vec();
        for row in m.rows() {
            assert_eq!(&row[126..129], &[0.0, 0.0, 0.0]);
            assert_eq!(&row[193..197], &[1.0; 4]);
            assert_eq!(row, first.as_slice());
        }
        let back = invert_features(&m, &skel).unwrap();
        assert!(back.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn pure_translation() {
        let skel = Skeleton::smpl22();
        let poses: Vec<_> = (0..6)
            .map(|t| {
                let mut p = PoseFrame::neutral();
                p.root_position.x += 0.02 * t as f64;
                p
            })
            .collect();
        let m = extract_features(&poses, &skel, 20.0, None).unwrap();
        for row in m.rows() {
            let root = &row[126..130];
            assert!(root[0].abs() < 1e-15);
            assert!((root[1] - 0.02).abs() < 1e-12);
            assert!(root[2].abs() < 1e-15);
            assert_eq!(root[3], 0.93);
        }
    }

    #[test]
    fn single_frame_and_nan_rejected() {
        let skel = Skeleton::smpl22();
        assert!(extract_features(&static_poses(1), &skel, 20.0, None).is_err());
        let mut poses = static_poses(3);
        poses[1].root_position.y = f64::NAN;
        assert!(extract_features(&poses, &skel, 20.0, None).is_err());
    }

    #[test]
    fn unknown_layout_rejected() {
        let m = MotionSequence::new(2, 3, 20.0, RAW_LAYOUT, vec![0.0; 6]).unwrap();
        assert!(matches!(
            invert_features(&m, &Skeleton::smpl22()),
            Err(Error::UnsupportedLayout(_))
        ));
    }

    #[test]
    fn motion_sequence_invariants() {
        assert!(MotionSequence::new(0, 197, 20.0, HUMO263_V1, vec![]).is_err());
        assert!(MotionSequence::new(1, 196, 20.0, HUMO263_V1, vec![0.0; 196]).is_err());
        assert!(MotionSequence::new(1, 3, 0.0, RAW_LAYOUT, vec![0.0; 3]).is_err());
        assert!(MotionSequence::new(1, 3, 20.0, "a-very-long-layout-tag", vec![0.0; 3]).is_err());
    }

    #[test]
    fn threshold_scales_with_fps() {
        assert_eq!(default_contact_threshold(20.0), 0.005);
        assert_eq!(default_contact_threshold(40.0), 0.0025);
    }
}
