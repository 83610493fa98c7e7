//! Joint hierarchy and forward kinematics.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pose::PoseFrame;

pub const SKELETON_FORMAT_VERSION: u32 = 1;
/// Joint count of the body skeleton used by the motion features.
pub const BODY_JOINTS: usize = 22;

const DEFAULT_SKELETON: &str = include_str!("../data/smpl22.toml");

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    name: String,
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    rest_offsets: Vec<Vector3<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SkeletonFile {
    format_version: u32,
    #[serde(default)]
    name: String,
    joints: Vec<JointEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JointEntry {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    offset: [f64; 3],
}

impl Skeleton {
    /// Builds a skeleton from parent links. Joint 0 is the root and every
    /// other joint's parent must precede it.
    pub fn new(
        name: impl Into<String>,
        joint_names: Vec<String>,
        parents: Vec<Option<usize>>,
        rest_offsets: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        let n = joint_names.len();
        if n == 0 || parents.len() != n || rest_offsets.len() != n {
            return Err(invalid(format!(
                "skeleton arrays disagree: {} names, {} parents, {} offsets",
                n,
                parents.len(),
                rest_offsets.len()
            )));
        }
        if parents[0].is_some() {
            return Err(invalid("joint 0 must be the root"));
        }
        if rest_offsets[0] != Vector3::zeros() {
            return Err(invalid("root rest offset must be zero"));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                Some(p) => {
                    return Err(invalid(format!("joint {j} has parent {p} that does not precede it")))
                }
                None => return Err(invalid(format!("joint {j} has no parent; only the root may"))),
            }
        }
        if rest_offsets.iter().any(|o| !o.iter().all(|x| x.is_finite())) {
            return Err(invalid("non-finite rest offset"));
        }
        Ok(Skeleton {
            name: name.into(),
            joint_names,
            parents,
            rest_offsets,
        })
    }

    /// The bundled 22-joint SMPL body skeleton.
    pub fn smpl22() -> Self {
        Self::from_toml_str(DEFAULT_SKELETON).expect("bundled skeleton is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SkeletonFile = toml::from_str(text)?;
        if file.format_version != SKELETON_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported skeleton format_version {}",
                file.format_version
            )));
        }
        let index: HashMap<&str, usize> = file
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| (j.name.as_str(), i))
            .collect();
        if index.len() != file.joints.len() {
            return Err(invalid("duplicate joint names"));
        }
        let parents = file
            .joints
            .iter()
            .map(|j| match &j.parent {
                None => Ok(None),
                Some(p) => index
                    .get(p.as_str())
                    .copied()
                    .map(Some)
                    .ok_or_else(|| invalid(format!("unknown parent '{p}' of joint '{}'", j.name))),
            })
            .collect::<Result<Vec<_>>>()?;
        let skel = Skeleton::new(
            file.name,
            file.joints.iter().map(|j| j.name.clone()).collect(),
            parents,
            file.joints.iter().map(|j| Vector3::from(j.offset)).collect(),
        )?;
        if skel.joint_count() != BODY_JOINTS {
            return Err(invalid(format!(
                "skeleton file must define {BODY_JOINTS} joints, found {}",
                skel.joint_count()
            )));
        }
        Ok(skel)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SkeletonFile {
            format_version: SKELETON_FORMAT_VERSION,
            name: self.name.clone(),
            joints: (0..self.joint_count())
                .map(|j| JointEntry {
                    name: self.joint_names[j].clone(),
                    parent: self.parents[j].map(|p| self.joint_names[p].clone()),
                    offset: self.rest_offsets[j].into(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("skeleton serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn rest_offset(&self, joint: usize) -> Vector3<f64> {
        self.rest_offsets[joint]
    }

    /// World positions of every joint for one pose.
    pub fn forward_kinematics(&self, pose: &PoseFrame) -> Result<Vec<Vector3<f64>>> {
        let n = self.joint_count();
        if pose.joint_rotations.len() + 1 != n {
            return Err(invalid(format!(
                "pose has {} joint rotations, skeleton needs {}",
                pose.joint_rotations.len(),
                n - 1
            )));
        }
        let mut world_rot: Vec<Matrix3<f64>> = Vec::with_capacity(n);
        let mut world_pos: Vec<Vector3<f64>> = Vec::with_capacity(n);
        world_rot.push(pose.root_rotation.to_rotation_matrix().into_inner());
        world_pos.push(pose.root_position);
        for j in 1..n {
            let p = self.parents[j].expect("validated tree");
            let local = pose.joint_rotations[j - 1].to_matrix()?;
            let pos = world_pos[p] + world_rot[p] * self.rest_offsets[j];
            let rot = world_rot[p] * local;
            world_pos.push(pos);
            world_rot.push(rot);
        }
        Ok(world_pos)
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::smpl22()
    }
}
