//! Overlapping body-part views of a `humo263.v1` frame.
//!
//! Each part vector is 71 values: the 6D rotations of its seven joints
//! (42), their root-relative positions (21), then copies of the root span
//! (4) and the contact span (4). Joints that belong to several parts are
//! duplicated on decomposition and averaged on aggregation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::{FEATURE_JOINTS, HUMO263, HUMO263_DIM};
use crate::skeleton::Skeleton;

pub const JOINTS_PER_PART: usize = 7;
pub const PART_DIM: usize = JOINTS_PER_PART * 9 + 8;
pub const PARTITION_FORMAT_VERSION: u32 = 1;

const DEFAULT_PARTS: &str = include_str!("../data/parts.toml");

const PART_ROT: usize = 0;
const PART_POS: usize = JOINTS_PER_PART * 6;
const PART_ROOT: usize = JOINTS_PER_PART * 9;
const PART_CONTACT: usize = PART_ROOT + 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Part {
    pub name: String,
    /// Feature joint indices (skeleton index minus one).
    pub joints: [usize; JOINTS_PER_PART],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionSpec {
    parts: Vec<Part>,
    /// For each feature joint, the (part, slot) pairs that carry it.
    members: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionFile {
    format_version: u32,
    #[serde(default)]
    skeleton: String,
    parts: Vec<PartEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PartEntry {
    name: String,
    joints: Vec<String>,
}

impl PartitionSpec {
    pub fn new(parts: Vec<Part>) -> Result<Self> {
        if parts.is_empty() {
            return Err(invalid("partition needs at least one part"));
        }
        let mut members = vec![Vec::new(); FEATURE_JOINTS];
        for (pi, part) in parts.iter().enumerate() {
            for (slot, &j) in part.joints.iter().enumerate() {
                if j >= FEATURE_JOINTS {
                    return Err(invalid(format!("part '{}' references joint {j}", part.name)));
                }
                if members[j].iter().any(|&(p, _)| p == pi) {
                    return Err(invalid(format!("part '{}' lists joint {j} twice", part.name)));
                }
                members[j].push((pi, slot));
            }
        }
        if let Some(j) = members.iter().position(Vec::is_empty) {
            return Err(invalid(format!("feature joint {j} belongs to no part")));
        }
        Ok(PartitionSpec { parts, members })
    }

    /// The five-part grouping bundled with the crate.
    pub fn body_parts() -> Self {
        Self::from_toml_str(DEFAULT_PARTS, &Skeleton::smpl22()).expect("bundled partition is valid")
    }

    pub fn from_toml_str(text: &str, skeleton: &Skeleton) -> Result<Self> {
        let file: PartitionFile = toml::from_str(text)?;
        if file.format_version != PARTITION_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported partition format_version {}",
                file.format_version
            )));
        }
        let parts = file
            .parts
            .iter()
            .map(|p| {
                if p.joints.len() != JOINTS_PER_PART {
                    return Err(invalid(format!(
                        "part '{}' lists {} joints, expected {JOINTS_PER_PART}",
                        p.name,
                        p.joints.len()
                    )));
                }
                let mut joints = [0; JOINTS_PER_PART];
                for (slot, name) in joints.iter_mut().zip(&p.joints) {
                    *slot = match skeleton.joint_index(name) {
                        Some(0) => return Err(invalid("the root joint travels in the root span")),
                        Some(j) => j - 1,
                        None => return Err(invalid(format!("unknown joint '{name}'"))),
                    };
                }
                Ok(Part {
                    name: p.name.clone(),
                    joints,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parts)
    }

    pub fn load(path: impl AsRef<Path>, skeleton: &Skeleton) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, skeleton)
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    /// Parts (and slots) that carry a feature joint.
    pub fn members(&self, joint: usize) -> &[(usize, usize)] {
        &self.members[joint]
    }

    /// Feature joints carried by more than one part.
    pub fn shared_joints(&self) -> Vec<usize> {
        (0..FEATURE_JOINTS).filter(|&j| self.members[j].len() > 1).collect()
    }

    /// Writes the part vectors of one frame into `out` (`p * 71` values).
    pub fn decompose_into(&self, frame: &[f64], out: &mut [f64]) -> Result<()> {
        if frame.len() != HUMO263_DIM {
            return Err(invalid(format!("frame has {} values, expected {HUMO263_DIM}", frame.len())));
        }
        if out.len() != self.part_count() * PART_DIM {
            return Err(invalid("part buffer has the wrong size"));
        }
        for (part, dst) in self.parts.iter().zip(out.chunks_exact_mut(PART_DIM)) {
            for (slot, &j) in part.joints.iter().enumerate() {
                dst[PART_ROT + 6 * slot..PART_ROT + 6 * slot + 6].copy_from_slice(&frame[HUMO263.rot6d_of(j)]);
                dst[PART_POS + 3 * slot..PART_POS + 3 * slot + 3]
                    .copy_from_slice(&frame[HUMO263.position_of(j)]);
            }
            dst[PART_ROOT..PART_ROOT + 4].copy_from_slice(&frame[HUMO263.root.clone()]);
            dst[PART_CONTACT..PART_CONTACT + 4].copy_from_slice(&frame[HUMO263.contacts.clone()]);
        }
        Ok(())
    }

    pub fn decompose(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.part_count() * PART_DIM];
        self.decompose_into(frame, &mut out)?;
        Ok(out)
    }

    /// Whole-body frame from part vectors. Each value is the mean over the
    /// parts that carry it; contacts are re-binarized where parts disagree.
    pub fn aggregate(&self, parts: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; HUMO263_DIM];
        self.aggregate_into(parts, &mut out)?;
        Ok(out)
    }

    pub fn aggregate_into(&self, parts: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.part_count();
        if parts.len() != p * PART_DIM {
            return Err(invalid(format!(
                "expected {p} part vectors of {PART_DIM} values, got {} values",
                parts.len()
            )));
        }
        if out.len() != HUMO263_DIM {
            return Err(invalid("output frame has the wrong size"));
        }
        let part = |i: usize| &parts[i * PART_DIM..(i + 1) * PART_DIM];
        let mut copies = Vec::with_capacity(p);
        for j in 0..FEATURE_JOINTS {
            let members = &self.members[j];
            let rot = HUMO263.rot6d_of(j);
            for c in 0..6 {
                copies.clear();
                copies.extend(members.iter().map(|&(pi, s)| part(pi)[PART_ROT + 6 * s + c]));
                out[rot.start + c] = mean_of_copies(&mut copies);
            }
            let pos = HUMO263.position_of(j);
            for c in 0..3 {
                copies.clear();
                copies.extend(members.iter().map(|&(pi, s)| part(pi)[PART_POS + 3 * s + c]));
                out[pos.start + c] = mean_of_copies(&mut copies);
            }
        }
        for c in 0..4 {
            copies.clear();
            copies.extend((0..p).map(|pi| part(pi)[PART_ROOT + c]));
            out[HUMO263.root.start + c] = mean_of_copies(&mut copies);

            copies.clear();
            copies.extend((0..p).map(|pi| part(pi)[PART_CONTACT + c]));
            let agree = copies.iter().all(|v| v.to_bits() == copies[0].to_bits());
            let mean = mean_of_copies(&mut copies);
            out[HUMO263.contacts.start + c] = if agree {
                mean
            } else if mean >= 0.5 {
                1.0
            } else {
                0.0
            };
        }
        Ok(())
    }

    /// Linear counterpart of [`aggregate`](Self::aggregate): plain means in
    /// part order, contacts left continuous. Its adjoint is
    /// [`aggregate_mean_backward`](Self::aggregate_mean_backward).
    pub fn aggregate_mean_into(&self, parts: &[f64], out: &mut [f64]) {
        let p = self.part_count();
        out.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..FEATURE_JOINTS {
            let members = &self.members[j];
            let w = 1.0 / members.len() as f64;
            let rot = HUMO263.rot6d_of(j);
            let pos = HUMO263.position_of(j);
            for &(pi, s) in members {
                let src = &parts[pi * PART_DIM..(pi + 1) * PART_DIM];
                for c in 0..6 {
                    out[rot.start + c] += w * src[PART_ROT + 6 * s + c];
                }
                for c in 0..3 {
                    out[pos.start + c] += w * src[PART_POS + 3 * s + c];
                }
            }
        }
        let w = 1.0 / p as f64;
        for pi in 0..p {
            let src = &parts[pi * PART_DIM..(pi + 1) * PART_DIM];
            for c in 0..4 {
                out[HUMO263.root.start + c] += w * src[PART_ROOT + c];
                out[HUMO263.contacts.start + c] += w * src[PART_CONTACT + c];
            }
        }
    }

    /// Accumulates `d(loss)/d(parts)` given `d(loss)/d(whole-body frame)`.
    pub fn aggregate_mean_backward(&self, grad_frame: &[f64], grad_parts: &mut [f64]) {
        let p = self.part_count();
        for j in 0..FEATURE_JOINTS {
            let members = &self.members[j];
            let w = 1.0 / members.len() as f64;
            let rot = HUMO263.rot6d_of(j);
            let pos = HUMO263.position_of(j);
            for &(pi, s) in members {
                let dst = &mut grad_parts[pi * PART_DIM..(pi + 1) * PART_DIM];
                for c in 0..6 {
                    dst[PART_ROT + 6 * s + c] += w * grad_frame[rot.start + c];
                }
                for c in 0..3 {
                    dst[PART_POS + 3 * s + c] += w * grad_frame[pos.start + c];
                }
            }
        }
        let w = 1.0 / p as f64;
        for pi in 0..p {
            let dst = &mut grad_parts[pi * PART_DIM..(pi + 1) * PART_DIM];
            for c in 0..4 {
                dst[PART_ROOT + c] += w * grad_frame[HUMO263.root.start + c];
                dst[PART_CONTACT + c] += w * grad_frame[HUMO263.contacts.start + c];
            }
        }
    }
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self::body_parts()
    }
}

/// Mean of duplicated values, independent of their order. Identical
/// copies return the shared value unchanged.
fn mean_of_copies(values: &mut [f64]) -> f64 {
    let first = values[0];
    if values.iter().all(|v| v.to_bits() == first.to_bits()) {
        return first;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}
