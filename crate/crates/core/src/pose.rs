use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rotation::Rotation6D;

pub const POSE_FORMAT_VERSION: u32 = 1;
const ROOT_UNIT_TOLERANCE: f64 = 1e-9;

const NEUTRAL_POSE: &str = include_str!("../data/neutral.toml");

/// Root transform plus parent-relative rotations of every non-root joint.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseFrame {
    pub root_position: Vector3<f64>,
    pub root_rotation: UnitQuaternion<f64>,
    pub joint_rotations: Vec<Rotation6D>,
}

/// Serialized pose: quaternion as `[w, x, y, z]`, rotations as 6-vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    pub root_position: [f64; 3],
    pub root_rotation: [f64; 4],
    pub joint_rotations: Vec<[f64; 6]>,
}

impl PoseFrame {
    pub fn new(
        root_position: Vector3<f64>,
        root_rotation: Quaternion<f64>,
        joint_rotations: Vec<Rotation6D>,
    ) -> Result<Self> {
        let n = root_rotation.norm();
        if !n.is_finite() || (n - 1.0).abs() > ROOT_UNIT_TOLERANCE {
            return Err(invalid(format!("root rotation norm {n} is not unit within 1e-9")));
        }
        let pose = PoseFrame {
            root_position,
            root_rotation: UnitQuaternion::new_unchecked(root_rotation),
            joint_rotations,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Root at the origin, every rotation identity.
    pub fn identity(joint_count: usize) -> Self {
        PoseFrame {
            root_position: Vector3::zeros(),
            root_rotation: UnitQuaternion::identity(),
            joint_rotations: vec![Rotation6D::IDENTITY; joint_count.saturating_sub(1)],
        }
    }

    /// The bundled arms-down standing pose for the 22-joint skeleton.
    pub fn neutral() -> Self {
        Self::from_toml_str(NEUTRAL_POSE).expect("bundled neutral pose is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.root_position.iter().all(|x| x.is_finite())
            && self.root_rotation.coords.iter().all(|x| x.is_finite())
            && self.joint_rotations.iter().all(Rotation6D::is_finite);
        if !finite {
            return Err(invalid("pose contains NaN or infinite values"));
        }
        Ok(())
    }

    pub fn to_record(&self) -> PoseRecord {
        let q = self.root_rotation;
        PoseRecord {
            format_version: None,
            root_position: self.root_position.into(),
            root_rotation: [q.w, q.i, q.j, q.k],
            joint_rotations: self.joint_rotations.iter().map(Rotation6D::to_array).collect(),
        }
    }

    pub fn from_record(r: &PoseRecord) -> Result<Self> {
        let [w, x, y, z] = r.root_rotation;
        // Files carry decimal text; renormalize anything within the loose tolerance.
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > crate::rotation::UNIT_TOLERANCE {
            return Err(invalid(format!("root rotation norm {n} is not unit")));
        }
        PoseFrame::new(
            Vector3::from(r.root_position),
            q / n,
            r.joint_rotations.iter().map(|v| Rotation6D::from_array(*v)).collect(),
        )
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let rec: PoseRecord = toml::from_str(text)?;
        match rec.format_version {
            Some(POSE_FORMAT_VERSION) => Self::from_record(&rec),
            other => Err(Error::Parse(format!("unsupported pose format_version {other:?}"))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let mut rec = self.to_record();
        rec.format_version = Some(POSE_FORMAT_VERSION);
        toml::to_string(&rec).expect("pose serializes")
    }
}

/// Reads one JSON pose record per line; blank lines are skipped.
pub fn read_pose_lines(reader: impl BufRead) -> Result<Vec<PoseFrame>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        out.push(PoseFrame::from_record(&rec)?);
    }
    Ok(out)
}

pub fn write_pose_lines(mut writer: impl Write, poses: &[PoseFrame]) -> Result<()> {
    for p in poses {
        serde_json::to_writer(&mut writer, &p.to_record())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neutral_pose_loads() {
        let p = PoseFrame::neutral();
        assert_eq!(p.joint_rotations.len(), 21);
        assert!((p.root_position.y - 0.93).abs() < 1e-12);
        let back = PoseFrame::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn non_unit_root_rejected() {
        let q = Quaternion::new(1.0, 0.1, 0.0, 0.0);
        assert!(PoseFrame::new(Vector3::zeros(), q, vec![]).is_err());
    }

    #[test]
    fn nan_rejected() {
        let mut p = PoseFrame::identity(22);
        p.joint_rotations[3].a[1] = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn json_lines_round_trip() {
        let poses = vec![PoseFrame::neutral(), PoseFrame::identity(22)];
        let mut buf = Vec::new();
        write_pose_lines(&mut buf, &poses).unwrap();
        let back = read_pose_lines(buf.as_slice()).unwrap();
        assert_eq!(back, poses);
    }
}
