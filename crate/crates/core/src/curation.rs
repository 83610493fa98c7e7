//! Clip quality gates over 2D keypoint tracks: occlusion (too few confident
//! keypoints in too many frames) and minimum length.
//!
//! Keypoint records are JSON lines:
//! `{"clip_id": "walk_01", "frames": [[[x, y, confidence], ...], ...]}`
//! with the same keypoint count in every frame and confidences in [0, 1].
//! A manifest is a text file with one clip id per line; blank lines and
//! lines starting with `#` are skipped.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_KEYPOINTS: usize = 17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointRecord {
    pub clip_id: String,
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl KeypointRecord {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| invalid(format!("clip '{}' has no frames", self.clip_id)))?;
        let k = first.len();
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != k {
                return Err(invalid(format!("clip '{}' frame {t} has {} keypoints, expected {k}", self.clip_id, f.len())));
            }
            if let Some(kp) = f.iter().find(|kp| !(0.0..=1.0).contains(&kp[2]) || !kp[0].is_finite() || !kp[1].is_finite()) {
                return Err(invalid(format!("clip '{}' frame {t} has invalid keypoint {kp:?}", self.clip_id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub conf_threshold: f64,
    pub min_visible_keypoints: usize,
    pub min_frames: usize,
    pub min_visible_frame_ratio: f64,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            conf_threshold: 0.5,
            min_visible_keypoints: 8,
            min_frames: 16,
            min_visible_frame_ratio: 0.8,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.conf_threshold > 0.0 && self.conf_threshold <= 1.0) {
            return Err(invalid("conf_threshold must lie in (0, 1]"));
        }
        if self.min_visible_keypoints == 0 || self.min_frames == 0 {
            return Err(invalid("min_visible_keypoints and min_frames must be positive"));
        }
        if !(self.min_visible_frame_ratio > 0.0 && self.min_visible_frame_ratio <= 1.0) {
            return Err(invalid("min_visible_frame_ratio must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: FilterPolicy = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionReport {
    pub visible: Vec<bool>,
    pub ratio: f64,
    pub pass: bool,
}

pub fn occlusion_filter(record: &KeypointRecord, policy: &FilterPolicy) -> Result<OcclusionReport> {
    record.validate()?;
    let visible: Vec<bool> = record
        .frames
        .iter()
        .map(|f| f.iter().filter(|kp| kp[2] >= policy.conf_threshold).count() >= policy.min_visible_keypoints)
        .collect();
    let ratio = visible.iter().filter(|&&v| v).count() as f64 / visible.len() as f64;
    Ok(OcclusionReport {
        pass: ratio >= policy.min_visible_frame_ratio,
        visible,
        ratio,
    })
}

pub fn length_filter(frames: usize, policy: &FilterPolicy) -> bool {
    frames >= policy.min_frames
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Occluded,
    Short,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipVerdict {
    pub clip_id: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failed_rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub frames: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub visible_frame_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub schema_version: u32,
    pub policy: FilterPolicy,
    /// Where the thresholds come from.
    pub threshold_source: String,
    pub counts: BTreeMap<Verdict, usize>,
    pub clips: Vec<ClipVerdict>,
}

impl CurationReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn judge(record: &KeypointRecord, policy: &FilterPolicy) -> ClipVerdict {
    let mut v = ClipVerdict {
        clip_id: record.clip_id.clone(),
        verdict: Verdict::Pass,
        failed_rule: None,
        frames: Some(record.frames.len()),
        visible_frame_ratio: None,
        message: None,
    };
    match occlusion_filter(record, policy) {
        Err(e) => {
            v.verdict = Verdict::Error;
            v.message = Some(e.to_string());
        }
        Ok(occ) => {
            v.visible_frame_ratio = Some(occ.ratio);
            if !occ.pass {
                v.verdict = Verdict::Occluded;
                v.failed_rule = Some("min_visible_frame_ratio".into());
            } else if !length_filter(record.frames.len(), policy) {
                v.verdict = Verdict::Short;
                v.failed_rule = Some("min_frames".into());
            }
        }
    }
    v
}

fn error_verdict(clip_id: &str, message: String) -> ClipVerdict {
    ClipVerdict {
        clip_id: clip_id.to_string(),
        verdict: Verdict::Error,
        failed_rule: None,
        frames: None,
        visible_frame_ratio: None,
        message: Some(message),
    }
}

pub fn read_manifest(reader: impl BufRead) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() && !id.starts_with('#') {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}

/// Per clip id, the parsed record or why it could not be read.
pub fn read_keypoints(reader: impl BufRead) -> Result<BTreeMap<String, std::result::Result<KeypointRecord, String>>> {
    let mut out = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("keypoint line {} is not JSON: {e}", n + 1);
                continue;
            }
        };
        let Some(id) = value.get("clip_id").and_then(|v| v.as_str()).map(str::to_string) else {
            log::warn!("keypoint line {} has no clip_id", n + 1);
            continue;
        };
        let parsed = serde_json::from_value::<KeypointRecord>(value).map_err(|e| format!("line {}: {e}", n + 1));
        let entry = if out.contains_key(&id) {
            Err(format!("line {}: duplicate record for clip '{id}'", n + 1))
        } else {
            parsed
        };
        out.insert(id, entry);
    }
    Ok(out)
}

/// Judges every manifest clip; the report is sorted by clip id.
pub fn run_pipeline(
    manifest: &[String],
    records: &BTreeMap<String, std::result::Result<KeypointRecord, String>>,
    policy: &FilterPolicy,
) -> Result<CurationReport> {
    policy.validate()?;
    let mut clips: Vec<ClipVerdict> = manifest
        .iter()
        .map(|id| match records.get(id) {
            None => error_verdict(id, "no keypoint record".into()),
            Some(Err(e)) => error_verdict(id, e.clone()),
            Some(Ok(r)) => judge(r, policy),
        })
        .collect();
    clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let mut counts: BTreeMap<Verdict, usize> = [Verdict::Pass, Verdict::Occluded, Verdict::Short, Verdict::Error]
        .into_iter()
        .map(|v| (v, 0))
        .collect();
    for c in &clips {
        *counts.entry(c.verdict).or_default() += 1;
    }
    Ok(CurationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        policy: policy.clone(),
        threshold_source: "configured defaults; no published reference values".into(),
        counts,
        clips,
    })
}
