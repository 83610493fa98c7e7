//! Bench and round-trip reports.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::features::{invert_features, joint_tracks, MotionSequence};
use crate::metrics::mpjpe;
use crate::parts::PART_DIM;
use crate::prq::model::{CodeGrid, CodebookSet};
use crate::skeleton::Skeleton;
use crate::tokens::{first_output_latency, serialize, throughput_model, StreamDecoder, TokenOrder, VocabMap};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub frame_by_frame: usize,
    pub layer_by_layer: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    /// Tokens per second the FPS figure is derived from.
    pub tokens_per_second: f64,
    /// True when the rate was measured, false when it was given.
    pub measured: bool,
    pub fps: f64,
    pub downsample: usize,
    pub parts: usize,
    pub layers: usize,
    pub steps: usize,
    /// Code tokens needed before the first frame, per ordering.
    pub first_output_latency_tokens: LatencyReport,
    pub tokens_decoded: usize,
    pub wall_seconds: f64,
    pub note: String,
}

/// A random frame-by-frame code grid of `steps` latent steps.
pub fn synthetic_grid(model: &CodebookSet, steps: usize, seed: u64) -> Result<CodeGrid> {
    let cfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = steps * model.parts() * cfg.layers;
    let codes = (0..count).map(|_| rng.random_range(0..cfg.codebook_size as u32)).collect();
    CodeGrid::new(steps * cfg.downsample, cfg.downsample, model.parts(), cfg.layers, cfg.codebook_size, 20.0, codes)
}

/// Streams synthetic token feeds through the detokenizer for at least
/// `duration_s` seconds. With `token_rate` the FPS is derived from that
/// rate instead of the measured one.
pub fn bench(model: &CodebookSet, duration_s: f64, steps: usize, token_rate: Option<f64>, seed: u64) -> Result<BenchReport> {
    if !(duration_s.is_finite() && duration_s >= 0.0) || steps == 0 {
        return Err(invalid("bench needs a non-negative duration and at least one step"));
    }
    let cfg = model.config();
    let grid = synthetic_grid(model, steps, seed)?;
    let vocab = VocabMap::new(0, cfg.layers, cfg.codebook_size)?;
    let stream = serialize(&grid, TokenOrder::FrameByFrame, &vocab)?;
    let start = Instant::now();
    let mut tokens = 0usize;
    loop {
        let mut dec = StreamDecoder::new(model, stream.header.clone(), cfg.layers)?;
        for &id in &stream.tokens {
            dec.push(id)?;
        }
        tokens += stream.tokens.len() - 2;
        if start.elapsed().as_secs_f64() >= duration_s {
            break;
        }
    }
    let wall = start.elapsed().as_secs_f64();
    let measured_rate = tokens as f64 / wall.max(1e-9);
    let rate = token_rate.unwrap_or(measured_rate);
    let (p, l) = (model.parts(), cfg.layers);
    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tokens_per_second: rate,
        measured: token_rate.is_none(),
        fps: throughput_model(rate, cfg.downsample, p, l)?,
        downsample: cfg.downsample,
        parts: p,
        layers: l,
        steps,
        first_output_latency_tokens: LatencyReport {
            frame_by_frame: first_output_latency(TokenOrder::FrameByFrame, steps, p, l),
            layer_by_layer: first_output_latency(TokenOrder::LayerByLayer, steps, p, l),
        },
        tokens_decoded: tokens,
        wall_seconds: wall,
        note: "synthetic token feed through the streaming detokenizer; no language model sampling".into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixResult {
    pub layers_used: usize,
    pub mpjpe_mm: f64,
    /// Mean absolute error per part in part feature space.
    pub part_l1: Vec<f64>,
    pub feature_l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub schema_version: u32,
    pub frames: usize,
    pub steps: usize,
    pub results: Vec<PrefixResult>,
    /// Mean norm of residual r^k over cells, k = 0 (the latent) to L.
    pub latent_residual_norms: Vec<f64>,
}

impl RoundtripReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Encode, decode with every code prefix, reconstruct poses and compare
/// joint positions with those of the source.
pub fn roundtrip(motion: &MotionSequence, model: &CodebookSet, skeleton: &Skeleton) -> Result<RoundtripReport> {
    let cfg = model.config();
    let (_, traces) = model.encode_traces(motion)?;
    let (_, grid) = model.encode(motion)?;
    let d = cfg.latent_dim;
    let latent_residual_norms = (0..=cfg.layers)
        .map(|k| {
            traces
                .iter()
                .map(|t| t.residual(k, d).iter().map(|x| x * x).sum::<f64>().sqrt())
                .sum::<f64>()
                / traces.len() as f64
        })
        .collect();
    let source = joint_tracks(&invert_features(motion, skeleton)?, skeleton)?;
    let partition = model.partition();
    let p = model.parts();
    let mut results = Vec::with_capacity(cfg.layers);
    for layers_used in 1..=cfg.layers {
        let decoded = model.decode(&grid, layers_used)?;
        let tracks = joint_tracks(&invert_features(&decoded, skeleton)?, skeleton)?;
        let mut part_l1 = vec![0.0; p];
        let mut feature_l1 = 0.0;
        for (a, b) in decoded.rows().zip(motion.rows()) {
            let (pa, pb) = (partition.decompose(a)?, partition.decompose(b)?);
            for (j, acc) in part_l1.iter_mut().enumerate() {
                let r = j * PART_DIM..(j + 1) * PART_DIM;
                *acc += pa[r.clone()].iter().zip(&pb[r]).map(|(x, y)| (x - y).abs()).sum::<f64>();
            }
            feature_l1 += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        }
        let frames = motion.frames() as f64;
        part_l1.iter_mut().for_each(|v| *v /= frames * PART_DIM as f64);
        results.push(PrefixResult {
            layers_used,
            mpjpe_mm: mpjpe(&tracks, &source)?,
            part_l1,
            feature_l1: feature_l1 / (frames * motion.dim() as f64),
        });
    }
    Ok(RoundtripReport {
        schema_version: REPORT_SCHEMA_VERSION,
        frames: motion.frames(),
        steps: grid.steps(),
        results,
        latent_residual_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract_features;
    use crate::parts::PartitionSpec;
    use crate::pose::PoseFrame;
    use crate::prq::config::PrqConfig;

    fn model(layers: usize) -> CodebookSet {
        let cfg = PrqConfig {
            codebook_size: 8,
            latent_dim: 4,
            hidden_dim: 8,
            layers,
            downsample: 4,
            ..PrqConfig::default()
        };
        CodebookSet::untrained(&cfg, PartitionSpec::body_parts(), 1).unwrap()
    }

    #[test]
    fn bench_fps_is_definitional() {
        let m = model(4);
        let r = bench(&m, 0.0, 3, Some(100.0), 1).unwrap();
        assert_eq!(r.fps, 20.0);
        assert_eq!(r.first_output_latency_tokens.frame_by_frame, 20);
        assert_eq!(r.first_output_latency_tokens.layer_by_layer, 3 * 3 * 5 + 5);
        let r = bench(&m, 0.0, 2, None, 1).unwrap();
        assert_eq!(r.fps, r.tokens_per_second * 4.0 / 20.0);
    }

    #[test]
    fn untrained_roundtrip_is_finite() {
        let skel = Skeleton::smpl22();
        let poses: Vec<PoseFrame> = (0..9)
            .map(|i| {
                let mut p = PoseFrame::neutral();
                p.root_position.z = i as f64 * 0.05;
                p
            })
            .collect();
        let motion = extract_features(&poses, &skel, 20.0, None).unwrap();
        let r = roundtrip(&motion, &model(2), &skel).unwrap();
        assert_eq!(r.results.len(), 2);
        assert!(r.results.iter().all(|x| x.mpjpe_mm.is_finite()));
        assert_eq!(RoundtripReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }
}
