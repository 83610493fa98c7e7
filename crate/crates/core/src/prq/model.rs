use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::PrqConfig;
use super::net::TwoLayer;
use super::quantizer::{Quantized, ResidualQuantizer};
use crate::error::{invalid, Error, Result};
use crate::features::{MotionSequence, HUMO263_DIM, HUMO263_V1};
use crate::parts::{PartitionSpec, JOINTS_PER_PART, PART_DIM};

/// Shared encoder, per-layer codebooks and shared decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct CodebookSet {
    pub(crate) cfg: PrqConfig,
    pub(crate) partition: PartitionSpec,
    pub(crate) quantizer: ResidualQuantizer,
    pub(crate) encoder: TwoLayer,
    pub(crate) decoder: TwoLayer,
}

/// Latent vectors on the (step, part) grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PartLatentGrid {
    pub steps: usize,
    pub parts: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PartLatentGrid {
    pub fn cell(&self, step: usize, part: usize) -> &[f64] {
        let off = (step * self.parts + part) * self.dim;
        &self.data[off..off + self.dim]
    }
}

/// Codebook indices on the (step, part, layer) grid, plus what decoding
/// needs to restore the original frame count.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeGrid {
    frames: usize,
    downsample: usize,
    parts: usize,
    layers: usize,
    codebook_size: usize,
    pub fps: f64,
    codes: Vec<u32>,
}

pub fn step_count(frames: usize, downsample: usize) -> usize {
    frames.div_ceil(downsample)
}

impl CodeGrid {
    pub fn new(
        frames: usize,
        downsample: usize,
        parts: usize,
        layers: usize,
        codebook_size: usize,
        fps: f64,
        codes: Vec<u32>,
    ) -> Result<Self> {
        if frames == 0 || downsample == 0 || parts == 0 || layers == 0 {
            return Err(invalid("code grid dimensions must be positive"));
        }
        let n = step_count(frames, downsample);
        if codes.len() != n * parts * layers {
            return Err(invalid(format!(
                "code grid needs {} codes for {n} steps x {parts} parts x {layers} layers, got {}",
                n * parts * layers,
                codes.len()
            )));
        }
        if let Some(c) = codes.iter().find(|&&c| c as usize >= codebook_size) {
            return Err(Error::Corrupt(format!("code {c} outside codebook of {codebook_size}")));
        }
        Ok(CodeGrid {
            frames,
            downsample,
            parts,
            layers,
            codebook_size,
            fps,
            codes,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn downsample(&self) -> usize {
        self.downsample
    }

    pub fn steps(&self) -> usize {
        step_count(self.frames, self.downsample)
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn get(&self, step: usize, part: usize, layer: usize) -> u32 {
        self.codes[(step * self.parts + part) * self.layers + layer]
    }

    /// The `parts * layers` codes of one latent step, part-major.
    pub fn step(&self, step: usize) -> &[u32] {
        let w = self.parts * self.layers;
        &self.codes[step * w..(step + 1) * w]
    }
}

/// One W-frame window of a sequence: encoder inputs for every part, the
/// whole-body target frames and how many frames are real (not padding).
#[derive(Clone, Debug)]
pub(crate) struct Window {
    pub parts: Vec<f64>,
    pub body: Vec<f64>,
    pub valid: usize,
}

pub(crate) fn build_windows(motion: &MotionSequence, partition: &PartitionSpec, w: usize) -> Result<Vec<Window>> {
    motion.require_layout(HUMO263_V1)?;
    let p = partition.part_count();
    let in_dim = w * PART_DIM;
    let mut frame_parts = vec![0.0; p * PART_DIM];
    let n = step_count(motion.frames(), w);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let valid = (motion.frames() - i * w).min(w);
        let mut parts = vec![0.0; p * in_dim];
        let mut body = vec![0.0; w * HUMO263_DIM];
        for f in 0..valid {
            let frame = motion.frame(i * w + f);
            if frame.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("frame {} is not finite", i * w + f)));
            }
            partition.decompose_into(frame, &mut frame_parts)?;
            for j in 0..p {
                parts[j * in_dim + f * PART_DIM..j * in_dim + (f + 1) * PART_DIM]
                    .copy_from_slice(&frame_parts[j * PART_DIM..(j + 1) * PART_DIM]);
            }
            body[f * HUMO263_DIM..(f + 1) * HUMO263_DIM].copy_from_slice(frame);
        }
        out.push(Window { parts, body, valid });
    }
    Ok(out)
}

/// Encoder input matrix, one column per (window, part).
pub(crate) fn input_matrix(windows: &[&Window], in_dim: usize) -> DMatrix<f64> {
    let cols: usize = windows.iter().map(|w| w.parts.len() / in_dim).sum();
    let data: Vec<f64> = windows.iter().flat_map(|w| w.parts.iter().copied()).collect();
    DMatrix::from_vec(in_dim, cols, data)
}

/// Distinct layer-0 codes per part and their product.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityReport {
    pub per_part: Vec<usize>,
    pub capacity: u128,
}

pub fn capacity_of(per_part: &[usize]) -> u128 {
    per_part.iter().map(|&u| u as u128).product()
}

impl CodebookSet {
    /// Random encoder/decoder, all-zero codebooks. The decoder's output
    /// bias is the identity rotation for every joint slot, so a zero
    /// latent decodes to a valid rest pose.
    pub fn untrained(cfg: &PrqConfig, partition: PartitionSpec, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_dim = cfg.downsample * PART_DIM;
        let mut decoder = TwoLayer::new(cfg.latent_dim, cfg.hidden_dim, in_dim, cfg.activation, &mut rng);
        for f in 0..cfg.downsample {
            for slot in 0..JOINTS_PER_PART {
                let at = f * PART_DIM + slot * 6;
                decoder.b2[at] = 1.0;
                decoder.b2[at + 4] = 1.0;
            }
        }
        Ok(CodebookSet {
            encoder: TwoLayer::new(in_dim, cfg.hidden_dim, cfg.latent_dim, cfg.activation, &mut rng),
            decoder,
            quantizer: ResidualQuantizer::new(cfg),
            partition,
            cfg: cfg.clone(),
        })
    }

    pub fn from_parts(
        cfg: PrqConfig,
        partition: PartitionSpec,
        quantizer: ResidualQuantizer,
        encoder: TwoLayer,
        decoder: TwoLayer,
    ) -> Result<Self> {
        cfg.validate()?;
        let in_dim = cfg.downsample * PART_DIM;
        let dims_ok = encoder.input_dim() == in_dim
            && encoder.output_dim() == cfg.latent_dim
            && encoder.hidden_dim() == cfg.hidden_dim
            && decoder.input_dim() == cfg.latent_dim
            && decoder.output_dim() == in_dim
            && decoder.hidden_dim() == cfg.hidden_dim
            && quantizer.dim() == cfg.latent_dim
            && quantizer.layers() == cfg.layers
            && quantizer.codebook_size() == cfg.codebook_size;
        if !dims_ok {
            return Err(invalid("model components do not match the configuration"));
        }
        Ok(CodebookSet {
            cfg,
            partition,
            quantizer,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &PrqConfig {
        &self.cfg
    }

    pub fn partition(&self) -> &PartitionSpec {
        &self.partition
    }

    pub fn quantizer(&self) -> &ResidualQuantizer {
        &self.quantizer
    }

    pub fn quantizer_mut(&mut self) -> &mut ResidualQuantizer {
        &mut self.quantizer
    }

    pub fn encoder(&self) -> &TwoLayer {
        &self.encoder
    }

    pub fn decoder(&self) -> &TwoLayer {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut TwoLayer {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut TwoLayer {
        &mut self.decoder
    }

    pub fn parts(&self) -> usize {
        self.partition.part_count()
    }

    pub(crate) fn in_dim(&self) -> usize {
        self.cfg.downsample * PART_DIM
    }

    pub fn is_finite(&self) -> bool {
        self.quantizer.is_finite() && self.encoder.is_finite() && self.decoder.is_finite()
    }

    /// Encoder latents, one column per (window, part).
    pub(crate) fn encode_latents(&self, windows: &[&Window]) -> DMatrix<f64> {
        self.encoder.forward(&input_matrix(windows, self.in_dim())).0
    }

    /// Latents and residual codes for a `humo263.v1` sequence.
    pub fn encode(&self, motion: &MotionSequence) -> Result<(PartLatentGrid, CodeGrid)> {
        let (latents, traces) = self.encode_traces(motion)?;
        let codes = traces.iter().flat_map(|t| t.codes.iter().copied()).collect();
        let grid = CodeGrid::new(
            motion.frames(),
            self.cfg.downsample,
            self.parts(),
            self.cfg.layers,
            self.cfg.codebook_size,
            motion.fps,
            codes,
        )?;
        Ok((latents, grid))
    }

    /// Like [`encode`](Self::encode) but returns the full residual trace
    /// of every cell, in (step, part) order.
    pub fn encode_traces(&self, motion: &MotionSequence) -> Result<(PartLatentGrid, Vec<Quantized>)> {
        let windows = build_windows(motion, &self.partition, self.cfg.downsample)?;
        let refs: Vec<&Window> = windows.iter().collect();
        let z = self.encode_latents(&refs);
        let traces = z
            .column_iter()
            .map(|col| self.quantizer.quantize(col.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        let grid = PartLatentGrid {
            steps: windows.len(),
            parts: self.parts(),
            dim: self.cfg.latent_dim,
            data: z.as_slice().to_vec(),
        };
        Ok((grid, traces))
    }

    fn check_grid(&self, codes: &CodeGrid, layers_used: usize) -> Result<()> {
        if codes.parts() != self.parts()
            || codes.layers() != self.cfg.layers
            || codes.downsample() != self.cfg.downsample
            || codes.codebook_size() != self.cfg.codebook_size
        {
            return Err(invalid("code grid does not match the model configuration"));
        }
        if layers_used == 0 || layers_used > self.cfg.layers {
            return Err(invalid(format!(
                "layers_used must be in 1..={}, got {layers_used}",
                self.cfg.layers
            )));
        }
        Ok(())
    }

    /// Decodes one latent step (`parts * layers` codes, part-major) into
    /// W whole-body frames.
    pub fn decode_step(&self, step_codes: &[u32], layers_used: usize) -> Result<Vec<Vec<f64>>> {
        let (p, l, d) = (self.parts(), self.cfg.layers, self.cfg.latent_dim);
        if step_codes.len() != p * l {
            return Err(invalid(format!("a step holds {} codes, got {}", p * l, step_codes.len())));
        }
        if layers_used == 0 || layers_used > l {
            return Err(invalid(format!("layers_used must be in 1..={l}, got {layers_used}")));
        }
        let mut q = DMatrix::zeros(d, p);
        for j in 0..p {
            let mut col = vec![0.0; d];
            self.quantizer.lookup(&step_codes[j * l..(j + 1) * l], layers_used, &mut col)?;
            q.column_mut(j).copy_from_slice(&col);
        }
        let (y, _) = self.decoder.forward(&q);
        let w = self.cfg.downsample;
        let mut frame_parts = vec![0.0; p * PART_DIM];
        let mut frames = Vec::with_capacity(w);
        for f in 0..w {
            for j in 0..p {
                let col = y.column(j);
                frame_parts[j * PART_DIM..(j + 1) * PART_DIM]
                    .copy_from_slice(&col.as_slice()[f * PART_DIM..(f + 1) * PART_DIM]);
            }
            frames.push(self.partition.aggregate(&frame_parts)?);
        }
        Ok(frames)
    }

    /// Reconstructs the motion from the first `layers_used` code layers.
    pub fn decode(&self, codes: &CodeGrid, layers_used: usize) -> Result<MotionSequence> {
        self.check_grid(codes, layers_used)?;
        let mut data = Vec::with_capacity(codes.steps() * self.cfg.downsample * HUMO263_DIM);
        for i in 0..codes.steps() {
            for frame in self.decode_step(codes.step(i), layers_used)? {
                data.extend(frame);
            }
        }
        data.truncate(codes.frames() * HUMO263_DIM);
        MotionSequence::new(codes.frames(), HUMO263_DIM, codes.fps, HUMO263_V1, data)
    }

    /// Distinct layer-0 codes each part uses over `corpus`, and the number
    /// of whole-body combinations they span.
    pub fn capacity(&self, corpus: &[MotionSequence]) -> Result<CapacityReport> {
        let p = self.parts();
        let mut seen = vec![BTreeSet::new(); p];
        for m in corpus {
            let (_, grid) = self.encode(m)?;
            for i in 0..grid.steps() {
                for (j, s) in seen.iter_mut().enumerate() {
                    s.insert(grid.get(i, j, 0));
                }
            }
        }
        if seen[0].is_empty() {
            return Err(Error::InvalidState("no codes observed; the reference corpus is empty".into()));
        }
        let per_part: Vec<usize> = seen.iter().map(BTreeSet::len).collect();
        Ok(CapacityReport {
            capacity: capacity_of(&per_part),
            per_part,
        })
    }
}
