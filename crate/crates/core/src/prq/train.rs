//! Mini-batch training of the tokenizer: masked L1 reconstruction on parts
//! and on the aggregated body, a commitment term on every residual, Adam on
//! the encoder/decoder and EMA on the codebooks.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::PrqConfig;
use super::model::{build_windows, input_matrix, CodebookSet, Window};
use super::net::{Adam, Cache, Grads};
use super::quantizer::Quantized;
use crate::error::{invalid, Error, Result};
use crate::features::{MotionSequence, HUMO263_DIM};
use crate::parts::{PartitionSpec, PART_DIM};

/// How latents reach the decoder.
#[derive(Clone, Copy)]
pub(crate) enum QuantMode<'a> {
    /// Quantize the current latents.
    Live,
    /// Keep the codeword sums of a previous pass as fixed offsets.
    Frozen(&'a [Quantized]),
    /// Feed latents straight to the decoder, no commitment term.
    Bypass,
}

pub(crate) struct Forward {
    pub x: DMatrix<f64>,
    pub enc_cache: Cache,
    pub q: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub dec_cache: Cache,
    /// Decoder output minus input at unpadded elements.
    pub part_diff: Vec<f64>,
    /// Aggregated prediction minus target at unpadded frames.
    pub body_diff: Vec<f64>,
    /// Residuals r^1..r^L of every cell.
    pub commit: Vec<f64>,
    pub traces: Vec<Quantized>,
}

/// Loss terms of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub part_l1: f64,
    pub body_l1: f64,
    pub commitment: f64,
    pub total: f64,
}

fn for_valid_parts(windows: &[&Window], parts: usize, mut f: impl FnMut(usize, usize)) {
    // (row, column) of every unpadded decoder element
    for (b, w) in windows.iter().enumerate() {
        for j in 0..parts {
            for row in 0..w.valid * PART_DIM {
                f(row, b * parts + j);
            }
        }
    }
}

pub(crate) fn forward(model: &CodebookSet, windows: &[&Window], mode: QuantMode<'_>) -> Result<Forward> {
    let p = model.parts();
    let d = model.cfg.latent_dim;
    let layers = model.cfg.layers;
    let x = input_matrix(windows, model.in_dim());
    let (z, enc_cache) = model.encoder.forward(&x);
    let mut q = z.clone();
    let mut commit = Vec::new();
    let mut traces = Vec::new();
    match mode {
        QuantMode::Live => {
            commit.reserve(z.ncols() * layers * d);
            for (c, col) in z.column_iter().enumerate() {
                let t = model.quantizer.quantize(col.as_slice())?;
                q.column_mut(c).copy_from_slice(&t.quantized);
                commit.extend_from_slice(&t.residuals[d..]);
                traces.push(t);
            }
        }
        QuantMode::Frozen(base) => {
            if base.len() != z.ncols() {
                return Err(invalid("frozen trace count does not match the batch"));
            }
            for (c, t) in base.iter().enumerate() {
                let zc = z.column(c);
                let r0 = t.residual(0, d);
                for i in 0..d {
                    q[(i, c)] = zc[i] + (t.quantized[i] - r0[i]);
                }
                for k in 1..=layers {
                    let rk = t.residual(k, d);
                    commit.extend((0..d).map(|i| zc[i] - r0[i] + rk[i]));
                }
            }
        }
        QuantMode::Bypass => {}
    }
    let (y, dec_cache) = model.decoder.forward(&q);

    let mut part_diff = Vec::new();
    for_valid_parts(windows, p, |row, col| part_diff.push(y[(row, col)] - x[(row, col)]));

    let mut body_diff = Vec::new();
    let mut frame_parts = vec![0.0; p * PART_DIM];
    let mut pred = vec![0.0; HUMO263_DIM];
    for (b, w) in windows.iter().enumerate() {
        for f in 0..w.valid {
            for j in 0..p {
                let col = y.column(b * p + j);
                frame_parts[j * PART_DIM..(j + 1) * PART_DIM]
                    .copy_from_slice(&col.as_slice()[f * PART_DIM..(f + 1) * PART_DIM]);
            }
            model.partition.aggregate_mean_into(&frame_parts, &mut pred);
            let target = &w.body[f * HUMO263_DIM..(f + 1) * HUMO263_DIM];
            body_diff.extend(pred.iter().zip(target).map(|(a, t)| a - t));
        }
    }
    Ok(Forward {
        x,
        enc_cache,
        q,
        y,
        dec_cache,
        part_diff,
        body_diff,
        commit,
        traces,
    })
}

pub(crate) fn mean_abs(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
    }
}

pub(crate) fn mean_sq(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
    }
}

impl Forward {
    pub fn loss(&self, beta: f64) -> LossTerms {
        let part_l1 = mean_abs(&self.part_diff);
        let body_l1 = mean_abs(&self.body_diff);
        let commitment = mean_sq(&self.commit);
        LossTerms {
            part_l1,
            body_l1,
            commitment,
            total: part_l1 + body_l1 + beta * commitment,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Encoder and decoder gradients of the batch loss, straight through the
/// quantizer.
pub(crate) fn backward(model: &CodebookSet, windows: &[&Window], fwd: &Forward, beta: f64) -> (Grads, Grads) {
    let p = model.parts();
    let d = model.cfg.latent_dim;
    let layers = model.cfg.layers;
    let mut dy = DMatrix::zeros(fwd.y.nrows(), fwd.y.ncols());
    if !fwd.part_diff.is_empty() {
        let scale = 1.0 / fwd.part_diff.len() as f64;
        let mut i = 0;
        for_valid_parts(windows, p, |row, col| {
            dy[(row, col)] = sign(fwd.part_diff[i]) * scale;
            i += 1;
        });
    }
    if !fwd.body_diff.is_empty() {
        let scale = 1.0 / fwd.body_diff.len() as f64;
        let mut g = vec![0.0; HUMO263_DIM];
        let mut gp = vec![0.0; p * PART_DIM];
        let mut off = 0;
        for (b, w) in windows.iter().enumerate() {
            for f in 0..w.valid {
                for (gi, v) in g.iter_mut().zip(&fwd.body_diff[off..off + HUMO263_DIM]) {
                    *gi = sign(*v) * scale;
                }
                off += HUMO263_DIM;
                gp.iter_mut().for_each(|v| *v = 0.0);
                model.partition.aggregate_mean_backward(&g, &mut gp);
                for j in 0..p {
                    for e in 0..PART_DIM {
                        dy[(f * PART_DIM + e, b * p + j)] += gp[j * PART_DIM + e];
                    }
                }
            }
        }
    }
    let (dec_grads, mut dz) = model.decoder.backward(&fwd.q, &fwd.dec_cache, &dy);
    if !fwd.commit.is_empty() && beta != 0.0 {
        let scale = 2.0 * beta / fwd.commit.len() as f64;
        for c in 0..dz.ncols() {
            let cell = &fwd.commit[c * layers * d..(c + 1) * layers * d];
            for k in 0..layers {
                for i in 0..d {
                    dz[(i, c)] += scale * cell[k * d + i];
                }
            }
        }
    }
    let (enc_grads, _) = model.encoder.backward(&fwd.x, &fwd.enc_cache, &dz);
    (enc_grads, dec_grads)
}

/// Summary of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Batch-mean loss terms over the epoch.
    pub loss: LossTerms,
    pub resets: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// Stateful trainer; [`train`] drives it for `cfg.epochs` epochs.
pub struct Trainer {
    model: CodebookSet,
    adam: Adam,
    rng: ChaCha8Rng,
    windows: Vec<Window>,
    order: Vec<usize>,
    epoch: usize,
    last_traces: Vec<Quantized>,
}

impl Trainer {
    pub fn new(corpus: &[MotionSequence], cfg: &PrqConfig, partition: PartitionSpec, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(invalid("training corpus is empty"));
        }
        let layout = corpus[0].layout();
        if corpus.iter().any(|m| m.layout() != layout) {
            return Err(invalid("training corpus mixes feature layouts"));
        }
        let mut model = CodebookSet::untrained(cfg, partition, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut windows = Vec::new();
        for m in corpus {
            windows.extend(build_windows(m, &model.partition, cfg.downsample)?);
        }
        if windows.is_empty() {
            return Err(invalid("training corpus has no frames"));
        }
        init_output_bias(&mut model, &windows);
        let refs: Vec<&Window> = windows.iter().collect();
        let z = model.encode_latents(&refs);
        let tokens = (cfg.batch_size.min(windows.len()) * model.parts()) as f64;
        model.quantizer.init_kmeans_pp(z.as_slice(), tokens, &mut rng)?;
        let sizes: Vec<usize> = model
            .encoder
            .params()
            .iter()
            .chain(model.decoder.params().iter())
            .map(|s| s.len())
            .collect();
        Ok(Trainer {
            adam: Adam::new(cfg.learning_rate, &sizes),
            order: (0..windows.len()).collect(),
            model,
            rng,
            windows,
            epoch: 0,
            last_traces: Vec::new(),
        })
    }

    pub fn model(&self) -> &CodebookSet {
        &self.model
    }

    pub fn into_model(self) -> CodebookSet {
        self.model
    }

    pub fn window_count(&self) -> usize {
        self.windows.len()
    }

    /// One optimizer step on the given windows: forward, Adam, then the
    /// codebook EMA with the residuals of that same forward pass. Returns
    /// the loss and the tokens each book received.
    pub fn step(&mut self, batch: &[usize]) -> Result<(LossTerms, Vec<f64>)> {
        let beta = self.model.cfg.beta;
        let refs: Vec<&Window> = batch.iter().map(|&i| &self.windows[i]).collect();
        let fwd = forward(&self.model, &refs, QuantMode::Live)?;
        let loss = fwd.loss(beta);
        if !loss.total.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: self.epoch,
                loss: loss.total,
            });
        }
        let (ge, gd) = backward(&self.model, &refs, &fwd, beta);
        let grads: Vec<&[f64]> = ge.slices().into_iter().chain(gd.slices()).collect();
        let model = &mut self.model;
        let params: Vec<&mut [f64]> = model
            .encoder
            .params_mut()
            .into_iter()
            .chain(model.decoder.params_mut())
            .collect();
        self.adam.step(params, grads);
        let counts = model.quantizer.ema_update(&fwd.traces, model.cfg.ema_decay);
        self.last_traces = fwd.traces;
        Ok((loss, counts))
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        self.order.shuffle(&mut self.rng);
        let order = self.order.clone();
        let mut sum = LossTerms::default();
        let mut batches = 0;
        for chunk in order.chunks(self.model.cfg.batch_size) {
            let (l, _) = self.step(chunk)?;
            sum.part_l1 += l.part_l1;
            sum.body_l1 += l.body_l1;
            sum.commitment += l.commitment;
            sum.total += l.total;
            batches += 1;
        }
        let threshold = self.model.cfg.dead_code_threshold;
        let resets = self
            .model
            .quantizer
            .reset_dead(&self.last_traces, threshold, &mut self.rng);
        if !self.model.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: self.epoch,
                loss: f64::NAN,
            });
        }
        let n = batches as f64;
        let stats = EpochStats {
            epoch: self.epoch,
            loss: LossTerms {
                part_l1: sum.part_l1 / n,
                body_l1: sum.body_l1 / n,
                commitment: sum.commitment / n,
                total: sum.total / n,
            },
            resets,
        };
        self.epoch += 1;
        Ok(stats)
    }

    /// Loss of the current model over every window, without updating.
    pub fn evaluate(&self) -> Result<LossTerms> {
        let refs: Vec<&Window> = self.windows.iter().collect();
        Ok(forward(&self.model, &refs, QuantMode::Live)?.loss(self.model.cfg.beta))
    }
}

/// Decoder output bias starts at the mean unpadded input so early steps
/// fit shape rather than offset.
fn init_output_bias(model: &mut CodebookSet, windows: &[Window]) {
    let in_dim = model.in_dim();
    let p = model.parts();
    let mut sum = vec![0.0; in_dim];
    let mut count = vec![0usize; in_dim];
    for w in windows {
        for j in 0..p {
            let col = &w.parts[j * in_dim..(j + 1) * in_dim];
            for row in 0..w.valid * PART_DIM {
                sum[row] += col[row];
                count[row] += 1;
            }
        }
    }
    // padded-only rows fall back to the frame-0 statistics
    for row in 0..in_dim {
        let src = if count[row] > 0 { row } else { row % PART_DIM };
        model.decoder.b2[row] = if count[src] > 0 { sum[src] / count[src] as f64 } else { 0.0 };
    }
}

/// Trains a tokenizer on `corpus`. Deterministic for a fixed seed.
pub fn train(
    corpus: &[MotionSequence],
    cfg: &PrqConfig,
    partition: PartitionSpec,
    seed: u64,
) -> Result<(CodebookSet, TrainReport)> {
    let mut trainer = Trainer::new(corpus, cfg, partition, seed)?;
    let mut report = TrainReport::default();
    for _ in 0..cfg.epochs {
        let stats = trainer.run_epoch()?;
        log::debug!("epoch {} loss {:.6}", stats.epoch, stats.loss.total);
        report.epochs.push(stats);
    }
    Ok((trainer.into_model(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::HUMO263_V1;

    fn cfg() -> PrqConfig {
        PrqConfig {
            codebook_size: 8,
            latent_dim: 6,
            hidden_dim: 16,
            layers: 2,
            downsample: 4,
            batch_size: 3,
            epochs: 3,
            learning_rate: 1e-2,
            ..PrqConfig::default()
        }
    }

    fn wave(frames: usize, phase: f64) -> MotionSequence {
        let data = (0..frames * HUMO263_DIM)
            .map(|i| {
                let (t, d) = ((i / HUMO263_DIM) as f64, (i % HUMO263_DIM) as f64);
                (0.2 * t + 0.37 * d + phase).sin() * 0.5
            })
            .collect();
        MotionSequence::new(frames, HUMO263_DIM, 20.0, HUMO263_V1, data).unwrap()
    }

    #[test]
    fn usage_follows_ema_recurrence() {
        let corpus = [wave(30, 0.0), wave(17, 1.0)];
        let c = cfg();
        let mut t = Trainer::new(&corpus, &c, PartitionSpec::body_parts(), 4).unwrap();
        let tokens = (c.batch_size * 5) as f64;
        for b in 0..c.layers {
            let s: f64 = t.model().quantizer().book_usage(b).iter().sum();
            assert!((s - tokens).abs() < 1e-9 * tokens);
        }
        for batch in [[0usize, 1, 2], [3, 4, 5], [6, 7, 8]] {
            let before: Vec<f64> = (0..c.layers)
                .map(|b| t.model().quantizer().book_usage(b).iter().sum())
                .collect();
            let (_, counts) = t.step(&batch).unwrap();
            for b in 0..c.layers {
                let usage = t.model().quantizer().book_usage(b);
                assert!(usage.iter().all(|&u| u >= 0.0));
                let s: f64 = usage.iter().sum();
                let want = c.ema_decay * before[b] + (1.0 - c.ema_decay) * counts[b];
                assert!((s - want).abs() <= 1e-6 * want);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let corpus = [wave(20, 0.3)];
        let (a, ra) = train(&corpus, &cfg(), PartitionSpec::body_parts(), 9).unwrap();
        let (b, rb) = train(&corpus, &cfg(), PartitionSpec::body_parts(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let (c, _) = train(&corpus, &cfg(), PartitionSpec::body_parts(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn beta_only_changes_encoder() {
        let corpus = [wave(24, 0.0)];
        let with = PrqConfig { beta: 0.25, ..cfg() };
        let without = PrqConfig { beta: 0.0, ..cfg() };
        let mut a = Trainer::new(&corpus, &with, PartitionSpec::body_parts(), 2).unwrap();
        let mut b = Trainer::new(&corpus, &without, PartitionSpec::body_parts(), 2).unwrap();
        a.step(&[0, 1, 2]).unwrap();
        b.step(&[0, 1, 2]).unwrap();
        assert_eq!(a.model().quantizer(), b.model().quantizer());
        a.run_epoch().unwrap();
        b.run_epoch().unwrap();
        assert_ne!(a.model().encoder(), b.model().encoder());
    }

    #[test]
    fn empty_and_mixed_corpus_rejected() {
        assert!(train(&[], &cfg(), PartitionSpec::body_parts(), 1).is_err());
        let raw = MotionSequence::new(2, HUMO263_DIM, 20.0, "raw", vec![0.0; 2 * HUMO263_DIM]).unwrap();
        assert!(train(&[wave(8, 0.0), raw], &cfg(), PartitionSpec::body_parts(), 1).is_err());
    }

    #[test]
    fn diverged_training_reports_epoch() {
        let c = PrqConfig { learning_rate: 1e300, ..cfg() };
        let err = train(&[wave(40, 0.0)], &c, PartitionSpec::body_parts(), 1).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }), "{err:?}");
    }

    #[test]
    fn loss_decreases_on_wave() {
        let corpus = [wave(40, 0.0), wave(40, 2.0)];
        let c = PrqConfig { epochs: 0, ..cfg() };
        let mut t = Trainer::new(&corpus, &c, PartitionSpec::body_parts(), 3).unwrap();
        let start = t.evaluate().unwrap().total;
        for _ in 0..30 {
            t.run_epoch().unwrap();
        }
        assert!(t.evaluate().unwrap().total < start);
    }
}
