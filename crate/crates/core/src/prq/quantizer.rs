//! Residual vector quantization over per-layer codebooks with EMA
//! codeword updates and dead-code re-seeding.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::PrqConfig;
use crate::error::{invalid, Error, Result};

/// Cap on the samples used for k-means++ seeding.
const INIT_SAMPLE_CAP: usize = 8192;

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualQuantizer {
    codebook_size: usize,
    dim: usize,
    layers: usize,
    share_layers: bool,
    zero_code: bool,
    books: Vec<f64>,
    usage: Vec<f64>,
    ema_sums: Vec<f64>,
}

/// Per-cell quantization trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    pub codes: Vec<u32>,
    /// Residuals r^0 (the latent) through r^L, each `dim` long.
    pub residuals: Vec<f64>,
    /// Sum of the selected codewords.
    pub quantized: Vec<f64>,
    /// Per layer: squared distance to the runner-up minus to the winner.
    /// Copies of the winning row do not count as runner-up.
    pub margins: Vec<f64>,
}

impl Quantized {
    pub fn residual(&self, k: usize, dim: usize) -> &[f64] {
        &self.residuals[k * dim..(k + 1) * dim]
    }
}

/// Index of the nearest row (ties to the lowest index), its squared
/// distance and the runner-up's squared distance, ignoring exact copies
/// of the nearest row.
fn nearest(book: &[f64], dim: usize, v: &[f64]) -> (usize, f64, f64) {
    let mut best = (0, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (i, row) in book.chunks_exact(dim).enumerate() {
        let d: f64 = row.iter().zip(v).map(|(c, x)| (x - c) * (x - c)).sum();
        if d < best.1 {
            second = best.1;
            best = (i, d);
        } else if d == best.1 && row == &book[best.0 * dim..(best.0 + 1) * dim] {
            // duplicate of the winner: same output whichever is picked
        } else if d < second {
            second = d;
        }
    }
    (best.0, best.1, second)
}

impl ResidualQuantizer {
    /// All-zero codebooks.
    pub fn new(cfg: &PrqConfig) -> Self {
        let books = cfg.book_count();
        ResidualQuantizer {
            codebook_size: cfg.codebook_size,
            dim: cfg.latent_dim,
            layers: cfg.layers,
            share_layers: cfg.share_layers,
            zero_code: cfg.zero_code,
            books: vec![0.0; books * cfg.codebook_size * cfg.latent_dim],
            usage: vec![0.0; books * cfg.codebook_size],
            ema_sums: vec![0.0; books * cfg.codebook_size * cfg.latent_dim],
        }
    }

    /// Builds a quantizer from explicit codebooks (`book_count x C x dim`).
    pub fn from_books(cfg: &PrqConfig, books: Vec<f64>, usage: Vec<f64>) -> Result<Self> {
        let mut q = Self::new(cfg);
        if books.len() != q.books.len() || usage.len() != q.usage.len() {
            return Err(invalid("codebook arrays do not match the configuration"));
        }
        if books.iter().chain(&usage).any(|x| !x.is_finite()) || usage.iter().any(|&u| u < 0.0) {
            return Err(invalid("codebooks must be finite with non-negative usage"));
        }
        q.ema_sums = books
            .chunks_exact(q.dim)
            .zip(&usage)
            .flat_map(|(row, &u)| row.iter().map(move |x| x * u))
            .collect();
        q.books = books;
        q.usage = usage;
        Ok(q)
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn book_count(&self) -> usize {
        if self.share_layers {
            1
        } else {
            self.layers
        }
    }

    pub fn book_of_layer(&self, layer: usize) -> usize {
        if self.share_layers {
            0
        } else {
            layer
        }
    }

    pub fn book(&self, b: usize) -> &[f64] {
        let n = self.codebook_size * self.dim;
        &self.books[b * n..(b + 1) * n]
    }

    pub fn books(&self) -> &[f64] {
        &self.books
    }

    pub fn usage(&self) -> &[f64] {
        &self.usage
    }

    pub fn book_usage(&self, b: usize) -> &[f64] {
        &self.usage[b * self.codebook_size..(b + 1) * self.codebook_size]
    }

    pub fn codeword(&self, layer: usize, code: usize) -> &[f64] {
        let b = self.book_of_layer(layer);
        let off = (b * self.codebook_size + code) * self.dim;
        &self.books[off..off + self.dim]
    }

    pub fn set_codeword(&mut self, layer: usize, code: usize, value: &[f64]) {
        let b = self.book_of_layer(layer);
        let off = (b * self.codebook_size + code) * self.dim;
        self.books[off..off + self.dim].copy_from_slice(value);
        let u = self.usage[b * self.codebook_size + code];
        for (e, v) in self.ema_sums[off..off + self.dim].iter_mut().zip(value) {
            *e = v * u;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.books.iter().chain(&self.usage).all(|x| x.is_finite())
    }

    /// Greedy residual quantization of one latent vector.
    pub fn quantize(&self, latent: &[f64]) -> Result<Quantized> {
        if latent.len() != self.dim {
            return Err(invalid(format!("latent has {} values, expected {}", latent.len(), self.dim)));
        }
        let d = self.dim;
        let mut residuals = vec![0.0; (self.layers + 1) * d];
        residuals[..d].copy_from_slice(latent);
        let mut quantized = vec![0.0; d];
        let mut codes = Vec::with_capacity(self.layers);
        let mut margins = Vec::with_capacity(self.layers);
        for k in 0..self.layers {
            let (head, tail) = residuals.split_at_mut((k + 1) * d);
            let r = &head[k * d..];
            let (idx, best, second) = nearest(self.book(self.book_of_layer(k)), d, r);
            let cw = self.codeword(k, idx);
            for i in 0..d {
                tail[i] = r[i] - cw[i];
                quantized[i] += cw[i];
            }
            codes.push(idx as u32);
            margins.push(second - best);
        }
        Ok(Quantized {
            codes,
            residuals,
            quantized,
            margins,
        })
    }

    /// Sum of the first `layers_used` codewords named by `codes`.
    pub fn lookup(&self, codes: &[u32], layers_used: usize, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (k, &c) in codes.iter().take(layers_used).enumerate() {
            if c as usize >= self.codebook_size {
                return Err(Error::Corrupt(format!(
                    "code {c} at layer {k} outside codebook of {}",
                    self.codebook_size
                )));
            }
            for (o, w) in out.iter_mut().zip(self.codeword(k, c as usize)) {
                *o += w;
            }
        }
        Ok(())
    }

    /// Seeds every codebook by k-means++ on the residuals its layer sees,
    /// layer by layer, and gives each entry a uniform usage prior of
    /// `tokens_per_batch / C`.
    pub fn init_kmeans_pp(&mut self, latents: &[f64], tokens_per_batch: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let d = self.dim;
        if latents.is_empty() || !latents.len().is_multiple_of(d) {
            return Err(invalid("k-means++ seeding needs at least one latent"));
        }
        let mut samples: Vec<&[f64]> = latents.chunks_exact(d).collect();
        if samples.len() > INIT_SAMPLE_CAP {
            samples.shuffle(rng);
            samples.truncate(INIT_SAMPLE_CAP);
        }
        let mut current: Vec<f64> = samples.concat();
        for b in 0..self.book_count() {
            let rows = kmeans_pp(&current, d, self.codebook_size, self.zero_code, rng);
            let n = self.codebook_size * d;
            self.books[b * n..(b + 1) * n].copy_from_slice(&rows);
            if b + 1 < self.book_count() {
                // residuals for the next layer's book
                for v in current.chunks_exact_mut(d) {
                    let (idx, _, _) = nearest(&rows, d, v);
                    for (x, c) in v.iter_mut().zip(&rows[idx * d..(idx + 1) * d]) {
                        *x -= c;
                    }
                }
            }
        }
        let prior = tokens_per_batch * self.layers as f64 / self.book_count() as f64 / self.codebook_size as f64;
        self.usage.iter_mut().for_each(|u| *u = prior);
        for (e, v) in self.ema_sums.iter_mut().zip(&self.books) {
            *e = v * prior;
        }
        Ok(())
    }

    /// One EMA step from a batch of quantization traces. Returns the number
    /// of tokens assigned to each book.
    pub fn ema_update(&mut self, traces: &[Quantized], decay: f64) -> Vec<f64> {
        let (c, d) = (self.codebook_size, self.dim);
        let books = self.book_count();
        let mut counts = vec![0.0; books * c];
        let mut sums = vec![0.0; books * c * d];
        for t in traces {
            for (k, &code) in t.codes.iter().enumerate() {
                let slot = self.book_of_layer(k) * c + code as usize;
                counts[slot] += 1.0;
                for (s, r) in sums[slot * d..(slot + 1) * d].iter_mut().zip(t.residual(k, d)) {
                    *s += r;
                }
            }
        }
        for slot in 0..books * c {
            self.usage[slot] = decay * self.usage[slot] + (1.0 - decay) * counts[slot];
            let ema = &mut self.ema_sums[slot * d..(slot + 1) * d];
            for (e, s) in ema.iter_mut().zip(&sums[slot * d..(slot + 1) * d]) {
                *e = decay * *e + (1.0 - decay) * s;
            }
            let pinned = self.zero_code && slot % c == 0;
            if self.usage[slot] > 0.0 && !pinned {
                let u = self.usage[slot];
                for (w, e) in self.books[slot * d..(slot + 1) * d].iter_mut().zip(ema.iter()) {
                    *w = e / u;
                }
            }
        }
        (0..books).map(|b| counts[b * c..(b + 1) * c].iter().sum()).collect()
    }

    /// Re-seeds entries whose usage is below `threshold` from random
    /// residuals of `traces`, the ones each entry's layer saw. The usage of
    /// a re-seeded entry is raised to `threshold`. Returns the count.
    pub fn reset_dead(&mut self, traces: &[Quantized], threshold: f64, rng: &mut ChaCha8Rng) -> usize {
        if traces.is_empty() {
            return 0;
        }
        let (c, d) = (self.codebook_size, self.dim);
        let mut resets = 0;
        for b in 0..self.book_count() {
            let layers: Vec<usize> = (0..self.layers).filter(|&k| self.book_of_layer(k) == b).collect();
            for code in 0..c {
                if self.zero_code && code == 0 {
                    continue;
                }
                let slot = b * c + code;
                if self.usage[slot] >= threshold {
                    continue;
                }
                let t = &traces[rng.random_range(0..traces.len())];
                let k = layers[rng.random_range(0..layers.len())];
                let r = t.residual(k, d);
                self.usage[slot] = threshold;
                self.books[slot * d..(slot + 1) * d].copy_from_slice(r);
                for (e, v) in self.ema_sums[slot * d..(slot + 1) * d].iter_mut().zip(r) {
                    *e = v * threshold;
                }
                resets += 1;
            }
        }
        resets
    }

    /// Mean over samples of the squared final residual norm.
    pub fn quantization_mse(&self, latents: &[f64]) -> Result<f64> {
        let d = self.dim;
        let n = latents.len() / d;
        if n == 0 {
            return Err(invalid("no latents"));
        }
        let mut total = 0.0;
        for v in latents.chunks_exact(d) {
            let q = self.quantize(v)?;
            total += q.residual(self.layers, d).iter().map(|x| x * x).sum::<f64>();
        }
        Ok(total / n as f64)
    }
}

/// k-means++ seeding. With `zero_row`, row 0 is the zero vector and counts
/// as an existing center.
fn kmeans_pp(samples: &[f64], d: usize, k: usize, zero_row: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = samples.len() / d;
    let sample = |i: usize| &samples[i * d..(i + 1) * d];
    let mut rows = vec![0.0; k * d];
    let mut dist = vec![f64::INFINITY; n];
    let mut start = 0;
    let update = |dist: &mut Vec<f64>, center: &[f64]| {
        for (i, di) in dist.iter_mut().enumerate() {
            let s = sample(i);
            let v: f64 = s.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            *di = di.min(v);
        }
    };
    if zero_row {
        update(&mut dist, &vec![0.0; d]);
        start = 1;
    }
    for row in start..k {
        let total: f64 = dist.iter().filter(|x| x.is_finite()).sum();
        let pick = if row == start && !zero_row || total <= 0.0 || !total.is_finite() {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &di) in dist.iter().enumerate() {
                if target < di {
                    chosen = i;
                    break;
                }
                target -= di;
            }
            chosen
        };
        rows[row * d..(row + 1) * d].copy_from_slice(sample(pick));
        let center = rows[row * d..(row + 1) * d].to_vec();
        update(&mut dist, &center);
    }
    rows
}

/// Progress of [`fit_latents`].
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub epoch_mse: Vec<f64>,
    pub resets: Vec<usize>,
}

/// Learns codebooks directly on latent vectors with the same EMA and
/// dead-code procedure the tokenizer training uses.
pub fn fit_latents(latents: &[f64], cfg: &PrqConfig, seed: u64) -> Result<(ResidualQuantizer, FitReport)> {
    cfg.validate()?;
    let d = cfg.latent_dim;
    if latents.is_empty() || !latents.len().is_multiple_of(d) {
        return Err(invalid("latents must be a non-empty multiple of latent_dim"));
    }
    let n = latents.len() / d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = ResidualQuantizer::new(cfg);
    let batch = cfg.batch_size.min(n);
    q.init_kmeans_pp(latents, batch as f64, &mut rng)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = FitReport {
        epoch_mse: Vec::new(),
        resets: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut last = Vec::new();
        for chunk in order.chunks(batch) {
            last = chunk
                .iter()
                .map(|&i| q.quantize(&latents[i * d..(i + 1) * d]))
                .collect::<Result<Vec<_>>>()?;
            q.ema_update(&last, cfg.ema_decay);
        }
        let resets = q.reset_dead(&last, cfg.dead_code_threshold, &mut rng);
        let mse = q.quantization_mse(latents)?;
        if !mse.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: mse });
        }
        report.epoch_mse.push(mse);
        report.resets.push(resets);
    }
    Ok((q, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cfg(layers: usize) -> PrqConfig {
        PrqConfig {
            codebook_size: 3,
            latent_dim: 2,
            layers,
            ..PrqConfig::default()
        }
    }

    fn toy_quantizer() -> ResidualQuantizer {
        let cfg = toy_cfg(2);
        let book = [1.0, 0.0, 0.0, 1.0, 0.25, 0.0];
        ResidualQuantizer::from_books(&cfg, [book, book].concat(), vec![1.0; 6]).unwrap()
    }

    #[test]
    fn toy_greedy_path() {
        let q = toy_quantizer().quantize(&[1.3, 0.1]).unwrap();
        assert_eq!(q.codes, vec![0, 2]);
        assert!((q.quantized[0] - 1.25).abs() < 1e-15 && q.quantized[1] == 0.0);
        let r = q.residual(2, 2);
        assert!((r[0] - 0.05).abs() < 1e-12 && (r[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cfg = toy_cfg(1);
        let q = ResidualQuantizer::from_books(&cfg, vec![1.0, 0.0, -1.0, 0.0, 1.0, 0.0], vec![0.0; 3]).unwrap();
        let t = q.quantize(&[0.0, 0.0]).unwrap();
        assert_eq!(t.codes, vec![0]);
        assert_eq!(t.margins[0], 0.0);
    }

    #[test]
    fn exact_match_leaves_zero_residual() {
        let cfg = toy_cfg(3);
        let mut books = vec![0.0; 3 * 3 * 2];
        books[2..4].copy_from_slice(&[0.4, -0.7]);
        let q = ResidualQuantizer::from_books(&cfg, books, vec![0.0; 9]).unwrap();
        let t = q.quantize(&[0.4, -0.7]).unwrap();
        assert_eq!(t.codes, vec![1, 0, 0]);
        assert_eq!(t.residual(3, 2), &[0.0, 0.0]);
    }

    #[test]
    fn lookup_rejects_out_of_range() {
        let q = toy_quantizer();
        let mut out = [0.0; 2];
        assert!(matches!(q.lookup(&[0, 7], 2, &mut out), Err(Error::Corrupt(_))));
        q.lookup(&[0, 2], 1, &mut out).unwrap();
        assert_eq!(out, [1.0, 0.0]);
    }

    #[test]
    fn ema_usage_sum_tracks_tokens() {
        let cfg = PrqConfig {
            codebook_size: 8,
            latent_dim: 3,
            layers: 2,
            ..PrqConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let latents: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut q = ResidualQuantizer::new(&cfg);
        q.init_kmeans_pp(&latents, 20.0, &mut rng).unwrap();
        let traces: Vec<_> = latents.chunks(3).map(|v| q.quantize(v).unwrap()).collect();
        let before: Vec<f64> = (0..2).map(|b| q.book_usage(b).iter().sum()).collect();
        let tokens = q.ema_update(&traces, cfg.ema_decay);
        for b in 0..2 {
            let after: f64 = q.book_usage(b).iter().sum();
            let expected = cfg.ema_decay * before[b] + (1.0 - cfg.ema_decay) * tokens[b];
            assert!(((after - expected) / expected).abs() < 1e-6);
            assert!(q.book_usage(b).iter().all(|&u| u >= 0.0));
            assert_eq!(tokens[b], 20.0);
        }
    }

    #[test]
    fn zero_code_row_stays_zero() {
        let cfg = PrqConfig {
            codebook_size: 4,
            latent_dim: 2,
            layers: 2,
            zero_code: true,
            epochs: 5,
            batch_size: 8,
            ..PrqConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let latents: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (q, _) = fit_latents(&latents, &cfg, 4).unwrap();
        for k in 0..2 {
            assert_eq!(q.codeword(k, 0), &[0.0, 0.0]);
        }
    }

    #[test]
    fn dead_codes_are_reseeded() {
        let cfg = PrqConfig {
            codebook_size: 4,
            latent_dim: 2,
            layers: 1,
            ..PrqConfig::default()
        };
        let q0 = ResidualQuantizer::from_books(&cfg, vec![0.0; 8], vec![5.0, 0.0, 5.0, 0.5]).unwrap();
        let mut q = q0.clone();
        let traces = vec![q.quantize(&[3.0, 4.0]).unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(q.reset_dead(&traces, 1.0, &mut rng), 2);
        assert_eq!(q.codeword(0, 1), &[3.0, 4.0]);
        assert_eq!(q.codeword(0, 3), &[3.0, 4.0]);
        assert_eq!(q.codeword(0, 0), q0.codeword(0, 0));
    }

    #[test]
    fn shared_books_reuse_rows() {
        let cfg = PrqConfig {
            codebook_size: 3,
            latent_dim: 2,
            layers: 3,
            share_layers: true,
            ..PrqConfig::default()
        };
        let q = ResidualQuantizer::from_books(&cfg, vec![1.0, 0.0, 0.0, 1.0, 0.25, 0.0], vec![0.0; 3]).unwrap();
        assert_eq!(q.book_count(), 1);
        assert_eq!(q.codeword(2, 2), q.codeword(0, 2));
    }
}
