//! Central-difference check of the hand-written training gradients.
//!
//! The numeric side evaluates a surrogate that keeps each cell's codeword
//! sum fixed at its value in the unperturbed pass, which is exactly the
//! function the straight-through gradient differentiates. Cells whose
//! nearest-codeword margin is within tolerance are assignment-unstable and
//! their windows are left out. Parameters whose perturbation moves an L1
//! term across zero sit on a kink and are skipped.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{build_windows, CodebookSet, Window};
use super::train::{backward, forward, Forward, QuantMode};
use crate::error::Result;
use crate::features::MotionSequence;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Parameters to compare (fewer if the model has fewer smooth ones).
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
    /// Decode latents directly, skipping the quantizer and commitment term.
    pub bypass_quantizer: bool,
    /// Nearest-vs-runner-up squared-distance gap below which a cell counts
    /// as assignment-unstable.
    pub margin_tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            samples: 100,
            step: 1e-5,
            seed: 0,
            bypass_quantizer: false,
            margin_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Stable,
    AssignmentUnstable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub unstable_cells: usize,
    pub excluded_windows: usize,
    pub stability: Stability,
}

/// Compensated sum.
fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn signum_class(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn crosses_kink(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).any(|(x, y)| signum_class(*x) != signum_class(*y))
}

/// `loss(plus) - loss(minus)`, differenced term by term.
fn loss_difference(plus: &Forward, minus: &Forward, beta: f64) -> f64 {
    let l1 = |a: &[f64], b: &[f64]| {
        if a.is_empty() {
            0.0
        } else {
            neumaier(a.iter().zip(b).map(|(x, y)| x.abs() - y.abs())) / a.len() as f64
        }
    };
    let sq = if plus.commit.is_empty() {
        0.0
    } else {
        neumaier(plus.commit.iter().zip(&minus.commit).map(|(x, y)| (x - y) * (x + y))) / plus.commit.len() as f64
    };
    l1(&plus.part_diff, &minus.part_diff) + l1(&plus.body_diff, &minus.body_diff) + beta * sq
}

fn param_mut(model: &mut CodebookSet, mut index: usize) -> &mut f64 {
    let (enc, dec) = (&mut model.encoder, &mut model.decoder);
    for group in enc.params_mut().into_iter().chain(dec.params_mut()) {
        if index < group.len() {
            return &mut group[index];
        }
        index -= group.len();
    }
    unreachable!("parameter index out of range")
}

/// Maximum relative error `|a - n| / max(|a|, |n|, 1e-6)` between analytic
/// and central-difference gradients over a random parameter subset.
pub fn check_gradients(model: &CodebookSet, batch: &[MotionSequence], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let beta = model.cfg.beta;
    let mut all = Vec::new();
    for m in batch {
        all.extend(build_windows(m, &model.partition, model.cfg.downsample)?);
    }
    let p = model.parts();
    let mut unstable_cells = 0;
    let mut windows: Vec<&Window> = Vec::new();
    let mut excluded_windows = 0;
    for w in &all {
        if opts.bypass_quantizer {
            windows.push(w);
            continue;
        }
        let probe = forward(model, &[w], QuantMode::Live)?;
        let bad = probe
            .traces
            .iter()
            .flat_map(|t| t.margins.iter())
            .filter(|&&m| m <= opts.margin_tolerance)
            .count();
        debug_assert_eq!(probe.traces.len(), p);
        if bad > 0 {
            unstable_cells += bad;
            excluded_windows += 1;
        } else {
            windows.push(w);
        }
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        unstable_cells,
        excluded_windows,
        stability: if unstable_cells > 0 {
            Stability::AssignmentUnstable
        } else {
            Stability::Stable
        },
    };
    if windows.is_empty() {
        return Ok(report);
    }

    let base = forward(model, &windows, if opts.bypass_quantizer { QuantMode::Bypass } else { QuantMode::Live })?;
    let (ge, gd) = backward(model, &windows, &base, beta);
    let analytic: Vec<f64> = ge
        .slices()
        .into_iter()
        .chain(gd.slices())
        .flat_map(|s| s.iter().copied())
        .collect();
    let mode = if opts.bypass_quantizer {
        QuantMode::Bypass
    } else {
        QuantMode::Frozen(&base.traces)
    };

    let mut work = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let total = analytic.len();
    for idx in sample(&mut rng, total, total).into_iter() {
        if report.checked >= opts.samples {
            break;
        }
        let orig = *param_mut(&mut work, idx);
        *param_mut(&mut work, idx) = orig + opts.step;
        let plus = forward(&work, &windows, mode)?;
        *param_mut(&mut work, idx) = orig - opts.step;
        let minus = forward(&work, &windows, mode)?;
        *param_mut(&mut work, idx) = orig;
        if crosses_kink(&plus.part_diff, &minus.part_diff)
            || crosses_kink(&plus.body_diff, &minus.body_diff)
            || crosses_kink(&plus.part_diff, &base.part_diff)
            || crosses_kink(&plus.body_diff, &base.body_diff)
        {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = loss_difference(&plus, &minus, beta) / (2.0 * opts.step);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
