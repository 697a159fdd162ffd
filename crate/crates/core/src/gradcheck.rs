//! Central finite-difference verification of the analytic gradients.
//!
//! For a probed parameter element the loss is evaluated at +h and -h and the
//! slope compared against the backward pass. In f32 the probe itself carries
//! rounding noise of order eps/h, so the tolerance has an absolute floor in
//! addition to the relative term.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Label;
use crate::error::Result;
use crate::model::{batch_loss, batch_loss_and_grads, ModelParams};
use crate::tokenizer::Encoding;

pub const FD_STEP: f32 = 1e-3;
pub const FD_RELATIVE_TOL: f32 = 1e-2;
pub const FD_ABSOLUTE_TOL: f32 = 2e-3;

/// Which parameter elements to probe.
#[derive(Debug, Clone, Copy)]
pub enum Sampling {
    /// Every element of every tensor. Only viable for tiny models.
    Exhaustive,
    /// Up to `per_tensor` elements from each tensor, chosen without
    /// replacement by a seeded shuffle. Embedding tensors are probed only in
    /// rows the batch actually touches, so every sampled slope is live.
    Stratified { per_tensor: usize, seed: u64 },
}

/// One probed element where analytic and numeric slopes disagree.
#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f32,
    pub numeric: f32,
}

/// Outcome of a gradient check over one batch.
#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    pub checked: usize,
    pub failures: Vec<GradMismatch>,
    pub max_abs_diff: f32,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn within_tolerance(analytic: f32, numeric: f32) -> bool {
    let diff = (analytic - numeric).abs();
    let rel = FD_RELATIVE_TOL * analytic.abs().max(numeric.abs());
    diff <= rel.max(FD_ABSOLUTE_TOL)
}

/// Element indices worth probing for a named tensor. Embedding rows outside
/// the batch have exactly zero gradient; sampling them would only measure
/// noise, so restrict both embedding tensors to rows the batch uses.
fn live_indices(name: &str, numel: usize, row_width: usize, batch: &[(Encoding, Label)]) -> Vec<usize> {
    match name {
        "token_embeddings" => {
            let mut rows: Vec<usize> = batch
                .iter()
                .flat_map(|(e, _)| e.ids[..e.real_len].iter().map(|&id| id as usize))
                .collect();
            rows.sort_unstable();
            rows.dedup();
            rows.iter()
                .flat_map(|&r| (r * row_width)..((r + 1) * row_width))
                .collect()
        }
        "position_embeddings" => {
            let max_live = batch.iter().map(|(e, _)| e.real_len).max().unwrap_or(0);
            (0..max_live * row_width).collect()
        }
        _ => (0..numel).collect(),
    }
}

/// Verifies analytic gradients for `params` on `batch` against central
/// finite differences. Parameters are restored to their original values.
pub fn check_model_gradients(
    params: &mut ModelParams,
    batch: &[(Encoding, Label)],
    sampling: Sampling,
) -> Result<GradCheckSummary> {
    assert!(!batch.is_empty(), "gradient check needs a batch");
    let (_, analytic) = batch_loss_and_grads(params, batch)?;
    let row_width = params.config.hidden_size;

    let mut probes: Vec<(usize, usize)> = Vec::new();
    let names: Vec<(String, usize)> = params
        .named_tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.numel()))
        .collect();
    for (t, (name, numel)) in names.iter().enumerate() {
        let mut candidates = live_indices(name, *numel, row_width, batch);
        match sampling {
            Sampling::Exhaustive => {}
            Sampling::Stratified { per_tensor, seed } => {
                // Distinct stream per tensor so adding one tensor does not
                // shift every other tensor's picks.
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9e3779b9));
                candidates.shuffle(&mut rng);
                candidates.truncate(per_tensor);
            }
        }
        probes.extend(candidates.into_iter().map(|e| (t, e)));
    }

    let mut failures = Vec::new();
    let mut max_abs_diff = 0.0f32;
    for (t, e) in &probes {
        let (t, e) = (*t, *e);
        let orig = params.named_tensors()[t].1.data[e];
        params.named_tensors_mut()[t].1.data[e] = orig + FD_STEP;
        let up = batch_loss(params, batch)?;
        params.named_tensors_mut()[t].1.data[e] = orig - FD_STEP;
        let down = batch_loss(params, batch)?;
        params.named_tensors_mut()[t].1.data[e] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[t][e];
        max_abs_diff = max_abs_diff.max((a - numeric).abs());
        if !within_tolerance(a, numeric) {
            failures.push(GradMismatch {
                tensor: names[t].0.clone(),
                index: e,
                analytic: a,
                numeric,
            });
        }
    }
    Ok(GradCheckSummary {
        checked: probes.len(),
        failures,
        max_abs_diff,
    })
}
