//! Analytic gradients against central finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::DoubleProngModel;
use crate::train::{sample_graph, SampleGraph, SequenceSample, Stage};

/// Denominator floor of the relative error.
///
/// Central differences at ε = 1e-5 on a loss of order 10 carry roughly 1e-10
/// of rounding noise, so relative error is meaningless for gradients near
/// that size; below the floor the comparison is effectively absolute.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Parameter tensor name, flat index and the two gradients at the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
    /// Entries whose ±ε perturbation crossed a `relu`/`|·|` kink and was redrawn.
    pub skipped: usize,
    /// Parameter tensors with at least one checked entry.
    pub tensors_covered: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub stage: Stage,
    pub input_frames: usize,
    pub horizon: usize,
    pub epsilon: f64,
    /// Entries to check, spread evenly across parameter tensors.
    pub entries: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { stage: Stage::Finetune, input_frames: 5, horizon: 15, epsilon: 1e-5, entries: 208, seed: 0 }
    }
}

/// Compares backpropagated gradients of the objective with central differences.
///
/// Entries are drawn per parameter tensor so every gate convolution and
/// head is covered. A perturbation that changes the side of any kink is not
/// differentiable there; such entries are redrawn and counted.
pub fn gradient_check(model: &DoubleProngModel, sample: &SequenceSample, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let base = sample_graph(model, sample, cfg.stage, cfg.input_frames, cfg.horizon)?;
    let signature = base.tape.kink_signature();
    let analytic = per_tensor_gradients(&base, model);
    drop(base);

    let sizes: Vec<usize> = model.params.entries.iter().map(|p| p.value.len()).collect();
    let quotas = spread(cfg.entries, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        tensors_covered: 0,
    };
    let eval = |probe: &mut DoubleProngModel, t: usize, j: usize, delta: f64| -> Result<(f64, u64)> {
        let orig = probe.params.entries[t].value[j];
        probe.params.entries[t].value[j] = orig + delta;
        let g = sample_graph(probe, sample, cfg.stage, cfg.input_frames, cfg.horizon);
        probe.params.entries[t].value[j] = orig;
        let g = g?;
        Ok((g.tape.scalar(g.total), g.tape.kink_signature()))
    };
    for (t, &want) in quotas.iter().enumerate() {
        let mut done = 0;
        // Without replacement; kinked entries fall through to the next candidate.
        for j in rand::seq::index::sample(&mut rng, sizes[t], sizes[t]).into_iter() {
            if done == want {
                break;
            }
            let (plus, sp) = eval(&mut probe, t, j, cfg.epsilon)?;
            let (minus, sm) = eval(&mut probe, t, j, -cfg.epsilon)?;
            if sp != signature || sm != signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let a = analytic[t][j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.max_absolute_error = report.max_absolute_error.max(abs);
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((model.params.entries[t].name.clone(), j, a, numeric));
            }
            report.checked += 1;
            done += 1;
        }
        if done > 0 {
            report.tensors_covered += 1;
        }
    }
    Ok(report)
}

/// Splits `total` draws across tensors as evenly as their sizes allow.
fn spread(total: usize, sizes: &[usize]) -> Vec<usize> {
    let mut quotas = vec![0; sizes.len()];
    let mut left = total.min(sizes.iter().sum());
    while left > 0 {
        for (q, &n) in quotas.iter_mut().zip(sizes) {
            if left > 0 && *q < n {
                *q += 1;
                left -= 1;
            }
        }
    }
    quotas
}

/// Analytic gradient of the objective for every parameter tensor, in store order.
pub fn parameter_gradients(
    model: &DoubleProngModel,
    sample: &SequenceSample,
    stage: Stage,
    input_frames: usize,
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    let g = sample_graph(model, sample, stage, input_frames, horizon)?;
    Ok(per_tensor_gradients(&g, model))
}

fn per_tensor_gradients(g: &SampleGraph, model: &DoubleProngModel) -> Vec<Vec<f64>> {
    let back = g.gradients();
    g.params
        .iter()
        .zip(&model.params.entries)
        .map(|(&v, p)| back.get(v).map_or_else(|| vec![0.0; p.value.len()], <[f64]>::to_vec))
        .collect()
}
