//! Central-difference check of tape gradients for the full model loss.

use serde::Serialize;

use crate::augment::chain_repeat;
use crate::eval::synth_corpus;
use crate::graph::PolymerGraph;
use crate::model::{ModelConfig, ModelParams, Pooling};
use crate::train::{loss, loss_and_gradients, TrainError};

pub const DEFAULT_STEP: f64 = 1e-6;

/// `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖)` over every parameter of the
/// total loss (task plus `l1_weight` times the penalty).
pub fn relative_gradient_error(
    params: &ModelParams,
    batch: &[PolymerGraph],
    l1_weight: f64,
    step: f64,
) -> Result<f64, TrainError> {
    let (_, analytic) = loss_and_gradients(batch, params, l1_weight)?;
    let mut probe = params.clone();
    let (mut diff, mut norm_a, mut norm_fd) = (0.0, 0.0, 0.0);
    for (ti, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = probe.tensors_mut()[ti].data()[j];
            probe.tensors_mut()[ti].data_mut()[j] = orig + step;
            let up = loss(batch, &probe, l1_weight)?.total;
            probe.tensors_mut()[ti].data_mut()[j] = orig - step;
            let down = loss(batch, &probe, l1_weight)?.total;
            probe.tensors_mut()[ti].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * step);
            let a = grad.data()[j];
            diff += (a - fd) * (a - fd);
            norm_a += a * a;
            norm_fd += fd * fd;
        }
    }
    let scale = norm_a.sqrt().max(norm_fd.sqrt());
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub graphs: usize,
    pub tol: f64,
    pub max_rel_error: f64,
    pub failures: usize,
    pub rel_errors: Vec<f64>,
    pub pass: bool,
}

/// Small random graphs and models; aggregator and readout cycle through
/// max, mean and sum.
pub fn run_gradcheck(seed: u64, graphs: usize, tol: f64) -> Result<GradCheckReport, TrainError> {
    let pools = [Pooling::Max, Pooling::Mean, Pooling::Sum];
    let corpus = synth_corpus(graphs, seed);
    let mut rel_errors = Vec::with_capacity(graphs);
    for (i, s) in corpus.iter().enumerate() {
        let g = chain_repeat(&s.unit, 1 + i % 3).with_label(Some(s.value / 100.0));
        let mut params = ModelParams::init(ModelConfig {
            hidden_dim: 5,
            num_layers: 2,
            aggregator: pools[i % 3],
            readout: pools[(i / 3) % 3],
            seed: seed.wrapping_add(i as u64),
        })?;
        params.target_mean = 0.5;
        params.target_scale = 2.0;
        rel_errors.push(relative_gradient_error(&params, &[g], 1e-3, DEFAULT_STEP)?);
    }
    let failures = rel_errors.iter().filter(|&&e| !(e <= tol)).count();
    Ok(GradCheckReport {
        seed,
        graphs,
        tol,
        max_rel_error: rel_errors.iter().copied().fold(0.0, f64::max),
        failures,
        rel_errors,
        pass: failures == 0,
    })
}
