//! Mini-batch training with MSE, a delayed ℓ1 penalty and early stopping.

use std::fmt::Write as _;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diffcore::{Adam, DiffError, Tape, Tensor, Var};
use crate::graph::PolymerGraph;
use crate::model::{
    forward_on_tape, GraphInputs, ModelConfig, ModelError, ModelParams, ParamVars, Pooling,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptyData(&'static str),
    #[error("graph {0} has no label")]
    MissingLabel(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shape(#[from] DiffError),
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub l1_weight: f64,
    pub l1_warmup_epochs: usize,
    pub seed: u64,
    pub aggregator: Pooling,
    pub readout: Pooling,
    pub hidden_dim: usize,
    pub num_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 400,
            patience: 100,
            l1_weight: 1e-3,
            l1_warmup_epochs: 50,
            seed: 0,
            aggregator: Pooling::Max,
            readout: Pooling::Max,
            hidden_dim: 64,
            num_layers: 3,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience exceeds max_epochs");
        }
        if !(self.l1_weight >= 0.0 && self.l1_weight.is_finite()) {
            return bad("l1_weight must be non-negative");
        }
        self.model_config().validate()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            aggregator: self.aggregator,
            readout: self.readout,
            seed: self.seed,
        }
    }

    /// Penalty weight in effect for a 0-based epoch.
    pub fn l1_weight_at(&self, epoch: usize) -> f64 {
        if epoch < self.l1_warmup_epochs {
            0.0
        } else {
            self.l1_weight
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Mean squared error on standardized targets.
    pub task_loss: f64,
    pub l1_term: f64,
    pub l1_weight: f64,
    pub total: f64,
}

struct Objective {
    task: Var,
    l1: Var,
    total: Var,
}

fn record_objective(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ParamVars,
    batch: &[&GraphInputs],
    l1_weight: f64,
) -> Result<Objective, TrainError> {
    let input = GraphInputs::union(batch);
    let targets = input
        .labels
        .iter()
        .enumerate()
        .map(|(i, y)| {
            y.map(|y| (y - params.target_mean) / params.target_scale)
                .ok_or(TrainError::MissingLabel(i))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if targets.is_empty() {
        return Err(TrainError::EmptyData("batch"));
    }
    let preds = forward_on_tape(tape, params, vars, &input, params.config.aggregator)?.raw_prediction;
    let task = tape.mse(preds, Rc::new(targets))?;

    let mut l1: Option<Var> = None;
    for (&v, g) in vars.vars.iter().zip(params.groups()) {
        if !g.penalized() {
            continue;
        }
        let n = tape.l1_norm(v);
        l1 = Some(match l1 {
            None => n,
            Some(acc) => tape.add(acc, n)?,
        });
    }
    let l1 = match l1 {
        Some(v) => v,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let total = if l1_weight == 0.0 {
        task
    } else {
        let scaled = tape.scale(l1, l1_weight);
        tape.add(task, scaled)?
    };
    Ok(Objective { task, l1, total })
}

/// Task loss, penalty and total for one batch at a given penalty weight.
pub fn loss(
    batch: &[PolymerGraph],
    params: &ModelParams,
    l1_weight: f64,
) -> Result<LossReport, TrainError> {
    let inputs: Vec<GraphInputs> = batch.iter().map(GraphInputs::new).collect();
    let refs: Vec<&GraphInputs> = inputs.iter().collect();
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let obj = record_objective(&mut tape, params, &vars, &refs, l1_weight)?;
    Ok(LossReport {
        task_loss: tape.value(obj.task).item(),
        l1_term: tape.value(obj.l1).item(),
        l1_weight,
        total: tape.value(obj.total).item(),
    })
}

/// Loss report plus gradients of the total, in canonical parameter order.
pub fn loss_and_gradients(
    batch: &[PolymerGraph],
    params: &ModelParams,
    l1_weight: f64,
) -> Result<(LossReport, Vec<Tensor>), TrainError> {
    let inputs: Vec<GraphInputs> = batch.iter().map(GraphInputs::new).collect();
    let refs: Vec<&GraphInputs> = inputs.iter().collect();
    step_gradients(params, &refs, l1_weight)
}

fn step_gradients(
    params: &ModelParams,
    batch: &[&GraphInputs],
    l1_weight: f64,
) -> Result<(LossReport, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let obj = record_objective(&mut tape, params, &vars, batch, l1_weight)?;
    let report = LossReport {
        task_loss: tape.value(obj.task).item(),
        l1_term: tape.value(obj.l1).item(),
        l1_weight,
        total: tape.value(obj.total).item(),
    };
    let mut grads = tape.backward(obj.total);
    let out = vars
        .vars
        .iter()
        .map(|&v| {
            grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
        })
        .collect();
    Ok((report, out))
}

const PREDICT_CHUNK: usize = 32;

/// Predictions for pre-featurized graphs.
pub fn predict_inputs(params: &ModelParams, inputs: &[GraphInputs]) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let base = tape.len();
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(PREDICT_CHUNK) {
        let refs: Vec<&GraphInputs> = chunk.iter().collect();
        let input = GraphInputs::union(&refs);
        let f = forward_on_tape(&mut tape, params, &vars, &input, params.config.aggregator)?;
        out.extend(
            tape.value(f.raw_prediction)
                .data()
                .iter()
                .map(|r| params.target_mean + params.target_scale * r),
        );
        tape.truncate(base);
    }
    Ok(out)
}

pub fn predict(params: &ModelParams, graphs: &[PolymerGraph]) -> Result<Vec<f64>, ModelError> {
    let inputs: Vec<GraphInputs> = graphs.iter().map(GraphInputs::new).collect();
    predict_inputs(params, &inputs)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> f64 {
    let n = y_true.len().max(1) as f64;
    (y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of batch task losses.
    pub task_loss: f64,
    /// Penalty value after the epoch's last update.
    pub l1_term: f64,
    pub valid_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_rmse: f64,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,task_loss,l1,valid_rmse\n");
        for r in &self.records {
            writeln!(s, "{},{:e},{:e},{:e}", r.epoch, r.task_loss, r.l1_term, r.valid_rmse).unwrap();
        }
        s
    }

    /// SHA-256 of [`History::to_csv`], lowercase hex.
    pub fn hash(&self) -> String {
        hex_digest(self.to_csv().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: History,
}

fn label_stats(graphs: &[PolymerGraph]) -> Result<(f64, f64), TrainError> {
    let ys = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| g.label().ok_or(TrainError::MissingLabel(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok((mean, if std > 1e-12 { std } else { 1.0 }))
}

/// Trains from a fresh seeded initialization; returns the parameters from the
/// epoch with the lowest validation RMSE.
pub fn train(
    train_set: &[PolymerGraph],
    valid_set: &[PolymerGraph],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_observer(train_set, valid_set, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_observer<F: FnMut(&EpochRecord)>(
    train_set: &[PolymerGraph],
    valid_set: &[PolymerGraph],
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyData("training"));
    }
    if valid_set.is_empty() {
        return Err(TrainError::EmptyData("validation"));
    }
    let mut params = ModelParams::init(cfg.model_config())?;
    let (mean, scale) = label_stats(train_set)?;
    params.target_mean = mean;
    params.target_scale = scale;

    let train_inputs: Vec<GraphInputs> = train_set.iter().map(GraphInputs::new).collect();
    let valid_inputs: Vec<GraphInputs> = valid_set.iter().map(GraphInputs::new).collect();
    let valid_y = valid_set
        .iter()
        .enumerate()
        .map(|(i, g)| g.label().ok_or(TrainError::MissingLabel(i)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut flat: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let mut adam = Adam::new(&flat, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();

    let mut records = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    for epoch in 0..cfg.max_epochs {
        let l1_weight = cfg.l1_weight_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&GraphInputs> = chunk.iter().map(|&i| &train_inputs[i]).collect();
            let (report, grads) = step_gradients(&params, &batch, l1_weight)?;
            if !report.total.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    loss: report.total,
                });
            }
            loss_sum += report.task_loss * chunk.len() as f64;
            adam.step(&mut flat, &grads)?;
            for (slot, t) in params.tensors_mut().into_iter().zip(&flat) {
                slot.data_mut().copy_from_slice(t.data());
            }
        }
        let preds = predict_inputs(&params, &valid_inputs)?;
        let valid_rmse = rmse(&valid_y, &preds);
        if !valid_rmse.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                loss: valid_rmse,
            });
        }
        let record = EpochRecord {
            epoch,
            task_loss: loss_sum / order.len() as f64,
            l1_term: params.l1_penalty(),
            valid_rmse,
        };
        observe(&record);
        records.push(record);
        if best.as_ref().map_or(true, |(_, b, _)| valid_rmse < *b) {
            best = Some((epoch, valid_rmse, params.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_valid_rmse, params) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        params,
        history: History {
            records,
            best_epoch,
            best_valid_rmse,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::chain_repeat;
    use crate::model::Mlp;
    use crate::smiles::parse_repeat_unit;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            lr: 1e-2,
            batch_size: 4,
            max_epochs: 50,
            patience: 50,
            hidden_dim: 8,
            num_layers: 2,
            ..TrainConfig::default()
        }
    }

    fn graphs(label: impl Fn(usize) -> f64) -> Vec<PolymerGraph> {
        ["*CC*", "*CO*", "*CC(=O)*", "*OCC*", "*CCC*", "*CN*"]
            .iter()
            .enumerate()
            .map(|(i, s)| chain_repeat(&parse_repeat_unit(s).unwrap(), 1 + i % 2).with_label(Some(label(i))))
            .collect()
    }

    #[test]
    fn config_from_toml_with_defaults() {
        let cfg = TrainConfig::from_toml("lr = 0.01\nseed = 9\naggregator = \"mean\"\n").unwrap();
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.aggregator, Pooling::Mean);
        assert_eq!(cfg.batch_size, 32);
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert!(TrainConfig::from_toml("patience = 500").is_err());
    }

    #[test]
    fn warmup_is_a_step() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.l1_weight_at(49), 0.0);
        assert_eq!(cfg.l1_weight_at(50), 1e-3);
    }

    #[test]
    fn zero_penalty_weight_total_is_task() {
        let p = ModelParams::init(tiny_cfg().model_config()).unwrap();
        let r = loss(&graphs(|i| i as f64), &p, 0.0).unwrap();
        assert_eq!(r.total, r.task_loss);
        assert!(r.l1_term > 0.0);
        let r = loss(&graphs(|i| i as f64), &p, 0.5).unwrap();
        assert_eq!(r.total, r.task_loss + 0.5 * r.l1_term);
    }

    #[test]
    fn zero_weights_have_zero_penalty() {
        let mut p = ModelParams::init(tiny_cfg().model_config()).unwrap();
        let d = p.hidden_dim();
        for layer in &mut p.layers {
            layer.message = Mlp::zeros(d + 4, d, d);
            layer.update = Mlp::zeros(2 * d, d, d);
        }
        assert_eq!(p.l1_penalty(), 0.0);
        assert_eq!(loss(&graphs(|_| 1.0), &p, 1.0).unwrap().l1_term, 0.0);
    }

    #[test]
    fn penalty_covers_message_and_update_only() {
        let mut p = ModelParams::init(ModelConfig {
            hidden_dim: 1,
            num_layers: 1,
            ..ModelConfig::default()
        })
        .unwrap();
        p.layers[0].message = Mlp::zeros(5, 1, 1);
        p.layers[0].update = Mlp::zeros(2, 1, 1);
        p.layers[0].message.hidden.bias = Tensor::vector(vec![0.5]);
        p.layers[0].update.output.weight = Tensor::matrix(1, 1, vec![-0.25]).unwrap();
        assert_eq!(p.l1_penalty(), 0.75);
    }

    #[test]
    fn constant_labels_are_learned() {
        let g = graphs(|_| 42.0);
        let out = train(&g, &g, &tiny_cfg()).unwrap();
        assert!(out.history.best_valid_rmse < 1e-2, "{}", out.history.best_valid_rmse);
    }

    #[test]
    fn warmup_matches_zero_penalty_before_epoch_fifty() {
        let g = graphs(|i| (i * i) as f64);
        let cfg = TrainConfig {
            max_epochs: 55,
            ..tiny_cfg()
        };
        let a = train(&g, &g, &cfg).unwrap();
        let b = train(&g, &g, &TrainConfig { l1_weight: 0.0, ..cfg }).unwrap();
        assert_eq!(a.history.records[..50], b.history.records[..50]);
        assert_ne!(a.history.records[54], b.history.records[54]);
    }

    #[test]
    fn same_seed_same_history() {
        let g = graphs(|i| i as f64);
        let cfg = TrainConfig {
            max_epochs: 5,
            patience: 5,
            ..tiny_cfg()
        };
        let a = train(&g, &g, &cfg).unwrap();
        let b = train(&g, &g, &cfg).unwrap();
        assert_eq!(a.history.hash(), b.history.hash());
        assert_eq!(a.params.to_json(), b.params.to_json());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let g = graphs(|i| 1e3 * i as f64);
        let cfg = TrainConfig {
            lr: 1e300,
            max_epochs: 5,
            patience: 5,
            ..tiny_cfg()
        };
        assert!(matches!(train(&g, &g, &cfg), Err(TrainError::Divergence { .. })));
    }

    #[test]
    fn empty_sets_rejected() {
        let g = graphs(|_| 0.0);
        assert!(matches!(train(&[], &g, &tiny_cfg()), Err(TrainError::EmptyData(_))));
        assert!(matches!(train(&g, &[], &tiny_cfg()), Err(TrainError::EmptyData(_))));
    }
}
