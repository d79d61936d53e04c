//! Optimisation loop, early stopping, checkpoints and the historical
//! average baseline.

mod adam;
mod checkpoint;

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};

use crate::data::{make_forecast_windows, make_windows, Dataset, DatasetSplit, RiskTensor, Window};
use crate::loss::{total_loss, total_loss_value, LossBreakdown, LossConfig};
use crate::model::{Model, ModelConfig, WindowBatch};
use crate::tensor::{ParamStore, Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 0.01,
            epochs: 20,
            patience: 10,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("train: learning_rate must be > 0".into());
        }
        if !(self.weight_decay >= 0.0 && self.learning_rate * self.weight_decay < 1.0) {
            return Err("train: weight_decay must be >= 0 and below 1 / learning_rate".into());
        }
        if self.epochs == 0 {
            return Err("train: epochs must be positive".into());
        }
        if self.patience > self.epochs {
            return Err("train: patience must not exceed epochs".into());
        }
        if !(self.grad_clip >= 0.0) {
            return Err("train: grad_clip must be >= 0".into());
        }
        Ok(())
    }
}

/// True when the best value is more than `patience` epochs old.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    let Some(best) = history
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, &v)| match acc {
            Some((_, b)) if b <= v => acc,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
    else {
        return false;
    };
    history.len() - 1 - best > patience
}

/// Each road's mean over `train` repeated for `horizon` steps, as `N x p`.
pub fn ha_baseline(risk: &RiskTensor, train: Range<usize>, horizon: usize) -> Tensor {
    let n = risk.n_roads();
    let mut out = Tensor::zeros(&[n, horizon]);
    let len = train.len().max(1) as f64;
    for i in 0..n {
        let mean = train.clone().map(|s| risk.get(i, s)).sum::<f64>() / len;
        for j in 0..horizon {
            out.set(i, j, mean);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-cell likelihood loss over the epoch's training windows,
    /// without the L2 term.
    pub train_loss: f64,
    /// Mean per-cell objective on the validation windows, without the L2
    /// term.
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Parameters of the best checkpoint.
    pub store: ParamStore,
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Why training stopped before finishing, when it did so by failure.
    pub aborted: Option<String>,
}

/// Training windows lie inside the train block; validation windows have
/// their targets inside the validation block.
pub fn split_windows(split: &DatasetSplit, cfg: &ModelConfig) -> (Vec<Window>, Vec<Window>) {
    let train = make_windows(split.train.clone(), cfg.history, cfg.horizon);
    let val = make_forecast_windows(split.validation.clone(), cfg.history, cfg.horizon);
    for w in &val {
        assert!(w.targets().end <= split.test.start, "validation window reaches test block");
    }
    (train, val)
}

fn mean_loss(
    model: &Model,
    store: &ParamStore,
    batches: &[WindowBatch],
    mask: &std::rc::Rc<[bool]>,
    cfg: &LossConfig,
) -> Result<f64> {
    let mut sum = LossBreakdown::default();
    for b in batches {
        let field = model.predict(store, b, mask)?;
        let parts = total_loss_value(&field, &b.targets, store, cfg)?;
        sum.zero_sum += parts.zero_sum;
        sum.positive_sum += parts.positive_sum;
        sum.zero_cells += parts.zero_cells;
        sum.positive_cells += parts.positive_cells;
    }
    Ok(sum.mean_per_cell())
}

/// Runs the full optimisation. `data` must already carry standardisation
/// statistics fitted on the train block.
pub fn train_loop(
    data: &Dataset,
    split: &DatasetSplit,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    config_hash: &str,
) -> Result<TrainOutcome> {
    let (train_ws, val_ws) = split_windows(split, model_cfg);
    if train_ws.is_empty() {
        return Err(Error::Config(format!(
            "train block of {} slots holds no window of {} + {} slots",
            split.train.len(),
            model_cfg.history,
            model_cfg.horizon
        )));
    }
    let train_batches = train_ws
        .iter()
        .map(|&w| WindowBatch::new(data, w))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let val_batches = val_ws
        .iter()
        .map(|&w| WindowBatch::new(data, w))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if val_batches.is_empty() {
        log::warn!("no validation windows; the training loss selects the checkpoint");
    }
    let mask = data.graph.attention_mask();

    let (model, mut store) = Model::init(model_cfg, data.features.dim(), seed);
    let mut adam = AdamState::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train_batches.len()).collect();

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(Checkpoint, ParamStore)> = None;
    let mut stopped_early = false;
    let mut aborted = None;

    let checkpoint = |store: &ParamStore, epoch, validation_loss| Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: config_hash.to_string(),
        model: model_cfg.clone(),
        input_dim: data.features.dim(),
        feature_mean: data.features.mean().to_vec(),
        feature_std: data.features.std().to_vec(),
        epoch,
        validation_loss,
        params: Checkpoint::snapshot_params(store),
    };

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_cells = 0usize;
        let mut failure = None;
        for &k in &order {
            let batch = &train_batches[k];
            let mut tape = Tape::new();
            let step = (|| -> Result<LossBreakdown> {
                let vars = model.forward(&mut tape, &store, batch, &mask, Some(&mut rng))?;
                let (loss, parts) = total_loss(&mut tape, &store, &vars, &batch.targets, loss_cfg)?;
                tape.backward(loss, &mut store)?;
                clip_grad_norm(&mut store, train_cfg.grad_clip);
                adam_step(&mut store, &mut adam, train_cfg.learning_rate, train_cfg.weight_decay)?;
                Ok(parts)
            })();
            match step {
                Ok(parts) => {
                    epoch_sum += parts.zero_sum + parts.positive_sum;
                    epoch_cells += parts.cells();
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        let train_loss = epoch_sum / epoch_cells.max(1) as f64;
        let validation_loss = match &failure {
            Some(_) => f64::NAN,
            None if val_batches.is_empty() => train_loss,
            None => match mean_loss(&model, &store, &val_batches, &mask, loss_cfg) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e.to_string());
                    f64::NAN
                }
            },
        };
        if failure.is_none() && !(train_loss.is_finite() && validation_loss.is_finite()) {
            failure = Some(format!("loss became non-finite ({train_loss}, {validation_loss})"));
        }
        if let Some(reason) = failure {
            log::error!("epoch {epoch}: {reason}");
            if best.is_none() {
                return Err(Error::Diverged { epoch, reason });
            }
            aborted = Some(format!("epoch {epoch}: {reason}"));
            break;
        }
        log::info!("epoch {epoch}: train {train_loss:.6} validation {validation_loss:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        if best.as_ref().is_none_or(|(b, _)| validation_loss < b.validation_loss) {
            best = Some((checkpoint(&store, epoch, validation_loss), store.clone()));
        }
        let vals: Vec<f64> = history.iter().map(|r| r.validation_loss).collect();
        if early_stop_check(&vals, train_cfg.patience) {
            log::info!("early stop after epoch {epoch}");
            stopped_early = epoch < train_cfg.epochs;
            break;
        }
    }
    let (best, store) = best.expect("at least one epoch completed");
    Ok(TrainOutcome {
        model,
        store,
        best,
        history,
        stopped_early,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, temporal_split, SynthConfig};

    #[test]
    fn early_stop_examples() {
        assert!(!early_stop_check(&[5.0, 4.0, 3.0, 2.0], 1));
        assert!(early_stop_check(&[1.0; 12], 10));
        assert!(!early_stop_check(&[1.0; 11], 10));
        assert!(!early_stop_check(&[1.0, 1.0, 1.0, 1.0, 0.5], 1));
        assert!(early_stop_check(&[1.0, 1.0], 0));
        assert!(!early_stop_check(&[1.0], 0));
    }

    #[test]
    fn ha_examples() {
        let risk = RiskTensor::from_values(2, 3, vec![0.0, 0.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let ha = ha_baseline(&risk, 0..3, 4);
        assert_eq!(ha.shape(), &[2, 4]);
        assert!((0..4).all(|j| ha.get(0, j) == 1.0 && ha.get(1, j) == 0.0));
    }

    fn toy() -> (Dataset, DatasetSplit, ModelConfig) {
        let mut data = synth_generate(&SynthConfig { n_roads: 8, n_slots: 48, ..Default::default() }, 2)
            .unwrap()
            .dataset;
        let split = temporal_split(48).unwrap();
        data.features.fit_standardization(split.train.clone());
        let cfg = ModelConfig {
            history: 4,
            horizon: 3,
            hidden: 6,
            spatial_hidden: 5,
            heads: 2,
            ..ModelConfig::default()
        };
        (data, split, cfg)
    }

    #[test]
    fn training_is_deterministic_and_tracks_best() {
        let (data, split, mcfg) = toy();
        let tcfg = TrainConfig { epochs: 4, patience: 4, ..TrainConfig::default() };
        let run = || train_loop(&data, &split, &mcfg, &LossConfig::default(), &tcfg, 9, "h").unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        let min = a.history.iter().map(|r| r.validation_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best.validation_loss, min);
        let (_, restored) = a.best.restore().unwrap();
        assert_eq!(Checkpoint::snapshot_params(&restored), a.best.params);
    }

    #[test]
    fn zero_patience_stops_on_first_plateau() {
        let (data, split, mcfg) = toy();
        let tcfg = TrainConfig { epochs: 30, patience: 0, learning_rate: 0.5, ..TrainConfig::default() };
        let out = train_loop(&data, &split, &mcfg, &LossConfig::default(), &tcfg, 1, "h").unwrap();
        let vals: Vec<f64> = out.history.iter().map(|r| r.validation_loss).collect();
        let n = vals.len();
        if n < 30 {
            assert!(vals[n - 1] >= vals[n - 2]);
            assert!(vals[..n - 1].windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn windows_respect_split() {
        let split = temporal_split(90).unwrap();
        let (tr, va) = split_windows(&split, &ModelConfig::default());
        assert_eq!((tr.len(), va.len()), (33, 2));
        assert!(tr.iter().all(|w| w.targets().end <= split.train.end));
        assert!(va.iter().all(|w| split.validation.contains(&w.targets().start)));
    }
}
