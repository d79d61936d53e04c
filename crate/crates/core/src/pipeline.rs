//! Glue between data, training and evaluation shared by the CLI and tests.

use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{make_forecast_windows, temporal_split, Dataset, DatasetSplit, Window};
use crate::loss::LossConfig;
use crate::metrics::{acc_hit_rate, point_metrics, MetricReport, PredictionSet};
use crate::model::{Model, WindowBatch};
use crate::tensor::ParamStore;
use crate::train::{ha_baseline, train_loop, Checkpoint, TrainOutcome};
use crate::tweedie::{zitd_interval, zitd_log_density, zitd_zero_mass, ZitdParams};
use crate::{Error, Result};

/// Splits the data and fits feature standardisation on the train block.
pub fn prepare(data: &mut Dataset) -> Result<DatasetSplit> {
    let split = temporal_split(data.n_slots())?;
    data.features.fit_standardization(split.train.clone());
    Ok(split)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for one cell's Monte Carlo interval.
pub fn cell_seed(seed: u64, target_start: usize, road: usize, step: usize) -> u64 {
    [target_start as u64, road as u64, step as u64]
        .iter()
        .fold(splitmix64(seed), |acc, &v| splitmix64(acc ^ v))
}

/// Forecasts, intervals and zero masses for every window. Truth and exact
/// per-cell NLL are attached when `with_truth` is set.
pub fn predict_windows(
    model: &Model,
    store: &ParamStore,
    data: &Dataset,
    windows: &[Window],
    cfg: &RunConfig,
    with_truth: bool,
) -> Result<PredictionSet> {
    let mask = data.graph.attention_mask();
    let (n, p) = (data.graph.n_roads(), model.config.horizon);
    let mut set = PredictionSet {
        n_roads: n,
        horizon: p,
        window_starts: windows.iter().map(|w| w.targets().start).collect(),
        mean: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        p0: Vec::new(),
        truth: with_truth.then(Vec::new),
        nll: with_truth.then(Vec::new),
    };
    for &w in windows {
        let batch = WindowBatch::new(data, w)?;
        if with_truth && !batch.has_targets(data.n_slots()) {
            return Err(Error::Config(format!("window {:?} runs past the data", w.targets())));
        }
        let field = model.predict(store, &batch, &mask)?;
        for i in 0..n {
            for j in 0..p {
                let z = field.zitd(i, j);
                let seed = cell_seed(cfg.seed, w.targets().start, i, j);
                let (l, u) = zitd_interval(
                    &z,
                    cfg.eval.lower_q,
                    cfg.eval.upper_q,
                    cfg.eval.method(seed),
                    &cfg.series,
                )?;
                set.mean.push(field.mean(i, j));
                set.lower.push(l);
                set.upper.push(u);
                set.p0.push(zitd_zero_mass(&z));
                if let (Some(t), Some(nll)) = (set.truth.as_mut(), set.nll.as_mut()) {
                    let y = batch.targets.get(i, j);
                    t.push(y);
                    nll.push(exact_nll(y, &z, &cfg.loss, cfg));
                }
            }
        }
    }
    if set.nll.as_ref().is_some_and(|v| v.iter().any(|x| !x.is_finite())) {
        log::warn!("exact NLL unavailable for some cells; omitted from the report");
        set.nll = None;
    }
    Ok(set)
}

fn exact_nll(y: f64, z: &ZitdParams, loss: &LossConfig, cfg: &RunConfig) -> f64 {
    let mut zf = *z;
    zf.td.mu = zf.td.mu.max(loss.mu_floor);
    match zitd_log_density(y, &zf, &cfg.series) {
        Ok(v) => -v,
        Err(e) => {
            log::warn!("{e}");
            f64::NAN
        }
    }
}

/// Point and ranking metrics of the historical average on the same cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineReport {
    pub mae: f64,
    pub mape: Option<f64>,
    pub rmse: f64,
    pub acc_hr: Option<f64>,
}

pub fn ha_report(data: &Dataset, split: &DatasetSplit, set: &PredictionSet, hit_fraction: f64) -> BaselineReport {
    let ha = ha_baseline(&data.risk, split.train.clone(), set.horizon);
    let truth = set.truth.as_ref().expect("baseline needs truth");
    let mut yhat = Vec::with_capacity(truth.len());
    for _ in &set.window_starts {
        yhat.extend_from_slice(ha.data());
    }
    let (mae, mape, rmse) = point_metrics(truth, &yhat);
    let mut ts = Vec::new();
    let mut ps = Vec::new();
    for w in 0..set.window_starts.len() {
        for j in 0..set.horizon {
            ts.push((0..set.n_roads).map(|i| truth[set.index(w, i, j)]).collect());
            ps.push((0..set.n_roads).map(|i| ha.get(i, j)).collect());
        }
    }
    BaselineReport {
        mae,
        mape,
        rmse,
        acc_hr: acc_hit_rate(&ts, &ps, hit_fraction),
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub predictions: PredictionSet,
    pub baseline: BaselineReport,
}

/// Metrics on the test block; targets lie in the block and inputs may
/// reach back before it.
pub fn evaluate(model: &Model, store: &ParamStore, data: &Dataset, split: &DatasetSplit, cfg: &RunConfig) -> Result<Evaluation> {
    let windows = make_forecast_windows(split.test.clone(), model.config.history, model.config.horizon);
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "test block {:?} cannot hold a {}-step target",
            split.test, model.config.horizon
        )));
    }
    let predictions = predict_windows(model, store, data, &windows, cfg, true)?;
    let report = MetricReport::compute(&predictions, cfg.eval.zero_threshold, cfg.eval.hit_fraction);
    let baseline = ha_report(data, split, &predictions, cfg.eval.hit_fraction);
    Ok(Evaluation {
        report,
        predictions,
        baseline,
    })
}

/// Rebuilds a model and applies the checkpoint's feature statistics.
pub fn restore(checkpoint: &Checkpoint, data: &mut Dataset) -> Result<(Model, ParamStore)> {
    if checkpoint.input_dim != data.features.dim() {
        return Err(Error::Checkpoint(format!(
            "model expects {} features, data has {}",
            checkpoint.input_dim,
            data.features.dim()
        )));
    }
    data.features
        .set_standardization(&checkpoint.feature_mean, &checkpoint.feature_std)?;
    checkpoint.restore()
}

pub fn train(data: &Dataset, split: &DatasetSplit, cfg: &RunConfig) -> Result<TrainOutcome> {
    train_loop(data, split, &cfg.model, &cfg.loss, &cfg.train, cfg.seed, &cfg.hash())
}

/// Result of generating, training and evaluating in memory.
#[derive(Debug, Clone)]
pub struct EndToEnd {
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
    pub zero_fraction: f64,
}

pub fn synthetic_end_to_end(cfg: &RunConfig) -> Result<EndToEnd> {
    let synth = crate::data::synth_generate(&cfg.synth, cfg.seed)?;
    let mut data = synth.dataset;
    let split = prepare(&mut data)?;
    let outcome = train(&data, &split, cfg)?;
    let evaluation = evaluate(&outcome.model, &outcome.store, &data, &split, cfg)?;
    Ok(EndToEnd {
        outcome,
        evaluation,
        zero_fraction: synth.empirical_zero_fraction,
    })
}
