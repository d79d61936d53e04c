//! Road graph, crash-risk labels, features, splits and windows.

mod io;
mod synth;

use std::ops::Range;
use std::rc::Rc;

pub use io::{
    load_dataset, write_crashes, write_edges, write_features, write_true_params, CRASHES_FILE,
    EDGES_FILE, FEATURES_FILE, TRUE_PARAMS_FILE,
};
pub use synth::{synth_generate, Schedule, SynthConfig, SynthOutput, TrueParams};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("record {record}: road {road} / slot {time} outside {n_roads} roads x {n_slots} slots")]
    RecordOutOfRange {
        record: usize,
        road: usize,
        time: usize,
        n_roads: usize,
        n_slots: usize,
    },
    #[error("record {record}: counts must be finite and >= 0, got {counts:?}")]
    NegativeCount { record: usize, counts: [f64; 3] },
    #[error("edge ({a}, {b}) refers to a road >= {n}")]
    EdgeOutOfRange { a: usize, b: usize, n: usize },
    #[error("self-edge on road {0}")]
    SelfEdge(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("need at least 12 time slots to split, got {0}")]
    TooFewSlots(usize),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Default severity weights for minor, serious and fatal crashes.
pub const DEFAULT_SEVERITY_WEIGHTS: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    n_roads: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<bool>,
}

impl RoadGraph {
    /// Builds an undirected graph. Pairs are normalised to `(min, max)`;
    /// self-edges and duplicates are rejected.
    pub fn build(n_roads: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![false; n_roads * n_roads];
        let mut edges = Vec::with_capacity(edge_list.len());
        for &(a, b) in edge_list {
            if a >= n_roads || b >= n_roads {
                return Err(DataError::EdgeOutOfRange { a, b, n: n_roads });
            }
            if a == b {
                return Err(DataError::SelfEdge(a));
            }
            let (i, j) = (a.min(b), a.max(b));
            if adjacency[i * n_roads + j] {
                return Err(DataError::DuplicateEdge(i, j));
            }
            adjacency[i * n_roads + j] = true;
            adjacency[j * n_roads + i] = true;
            edges.push((i, j));
        }
        Ok(Self {
            n_roads,
            edges,
            adjacency,
        })
    }

    pub fn n_roads(&self) -> usize {
        self.n_roads
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n_roads + j]
    }

    /// Row-major adjacency as 0/1 values.
    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        (0..self.n_roads)
            .map(|i| (0..self.n_roads).map(|j| self.is_adjacent(i, j) as u8).collect())
            .collect()
    }

    /// Attention mask: neighbours plus the road itself.
    pub fn attention_mask(&self) -> Rc<[bool]> {
        let n = self.n_roads;
        (0..n * n)
            .map(|k| self.adjacency[k] || k / n == k % n)
            .collect()
    }

    /// The same graph with road `i` renamed to `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let edges: Vec<_> = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Self::build(self.n_roads, &edges)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrashRecord {
    pub road: usize,
    pub time: usize,
    /// Minor, serious and fatal counts.
    pub counts: [f64; 3],
}

/// `N x T` crash-risk scores, row-major by road.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTensor {
    n_roads: usize,
    n_slots: usize,
    values: Vec<f64>,
}

impl RiskTensor {
    pub fn zeros(n_roads: usize, n_slots: usize) -> Self {
        Self {
            n_roads,
            n_slots,
            values: vec![0.0; n_roads * n_slots],
        }
    }

    pub fn from_values(n_roads: usize, n_slots: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_roads * n_slots {
            return Err(DataError::Shape(format!(
                "risk tensor needs {} values, got {}",
                n_roads * n_slots,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(DataError::Shape(format!("risk values must be >= 0, got {v}")));
        }
        Ok(Self {
            n_roads,
            n_slots,
            values,
        })
    }

    pub fn n_roads(&self) -> usize {
        self.n_roads
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn get(&self, road: usize, slot: usize) -> f64 {
        self.values[road * self.n_slots + slot]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn zero_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v == 0.0).count() as f64 / self.values.len().max(1) as f64
    }

    /// Rows of `perm`-relabelled roads.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.n_roads, self.n_slots);
        for i in 0..self.n_roads {
            for s in 0..self.n_slots {
                out.values[perm[i] * self.n_slots + s] = self.get(i, s);
            }
        }
        out
    }
}

/// Severity-weighted sum of all records per cell.
pub fn compute_risk_scores(
    records: &[CrashRecord],
    weights: [f64; 3],
    n_roads: usize,
    n_slots: usize,
) -> Result<RiskTensor> {
    let mut risk = RiskTensor::zeros(n_roads, n_slots);
    for (k, r) in records.iter().enumerate() {
        if r.road >= n_roads || r.time >= n_slots {
            return Err(DataError::RecordOutOfRange {
                record: k,
                road: r.road,
                time: r.time,
                n_roads,
                n_slots,
            });
        }
        if r.counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(DataError::NegativeCount {
                record: k,
                counts: r.counts,
            });
        }
        let score: f64 = r.counts.iter().zip(weights).map(|(c, w)| c * w).sum();
        risk.values[r.road * n_slots + r.time] += score;
    }
    Ok(risk)
}

/// `N x T x d` features plus per-feature standardisation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    n_roads: usize,
    n_slots: usize,
    dim: usize,
    values: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl FeatureTensor {
    pub fn from_values(n_roads: usize, n_slots: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_roads * n_slots * dim {
            return Err(DataError::Shape(format!(
                "feature tensor needs {} values, got {}",
                n_roads * n_slots * dim,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(DataError::Shape(format!("non-finite feature value {v}")));
        }
        Ok(Self {
            n_roads,
            n_slots,
            dim,
            values,
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        })
    }

    pub fn n_roads(&self) -> usize {
        self.n_roads
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw (unstandardised) value.
    pub fn raw(&self, road: usize, slot: usize, k: usize) -> f64 {
        self.values[(road * self.n_slots + slot) * self.dim + k]
    }

    /// Standardised value.
    pub fn get(&self, road: usize, slot: usize, k: usize) -> f64 {
        (self.raw(road, slot, k) - self.mean[k]) / self.std[k]
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Freezes z-score statistics computed over `slots` only. Constant
    /// features keep unit scale.
    pub fn fit_standardization(&mut self, slots: Range<usize>) {
        let count = (self.n_roads * slots.len()).max(1) as f64;
        for k in 0..self.dim {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for i in 0..self.n_roads {
                for s in slots.clone() {
                    let v = self.raw(i, s, k);
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / count;
            let var = (sq / count - mean * mean).max(0.0);
            self.mean[k] = mean;
            self.std[k] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
    }

    /// Installs statistics saved from an earlier fit.
    pub fn set_standardization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        if mean.len() != self.dim || std.len() != self.dim {
            return Err(DataError::Shape(format!(
                "{} features, but statistics for {} / {}",
                self.dim,
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(DataError::Shape("invalid standardisation statistics".into()));
        }
        self.mean = mean.to_vec();
        self.std = std.to_vec();
        Ok(())
    }

    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        let block = self.n_slots * self.dim;
        for i in 0..self.n_roads {
            out.values[perm[i] * block..(perm[i] + 1) * block]
                .copy_from_slice(&self.values[i * block..(i + 1) * block]);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: RoadGraph,
    pub features: FeatureTensor,
    pub risk: RiskTensor,
}

impl Dataset {
    pub fn new(graph: RoadGraph, features: FeatureTensor, risk: RiskTensor) -> Result<Self> {
        let n = graph.n_roads();
        if features.n_roads() != n || risk.n_roads() != n || features.n_slots() != risk.n_slots() {
            return Err(DataError::Shape(format!(
                "graph has {n} roads, features {}x{}, risk {}x{}",
                features.n_roads(),
                features.n_slots(),
                risk.n_roads(),
                risk.n_slots()
            )));
        }
        Ok(Self {
            graph,
            features,
            risk,
        })
    }

    pub fn n_slots(&self) -> usize {
        self.risk.n_slots()
    }
}

/// Contiguous, chronologically ordered blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// 8:2:2 split of `n_slots` into train, validation and test blocks, with
/// the rounding remainder going to test.
pub fn temporal_split(n_slots: usize) -> Result<DatasetSplit> {
    if n_slots < 12 {
        return Err(DataError::TooFewSlots(n_slots));
    }
    let train = 8 * n_slots / 12;
    let val = 2 * n_slots / 12;
    Ok(DatasetSplit {
        train: 0..train,
        validation: train..train + val,
        test: train + val..n_slots,
    })
}

/// One forecasting example: inputs cover `[start, start + history)` and
/// targets the following `horizon` slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub history: usize,
    pub horizon: usize,
}

impl Window {
    pub fn inputs(&self) -> Range<usize> {
        self.start..self.start + self.history
    }

    pub fn targets(&self) -> Range<usize> {
        let t0 = self.start + self.history;
        t0..t0 + self.horizon
    }
}

/// Sliding windows (step 1) lying entirely inside `range`.
pub fn make_windows(range: Range<usize>, history: usize, horizon: usize) -> Vec<Window> {
    let need = history + horizon;
    if range.len() < need || need == 0 {
        log::warn!(
            "range {range:?} holds {} slots, fewer than history + horizon = {need}; no windows",
            range.len()
        );
        return Vec::new();
    }
    (range.start..=range.end - need)
        .map(|start| Window {
            start,
            history,
            horizon,
        })
        .collect()
}

/// Sliding windows whose targets lie inside `range` and whose inputs may
/// reach back into earlier slots (never before slot 0).
pub fn make_forecast_windows(range: Range<usize>, history: usize, horizon: usize) -> Vec<Window> {
    let first = range.start.max(history);
    if range.end < first + horizon || horizon == 0 {
        log::warn!("range {range:?} cannot hold a {horizon}-slot target after {history} slots of history");
        return Vec::new();
    }
    (first..=range.end - horizon)
        .map(|t0| Window {
            start: t0 - history,
            history,
            horizon,
        })
        .collect()
}
