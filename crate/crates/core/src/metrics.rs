//! Point, interval, zero and ranking metrics over multi-step forecasts.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

/// MAE, MAPE and RMSE. MAPE averages over cells with `y > 0` only and is
/// `None` when there are none.
pub fn point_metrics(y: &[f64], yhat: &[f64]) -> (f64, Option<f64>, f64) {
    assert_eq!(y.len(), yhat.len());
    let n = y.len().max(1) as f64;
    let mae = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let rmse = (y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    let (sum, count) = y
        .iter()
        .zip(yhat)
        .filter(|(a, _)| **a > 0.0)
        .fold((0.0, 0usize), |(s, c), (a, b)| (s + ((a - b) / a).abs(), c + 1));
    let mape = (count > 0).then(|| sum / count as f64);
    (mae, mape, rmse)
}

/// MPIW and PICP with inclusive bounds.
pub fn interval_metrics(y: &[f64], lower: &[f64], upper: &[f64]) -> (f64, f64) {
    assert!(y.len() == lower.len() && y.len() == upper.len());
    let n = y.len().max(1) as f64;
    let mpiw = lower.iter().zip(upper).map(|(l, u)| u - l).sum::<f64>() / n;
    let inside = y
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|&(v, (l, u))| l <= v && v <= u)
        .count();
    (mpiw, inside as f64 / n)
}

/// Fraction of all cells where the truth is zero and `P0 > threshold`.
pub fn zero_rate(y: &[f64], p0: &[f64], threshold: f64) -> f64 {
    assert_eq!(y.len(), p0.len());
    let hits = y
        .iter()
        .zip(p0)
        .filter(|(v, p)| **v == 0.0 && **p > threshold)
        .count();
    hits as f64 / y.len().max(1) as f64
}

/// Per time step, the share of crash cells falling on the top `ceil(a N)`
/// roads ranked by forecast (ties to the lower index), averaged over steps
/// that contain a crash. Each inner vector holds one step across roads.
pub fn acc_hit_rate(truth: &[Vec<f64>], pred: &[Vec<f64>], a: f64) -> Option<f64> {
    assert_eq!(truth.len(), pred.len());
    let mut total = 0.0;
    let mut steps = 0usize;
    for (y, yhat) in truth.iter().zip(pred) {
        let crashes = y.iter().filter(|&&v| v > 0.0).count();
        if crashes == 0 {
            continue;
        }
        let k = ((a * y.len() as f64).ceil() as usize).min(y.len());
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&i, &j| yhat[j].total_cmp(&yhat[i]).then(i.cmp(&j)));
        let hit = order[..k].iter().filter(|&&i| y[i] > 0.0).count();
        total += hit as f64 / crashes as f64;
        steps += 1;
    }
    (steps > 0).then(|| total / steps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSet {
    pub mae: f64,
    pub mape: Option<f64>,
    pub rmse: f64,
    pub mpiw: f64,
    pub picp: f64,
    pub zr: f64,
    pub acc_hr: Option<f64>,
    /// Mean exact negative log-likelihood per cell.
    pub nll: Option<f64>,
}

/// Forecasts for a set of windows, laid out `(window, road, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub n_roads: usize,
    pub horizon: usize,
    /// First target slot of each window.
    pub window_starts: Vec<usize>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub p0: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    /// Per-cell exact negative log-likelihood, when truth is known.
    pub nll: Option<Vec<f64>>,
}

impl PredictionSet {
    pub fn index(&self, window: usize, road: usize, step: usize) -> usize {
        (window * self.n_roads + road) * self.horizon + step
    }

    fn step_indices(&self, step: usize) -> Vec<usize> {
        (0..self.window_starts.len())
            .flat_map(|w| (0..self.n_roads).map(move |i| (w, i)))
            .map(|(w, i)| self.index(w, i, step))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        match &self.truth {
            Some(_) => writeln!(w, "road,step,mean,L,U,P0,y_true,window")?,
            None => writeln!(w, "road,step,mean,L,U,P0")?,
        }
        for (wi, &start) in self.window_starts.iter().enumerate() {
            for i in 0..self.n_roads {
                for j in 0..self.horizon {
                    let k = self.index(wi, i, j);
                    write!(
                        w,
                        "{i},{},{},{},{},{}",
                        j + 1,
                        self.mean[k],
                        self.lower[k],
                        self.upper[k],
                        self.p0[k]
                    )?;
                    match &self.truth {
                        Some(t) => writeln!(w, ",{},{start}", t[k])?,
                        None => writeln!(w)?,
                    }
                }
            }
        }
        w.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub windows: usize,
    pub cells: usize,
    pub zero_threshold: f64,
    pub hit_fraction: f64,
    pub overall: MetricSet,
    /// Indexed by horizon step, starting at step 1.
    pub per_step: Vec<MetricSet>,
}

fn metric_set(p: &PredictionSet, idx: &[usize], truth: &[f64], zero_threshold: f64, hit_fraction: f64) -> MetricSet {
    let pick = |v: &[f64]| idx.iter().map(|&k| v[k]).collect::<Vec<f64>>();
    let (y, yhat) = (pick(truth), pick(&p.mean));
    let (mae, mape, rmse) = point_metrics(&y, &yhat);
    assert!(rmse + 1e-12 >= mae, "RMSE {rmse} below MAE {mae}");
    let (mpiw, picp) = interval_metrics(&y, &pick(&p.lower), &pick(&p.upper));
    let zr = zero_rate(&y, &pick(&p.p0), zero_threshold);

    // one ranking step per (window, horizon step) present in idx
    let mut steps: Vec<(usize, usize)> = idx
        .iter()
        .map(|&k| (k / (p.n_roads * p.horizon), k % p.horizon))
        .collect();
    steps.sort_unstable();
    steps.dedup();
    let (ts, ps): (Vec<Vec<f64>>, Vec<Vec<f64>>) = steps
        .iter()
        .map(|&(w, j)| {
            let cells: Vec<usize> = (0..p.n_roads).map(|i| p.index(w, i, j)).collect();
            (
                cells.iter().map(|&k| truth[k]).collect(),
                cells.iter().map(|&k| p.mean[k]).collect(),
            )
        })
        .unzip();
    let acc_hr = acc_hit_rate(&ts, &ps, hit_fraction);
    let nll = p
        .nll
        .as_ref()
        .map(|v| idx.iter().map(|&k| v[k]).sum::<f64>() / idx.len().max(1) as f64);
    MetricSet {
        mae,
        mape,
        rmse,
        mpiw,
        picp,
        zr,
        acc_hr,
        nll,
    }
}

impl MetricReport {
    /// Panics when `p` has no truth.
    pub fn compute(p: &PredictionSet, zero_threshold: f64, hit_fraction: f64) -> Self {
        let truth = p.truth.as_ref().expect("metrics need ground truth");
        let all: Vec<usize> = (0..truth.len()).collect();
        let overall = metric_set(p, &all, truth, zero_threshold, hit_fraction);
        let per_step = (0..p.horizon)
            .map(|j| metric_set(p, &p.step_indices(j), truth, zero_threshold, hit_fraction))
            .collect();
        Self {
            windows: p.window_starts.len(),
            cells: truth.len(),
            zero_threshold,
            hit_fraction,
            overall,
            per_step,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per step plus an `overall` row; undefined values are `NA`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let row = |label: String, m: &MetricSet| {
            format!(
                "{label},{},{},{},{},{},{},{},{}\n",
                m.mae,
                opt(m.mape),
                m.rmse,
                m.mpiw,
                m.picp,
                m.zr,
                opt(m.acc_hr),
                opt(m.nll)
            )
        };
        let mut out = String::from("step,mae,mape,rmse,mpiw,picp,zr,acc_hr,nll\n");
        for (j, m) in self.per_step.iter().enumerate() {
            out.push_str(&row((j + 1).to_string(), m));
        }
        out.push_str(&row("overall".into(), &self.overall));
        out
    }
}
