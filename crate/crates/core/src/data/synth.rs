use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, FeatureTensor, Result, RiskTensor, RoadGraph};
use crate::tensor::sigmoid;
use crate::tweedie::{sample_zitd_one, zitd_zero_mass, ZitdParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Every cell shares `(pi, mu, phi, rho)`.
    Uniform,
    /// Zero inflation and mean vary by road attribute and day of week;
    /// the intercept is tuned to hit `target_zero_fraction`.
    Heterogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_roads: usize,
    pub n_slots: usize,
    pub feature_dim: usize,
    /// Probability of each non-chain road pair being linked.
    pub extra_edge_prob: f64,
    pub schedule: Schedule,
    pub pi: f64,
    pub target_zero_fraction: f64,
    pub mu: f64,
    pub phi: f64,
    pub rho: f64,
    /// Logit slope of zero inflation on the road attribute.
    pub road_spread: f64,
    /// Logit amplitude of the weekly cycle.
    pub weekly_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_roads: 30,
            n_slots: 90,
            feature_dim: 4,
            extra_edge_prob: 0.05,
            schedule: Schedule::Heterogeneous,
            pi: 0.96,
            target_zero_fraction: 0.96,
            mu: 1.0,
            phi: 1.0,
            rho: 1.5,
            road_spread: 1.5,
            weekly_amplitude: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let bad = |m: &str| Err(m.to_string());
        if self.n_roads == 0 || self.n_slots == 0 {
            return bad("synth: n_roads and n_slots must be positive");
        }
        if self.feature_dim < 3 {
            return bad("synth: feature_dim must be at least 3");
        }
        if !(0.0..=1.0).contains(&self.extra_edge_prob) || !(0.0..=1.0).contains(&self.pi) {
            return bad("synth: probabilities must lie in [0, 1]");
        }
        if !(self.target_zero_fraction > 0.0 && self.target_zero_fraction < 1.0) {
            return bad("synth: target_zero_fraction must lie in (0, 1)");
        }
        if let Err(e) = ZitdParams::new(self.pi, self.mu, self.phi, self.rho) {
            return Err(format!("synth: {e}"));
        }
        Ok(())
    }
}

/// Ground-truth parameters for every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParams {
    pub n_roads: usize,
    pub n_slots: usize,
    cells: Vec<ZitdParams>,
}

impl TrueParams {
    pub fn get(&self, road: usize, slot: usize) -> &ZitdParams {
        &self.cells[road * self.n_slots + slot]
    }

    pub fn mean_zero_mass(&self) -> f64 {
        self.cells.iter().map(zitd_zero_mass).sum::<f64>() / self.cells.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub truth: TrueParams,
    pub empirical_zero_fraction: f64,
}

fn weekly(slot: usize) -> f64 {
    (2.0 * PI * slot as f64 / 7.0).sin()
}

pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    cfg.validate().map_err(DataError::Shape)?;
    let (n, t, d) = (cfg.n_roads, cfg.n_slots, cfg.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // The chain visits roads in shuffled order so road labels carry no risk.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect();
    let chained: std::collections::HashSet<_> = edges.iter().copied().collect();
    for i in 0..n {
        for j in i + 1..n {
            if !chained.contains(&(i, j)) && rng.random::<f64>() < cfg.extra_edge_prob {
                edges.push((i, j));
            }
        }
    }
    let graph = RoadGraph::build(n, &edges)?;

    // Spatially smooth attribute along the chain plus noise, standardised.
    let phase = rng.random::<f64>() * 2.0 * PI;
    let mut attr = vec![0.0; n];
    for (k, &road) in order.iter().enumerate() {
        let noise: f64 = rng.sample(StandardNormal);
        attr[road] = (2.0 * PI * k as f64 / n as f64 + phase).sin() + 0.5 * noise;
    }
    let mean = attr.iter().sum::<f64>() / n as f64;
    let sd = (attr.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    for a in &mut attr {
        *a = if sd > 0.0 { (*a - mean) / sd } else { 0.0 };
    }

    let mut values = Vec::with_capacity(n * t * d);
    for &a in &attr {
        for s in 0..t {
            values.push(a);
            for k in 1..d - 2 {
                values.push(((k + 1) as f64 * a).sin());
            }
            values.push(weekly(s));
            values.push((2.0 * PI * s as f64 / 7.0).cos());
        }
    }
    let features = FeatureTensor::from_values(n, t, d, values)?;

    let truth = match cfg.schedule {
        Schedule::Uniform => {
            let z = ZitdParams::new(cfg.pi, cfg.mu, cfg.phi, cfg.rho)
                .map_err(|e| DataError::Shape(e.to_string()))?;
            TrueParams {
                n_roads: n,
                n_slots: t,
                cells: vec![z; n * t],
            }
        }
        Schedule::Heterogeneous => heterogeneous_truth(cfg, &attr)?,
    };

    let mut y = Vec::with_capacity(n * t);
    for i in 0..n {
        for s in 0..t {
            y.push(sample_zitd_one(truth.get(i, s), &mut rng));
        }
    }
    let risk = RiskTensor::from_values(n, t, y)?;
    let empirical_zero_fraction = risk.zero_fraction();
    log::info!(
        "synthetic data: {n} roads, {t} slots, {} edges, zero fraction {empirical_zero_fraction:.4} (expected {:.4})",
        graph.edges().len(),
        truth.mean_zero_mass()
    );
    Ok(SynthOutput {
        dataset: Dataset::new(graph, features, risk)?,
        truth,
        empirical_zero_fraction,
    })
}

fn heterogeneous_truth(cfg: &SynthConfig, attr: &[f64]) -> Result<TrueParams> {
    let (n, t) = (cfg.n_roads, cfg.n_slots);
    let build = |intercept: f64| -> Result<TrueParams> {
        let mut cells = Vec::with_capacity(n * t);
        for &a in attr {
            let mu = cfg.mu * (0.3 * a).exp();
            for s in 0..t {
                let logit = intercept - cfg.road_spread * a - cfg.weekly_amplitude * weekly(s);
                cells.push(
                    ZitdParams::new(sigmoid(logit), mu, cfg.phi, cfg.rho)
                        .map_err(|e| DataError::Shape(e.to_string()))?,
                );
            }
        }
        Ok(TrueParams {
            n_roads: n,
            n_slots: t,
            cells,
        })
    };
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if build(mid)?.mean_zero_mass() < cfg.target_zero_fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let truth = build(0.5 * (lo + hi))?;
    if (truth.mean_zero_mass() - cfg.target_zero_fraction).abs() > 1e-6 {
        log::warn!(
            "zero fraction {} unreachable; closest is {:.6}",
            cfg.target_zero_fraction,
            truth.mean_zero_mass()
        );
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_zero_fraction_matches_zero_mass() {
        let cfg = SynthConfig {
            schedule: Schedule::Uniform,
            ..SynthConfig::default()
        };
        let out = synth_generate(&cfg, 7).unwrap();
        let p0 = out.truth.mean_zero_mass();
        let expected = 0.96 + 0.04 * (-2.0f64).exp();
        assert!((p0 - expected).abs() < 1e-12);
        let cells = (cfg.n_roads * cfg.n_slots) as f64;
        let sigma = (p0 * (1.0 - p0) / cells).sqrt();
        assert!((out.empirical_zero_fraction - p0).abs() < 3.0 * sigma);
    }

    #[test]
    fn heterogeneous_hits_target_on_average() {
        let out = synth_generate(&SynthConfig::default(), 3).unwrap();
        assert!((out.truth.mean_zero_mass() - 0.96).abs() < 1e-6);
        let sigma = (0.96f64 * 0.04 / 2700.0).sqrt();
        assert!((out.empirical_zero_fraction - 0.96).abs() < 4.0 * sigma);
        assert!((0.94..0.98).contains(&out.empirical_zero_fraction));
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig::default();
        let a = synth_generate(&cfg, 11).unwrap();
        let b = synth_generate(&cfg, 11).unwrap();
        assert_eq!(a.dataset.risk, b.dataset.risk);
        assert_eq!(a.dataset.features, b.dataset.features);
        assert_eq!(a.dataset.graph, b.dataset.graph);
        let c = synth_generate(&cfg, 12).unwrap();
        assert_ne!(a.dataset.risk, c.dataset.risk);
    }

    #[test]
    fn certain_inflation_gives_all_zero_risk() {
        let cfg = SynthConfig {
            schedule: Schedule::Uniform,
            pi: 1.0,
            ..SynthConfig::default()
        };
        let out = synth_generate(&cfg, 1).unwrap();
        assert!(out.dataset.risk.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SynthConfig {
            feature_dim: 2,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg, 1).is_err());
    }
}
