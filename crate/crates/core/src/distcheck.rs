//! Numerical self-checks of the distribution code: series against the
//! Poisson-Gamma mixture, normalisation, and Monte Carlo moments.

use serde::Serialize;

use crate::tweedie::{
    compound_params, integrate_positive_part, oracle_mixture_log_density, sample_zitd,
    terms_for_point, tweedie_log_density, zitd_moments, zitd_zero_mass, DistError, SeriesConfig,
    TweedieParams, ZitdParams,
};

pub const SWEEP_Y: [f64; 12] = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 7.5, 10.0];
pub const SWEEP_MU_PHI: [f64; 3] = [0.5, 1.0, 2.0];
pub const SWEEP_RHO: [f64; 3] = [1.2, 1.5, 1.8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepResult {
    pub points: usize,
    pub max_gap: f64,
    /// `(y, mu, phi, rho)` of the largest gap.
    pub worst: (f64, f64, f64, f64),
}

/// Largest `|series - mixture|` in log-density over the sweep grid.
pub fn oracle_sweep(cfg: &SeriesConfig) -> Result<SweepResult, DistError> {
    let mut out = SweepResult {
        points: 0,
        max_gap: 0.0,
        worst: (0.0, 0.0, 0.0, 0.0),
    };
    for &y in &SWEEP_Y {
        for &mu in &SWEEP_MU_PHI {
            for &phi in &SWEEP_MU_PHI {
                for &rho in &SWEEP_RHO {
                    let td = TweedieParams::new(mu, phi, rho)?;
                    let cp = compound_params(&td);
                    let oracle = oracle_mixture_log_density(y, &cp, terms_for_point(y, &cp, 1e-15));
                    let series = tweedie_log_density(y, &td, cfg)?;
                    let gap = (series - oracle.log_density).abs();
                    out.points += 1;
                    if gap > out.max_gap || gap.is_nan() {
                        out.max_gap = gap;
                        out.worst = (y, mu, phi, rho);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Twelve settings: two inflation levels over six Tweedie components.
pub fn normalization_settings() -> Vec<ZitdParams> {
    let tds = [
        (1.0, 1.0, 1.5),
        (0.5, 2.0, 1.2),
        (2.0, 0.5, 1.8),
        (1.0, 0.5, 1.3),
        (0.3, 1.0, 1.7),
        (3.0, 2.0, 1.5),
    ];
    [0.0, 0.4]
        .iter()
        .flat_map(|&pi| tds.iter().map(move |&(m, f, r)| ZitdParams::new(pi, m, f, r).expect("valid")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizationResult {
    pub params: ZitdParams,
    /// Upper integration limit: the `1 - 1e-6` sample quantile.
    pub upper: f64,
    pub total_mass: f64,
}

/// Zero mass plus the integrated continuous part up to a Monte Carlo
/// `1 - 1e-6` quantile.
pub fn normalization(
    z: &ZitdParams,
    samples: usize,
    seed: u64,
    cfg: &SeriesConfig,
) -> Result<NormalizationResult, DistError> {
    let mut draws = sample_zitd(z, samples, seed);
    draws.sort_by(f64::total_cmp);
    let idx = (((1.0 - 1e-6) * samples as f64).ceil() as usize).clamp(1, samples) - 1;
    let upper = draws[idx];
    let continuous = if upper > 0.0 {
        integrate_positive_part(&z.td, upper, cfg)?
    } else {
        0.0
    };
    Ok(NormalizationResult {
        params: *z,
        upper,
        total_mass: zitd_zero_mass(z) + (1.0 - z.pi) * continuous,
    })
}

pub fn moment_settings() -> Vec<ZitdParams> {
    [
        (0.3, 1.0, 1.0, 1.5),
        (0.0, 1.0, 1.0, 1.5),
        (0.0, 2.0, 0.5, 1.3),
        (0.0, 0.5, 1.0, 1.6),
    ]
    .iter()
    .map(|&(p, m, f, r)| ZitdParams::new(p, m, f, r).expect("valid"))
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentResult {
    pub params: ZitdParams,
    pub samples: usize,
    pub zero_fraction: f64,
    pub zero_mass: f64,
    /// Binomial standard deviation of the zero fraction.
    pub zero_sigma: f64,
    pub mean: f64,
    pub expected_mean: f64,
    pub variance: f64,
    pub expected_variance: f64,
}

impl MomentResult {
    pub fn zero_ok(&self) -> bool {
        (self.zero_fraction - self.zero_mass).abs() <= 3.0 * self.zero_sigma
    }

    pub fn mean_ok(&self) -> bool {
        (self.mean - self.expected_mean).abs() <= 0.01 * self.expected_mean
    }

    /// Only checked without inflation.
    pub fn variance_ok(&self) -> bool {
        self.params.pi != 0.0 || (self.variance - self.expected_variance).abs() <= 0.03 * self.expected_variance
    }

    pub fn passed(&self) -> bool {
        self.zero_ok() && self.mean_ok() && self.variance_ok()
    }
}

pub fn moments(z: &ZitdParams, samples: usize, seed: u64) -> MomentResult {
    let draws = sample_zitd(z, samples, seed);
    let n = samples as f64;
    let zero_fraction = draws.iter().filter(|&&v| v == 0.0).count() as f64 / n;
    let mean = draws.iter().sum::<f64>() / n;
    let variance = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let p0 = zitd_zero_mass(z);
    let m = zitd_moments(z);
    MomentResult {
        params: *z,
        samples,
        zero_fraction,
        zero_mass: p0,
        zero_sigma: (p0 * (1.0 - p0) / n).sqrt(),
        mean,
        expected_mean: m.mean,
        variance,
        expected_variance: m.tweedie_variance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// All three checks with their pass/fail verdicts.
pub fn run_all(cfg: &SeriesConfig, seed: u64) -> Result<Vec<CheckLine>, DistError> {
    let mut lines = Vec::new();
    let sweep = oracle_sweep(cfg)?;
    lines.push(CheckLine {
        name: "series-oracle".into(),
        passed: sweep.max_gap < 1e-6,
        detail: format!(
            "max gap {:.3e} over {} points (worst at {:?})",
            sweep.max_gap, sweep.points, sweep.worst
        ),
    });
    for (k, z) in normalization_settings().iter().enumerate() {
        let r = normalization(z, 1_000_000, seed.wrapping_add(k as u64), cfg)?;
        lines.push(CheckLine {
            name: format!("normalization[{k}]"),
            passed: (r.total_mass - 1.0).abs() <= 1e-3,
            detail: format!(
                "pi={} mu={} phi={} rho={}: mass {:.8} up to {:.4}",
                z.pi, z.td.mu, z.td.phi, z.td.rho, r.total_mass, r.upper
            ),
        });
    }
    for (k, z) in moment_settings().iter().enumerate() {
        let r = moments(z, 100_000, seed.wrapping_add(100 + k as u64));
        lines.push(CheckLine {
            name: format!("moments[{k}]"),
            passed: r.passed(),
            detail: format!(
                "pi={} mu={} phi={} rho={}: zeros {:.5} vs {:.5} (3 sd {:.5}), mean {:.5} vs {:.5}, variance {:.5} vs {:.5}",
                z.pi, z.td.mu, z.td.phi, z.td.rho, r.zero_fraction, r.zero_mass, 3.0 * r.zero_sigma,
                r.mean, r.expected_mean, r.variance, r.expected_variance
            ),
        });
    }
    Ok(lines)
}
