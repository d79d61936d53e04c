//! Tweedie and zero-inflated Tweedie distributions for `1 < rho < 2`.
//!
//! In this range a Tweedie variable is a compound Poisson–Gamma sum: a
//! Poisson(`lambda`) number of Gamma(`gamma_shape`, `gamma_scale`) severities.
//! The zero-inflated variant adds an extra point mass `pi` at zero.
//!
//! Two exponents appear in the literature with opposite signs. This module
//! calls the positive one `gamma_shape = (2 - rho) / (rho - 1)` and the
//! negative one `series_exponent = (2 - rho) / (1 - rho)`.

mod interval;
mod oracle;
mod quad;
mod sample;
mod series;

pub use interval::{zitd_cdf, zitd_interval, IntervalMethod};
pub use oracle::{oracle_mixture_log_density, poisson_tail, terms_for_point, terms_for_tail, OracleValue};
pub use quad::integrate_positive_part;
pub use sample::{sample_zitd, sample_zitd_one};
pub use series::{log_series_sum, tweedie_log_density};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower clamp for the index parameter.
pub const RHO_MIN: f64 = 1.0 + 1e-9;
/// Upper clamp for the index parameter.
pub const RHO_MAX: f64 = 2.0 - 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error(
        "series did not converge within {max_terms} terms at y={y}, mu={mu}, phi={phi}, rho={rho}"
    )]
    NoConvergence {
        y: f64,
        mu: f64,
        phi: f64,
        rho: f64,
        max_terms: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("quantiles must satisfy 0 < lower < upper < 1, got ({lower}, {upper})")]
    InvalidQuantiles { lower: f64, upper: f64 },
}

pub type Result<T> = std::result::Result<T, DistError>;

/// Clamps an index parameter into the open interval the series supports.
pub fn clamp_rho(rho: f64) -> f64 {
    let clamped = rho.clamp(RHO_MIN, RHO_MAX);
    if clamped != rho {
        log::debug!("rho {rho} clamped to {clamped}");
    }
    clamped
}

/// Mean `mu >= 0`, dispersion `phi > 0`, index `rho` in (1, 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TweedieParams {
    pub mu: f64,
    pub phi: f64,
    pub rho: f64,
}

impl TweedieParams {
    /// Validates ranges and clamps `rho` to `[RHO_MIN, RHO_MAX]`. Values of
    /// `rho` outside `[1, 2.01]` are rejected rather than clamped.
    pub fn new(mu: f64, phi: f64, rho: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(DistError::InvalidParams(format!("mu must be >= 0, got {mu}")));
        }
        if !(phi.is_finite() && phi > 0.0) {
            return Err(DistError::InvalidParams(format!("phi must be > 0, got {phi}")));
        }
        if !(rho.is_finite() && (1.0..=2.01).contains(&rho)) {
            return Err(DistError::InvalidParams(format!("rho must be in (1, 2), got {rho}")));
        }
        Ok(Self {
            mu,
            phi,
            rho: clamp_rho(rho),
        })
    }

    /// Poisson rate of the compound representation, also `-log P(Y = 0)`.
    pub fn lambda(&self) -> f64 {
        self.mu.powf(2.0 - self.rho) / (self.phi * (2.0 - self.rho))
    }

    pub fn gamma_shape(&self) -> f64 {
        (2.0 - self.rho) / (self.rho - 1.0)
    }

    pub fn series_exponent(&self) -> f64 {
        (2.0 - self.rho) / (1.0 - self.rho)
    }

    /// Natural parameter `mu^(1-rho) / (1-rho)`.
    pub fn theta(&self) -> f64 {
        self.mu.powf(1.0 - self.rho) / (1.0 - self.rho)
    }

    /// Cumulant `mu^(2-rho) / (2-rho)`.
    pub fn kappa(&self) -> f64 {
        self.mu.powf(2.0 - self.rho) / (2.0 - self.rho)
    }

    pub fn variance(&self) -> f64 {
        self.phi * self.mu.powf(self.rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZitdParams {
    pub pi: f64,
    pub td: TweedieParams,
}

impl ZitdParams {
    pub fn new(pi: f64, mu: f64, phi: f64, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi) {
            return Err(DistError::InvalidParams(format!("pi must be in [0, 1], got {pi}")));
        }
        Ok(Self {
            pi,
            td: TweedieParams::new(mu, phi, rho)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundParams {
    pub lambda: f64,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeriesConfig {
    pub relative_term_tolerance: f64,
    pub max_terms: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            relative_term_tolerance: 1e-12,
            max_terms: 10_000,
        }
    }
}

pub fn compound_params(td: &TweedieParams) -> CompoundParams {
    CompoundParams {
        lambda: td.lambda(),
        gamma_shape: td.gamma_shape(),
        gamma_scale: td.phi * (td.rho - 1.0) * td.mu.powf(td.rho - 1.0),
    }
}

/// `log(a + b)` from `log a` and `log b`, tolerant of `-inf` inputs.
pub(crate) fn log_add_exp(la: f64, lb: f64) -> f64 {
    let hi = la.max(lb);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + ((la - hi).exp() + (lb - hi).exp()).ln()
}

/// Log-density (for `y > 0`) or log-probability of zero (for `y = 0`).
///
/// With `pi = 1` and `y > 0` the probability is zero and negative infinity
/// is returned.
pub fn zitd_log_density(y: f64, z: &ZitdParams, cfg: &SeriesConfig) -> Result<f64> {
    if !(y.is_finite() && y >= 0.0) {
        return Err(DistError::InvalidParams(format!("y must be >= 0, got {y}")));
    }
    if y == 0.0 {
        return Ok(log_zero_mass(z));
    }
    if z.pi >= 1.0 {
        log::debug!("zero-probability observation y={y} under pi=1");
        return Ok(f64::NEG_INFINITY);
    }
    Ok((-z.pi).ln_1p() + tweedie_log_density(y, &z.td, cfg)?)
}

fn log_zero_mass(z: &ZitdParams) -> f64 {
    log_add_exp(z.pi.ln(), (-z.pi).ln_1p() - z.td.lambda())
}

/// `P(Y = 0) = pi + (1 - pi) exp(-lambda)`.
pub fn zitd_zero_mass(z: &ZitdParams) -> f64 {
    z.pi + (1.0 - z.pi) * (-z.td.lambda()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    /// Variance of the Tweedie component, `phi * mu^rho`.
    pub tweedie_variance: f64,
}

pub fn zitd_moments(z: &ZitdParams) -> Moments {
    Moments {
        mean: (1.0 - z.pi) * z.td.mu,
        tweedie_variance: z.td.variance(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn td(mu: f64, phi: f64, rho: f64) -> TweedieParams {
        TweedieParams::new(mu, phi, rho).unwrap()
    }

    #[test]
    fn compound_params_hand_values() {
        let c = compound_params(&td(1.0, 1.0, 1.5));
        assert_abs_diff_eq!(c.lambda, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.gamma_shape, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.gamma_scale, 0.5, epsilon = 1e-12);

        let c = compound_params(&td(1.0, 1.0, 1.9));
        assert_abs_diff_eq!(c.lambda, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.gamma_shape, 1.0 / 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.gamma_scale, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn zero_mass_anchors() {
        let base = td(1.0, 1.0, 1.5);
        assert_eq!(zitd_zero_mass(&ZitdParams { pi: 1.0, td: base }), 1.0);
        assert_abs_diff_eq!(
            zitd_zero_mass(&ZitdParams { pi: 0.0, td: base }),
            0.135_335_283_236_612_7,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            zitd_zero_mass(&ZitdParams { pi: 0.5, td: base }),
            0.567_667_641_618_306_3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zitd_log_density_at_zero() {
        let cfg = SeriesConfig::default();
        let base = td(1.0, 1.0, 1.5);
        assert_eq!(
            zitd_log_density(0.0, &ZitdParams { pi: 1.0, td: base }, &cfg).unwrap(),
            0.0
        );
        let v = zitd_log_density(0.0, &ZitdParams { pi: 0.5, td: base }, &cfg).unwrap();
        // ln(0.5 + 0.5 e^-2)
        assert_abs_diff_eq!(v, -0.566_219_169_516_972_7, epsilon = 1e-12);
    }

    #[test]
    fn pi_one_positive_y_is_neg_infinity() {
        let z = ZitdParams { pi: 1.0, td: td(1.0, 1.0, 1.5) };
        let v = zitd_log_density(2.0, &z, &SeriesConfig::default()).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
    }

    #[test]
    fn pi_zero_collapses_to_tweedie() {
        let cfg = SeriesConfig::default();
        let t = td(1.3, 0.7, 1.4);
        let a = zitd_log_density(0.8, &ZitdParams { pi: 0.0, td: t }, &cfg).unwrap();
        let b = tweedie_log_density(0.8, &t, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn moments() {
        let t = td(1.0, 1.0, 1.5);
        assert_eq!(zitd_moments(&ZitdParams { pi: 0.0, td: t }).mean, 1.0);
        assert_eq!(zitd_moments(&ZitdParams { pi: 1.0, td: t }).mean, 0.0);
        assert_abs_diff_eq!(
            zitd_moments(&ZitdParams { pi: 0.0, td: t }).tweedie_variance,
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rho_is_clamped_and_validated() {
        assert_eq!(td(1.0, 1.0, 2.0).rho, RHO_MAX);
        assert_eq!(td(1.0, 1.0, 1.0).rho, RHO_MIN);
        assert!(TweedieParams::new(1.0, 1.0, 2.5).is_err());
        assert!(TweedieParams::new(1.0, 0.0, 1.5).is_err());
        assert!(TweedieParams::new(-1.0, 1.0, 1.5).is_err());
        assert!(ZitdParams::new(1.2, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn near_poisson_limit_is_consistent() {
        // As rho -> 1 with phi = 1 the zero mass is exp(-mu^(2-rho)/(2-rho)).
        let t = td(1.7, 1.0, 1.01);
        let expected = (-(1.7f64.powf(0.99)) / 0.99).exp();
        assert_abs_diff_eq!(
            zitd_zero_mass(&ZitdParams { pi: 0.0, td: t }),
            expected,
            epsilon = 1e-14
        );
    }

    proptest! {
        #[test]
        fn compound_map_recovers_mean(mu in 1e-3f64..50.0, phi in 1e-2f64..10.0, rho in 1.01f64..1.99) {
            let c = compound_params(&td(mu, phi, rho));
            let product = c.lambda * c.gamma_shape * c.gamma_scale;
            prop_assert!((product - mu).abs() <= 1e-12 * mu.max(1.0));
        }

        #[test]
        fn zero_mass_strictly_increasing_in_pi(
            a in 0.0f64..1.0, b in 0.0f64..1.0,
            mu in 0.1f64..5.0, phi in 0.1f64..5.0, rho in 1.05f64..1.95,
        ) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let t = td(mu, phi, rho);
            let p_lo = zitd_zero_mass(&ZitdParams { pi: lo, td: t });
            let p_hi = zitd_zero_mass(&ZitdParams { pi: hi, td: t });
            prop_assert!(p_hi > p_lo);
            prop_assert!(p_lo >= (-t.lambda()).exp() * (1.0 - lo) + lo - 1e-15);
            prop_assert!(p_hi <= 1.0);
        }
    }
}
