use statrs::function::gamma::ln_gamma;

use super::{DistError, Result, SeriesConfig, TweedieParams};

/// Log of the infinite sum inside the Tweedie normalizer `a(y, phi, rho)`
/// (without the leading `1/y`), with the number of terms visited.
///
/// The summand is log-concave in `j`, so summation starts at the largest
/// term and walks outward in both directions until terms drop below
/// `relative_term_tolerance` times that maximum.
pub fn log_series_sum(y: f64, phi: f64, rho: f64, cfg: &SeriesConfig) -> Result<(f64, usize)> {
    let gamma_shape = (2.0 - rho) / (rho - 1.0);
    let exponent = -gamma_shape;
    let log_z = -exponent * y.ln() + exponent * (rho - 1.0).ln()
        - (1.0 - exponent) * phi.ln()
        - (2.0 - rho).ln();
    let log_term = |j: f64| j * log_z - ln_gamma(j + 1.0) - ln_gamma(j * gamma_shape);

    let fail = || DistError::NoConvergence {
        y,
        mu: f64::NAN,
        phi,
        rho,
        max_terms: cfg.max_terms,
    };

    let j_peak = y.powf(2.0 - rho) / ((2.0 - rho) * phi);
    let mut j0 = if j_peak.is_finite() {
        j_peak.round().max(1.0)
    } else {
        return Err(fail());
    };
    let mut visited = 0usize;
    // Refine the peak location; the closed form is only asymptotically exact.
    let mut best = log_term(j0);
    loop {
        visited += 1;
        if visited > cfg.max_terms {
            return Err(fail());
        }
        let up = log_term(j0 + 1.0);
        if up > best {
            j0 += 1.0;
            best = up;
            continue;
        }
        if j0 > 1.0 {
            let down = log_term(j0 - 1.0);
            if down > best {
                j0 -= 1.0;
                best = down;
                continue;
            }
        }
        break;
    }
    if !best.is_finite() {
        return Err(fail());
    }

    let cutoff = cfg.relative_term_tolerance.ln();
    let mut total = 1.0;
    let mut terms = 1usize;

    let mut j = j0 + 1.0;
    loop {
        let rel = log_term(j) - best;
        if rel < cutoff {
            break;
        }
        total += rel.exp();
        terms += 1;
        if terms > cfg.max_terms {
            return Err(fail());
        }
        j += 1.0;
    }
    let mut j = j0 - 1.0;
    while j >= 1.0 {
        let rel = log_term(j) - best;
        if rel < cutoff {
            break;
        }
        total += rel.exp();
        terms += 1;
        if terms > cfg.max_terms {
            return Err(fail());
        }
        j -= 1.0;
    }
    Ok((best + total.ln(), terms))
}

/// Log-density of the Tweedie distribution at `y > 0`, or the log
/// probability of an exact zero (`-lambda`) at `y = 0`.
pub fn tweedie_log_density(y: f64, td: &TweedieParams, cfg: &SeriesConfig) -> Result<f64> {
    if !(y.is_finite() && y >= 0.0) {
        return Err(DistError::InvalidParams(format!("y must be >= 0, got {y}")));
    }
    if y == 0.0 {
        return Ok(-td.lambda());
    }
    if td.mu == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let (log_sum, _) = log_series_sum(y, td.phi, td.rho, cfg).map_err(|e| match e {
        DistError::NoConvergence { max_terms, .. } => DistError::NoConvergence {
            y,
            mu: td.mu,
            phi: td.phi,
            rho: td.rho,
            max_terms,
        },
        other => other,
    })?;
    let exp_part = (y * td.theta() - td.kappa()) / td.phi;
    Ok(log_sum - y.ln() + exp_part)
}
