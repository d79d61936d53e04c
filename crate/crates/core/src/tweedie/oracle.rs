//! Independent evaluation of the Tweedie density as a finite Poisson
//! mixture of Gamma densities. Shares nothing with the series path except
//! the log-Gamma function.

use statrs::function::gamma::ln_gamma;

use super::CompoundParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    pub log_density: f64,
    /// `P(C > j_terms)` for `C ~ Poisson(lambda)`.
    pub poisson_tail: f64,
}

fn log_poisson_pmf(j: f64, lambda: f64) -> f64 {
    j * lambda.ln() - lambda - ln_gamma(j + 1.0)
}

fn log_gamma_pdf(y: f64, shape: f64, scale: f64) -> f64 {
    (shape - 1.0) * y.ln() - y / scale - ln_gamma(shape) - shape * scale.ln()
}

/// `log sum_{j=1..j_terms} Pois(j; lambda) * Gamma(y; j*shape, scale)`.
pub fn oracle_mixture_log_density(y: f64, cp: &CompoundParams, j_terms: usize) -> OracleValue {
    let logs: Vec<f64> = (1..=j_terms)
        .map(|j| {
            let j = j as f64;
            log_poisson_pmf(j, cp.lambda) + log_gamma_pdf(y, j * cp.gamma_shape, cp.gamma_scale)
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_density = if max == f64::NEG_INFINITY {
        max
    } else {
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    };

    let tail = poisson_tail(cp.lambda, j_terms);
    OracleValue {
        log_density,
        poisson_tail: tail,
    }
}

/// `P(C > j_terms)` for `C ~ Poisson(lambda)`, summed directly.
pub fn poisson_tail(lambda: f64, j_terms: usize) -> f64 {
    let mut tail = 0.0;
    let mut j = j_terms as f64 + 1.0;
    loop {
        let term = log_poisson_pmf(j, lambda).exp();
        tail += term;
        if j > lambda && (term < 1e-30 || term <= tail * 1e-18) {
            break;
        }
        j += 1.0;
    }
    tail
}

/// Smallest `j_terms` whose Poisson tail is below `tail`.
pub fn terms_for_tail(lambda: f64, tail: f64) -> usize {
    let mut j = (lambda + 10.0 * lambda.sqrt() + 10.0).ceil() as usize;
    while poisson_tail(lambda, j) >= tail {
        j += 10;
    }
    j
}

/// Term count for evaluating the mixture at `y`: at least
/// `terms_for_tail(lambda, tail)`, and extended past the largest summand
/// until later summands fall below `e^-50` of it.
pub fn terms_for_point(y: f64, cp: &CompoundParams, tail: f64) -> usize {
    let term = |j: usize| {
        let j = j as f64;
        log_poisson_pmf(j, cp.lambda) + log_gamma_pdf(y, j * cp.gamma_shape, cp.gamma_scale)
    };
    let mut best = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    let mut j = 1;
    loop {
        let t = term(j);
        best = best.max(t);
        if t < prev && t < best - 50.0 {
            break;
        }
        prev = t;
        j += 1;
    }
    j.max(terms_for_tail(cp.lambda, tail))
}
