use super::{
    integrate_positive_part, sample_zitd, zitd_zero_mass, DistError, Result, SeriesConfig,
    ZitdParams,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalMethod {
    /// Order statistics of `samples` seeded draws.
    MonteCarlo { samples: usize, seed: u64 },
    /// Bisection on the numerically integrated CDF.
    CdfBisection,
}

/// `P(Y <= v)` with the continuous part integrated numerically.
pub fn zitd_cdf(v: f64, z: &ZitdParams, cfg: &SeriesConfig) -> Result<f64> {
    if v < 0.0 {
        return Ok(0.0);
    }
    let p0 = zitd_zero_mass(z);
    Ok(p0 + (1.0 - z.pi) * integrate_positive_part(&z.td, v, cfg)?)
}

/// Lower and upper quantiles `(L, U)`. A quantile at `q` is the smallest
/// `v` with `CDF(v) >= q`, so any `q` at or below the zero mass maps to 0.
pub fn zitd_interval(
    z: &ZitdParams,
    lower_q: f64,
    upper_q: f64,
    method: IntervalMethod,
    cfg: &SeriesConfig,
) -> Result<(f64, f64)> {
    if !(lower_q > 0.0 && lower_q < upper_q && upper_q < 1.0) {
        return Err(DistError::InvalidQuantiles {
            lower: lower_q,
            upper: upper_q,
        });
    }
    let p0 = zitd_zero_mass(z);
    if p0 >= upper_q {
        return Ok((0.0, 0.0));
    }
    match method {
        IntervalMethod::MonteCarlo { samples, seed } => {
            let mut draws = sample_zitd(z, samples.max(1), seed);
            draws.sort_by(f64::total_cmp);
            let pick = |q: f64| {
                if p0 >= q {
                    return 0.0;
                }
                let idx = ((q * draws.len() as f64).ceil() as usize).clamp(1, draws.len()) - 1;
                draws[idx]
            };
            Ok((pick(lower_q), pick(upper_q)))
        }
        IntervalMethod::CdfBisection => {
            let lower = bisect_quantile(z, p0, lower_q, cfg)?;
            let upper = bisect_quantile(z, p0, upper_q, cfg)?;
            Ok((lower, upper.max(lower)))
        }
    }
}

fn bisect_quantile(z: &ZitdParams, p0: f64, q: f64, cfg: &SeriesConfig) -> Result<f64> {
    if p0 >= q {
        return Ok(0.0);
    }
    let mut hi = z.td.mu.max(1e-3);
    let mut guard = 0;
    while zitd_cdf(hi, z, cfg)? < q {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(DistError::InvalidParams(format!(
                "quantile {q} not bracketed for {z:?}"
            )));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * hi.max(1e-12) {
        let mid = 0.5 * (lo + hi);
        if zitd_cdf(mid, z, cfg)? >= q {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
