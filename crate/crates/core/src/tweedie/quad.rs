//! Quadrature for the continuous part of a Tweedie density.

use super::{tweedie_log_density, Result, SeriesConfig, TweedieParams};

const PANELS: usize = 64;
const MAX_DEPTH: u32 = 40;

fn simpson<E>(
    f: &mut impl FnMut(f64) -> std::result::Result<f64, E>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> std::result::Result<f64, E> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)?
        + simpson(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)?)
}

/// Adaptive Simpson over `[a, b]`, split into fixed panels first.
pub(crate) fn adaptive_simpson<E>(
    f: &mut impl FnMut(f64) -> std::result::Result<f64, E>,
    a: f64,
    b: f64,
    eps: f64,
) -> std::result::Result<f64, E> {
    let width = (b - a) / PANELS as f64;
    let mut total = 0.0;
    let mut fa = f(a)?;
    for k in 0..PANELS {
        let lo = a + width * k as f64;
        let hi = if k + 1 == PANELS { b } else { lo + width };
        let fm = f(0.5 * (lo + hi))?;
        let fb = f(hi)?;
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        total += simpson(f, lo, hi, fa, fm, fb, whole, eps / PANELS as f64, MAX_DEPTH)?;
        fa = fb;
    }
    Ok(total)
}

/// `integral_0^upper f_TD(y) dy`, the continuous probability mass below
/// `upper`.
///
/// Near zero the density behaves like `y^(gamma_shape - 1)`, which is
/// singular for `rho > 1.5`. The substitution `y = upper * u^k` with
/// `k * gamma_shape >= 2` removes the singularity.
pub fn integrate_positive_part(
    td: &TweedieParams,
    upper: f64,
    cfg: &SeriesConfig,
) -> Result<f64> {
    if upper <= 0.0 || td.mu == 0.0 {
        return Ok(0.0);
    }
    let k = (2.0 / td.gamma_shape()).ceil().max(1.0);
    let mut integrand = |u: f64| -> Result<f64> {
        if u <= 0.0 {
            return Ok(0.0);
        }
        let y = upper * u.powf(k);
        if y <= 0.0 {
            return Ok(0.0);
        }
        let log_f = tweedie_log_density(y, td, cfg)?;
        let log_jac = upper.ln() + k.ln() + (k - 1.0) * u.ln();
        Ok((log_f + log_jac).exp())
    };
    adaptive_simpson(&mut integrand, 0.0, 1.0, 1e-11)
}
