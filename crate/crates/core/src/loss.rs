//! Training objective: exact log-probability for zero cells, the
//! saddle-point lower bound of the log-density for positive cells, and an
//! optional L2 penalty.

use serde::{Deserialize, Serialize};

use crate::decoder::{DecodedVars, ParamField};
use crate::tensor::{ParamStore, Result, Tape, Tensor, TensorError, Var};
use crate::tweedie::{clamp_rho, ZitdParams, RHO_MAX, RHO_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// L2 weight on every parameter.
    pub eta: f64,
    /// Use `-(ln pi + ln(1 - pi) - lambda)` for zero cells instead of the
    /// exact `-ln(pi + (1 - pi) e^-lambda)`.
    pub paper_literal_zero_branch: bool,
    /// Lower bound applied to `mu` inside the loss.
    pub mu_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eta: 0.0,
            paper_literal_zero_branch: false,
            mu_floor: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err("loss: eta must be >= 0".into());
        }
        if !(self.mu_floor > 0.0 && self.mu_floor.is_finite()) {
            return Err("loss: mu_floor must be > 0".into());
        }
        Ok(())
    }
}

/// NLL of one cell and its partials with respect to `(pi, mu, phi, rho)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLoss {
    pub value: f64,
    pub grad: [f64; 4],
}

/// Negated lower bound of the positive-branch log-likelihood:
/// `ln(1-pi) + A/phi - ln(j sqrt(-a) y) + j (a - 1)` with
/// `A = y mu^(1-rho)/(1-rho) - mu^(2-rho)/(2-rho)`,
/// `j = y^(2-rho) / ((2-rho) phi)` and `a = (2-rho)/(1-rho)`.
fn positive_bound(y: f64, pi: f64, mu: f64, phi: f64, rho: f64) -> CellLoss {
    let (one_m, two_m) = (1.0 - rho, 2.0 - rho);
    let (ln_y, ln_mu) = (y.ln(), mu.ln());
    let u = mu.powf(one_m);
    let v = mu.powf(two_m);
    let a_term = y * u / one_m - v / two_m;
    let j = y.powf(two_m) / (two_m * phi);
    let neg_a = two_m / (rho - 1.0);
    let ln_j = two_m * ln_y - two_m.ln() - phi.ln();
    let ll = (-pi).ln_1p() + a_term / phi - (ln_j + 0.5 * neg_a.ln() + ln_y) + j / one_m;

    let d_pi = -1.0 / (1.0 - pi);
    let d_mu = (y * u / mu - u) / phi;
    let d_phi = -a_term / (phi * phi) + 1.0 / phi - j / (phi * one_m);
    let d_a = y * u * (-ln_mu / one_m + 1.0 / (one_m * one_m)) - (-v * ln_mu / two_m + v / (two_m * two_m));
    let d_lnj = -ln_y + 1.0 / two_m;
    let d_rho = d_a / phi - d_lnj - 0.5 * (-1.0 / two_m - 1.0 / (rho - 1.0))
        + j * d_lnj / one_m
        + j / (one_m * one_m);
    CellLoss {
        value: -ll,
        grad: [-d_pi, -d_mu, -d_phi, -d_rho],
    }
}

fn lambda_and_partials(mu: f64, phi: f64, rho: f64) -> (f64, [f64; 3]) {
    let two_m = 2.0 - rho;
    let lambda = mu.powf(two_m) / (phi * two_m);
    (
        lambda,
        [
            mu.powf(1.0 - rho) / phi,
            -lambda / phi,
            lambda * (-mu.ln() + 1.0 / two_m),
        ],
    )
}

fn zero_branch(pi: f64, mu: f64, phi: f64, rho: f64, literal: bool) -> CellLoss {
    let (lambda, dl) = lambda_and_partials(mu, phi, rho);
    let (value, d_pi, d_lambda) = if literal {
        (
            -(pi.ln() + (-pi).ln_1p() - lambda),
            -1.0 / pi + 1.0 / (1.0 - pi),
            1.0,
        )
    } else {
        let ln_rest = (-pi).ln_1p() - lambda;
        let ln_p = crate::tweedie::log_add_exp(pi.ln(), ln_rest);
        let inv_p = (-ln_p).exp();
        (
            -ln_p,
            (-lambda).exp_m1() * inv_p,
            (ln_rest - ln_p).exp(),
        )
    };
    CellLoss {
        value,
        grad: [d_pi, d_lambda * dl[0], d_lambda * dl[1], d_lambda * dl[2]],
    }
}

/// Positive-cell loss on raw parameters. No floor is applied to `mu`.
pub fn nll_positive_lower_bound(y: f64, z: &ZitdParams) -> f64 {
    if z.pi >= 1.0 {
        log::warn!("positive target {y} under pi = 1: infinite loss");
        return f64::INFINITY;
    }
    positive_bound(y, z.pi, z.td.mu, z.td.phi, z.td.rho).value
}

/// Zero-cell loss.
pub fn nll_zero(z: &ZitdParams, cfg: &LossConfig) -> f64 {
    let v = zero_branch(z.pi, z.td.mu, z.td.phi, z.td.rho, cfg.paper_literal_zero_branch).value;
    if !v.is_finite() {
        log::warn!("zero-cell loss is infinite at pi = {}", z.pi);
    }
    v
}

/// Loss for one cell from decoder outputs. `mu` is floored and `rho`
/// clamped first; the partial through an active floor or clamp is 0.
pub fn cell_nll(y: f64, pi: f64, mu: f64, phi: f64, rho: f64, cfg: &LossConfig) -> CellLoss {
    let mu_eff = mu.max(cfg.mu_floor);
    let rho_eff = clamp_rho(rho);
    let mut out = if y > 0.0 {
        positive_bound(y, pi, mu_eff, phi, rho_eff)
    } else {
        zero_branch(pi, mu_eff, phi, rho_eff, cfg.paper_literal_zero_branch)
    };
    if mu < cfg.mu_floor {
        out.grad[1] = 0.0;
    }
    if !(RHO_MIN..=RHO_MAX).contains(&rho) {
        out.grad[3] = 0.0;
    }
    out
}

/// Sums of the objective's parts over one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub zero_sum: f64,
    pub positive_sum: f64,
    pub regularization: f64,
    pub zero_cells: usize,
    pub positive_cells: usize,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.zero_sum + self.positive_sum + self.regularization
    }

    pub fn cells(&self) -> usize {
        self.zero_cells + self.positive_cells
    }

    /// Likelihood part per cell, without regularisation.
    pub fn mean_per_cell(&self) -> f64 {
        (self.zero_sum + self.positive_sum) / self.cells().max(1) as f64
    }
}

fn cell_losses(
    targets: &Tensor,
    pi: &[f64],
    mu: &[f64],
    phi: &[f64],
    rho: &[f64],
    cfg: &LossConfig,
) -> Result<(Vec<CellLoss>, LossBreakdown)> {
    if targets.len() != pi.len() {
        return Err(TensorError::ShapeMismatch {
            op: "total_loss",
            left: targets.shape().to_vec(),
            right: vec![pi.len()],
        });
    }
    let horizon = targets.cols();
    let mut parts = LossBreakdown::default();
    let mut cells = Vec::with_capacity(pi.len());
    for (k, &y) in targets.data().iter().enumerate() {
        let c = cell_nll(y, pi[k], mu[k], phi[k], rho[k], cfg);
        if !c.value.is_finite() {
            return Err(TensorError::InvalidArgument {
                op: "total_loss",
                message: format!(
                    "infinite loss at road {} step {}: y={y} pi={} mu={} phi={} rho={}",
                    k / horizon,
                    k % horizon,
                    pi[k],
                    mu[k],
                    phi[k],
                    rho[k]
                ),
            });
        }
        if y > 0.0 {
            parts.positive_sum += c.value;
            parts.positive_cells += 1;
        } else {
            parts.zero_sum += c.value;
            parts.zero_cells += 1;
        }
        cells.push(c);
    }
    Ok((cells, parts))
}

/// Builds the scalar objective on the tape and returns it with its parts.
pub fn total_loss(
    tape: &mut Tape,
    store: &ParamStore,
    vars: &DecodedVars,
    targets: &Tensor,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let (cells, mut parts) = {
        let get = |v: Var| tape.value(v).data();
        cell_losses(targets, get(vars.pi), get(vars.mu), get(vars.phi), get(vars.rho), cfg)?
    };
    let value = Tensor::new(
        targets.shape().to_vec(),
        cells.iter().map(|c| c.value).collect(),
    )?;
    let partials = (0..4)
        .map(|i| cells.iter().map(|c| c.grad[i]).collect())
        .collect();
    let nll = tape.elementwise(
        "zitd_nll",
        &[vars.pi, vars.mu, vars.phi, vars.rho],
        value,
        partials,
    )?;
    let mut loss = tape.sum(nll)?;
    if cfg.eta > 0.0 {
        let ids: Vec<_> = store.ids().collect();
        let mut reg: Option<Var> = None;
        for id in ids {
            let p = tape.param(store, id)?;
            let sq = tape.mul(p, p)?;
            let s = tape.sum(sq)?;
            reg = Some(match reg {
                Some(r) => tape.add(r, s)?,
                None => s,
            });
        }
        if let Some(r) = reg {
            let r = tape.scale(r, cfg.eta)?;
            parts.regularization = tape.value(r).data()[0];
            loss = tape.add(loss, r)?;
        }
    }
    Ok((loss, parts))
}

/// Same objective evaluated without a tape.
pub fn total_loss_value(
    field: &ParamField,
    targets: &Tensor,
    store: &ParamStore,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let (_, mut parts) = cell_losses(targets, &field.pi, &field.mu, &field.phi, &field.rho, cfg)?;
    parts.regularization = cfg.eta * store.sum_of_squares();
    Ok(parts)
}
