//! Four linear heads mapping the embedding to `(pi, mu, phi, rho)` per
//! road and horizon step.

use rand::Rng;

use crate::tensor::{ParamId, ParamStore, Result, Tape, TensorError, Var};
use crate::tweedie::{clamp_rho, ZitdParams};

#[derive(Debug, Clone)]
pub struct DecoderWeights {
    pub w_pi: ParamId,
    pub b_pi: ParamId,
    pub w_mu: ParamId,
    pub b_mu: ParamId,
    pub w_phi: ParamId,
    pub b_phi: ParamId,
    pub w_rho: ParamId,
    pub b_rho: ParamId,
}

impl DecoderWeights {
    pub fn init<R: Rng>(store: &mut ParamStore, embed_dim: usize, horizon: usize, rng: &mut R) -> Self {
        Self {
            w_pi: store.add_xavier("dec.w_pi", embed_dim, horizon, rng),
            b_pi: store.add_zeros("dec.b_pi", 1, horizon),
            w_mu: store.add_xavier("dec.w_mu", embed_dim, horizon, rng),
            b_mu: store.add_zeros("dec.b_mu", 1, horizon),
            w_phi: store.add_xavier("dec.w_phi", embed_dim, horizon, rng),
            b_phi: store.add_zeros("dec.b_phi", 1, horizon),
            w_rho: store.add_xavier("dec.w_rho", embed_dim, horizon, rng),
            b_rho: store.add_zeros("dec.b_rho", 1, horizon),
        }
    }
}

/// Tape handles of the four `N x p` parameter fields.
#[derive(Debug, Clone, Copy)]
pub struct DecodedVars {
    pub pi: Var,
    pub mu: Var,
    pub phi: Var,
    pub rho: Var,
}

fn linear(tape: &mut Tape, store: &ParamStore, z: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (wv, bv) = (tape.param(store, w)?, tape.param(store, b)?);
    let out = tape.matmul(z, wv)?;
    tape.add_row(out, bv)
}

pub fn decode(tape: &mut Tape, store: &ParamStore, w: &DecoderWeights, z: Var, epsilon: f64) -> Result<DecodedVars> {
    let pi = linear(tape, store, z, w.w_pi, w.b_pi)?;
    let pi = tape.sigmoid(pi)?;
    let mu = linear(tape, store, z, w.w_mu, w.b_mu)?;
    let mu = tape.relu(mu)?;
    let phi = linear(tape, store, z, w.w_phi, w.b_phi)?;
    let phi = tape.relu(phi)?;
    let phi = tape.add_scalar(phi, epsilon)?;
    let rho = linear(tape, store, z, w.w_rho, w.b_rho)?;
    let rho = tape.sigmoid(rho)?;
    let rho = tape.add_scalar(rho, 1.0 + epsilon)?;
    let out = DecodedVars { pi, mu, phi, rho };
    debug_assert!(ParamField::from_tape(tape, &out).is_ok());
    Ok(out)
}

/// Decoded parameters as plain values, row-major `(road, step)`. `rho` is
/// stored as emitted; use [`ParamField::zitd`] for distribution work.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamField {
    pub n_roads: usize,
    pub horizon: usize,
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
    pub phi: Vec<f64>,
    pub rho: Vec<f64>,
}

impl ParamField {
    /// Copies the fields off the tape, failing on the first non-finite or
    /// out-of-range entry with its road and step.
    pub fn from_tape(tape: &Tape, vars: &DecodedVars) -> Result<Self> {
        let t = tape.value(vars.pi);
        let (n_roads, horizon) = (t.rows(), t.cols());
        let field = Self {
            n_roads,
            horizon,
            pi: t.data().to_vec(),
            mu: tape.value(vars.mu).data().to_vec(),
            phi: tape.value(vars.phi).data().to_vec(),
            rho: tape.value(vars.rho).data().to_vec(),
        };
        for k in 0..n_roads * horizon {
            let (pi, mu, phi, rho) = (field.pi[k], field.mu[k], field.phi[k], field.rho[k]);
            let ok = (0.0..=1.0).contains(&pi) && mu >= 0.0 && phi > 0.0 && rho > 1.0 && rho <= 2.0 + 1e-3;
            if !(ok && mu.is_finite() && phi.is_finite()) {
                return Err(TensorError::InvalidArgument {
                    op: "decode",
                    message: format!(
                        "road {} step {}: pi={pi} mu={mu} phi={phi} rho={rho}",
                        k / horizon,
                        k % horizon
                    ),
                });
            }
        }
        Ok(field)
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Distribution parameters for one cell with `rho` clamped into the
    /// open interval.
    pub fn zitd(&self, road: usize, step: usize) -> ZitdParams {
        let k = road * self.horizon + step;
        ZitdParams::new(self.pi[k], self.mu[k], self.phi[k], clamp_rho(self.rho[k]))
            .expect("decoded parameters validated on construction")
    }

    /// Point forecast `(1 - pi) mu`.
    pub fn mean(&self, road: usize, step: usize) -> f64 {
        let k = road * self.horizon + step;
        (1.0 - self.pi[k]) * self.mu[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_inputs_give_reference_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let w = DecoderWeights::init(&mut store, 3, 2, &mut rng);
        for p in store.iter_mut() {
            p.tensor.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[4, 3])).unwrap();
        let eps = 1e-5;
        let out = decode(&mut tape, &store, &w, z, eps).unwrap();
        let f = ParamField::from_tape(&tape, &out).unwrap();
        assert_eq!((f.n_roads, f.horizon), (4, 2));
        assert!(f.pi.iter().all(|&v| v == 0.5));
        assert!(f.mu.iter().all(|&v| v == 0.0));
        assert!(f.phi.iter().all(|&v| v == eps));
        assert!(f.rho.iter().all(|&v| v == 1.5 + eps));
        assert_eq!(f.mean(0, 0), 0.0);
    }

    #[test]
    fn ranges_hold_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let eps = 1e-5;
        for trial in 0..200 {
            let mut store = ParamStore::new();
            let w = DecoderWeights::init(&mut store, 5, 3, &mut rng);
            for p in store.iter_mut() {
                for v in p.tensor.data_mut() {
                    *v = rng.random_range(-20.0..20.0);
                }
            }
            let z: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut tape = Tape::new();
            let z = tape.constant(Tensor::new(vec![2, 5], z).unwrap()).unwrap();
            let out = decode(&mut tape, &store, &w, z, eps).unwrap();
            let f = ParamField::from_tape(&tape, &out).unwrap();
            for k in 0..f.len() {
                assert!((0.0..=1.0).contains(&f.pi[k]), "trial {trial}");
                assert!(f.mu[k] >= 0.0);
                assert!(f.phi[k] >= eps);
                assert!(f.rho[k] > 1.0 + eps - 1e-15 && f.rho[k] <= 2.0 + eps);
                let z = f.zitd(k / 3, k % 3);
                assert!(z.td.rho > 1.0 && z.td.rho < 2.0);
            }
        }
    }
}
