use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use super::{compound_params, ZitdParams};

/// One draw: zero with probability `pi`, otherwise a Poisson number of
/// Gamma severities summed. The sum of `n` severities is drawn directly as
/// `Gamma(n * shape, scale)`.
pub fn sample_zitd_one<R: Rng + ?Sized>(z: &ZitdParams, rng: &mut R) -> f64 {
    let inflate = rng.random::<f64>() < z.pi;
    let cp = compound_params(&z.td);
    let count = if cp.lambda > 0.0 {
        Poisson::new(cp.lambda).expect("finite positive rate").sample(rng) as u64
    } else {
        0
    };
    if inflate || count == 0 {
        return 0.0;
    }
    Gamma::new(count as f64 * cp.gamma_shape, cp.gamma_scale)
        .expect("positive gamma params")
        .sample(rng)
}

/// `n` independent draws, deterministic per `seed`.
pub fn sample_zitd(z: &ZitdParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_zitd_one(z, &mut rng)).collect()
}
