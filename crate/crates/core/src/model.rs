//! Encoder and decoder wired together, plus window batching.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Window};
use crate::decoder::{decode, DecodedVars, DecoderWeights, ParamField};
use crate::encoder::{Encoder, EncoderConfig};
use crate::tensor::{Activation, ParamStore, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input window length `t`.
    pub history: usize,
    /// Forecast horizon `p`.
    pub horizon: usize,
    pub hidden: usize,
    pub spatial_hidden: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        Self {
            history: 14,
            horizon: 14,
            hidden: enc.hidden,
            spatial_hidden: enc.spatial_hidden,
            heads: enc.heads,
            leaky_slope: Activation::DEFAULT_LEAKY_SLOPE,
            dropout: enc.dropout,
            epsilon: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            hidden: self.hidden,
            spatial_hidden: self.spatial_hidden,
            heads: self.heads,
            leaky_slope: self.leaky_slope,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.history == 0 || self.horizon == 0 {
            return Err("model: history and horizon must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err("model: epsilon must lie in (0, 1e-3]".into());
        }
        self.encoder().validate()
    }
}

/// Inputs and targets of one window for every road.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub window: Window,
    /// Per input slot, standardised features `N x d`.
    pub xs: Vec<Tensor>,
    /// Per input slot, observed risk `N x 1`.
    pub ys: Vec<Tensor>,
    /// Targets `N x p`.
    pub targets: Tensor,
}

impl WindowBatch {
    /// Targets past the end of the data are filled with zeros; use
    /// [`WindowBatch::has_targets`] to tell.
    pub fn new(data: &Dataset, window: Window) -> Result<Self> {
        let n = data.graph.n_roads();
        let d = data.features.dim();
        let xs = window
            .inputs()
            .map(|s| {
                let v = (0..n)
                    .flat_map(|i| (0..d).map(move |k| (i, k)))
                    .map(|(i, k)| data.features.get(i, s, k))
                    .collect();
                Tensor::new(vec![n, d], v)
            })
            .collect::<Result<Vec<_>>>()?;
        let ys = window
            .inputs()
            .map(|s| Tensor::column((0..n).map(|i| data.risk.get(i, s)).collect()))
            .collect();
        let slots = data.n_slots();
        let mut targets = Tensor::zeros(&[n, window.horizon]);
        for i in 0..n {
            for (j, s) in window.targets().enumerate() {
                if s < slots {
                    targets.set(i, j, data.risk.get(i, s));
                }
            }
        }
        Ok(Self {
            window,
            xs,
            ys,
            targets,
        })
    }

    pub fn has_targets(&self, n_slots: usize) -> bool {
        self.window.targets().end <= n_slots
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub encoder: Encoder,
    pub decoder: DecoderWeights,
}

impl Model {
    /// Xavier-initialised weights and zero biases, deterministic per seed.
    pub fn init(config: &ModelConfig, input_dim: usize, seed: u64) -> (Self, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&mut store, &config.encoder(), input_dim, &mut rng);
        let decoder = DecoderWeights::init(&mut store, config.spatial_hidden, config.horizon, &mut rng);
        (
            Self {
                config: config.clone(),
                input_dim,
                encoder,
                decoder,
            },
            store,
        )
    }

    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &WindowBatch,
        mask: &Rc<[bool]>,
        dropout_rng: Option<&mut R>,
    ) -> Result<DecodedVars> {
        if batch.xs.first().map(|x| x.cols()) != Some(self.input_dim) {
            return Err(TensorError::InvalidArgument {
                op: "forward",
                message: format!("model expects {} features per slot", self.input_dim),
            });
        }
        let xs: Vec<Var> = batch
            .xs
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect::<Result<_>>()?;
        let ys: Vec<Var> = batch
            .ys
            .iter()
            .map(|y| tape.constant(y.clone()))
            .collect::<Result<_>>()?;
        let z = self.encoder.encode(tape, store, &xs, &ys, mask, dropout_rng)?;
        decode(tape, store, &self.decoder, z, self.config.epsilon)
    }

    /// Inference-mode parameter field for one window.
    pub fn predict(&self, store: &ParamStore, batch: &WindowBatch, mask: &Rc<[bool]>) -> Result<ParamField> {
        let mut tape = Tape::new();
        let vars = self.forward::<ChaCha8Rng>(&mut tape, store, batch, mask, None)?;
        ParamField::from_tape(&tape, &vars)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn small() -> ModelConfig {
        ModelConfig {
            history: 4,
            horizon: 3,
            hidden: 6,
            spatial_hidden: 5,
            heads: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn output_shape_and_determinism() {
        let data = synth_generate(&SynthConfig { n_roads: 7, n_slots: 24, ..Default::default() }, 1)
            .unwrap()
            .dataset;
        let cfg = small();
        let mask = data.graph.attention_mask();
        let batch = WindowBatch::new(&data, Window { start: 2, history: 4, horizon: 3 }).unwrap();
        let (m, store) = Model::init(&cfg, data.features.dim(), 5);
        let a = m.predict(&store, &batch, &mask).unwrap();
        assert_eq!((a.n_roads, a.horizon), (7, 3));
        let (m2, store2) = Model::init(&cfg, data.features.dim(), 5);
        assert_eq!(a, m2.predict(&store2, &batch, &mask).unwrap());
    }

    #[test]
    fn encode_is_permutation_equivariant() {
        let out = synth_generate(&SynthConfig { n_roads: 9, n_slots: 24, ..Default::default() }, 4).unwrap();
        let data = out.dataset;
        let perm = [3, 0, 8, 1, 7, 2, 6, 4, 5];
        let permuted = Dataset::new(
            data.graph.relabel(&perm).unwrap(),
            data.features.relabel(&perm),
            data.risk.relabel(&perm),
        )
        .unwrap();
        let cfg = small();
        let (m, store) = Model::init(&cfg, data.features.dim(), 8);
        let w = Window { start: 5, history: 4, horizon: 3 };
        let a = m
            .predict(&store, &WindowBatch::new(&data, w).unwrap(), &data.graph.attention_mask())
            .unwrap();
        let b = m
            .predict(&store, &WindowBatch::new(&permuted, w).unwrap(), &permuted.graph.attention_mask())
            .unwrap();
        for i in 0..9 {
            for j in 0..3 {
                let (ka, kb) = (i * 3 + j, perm[i] * 3 + j);
                assert!((a.pi[ka] - b.pi[kb]).abs() < 1e-12);
                assert!((a.mu[ka] - b.mu[kb]).abs() < 1e-12);
            }
        }
    }
}
