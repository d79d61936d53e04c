//! GRU over each road's history followed by two multi-head graph
//! attention layers.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Activation, ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// GRU hidden size `F`.
    pub hidden: usize,
    /// GAT output size per head `F'`.
    pub spatial_hidden: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    /// Inverted dropout on the GRU output during training.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 42,
            spatial_hidden: 42,
            heads: 3,
            leaky_slope: Activation::DEFAULT_LEAKY_SLOPE,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.hidden == 0 || self.spatial_hidden == 0 || self.heads == 0 {
            return Err("model: hidden, spatial_hidden and heads must be positive".into());
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope.is_finite()) {
            return Err("model: leaky_slope must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("model: dropout must lie in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GruWeights {
    pub w_r: ParamId,
    pub w_u: ParamId,
    pub w_c: ParamId,
    pub b_r: ParamId,
    pub b_u: ParamId,
    pub b_c: ParamId,
}

impl GruWeights {
    pub fn init<R: Rng>(store: &mut ParamStore, input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let rows = hidden + input_dim + 1;
        Self {
            w_r: store.add_xavier("gru.w_r", rows, hidden, rng),
            w_u: store.add_xavier("gru.w_u", rows, hidden, rng),
            w_c: store.add_xavier("gru.w_c", rows, hidden, rng),
            b_r: store.add_zeros("gru.b_r", 1, hidden),
            b_u: store.add_zeros("gru.b_u", 1, hidden),
            b_c: store.add_zeros("gru.b_c", 1, hidden),
        }
    }
}

/// One GRU step for all roads at once. `h` is `N x F`, `x` is `N x d`,
/// `y` is `N x 1`.
pub fn gru_cell(
    tape: &mut Tape,
    store: &ParamStore,
    w: &GruWeights,
    h: Var,
    x: Var,
    y: Var,
) -> Result<Var> {
    let hxy = tape.concat_cols(&[h, x, y])?;
    let gate = |tape: &mut Tape, wid, bid| -> Result<Var> {
        let (wv, bv) = (tape.param(store, wid)?, tape.param(store, bid)?);
        let pre = tape.matmul(hxy, wv)?;
        let pre = tape.add_row(pre, bv)?;
        tape.sigmoid(pre)
    };
    let r = gate(tape, w.w_r, w.b_r)?;
    let u = gate(tape, w.w_u, w.b_u)?;
    let rh = tape.mul(r, h)?;
    let cand_in = tape.concat_cols(&[rh, x, y])?;
    let (wc, bc) = (tape.param(store, w.w_c)?, tape.param(store, w.b_c)?);
    let cand = tape.matmul(cand_in, wc)?;
    let cand = tape.add_row(cand, bc)?;
    let cand = tape.tanh(cand)?;
    // (1 - u) h + u cand
    let diff = tape.sub(cand, h)?;
    let step = tape.mul(u, diff)?;
    tape.add(h, step)
}

/// Runs the recurrence from `h_0 = 0` and returns the last hidden state.
pub fn gru_encode(
    tape: &mut Tape,
    store: &ParamStore,
    w: &GruWeights,
    xs: &[Var],
    ys: &[Var],
) -> Result<Var> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(TensorError::InvalidArgument {
            op: "gru_encode",
            message: format!("{} feature slots vs {} target slots", xs.len(), ys.len()),
        });
    }
    let n = tape.value(xs[0]).rows();
    let hidden = store.tensor(w.b_r).cols();
    let mut h = tape.constant(Tensor::zeros(&[n, hidden]))?;
    for (&x, &y) in xs.iter().zip(ys) {
        h = gru_cell(tape, store, w, h, x, y)?;
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct GatHead {
    pub w: ParamId,
    /// Halves of the attention vector acting on the centre road and on
    /// the neighbour.
    pub a_self: ParamId,
    pub a_neigh: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    Concat,
    Average,
}

#[derive(Debug, Clone)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub mode: HeadMode,
}

impl GatLayer {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        out_dim: usize,
        heads: usize,
        mode: HeadMode,
        rng: &mut R,
    ) -> Self {
        let heads = (0..heads)
            .map(|m| GatHead {
                w: store.add_xavier(format!("{prefix}.head{m}.w"), input_dim, out_dim, rng),
                a_self: store.add_xavier(format!("{prefix}.head{m}.a_self"), out_dim, 1, rng),
                a_neigh: store.add_xavier(format!("{prefix}.head{m}.a_neigh"), out_dim, 1, rng),
            })
            .collect();
        Self { heads, mode }
    }
}

/// Attention coefficients `N x N` (zero outside the mask) and the
/// transformed embeddings `W z`.
pub fn gat_attention(
    tape: &mut Tape,
    store: &ParamStore,
    head: &GatHead,
    z: Var,
    mask: &Rc<[bool]>,
    leaky_slope: f64,
) -> Result<(Var, Var)> {
    let w = tape.param(store, head.w)?;
    let wz = tape.matmul(z, w)?;
    let a_self = tape.param(store, head.a_self)?;
    let a_neigh = tape.param(store, head.a_neigh)?;
    let s_self = tape.matmul(wz, a_self)?;
    let s_neigh = tape.matmul(wz, a_neigh)?;
    let scores = tape.outer_sum(s_self, s_neigh)?;
    let scores = tape.apply(scores, Activation::LeakyRelu(leaky_slope))?;
    let alpha = tape.masked_softmax(scores, mask.clone())?;
    Ok((alpha, wz))
}

/// Concat mode gives `N x (M F')`, average mode `N x F'`.
pub fn gat_layer(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &GatLayer,
    z: Var,
    mask: &Rc<[bool]>,
    leaky_slope: f64,
) -> Result<Var> {
    let mut aggs = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let (alpha, wz) = gat_attention(tape, store, head, z, mask, leaky_slope)?;
        aggs.push(tape.matmul(alpha, wz)?);
    }
    match layer.mode {
        HeadMode::Concat => {
            let acts = aggs
                .into_iter()
                .map(|a| tape.sigmoid(a))
                .collect::<Result<Vec<_>>>()?;
            tape.concat_cols(&acts)
        }
        HeadMode::Average => {
            let mut total = aggs[0];
            for &a in &aggs[1..] {
                total = tape.add(total, a)?;
            }
            let mean = tape.scale(total, 1.0 / aggs.len() as f64)?;
            tape.sigmoid(mean)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub gru: GruWeights,
    pub gat1: GatLayer,
    pub gat2: GatLayer,
}

impl Encoder {
    pub fn init<R: Rng>(store: &mut ParamStore, config: &EncoderConfig, input_dim: usize, rng: &mut R) -> Self {
        let (f, fs, m) = (config.hidden, config.spatial_hidden, config.heads);
        Self {
            config: config.clone(),
            gru: GruWeights::init(store, input_dim, f, rng),
            gat1: GatLayer::init(store, "gat1", f, fs, m, HeadMode::Concat, rng),
            gat2: GatLayer::init(store, "gat2", m * fs, fs, m, HeadMode::Average, rng),
        }
    }

    /// Spatiotemporal embedding `N x F'`. When `dropout_rng` is given and
    /// dropout is enabled, the GRU output is masked.
    pub fn encode<R: Rng>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xs: &[Var],
        ys: &[Var],
        mask: &Rc<[bool]>,
        dropout_rng: Option<&mut R>,
    ) -> Result<Var> {
        let mut zt = gru_encode(tape, store, &self.gru, xs, ys)?;
        if let (Some(rng), p) = (dropout_rng, self.config.dropout) {
            if p > 0.0 {
                let shape = tape.value(zt).shape().to_vec();
                let keep = 1.0 / (1.0 - p);
                let len = shape.iter().product();
                let m: Vec<f64> = (0..len)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect();
                let m = tape.constant(Tensor::new(shape, m)?)?;
                zt = tape.mul(zt, m)?;
            }
        }
        let slope = self.config.leaky_slope;
        let z1 = gat_layer(tape, store, &self.gat1, zt, mask, slope)?;
        gat_layer(tape, store, &self.gat2, z1, mask, slope)
    }
}
