use std::collections::HashMap;
use std::rc::Rc;

use super::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Exp,
    Log,
    Power(f64),
}

impl Activation {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

    fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Exp => "exp",
            Activation::Log => "log",
            Activation::Power(_) => "power",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Exp => x.exp(),
            Activation::Log => x.ln(),
            Activation::Power(k) => x.powf(k),
        }
    }

    /// Derivative given the input `x` and the output `y`. Kinks take the
    /// left-hand (zero / slope) subgradient.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Exp => y,
            Activation::Log => 1.0 / x,
            Activation::Power(k) => k * x.powf(k - 1.0),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Activation),
    ConcatCols(Vec<Var>),
    OuterSum(Var, Var),
    MaskedSoftmax(Var),
    Sum(Var),
    Elementwise(Vec<Var>, Vec<Vec<f64>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation so that `backward` can replay it in
/// reverse. Nodes are appended in evaluation order, so index order is a
/// topological order of the graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        value.check_finite(op_name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant)
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_nodes.get(&id) {
            return Ok(v);
        }
        let v = self.push("param", store.tensor(id).clone(), Op::Param(id))?;
        self.param_nodes.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    /// `x (r x c) + bias (1 x c)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(mismatch("add_row", tx, tb));
        }
        let c = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % c])
            .collect();
        let out = Tensor::new(vec![tx.rows(), c], data)?;
        self.push("add_row", out, Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push("scale", out, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, shift: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + shift);
        self.push("add_scalar", out, Op::AddScalar(x))
    }

    pub fn apply(&mut self, x: Var, act: Activation) -> Result<Var> {
        let input = self.value(x);
        if act == Activation::Log {
            if let Some((index, &value)) =
                input.data().iter().enumerate().find(|(_, v)| **v <= 0.0)
            {
                return Err(TensorError::NonFinite {
                    op: "log",
                    index,
                    value,
                });
            }
        }
        let out = input.map(|v| act.apply(v));
        self.push(act.name(), out, Op::Unary(x, act))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(x, Activation::Relu)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat_cols",
            message: "no inputs".into(),
        })?;
        let rows = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let c = t.cols();
                data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a (n x 1)`, `b (m x 1)`.
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != 1 || tb.cols() != 1 {
            return Err(mismatch("outer_sum", ta, tb));
        }
        let (n, m) = (ta.rows(), tb.rows());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                data.push(ta.data()[i] + tb.data()[j]);
            }
        }
        let out = Tensor::new(vec![n, m], data)?;
        self.push("outer_sum", out, Op::OuterSum(a, b))
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries are exactly zero. Every row needs at least one open entry.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<[bool]>) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.len() {
            return Err(TensorError::InvalidArgument {
                op: "masked_softmax",
                message: format!("mask has {} entries for shape {:?}", mask.len(), t.shape()),
            });
        }
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let open = &mask[i * c..(i + 1) * c];
            let max = row
                .iter()
                .zip(open)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::InvalidArgument {
                    op: "masked_softmax",
                    message: format!("row {i} has an empty neighbourhood"),
                });
            }
            let mut total = 0.0;
            for j in 0..c {
                if open[j] {
                    let e = (row[j] - max).exp();
                    data[i * c + j] = e;
                    total += e;
                }
            }
            for v in &mut data[i * c..(i + 1) * c] {
                *v /= total;
            }
        }
        let out = Tensor::new(vec![r, c], data)?;
        self.push("masked_softmax", out, Op::MaskedSoftmax(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x))
    }

    /// Elementwise function of several same-shaped inputs whose forward
    /// values and local partial derivatives are computed by the caller.
    /// `partials[m][k]` is d out[k] / d inputs[m][k].
    pub fn elementwise(
        &mut self,
        op_name: &'static str,
        inputs: &[Var],
        value: Tensor,
        partials: Vec<Vec<f64>>,
    ) -> Result<Var> {
        if partials.len() != inputs.len() {
            return Err(TensorError::InvalidArgument {
                op: op_name,
                message: "one partial vector per input required".into(),
            });
        }
        for (&inp, part) in inputs.iter().zip(&partials) {
            let t = self.value(inp);
            if t.shape() != value.shape() || part.len() != value.len() {
                return Err(mismatch(op_name, t, &value));
            }
        }
        if let Some((index, value)) = partials
            .iter()
            .flat_map(|p| p.iter().copied().enumerate())
            .find(|(_, v)| !v.is_finite())
        {
            return Err(TensorError::NonFinite {
                op: op_name,
                index,
                value,
            });
        }
        self.push(op_name, value, Op::Elementwise(inputs.to_vec(), partials))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients in `store` are
    /// zeroed first and then set to d loss / d parameter.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        store.zero_grad();
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let slot = store.get_mut(*id).grad.as_mut().expect("zeroed");
                    for (d, s) in slot.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = zip_map(&g, tb, |x, y| x * y);
                    let gb = zip_map(&g, ta, |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, bias) => {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for (i, v) in g.data().iter().enumerate() {
                        gb[i % c] += v;
                    }
                    accumulate(&mut grads, *bias, Tensor::row(gb));
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut grads, *x, g.map(|v| v * f));
                }
                Op::AddScalar(x) => accumulate(&mut grads, *x, g),
                Op::Unary(x, act) => {
                    let input = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(input.data())
                        .zip(node.value.data())
                        .map(|((&gv, &xv), &yv)| gv * act.derivative(xv, yv))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(
                                &g.data()[r * total + offset..r * total + offset + c],
                            );
                        }
                        offset += c;
                        accumulate(&mut grads, p, Tensor::new(vec![rows, c], data)?);
                    }
                }
                Op::OuterSum(a, b) => {
                    let (n, m) = (g.rows(), g.cols());
                    let mut ga = vec![0.0; n];
                    let mut gb = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            let v = g.data()[i * m + j];
                            ga[i] += v;
                            gb[j] += v;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::column(ga));
                    accumulate(&mut grads, *b, Tensor::column(gb));
                }
                Op::MaskedSoftmax(x) => {
                    let y = &node.value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut data = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = &y.data()[i * c..(i + 1) * c];
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            data[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![r, c], data)?);
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::full(&shape, gv));
                }
                Op::Elementwise(inputs, partials) => {
                    for (&inp, part) in inputs.iter().zip(partials) {
                        let data = g.data().iter().zip(part).map(|(a, b)| a * b).collect();
                        accumulate(&mut grads, inp, Tensor::new(g.shape().to_vec(), data)?);
                    }
                }
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (d, s) in existing.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::column(values));
        (store, id)
    }

    #[test]
    fn activations_at_anchor_points() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Relu.apply(-3.0), 0.0);
        assert_eq!(Activation::Relu.apply(3.0), 3.0);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::LeakyRelu(0.2).apply(-1.0), -0.2);
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let (mut store, id) = store_with(vec![0.3, -1.0, 2.0]);
        let mut tape = Tape::new();
        let p = tape.param(&store, id).unwrap();
        let loss = tape.sum(p).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).gradient().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let (mut store, id) = store_with(vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let p = tape.param(&store, id).unwrap();
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).gradient().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_without_parameters() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(3.0)).unwrap();
        tape.backward(c, &mut store).unwrap();
        assert!(store.is_empty());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (mut store, id) = store_with(vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let p = tape.param(&store, id).unwrap();
        assert_eq!(
            tape.backward(p, &mut store),
            Err(TensorError::NotScalar(vec![2, 1]))
        );
    }

    #[test]
    fn log_of_nonpositive_fails_with_index() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::column(vec![1.0, 0.0])).unwrap();
        match tape.apply(c, Activation::Log) {
            Err(TensorError::NonFinite { op: "log", index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exp_overflow_is_hard_failure() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::column(vec![0.0, 1000.0])).unwrap();
        assert!(matches!(
            tape.apply(c, Activation::Exp),
            Err(TensorError::NonFinite { op: "exp", index: 1, .. })
        ));
    }

    #[test]
    fn masked_softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::from_rows(&[vec![1.0, 5.0, -2.0], vec![0.0, 0.0, 3.0]]).unwrap())
            .unwrap();
        let mask: Rc<[bool]> = vec![true, false, true, true, true, false].into();
        let y = tape.masked_softmax(x, mask).unwrap();
        let v = tape.value(y);
        assert_eq!(v.get(0, 1), 0.0);
        assert!((v.get(0, 0) + v.get(0, 2) - 1.0).abs() < 1e-12);
        assert!((v.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_empty_row_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
        assert!(tape.masked_softmax(x, vec![false, false].into()).is_err());
    }

    #[test]
    fn shared_param_node_accumulates() {
        let (mut store, id) = store_with(vec![3.0]);
        let mut tape = Tape::new();
        let a = tape.param(&store, id).unwrap();
        let b = tape.param(&store, id).unwrap();
        assert_eq!(a, b);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).gradient().data(), &[2.0]);
    }
}
