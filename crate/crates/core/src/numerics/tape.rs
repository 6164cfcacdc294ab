//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Every op evaluates eagerly and appends one node holding its value. Node
//! inputs always precede the node, so walking the record backwards visits
//! each op exactly once after all of its consumers.

use rand::Rng;

use crate::{Error, Result};

use super::scalar::{sigmoid, softplus};
use super::tensor::{matmul_into, same_shape, softmax_row};
use super::{ParamId, ParamStore, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Softplus,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Silu => x * sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// Backward rule for a fused op defined outside this module.
pub trait Backward<T: Real> {
    /// Returns one gradient per input, in the order the inputs were recorded.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Neg(Var),
    Exp(Var),
    Sigmoid(Var),
    Act(Var, Activation),
    Softmax(Var),
    Dropout(Var, Vec<T>),
    Concat(Var, Var),
    Slice {
        x: Var,
        start: usize,
    },
    MaskedMean {
        x: Var,
        weights: Vec<T>,
        len: usize,
        inner: usize,
    },
    Reshape(Var),
    Sum(Var),
    MeanAbs(Var),
    RepeatEach(Var, usize),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn Backward<T>>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    name: &'static str,
}

/// Gradients of a scalar with respect to every recorded value.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    params: Vec<(Var, ParamId)>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            consumed: false,
        }
    }

    /// Clears the record so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.consumed {
            return Err(Error::Contract(
                "tape already differentiated; reset before recording".into(),
            ));
        }
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::NonFinite(format!("{name} (node {})", self.nodes.len())));
        }
        self.nodes.push(Node { value, op, name });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a non-learnable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            name: "constant",
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the current value of a parameter; [`Tape::backward_into`]
    /// routes its gradient back to the store.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.constant(store.value(id).clone());
        self.params.push((v, id));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// `x + bias` with `bias` broadcast along every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.last_dim();
        if bv.len() != n {
            return Err(Error::Shape(format!(
                "bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias))
    }

    /// `x · w + b` for `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push("scale", out, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| -v);
        self.push("neg", out, Op::Neg(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.exp());
        self.push("exp", out, Op::Exp(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = self.value(x).map(|v| kind.apply(v));
        self.push("activation", out, Op::Act(x, kind))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Silu)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Softplus)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).softmax();
        self.push("softmax", out, Op::Softmax(x))
    }

    /// Inverted dropout. Identity in [`Mode::Eval`] or when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} not in [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.push("dropout", out, Op::Dropout(x, mask))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::Shape(format!("concat of {sa:?} and {sb:?}")));
        }
        let (na, nb) = (av.last_dim(), bv.last_dim());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for (ra, rb) in av.data().chunks(na).zip(bv.data().chunks(nb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = na + nb;
        let out = Tensor::new(&shape, data)?;
        self.push("concat", out, Op::Concat(a, b))
    }

    /// Columns `start..start + width` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.last_dim();
        if width == 0 || start + width > n {
            return Err(Error::Shape(format!(
                "slice {start}..{} of last axis {n}",
                start + width
            )));
        }
        let mut data = Vec::with_capacity(xv.rows() * width);
        for row in xv.data().chunks(n) {
            data.extend_from_slice(&row[start..start + width]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        let out = Tensor::new(&shape, data)?;
        self.push("slice", out, Op::Slice { x, start })
    }

    /// Splits the last axis into two equal halves.
    pub fn chunk2(&mut self, x: Var) -> Result<(Var, Var)> {
        let n = self.value(x).last_dim();
        if !n.is_multiple_of(2) {
            return Err(Error::Shape(format!("chunk2 of odd last axis {n}")));
        }
        Ok((self.slice_last(x, 0, n / 2)?, self.slice_last(x, n / 2, n / 2)?))
    }

    /// Mean over `axis`, counting only positions where `mask` is set.
    /// `mask` has one entry per (leading index, axis index) pair, i.e. the
    /// shape of `x` truncated after `axis`.
    pub fn masked_mean(&mut self, x: Var, axis: usize, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        if mask.len() != outer * len {
            return Err(Error::Shape(format!(
                "mask of {} entries for {shape:?} along axis {axis}",
                mask.len()
            )));
        }
        let mut weights = vec![T::zero(); outer * len];
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let row = &mask[o * len..(o + 1) * len];
            let count = row.iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(Error::Contract(format!(
                    "masked mean with empty mask at index {o}"
                )));
            }
            let w = T::one() / T::lit(count as f64);
            let acc = &mut data[o * inner..(o + 1) * inner];
            for l in (0..len).filter(|&l| row[l]) {
                weights[o * len + l] = w;
                let src = &xv.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (a, &v) in acc.iter_mut().zip(src) {
                    *a = *a + v;
                }
            }
            for a in acc.iter_mut() {
                *a = *a * w;
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis].to_vec();
        out_shape.extend_from_slice(&shape[axis + 1..]);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Tensor::new(&out_shape, data)?;
        self.push(
            "masked_mean",
            out,
            Op::MaskedMean {
                x,
                weights,
                len,
                inner,
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x))
    }

    /// Mean of absolute values of every entry.
    pub fn mean_abs(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s: T = xv.data().iter().map(|v| v.abs()).sum();
        let out = Tensor::scalar(s / T::lit(xv.len() as f64));
        self.push("mean_abs", out, Op::MeanAbs(x))
    }

    /// Repeats every entry of the last axis `times` times in place
    /// (`[a, b] -> [a, a, b, b]` for `times = 2`).
    pub fn repeat_each(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::Shape("repeat_each by 0".into()));
        }
        let xv = self.value(x);
        let data: Vec<T> = xv
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, times))
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() *= times;
        let out = Tensor::new(&shape, data)?;
        self.push("repeat_each", out, Op::RepeatEach(x, times))
    }

    /// Mean cross-entropy of `labels` under `softmax(logits)`, fused.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let c = lv.last_dim();
        if lv.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} logit rows for {} labels",
                lv.rows(),
                labels.len()
            )));
        }
        let mut probs = lv.data().to_vec();
        let mut total = T::zero();
        for (row, (lrow, &y)) in probs
            .chunks_mut(c)
            .zip(lv.data().chunks(c).zip(labels))
        {
            if y >= c {
                return Err(Error::Index(format!("label {y} out of range for {c} classes")));
            }
            let max = lrow.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = lrow.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total = total + lse - lrow[y];
            softmax_row(row);
        }
        let out = Tensor::scalar(total / T::lit(labels.len() as f64));
        self.push(
            "softmax_cross_entropy",
            out,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Records a fused op whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        name: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        rule: Box<dyn Backward<T>>,
    ) -> Result<Var> {
        self.push(
            name,
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
        )
    }

    /// Differentiates the scalar `loss`. May be called once per recording.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Contract(
                "backward called twice without reset".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// [`Tape::backward`], then accumulates parameter gradients into `store`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        for &(v, id) in &self.params {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).grad.add_assign(g)?;
            }
        }
        Ok(grads)
    }

    fn backward_node(
        &self,
        idx: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), bv.shape()[0], bv.shape()[1]);
                let mut ga = vec![T::zero(); m * k];
                let bt = bv.t()?;
                matmul_into(g.data(), bt.data(), &mut ga, m, n, k);
                accumulate(grads, *a, Tensor::new(av.shape(), ga)?)?;
                let at = Tensor::new(&[m, k], av.data().to_vec())?.t()?;
                let mut gb = vec![T::zero(); k * n];
                matmul_into(at.data(), g.data(), &mut gb, k, m, n);
                accumulate(grads, *b, Tensor::new(bv.shape(), gb)?)?;
            }
            Op::AddBias(x, b) => {
                accumulate(grads, *x, g.clone())?;
                let bv = val(*b);
                let n = bv.len();
                let mut gb = vec![T::zero(); n];
                for row in g.data().chunks(n) {
                    for (a, &v) in gb.iter_mut().zip(row) {
                        *a = *a + v;
                    }
                }
                accumulate(grads, *b, Tensor::new(bv.shape(), gb)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), |g, y| g * y)?)?;
                accumulate(grads, *b, g.zip_map(val(*a), |g, x| g * x)?)?;
            }
            Op::Scale(x, c) => {
                let c = *c;
                accumulate(grads, *x, g.map(|v| v * c))?;
            }
            Op::Neg(x) => accumulate(grads, *x, g.map(|v| -v))?,
            Op::Exp(x) => accumulate(grads, *x, g.zip_map(&node.value, |g, y| g * y)?)?,
            Op::Sigmoid(x) => accumulate(
                grads,
                *x,
                g.zip_map(&node.value, |g, s| g * s * (T::one() - s))?,
            )?,
            Op::Act(x, kind) => {
                let kind = *kind;
                accumulate(
                    grads,
                    *x,
                    g.zip_map(val(*x), |g, x| g * kind.derivative(x))?,
                )?;
            }
            Op::Softmax(x) => {
                let c = node.value.last_dim();
                let mut gx = g.data().to_vec();
                for (grow, yrow) in gx.chunks_mut(c).zip(node.value.data().chunks(c)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for (gv, &y) in grow.iter_mut().zip(yrow) {
                        *gv = y * (*gv - dot);
                    }
                }
                accumulate(grads, *x, Tensor::new(node.value.shape(), gx)?)?;
            }
            Op::Dropout(x, mask) => {
                let data = g.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                accumulate(grads, *x, Tensor::new(g.shape(), data)?)?;
            }
            Op::Concat(a, b) => {
                let (na, nb) = (val(*a).last_dim(), val(*b).last_dim());
                let mut ga = Vec::with_capacity(val(*a).len());
                let mut gb = Vec::with_capacity(val(*b).len());
                for row in g.data().chunks(na + nb) {
                    ga.extend_from_slice(&row[..na]);
                    gb.extend_from_slice(&row[na..]);
                }
                accumulate(grads, *a, Tensor::new(val(*a).shape(), ga)?)?;
                accumulate(grads, *b, Tensor::new(val(*b).shape(), gb)?)?;
            }
            Op::Slice { x, start } => {
                let xv = val(*x);
                let n = xv.last_dim();
                let w = g.last_dim();
                let mut gx = vec![T::zero(); xv.len()];
                for (dst, src) in gx.chunks_mut(n).zip(g.data().chunks(w)) {
                    dst[*start..*start + w].copy_from_slice(src);
                }
                accumulate(grads, *x, Tensor::new(xv.shape(), gx)?)?;
            }
            Op::MaskedMean {
                x,
                weights,
                len,
                inner,
            } => {
                let xv = val(*x);
                let mut gx = vec![T::zero(); xv.len()];
                for (ol, &w) in weights.iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let o = ol / len;
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for (d, &s) in gx[ol * inner..(ol + 1) * inner].iter_mut().zip(src) {
                        *d = s * w;
                    }
                }
                accumulate(grads, *x, Tensor::new(xv.shape(), gx)?)?;
            }
            Op::Reshape(x) => accumulate(grads, *x, g.reshape(val(*x).shape())?)?,
            Op::Sum(x) => {
                let gv = g.data()[0];
                accumulate(grads, *x, Tensor::full(val(*x).shape(), gv))?;
            }
            Op::MeanAbs(x) => {
                let xv = val(*x);
                let scale = g.data()[0] / T::lit(xv.len() as f64);
                let gx = xv.map(|v| {
                    if v > T::zero() {
                        scale
                    } else if v < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                });
                accumulate(grads, *x, gx)?;
            }
            Op::RepeatEach(x, times) => {
                let xv = val(*x);
                let data = g.data().chunks(*times).map(|c| c.iter().copied().sum()).collect();
                accumulate(grads, *x, Tensor::new(xv.shape(), data)?)?;
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let lv = val(*logits);
                let c = lv.last_dim();
                let scale = g.data()[0] / T::lit(labels.len() as f64);
                let mut gl = probs.clone();
                for (row, &y) in gl.chunks_mut(c).zip(labels) {
                    row[y] = row[y] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                }
                accumulate(grads, *logits, Tensor::new(lv.shape(), gl)?)?;
            }
            Op::Custom { inputs, rule } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let gs = rule.backward(&ins, &node.value, g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "{} backward returned {} gradients for {} inputs",
                        node.name,
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (&v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        accumulate(grads, v, gi)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => {
            same_shape(existing.shape(), g.shape())?;
            existing.add_assign(&g)
        }
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
