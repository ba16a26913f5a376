//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every value produced during one forward pass. Results
//! whose inputs all lack `requires_grad` are stored as plain constants with
//! no backward rule, so evaluation-only passes cost nothing extra. A graph
//! can be back-propagated exactly once; the next step builds a fresh graph.

use super::conv::{self, ConvGeom};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias { x: Var, bias: Var },
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Sum(Var),
    SumAxis { a: Var, axis: usize },
    Mean(Var),
    L2Normalize { a: Var, axis: usize },
    LogSumExp { a: Var, axis: usize, mask: Option<Vec<bool>> },
    Upsample2x(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; zeros if `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads.get_mut(v.0).and_then(|g| g.take()) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// (outer, len, inner) decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{op}: operand shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn check_axis(&self, op: &str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(Error::Shape(format!(
                "{op}: axis {axis} out of range for shape {:?}",
                self.shape(a)
            )));
        }
        Ok(())
    }

    /// `a [m,k] x b [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a [m,k] x b^T` where `b` is `[n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let name = if trans_b { "matmul_nt" } else { "matmul" };
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Shape(format!("{name}: needs 2-D operands, got {sa:?} and {sb:?}")));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::Shape(format!("{name}: inner dimensions differ: {sa:?} x {sb:?}")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), trans_b, &mut out, false);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x - y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::lit(factor);
        let value = self.value(a).map(|x| x * f);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    /// Adds a per-channel bias `[C]` along axis 1 of `x` (`[N, C, ...]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::Shape(format!("add_bias: bias {sb:?} does not match axis 1 of {sx:?}")));
        }
        let (outer, c, inner) = split_axis(&sx, 1);
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for (ci, &bv) in b.iter().enumerate().take(c) {
                let base = (o * c + ci) * inner;
                data[base..base + inner].iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(&sx, data)?;
        Ok(self.push(value, Op::AddBias { x, bias }, &[x, bias]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        let value = self.value(a).map(|x| if x > T::zero() { x } else { x * s });
        self.push(value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(value, Op::Sigmoid(a), &[a])
    }

    /// Sum of all elements; returns a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for &x in self.value(a).data() {
            acc += x;
        }
        self.push(Tensor::scalar(acc), Op::Sum(a), &[a])
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", a, axis)?;
        let shape = self.shape(a).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &x[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *dst += v;
                }
            }
        }
        let value = Tensor::new(&without_axis(&shape, axis), out)?;
        Ok(self.push(value, Op::SumAxis { a, axis }, &[a]))
    }

    /// Mean of all elements; returns a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Empty("mean of an empty tensor".into()));
        }
        let mut acc = T::zero();
        for &x in self.value(a).data() {
            acc += x;
        }
        let value = Tensor::scalar(acc / T::lit(n as f64));
        Ok(self.push(value, Op::Mean(a), &[a]))
    }

    /// Divides every slice along `axis` by its Euclidean norm.
    ///
    /// A zero slice is an error rather than a silent zero output.
    pub fn l2_normalize(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("l2_normalize", a, axis)?;
        let shape = self.shape(a).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let mut ss = T::zero();
                for j in 0..n {
                    let v = x[(o * n + j) * inner + i];
                    ss += v * v;
                }
                if ss <= T::zero() {
                    return Err(Error::ZeroNorm { op: "l2_normalize" });
                }
                let norm = ss.sqrt();
                for j in 0..n {
                    let idx = (o * n + j) * inner + i;
                    out[idx] = x[idx] / norm;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::L2Normalize { a, axis }, &[a]))
    }

    /// Numerically stable `log(sum(exp(x)))` along `axis`, removing it.
    ///
    /// With a mask (same shape as `a`), only entries marked `true` take part;
    /// excluded entries have no influence on the value or the gradient.
    pub fn logsumexp(&mut self, a: Var, axis: usize, mask: Option<Vec<bool>>) -> Result<Var> {
        self.check_axis("logsumexp", a, axis)?;
        let shape = self.shape(a).to_vec();
        if let Some(m) = &mask {
            if m.len() != self.value(a).len() {
                return Err(Error::Shape(format!(
                    "logsumexp: mask has {} entries for shape {shape:?}",
                    m.len()
                )));
            }
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let keep = |idx: usize| mask.as_ref().is_none_or(|m| m[idx]);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut max = T::neg_infinity();
                let mut any = false;
                for j in 0..n {
                    let idx = (o * n + j) * inner + i;
                    if keep(idx) {
                        any = true;
                        max = max.max(x[idx]);
                    }
                }
                if !any {
                    return Err(Error::Empty("logsumexp: a slice has no unmasked entries".into()));
                }
                let mut s = T::zero();
                for j in 0..n {
                    let idx = (o * n + j) * inner + i;
                    if keep(idx) {
                        s += (x[idx] - max).exp();
                    }
                }
                out[o * inner + i] = max + s.ln();
            }
        }
        let value = Tensor::new(&without_axis(&shape, axis), out)?;
        Ok(self.push(value, Op::LogSumExp { a, axis, mask }, &[a]))
    }

    /// Nearest-neighbour 2x upsampling of an NCHW tensor.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("upsample2x: needs NCHW input, got {s:?}")));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); planes * 4 * h * w];
        for p in 0..planes {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new(&[s[0], s[1], 2 * h, 2 * w], out)?;
        Ok(self.push(value, Op::Upsample2x(a), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Empty("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        self.check_axis("concat", *first, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(Error::Shape(format!(
                    "concat: shape {s:?} incompatible with {base:?} along axis {axis}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                out.extend_from_slice(&self.value(p).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// 2-D convolution, NCHW input `[N,C,H,W]` and weight `[O,C,KH,KW]`,
    /// zero padding `pad` on each side.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || stride == 0 {
            return Err(Error::Shape(format!(
                "conv2d: input {sx:?} and kernel {sw:?} (stride {stride}) do not conform"
            )));
        }
        if sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[3] {
            return Err(Error::Shape(format!("conv2d: kernel {sw:?} larger than padded input {sx:?}")));
        }
        let geom = ConvGeom {
            n: sx[0],
            c: sx[1],
            h: sx[2],
            w: sx[3],
            o: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            ho: (sx[2] + 2 * pad - sw[2]) / stride + 1,
            wo: (sx[3] + 2 * pad - sw[3]) / stride + 1,
        };
        let out = if conv::prefers_direct(&geom) {
            conv::direct_forward(self.value(x).data(), self.value(w).data(), &geom)
        } else {
            let col = conv::im2col(self.value(x).data(), &geom);
            let mut m = vec![T::zero(); geom.o * geom.columns()];
            T::gemm(geom.o, geom.patch(), geom.columns(), self.value(w).data(), false, &col, false, &mut m, false);
            conv::channels_to_batch(&m, geom.n, geom.o, geom.ho * geom.wo)
        };
        let value = Tensor::new(&[geom.n, geom.o, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, geom }, &[x, w]))
    }

    /// Reverse pass from a scalar `loss`. Allowed once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let loss_shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(&loss_shape, T::one()));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        // only leaves that asked for gradients are reported
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                grads[i] = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = node.value.shape()[1];
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    // dA = G B^T, or G B when b is stored transposed
                    T::gemm(m, n, k, gd, false, bv.data(), !trans_b, &mut da, false);
                    self.accumulate(grads, *a, Tensor::new(av.shape(), da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    if *trans_b {
                        T::gemm(n, m, k, gd, true, av.data(), false, &mut db, false);
                    } else {
                        T::gemm(k, m, n, av.data(), true, gd, false, &mut db, false);
                    }
                    self.accumulate(grads, *b, Tensor::new(bv.shape(), db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = gd.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(av.shape(), d)?);
                }
                if self.wants(*b) {
                    let d = gd.iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(bv.shape(), d)?);
                }
            }
            Op::Scale(a, f) => {
                let f = T::lit(*f);
                self.accumulate(grads, *a, g.map(|x| x * f));
            }
            Op::AddBias { x, bias } => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*bias) {
                    let (outer, c, inner) = split_axis(g.shape(), 1);
                    let mut db = vec![T::zero(); c];
                    for o in 0..outer {
                        for (ci, d) in db.iter_mut().enumerate() {
                            let base = (o * c + ci) * inner;
                            for &v in &gd[base..base + inner] {
                                *d += v;
                            }
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(&[c], db)?);
                }
            }
            Op::Relu(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(&g, &y)| if y > T::zero() { g } else { T::zero() }).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape(), d)?);
            }
            Op::LeakyRelu(a, slope) => {
                let s = T::lit(*slope);
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(&g, &x)| if x > T::zero() { g } else { g * s }).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape(), d)?);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape(), d)?);
            }
            Op::Sum(a) => {
                let s = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&s, gd[0]));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let v = gd[0] / T::lit(av.len() as f64);
                self.accumulate(grads, *a, Tensor::full(av.shape(), v));
            }
            Op::SumAxis { a, axis } => {
                let s = self.value(*a).shape().to_vec();
                let (outer, n, inner) = split_axis(&s, *axis);
                let mut d = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        d[(o * n + j) * inner..(o * n + j + 1) * inner]
                            .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(&s, d)?);
            }
            Op::L2Normalize { a, axis } => {
                let x = self.value(*a);
                let y = node.value.data();
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                let mut d = vec![T::zero(); x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut ss = T::zero();
                        let mut gy = T::zero();
                        for j in 0..n {
                            let idx = (o * n + j) * inner + i;
                            ss += x.data()[idx] * x.data()[idx];
                            gy += gd[idx] * y[idx];
                        }
                        let norm = ss.sqrt();
                        for j in 0..n {
                            let idx = (o * n + j) * inner + i;
                            d[idx] = (gd[idx] - y[idx] * gy) / norm;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(x.shape(), d)?);
            }
            Op::LogSumExp { a, axis, mask } => {
                let x = self.value(*a);
                let out = node.value.data();
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                let mut d = vec![T::zero(); x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let go = gd[o * inner + i];
                        let lse = out[o * inner + i];
                        for j in 0..n {
                            let idx = (o * n + j) * inner + i;
                            if mask.as_ref().is_none_or(|m| m[idx]) {
                                d[idx] = go * (x.data()[idx] - lse).exp();
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(x.shape(), d)?);
            }
            Op::Upsample2x(a) => {
                let s = self.value(*a).shape().to_vec();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let mut d = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            d[(p * h + y / 2) * w + xx / 2] += gd[(p * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(&s, d)?);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let s = self.value(p).shape().to_vec();
                    let n = s[*axis];
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            d.extend_from_slice(&gd[start..start + n * inner]);
                        }
                        self.accumulate(grads, p, Tensor::new(&s, d)?);
                    }
                    offset += n;
                }
            }
            Op::Reshape(a) => {
                let s = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshape(&s)?);
            }
            Op::Conv2d { x, w, geom } if conv::prefers_direct(geom) => {
                if self.wants(*w) {
                    let dw = conv::direct_weight_grad(self.value(*x).data(), gd, geom);
                    self.accumulate(grads, *w, Tensor::new(self.value(*w).shape(), dw)?);
                }
                if self.wants(*x) {
                    let dx = conv::direct_input_grad(gd, self.value(*w).data(), geom);
                    self.accumulate(grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
                }
            }
            Op::Conv2d { x, w, geom } => {
                let plane = geom.ho * geom.wo;
                let gm = conv::batch_to_channels(gd, geom.n, geom.o, plane);
                if self.wants(*w) {
                    let col = conv::im2col(self.value(*x).data(), geom);
                    let mut dw = vec![T::zero(); geom.o * geom.patch()];
                    T::gemm(geom.o, geom.columns(), geom.patch(), &gm, false, &col, true, &mut dw, false);
                    self.accumulate(grads, *w, Tensor::new(self.value(*w).shape(), dw)?);
                }
                if self.wants(*x) {
                    let mut dcol = vec![T::zero(); geom.patch() * geom.columns()];
                    T::gemm(
                        geom.patch(),
                        geom.o,
                        geom.columns(),
                        self.value(*w).data(),
                        true,
                        &gm,
                        false,
                        &mut dcol,
                        false,
                    );
                    let dx = conv::col2im(&dcol, geom);
                    self.accumulate(grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
                }
            }
        }
        Ok(())
    }
}
