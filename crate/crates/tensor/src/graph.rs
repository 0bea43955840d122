//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to a [`Tape`]; nodes are created in
//! topological order, so the backward pass is a single reverse sweep.

use crate::tensor::ensure_same_shape;
use crate::{Element, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        cols: Vec<T>,
    },
    AddBias {
        x: Var,
        bias: Var,
        axis: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    AvgPool2(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Sum(Var),
    Square(Var),
    L2Normalize {
        x: Var,
        norm: T,
    },
    LogSumExp(Var),
    SoftCrossEntropy {
        logits: Var,
        weights: Vec<T>,
    },
    Pick(Var, usize),
    Slice {
        x: Var,
        start: usize,
    },
    AngleError {
        x: Var,
        slope: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::AddBias { .. } => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::AvgPool2(..) => "avg_pool2",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Sum(..) => "sum",
            Op::Square(..) => "square",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::LogSumExp(..) => "log_sum_exp",
            Op::SoftCrossEntropy { .. } => "cross_entropy",
            Op::Pick(..) => "pick",
            Op::Slice { .. } => "slice",
            Op::AngleError { .. } => "angle_error",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for later differentiation.
///
/// A tape is confined to one thread of work at a time; it can be moved but
/// is never shared.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push_leaf(value, false)
    }

    /// Stop-gradient: a copy of `x` that neither receives nor propagates
    /// gradient.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).clone();
        self.push_leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::from_vec(&[m, n], out)?;
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// 3×3 convolution with zero padding 1 over a `[c, h, w]` input.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        if si.len() != 3 || sk.len() != 4 || sk[1] != si[0] || sk[2] != 3 || sk[3] != 3 {
            return Err(shape_err("conv2d", si, sk));
        }
        if stride == 0 || si[1] < 3 || si[2] < 3 {
            return Err(TensorError::InvalidArgument(format!(
                "conv2d needs stride >= 1 and spatial extents >= 3, got stride {stride} on {si:?}"
            )));
        }
        let (c, h, w) = (si[0], si[1], si[2]);
        let out_ch = sk[0];
        let (oh, ow) = conv_out_hw(h, w, stride);
        let cols = im2col(self.value(input).data(), c, h, w, stride, oh, ow);
        let patch = c * 9;
        let positions = oh * ow;
        let mut out = vec![T::zero(); out_ch * positions];
        T::gemm(
            out_ch,
            patch,
            positions,
            T::one(),
            self.value(kernel).data(),
            patch as isize,
            1,
            &cols,
            positions as isize,
            1,
            T::zero(),
            &mut out,
            positions as isize,
            1,
        );
        let value = Tensor::from_vec(&[out_ch, oh, ow], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                stride,
                cols,
            },
            &[input, kernel],
        )
    }

    /// Adds `bias` (length `shape[axis]`) broadcast along every other axis.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if axis >= sx.len() || sb.len() != 1 || sb[0] != sx[axis] {
            return Err(shape_err("add_bias", sx, sb));
        }
        let inner: usize = sx[axis + 1..].iter().product();
        let extent = sx[axis];
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + b[(i / inner) % extent];
        }
        self.push(out, Op::AddBias { x, bias, axis }, &[x, bias])
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op.name(), ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        self.push(value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square(x), &[x])
    }

    /// 2×2 mean pooling with stride 2 over `[c, h, w]`; odd trailing rows and
    /// columns are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || s[1] < 2 || s[2] < 2 {
            return Err(TensorError::InvalidArgument(format!(
                "avg_pool2 needs [c, h>=2, w>=2], got {s:?}"
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let quarter = T::of(0.25);
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = ch * h * w + 2 * oy * w + 2 * ox;
                    let sum = src[base] + src[base + 1] + src[base + w] + src[base + w + 1];
                    out[ch * oh * ow + oy * ow + ox] = sum * quarter;
                }
            }
        }
        let value = Tensor::from_vec(&[c, oh, ow], out)?;
        self.push(value, Op::AvgPool2(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        self.push(value, Op::Reshape(x), &[x])
    }

    /// Concatenates along axis 0; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of nothing".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(shape_err("concat", self.shape(*first), s));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let value = Tensor::from_vec(&shape, data)?;
        self.push(value, Op::Concat(parts.to_vec()), parts)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// Scales `x` (treated as one flat vector) to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        const MIN_NORM: f64 = 1e-12;
        let norm = self.value(x).norm();
        if norm.as_f64() <= MIN_NORM {
            return Err(TensorError::NearZeroNorm(norm.as_f64()));
        }
        let value = self.value(x).map(|v| v / norm);
        self.push(value, Op::L2Normalize { x, norm }, &[x])
    }

    /// Stabilised `log Σ exp(x)` over all elements.
    pub fn log_sum_exp(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(lse(self.value(x).data())?);
        self.push(value, Op::LogSumExp(x), &[x])
    }

    /// `log_sum_exp(logits) - logits[label]`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let n = self.value(logits).len();
        if label >= n {
            return Err(TensorError::InvalidArgument(format!(
                "label {label} out of range for {n} logits"
            )));
        }
        let mut weights = vec![T::zero(); n];
        weights[label] = T::one();
        self.soft_cross_entropy(logits, &weights)
    }

    /// `Σ_i w_i · (log_sum_exp(logits) - logits[i])`.
    ///
    /// With weights summing to one this is the cross-entropy against the
    /// target distribution `w`.
    pub fn soft_cross_entropy(&mut self, logits: Var, weights: &[T]) -> Result<Var> {
        let x = self.value(logits);
        if weights.len() != x.len() {
            return Err(shape_err("cross_entropy", x.shape(), &[weights.len()]));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(TensorError::InvalidArgument(
                "cross_entropy weights must be finite and non-negative".into(),
            ));
        }
        let l = lse(x.data())?;
        let loss = x
            .data()
            .iter()
            .zip(weights)
            .fold(T::zero(), |acc, (&z, &w)| acc + w * (l - z));
        let value = Tensor::scalar(loss);
        self.push(
            value,
            Op::SoftCrossEntropy {
                logits,
                weights: weights.to_vec(),
            },
            &[logits],
        )
    }

    /// The element at flat `index` as a one-element tensor.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        let v = *t.data().get(index).ok_or_else(|| {
            TensorError::InvalidArgument(format!("index {index} out of range for {:?}", t.shape()))
        })?;
        self.push(Tensor::scalar(v), Op::Pick(x, index), &[x])
    }

    /// Elements `start..start + len` of the flattened `x`, as a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if len == 0 || start + len > t.len() {
            return Err(TensorError::InvalidArgument(format!(
                "slice {start}..{} out of range for {:?}",
                start + len,
                t.shape()
            )));
        }
        let value = Tensor::vector(t.data()[start..start + len].to_vec());
        self.push(value, Op::Slice { x, start }, &[x])
    }

    /// Elementwise wrapped angular error in degrees:
    /// `min(|x - t|, 360 - |x - t|)` with the difference reduced mod 360,
    /// so the result always lies in `[0, 180]`.
    pub fn angle_error(&mut self, x: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if targets.len() != t.len() {
            return Err(shape_err("angle_error", t.shape(), &[targets.len()]));
        }
        let mut data = Vec::with_capacity(t.len());
        let mut slope = Vec::with_capacity(t.len());
        for (&v, &target) in t.data().iter().zip(targets) {
            let d = (v.as_f64() - target).rem_euclid(360.0);
            let (err, s) = if d == 0.0 {
                (0.0, 0.0)
            } else if d < 180.0 {
                (d, 1.0)
            } else if d > 180.0 {
                (360.0 - d, -1.0)
            } else {
                (180.0, 0.0)
            };
            data.push(T::of(err));
            slope.push(T::of(s));
        }
        let value = Tensor::from_vec(t.shape(), data)?;
        self.push(value, Op::AngleError { x, slope }, &[x])
    }

    /// `x · W + b` for a row `x` of shape `[1, n]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_bias(y, bias, 1)
    }

    /// Accumulates `d loss / d node` for every node that requires gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !g.is_finite() {
                return Err(TensorError::NonFinite {
                    op: node.op.name(),
                });
            }
            let contributions = self.vjp(node, &g)?;
            for (var, contrib) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut out = Vec::new();
                if self.requires_grad(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g.data(),
                        n as isize,
                        1,
                        tb.data(),
                        1,
                        n as isize,
                        T::zero(),
                        &mut da,
                        k as isize,
                        1,
                    );
                    out.push((*a, Tensor::from_vec(&[m, k], da)?));
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        ta.data(),
                        1,
                        k as isize,
                        g.data(),
                        n as isize,
                        1,
                        T::zero(),
                        &mut db,
                        n as isize,
                        1,
                    );
                    out.push((*b, Tensor::from_vec(&[k, n], db)?));
                }
                out
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                cols,
            } => {
                let si = self.value(*input).shape().to_vec();
                let sk = self.value(*kernel).shape().to_vec();
                let (c, h, w) = (si[0], si[1], si[2]);
                let out_ch = sk[0];
                let patch = c * 9;
                let positions = g.len() / out_ch;
                let mut out = Vec::new();
                if self.requires_grad(*kernel) {
                    // dK = G · colsᵀ
                    let mut dk = vec![T::zero(); out_ch * patch];
                    T::gemm(
                        out_ch,
                        positions,
                        patch,
                        T::one(),
                        g.data(),
                        positions as isize,
                        1,
                        cols,
                        1,
                        positions as isize,
                        T::zero(),
                        &mut dk,
                        patch as isize,
                        1,
                    );
                    out.push((*kernel, Tensor::from_vec(&sk, dk)?));
                }
                if self.requires_grad(*input) {
                    // dcols = Kᵀ · G, then scatter back.
                    let mut dcols = vec![T::zero(); patch * positions];
                    T::gemm(
                        patch,
                        out_ch,
                        positions,
                        T::one(),
                        self.value(*kernel).data(),
                        1,
                        patch as isize,
                        g.data(),
                        positions as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        positions as isize,
                        1,
                    );
                    let (oh, ow) = conv_out_hw(h, w, *stride);
                    let dx = col2im(&dcols, c, h, w, *stride, oh, ow);
                    out.push((*input, Tensor::from_vec(&si, dx)?));
                }
                out
            }
            Op::AddBias { x, bias, axis } => {
                let sx = self.value(*x).shape();
                let inner: usize = sx[axis + 1..].iter().product();
                let extent = sx[*axis];
                let mut db = vec![T::zero(); extent];
                for (i, &gv) in g.data().iter().enumerate() {
                    let j = (i / inner) % extent;
                    db[j] = db[j] + gv;
                }
                vec![(*x, g.clone()), (*bias, Tensor::vector(db))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = zip_map(g, tb, |gv, bv| gv * bv)?;
                let db = zip_map(g, ta, |gv, av| gv * av)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(x, s) => vec![(*x, g.map(|v| v * *s))],
            Op::Relu(x) => {
                let dx = zip_map(g, self.value(*x), |gv, xv| {
                    if xv > T::zero() {
                        gv
                    } else {
                        T::zero()
                    }
                })?;
                vec![(*x, dx)]
            }
            Op::Square(x) => {
                let two = T::of(2.0);
                vec![(*x, zip_map(g, self.value(*x), |gv, xv| two * xv * gv)?)]
            }
            Op::AvgPool2(x) => {
                let s = self.value(*x).shape().to_vec();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::of(0.25);
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g.data()[ch * oh * ow + oy * ow + ox] * quarter;
                            let base = ch * h * w + 2 * oy * w + 2 * ox;
                            dx[base] = gv;
                            dx[base + 1] = gv;
                            dx[base + w] = gv;
                            dx[base + w + 1] = gv;
                        }
                    }
                }
                vec![(*x, Tensor::from_vec(&s, dx)?)]
            }
            Op::Reshape(x) => vec![(*x, g.reshaped(self.value(*x).shape())?)],
            Op::Concat(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let t = self.value(p);
                    let slice = g.data()[offset..offset + t.len()].to_vec();
                    offset += t.len();
                    out.push((p, Tensor::from_vec(t.shape(), slice)?));
                }
                out
            }
            Op::Sum(x) => vec![(*x, Tensor::full(self.value(*x).shape(), g.item()))],
            Op::L2Normalize { x, norm } => {
                // dx = (g - y (y·g)) / ‖x‖
                let y = &node.value;
                let dot = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                let dx = zip_map(g, y, |gv, yv| (gv - yv * dot) / *norm)?;
                vec![(*x, dx)]
            }
            Op::LogSumExp(x) => {
                let t = self.value(*x);
                let probs = softmax(t.data());
                let gv = g.item();
                let dx = probs.into_iter().map(|p| p * gv).collect();
                vec![(*x, Tensor::from_vec(t.shape(), dx)?)]
            }
            Op::SoftCrossEntropy { logits, weights } => {
                let t = self.value(*logits);
                let probs = softmax(t.data());
                let total = weights.iter().fold(T::zero(), |acc, &w| acc + w);
                let gv = g.item();
                let dx = probs
                    .into_iter()
                    .zip(weights)
                    .map(|(p, &w)| (p * total - w) * gv)
                    .collect();
                vec![(*logits, Tensor::from_vec(t.shape(), dx)?)]
            }
            Op::Pick(x, index) => {
                let t = self.value(*x);
                let mut dx = Tensor::zeros(t.shape());
                dx.data_mut()[*index] = g.item();
                vec![(*x, dx)]
            }
            Op::Slice { x, start } => {
                let t = self.value(*x);
                let mut dx = Tensor::zeros(t.shape());
                dx.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                vec![(*x, dx)]
            }
            Op::AngleError { x, slope } => {
                let s = Tensor::from_vec(g.shape(), slope.clone())?;
                vec![(*x, zip_map(g, &s, |gv, sv| gv * sv)?)]
            }
        };
        Ok(out)
    }
}

fn zip_map<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    ensure_same_shape(a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}

fn lse<T: Element>(x: &[T]) -> Result<T> {
    if x.is_empty() {
        return Err(TensorError::InvalidArgument("log_sum_exp of empty logits".into()));
    }
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let sum = x.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    Ok(max + sum.ln())
}

fn softmax<T: Element>(x: &[T]) -> Vec<T> {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |acc, &v| acc + v);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Output extents of a padded 3×3 convolution.
pub fn conv_out_hw(h: usize, w: usize, stride: usize) -> (usize, usize) {
    ((h - 3 + 2) / stride + 1, (w - 3 + 2) / stride + 1)
}

fn im2col<T: Element>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let positions = oh * ow;
    let mut cols = vec![T::zero(); c * 9 * positions];
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * positions;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = ch * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            cols[row + oy * ow + ox] = src[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let positions = oh * ow;
    let mut dst = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * positions;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = ch * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            let d = &mut dst[dst_row + ix as usize];
                            *d = *d + cols[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    dst
}
