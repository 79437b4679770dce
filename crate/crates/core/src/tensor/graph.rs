//! Tape-style reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the arena order is a
//! topological order and `backward` is a single reverse sweep. Leaf
//! gradients accumulate across `backward` calls until [`Graph::zero_grad`].

use super::conv::{self, dense_taps, ConvGeom};
use super::pool::{self, PoolKind};
use super::resample::{InterpMode, ResamplePlan};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    SumAll(Var),
    MeanAll(Var),
    SumSpatial(Var),
    Reshape(Var),
    AddN(Vec<Var>),
    WeightedSum {
        inputs: Vec<Var>,
        weights: Var,
        index: Vec<usize>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    Conv {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    ConvT {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Resample {
        x: Var,
        plan: ResamplePlan,
    },
    Pool {
        x: Var,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    ScatterLast {
        x: Var,
        index: Vec<usize>,
    },
    CatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation plus accumulated leaf gradients.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape4(op: &'static str, t: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *t {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::dim(op, format!("expected [N,C,H,W], got {t:?}"))),
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
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

    /// Accumulated gradient of a leaf, present after `backward` for every
    /// leaf that requires a gradient.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape(name, ta.shape(), tb.shape())?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((Tensor::new(ta.shape().to_vec(), data)?, self.rg(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let st = T::of(s);
        self.unary(a, Op::Scale(a, s), |x| x * st)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let ct = T::of(c);
        self.unary(a, Op::AddScalar(a), |x| x + ct)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::of(slope);
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { x * s })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    /// `ln(1 + e^x)` evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), |x| {
            let v = x.as_f64();
            T::of(v.max(0.0) + (-v.abs()).exp().ln_1p())
        })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s: T = t.data().iter().copied().sum();
        let m = s / T::of(t.numel() as f64);
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m), Op::MeanAll(a), rg)
    }

    /// `[N, C, H, W] -> [N, C]` by summing each plane.
    pub fn sum_spatial(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = shape4("sum_spatial", self.shape(a))?;
        let plane = h * w;
        let data = self.nodes[a.0]
            .value
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum())
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new([n, c], data)?, Op::SumSpatial(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[a.0].value.clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::dim("add_n", "no inputs"))?;
        let mut acc = self.nodes[first.0].value.clone();
        for v in &inputs[1..] {
            let t = &self.nodes[v.0].value;
            same_shape("add_n", acc.shape(), t.shape())?;
            for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(acc, Op::AddN(inputs.to_vec()), rg))
    }

    /// `sum_i weights[index[i]] * inputs[i]` where `weights` is a vector.
    pub fn weighted_sum(&mut self, inputs: &[Var], weights: Var, index: &[usize]) -> Result<Var> {
        if inputs.is_empty() || inputs.len() != index.len() {
            return Err(Error::dim(
                "weighted_sum",
                format!("{} inputs, {} weight indices", inputs.len(), index.len()),
            ));
        }
        let wv = self.nodes[weights.0].value.data().to_vec();
        if let Some(&bad) = index.iter().find(|&&i| i >= wv.len()) {
            return Err(Error::dim(
                "weighted_sum",
                format!("weight index {bad} out of {}", wv.len()),
            ));
        }
        let shape = self.shape(inputs[0]).to_vec();
        let mut acc = Tensor::zeros(shape.clone());
        for (v, &i) in inputs.iter().zip(index) {
            let t = &self.nodes[v.0].value;
            same_shape("weighted_sum", &shape, t.shape())?;
            let w = wv[i];
            for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += w * b;
            }
        }
        let mut deps = inputs.to_vec();
        deps.push(weights);
        let rg = self.rg(&deps);
        Ok(self.push(
            acc,
            Op::WeightedSum {
                inputs: inputs.to_vec(),
                weights,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    fn last_axis(&self, a: Var) -> usize {
        *self.shape(a).last().expect("tensor has at least one axis")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let n = self.last_axis(a);
        let mut value = self.nodes[a.0].value.clone();
        for row in value.data_mut().chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let n = self.last_axis(a);
        let mut value = self.nodes[a.0].value.clone();
        for row in value.data_mut().chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// `x: [N, Din]`, `w: [Dout, Din]`, `b: [Dout]` -> `x w^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, din) = match *self.shape(x) {
            [n, d] => (n, d),
            ref s => return Err(Error::dim("linear", format!("input must be [N, Din], got {s:?}"))),
        };
        let dout = match *self.shape(w) {
            [o, d] if d == din => o,
            ref s => {
                return Err(Error::dim(
                    "linear",
                    format!("weight {s:?} incompatible with input {:?}", self.shape(x)),
                ))
            }
        };
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::dim("linear", format!("bias {:?}, want [{dout}]", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); n * dout];
        if let Some(b) = b {
            let bv = self.nodes[b.0].value.data();
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        T::gemm(
            n,
            din,
            dout,
            self.nodes[x.0].value.data(),
            din as isize,
            1,
            self.nodes[w.0].value.data(),
            1,
            din as isize,
            if b.is_some() { T::one() } else { T::zero() },
            &mut out,
            dout as isize,
            1,
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Tensor::new([n, dout], out)?, Op::Linear { x, w, b }, rg))
    }

    /// Adds `b[c]` to every element of channel `c` of an `[N, C, H, W]` tensor.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, c, h, w) = shape4("channel_bias", self.shape(x))?;
        if self.shape(b) != [c] {
            return Err(Error::dim("channel_bias", format!("bias {:?}, want [{c}]", self.shape(b))));
        }
        let bv = self.nodes[b.0].value.data().to_vec();
        let mut value = self.nodes[x.0].value.clone();
        for (i, plane) in value.data_mut().chunks_mut(h * w).enumerate() {
            let bc = bv[i % c];
            plane.iter_mut().for_each(|v| *v += bc);
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(value, Op::ChannelBias { x, b }, rg))
    }

    /// Dense 2-D convolution, `x: [N, C, H, W]`, `w: [Co, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, dilation: usize, padding: usize) -> Result<Var> {
        let (_, c, h, wd) = shape4("conv2d", self.shape(x))?;
        let (co, cw, k, k2) = shape4("conv2d", self.shape(w))?;
        if cw != c || k != k2 {
            return Err(Error::dim(
                "conv2d",
                format!("input {:?} vs kernel {:?}", self.shape(x), self.shape(w)),
            ));
        }
        if ![1, 3, 5].contains(&k) || ![1, 2].contains(&dilation) || ![1, 2].contains(&stride) {
            return Err(Error::Config(format!(
                "conv2d supports k in {{1,3,5}}, dilation in {{1,2}}, stride in {{1,2}}; got k={k} d={dilation} s={stride}"
            )));
        }
        let reach = dilation * (k - 1);
        if h + 2 * padding <= reach || wd + 2 * padding <= reach {
            return Err(Error::dim("conv2d", format!("kernel reach {reach} exceeds padded input {h}x{wd}")));
        }
        let ho = (h + 2 * padding - reach - 1) / stride + 1;
        let wo = (wd + 2 * padding - reach - 1) / stride + 1;
        let geom = ConvGeom::new(c, h, wd, ho, wo, stride, dense_taps(k, dilation, padding));
        self.conv_geom(x, w, co, geom)
    }

    /// Convolution over an explicit tap layout, `w: [Co, C, taps]`.
    ///
    /// Output spatial size is `ceil(H / stride)`; taps are input offsets from
    /// `output_position * stride`.
    pub fn conv_taps(&mut self, x: Var, w: Var, taps: &[(isize, isize)], stride: usize) -> Result<Var> {
        let (_, c, h, wd) = shape4("conv_taps", self.shape(x))?;
        let (co, cw, t) = match *self.shape(w) {
            [a, b, t] => (a, b, t),
            ref s => return Err(Error::dim("conv_taps", format!("kernel must be [Co, C, T], got {s:?}"))),
        };
        if cw != c || t != taps.len() {
            return Err(Error::dim(
                "conv_taps",
                format!("input {:?}, kernel {:?}, {} taps", self.shape(x), self.shape(w), taps.len()),
            ));
        }
        let geom = ConvGeom::new(c, h, wd, h.div_ceil(stride), wd.div_ceil(stride), stride, taps.to_vec());
        self.conv_geom(x, w, co, geom)
    }

    fn conv_geom(&mut self, x: Var, w: Var, co: usize, geom: ConvGeom) -> Result<Var> {
        let n = self.shape(x)[0];
        let out = conv::conv_forward(
            self.nodes[x.0].value.data(),
            n,
            self.nodes[w.0].value.data(),
            co,
            &geom,
        );
        let value = Tensor::new([n, co, geom.ho, geom.wo], out)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(value, Op::Conv { x, w, geom }, rg))
    }

    /// 3x3 transposed convolution with `w: [Cin, Cout, 3, 3]`, producing
    /// exactly `stride` times the input resolution.
    pub fn transposed_conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        if stride != 2 && stride != 4 {
            return Err(Error::Config(format!(
                "transposed convolution stride must be 2 or 4, got {stride}"
            )));
        }
        let (n, ci, h, wd) = shape4("transposed_conv2d", self.shape(x))?;
        let (wi, co, k, k2) = shape4("transposed_conv2d", self.shape(w))?;
        if wi != ci || k != 3 || k2 != 3 {
            return Err(Error::dim(
                "transposed_conv2d",
                format!("input {:?} vs kernel {:?}", self.shape(x), self.shape(w)),
            ));
        }
        // adjoint of a stride-s, padding-1 convolution from (s*h, s*w) to (h, w)
        let geom = ConvGeom::new(co, stride * h, stride * wd, h, wd, stride, dense_taps(3, 1, 1));
        let out = conv::conv_t_forward(
            self.nodes[x.0].value.data(),
            n,
            self.nodes[w.0].value.data(),
            ci,
            &geom,
        );
        let value = Tensor::new([n, co, stride * h, stride * wd], out)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(value, Op::ConvT { x, w, geom }, rg))
    }

    pub fn interpolate(&mut self, x: Var, scale: usize, mode: InterpMode) -> Result<Var> {
        if scale != 2 && scale != 4 {
            return Err(Error::Config(format!("interpolation scale must be 2 or 4, got {scale}")));
        }
        let (n, c, h, w) = shape4("interpolate", self.shape(x))?;
        let plan = ResamplePlan::new(h, w, scale, mode);
        let out = plan.forward(self.nodes[x.0].value.data(), n * c);
        let value = Tensor::new([n, c, h * scale, w * scale], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Resample { x, plan }, rg))
    }

    /// 2x2 pooling with stride 2.
    pub fn pool2d(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let (n, c, h, w) = shape4("pool2d", self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim("pool2d", format!("spatial dims must be even, got {h}x{w}")));
        }
        let (out, argmax) = pool::pool_forward(self.nodes[x.0].value.data(), n * c, h, w, kind);
        let value = Tensor::new([n, c, h / 2, w / 2], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Pool { x, kind, argmax }, rg))
    }

    /// Places the last axis of `x` at positions `index` of a zero tensor whose
    /// last axis has length `len`.
    pub fn scatter_last(&mut self, x: Var, index: &[usize], len: usize) -> Result<Var> {
        let inner = self.last_axis(x);
        if inner != index.len() || index.iter().any(|&i| i >= len) {
            return Err(Error::dim(
                "scatter_last",
                format!("last axis {inner}, {} indices into {len}", index.len()),
            ));
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = len;
        let mut out = Tensor::zeros(shape);
        for (dst, src) in out
            .data_mut()
            .chunks_mut(len)
            .zip(self.nodes[x.0].value.data().chunks(inner))
        {
            for (&i, &v) in index.iter().zip(src) {
                dst[i] = v;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::ScatterLast {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    pub fn cat_rows(&mut self, inputs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = Tensor::cat_rows(&parts)?;
        let rg = self.rg(inputs);
        Ok(self.push(value, Op::CatRows(inputs.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.nodes[x.0].value.slice_rows(start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceRows { x, start }, rg))
    }

    fn slot(&self, grads: &mut [Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.numel()]),
        )
    }

    fn restore(grads: &mut [Option<Vec<T>>], v: Var, g: Option<Vec<T>>) {
        let Some(g) = g else { return };
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_map(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl Fn(usize) -> T) {
        if let Some(mut g) = self.slot(grads, v) {
            g.iter_mut().enumerate().for_each(|(i, a)| *a += f(i));
            Self::restore(grads, v, Some(g));
        }
    }

    /// Reverse sweep from a scalar loss. Every leaf that requires a gradient
    /// receives one (zeros if it did not participate); repeated calls add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if matches!(self.nodes[id].op, Op::Leaf) {
                let shape = self.nodes[id].value.shape().to_vec();
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(Tensor::new(shape, g)?),
                }
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
        }
        for (node, lg) in self.nodes.iter().zip(self.leaf_grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && lg.is_none() {
                *lg = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(())
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                self.acc_map(grads, *a, |i| g[i]);
                self.acc_map(grads, *b, |i| g[i]);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, |i| g[i]);
                self.acc_map(grads, *b, |i| -g[i]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.acc_map(grads, *a, |i| g[i] * vb[i]);
                self.acc_map(grads, *b, |i| g[i] * va[i]);
            }
            Op::Scale(a, s) => {
                let s = T::of(*s);
                self.acc_map(grads, *a, |i| g[i] * s);
            }
            Op::AddScalar(a) | Op::Reshape(a) => self.acc_map(grads, *a, |i| g[i]),
            Op::Relu(a) => {
                let va = val(*a);
                self.acc_map(grads, *a, |i| if va[i] > T::zero() { g[i] } else { T::zero() });
            }
            Op::LeakyRelu(a, slope) => {
                let (va, s) = (val(*a), T::of(*slope));
                self.acc_map(grads, *a, |i| if va[i] > T::zero() { g[i] } else { g[i] * s });
            }
            Op::Tanh(a) => self.acc_map(grads, *a, |i| g[i] * (T::one() - y[i] * y[i])),
            Op::Exp(a) => self.acc_map(grads, *a, |i| g[i] * y[i]),
            Op::Log(a) => {
                let va = val(*a);
                self.acc_map(grads, *a, |i| g[i] / va[i]);
            }
            Op::Softplus(a) => {
                let va = val(*a);
                self.acc_map(grads, *a, |i| g[i] * T::of(sigmoid(va[i].as_f64())));
            }
            Op::SumAll(a) => self.acc_map(grads, *a, |_| g[0]),
            Op::MeanAll(a) => {
                let n = T::of(val(*a).len() as f64);
                self.acc_map(grads, *a, |_| g[0] / n);
            }
            Op::SumSpatial(a) => {
                let s = self.shape(*a);
                let plane = s[2] * s[3];
                self.acc_map(grads, *a, |i| g[i / plane]);
            }
            Op::AddN(inputs) => {
                for v in inputs {
                    self.acc_map(grads, *v, |i| g[i]);
                }
            }
            Op::WeightedSum {
                inputs,
                weights,
                index,
            } => {
                let wv = val(*weights);
                for (v, &k) in inputs.iter().zip(index) {
                    let wk = wv[k];
                    self.acc_map(grads, *v, |i| g[i] * wk);
                }
                if let Some(mut gw) = self.slot(grads, *weights) {
                    for (v, &k) in inputs.iter().zip(index) {
                        gw[k] += val(*v).iter().zip(g).map(|(&a, &b)| a * b).sum::<T>();
                    }
                    Self::restore(grads, *weights, Some(gw));
                }
            }
            Op::Softmax(a) => {
                if let Some(mut ga) = self.slot(grads, *a) {
                    let n = *node.value.shape().last().unwrap();
                    for ((dst, yr), gr) in ga.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for i in 0..n {
                            dst[i] += yr[i] * (gr[i] - dot);
                        }
                    }
                    Self::restore(grads, *a, Some(ga));
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(mut ga) = self.slot(grads, *a) {
                    let n = *node.value.shape().last().unwrap();
                    for ((dst, yr), gr) in ga.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let total: T = gr.iter().copied().sum();
                        for i in 0..n {
                            dst[i] += gr[i] - yr[i].exp() * total;
                        }
                    }
                    Self::restore(grads, *a, Some(ga));
                }
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[0];
                if let Some(mut gx) = self.slot(grads, *x) {
                    // dx = g w
                    T::gemm(n, dout, din, g, dout as isize, 1, val(*w), din as isize, 1, T::one(), &mut gx, din as isize, 1);
                    Self::restore(grads, *x, Some(gx));
                }
                if let Some(mut gw) = self.slot(grads, *w) {
                    // dw = g^T x
                    T::gemm(dout, n, din, g, 1, dout as isize, val(*x), din as isize, 1, T::one(), &mut gw, din as isize, 1);
                    Self::restore(grads, *w, Some(gw));
                }
                if let Some(b) = b {
                    if let Some(mut gb) = self.slot(grads, *b) {
                        for row in g.chunks(dout) {
                            gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                        Self::restore(grads, *b, Some(gb));
                    }
                }
            }
            Op::ChannelBias { x, b } => {
                self.acc_map(grads, *x, |i| g[i]);
                if let Some(mut gb) = self.slot(grads, *b) {
                    let s = self.shape(*x);
                    let (c, plane) = (s[1], s[2] * s[3]);
                    for (i, p) in g.chunks(plane).enumerate() {
                        gb[i % c] += p.iter().copied().sum::<T>();
                    }
                    Self::restore(grads, *b, Some(gb));
                }
            }
            Op::Conv { x, w, geom } => {
                let n = self.shape(*x)[0];
                let co = self.shape(*w)[0];
                let mut gx = self.slot(grads, *x);
                let mut gw = self.slot(grads, *w);
                conv::conv_backward(val(*x), n, val(*w), co, geom, g, gx.as_deref_mut(), gw.as_deref_mut());
                Self::restore(grads, *x, gx);
                Self::restore(grads, *w, gw);
            }
            Op::ConvT { x, w, geom } => {
                let n = self.shape(*x)[0];
                let ci = self.shape(*x)[1];
                let mut gx = self.slot(grads, *x);
                let mut gw = self.slot(grads, *w);
                conv::conv_t_backward(val(*x), n, val(*w), ci, geom, g, gx.as_deref_mut(), gw.as_deref_mut());
                Self::restore(grads, *x, gx);
                Self::restore(grads, *w, gw);
            }
            Op::Resample { x, plan } => {
                if let Some(mut gx) = self.slot(grads, *x) {
                    let s = self.shape(*x);
                    plan.backward(g, s[0] * s[1], &mut gx);
                    Self::restore(grads, *x, Some(gx));
                }
            }
            Op::Pool { x, kind, argmax } => {
                if let Some(mut gx) = self.slot(grads, *x) {
                    let s = self.shape(*x);
                    pool::pool_backward(g, s[0] * s[1], s[2], s[3], *kind, argmax, &mut gx);
                    Self::restore(grads, *x, Some(gx));
                }
            }
            Op::ScatterLast { x, index } => {
                let len = *node.value.shape().last().unwrap();
                let inner = index.len();
                self.acc_map(grads, *x, |i| g[(i / inner) * len + index[i % inner]]);
            }
            Op::CatRows(inputs) => {
                let mut offset = 0;
                for v in inputs {
                    let n = self.nodes[v.0].value.numel();
                    self.acc_map(grads, *v, |i| g[offset + i]);
                    offset += n;
                }
            }
            Op::SliceRows { x, start } => {
                let s = self.shape(*x);
                let row: usize = s[1..].iter().product();
                let (lo, hi) = (start * row, start * row + g.len());
                self.acc_map(grads, *x, |i| if i >= lo && i < hi { g[i - lo] } else { T::zero() });
            }
        }
    }
}
