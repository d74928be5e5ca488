//! Wengert-list reverse-mode autodiff.
//!
//! Every primitive appends one node holding its output value and, when any
//! input requires a gradient, the inputs and saved context its backward rule
//! needs. Nodes are only ever appended, so the list is already in
//! topological order and [`Tape::backward`] is a single reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::conv::{self, CausalGeom, Conv2dGeom};
use super::gemm::{gemm, Transpose};
use super::{split_axis, strides, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Per-channel statistics of a training-mode batch-norm call, used to update
/// running estimates. `var` is the unbiased estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Expand(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Matmul(Var, Var),
    Bmm(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeom,
    },
    CausalConv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: CausalGeom,
    },
    WeightNorm {
        v: Var,
        g: Var,
        norms: Vec<f32>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f32>,
        inv_std: Vec<f32>,
        train: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Relu(Var),
    Silu(Var),
    Gelu(Var),
    Dropout(Var, Vec<f32>),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed primitives.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; nothing on it requires a gradient.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Tape::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Element count of the largest value recorded so far.
    pub fn peak_numel(&self) -> usize {
        self.nodes.iter().map(|n| n.value.numel()).max().unwrap_or(0)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        self.var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn var(&self, idx: usize) -> Var {
        Var { tape: self.id, idx }
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "Var used with a tape that did not create it");
        &self.nodes[v.idx]
    }

    fn data(&self, v: Var) -> &[f32] {
        self.node(v).value.data()
    }

    fn any_grad(&self, inputs: &[Var]) -> bool {
        self.grad_enabled && inputs.iter().any(|&v| self.node(v).requires_grad)
    }

    fn push(&mut self, name: &str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name.to_string() });
        }
        let requires_grad = self.any_grad(inputs);
        self.nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
        });
        Ok(self.var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        self.push(op, value, &[a, b], node)
    }

    fn map(&mut self, op: &'static str, a: Var, f: impl Fn(f32) -> f32, node: Op) -> Result<Var> {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        self.push(op, value, &[a], node)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var> {
        self.map("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Result<Var> {
        self.map("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    /// Broadcast size-1 dimensions of `a` up to `shape` (ranks must agree).
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        if src.len() != shape.len() || src.iter().zip(shape).any(|(&s, &t)| s != t && s != 1) {
            return Err(Error::shape("expand", format!("{src:?} -> {shape:?}")));
        }
        let src_strides = broadcast_strides(&src, shape);
        let x = self.data(a);
        let mut out = vec![0.0f32; shape.iter().product()];
        visit_strided(shape, &src_strides, |o, s| out[o] = x[s]);
        self.push("expand", Tensor::from_parts(shape.to_vec(), out), &[a], Op::Expand(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push("reshape", value, &[a], Op::Reshape(a))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        let mut seen = vec![false; src.len()];
        if axes.len() != src.len()
            || axes
                .iter()
                .any(|&ax| ax >= src.len() || std::mem::replace(&mut seen[ax], true))
        {
            return Err(Error::shape("permute", format!("axes {axes:?} for shape {src:?}")));
        }
        let in_strides = strides(&src);
        let out_shape: Vec<usize> = axes.iter().map(|&ax| src[ax]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
        let x = self.data(a);
        let mut out = vec![0.0f32; x.len()];
        visit_strided(&out_shape, &src_strides, |o, s| out[o] = x[s]);
        self.push(
            "permute",
            Tensor::from_parts(out_shape, out),
            &[a],
            Op::Permute(a, axes.to_vec()),
        )
    }

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0f32; m * n];
        gemm(
            Transpose::No,
            Transpose::No,
            m,
            n,
            k,
            1.0,
            self.data(a),
            self.data(b),
            0.0,
            &mut out,
        );
        self.push("matmul", Tensor::from_parts(vec![m, n], out), &[a, b], Op::Matmul(a, b))
    }

    /// Batched matmul `[B, m, k] · [B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("bmm", format!("{sa:?} x {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (x, y) = (self.data(a), self.data(b));
        let mut out = vec![0.0f32; bs * m * n];
        for i in 0..bs {
            gemm(
                Transpose::No,
                Transpose::No,
                m,
                n,
                k,
                1.0,
                &x[i * m * k..(i + 1) * m * k],
                &y[i * k * n..(i + 1) * k * n],
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.push("bmm", Tensor::from_parts(vec![bs, m, n], out), &[a, b], Op::Bmm(a, b))
    }

    /// Affine map over the last axis: `x[.., in] · wᵀ + b` with `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let in_dim = *sx.last().unwrap_or(&0);
        if sw.len() != 2 || sx.is_empty() || sw[1] != in_dim {
            return Err(Error::shape("linear", format!("input {sx:?}, weight {sw:?}")));
        }
        let out_dim = sw[0];
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} for {out_dim} outputs", self.shape(b)),
                ));
            }
        }
        let rows = self.value(x).numel() / in_dim;
        let mut out = vec![0.0f32; rows * out_dim];
        gemm(
            Transpose::No,
            Transpose::Yes,
            rows,
            out_dim,
            in_dim,
            1.0,
            self.data(x),
            self.data(w),
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bias = self.data(b);
            for row in out.chunks_exact_mut(out_dim) {
                for (o, &bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = out_dim;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            "linear",
            Tensor::from_parts(shape, out),
            &inputs,
            Op::Linear { x, w, b },
        )
    }

    /// 2-D cross-correlation over `[N, Cin, H, W]` with weight `[Cout, Cin/groups, Kh, Kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
        dilation: (usize, usize),
        groups: usize,
    ) -> Result<Var> {
        let geom = Conv2dGeom::new(self.shape(x), self.shape(w), stride, padding, dilation, groups)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} for {} channels", self.shape(b), geom.cout),
                ));
            }
        }
        let out = conv::conv2d_forward(&geom, self.data(x), self.data(w), b.map(|b| self.data(b)));
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        let value = Tensor::from_parts(geom.out_shape(), out);
        self.push("conv2d", value, &inputs, Op::Conv2d { x, w, b, geom })
    }

    /// Causal dilated convolution `[N, Cin, T] -> [N, Cout, T]`; output at `t`
    /// reads inputs at `t - j·dilation` for `j = 0..K` only.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize) -> Result<Var> {
        let geom = CausalGeom::new(self.shape(x), self.shape(w), dilation)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.cout] {
                return Err(Error::shape(
                    "causal_conv1d",
                    format!("bias {:?} for {} channels", self.shape(b), geom.cout),
                ));
            }
        }
        let out = conv::causal_forward(&geom, self.data(x), self.data(w), b.map(|b| self.data(b)));
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        let value = Tensor::from_parts(vec![geom.n, geom.cout, geom.t], out);
        self.push("causal_conv1d", value, &inputs, Op::CausalConv1d { x, w, b, geom })
    }

    /// Effective weight `g · v / ‖v‖`, norm taken per slice along axis 0.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let sv = self.shape(v).to_vec();
        if sv.is_empty() || self.shape(g) != [sv[0]] {
            return Err(Error::shape(
                "weight_norm",
                format!("direction {sv:?}, magnitude {:?}", self.shape(g)),
            ));
        }
        let row = self.value(v).numel() / sv[0];
        let (vd, gd) = (self.data(v), self.data(g));
        let mut out = vec![0.0f32; vd.len()];
        let mut norms = Vec::with_capacity(sv[0]);
        for (r, (dst, src)) in out.chunks_exact_mut(row).zip(vd.chunks_exact(row)).enumerate() {
            let norm = src.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt() as f32;
            let s = gd[r] / norm;
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = x * s;
            }
            norms.push(norm);
        }
        self.push(
            "weight_norm",
            Tensor::from_parts(sv, out),
            &[v, g],
            Op::WeightNorm { v, g, norms },
        )
    }

    /// Batch normalization over axis 1 of `[N, C, ..]`.
    ///
    /// With `running = None` the batch statistics are used and returned;
    /// otherwise the given running mean/variance are applied.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f32], &[f32])>,
        eps: f32,
    ) -> Result<(Var, Option<BatchStats>)> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "input {sx:?}, gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let (n, c) = (sx[0], sx[1]);
        let inner: usize = sx[2..].iter().product();
        let count = (n * inner) as f64;
        let xd = self.data(x);
        let (mean, inv_std, stats) = match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return Err(Error::shape("batch_norm", "running statistics length"));
                }
                let inv: Vec<f32> = rv.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
                (rm.to_vec(), inv, None)
            }
            None => {
                let mut mean = vec![0.0f32; c];
                let mut var_b = vec![0.0f32; c];
                let mut var_u = vec![0.0f32; c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for b in 0..n {
                        let start = (b * c + ch) * inner;
                        s += xd[start..start + inner].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let mu = s / count;
                    let mut ss = 0.0f64;
                    for b in 0..n {
                        let start = (b * c + ch) * inner;
                        ss += xd[start..start + inner]
                            .iter()
                            .map(|&v| (v as f64 - mu).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = mu as f32;
                    var_b[ch] = (ss / count) as f32;
                    var_u[ch] = if count > 1.0 {
                        (ss / (count - 1.0)) as f32
                    } else {
                        var_b[ch]
                    };
                }
                let inv: Vec<f32> = var_b.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var_u,
                };
                (mean, inv, Some(stats))
            }
        };
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let mut out = vec![0.0f32; xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let start = (b * c + ch) * inner;
                let (mu, inv, g, bt) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
                for (o, &v) in out[start..start + inner].iter_mut().zip(&xd[start..start + inner]) {
                    *o = (v - mu) * inv * g + bt;
                }
            }
        }
        let train = running.is_none();
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
            train,
        };
        let var = self.push("batch_norm", Tensor::from_parts(sx, out), &[x, gamma, beta], op)?;
        Ok((var, stats))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().unwrap_or(&0);
        if sx.is_empty() || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("input {sx:?}, gamma {:?}", self.shape(gamma)),
            ));
        }
        let xd = self.data(x);
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let rows = xd.len() / d;
        let mut out = vec![0.0f32; xd.len()];
        let mut mean = Vec::with_capacity(rows);
        let mut inv_std = Vec::with_capacity(rows);
        for (src, dst) in xd.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let mu = src.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = src.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / d as f64;
            let inv = (1.0 / (var + eps as f64).sqrt()) as f32;
            let mu = mu as f32;
            for (i, (o, &v)) in dst.iter_mut().zip(src).enumerate() {
                *o = (v - mu) * inv * gd[i] + bd[i];
            }
            mean.push(mu);
            inv_std.push(inv);
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
        };
        self.push("layer_norm", Tensor::from_parts(sx, out), &[x, gamma, beta], op)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.map("silu", a, |x| x * sigmoid(x), Op::Silu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.map("gelu", a, |x| 0.5 * x * (1.0 + gelu_inner(x).tanh()), Op::Gelu(a))
    }

    /// Inverted dropout: each element is zeroed with probability `drop_prob`
    /// and survivors are scaled by `1 / (1 - drop_prob)`. Identity when
    /// `train` is false.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, drop_prob: f32, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&drop_prob) {
            return Err(Error::Contract(format!(
                "dropout probability {drop_prob} outside [0, 1)"
            )));
        }
        if !train || drop_prob == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - drop_prob);
        let mask: Vec<f32> = (0..self.value(a).numel())
            .map(|_| {
                if rng.random::<f32>() < drop_prob {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = self.data(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        self.push("dropout", value, &[a], Op::Dropout(a, mask))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<(usize, usize, usize)> {
        let s = self.shape(a);
        if axis >= s.len() {
            return Err(Error::shape(op, format!("axis {axis} for shape {s:?}")));
        }
        Ok(split_axis(s, axis))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = self.check_axis("softmax", a, axis)?;
        let mut out = self.data(a).to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| out[idx(k)]).fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0f64;
                for k in 0..len {
                    let e = (out[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    sum += e as f64;
                }
                let inv = (1.0 / sum) as f32;
                for k in 0..len {
                    out[idx(k)] *= inv;
                }
            }
        }
        let value = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push("softmax", value, &[a], Op::Softmax(a, axis))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = self.check_axis("log_softmax", a, axis)?;
        let mut out = self.data(a).to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| out[idx(k)]).fold(f32::NEG_INFINITY, f32::max);
                let sum: f64 = (0..len).map(|k| ((out[idx(k)] - max) as f64).exp()).sum();
                let shift = max + sum.ln() as f32;
                for k in 0..len {
                    out[idx(k)] -= shift;
                }
            }
        }
        let value = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push("log_softmax", value, &[a], Op::LogSoftmax(a, axis))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().map(|&v| v as f64).sum::<f64>();
        self.push("sum", Tensor::scalar(s as f32), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let d = self.data(a);
        let s = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        self.push("mean", Tensor::scalar(s as f32), &[a], Op::Mean(a))
    }

    fn reduce_axis(&self, a: Var, axis: usize, scale: f64) -> (Vec<usize>, Vec<f32>) {
        let shape = self.shape(a);
        let (outer, len, inner) = split_axis(shape, axis);
        let x = self.data(a);
        let mut out = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..len).map(|k| x[(o * len + k) * inner + i] as f64).sum();
                out[o * inner + i] = (s * scale) as f32;
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        (out_shape, out)
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", a, axis)?;
        let (shape, out) = self.reduce_axis(a, axis, 1.0);
        self.push("sum_axis", Tensor::from_parts(shape, out), &[a], Op::SumAxis(a, axis))
    }

    /// Mean along `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (_, len, _) = self.check_axis("mean_axis", a, axis)?;
        let (shape, out) = self.reduce_axis(a, axis, 1.0 / len as f64);
        self.push("mean_axis", Tensor::from_parts(shape, out), &[a], Op::MeanAxis(a, axis))
    }

    /// Gradients of the scalar `root` with respect to every node that
    /// requires one. Each node's rule runs exactly once, in reverse order.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_node = self.node(root);
        if root_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward from non-scalar root of shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root_node.requires_grad {
            return Ok(Gradients {
                tape: self.id,
                grads: vec![None; self.nodes.len()],
                shapes: Vec::new(),
            });
        }
        grads[root.idx] = Some(vec![1.0]);
        for idx in (0..=root.idx).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.apply_rule(node, &dy, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            tape: self.id,
            grads: grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| g.filter(|_| matches!(self.nodes[i].op, Op::Leaf)))
                .collect(),
            shapes,
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.idx] {
            Some(acc) => {
                for (a, x) in acc.iter_mut().zip(&g) {
                    *a += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn apply_rule(&self, node: &Node, dy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(grads, a, dy.to_vec());
                self.accumulate(grads, b, dy.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, dy.to_vec());
                self.accumulate(grads, b, dy.iter().map(|g| -g).collect());
            }
            &Op::Mul(a, b) => {
                let (x, z) = (self.data(a), self.data(b));
                if self.wants(a) {
                    self.accumulate(grads, a, dy.iter().zip(z).map(|(g, v)| g * v).collect());
                }
                if self.wants(b) {
                    self.accumulate(grads, b, dy.iter().zip(x).map(|(g, v)| g * v).collect());
                }
            }
            &Op::Scale(a, c) => self.accumulate(grads, a, dy.iter().map(|g| g * c).collect()),
            &Op::AddScalar(a) | &Op::Reshape(a) => self.accumulate(grads, a, dy.to_vec()),
            &Op::Expand(a) => {
                let src = self.shape(a);
                let src_strides = broadcast_strides(src, node.value.shape());
                let mut dx = vec![0.0f32; self.value(a).numel()];
                visit_strided(node.value.shape(), &src_strides, |o, s| dx[s] += dy[o]);
                self.accumulate(grads, a, dx);
            }
            Op::Permute(a, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let out_strides = strides(node.value.shape());
                let src_strides: Vec<usize> = inverse.iter().map(|&i| out_strides[i]).collect();
                let mut dx = vec![0.0f32; dy.len()];
                visit_strided(self.shape(*a), &src_strides, |o, s| dx[o] = dy[s]);
                self.accumulate(grads, *a, dx);
            }
            &Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(a) {
                    let mut da = vec![0.0f32; m * k];
                    gemm(
                        Transpose::No,
                        Transpose::Yes,
                        m,
                        k,
                        n,
                        1.0,
                        dy,
                        self.data(b),
                        0.0,
                        &mut da,
                    );
                    self.accumulate(grads, a, da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0f32; k * n];
                    gemm(
                        Transpose::Yes,
                        Transpose::No,
                        k,
                        n,
                        m,
                        1.0,
                        self.data(a),
                        dy,
                        0.0,
                        &mut db,
                    );
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Bmm(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (x, z) = (self.data(a), self.data(b));
                if self.wants(a) {
                    let mut da = vec![0.0f32; bs * m * k];
                    for i in 0..bs {
                        gemm(
                            Transpose::No,
                            Transpose::Yes,
                            m,
                            k,
                            n,
                            1.0,
                            &dy[i * m * n..(i + 1) * m * n],
                            &z[i * k * n..(i + 1) * k * n],
                            0.0,
                            &mut da[i * m * k..(i + 1) * m * k],
                        );
                    }
                    self.accumulate(grads, a, da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0f32; bs * k * n];
                    for i in 0..bs {
                        gemm(
                            Transpose::Yes,
                            Transpose::No,
                            k,
                            n,
                            m,
                            1.0,
                            &x[i * m * k..(i + 1) * m * k],
                            &dy[i * m * n..(i + 1) * m * n],
                            0.0,
                            &mut db[i * k * n..(i + 1) * k * n],
                        );
                    }
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Linear { x, w, b } => {
                let sw = self.shape(w);
                let (out_dim, in_dim) = (sw[0], sw[1]);
                let rows = dy.len() / out_dim;
                if self.wants(x) {
                    let mut dx = vec![0.0f32; rows * in_dim];
                    gemm(
                        Transpose::No,
                        Transpose::No,
                        rows,
                        in_dim,
                        out_dim,
                        1.0,
                        dy,
                        self.data(w),
                        0.0,
                        &mut dx,
                    );
                    self.accumulate(grads, x, dx);
                }
                if self.wants(w) {
                    let mut dw = vec![0.0f32; out_dim * in_dim];
                    gemm(
                        Transpose::Yes,
                        Transpose::No,
                        out_dim,
                        in_dim,
                        rows,
                        1.0,
                        dy,
                        self.data(x),
                        0.0,
                        &mut dw,
                    );
                    self.accumulate(grads, w, dw);
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    self.accumulate(grads, b, conv::channel_sums(dy, rows, out_dim, 1));
                }
            }
            &Op::Conv2d { x, w, b, ref geom } => {
                let need = (self.wants(x), self.wants(w), b.is_some_and(|b| self.wants(b)));
                let g = conv::conv2d_backward(geom, self.data(x), self.data(w), dy, need);
                self.scatter_conv(grads, x, w, b, g);
            }
            &Op::CausalConv1d { x, w, b, ref geom } => {
                let need = (self.wants(x), self.wants(w), b.is_some_and(|b| self.wants(b)));
                let g = conv::causal_backward(geom, self.data(x), self.data(w), dy, need);
                self.scatter_conv(grads, x, w, b, g);
            }
            &Op::WeightNorm { v, g, ref norms } => {
                let vd = self.data(v);
                let gd = self.data(g);
                let row = vd.len() / norms.len();
                let mut dv = vec![0.0f32; vd.len()];
                let mut dg = vec![0.0f32; norms.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let span = r * row..(r + 1) * row;
                    let (vr, dyr) = (&vd[span.clone()], &dy[span.clone()]);
                    let dot = vr.iter().zip(dyr).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / norm as f64;
                    dg[r] = dot as f32;
                    let s = gd[r] / norm;
                    let proj = (dot / norm as f64) as f32;
                    for ((d, &vv), &gy) in dv[span].iter_mut().zip(vr).zip(dyr) {
                        *d = s * (gy - proj * vv);
                    }
                }
                self.accumulate(grads, v, dv);
                self.accumulate(grads, g, dg);
            }
            &Op::BatchNorm {
                x,
                gamma,
                beta,
                ref mean,
                ref inv_std,
                train,
            } => {
                let sx = self.shape(x);
                let (n, c) = (sx[0], sx[1]);
                let inner: usize = sx[2..].iter().product();
                let count = (n * inner) as f64;
                let xd = self.data(x);
                let gd = self.data(gamma);
                let xhat = |i: usize, ch: usize| (xd[i] - mean[ch]) * inv_std[ch];
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dy_xhat = vec![0.0f64; c];
                for b in 0..n {
                    for ch in 0..c {
                        let start = (b * c + ch) * inner;
                        for i in start..start + inner {
                            sum_dy[ch] += dy[i] as f64;
                            sum_dy_xhat[ch] += dy[i] as f64 * xhat(i, ch) as f64;
                        }
                    }
                }
                if self.wants(x) {
                    let mut dx = vec![0.0f32; xd.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let start = (b * c + ch) * inner;
                            let k = gd[ch] * inv_std[ch];
                            if train {
                                let m1 = (sum_dy[ch] / count) as f32;
                                let m2 = (sum_dy_xhat[ch] / count) as f32;
                                for i in start..start + inner {
                                    dx[i] = k * (dy[i] - m1 - xhat(i, ch) * m2);
                                }
                            } else {
                                for i in start..start + inner {
                                    dx[i] = k * dy[i];
                                }
                            }
                        }
                    }
                    self.accumulate(grads, x, dx);
                }
                self.accumulate(grads, gamma, sum_dy_xhat.iter().map(|&v| v as f32).collect());
                self.accumulate(grads, beta, sum_dy.iter().map(|&v| v as f32).collect());
            }
            &Op::LayerNorm {
                x,
                gamma,
                beta,
                ref mean,
                ref inv_std,
            } => {
                let xd = self.data(x);
                let gd = self.data(gamma);
                let d = gd.len();
                let mut dx = vec![0.0f32; xd.len()];
                let mut dgamma = vec![0.0f64; d];
                let mut dbeta = vec![0.0f64; d];
                for (r, ((src, gy), dst)) in xd
                    .chunks_exact(d)
                    .zip(dy.chunks_exact(d))
                    .zip(dx.chunks_exact_mut(d))
                    .enumerate()
                {
                    let (mu, inv) = (mean[r], inv_std[r]);
                    let mut s1 = 0.0f64;
                    let mut s2 = 0.0f64;
                    for i in 0..d {
                        let xh = (src[i] - mu) * inv;
                        let dxh = gy[i] * gd[i];
                        s1 += dxh as f64;
                        s2 += dxh as f64 * xh as f64;
                        dgamma[i] += gy[i] as f64 * xh as f64;
                        dbeta[i] += gy[i] as f64;
                    }
                    let (m1, m2) = ((s1 / d as f64) as f32, (s2 / d as f64) as f32);
                    for i in 0..d {
                        let xh = (src[i] - mu) * inv;
                        dst[i] = inv * (gy[i] * gd[i] - m1 - xh * m2);
                    }
                }
                self.accumulate(grads, x, dx);
                self.accumulate(grads, gamma, dgamma.iter().map(|&v| v as f32).collect());
                self.accumulate(grads, beta, dbeta.iter().map(|&v| v as f32).collect());
            }
            &Op::Relu(a) => {
                let dx = dy.iter().zip(y).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect();
                self.accumulate(grads, a, dx);
            }
            &Op::Silu(a) => {
                let dx = dy
                    .iter()
                    .zip(self.data(a))
                    .map(|(&g, &x)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                self.accumulate(grads, a, dx);
            }
            &Op::Gelu(a) => {
                let dx = dy.iter().zip(self.data(a)).map(|(&g, &x)| g * gelu_grad(x)).collect();
                self.accumulate(grads, a, dx);
            }
            Op::Dropout(a, mask) => {
                self.accumulate(grads, *a, dy.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
            &Op::Softmax(a, axis) => {
                let (outer, len, inner) = split_axis(node.value.shape(), axis);
                let mut dx = vec![0.0f32; dy.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| dy[idx(k)] as f64 * y[idx(k)] as f64).sum();
                        let dot = dot as f32;
                        for k in 0..len {
                            dx[idx(k)] = y[idx(k)] * (dy[idx(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, a, dx);
            }
            &Op::LogSoftmax(a, axis) => {
                let (outer, len, inner) = split_axis(node.value.shape(), axis);
                let mut dx = vec![0.0f32; dy.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let total: f64 = (0..len).map(|k| dy[idx(k)] as f64).sum();
                        let total = total as f32;
                        for k in 0..len {
                            dx[idx(k)] = dy[idx(k)] - y[idx(k)].exp() * total;
                        }
                    }
                }
                self.accumulate(grads, a, dx);
            }
            &Op::Sum(a) => self.accumulate(grads, a, vec![dy[0]; self.value(a).numel()]),
            &Op::Mean(a) => {
                let n = self.value(a).numel();
                self.accumulate(grads, a, vec![dy[0] / n as f32; n]);
            }
            &Op::SumAxis(a, axis) | &Op::MeanAxis(a, axis) => {
                let (outer, len, inner) = split_axis(self.shape(a), axis);
                let scale = match node.op {
                    Op::MeanAxis(..) => 1.0 / len as f32,
                    _ => 1.0,
                };
                let mut dx = vec![0.0f32; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let dst = &mut dx[(o * len + k) * inner..(o * len + k + 1) * inner];
                        for (d, &g) in dst.iter_mut().zip(&dy[o * inner..(o + 1) * inner]) {
                            *d = g * scale;
                        }
                    }
                }
                self.accumulate(grads, a, dx);
            }
        }
    }

    fn scatter_conv(&self, grads: &mut [Option<Vec<f32>>], x: Var, w: Var, b: Option<Var>, g: conv::ConvGrads) {
        if let Some(dx) = g.dx {
            self.accumulate(grads, x, dx);
        }
        if let Some(dw) = g.dw {
            self.accumulate(grads, w, dw);
        }
        if let (Some(b), Some(db)) = (b, g.db) {
            self.accumulate(grads, b, db);
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if the leaf does not require one or is
    /// not connected to the root.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        assert_eq!(v.tape, self.tape, "Var from a different tape");
        self.grads[v.idx]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.idx].clone(), g.clone()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        assert_eq!(v.tape, self.tape, "Var from a different tape");
        let shape = self.shapes.get(v.idx)?.clone();
        self.grads[v.idx].take().map(|g| Tensor::from_parts(shape, g))
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

#[inline]
fn gelu_inner(x: f32) -> f32 {
    GELU_C * (x + 0.044715 * x * x * x)
}

fn gelu_grad(x: f32) -> f32 {
    let t = gelu_inner(x).tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Source strides for broadcasting `src` up to `dst`: zero on expanded axes.
fn broadcast_strides(src: &[usize], dst: &[usize]) -> Vec<usize> {
    strides(src)
        .into_iter()
        .zip(src.iter().zip(dst))
        .map(|(s, (&a, &b))| if a == b { s } else { 0 })
        .collect()
}

/// Call `f(out_offset, src_offset)` for every position of a row-major
/// `shape`, where the source offset advances by `src_strides`.
fn visit_strided(shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = shape.iter().product();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for out in 0..total {
        f(out, src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            src -= src_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_example() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.constant(t(&[2, 2], &[5., 6., 7., 8.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn sum_gives_all_ones_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn(&[2, 3], |i| i as f32));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2]));
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates_over_paths() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[3.0]));
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn softmax_hand_values() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[0.0, 0.0]));
        let s = tape.softmax(a, 0).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
        let b = tape.constant(t(&[2], &[2f32.ln(), 0.0]));
        let s = tape.softmax(b, 0).unwrap();
        let v = tape.value(s).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-6 && (v[1] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut tape = Tape::new();
        let big = tape.constant(t(&[2], &[1000.0, 999.0]));
        let small = tape.constant(t(&[2], &[1.0, 0.0]));
        let a = tape.softmax(big, 0).unwrap();
        let b = tape.softmax(small, 0).unwrap();
        assert!(tape.value(a).is_finite());
        assert!(tape.value(a).max_abs_diff(tape.value(b)) < 1e-6);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1], &[f32::MAX]));
        let err = tape.scale(a, 10.0).unwrap_err();
        assert!(err.is_non_finite());
    }

    #[test]
    fn permute_then_inverse_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f32));
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(p), &[4, 2, 3]);
        assert_eq!(tape.value(p).at(&[3, 1, 2]), tape.value(x).at(&[1, 2, 3]));
        let q = tape.permute(p, &[1, 2, 0]).unwrap();
        assert!(tape.value(q).bit_eq(tape.value(x)));
    }

    #[test]
    fn expand_broadcasts_and_sums_back() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 1], &[1.0, 2.0]));
        let e = tape.expand(x, &[2, 3]).unwrap();
        assert_eq!(tape.value(e).data(), &[1., 1., 1., 2., 2., 2.]);
        let s = tape.sum(e).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0]);
        assert!(tape.expand(x, &[3, 3]).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[16]));
        let y = tape.dropout(x, 0.75, false, &mut rng).unwrap();
        assert_eq!(x, y);
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn no_grad_tape_records_nothing_differentiable() {
        let mut tape = Tape::no_grad();
        let x = tape.param(Tensor::ones(&[3]));
        assert!(!tape.requires_grad(x));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).is_none());
    }

    #[test]
    fn batch_norm_train_normalizes_channels() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[4, 2, 3], |i| (i * i) as f32 * 0.1));
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let (y, stats) = tape.batch_norm(x, g, b, None, 1e-5).unwrap();
        let stats = stats.unwrap();
        let yv = tape.value(y);
        for ch in 0..2 {
            let vals: Vec<f32> = (0..4)
                .flat_map(|n| (0..3).map(move |i| (n, i)))
                .map(|(n, i)| yv.at(&[n, ch, i]))
                .collect();
            let m: f32 = vals.iter().sum::<f32>() / 12.0;
            let v: f32 = vals.iter().map(|x| (x - m).powi(2)).sum::<f32>() / 12.0;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
        assert!(stats.var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn weight_norm_has_magnitude_g() {
        let mut tape = Tape::new();
        let v = tape.constant(t(&[2, 2], &[3.0, 4.0, 0.0, 2.0]));
        let g = tape.constant(t(&[2], &[10.0, 0.5]));
        let w = tape.weight_norm(v, g).unwrap();
        assert_eq!(tape.value(w).data(), &[6.0, 8.0, 0.0, 0.5]);
    }
}
