//! Convolution kernels (im2col + GEMM). Cross-correlation, no kernel flip.

use super::gemm::{gemm, Transpose};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv2dGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Conv2dGeom {
    pub fn new(
        x: &[usize],
        weight: &[usize],
        stride: (usize, usize),
        padding: (usize, usize),
        dilation: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        const OP: &str = "conv2d";
        if x.len() != 4 || weight.len() != 4 {
            return Err(Error::shape(
                OP,
                format!("expected rank-4 input and weight, got {x:?} and {weight:?}"),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 || groups == 0 {
            return Err(Error::shape(OP, "stride, dilation and groups must be positive"));
        }
        let (n, cin, h, w) = (x[0], x[1], x[2], x[3]);
        let (cout, cin_g, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape(
                OP,
                format!("{groups} groups do not divide channels {cin}->{cout}"),
            ));
        }
        if cin_g * groups != cin {
            return Err(Error::shape(
                OP,
                format!(
                    "input has {cin} channels, weight expects {} ({groups} groups)",
                    cin_g * groups
                ),
            ));
        }
        let span_h = dilation.0 * (kh - 1) + 1;
        let span_w = dilation.1 * (kw - 1) + 1;
        if h + 2 * padding.0 < span_h || w + 2 * padding.1 < span_w {
            return Err(Error::shape(
                OP,
                format!(
                    "kernel span ({span_h},{span_w}) exceeds padded input ({},{})",
                    h + 2 * padding.0,
                    w + 2 * padding.1
                ),
            ));
        }
        let oh = (h + 2 * padding.0 - span_h) / stride.0 + 1;
        let ow = (w + 2 * padding.1 - span_w) / stride.1 + 1;
        Ok(Conv2dGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            padding,
            dilation,
            groups,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.oh, self.ow]
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    /// Rows of the unfolded patch matrix for one group.
    fn col_rows(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Source coordinate along one axis, or `None` when it falls in padding.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, dil: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = o * stride + k * dil;
        pos.checked_sub(pad).filter(|&p| p < len)
    }

    fn im2col(&self, x: &[f32], col: &mut [f32]) {
        let (oh, ow) = (self.oh, self.ow);
        let p = self.positions();
        for c in 0..self.cin_g() {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = Self::source(oy, i, self.stride.0, self.dilation.0, self.padding.0, self.h);
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        match iy {
                            None => line.fill(0.0),
                            Some(iy) => {
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match Self::source(
                                        ox,
                                        j,
                                        self.stride.1,
                                        self.dilation.1,
                                        self.padding.1,
                                        self.w,
                                    ) {
                                        Some(ix) => plane[iy * self.w + ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], dx: &mut [f32]) {
        let (oh, ow) = (self.oh, self.ow);
        let p = self.positions();
        for c in 0..self.cin_g() {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let Some(iy) = Self::source(oy, i, self.stride.0, self.dilation.0, self.padding.0, self.h)
                        else {
                            continue;
                        };
                        for ox in 0..ow {
                            if let Some(ix) =
                                Self::source(ox, j, self.stride.1, self.dilation.1, self.padding.1, self.w)
                            {
                                plane[iy * self.w + ix] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &Conv2dGeom, x: &[f32], weight: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let (cin_g, cout_g, rows, p) = (g.cin_g(), g.cout_g(), g.col_rows(), g.positions());
    let in_plane = g.h * g.w;
    let mut out = vec![0.0f32; g.n * g.cout * p];
    let mut col = vec![0.0f32; rows * p];
    for n in 0..g.n {
        for grp in 0..g.groups {
            let xs = &x[(n * g.cin + grp * cin_g) * in_plane..(n * g.cin + (grp + 1) * cin_g) * in_plane];
            g.im2col(xs, &mut col);
            let wg = &weight[grp * cout_g * rows..(grp + 1) * cout_g * rows];
            let ys = &mut out[(n * g.cout + grp * cout_g) * p..(n * g.cout + (grp + 1) * cout_g) * p];
            gemm(Transpose::No, Transpose::No, cout_g, p, rows, 1.0, wg, &col, 0.0, ys);
        }
        if let Some(b) = bias {
            for (c, &bc) in b.iter().enumerate() {
                for v in &mut out[(n * g.cout + c) * p..(n * g.cout + c + 1) * p] {
                    *v += bc;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dw: Option<Vec<f32>>,
    pub db: Option<Vec<f32>>,
}

pub(crate) fn conv2d_backward(
    g: &Conv2dGeom,
    x: &[f32],
    weight: &[f32],
    dy: &[f32],
    need: (bool, bool, bool),
) -> ConvGrads {
    let (cin_g, cout_g, rows, p) = (g.cin_g(), g.cout_g(), g.col_rows(), g.positions());
    let in_plane = g.h * g.w;
    let mut dx = need.0.then(|| vec![0.0f32; x.len()]);
    let mut dw = need.1.then(|| vec![0.0f32; weight.len()]);
    let db = need.2.then(|| channel_sums(dy, g.n, g.cout, p));
    if dx.is_none() && dw.is_none() {
        return ConvGrads { dx, dw, db };
    }
    let mut col = vec![0.0f32; rows * p];
    let mut dcol = vec![0.0f32; rows * p];
    for n in 0..g.n {
        for grp in 0..g.groups {
            let x_range = (n * g.cin + grp * cin_g) * in_plane..(n * g.cin + (grp + 1) * cin_g) * in_plane;
            let w_range = grp * cout_g * rows..(grp + 1) * cout_g * rows;
            let dys = &dy[(n * g.cout + grp * cout_g) * p..(n * g.cout + (grp + 1) * cout_g) * p];
            if let Some(dw) = dw.as_mut() {
                g.im2col(&x[x_range.clone()], &mut col);
                gemm(
                    Transpose::No,
                    Transpose::Yes,
                    cout_g,
                    rows,
                    p,
                    1.0,
                    dys,
                    &col,
                    1.0,
                    &mut dw[w_range.clone()],
                );
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    Transpose::Yes,
                    Transpose::No,
                    rows,
                    p,
                    cout_g,
                    1.0,
                    &weight[w_range],
                    dys,
                    0.0,
                    &mut dcol,
                );
                g.col2im(&dcol, &mut dx[x_range]);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Per-channel sums of an `[n, c, inner]` buffer, accumulated in f64.
pub(crate) fn channel_sums(dy: &[f32], n: usize, c: usize, inner: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; c];
    for b in 0..n {
        for (ch, a) in acc.iter_mut().enumerate() {
            let start = (b * c + ch) * inner;
            *a += dy[start..start + inner].iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Geometry of a causal dilated 1-D convolution over `[n, cin, t]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct CausalGeom {
    pub n: usize,
    pub cin: usize,
    pub t: usize,
    pub cout: usize,
    pub k: usize,
    pub dilation: usize,
}

impl CausalGeom {
    pub fn new(x: &[usize], weight: &[usize], dilation: usize) -> Result<Self> {
        const OP: &str = "causal_conv1d";
        if x.len() != 3 || weight.len() != 3 {
            return Err(Error::shape(
                OP,
                format!("expected rank-3 input and weight, got {x:?} and {weight:?}"),
            ));
        }
        if dilation == 0 {
            return Err(Error::shape(OP, "dilation must be >= 1"));
        }
        if x[1] != weight[1] {
            return Err(Error::shape(
                OP,
                format!("input has {} channels, weight expects {}", x[1], weight[1]),
            ));
        }
        Ok(CausalGeom {
            n: x[0],
            cin: x[1],
            t: x[2],
            cout: weight[0],
            k: weight[2],
            dilation,
        })
    }

    /// Tap `k` reads `x[t - (K-1-k)·d]`; the last tap sits on the current step.
    fn im2col(&self, x: &[f32], col: &mut [f32]) {
        let t_len = self.t;
        for c in 0..self.cin {
            let src = &x[c * t_len..(c + 1) * t_len];
            for k in 0..self.k {
                let lag = (self.k - 1 - k) * self.dilation;
                let dst = &mut col[(c * self.k + k) * t_len..(c * self.k + k + 1) * t_len];
                let lag = lag.min(t_len);
                dst[..lag].fill(0.0);
                dst[lag..].copy_from_slice(&src[..t_len - lag]);
            }
        }
    }

    fn col2im(&self, col: &[f32], dx: &mut [f32]) {
        let t_len = self.t;
        for c in 0..self.cin {
            let dst = &mut dx[c * t_len..(c + 1) * t_len];
            for k in 0..self.k {
                let lag = ((self.k - 1 - k) * self.dilation).min(t_len);
                let src = &col[(c * self.k + k) * t_len..(c * self.k + k + 1) * t_len];
                for (d, s) in dst[..t_len - lag].iter_mut().zip(&src[lag..]) {
                    *d += s;
                }
            }
        }
    }
}

pub(crate) fn causal_forward(g: &CausalGeom, x: &[f32], weight: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let rows = g.cin * g.k;
    let mut out = vec![0.0f32; g.n * g.cout * g.t];
    let mut col = vec![0.0f32; rows * g.t];
    for n in 0..g.n {
        g.im2col(&x[n * g.cin * g.t..(n + 1) * g.cin * g.t], &mut col);
        let ys = &mut out[n * g.cout * g.t..(n + 1) * g.cout * g.t];
        gemm(
            Transpose::No,
            Transpose::No,
            g.cout,
            g.t,
            rows,
            1.0,
            weight,
            &col,
            0.0,
            ys,
        );
        if let Some(b) = bias {
            for (c, &bc) in b.iter().enumerate() {
                for v in &mut ys[c * g.t..(c + 1) * g.t] {
                    *v += bc;
                }
            }
        }
    }
    out
}

pub(crate) fn causal_backward(
    g: &CausalGeom,
    x: &[f32],
    weight: &[f32],
    dy: &[f32],
    need: (bool, bool, bool),
) -> ConvGrads {
    let rows = g.cin * g.k;
    let mut dx = need.0.then(|| vec![0.0f32; x.len()]);
    let mut dw = need.1.then(|| vec![0.0f32; weight.len()]);
    let db = need.2.then(|| channel_sums(dy, g.n, g.cout, g.t));
    if dx.is_none() && dw.is_none() {
        return ConvGrads { dx, dw, db };
    }
    let mut col = vec![0.0f32; rows * g.t];
    for n in 0..g.n {
        let dys = &dy[n * g.cout * g.t..(n + 1) * g.cout * g.t];
        let x_range = n * g.cin * g.t..(n + 1) * g.cin * g.t;
        if let Some(dw) = dw.as_mut() {
            g.im2col(&x[x_range.clone()], &mut col);
            gemm(
                Transpose::No,
                Transpose::Yes,
                g.cout,
                rows,
                g.t,
                1.0,
                dys,
                &col,
                1.0,
                dw,
            );
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                Transpose::Yes,
                Transpose::No,
                rows,
                g.t,
                g.cout,
                1.0,
                weight,
                dys,
                0.0,
                &mut col,
            );
            g.col2im(&col, &mut dx[x_range]);
        }
    }
    ConvGrads { dx, dw, db }
}
