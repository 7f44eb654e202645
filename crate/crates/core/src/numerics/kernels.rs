//! Forward and adjoint kernels on plain tensors. The autograd tape in
//! [`super::tape`] composes these; they are also usable directly for
//! inference and as the substrate of the pure reference functions.

use crate::error::{shape_err, Error, Result};
use crate::numerics::tensor::{axpy, dot, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror about the edge sample without repeating it: `[a,b,c]` padded
    /// by one becomes `[b,a,b,c,b]`.
    Reflect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub mode: PadMode,
    pub groups: usize,
}

impl Conv1dSpec {
    pub fn new(stride: usize, pad: usize, mode: PadMode) -> Self {
        Self {
            stride,
            pad_left: pad,
            pad_right: pad,
            mode,
            groups: 1,
        }
    }

    /// Stride 1 with `K - 1` total padding so the output length equals the
    /// input length. The extra sample for even kernels goes on the left.
    pub fn same(kernel_len: usize, mode: PadMode) -> Self {
        let total = kernel_len.saturating_sub(1);
        Self {
            stride: 1,
            pad_left: total - total / 2,
            pad_right: total / 2,
            mode,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn output_len(&self, len: usize, kernel_len: usize) -> Result<usize> {
        let padded = len + self.pad_left + self.pad_right;
        if self.stride == 0 {
            return Err(shape_err!("conv1d stride must be positive"));
        }
        if kernel_len == 0 || kernel_len > padded {
            return Err(shape_err!(
                "kernel of length {kernel_len} longer than padded input {padded}"
            ));
        }
        Ok((padded - kernel_len) / self.stride + 1)
    }
}

/// Source index in the unpadded signal for padded position `p`, or `None`
/// for a zero-padded tap.
#[inline]
fn source_index(p: usize, pad_left: usize, len: usize, mode: PadMode) -> Option<usize> {
    let i = p as isize - pad_left as isize;
    let n = len as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            let r = if i < 0 { -i } else { 2 * (n - 1) - i };
            Some(r as usize)
        }
    }
}

/// Pads a single sequence.
pub fn pad1d<T: Scalar>(x: &[T], pad_left: usize, pad_right: usize, mode: PadMode) -> Result<Vec<T>> {
    if mode == PadMode::Reflect && (pad_left >= x.len() || pad_right >= x.len()) {
        return Err(shape_err!(
            "reflect padding ({pad_left}, {pad_right}) needs input longer than the pad, got {}",
            x.len()
        ));
    }
    Ok((0..x.len() + pad_left + pad_right)
        .map(|p| source_index(p, pad_left, x.len(), mode).map_or(T::zero(), |s| x[s]))
        .collect())
}

struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    len: usize,
    k: usize,
    out_len: usize,
    cig: usize,
    cog: usize,
}

fn conv_geom<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: &Conv1dSpec) -> Result<ConvGeom> {
    if x.rank() != 3 || w.rank() != 3 {
        return Err(shape_err!(
            "conv1d expects x [B,C,L] and w [Cout,Cin/g,K], got {:?} and {:?}",
            x.shape(),
            w.shape()
        ));
    }
    let (batch, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, cig, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let g = spec.groups;
    if g == 0 || c_in % g != 0 || c_out % g != 0 || cig != c_in / g {
        return Err(shape_err!(
            "conv1d groups {g} incompatible with Cin {c_in}, weight {:?}",
            w.shape()
        ));
    }
    if spec.mode == PadMode::Reflect && (spec.pad_left >= len || spec.pad_right >= len) {
        return Err(shape_err!(
            "reflect padding ({}, {}) needs input longer than the pad, got {len}",
            spec.pad_left,
            spec.pad_right
        ));
    }
    let out_len = spec.output_len(len, k)?;
    Ok(ConvGeom {
        batch,
        c_in,
        c_out,
        len,
        k,
        out_len,
        cig,
        cog: c_out / g,
    })
}

/// Fills `cols[n * cig * k + ci * k + j]` with the padded input tap feeding
/// output position `n` for group-local channel `ci`, kernel tap `j`.
fn im2col<T: Scalar>(x: &[T], geo: &ConvGeom, spec: &Conv1dSpec, group: usize, cols: &mut [T]) {
    let row = geo.cig * geo.k;
    for ci in 0..geo.cig {
        let chan = &x[(group * geo.cig + ci) * geo.len..][..geo.len];
        for n in 0..geo.out_len {
            let dst = &mut cols[n * row + ci * geo.k..][..geo.k];
            let start = n * spec.stride;
            for (j, d) in dst.iter_mut().enumerate() {
                *d = source_index(start + j, spec.pad_left, geo.len, spec.mode)
                    .map_or(T::zero(), |s| chan[s]);
            }
        }
    }
}

/// Cross-correlation `y[b,o,n] = bias[o] + sum_{ci,k} w[o,ci,k] * xpad[b,ci,n*stride+k]`.
pub fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv1dSpec,
) -> Result<Tensor<T>> {
    let geo = conv_geom(x, w, spec)?;
    if let Some(b) = bias {
        if b.len() != geo.c_out {
            return Err(shape_err!("bias length {} != Cout {}", b.len(), geo.c_out));
        }
    }
    let row = geo.cig * geo.k;
    let mut out = vec![T::zero(); geo.batch * geo.c_out * geo.out_len];
    let mut cols = vec![T::zero(); geo.out_len * row];
    for b in 0..geo.batch {
        let xb = x.row(b);
        for g in 0..spec.groups {
            im2col(xb, &geo, spec, g, &mut cols);
            for ol in 0..geo.cog {
                let o = g * geo.cog + ol;
                let wo = &w.data()[o * row..(o + 1) * row];
                let b0 = bias.map_or(T::zero(), |t| t.data()[o]);
                let dst = &mut out[(b * geo.c_out + o) * geo.out_len..][..geo.out_len];
                for (n, d) in dst.iter_mut().enumerate() {
                    *d = b0 + dot(wo, &cols[n * row..(n + 1) * row]);
                }
            }
        }
    }
    Tensor::from_vec(&[geo.batch, geo.c_out, geo.out_len], out)
}

pub struct ConvGrads<T> {
    pub x: Option<Tensor<T>>,
    pub w: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Adjoint of [`conv1d`] for the requested inputs.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &Conv1dSpec,
    grad_out: &Tensor<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let geo = conv_geom(x, w, spec)?;
    if grad_out.shape() != [geo.batch, geo.c_out, geo.out_len] {
        return Err(shape_err!("conv1d grad shape {:?}", grad_out.shape()));
    }
    let [need_x, need_w, need_b] = need;
    let row = geo.cig * geo.k;
    let padded_len = geo.len + spec.pad_left + spec.pad_right;
    let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut gw = need_w.then(|| vec![T::zero(); w.len()]);
    let mut cols = vec![T::zero(); geo.out_len * row];
    let mut gcols = vec![T::zero(); geo.out_len * row];
    let mut gpad = vec![T::zero(); padded_len];
    let g_all = grad_out.data();

    for b in 0..geo.batch {
        let xb = x.row(b);
        for g in 0..spec.groups {
            if let Some(gw) = gw.as_mut() {
                im2col(xb, &geo, spec, g, &mut cols);
                for ol in 0..geo.cog {
                    let o = g * geo.cog + ol;
                    let go = &g_all[(b * geo.c_out + o) * geo.out_len..][..geo.out_len];
                    let gwo = &mut gw[o * row..(o + 1) * row];
                    for (n, &gn) in go.iter().enumerate() {
                        if gn != T::zero() {
                            axpy(gn, &cols[n * row..(n + 1) * row], gwo);
                        }
                    }
                }
            }
            if let Some(gx) = gx.as_mut() {
                gcols.iter_mut().for_each(|v| *v = T::zero());
                for ol in 0..geo.cog {
                    let o = g * geo.cog + ol;
                    let go = &g_all[(b * geo.c_out + o) * geo.out_len..][..geo.out_len];
                    let wo = &w.data()[o * row..(o + 1) * row];
                    for (n, &gn) in go.iter().enumerate() {
                        if gn != T::zero() {
                            axpy(gn, wo, &mut gcols[n * row..(n + 1) * row]);
                        }
                    }
                }
                for ci in 0..geo.cig {
                    gpad.iter_mut().for_each(|v| *v = T::zero());
                    for n in 0..geo.out_len {
                        let src = &gcols[n * row + ci * geo.k..][..geo.k];
                        axpy(T::one(), src, &mut gpad[n * spec.stride..n * spec.stride + geo.k]);
                    }
                    let chan = (b * geo.c_in + g * geo.cig + ci) * geo.len;
                    for (p, &v) in gpad.iter().enumerate() {
                        if let Some(s) = source_index(p, spec.pad_left, geo.len, spec.mode) {
                            gx[chan + s] += v;
                        }
                    }
                }
            }
        }
    }

    let gb = need_b.then(|| {
        let mut gb = vec![T::zero(); geo.c_out];
        for b in 0..geo.batch {
            for (o, acc) in gb.iter_mut().enumerate() {
                *acc += g_all[(b * geo.c_out + o) * geo.out_len..][..geo.out_len]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
        }
        gb
    });

    Ok(ConvGrads {
        x: gx.map(|d| Tensor::from_vec(x.shape(), d)).transpose()?,
        w: gw.map(|d| Tensor::from_vec(w.shape(), d)).transpose()?,
        bias: gb.map(|d| Tensor::from_vec(&[geo.c_out], d)).transpose()?,
    })
}

fn conv_t_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if x.rank() != 3 || w.rank() != 3 || x.shape()[1] != w.shape()[0] || stride == 0 {
        return Err(shape_err!(
            "conv1d_transpose expects x [B,Cin,L], w [Cin,Cout,K], stride > 0; got {:?}, {:?}, {stride}",
            x.shape(),
            w.shape()
        ));
    }
    let (batch, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, k) = (w.shape()[1], w.shape()[2]);
    if len == 0 || k == 0 {
        return Err(shape_err!("conv1d_transpose on empty input or kernel"));
    }
    Ok((batch, c_in, len, c_out, k, (len - 1) * stride + k))
}

/// Transposed convolution (scatter-accumulate):
/// `y[b,o,i*stride+k] += x[b,ci,i] * w[ci,o,k]`, output length `(L-1)*stride + K`.
pub fn conv1d_transpose<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (batch, c_in, len, c_out, k, out_len) = conv_t_dims(x, w, stride)?;
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(shape_err!("bias length {} != Cout {c_out}", b.len()));
        }
    }
    let mut out = vec![T::zero(); batch * c_out * out_len];
    for b in 0..batch {
        for o in 0..c_out {
            let dst = &mut out[(b * c_out + o) * out_len..][..out_len];
            if let Some(bias) = bias {
                dst.iter_mut().for_each(|v| *v = bias.data()[o]);
            }
            for ci in 0..c_in {
                let xs = &x.data()[(b * c_in + ci) * len..][..len];
                let wk = &w.data()[(ci * c_out + o) * k..][..k];
                for (i, &xv) in xs.iter().enumerate() {
                    axpy(xv, wk, &mut dst[i * stride..i * stride + k]);
                }
            }
        }
    }
    Tensor::from_vec(&[batch, c_out, out_len], out)
}

pub fn conv1d_transpose_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (batch, c_in, len, c_out, k, out_len) = conv_t_dims(x, w, stride)?;
    if grad_out.shape() != [batch, c_out, out_len] {
        return Err(shape_err!("conv1d_transpose grad shape {:?}", grad_out.shape()));
    }
    let g = grad_out.data();
    let [need_x, need_w, need_b] = need;
    let gx = need_x.then(|| {
        let mut gx = vec![T::zero(); x.len()];
        for b in 0..batch {
            for ci in 0..c_in {
                for o in 0..c_out {
                    let go = &g[(b * c_out + o) * out_len..][..out_len];
                    let wk = &w.data()[(ci * c_out + o) * k..][..k];
                    let dst = &mut gx[(b * c_in + ci) * len..][..len];
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d += dot(wk, &go[i * stride..i * stride + k]);
                    }
                }
            }
        }
        gx
    });
    let gw = need_w.then(|| {
        let mut gw = vec![T::zero(); w.len()];
        for b in 0..batch {
            for ci in 0..c_in {
                let xs = &x.data()[(b * c_in + ci) * len..][..len];
                for o in 0..c_out {
                    let go = &g[(b * c_out + o) * out_len..][..out_len];
                    let dst = &mut gw[(ci * c_out + o) * k..][..k];
                    for (i, &xv) in xs.iter().enumerate() {
                        axpy(xv, &go[i * stride..i * stride + k], dst);
                    }
                }
            }
        }
        gw
    });
    let gb = need_b.then(|| {
        let mut gb = vec![T::zero(); c_out];
        for b in 0..batch {
            for (o, acc) in gb.iter_mut().enumerate() {
                *acc += g[(b * c_out + o) * out_len..][..out_len].iter().copied().sum::<T>();
            }
        }
        gb
    });
    Ok(ConvGrads {
        x: gx.map(|d| Tensor::from_vec(x.shape(), d)).transpose()?,
        w: gw.map(|d| Tensor::from_vec(w.shape(), d)).transpose()?,
        bias: gb.map(|d| Tensor::from_vec(&[c_out], d)).transpose()?,
    })
}

/// `y[b,o] = bias[o] + sum_i w[o,i] x[b,i]` with `x [B,In]`, `w [Out,In]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1] {
        return Err(shape_err!(
            "linear expects x [B,In], w [Out,In]; got {:?}, {:?}",
            x.shape(),
            w.shape()
        ));
    }
    let (batch, n_in, n_out) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    let mut out = vec![T::zero(); batch * n_out];
    for b in 0..batch {
        let xb = &x.data()[b * n_in..(b + 1) * n_in];
        for o in 0..n_out {
            let b0 = bias.map_or(T::zero(), |t| t.data()[o]);
            out[b * n_out + o] = b0 + dot(&w.data()[o * n_in..(o + 1) * n_in], xb);
        }
    }
    Tensor::from_vec(&[batch, n_out], out)
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (batch, n_in, n_out) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    if grad_out.shape() != [batch, n_out] {
        return Err(shape_err!("linear grad shape {:?}", grad_out.shape()));
    }
    let g = grad_out.data();
    let [need_x, need_w, need_b] = need;
    let gx = need_x.then(|| {
        let mut gx = vec![T::zero(); x.len()];
        for b in 0..batch {
            let dst = &mut gx[b * n_in..(b + 1) * n_in];
            for o in 0..n_out {
                axpy(g[b * n_out + o], &w.data()[o * n_in..(o + 1) * n_in], dst);
            }
        }
        gx
    });
    let gw = need_w.then(|| {
        let mut gw = vec![T::zero(); w.len()];
        for b in 0..batch {
            let xb = &x.data()[b * n_in..(b + 1) * n_in];
            for o in 0..n_out {
                axpy(g[b * n_out + o], xb, &mut gw[o * n_in..(o + 1) * n_in]);
            }
        }
        gw
    });
    let gb = need_b.then(|| {
        let mut gb = vec![T::zero(); n_out];
        for b in 0..batch {
            axpy(T::one(), &g[b * n_out..(b + 1) * n_out], &mut gb);
        }
        gb
    });
    Ok(ConvGrads {
        x: gx.map(|d| Tensor::from_vec(x.shape(), d)).transpose()?,
        w: gw.map(|d| Tensor::from_vec(w.shape(), d)).transpose()?,
        bias: gb.map(|d| Tensor::from_vec(&[n_out], d)).transpose()?,
    })
}

fn as_batched(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [m, n] => Ok((1, m, n)),
        [b, m, n] => Ok((b, m, n)),
        _ => Err(shape_err!("expected rank 2 or 3, got {shape:?}")),
    }
}

/// `[B,M,K] x [B,K,N] -> [B,M,N]`; rank-2 operands are a batch of one.
pub fn batched_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, m, k) = as_batched(a.shape())?;
    let (bb, k2, n) = as_batched(b.shape())?;
    if ba != bb || k != k2 || a.rank() != b.rank() {
        return Err(shape_err!("matmul {:?} x {:?}", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); ba * m * n];
    for bi in 0..ba {
        let ab = &a.data()[bi * m * k..][..m * k];
        let bbk = &b.data()[bi * k * n..][..k * n];
        let ob = &mut out[bi * m * n..][..m * n];
        for i in 0..m {
            for p in 0..k {
                axpy(ab[i * k + p], &bbk[p * n..(p + 1) * n], &mut ob[i * n..(i + 1) * n]);
            }
        }
    }
    let shape: Vec<usize> = if a.rank() == 2 { vec![m, n] } else { vec![ba, m, n] };
    Tensor::from_vec(&shape, out)
}

/// Swaps the last two axes.
pub fn transpose_last<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, m, n) = as_batched(a.shape())?;
    let mut out = vec![T::zero(); a.len()];
    for bi in 0..batch {
        for i in 0..m {
            for j in 0..n {
                out[bi * m * n + j * m + i] = a.data()[bi * m * n + i * n + j];
            }
        }
    }
    let mut shape = a.shape().to_vec();
    let r = shape.len();
    shape.swap(r - 1, r - 2);
    Tensor::from_vec(&shape, out)
}

/// Softmax over the last axis, max-subtracted.
pub fn softmax_rows<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let n = *a
        .shape()
        .last()
        .ok_or_else(|| shape_err!("softmax on a rank-0 tensor"))?;
    if n == 0 {
        return Err(shape_err!("softmax over an empty axis"));
    }
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::from_vec(a.shape(), out)
}

pub fn softmax_rows_backward<T: Scalar>(s: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let n = *s.shape().last().unwrap_or(&1);
    let mut gx = grad_out.data().to_vec();
    for (gr, sr) in gx.chunks_mut(n).zip(s.data().chunks(n)) {
        let inner = dot(gr, sr);
        for (g, &sv) in gr.iter_mut().zip(sr) {
            *g = sv * (*g - inner);
        }
    }
    Tensor::from_vec(s.shape(), gx).expect("same shape")
}

/// Mean of squared differences over all elements.
pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(shape_err!("mse {:?} vs {:?}", pred.shape(), target.shape()));
    }
    if pred.is_empty() {
        return Err(shape_err!("mse of empty tensors"));
    }
    let ss: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(ss / T::from_usize(pred.len()).unwrap())
}

pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let norm = dot(v, v).sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(Error::Domain(format!("cannot L2-normalize vector with norm {norm}")));
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}
