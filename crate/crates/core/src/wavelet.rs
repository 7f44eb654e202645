//! Morlet filter bank, depthwise multi-scale filtering and the wavelet
//! reconstruction penalty.
//!
//! Kernel taps sit on the integer grid `-K/2 ..= K/2 - 1` (for even `K`),
//! with `K = 4 * max(scales)`. Filtering is cross-correlation with
//! reflection padding arranged so that tap `τ` reads sample `n + τ`; the
//! output keeps the input length.

use crate::error::{config_err, shape_err, Error, Result};
use crate::numerics::kernels::{self, Conv1dSpec, PadMode};
use crate::numerics::{ParamId, ParamRegistry, Tensor, Var};
use crate::scalar::Scalar;

pub const BANK_PARAM: &str = "wavelet.bank";

/// Tap offsets `τ` for a kernel of length `len`.
pub fn tap_grid(len: usize) -> impl Iterator<Item = i64> {
    let lo = -((len / 2) as i64);
    (0..len as i64).map(move |i| lo + i)
}

/// Unnormalized Morlet taps `cos(τ/s) · exp(-τ²/(2s²))`.
pub fn morlet_taps(scale: f64, kernel_len: usize) -> Result<Vec<f64>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Domain(format!("wavelet scale must be positive, got {scale}")));
    }
    if kernel_len == 0 {
        return Err(shape_err!("kernel length must be positive"));
    }
    Ok(tap_grid(kernel_len)
        .map(|t| {
            let t = t as f64;
            (t / scale).cos() * (-(t * t) / (2.0 * scale * scale)).exp()
        })
        .collect())
}

/// L2-normalized Morlet kernel.
pub fn morlet_kernel<T: Scalar>(scale: f64, kernel_len: usize) -> Result<Vec<T>> {
    let taps = kernels::l2_normalize(&morlet_taps(scale, kernel_len)?)?;
    Ok(taps.into_iter().map(T::from_f64_lossy).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBank<T> {
    scales: Vec<f64>,
    kernel_len: usize,
    /// `[S, K]`
    kernels: Tensor<T>,
    learnable: bool,
}

impl<T: Scalar> WaveletBank<T> {
    pub fn new(scales: &[f64], learnable: bool) -> Result<Self> {
        if scales.is_empty() {
            return Err(config_err!("wavelet bank needs at least one scale"));
        }
        for (i, s) in scales.iter().enumerate() {
            if !(*s > 0.0) || !s.is_finite() {
                return Err(Error::Domain(format!("wavelet scale must be positive, got {s}")));
            }
            if scales[..i].contains(s) {
                return Err(config_err!("duplicate wavelet scale {s}"));
            }
        }
        let s_max = scales.iter().copied().fold(0.0, f64::max);
        let kernel_len = (4.0 * s_max).ceil() as usize;
        let mut data = Vec::with_capacity(scales.len() * kernel_len);
        for &s in scales {
            data.extend(morlet_kernel::<T>(s, kernel_len)?);
        }
        Ok(Self {
            scales: scales.to_vec(),
            kernel_len,
            kernels: Tensor::from_vec(&[scales.len(), kernel_len], data)?,
            learnable,
        })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn kernels(&self) -> &Tensor<T> {
        &self.kernels
    }

    pub fn kernel(&self, s: usize) -> &[T] {
        &self.kernels.data()[s * self.kernel_len..(s + 1) * self.kernel_len]
    }

    pub fn is_learnable(&self) -> bool {
        self.learnable
    }

    pub fn conv_spec(&self) -> Conv1dSpec {
        Conv1dSpec::same(self.kernel_len, PadMode::Reflect)
    }

    /// Replaces the taps (e.g. after an optimizer step) and renormalizes.
    pub fn set_kernels(&mut self, kernels: Tensor<T>) -> Result<()> {
        if kernels.shape() != self.kernels.shape() {
            return Err(shape_err!(
                "bank kernels {:?} vs {:?}",
                kernels.shape(),
                self.kernels.shape()
            ));
        }
        self.kernels = kernels;
        self.renormalize()
    }

    /// Replaces the taps verbatim; the caller guarantees unit norms.
    pub(crate) fn set_kernels_raw(&mut self, kernels: Tensor<T>) -> Result<()> {
        if kernels.shape() != self.kernels.shape() {
            return Err(shape_err!(
                "bank kernels {:?} vs {:?}",
                kernels.shape(),
                self.kernels.shape()
            ));
        }
        self.kernels = kernels;
        Ok(())
    }

    pub fn renormalize(&mut self) -> Result<()> {
        let k = self.kernel_len;
        for row in self.kernels.data_mut().chunks_mut(k) {
            let n = kernels::l2_normalize(row)?;
            row.copy_from_slice(&n);
        }
        Ok(())
    }

    /// Registers the taps as a trainable parameter when the bank is learnable.
    pub fn register(&self, params: &mut ParamRegistry<T>) -> Result<Option<ParamId>> {
        if !self.learnable {
            return Ok(None);
        }
        params.register(BANK_PARAM, self.kernels.clone()).map(Some)
    }

    /// Pulls updated taps out of `params` and restores unit norms.
    pub fn sync_from(&mut self, params: &mut ParamRegistry<T>) -> Result<()> {
        if !self.learnable {
            return Ok(());
        }
        let value = params
            .by_name(BANK_PARAM)
            .ok_or_else(|| config_err!("learnable bank not registered"))?
            .value
            .clone();
        self.set_kernels(value)?;
        params.set_value(BANK_PARAM, self.kernels.clone())
    }

    fn weight(&self) -> Tensor<T> {
        self.kernels
            .clone()
            .reshape(&[self.scales.len(), 1, self.kernel_len])
            .expect("bank shape")
    }
}

/// Depthwise multi-scale filtering `[B,C,L] -> [B,C,S,L]`; every channel is
/// filtered by every kernel independently.
pub fn dwt<T: Scalar>(x: &Tensor<T>, bank: &WaveletBank<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 || x.shape()[2] == 0 {
        return Err(shape_err!("dwt expects [B,C,L] with L >= 1, got {:?}", x.shape()));
    }
    let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let flat = x.clone().reshape(&[b * c, 1, l])?;
    let y = kernels::conv1d(&flat, &bank.weight(), None, &bank.conv_spec())?;
    y.reshape(&[b, c, bank.num_scales(), l])
}

/// `Σ_s mean((dwt(pred)_s - dwt(target)_s)²)`, each mean over `B·C·L`.
pub fn wavelet_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, bank: &WaveletBank<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(shape_err!("wavelet_loss {:?} vs {:?}", pred.shape(), target.shape()));
    }
    let (wp, wt) = (dwt(pred, bank)?, dwt(target, bank)?);
    let per_scale = pred.len();
    let ss: T = wp
        .data()
        .iter()
        .zip(wt.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(ss / T::from_usize(per_scale).unwrap())
}

/// Tape version of [`dwt`] with the `[S, K]` taps supplied as a var.
pub fn dwt_var<'t, T: Scalar>(x: Var<'t, T>, kernels: Var<'t, T>, bank: &WaveletBank<T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(shape_err!("dwt expects [B,C,L], got {shape:?}"));
    }
    let (b, c, l) = (shape[0], shape[1], shape[2]);
    let w = kernels.reshape(&[bank.num_scales(), 1, bank.kernel_len()])?;
    x.reshape(&[b * c, 1, l])?
        .conv1d(w, None, bank.conv_spec())?
        .reshape(&[b, c, bank.num_scales(), l])
}

/// Tape version of [`wavelet_loss`]. The filtering is linear, so the
/// residual is filtered once instead of filtering both signals.
pub fn wavelet_loss_var<'t, T: Scalar>(
    pred: Var<'t, T>,
    target: Var<'t, T>,
    kernels: Var<'t, T>,
    bank: &WaveletBank<T>,
) -> Result<Var<'t, T>> {
    let diff = pred.sub(target)?;
    let bands = dwt_var(diff, kernels, bank)?;
    bands
        .mean_squares()?
        .scale(T::from_usize(bank.num_scales()).unwrap())
}
