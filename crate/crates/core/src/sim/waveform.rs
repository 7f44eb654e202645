use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::error::{config_err, shape_err, Result};
use crate::sim::linkbudget::{db_to_linear, linear_to_db};
use crate::sim::ScenarioConfig;

/// Value emitted for bins with zero power.
pub const PSD_FLOOR_DB: f64 = -300.0;

/// One interfering LEO as seen in the victim band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeoTone {
    pub inr_db: f64,
    pub doppler_hz: f64,
}

/// Unit-power QPSK, one sample per symbol, with a random carrier phase.
pub(crate) fn qpsk_stream<R: Rng>(rng: &mut R, len: usize) -> Vec<Complex64> {
    let phase = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    (0..len)
        .map(|_| {
            let bits: u8 = rng.random_range(0..4);
            let re = if bits & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if bits & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            Complex64::new(re, im) * phase
        })
        .collect()
}

/// `y[n] = √CNR·x[n] + Σ_k √INR_k·I_k[n]·e^{j2πΔf_k n/f_s} + ζ[n]` with
/// unit-variance circular Gaussian `ζ` when `cfg.noise` is set.
pub fn synthesize_waveform<R: Rng>(
    cfg: &ScenarioConfig,
    cnr_db: f64,
    per_leo: &[LeoTone],
    len: usize,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if per_leo.len() != cfg.num_leo {
        return Err(config_err!(
            "scenario has {} LEO links but {} interference terms were given",
            cfg.num_leo,
            per_leo.len()
        ));
    }
    let amp = db_to_linear(cnr_db).sqrt();
    let mut y: Vec<Complex64> = qpsk_stream(rng, len).into_iter().map(|s| s * amp).collect();
    for leo in per_leo {
        let a = db_to_linear(leo.inr_db).sqrt();
        let w = 2.0 * PI * leo.doppler_hz / cfg.bandwidth;
        for (n, (yn, s)) in y.iter_mut().zip(qpsk_stream(rng, len)).enumerate() {
            let rot = if w == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, w * n as f64)
            };
            *yn += s * rot * a;
        }
    }
    if cfg.noise {
        for yn in &mut y {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *yn += Complex64::new(re, im) * FRAC_1_SQRT_2;
        }
    }
    Ok(y)
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub(crate) struct Welch {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    norm: f64,
}

impl Welch {
    pub fn new(segment: usize) -> Self {
        let window = hann_window(segment);
        let norm = window.iter().map(|w| w * w).sum();
        Self {
            fft: FftPlanner::new().plan_fft_forward(segment),
            window,
            norm,
        }
    }

    /// Averaged periodogram over half-overlapping segments; all `segment`
    /// bins in FFT order (DC first).
    pub fn psd(&self, y: &[Complex64]) -> Result<Vec<f64>> {
        let n = self.window.len();
        if y.len() < n {
            return Err(shape_err!("Welch needs at least {n} samples, got {}", y.len()));
        }
        let hop = (n / 2).max(1);
        let segments = (y.len() - n) / hop + 1;
        let mut acc = vec![0.0; n];
        let mut buf = vec![Complex64::default(); n];
        for s in 0..segments {
            let seg = &y[s * hop..s * hop + n];
            for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = v * w;
            }
            self.fft.process(&mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b.norm_sqr();
            }
        }
        let scale = 1.0 / (segments as f64 * self.norm);
        Ok(acc.into_iter().map(|a| a * scale).collect())
    }

    pub fn psd_db(&self, y: &[Complex64]) -> Result<Vec<f64>> {
        Ok(self.psd(y)?.into_iter().map(|p| linear_to_db(p, PSD_FLOOR_DB)).collect())
    }
}

/// Welch estimate with a Hann window of length `fft_bins` and 50% overlap.
pub fn welch_psd(y: &[Complex64], fft_bins: usize) -> Result<Vec<f64>> {
    if fft_bins == 0 {
        return Err(shape_err!("fft_bins must be positive"));
    }
    Welch::new(fft_bins).psd(y)
}

/// [`welch_psd`] in dB, floored at [`PSD_FLOOR_DB`].
pub fn welch_psd_db(y: &[Complex64], fft_bins: usize) -> Result<Vec<f64>> {
    if fft_bins == 0 {
        return Err(shape_err!("fft_bins must be positive"));
    }
    Welch::new(fft_bins).psd_db(y)
}
