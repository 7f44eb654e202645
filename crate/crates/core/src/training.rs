//! Composite reconstruction loss, the optimizer loop and threshold
//! calibration on clean validation data.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::model::{Ablation, DualAttWaveNet};
use crate::numerics::{kernels, ParamRegistry, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::sim::SplitInputs;
use crate::wavelet::{self, WaveletBank, BANK_PARAM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub wavelet_scales: Vec<f64>,
    pub learnable_bank: bool,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            lambda1: 1.0,
            lambda2: 0.1,
            wavelet_scales: vec![4.0, 8.0, 16.0],
            learnable_bank: false,
            seed: 0,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights(self.lambda1, self.lambda2)?;
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(config_err!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.wavelet_scales.is_empty() {
            return Err(config_err!("at least one wavelet scale is required"));
        }
        Ok(())
    }

    /// `λ2` after the ablation switch.
    pub fn effective_lambda2(&self) -> f64 {
        effective_lambda2(self.ablation, self.lambda2)
    }
}

pub fn effective_lambda2(ablation: Ablation, lambda2: f64) -> f64 {
    if ablation.uses_wavelet_loss() {
        lambda2
    } else {
        0.0
    }
}

fn check_weights(lambda1: f64, lambda2: f64) -> Result<()> {
    for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(config_err!("{name} must be finite and non-negative, got {v}"));
        }
    }
    Ok(())
}

/// `λ1·mse + λ2·wavelet_loss` on the tape. `pred` and `target` are
/// `[B, 2·input_len]`; the wavelet term treats each row as one signal.
/// With `λ2 = 0` the wavelet term is not built at all.
pub fn composite_loss_var<'t, T: Scalar>(
    pred: Var<'t, T>,
    target: Var<'t, T>,
    bank: &WaveletBank<T>,
    bank_var: Option<Var<'t, T>>,
    lambda1: f64,
    lambda2: f64,
) -> Result<Var<'t, T>> {
    check_weights(lambda1, lambda2)?;
    let shape = pred.shape();
    if shape.len() != 2 || shape != target.shape() {
        return Err(shape_err!("loss needs equal [B, N] tensors, got {shape:?} and {:?}", target.shape()));
    }
    let mse = pred.mse(target)?.scale(T::from_f64_lossy(lambda1))?;
    if lambda2 == 0.0 {
        return Ok(mse);
    }
    let rows = [shape[0], 1, shape[1]];
    let kernels = match bank_var {
        Some(v) => v,
        None => pred.tape().constant(bank.kernels().clone())?,
    };
    let wl = wavelet::wavelet_loss_var(pred.reshape(&rows)?, target.reshape(&rows)?, kernels, bank)?;
    mse.add(wl.scale(T::from_f64_lossy(lambda2))?)
}

/// Plain evaluation of the composite loss over a whole `[B, N]` batch.
pub fn composite_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    bank: &WaveletBank<T>,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    check_weights(lambda1, lambda2)?;
    if pred.rank() != 2 || pred.shape() != target.shape() {
        return Err(shape_err!("loss needs equal [B, N] tensors, got {:?} and {:?}", pred.shape(), target.shape()));
    }
    let mut loss = lambda1 * kernels::mse(pred, target)?.to_f64_lossy();
    if lambda2 != 0.0 {
        let rows = [pred.shape()[0], 1, pred.shape()[1]];
        let wl = wavelet::wavelet_loss(&pred.clone().reshape(&rows)?, &target.clone().reshape(&rows)?, bank)?;
        loss += lambda2 * wl.to_f64_lossy();
    }
    Ok(loss)
}

/// Rows `idx` of the two inputs and their `[time ‖ freq]` target.
fn gather<T: Scalar>(data: &SplitInputs<T>, idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (lt, lf) = (data.time.shape()[1], data.freq.shape()[1]);
    let mut time = Vec::with_capacity(idx.len() * lt);
    let mut freq = Vec::with_capacity(idx.len() * lf);
    let mut target = Vec::with_capacity(idx.len() * (lt + lf));
    for &i in idx {
        time.extend_from_slice(data.time.row(i));
        freq.extend_from_slice(data.freq.row(i));
        target.extend_from_slice(data.time.row(i));
        target.extend_from_slice(data.freq.row(i));
    }
    Ok((
        Tensor::from_vec(&[idx.len(), lt], time)?,
        Tensor::from_vec(&[idx.len(), lf], freq)?,
        Tensor::from_vec(&[idx.len(), lt + lf], target)?,
    ))
}

fn check_inputs<T: Scalar>(data: &SplitInputs<T>) -> Result<usize> {
    let n = data.time.shape().first().copied().unwrap_or(0);
    if data.time.rank() != 2 || data.freq.rank() != 2 || data.freq.shape()[0] != n || data.labels.len() != n {
        return Err(shape_err!(
            "inconsistent split: time {:?}, freq {:?}, {} labels",
            data.time.shape(),
            data.freq.shape(),
            data.labels.len()
        ));
    }
    Ok(n)
}

/// Composite loss of every row, scored in chunks of `chunk` with frozen
/// parameters.
pub fn per_sample_losses<T: Scalar>(
    model: &DualAttWaveNet<T>,
    bank: &WaveletBank<T>,
    data: &SplitInputs<T>,
    lambda1: f64,
    lambda2: f64,
    chunk: usize,
) -> Result<Vec<f64>> {
    let n = check_inputs(data)?;
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for ids in idx.chunks(chunk) {
        let (time, freq, target) = gather(data, ids)?;
        let pred = model.reconstruct(&time, &freq)?;
        let width = target.shape()[1];
        for b in 0..ids.len() {
            let p = Tensor::from_vec(&[1, width], pred.row(b).to_vec())?;
            let t = Tensor::from_vec(&[1, width], target.row(b).to_vec())?;
            out.push(composite_loss(&p, &t, bank, lambda1, lambda2)?);
        }
    }
    Ok(out)
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamRegistry<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update from the accumulated `grad` of every trainable parameter.
    pub fn step(&mut self, params: &mut ParamRegistry<T>, lr: f64) {
        self.step += 1;
        let c = |x: f64| T::from_f64_lossy(x);
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(self.step));
        let bc2 = c(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (c(lr), c(self.eps));
        let one = T::one();
        for ((_, p), (m, v)) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if !p.requires_grad {
                continue;
            }
            let g = p.grad.data();
            for (((w, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Per-epoch training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample composite loss of each epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
    pub wall_time_s: f64,
}

fn with_context(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, step {step}: {m}")),
        other => other,
    }
}

/// Fits `model` to reconstruct clean `data`. A learnable `bank` is trained
/// jointly as parameter `wavelet.bank` and renormalized after every step.
pub fn train<T: Scalar>(
    data: &SplitInputs<T>,
    model: &mut DualAttWaveNet<T>,
    bank: &mut WaveletBank<T>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_progress(data, model, bank, cfg, |_, _| {})
}

/// [`train`], calling `on_epoch(epoch, mean_loss)` after every epoch.
pub fn train_with_progress<T: Scalar>(
    data: &SplitInputs<T>,
    model: &mut DualAttWaveNet<T>,
    bank: &mut WaveletBank<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = check_inputs(data)?;
    if n == 0 {
        return Err(config_err!("training split is empty"));
    }
    if data.labels.iter().any(|&l| l != 0) {
        return Err(config_err!("training split must contain clean (label 0) samples only"));
    }
    if model.config().ablation != cfg.ablation {
        return Err(config_err!(
            "model built for ablation {} but training config asks for {}",
            model.config().ablation,
            cfg.ablation
        ));
    }
    if bank.is_learnable() && model.params().id(BANK_PARAM).is_none() {
        bank.register(model.params_mut())?;
    }
    let bank_id = model.params().id(BANK_PARAM);
    let lambda2 = cfg.effective_lambda2();

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(model.params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, ids) in order.chunks(cfg.batch_size).enumerate() {
            let (time, freq, target) = gather(data, ids)?;
            let tape = Tape::new();
            let bound = model.params().bind(&tape)?;
            let batch_loss = (|| {
                let pred = model.forward(&bound, tape.constant(time)?, tape.constant(freq)?)?;
                let loss = composite_loss_var(
                    pred,
                    tape.constant(target)?,
                    bank,
                    bank_id.map(|id| bound.var(id)),
                    cfg.lambda1,
                    lambda2,
                )?;
                let grads = tape.backward(loss)?;
                let value = loss.value().item()?;
                Ok::<_, Error>((value, grads))
            })()
            .map_err(|e| with_context(e, epoch, step))?;
            let (value, grads) = batch_loss;
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate(&bound, &grads)?;
            adam.step(params, cfg.learning_rate);
            if !params.all_finite() {
                return Err(Error::Numerical(format!(
                    "epoch {epoch}, step {step}: parameters became non-finite"
                )));
            }
            bank.sync_from(model.params_mut())?;
            total += value.to_f64_lossy() * ids.len() as f64;
            steps += 1;
        }
        let mean = total / n as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(TrainReport {
        loss_history: history,
        steps,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Detection threshold `μ + σ` of clean validation losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub value: f64,
}

impl Threshold {
    pub fn from_losses(losses: &[f64]) -> Result<Self> {
        if losses.is_empty() {
            return Err(config_err!("threshold calibration needs at least one validation loss"));
        }
        // Welford keeps a constant list's mean exact.
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, &x) in losses.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Numerical(format!("validation loss {k} is {x}")));
            }
            let d = x - mean;
            mean += d / (k + 1) as f64;
            m2 += d * (x - mean);
        }
        let sigma = (m2 / losses.len() as f64).sqrt();
        Ok(Self {
            mu: mean,
            sigma,
            value: mean + sigma,
        })
    }
}

/// Threshold from frozen-model losses on a clean validation split.
pub fn calibrate_threshold<T: Scalar>(
    model: &DualAttWaveNet<T>,
    bank: &WaveletBank<T>,
    validation: &SplitInputs<T>,
    lambda1: f64,
    lambda2: f64,
) -> Result<Threshold> {
    if validation.labels.is_empty() {
        return Err(config_err!("validation split is empty"));
    }
    if validation.labels.iter().any(|&l| l != 0) {
        return Err(config_err!("validation split must contain clean (label 0) samples only"));
    }
    let lambda2 = effective_lambda2(model.config().ablation, lambda2);
    Threshold::from_losses(&per_sample_losses(model, bank, validation, lambda1, lambda2, 64)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::Rng;

    fn random_split(n: usize, seed: u64) -> SplitInputs<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |_| -> Tensor<f64> {
            Tensor::from_vec(&[n, 800], (0..n * 800).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        SplitInputs {
            time: t(0),
            freq: t(1),
            labels: vec![0; n],
        }
    }

    fn bank() -> WaveletBank<f64> {
        WaveletBank::new(&[4.0, 8.0, 16.0], false).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let t = Threshold::from_losses(&[0.3; 5]).unwrap();
        assert_eq!((t.mu, t.sigma, t.value), (0.3, 0.0, 0.3));
        let t = Threshold::from_losses(&[0.0, 2.0]).unwrap();
        assert_eq!((t.mu, t.sigma, t.value), (1.0, 1.0, 2.0));
        let t = Threshold::from_losses(&[1.0, 2.0, 3.0]).unwrap();
        assert!((t.value - (2.0 + (2f64 / 3.0).sqrt())).abs() < 1e-12);
        assert!(Threshold::from_losses(&[]).is_err());
    }

    #[test]
    fn loss_is_zero_at_target_and_mse_without_wavelet() {
        let split = random_split(2, 1);
        let (_, _, target) = gather(&split, &[0, 1]).unwrap();
        let b = bank();
        assert_eq!(composite_loss(&target, &target, &b, 1.0, 1.0).unwrap(), 0.0);
        let pred = target.map(|v| v * 0.5);
        let mse = kernels::mse(&pred, &target).unwrap();
        assert_eq!(composite_loss(&pred, &target, &b, 2.0, 0.0).unwrap(), 2.0 * mse);
        assert!(composite_loss(&pred, &target, &b, -1.0, 0.0).unwrap_err().is_validation());
    }

    #[test]
    fn tape_and_plain_losses_agree() {
        let split = random_split(2, 2);
        let (_, _, target) = gather(&split, &[0, 1]).unwrap();
        let pred = target.map(|v| v.sin());
        let b = bank();
        let tape = Tape::new();
        let l = composite_loss_var(tape.constant(pred.clone()).unwrap(), tape.constant(target.clone()).unwrap(), &b, None, 1.0, 0.1)
            .unwrap();
        let tape_value = l.value().item().unwrap();
        let plain = composite_loss(&pred, &target, &b, 1.0, 0.1).unwrap();
        assert!((tape_value - plain).abs() < 1e-12 * plain.max(1.0));
    }

    #[test]
    fn one_epoch_history_and_determinism() {
        let split = random_split(8, 3);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        let run = || {
            let mut m = DualAttWaveNet::new(ModelConfig::default(), 0).unwrap();
            let mut b = bank();
            let r = train(&split, &mut m, &mut b, &cfg).unwrap();
            (m, r)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1.loss_history.len(), 1);
        assert_eq!(r1.steps, 2);
        assert_eq!(r1.loss_history, r2.loss_history);
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let split = random_split(4, 4);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut m = DualAttWaveNet::new(ModelConfig::default(), 0).unwrap();
        let before = m.clone();
        train(&split, &mut m, &mut bank(), &cfg).unwrap();
        for ((_, a), (_, b)) in m.params().iter().zip(before.params().iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn clean_only_training_data() {
        let mut split = random_split(4, 5);
        split.labels[2] = 1;
        let mut m = DualAttWaveNet::new(ModelConfig::default(), 0).unwrap();
        assert!(train(&split, &mut m, &mut bank(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn learnable_bank_stays_normalized() {
        let split = random_split(4, 6);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            learning_rate: 1e-2,
            learnable_bank: true,
            ..Default::default()
        };
        let mut m = DualAttWaveNet::new(ModelConfig::default(), 0).unwrap();
        let mut b = WaveletBank::new(&[4.0, 8.0, 16.0], true).unwrap();
        let initial = b.kernels().clone();
        train(&split, &mut m, &mut b, &cfg).unwrap();
        assert_ne!(b.kernels(), &initial);
        for s in 0..3 {
            let n: f64 = b.kernel(s).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert_eq!(m.params().by_name(BANK_PARAM).unwrap().value, *b.kernels());
    }
}
