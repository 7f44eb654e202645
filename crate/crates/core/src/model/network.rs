use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, shape_err, Result};
use crate::model::attention::{mutual_attention_var, AttentionParams};
use crate::model::{Ablation, ModelConfig};
use crate::numerics::{Bound, Conv1dSpec, PadMode, ParamId, ParamRegistry, Tape, Tensor, Var};
use crate::scalar::Scalar;

const ENC_KERNEL: usize = 7;
const ENC_STRIDED_LAYERS: usize = 4;
const DEC_KERNEL: usize = 4;
const DEC_STRIDE: usize = 2;
const DEC_LAYERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Time,
    Freq,
}

impl Which {
    fn prefix(self) -> &'static str {
        match self {
            Which::Time => "time_encoder",
            Which::Freq => "freq_encoder",
        }
    }
}

/// Layer lengths of the encoder and decoder for a config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderGeometry {
    /// Length after each strided layer.
    pub strided_lens: Vec<usize>,
    /// Kernel and stride of the final layer that lands on `latent_len`.
    pub final_kernel: usize,
    pub final_stride: usize,
    /// Length after each transposed layer of the decoder.
    pub decoder_lens: Vec<usize>,
}

pub fn encoder_geometry(cfg: &ModelConfig) -> Result<EncoderGeometry> {
    let mut len = cfg.input_len;
    let mut strided_lens = Vec::with_capacity(ENC_STRIDED_LAYERS);
    let spec = Conv1dSpec::new(2, ENC_KERNEL / 2, PadMode::Zero);
    for _ in 0..ENC_STRIDED_LAYERS {
        len = spec.output_len(len, ENC_KERNEL)?;
        strided_lens.push(len);
    }
    if len < cfg.latent_len {
        return Err(config_err!(
            "input length {} too short: encoder reaches {len} < latent length {}",
            cfg.input_len,
            cfg.latent_len
        ));
    }
    let final_stride = len / cfg.latent_len;
    let final_kernel = len - (cfg.latent_len - 1) * final_stride;
    let mut decoder_lens = Vec::with_capacity(DEC_LAYERS);
    let mut d = cfg.latent_len;
    for _ in 0..DEC_LAYERS {
        d = (d - 1) * DEC_STRIDE + DEC_KERNEL;
        decoder_lens.push(d);
    }
    Ok(EncoderGeometry {
        strided_lens,
        final_kernel,
        final_stride,
        decoder_lens,
    })
}

#[derive(Clone, Debug)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    spec: Conv1dSpec,
}

#[derive(Clone, Debug)]
struct Layout {
    time: Vec<ConvLayer>,
    freq: Vec<ConvLayer>,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    gamma: ParamId,
    deconv: Vec<(ParamId, ParamId)>,
    proj: (ParamId, ParamId),
}

/// Dual-encoder, cross-attention fused, joint-decoder autoencoder.
#[derive(Clone, Debug)]
pub struct DualAttWaveNet<T> {
    config: ModelConfig,
    geometry: EncoderGeometry,
    params: ParamRegistry<T>,
    layout: Layout,
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

impl<T: Scalar> DualAttWaveNet<T> {
    /// Fresh weights: uniform in `±1/sqrt(fan_in)`, zero biases, `γ = 0`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let geometry = encoder_geometry(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamRegistry::new();
        let c = config.latent_channels;

        let enc_channels = [1, c / 2, c, c, c, c];
        let encoder = |which: Which, params: &mut ParamRegistry<T>, rng: &mut ChaCha8Rng| -> Result<Vec<ConvLayer>> {
            let mut layers = Vec::new();
            for i in 0..=ENC_STRIDED_LAYERS {
                let (cin, cout) = (enc_channels[i], enc_channels[i + 1]);
                let (k, spec) = if i < ENC_STRIDED_LAYERS {
                    (ENC_KERNEL, Conv1dSpec::new(2, ENC_KERNEL / 2, PadMode::Zero))
                } else {
                    (geometry.final_kernel, Conv1dSpec::new(geometry.final_stride, 0, PadMode::Zero))
                };
                let name = format!("{}.conv{i}", which.prefix());
                let weight = params.register(&format!("{name}.weight"), uniform(rng, &[cout, cin, k], cin * k))?;
                let bias = params.register(&format!("{name}.bias"), Tensor::zeros(&[cout]))?;
                layers.push(ConvLayer { weight, bias, spec });
            }
            Ok(layers)
        };
        let time = encoder(Which::Time, &mut params, &mut rng)?;
        let freq = encoder(Which::Freq, &mut params, &mut rng)?;

        let d = config.head_dim();
        let w_q = params.register("attention.w_q", uniform(&mut rng, &[d, c, 1], c))?;
        let w_k = params.register("attention.w_k", uniform(&mut rng, &[d, c, 1], c))?;
        let w_v = params.register("attention.w_v", uniform(&mut rng, &[c, c, 1], c))?;
        let gamma = params.register("attention.gamma", Tensor::scalar(T::zero()))?;

        let dec_channels = [2 * c, c, c, c / 2];
        let mut deconv = Vec::new();
        for i in 0..DEC_LAYERS {
            let (cin, cout) = (dec_channels[i], dec_channels[i + 1]);
            let w = params.register(
                &format!("decoder.deconv{i}.weight"),
                uniform(&mut rng, &[cin, cout, DEC_KERNEL], cin * DEC_KERNEL),
            )?;
            let b = params.register(&format!("decoder.deconv{i}.bias"), Tensor::zeros(&[cout]))?;
            deconv.push((w, b));
        }
        let flat = dec_channels[DEC_LAYERS] * geometry.decoder_lens[DEC_LAYERS - 1];
        let out = config.output_len();
        let proj = (
            params.register("decoder.proj.weight", uniform(&mut rng, &[out, flat], flat))?,
            params.register("decoder.proj.bias", Tensor::zeros(&[out]))?,
        );

        let mut model = Self {
            config,
            geometry,
            params,
            layout: Layout {
                time,
                freq,
                w_q,
                w_k,
                w_v,
                gamma,
                deconv,
                proj,
            },
        };
        model.apply_ablation_freeze();
        Ok(model)
    }

    /// Attention weights are frozen when the variant bypasses the block.
    fn apply_ablation_freeze(&mut self) {
        let on = self.config.ablation.uses_attention();
        for id in [self.layout.w_q, self.layout.w_k, self.layout.w_v, self.layout.gamma] {
            self.params.set_requires_grad(id, on);
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn geometry(&self) -> &EncoderGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &ParamRegistry<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamRegistry<T> {
        &mut self.params
    }

    /// Same weights, different ablation switch.
    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        let mut m = self.clone();
        m.config.ablation = ablation;
        m.apply_ablation_freeze();
        m
    }

    pub fn attention_param_ids(&self) -> [ParamId; 4] {
        [self.layout.w_q, self.layout.w_k, self.layout.w_v, self.layout.gamma]
    }

    pub fn attention_params(&self) -> AttentionParams<T> {
        let p = |id| self.params.get(id).value.clone();
        AttentionParams {
            w_q: p(self.layout.w_q),
            w_k: p(self.layout.w_k),
            w_v: p(self.layout.w_v),
            gamma: p(self.layout.gamma).data()[0],
        }
    }

    pub fn cast<U: Scalar>(&self) -> DualAttWaveNet<U> {
        DualAttWaveNet {
            config: self.config,
            geometry: self.geometry.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// `[B, 1, L]` or `[B, L]` to latent `[B, C, L_latent]`.
    pub fn encode<'t>(&self, bound: &Bound<'t, T>, x: Var<'t, T>, which: Which) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let batch = shape[0];
        let ok = match shape.as_slice() {
            [_, l] => *l == self.config.input_len,
            [_, 1, l] => *l == self.config.input_len,
            _ => false,
        };
        if !ok {
            return Err(shape_err!(
                "{} input must be [B,1,{}] or [B,{}], got {shape:?}",
                which.prefix(),
                self.config.input_len,
                self.config.input_len
            ));
        }
        let layers = match which {
            Which::Time => &self.layout.time,
            Which::Freq => &self.layout.freq,
        };
        let mut h = x.reshape(&[batch, 1, self.config.input_len])?;
        for (i, layer) in layers.iter().enumerate() {
            h = h.conv1d(bound.var(layer.weight), Some(bound.var(layer.bias)), layer.spec)?;
            if i < ENC_STRIDED_LAYERS {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    pub fn mutual_attention<'t>(&self, bound: &Bound<'t, T>, x: Var<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let l = &self.layout;
        mutual_attention_var(x, y, bound.var(l.w_q), bound.var(l.w_k), bound.var(l.w_v), bound.var(l.gamma))
    }

    /// `x̂ = attn(x, y)`, then `ŷ = attn(y, x̂)`, sharing weights.
    pub fn fuse_bidirectional<'t>(
        &self,
        bound: &Bound<'t, T>,
        x: Var<'t, T>,
        y: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let x_hat = self.mutual_attention(bound, x, y)?;
        let y_hat = self.mutual_attention(bound, y, x_hat)?;
        Ok((x_hat, y_hat))
    }

    /// `[B, fused_dim]` to `[B, 2 * input_len]`.
    pub fn decode<'t>(&self, bound: &Bound<'t, T>, fused: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = fused.shape();
        if shape.len() != 2 || shape[1] != self.config.fused_dim {
            return Err(shape_err!(
                "decoder input must be [B,{}], got {shape:?}",
                self.config.fused_dim
            ));
        }
        let batch = shape[0];
        let mut h = fused.reshape(&[batch, 2 * self.config.latent_channels, self.config.latent_len])?;
        for &(w, b) in &self.layout.deconv {
            h = h.conv1d_transpose(bound.var(w), Some(bound.var(b)), DEC_STRIDE)?.relu()?;
        }
        let flat: usize = h.shape()[1..].iter().product();
        let (w, b) = self.layout.proj;
        h.reshape(&[batch, flat])?.linear(bound.var(w), Some(bound.var(b)))
    }

    /// Full reconstruction `[B, 2 * input_len]`: time estimate first, then
    /// frequency estimate.
    pub fn forward<'t>(
        &self,
        bound: &Bound<'t, T>,
        time: Var<'t, T>,
        freq: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let x = self.encode(bound, time, Which::Time)?;
        let y = self.encode(bound, freq, Which::Freq)?;
        let (x, y) = if self.config.ablation.uses_attention() {
            self.fuse_bidirectional(bound, x, y)?
        } else {
            (x, y)
        };
        let batch = x.shape()[0];
        let fused = x.concat(y)?.reshape(&[batch, self.config.fused_dim])?;
        self.decode(bound, fused)
    }

    /// Inference without gradient bookkeeping.
    pub fn reconstruct(&self, time: &Tensor<T>, freq: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let bound = self.params.bind_frozen(&tape)?;
        let out = self.forward(&bound, tape.constant(time.clone())?, tape.constant(freq.clone())?)?;
        let value = out.value().clone();
        Ok(value)
    }
}
