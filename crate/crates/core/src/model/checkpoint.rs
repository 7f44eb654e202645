//! `DAWM` checkpoint files.
//!
//! Layout (little-endian): magic, version `u32`, config block, then
//! `param_count u32` named records `name_len u16, name, rank u8,
//! dims u32×rank, f64×numel`. The config block holds the model shape
//! (`input_len, C, L, fused_dim, reduction` as `u32`), ablation code `u8`,
//! learnable-bank flag `u8`, `λ1 f64`, `λ2 f64`, `n_scales u32`, scales
//! `f64×n`, and a threshold flag `u8` followed by `mu, sigma, value f64`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, u32_of, write_file, ByteReader, ByteWriter};
use crate::model::{Ablation, DualAttWaveNet, ModelConfig};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::training::Threshold;
use crate::wavelet::WaveletBank;

pub const MAGIC: &[u8; 4] = b"DAWM";
pub const VERSION: u32 = 1;

/// Everything needed to score new data: weights, loss setup and threshold.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: DualAttWaveNet<T>,
    pub bank: WaveletBank<T>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub threshold: Option<Threshold>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = self.model.config();
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        for (v, what) in [
            (cfg.input_len, "input_len"),
            (cfg.latent_channels, "latent_channels"),
            (cfg.latent_len, "latent_len"),
            (cfg.fused_dim, "fused_dim"),
            (cfg.reduction_factor, "reduction_factor"),
        ] {
            w.u32(u32_of(v, what)?);
        }
        w.u8(cfg.ablation.code());
        w.u8(self.bank.is_learnable() as u8);
        w.f64(self.lambda1);
        w.f64(self.lambda2);
        w.u32(u32_of(self.bank.num_scales(), "n_scales")?);
        for &s in self.bank.scales() {
            w.f64(s);
        }
        match self.threshold {
            Some(t) => {
                w.u8(1);
                w.f64(t.mu);
                w.f64(t.sigma);
                w.f64(t.value);
            }
            None => {
                w.u8(0);
                for _ in 0..3 {
                    w.f64(0.0);
                }
            }
        }
        let params = self.model.params();
        w.u32(u32_of(params.len(), "param_count")?);
        for (name, p) in params.iter() {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Config(format!("parameter name too long: {name}")))?;
            w.u16(len);
            w.bytes(name.as_bytes());
            let shape = p.value.shape();
            w.u8(shape.len() as u8);
            for &d in shape {
                w.u32(u32_of(d, "dim")?);
            }
            for v in p.value.data() {
                w.f64(v.to_f64_lossy());
            }
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported checkpoint version {version}, expected {VERSION}"),
            });
        }
        let mut dims = [0usize; 5];
        for (d, what) in dims.iter_mut().zip([
            "input_len",
            "latent_channels",
            "latent_len",
            "fused_dim",
            "reduction_factor",
        ]) {
            *d = r.u32(what)? as usize;
        }
        let code = r.u8("ablation")?;
        let ablation = Ablation::from_code(code).ok_or_else(|| r.error(format!("unknown ablation code {code}")))?;
        let learnable = match r.u8("learnable flag")? {
            0 => false,
            1 => true,
            v => return Err(r.error(format!("bad learnable flag {v}"))),
        };
        let lambda1 = r.f64("lambda1")?;
        let lambda2 = r.f64("lambda2")?;
        let n_scales = r.u32("n_scales")? as usize;
        let scales = r.f64_vec(n_scales, "scales")?;
        let has_threshold = r.u8("threshold flag")?;
        let (mu, sigma, value) = (r.f64("mu")?, r.f64("sigma")?, r.f64("threshold")?);
        let threshold = match has_threshold {
            0 => None,
            1 => Some(Threshold { mu, sigma, value }),
            v => return Err(r.error(format!("bad threshold flag {v}"))),
        };

        let config = ModelConfig {
            input_len: dims[0],
            latent_channels: dims[1],
            latent_len: dims[2],
            fused_dim: dims[3],
            reduction_factor: dims[4],
            ablation,
        };
        let mut model = DualAttWaveNet::<T>::new(config, 0)?;
        let mut bank = WaveletBank::<T>::new(&scales, learnable)?;
        bank.register(model.params_mut())?;

        let count = r.u32("param_count")? as usize;
        let expected = model.params().len();
        if count != expected {
            return Err(r.error(format!(
                "checkpoint has {count} parameters, model config expects {expected}"
            )));
        }
        for _ in 0..count {
            let at = r.offset();
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| r.error("parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dim")? as usize);
            }
            let numel = shape.iter().product();
            let values = r.f64_vec(numel, "values")?;
            let Some(current) = model.params().by_name(&name) else {
                return Err(Error::Format {
                    offset: at,
                    message: format!("unknown parameter {name:?} for this model config"),
                });
            };
            if current.value.shape() != shape.as_slice() {
                return Err(Error::Format {
                    offset: at,
                    message: format!(
                        "parameter {name:?} stored with shape {shape:?}, model config expects {:?}",
                        current.value.shape()
                    ),
                });
            }
            let t = Tensor::from_vec(&shape, values.into_iter().map(T::from_f64_lossy).collect())?;
            model.params_mut().set_value(&name, t)?;
        }
        r.finish()?;
        if learnable {
            let taps = model.params().by_name(crate::wavelet::BANK_PARAM).expect("registered").value.clone();
            // Stored taps are already unit norm; keep them verbatim.
            bank.set_kernels_raw(taps)?;
        }
        Ok(Self {
            model,
            bank,
            lambda1,
            lambda2,
            threshold,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
