//! The dual-domain reconstruction network.

mod attention;
pub mod checkpoint;
mod network;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub use attention::{affinity, mutual_attention, mutual_attention_var, AttentionParams};
pub use network::{encoder_geometry, DualAttWaveNet, EncoderGeometry, Which};

/// Component switches for the ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    #[serde(rename = "no-attn")]
    NoMutualAttention,
    #[serde(rename = "no-wavelet")]
    NoWaveletLoss,
    Vanilla,
}

impl Ablation {
    /// Ablation table order.
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoMutualAttention,
        Ablation::NoWaveletLoss,
        Ablation::Vanilla,
    ];

    pub fn uses_attention(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoWaveletLoss)
    }

    pub fn uses_wavelet_loss(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoMutualAttention)
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoMutualAttention => "no-attn",
            Ablation::NoWaveletLoss => "no-wavelet",
            Ablation::Vanilla => "vanilla",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "DualAttWaveNet (Full)",
            Ablation::NoMutualAttention => "w/o Mutual Attention",
            Ablation::NoWaveletLoss => "w/o Wavelet Loss",
            Ablation::Vanilla => "Vanilla Implementation",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Ablation::Full => 0,
            Ablation::NoMutualAttention => 1,
            Ablation::NoWaveletLoss => 2,
            Ablation::Vanilla => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl std::str::FromStr for Ablation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.cli_name() == s)
            .ok_or_else(|| config_err!("unknown ablation {s:?} (expected full, no-attn, no-wavelet, vanilla)"))
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.cli_name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Samples per domain.
    pub input_len: usize,
    pub latent_channels: usize,
    pub latent_len: usize,
    pub fused_dim: usize,
    /// Query/key channel reduction of the attention block.
    pub reduction_factor: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_len: 800,
            latent_channels: 16,
            latent_len: 4,
            fused_dim: 128,
            reduction_factor: 8,
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    /// Query/key width `C / reduction_factor`.
    pub fn head_dim(&self) -> usize {
        self.latent_channels / self.reduction_factor.max(1)
    }

    pub fn output_len(&self) -> usize {
        2 * self.input_len
    }

    pub fn validate(&self) -> Result<()> {
        let (c, l) = (self.latent_channels, self.latent_len);
        if c == 0 || l == 0 || self.reduction_factor == 0 {
            return Err(config_err!("latent dims and reduction factor must be positive"));
        }
        if c % self.reduction_factor != 0 {
            return Err(config_err!(
                "latent channels {c} not divisible by reduction factor {}",
                self.reduction_factor
            ));
        }
        if c % 2 != 0 {
            return Err(config_err!("latent channels {c} must be even"));
        }
        if self.fused_dim != 2 * c * l {
            return Err(config_err!("fused_dim {} != 2 * {c} * {l}", self.fused_dim));
        }
        encoder_geometry(self).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.latent_channels * c.latent_len, 64);
        assert_eq!(c.head_dim(), 2);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::default();
        c.fused_dim = 100;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.latent_channels = 12;
        c.fused_dim = 2 * 12 * 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_switches() {
        assert!(Ablation::Full.uses_attention() && Ablation::Full.uses_wavelet_loss());
        assert!(!Ablation::Vanilla.uses_attention() && !Ablation::Vanilla.uses_wavelet_loss());
        assert!(!Ablation::NoMutualAttention.uses_attention());
        assert!(!Ablation::NoWaveletLoss.uses_wavelet_loss());
        for a in Ablation::ALL {
            assert_eq!(a.cli_name().parse::<Ablation>().unwrap(), a);
            assert_eq!(Ablation::from_code(a.code()), Some(a));
        }
        assert!("bogus".parse::<Ablation>().is_err());
    }
}
