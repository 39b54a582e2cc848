use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Architecture scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 9x9 inputs; for tests and gradient checks.
    Tiny2d,
    /// 33x33 inputs, three conv blocks.
    Desk2d,
    /// 17^3 inputs, three conv blocks.
    Desk3d,
    /// 51^3 inputs, five conv blocks, the full-size layer widths.
    Paper3d,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny2d => "tiny2d",
            Preset::Desk2d => "desk2d",
            Preset::Desk3d => "desk3d",
            Preset::Paper3d => "paper3d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tiny2d" => Ok(Preset::Tiny2d),
            "desk2d" => Ok(Preset::Desk2d),
            "desk3d" => Ok(Preset::Desk3d),
            "paper3d" => Ok(Preset::Paper3d),
            _ => Err(Error::InvalidParameter(format!("unknown preset {s:?}"))),
        }
    }

    pub fn architecture(self) -> Architecture {
        match self {
            Preset::Tiny2d => Architecture {
                input: vec![9, 9],
                enc_channels: vec![2, 4],
                dense1: 8,
                fork: 6,
                dec_dense: vec![4, 6],
                dec_base_channels: 3,
                dec_channels: vec![3, 2],
                final_grow: 1,
                gen_hidden: 8,
            },
            Preset::Desk2d => Architecture {
                input: vec![33, 33],
                enc_channels: vec![16, 32, 64],
                dense1: 256,
                fork: 128,
                dec_dense: vec![32, 64],
                dec_base_channels: 32,
                dec_channels: vec![32, 16, 8],
                final_grow: 1,
                gen_hidden: 8,
            },
            Preset::Desk3d => Architecture {
                input: vec![17, 17, 17],
                enc_channels: vec![8, 16, 32],
                dense1: 256,
                fork: 128,
                dec_dense: vec![32, 64],
                dec_base_channels: 32,
                dec_channels: vec![16, 8, 4],
                final_grow: 1,
                gen_hidden: 8,
            },
            Preset::Paper3d => Architecture {
                input: vec![51, 51, 51],
                enc_channels: vec![16, 32, 64, 128, 256],
                dense1: 2048,
                fork: 1024,
                dec_dense: vec![32, 64],
                dec_base_channels: 64,
                dec_channels: vec![64, 32, 16],
                final_grow: 3,
                gen_hidden: 8,
            },
        }
    }
}

/// Layer sizes implied by a preset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Spatial input dims (2 or 3 axes).
    pub input: Vec<usize>,
    /// Encoder conv channels; each block is conv k3 + LReLU + max-pool 2.
    pub enc_channels: Vec<usize>,
    pub dense1: usize,
    /// Width of the four fork layers.
    pub fork: usize,
    /// Hidden widths of the decoder's dense stack.
    pub dec_dense: Vec<usize>,
    pub dec_base_channels: usize,
    /// Channels after each nearest-upsample + conv block.
    pub dec_channels: Vec<usize>,
    /// Extra voxels per axis added by the final convolution.
    pub final_grow: usize,
    /// Hidden width of the mixture generator.
    pub gen_hidden: usize,
}

impl Architecture {
    pub fn ndim(&self) -> usize {
        self.input.len()
    }

    /// Spatial size after the encoder's pooling chain.
    pub fn encoded_dims(&self) -> Vec<usize> {
        let mut d = self.input.clone();
        for _ in &self.enc_channels {
            d.iter_mut().for_each(|v| *v /= 2);
        }
        d
    }

    pub fn flatten_size(&self) -> usize {
        self.encoded_dims().iter().product::<usize>() * self.enc_channels.last().copied().unwrap_or(1)
    }

    /// Spatial size of the decoder's reshaped dense output.
    pub fn decoder_base_dims(&self) -> Vec<usize> {
        let up = 1usize << self.dec_channels.len();
        self.input.iter().map(|&n| (n - self.final_grow) / up).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.ndim()) {
            return Err(Error::InvalidParameter("architecture must be 2D or 3D".into()));
        }
        if self.encoded_dims().contains(&0) {
            return Err(Error::InvalidParameter(format!("input {:?} too small for encoder", self.input)));
        }
        let up = 1usize << self.dec_channels.len();
        for &n in &self.input {
            if n <= self.final_grow || !(n - self.final_grow).is_multiple_of(up) {
                return Err(Error::InvalidParameter(format!(
                    "decoder cannot reach input size {n} with {} upsamplings and growth {}",
                    self.dec_channels.len(),
                    self.final_grow
                )));
            }
        }
        Ok(())
    }
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub preset: Preset,
    pub latent_dim: usize,
    pub property_dim: usize,
    /// Number of prior mixture components.
    pub k: usize,
    pub w_reg: f64,
    pub w_style: f64,
    pub w_kl: f64,
    /// Multiplier bringing the style loss to unit scale; `None` means it is
    /// measured on the first training batch.
    pub style_scale: Option<f64>,
    /// Vanilla VAE: fixed standard-normal prior instead of the generator.
    pub vanilla: bool,
    pub log_var_clamp: f64,
    pub bank_channels: Vec<usize>,
    pub bank_stride: usize,
    pub bank_seed: u64,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(preset: Preset) -> Self {
        ModelConfig {
            preset,
            latent_dim: 16,
            property_dim: 1,
            k: 2,
            w_reg: 2.0,
            w_style: 30.0,
            w_kl: 0.1,
            style_scale: None,
            vanilla: false,
            log_var_clamp: 10.0,
            bank_channels: vec![8, 16, 32],
            bank_stride: 1,
            bank_seed: 7,
            init_seed: 1,
        }
    }

    /// Vanilla VAE variant of `self`: no regression term, single fixed
    /// standard-normal prior.
    pub fn vanilla(mut self) -> Self {
        self.vanilla = true;
        self.w_reg = 0.0;
        self.k = 1;
        self
    }

    pub fn architecture(&self) -> Architecture {
        self.preset.architecture()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if !(self.property_dim == 1 || self.property_dim == 6) {
            return bad(format!("property_dim {} must be 1 or 6", self.property_dim));
        }
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        let w_reg_ok = if self.vanilla { self.w_reg >= 0.0 } else { self.w_reg > 0.0 };
        if !(w_reg_ok && self.w_style > 0.0 && self.w_kl > 0.0) || !(self.w_reg + self.w_style + self.w_kl).is_finite()
        {
            return bad(format!("loss weights ({}, {}, {}) must be positive", self.w_reg, self.w_style, self.w_kl));
        }
        if let Some(s) = self.style_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("style_scale {s} must be positive"));
            }
        }
        if !(self.log_var_clamp > 0.0) {
            return bad("log_var_clamp must be positive".into());
        }
        self.architecture().validate()
    }
}
