//! Flat `key = value` run configuration.
//!
//! Every key has a default (see [`KEYS`]); unknown keys are rejected. Lines
//! starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use strucprop_core::autodiff::AdamConfig;
use strucprop_core::homogenize::{PhaseSpec, PropertyMode, SolverOptions};
use strucprop_core::inference::InverseOptions;
use strucprop_core::latentopt::{AnnealSchedule, CompareOptions};
use strucprop_core::microgen::{GenerationConfig, MorphologyFilter};
use strucprop_core::vaereg::{ModelConfig, Preset, TrainConfig};
use strucprop_core::Shape;

use crate::error::{Error, Result};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed for data generation, the split and training noise; MF_SEED overrides"),
    ("shape", "33,33", "grid dims (2 or 3 axes)"),
    ("sigma_levels", "1,3,5,7", "filter sigmas; every combination over the axes is used"),
    ("sigma_set", "", "explicit filters, e.g. `1,7;7,1`; overrides sigma_levels when set"),
    ("fields_per_filter", "75", "random fields per filter"),
    ("u_min", "0.2", "lower bound of the threshold quantile"),
    ("u_max", "0.8", "upper bound of the threshold quantile"),
    ("hard_young", "120", "hard phase Young's modulus, GPa"),
    ("hard_poisson", "0.3", "hard phase Poisson ratio"),
    ("soft_young", "2.4", "soft phase Young's modulus, GPa"),
    ("soft_poisson", "0.3", "soft phase Poisson ratio"),
    ("property_dim", "1", "1 (C11) or 6 (C11 C21 C31 C22 C32 C33)"),
    ("solver_tol", "1e-6", "homogenization residual tolerance"),
    ("solver_max_iter", "500", "homogenization iteration cap"),
    ("preset", "desk2d", "architecture: tiny2d, desk2d, desk3d, paper3d"),
    ("latent_dim", "16", "latent dimensions"),
    ("k", "2", "prior mixture components"),
    ("w_reg", "2", "regression NLL weight"),
    ("w_style", "30", "style loss weight"),
    ("w_kl", "0.1", "KL weight"),
    ("style_scale", "auto", "style normalization multiplier; auto measures it on the first batch"),
    ("vanilla", "false", "train a plain VAE (no regression, fixed N(0, I) prior)"),
    ("log_var_clamp", "10", "log-variance clamp"),
    ("bank_channels", "8,16,32", "style feature bank channels"),
    ("bank_stride", "1", "style feature bank stride"),
    ("bank_seed", "7", "style feature bank seed"),
    ("init_seed", "1", "parameter initialisation seed"),
    ("lr", "0.0005", "Adam learning rate"),
    ("beta1", "0.75", "Adam beta1"),
    ("beta2", "0.999", "Adam beta2"),
    ("adam_eps", "1e-8", "Adam epsilon"),
    ("batch_size", "8", "mini-batch size"),
    ("patience", "10", "early-stopping patience in epochs"),
    ("max_epochs", "60", "epoch cap"),
    ("train_fraction", "0.6", "training share of the split"),
    ("val_fraction", "0.2", "validation share of the split"),
    ("targets", "", "inverse targets; `;` separates targets, `,` separates entries of one target"),
    ("pi_min", "0.05", "smallest prior weight kept by inverse inference"),
    ("binarize_threshold", "0.5", "threshold applied to decoded grids"),
    ("sa_t0", "auto", "annealing initial temperature; auto uses the starting objective"),
    ("sa_alpha", "0.97", "annealing cooling factor"),
    ("sa_step", "0.25", "annealing proposal stddev"),
    ("sa_seed", "0", "annealing seed"),
    ("sa_random_starts", "5", "random-start searches per target"),
    ("sa_iters_random", "200", "iterations per random-start search"),
    ("sa_iters_warm", "10", "iterations per warm-start search"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn optional(key: &str, v: &str) -> Result<Option<f64>> {
    if v.trim() == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overlay `key = value` lines onto this configuration without validating.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&read_text(path)?)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_str(&read_text(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    /// Apply the `MF_SEED` environment override.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("MF_SEED") {
            self.set("seed", &v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unknown key {key}"))
    }

    /// Canonical text form: every key in documented order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _, _) in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k));
        }
        s
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        KEYS.iter().map(|(k, _, _)| (*k, self.get(k)))
    }

    /// Parse every typed view once so errors surface at load time.
    pub fn validate(&self) -> Result<()> {
        self.generation()?;
        self.phases()?;
        self.solver()?;
        self.property_mode()?;
        let m = self.model()?;
        m.validate()?;
        if m.architecture().input != self.shape()?.dims() {
            return Err(Error::Config(format!(
                "preset {} expects grids {:?}, config shape is {:?}",
                m.preset.name(),
                m.architecture().input,
                self.shape()?.dims()
            )));
        }
        self.training()?;
        self.targets()?;
        self.inverse()?;
        self.compare()?.schedule.validate()?;
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        parse("seed", self.get("seed"))
    }

    pub fn shape(&self) -> Result<Shape> {
        Ok(Shape::new(&parse_list::<usize>("shape", self.get("shape"))?)?)
    }

    pub fn generation(&self) -> Result<GenerationConfig> {
        let shape = self.shape()?;
        let explicit = self.get("sigma_set").trim();
        let sigma_set = if explicit.is_empty() {
            MorphologyFilter::grid(&parse_list::<f64>("sigma_levels", self.get("sigma_levels"))?, shape.ndim())?
        } else {
            explicit
                .split(';')
                .map(|s| Ok(MorphologyFilter::new(&parse_list::<f64>("sigma_set", s)?)?))
                .collect::<Result<Vec<_>>>()?
        };
        let cfg = GenerationConfig {
            shape,
            sigma_set,
            fields_per_filter: parse("fields_per_filter", self.get("fields_per_filter"))?,
            u_range: (parse("u_min", self.get("u_min"))?, parse("u_max", self.get("u_max"))?),
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn phases(&self) -> Result<(PhaseSpec, PhaseSpec)> {
        let hard = PhaseSpec::new(
            parse("hard_young", self.get("hard_young"))?,
            parse("hard_poisson", self.get("hard_poisson"))?,
        )?;
        let soft = PhaseSpec::new(
            parse("soft_young", self.get("soft_young"))?,
            parse("soft_poisson", self.get("soft_poisson"))?,
        )?;
        Ok((hard, soft))
    }

    pub fn solver(&self) -> Result<SolverOptions> {
        Ok(SolverOptions {
            tol: parse("solver_tol", self.get("solver_tol"))?,
            max_iter: parse("solver_max_iter", self.get("solver_max_iter"))?,
        })
    }

    pub fn property_mode(&self) -> Result<PropertyMode> {
        Ok(PropertyMode::from_dim(parse("property_dim", self.get("property_dim"))?)?)
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::new(Preset::parse(self.get("preset"))?);
        m.latent_dim = parse("latent_dim", self.get("latent_dim"))?;
        m.property_dim = parse("property_dim", self.get("property_dim"))?;
        m.k = parse("k", self.get("k"))?;
        m.w_reg = parse("w_reg", self.get("w_reg"))?;
        m.w_style = parse("w_style", self.get("w_style"))?;
        m.w_kl = parse("w_kl", self.get("w_kl"))?;
        m.style_scale = optional("style_scale", self.get("style_scale"))?;
        if parse::<bool>("vanilla", self.get("vanilla"))? {
            m = m.vanilla();
        }
        m.log_var_clamp = parse("log_var_clamp", self.get("log_var_clamp"))?;
        m.bank_channels = parse_list("bank_channels", self.get("bank_channels"))?;
        m.bank_stride = parse("bank_stride", self.get("bank_stride"))?;
        m.bank_seed = parse("bank_seed", self.get("bank_seed"))?;
        m.init_seed = parse("init_seed", self.get("init_seed"))?;
        Ok(m)
    }

    pub fn training(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            adam: AdamConfig {
                lr: parse("lr", self.get("lr"))?,
                beta1: parse("beta1", self.get("beta1"))?,
                beta2: parse("beta2", self.get("beta2"))?,
                eps: parse("adam_eps", self.get("adam_eps"))?,
            },
            batch_size: parse("batch_size", self.get("batch_size"))?,
            patience: parse("patience", self.get("patience"))?,
            max_epochs: parse("max_epochs", self.get("max_epochs"))?,
            seed: self.seed()?,
            train_fraction: parse("train_fraction", self.get("train_fraction"))?,
            val_fraction: parse("val_fraction", self.get("val_fraction"))?,
        })
    }

    pub fn targets(&self) -> Result<Vec<Vec<f64>>> {
        self.get("targets").split(';').filter(|s| !s.trim().is_empty()).map(|s| parse_list("targets", s)).collect()
    }

    pub fn inverse(&self) -> Result<InverseOptions> {
        Ok(InverseOptions {
            pi_min: parse("pi_min", self.get("pi_min"))?,
            binarize_threshold: parse("binarize_threshold", self.get("binarize_threshold"))?,
        })
    }

    pub fn compare(&self) -> Result<CompareOptions> {
        Ok(CompareOptions {
            n_random: parse("sa_random_starts", self.get("sa_random_starts"))?,
            iters_random: parse("sa_iters_random", self.get("sa_iters_random"))?,
            iters_warm: parse("sa_iters_warm", self.get("sa_iters_warm"))?,
            schedule: AnnealSchedule {
                t0: optional("sa_t0", self.get("sa_t0"))?,
                alpha: parse("sa_alpha", self.get("sa_alpha"))?,
                step_sigma: parse("sa_step", self.get("sa_step"))?,
                max_iter: 0,
                seed: parse("sa_seed", self.get("sa_seed"))?,
            },
            inverse: self.inverse()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
        let g = RunConfig::default().generation().unwrap();
        assert_eq!(g.record_count(), 1200);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse_str("nonsense = 1").is_err());
        assert!(RunConfig::parse_str("seed 3").is_err());
        assert!(RunConfig::parse_str("k = two").is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig::parse_str("# comment\nseed = 5\nsigma_set = 1,7;7,1\nk = 1\n").unwrap();
        assert_eq!(RunConfig::parse_str(&c.to_text()).unwrap(), c);
        assert_eq!(c.generation().unwrap().sigma_set.len(), 2);
        assert_eq!(c.model().unwrap().k, 1);
    }

    #[test]
    fn preset_must_match_shape() {
        assert!(RunConfig::parse_str("shape = 17,17,17").is_err());
        RunConfig::parse_str("shape = 17,17,17\npreset = desk3d\nsigma_levels = 1,5").unwrap();
    }
}
