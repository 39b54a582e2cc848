use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::config::{Architecture, ModelConfig};
use super::kl::{self, LatentGaussian, MixturePrior};
use crate::autodiff::{he_normal, Activation, ConvGeom, Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng::{self, Rng};
use crate::statfeat::{self, FeatureBank, GramSet};
use crate::{math, Error, Result, VoxelGrid};

const SLOPE: f64 = 0.2;
/// Output heads start small so initial codes and log-variances sit near 0.
const HEAD_GAIN: f64 = 0.1;

/// Per-property z-score statistics from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::Empty("need at least two rows to normalize".into()));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v / n as f64);
        }
        let mut std = vec![0.0; d];
        for r in rows {
            std.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n as f64);
        }
        for s in &mut std {
            *s = math::sqrt(*s);
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        Ok(Normalization { mean, std })
    }

    pub fn normalize(&self, c: &[f64]) -> Vec<f64> {
        c.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn denormalize(&self, c: &[f64]) -> Vec<f64> {
        c.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| v * s + m).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    enc_conv: Vec<Conv>,
    dense1: Dense,
    z_hidden: Dense,
    z_mean: Dense,
    zv_hidden: Dense,
    z_log_var: Dense,
    c_hidden: Dense,
    c_mean: Dense,
    cv_hidden: Dense,
    c_log_var: Dense,
    dec_dense: Vec<Dense>,
    dec_conv: Vec<Conv>,
    dec_out: Conv,
    gen_hidden: Option<Dense>,
    gen_pi: Option<Dense>,
    gen_mean: Option<Dense>,
    gen_log_var: Option<Dense>,
}

/// The joint encoder / regressor / decoder / prior-generator network.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    arch: Architecture,
    params: ParamStore,
    layout: Layout,
    bank: FeatureBank,
    pub normalization: Normalization,
}

/// Prior `p(z|c)` as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct PriorNodes {
    pub log_pi: Option<Var>,
    pub means: Var,
    pub log_vars: Var,
}

/// Loss components of one sample or averages over many.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub reg_nll: f64,
    pub style: f64,
    pub kl: f64,
}

impl LossParts {
    pub fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.reg_nll += o.reg_nll;
        self.style += o.style;
        self.kl += o.kl;
    }

    pub fn scaled(mut self, f: f64) -> Self {
        self.total *= f;
        self.reg_nll *= f;
        self.style *= f;
        self.kl *= f;
        self
    }
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn dense(&mut self, name: &str, inp: usize, out: usize, gain: f64) -> Dense {
        let mut w = he_normal(&[out, inp], inp, self.rng);
        w.scale(gain);
        let w = self.store.add(format!("{name}.w"), w);
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(&[out]));
        Dense { w, b }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, ndim: usize) -> Conv {
        let kd = if ndim == 2 { 1 } else { 3 };
        let fan_in = cin * kd * 9;
        let w = self.store.add(format!("{name}.w"), he_normal(&[cout, cin, kd, 3, 3], fan_in, self.rng));
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv { w, b }
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture();
        let nd = arch.ndim();
        let mut r = rng::stream(config.init_seed, 0x1417);
        let mut b = Builder { store: ParamStore::new(), rng: &mut r };
        let mut enc_conv = Vec::new();
        let mut cin = 1;
        for (i, &c) in arch.enc_channels.iter().enumerate() {
            enc_conv.push(b.conv(&format!("enc.conv{}", i + 1), cin, c, nd));
            cin = c;
        }
        let flat = arch.flatten_size();
        let (l, p, f) = (config.latent_dim, config.property_dim, arch.fork);
        let dense1 = b.dense("enc.dense1", flat, arch.dense1, 1.0);
        let z_hidden = b.dense("enc.dense2", arch.dense1, f, 1.0);
        let z_mean = b.dense("enc.z_mean", f, l, HEAD_GAIN);
        let zv_hidden = b.dense("enc.dense2_1", arch.dense1, f, 1.0);
        let z_log_var = b.dense("enc.z_log_var", f, l, HEAD_GAIN);
        let c_hidden = b.dense("reg.dense2_2", arch.dense1, f, 1.0);
        let c_mean = b.dense("reg.c_mean", f, p, HEAD_GAIN);
        let cv_hidden = b.dense("reg.dense2_3", arch.dense1, f, 1.0);
        let c_log_var = b.dense("reg.c_log_var", f, p, HEAD_GAIN);

        let mut dec_dense = Vec::new();
        let mut width = l;
        for (i, &w) in arch.dec_dense.iter().enumerate() {
            dec_dense.push(b.dense(&format!("dec.dense{}", i + 1), width, w, 1.0));
            width = w;
        }
        let base: usize = arch.decoder_base_dims().iter().product::<usize>() * arch.dec_base_channels;
        dec_dense.push(b.dense(&format!("dec.dense{}", arch.dec_dense.len() + 1), width, base, 1.0));
        let mut dec_conv = Vec::new();
        let mut cin = arch.dec_base_channels;
        for (i, &c) in arch.dec_channels.iter().enumerate() {
            dec_conv.push(b.conv(&format!("dec.deconv{}", i + 1), cin, c, nd));
            cin = c;
        }
        let dec_out = b.conv(&format!("dec.deconv{}", arch.dec_channels.len() + 1), cin, 1, nd);

        let (gen_hidden, gen_pi, gen_mean, gen_log_var) = if config.vanilla {
            (None, None, None, None)
        } else if config.k == 1 {
            let m = b.dense("gen.pz_mean", p, l, 1.0);
            let v = b.dense("gen.pz_log_var", p, l, HEAD_GAIN);
            (None, None, Some(m), Some(v))
        } else {
            let h = b.dense("gen.dense", p, arch.gen_hidden, 1.0);
            let pi = b.dense("gen.pz_pis", arch.gen_hidden, config.k, 1.0);
            let m = b.dense("gen.pz_means", arch.gen_hidden, config.k * l, 1.0);
            let v = b.dense("gen.pz_log_vars", arch.gen_hidden, config.k * l, HEAD_GAIN);
            (Some(h), Some(pi), Some(m), Some(v))
        };
        let params = b.store;
        let layout = Layout {
            enc_conv,
            dense1,
            z_hidden,
            z_mean,
            zv_hidden,
            z_log_var,
            c_hidden,
            c_mean,
            cv_hidden,
            c_log_var,
            dec_dense,
            dec_conv,
            dec_out,
            gen_hidden,
            gen_pi,
            gen_mean,
            gen_log_var,
        };
        let bank = FeatureBank::new(config.bank_seed, &config.bank_channels, 3, config.bank_stride)?;
        let normalization = Normalization::identity(config.property_dim);
        Ok(Model { config, arch, params, layout, bank, normalization })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn config_mut(&mut self) -> &mut ModelConfig {
        &mut self.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bank(&self) -> &FeatureBank {
        &self.bank
    }

    /// Replace parameter values by name (e.g. from a checkpoint).
    pub fn load_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors for a model with {}",
                named.len(),
                self.params.len()
            )));
        }
        for (name, t) in named {
            let id =
                self.params.find(name).ok_or_else(|| Error::InvalidParameter(format!("unknown parameter {name}")))?;
            if self.params.get(id).shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: {:?} vs {:?}",
                    t.shape(),
                    self.params.get(id).shape()
                )));
            }
            *self.params.get_mut(id) = t.clone();
        }
        Ok(())
    }

    fn dense(&self, g: &mut Graph, d: Dense, x: Var) -> Result<Var> {
        let w = g.param(&self.params, d.w);
        let b = g.param(&self.params, d.b);
        g.dense(x, w, b)
    }

    fn conv(&self, g: &mut Graph, c: Conv, x: Var, geom: ConvGeom) -> Result<Var> {
        let w = g.param(&self.params, c.w);
        let b = g.param(&self.params, c.b);
        g.conv(x, w, b, geom)
    }

    fn pool_factor(&self) -> [usize; 3] {
        if self.arch.ndim() == 2 {
            [1, 2, 2]
        } else {
            [2, 2, 2]
        }
    }

    /// Network input tensor `[1, dims...]` for a grid, validating the shape.
    pub fn input_tensor(&self, grid: &VoxelGrid) -> Result<Tensor> {
        if grid.shape().dims() != self.arch.input.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "grid {:?} for model input {:?}",
                grid.shape().dims(),
                self.arch.input
            )));
        }
        Ok(statfeat::grid_tensor(grid))
    }

    /// Shared trunk: conv blocks, flatten, Dense1.
    pub fn trunk(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let geom = ConvGeom::same(3, self.arch.ndim());
        let mut h = x;
        for c in &self.layout.enc_conv {
            let y = self.conv(g, *c, h, geom)?;
            let y = g.activation(y, Activation::LeakyRelu(SLOPE));
            h = g.maxpool(y, self.pool_factor())?;
        }
        let f = g.flatten(h)?;
        let d = self.dense(g, self.layout.dense1, f)?;
        Ok(g.activation(d, Activation::Relu))
    }

    fn head(&self, g: &mut Graph, hidden: Dense, out: Dense, h: Var, clamp: bool) -> Result<Var> {
        let a = self.dense(g, hidden, h)?;
        let a = g.activation(a, Activation::Relu);
        let o = self.dense(g, out, a)?;
        Ok(if clamp { g.clamp(o, -self.config.log_var_clamp, self.config.log_var_clamp) } else { o })
    }

    /// `(mu_z, log_var_z)` of `q(z|x)` from the trunk output.
    pub fn encoder_heads(&self, g: &mut Graph, h: Var) -> Result<(Var, Var)> {
        let l = &self.layout;
        Ok((self.head(g, l.z_hidden, l.z_mean, h, false)?, self.head(g, l.zv_hidden, l.z_log_var, h, true)?))
    }

    /// `(mu_c, log_var_c)` of `q(c|x)` (normalized units) from the trunk output.
    pub fn regressor_heads(&self, g: &mut Graph, h: Var) -> Result<(Var, Var)> {
        let l = &self.layout;
        Ok((self.head(g, l.c_hidden, l.c_mean, h, false)?, self.head(g, l.cv_hidden, l.c_log_var, h, true)?))
    }

    /// Decoder `z -> x_hat` with sigmoid output of the input's shape.
    pub fn decode_graph(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let nd = self.arch.ndim();
        let mut h = z;
        for d in &self.layout.dec_dense {
            let y = self.dense(g, *d, h)?;
            h = g.activation(y, Activation::LeakyRelu(SLOPE));
        }
        let mut shape = vec![self.arch.dec_base_channels];
        shape.extend(self.arch.decoder_base_dims());
        h = g.reshape(h, &shape)?;
        let same = ConvGeom::same(3, nd);
        let up = self.pool_factor();
        for c in &self.layout.dec_conv {
            let u = g.upsample(h, up)?;
            let y = self.conv(g, *c, u, same)?;
            h = g.activation(y, Activation::LeakyRelu(SLOPE));
        }
        let y = self.conv(g, self.layout.dec_out, h, ConvGeom::growing(3, self.arch.final_grow, nd))?;
        Ok(g.activation(y, Activation::Sigmoid))
    }

    /// Conditional prior `p(z|c)` for a normalized property node.
    pub fn prior_graph(&self, g: &mut Graph, c: Var) -> Result<PriorNodes> {
        let l = &self.layout;
        let clamp = self.config.log_var_clamp;
        if self.config.vanilla {
            let d = self.config.latent_dim;
            let means = g.input(Tensor::zeros(&[d]));
            let log_vars = g.input(Tensor::zeros(&[d]));
            return Ok(PriorNodes { log_pi: None, means, log_vars });
        }
        let (mean, lv) = (l.gen_mean.expect("generator"), l.gen_log_var.expect("generator"));
        let (src, log_pi) = match (l.gen_hidden, l.gen_pi) {
            (Some(hd), Some(pd)) => {
                let h = self.dense(g, hd, c)?;
                let h = g.activation(h, Activation::Tanh);
                let logits = self.dense(g, pd, h)?;
                (h, Some(g.log_softmax(logits)))
            }
            _ => (c, None),
        };
        let means = self.dense(g, mean, src)?;
        let log_vars = self.dense(g, lv, src)?;
        let log_vars = g.clamp(log_vars, -clamp, clamp);
        Ok(PriorNodes { log_pi, means, log_vars })
    }

    /// Target Gram sets of a training grid (constant across epochs).
    pub fn style_targets(&self, grid: &VoxelGrid) -> Result<Vec<GramSet>> {
        statfeat::target_grams(grid, &self.bank)
    }

    /// Builds the per-sample loss graph. `c` is in normalized units; `rng`
    /// supplies the reparameterization noise for `z` and `c~`. The style
    /// term enters as `w_style * style_scale * style`.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        x: &Tensor,
        c: &[f64],
        targets: &[GramSet],
        style_scale: f64,
        rng: &mut Rng,
    ) -> Result<(Var, LossParts)> {
        let cfg = &self.config;
        let xv = g.input(x.clone());
        let h = self.trunk(g, xv)?;
        let (mz, lz) = self.encoder_heads(g, h)?;
        let (mc, lc) = self.regressor_heads(g, h)?;
        let z = g.reparameterize(mz, lz, rng)?;
        let c_tilde = g.reparameterize(mc, lc, rng)?;
        let x_hat = self.decode_graph(g, z)?;
        let style = statfeat::style_loss_graph(g, &self.bank, x_hat, targets)?;
        let prior = self.prior_graph(g, c_tilde)?;
        let klv = kl::posterior_prior_kl_graph(g, mz, lz, prior.log_pi, prior.means, prior.log_vars)?;
        let mut terms = vec![g.scale(style, cfg.w_style * style_scale), g.scale(klv, cfg.w_kl)];
        let reg = if cfg.w_reg > 0.0 {
            let cv = g.input(Tensor::vector(c));
            let nll = kl::gaussian_nll_graph(g, cv, mc, lc)?;
            terms.push(g.scale(nll, cfg.w_reg));
            g.value(nll).item()
        } else {
            let q = LatentGaussian::new(g.value(mc).data().to_vec(), g.value(lc).data().to_vec())?;
            kl::gaussian_nll(c, &q)
        };
        let all = g.stack(&terms)?;
        let total = g.sum(all);
        let parts = LossParts {
            total: g.value(total).item(),
            reg_nll: reg,
            style: g.value(style).item(),
            kl: g.value(klv).item(),
        };
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("loss {parts:?}")));
        }
        Ok((total, parts))
    }

    /// `q(z|x)` and `q(c|x)` (normalized) of a grid.
    pub fn encode(&self, grid: &VoxelGrid) -> Result<(LatentGaussian, LatentGaussian)> {
        let x = self.input_tensor(grid)?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let h = self.trunk(&mut g, xv)?;
        let (mz, lz) = self.encoder_heads(&mut g, h)?;
        let (mc, lc) = self.regressor_heads(&mut g, h)?;
        let q = |a: Var, b: Var| LatentGaussian::new(g.value(a).data().to_vec(), g.value(b).data().to_vec());
        Ok((q(mz, lz)?, q(mc, lc)?))
    }

    /// Continuous decoded grid for a latent code.
    pub fn decode(&self, z: &[f64]) -> Result<VoxelGrid> {
        if z.len() != self.config.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "latent of length {} for dim {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        let mut g = Graph::new();
        let zv = g.input(Tensor::vector(z));
        let x = self.decode_graph(&mut g, zv)?;
        statfeat::tensor_grid(g.value(x))
    }

    /// Conditional prior for a property vector in physical units.
    pub fn prior(&self, c: &[f64]) -> Result<MixturePrior> {
        if c.len() != self.config.property_dim {
            return Err(Error::ShapeMismatch(format!("{} properties for dim {}", c.len(), self.config.property_dim)));
        }
        let cn = self.normalization.normalize(c);
        let mut g = Graph::new();
        let cv = g.input(Tensor::vector(&cn));
        let p = self.prior_graph(&mut g, cv)?;
        let d = self.config.latent_dim;
        let means = g.value(p.means).data();
        let lvs = g.value(p.log_vars).data();
        let k = means.len() / d;
        let weights = match p.log_pi {
            Some(lp) => g.value(lp).data().iter().map(|v| math::exp(*v)).collect(),
            None => vec![1.0],
        };
        let comps = (0..k)
            .map(|j| LatentGaussian::new(means[j * d..(j + 1) * d].to_vec(), lvs[j * d..(j + 1) * d].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixturePrior { weights, components: comps })
    }
}
