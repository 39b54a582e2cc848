//! Closed-form Gaussian KL terms and the mixture approximations.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::{math, Error, Result};

/// Diagonal Gaussian `N(mu, exp(log_var))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentGaussian {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.len() != log_var.len() || mu.is_empty() {
            return Err(Error::ShapeMismatch(format!("mu {} vs log_var {}", mu.len(), log_var.len())));
        }
        Ok(LatentGaussian { mu, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        LatentGaussian { mu: alloc::vec![0.0; dim], log_var: alloc::vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Weighted diagonal-Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior {
    pub weights: Vec<f64>,
    pub components: Vec<LatentGaussian>,
}

impl MixturePrior {
    pub fn new(weights: Vec<f64>, components: Vec<LatentGaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::Empty(format!("{} weights for {} components", weights.len(), components.len())));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::ShapeMismatch("mixture components differ in dimension".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("mixture weights {weights:?} are not a simplex point")));
        }
        Ok(MixturePrior { weights, components })
    }

    pub fn single(component: LatentGaussian) -> Self {
        MixturePrior { weights: alloc::vec![1.0], components: alloc::vec![component] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `KL(q || p)` for diagonal Gaussians.
pub fn gaussian_kl(q: &LatentGaussian, p: &LatentGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::ShapeMismatch(format!("KL between dims {} and {}", q.dim(), p.dim())));
    }
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let (mq, lq, mp, lp) = (q.mu[i], q.log_var[i], p.mu[i], p.log_var[i]);
        let d = mp - mq;
        kl += 0.5 * (math::exp(lq - lp) + d * d * math::exp(-lp) - 1.0 + lp - lq);
    }
    Ok(kl)
}

/// Variational approximation of `KL(f || g)` between two mixtures:
/// `sum_k w_k log(sum_i w_i e^{-KL(f_k||f_i)} / sum_j pi_j e^{-KL(f_k||g_j)})`.
pub fn mixture_mixture_kl(f: &MixturePrior, g: &MixturePrior) -> Result<f64> {
    if f.is_empty() || g.is_empty() {
        return Err(Error::Empty("mixture without components".into()));
    }
    let mut total = 0.0;
    for (wk, fk) in f.weights.iter().zip(&f.components) {
        if *wk == 0.0 {
            continue;
        }
        let num = log_weighted(fk, f)?;
        let den = log_weighted(fk, g)?;
        total += wk * (num - den);
    }
    Ok(total)
}

/// `log sum_j w_j exp(-KL(q || m_j))`, skipping zero weights.
fn log_weighted(q: &LatentGaussian, m: &MixturePrior) -> Result<f64> {
    let mut terms = Vec::with_capacity(m.len());
    for (w, c) in m.weights.iter().zip(&m.components) {
        if *w > 0.0 {
            terms.push(math::ln(*w) - gaussian_kl(q, c)?);
        }
    }
    Ok(math::log_sum_exp(&terms))
}

/// `-log sum_j pi_j exp(-KL(q || g_j))`; exactly `KL(q || g_1)` for one component.
pub fn posterior_prior_kl(q: &LatentGaussian, prior: &MixturePrior) -> Result<f64> {
    if prior.len() == 1 {
        return gaussian_kl(q, &prior.components[0]);
    }
    Ok(-log_weighted(q, prior)?)
}

/// Graph form of [`gaussian_kl`] on vector nodes.
pub fn gaussian_kl_graph(g: &mut Graph, mq: Var, lq: Var, mp: Var, lp: Var) -> Result<Var> {
    let n = g.value(mq).len() as f64;
    let d = g.sub(mp, mq)?;
    let d2 = g.square(d);
    let neg_lp = g.scale(lp, -1.0);
    let inv_vp = g.exp(neg_lp);
    let t2 = g.mul(d2, inv_vp)?;
    let ratio = g.sub(lq, lp)?;
    let t1 = g.exp(ratio);
    let s = g.add(t1, t2)?;
    let s = g.sub(s, ratio)?;
    let total = g.sum(s);
    let total = g.offset(total, -n);
    Ok(g.scale(total, 0.5))
}

/// Graph form of [`posterior_prior_kl`]. `log_pi` holds `K` log-weights,
/// `means`/`log_vars` hold `K` components of length `dim` back to back.
pub fn posterior_prior_kl_graph(
    g: &mut Graph,
    mq: Var,
    lq: Var,
    log_pi: Option<Var>,
    means: Var,
    log_vars: Var,
) -> Result<Var> {
    let dim = g.value(mq).len();
    let k = g.value(means).len() / dim;
    if k * dim != g.value(means).len() || g.value(log_vars).len() != k * dim {
        return Err(Error::ShapeMismatch(format!("prior of length {} for latent dim {dim}", g.value(means).len())));
    }
    if k == 1 {
        return gaussian_kl_graph(g, mq, lq, means, log_vars);
    }
    let log_pi = log_pi.ok_or_else(|| Error::InvalidParameter("mixture prior without weights".into()))?;
    let mut kls = Vec::with_capacity(k);
    for j in 0..k {
        let mp = g.slice(means, j * dim, dim)?;
        let lp = g.slice(log_vars, j * dim, dim)?;
        kls.push(gaussian_kl_graph(g, mq, lq, mp, lp)?);
    }
    let kls = g.stack(&kls)?;
    let logits = g.sub(log_pi, kls)?;
    let lse = g.log_sum_exp(logits);
    Ok(g.scale(lse, -1.0))
}

/// Diagonal-Gaussian negative log-likelihood without the `log 2 pi` constant:
/// `0.5 * sum(log_var + (c - mu)^2 exp(-log_var))`.
pub fn gaussian_nll(c: &[f64], q: &LatentGaussian) -> f64 {
    c.iter().zip(q.mu.iter().zip(&q.log_var)).map(|(ci, (m, l))| 0.5 * (l + (ci - m) * (ci - m) * math::exp(-l))).sum()
}

/// Graph form of [`gaussian_nll`] with a constant target.
pub fn gaussian_nll_graph(g: &mut Graph, c: Var, mu: Var, log_var: Var) -> Result<Var> {
    let d = g.sub(c, mu)?;
    let d2 = g.square(d);
    let neg = g.scale(log_var, -1.0);
    let prec = g.exp(neg);
    let t = g.mul(d2, prec)?;
    let s = g.add(t, log_var)?;
    let s = g.sum(s);
    Ok(g.scale(s, 0.5))
}
