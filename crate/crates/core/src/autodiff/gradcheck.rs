//! Central finite-difference checks for [`Graph`] gradients.

use alloc::vec::Vec;

use rand::Rng as _;

use super::{Graph, Tensor, Var};
use crate::{rng, Error, Result};

/// Outcome of [`check`]: worst relative error over the probed coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub points: usize,
    pub max_rel_error: f64,
}

/// Relative error with an absolute floor so that near-zero gradients are
/// compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare reverse-mode gradients of the scalar built by `f` against central
/// differences with step `h`, at `points` coordinates drawn from `seed`.
pub fn check<F>(inputs: &[Tensor], f: F, points: usize, h: f64, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let total: usize = inputs.iter().map(Tensor::len).sum();
    if total == 0 {
        return Err(Error::Empty("no inputs to check".into()));
    }
    let mut r = rng::stream(seed, 0);
    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for p in 0..points {
        // cycle through inputs so every one is probed
        let t = p % inputs.len();
        let i = r.random_range(0..inputs[t].len());
        let analytic = grads.wrt(vars[t]).map_or(0.0, |g| g.data()[i]);
        let x0 = xs[t].data()[i];
        xs[t].data_mut()[i] = x0 + h;
        let fp = eval(&xs)?;
        xs[t].data_mut()[i] = x0 - h;
        let fm = eval(&xs)?;
        xs[t].data_mut()[i] = x0;
        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(GradCheck { points, max_rel_error: worst })
}
