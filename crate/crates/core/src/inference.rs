//! Forward prediction, reconstruction, inverse inference and the metrics and
//! baselines used to judge them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::homogenize::{effective_stiffness, PhaseSpec, PropertyMode, PropertyVector, SolverOptions};
use crate::vaereg::Model;
use crate::{linalg, math, Error, Result, VoxelGrid};

/// Denormalized regressor mean `mu_c` for a grid.
pub fn predict_forward(model: &Model, grid: &VoxelGrid) -> Result<PropertyVector> {
    let (_, qc) = model.encode(grid)?;
    PropertyVector::new(model.normalization.denormalize(&qc.mu))
}

/// Decoded posterior mean: `decode(mu_z)`, continuous in [0, 1].
pub fn reconstruct(model: &Model, grid: &VoxelGrid) -> Result<VoxelGrid> {
    let (qz, _) = model.encode(grid)?;
    model.decode(&qz.mu)
}

/// Posterior latent means of many grids.
pub fn latent_means(model: &Model, grids: &[&VoxelGrid]) -> Result<Vec<Vec<f64>>> {
    grids.iter().map(|g| model.encode(g).map(|(q, _)| q.mu)).collect()
}

/// One candidate microstructure for a target property.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseSolution {
    pub component: usize,
    pub weight: f64,
    pub z: Vec<f64>,
    pub decoded: VoxelGrid,
    pub binarized: VoxelGrid,
    pub target: PropertyVector,
    /// Filled by [`evaluate_inverse`].
    pub achieved: Option<PropertyVector>,
}

impl InverseSolution {
    /// Absolute percent error per property, once validated.
    pub fn abs_percent_error(&self) -> Option<Vec<f64>> {
        self.achieved.as_ref().map(|a| {
            a.values().iter().zip(self.target.values()).map(|(a, t)| 100.0 * (a - t).abs() / t.abs()).collect()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseOptions {
    /// Components with prior weight below this are dropped.
    pub pi_min: f64,
    pub binarize_threshold: f64,
}

impl Default for InverseOptions {
    fn default() -> Self {
        InverseOptions { pi_min: 0.05, binarize_threshold: 0.5 }
    }
}

/// Whether any target entry lies more than three training standard
/// deviations from the training mean.
pub fn target_out_of_range(model: &Model, target: &PropertyVector) -> bool {
    model.normalization.normalize(target.values()).iter().any(|v| v.abs() > 3.0)
}

/// Decode the mean of every prior component with weight `>= pi_min`,
/// heaviest first.
pub fn inverse_infer(model: &Model, target: &PropertyVector, opts: &InverseOptions) -> Result<Vec<InverseSolution>> {
    let prior = model.prior(target.values())?;
    let mut order: Vec<usize> = (0..prior.len()).collect();
    order.sort_by(|&a, &b| prior.weights[b].total_cmp(&prior.weights[a]).then(a.cmp(&b)));
    let keep: Vec<usize> =
        if prior.len() == 1 { order } else { order.into_iter().filter(|&k| prior.weights[k] >= opts.pi_min).collect() };
    keep.into_iter()
        .map(|k| {
            let z = prior.components[k].mu.clone();
            let decoded = model.decode(&z)?;
            let binarized = decoded.binarize(opts.binarize_threshold);
            Ok(InverseSolution {
                component: k,
                weight: prior.weights[k],
                z,
                decoded,
                binarized,
                target: target.clone(),
                achieved: None,
            })
        })
        .collect()
}

/// Error summary of a validated set of inverse solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseReport {
    /// Absolute percent error per solution and property.
    pub errors: Vec<Vec<f64>>,
    /// Mean absolute percent error over solutions, per property.
    pub mean_per_property: Vec<f64>,
    pub mean: f64,
}

/// Validate solutions through the homogenization oracle.
pub fn evaluate_inverse(
    solutions: &mut [InverseSolution],
    hard: &PhaseSpec,
    soft: &PhaseSpec,
    opts: &SolverOptions,
) -> Result<InverseReport> {
    if solutions.is_empty() {
        return Err(Error::Empty("no inverse solutions to evaluate".into()));
    }
    let mut errors = Vec::with_capacity(solutions.len());
    for s in solutions.iter_mut() {
        let mode = PropertyMode::from_dim(s.target.len())?;
        s.achieved = Some(effective_stiffness(&s.binarized, hard, soft, mode, opts)?);
        errors.push(s.abs_percent_error().expect("just filled"));
    }
    let p = errors[0].len();
    let mean_per_property: Vec<f64> =
        (0..p).map(|j| errors.iter().map(|e| e[j]).sum::<f64>() / errors.len() as f64).collect();
    let mean = mean_per_property.iter().sum::<f64>() / p as f64;
    Ok(InverseReport { errors, mean_per_property, mean })
}

/// MAPE and R^2 for one property.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyMetrics {
    pub mape: f64,
    pub r2: f64,
    /// Mean observed value, the MAPE denominator.
    pub y_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Mean of the per-property MAPEs (the single MAPE in scalar mode).
    pub mape: f64,
    pub r2: f64,
    pub per_property: Vec<PropertyMetrics>,
    pub n: usize,
}

/// `MAPE = 100 / n * sum |y - y_hat| / y_bar` and `R^2 = 1 - SS_res / SS_tot`,
/// per property.
pub fn metrics(y: &[PropertyVector], y_hat: &[PropertyVector]) -> Result<MetricsReport> {
    let n = y.len();
    if n < 2 || y_hat.len() != n {
        return Err(Error::ShapeMismatch(format!("metrics over {} observations and {} predictions", n, y_hat.len())));
    }
    let p = y[0].len();
    if y.iter().chain(y_hat).any(|v| v.len() != p) {
        return Err(Error::ShapeMismatch("property vectors differ in length".into()));
    }
    let mut per_property = Vec::with_capacity(p);
    for j in 0..p {
        let obs: Vec<f64> = y.iter().map(|v| v.values()[j]).collect();
        let pred: Vec<f64> = y_hat.iter().map(|v| v.values()[j]).collect();
        let y_bar = obs.iter().sum::<f64>() / n as f64;
        if y_bar == 0.0 {
            return Err(Error::InvalidParameter(format!("mean observed value of property {j} is zero")));
        }
        let abs: f64 = obs.iter().zip(&pred).map(|(a, b)| (a - b).abs()).sum();
        let ss_res: f64 = obs.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
        let ss_tot: f64 = obs.iter().map(|a| (a - y_bar) * (a - y_bar)).sum();
        let r2 = if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        };
        per_property.push(PropertyMetrics { mape: 100.0 * abs / (n as f64 * y_bar.abs()), r2, y_bar });
    }
    let mape = per_property.iter().map(|m| m.mape).sum::<f64>() / p as f64;
    let r2 = per_property.iter().map(|m| m.r2).sum::<f64>() / p as f64;
    Ok(MetricsReport { mape, r2, per_property, n })
}

/// Ridge map from latent means (plus intercept) to normalized properties.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaseline {
    /// `(latent_dim + 1) x property_dim`, intercept last.
    pub coef: Vec<Vec<f64>>,
}

pub const RIDGE_LAMBDA: f64 = 1e-6;

fn with_intercept(z: &[f64]) -> Vec<f64> {
    let mut v = z.to_vec();
    v.push(1.0);
    v
}

impl LinearBaseline {
    /// Fit on latent codes and normalized targets.
    pub fn fit(latents: &[Vec<f64>], targets: &[Vec<f64>], lambda: f64) -> Result<Self> {
        let x: Vec<Vec<f64>> = latents.iter().map(|z| with_intercept(z)).collect();
        Ok(LinearBaseline { coef: linalg::ridge(&x, targets, lambda)? })
    }

    pub fn predict(&self, z: &[f64]) -> Vec<f64> {
        let x = with_intercept(z);
        let q = self.coef[0].len();
        (0..q).map(|j| x.iter().zip(&self.coef).map(|(xi, row)| xi * row[j]).sum()).collect()
    }
}

/// Fit the VAE+LIN baseline on the given training grids of a vanilla model.
pub fn fit_linear_baseline(model: &Model, grids: &[&VoxelGrid], properties: &[&[f64]]) -> Result<LinearBaseline> {
    let z = latent_means(model, grids)?;
    let c: Vec<Vec<f64>> = properties.iter().map(|p| model.normalization.normalize(p)).collect();
    LinearBaseline::fit(&z, &c, RIDGE_LAMBDA)
}

/// Baseline prediction in physical units.
pub fn predict_baseline(model: &Model, baseline: &LinearBaseline, grid: &VoxelGrid) -> Result<PropertyVector> {
    let (q, _) = model.encode(grid)?;
    PropertyVector::new(model.normalization.denormalize(&baseline.predict(&q.mu)))
}

/// Principal axes of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal directions, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::Empty(format!("PCA needs at least 2 points, got {n}")));
        }
        let d = points[0].len();
        let mut mean = vec![0.0; d];
        for p in points {
            mean.iter_mut().zip(p).for_each(|(m, v)| *m += v / n as f64);
        }
        let mut cov = vec![0.0; d * d];
        for p in points {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (p[i] - mean[i]) * (p[j] - mean[j]) / (n - 1) as f64;
                }
            }
        }
        let (variances, components) = linalg::symmetric_eigen(d, &cov);
        Ok(Pca { mean, components, variances })
    }

    /// Coordinates along the first `k` components.
    pub fn project(&self, z: &[f64], k: usize) -> Vec<f64> {
        self.components
            .iter()
            .take(k)
            .map(|c| c.iter().zip(z.iter().zip(&self.mean)).map(|(ci, (zi, mi))| ci * (zi - mi)).sum())
            .collect()
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / math::sqrt(va * vb)
}

/// Per-axis correlation length: the lag (linearly interpolated) at which the
/// periodic two-point autocovariance along that axis falls to half its value
/// at lag zero.
pub fn anisotropy_measure(grid: &VoxelGrid) -> Result<Vec<f64>> {
    grid.ensure_binary()?;
    let dims = grid.shape().dims().to_vec();
    let strides = grid.shape().strides();
    let v = grid.values();
    let n = v.len() as f64;
    let vf = grid.mean();
    let c0 = vf - vf * vf;
    if c0 <= 0.0 {
        return Err(Error::DegenerateField);
    }
    let mut out = Vec::with_capacity(dims.len());
    for (axis, &len) in dims.iter().enumerate() {
        let stride = strides[axis];
        let cov = |r: usize| -> f64 {
            let s: f64 = (0..v.len())
                .map(|i| {
                    let pos = (i / stride) % len;
                    let j = i - pos * stride + ((pos + r) % len) * stride;
                    v[i] * v[j]
                })
                .sum();
            s / n - vf * vf
        };
        let half = 0.5 * c0;
        let mut prev = c0;
        let mut length = (len / 2) as f64;
        for r in 1..=len / 2 {
            let c = cov(r);
            if c <= half {
                length = (r - 1) as f64 + (prev - half) / (prev - c);
                break;
            }
            prev = c;
        }
        out.push(length);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microgen::{gaussian_filter, random_field, threshold, MorphologyFilter};
    use crate::{rng, Shape};

    fn pv(v: f64) -> PropertyVector {
        PropertyVector::new(vec![v]).unwrap()
    }

    fn sample(sigma: &[f64], seed: u64) -> VoxelGrid {
        let f = random_field(&Shape::new(&[33, 33]).unwrap(), seed).unwrap();
        threshold(&gaussian_filter(&f, &MorphologyFilter::new(sigma).unwrap()).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn metric_fixtures() {
        let y = [pv(10.0), pv(20.0), pv(30.0)];
        let m = metrics(&y, &[pv(12.0), pv(20.0), pv(28.0)]).unwrap();
        assert!((m.mape - 100.0 * 4.0 / 60.0).abs() < 1e-12);
        assert!((m.mape - 6.667).abs() < 1e-3);
        assert_eq!(m.per_property[0].y_bar, 20.0);
        assert!((m.r2 - (1.0 - 8.0 / 200.0)).abs() < 1e-12);
        let exact = metrics(&y, &y).unwrap();
        assert_eq!((exact.mape, exact.r2), (0.0, 1.0));
        let flat = metrics(&y, &[pv(20.0), pv(20.0), pv(20.0)]).unwrap();
        assert_eq!(flat.r2, 0.0);
        assert!(metrics(&y[..1], &y[..1]).is_err());
        assert!(metrics(&[pv(1.0), pv(-1.0)], &[pv(1.0), pv(1.0)]).is_err());
    }

    #[test]
    fn ridge_recovers_linear_map() {
        let mut r = rng::stream(2, 0);
        let z: Vec<Vec<f64>> = (0..40).map(|_| rng::normal_vec(&mut r, 4)).collect();
        let c: Vec<Vec<f64>> = z.iter().map(|v| vec![1.0 + 2.0 * v[0] - 0.5 * v[3]]).collect();
        let b = LinearBaseline::fit(&z, &c, RIDGE_LAMBDA).unwrap();
        for (zi, ci) in z.iter().zip(&c) {
            assert!((b.predict(zi)[0] - ci[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn pca_properties() {
        let mut r = rng::stream(3, 0);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let a = rng::normal_vec(&mut r, 3);
                vec![3.0 * a[0] + 1.0, a[1] + a[0], 0.2 * a[2]]
            })
            .collect();
        let pca = Pca::fit(&pts).unwrap();
        assert!(pca.variances[0] >= pca.variances[1]);
        let proj: Vec<Vec<f64>> = pts.iter().map(|p| pca.project(p, 2)).collect();
        for k in 0..2 {
            let m = proj.iter().map(|p| p[k]).sum::<f64>() / 200.0;
            assert!(m.abs() < 1e-12);
        }
        let v1 = proj.iter().map(|p| p[0] * p[0]).sum::<f64>();
        let v2 = proj.iter().map(|p| p[1] * p[1]).sum::<f64>();
        assert!(v1 >= v2);
        assert!(Pca::fit(&pts[..1]).is_err());
    }

    #[test]
    fn spearman_fixtures() {
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn anisotropy_distinguishes_morphologies() {
        let (mut iso_ratio, mut count) = (0.0, 0);
        for seed in 0..5 {
            let a = anisotropy_measure(&sample(&[1.0, 7.0], seed)).unwrap();
            assert!(a[1] > 1.5 * a[0], "{a:?}");
            let b = anisotropy_measure(&sample(&[7.0, 1.0], seed)).unwrap();
            assert!(b[0] > 1.5 * b[1], "{b:?}");
            let g = sample(&[3.0, 3.0], seed + 10);
            let c = anisotropy_measure(&g).unwrap();
            iso_ratio += c[0] / c[1];
            count += 1;
            let inv = anisotropy_measure(&g.inverted()).unwrap();
            assert!(inv.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let mean = iso_ratio / count as f64;
        assert!((0.8..1.25).contains(&mean), "{mean}");
        assert!(anisotropy_measure(&VoxelGrid::filled(Shape::new(&[5, 5]).unwrap(), 1.0)).is_err());
    }

    #[test]
    fn laminate_correlation_length() {
        // stripes of width 4 along axis 1: infinite along axis 0
        let v: Vec<f64> = (0..16 * 16).map(|i| if (i % 16) / 4 % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let g = VoxelGrid::new(Shape::new(&[16, 16]).unwrap(), v).unwrap();
        let a = anisotropy_measure(&g).unwrap();
        assert_eq!(a[0], 8.0);
        // square wave of period 8: autocovariance falls linearly to -c0 at r = 4
        assert!((a[1] - 1.0).abs() < 1e-12);
    }
}
