//! Synthetic two-phase microstructures: uniform noise, smoothed by an
//! axis-aligned Gaussian filter, thresholded at a quantile.

use alloc::format;
use alloc::vec::Vec;

use crate::grid::{Shape, VoxelGrid};
use crate::{math, rng, Error, Result};

/// Per-axis standard deviation (in voxels) of a diagonal Gaussian filter.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphologyFilter {
    sigma: Vec<f64>,
}

impl MorphologyFilter {
    pub fn new(sigma: &[f64]) -> Result<Self> {
        if !(2..=3).contains(&sigma.len()) {
            return Err(Error::InvalidParameter(format!("filter must have 2 or 3 axes, got {}", sigma.len())));
        }
        if let Some(s) = sigma.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter(format!("filter sigma must be > 0, got {s}")));
        }
        Ok(MorphologyFilter { sigma: sigma.to_vec() })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn ndim(&self) -> usize {
        self.sigma.len()
    }

    /// All filters with entries from `levels` along each of `ndim` axes, in
    /// lexicographic order.
    pub fn grid(levels: &[f64], ndim: usize) -> Result<Vec<MorphologyFilter>> {
        let mut out = Vec::new();
        let n = levels.len();
        let total = n.pow(ndim as u32);
        for idx in 0..total {
            let mut rem = idx;
            let mut sigma = alloc::vec![0.0; ndim];
            for a in (0..ndim).rev() {
                sigma[a] = levels[rem % n];
                rem /= n;
            }
            out.push(MorphologyFilter::new(&sigma)?);
        }
        Ok(out)
    }
}

/// How a record was generated; enough to rebuild its grid bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub sigma: Vec<f64>,
    pub seed: u64,
    pub quantile: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub grid: VoxelGrid,
    /// Empty until filled by homogenization.
    pub properties: Vec<f64>,
    pub provenance: Provenance,
    /// Set when the property oracle failed for this record.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub shape: Shape,
    pub sigma_set: Vec<MorphologyFilter>,
    pub fields_per_filter: usize,
    pub u_range: (f64, f64),
    pub seed: u64,
}

impl GenerationConfig {
    /// 16 filters from {1,3,5,7}^2, 75 fields each, on 33x33 grids.
    pub fn desk_default() -> Self {
        GenerationConfig {
            shape: Shape::new(&[33, 33]).expect("static shape"),
            sigma_set: MorphologyFilter::grid(&[1.0, 3.0, 5.0, 7.0], 2).expect("static filters"),
            fields_per_filter: 75,
            u_range: (0.2, 0.8),
            seed: 0,
        }
    }

    pub fn record_count(&self) -> usize {
        self.sigma_set.len() * self.fields_per_filter
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_set.is_empty() {
            return Err(Error::InvalidParameter("sigma_set is empty".into()));
        }
        let (lo, hi) = self.u_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidParameter(format!("u_range ({lo}, {hi}) must lie inside (0, 1)")));
        }
        if let Some(f) = self.sigma_set.iter().find(|f| f.ndim() != self.shape.ndim()) {
            return Err(Error::ShapeMismatch(format!(
                "filter {:?} does not match {}-D grid",
                f.sigma(),
                self.shape.ndim()
            )));
        }
        Ok(())
    }
}

pub fn random_field(shape: &Shape, seed: u64) -> Result<VoxelGrid> {
    if shape.dims().iter().any(|&d| d < 3) {
        return Err(Error::InvalidShape(format!("random fields need every axis >= 3, got {:?}", shape.dims())));
    }
    let mut r = rng::stream(seed, 0);
    let values = (0..shape.len()).map(|_| rng::uniform(&mut r)).collect();
    VoxelGrid::new(shape.clone(), values)
}

fn kernel_1d(sigma: f64) -> Vec<f64> {
    let radius = math::ceil(3.0 * sigma) as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|t| math::exp(-((t * t) as f64) / (2.0 * sigma * sigma))).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable periodic Gaussian smoothing followed by min-max rescaling to
/// [0, 1]. A field that is constant after smoothing is returned unscaled.
pub fn gaussian_filter(field: &VoxelGrid, filter: &MorphologyFilter) -> Result<VoxelGrid> {
    let shape = field.shape().clone();
    if filter.ndim() != shape.ndim() {
        return Err(Error::ShapeMismatch(format!("{}-axis filter on {}-D field", filter.ndim(), shape.ndim())));
    }
    let dims = shape.dims().to_vec();
    let strides = shape.strides();
    let mut cur = field.values().to_vec();
    let mut next = alloc::vec![0.0; cur.len()];
    for axis in 0..dims.len() {
        let k = kernel_1d(filter.sigma()[axis]);
        let radius = (k.len() / 2) as isize;
        let n = dims[axis] as isize;
        let stride = strides[axis];
        for (flat, out) in next.iter_mut().enumerate() {
            let pos = ((flat / stride) % dims[axis]) as isize;
            let base = flat - pos as usize * stride;
            let mut acc = 0.0;
            for (ki, &w) in k.iter().enumerate() {
                let src = (pos + ki as isize - radius).rem_euclid(n) as usize;
                acc += w * cur[base + src * stride];
            }
            *out = acc;
        }
        core::mem::swap(&mut cur, &mut next);
    }
    let lo = cur.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cur.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        let span = hi - lo;
        cur.iter_mut().for_each(|v| *v = ((*v - lo) / span).clamp(0.0, 1.0));
    }
    VoxelGrid::new(shape, cur)
}

/// Voxels at or above the `u`-quantile become phase 1, so the phase-1
/// fraction is `1 - u` up to ties.
pub fn threshold(field: &VoxelGrid, u: f64) -> Result<VoxelGrid> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile {u} outside (0, 1)")));
    }
    let mut sorted = field.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if sorted[0] == sorted[n - 1] {
        return Err(Error::DegenerateField);
    }
    let k = (math::ceil(u * n as f64) as usize).min(n - 1);
    let level = sorted[k];
    let values = field.values().iter().map(|&v| if v >= level { 1.0 } else { 0.0 }).collect();
    VoxelGrid::new(field.shape().clone(), values)
}

pub fn volume_fraction(grid: &VoxelGrid) -> Result<f64> {
    grid.ensure_binary()?;
    Ok(grid.mean())
}

/// Rebuild a record's grid from its provenance.
pub fn regenerate(shape: &Shape, provenance: &Provenance) -> Result<VoxelGrid> {
    let filter = MorphologyFilter::new(&provenance.sigma)?;
    let field = random_field(shape, provenance.seed)?;
    threshold(&gaussian_filter(&field, &filter)?, provenance.quantile)
}

/// Provenance of record `index`; drawn from a per-record stream so any
/// subset of records can be produced independently.
pub fn record_provenance(config: &GenerationConfig, index: usize) -> Provenance {
    let filter = &config.sigma_set[index / config.fields_per_filter.max(1)];
    let mut r = rng::stream(config.seed, index as u64);
    let seed = rand::RngCore::next_u64(&mut r);
    let (lo, hi) = config.u_range;
    let quantile = lo + (hi - lo) * rng::uniform(&mut r);
    Provenance { sigma: filter.sigma().to_vec(), seed, quantile }
}

pub fn generate_record(config: &GenerationConfig, index: usize) -> Result<DatasetRecord> {
    let provenance = record_provenance(config, index);
    let grid = regenerate(&config.shape, &provenance)?;
    Ok(DatasetRecord { grid, properties: Vec::new(), provenance, failed: false })
}

/// `|sigma_set| * fields_per_filter` records, filter-major.
pub fn generate_dataset(config: &GenerationConfig) -> Result<Vec<DatasetRecord>> {
    config.validate()?;
    (0..config.record_count()).map(|i| generate_record(config, i)).collect()
}
