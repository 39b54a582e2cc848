//! Effective elastic stiffness of periodic two-phase microstructures.
//!
//! The solver is the basic FFT fixed-point scheme: strain is updated in
//! Fourier space with the Green operator of an isotropic reference medium
//! until the stress field is in equilibrium. 2D grids are solved in plane
//! strain; the out-of-plane normal strain may be prescribed as a uniform
//! macroscopic value (generalized plane strain), which gives the same
//! normal-block stiffness entries as a 3D solve on the extruded structure.
//!
//! Stiffness matrices use Voigt order `(11, 22, 12)` in 2D and
//! `(11, 22, 33, 23, 13, 12)` in 3D with engineering shear strains; entry
//! `(0, 0)` is `C1111`. Load cases and stress averages always use the 3D
//! ordering.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::fft::{frequency, FftNd};
use crate::grid::VoxelGrid;
use crate::{linalg, math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpec {
    young: f64,
    poisson: f64,
}

impl PhaseSpec {
    pub fn new(young: f64, poisson: f64) -> Result<Self> {
        if !(young > 0.0) || !young.is_finite() {
            return Err(Error::InvalidParameter(format!("Young's modulus {young} must be > 0")));
        }
        if !(poisson > -1.0 && poisson < 0.5) {
            return Err(Error::InvalidParameter(format!("Poisson ratio {poisson} must lie in (-1, 0.5)")));
        }
        Ok(PhaseSpec { young, poisson })
    }

    /// Hard (black) phase: E = 120 GPa, nu = 0.3.
    pub fn hard() -> Self {
        PhaseSpec { young: 120.0, poisson: 0.3 }
    }

    /// Soft (white) phase: E = 2.4 GPa, nu = 0.3.
    pub fn soft() -> Self {
        PhaseSpec { young: 2.4, poisson: 0.3 }
    }

    pub fn young(&self) -> f64 {
        self.young
    }

    pub fn poisson(&self) -> f64 {
        self.poisson
    }

    /// Lamé constants `(lambda, mu)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.young, self.poisson);
        (e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)))
    }
}

/// Symmetric Voigt-reduced stiffness, GPa.
#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessMatrix {
    n: usize,
    data: Vec<f64>,
}

impl StiffnessMatrix {
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch(format!("{} entries for {n}x{n}", data.len())));
        }
        Ok(StiffnessMatrix { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Zero-based entry; `get(0, 0)` is C11.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn c11(&self) -> f64 {
        self.data[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            (0..i).all(|j| {
                let (a, b) = (self.get(i, j), self.get(j, i));
                (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
            })
        })
    }

    fn lerp(&self, other: &Self, t: f64) -> Self {
        StiffnessMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
        }
    }
}

pub fn isotropic_stiffness(phase: &PhaseSpec, dim: usize) -> Result<StiffnessMatrix> {
    let (l, m) = phase.lame();
    let d = l + 2.0 * m;
    let data = match dim {
        2 => vec![d, l, 0.0, l, d, 0.0, 0.0, 0.0, m],
        3 => {
            let mut c = vec![0.0; 36];
            for i in 0..3 {
                for j in 0..3 {
                    c[i * 6 + j] = if i == j { d } else { l };
                }
                c[(i + 3) * 6 + i + 3] = m;
            }
            c
        }
        _ => return Err(Error::InvalidParameter(format!("dimension {dim} not in {{2, 3}}"))),
    };
    Ok(StiffnessMatrix { n: if dim == 2 { 3 } else { 6 }, data })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub voigt: StiffnessMatrix,
    pub reuss: StiffnessMatrix,
    pub hill: StiffnessMatrix,
}

/// Voigt/Reuss/Hill estimates for hard-phase volume fraction `vf`.
pub fn bounds_for_fraction(vf: f64, hard: &PhaseSpec, soft: &PhaseSpec, dim: usize) -> Result<BoundsReport> {
    let ch = isotropic_stiffness(hard, dim)?;
    let cs = isotropic_stiffness(soft, dim)?;
    let n = ch.n;
    let voigt = cs.lerp(&ch, vf);
    let sh = linalg::inverse(n, &ch.data)?;
    let ss = linalg::inverse(n, &cs.data)?;
    let mean_s: Vec<f64> = sh.iter().zip(&ss).map(|(h, s)| vf * h + (1.0 - vf) * s).collect();
    let reuss = StiffnessMatrix { n, data: linalg::inverse(n, &mean_s)? };
    let hill = voigt.lerp(&reuss, 0.5);
    Ok(BoundsReport { voigt, reuss, hill })
}

pub fn voigt_reuss_hill(grid: &VoxelGrid, hard: &PhaseSpec, soft: &PhaseSpec) -> Result<BoundsReport> {
    grid.ensure_binary()?;
    bounds_for_fraction(grid.mean(), hard, soft, grid.shape().ndim())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-6, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Volume-averaged stress in 3D Voigt order `(11, 22, 33, 23, 13, 12)`.
    pub stress: [f64; 6],
    pub iterations: usize,
    pub residual: f64,
}

/// Tensor index pairs of the 3D Voigt components.
const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Solve under a unit macroscopic strain in Voigt component `load`
/// (3D ordering; shear loads are engineering strains, so the tensor
/// component is 1/2). 2D grids accept loads 0, 1, 2 (out-of-plane) and 5.
pub fn fft_homogenize(
    grid: &VoxelGrid,
    hard: &PhaseSpec,
    soft: &PhaseSpec,
    load: usize,
    opts: &SolverOptions,
) -> Result<Solution> {
    grid.ensure_binary()?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {} must be > 0", opts.tol)));
    }
    let d = grid.shape().ndim();
    let allowed: &[usize] = if d == 2 { &[0, 1, 2, 5] } else { &[0, 1, 2, 3, 4, 5] };
    if !allowed.contains(&load) {
        return Err(Error::InvalidParameter(format!("load case {load} unsupported for {d}-D grids")));
    }
    let dims = grid.shape().dims().to_vec();
    let n = grid.len();
    let (lh, mh) = hard.lame();
    let (ls, ms) = soft.lame();
    let (l0, m0) = (0.5 * (lh + ls), 0.5 * (mh + ms));
    let lam: Vec<f64> = grid.values().iter().map(|&v| if v == 1.0 { lh } else { ls }).collect();
    let mu: Vec<f64> = grid.values().iter().map(|&v| if v == 1.0 { mh } else { ms }).collect();

    // Components solved as fields: all in-plane/in-volume pairs.
    let comps: Vec<(usize, usize)> = VOIGT_PAIRS.iter().copied().filter(|&(i, j)| i < d && j < d).collect();
    let mut macro_strain = [[0.0; 3]; 3];
    let (li, lj) = VOIGT_PAIRS[load];
    let value = if li == lj { 1.0 } else { 0.5 };
    macro_strain[li][lj] = value;
    macro_strain[lj][li] = value;
    // uniform out-of-plane normal strain for 2D
    let eps_zz = if d == 2 { macro_strain[2][2] } else { 0.0 };

    let fft = FftNd::new(&dims);
    // unit wave directions per frequency bin; None at the origin
    let strides = grid.shape().strides();
    let dirs: Vec<Option<[f64; 3]>> = (0..n)
        .map(|flat| {
            let mut xi = [0.0; 3];
            for a in 0..d {
                xi[a] = frequency((flat / strides[a]) % dims[a], dims[a]);
            }
            let norm = math::sqrt(xi.iter().map(|v| v * v).sum());
            if norm == 0.0 {
                None
            } else {
                Some([xi[0] / norm, xi[1] / norm, xi[2] / norm])
            }
        })
        .collect();

    // bins on the Nyquist plane of an even axis have no Hermitian partner
    // with the opposite direction; there the stress is driven to zero instead
    let nyquist: Vec<bool> = (0..n)
        .map(|flat| (0..d).any(|a| dims[a].is_multiple_of(2) && (flat / strides[a]) % dims[a] == dims[a] / 2))
        .collect();

    let zero = Complex64::new(0.0, 0.0);
    let nc = comps.len();
    let mut index = [[usize::MAX; 3]; 3];
    for (c, &(i, j)) in comps.iter().enumerate() {
        index[i][j] = c;
        index[j][i] = c;
    }
    let voigt_slot: Vec<usize> =
        comps.iter().map(|pair| VOIGT_PAIRS.iter().position(|p| p == pair).expect("voigt pair")).collect();
    // flat index of the negated frequency, for splitting packed transforms
    let neg: Vec<usize> = (0..n)
        .map(|flat| {
            (0..d).fold(0, |acc, a| {
                let k = (flat / strides[a]) % dims[a];
                acc + ((dims[a] - k) % dims[a]) * strides[a]
            })
        })
        .collect();

    let mut eps: Vec<Vec<f64>> = comps.iter().map(|&(i, j)| vec![macro_strain[i][j]; n]).collect();
    let mut eps_hat: Vec<Vec<Complex64>> = comps
        .iter()
        .map(|&(i, j)| {
            let mut v = vec![zero; n];
            v[0] = Complex64::new(macro_strain[i][j] * n as f64, 0.0);
            v
        })
        .collect();
    let mut sig: Vec<Vec<f64>> = vec![vec![0.0; n]; nc];
    let mut sig_hat: Vec<Vec<Complex64>> = vec![vec![zero; n]; nc];
    let mut packed = vec![zero; n];
    let c1 = 1.0 / (2.0 * m0);
    let c2 = (l0 + m0) / (m0 * (l0 + 2.0 * m0));
    // reference compliance on fluctuations: eps = sig / 2mu0 - c3 tr(sig) I
    let c3 = l0 / (2.0 * m0 * (d as f64 * l0 + 2.0 * m0));
    let mut residual = f64::INFINITY;

    for iteration in 1..=opts.max_iter {
        let mut mean = [0.0; 6];
        for x in 0..n {
            let mut tr = eps_zz;
            for a in 0..d {
                tr += eps[index[a][a]][x];
            }
            for (c, &(i, j)) in comps.iter().enumerate() {
                sig[c][x] = if i == j { lam[x] * tr + 2.0 * mu[x] * eps[c][x] } else { 2.0 * mu[x] * eps[c][x] };
            }
            if d == 2 {
                mean[2] += lam[x] * tr + 2.0 * mu[x] * eps_zz;
            }
        }
        for c in 0..nc {
            mean[voigt_slot[c]] += sig[c].iter().sum::<f64>();
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);

        // two real fields per complex transform
        for c in (0..nc).step_by(2) {
            let pair = c + 1 < nc;
            for x in 0..n {
                packed[x] = Complex64::new(sig[c][x], if pair { sig[c + 1][x] } else { 0.0 });
            }
            fft.forward(&mut packed);
            for x in 0..n {
                let z = packed[x];
                let zc = packed[neg[x]].conj();
                sig_hat[c][x] = (z + zc) * 0.5;
                if pair {
                    sig_hat[c + 1][x] = Complex64::new(0.0, -0.5) * (z - zc);
                }
            }
        }

        // equilibrium residual and Green-operator strain update
        let mut div_sq = 0.0;
        for (x, dir) in dirs.iter().enumerate() {
            let Some(nv) = dir else { continue };
            let mut s = [zero; 3];
            for (i, si) in s.iter_mut().enumerate().take(d) {
                for (j, nj) in nv.iter().enumerate().take(d) {
                    *si += sig_hat[index[i][j]][x] * *nj;
                }
            }
            div_sq += s.iter().map(|v| v.norm_sqr()).sum::<f64>();
            if nyquist[x] {
                let tr: Complex64 = (0..d).map(|i| sig_hat[index[i][i]][x]).sum();
                for (c, &(k, h)) in comps.iter().enumerate() {
                    let mut g = sig_hat[c][x] * c1;
                    if k == h {
                        g -= tr * c3;
                    }
                    eps_hat[c][x] -= g;
                }
                continue;
            }
            let a: Complex64 = (0..d).map(|i| s[i] * nv[i]).sum();
            for (c, &(k, h)) in comps.iter().enumerate() {
                let g = (s[k] * nv[h] + s[h] * nv[k]) * c1 - a * (c2 * nv[k] * nv[h]);
                eps_hat[c][x] -= g;
            }
        }
        let mean_norm =
            math::sqrt((0..6).map(|k| if k < 3 { mean[k] * mean[k] } else { 2.0 * mean[k] * mean[k] }).sum());
        residual = math::sqrt(div_sq / n as f64) / (math::sqrt(n as f64) * mean_norm.max(f64::MIN_POSITIVE));
        if !residual.is_finite() {
            return Err(Error::NonFinite("homogenization residual".into()));
        }
        if residual < opts.tol {
            return Ok(Solution { stress: mean, iterations: iteration, residual });
        }
        for c in (0..nc).step_by(2) {
            let pair = c + 1 < nc;
            for x in 0..n {
                packed[x] = eps_hat[c][x] + if pair { eps_hat[c + 1][x] * Complex64::new(0.0, 1.0) } else { zero };
            }
            fft.inverse(&mut packed);
            for x in 0..n {
                eps[c][x] = packed[x].re;
                if pair {
                    eps[c + 1][x] = packed[x].im;
                }
            }
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iter, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyMode {
    /// C11 only.
    Scalar,
    /// Normal block `(C11, C21, C31, C22, C32, C33)`.
    Vector,
}

impl PropertyMode {
    pub fn dim(self) -> usize {
        match self {
            PropertyMode::Scalar => 1,
            PropertyMode::Vector => 6,
        }
    }

    pub fn from_dim(dim: usize) -> Result<Self> {
        match dim {
            1 => Ok(PropertyMode::Scalar),
            6 => Ok(PropertyMode::Vector),
            _ => Err(Error::InvalidParameter(format!("property dimension {dim} not in {{1, 6}}"))),
        }
    }

    pub fn labels(self) -> &'static [&'static str] {
        match self {
            PropertyMode::Scalar => &["C11"],
            PropertyMode::Vector => &["C11", "C21", "C31", "C22", "C32", "C33"],
        }
    }
}

/// Ordered stiffness entries in GPa (length 1 or 6).
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyVector(Vec<f64>);

impl PropertyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !(values.len() == 1 || values.len() == 6) {
            return Err(Error::InvalidParameter(format!("{} properties, expected 1 or 6", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("property value".into()));
        }
        Ok(PropertyVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn effective_stiffness(
    grid: &VoxelGrid,
    hard: &PhaseSpec,
    soft: &PhaseSpec,
    mode: PropertyMode,
    opts: &SolverOptions,
) -> Result<PropertyVector> {
    match mode {
        PropertyMode::Scalar => {
            let s = fft_homogenize(grid, hard, soft, 0, opts)?;
            PropertyVector::new(vec![s.stress[0]])
        }
        PropertyMode::Vector => {
            let cols: Vec<[f64; 6]> = (0..3)
                .map(|load| fft_homogenize(grid, hard, soft, load, opts).map(|s| s.stress))
                .collect::<Result<_>>()?;
            // C_ij = <sigma_i> under unit strain j
            let c = |i: usize, j: usize| cols[j][i];
            PropertyVector::new(vec![c(0, 0), c(1, 0), c(2, 0), c(1, 1), c(2, 1), c(2, 2)])
        }
    }
}

/// Full Voigt-reduced effective stiffness (3x3 in 2D, 6x6 in 3D).
pub fn stiffness_matrix(
    grid: &VoxelGrid,
    hard: &PhaseSpec,
    soft: &PhaseSpec,
    opts: &SolverOptions,
) -> Result<StiffnessMatrix> {
    let d = grid.shape().ndim();
    let loads: &[usize] = if d == 2 { &[0, 1, 5] } else { &[0, 1, 2, 3, 4, 5] };
    let m = loads.len();
    let mut data = vec![0.0; m * m];
    for (col, &load) in loads.iter().enumerate() {
        let s = fft_homogenize(grid, hard, soft, load, opts)?;
        for (row, &k) in loads.iter().enumerate() {
            data[row * m + col] = s.stress[k];
        }
    }
    StiffnessMatrix::from_rows(m, data)
}

/// Voigt/Reuss/Hill estimate of the property vector, used as the analytical
/// baseline. Vector mode uses the 3D 6x6 matrices' normal block.
pub fn hill_properties(
    vf: f64,
    hard: &PhaseSpec,
    soft: &PhaseSpec,
    mode: PropertyMode,
    dim: usize,
) -> Result<PropertyVector> {
    match mode {
        PropertyMode::Scalar => PropertyVector::new(vec![bounds_for_fraction(vf, hard, soft, dim)?.hill.c11()]),
        PropertyMode::Vector => {
            let h = bounds_for_fraction(vf, hard, soft, 3)?.hill;
            PropertyVector::new(vec![h.get(0, 0), h.get(1, 0), h.get(2, 0), h.get(1, 1), h.get(2, 1), h.get(2, 2)])
        }
    }
}
