//! Mixed-radix complex FFT for arbitrary lengths and its separable N-d
//! extension. Prime factors are handled by direct DFT, which is adequate for
//! the small odd grid sizes used here (33 = 3 * 11, 51 = 3 * 17).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::math;

#[derive(Debug, Clone)]
pub struct Fft1d {
    n: usize,
    /// `exp(-2 pi i k / n)` for k in 0..n.
    forward: Vec<Complex64>,
    backward: Vec<Complex64>,
}

fn smallest_factor(n: usize) -> usize {
    if n.is_multiple_of(2) {
        return 2;
    }
    let mut p = 3;
    while p * p <= n {
        if n.is_multiple_of(p) {
            return p;
        }
        p += 2;
    }
    n
}

impl Fft1d {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "fft length must be positive");
        let forward: Vec<Complex64> = (0..n)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(math::cos(a), math::sin(a))
            })
            .collect();
        let backward = forward.iter().map(|w| w.conj()).collect();
        Fft1d { n, forward, backward }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward transform (`inverse = false`) or its conjugate
    /// (`inverse = true`, still unnormalized).
    pub fn process(&self, data: &mut [Complex64], inverse: bool) {
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.n];
        self.process_with_scratch(data, &mut scratch, inverse);
    }

    /// As [`Fft1d::process`], with caller-provided scratch of at least `n`.
    pub fn process_with_scratch(&self, data: &mut [Complex64], scratch: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(data.len(), self.n);
        let roots = if inverse { &self.backward } else { &self.forward };
        recurse(roots, data, &mut scratch[..self.n], 1);
    }
}

// Transforms `data` (length m, a decimated view of the full length-n
// sequence, so twiddle `w_m^e` is `roots[e * rs]` with `rs = n / m`).
fn recurse(roots: &[Complex64], data: &mut [Complex64], scratch: &mut [Complex64], rs: usize) {
    let m = data.len();
    if m == 1 {
        return;
    }
    let zero = Complex64::new(0.0, 0.0);
    let p = smallest_factor(m);
    if p == m {
        for (k, out) in scratch[..m].iter_mut().enumerate() {
            let mut acc = zero;
            let mut e = 0;
            for x in data.iter() {
                acc += *x * roots[e * rs];
                e += k;
                if e >= m {
                    e -= m;
                }
            }
            *out = acc;
        }
        data.copy_from_slice(&scratch[..m]);
        return;
    }
    let q = m / p;
    // gather the p decimated subsequences contiguously
    for r in 0..p {
        for j in 0..q {
            scratch[r * q + j] = data[j * p + r];
        }
    }
    for r in 0..p {
        recurse(roots, &mut scratch[r * q..(r + 1) * q], &mut data[..q], rs * p);
    }
    for (k, out) in data.iter_mut().enumerate() {
        let kq = k % q;
        let mut acc = scratch[kq];
        let mut e = k;
        for r in 1..p {
            acc += scratch[r * q + kq] * roots[e * rs];
            e += k;
            if e >= m {
                e -= m;
            }
        }
        *out = acc;
    }
}

/// Separable transform over a row-major N-d array.
#[derive(Debug, Clone)]
pub struct FftNd {
    dims: Vec<usize>,
    plans: Vec<Fft1d>,
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        FftNd { dims: dims.to_vec(), plans: dims.iter().map(|&n| Fft1d::new(n)).collect() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, true);
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let total: usize = self.dims.iter().product();
        assert_eq!(data.len(), total, "fft buffer length");
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        let mut stride = total;
        for (axis, plan) in self.plans.iter().enumerate() {
            let n = self.dims[axis];
            stride /= n;
            if n == 1 {
                continue;
            }
            line.resize(n, Complex64::new(0.0, 0.0));
            scratch.resize(n, Complex64::new(0.0, 0.0));
            let block = n * stride;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[base + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch, inverse);
                    for (i, v) in line.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
    }
}

/// Signed integer frequency of bin `k` for a length-`n` transform.
pub fn frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}
