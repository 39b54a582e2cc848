//! Gram-matrix style loss over a fixed random convolution bank.
//!
//! Volumes are compared through their axial slices: every slice along every
//! axis is passed through the bank and the per-slice losses are averaged.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{he_normal, Activation, ConvGeom, Graph, Tensor, Var};
use crate::grid::{Shape, VoxelGrid};
use crate::{rng, Error, Result};

const SLOPE: f64 = 0.2;

/// Frozen, seeded convolution layers used as a texture descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    seed: u64,
    channels: Vec<usize>,
    kernel: usize,
    stride: usize,
    layer_weights: Vec<f64>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

/// Gram matrices of one image, one `C_l x C_l` matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSet {
    pub layers: Vec<Tensor>,
    /// Spatial size `M_l` of each layer's feature maps.
    pub sizes: Vec<usize>,
}

impl FeatureBank {
    pub fn new(seed: u64, channels: &[usize], kernel: usize, stride: usize) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) || kernel == 0 || stride == 0 {
            return Err(Error::InvalidParameter(format!(
                "feature bank channels {channels:?}, kernel {kernel}, stride {stride}"
            )));
        }
        let mut r = rng::stream(seed, 0x5747);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut cin = 1;
        for &c in channels {
            weights.push(he_normal(&[c, cin, 1, kernel, kernel], cin * kernel * kernel, &mut r));
            biases.push(Tensor::zeros(&[c]));
            cin = c;
        }
        let l = channels.len();
        Ok(FeatureBank {
            seed,
            channels: channels.to_vec(),
            kernel,
            stride,
            layer_weights: vec![1.0 / l as f64; l],
            weights,
            biases,
        })
    }

    /// Three layers (8, 16, 32), kernel 3, stride 1.
    pub fn standard(seed: u64) -> Self {
        Self::new(seed, &[8, 16, 32], 3, 1).expect("valid standard bank")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn layer_weights(&self) -> &[f64] {
        &self.layer_weights
    }

    fn geom(&self) -> ConvGeom {
        ConvGeom::strided(self.kernel, self.stride, 2)
    }

    /// Feature maps `[C_l, H_l, W_l]` of a `[1, H, W]` image node.
    pub fn features(&self, g: &mut Graph, image: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.weights.len());
        let mut h = g.offset(image, -0.5);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let wv = g.input(w.clone());
            let bv = g.input(b.clone());
            let c = g.conv(h, wv, bv, self.geom())?;
            h = g.activation(c, Activation::LeakyRelu(SLOPE));
            out.push(h);
        }
        Ok(out)
    }

    /// Gram set of a `[1, H, W]` image (no gradient).
    pub fn gram_set(&self, image: &Tensor) -> Result<GramSet> {
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let feats = self.features(&mut g, x)?;
        let mut layers = Vec::new();
        let mut sizes = Vec::new();
        for f in feats {
            let t = g.value(f);
            sizes.push(t.len() / t.shape()[0]);
            let gm = g.gram(f);
            layers.push(g.value(gm).clone());
        }
        Ok(GramSet { layers, sizes })
    }
}

/// Axial slices of a grid as `[1, A, B]` tensors: for 3D, all slices along
/// axis 0, then axis 1, then axis 2; for 2D, the image itself.
pub fn slice_stack(grid: &VoxelGrid) -> Vec<Tensor> {
    let dims = grid.shape().dims();
    let v = grid.values();
    if dims.len() == 2 {
        return vec![Tensor::new(&[1, dims[0], dims[1]], v.to_vec()).expect("grid shape")];
    }
    let (d, h, w) = (dims[0], dims[1], dims[2]);
    let at = |z: usize, y: usize, x: usize| v[(z * h + y) * w + x];
    let mut out = Vec::with_capacity(d + h + w);
    for z in 0..d {
        let s = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| at(z, y, x)).collect();
        out.push(Tensor::new(&[1, h, w], s).expect("slice"));
    }
    for y in 0..h {
        let s = (0..d).flat_map(|z| (0..w).map(move |x| (z, x))).map(|(z, x)| at(z, y, x)).collect();
        out.push(Tensor::new(&[1, d, w], s).expect("slice"));
    }
    for x in 0..w {
        let s = (0..d).flat_map(|z| (0..h).map(move |y| (z, y))).map(|(z, y)| at(z, y, x)).collect();
        out.push(Tensor::new(&[1, d, h], s).expect("slice"));
    }
    out
}

/// `G = F F^T` for features `F: [C, M]` given row-major.
pub fn gram(features: &Tensor) -> Result<Tensor> {
    if features.is_empty() || features.shape().len() < 2 {
        return Err(Error::Empty("gram of an empty feature map".into()));
    }
    let mut g = Graph::new();
    let f = g.input(features.clone());
    let gm = g.gram(f);
    Ok(g.value(gm).clone())
}

/// Target Gram sets of every slice of `grid`.
pub fn target_grams(grid: &VoxelGrid, bank: &FeatureBank) -> Result<Vec<GramSet>> {
    slice_stack(grid).iter().map(|s| bank.gram_set(s)).collect()
}

fn layer_term(g: &mut Graph, bank: &FeatureBank, feats: &[Var], target: &GramSet) -> Result<Var> {
    let mut terms = Vec::with_capacity(feats.len());
    for (l, &f) in feats.iter().enumerate() {
        let c = bank.channels[l] as f64;
        let m = target.sizes[l] as f64;
        let gm = g.gram(f);
        let t = g.input(target.layers[l].clone());
        let d = g.sub(gm, t)?;
        let sq = g.square(d);
        let s = g.sum(sq);
        terms.push(g.scale(s, bank.layer_weights[l] / (4.0 * c * c * m * m)));
    }
    let all = g.stack(&terms)?;
    Ok(g.sum(all))
}

/// Differentiable style loss of a reconstruction node against precomputed
/// target Gram sets. `x_hat` is `[1, H, W]` (2D) or `[1, D, H, W]` (3D).
pub fn style_loss_graph(g: &mut Graph, bank: &FeatureBank, x_hat: Var, targets: &[GramSet]) -> Result<Var> {
    let slices = graph_slices(g, x_hat)?;
    if slices.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!("{} slices vs {} target sets", slices.len(), targets.len())));
    }
    let mut terms = Vec::with_capacity(slices.len());
    for (s, t) in slices.into_iter().zip(targets) {
        let feats = bank.features(g, s)?;
        terms.push(layer_term(g, bank, &feats, t)?);
    }
    let n = terms.len() as f64;
    let all = g.stack(&terms)?;
    let total = g.sum(all);
    Ok(g.scale(total, 1.0 / n))
}

fn graph_slices(g: &mut Graph, x: Var) -> Result<Vec<Var>> {
    match g.value(x).shape().len() {
        3 => Ok(vec![x]),
        4 => {
            let s = g.value(x).shape().to_vec();
            let mut out = Vec::new();
            for axis in 0..3 {
                for i in 0..s[axis + 1] {
                    out.push(g.axis_slice(x, axis, i)?);
                }
            }
            Ok(out)
        }
        _ => Err(Error::ShapeMismatch(format!("style loss input {:?}", g.value(x).shape()))),
    }
}

/// Tensor layout `[1, dims...]` of a grid, as consumed by the networks.
pub fn grid_tensor(grid: &VoxelGrid) -> Tensor {
    let mut shape = vec![1];
    shape.extend_from_slice(grid.shape().dims());
    Tensor::new(&shape, grid.values().to_vec()).expect("grid shape")
}

/// Inverse of [`grid_tensor`].
pub fn tensor_grid(t: &Tensor) -> Result<VoxelGrid> {
    VoxelGrid::new(Shape::new(&t.shape()[1..])?, t.data().to_vec())
}

fn check_shapes(x: &VoxelGrid, x_hat: &VoxelGrid) -> Result<()> {
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape().dims(), x_hat.shape().dims())));
    }
    Ok(())
}

/// Style loss between two grids: mean over slices of the weighted Gram
/// discrepancy.
pub fn style_loss(x: &VoxelGrid, x_hat: &VoxelGrid, bank: &FeatureBank) -> Result<f64> {
    check_shapes(x, x_hat)?;
    let targets = target_grams(x, bank)?;
    let mut g = Graph::new();
    let xh = g.input(grid_tensor(x_hat));
    let l = style_loss_graph(&mut g, bank, xh, &targets)?;
    Ok(g.value(l).item())
}

/// Per-axis decomposition of the 3D style loss: entry `a` is the mean loss
/// over slices taken along axis `a`. A 2D grid yields a single entry.
pub fn style_loss_by_axis(x: &VoxelGrid, x_hat: &VoxelGrid, bank: &FeatureBank) -> Result<Vec<f64>> {
    check_shapes(x, x_hat)?;
    let a = slice_stack(x);
    let b = slice_stack(x_hat);
    let dims = x.shape().dims();
    let counts: Vec<usize> = if dims.len() == 2 { vec![1] } else { dims.to_vec() };
    let mut out = Vec::with_capacity(counts.len());
    let mut k = 0;
    for n in counts {
        let mut acc = 0.0;
        for _ in 0..n {
            let t = bank.gram_set(&a[k])?;
            let mut g = Graph::new();
            let s = g.input(b[k].clone());
            let feats = bank.features(&mut g, s)?;
            let l = layer_term(&mut g, bank, &feats, &t)?;
            acc += g.value(l).item();
            k += 1;
        }
        out.push(acc / n as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::microgen::{gaussian_filter, random_field, threshold, MorphologyFilter};

    fn sample(sigma: &[f64], dims: &[usize], seed: u64, u: f64) -> VoxelGrid {
        let f = random_field(&Shape::new(dims).unwrap(), seed).unwrap();
        let f = gaussian_filter(&f, &MorphologyFilter::new(sigma).unwrap()).unwrap();
        threshold(&f, u).unwrap()
    }

    #[test]
    fn slice_counts() {
        let g3 = VoxelGrid::filled(Shape::new(&[5, 5, 5]).unwrap(), 1.0);
        let s = slice_stack(&g3);
        assert_eq!(s.len(), 15);
        assert!(s.iter().all(|t| t == &s[0]));
        let g2 = VoxelGrid::filled(Shape::new(&[4, 6]).unwrap(), 0.0);
        assert_eq!(slice_stack(&g2).len(), 1);
    }

    #[test]
    fn gram_fixtures() {
        let id = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(gram(&id).unwrap(), id);
        let ones = Tensor::new(&[1, 4], vec![1.0; 4]).unwrap();
        assert_eq!(gram(&ones).unwrap().data(), [4.0]);
        let f = Tensor::new(&[3, 2], vec![1.0, -2.0, 0.5, 3.0, 2.0, 1.0]).unwrap();
        let g = gram(&f).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.data()[i * 3 + j], g.data()[j * 3 + i]);
            }
        }
    }

    #[test]
    fn self_loss_is_zero_and_positive_otherwise() {
        let bank = FeatureBank::standard(3);
        let a = sample(&[1.0, 7.0], &[33, 33], 1, 0.5);
        let b = sample(&[7.0, 1.0], &[33, 33], 2, 0.5);
        assert_eq!(style_loss(&a, &a, &bank).unwrap(), 0.0);
        assert!(style_loss(&a, &b, &bank).unwrap() > 0.0);
    }

    fn shifted(a: &VoxelGrid, dy: usize, dx: usize) -> VoxelGrid {
        let n = a.shape().dims()[1];
        let m = a.shape().dims()[0];
        let v = (0..n * m).map(|i| a.values()[((i / n + dy) % m) * n + (i % n + dx) % n]).collect();
        VoxelGrid::new(a.shape().clone(), v).unwrap()
    }

    #[test]
    fn translation_tolerance() {
        let bank = FeatureBank::standard(3);
        let (mut near, mut far) = (0.0, 0.0);
        for i in 0..5 {
            let a = sample(&[1.0, 7.0], &[33, 33], 4 + i, 0.5);
            let other = sample(&[7.0, 1.0], &[33, 33], 50 + i, 0.5);
            near += style_loss(&a, &shifted(&a, 5, 11), &bank).unwrap();
            far += style_loss(&a, &other, &bank).unwrap();
        }
        assert!(near * 5.0 < far, "{near} vs {far}");
    }

    #[test]
    fn same_class_pairs_are_closer() {
        let bank = FeatureBank::standard(7);
        let (mut same, mut diff) = (0.0, 0.0);
        for i in 0..20 {
            let a = sample(&[1.0, 7.0], &[33, 33], 100 + i, 0.5);
            let b = sample(&[1.0, 7.0], &[33, 33], 200 + i, 0.5);
            let c = sample(&[7.0, 1.0], &[33, 33], 300 + i, 0.5);
            same += style_loss(&a, &b, &bank).unwrap();
            diff += style_loss(&a, &c, &bank).unwrap();
        }
        assert!(same < diff, "{same} vs {diff}");
    }

    #[test]
    fn unmatched_axes_dominate() {
        // `b` is a stack of independent 2D samples sharing the in-plane
        // statistics of `a`'s axis-0 slices but with no elongation along
        // axis 0, so only the other two slice directions see a difference.
        let bank = FeatureBank::standard(1);
        let n = 12;
        let a = sample(&[6.0, 1.0, 3.0], &[n, n, n], 9, 0.5);
        let mut v = Vec::with_capacity(n * n * n);
        for z in 0..n {
            v.extend_from_slice(sample(&[1.0, 3.0], &[n, n], 40 + z as u64, 0.5).values());
        }
        let b = VoxelGrid::new(a.shape().clone(), v).unwrap();
        let per_axis = style_loss_by_axis(&a, &b, &bank).unwrap();
        let total = style_loss(&a, &b, &bank).unwrap();
        assert!((per_axis.iter().sum::<f64>() / 3.0 - total).abs() < 1e-12 * total.max(1.0));
        assert!(per_axis[1] > per_axis[0] && per_axis[2] > per_axis[0], "{per_axis:?}");
    }

    #[test]
    fn style_gradient_matches_finite_differences() {
        let bank = FeatureBank::new(11, &[3, 4], 3, 2).unwrap();
        let target = sample(&[1.0, 3.0], &[9, 9], 12, 0.5);
        let targets = target_grams(&target, &bank).unwrap();
        let mut r = rng::stream(13, 0);
        let x: Vec<f64> = (0..81).map(|_| rng::uniform(&mut r)).collect();
        let x = Tensor::new(&[1, 9, 9], x).unwrap();
        let report = gradcheck::check(&[x], |g, v| style_loss_graph(g, &bank, v[0], &targets), 12, 1e-4, 5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);

        let target3 = sample(&[1.0, 2.0, 1.0], &[5, 5, 5], 14, 0.5);
        let targets3 = target_grams(&target3, &bank).unwrap();
        let x: Vec<f64> = (0..125).map(|_| rng::uniform(&mut r)).collect();
        let x = Tensor::new(&[1, 5, 5, 5], x).unwrap();
        let report = gradcheck::check(&[x], |g, v| style_loss_graph(g, &bank, v[0], &targets3), 12, 1e-4, 6).unwrap();
        assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }
}
