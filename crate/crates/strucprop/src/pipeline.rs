//! Drivers behind the CLI subcommands. Each takes a validated
//! [`RunConfig`] and returns plain data; writing files is left to the caller.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use strucprop_core::homogenize::{effective_stiffness, hill_properties, PropertyVector};
use strucprop_core::inference::{
    anisotropy_measure, evaluate_inverse, fit_linear_baseline, inverse_infer, latent_means, metrics, predict_baseline,
    predict_forward, reconstruct, InverseReport, InverseSolution, MetricsReport, Pca,
};
use strucprop_core::latentopt::{compare_starts, ComparisonReport};
use strucprop_core::microgen::{generate_record, volume_fraction, DatasetRecord};
use strucprop_core::vaereg::{split_indices, train, EpochLog, Model, Split, TrainOutcome};
use strucprop_core::VoxelGrid;

use crate::config::RunConfig;
use crate::dataset::{self, Appender, Dataset, Header};
use crate::error::{Error, Result};

/// Header a dataset generated from `rc` carries.
pub fn dataset_header(rc: &RunConfig) -> Result<Header> {
    let (hard, soft) = rc.phases()?;
    Ok(Header {
        shape: rc.shape()?,
        records: rc.generation()?.record_count(),
        property_dim: rc.property_mode()?.dim(),
        hard,
        soft,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub records: usize,
    pub resumed_from: usize,
    pub failed: usize,
}

/// Generate and homogenize every record, appending to `out`. A partial file
/// from an interrupted run with the same configuration is resumed at the
/// first missing record. Progress goes to `progress`.
pub fn gen_data(rc: &RunConfig, out: &Path, progress: &mut dyn Write) -> Result<GenSummary> {
    let gen = rc.generation()?;
    let (hard, soft) = rc.phases()?;
    let mode = rc.property_mode()?;
    let solver = rc.solver()?;
    let header = dataset_header(rc)?;
    let total = header.records;
    let mut app = Appender::open(out, header)?;
    let start = app.written();
    if start > 0 {
        let _ = writeln!(progress, "resuming at record {start} of {total}");
    }
    let t0 = Instant::now();
    let mut failed = 0;
    for i in start..total {
        let mut rec = generate_record(&gen, i)?;
        match effective_stiffness(&rec.grid, &hard, &soft, mode, &solver) {
            Ok(p) => rec.properties = p.into_values(),
            Err(e) => {
                let _ = writeln!(progress, "record {i}: homogenization failed: {e}");
                rec.failed = true;
                failed += 1;
            }
        }
        app.push(&rec)?;
        let done = i + 1 - start;
        if done % 25 == 0 || i + 1 == total {
            let secs = t0.elapsed().as_secs_f64();
            let eta = secs / done as f64 * (total - i - 1) as f64;
            let _ = writeln!(progress, "{}/{} records, {:.0} s elapsed, eta {:.0} s", i + 1, total, secs, eta);
        }
    }
    let ds = dataset::read(out)?;
    Ok(GenSummary {
        records: total,
        resumed_from: start,
        failed: failed + ds.records[..start].iter().filter(|r| r.failed).count(),
    })
}

/// Read a dataset and check it matches the grid shape and property mode of `rc`.
pub fn load_dataset(rc: &RunConfig, path: &Path) -> Result<Dataset> {
    let ds = dataset::read(path)?;
    let shape = rc.shape()?;
    if ds.header.shape != shape {
        return Err(Error::Data(format!(
            "{}: grids are {:?}, config expects {:?}",
            path.display(),
            ds.header.shape.dims(),
            shape.dims()
        )));
    }
    let p = rc.property_mode()?.dim();
    if ds.header.property_dim != p {
        return Err(Error::Data(format!(
            "{}: {} properties per record, config expects {p}",
            path.display(),
            ds.header.property_dim
        )));
    }
    Ok(ds)
}

pub fn train_model(rc: &RunConfig, ds: &Dataset, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    Ok(train(&ds.records, rc.model()?, &rc.training()?, on_epoch)?)
}

/// The train/validation/test split training used for this configuration.
pub fn split(rc: &RunConfig, ds: &Dataset) -> Result<Split> {
    let tc = rc.training()?;
    Ok(split_indices(&ds.records, tc.seed, tc.train_fraction, tc.val_fraction))
}

fn properties(r: &DatasetRecord) -> Result<PropertyVector> {
    Ok(PropertyVector::new(r.properties.clone())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub index: usize,
    pub truth: Vec<f64>,
    pub vae_reg: Vec<f64>,
    pub vrh: Vec<f64>,
    pub vae_lin: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub vae_reg: MetricsReport,
    pub vrh: MetricsReport,
    pub vae_lin: Option<MetricsReport>,
    pub predictions: Vec<Prediction>,
}

/// Test-split metrics of the model, the Voigt-Reuss-Hill estimate and, when a
/// vanilla model is given, a linear regression on its latent means fitted on
/// the training split.
pub fn evaluate(rc: &RunConfig, model: &Model, vanilla: Option<&Model>, ds: &Dataset) -> Result<Evaluation> {
    let split = split(rc, ds)?;
    if split.test.len() < 2 {
        return Err(Error::Data("test split has fewer than two records".into()));
    }
    let (hard, soft) = rc.phases()?;
    let mode = rc.property_mode()?;
    let dim = ds.header.shape.ndim();
    let baseline = match vanilla {
        Some(v) => {
            let grids: Vec<&VoxelGrid> = split.train.iter().map(|&i| &ds.records[i].grid).collect();
            let props: Vec<&[f64]> = split.train.iter().map(|&i| ds.records[i].properties.as_slice()).collect();
            Some((v, fit_linear_baseline(v, &grids, &props)?))
        }
        None => None,
    };
    let mut predictions = Vec::with_capacity(split.test.len());
    for &i in &split.test {
        let r = &ds.records[i];
        let vf = volume_fraction(&r.grid)?;
        predictions.push(Prediction {
            index: i,
            truth: r.properties.clone(),
            vae_reg: predict_forward(model, &r.grid)?.into_values(),
            vrh: hill_properties(vf, &hard, &soft, mode, dim)?.into_values(),
            vae_lin: baseline
                .as_ref()
                .map(|(v, b)| predict_baseline(v, b, &r.grid).map(|p| p.into_values()))
                .transpose()?,
        });
    }
    let truth = split.test.iter().map(|&i| properties(&ds.records[i])).collect::<Result<Vec<_>>>()?;
    let report = |get: &dyn Fn(&Prediction) -> Vec<f64>| -> Result<MetricsReport> {
        let y_hat = predictions.iter().map(|p| Ok(PropertyVector::new(get(p))?)).collect::<Result<Vec<_>>>()?;
        Ok(metrics(&truth, &y_hat)?)
    };
    let vae_reg = report(&|p| p.vae_reg.clone())?;
    let vrh = report(&|p| p.vrh.clone())?;
    let vae_lin =
        if baseline.is_some() { Some(report(&|p| p.vae_lin.clone().expect("baseline present"))?) } else { None };
    Ok(Evaluation { vae_reg, vrh, vae_lin, predictions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub index: usize,
    pub vf_input: f64,
    pub vf_output: f64,
    pub pc: [f64; 2],
    pub properties: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Reconstruct up to `limit` test records (binarized at the configured
/// threshold) and project their latent means onto the first two principal
/// axes of the test latents.
pub fn reconstructions(rc: &RunConfig, model: &Model, ds: &Dataset, limit: usize) -> Result<Vec<Reconstruction>> {
    let split = split(rc, ds)?;
    let level = rc.inverse()?.binarize_threshold;
    let test: Vec<usize> = split.test.iter().copied().take(limit).collect();
    let grids: Vec<&VoxelGrid> = test.iter().map(|&i| &ds.records[i].grid).collect();
    let z = latent_means(model, &grids)?;
    let pca = Pca::fit(&z)?;
    test.iter()
        .zip(&z)
        .map(|(&i, z)| {
            let r = &ds.records[i];
            let out = reconstruct(model, &r.grid)?.binarize(level);
            let pc = pca.project(z, 2);
            Ok(Reconstruction {
                index: i,
                vf_input: r.grid.mean(),
                vf_output: out.mean(),
                pc: [pc[0], pc.get(1).copied().unwrap_or(0.0)],
                properties: r.properties.clone(),
                sigma: r.provenance.sigma.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub solutions: Vec<InverseSolution>,
    pub report: InverseReport,
    /// Per-solution anisotropy (correlation length per axis); `None` for a
    /// single-phase solution.
    pub anisotropy: Vec<Option<Vec<f64>>>,
}

/// Inverse inference for one target, validated through the homogenizer.
pub fn invert(rc: &RunConfig, model: &Model, target: &[f64]) -> Result<Inversion> {
    let (hard, soft) = rc.phases()?;
    let target = PropertyVector::new(target.to_vec())?;
    let mut solutions = inverse_infer(model, &target, &rc.inverse()?)?;
    let report = evaluate_inverse(&mut solutions, &hard, &soft, &rc.solver()?)?;
    let anisotropy = solutions.iter().map(|s| anisotropy_measure(&s.binarized).ok()).collect();
    Ok(Inversion { solutions, report, anisotropy })
}

pub fn optimize(rc: &RunConfig, model: &Model, target: &[f64]) -> Result<ComparisonReport> {
    let (hard, soft) = rc.phases()?;
    let target = PropertyVector::new(target.to_vec())?;
    Ok(compare_starts(model, &target, &rc.compare()?, &hard, &soft, &rc.solver()?)?)
}
