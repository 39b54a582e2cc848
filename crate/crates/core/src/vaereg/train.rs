use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::config::ModelConfig;
use super::model::{LossParts, Model, Normalization};
use crate::autodiff::{Adam, AdamConfig, Graph, Tensor};
use crate::microgen::DatasetRecord;
use crate::statfeat::GramSet;
use crate::{math, rng, Error, Result};

const SPLIT_STREAM: u64 = 0x5917;
const VAL_STREAM: u64 = 0x7a1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 8,
            patience: 10,
            max_epochs: 200,
            seed: 0,
            train_fraction: 0.6,
            val_fraction: 0.2,
        }
    }
}

/// Record indices of the train / validation / test partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of the usable (non-failed) records, cut by fractions.
pub fn split_indices(records: &[DatasetRecord], seed: u64, train_fraction: f64, val_fraction: f64) -> Split {
    let mut idx: Vec<usize> = (0..records.len()).filter(|&i| !records[i].failed).collect();
    idx.shuffle(&mut rng::stream(seed, SPLIT_STREAM));
    let n = idx.len();
    let nt = math::round(n as f64 * train_fraction) as usize;
    let nv = (math::round(n as f64 * val_fraction) as usize).min(n - nt.min(n));
    let test = idx.split_off((nt + nv).min(n));
    let val = idx.split_off(nt.min(n));
    Split { train: idx, val, test }
}

/// One row of the training log; train columns are means over the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub reg_nll: f64,
    pub style: f64,
    pub kl: f64,
    pub total: f64,
    pub val_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best-validation epoch.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub split: Split,
    pub optimizer: Adam,
}

struct Sample {
    x: Tensor,
    c: Vec<f64>,
    targets: Vec<GramSet>,
}

fn prepare(model: &Model, records: &[DatasetRecord], idx: &[usize]) -> Result<Vec<Sample>> {
    idx.iter()
        .map(|&i| {
            let r = &records[i];
            if r.properties.len() != model.config().property_dim {
                return Err(Error::ShapeMismatch(format!(
                    "record {i} has {} properties, model expects {}",
                    r.properties.len(),
                    model.config().property_dim
                )));
            }
            Ok(Sample {
                x: model.input_tensor(&r.grid)?,
                c: model.normalization.normalize(&r.properties),
                targets: model.style_targets(&r.grid)?,
            })
        })
        .collect()
}

fn sample_loss(
    model: &Model,
    s: &Sample,
    scale: f64,
    noise: &mut rng::Rng,
    grads: Option<&mut [Tensor]>,
) -> Result<LossParts> {
    let mut g = Graph::new();
    let (loss, parts) = model.loss_graph(&mut g, &s.x, &s.c, &s.targets, scale, noise)?;
    if let Some(acc) = grads {
        g.backward(loss)?.accumulate_params(&g, acc);
    }
    Ok(parts)
}

fn validation_loss(model: &Model, val: &[Sample], scale: f64, seed: u64) -> Result<f64> {
    let mut sum = 0.0;
    for (i, s) in val.iter().enumerate() {
        let mut noise = rng::stream(rng::mix(seed, VAL_STREAM), i as u64);
        sum += sample_loss(model, s, scale, &mut noise, None)?.total;
    }
    Ok(sum / val.len().max(1) as f64)
}

/// Train with Adam, mini-batches and early stopping on the validation total
/// loss. `on_epoch` observes each log row as it is produced.
pub fn train(
    records: &[DatasetRecord],
    config: ModelConfig,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if tc.batch_size == 0 || tc.max_epochs == 0 {
        return Err(Error::InvalidParameter("batch_size and max_epochs must be positive".into()));
    }
    let split = split_indices(records, tc.seed, tc.train_fraction, tc.val_fraction);
    if split.train.len() < 2 || split.val.is_empty() {
        return Err(Error::Empty(format!(
            "split too small: {} train, {} validation",
            split.train.len(),
            split.val.len()
        )));
    }
    let mut model = Model::new(config)?;
    let rows: Vec<&[f64]> = split.train.iter().map(|&i| records[i].properties.as_slice()).collect();
    model.normalization = Normalization::fit(&rows)?;
    let train_set = prepare(&model, records, &split.train)?;
    let val_set = prepare(&model, records, &split.val)?;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let scale = match model.config().style_scale {
        Some(s) => s,
        None => {
            // unit-scale style term: inverse mean style loss of the first batch at init
            let mut sum = 0.0;
            let first = &order[..tc.batch_size.min(order.len())];
            for &i in first {
                let mut noise = rng::stream(rng::mix(tc.seed, u64::MAX), i as u64);
                sum += sample_loss(&model, &train_set[i], 1.0, &mut noise, None)?.style;
            }
            let mean = sum / first.len() as f64;
            if !(mean > 0.0 && mean.is_finite()) {
                return Err(Error::NonFinite(format!("initial style loss {mean}")));
            }
            1.0 / mean
        }
    };
    model.config_mut().style_scale = Some(scale);

    let mut adam = Adam::new(tc.adam, model.params().tensors());
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params().clone());
    let mut stall = 0;
    for epoch in 1..=tc.max_epochs {
        let epoch_seed = rng::mix(tc.seed, epoch as u64);
        order.shuffle(&mut rng::stream(epoch_seed, SPLIT_STREAM));
        let mut sums = LossParts::default();
        for batch in order.chunks(tc.batch_size) {
            let mut grads = model.params().zeros_like();
            for &i in batch {
                let mut noise = rng::stream(epoch_seed, i as u64);
                let parts = sample_loss(&model, &train_set[i], scale, &mut noise, Some(&mut grads))?;
                sums.add(&parts);
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(inv));
            adam.step(model.params_mut().tensors_mut(), &grads)?;
        }
        let m = sums.scaled(1.0 / train_set.len() as f64);
        let val_total = validation_loss(&model, &val_set, scale, tc.seed)?;
        let row = EpochLog { epoch, reg_nll: m.reg_nll, style: m.style, kl: m.kl, total: m.total, val_total };
        on_epoch(&row);
        log.push(row);
        if val_total < best.0 {
            best = (val_total, epoch, model.params().clone());
            stall = 0;
        } else {
            stall += 1;
            if stall >= tc.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best;
    *model.params_mut() = params;
    Ok(TrainOutcome { model, log, best_epoch, split, optimizer: adam })
}
