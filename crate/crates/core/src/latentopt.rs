//! Simulated annealing over latent codes, for comparing random starts with
//! starts at inverse-inferred points.

use alloc::format;
use alloc::vec::Vec;

use crate::homogenize::{effective_stiffness, PhaseSpec, PropertyMode, PropertyVector, SolverOptions};
use crate::inference::{inverse_infer, InverseOptions};
use crate::vaereg::Model;
use crate::{math, rng, Error, Result};

/// Geometric-cooling Metropolis schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    /// Initial temperature; `None` uses the objective at the start point.
    pub t0: Option<f64>,
    pub alpha: f64,
    pub step_sigma: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule { t0: None, alpha: 0.97, step_sigma: 0.25, max_iter: 200, seed: 0 }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        let t_ok = self.t0.is_none_or(|t| t > 0.0);
        if !(t_ok && self.alpha > 0.0 && self.alpha < 1.0 && self.step_sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid annealing schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub z: Vec<f64>,
    pub f: f64,
    pub accepted: bool,
}

/// Full record of one search. `steps[0]` is the start point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Best objective seen after each evaluation.
    pub best_so_far: Vec<f64>,
    pub best_z: Vec<f64>,
    pub best_f: f64,
}

impl Trajectory {
    pub fn evaluations(&self) -> usize {
        self.steps.len()
    }
}

fn finite(f: f64) -> Result<f64> {
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::NonFinite("annealing objective".into()))
    }
}

/// Metropolis search: propose `z + N(0, s^2 I)`, accept downhill moves and
/// uphill moves with probability `exp(-df / T_k)`, `T_k = T0 alpha^k`.
pub fn sa_search<F>(mut objective: F, z0: &[f64], schedule: &AnnealSchedule) -> Result<Trajectory>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    schedule.validate()?;
    let mut r = rng::stream(schedule.seed, 0x5a);
    let mut z = z0.to_vec();
    let mut f = finite(objective(&z)?)?;
    let t0 = match schedule.t0 {
        Some(t) => t,
        None if f > 0.0 => f,
        None => 1e-12,
    };
    let mut steps = Vec::with_capacity(schedule.max_iter + 1);
    steps.push(Step { z: z.clone(), f, accepted: true });
    let mut best_so_far = Vec::with_capacity(schedule.max_iter + 1);
    best_so_far.push(f);
    let (mut best_z, mut best_f) = (z.clone(), f);
    let mut t = t0;
    for _ in 0..schedule.max_iter {
        let cand: Vec<f64> = z.iter().map(|v| v + schedule.step_sigma * rng::normal(&mut r)).collect();
        let fc = finite(objective(&cand)?)?;
        let u = rng::uniform(&mut r);
        let df = fc - f;
        let accepted = df < 0.0 || (t > 0.0 && u < math::exp(-df / t));
        if accepted {
            z = cand;
            f = fc;
            if f < best_f {
                best_f = f;
                best_z = z.clone();
            }
        }
        steps.push(Step { z: z.clone(), f: if accepted { f } else { fc }, accepted });
        best_so_far.push(best_f);
        t *= schedule.alpha;
    }
    Ok(Trajectory { steps, best_so_far, best_z, best_f })
}

/// Squared distance, in normalized property units, between the forward
/// prediction of the binarized decode of `z` and the target.
pub struct LatentObjective<'a> {
    model: &'a Model,
    target: Vec<f64>,
    threshold: f64,
}

impl<'a> LatentObjective<'a> {
    pub fn new(model: &'a Model, target: &PropertyVector, threshold: f64) -> Self {
        LatentObjective { model, target: model.normalization.normalize(target.values()), threshold }
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        let grid = self.model.decode(z)?.binarize(self.threshold);
        let (_, qc) = self.model.encode(&grid)?;
        Ok(qc.mu.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Random,
    Warm,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Warm => "warm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub start: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub best_objective: f64,
    pub achieved: PropertyVector,
    /// Mean absolute percent error over properties.
    pub abs_percent_error: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub target: PropertyVector,
    pub rows: Vec<ComparisonRow>,
    /// Lowest objective reached by any warm-start search.
    pub warm_best_objective: Option<f64>,
    /// Lowest oracle-validated error of any warm-start search.
    pub warm_best_error: Option<f64>,
    pub warm_evaluations: usize,
    /// Evaluations the random searches, run one after another, needed before
    /// a best-so-far point validated to within `warm_best_error`; `None` if
    /// never.
    pub random_evaluations_to_match: Option<usize>,
    pub random_evaluations_total: usize,
}

impl ComparisonReport {
    pub fn mean_error(&self, strategy: Strategy) -> Option<f64> {
        let e: Vec<f64> = self.rows.iter().filter(|r| r.strategy == strategy).map(|r| r.abs_percent_error).collect();
        (!e.is_empty()).then(|| e.iter().sum::<f64>() / e.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub n_random: usize,
    pub iters_random: usize,
    pub iters_warm: usize,
    pub schedule: AnnealSchedule,
    pub inverse: InverseOptions,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            n_random: 5,
            iters_random: 200,
            iters_warm: 10,
            schedule: AnnealSchedule::default(),
            inverse: InverseOptions::default(),
        }
    }
}

/// Random multi-start versus warm-start annealing for one target; every
/// best point is validated with the homogenization oracle.
pub fn compare_starts(
    model: &Model,
    target: &PropertyVector,
    opts: &CompareOptions,
    hard: &PhaseSpec,
    soft: &PhaseSpec,
    solver: &SolverOptions,
) -> Result<ComparisonReport> {
    let obj = LatentObjective::new(model, target, opts.inverse.binarize_threshold);
    let mode = PropertyMode::from_dim(target.len())?;
    let d = model.config().latent_dim;
    // oracle check of a latent point: achieved properties and mean abs % error
    let validate = |z: &[f64]| -> Result<(PropertyVector, f64)> {
        let grid = model.decode(z)?.binarize(opts.inverse.binarize_threshold);
        let achieved = effective_stiffness(&grid, hard, soft, mode, solver)?;
        let err =
            achieved.values().iter().zip(target.values()).map(|(a, t)| 100.0 * (a - t).abs() / t.abs()).sum::<f64>()
                / target.len() as f64;
        Ok((achieved, err))
    };
    let mut rows = Vec::new();
    let mut row = |strategy, start, iterations, traj: Trajectory| -> Result<()> {
        let (achieved, err) = validate(&traj.best_z)?;
        rows.push(ComparisonRow {
            strategy,
            start,
            iterations,
            evaluations: traj.evaluations(),
            best_objective: traj.best_f,
            achieved,
            abs_percent_error: err,
            trajectory: traj,
        });
        Ok(())
    };
    let warm = inverse_infer(model, target, &opts.inverse)?;
    for (i, s) in warm.iter().enumerate() {
        let sched = AnnealSchedule {
            max_iter: opts.iters_warm,
            seed: rng::mix(opts.schedule.seed, 1000 + i as u64),
            ..opts.schedule
        };
        row(Strategy::Warm, i, opts.iters_warm, sa_search(|z| obj.eval(z), &s.z, &sched)?)?;
    }
    let mut start_rng = rng::stream(opts.schedule.seed, 0x57a27);
    for i in 0..opts.n_random {
        let z0 = rng::normal_vec(&mut start_rng, d);
        let sched = AnnealSchedule {
            max_iter: opts.iters_random,
            seed: rng::mix(opts.schedule.seed, i as u64),
            ..opts.schedule
        };
        row(Strategy::Random, i, opts.iters_random, sa_search(|z| obj.eval(z), &z0, &sched)?)?;
    }
    let warm_rows = rows.iter().filter(|r| r.strategy == Strategy::Warm);
    let warm_best_objective = warm_rows.clone().map(|r| r.best_objective).reduce(f64::min);
    let warm_best_error = warm_rows.clone().map(|r| r.abs_percent_error).reduce(f64::min);
    let warm_evaluations = warm_rows.map(|r| r.evaluations).sum();
    let mut random_evaluations_to_match = None;
    let mut offset = 0;
    for r in rows.iter().filter(|r| r.strategy == Strategy::Random) {
        if let (None, Some(goal)) = (random_evaluations_to_match, warm_best_error) {
            // validate each new best point of this search in order
            let mut best = f64::INFINITY;
            for (k, step) in r.trajectory.steps.iter().enumerate() {
                if step.f < best {
                    best = step.f;
                    if validate(&step.z)?.1 <= goal {
                        random_evaluations_to_match = Some(offset + k + 1);
                        break;
                    }
                }
            }
        }
        offset += r.evaluations;
    }
    Ok(ComparisonReport {
        target: target.clone(),
        rows,
        warm_best_objective,
        warm_best_error,
        warm_evaluations,
        random_evaluations_to_match,
        random_evaluations_total: offset,
    })
}
