//! CSV artifacts. Column orders are fixed and documented in `docs/formats.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use strucprop_core::homogenize::PropertyMode;
use strucprop_core::inference::MetricsReport;
use strucprop_core::latentopt::{ComparisonReport, Strategy};
use strucprop_core::vaereg::EpochLog;

use crate::error::{Error, Result};
use crate::pipeline::{Evaluation, Inversion, Reconstruction};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn labels(p: usize) -> Result<&'static [&'static str]> {
    Ok(PropertyMode::from_dim(p)?.labels())
}

pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "reg_nll", "style", "kl", "total", "val_total"])?;
    for r in log {
        w.write_record([r.epoch.to_string(), num(r.reg_nll), num(r.style), num(r.kl), num(r.total), num(r.val_total)])?;
    }
    w.flush()?;
    Ok(())
}

fn metric_rows(w: &mut csv::Writer<std::fs::File>, model: &str, m: &MetricsReport) -> Result<()> {
    let names = labels(m.per_property.len())?;
    for (name, p) in names.iter().zip(&m.per_property) {
        w.write_record([model, name, &num(p.mape), &num(p.r2), &num(p.y_bar), &m.n.to_string()])?;
    }
    w.write_record([model, "mean", &num(m.mape), &num(m.r2), "", &m.n.to_string()])?;
    Ok(())
}

/// `metrics.csv`: model, property, mape, r2, y_bar, n.
pub fn write_metrics(path: &Path, e: &Evaluation) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "property", "mape", "r2", "y_bar", "n"])?;
    metric_rows(&mut w, "vae_reg", &e.vae_reg)?;
    if let Some(m) = &e.vae_lin {
        metric_rows(&mut w, "vae_lin", m)?;
    }
    metric_rows(&mut w, "vrh", &e.vrh)?;
    w.flush()?;
    Ok(())
}

pub fn write_predictions(path: &Path, e: &Evaluation) -> Result<()> {
    let p = e.vae_reg.per_property.len();
    let names = labels(p)?;
    let lin = e.vae_lin.is_some();
    let mut w = writer(path)?;
    let mut head = vec!["index".to_string()];
    for n in names {
        head.push(format!("{n}_true"));
        head.push(format!("{n}_vae_reg"));
        if lin {
            head.push(format!("{n}_vae_lin"));
        }
        head.push(format!("{n}_vrh"));
    }
    w.write_record(&head)?;
    for r in &e.predictions {
        let mut row = vec![r.index.to_string()];
        for j in 0..p {
            row.push(num(r.truth[j]));
            row.push(num(r.vae_reg[j]));
            if let Some(v) = &r.vae_lin {
                row.push(num(v[j]));
            }
            row.push(num(r.vrh[j]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

/// `reconstruction.csv`: one row per test record with volume fractions,
/// latent PCA coordinates, properties and filter sigma.
pub fn write_reconstructions(path: &Path, rows: &[Reconstruction]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["index", "vf_input", "vf_output", "abs_diff", "pc1", "pc2", "properties", "sigma"])?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            num(r.vf_input),
            num(r.vf_output),
            num((r.vf_input - r.vf_output).abs()),
            num(r.pc[0]),
            num(r.pc[1]),
            join(&r.properties),
            join(&r.sigma),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Max over min of the per-axis anisotropy lengths.
pub fn anisotropy_ratio(a: &[f64]) -> f64 {
    let max = a.iter().copied().fold(f64::MIN, f64::max);
    let min = a.iter().copied().fold(f64::MAX, f64::min);
    max / min
}

/// `inverse.csv`: one row per (target, kept mixture component).
pub fn write_inverse(path: &Path, runs: &[Inversion]) -> Result<()> {
    let Some(first) = runs.first() else {
        return Err(Error::Config("no inverse targets given".into()));
    };
    let p = first.solutions[0].target.len();
    let names = labels(p)?;
    let d = first.solutions[0].binarized.shape().ndim();
    let mut w = writer(path)?;
    let mut head: Vec<String> = ["target_id", "component", "weight"].map(String::from).to_vec();
    for prefix in ["target", "achieved", "error"] {
        head.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    head.push("mean_error".into());
    head.push("vf".into());
    head.extend((0..d).map(|a| format!("length_axis{a}")));
    head.push("axis_ratio_0_1".into());
    w.write_record(&head)?;
    for (t, run) in runs.iter().enumerate() {
        for ((s, err), aniso) in run.solutions.iter().zip(&run.report.errors).zip(&run.anisotropy) {
            let mut row = vec![t.to_string(), s.component.to_string(), num(s.weight)];
            row.extend(s.target.values().iter().map(|v| num(*v)));
            let achieved = s.achieved.as_ref().expect("validated solutions");
            row.extend(achieved.values().iter().map(|v| num(*v)));
            row.extend(err.iter().map(|v| num(*v)));
            row.push(num(err.iter().sum::<f64>() / err.len() as f64));
            row.push(num(s.binarized.mean()));
            match aniso {
                Some(a) => {
                    row.extend(a.iter().map(|v| num(*v)));
                    row.push(num(a[0] / a[1]));
                }
                None => row.extend(std::iter::repeat_n(String::new(), d + 1)),
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn strategy(s: Strategy) -> &'static str {
    match s {
        Strategy::Warm => "warm",
        Strategy::Random => "random",
    }
}

/// `compare.csv`, `compare_summary.csv` and `compare_trajectory.csv`.
pub fn write_comparison(dir: &Path, reports: &[ComparisonReport]) -> Result<Vec<PathBuf>> {
    let Some(first) = reports.first() else {
        return Err(Error::Config("no optimization targets given".into()));
    };
    let names = labels(first.target.len())?;
    let paths = ["compare.csv", "compare_summary.csv", "compare_trajectory.csv"].map(|f| dir.join(f));

    let mut w = writer(&paths[0])?;
    let mut head: Vec<String> =
        ["target_id", "strategy", "start", "iterations", "evaluations", "best_objective"].map(String::from).to_vec();
    head.extend(names.iter().map(|n| format!("achieved_{n}")));
    head.push("abs_percent_error".into());
    w.write_record(&head)?;
    for (t, rep) in reports.iter().enumerate() {
        for r in &rep.rows {
            let mut row = vec![
                t.to_string(),
                strategy(r.strategy).into(),
                r.start.to_string(),
                r.iterations.to_string(),
                r.evaluations.to_string(),
                num(r.best_objective),
            ];
            row.extend(r.achieved.values().iter().map(|v| num(*v)));
            row.push(num(r.abs_percent_error));
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut w = writer(&paths[1])?;
    let mut head: Vec<String> = vec!["target_id".into()];
    head.extend(names.iter().map(|n| format!("target_{n}")));
    head.extend(
        [
            "warm_evaluations",
            "warm_best_objective",
            "warm_best_error",
            "random_evaluations_to_match",
            "random_evaluations_total",
            "evaluation_ratio",
            "warm_mean_error",
            "random_mean_error",
        ]
        .map(String::from),
    );
    w.write_record(&head)?;
    for (t, rep) in reports.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(rep.target.values().iter().map(|v| num(*v)));
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        let ratio = rep.random_evaluations_to_match.map(|n| n as f64 / rep.warm_evaluations.max(1) as f64);
        row.push(rep.warm_evaluations.to_string());
        row.push(opt(rep.warm_best_objective));
        row.push(opt(rep.warm_best_error));
        row.push(rep.random_evaluations_to_match.map(|n| n.to_string()).unwrap_or_default());
        row.push(rep.random_evaluations_total.to_string());
        row.push(opt(ratio));
        row.push(opt(rep.mean_error(Strategy::Warm)));
        row.push(opt(rep.mean_error(Strategy::Random)));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = writer(&paths[2])?;
    w.write_record(["target_id", "strategy", "start", "iteration", "objective", "best_so_far", "accepted"])?;
    for (t, rep) in reports.iter().enumerate() {
        for r in &rep.rows {
            for (i, (s, b)) in r.trajectory.steps.iter().zip(&r.trajectory.best_so_far).enumerate() {
                w.write_record([
                    t.to_string(),
                    strategy(r.strategy).into(),
                    r.start.to_string(),
                    i.to_string(),
                    num(s.f),
                    num(*b),
                    u8::from(s.accepted).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(paths.to_vec())
}

/// Rows of a CSV file keyed by header name.
pub fn read_table(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let head: Vec<String> = r.headers()?.iter().map(String::from).collect();
    r.records().map(|rec| Ok(head.iter().cloned().zip(rec?.iter().map(String::from)).collect())).collect()
}

/// Aggregate tables over run directories: `forward_table.csv` (metrics of
/// every model), `inverse_table.csv` (mean inverse error per target) and
/// `efficiency_table.csv` (warm versus random annealing cost). Returns the
/// files written and a plain-text rendering.
pub fn aggregate(runs: &[PathBuf], out: &Path) -> Result<(Vec<PathBuf>, String)> {
    let mut text = String::new();
    let mut written = Vec::new();
    let name =
        |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string());

    let mut forward = Vec::new();
    let mut inverse = Vec::new();
    let mut efficiency = Vec::new();
    for run in runs {
        let metrics = run.join("metrics.csv");
        if metrics.exists() {
            for row in read_table(&metrics)? {
                if row["property"] == "mean" {
                    forward.push([
                        name(run),
                        row["model"].clone(),
                        row["mape"].clone(),
                        row["r2"].clone(),
                        row["n"].clone(),
                    ]);
                }
            }
        }
        let inv = run.join("inverse.csv");
        if inv.exists() {
            let mut by_target: BTreeMap<usize, (f64, usize, String)> = BTreeMap::new();
            for row in read_table(&inv)? {
                let t: usize = row["target_id"].parse().map_err(|_| Error::Data("bad target_id".into()))?;
                let e: f64 = row["mean_error"].parse().map_err(|_| Error::Data("bad mean_error".into()))?;
                let target: Vec<&str> = row
                    .iter()
                    .filter(|(k, _)| k.starts_with("target_") && *k != "target_id")
                    .map(|(_, v)| v.as_str())
                    .collect();
                let slot = by_target.entry(t).or_insert((0.0, 0, target.join(";")));
                slot.0 += e;
                slot.1 += 1;
            }
            for (t, (sum, n, target)) in by_target {
                inverse.push([name(run), t.to_string(), target, n.to_string(), num(sum / n as f64)]);
            }
        }
        let cmp = run.join("compare_summary.csv");
        if cmp.exists() {
            for row in read_table(&cmp)? {
                efficiency.push([
                    name(run),
                    row["target_id"].clone(),
                    row["warm_evaluations"].clone(),
                    row["random_evaluations_to_match"].clone(),
                    row["evaluation_ratio"].clone(),
                    row["warm_mean_error"].clone(),
                    row["random_mean_error"].clone(),
                ]);
            }
        }
    }
    let mut emit = |file: &str, head: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        let path = out.join(file);
        let mut w = writer(&path)?;
        w.write_record(head)?;
        text.push_str(&format!("{file}\n  {}\n", head.join("  ")));
        for r in &rows {
            w.write_record(r)?;
            text.push_str(&format!("  {}\n", r.join("  ")));
        }
        w.flush()?;
        written.push(path);
        Ok(())
    };
    emit("forward_table.csv", &["run", "model", "mape", "r2", "n"], forward.into_iter().map(Vec::from).collect())?;
    emit(
        "inverse_table.csv",
        &["run", "target_id", "target", "solutions", "mean_error"],
        inverse.into_iter().map(Vec::from).collect(),
    )?;
    emit(
        "efficiency_table.csv",
        &[
            "run",
            "target_id",
            "warm_evaluations",
            "random_evaluations_to_match",
            "evaluation_ratio",
            "warm_mean_error",
            "random_mean_error",
        ],
        efficiency.into_iter().map(Vec::from).collect(),
    )?;
    if written.is_empty() {
        return Err(Error::Data("no metrics.csv, inverse.csv or compare_summary.csv found in the given runs".into()));
    }
    Ok((written, text))
}
