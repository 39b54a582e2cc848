//! Command-line front end. Every config key is also a `--key value` flag
//! that overrides the config file; `MF_SEED` overrides `seed`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::json;

use crate::config::{RunConfig, KEYS};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::{checkpoint, pipeline, report};

/// Records checked by `infer` when `--count` is not given.
pub const DEFAULT_RECONSTRUCTIONS: usize = 50;

fn key_args(cmd: Command) -> Command {
    let cmd = cmd.arg(Arg::new("config").long("config").value_name("FILE").help("key = value configuration file"));
    let cmd = KEYS.iter().fold(cmd, |c, (k, d, help)| {
        c.arg(Arg::new(*k).long(*k).value_name("VALUE").help(format!("{help} [default: {d}]")).hide_short_help(true))
    });
    cmd.arg(Arg::new("target").long("target").value_name("VALUES").help("alias for --targets"))
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("PATH").required(true).value_parser(clap::value_parser!(PathBuf)).help(help)
}

pub fn command() -> Command {
    Command::new("strucprop")
        .about("Microstructure generation, homogenization and structure-property VAE training")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            key_args(Command::new("gen-data").about("generate and homogenize a dataset (resumable)"))
                .arg(path_arg("out", "dataset file")),
        )
        .subcommand(
            key_args(Command::new("train").about("train a model"))
                .arg(path_arg("data", "dataset file"))
                .arg(path_arg("out", "output directory")),
        )
        .subcommand(
            key_args(Command::new("eval").about("forward-prediction metrics on the test split"))
                .arg(path_arg("data", "dataset file"))
                .arg(path_arg("model", "checkpoint"))
                .arg(
                    Arg::new("baseline")
                        .long("baseline")
                        .value_name("PATH")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("vanilla checkpoint for the latent linear-regression baseline"),
                )
                .arg(path_arg("out", "output directory")),
        )
        .subcommand(
            key_args(Command::new("infer").about("reconstructions and latent projections of test records"))
                .arg(path_arg("data", "dataset file"))
                .arg(path_arg("model", "checkpoint"))
                .arg(
                    Arg::new("count")
                        .long("count")
                        .value_name("N")
                        .value_parser(clap::value_parser!(usize))
                        .help("test records to reconstruct [default: 50]"),
                )
                .arg(path_arg("out", "output directory")),
        )
        .subcommand(
            key_args(Command::new("invert").about("inverse inference for the configured targets"))
                .arg(path_arg("model", "checkpoint"))
                .arg(path_arg("out", "output directory")),
        )
        .subcommand(
            key_args(Command::new("optimize").about("warm- versus random-start annealing in latent space"))
                .arg(path_arg("model", "checkpoint"))
                .arg(path_arg("out", "output directory")),
        )
        .subcommand(
            Command::new("report")
                .about("aggregate run directories into summary tables")
                .arg(
                    Arg::new("runs")
                        .long("runs")
                        .value_name("DIR")
                        .required(true)
                        .num_args(1..)
                        .action(ArgAction::Append)
                        .value_parser(clap::value_parser!(PathBuf)),
                )
                .arg(path_arg("out", "output directory")),
        )
}

/// Layer: `base`, then `--config`, then `MF_SEED`, then flags.
fn resolve(m: &ArgMatches, base: RunConfig) -> Result<RunConfig> {
    let mut rc = base;
    if let Some(p) = m.get_one::<String>("config") {
        rc.apply_file(Path::new(p))?;
    }
    rc.apply_env()?;
    for (k, _, _) in KEYS {
        if let Some(v) = m.get_one::<String>(k) {
            rc.set(k, v)?;
        }
    }
    if let Some(v) = m.get_one::<String>("target") {
        rc.set("targets", v)?;
    }
    rc.validate()?;
    Ok(rc)
}

/// Config for a command that uses a trained checkpoint: model, split and
/// training keys are fixed by the checkpoint.
fn resolve_for_model(m: &ArgMatches, stored: &RunConfig) -> Result<RunConfig> {
    let rc = resolve(m, stored.clone())?;
    let frozen = ["seed", "shape", "property_dim", "train_fraction", "val_fraction"];
    for (k, _, _) in KEYS {
        if rc.get(k) != stored.get(k) && (frozen.contains(k) || rc.model()? != stored.model()?) {
            return Err(Error::Config(format!(
                "{k} = {} differs from the checkpoint ({}); model and split keys cannot change after training",
                rc.get(k),
                stored.get(k)
            )));
        }
    }
    Ok(rc)
}

fn out_dir(m: &ArgMatches) -> Result<PathBuf> {
    let d = m.get_one::<PathBuf>("out").expect("required").clone();
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

fn path(m: &ArgMatches, name: &str) -> PathBuf {
    m.get_one::<PathBuf>(name).expect("required").clone()
}

fn targets(rc: &RunConfig) -> Result<Vec<Vec<f64>>> {
    let t = rc.targets()?;
    if t.is_empty() {
        return Err(Error::Config("no targets: set `targets` or pass --target".into()));
    }
    Ok(t)
}

fn dispatch(matches: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let start = Instant::now();
    let (name, m) = matches.subcommand().expect("subcommand required");
    match name {
        "gen-data" => {
            let rc = resolve(m, RunConfig::default())?;
            let file = path(m, "out");
            if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let s = pipeline::gen_data(&rc, &file, err)?;
            let mut man = Manifest::new(name, &rc);
            man.output(&file)
                .note("records", json!(s.records))
                .note("failed", json!(s.failed))
                .note("resumed_from", json!(s.resumed_from));
            man.write(&manifest_path(&file), start.elapsed())?;
            writeln!(out, "{}: {} records ({} failed)", file.display(), s.records, s.failed)?;
        }
        "train" => {
            let rc = resolve(m, RunConfig::default())?;
            let data = path(m, "data");
            let ds = pipeline::load_dataset(&rc, &data)?;
            let dir = out_dir(m)?;
            let outcome = pipeline::train_model(&rc, &ds, |e| {
                let _ = writeln!(
                    err,
                    "epoch {:>3}  total {:.5}  nll {:.4}  style {:.4}  kl {:.4}  val {:.5}",
                    e.epoch, e.total, e.reg_nll, e.style, e.kl, e.val_total
                );
            })?;
            let ck = dir.join("model.spck");
            checkpoint::save(&ck, &rc, &outcome.model)?;
            let log = dir.join("train_log.csv");
            report::write_train_log(&log, &outcome.log)?;
            let mut man = Manifest::new(name, &rc);
            man.input("data", &data)
                .output(&ck)
                .output(&log)
                .note("epochs", json!(outcome.log.len()))
                .note("best_epoch", json!(outcome.best_epoch))
                .note("style_scale", json!(outcome.model.config().style_scale))
                .note("split", json!({"train": outcome.split.train.len(), "val": outcome.split.val.len(), "test": outcome.split.test.len()}));
            man.write(&dir.join("train.manifest.json"), start.elapsed())?;
            writeln!(out, "{}: best epoch {} of {}", ck.display(), outcome.best_epoch, outcome.log.len())?;
        }
        "eval" => {
            let model_path = path(m, "model");
            let (stored, model) = checkpoint::load(&model_path)?;
            let rc = resolve_for_model(m, &stored)?;
            let data = path(m, "data");
            let ds = pipeline::load_dataset(&rc, &data)?;
            let baseline = m.get_one::<PathBuf>("baseline").map(|p| checkpoint::load(p)).transpose()?;
            if let Some((brc, _)) = &baseline {
                if brc.get("seed") != rc.get("seed")
                    || brc.get("train_fraction") != rc.get("train_fraction")
                    || brc.get("val_fraction") != rc.get("val_fraction")
                {
                    return Err(Error::Config("baseline checkpoint was trained on a different split".into()));
                }
            }
            let e = pipeline::evaluate(&rc, &model, baseline.as_ref().map(|(_, b)| b), &ds)?;
            let dir = out_dir(m)?;
            let (mp, pp) = (dir.join("metrics.csv"), dir.join("predictions.csv"));
            report::write_metrics(&mp, &e)?;
            report::write_predictions(&pp, &e)?;
            let mut man = Manifest::new(name, &rc);
            man.input("data", &data).input("model", &model_path);
            if let Some(p) = m.get_one::<PathBuf>("baseline") {
                man.input("baseline", p);
            }
            man.output(&mp).output(&pp).write(&dir.join("eval.manifest.json"), start.elapsed())?;
            writeln!(out, "vae_reg MAPE {:.3}%  R2 {:.4}", e.vae_reg.mape, e.vae_reg.r2)?;
            if let Some(l) = &e.vae_lin {
                writeln!(out, "vae_lin MAPE {:.3}%  R2 {:.4}", l.mape, l.r2)?;
            }
            writeln!(out, "vrh     MAPE {:.3}%  R2 {:.4}", e.vrh.mape, e.vrh.r2)?;
        }
        "infer" => {
            let model_path = path(m, "model");
            let (stored, model) = checkpoint::load(&model_path)?;
            let rc = resolve_for_model(m, &stored)?;
            let data = path(m, "data");
            let ds = pipeline::load_dataset(&rc, &data)?;
            let count = m.get_one::<usize>("count").copied().unwrap_or(DEFAULT_RECONSTRUCTIONS);
            let rows = pipeline::reconstructions(&rc, &model, &ds, count)?;
            let dir = out_dir(m)?;
            let p = dir.join("reconstruction.csv");
            report::write_reconstructions(&p, &rows)?;
            Manifest::new(name, &rc)
                .input("data", &data)
                .input("model", &model_path)
                .output(&p)
                .write(&dir.join("infer.manifest.json"), start.elapsed())?;
            let close = rows.iter().filter(|r| (r.vf_input - r.vf_output).abs() <= 0.1).count();
            writeln!(out, "{} reconstructions, {} within 0.1 volume fraction", rows.len(), close)?;
        }
        "invert" => {
            let model_path = path(m, "model");
            let (stored, model) = checkpoint::load(&model_path)?;
            let rc = resolve_for_model(m, &stored)?;
            let runs = targets(&rc)?.iter().map(|t| pipeline::invert(&rc, &model, t)).collect::<Result<Vec<_>>>()?;
            let dir = out_dir(m)?;
            let p = dir.join("inverse.csv");
            report::write_inverse(&p, &runs)?;
            Manifest::new(name, &rc)
                .input("model", &model_path)
                .output(&p)
                .write(&dir.join("invert.manifest.json"), start.elapsed())?;
            for (t, r) in runs.iter().enumerate() {
                writeln!(out, "target {t}: {} solutions, mean abs error {:.2}%", r.solutions.len(), r.report.mean)?;
            }
        }
        "optimize" => {
            let model_path = path(m, "model");
            let (stored, model) = checkpoint::load(&model_path)?;
            let rc = resolve_for_model(m, &stored)?;
            let reports =
                targets(&rc)?.iter().map(|t| pipeline::optimize(&rc, &model, t)).collect::<Result<Vec<_>>>()?;
            let dir = out_dir(m)?;
            let files = report::write_comparison(&dir, &reports)?;
            let mut man = Manifest::new(name, &rc);
            man.input("model", &model_path);
            files.iter().for_each(|f| {
                man.output(f);
            });
            man.write(&dir.join("optimize.manifest.json"), start.elapsed())?;
            for (t, r) in reports.iter().enumerate() {
                let matched = r.random_evaluations_to_match.map(|n| n.to_string()).unwrap_or_else(|| "never".into());
                writeln!(out, "target {t}: warm {} evaluations, random matched after {matched}", r.warm_evaluations)?;
            }
        }
        "report" => {
            let runs: Vec<PathBuf> = m.get_many::<PathBuf>("runs").expect("required").cloned().collect();
            let dir = out_dir(m)?;
            let (files, text) = report::aggregate(&runs, &dir)?;
            let mut man = Manifest::new(name, &RunConfig::default());
            runs.iter().for_each(|r| {
                man.input("run", r);
            });
            files.iter().for_each(|f| {
                man.output(f);
            });
            man.write(&dir.join("report.manifest.json"), start.elapsed())?;
            write!(out, "{text}")?;
        }
        _ => unreachable!("unknown subcommand"),
    }
    Ok(())
}

fn manifest_path(file: &Path) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Parse `args` (including the program name) and run the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = if e.use_stderr() { write!(err, "{}", e.render()) } else { write!(out, "{}", e.render()) };
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(&matches, out, err) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
