use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use strucprop::{checkpoint, dataset, pipeline, report, RunConfig};
use strucprop_core::homogenize::PropertyVector;
use strucprop_core::inference::metrics;

const TINY: &str = "\
shape = 9,9
preset = tiny2d
sigma_levels = 1,3
fields_per_filter = 10
latent_dim = 4
bank_channels = 2,3
max_epochs = 2
patience = 2
lr = 0.003
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_strucprop"));
    c.env_remove("MF_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cfg: PathBuf,
    data: PathBuf,
    run: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cfg = root.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let data = root.join("tiny.mfds");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&data)]);
    let run = root.join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    Fixture { _dir: dir, root, cfg, data, run }
}

#[test]
fn pipeline_end_to_end() {
    let f = fixture();
    let ds = dataset::read(&f.data).unwrap();
    assert_eq!(ds.records.len(), 40);
    assert!(f.root.join("tiny.mfds.manifest.json").exists());
    assert!(f.run.join("train_log.csv").exists());
    let model = f.run.join("model.spck");

    // eval delegates to the metric functions
    let ev = f.root.join("eval");
    ok(&["eval", "--data", s(&f.data), "--model", s(&model), "--out", s(&ev)]);
    let rows = report::read_table(&ev.join("metrics.csv")).unwrap();
    let (rc, m) = checkpoint::load(&model).unwrap();
    let split = pipeline::split(&rc, &ds).unwrap();
    let y: Vec<PropertyVector> =
        split.test.iter().map(|&i| PropertyVector::new(ds.records[i].properties.clone()).unwrap()).collect();
    let y_hat: Vec<PropertyVector> = split
        .test
        .iter()
        .map(|&i| strucprop_core::inference::predict_forward(&m, &ds.records[i].grid).unwrap())
        .collect();
    let direct = metrics(&y, &y_hat).unwrap();
    let vae = rows.iter().find(|r| r["model"] == "vae_reg" && r["property"] == "C11").unwrap();
    assert_eq!(vae["mape"].parse::<f64>().unwrap(), direct.mape);
    assert_eq!(vae["r2"].parse::<f64>().unwrap(), direct.r2);
    assert!(rows.iter().any(|r| r["model"] == "vrh"));

    // one inverse row per kept component
    let inv = f.root.join("inv");
    ok(&["invert", "--model", s(&model), "--target", "30", "--out", s(&inv)]);
    let rows = report::read_table(&inv.join("inverse.csv")).unwrap();
    let kept =
        strucprop_core::inference::inverse_infer(&m, &PropertyVector::new(vec![30.0]).unwrap(), &rc.inverse().unwrap())
            .unwrap();
    assert_eq!(rows.len(), kept.len());
    assert!(rows.iter().all(|r| r["target_C11"] == "30"));

    let opt = f.root.join("opt");
    ok(&[
        "optimize",
        "--model",
        s(&model),
        "--target",
        "30",
        "--sa_random_starts",
        "2",
        "--sa_iters_random",
        "5",
        "--sa_iters_warm",
        "3",
        "--out",
        s(&opt),
    ]);
    assert!(opt.join("compare_trajectory.csv").exists());

    let inf = f.root.join("infer");
    ok(&["infer", "--data", s(&f.data), "--model", s(&model), "--count", "5", "--out", s(&inf)]);
    assert_eq!(report::read_table(&inf.join("reconstruction.csv")).unwrap().len(), 5);

    let rep = f.root.join("report");
    let out = ok(&["report", "--runs", s(&ev), s(&inv), s(&opt), "--out", s(&rep)]);
    assert!(out.contains("forward_table.csv"));
    for t in ["forward_table.csv", "inverse_table.csv", "efficiency_table.csv"] {
        assert!(rep.join(t).exists(), "{t}");
    }
}

#[test]
fn reruns_are_identical() {
    let a = fixture();
    let b = fixture();
    assert_eq!(std::fs::read(&a.data).unwrap(), std::fs::read(&b.data).unwrap());
    assert_eq!(std::fs::read(a.run.join("model.spck")).unwrap(), std::fs::read(b.run.join("model.spck")).unwrap());
    assert_eq!(
        std::fs::read(a.run.join("train_log.csv")).unwrap(),
        std::fs::read(b.run.join("train_log.csv")).unwrap()
    );
}

#[test]
fn seed_overrides() {
    let f = fixture();
    let env = f.root.join("env.mfds");
    let o = bin().env("MF_SEED", "9").args(["gen-data", "--config", s(&f.cfg), "--out", s(&env)]).output().unwrap();
    assert!(o.status.success());
    let flag = f.root.join("flag.mfds");
    ok(&["gen-data", "--config", s(&f.cfg), "--seed", "9", "--out", s(&flag)]);
    let env_bytes = std::fs::read(&env).unwrap();
    assert_eq!(env_bytes, std::fs::read(&flag).unwrap());
    assert_ne!(env_bytes, std::fs::read(&f.data).unwrap());
}

#[test]
fn exit_codes() {
    let f = fixture();
    let code = |args: &[&str]| run(args).status.code().unwrap();
    let bad = f.root.join("bad.cfg");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    let out = f.root.join("x.mfds");
    assert_eq!(code(&["gen-data", "--config", s(&bad), "--out", s(&out)]), 2);
    assert_eq!(code(&["gen-data", "--bogus-flag", "1", "--out", s(&out)]), 2);
    assert_eq!(code(&["gen-data", "--config", s(&f.cfg), "--u_min", "0.9", "--u_max", "0.1", "--out", s(&out)]), 2);
    assert_eq!(
        code(&["train", "--config", s(&f.cfg), "--data", s(&f.root.join("missing.mfds")), "--out", s(&f.root)]),
        3
    );
    // dataset shape does not match the config
    let other = f.root.join("other.cfg");
    std::fs::write(&other, TINY.replace("9,9", "17,17,17").replace("tiny2d", "desk3d")).unwrap();
    assert_eq!(code(&["train", "--config", s(&other), "--data", s(&f.data), "--out", s(&f.root)]), 3);
    // model keys are frozen by the checkpoint
    let model = f.run.join("model.spck");
    assert_eq!(code(&["invert", "--model", s(&model), "--k", "3", "--target", "30", "--out", s(&f.root)]), 2);
    assert_eq!(code(&["invert", "--model", s(&model), "--out", s(&f.root)]), 2);
}

#[test]
fn config_file_and_flags_compose() {
    let mut rc = RunConfig::default();
    rc.apply_str(TINY).unwrap();
    rc.validate().unwrap();
    assert_eq!(rc.generation().unwrap().record_count(), 40);
    let help = ok(&["gen-data", "--help"]);
    for key in ["--sigma_set", "--w_kl", "--sa_alpha"] {
        assert!(help.contains(key), "{key}");
    }
}
