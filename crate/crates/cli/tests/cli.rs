use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
seeds = [0, 1, 2]
out_dir = "out"

[stream]
kind = "synthetic"
[stream.spec]
d_in = 8
latent_dim = 4
classes = 6
tasks = 3
clusters_per_class = 1
separation = 1.5
cluster_spread = 0.3
input_noise = 0.05
n_train = 20
n_test = 10
pretrain_classes = 6
pretrain_separation = 1.5
pretrain_mean_shift = 0.0
pretrain_n_train = 20
world_seed = 1

[model]
layers = [16, 8]
[model.pretrain.sgd]
epochs = 3
[sgd]
epochs = 2
[align]
samples_per_class = 16
epochs = 2
"#;

fn setup(modes: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, format!("modes = {modes}\n{TINY}")).unwrap();
    (dir, path)
}

fn slca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slca")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn three_seeds_give_three_reports_and_one_aggregate() {
    let (dir, cfg) = setup(r#"["sl"]"#);
    let out = slca(&["run", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mode = dir.path().join("out/sl");
    for seed in 0..3 {
        assert!(mode.join(format!("seed{seed}/report.json")).is_file());
        assert!(mode.join(format!("seed{seed}/matrix.csv")).is_file());
    }
    let aggs: Vec<_> = fs::read_dir(dir.path().join("out"))
        .unwrap()
        .flat_map(|e| fs::read_dir(e.unwrap().path()).into_iter().flatten())
        .filter(|e| e.as_ref().unwrap().file_name() == "aggregate.json")
        .collect();
    assert_eq!(aggs.len(), 1);
    let table = fs::read_to_string(dir.path().join("out/summary.txt")).unwrap();
    assert!(table.contains("Last-Acc (%)") && table.contains("Inc-Acc (%)") && table.contains(" ± "));
}

#[test]
fn rerun_is_byte_identical() {
    let (dir, cfg) = setup(r#"["sl+ca+ln"]"#);
    assert!(slca(&["run", s(&cfg)]).status.success());
    let report = dir.path().join("out/sl_ca_ln/seed1/report.json");
    let first = fs::read(&report).unwrap();
    let agg_first = fs::read(dir.path().join("out/sl_ca_ln/aggregate.json")).unwrap();
    assert!(slca(&["run", s(&cfg)]).status.success());
    assert_eq!(fs::read(&report).unwrap(), first);
    assert_eq!(fs::read(dir.path().join("out/sl_ca_ln/aggregate.json")).unwrap(), agg_first);
}

#[test]
fn ablation_sweep_emits_one_aggregate_per_mode() {
    let modes = r#"["seqft", "sl", "sl+ca", "sl+ca+ln", "sl+sce+ca+ln", "hybrid+sce+ca+ln"]"#;
    let (dir, cfg) = setup(modes);
    let out = slca(&["run", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for slug in ["seqft", "sl", "sl_ca", "sl_ca_ln", "sl_sce_ca_ln", "hybrid_sce_ca_ln"] {
        assert!(dir.path().join("out").join(slug).join("aggregate.json").is_file(), "{slug}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 7);
}

#[test]
fn invalid_config_fails_before_any_output() {
    let (dir, cfg) = setup(r#"["sl"]"#);
    let text = fs::read_to_string(&cfg).unwrap().replace("[align]", "[align]\nlr = -0.5");
    fs::write(&cfg, text).unwrap();
    let out = slca(&["run", s(&cfg)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("align"), "{err}");
    assert!(!dir.path().join("out").exists());

    let (dir, cfg) = setup(r#"["sl"]"#);
    let text = fs::read_to_string(&cfg).unwrap().replace("[sgd]", "[sgd]\nepoch = 4");
    fs::write(&cfg, text).unwrap();
    let out = slca(&["run", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn probe_and_cka_commands() {
    let (dir, cfg) = setup(r#"["sl"]"#);
    assert!(slca(&["run", s(&cfg)]).status.success());
    let ck = dir.path().join("out/sl/seed0/checkpoints");
    let stages: Vec<PathBuf> = (0..3).map(|t| ck.join(format!("stage{t:02}.json"))).collect();

    let probe = dir.path().join("out/probe.csv");
    let mut args = vec!["probe", "--config", s(&cfg), "--out", s(&probe)];
    args.extend(stages.iter().map(|p| s(p)));
    assert!(slca(&args).status.success());
    let text = fs::read_to_string(&probe).unwrap();
    assert_eq!(text.lines().count(), 4);
    for line in text.lines().skip(1) {
        let acc: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let cka = dir.path().join("out/cka.csv");
    assert!(slca(&["cka", "--config", s(&cfg), "--out", s(&cka), s(&stages[2])]).status.success());
    let text = fs::read_to_string(&cka).unwrap();
    let v: f64 = text.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((v - 1.0).abs() < 1e-9);
}

#[test]
fn missing_checkpoint_leaves_no_file() {
    let (dir, cfg) = setup(r#"["sl"]"#);
    let missing = dir.path().join("nope.json");
    for cmd in ["probe", "cka"] {
        let target = dir.path().join(format!("{cmd}.csv"));
        let out = slca(&[cmd, "--config", s(&cfg), "--out", s(&target), s(&missing)]);
        assert!(!out.status.success());
        assert!(!target.exists());
        assert!(!target.with_extension("tmp").exists());
    }
}

#[test]
fn report_refuses_tampered_aggregate() {
    let (dir, cfg) = setup(r#"["sl"]"#);
    assert!(slca(&["run", s(&cfg)]).status.success());
    let agg = dir.path().join("out/sl/aggregate.json");
    let out = slca(&["report", s(&agg)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("sl "));

    let text = fs::read_to_string(&agg).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["config_digest"] = serde_json::Value::String("0".repeat(64));
    let forged = dir.path().join("forged.json");
    fs::write(&forged, v.to_string()).unwrap();
    assert!(!slca(&["report", s(&forged)]).status.success());
}

#[test]
fn inputs_are_untouched_and_outputs_stay_in_out_dir() {
    let (dir, cfg) = setup(r#"["sl+ca"]"#);
    let before = fs::read(&cfg).unwrap();
    assert!(slca(&["run", s(&cfg)]).status.success());
    assert_eq!(fs::read(&cfg).unwrap(), before);
    let mut top: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, ["exp.toml", "out"]);
}
