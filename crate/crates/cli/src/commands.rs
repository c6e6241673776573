use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use slca_core::data::Dataset;
use slca_core::engine::{pretrain_backbone, run_sequence, Method};
use slca_core::eval::{cka, linear_probe, ProbeConfig, RunReport};
use slca_core::nn::{init_seed, Checkpoint, Model};
use slca_core::numcore::{RngState, Tensor};

use crate::aggregate::{aggregate, table, Aggregate};
use crate::config::{check_mode_fits, fingerprint, mode_slug, LoadedConfig};

/// Writes through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn seed_dir(out: &Path, mode: &Method, seed: u64) -> PathBuf {
    out.join(mode_slug(mode)).join(format!("seed{seed}"))
}

/// Runs every mode for every seed and writes reports, aggregates and the
/// summary table under the output directory.
pub fn cmd_run(cfg: &LoadedConfig) -> Result<Vec<Aggregate>> {
    let c = &cfg.config;
    let out = cfg.out_dir();
    let run_cfg = c.run_config();
    let mut reports: BTreeMap<usize, Vec<RunReport>> = BTreeMap::new();
    for &seed in &c.seeds {
        let data = cfg.seed_data(seed)?;
        for m in &c.modes {
            check_mode_fits(m, &data.stream)?;
        }
        let mut sizes = vec![data.pretrain_train.input_dim()];
        sizes.extend(&c.model.layers);
        let mut pretrained = Model::build(&sizes, c.model.activation, init_seed(seed))?;
        pretrain_backbone(&mut pretrained, &data.pretrain_train, &c.model.pretrain, RngState::new(seed).derive("pretrain"))?;
        if c.checkpoints {
            let path = out.join("pretrained").join(format!("seed{seed}.json"));
            write_atomic(&path, &Checkpoint::new(&pretrained, None).to_json()?)?;
        }

        for (i, m) in c.modes.iter().enumerate() {
            let fp = fingerprint(&c.digest(m)?, seed);
            let dir = seed_dir(&out, m, seed);
            fs::create_dir_all(&dir)?;
            let ckpt_dir = dir.join("checkpoints");
            let save = c.checkpoints;
            let mut hook = |t: usize, model: &Model| -> slca_core::error::Result<()> {
                if save {
                    fs::create_dir_all(&ckpt_dir)?;
                    Checkpoint::new(model, None).save(&ckpt_dir.join(format!("stage{t:02}.json")))?;
                }
                Ok(())
            };
            let outcome = run_sequence(&pretrained, &data.stream, m, &run_cfg, seed, &fp, Some(&mut hook))?;
            let report = outcome.report;
            write_atomic(&dir.join("report.json"), &report.to_json()?)?;
            write_atomic(&dir.join("matrix.csv"), &report.matrix_csv())?;
            if m.ca {
                write_atomic(&dir.join("stats.json"), &outcome.store.to_json()?)?;
            }
            if let Some(f) = &report.failure {
                bail!("mode `{m}` seed {seed} failed: {f} (partial report in {})", dir.display());
            }
            ensure!(outcome.purity_ok, "mode `{m}` seed {seed}: alignment touched the backbone");
            reports.entry(i).or_default().push(report);
        }
    }

    let mut aggs = Vec::new();
    for (i, m) in c.modes.iter().enumerate() {
        let agg = aggregate(&c.digest(m)?, &reports[&i])?;
        write_atomic(&out.join(mode_slug(m)).join("aggregate.json"), &serde_json::to_string_pretty(&agg)?)?;
        aggs.push(agg);
    }
    write_atomic(&out.join("summary.txt"), &table(&aggs))?;
    Ok(aggs)
}

fn load_checkpoints(paths: &[PathBuf]) -> Result<Vec<Model>> {
    ensure!(!paths.is_empty(), "no checkpoints given");
    paths
        .iter()
        .map(|p| {
            ensure!(p.is_file(), "checkpoint {} not found", p.display());
            Ok(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?.model)
        })
        .collect()
}

/// Linear-probe accuracy of checkpoint `i` on the classes of tasks `0..=i`.
pub fn cmd_probe(cfg: &LoadedConfig, seed: u64, checkpoints: &[PathBuf], out: &Path) -> Result<Vec<f64>> {
    let models = load_checkpoints(checkpoints)?;
    let stream = cfg.seed_data(seed)?.stream;
    ensure!(
        models.len() <= stream.len(),
        "{} checkpoints for a {}-task stream",
        models.len(),
        stream.len()
    );
    let mut csv = String::from("stage,checkpoint,probe_acc\n");
    let mut accs = Vec::new();
    for (i, (model, path)) in models.iter().zip(checkpoints).enumerate() {
        let seen = &stream.tasks[..=i];
        let train = Dataset::concat(&seen.iter().map(|t| &t.train).collect::<Vec<_>>())?;
        let test = Dataset::concat(&seen.iter().map(|t| &t.test).collect::<Vec<_>>())?;
        ensure!(
            model.input_dim() == train.input_dim(),
            "checkpoint {} expects width {}, data has {}",
            path.display(),
            model.input_dim(),
            train.input_dim()
        );
        let acc = linear_probe(model, &train, &test, &ProbeConfig::default(), RngState::new(seed).derive("probe"))?;
        let _ = writeln!(csv, "{i},{},{acc:?}", path.display());
        accs.push(acc);
    }
    write_atomic(out, &csv)?;
    Ok(accs)
}

/// Linear CKA between the features of every checkpoint pair on the test
/// inputs of all tasks.
pub fn cmd_cka(cfg: &LoadedConfig, seed: u64, checkpoints: &[PathBuf], out: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let models = load_checkpoints(checkpoints)?;
    let stream = cfg.seed_data(seed)?.stream;
    let x = Tensor::vstack(&stream.tasks.iter().map(|t| t.test.inputs.clone()).collect::<Vec<_>>())?;
    let feats = models
        .iter()
        .zip(checkpoints)
        .map(|(m, p)| {
            ensure!(
                m.input_dim() == x.cols(),
                "checkpoint {} expects width {}, data has {}",
                p.display(),
                m.input_dim(),
                x.cols()
            );
            Ok(m.forward_features(&x)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("a,b,cka\n");
    let mut rows = Vec::new();
    for i in 0..feats.len() {
        for j in i..feats.len() {
            let v = cka(&feats[i], &feats[j])?;
            let _ = writeln!(csv, "{},{},{v:?}", checkpoints[i].display(), checkpoints[j].display());
            rows.push((i, j, v));
        }
    }
    write_atomic(out, &csv)?;
    Ok(rows)
}

pub fn cmd_report(paths: &[PathBuf]) -> Result<String> {
    ensure!(!paths.is_empty(), "no aggregate files given");
    let aggs = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let a: Aggregate = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            for (s, f) in a.seeds.iter().zip(&a.fingerprints) {
                ensure!(*f == fingerprint(&a.config_digest, *s), "{}: fingerprint of seed {s} does not match", p.display());
            }
            Ok(a)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(table(&aggs))
}
