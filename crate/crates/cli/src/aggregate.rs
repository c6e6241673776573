use std::collections::BTreeSet;
use std::fmt::Write as _;

use anyhow::{ensure, Result};
use serde::{Deserialize, Serialize};
use slca_core::eval::RunReport;

use crate::config::fingerprint;

/// Per-mode summary over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub fingerprints: Vec<String>,
    pub last_acc: Vec<f64>,
    pub inc_acc: Vec<f64>,
    pub last_mean: f64,
    pub last_std: f64,
    pub inc_mean: f64,
    pub inc_std: f64,
}

/// Sample mean and standard deviation; the deviation of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Combines complete per-seed reports of one configuration. Reports whose
/// fingerprint does not match `digest` and their seed are refused.
pub fn aggregate(digest: &str, reports: &[RunReport]) -> Result<Aggregate> {
    ensure!(!reports.is_empty(), "nothing to aggregate");
    let method = &reports[0].method;
    let mut seen = BTreeSet::new();
    for r in reports {
        ensure!(&r.method == method, "mixed methods: `{}` and `{method}`", r.method);
        ensure!(
            r.fingerprint == fingerprint(digest, r.seed),
            "report for seed {} has fingerprint {} from a different configuration",
            r.seed,
            r.fingerprint
        );
        ensure!(r.is_complete(), "report for seed {} is partial", r.seed);
        ensure!(seen.insert(r.seed), "seed {} appears twice", r.seed);
        r.check_consistency()?;
    }
    let last: Vec<f64> = reports.iter().map(|r| r.last_acc).collect();
    let inc: Vec<f64> = reports.iter().map(|r| r.inc_acc).collect();
    let (last_mean, last_std) = mean_std(&last);
    let (inc_mean, inc_std) = mean_std(&inc);
    Ok(Aggregate {
        method: method.clone(),
        config_digest: digest.to_string(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        fingerprints: reports.iter().map(|r| r.fingerprint.clone()).collect(),
        last_acc: last,
        inc_acc: inc,
        last_mean,
        last_std,
        inc_mean,
        inc_std,
    })
}

/// Plain-text table with Last-Acc and Inc-Acc columns in percent.
pub fn table(aggs: &[Aggregate]) -> String {
    let w = aggs.iter().map(|a| a.method.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<w$}  {:>15}  {:>15}  seeds", "Method", "Last-Acc (%)", "Inc-Acc (%)");
    for a in aggs {
        let cell = |m: f64, s: f64| format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s);
        let _ = writeln!(
            out,
            "{:<w$}  {:>15}  {:>15}  {}",
            a.method,
            cell(a.last_mean, a.last_std),
            cell(a.inc_mean, a.inc_std),
            a.seeds.len()
        );
    }
    out
}
