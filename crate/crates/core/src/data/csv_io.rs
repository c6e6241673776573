//! CSV ingestion and export.
//!
//! Schema: a header row `label,domain,x0,x1,...` (the `domain` column is
//! optional) followed by one sample per row. Labels and domains are
//! non-negative integers; features are decimal reals with `.` as the decimal
//! point and no thousands separators. UTF-8.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn load_csv(path: &Path, split: Split) -> Result<Dataset> {
    let file = File::open(path)?;
    read_csv(file, split)
}

pub fn read_csv<R: std::io::Read>(reader: R, split: Split) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        None => return Err(Error::contract("empty CSV file")),
        Some(h) => h.map_err(|e| parse_err(1, e.to_string()))?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.first() != Some(&"label") {
        return Err(parse_err(1, "first column must be `label`"));
    }
    let has_domain = names.get(1) == Some(&"domain");
    let first_feature = if has_domain { 2 } else { 1 };
    let width = names.len() - first_feature;
    if width == 0 {
        return Err(parse_err(1, "no feature columns"));
    }
    for (j, name) in names[first_feature..].iter().enumerate() {
        if *name != format!("x{j}") {
            return Err(parse_err(1, format!("expected column `x{j}`, found `{name}`")));
        }
    }

    let mut labels = Vec::new();
    let mut domains = Vec::new();
    let mut data = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != names.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", names.len(), rec.len()),
            ));
        }
        let label: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("invalid label `{}`", &rec[0])))?;
        labels.push(label);
        if has_domain {
            let d: usize = rec[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("invalid domain `{}`", &rec[1])))?;
            domains.push(d);
        }
        for (j, cell) in rec.iter().skip(first_feature).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric value `{cell}` in x{j}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value in x{j}")));
            }
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::contract("CSV file has a header but no rows"));
    }
    let inputs = Tensor::from_matrix(labels.len(), width, data)?;
    Dataset::new(inputs, labels, has_domain.then_some(domains), split)
}

/// Writes a dataset in the ingestion schema; floats use shortest round-trip
/// formatting so a reload is exact.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    let mut header = vec!["label".to_string()];
    if ds.domains.is_some() {
        header.push("domain".into());
    }
    header.extend((0..ds.input_dim()).map(|j| format!("x{j}")));
    writeln!(f, "{}", header.join(","))?;
    for i in 0..ds.len() {
        let mut row = vec![ds.labels[i].to_string()];
        if let Some(d) = &ds.domains {
            row.push(d[i].to_string());
        }
        row.extend(ds.inputs.row(i).iter().map(|v| format!("{v:?}")));
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}
