use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use serde::Serialize;

use super::{ExperimentOutput, MetricRow, PcaDim, PerCancerRow, ResultTable};
use crate::cohort::Project;
use crate::error::{Error, Result};

/// Positional decimal with 17 significant digits (trailing zeros dropped),
/// which round-trips every `f64`. Non-finite values print as `NA`.
pub fn format_float(v: f64) -> String {
    if !v.is_finite() {
        return "NA".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let mut out = String::with_capacity(digits.len() + 8);
    if negative {
        out.push('-');
    }
    if exp >= 0 {
        let int_len = exp as usize + 1;
        if int_len >= digits.len() {
            out.push_str(&digits);
            out.push_str(&"0".repeat(int_len - digits.len()));
        } else {
            out.push_str(&digits[..int_len]);
            let frac = digits[int_len..].trim_end_matches('0');
            if !frac.is_empty() {
                out.push('.');
                out.push_str(frac);
            }
        }
    } else {
        out.push_str("0.");
        out.push_str(&"0".repeat((-exp - 1) as usize));
        out.push_str(digits.trim_end_matches('0'));
    }
    out
}

fn parse_float(raw: &str) -> std::result::Result<f64, String> {
    if raw == "NA" {
        return Ok(f64::NAN);
    }
    raw.parse().map_err(|_| format!("invalid number {raw:?}"))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn write_table<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn optional(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), format_float)
}

/// Writes `metrics.csv`, `per_cancer.csv`, `per_cancer_summary.csv`,
/// `hazard_ratios.csv`, `km_curves.csv` and, when present, `overfitting.csv`.
pub fn write_outputs(output: &ExperimentOutput, k: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    write_table(
        &dir.join("metrics.csv"),
        &header(&[
            "fold",
            "modality_combo",
            "pca_dim",
            "c_index",
            "mean_auc",
            "ibs",
            "n_comparable",
        ]),
        output.metrics.rows.iter().map(|r| {
            [
                r.fold.to_string(),
                r.modality_combo.clone(),
                r.pca_dim.to_string(),
                format_float(r.c_index),
                format_float(r.mean_auc),
                format_float(r.ibs),
                r.n_comparable.to_string(),
            ]
        }),
    )?;

    write_table(
        &dir.join("per_cancer.csv"),
        &header(&[
            "fold",
            "modality_combo",
            "pca_dim",
            "project",
            "c_index",
            "n",
            "n_events",
        ]),
        output.per_cancer.iter().map(|r| {
            [
                r.fold.to_string(),
                r.modality_combo.clone(),
                r.pca_dim.to_string(),
                r.project.code().to_string(),
                optional(r.eval.c_index),
                r.eval.n.to_string(),
                r.eval.n_events.to_string(),
            ]
        }),
    )?;

    write_table(
        &dir.join("per_cancer_summary.csv"),
        &header(&[
            "modality_combo",
            "pca_dim",
            "project",
            "mean_test_size",
            "mean_events",
            "folds_computable",
            "c_index",
        ]),
        summarize_per_cancer(&output.per_cancer, k)
            .into_iter()
            .map(|s| {
                [
                    s.modality_combo,
                    s.pca_dim.to_string(),
                    s.project.code().to_string(),
                    format_float(s.mean_test_size),
                    format_float(s.mean_events),
                    s.folds_computable.to_string(),
                    optional(s.c_index),
                ]
            }),
    )?;

    let mut hr_header = header(&["pca_dim", "modality_combo", "modality"]);
    hr_header.extend((0..k).map(|f| format!("fold_{f}")));
    hr_header.push("mean".into());
    write_table(
        &dir.join("hazard_ratios.csv"),
        &hr_header,
        output.hazard_ratios.iter().map(|r| {
            let mut row = vec![
                r.pca_dim.to_string(),
                r.modality_combo.clone(),
                r.modality.clone(),
            ];
            row.extend(r.per_fold.iter().map(|&v| format_float(v)));
            row.push(format_float(r.mean()));
            row
        }),
    )?;

    write_table(
        &dir.join("km_curves.csv"),
        &header(&[
            "modality_combo",
            "pca_dim",
            "group",
            "time",
            "mean_survival",
            "std_survival",
        ]),
        output.km_curves.iter().map(|r| {
            [
                r.modality_combo.clone(),
                r.pca_dim.to_string(),
                r.group.to_string(),
                format_float(r.time),
                format_float(r.mean_survival),
                format_float(r.std_survival),
            ]
        }),
    )?;

    if !output.overfitting.is_empty() {
        write_table(
            &dir.join("overfitting.csv"),
            &header(&["fold", "model", "pca_dim", "train_c_index", "test_c_index"]),
            output.overfitting.iter().map(|r| {
                [
                    r.fold.to_string(),
                    r.model.clone(),
                    r.pca_dim.to_string(),
                    format_float(r.train_c_index),
                    format_float(r.test_c_index),
                ]
            }),
        )?;
    }
    Ok(())
}

/// Reads a `metrics.csv` written by [`write_outputs`].
pub fn read_metrics_csv(path: &Path) -> Result<ResultTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let expected = [
        "fold",
        "modality_combo",
        "pca_dim",
        "c_index",
        "mean_auc",
        "ibs",
        "n_comparable",
    ];
    let parse_err = |message: String| Error::Parse {
        file: path.to_path_buf(),
        message,
    };
    if reader.headers()?.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err("unexpected metrics.csv header".into()));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let row = (|| -> std::result::Result<MetricRow, String> {
            Ok(MetricRow {
                fold: field(0).parse().map_err(|_| "invalid fold".to_string())?,
                modality_combo: field(1).to_string(),
                pca_dim: field(2).parse::<PcaDim>().map_err(|e| e.to_string())?,
                c_index: parse_float(field(3))?,
                mean_auc: parse_float(field(4))?,
                ibs: parse_float(field(5))?,
                n_comparable: field(6)
                    .parse()
                    .map_err(|_| "invalid n_comparable".to_string())?,
            })
        })()
        .map_err(|m| parse_err(format!("row {}: {m}", line + 2)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    Ok(ResultTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub modality_combo: String,
    pub pca_dim: PcaDim,
    pub n_folds: usize,
    pub c_index: f64,
    /// Population standard deviation across folds.
    pub c_index_std: f64,
    pub mean_auc: f64,
    pub ibs: f64,
}

pub fn write_summary(rows: &[AggregateRow], path: &Path) -> Result<()> {
    write_table(
        path,
        &header(&[
            "modality_combo",
            "pca_dim",
            "n_folds",
            "c_index",
            "c_index_std",
            "mean_auc",
            "ibs",
        ]),
        rows.iter().map(|r| {
            [
                r.modality_combo.clone(),
                r.pca_dim.to_string(),
                r.n_folds.to_string(),
                format_float(r.c_index),
                format_float(r.c_index_std),
                format_float(r.mean_auc),
                format_float(r.ibs),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerCancerSummary {
    pub modality_combo: String,
    pub pca_dim: PcaDim,
    pub project: Project,
    /// Means over all `k` folds; a fold without the project counts as zero.
    pub mean_test_size: f64,
    pub mean_events: f64,
    pub folds_computable: usize,
    /// Cross-fold mean, reported only when computable in every fold.
    pub c_index: Option<f64>,
}

/// Collapses per-fold rows to one line per combo, dimension and project.
pub fn summarize_per_cancer(rows: &[PerCancerRow], k: usize) -> Vec<PerCancerSummary> {
    let mut order: Vec<(String, PcaDim)> = Vec::new();
    let mut groups: BTreeMap<(String, PcaDim), BTreeMap<Project, Vec<&PerCancerRow>>> =
        BTreeMap::new();
    for row in rows {
        let key = (row.modality_combo.clone(), row.pca_dim);
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.entry(row.project).or_default().push(row);
    }
    let k_f = k.max(1) as f64;
    let mut out = Vec::new();
    for key in order {
        for (project, rows) in &groups[&key] {
            let computable: Vec<f64> = rows.iter().filter_map(|r| r.eval.c_index).collect();
            let c_index =
                (computable.len() == k && k > 0).then(|| computable.iter().sum::<f64>() / k_f);
            out.push(PerCancerSummary {
                modality_combo: key.0.clone(),
                pca_dim: key.1,
                project: *project,
                mean_test_size: rows.iter().map(|r| r.eval.n as f64).sum::<f64>() / k_f,
                mean_events: rows.iter().map(|r| r.eval.n_events as f64).sum::<f64>() / k_f,
                folds_computable: computable.len(),
                c_index,
            });
        }
    }
    out
}
