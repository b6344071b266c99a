//! CSV output of a sweep and recomputation of its summary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Technique;
use super::experiment::{summarize, RunRecord, SummaryRow};
use crate::error::{Error, Result};

pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const META_FILE: &str = "sweep.toml";

/// One line of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub technique: Technique,
    pub p: f64,
    pub seed: u64,
    pub dev_score: f64,
    pub deviation_sq: f64,
    pub source_acc: f64,
    pub secs_per_step: f64,
}

impl From<&RunRecord> for RunRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            technique: r.technique,
            p: r.p,
            seed: r.seed,
            dev_score: r.dev_score,
            deviation_sq: r.deviation_sq,
            source_acc: r.source_acc,
            secs_per_step: r.secs_per_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryLine {
    technique: Technique,
    p: f64,
    mean: f64,
    std: f64,
    max: f64,
    degenerate_count: usize,
}

/// Values `report` needs besides the run rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMeta {
    pub degenerate_threshold: f64,
}

const RUN_HEADER: [&str; 7] = [
    "technique",
    "p",
    "seed",
    "dev_score",
    "deviation_sq",
    "source_acc",
    "secs_per_step",
];
const SUMMARY_HEADER: [&str; 6] = ["technique", "p", "mean", "std", "max", "degenerate_count"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

fn write_csv<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_runs(path: &Path, rows: &[RunRow]) -> Result<()> {
    write_csv(path, &RUN_HEADER, rows)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv(
        path,
        &SUMMARY_HEADER,
        rows.iter().map(|r| SummaryLine {
            technique: r.technique,
            p: r.p,
            mean: r.mean,
            std: r.std,
            max: r.max,
            degenerate_count: r.degenerate_count,
        }),
    )
}

/// Writes `runs.csv`, `summary.csv` and the metadata file into `dir`.
pub fn write_report(
    dir: &Path,
    records: &[RunRecord],
    summary: &[SummaryRow],
    threshold: f64,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows: Vec<RunRow> = records.iter().map(RunRow::from).collect();
    write_runs(&dir.join(RUNS_FILE), &rows)?;
    write_summary(&dir.join(SUMMARY_FILE), summary)?;
    let meta = toml::to_string(&ReportMeta {
        degenerate_threshold: threshold,
    })
    .map_err(|e| Error::config(e.to_string()))?;
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::format(
            path,
            format!("unexpected header {:?}", found.iter().collect::<Vec<_>>()),
        ));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRow>> {
    read_csv(path, &RUN_HEADER)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let lines: Vec<SummaryLine> = read_csv(path, &SUMMARY_HEADER)?;
    Ok(lines
        .into_iter()
        .map(|l| SummaryRow {
            technique: l.technique,
            p: l.p,
            mean: l.mean,
            std: l.std,
            max: l.max,
            degenerate_count: l.degenerate_count,
        })
        .collect())
}

pub fn read_meta(dir: &Path) -> Result<ReportMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Recomputes the summary of a sweep directory from its `runs.csv` and
/// rewrites `summary.csv`.
pub fn report(dir: &Path) -> Result<Vec<SummaryRow>> {
    let meta = read_meta(dir)?;
    let rows = read_runs(&dir.join(RUNS_FILE))?;
    let keyed: Vec<(Technique, f64, f64)> = rows
        .iter()
        .map(|r| (r.technique, r.p, r.dev_score))
        .collect();
    let summary = summarize(&keyed, meta.degenerate_threshold);
    write_summary(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
