//! Serialization of run artifacts: CSV tables, JSON documents and the
//! aligned text summaries printed to the terminal.

use crate::Failure;
use mfsmp::smp::{ConditionTable, GapTable, SingularRegion};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::usage(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })
}

pub fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), Failure> {
    let path = dir.join(name);
    let file = File::create(&path)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
    Ok((path, BufWriter::new(file)))
}

/// Writes serializable rows as a headed, comma-separated, LF-terminated table.
pub fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf, Failure> {
    let (path, file) = create(dir, name)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    for row in rows {
        w.serialize(row).map_err(csv_failure)?;
    }
    w.flush()?;
    Ok(path)
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(csv_failure)?;
    r.deserialize()
        .map(|row| row.map_err(csv_failure))
        .collect()
}

fn csv_failure(e: csv::Error) -> Failure {
    Failure::usage(format!("csv error: {e}"))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Failure> {
    let (path, mut file) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut file, value)
        .map_err(|e| Failure::usage(format!("json error: {e}")))?;
    writeln!(file)?;
    file.flush()?;
    Ok(path)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, Failure> {
    let (path, mut file) = create(dir, name)?;
    file.write_all(text.as_bytes())?;
    file.flush()?;
    Ok(path)
}

/// Control point rendered as coordinates joined by ':'.
pub fn point_label(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(":")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub point: usize,
    pub v: String,
    pub knot: usize,
    pub time: f64,
    pub mean: f64,
    pub stderr: f64,
}

pub fn gap_rows(tables: &[GapTable]) -> Vec<GapRow> {
    let mut rows = Vec::new();
    for (point, t) in tables.iter().enumerate() {
        for k in 0..t.gap.times.len() {
            rows.push(GapRow {
                point,
                v: point_label(&t.v),
                knot: k,
                time: t.gap.times[k],
                mean: t.gap.mean[k],
                stderr: t.gap.stderr[k],
            });
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub point: usize,
    pub v: String,
    pub on_grid: bool,
    pub knot: usize,
    pub time: f64,
    pub mean: f64,
    pub stderr: f64,
}

pub fn condition_rows(tables: &[ConditionTable]) -> Vec<ConditionRow> {
    let mut rows = Vec::new();
    for (point, t) in tables.iter().enumerate() {
        for k in 0..t.series.times.len() {
            rows.push(ConditionRow {
                point,
                v: point_label(&t.v),
                on_grid: t.on_grid,
                knot: k,
                time: t.series.times[k],
                mean: t.series.mean[k],
                stderr: t.series.stderr[k],
            });
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub knot: usize,
    pub point: usize,
}

pub fn region_rows(region: &SingularRegion) -> Vec<RegionRow> {
    region
        .cells
        .iter()
        .map(|&(knot, point)| RegionRow { knot, point })
        .collect()
}

/// Key/value lines with the values aligned in one column.
#[derive(Default)]
pub struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    pub fn new(title: &str) -> Self {
        let mut s = Summary::default();
        s.lines.push((title.to_string(), String::new()));
        s
    }

    pub fn line(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let width = self
            .lines
            .iter()
            .skip(1)
            .map(|(k, _)| k.len())
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        for (i, (k, v)) in self.lines.iter().enumerate() {
            if i == 0 {
                out.push_str(k);
            } else {
                out.push_str(&format!("  {k:<width$}  {v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

pub fn sci(x: f64) -> String {
    format!("{x:.4e}")
}
