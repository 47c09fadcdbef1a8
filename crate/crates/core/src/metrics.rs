//! Append-only JSONL metric streams and a flat CSV exporter. Numbers are
//! written with shortest-roundtrip formatting, so identical runs produce
//! byte-identical files.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

pub struct MetricsWriter {
    out: BufWriter<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(MetricsWriter { out: BufWriter::new(std::fs::File::create(path)?) })
    }

    pub fn append(&mut self, record: &impl Serialize) -> std::io::Result<()> {
        let line = serde_json::to_string(record).expect("metric record serializes");
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

/// Reads a JSONL file and re-emits the chosen top-level keys as CSV.
/// Missing keys become empty cells.
pub fn jsonl_to_csv(jsonl: &Path, csv: &Path, columns: &[&str]) -> std::io::Result<()> {
    let reader = std::io::BufReader::new(std::fs::File::open(jsonl)?);
    let mut out = BufWriter::new(std::fs::File::create(csv)?);
    writeln!(out, "{}", columns.join(","))?;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let cells: Vec<String> = columns
            .iter()
            .map(|c| match value.get(c) {
                Some(serde_json::Value::Null) | None => String::new(),
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
            })
            .collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()
}

/// Plain CSV writer for small tables (divergence curves, timing tables).
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()
}
