//! CSV and JSON output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use spingp::engine::Dataset;

use crate::error::{BenchError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    File::create(path).map_err(|e| BenchError::io(path, e))
}

/// One header row from the field names of `T`, then one record per row.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))?;
    Ok(())
}

/// Pretty JSON with a top-level `schema_version` field.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(
        &mut w,
        &Versioned {
            schema_version: SCHEMA_VERSION,
            body: value,
        },
    )?;
    w.write_all(b"\n").map_err(|e| BenchError::io(path, e))?;
    w.flush().map_err(|e| BenchError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesRow {
    time: f64,
    value: f64,
}

/// `time,value` CSV of the raw (de-normalized) observations.
pub fn write_series(path: &Path, data: &Dataset) -> Result<()> {
    let rows: Vec<SeriesRow> = data
        .times()
        .iter()
        .zip(data.raw_values())
        .map(|(&time, value)| SeriesRow { time, value })
        .collect();
    write_csv(path, &rows)
}

pub fn read_series(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => BenchError::io(path, io),
        other => BenchError::Config(format!("{}: {other:?}", path.display())),
    })?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for row in r.deserialize() {
        let row: SeriesRow = row?;
        times.push(row.time);
        values.push(row.value);
    }
    if times.is_empty() {
        return Err(BenchError::NoValidRows(path.to_path_buf()));
    }
    Ok(Dataset::new(times, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        name: String,
        value: Option<f64>,
    }

    #[test]
    fn csv_quotes_and_json_carries_version() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("nested/report.csv");
        let rows = vec![
            Row {
                name: "a, \"b\"".into(),
                value: Some(1.5),
            },
            Row {
                name: "c".into(),
                value: None,
            },
        ];
        write_csv(&csv_path, &rows).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text, "name,value\n\"a, \"\"b\"\"\",1.5\nc,\n");

        let json_path = dir.path().join("metrics.json");
        write_json(&json_path, &rows[0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert_eq!(v["value"], 1.5);
    }

    #[test]
    fn series_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let d = Dataset::new(vec![0.1, 0.7, 3.0 / 7.0 + 1.0], vec![1.0 / 3.0, -2e-17, 5.5]).unwrap();
        write_series(&path, &d).unwrap();
        assert_eq!(read_series(&path).unwrap(), d);
    }
}
