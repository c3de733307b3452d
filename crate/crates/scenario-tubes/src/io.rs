//! Run artifacts: CSV and JSON persistence with stable schemas.
//!
//! All files are written atomically (temp file in the target directory, then
//! rename), so an interrupted run never leaves a half-written artifact. The
//! CSV schemas are fixed and documented here; `schema_check` validates any
//! emitted file against them.
//!
//! * dataset:   `t, output, a0..a{n-1}, y`
//! * tube:      `output, grid_index, a0..a{n-1}, lower, upper`
//! * scenarios: `scenario, output, grid_index, value`
//! * history:   `t, a0..a{n-1}, y0..y{k-1}, m, s, tau, safe_set,
//!   maximizers, expanders, safe`

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::model::{Dataset, ScenarioBatch};
use crate::safe_bo::HistoryRow;
use crate::tube::Tube;

/// Write `bytes` to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = PathBuf::from(dir);
    let stem = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".into());
    tmp.push(format!(".{stem}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialize a value to pretty JSON and write it atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    atomic_write(path, &buf)
}

fn csv_to_bytes(build: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    build(&mut writer)?;
    writer
        .into_inner()
        .map_err(|e| Error::Config(format!("csv flush failed: {e}")))
}

fn coord_headers(dim: usize) -> Vec<String> {
    (0..dim).map(|a| format!("a{a}")).collect()
}

/// Dataset CSV: one row per (step, output) pair.
pub fn write_dataset_csv(path: &Path, grid: &DomainGrid, data: &Dataset) -> Result<()> {
    let bytes = csv_to_bytes(|w| {
        let mut header = vec!["t".to_string(), "output".to_string()];
        header.extend(coord_headers(grid.dim()));
        header.push("y".to_string());
        w.write_record(&header)?;
        for (t, &idx) in data.param_indices().iter().enumerate() {
            for output in 0..data.outputs() {
                let mut row = vec![(t + 1).to_string(), output.to_string()];
                row.extend(grid.point(idx).iter().map(|c| format!("{c:.17e}")));
                row.push(format!("{:.17e}", data.observations(output)[t]));
                w.write_record(&row)?;
            }
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

/// Read a dataset CSV produced by [`write_dataset_csv`].
pub fn read_dataset_csv(path: &Path, grid: &DomainGrid, outputs: usize) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows: Vec<(usize, usize, Vec<f64>, f64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let dim = grid.dim();
        if record.len() != 3 + dim {
            return Err(Error::InvalidDataset(format!(
                "dataset row has {} fields, expected {}",
                record.len(),
                3 + dim
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::InvalidDataset(format!("bad number {s:?}: {e}")))
        };
        let t: usize = record[0]
            .parse()
            .map_err(|e| Error::InvalidDataset(format!("bad step index: {e}")))?;
        let output: usize = record[1]
            .parse()
            .map_err(|e| Error::InvalidDataset(format!("bad output index: {e}")))?;
        let coords: Vec<f64> = (0..dim)
            .map(|a| parse(&record[2 + a]))
            .collect::<Result<_>>()?;
        let y = parse(&record[2 + dim])?;
        rows.push((t, output, coords, y));
    }
    rows.sort_by_key(|(t, output, _, _)| (*t, *output));
    let mut data = Dataset::empty(outputs);
    for chunk in rows.chunks(outputs) {
        let complete = chunk.len() == outputs
            && chunk
                .iter()
                .enumerate()
                .all(|(i, r)| r.1 == i && r.0 == chunk[0].0 && r.2 == chunk[0].2);
        if !complete {
            return Err(Error::InvalidDataset(
                "observation table is incomplete: every (t, output) pair must be present".into(),
            ));
        }
        let idx = grid.locate(&chunk[0].2)?;
        let ys: Vec<f64> = chunk.iter().map(|r| r.3).collect();
        data.push(idx, &ys)?;
    }
    Ok(data)
}

/// Tube CSV: one row per (output, grid point).
pub fn write_tube_csv(path: &Path, grid: &DomainGrid, tube: &Tube) -> Result<()> {
    let bytes = csv_to_bytes(|w| {
        let mut header = vec!["output".to_string(), "grid_index".to_string()];
        header.extend(coord_headers(grid.dim()));
        header.push("lower".to_string());
        header.push("upper".to_string());
        w.write_record(&header)?;
        for output in 0..tube.outputs() {
            for p in 0..tube.n_points() {
                let mut row = vec![output.to_string(), p.to_string()];
                row.extend(grid.point(p).iter().map(|c| format!("{c:.17e}")));
                row.push(format!("{:.17e}", tube.lower[output][p]));
                row.push(format!("{:.17e}", tube.upper[output][p]));
                w.write_record(&row)?;
            }
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

/// Sample of scenario functions (the first `count`) for plotting.
pub fn write_scenario_sample_csv(
    path: &Path,
    batch: &ScenarioBatch,
    count: usize,
) -> Result<()> {
    let take = count.min(batch.m());
    let bytes = csv_to_bytes(|w| {
        w.write_record(["scenario", "output", "grid_index", "value"])?;
        for j in 0..take {
            for output in 0..batch.outputs() {
                for (p, v) in batch.scenario(output, j).iter().enumerate() {
                    w.write_record(&[
                        j.to_string(),
                        output.to_string(),
                        p.to_string(),
                        format!("{v:.17e}"),
                    ])?;
                }
            }
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

/// Campaign history CSV.
pub fn write_history_csv(
    path: &Path,
    grid: &DomainGrid,
    outputs: usize,
    history: &[HistoryRow],
) -> Result<()> {
    let bytes = csv_to_bytes(|w| {
        let mut header = vec!["t".to_string()];
        header.extend(coord_headers(grid.dim()));
        header.extend((0..outputs).map(|i| format!("y{i}")));
        header.extend(
            ["m", "s", "tau", "safe_set", "maximizers", "expanders", "safe"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header)?;
        for row in history {
            let mut rec = vec![row.iteration.to_string()];
            rec.extend(row.point.iter().map(|c| format!("{c:.17e}")));
            rec.extend(row.observations.iter().map(|y| format!("{y:.17e}")));
            rec.push(row.m.to_string());
            rec.push(row.s.to_string());
            rec.push(format!("{:.17e}", row.tau));
            rec.push(row.safe_set_size.to_string());
            rec.push(row.maximizer_set_size.to_string());
            rec.push(row.expander_set_size.to_string());
            rec.push((row.safe as u8).to_string());
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

/// Known artifact schemas, recognized by their header row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Dataset,
    Tube,
    ScenarioSample,
    History,
    Json,
}

/// Validate an emitted artifact: known CSV header, consistent field counts,
/// parseable numbers; or well-formed JSON for `.json` files.
pub fn schema_check(path: &Path) -> Result<ArtifactKind> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str::<serde_json::Value>(&text)?;
        return Ok(ArtifactKind::Json);
    }
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let dim_between = |prefix: usize, suffix: usize| -> Option<usize> {
        let n = header.len().checked_sub(prefix + suffix)?;
        let ok = (0..n).all(|a| header[prefix + a] == format!("a{a}"));
        (ok && n > 0).then_some(n)
    };

    let kind = if header.first().map(String::as_str) == Some("t")
        && header.get(1).map(String::as_str) == Some("output")
        && header.last().map(String::as_str) == Some("y")
        && dim_between(2, 1).is_some()
    {
        ArtifactKind::Dataset
    } else if header.first().map(String::as_str) == Some("output")
        && header.get(1).map(String::as_str) == Some("grid_index")
        && header.ends_with(&["lower".to_string(), "upper".to_string()])
        && dim_between(2, 2).is_some()
    {
        ArtifactKind::Tube
    } else if header == ["scenario", "output", "grid_index", "value"] {
        ArtifactKind::ScenarioSample
    } else if header.first().map(String::as_str) == Some("t")
        && header.ends_with(&[
            "m".to_string(),
            "s".to_string(),
            "tau".to_string(),
            "safe_set".to_string(),
            "maximizers".to_string(),
            "expanders".to_string(),
            "safe".to_string(),
        ]) {
        ArtifactKind::History
    } else {
        return Err(Error::Config(format!(
            "unrecognized CSV header: {header:?}"
        )));
    };

    let width = header.len();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(Error::Config(format!(
                "row {} has {} fields, header has {width}",
                i + 2,
                record.len()
            )));
        }
    }
    Ok(kind)
}
