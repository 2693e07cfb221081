//! Long-format CSV: one row per sample window, `T·F` feature columns.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synthetic::choose_in_order;
use super::{DatasetDescriptor, Location, SampleWindow, Task, TaskSet};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Expected header for a `T×F` window layout.
pub fn data_header(seq_len: usize, n_features: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["task_id", "lat", "lon", "sample_id", "year"].map(String::from).to_vec();
    for t in 0..seq_len {
        for f in 0..n_features {
            cols.push(format!("x_t{t}_f{f}"));
        }
    }
    cols.push("label".into());
    cols
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Ingestion {
        path: path.to_path_buf(),
        row,
        detail: e.to_string(),
    }
}

struct Row {
    lat: f64,
    lon: f64,
    sample: SampleWindow,
}

/// Reads tasks from `data`, drawing `k` support samples (years before the
/// cutoff) and `l` query samples per task uniformly at random.
pub fn load_csv(data: &Path, descriptor: &DatasetDescriptor, seed: u64) -> Result<TaskSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(data)
        .map_err(|e| csv_error(data, e))?;
    let expected = data_header(descriptor.seq_len, descriptor.n_features);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(data, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header != expected {
        return Err(Error::format(
            data,
            &format!(
                "header does not match T = {}, F = {} ({} columns expected, found {})",
                descriptor.seq_len,
                descriptor.n_features,
                expected.len(),
                header.len()
            ),
        ));
    }

    let window = descriptor.window_len();
    let mut by_task: BTreeMap<u64, Vec<Row>> = BTreeMap::new();
    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(data, e))?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let fail = |detail: String| Error::Ingestion {
            path: data.to_path_buf(),
            row,
            detail,
        };
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let int = |i: usize| {
            field(i)
                .parse::<i64>()
                .map_err(|_| fail(format!("column {}: expected an integer, found {:?}", expected[i], field(i))))
        };
        let real = |i: usize| {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| fail(format!("column {}: expected a number, found {:?}", expected[i], field(i))))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(fail(format!("column {}: non-finite value", expected[i])))
            }
        };
        let task_id = u64::try_from(int(0)?).map_err(|_| fail("negative task_id".into()))?;
        let sample_id = u64::try_from(int(3)?).map_err(|_| fail("negative sample_id".into()))?;
        let year = i32::try_from(int(4)?).map_err(|_| fail("year out of range".into()))?;
        if !seen.insert((task_id, sample_id)) {
            return Err(fail(format!("duplicate sample {sample_id} for task {task_id}")));
        }
        let features = (5..5 + window).map(real).collect::<Result<Vec<f64>>>()?;
        let parsed = Row {
            lat: real(1)?,
            lon: real(2)?,
            sample: SampleWindow {
                features,
                label: real(5 + window)?,
                year,
                sample_id,
            },
        };
        by_task.entry(task_id).or_default().push(parsed);
    }

    let mut tasks = Vec::with_capacity(by_task.len());
    for (task_id, rows) in by_task {
        let location = Location {
            lat: rows[0].lat,
            lon: rows[0].lon,
        };
        let (support, query): (Vec<SampleWindow>, Vec<SampleWindow>) = rows
            .into_iter()
            .map(|r| r.sample)
            .partition(|s| s.year < descriptor.support_year_cutoff);
        if support.len() < descriptor.k || query.len() < descriptor.l {
            return Err(Error::Input(format!(
                "task {task_id} has {} support and {} query samples; k = {} and l = {} required",
                support.len(),
                query.len(),
                descriptor.k,
                descriptor.l
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "load", task_id));
        tasks.push(Task {
            task_id,
            location,
            support: choose_in_order(support, descriptor.k, &mut rng),
            query: choose_in_order(query, descriptor.l, &mut rng),
            regime_id: None,
        });
    }
    TaskSet::new(tasks, descriptor.clone())
}

/// Writes the data CSV and the descriptor JSON.
pub fn export_csv(set: &TaskSet, data: &Path, descriptor: &Path) -> Result<()> {
    let d = &set.descriptor;
    let mut writer = csv::Writer::from_path(data).map_err(|e| csv_error(data, e))?;
    writer
        .write_record(data_header(d.seq_len, d.n_features))
        .map_err(|e| csv_error(data, e))?;
    for task in &set.tasks {
        for s in task.support.iter().chain(&task.query) {
            let mut rec = vec![
                task.task_id.to_string(),
                task.location.lat.to_string(),
                task.location.lon.to_string(),
                s.sample_id.to_string(),
                s.year.to_string(),
            ];
            rec.extend(s.features.iter().map(f64::to_string));
            rec.push(s.label.to_string());
            writer.write_record(&rec).map_err(|e| csv_error(data, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(data, e))?;
    let json = serde_json::to_string_pretty(d).expect("descriptor serializes");
    std::fs::write(descriptor, json).map_err(|e| Error::io(descriptor, e))
}

pub fn load_descriptor(path: &Path) -> Result<DatasetDescriptor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, &e.to_string()))
}

/// `task_id,regime` sidecar with ground-truth regimes.
pub fn export_regimes(path: &Path, regimes: &[(u64, usize)]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(["task_id", "regime"]).map_err(|e| csv_error(path, e))?;
    for (id, r) in regimes {
        writer
            .write_record([id.to_string(), r.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn load_regimes(path: &Path) -> Result<Vec<(u64, usize)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for record in reader.deserialize() {
        let pair: (u64, usize) = record.map_err(|e| csv_error(path, e))?;
        out.push(pair);
    }
    Ok(out)
}
