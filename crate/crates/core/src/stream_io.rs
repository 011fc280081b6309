//! Stream files.
//!
//! A stream directory holds `train.csv` and `test.csv` (header
//! `class_id,f_0,…,f_{D-1}`, one sample per line, in stream order) and an
//! optional `groups.json` mapping class id to group index.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::class_id::ClassId;
use crate::error::{Error, Result};
use crate::stream::{Sample, StreamSchedule, TestSet};

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const GROUPS_FILE: &str = "groups.json";

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedStream {
    pub schedule: StreamSchedule,
    pub test: TestSet,
    pub warnings: Vec<String>,
}

fn write_samples_csv<'a>(path: &Path, samples: impl IntoIterator<Item = &'a Sample>) -> Result<()> {
    let mut samples = samples.into_iter().peekable();
    let dim = samples.peek().map_or(0, |s| s.features.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["class_id".to_string()];
    header.extend((0..dim).map(|i| format!("f_{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in samples {
        let mut rec = Vec::with_capacity(dim + 1);
        rec.push(s.label.to_string());
        rec.extend(s.features.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Reads samples from a stream CSV; every malformed record names its line.
pub fn read_samples_csv(path: &Path) -> Result<Vec<Sample>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0).map(str::trim) != Some("class_id") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "first column must be class_id".into(),
        });
    }
    let dim = header.len() - 1;
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if rec.len() != dim + 1 {
            return Err(parse_err(format!("expected {} fields, found {}", dim + 1, rec.len())));
        }
        let label: u32 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("invalid class id {:?}", &rec[0])))?;
        let features = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("invalid feature value {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            label: ClassId(label),
            features,
        });
    }
    Ok(samples)
}

pub fn write_group_manifest(path: &Path, groups: &BTreeMap<ClassId, usize>) -> Result<()> {
    let text = serde_json::to_string_pretty(groups)
        .map_err(|e| Error::Format(format!("cannot encode group manifest: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_group_manifest(path: &Path) -> Result<BTreeMap<ClassId, usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// Writes `train.csv`, `test.csv` and `groups.json` into `dir`.
pub fn write_stream(dir: &Path, schedule: &StreamSchedule, test: &TestSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_samples_csv(&dir.join(TRAIN_FILE), schedule.batches.iter().flatten())?;
    write_samples_csv(&dir.join(TEST_FILE), &test.samples)?;
    write_group_manifest(&dir.join(GROUPS_FILE), &test.class_groups)
}

/// Cuts samples into batches of `batch_size`, never letting a batch span two groups.
pub fn batch_samples(
    samples: Vec<Sample>,
    batch_size: usize,
    groups: Option<&BTreeMap<ClassId, usize>>,
) -> StreamSchedule {
    let mut batches: Vec<Vec<Sample>> = Vec::new();
    let mut batch_groups: Vec<Option<usize>> = Vec::new();
    for s in samples {
        let g = groups.and_then(|m| m.get(&s.label).copied());
        let start_new = match (batches.last(), batch_groups.last()) {
            (Some(b), Some(&bg)) => b.len() >= batch_size || bg != g,
            _ => true,
        };
        if start_new {
            batches.push(Vec::with_capacity(batch_size));
            batch_groups.push(g);
        }
        batches.last_mut().expect("pushed").push(s);
    }
    StreamSchedule::new(batches, batch_groups)
}

fn stream_file(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.with_file_name(name)
    }
}

/// Loads a stream directory (or the `train.csv` inside one).
pub fn load_stream(path: &Path, batch_size: usize) -> Result<LoadedStream> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let train_path = if path.is_dir() {
        path.join(TRAIN_FILE)
    } else {
        path.to_path_buf()
    };
    let samples = read_samples_csv(&train_path)?;
    let groups_path = stream_file(path, GROUPS_FILE);
    let groups = if groups_path.exists() {
        Some(read_group_manifest(&groups_path)?)
    } else {
        None
    };
    let mut warnings = Vec::new();
    if let Some(m) = &groups {
        let mut missing: Vec<ClassId> = samples
            .iter()
            .map(|s| s.label)
            .filter(|c| !m.contains_key(c))
            .collect();
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            warnings.push(format!("classes missing from group manifest: {missing:?}"));
        }
    }
    let schedule = batch_samples(samples, batch_size, groups.as_ref());
    // With a manifest, classes of one group may interleave freely; only the
    // group segments themselves must be contiguous.
    if groups.is_some() {
        let broken = schedule.non_contiguous_groups();
        if !broken.is_empty() {
            warnings.push(format!("groups split into several segments: {broken:?}"));
        }
    } else {
        let broken = schedule.non_contiguous_classes();
        if !broken.is_empty() {
            warnings.push(format!("classes with non-contiguous intervals: {broken:?}"));
        }
    }

    let test_path = stream_file(path, TEST_FILE);
    let test = if test_path.exists() {
        TestSet {
            samples: read_samples_csv(&test_path)?,
            class_groups: groups.clone().unwrap_or_default(),
        }
    } else {
        TestSet::default()
    };
    let test = with_default_groups(test);
    for w in &warnings {
        warn!("{}: {w}", train_path.display());
    }
    Ok(LoadedStream {
        schedule,
        test,
        warnings,
    })
}

/// Loads just a test file, with the sibling group manifest when present.
pub fn load_test_set(path: &Path) -> Result<TestSet> {
    let test_path = if path.is_dir() {
        path.join(TEST_FILE)
    } else {
        path.to_path_buf()
    };
    let groups_path = stream_file(path, GROUPS_FILE);
    let class_groups = if groups_path.exists() {
        read_group_manifest(&groups_path)?
    } else {
        BTreeMap::new()
    };
    Ok(with_default_groups(TestSet {
        samples: read_samples_csv(&test_path)?,
        class_groups,
    }))
}

/// Without a manifest every class falls into group 0.
fn with_default_groups(mut test: TestSet) -> TestSet {
    if test.class_groups.is_empty() {
        test.class_groups = test.samples.iter().map(|s| (s.label, 0)).collect();
    }
    test
}
