use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use f2ocl_core::experiment::{self, group_boundaries, CheckpointEvaluator, MatrixSummary};
use f2ocl_core::metrics::key_and_ub_metrics;
use f2ocl_core::{
    generate_synthetic_stream, state_file, stream_io, BatchLog, ClassId, EncoderConfig, Error, InferenceMode,
    ModelState, RunConfig, StreamSchedule, TestSet, TrainConfig,
};
use log::info;
use serde::{Deserialize, Serialize};

use crate::ConfigArgs;

pub const STATE_FILE: &str = "state.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Retrieved,
    OracleKeys,
    NoPrompt,
}

impl EvalMode {
    fn label(self) -> &'static str {
        match self {
            EvalMode::Retrieved => "retrieved",
            EvalMode::OracleKeys => "oracle-keys",
            EvalMode::NoPrompt => "no-prompt",
        }
    }

    fn inference(self, keys: usize) -> InferenceMode {
        match self {
            EvalMode::Retrieved => InferenceMode::Retrieved { keys },
            EvalMode::OracleKeys => InferenceMode::OracleKey,
            EvalMode::NoPrompt => InferenceMode::NoPrompt,
        }
    }
}

/// One group checkpoint written during `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointRecord {
    group: usize,
    batch_index: usize,
    file: String,
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(out: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    Ok(text + "\n")
}

/// Stream from disk, or a synthetic one from the config.
fn load_or_generate(cfg: &RunConfig, stream: Option<&Path>) -> Result<(StreamSchedule, TestSet)> {
    match stream {
        Some(path) => {
            let loaded = stream_io::load_stream(path, cfg.train.batch_size)?;
            Ok((loaded.schedule, loaded.test))
        }
        None => {
            let s = generate_synthetic_stream(&cfg.stream)?;
            Ok((s.schedule, s.test))
        }
    }
}

pub fn generate(args: &ConfigArgs, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(args)?;
    let dir = out_dir(out, &cfg);
    let s = generate_synthetic_stream(&cfg.stream)?;
    stream_io::write_stream(&dir, &s.schedule, &s.test)?;
    println!(
        "groups {} classes {} train_samples {} batches {} test_samples {}",
        cfg.stream.num_groups,
        cfg.stream.num_classes(),
        s.schedule.num_samples(),
        s.schedule.len(),
        s.test.len()
    );
    Ok(())
}

fn train_log_csv(logs: &[BatchLog]) -> String {
    let mut out = String::from("batch_index,first_pass_loss,loss,new_classes,wall_time_secs\n");
    for l in logs {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{},{:?}",
            l.batch_index, l.first_pass_loss, l.loss, l.new_classes, l.wall_time_secs
        );
    }
    out
}

pub fn train(args: &ConfigArgs, stream: &Path, out: Option<&Path>, passes: Option<usize>) -> Result<()> {
    let mut cfg = load_config(args)?;
    if let Some(p) = passes {
        cfg.train.passes = p;
        cfg.train.validate()?;
    }
    let dir = out_dir(out, &cfg);
    let loaded = stream_io::load_stream(stream, cfg.train.batch_size)?;
    let schedule = loaded.schedule;
    create_dir(&dir)?;
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    create_dir(&ckpt_dir)?;

    let boundaries: BTreeMap<usize, usize> = group_boundaries(&schedule).into_iter().collect();
    let mut state = ModelState::new(&cfg.encoder, &cfg.train)?;
    let mut logs = Vec::with_capacity(schedule.len());
    let mut manifest = Vec::new();
    for (t, batch) in schedule.batches.iter().enumerate() {
        let log = state
            .process_batch(batch)
            .with_context(|| format!("training on batch {t}"))?;
        logs.push(log);
        if let Some(&group) = boundaries.get(&t) {
            let file = format!("group_{group:03}.json");
            state_file::save(&state, &ckpt_dir.join(&file))?;
            manifest.push(CheckpointRecord {
                group,
                batch_index: t,
                file,
            });
            info!("checkpoint after group {group} (batch {t})");
        }
    }
    write_file(&ckpt_dir.join(MANIFEST_FILE), &to_json(&manifest)?)?;
    state_file::save(&state, &dir.join(STATE_FILE))?;
    write_file(&dir.join(TRAIN_LOG_FILE), &train_log_csv(&logs))?;
    println!(
        "batches {} classes {} checkpoints {} state {}",
        logs.len(),
        state.num_classes(),
        manifest.len(),
        dir.join(STATE_FILE).display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport<'a> {
    mode: &'static str,
    keys: usize,
    groups: Vec<usize>,
    summary: MatrixSummary,
    key_accuracy: f64,
    upper_bound: f64,
    encoder: &'a EncoderConfig,
    train: &'a TrainConfig,
}

fn read_manifest(state_path: &Path) -> Result<Option<Vec<CheckpointRecord>>> {
    let dir = state_path.parent().unwrap_or(Path::new(".")).join(CHECKPOINT_DIR);
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let records: Vec<CheckpointRecord> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    Ok((!records.is_empty()).then_some(records))
}

pub fn eval(state_path: &Path, test_path: &Path, keys: usize, mode: EvalMode, out: &Path) -> Result<()> {
    if keys == 0 {
        return Err(Error::Config("--keys must be at least 1".into()).into());
    }
    let state = state_file::load(state_path)?;
    let mut test = stream_io::load_test_set(test_path)?;
    let mut evaluator = CheckpointEvaluator::new(vec![mode.inference(keys)]);
    match read_manifest(state_path)? {
        Some(records) => {
            let dir = state_path.parent().unwrap_or(Path::new(".")).join(CHECKPOINT_DIR);
            for r in &records {
                let ckpt = state_file::load(&dir.join(&r.file))?;
                evaluator.record_group_end(&ckpt, &test, r.group)?;
            }
        }
        None => {
            // Without checkpoints the whole test set is one group.
            for g in test.class_groups.values_mut() {
                *g = 0;
            }
            evaluator.record_group_end(&state, &test, 0)?;
        }
    }
    let metrics = key_and_ub_metrics(&state, &test, evaluator.groups())?;
    let (groups, mut matrices, _) = evaluator.into_parts();
    let matrix = matrices.pop().expect("one mode");
    let csv = matrix.to_csv();
    let summary = MatrixSummary::from_matrix(matrix)?;
    info!(
        "A_n {:.4} A_k {:.4} UB {:.4}",
        summary.final_accuracy, metrics.key_accuracy, metrics.upper_bound
    );
    let report = EvalReport {
        mode: mode.label(),
        keys,
        groups,
        summary,
        key_accuracy: metrics.key_accuracy,
        upper_bound: metrics.upper_bound,
        encoder: state.encoder().config(),
        train: state.config(),
    };
    create_dir(out)?;
    write_file(&out.join("metrics.json"), &to_json(&report)?)?;
    write_file(&out.join("matrix.csv"), &csv)?;
    println!(
        "final_accuracy {:?} final_forgetting {} key_accuracy {:?} upper_bound {:?}",
        report.summary.final_accuracy,
        report
            .summary
            .final_forgetting
            .map_or_else(|| "none".to_string(), |f| format!("{f:?}")),
        report.key_accuracy,
        report.upper_bound
    );
    Ok(())
}

pub fn run(args: &ConfigArgs, stream: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(args)?;
    let dir = out_dir(out, &cfg);
    let (schedule, test) = load_or_generate(&cfg, stream)?;
    let run = experiment::run_experiment(&schedule, &test, &cfg.encoder, &cfg.train, &cfg.eval)?;
    create_dir(&dir)?;
    state_file::save(&run.state, &dir.join(STATE_FILE))?;
    write_file(&dir.join(TRAIN_LOG_FILE), &train_log_csv(&run.logs))?;
    write_file(&dir.join("report.json"), &to_json(&run.report)?)?;
    write_file(&dir.join("config.json"), &to_json(&cfg)?)?;
    let r = &run.report;
    println!(
        "final_accuracy {:?} no_prompt_accuracy {:?} key_accuracy {:?} upper_bound {:?}",
        r.prompted.final_accuracy, r.no_prompt.final_accuracy, r.key_accuracy, r.upper_bound
    );
    Ok(())
}

pub fn sweep(args: &ConfigArgs, stream: Option<&Path>, passes: &[usize], keys: &[usize], out: &Path) -> Result<()> {
    let cfg = load_config(args)?;
    if keys.contains(&0) || passes.contains(&0) {
        return Err(Error::Config("sweep passes and keys must be at least 1".into()).into());
    }
    let (schedule, test) = load_or_generate(&cfg, stream)?;
    let cells = experiment::sweep(&schedule, &test, &cfg.encoder, &cfg.train, passes, keys)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let csv = experiment::sweep_to_csv(&cells);
    write_file(out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn join_floats(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, ",{v:?}");
    }
}

pub fn dump_embeddings(state_path: &Path, test_path: &Path, keys: usize, out: &Path) -> Result<()> {
    if keys == 0 {
        return Err(Error::Config("--keys must be at least 1".into()).into());
    }
    let state = state_file::load(state_path)?;
    let test = stream_io::load_test_set(test_path)?;
    let predictions = test
        .samples
        .iter()
        .map(|s| state.classify(&s.features, keys))
        .collect::<f2ocl_core::Result<Vec<_>>>()?;
    let (dq, dz) = predictions
        .first()
        .map_or((0, 0), |p| (p.query.len(), p.embedding.len()));
    let mut csv = String::from("label,retrieved");
    for (prefix, d) in [("q", dq), ("z", dz)] {
        for i in 0..d {
            let _ = write!(csv, ",{prefix}_{i}");
        }
    }
    csv.push('\n');
    for (s, p) in test.samples.iter().zip(&predictions) {
        let retrieved: Vec<String> = p.retrieved.iter().map(ClassId::to_string).collect();
        let _ = write!(csv, "{},{}", s.label, retrieved.join(";"));
        join_floats(&mut csv, &p.query);
        join_floats(&mut csv, &p.embedding);
        csv.push('\n');
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(out, &csv)?;
    println!("rows {}", test.len());
    Ok(())
}
