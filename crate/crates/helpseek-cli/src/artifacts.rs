//! Artifact writers. Every file embeds the config hash and seed, directly or
//! through its header record, and all output is deterministic for a fixed
//! resolved configuration.

use anyhow::{bail, Context, Result};
use helpseek::eval::{AbstentionReport, SearchModeReport};
use helpseek::grpo::{TrainLogRecord, TrainSink, ValidationRecord};
use helpseek::policy::{PolicyCheckpoint, PolicyTable};
use helpseek::protocol::TrajectoryRecord;
use helpseek::warmstart::CorpusRecord;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Header line of JSON-lines artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonlHeader {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub world_preset_hash: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &JsonlHeader, rows: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a JSON-lines corpus, checking the header format tag.
pub fn read_corpus(path: &Path) -> Result<(JsonlHeader, Vec<CorpusRecord>)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .transpose()?
        .context("corpus file is empty")?;
    let header: JsonlHeader =
        serde_json::from_str(&header_line).context("corpus header malformed")?;
    if header.format != CORPUS_FORMAT {
        bail!("unexpected corpus format '{}'", header.format);
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).context("corpus row malformed")?);
    }
    Ok((header, rows))
}

pub const CORPUS_FORMAT: &str = "warmstart-corpus/v1";
pub const TRAJECTORY_FORMAT: &str = "trajectories/v1";

pub fn save_checkpoint(
    path: &Path,
    policy: &PolicyTable,
    world_hash: &str,
    step: u64,
    config_hash: &str,
    seed: u64,
) -> Result<()> {
    write_json(
        path,
        &policy.to_checkpoint(world_hash, step, config_hash, seed),
    )
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyTable, PolicyCheckpoint)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let ckpt: PolicyCheckpoint =
        serde_json::from_str(&text).context("checkpoint does not match the schema")?;
    let policy = PolicyTable::from_checkpoint(&ckpt)?;
    Ok((policy, ckpt))
}

pub fn write_trajectories(
    path: &Path,
    header: &JsonlHeader,
    rows: &[TrajectoryRecord],
) -> Result<()> {
    write_jsonl(path, header, rows)
}

/// `bucket,fraction,accuracy` rows for the search-count table.
pub fn write_bucket_csv(path: &Path, report: &SearchModeReport) -> Result<()> {
    let mut text = String::from("bucket,fraction,accuracy\n");
    for (label, bucket) in [
        ("0", report.bucket_zero),
        ("1", report.bucket_one),
        ("2+", report.bucket_two_plus),
    ] {
        let acc = bucket
            .accuracy
            .map(|a| format!("{a}"))
            .unwrap_or_else(|| "".into());
        text.push_str(&format!("{label},{},{acc}\n", bucket.fraction));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Search-mode report file: metrics plus provenance stamps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchReportFile {
    #[serde(flatten)]
    pub report: SearchModeReport,
    pub config_hash: String,
    pub world_preset_hash: String,
    pub seed: u64,
}

/// Abstention-mode report file: metrics plus provenance stamps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstentionReportFile {
    #[serde(flatten)]
    pub report: AbstentionReport,
    pub config_hash: String,
    pub world_preset_hash: String,
    pub seed: u64,
}

/// Training manifest naming the best checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainManifest {
    pub best_step: Option<u64>,
    pub best_val_tp: Option<f64>,
    pub final_step: u64,
    pub checkpoint_best: String,
    pub checkpoint_final: String,
    pub config_hash: String,
    pub world_preset_hash: String,
    pub seed: u64,
}

/// Streams training log records to JSONL files as they arrive, so partial
/// logs survive an aborted run.
pub struct FileSink {
    steps: BufWriter<File>,
    validations: BufWriter<File>,
}

impl FileSink {
    pub fn create(
        step_path: &Path,
        val_path: &Path,
        header: &JsonlHeader,
    ) -> Result<Self> {
        let mut steps = BufWriter::new(
            File::create(step_path).with_context(|| format!("creating {}", step_path.display()))?,
        );
        let mut validations = BufWriter::new(
            File::create(val_path).with_context(|| format!("creating {}", val_path.display()))?,
        );
        serde_json::to_writer(&mut steps, header)?;
        steps.write_all(b"\n")?;
        serde_json::to_writer(&mut validations, header)?;
        validations.write_all(b"\n")?;
        steps.flush()?;
        validations.flush()?;
        Ok(Self { steps, validations })
    }
}

impl TrainSink for FileSink {
    fn on_step(&mut self, record: &TrainLogRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.steps, record)?;
        self.steps.write_all(b"\n")?;
        self.steps.flush()
    }

    fn on_validation(&mut self, record: &ValidationRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.validations, record)?;
        self.validations.write_all(b"\n")?;
        self.validations.flush()
    }
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}
