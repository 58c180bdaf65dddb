//! Structured-text export (traces, metrics), checkpoints, and run
//! snapshots. Everything is line-delimited JSON or a single JSON document:
//! inspectable, diffable, and float-exact on round trip.

use crate::encoder::EncodeTrace;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::ParamSet;
use crate::training::{EpochRecord, TrainConfig};
use crate::Real;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Serialized form of one sequence's encoding trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    pub z_head: Vec<bool>,
    pub z_dep: Vec<bool>,
    pub p_head: Vec<Real>,
    pub p_dep: Vec<Real>,
    /// One row per head over dependents; each row sums to 1.
    pub attention: Vec<Vec<Real>>,
    pub gate_mean: Vec<Real>,
    pub pair_evaluations: usize,
}

impl TraceRecord {
    pub fn from_trace(trace: &EncodeTrace, tokens: Option<Vec<String>>) -> Self {
        TraceRecord {
            tokens,
            z_head: trace.z_head.clone(),
            z_dep: trace.z_dep.clone(),
            p_head: trace.p_head.clone(),
            p_dep: trace.p_dep.clone(),
            attention: trace.attention.clone(),
            gate_mean: trace.gate_mean.clone(),
            pair_evaluations: trace.pair_evaluations,
        }
    }
}

fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_traces(records: &[TraceRecord], path: &Path) -> Result<()> {
    write_jsonl(records, path)
}

pub fn import_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// One JSON record per epoch.
pub fn export_metrics(records: &[EpochRecord], path: &Path) -> Result<()> {
    write_jsonl(records, path)
}

/// Hex SHA-256 of a file's contents; recorded in run snapshots so a run
/// can be tied to its exact inputs.
pub fn content_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete trained state: configs, vocabulary order, parameters.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab_tokens: Vec<String>,
    pub params: ParamSet,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, checkpoint)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)?;
    let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    if checkpoint.format_version != CHECKPOINT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "checkpoint version {} unsupported (expected {})",
            checkpoint.format_version, CHECKPOINT_VERSION
        )));
    }
    Ok(checkpoint)
}

/// Everything needed to reproduce a run bit for bit.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// (path, content hash) of every input file.
    pub inputs: Vec<(String, String)>,
    pub invocation: Vec<String>,
}

pub fn save_snapshot(snapshot: &RunSnapshot, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, snapshot)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_trace() -> TraceRecord {
        TraceRecord {
            tokens: Some(vec!["a".into(), "b".into()]),
            z_head: vec![true, false],
            z_dep: vec![true, true],
            p_head: vec![0.9, 0.2],
            p_dep: vec![0.8, 0.7],
            attention: vec![vec![0.0, 1.0], vec![0.5, 0.5]],
            gate_mean: vec![0.31, 0.62],
            pair_evaluations: 1,
        }
    }

    #[test]
    fn traces_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        let records = vec![demo_trace()];
        export_traces(&records, &path).unwrap();
        let back = import_traces(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].p_head, records[0].p_head);
        assert_eq!(back[0].attention, records[0].attention);
        for row in &back[0].attention {
            assert!((row.iter().sum::<Real>() - 1.0).abs() < 1e-9);
        }
        // n = 2 trace has a 2x2 attention block
        assert_eq!(back[0].attention.len(), 2);
        assert!(back[0].attention.iter().all(|r| r.len() == 2));
    }

    #[test]
    fn unwritable_path_errors() {
        let path = Path::new("/nonexistent-dir/trace.jsonl");
        assert!(export_traces(&[demo_trace()], path).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        use crate::model::ResanModel;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let model = ResanModel::new(crate::model::ModelConfig::classify(3, 2, false, 5), 3);
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            train: TrainConfig::default(),
            vocab_tokens: vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()],
            params: model.params.clone(),
        };
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.vocab_tokens.len(), 5);
        assert_eq!(
            back.params.get("embed").unwrap().values,
            model.params.get("embed").unwrap().values
        );
    }

    #[test]
    fn checkpoint_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt.json");
        let model = crate::model::ResanModel::new(crate::model::ModelConfig::classify(3, 2, false, 5), 3);
        let ckpt = Checkpoint {
            format_version: 999,
            model: model.config.clone(),
            train: TrainConfig::default(),
            vocab_tokens: vec![],
            params: model.params.clone(),
        };
        save_checkpoint(&ckpt, &path).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn content_hash_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("input.txt");
        std::fs::write(&path, "hello").unwrap();
        let a = content_hash(&path).unwrap();
        let b = content_hash(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        std::fs::write(&path, "hello!").unwrap();
        assert_ne!(content_hash(&path).unwrap(), a);
    }

    #[test]
    fn metrics_export_one_line_per_epoch() {
        use crate::training::Phase;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let records = vec![EpochRecord {
            epoch: 1,
            phase: Phase::Warmup,
            train_loss: 0.9,
            dev_loss: 0.95,
            dev_accuracy_or_mse: 0.5,
            mean_selection_fraction_head: 1.0,
            mean_selection_fraction_dep: 1.0,
            mean_reward: -0.7,
        }];
        export_metrics(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\"phase\":\"warmup\""));
        assert!(text.contains("mean_selection_fraction_head"));
    }
}
