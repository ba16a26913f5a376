//! Experiment configuration and the generate / train / score / evaluate /
//! report pipeline.
//!
//! Layout under the output root:
//!
//! ```text
//! dataset/                  manifest.csv, images/, benchmark.txt
//! runs/<mode>-seed<s>/      model.rpck, losses.csv, scores.csv,
//!                           report.json, report.txt
//! ```
//!
//! Each stage is a no-op when its output already exists with matching
//! provenance.

mod config;
mod summary;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use log::info;
use sha2::{Digest, Sha256};

pub use config::{DatasetSource, ExperimentConfig, OUTPUT_ROOT_ENV};
pub use summary::{summarize, MetricSummary, ModeSummary, Summary};

use crate::error::{Error, Result};
use crate::metrics::{compute_report, ScoreReport};
use crate::model::{train, Encoder, Mode, TrainOptions, Trained};
use crate::numerics::Checkpoint;
use crate::scorer::{build_bank, read_scores, score_split, write_scores};
use crate::synthdata::{build_benchmark, read_manifest, write_manifest, BenchmarkSplit, RoleCounts, MANIFEST_FILE, SPEC_FILE};

pub const MODEL_FILE: &str = "model.rpck";
pub const SCORES_FILE: &str = "scores.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

/// SHA-256 over `manifest.csv` followed by every referenced image file, in row order.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(Error::MissingArtifact(manifest));
    }
    let mut h = Sha256::new();
    let bytes = fs::read(&manifest)?;
    h.update(&bytes);
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut buf = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let file = rec.get(0).ok_or_else(|| Error::Config("manifest row without filename".into()))?;
        buf.clear();
        fs::File::open(dir.join(file))?.read_to_end(&mut buf)?;
        h.update(&buf);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOutcome {
    pub dir: PathBuf,
    pub counts: RoleCounts,
    pub dataset_hash: String,
    /// True when an up-to-date dataset was already present.
    pub reused: bool,
}

/// Materializes (or validates) the configured dataset.
pub fn generate(cfg: &ExperimentConfig) -> Result<GenerateOutcome> {
    let dir = cfg.dataset_dir();
    let reused = match &cfg.dataset {
        DatasetSource::Manifest(_) => true,
        DatasetSource::Synthetic(spec) => {
            spec.validate()?;
            let spec_text = spec.to_text();
            let current = fs::read_to_string(dir.join(SPEC_FILE)).ok();
            if current.as_deref() == Some(spec_text.as_str()) && dir.join(MANIFEST_FILE).is_file() {
                true
            } else {
                let split = build_benchmark(spec)?;
                fs::create_dir_all(&dir)?;
                // the spec file marks completion, so it goes last
                let _ = fs::remove_file(dir.join(SPEC_FILE));
                write_manifest(&split, &dir)?;
                fs::write(dir.join(SPEC_FILE), spec_text)?;
                false
            }
        }
    };
    let split = read_manifest(&dir)?;
    Ok(GenerateOutcome { counts: split.counts(), dataset_hash: dataset_hash(&dir)?, dir, reused })
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<(BenchmarkSplit, String)> {
    let dir = cfg.dataset_dir();
    let split = read_manifest(&dir)?;
    Ok((split, dataset_hash(&dir)?))
}

fn provenance(cfg: &ExperimentConfig, dataset_hash: &str, mode: Mode, seed: u64) -> Result<String> {
    Ok(format!("config_hash={};dataset_hash={dataset_hash};mode={mode};seed={seed}", cfg.hash()?))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub reused: bool,
}

/// Trains one (mode, seed) run and writes `model.rpck` (plus `losses.csv`).
/// `raw_encoder` stores the seeded initialization.
pub fn train_run(cfg: &ExperimentConfig, mode: Mode, seed: u64) -> Result<TrainOutcome> {
    let (split, dhash) = load_dataset(cfg)?;
    let dir = cfg.run_dir(mode, seed);
    let path = dir.join(MODEL_FILE);
    let meta = provenance(cfg, &dhash, mode, seed)?;
    if let Ok(existing) = Checkpoint::load(&path) {
        if existing.metadata == meta {
            return Ok(TrainOutcome { checkpoint: path, reused: true });
        }
    }
    fs::create_dir_all(&dir)?;
    let _ = fs::remove_file(&path);
    let opts = TrainOptions { run_dir: Some(dir.clone()), provenance: meta.clone() };
    let trained: Trained = train(&cfg.training_for(mode, seed), &split.train, &opts)?;
    trained.checkpoint(&meta).save(&path)?;
    info!("{mode} seed {seed}: wrote {}", path.display());
    Ok(TrainOutcome { checkpoint: path, reused: false })
}

fn parse_meta(meta: &str) -> Vec<(String, String)> {
    meta.split(';')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn expect_hash(pairs: &[(String, String)], key: &str, want: &str, what: &Path) -> Result<()> {
    match lookup(pairs, key) {
        Some(v) if v == want => Ok(()),
        Some(v) => Err(Error::HashMismatch(format!("{}: {key} {v} does not match current {want}", what.display()))),
        None => Err(Error::HashMismatch(format!("{}: no {key} recorded", what.display()))),
    }
}

/// Scores every test sample of the dataset with the run's encoder.
pub fn score_run(cfg: &ExperimentConfig, mode: Mode, seed: u64) -> Result<PathBuf> {
    let (split, dhash) = load_dataset(cfg)?;
    let dir = cfg.run_dir(mode, seed);
    let model = dir.join(MODEL_FILE);
    let ckpt = Checkpoint::load(&model)?;
    let chash = cfg.hash()?;
    let meta = parse_meta(&ckpt.metadata);
    expect_hash(&meta, "config_hash", &chash, &model)?;
    expect_hash(&meta, "dataset_hash", &dhash, &model)?;
    let comments = vec![
        ("config_hash", chash),
        ("dataset_hash", dhash),
        ("mode", mode.to_string()),
        ("seed", seed.to_string()),
        ("k", cfg.k.to_string()),
        ("model_sha256", hex::encode(Sha256::digest(ckpt.to_bytes()))),
    ];
    let out = dir.join(SCORES_FILE);
    if let Ok((_, existing)) = read_scores(&out) {
        let want: Vec<(String, String)> = comments.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        if existing == want {
            return Ok(out);
        }
    }
    let encoder = Encoder::<f32>::from_checkpoint(&ckpt)?;
    let bank = build_bank(&encoder, &split.train)?;
    let scores = score_split(&encoder, &bank, split.test_samples(), cfg.k)?;
    write_scores(&out, &scores, &comments)?;
    Ok(out)
}

/// Computes AD/PA/RA from the run's scores; writes JSON and text reports.
pub fn evaluate_run(cfg: &ExperimentConfig, mode: Mode, seed: u64) -> Result<ScoreReport> {
    let dhash = dataset_hash(&cfg.dataset_dir())?;
    let dir = cfg.run_dir(mode, seed);
    let path = dir.join(SCORES_FILE);
    let (scores, comments) = read_scores(&path)?;
    let chash = cfg.hash()?;
    expect_hash(&comments, "config_hash", &chash, &path)?;
    expect_hash(&comments, "dataset_hash", &dhash, &path)?;
    let mut report = compute_report(&scores)?;
    let (split, _) = load_dataset(cfg)?;
    report.counts.train_normal = split.train.len();
    report.config_hash = chash;
    report.dataset_hash = dhash;
    report.mode = mode.to_string();
    report.seed = Some(seed);
    let json = report.to_json()?;
    if fs::read_to_string(dir.join(REPORT_JSON)).ok().as_deref() != Some(json.as_str()) {
        fs::write(dir.join(REPORT_JSON), &json)?;
        fs::write(dir.join(REPORT_TEXT), format!("{report}\n"))?;
    }
    Ok(report)
}

/// Every stage for every configured mode and seed, then the summary table.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Summary> {
    generate(cfg)?;
    let mut dirs = Vec::new();
    for &mode in &cfg.modes {
        for &seed in &cfg.seeds {
            train_run(cfg, mode, seed)?;
            score_run(cfg, mode, seed)?;
            evaluate_run(cfg, mode, seed)?;
            dirs.push(cfg.run_dir(mode, seed));
        }
    }
    summarize(&dirs)
}
