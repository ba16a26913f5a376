use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::augment::AugmentPolicy;
use crate::error::{Error, Result};
use crate::model::{Mode, TrainingConfig};
use crate::synthdata::{BenchmarkSpec, SPEC_KEYS};

/// Overrides `[output] dir` when set.
pub const OUTPUT_ROOT_ENV: &str = "REDPANDA_OUTPUT_ROOT";

const TRAINING_KEYS: [&str; 14] = [
    "tau",
    "rec_weight",
    "aug_weight",
    "epochs",
    "domains_per_batch",
    "samples_per_domain",
    "lr_encoder",
    "lr_generator",
    "code_dim",
    "generator_width",
    "checkpoint_every",
    "two_views",
    "augment",
    "perceptual_seed",
];

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic(BenchmarkSpec),
    /// Directory holding an existing `manifest.csv`.
    Manifest(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Mode and seed are taken per run, not from here.
    pub training: TrainingConfig,
    pub k: usize,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(BenchmarkSpec::default()),
            training: TrainingConfig::default(),
            k: 1,
            output_dir: PathBuf::from("redpanda-out"),
            seeds: vec![0, 1, 2],
            modes: Mode::ALL.to_vec(),
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(section: &str, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(section, key, s)).collect()
}

fn augment_name(p: &AugmentPolicy) -> Result<&'static str> {
    if *p == AugmentPolicy::standard() {
        Ok("standard")
    } else if *p == AugmentPolicy::blur_only() {
        Ok("blur_only")
    } else {
        Err(Error::Config("only the standard and blur_only augmentation presets can be serialized".into()))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Parses INI text with `[dataset]`, `[training]`, `[scoring]`,
    /// `[output]` and `[repetitions]` sections; absent keys keep defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            let name = section.unwrap_or("");
            let allowed: &[&str] = match name {
                "dataset" => &["manifest"],
                "training" => &TRAINING_KEYS,
                "scoring" => &["k"],
                "output" => &["dir"],
                "repetitions" => &["seeds", "modes"],
                "" if props.is_empty() => &[],
                other => return Err(Error::Config(format!("unknown section [{other}]"))),
            };
            for (k, _) in props.iter() {
                if !allowed.contains(&k) && !(name == "dataset" && SPEC_KEYS.contains(&k)) {
                    return Err(Error::Config(format!("unknown key {k:?} in [{name}]")));
                }
            }
        }
        if let Some(d) = ini.section(Some("dataset")) {
            if let Some(m) = d.get("manifest") {
                if d.iter().count() > 1 {
                    return Err(Error::Config("[dataset] manifest excludes synthetic benchmark keys".into()));
                }
                cfg.dataset = DatasetSource::Manifest(PathBuf::from(m.trim()));
            } else {
                let spec = BenchmarkSpec::from_pairs(|k| d.get(k))?;
                spec.validate()?;
                cfg.dataset = DatasetSource::Synthetic(spec);
            }
        }
        if let Some(t) = ini.section(Some("training")) {
            let c = &mut cfg.training;
            let s = "training";
            for (k, v) in t.iter() {
                match k {
                    "tau" => c.tau = parse(s, k, v)?,
                    "rec_weight" => c.rec_weight = parse(s, k, v)?,
                    "aug_weight" => c.aug_weight = parse(s, k, v)?,
                    "epochs" => c.epochs = parse(s, k, v)?,
                    "domains_per_batch" => c.domains_per_batch = parse(s, k, v)?,
                    "samples_per_domain" => c.samples_per_domain = parse(s, k, v)?,
                    "lr_encoder" => c.lr_encoder = parse(s, k, v)?,
                    "lr_generator" => c.lr_generator = parse(s, k, v)?,
                    "code_dim" => c.code_dim = parse(s, k, v)?,
                    "generator_width" => c.generator_width = parse(s, k, v)?,
                    "checkpoint_every" => c.checkpoint_every = parse(s, k, v)?,
                    "two_views" => c.two_views = parse(s, k, v)?,
                    "perceptual_seed" => c.perceptual_seed = parse(s, k, v)?,
                    "augment" => {
                        c.augment = match v.trim() {
                            "standard" => AugmentPolicy::standard(),
                            "blur_only" => AugmentPolicy::blur_only(),
                            other => {
                                return Err(Error::Config(format!(
                                    "[training] augment: expected standard or blur_only, got {other:?}"
                                )))
                            }
                        }
                    }
                    _ => unreachable!("keys were checked above"),
                }
            }
            c.validate()?;
        }
        if let Some(v) = ini.section(Some("scoring")).and_then(|s| s.get("k")) {
            cfg.k = parse("scoring", "k", v)?;
            if cfg.k == 0 {
                return Err(Error::Config("[scoring] k must be at least 1".into()));
            }
        }
        if let Some(v) = ini.section(Some("output")).and_then(|s| s.get("dir")) {
            cfg.output_dir = PathBuf::from(v.trim());
        }
        if let Some(r) = ini.section(Some("repetitions")) {
            if let Some(v) = r.get("seeds") {
                cfg.seeds = parse_list("repetitions", "seeds", v)?;
            }
            if let Some(v) = r.get("modes") {
                cfg.modes = parse_list("repetitions", "modes", v)?;
            }
        }
        if cfg.seeds.is_empty() || cfg.modes.is_empty() {
            return Err(Error::Config("[repetitions] seeds and modes must be nonempty".into()));
        }
        Ok(cfg)
    }

    /// Canonical INI text; parses back to an equal config.
    pub fn to_text(&self) -> Result<String> {
        let mut out = self.hashed_text()?;
        let join = |v: Vec<String>| v.join(",");
        writeln!(out, "\n[output]\ndir={}", self.output_dir.display()).unwrap();
        writeln!(
            out,
            "\n[repetitions]\nseeds={}\nmodes={}",
            join(self.seeds.iter().map(|s| s.to_string()).collect()),
            join(self.modes.iter().map(|m| m.to_string()).collect())
        )
        .unwrap();
        Ok(out)
    }

    /// The sections that determine every artifact's content.
    fn hashed_text(&self) -> Result<String> {
        let mut out = String::from("[dataset]\n");
        match &self.dataset {
            DatasetSource::Synthetic(spec) => out.push_str(&spec.to_text()),
            DatasetSource::Manifest(p) => writeln!(out, "manifest={}", p.display()).unwrap(),
        }
        let t = &self.training;
        writeln!(
            out,
            "\n[training]\ntau={}\nrec_weight={}\naug_weight={}\nepochs={}\ndomains_per_batch={}\nsamples_per_domain={}\nlr_encoder={}\nlr_generator={}\ncode_dim={}\ngenerator_width={}\ncheckpoint_every={}\ntwo_views={}\naugment={}\nperceptual_seed={}",
            t.tau,
            t.rec_weight,
            t.aug_weight,
            t.epochs,
            t.domains_per_batch,
            t.samples_per_domain,
            t.lr_encoder,
            t.lr_generator,
            t.code_dim,
            t.generator_width,
            t.checkpoint_every,
            t.two_views,
            augment_name(&t.augment)?,
            t.perceptual_seed
        )
        .unwrap();
        writeln!(out, "\n[scoring]\nk={}", self.k).unwrap();
        Ok(out)
    }

    /// SHA-256 of the dataset, training and scoring sections.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.hashed_text()?.as_bytes())))
    }

    /// `[output] dir`, or the environment override.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        match &self.dataset {
            DatasetSource::Manifest(p) => p.clone(),
            DatasetSource::Synthetic(_) => self.output_root().join("dataset"),
        }
    }

    pub fn run_dir(&self, mode: Mode, seed: u64) -> PathBuf {
        self.output_root().join("runs").join(format!("{mode}-seed{seed}"))
    }

    /// Training settings for one run.
    pub fn training_for(&self, mode: Mode, seed: u64) -> TrainingConfig {
        TrainingConfig { mode, seed, ..self.training.clone() }
    }
}
