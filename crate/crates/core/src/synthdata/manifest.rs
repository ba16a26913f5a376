//! CSV manifest + PNG image directory.
//!
//! `manifest.csv` has the header `filename,id,nuisance,class,aux1,aux2,role`;
//! `filename` is relative to the manifest's directory. Rows are written in
//! role order (train, familiar, pseudo, anomaly) so a round trip preserves
//! every list order.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchmarkSplit, LabeledSample, RelevantLabels, Role};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SPEC_FILE: &str = "benchmark.txt";
const IMAGE_DIR: &str = "images";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    filename: String,
    id: String,
    nuisance: usize,
    class: usize,
    aux1: usize,
    aux2: usize,
    role: String,
}

pub fn write_manifest(split: &BenchmarkSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join(IMAGE_DIR))?;
    let mut w = csv::Writer::from_path(dir.join(MANIFEST_FILE))?;
    for s in split.iter() {
        let filename = format!("{IMAGE_DIR}/{}.png", s.id);
        s.image.save_png(&dir.join(&filename))?;
        w.serialize(Row {
            filename,
            id: s.id.clone(),
            nuisance: s.nuisance,
            class: s.labels.class,
            aux1: s.labels.size,
            aux2: s.labels.jitter,
            role: s.role.as_str().to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a manifest written by [`write_manifest`] or by hand.
///
/// Row numbers in errors count data rows from 1.
pub fn read_manifest(dir: &Path) -> Result<BenchmarkSplit> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&path)?;
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    let mut size: Option<(usize, usize)> = None;
    for (i, rec) in r.deserialize::<Row>().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Manifest { row, message: e.to_string() })?;
        let role: Role = rec
            .role
            .parse()
            .map_err(|_| Error::Manifest { row, message: format!("unknown role {:?}", rec.role) })?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Manifest { row, message: format!("duplicate id {:?}", rec.id) });
        }
        let img_path = dir.join(&rec.filename);
        if !img_path.is_file() {
            return Err(Error::Manifest {
                row,
                message: format!("image file {} not found", img_path.display()),
            });
        }
        let image = ImageTensor::load_png(&img_path)
            .map_err(|e| Error::Manifest { row, message: format!("{}: {e}", rec.filename) })?;
        let dims = (image.height(), image.width());
        match size {
            None => size = Some(dims),
            Some(s) if s != dims => {
                return Err(Error::Manifest {
                    row,
                    message: format!("image is {}x{}, earlier rows are {}x{}", dims.0, dims.1, s.0, s.1),
                })
            }
            _ => {}
        }
        samples.push(LabeledSample {
            id: rec.id,
            nuisance: rec.nuisance,
            labels: RelevantLabels { class: rec.class, size: rec.aux1, jitter: rec.aux2 },
            role,
            image,
        });
    }
    Ok(BenchmarkSplit::from_samples(samples))
}
