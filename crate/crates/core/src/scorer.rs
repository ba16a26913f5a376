//! Exhaustive kNN anomaly scoring over encoder codes.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::synthdata::{LabeledSample, Role};

/// Train-normal codes with their sample ids. Rows are unit-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeBank {
    dim: usize,
    codes: Vec<f32>,
    ids: Vec<String>,
}

impl CodeBank {
    pub fn new(dim: usize, codes: Vec<f32>, ids: Vec<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("code bank has no rows".into()));
        }
        if dim == 0 || codes.len() != dim * ids.len() {
            return Err(Error::Shape(format!("code bank: {} values for {} rows of dim {dim}", codes.len(), ids.len())));
        }
        Ok(Self { dim, codes, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.codes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Encodes every training sample in eval mode.
pub fn build_bank(encoder: &Encoder<f32>, train: &[LabeledSample]) -> Result<CodeBank> {
    if train.is_empty() {
        return Err(Error::Empty("cannot build a code bank from an empty training split".into()));
    }
    let images: Vec<_> = train.iter().map(|s| &s.image).collect();
    let codes = encoder.encode(&images)?;
    CodeBank::new(encoder.code_dim(), codes.into_data(), train.iter().map(|s| s.id.clone()).collect())
}

/// Cosine distance of unit vectors as `||a - b||^2 / 2`, clamped to `[0, 2]`.
///
/// Exactly 0 for identical rows.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    (0.5 * ss).clamp(0.0, 2.0)
}

/// Mean cosine distance to the `k` nearest bank rows; higher is more anomalous.
pub fn anomaly_score(bank: &CodeBank, code: &[f32], k: usize) -> Result<f64> {
    if k == 0 || k > bank.len() {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={}", bank.len())));
    }
    if code.len() != bank.dim {
        return Err(Error::Shape(format!("query has dim {}, bank has dim {}", code.len(), bank.dim)));
    }
    let mut dists: Vec<f64> = (0..bank.len()).map(|i| cosine_distance(bank.row(i), code)).collect();
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    let nearest = &mut dists[..k];
    nearest.sort_unstable_by(f64::total_cmp);
    Ok(nearest.iter().sum::<f64>() / k as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub id: String,
    pub role: Role,
    pub score: f64,
}

/// Scores every sample in `test`, preserving its order.
pub fn score_split<'a>(
    encoder: &Encoder<f32>,
    bank: &CodeBank,
    test: impl IntoIterator<Item = &'a LabeledSample>,
    k: usize,
) -> Result<Vec<ScoredSample>> {
    let test: Vec<&LabeledSample> = test.into_iter().collect();
    if test.is_empty() {
        return Ok(Vec::new());
    }
    let images: Vec<_> = test.iter().map(|s| &s.image).collect();
    let codes = encoder.encode(&images)?;
    test.iter()
        .zip(codes.data().chunks(bank.dim))
        .map(|(s, code)| Ok(ScoredSample { id: s.id.clone(), role: s.role, score: anomaly_score(bank, code, k)? }))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    id: String,
    role: String,
    score: f64,
}

/// Writes `id,role,score` rows after `# key=value` comment lines.
pub fn write_scores(path: &Path, scores: &[ScoredSample], comments: &[(&str, String)]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for (k, v) in comments {
        writeln!(file, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    for s in scores {
        w.serialize(ScoreRow { id: s.id.clone(), role: s.role.as_str().into(), score: s.score })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a score file; returns its rows and `# key=value` comments.
pub fn read_scores(path: &Path) -> Result<(Vec<ScoredSample>, Vec<(String, String)>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut comments = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(std::fs::File::open(path)?).lines() {
        let line = line?;
        match line.strip_prefix('#') {
            Some(c) => {
                if let Some((k, v)) = c.trim().split_once('=') {
                    comments.push((k.trim().to_string(), v.trim().to_string()));
                }
            }
            None => {
                body.push_str(&line);
                body.push('\n');
            }
        }
    }
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<ScoreRow>().enumerate() {
        let row = row.map_err(|e| Error::Manifest { row: i + 1, message: e.to_string() })?;
        let role = row
            .role
            .parse()
            .map_err(|_| Error::Manifest { row: i + 1, message: format!("unknown role {:?}", row.role) })?;
        out.push(ScoredSample { id: row.id, role, score: row.score });
    }
    Ok((out, comments))
}
