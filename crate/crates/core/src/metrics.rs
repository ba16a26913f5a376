//! ROC-AUC and the three benchmark scores.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorer::ScoredSample;
use crate::synthdata::{Role, RoleCounts};

/// `P(pos > neg) + P(pos = neg) / 2` over all pairs, via midrank sums.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty(format!(
            "roc_auc needs both sides nonempty (got {} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("roc_auc: NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // ranks start at 1; tied runs share their midrank
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        let positives = all[i..=j].iter().filter(|e| e.1).count();
        rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let (p, n) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Anomaly vs familiar and pseudo.
    pub ad_score: f64,
    /// Pseudo vs familiar; 0.5 is ideal.
    pub pa_score: f64,
    /// Anomaly vs pseudo.
    pub ra_score: f64,
    pub counts: RoleCounts,
    pub config_hash: String,
    #[serde(default)]
    pub dataset_hash: String,
    #[serde(default)]
    pub mode: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ScoreReport {
    pub fn pa_gap(&self) -> f64 {
        (self.pa_score - 0.5).abs()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>8} {:>8} {:>10} {:>8}", "method", "AD", "PA", "|PA-0.5|", "RA")?;
        let name = if self.mode.is_empty() { "-" } else { &self.mode };
        writeln!(
            f,
            "{:<16} {:>8.3} {:>8.3} {:>10.3} {:>8.3}",
            name,
            self.ad_score,
            self.pa_score,
            self.pa_gap(),
            self.ra_score
        )?;
        write!(f, "counts: {}", self.counts)
    }
}

/// AD, PA and RA from scored test samples. Provenance fields are left empty.
pub fn compute_report(scored: &[ScoredSample]) -> Result<ScoreReport> {
    let by_role = |role: Role| -> Result<Vec<f64>> {
        let v: Vec<f64> = scored.iter().filter(|s| s.role == role).map(|s| s.score).collect();
        if v.is_empty() {
            return Err(Error::MissingRole(role.as_str()));
        }
        Ok(v)
    };
    let familiar = by_role(Role::TestFamiliar)?;
    let pseudo = by_role(Role::TestPseudo)?;
    let anomaly = by_role(Role::TestAnomaly)?;
    let normal: Vec<f64> = familiar.iter().chain(&pseudo).copied().collect();
    Ok(ScoreReport {
        ad_score: roc_auc(&anomaly, &normal)?,
        pa_score: roc_auc(&pseudo, &familiar)?,
        ra_score: roc_auc(&anomaly, &pseudo)?,
        counts: RoleCounts {
            train_normal: scored.iter().filter(|s| s.role == Role::TrainNormal).count(),
            test_familiar: familiar.len(),
            test_pseudo: pseudo.len(),
            test_anomaly: anomaly.len(),
        },
        config_hash: String::new(),
        dataset_hash: String::new(),
        mode: String::new(),
        seed: None,
    })
}
