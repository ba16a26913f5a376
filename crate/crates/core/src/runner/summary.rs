use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use super::REPORT_JSON;
use crate::error::{Error, Result};
use crate::metrics::ScoreReport;

/// Mean and sample standard deviation (`n - 1`; 0 for a single value).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSummary {
    pub mode: String,
    pub seeds: Vec<u64>,
    pub ad: MetricSummary,
    pub pa: MetricSummary,
    pub pa_gap: MetricSummary,
    pub ra: MetricSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub dataset_hash: String,
    pub rows: Vec<ModeSummary>,
}

impl Summary {
    pub fn row(&self, mode: &str) -> Option<&ModeSummary> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,n,ad_mean,ad_std,pa_mean,pa_std,pa_gap_mean,pa_gap_std,ra_mean,ra_std\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.mode,
                r.seeds.len(),
                r.ad.mean,
                r.ad.std,
                r.pa.mean,
                r.pa.std,
                r.pa_gap.mean,
                r.pa_gap.std,
                r.ra.mean,
                r.ra.std
            ));
        }
        out
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14} {:>2}  {:<15} {:<15} {:<15} {:<15}",
            "method", "n", "AD", "PA", "|PA-0.5|", "RA"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<14} {:>2}  {:<15} {:<15} {:<15} {:<15}",
                r.mode,
                r.seeds.len(),
                r.ad.to_string(),
                r.pa.to_string(),
                r.pa_gap.to_string(),
                r.ra.to_string()
            )?;
        }
        Ok(())
    }
}

/// Run directories holding `report.json`; an output root expands to its `runs/*`.
fn collect_reports(dirs: &[PathBuf]) -> Result<Vec<(PathBuf, ScoreReport)>> {
    let mut out = Vec::new();
    for dir in dirs {
        let direct = dir.join(REPORT_JSON);
        let candidates: Vec<PathBuf> = if direct.is_file() {
            vec![direct]
        } else if dir.join("runs").is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(dir.join("runs"))?
                .filter_map(|e| e.ok().map(|e| e.path().join(REPORT_JSON)))
                .filter(|p| p.is_file())
                .collect();
            found.sort();
            found
        } else {
            return Err(Error::MissingArtifact(direct));
        };
        for path in candidates {
            let report = ScoreReport::from_json(&std::fs::read_to_string(&path)?)?;
            out.push((path, report));
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("no reports found".into()));
    }
    Ok(out)
}

/// Per-mode mean ± std of every metric across the given runs.
pub fn summarize(dirs: &[PathBuf]) -> Result<Summary> {
    let reports = collect_reports(dirs)?;
    let dataset_hash = reports[0].1.dataset_hash.clone();
    if let Some((path, r)) = reports.iter().find(|(_, r)| r.dataset_hash != dataset_hash) {
        return Err(Error::HashMismatch(format!(
            "{} was computed on dataset {}, {} on {}",
            path.display(),
            r.dataset_hash,
            reports[0].0.display(),
            dataset_hash
        )));
    }
    let mut by_mode: BTreeMap<String, Vec<&ScoreReport>> = BTreeMap::new();
    for (_, r) in &reports {
        by_mode.entry(r.mode.clone()).or_default().push(r);
    }
    let rows = by_mode
        .into_iter()
        .map(|(mode, rs)| {
            let m = |f: fn(&ScoreReport) -> f64| MetricSummary::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            ModeSummary {
                mode,
                seeds: rs.iter().filter_map(|r| r.seed).collect(),
                ad: m(|r| r.ad_score),
                pa: m(|r| r.pa_score),
                pa_gap: m(|r| r.pa_gap()),
                ra: m(|r| r.ra_score),
            }
        })
        .collect();
    Ok(Summary { dataset_hash, rows })
}

