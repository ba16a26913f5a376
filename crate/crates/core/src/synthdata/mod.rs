//! Multi-attribute synthetic datasets and the normal / pseudo-anomaly /
//! true-anomaly benchmark carved out of them.

mod benchmark;
pub mod fixtures;
mod manifest;
mod render;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub use benchmark::{build_benchmark, plan_benchmark, PlannedSample};
pub use manifest::{read_manifest, write_manifest, MANIFEST_FILE, SPEC_FILE};
pub use render::render_sample;

/// Ranges of the labelled attributes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeSpec {
    /// |N|, number of nuisance domains (rendering styles).
    pub domains: usize,
    /// |A|, number of primary relevant classes (glyph shapes).
    pub classes: usize,
    /// Number of glyph size levels (secondary relevant attribute `aux1`).
    pub sizes: usize,
    /// Number of glyph position offsets (secondary relevant attribute `aux2`).
    pub jitters: usize,
}

impl Default for AttributeSpec {
    fn default() -> Self {
        Self { domains: 4, classes: 10, sizes: 3, jitters: 9 }
    }
}

impl AttributeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 nuisance domains, got {}", self.domains)));
        }
        if self.classes < 4 {
            return Err(Error::InvalidArgument(format!("need at least 4 relevant classes, got {}", self.classes)));
        }
        if self.sizes == 0 || self.sizes > 4 || self.jitters == 0 {
            return Err(Error::InvalidArgument(format!(
                "sizes must be in 1..=4 and jitters >= 1, got {} and {}",
                self.sizes, self.jitters
            )));
        }
        Ok(())
    }

    pub fn check_labels(&self, labels: &RelevantLabels, nuisance: usize) -> Result<()> {
        if nuisance >= self.domains
            || labels.class >= self.classes
            || labels.size >= self.sizes
            || labels.jitter >= self.jitters
        {
            return Err(Error::InvalidArgument(format!(
                "labels (nuisance {nuisance}, class {}, size {}, jitter {}) outside ranges {self:?}",
                labels.class, labels.size, labels.jitter
            )));
        }
        Ok(())
    }
}

/// Relevant attribute tuple (a_i, b_i, c_i).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RelevantLabels {
    pub class: usize,
    pub size: usize,
    pub jitter: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    TrainNormal,
    TestFamiliar,
    TestPseudo,
    TestAnomaly,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::TrainNormal, Role::TestFamiliar, Role::TestPseudo, Role::TestAnomaly];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::TrainNormal => "train_normal",
            Role::TestFamiliar => "test_familiar",
            Role::TestPseudo => "test_pseudo",
            Role::TestAnomaly => "test_anomaly",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown role {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub nuisance: usize,
    pub labels: RelevantLabels,
    pub role: Role,
    pub image: ImageTensor,
}

impl LabeledSample {
    /// Anomaly label y_i.
    pub fn is_anomaly(&self) -> bool {
        self.role == Role::TestAnomaly
    }
}

/// How the benchmark is carved from the attribute grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub attributes: AttributeSpec,
    pub per_cell: usize,
    pub image_size: usize,
    pub true_anomaly_classes: Vec<usize>,
    /// `(nuisance domain, relevant class)` combinations held out of training.
    pub pseudo_pairs: Vec<(usize, usize)>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    /// 4 domains x 10 classes x 60 samples per cell at 64x64, two
    /// true-anomaly classes and one pseudo-anomaly class per domain.
    fn default() -> Self {
        Self {
            attributes: AttributeSpec::default(),
            per_cell: 60,
            image_size: 64,
            true_anomaly_classes: vec![3, 7],
            pseudo_pairs: vec![(0, 5), (1, 0), (2, 8), (3, 2)],
            train_fraction: 0.85,
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        self.attributes.validate()?;
        let a = &self.attributes;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("train_fraction {} not in (0, 1)", self.train_fraction)));
        }
        if self.per_cell == 0 {
            return Err(Error::InvalidArgument("per_cell must be positive".into()));
        }
        if self.image_size < 16 || self.image_size % 16 != 0 {
            return Err(Error::InvalidArgument(format!(
                "image_size {} must be a positive multiple of 16",
                self.image_size
            )));
        }
        if let Some(&c) = self.true_anomaly_classes.iter().find(|&&c| c >= a.classes) {
            return Err(Error::InvalidArgument(format!("anomaly class {c} out of range")));
        }
        for &(n, c) in &self.pseudo_pairs {
            if n >= a.domains || c >= a.classes {
                return Err(Error::InvalidArgument(format!("pseudo pair ({n}, {c}) out of range")));
            }
            if self.true_anomaly_classes.contains(&c) {
                return Err(Error::InvalidArgument(format!(
                    "class {c} is both a true-anomaly class and part of pseudo pair ({n}, {c})"
                )));
            }
        }
        for n in 0..a.domains {
            let trainable = (0..a.classes).any(|c| self.is_normal_cell(n, c));
            if !trainable {
                return Err(Error::InvalidArgument(format!("domain {n} has no training classes left")));
            }
        }
        Ok(())
    }

    pub fn is_normal_cell(&self, nuisance: usize, class: usize) -> bool {
        !self.true_anomaly_classes.contains(&class) && !self.pseudo_pairs.contains(&(nuisance, class))
    }

    /// Role a sample of the given cell gets before the train/test split.
    pub fn cell_role(&self, nuisance: usize, class: usize) -> Option<Role> {
        if self.true_anomaly_classes.contains(&class) {
            Some(Role::TestAnomaly)
        } else if self.pseudo_pairs.contains(&(nuisance, class)) {
            Some(Role::TestPseudo)
        } else {
            None
        }
    }

    /// Flat `key=value` text form.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let pairs = self.pseudo_pairs.iter().map(|(n, c)| format!("{n}:{c}")).collect::<Vec<_>>().join(",");
        format!(
            "domains={}\nclasses={}\nsizes={}\njitters={}\nper_cell={}\nimage_size={}\nanomaly_classes={}\npseudo_pairs={}\ntrain_fraction={}\nseed={}\n",
            self.attributes.domains,
            self.attributes.classes,
            self.attributes.sizes,
            self.attributes.jitters,
            self.per_cell,
            self.image_size,
            join(&self.true_anomaly_classes),
            pairs,
            self.train_fraction,
            self.seed
        )
    }

    /// Parses the `key=value` form; missing keys take their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let props = ini.general_section();
        for (k, _) in props.iter() {
            if !SPEC_KEYS.contains(&k) {
                return Err(Error::Config(format!("unknown benchmark key {k:?}")));
            }
        }
        Self::from_pairs(|k| props.get(k))
    }

    pub(crate) fn from_pairs<'a>(get: impl Fn(&str) -> Option<&'a str>) -> Result<Self> {
        let mut spec = Self::default();
        let num = |k: &str, v: &str| -> Result<usize> {
            v.trim().parse().map_err(|_| Error::Config(format!("{k}: expected an integer, got {v:?}")))
        };
        if let Some(v) = get("domains") {
            spec.attributes.domains = num("domains", v)?;
        }
        if let Some(v) = get("classes") {
            spec.attributes.classes = num("classes", v)?;
        }
        if let Some(v) = get("sizes") {
            spec.attributes.sizes = num("sizes", v)?;
        }
        if let Some(v) = get("jitters") {
            spec.attributes.jitters = num("jitters", v)?;
        }
        if let Some(v) = get("per_cell") {
            spec.per_cell = num("per_cell", v)?;
        }
        if let Some(v) = get("image_size") {
            spec.image_size = num("image_size", v)?;
        }
        if let Some(v) = get("anomaly_classes") {
            spec.true_anomaly_classes = parse_list(v, |s| num("anomaly_classes", s))?;
        }
        if let Some(v) = get("pseudo_pairs") {
            spec.pseudo_pairs = parse_list(v, |s| {
                let (n, c) = s
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("pseudo_pairs: expected domain:class, got {s:?}")))?;
                Ok((num("pseudo_pairs", n)?, num("pseudo_pairs", c)?))
            })?;
        }
        if let Some(v) = get("train_fraction") {
            spec.train_fraction = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("train_fraction: expected a number, got {v:?}")))?;
        }
        if let Some(v) = get("seed") {
            spec.seed =
                v.trim().parse().map_err(|_| Error::Config(format!("seed: expected an integer, got {v:?}")))?;
        }
        Ok(spec)
    }
}

pub(crate) const SPEC_KEYS: [&str; 10] = [
    "domains",
    "classes",
    "sizes",
    "jitters",
    "per_cell",
    "image_size",
    "anomaly_classes",
    "pseudo_pairs",
    "train_fraction",
    "seed",
];

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

/// The four role lists of a benchmark.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BenchmarkSplit {
    pub train: Vec<LabeledSample>,
    pub familiar: Vec<LabeledSample>,
    pub pseudo: Vec<LabeledSample>,
    pub anomaly: Vec<LabeledSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct RoleCounts {
    pub train_normal: usize,
    pub test_familiar: usize,
    pub test_pseudo: usize,
    pub test_anomaly: usize,
}

impl BenchmarkSplit {
    pub fn from_samples(samples: impl IntoIterator<Item = LabeledSample>) -> Self {
        let mut split = Self::default();
        for s in samples {
            split.list_mut(s.role).push(s);
        }
        split
    }

    pub fn list(&self, role: Role) -> &[LabeledSample] {
        match role {
            Role::TrainNormal => &self.train,
            Role::TestFamiliar => &self.familiar,
            Role::TestPseudo => &self.pseudo,
            Role::TestAnomaly => &self.anomaly,
        }
    }

    fn list_mut(&mut self, role: Role) -> &mut Vec<LabeledSample> {
        match role {
            Role::TrainNormal => &mut self.train,
            Role::TestFamiliar => &mut self.familiar,
            Role::TestPseudo => &mut self.pseudo,
            Role::TestAnomaly => &mut self.anomaly,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledSample> {
        Role::ALL.into_iter().flat_map(move |r| self.list(r).iter())
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &LabeledSample> {
        self.familiar.iter().chain(&self.pseudo).chain(&self.anomaly)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.familiar.len() + self.pseudo.len() + self.anomaly.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> RoleCounts {
        RoleCounts {
            train_normal: self.train.len(),
            test_familiar: self.familiar.len(),
            test_pseudo: self.pseudo.len(),
            test_anomaly: self.anomaly.len(),
        }
    }

    /// Number of distinct nuisance domains among the training samples.
    pub fn train_domains(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.train.iter().map(|s| s.nuisance).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.iter().next().map(|s| (s.image.height(), s.image.width()))
    }

    /// Largest nuisance label plus one.
    pub fn domain_count(&self) -> usize {
        self.iter().map(|s| s.nuisance + 1).max().unwrap_or(0)
    }
}

impl fmt::Display for RoleCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "train_normal={} test_familiar={} test_pseudo={} test_anomaly={}",
            self.train_normal, self.test_familiar, self.test_pseudo, self.test_anomaly
        )
    }
}

#[cfg(test)]
mod tests;
