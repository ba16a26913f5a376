//! Pseudo-anomaly selections of the public multi-attribute benchmarks,
//! re-expressed over abstract (domain, class) indices so the same
//! benchmark machinery can carve synthetic stand-ins with identical
//! structure.

use super::{AttributeSpec, BenchmarkSpec};

/// Cars3D: (azimuth, car model) pairs. Azimuths 5 and 11 share model 78.
pub const CARS3D_PSEUDO_PAIRS: [(usize, usize); 24] = [
    (0, 173),
    (1, 16),
    (2, 75),
    (3, 23),
    (4, 44),
    (5, 78),
    (6, 108),
    (7, 7),
    (8, 167),
    (9, 182),
    (10, 99),
    (11, 78),
    (12, 48),
    (13, 66),
    (14, 32),
    (15, 153),
    (16, 128),
    (17, 120),
    (18, 38),
    (19, 172),
    (20, 106),
    (21, 4),
    (22, 175),
    (23, 111),
];
pub const CARS3D_AZIMUTHS: usize = 24;
pub const CARS3D_MODELS: usize = 183;
/// The five true-anomaly models are not listed with the selection; these
/// are a fixed choice disjoint from every pseudo pair.
pub const CARS3D_ANOMALY_MODELS: [usize; 5] = [0, 50, 100, 150, 180];

/// SmallNORB: (azimuth, object instance) pairs.
pub const SMALLNORB_PSEUDO_PAIRS: [(usize, usize); 18] = [
    (0, 44),
    (1, 17),
    (2, 9),
    (3, 25),
    (4, 48),
    (5, 20),
    (6, 12),
    (7, 44),
    (8, 8),
    (9, 38),
    (10, 35),
    (11, 12),
    (12, 24),
    (13, 35),
    (14, 29),
    (15, 23),
    (16, 41),
    (17, 43),
];
pub const SMALLNORB_AZIMUTHS: usize = 18;
pub const SMALLNORB_OBJECTS: usize = 50;
/// One object per category (categories are blocks of ten instances).
pub const SMALLNORB_ANOMALY_OBJECTS: [usize; 5] = [1, 11, 21, 31, 42];

pub const EDGES2SHOES_DOMAINS: [&str; 2] = ["photo", "sketch"];
pub const EDGES2SHOES_CLASSES: [&str; 4] = ["boots", "sandals", "shoes", "slippers"];
/// Photos of sandals and sketches of boots.
pub const EDGES2SHOES_PSEUDO_PAIRS: [(usize, usize); 2] = [(0, 1), (1, 0)];
pub const EDGES2SHOES_ANOMALY_CLASSES: [usize; 1] = [3];

fn spec(domains: usize, classes: usize, pairs: &[(usize, usize)], anomalies: &[usize], per_cell: usize) -> BenchmarkSpec {
    BenchmarkSpec {
        attributes: AttributeSpec { domains, classes, ..AttributeSpec::default() },
        per_cell,
        image_size: 32,
        true_anomaly_classes: anomalies.to_vec(),
        pseudo_pairs: pairs.to_vec(),
        train_fraction: 0.85,
        seed: 0,
    }
}

pub fn cars3d(per_cell: usize) -> BenchmarkSpec {
    spec(CARS3D_AZIMUTHS, CARS3D_MODELS, &CARS3D_PSEUDO_PAIRS, &CARS3D_ANOMALY_MODELS, per_cell)
}

pub fn smallnorb(per_cell: usize) -> BenchmarkSpec {
    spec(SMALLNORB_AZIMUTHS, SMALLNORB_OBJECTS, &SMALLNORB_PSEUDO_PAIRS, &SMALLNORB_ANOMALY_OBJECTS, per_cell)
}

pub fn edges2shoes(per_cell: usize) -> BenchmarkSpec {
    spec(2, 4, &EDGES2SHOES_PSEUDO_PAIRS, &EDGES2SHOES_ANOMALY_CLASSES, per_cell)
}
