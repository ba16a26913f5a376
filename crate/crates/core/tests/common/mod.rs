#![allow(dead_code)]

use std::path::Path;

/// 2 domains x 4 classes at 16x16; trains in seconds.
pub const TOY_CONFIG: &str = "\
[dataset]
domains=2
classes=4
sizes=1
jitters=4
per_cell=12
image_size=16
anomaly_classes=3
pseudo_pairs=0:1,1:2
train_fraction=0.85
seed=0

[training]
epochs=3
domains_per_batch=2
samples_per_domain=8
generator_width=32
code_dim=16
lr_encoder=0.001
lr_generator=0.001

[scoring]
k=1

[repetitions]
seeds=0,1
modes=redpanda,simclr_global,raw_encoder
";

/// Writes the toy config with `[output] dir` pointing into `root`.
pub fn write_toy_config(root: &Path) -> std::path::PathBuf {
    let path = root.join("toy.ini");
    let text = format!("{TOY_CONFIG}\n[output]\ndir={}\n", root.join("out").display());
    std::fs::write(&path, text).unwrap();
    path
}
