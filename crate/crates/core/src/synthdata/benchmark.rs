use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{render_sample, BenchmarkSpec, BenchmarkSplit, LabeledSample, RelevantLabels, Role};
use crate::error::Result;

/// A sample's labels and role, before rendering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedSample {
    pub id: String,
    pub nuisance: usize,
    pub labels: RelevantLabels,
    pub role: Role,
    pub render_seed: u64,
}

fn cell_seed(seed: u64, nuisance: usize, class: usize) -> u64 {
    // splitmix-style mixing so neighbouring cells get unrelated streams
    let mut z = seed ^ ((nuisance as u64) << 32) ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Assigns every sample of the attribute grid to a role without rendering.
///
/// True-anomaly classes go to `test_anomaly`, pseudo pairs to `test_pseudo`,
/// and every other (nuisance, class) cell is shuffled and split
/// `round(train_fraction * per_cell)` / rest into train and familiar test.
pub fn plan_benchmark(spec: &BenchmarkSpec) -> Result<Vec<PlannedSample>> {
    spec.validate()?;
    let a = &spec.attributes;
    let n_train = ((spec.train_fraction * spec.per_cell as f64).round() as usize).min(spec.per_cell);
    let mut out = Vec::with_capacity(a.domains * a.classes * spec.per_cell);
    for nuisance in 0..a.domains {
        for class in 0..a.classes {
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(spec.seed, nuisance, class));
            let mut cell: Vec<PlannedSample> = (0..spec.per_cell)
                .map(|i| PlannedSample {
                    id: format!("n{nuisance:02}_c{class:03}_{i:04}"),
                    nuisance,
                    labels: RelevantLabels {
                        class,
                        size: rng.random_range(0..a.sizes),
                        jitter: rng.random_range(0..a.jitters),
                    },
                    role: Role::TrainNormal,
                    render_seed: rng.random(),
                })
                .collect();
            match spec.cell_role(nuisance, class) {
                Some(role) => cell.iter_mut().for_each(|s| s.role = role),
                None => {
                    let mut order: Vec<usize> = (0..cell.len()).collect();
                    order.shuffle(&mut rng);
                    for &i in &order[n_train..] {
                        cell[i].role = Role::TestFamiliar;
                    }
                }
            }
            out.extend(cell);
        }
    }
    Ok(out)
}

/// Renders the planned samples and groups them by role.
pub fn build_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkSplit> {
    let plan = plan_benchmark(spec)?;
    let samples = plan
        .into_iter()
        .map(|p| {
            let image = render_sample(&spec.attributes, &p.labels, p.nuisance, p.render_seed, spec.image_size)?;
            Ok(LabeledSample { id: p.id, nuisance: p.nuisance, labels: p.labels, role: p.role, image })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkSplit::from_samples(samples))
}
