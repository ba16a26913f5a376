use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use super::*;

fn labels(class: usize) -> RelevantLabels {
    RelevantLabels { class, size: 1, jitter: 4 }
}

fn small_spec(seed: u64) -> BenchmarkSpec {
    BenchmarkSpec { per_cell: 5, image_size: 16, seed, ..BenchmarkSpec::default() }
}

#[test]
fn render_is_deterministic() {
    let spec = AttributeSpec::default();
    let a = render_sample(&spec, &labels(2), 1, 42, 32).unwrap();
    let b = render_sample(&spec, &labels(2), 1, 42, 32).unwrap();
    assert_eq!(a, b);
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn glyph_has_visible_foreground() {
    let spec = AttributeSpec::default();
    let img = render_sample(&spec, &RelevantLabels { class: 0, size: 0, jitter: 0 }, 0, 0, 64).unwrap();
    // the left border column is background on every row
    let bg_like = |y: usize, x: usize| {
        let corner = img.pixel(y, 0);
        let p = img.pixel(y, x);
        (0..3).map(|c| (p[c] - corner[c]).abs()).fold(0.0f32, f32::max) < 0.12
    };
    let differing = (0..64).flat_map(|y| (0..64).map(move |x| (y, x))).filter(|&(y, x)| !bg_like(y, x)).count();
    assert!(differing as f64 >= 0.05 * 64.0 * 64.0, "only {differing} foreground pixels");
}

#[test]
fn out_of_range_labels_are_rejected() {
    let spec = AttributeSpec::default();
    assert!(render_sample(&spec, &labels(10), 0, 0, 32).is_err());
    assert!(render_sample(&spec, &labels(1), 4, 0, 32).is_err());
    assert!(render_sample(&spec, &RelevantLabels { class: 0, size: 3, jitter: 0 }, 0, 0, 32).is_err());
}

#[test]
fn nuisance_dominates_pixel_distance() {
    // same class across domains vs. different classes within a domain, 100 draws
    let spec = AttributeSpec::default();
    let mut rng = rand::rngs::StdRng::seed_from_u64(9);
    use rand::{Rng, SeedableRng};
    let (mut cross_domain, mut cross_class) = (0.0, 0.0);
    for _ in 0..100 {
        let class = rng.random_range(0..10);
        let other = (class + rng.random_range(1..10)) % 10;
        let (d1, d2) = (rng.random_range(0..4), rng.random_range(0..4));
        let d2 = if d1 == d2 { (d2 + 1) % 4 } else { d2 };
        let l = RelevantLabels { class, size: rng.random_range(0..3), jitter: rng.random_range(0..9) };
        let l_other = RelevantLabels { class: other, ..l };
        let a = render_sample(&spec, &l, d1, rng.random(), 32).unwrap();
        let b = render_sample(&spec, &l, d2, rng.random(), 32).unwrap();
        let c = render_sample(&spec, &l_other, d1, rng.random(), 32).unwrap();
        cross_domain += a.squared_distance(&b).sqrt();
        cross_class += a.squared_distance(&c).sqrt();
    }
    assert!(cross_domain > cross_class, "{cross_domain} vs {cross_class}");
}

#[test]
fn roles_follow_the_spec() {
    let spec = small_spec(3);
    let split = build_benchmark(&spec).unwrap();
    assert_eq!(split.len(), 4 * 10 * 5);
    assert!(split.anomaly.iter().all(|s| spec.true_anomaly_classes.contains(&s.labels.class)));
    assert!(split.pseudo.iter().all(|s| spec.pseudo_pairs.contains(&(s.nuisance, s.labels.class))));
    assert_eq!(split.anomaly.len(), 2 * 4 * 5);
    assert_eq!(split.pseudo.len(), 4 * 5);
    for s in split.train.iter().chain(&split.familiar) {
        assert!(spec.is_normal_cell(s.nuisance, s.labels.class));
    }
}

#[test]
fn degenerate_spec_splits_everything() {
    let spec = BenchmarkSpec {
        true_anomaly_classes: vec![],
        pseudo_pairs: vec![],
        per_cell: 20,
        image_size: 16,
        ..BenchmarkSpec::default()
    };
    let split = build_benchmark(&spec).unwrap();
    assert!(split.pseudo.is_empty() && split.anomaly.is_empty());
    assert_eq!(split.train.len(), 40 * 17);
    assert_eq!(split.familiar.len(), 40 * 3);
}

#[test]
fn overlapping_anomaly_and_pseudo_classes_are_rejected() {
    let spec = BenchmarkSpec { pseudo_pairs: vec![(0, 3)], ..small_spec(0) };
    assert!(spec.validate().is_err());
}

#[test]
fn domain_without_training_classes_is_rejected() {
    let spec = BenchmarkSpec {
        attributes: AttributeSpec { domains: 2, classes: 4, ..AttributeSpec::default() },
        true_anomaly_classes: vec![3],
        pseudo_pairs: vec![(0, 0), (0, 1), (0, 2)],
        ..small_spec(0)
    };
    let err = plan_benchmark(&spec).unwrap_err().to_string();
    assert!(err.contains("domain 0"), "{err}");
}

#[test]
fn cars3d_fixture_routes_pseudo_pairs_to_test() {
    let spec = fixtures::cars3d(2);
    let plan = plan_benchmark(&spec).unwrap();
    let hits: Vec<_> = plan.iter().filter(|p| p.nuisance == 0 && p.labels.class == 173).collect();
    assert_eq!(hits.len(), 2);
    assert!(hits.iter().all(|p| p.role == Role::TestPseudo));
    // model 78 is held out at azimuths 5 and 11 only
    for p in plan.iter().filter(|p| p.labels.class == 78) {
        let expected = if p.nuisance == 5 || p.nuisance == 11 { Role::TestPseudo } else { p.role };
        assert_eq!(p.role, expected);
        if p.nuisance != 5 && p.nuisance != 11 {
            assert!(matches!(p.role, Role::TrainNormal | Role::TestFamiliar));
        }
    }
}

#[test]
fn edges2shoes_fixture_layout() {
    let spec = fixtures::edges2shoes(10);
    let split = build_benchmark(&spec).unwrap();
    let pseudo: HashSet<_> = split.pseudo.iter().map(|s| (s.nuisance, s.labels.class)).collect();
    assert_eq!(pseudo, HashSet::from([(0, 1), (1, 0)]));
    assert!(split.anomaly.iter().all(|s| s.labels.class == 3));
    assert_eq!(split.anomaly.len(), 20);
    assert!(split.train.iter().all(|s| s.labels.class != 3 && (s.nuisance, s.labels.class) != (0, 1)));
}

#[test]
fn smallnorb_fixture_is_valid() {
    let spec = fixtures::smallnorb(1);
    spec.validate().unwrap();
    let plan = plan_benchmark(&spec).unwrap();
    assert_eq!(plan.iter().filter(|p| p.role == Role::TestPseudo).count(), 18);
}

#[test]
fn spec_text_round_trip() {
    let spec = BenchmarkSpec { seed: 17, train_fraction: 0.8, ..BenchmarkSpec::default() };
    assert_eq!(BenchmarkSpec::from_text(&spec.to_text()).unwrap(), spec);
    assert!(BenchmarkSpec::from_text("domains=4\nbogus=1\n").is_err());
    assert!(BenchmarkSpec::from_text("pseudo_pairs=1-2\n").is_err());
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BenchmarkSpec {
        attributes: AttributeSpec { domains: 2, classes: 5, ..AttributeSpec::default() },
        per_cell: 10,
        image_size: 16,
        true_anomaly_classes: vec![4],
        pseudo_pairs: vec![(0, 1)],
        ..BenchmarkSpec::default()
    };
    let split = build_benchmark(&spec).unwrap();
    assert_eq!(split.len(), 100);
    write_manifest(&split, dir.path()).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap(), split);
}

#[test]
fn manifest_rejects_unknown_role_and_missing_image() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    ImageTensor::filled(8, 8, [0.5; 3]).save_png(&dir.path().join("images/a.png")).unwrap();
    std::fs::write(
        dir.path().join(MANIFEST_FILE),
        "filename,id,nuisance,class,aux1,aux2,role\nimages/a.png,a,0,0,0,0,train_normal\nimages/a.png,b,0,1,0,0,weird\n",
    )
    .unwrap();
    let err = read_manifest(dir.path()).unwrap_err().to_string();
    assert!(err.contains("row 2") && err.contains("weird"), "{err}");

    std::fs::write(
        dir.path().join(MANIFEST_FILE),
        "filename,id,nuisance,class,aux1,aux2,role\nimages/a.png,a,0,0,0,0,train_normal\nimages/missing.png,b,0,1,0,0,test_anomaly\n",
    )
    .unwrap();
    let err = read_manifest(dir.path()).unwrap_err().to_string();
    assert!(err.contains("row 2") && err.contains("missing.png"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_is_a_leak_free_partition(seed in any::<u64>(), per_cell in 1usize..30, frac in 0.05f64..0.95) {
        let spec = BenchmarkSpec { per_cell, train_fraction: frac, seed, ..BenchmarkSpec::default() };
        let plan = plan_benchmark(&spec).unwrap();
        let ids: HashSet<_> = plan.iter().map(|p| &p.id).collect();
        prop_assert_eq!(ids.len(), plan.len());
        let mut per_cell_train: HashMap<(usize, usize), usize> = HashMap::new();
        for p in &plan {
            if p.role == Role::TrainNormal {
                prop_assert!(spec.is_normal_cell(p.nuisance, p.labels.class));
                *per_cell_train.entry((p.nuisance, p.labels.class)).or_default() += 1;
            }
        }
        let target = frac * per_cell as f64;
        for (cell, n) in per_cell_train {
            prop_assert!((n as f64 - target).abs() <= 1.0, "cell {:?}: {} vs {}", cell, n, target);
        }
        prop_assert_eq!(plan_benchmark(&spec).unwrap(), plan);
    }
}
