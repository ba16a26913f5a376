use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::image::ImageTensor;
use crate::numerics::{gradcheck, Graph, Tensor};
use crate::synthdata::{build_benchmark, AttributeSpec, BenchmarkSpec, BenchmarkSplit};

fn unit_rows(b: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut data: Vec<f64> = (0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    for row in data.chunks_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    Tensor::new(&[b, d], data).unwrap()
}

fn eval_loss(f: impl FnOnce(&mut Graph<f64>) -> crate::Result<crate::numerics::Var>) -> f64 {
    let mut g = Graph::new();
    let v = f(&mut g).unwrap();
    g.value(v).item().unwrap()
}

fn per_domain(z: &Tensor<f64>, zp: &Tensor<f64>, n: &[usize], tau: f64) -> f64 {
    eval_loss(|g| {
        let (a, b) = (g.constant(z.clone()), g.constant(zp.clone()));
        contrastive_per_domain_loss(g, a, b, n, tau)
    })
}

fn global(z: &Tensor<f64>, zp: &Tensor<f64>, tau: f64) -> f64 {
    eval_loss(|g| {
        let (a, b) = (g.constant(z.clone()), g.constant(zp.clone()));
        global_contrastive_loss(g, a, b, tau)
    })
}

/// Scalar evaluation of the per-anchor formula.
fn formula(z: &[[f64; 2]], zp: &[[f64; 2]], n: &[usize], tau: f64, per_domain: bool) -> f64 {
    let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
    let mut total = 0.0;
    for i in 0..z.len() {
        let pos = (dot(z[i], zp[i]) / tau).exp();
        let mut denom = pos;
        for j in 0..z.len() {
            if j != i && (!per_domain || n[j] == n[i]) {
                denom += (dot(z[i], z[j]) / tau).exp();
            }
        }
        total += -(pos / denom).ln();
    }
    total / z.len() as f64
}

#[test]
fn uniform_codes_give_log_candidate_count() {
    let z = Tensor::from_fn(&[4, 3], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
    let loss = per_domain(&z, &z, &[2, 2, 2, 2], 0.1);
    assert!((loss - 4f64.ln()).abs() < 1e-9, "{loss}");
    let loss = global(&z, &z, 0.1);
    assert!((loss - 4f64.ln()).abs() < 1e-9);
}

#[test]
fn singleton_domain_contributes_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = unit_rows(3, 5, &mut rng);
    let zp = unit_rows(3, 5, &mut rng);
    let mut g = Graph::new();
    let (a, b) = (g.constant(z), g.constant(zp));
    let terms = contrastive_terms(&mut g, a, b, Some(&[0, 1, 1]), 0.1).unwrap();
    assert_eq!(g.value(terms).data()[0], 0.0);
    assert!(g.value(terms).data()[1] > 0.0);
}

#[test]
fn two_domain_codes_match_scalar_formula() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = [[1.0, 0.0], [0.0, 1.0], [s, s], [-s, s]];
    let zp = [[0.6, 0.8], [0.8, 0.6], [1.0, 0.0], [0.0, -1.0]];
    let n = [0, 0, 1, 1];
    let tz = Tensor::new(&[4, 2], z.concat()).unwrap();
    let tzp = Tensor::new(&[4, 2], zp.concat()).unwrap();
    let ours = per_domain(&tz, &tzp, &n, 0.1);
    assert!((ours - formula(&z, &zp, &n, 0.1, true)).abs() < 1e-10);
    let ours = global(&tz, &tzp, 0.1);
    let oracle = formula(&z, &zp, &n, 0.1, false);
    assert!((ours - oracle).abs() < 1e-10);
    assert!((ours - per_domain(&tz, &tzp, &n, 0.1)).abs() > 1e-3);
}

#[test]
fn single_domain_global_equals_per_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = unit_rows(6, 4, &mut rng);
    let zp = unit_rows(6, 4, &mut rng);
    assert_eq!(per_domain(&z, &zp, &[3; 6], 0.1), global(&z, &zp, 0.1));
}

#[test]
fn cross_domain_codes_do_not_affect_domain_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = [0, 0, 0, 1, 1, 1];
    let z = unit_rows(6, 4, &mut rng);
    let zp = unit_rows(6, 4, &mut rng);
    let terms = |z: &Tensor<f64>, zp: &Tensor<f64>| {
        let mut g = Graph::new();
        let (a, b) = (g.constant(z.clone()), g.constant(zp.clone()));
        let t = contrastive_terms(&mut g, a, b, Some(&n), 0.1).unwrap();
        g.value(t).data()[..3].to_vec()
    };
    let before = terms(&z, &zp);
    let mut z2 = z.clone();
    let fresh = unit_rows(3, 4, &mut rng);
    z2.data_mut()[12..].copy_from_slice(fresh.data());
    let after = terms(&z2, &zp);
    assert_eq!(before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), after.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn empty_batch_and_bad_tau_are_errors() {
    let mut g = Graph::<f64>::new();
    let e = g.constant(Tensor::zeros(&[0, 3]));
    assert!(matches!(contrastive_per_domain_loss(&mut g, e, e, &[], 0.1), Err(Error::Empty(_))));
    let z = g.constant(Tensor::full(&[2, 2], 0.5));
    assert!(global_contrastive_loss(&mut g, z, z, 0.0).is_err());
}

#[test]
fn augmentation_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = unit_rows(5, 3, &mut rng);
    let same = eval_loss(|g| {
        let a = g.constant(z.clone());
        augmentation_loss(g, a, a)
    });
    assert!((same + 1.0).abs() < 1e-12);
    let ortho = eval_loss(|g| {
        let a = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.constant(Tensor::new(&[2, 2], vec![0.0, 1.0, -1.0, 0.0]).unwrap());
        augmentation_loss(g, a, b)
    });
    assert_eq!(ortho, 0.0);
    let zp = unit_rows(5, 3, &mut rng);
    let oracle: f64 = -(0..5)
        .map(|i| (0..3).map(|k| z.data()[i * 3 + k] * zp.data()[i * 3 + k]).sum::<f64>())
        .sum::<f64>()
        / 5.0;
    let ours = eval_loss(|g| {
        let (a, b) = (g.constant(z.clone()), g.constant(zp.clone()));
        augmentation_loss(g, a, b)
    });
    assert!((ours - oracle).abs() < 1e-12);
}

fn perceptual(pnet: &PerceptualNet<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    eval_loss(|g| {
        let p = pnet.params().bind(g, false);
        let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
        perceptual_loss(g, pnet, &p, a, b)
    })
}

/// Nested-loop stride-2, pad-1 conv + bias + relu.
fn conv_block(x: &[f64], c: usize, h: usize, w: &Tensor<f64>, b: &Tensor<f64>) -> (Vec<f64>, usize) {
    let o = w.shape()[0];
    let ho = (h + 2 - 3) / 2 + 1;
    let mut out = vec![0.0; o * ho * ho];
    for oc in 0..o {
        for y in 0..ho {
            for xx in 0..ho {
                let mut acc = b.data()[oc];
                for ic in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (iy, ix) = ((2 * y + ky) as isize - 1, (2 * xx + kx) as isize - 1);
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < h {
                                acc += w.data()[((oc * c + ic) * 3 + ky) * 3 + kx]
                                    * x[(ic * h + iy as usize) * h + ix as usize];
                            }
                        }
                    }
                }
                out[(oc * ho + y) * ho + xx] = acc.max(0.0);
            }
        }
    }
    (out, ho)
}

#[test]
fn perceptual_loss_replays_through_frozen_net() {
    let pnet = PerceptualNet::<f64>::new(11);
    let h = 16;
    let x = Tensor::full(&[1, 3, h, h], 0.2);
    let y = Tensor::full(&[1, 3, h, h], 0.7);
    let p = pnet.params().tensors();
    let (mut fx, mut fy) = (x.data().to_vec(), y.data().to_vec());
    let (mut c, mut side) = (3, h);
    let mut oracle = PIXEL_WEIGHT * 0.25;
    for layer in 0..3 {
        let (nx, ho) = conv_block(&fx, c, side, &p[2 * layer], &p[2 * layer + 1]);
        let (ny, _) = conv_block(&fy, c, side, &p[2 * layer], &p[2 * layer + 1]);
        oracle += nx.iter().zip(&ny).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / nx.len() as f64;
        (fx, fy, c, side) = (nx, ny, p[2 * layer].shape()[0], ho);
    }
    let ours = perceptual(&pnet, &x, &y);
    assert!((ours - oracle).abs() < 1e-9 * oracle.max(1.0), "{ours} vs {oracle}");
    assert_eq!(perceptual(&pnet, &x, &x), 0.0);
    assert_eq!(PerceptualNet::<f64>::new(11), pnet);
}

#[test]
fn perceptual_loss_is_symmetric() {
    let pnet = PerceptualNet::<f64>::new(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::from_fn(&[2, 3, 16, 16], |_| rng.random_range(0.0..1.0));
    let y = Tensor::from_fn(&[2, 3, 16, 16], |_| rng.random_range(0.0..1.0));
    let (a, b) = (perceptual(&pnet, &x, &y), perceptual(&pnet, &y, &x));
    assert!(a > 0.0 && (a - b).abs() < 1e-12);
    let mut g = Graph::new();
    let p = pnet.params().bind(&mut g, false);
    let (xv, small) = (g.constant(x), g.constant(Tensor::zeros(&[2, 3, 8, 8])));
    assert!(perceptual_loss(&mut g, &pnet, &p, xv, small).is_err());
}

#[test]
fn encoder_codes_are_unit_deterministic_and_equivariant() {
    let enc = Encoder::<f32>::new(16, 8, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let imgs: Vec<ImageTensor> = (0..5)
        .map(|_| ImageTensor::new(16, 16, (0..768).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
        .collect();
    let refs: Vec<&ImageTensor> = imgs.iter().collect();
    let codes = enc.encode(&refs).unwrap();
    assert_eq!(codes.shape(), &[5, 8]);
    for row in codes.data().chunks(8) {
        let n: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
    assert_eq!(enc.encode(&refs).unwrap(), codes);
    let perm = [3, 0, 4, 1, 2];
    let permuted: Vec<&ImageTensor> = perm.iter().map(|&i| &imgs[i]).collect();
    let pc = enc.encode(&permuted).unwrap();
    for (r, &i) in perm.iter().enumerate() {
        assert_eq!(&pc.data()[r * 8..r * 8 + 8], &codes.data()[i * 8..i * 8 + 8]);
    }
    let wrong = ImageTensor::filled(32, 32, [0.5; 3]);
    assert!(matches!(enc.encode(&[&wrong]), Err(Error::Shape(_))));
}

#[test]
fn generator_output_is_an_image_in_unit_range() {
    let gen = Generator::<f32>::new(16, 4, 3, 16, 1).unwrap();
    let mut g = Graph::new();
    let p = gen.params().bind(&mut g, false);
    let codes = g.constant(Tensor::full(&[2, 4], 0.5));
    let out = gen.forward(&mut g, &p, codes, &[0, 2]).unwrap();
    assert_eq!(g.shape(out), &[2, 3, 16, 16]);
    assert!(g.value(out).data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(gen.forward(&mut g, &p, codes, &[0, 3]).is_err());
}

#[test]
fn composed_losses_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = [0usize, 0, 1, 1, 1];
    let z = Tensor::from_fn(&[5, 3], |_| rng.random_range(-1.0..1.0));
    let zp = Tensor::from_fn(&[5, 3], |_| rng.random_range(-1.0..1.0));
    let r = gradcheck::check(&[z, zp], 1e-4, |g, v| {
        let a = g.l2_normalize(v[0], 1)?;
        let b = g.l2_normalize(v[1], 1)?;
        let con = contrastive_per_domain_loss(g, a, b, &n, 0.1)?;
        let glob = global_contrastive_loss(g, a, b, 0.1)?;
        let aug = augmentation_loss(g, a, b)?;
        let s = g.add(con, glob)?;
        g.add(s, aug)
    })
    .unwrap();
    assert!(r.max_relative_error() < 1e-5, "{:?}", r.relative_errors);

    let gen = Generator::<f64>::new(16, 3, 2, 8, 2).unwrap();
    let pnet = PerceptualNet::<f64>::new(5);
    let target = Tensor::from_fn(&[2, 3, 16, 16], |_| rng.random_range(0.0..1.0));
    let codes = Tensor::from_fn(&[2, 3], |_| rng.random_range(-1.0..1.0));
    let mut inputs = vec![codes];
    inputs.extend(gen.params().tensors().iter().cloned());
    let r = gradcheck::check(&inputs, 1e-4, |g, v| {
        let p = pnet.params().bind(g, false);
        let t = g.constant(target.clone());
        reconstruction_loss(g, &gen, &v[1..], &pnet, &p, v[0], &[1, 0], t)
    })
    .unwrap();
    assert!(r.max_relative_error() < 1e-5, "{:?}", r.relative_errors);
}

#[test]
fn encoder_input_gradient_matches_finite_differences() {
    let enc = Encoder::<f64>::new(16, 4, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::from_fn(&[2, 3, 16, 16], |_| rng.random_range(-1.0..1.0));
    let w = Tensor::from_fn(&[2, 4], |_| rng.random_range(-1.0..1.0));
    let r = gradcheck::check(&[x], 1e-4, |g, v| {
        let p = enc.params().bind(g, false);
        let z = enc.forward(g, &p, v[0])?;
        let wv = g.constant(w.clone());
        let m = g.mul(z, wv)?;
        Ok(g.sum(m))
    })
    .unwrap();
    assert!(r.max_relative_error() < 1e-5, "{:?}", r.relative_errors);
}

fn tiny_split(domains: usize, classes: usize, per_cell: usize, size: usize) -> BenchmarkSplit {
    build_benchmark(&BenchmarkSpec {
        attributes: AttributeSpec { domains, classes, ..AttributeSpec::default() },
        per_cell,
        image_size: size,
        true_anomaly_classes: vec![],
        pseudo_pairs: vec![],
        train_fraction: 0.99,
        seed: 1,
    })
    .unwrap()
}

fn tiny_config(mode: Mode, epochs: usize) -> TrainingConfig {
    TrainingConfig {
        epochs,
        domains_per_batch: 2,
        samples_per_domain: 8,
        lr_encoder: 1e-3,
        lr_generator: 1e-3,
        code_dim: 16,
        generator_width: 32,
        mode,
        ..TrainingConfig::default()
    }
}

#[test]
fn total_loss_breakdown_adds_up() {
    let split = tiny_split(2, 4, 4, 16);
    let samples: Vec<_> = split.train.iter().take(6).collect();
    let mut cfg = TrainingConfig { code_dim: 8, generator_width: 16, ..TrainingConfig::default() };
    let inputs = StepInputs::<f64>::build(&samples, &cfg, 3).unwrap();
    let enc = Encoder::<f64>::new(16, 8, 1).unwrap();
    let gen = Generator::<f64>::new(16, 8, 2, 16, 2).unwrap();
    let pnet = PerceptualNet::<f64>::new(7);

    let run = |cfg: &TrainingConfig, with_gen: bool| {
        let mut g = Graph::new();
        let ev = enc.params().bind(&mut g, true);
        let gv = gen.params().bind(&mut g, true);
        let pv = pnet.params().bind(&mut g, false);
        let gp = if with_gen { Some((&gen, gv.as_slice())) } else { None };
        let t = total_loss(&mut g, cfg, &enc, &ev, gp, (&pnet, &pv), &inputs).unwrap();
        let val = |v| g.value(v).item().unwrap();
        (val(t.con), val(t.aug), t.rec.map(val), val(t.total))
    };
    let (con, aug, rec, total) = run(&cfg, true);
    assert!((con + aug + 0.3 * rec.unwrap() - total).abs() < 1e-6);

    cfg.rec_weight = 0.0;
    let (con, aug, rec, total) = run(&cfg, false);
    assert!(rec.is_none());
    assert_eq!(total, con + aug);

    cfg.aug_weight = 0.0;
    let (con, _, _, total) = run(&cfg, false);
    assert_eq!(total, con);

    let raw = TrainingConfig { mode: Mode::RawEncoder, ..cfg };
    let mut g = Graph::new();
    let ev = enc.params().bind(&mut g, true);
    let pv = pnet.params().bind(&mut g, false);
    assert!(total_loss(&mut g, &raw, &enc, &ev, None, (&pnet, &pv), &inputs).is_err());
}

#[test]
fn reconstruction_step_descends() {
    let gen = Generator::<f64>::new(16, 4, 2, 8, 9).unwrap();
    let pnet = PerceptualNet::<f64>::new(1);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let target = Tensor::from_fn(&[2, 3, 16, 16], |_| rng.random_range(0.0..1.0));
    let codes = unit_rows(2, 4, &mut rng);
    let loss_and_grads = |params: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let gv: Vec<_> = params.iter().map(|t| g.param(t.clone())).collect();
        let pv = pnet.params().bind(&mut g, false);
        let (c, t) = (g.constant(codes.clone()), g.constant(target.clone()));
        let l = reconstruction_loss(&mut g, &gen, &gv, &pnet, &pv, c, &[0, 1], t).unwrap();
        let value = g.value(l).item().unwrap();
        let grads = g.backward(l).unwrap();
        (value, gv.iter().map(|&v| grads.get(v)).collect::<Vec<_>>())
    };
    let params = gen.params().tensors().to_vec();
    let (before, grads) = loss_and_grads(&params);
    assert!(before >= 0.0);
    let stepped: Vec<Tensor<f64>> = params
        .iter()
        .zip(&grads)
        .map(|(p, g)| Tensor::new(p.shape(), p.data().iter().zip(g.data()).map(|(a, b)| a - 1e-2 * b).collect()).unwrap())
        .collect();
    let (after, _) = loss_and_grads(&stepped);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn batches_cover_distinct_domains() {
    let split = tiny_split(4, 4, 40, 16);
    let cfg = TrainingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = sample_batch(&split.train, &cfg, &mut rng).unwrap();
    assert_eq!(batch.indices.len(), 128);
    let mut labels = batch.nuisance.clone();
    labels.dedup();
    assert_eq!(labels.len(), 4);
    for n in 0..4 {
        let mut idx: Vec<_> = batch.indices[n * 32..(n + 1) * 32].to_vec();
        assert!(idx.iter().all(|&i| split.train[i].nuisance == batch.nuisance[n * 32]));
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 32);
    }
    let again = sample_batch(&split.train, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(again, batch);

    let two = tiny_split(2, 4, 4, 16);
    let cfg2 = TrainingConfig { domains_per_batch: 2, samples_per_domain: 20, ..TrainingConfig::default() };
    let b = sample_batch(&two.train, &cfg2, &mut rng).unwrap();
    assert_eq!(b.nuisance.iter().filter(|&&n| n == 0).count(), 20);
    assert_eq!(b.nuisance.iter().filter(|&&n| n == 1).count(), 20);
    assert!(sample_batch(&two.train, &cfg, &mut rng).is_err());
}

#[test]
fn zero_epochs_and_raw_mode_keep_initialization() {
    let split = tiny_split(2, 4, 4, 16);
    for (mode, epochs) in [(Mode::Redpanda, 0), (Mode::RawEncoder, 3)] {
        let trained = train(&tiny_config(mode, epochs), &split.train, &TrainOptions::default()).unwrap();
        let init = Encoder::<f32>::new(16, 16, train::encoder_seed(0)).unwrap();
        assert_eq!(trained.encoder, init);
        assert!(trained.curve.is_empty());
    }
}

#[test]
fn diverging_loss_names_the_term() {
    let split = tiny_split(2, 4, 4, 16);
    let cfg = TrainingConfig { tau: 1e-300, ..tiny_config(Mode::Redpanda, 1) };
    let err = train(&cfg, &split.train, &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Diverged { term: "l_con", .. }), "{err}");
}

#[test]
fn toy_training_reduces_contrastive_loss_and_is_reproducible() {
    let split = tiny_split(2, 4, 8, 32);
    let cfg = tiny_config(Mode::Redpanda, 30);
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions { run_dir: Some(dir.path().to_path_buf()), provenance: "seed=0".into() };
    let a = train(&cfg, &split.train, &opts).unwrap();
    let first = a.curve.first().unwrap().l_con;
    let last_five: f64 = a.curve[25..].iter().map(|r| r.l_con).sum::<f64>() / 5.0;
    assert!(last_five < first, "{last_five} !< {first}");
    let csv = std::fs::read_to_string(dir.path().join(LOSS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 31);
    assert!(csv.starts_with("epoch,l_con,l_aug,l_rec,total\n"));

    let b = train(&cfg, &split.train, &TrainOptions::default()).unwrap();
    assert_eq!(a.checkpoint("m").to_bytes(), b.checkpoint("m").to_bytes());
    let restored = Encoder::<f32>::from_checkpoint(&a.checkpoint("m")).unwrap();
    assert_eq!(restored, a.encoder);
    let gen = Generator::<f32>::from_checkpoint(&a.checkpoint("m")).unwrap();
    assert_eq!(Some(gen), a.generator);
}
