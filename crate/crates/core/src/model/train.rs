use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use log::{info, warn};
use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::losses::{augmentation_loss, contrastive_per_domain_loss, global_contrastive_loss, reconstruction_loss};
use super::nets::{network_input, Encoder, Generator, PerceptualNet};
use super::{Mode, TrainingConfig};
use crate::error::{Error, Result};
use crate::image::{to_batch, ImageTensor};
use crate::numerics::{Adam, AdamConfig, Checkpoint, Element, Graph, Tensor, Var};
use crate::synthdata::LabeledSample;

pub const LOSS_FILE: &str = "losses.csv";
const LOSS_HEADER: &str = "epoch,l_con,l_aug,l_rec,total";

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seeds derived from the run seed.
pub(crate) fn encoder_seed(seed: u64) -> u64 {
    mix(seed, 1)
}

fn generator_seed(seed: u64) -> u64 {
    mix(seed, 2)
}

fn batch_seed(seed: u64) -> u64 {
    mix(seed, 3)
}

fn augment_seed(seed: u64, step: u64, row: usize) -> u64 {
    mix(mix(mix(seed, 4), step), row as u64)
}

/// Indices into the training list plus their nuisance labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub nuisance: Vec<usize>,
}

/// `domains_per_batch` distinct domains with `samples_per_domain` samples
/// each, without replacement unless a domain is too small (then with
/// replacement and a warning).
pub fn sample_batch(train: &[LabeledSample], cfg: &TrainingConfig, rng: &mut impl Rng) -> Result<Batch> {
    let mut domains: Vec<usize> = train.iter().map(|s| s.nuisance).collect();
    domains.sort_unstable();
    domains.dedup();
    if domains.len() < cfg.domains_per_batch {
        return Err(Error::InvalidArgument(format!(
            "training split has {} domains, batch needs {}",
            domains.len(),
            cfg.domains_per_batch
        )));
    }
    let mut chosen: Vec<usize> = domains.choose_multiple(rng, cfg.domains_per_batch).copied().collect();
    chosen.sort_unstable();
    let mut batch = Batch { indices: Vec::with_capacity(cfg.batch_size()), nuisance: Vec::with_capacity(cfg.batch_size()) };
    for n in chosen {
        let members: Vec<usize> = (0..train.len()).filter(|&i| train[i].nuisance == n).collect();
        let k = cfg.samples_per_domain;
        if members.len() >= k {
            batch.indices.extend(index::sample(rng, members.len(), k).into_iter().map(|i| members[i]));
        } else {
            warn!("domain {n} has {} training samples, sampling {k} with replacement", members.len());
            batch.indices.extend((0..k).map(|_| members[rng.random_range(0..members.len())]));
        }
        batch.nuisance.extend(std::iter::repeat_n(n, k));
    }
    Ok(batch)
}

/// Tensors for one optimization step.
#[derive(Clone, Debug)]
pub struct StepInputs<T: Element> {
    /// Encoder input of the anchor view, `[B,3,S,S]` in `[-1,1]`.
    pub anchor: Tensor<T>,
    /// Encoder input of the positive view.
    pub positive: Tensor<T>,
    /// The anchor image in `[0,1]`, the reconstruction target.
    pub target: Tensor<T>,
    pub nuisance: Vec<usize>,
}

impl<T: Element> StepInputs<T> {
    pub fn build(samples: &[&LabeledSample], cfg: &TrainingConfig, step_seed: u64) -> Result<Self> {
        let augmented: Vec<ImageTensor> = samples
            .iter()
            .enumerate()
            .map(|(row, s)| cfg.augment.apply(&s.image, augment_seed(step_seed, 0, row)))
            .collect();
        let anchors: Vec<ImageTensor>;
        let anchor_refs: Vec<&ImageTensor> = if cfg.two_views {
            anchors = samples
                .iter()
                .enumerate()
                .map(|(row, s)| cfg.augment.apply(&s.image, augment_seed(step_seed, 1, row)))
                .collect();
            anchors.iter().collect()
        } else {
            samples.iter().map(|s| &s.image).collect()
        };
        let positive_refs: Vec<&ImageTensor> = augmented.iter().collect();
        Ok(Self {
            anchor: network_input(&anchor_refs)?,
            positive: network_input(&positive_refs)?,
            target: to_batch(&anchor_refs)?.cast(),
            nuisance: samples.iter().map(|s| s.nuisance).collect(),
        })
    }
}

/// Graph handles of the individual loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub con: Var,
    pub aug: Var,
    pub rec: Option<Var>,
    pub total: Var,
}

/// Records the mode's objective on `g`.
///
/// `redpanda`: `L_con + aug_weight L_aug + rec_weight L_rec` (the
/// reconstruction term is skipped when `rec_weight == 0`);
/// `simclr_global`: global contrastive + `aug_weight L_aug`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Element>(
    g: &mut Graph<T>,
    cfg: &TrainingConfig,
    encoder: &Encoder<T>,
    enc_params: &[Var],
    generator: Option<(&Generator<T>, &[Var])>,
    pnet: (&PerceptualNet<T>, &[Var]),
    inputs: &StepInputs<T>,
) -> Result<LossTerms> {
    let anchor = g.constant(inputs.anchor.clone());
    let positive = g.constant(inputs.positive.clone());
    let z = encoder.forward(g, enc_params, anchor)?;
    let zp = encoder.forward(g, enc_params, positive)?;
    let con = match cfg.mode {
        Mode::Redpanda => contrastive_per_domain_loss(g, z, zp, &inputs.nuisance, cfg.tau)?,
        Mode::SimclrGlobal => global_contrastive_loss(g, z, zp, cfg.tau)?,
        Mode::RawEncoder => return Err(Error::Config("raw_encoder mode has no training objective".into())),
    };
    let aug = augmentation_loss(g, z, zp)?;
    let weighted_aug = g.scale(aug, cfg.aug_weight);
    let mut total = g.add(con, weighted_aug)?;
    let mut rec = None;
    if cfg.mode == Mode::Redpanda && cfg.rec_weight > 0.0 {
        let (gen, gen_params) =
            generator.ok_or_else(|| Error::Config("reconstruction weight is positive but no generator given".into()))?;
        let target = g.constant(inputs.target.clone());
        let r = reconstruction_loss(g, gen, gen_params, pnet.0, pnet.1, z, &inputs.nuisance, target)?;
        let weighted = g.scale(r, cfg.rec_weight);
        total = g.add(total, weighted)?;
        rec = Some(r);
    }
    Ok(LossTerms { con, aug, rec, total })
}

/// Mean loss terms over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub l_con: f64,
    pub l_aug: f64,
    pub l_rec: f64,
    pub total: f64,
}

impl EpochLosses {
    fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.l_con, self.l_aug, self.l_rec, self.total)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Receives `losses.csv` and periodic checkpoints when set.
    pub run_dir: Option<PathBuf>,
    /// Stored verbatim in every checkpoint's metadata.
    pub provenance: String,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub encoder: Encoder<f32>,
    pub generator: Option<Generator<f32>>,
    pub curve: Vec<EpochLosses>,
}

impl Trained {
    pub fn checkpoint(&self, metadata: &str) -> Checkpoint {
        let mut entries = self.encoder.checkpoint_entries();
        if let Some(gen) = &self.generator {
            entries.extend(gen.checkpoint_entries());
        }
        Checkpoint { metadata: metadata.to_string(), entries }
    }
}

fn value_of(g: &Graph<f32>, v: Var, epoch: usize, step: usize, term: &'static str) -> Result<f64> {
    let x = g.value(v).item()? as f64;
    if !x.is_finite() {
        return Err(Error::Diverged { epoch, step, term });
    }
    Ok(x)
}

/// Runs `cfg.epochs` epochs of `ceil(n_train / batch)` Adam steps each.
pub fn train(cfg: &TrainingConfig, train: &[LabeledSample], opts: &TrainOptions) -> Result<Trained> {
    cfg.validate()?;
    let first = train.first().ok_or_else(|| Error::Empty("training split is empty".into()))?;
    let size = first.image.height();
    let domains = train.iter().map(|s| s.nuisance).max().unwrap_or(0) + 1;
    let mut encoder = Encoder::<f32>::new(size, cfg.code_dim, encoder_seed(cfg.seed))?;
    let mut generator = match cfg.mode {
        Mode::Redpanda => Some(Generator::<f32>::new(
            size,
            cfg.code_dim,
            domains,
            cfg.generator_width,
            generator_seed(cfg.seed),
        )?),
        _ => None,
    };
    let mut loss_file = match &opts.run_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = File::create(dir.join(LOSS_FILE))?;
            writeln!(f, "{LOSS_HEADER}")?;
            Some(OpenOptions::new().append(true).open(dir.join(LOSS_FILE))?)
        }
        None => None,
    };
    if cfg.mode == Mode::RawEncoder || cfg.epochs == 0 {
        return Ok(Trained { encoder, generator, curve: Vec::new() });
    }

    let pnet = PerceptualNet::<f32>::new(cfg.perceptual_seed);
    let mut enc_opt = Adam::new(AdamConfig::with_lr(cfg.lr_encoder), encoder.params().tensors());
    let mut gen_opt = generator.as_ref().map(|g| Adam::new(AdamConfig::with_lr(cfg.lr_generator), g.params().tensors()));
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(cfg.seed));
    let steps = train.len().div_ceil(cfg.batch_size());
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0u64;

    for epoch in 1..=cfg.epochs {
        let mut sums = [0.0f64; 4];
        for step in 0..steps {
            let batch = sample_batch(train, cfg, &mut rng)?;
            let samples: Vec<&LabeledSample> = batch.indices.iter().map(|&i| &train[i]).collect();
            let inputs = StepInputs::<f32>::build(&samples, cfg, mix(cfg.seed, global_step))?;
            global_step += 1;

            let mut g = Graph::new();
            let enc_vars = encoder.params().bind(&mut g, true);
            let gen_vars = generator.as_ref().map(|gen| gen.params().bind(&mut g, true));
            let pnet_vars = pnet.params().bind(&mut g, false);
            let gen_pair = generator.as_ref().zip(gen_vars.as_deref());
            let terms = total_loss(&mut g, cfg, &encoder, &enc_vars, gen_pair, (&pnet, &pnet_vars), &inputs)?;

            let l_con = value_of(&g, terms.con, epoch, step, "l_con")?;
            let l_aug = value_of(&g, terms.aug, epoch, step, "l_aug")?;
            let l_rec = match terms.rec {
                Some(r) => value_of(&g, r, epoch, step, "l_rec")?,
                None => 0.0,
            };
            let total = value_of(&g, terms.total, epoch, step, "total")?;
            for (s, v) in sums.iter_mut().zip([l_con, l_aug, l_rec, total]) {
                *s += v;
            }

            let mut grads = g.backward(terms.total)?;
            let enc_grads: Vec<Tensor<f32>> = enc_vars.iter().map(|&v| grads.take(v)).collect();
            let mut enc_refs: Vec<&mut Tensor<f32>> = encoder.params_mut().tensors_mut().iter_mut().collect();
            enc_opt.step(&mut enc_refs, &enc_grads)?;
            if let (Some(gen), Some(opt), Some(vars)) = (generator.as_mut(), gen_opt.as_mut(), gen_vars.as_ref()) {
                let gen_grads: Vec<Tensor<f32>> = vars.iter().map(|&v| grads.take(v)).collect();
                let mut refs: Vec<&mut Tensor<f32>> = gen.params_mut().tensors_mut().iter_mut().collect();
                opt.step(&mut refs, &gen_grads)?;
            }
        }
        let n = steps as f64;
        let record = EpochLosses {
            epoch,
            l_con: sums[0] / n,
            l_aug: sums[1] / n,
            l_rec: sums[2] / n,
            total: sums[3] / n,
        };
        info!(
            "{} seed {} epoch {epoch}: l_con {:.4} l_aug {:.4} l_rec {:.4} total {:.4}",
            cfg.mode, cfg.seed, record.l_con, record.l_aug, record.l_rec, record.total
        );
        if let Some(f) = loss_file.as_mut() {
            writeln!(f, "{}", record.csv_row())?;
        }
        curve.push(record);
        if let Some(dir) = &opts.run_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                let snapshot = Trained { encoder: encoder.clone(), generator: generator.clone(), curve: Vec::new() };
                let meta = format!("{};epoch={epoch}", opts.provenance);
                snapshot.checkpoint(&meta).save(&dir.join(format!("checkpoint_epoch{epoch:04}.rpck")))?;
            }
        }
    }
    Ok(Trained { encoder, generator, curve })
}
