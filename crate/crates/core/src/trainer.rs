//! Two-stage training: the motion VAE first, then the TMDiT on frozen
//! VAE latents under the hierarchical flow-matching loss.

use std::fmt::Write as _;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::hiflow::{draw_noise, training_sample, FlowEndpoints, ScaleSchedule};
use crate::motion::MotionSequence;
use crate::motionvae::{AugPlan, MotionAutoencoder, Normalizer, VaeConfig};
use crate::resample::{resample_to, TemporalTensor};
use crate::skeleton::SkeletonLayout;
use crate::synthdata::{splitmix64, Corpus, Split, NULL_ID};
use crate::tmdit::{TextMotionModel, TmditConfig};

/// Step-wise learning-rate factor: multiplied by `factor` at each fraction
/// of `total` listed in `drops`.
pub fn lr_multiplier(step: usize, total: usize, drops: &[f64], factor: f64) -> Result<f64> {
    if step > total {
        return Err(invalid_arg!("step {step} beyond the {total} total steps"));
    }
    if total == 0 {
        return Ok(1.0);
    }
    let frac = step as f64 / total as f64;
    let passed = drops.iter().filter(|&&d| frac >= d).count();
    Ok(factor.powi(passed as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_drops: Vec<f64>,
    pub lr_factor: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Probability of replacing a prompt with the null token.
    pub cfg_dropout: f64,
    /// Training window in frames; longer motions are cropped, shorter ones
    /// resampled up.
    pub frames: usize,
    /// Metrics are logged every `log_every` steps (and at the last step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 32,
            lr: 2e-4,
            lr_drops: vec![0.5, 0.75],
            lr_factor: 0.2,
            weight_decay: 0.01,
            seed: 0,
            cfg_dropout: 0.1,
            frames: 64,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.log_every == 0 {
            return bad("batch_size and log_every must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad("lr must be positive and lr_factor in (0, 1]");
        }
        if self.lr_drops.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return bad("lr drop fractions must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.cfg_dropout) {
            return bad("cfg_dropout must lie in [0, 1]");
        }
        if self.frames < 4 {
            return bad("training window must be at least 4 frames");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> Result<f64> {
        Ok(self.lr * lr_multiplier(step, self.steps, &self.lr_drops, self.lr_factor)?)
    }

    fn optimizer(&self, vars: Vec<candle_core::Var>) -> Result<AdamW> {
        Ok(AdamW::new(
            vars,
            ParamsAdamW {
                lr: self.lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: self.weight_decay,
            },
        )?)
    }
}

/// Tab-separated metrics: a header row, then one row per logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrainLog {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = self.columns.join("\t");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(i, v)| if i == 0 { format!("{v}") } else { format!("{v:.6e}") })
                .collect();
            let _ = writeln!(s, "{}", cells.join("\t"));
        }
        s
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            detail: format!("{what} is {v}"),
        })
    }
}

/// Crops a random window of `frames` frames, or resamples shorter motions
/// up to `frames`.
fn training_window(m: &MotionSequence, frames: usize, rng: &mut impl Rng) -> Result<MotionSequence> {
    match m.frames() {
        n if n == frames => Ok(m.clone()),
        n if n > frames => {
            let start = rng.random_range(0..=n - frames);
            let w = m.joints() * m.channels();
            MotionSequence::new(frames, m.joints(), m.channels(), m.data()[start * w..(start + frames) * w].to_vec())
        }
        _ => MotionSequence::from_temporal(&resample_to(&m.to_temporal(), frames)?),
    }
}

/// Fixed-length view of a motion used for latent encoding and evaluation:
/// linear resampling to `frames`.
pub fn fit_length(m: &MotionSequence, frames: usize) -> Result<MotionSequence> {
    if m.frames() == frames {
        return Ok(m.clone());
    }
    MotionSequence::from_temporal(&resample_to(&m.to_temporal(), frames)?)
}

fn train_records(corpus: &Corpus) -> Result<Vec<&MotionSequence>> {
    let train: Vec<_> = corpus.split(Split::Train).into_iter().map(|r| &r.motion).collect();
    if train.is_empty() {
        return Err(invalid_arg!("the corpus has no training records"));
    }
    Ok(train)
}

/// Trains a fresh VAE. `observer` sees every logged row.
pub fn train_vae(
    corpus: &Corpus,
    vae_cfg: &VaeConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&TrainLog),
) -> Result<(MotionAutoencoder, TrainLog)> {
    cfg.validate()?;
    let layout = SkeletonLayout::reference();
    if corpus.header.joints != vae_cfg.joints || corpus.header.channels != vae_cfg.channels {
        return Err(invalid_arg!(
            "corpus has {}x{} channels, VAE expects {}x{}",
            corpus.header.joints,
            corpus.header.channels,
            vae_cfg.joints,
            vae_cfg.channels
        ));
    }
    let train = train_records(corpus)?;
    let normalizer = Normalizer::fit(train.iter().copied())?;
    let ae = MotionAutoencoder::new(vae_cfg, layout, normalizer, cfg.seed, DType::F32)?;
    let mut opt = cfg.optimizer(ae.params.vars().into_iter().map(|(_, v)| v).collect())?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x7A_E0));
    let mut log = TrainLog::new(&["step", "loss", "recon", "kl", "aug", "lr"]);
    let latent_frames = cfg.frames / 4;
    let n_aug = (cfg.batch_size as f64 * vae_cfg.aug_fraction).round() as usize;
    for step in 0..cfg.steps {
        let lr = cfg.lr_at(step)?;
        opt.set_learning_rate(lr);
        let windows = (0..cfg.batch_size)
            .map(|_| training_window(train[rng.random_range(0..train.len())], cfg.frames, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let x = ae.batch_tensor(&windows.iter().collect::<Vec<_>>())?;
        let eps_shape = [cfg.batch_size, latent_frames, ae.vae.groups(), vae_cfg.latent_dim];
        let eps = draw_noise(cfg.batch_size, &eps_shape[1..], &mut rng);
        let eps = Tensor::from_vec(eps.into_vec(), &eps_shape, x.device())?.to_dtype(x.dtype())?;
        let plan = AugPlan {
            items: sample_indices(&mut rng, cfg.batch_size, n_aug).into_iter().map(|i| i as u32).collect(),
            ratio: rng.random_range(vae_cfg.aug_min_ratio..=1.0),
        };
        let terms = ae.vae.composite_loss(&x, &eps, Some(&plan))?;
        let loss = scalar(&terms.total)?;
        check_finite(step, "loss", loss)?;
        opt.backward_step(&terms.total)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            let aug = terms.aug.as_ref().map(scalar).transpose()?.unwrap_or(0.0);
            log.rows.push(vec![step as f64, loss, scalar(&terms.recon)?, scalar(&terms.kl)?, aug, lr]);
            observer(&log);
        }
    }
    Ok((ae, log))
}

/// Posterior-mean latents of `motions` (each fitted to `frames`), encoded in
/// chunks to bound memory.
pub fn encode_latents(ae: &MotionAutoencoder, motions: &[&MotionSequence], frames: usize) -> Result<Vec<TemporalTensor>> {
    let mut out = Vec::with_capacity(motions.len());
    for chunk in motions.chunks(64) {
        let fitted = chunk.iter().map(|m| fit_length(m, frames)).collect::<Result<Vec<_>>>()?;
        out.extend(ae.encode_mean(&fitted.iter().collect::<Vec<_>>())?);
    }
    Ok(out)
}

/// Posterior-mean reconstruction MSE in standardized units, i.e. as a
/// fraction of the per-(joint, channel) variance of the training data.
/// Motions are fitted to `frames` first.
pub fn reconstruction_error(ae: &MotionAutoencoder, motions: &[&MotionSequence], frames: usize) -> Result<f64> {
    if motions.is_empty() {
        return Err(invalid_arg!("no motions to reconstruct"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in motions.chunks(64) {
        let fitted = chunk.iter().map(|m| fit_length(m, frames)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = fitted.iter().collect();
        for (m, r) in fitted.iter().zip(ae.reconstruct(&refs)?) {
            let (a, b) = (ae.normalizer.normalize(m), ae.normalizer.normalize(&r));
            sum += a.iter().zip(&b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>();
            count += a.len();
        }
    }
    Ok(sum / count as f64)
}

/// Uniform stage, then uniform flow time inside that stage's interval.
pub fn draw_stage_and_time(sched: &ScaleSchedule, rng: &mut impl Rng) -> (usize, f64) {
    let stage = rng.random_range(0..sched.stages());
    let (lo, hi) = sched.interval(stage);
    (stage, rng.random_range(lo..=hi))
}

/// Checks that a TMDiT config fits a VAE and a schedule.
pub fn check_compatible(tm: &TmditConfig, ae: &MotionAutoencoder, sched: &ScaleSchedule, frames: usize) -> Result<()> {
    if tm.latent_dim != ae.config().latent_dim || tm.latent_joints != ae.vae.groups() {
        return Err(invalid_arg!(
            "TMDiT latents {}x{} do not match the VAE's {}x{}",
            tm.latent_joints,
            tm.latent_dim,
            ae.vae.groups(),
            ae.config().latent_dim
        ));
    }
    if tm.scales.len() != sched.stages() || tm.scales.iter().zip(sched.scales()).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(invalid_arg!("TMDiT scales {:?} differ from the schedule {:?}", tm.scales, sched.scales()));
    }
    if frames / 4 > tm.latent_frames {
        return Err(invalid_arg!("{} latent frames exceed the model's {}", frames / 4, tm.latent_frames));
    }
    Ok(())
}

/// Trains a TMDiT on the frozen VAE's latents.
pub fn train_tmdit(
    corpus: &Corpus,
    ae: &MotionAutoencoder,
    tm_cfg: &TmditConfig,
    sched: &ScaleSchedule,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&TrainLog),
) -> Result<(TextMotionModel, TrainLog)> {
    cfg.validate()?;
    check_compatible(tm_cfg, ae, sched, cfg.frames)?;
    let records = corpus.split(Split::Train);
    if records.is_empty() {
        return Err(invalid_arg!("the corpus has no training records"));
    }
    let motions: Vec<_> = records.iter().map(|r| &r.motion).collect();
    let latents = encode_latents(ae, &motions, cfg.frames)?;
    let width = tm_cfg.latent_joints * tm_cfg.latent_dim;
    let latent_norm = Normalizer::fit_values(width, latents.iter().map(|z| z.as_slice()))?;
    let data: Vec<TemporalTensor> = latents
        .iter()
        .map(|z| TemporalTensor::from_vec(z.frames(), z.tail_shape(), latent_norm.apply(z.as_slice())))
        .collect::<Result<_>>()?;
    let model = TextMotionModel::new(tm_cfg, corpus.vocabulary().clone(), latent_norm, cfg.seed, DType::F32)?;
    let mut opt = cfg.optimizer(model.params.vars().into_iter().map(|(_, v)| v).collect())?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0xF10E));
    let mut log = TrainLog::new(&["step", "loss", "target_energy", "lr"]);
    let (dev, dtype) = (model.params.device().clone(), model.params.dtype());
    for step in 0..cfg.steps {
        let lr = cfg.lr_at(step)?;
        opt.set_learning_rate(lr);
        let mut groups: Vec<Vec<(TemporalTensor, TemporalTensor, f64, Vec<u32>)>> = vec![Vec::new(); sched.stages()];
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..data.len());
            let (stage, t) = draw_stage_and_time(sched, &mut rng);
            let x1 = &data[i];
            let x0 = draw_noise(x1.frames(), x1.tail_shape(), &mut rng);
            let fs = training_sample(&FlowEndpoints::new(x0, x1.clone())?, sched, stage, t)?;
            let tokens = if rng.random_bool(cfg.cfg_dropout) {
                vec![NULL_ID]
            } else {
                records[i].tokens.clone()
            };
            groups[stage].push((fs.point, fs.target, t, tokens));
        }
        let mut total: Option<Tensor> = None;
        let mut energy = 0.0;
        for (stage, items) in groups.iter().enumerate() {
            if items.is_empty() {
                continue;
            }
            let stack = |f: fn(&(TemporalTensor, TemporalTensor, f64, Vec<u32>)) -> &TemporalTensor| -> Result<Tensor> {
                let v: Vec<TemporalTensor> = items.iter().map(|it| f(it).clone()).collect();
                crate::motionvae::temporal_batch_to_tensor(&v, &dev, dtype)
            };
            let (x, target) = (stack(|it| &it.0)?, stack(|it| &it.1)?);
            let ts: Vec<f64> = items.iter().map(|it| it.2).collect();
            let tokens: Vec<Vec<u32>> = items.iter().map(|it| it.3.clone()).collect();
            let pred = model.net.forward(&x, &ts, sched.scale(stage), &tokens)?;
            // per-sample mean squared error, summed; divided by the batch below
            let per_sample = (pred - &target)?.sqr()?.flatten_from(1)?.mean(1)?.sum_all()?;
            energy += scalar(&target.sqr()?.flatten_from(1)?.mean(1)?.sum_all()?)?;
            total = Some(match total {
                None => per_sample,
                Some(acc) => (acc + per_sample)?,
            });
        }
        let loss_t = (total.expect("batch is non-empty") / cfg.batch_size as f64)?;
        let loss = scalar(&loss_t)?;
        check_finite(step, "loss", loss)?;
        opt.backward_step(&loss_t)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            log.rows.push(vec![step as f64, loss, energy / cfg.batch_size as f64, lr]);
            observer(&log);
        }
    }
    Ok((model, log))
}
