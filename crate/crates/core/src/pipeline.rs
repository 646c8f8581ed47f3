//! Text to motion: tokenize, sample standardized latents coarse to fine,
//! undo the standardization and decode with the VAE.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::hiflow::{draw_noise, ExactTransition, GuidanceConfig, HierarchicalSampler, ScaleSchedule, TraceEvent};
use crate::motion::MotionSequence;
use crate::motionvae::MotionAutoencoder;
use crate::resample::TemporalTensor;
use crate::tmdit::TextMotionModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Euler steps per stage; a single value applies to every stage.
    pub steps_per_stage: Vec<usize>,
    /// Classifier-free guidance weight; 1 disables guidance.
    pub guidance: f64,
    /// Output length in frames.
    pub frames: usize,
    /// Prompts sampled together in one batch.
    pub batch_size: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            steps_per_stage: vec![10],
            guidance: 2.0,
            frames: 64,
            batch_size: 32,
        }
    }
}

impl GenerationConfig {
    pub fn sampler(&self, sched: &ScaleSchedule) -> Result<HierarchicalSampler> {
        let steps = match self.steps_per_stage.as_slice() {
            [n] => vec![*n; sched.stages()],
            s => s.to_vec(),
        };
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("generation batch_size must be positive".into()));
        }
        if self.frames < 4 {
            return Err(Error::InvalidConfig("generated motions need at least 4 frames".into()));
        }
        HierarchicalSampler::new(sched.clone(), steps, GuidanceConfig::new(self.guidance)?)
    }
}

/// One row of the sampling trajectory of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub event: &'static str,
    pub stage: usize,
    pub step: usize,
    pub t: f64,
    pub frames: usize,
    /// Root mean square of the whole batch state.
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("batch\tevent\tstage\tstep\tt\tframes\trms\n");
        self.append_tsv(&mut s, 0);
        s
    }

    fn append_tsv(&self, s: &mut String, batch: usize) {
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{batch}\t{}\t{}\t{}\t{:.6}\t{}\t{:.6e}",
                r.event, r.stage, r.step, r.t, r.frames, r.rms
            );
        }
    }
}

/// Concatenated trajectories of several batches, one table.
pub fn trajectories_tsv(batches: &[Trajectory]) -> String {
    let mut s = String::from("batch\tevent\tstage\tstep\tt\tframes\trms\n");
    for (i, b) in batches.iter().enumerate() {
        b.append_tsv(&mut s, i);
    }
    s
}

pub struct Generated {
    pub motions: Vec<MotionSequence>,
    pub trajectories: Vec<Trajectory>,
}

pub struct Generator<'a> {
    pub vae: &'a MotionAutoencoder,
    pub model: &'a TextMotionModel,
    pub sampler: HierarchicalSampler,
    pub frames: usize,
    pub batch_size: usize,
}

impl<'a> Generator<'a> {
    pub fn new(
        vae: &'a MotionAutoencoder,
        model: &'a TextMotionModel,
        sched: &ScaleSchedule,
        cfg: &GenerationConfig,
    ) -> Result<Self> {
        crate::trainer::check_compatible(model.config(), vae, sched, cfg.frames)?;
        Ok(Self {
            vae,
            model,
            sampler: cfg.sampler(sched)?,
            frames: cfg.frames,
            batch_size: cfg.batch_size,
        })
    }

    /// Tokenizes every prompt with the model's vocabulary.
    pub fn tokenize(&self, prompts: &[String]) -> Result<Vec<Vec<u32>>> {
        prompts.iter().map(|p| self.model.vocab.tokenize(p)).collect()
    }

    /// One motion per prompt. Batch `i` draws its initial noise from
    /// `ChaCha8(seed + i)`; nothing else is random.
    pub fn generate(&self, prompts: &[Vec<u32>], seed: u64) -> Result<Generated> {
        if prompts.is_empty() {
            return Err(invalid_arg!("no prompts to generate from"));
        }
        let cfg = self.model.config();
        let tail = [cfg.latent_joints, cfg.latent_dim];
        let latent_frames = self.frames / 4;
        let mut motions = Vec::with_capacity(prompts.len());
        let mut trajectories = Vec::new();
        for (bi, chunk) in prompts.chunks(self.batch_size).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(bi as u64));
            let mut batch_tail = vec![chunk.len()];
            batch_tail.extend(tail);
            let noise = draw_noise(latent_frames, &batch_tail, &mut rng);
            let vfn = self.model.velocity_field(chunk.to_vec())?;
            let mut traj = Trajectory::default();
            let mut observe = |e: TraceEvent<'_>| {
                let (event, stage, step, t, state) = match e {
                    TraceEvent::Step { stage, step, t, state, .. } => ("step", stage, step, t, state),
                    TraceEvent::Transition { stage, state } => {
                        ("transition", stage, 0, self.sampler.schedule().interval(stage).1, state)
                    }
                };
                traj.rows.push(TrajectoryRow {
                    event,
                    stage,
                    step,
                    t,
                    frames: state.frames(),
                    rms: state.mean_square().sqrt(),
                });
            };
            let z = self
                .sampler
                .sample_with(&vfn, &noise, &mut ExactTransition, &mut rng, &mut observe)?;
            let items = z
                .unstack_batch()?
                .into_iter()
                .map(|it| TemporalTensor::from_vec(it.frames(), it.tail_shape(), self.model.latent_norm.invert(it.as_slice())))
                .collect::<Result<Vec<_>>>()?;
            motions.extend(self.vae.decode(&TemporalTensor::stack_batch(&items)?, self.frames)?);
            trajectories.push(traj);
        }
        Ok(Generated { motions, trajectories })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motionvae::{Normalizer, VaeConfig};
    use crate::skeleton::SkeletonLayout;
    use crate::synthdata::Vocabulary;
    use crate::tmdit::TmditConfig;
    use candle_core::DType;

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let vae_cfg = VaeConfig {
            hidden: 8,
            latent_dim: 4,
            ..VaeConfig::default()
        };
        let vae = MotionAutoencoder::new(&vae_cfg, SkeletonLayout::reference(), Normalizer::identity(90), 1, DType::F32).unwrap();
        let vocab = Vocabulary::standard();
        let tm = TmditConfig {
            latent_dim: 4,
            ..TmditConfig::tiny(vocab.len())
        };
        let model = TextMotionModel::new(&tm, vocab, Normalizer::identity(24), 2, DType::F32).unwrap();
        let sched = ScaleSchedule::new(vec![1.0 / 3.0, 2.0 / 3.0, 1.0], None).unwrap();
        let cfg = GenerationConfig {
            steps_per_stage: vec![2],
            frames: 32,
            batch_size: 2,
            ..GenerationConfig::default()
        };
        let g = Generator::new(&vae, &model, &sched, &cfg).unwrap();
        let prompts = g.tokenize(&["a person jumps up".into(), "someone walks straight ahead".into(), "".into()]).unwrap();
        let a = g.generate(&prompts, 7).unwrap();
        let b = g.generate(&prompts, 7).unwrap();
        assert_eq!(a.motions, b.motions);
        assert_eq!(a.motions.len(), 3);
        assert_eq!(a.motions[0].shape(), [32, 15, 6]);
        assert_eq!(a.trajectories.len(), 2);
        // 3 stages x 2 steps plus 2 transitions
        assert_eq!(a.trajectories[0].rows.len(), 8);
        assert_eq!(a.trajectories[0].rows.last().unwrap().frames, 8);
        assert_ne!(g.generate(&prompts, 8).unwrap().motions, a.motions);
        assert!(g.generate(&[], 0).is_err());
    }
}
