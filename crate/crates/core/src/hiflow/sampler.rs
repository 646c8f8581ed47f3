//! Stage-local ODE integration and the full coarse-to-fine sampler.

use rand::RngCore;

use crate::error::{invalid_arg, Error, Result};
use crate::resample::{resample_to, TemporalTensor};

use super::{cross_scale_transition, ScaleSchedule};

/// Where on the trajectory a velocity is requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageQuery {
    pub stage: usize,
    pub scale: f64,
    /// Global flow time in `[t_start, t_end]` of the stage.
    pub t: f64,
    /// Stage-local time in `[0, 1]`.
    pub tau: f64,
}

/// Which guidance branch is being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Conditional,
    /// The condition replaced by the null token.
    Unconditional,
}

/// A velocity model. It returns the stage displacement estimate for `x`;
/// the conditioning it was built with is selected by `branch`.
pub trait VelocityField {
    fn velocity(&self, x: &TemporalTensor, query: &StageQuery, branch: Branch) -> Result<TemporalTensor>;
}

impl<F> VelocityField for F
where
    F: Fn(&TemporalTensor, &StageQuery, Branch) -> Result<TemporalTensor>,
{
    fn velocity(&self, x: &TemporalTensor, query: &StageQuery, branch: Branch) -> Result<TemporalTensor> {
        self(x, query, branch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub weight: f64,
}

impl GuidanceConfig {
    pub fn new(weight: f64) -> Result<Self> {
        if !weight.is_finite() || weight < 0.0 {
            return Err(invalid_arg!("guidance weight must be finite and >= 0, got {weight}"));
        }
        Ok(Self { weight })
    }

    /// Conditional prediction only.
    pub fn unguided() -> Self {
        Self { weight: 1.0 }
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self::unguided()
    }
}

/// `v_uncond + w (v_cond - v_uncond)`.
pub fn cfg_velocity(v_cond: &TemporalTensor, v_uncond: &TemporalTensor, weight: f64) -> Result<TemporalTensor> {
    v_uncond.lincomb(1.0 - weight, v_cond, weight)
}

fn guided_velocity(
    vfn: &dyn VelocityField,
    x: &TemporalTensor,
    query: &StageQuery,
    guidance: GuidanceConfig,
) -> Result<TemporalTensor> {
    let checked = |v: TemporalTensor| -> Result<TemporalTensor> {
        if v.shape() != x.shape() {
            return Err(Error::IntegrationFailure(format!(
                "velocity shape {:?} does not match state shape {:?}",
                v.shape(),
                x.shape()
            )));
        }
        if !v.is_finite() {
            return Err(Error::IntegrationFailure(format!(
                "non-finite velocity at stage {} t = {}",
                query.stage, query.t
            )));
        }
        Ok(v)
    };
    let w = guidance.weight;
    if w == 1.0 {
        return checked(vfn.velocity(x, query, Branch::Conditional)?);
    }
    let v_u = checked(vfn.velocity(x, query, Branch::Unconditional)?)?;
    if w == 0.0 {
        return Ok(v_u);
    }
    let v_c = checked(vfn.velocity(x, query, Branch::Conditional)?)?;
    cfg_velocity(&v_c, &v_u, w)
}

/// Progress report emitted after every Euler step and transition.
#[derive(Debug)]
pub enum TraceEvent<'a> {
    Step {
        stage: usize,
        step: usize,
        t: f64,
        tau: f64,
        state: &'a TemporalTensor,
    },
    Transition {
        stage: usize,
        state: &'a TemporalTensor,
    },
}

/// Forward Euler over stage-local time: `x <- x + v / n` at `tau_i = i / n`.
pub fn integrate_stage(
    vfn: &dyn VelocityField,
    start: &TemporalTensor,
    sched: &ScaleSchedule,
    stage: usize,
    n_steps: usize,
    guidance: GuidanceConfig,
) -> Result<TemporalTensor> {
    integrate_stage_traced(vfn, start, sched, stage, n_steps, guidance, &mut |_| {})
}

pub fn integrate_stage_traced(
    vfn: &dyn VelocityField,
    start: &TemporalTensor,
    sched: &ScaleSchedule,
    stage: usize,
    n_steps: usize,
    guidance: GuidanceConfig,
    observer: &mut dyn FnMut(TraceEvent<'_>),
) -> Result<TemporalTensor> {
    sched.check_stage(stage)?;
    if n_steps == 0 {
        return Err(invalid_arg!("stage integration needs at least one step"));
    }
    let (t0, t1) = sched.interval(stage);
    let dt = 1.0 / n_steps as f64;
    let mut x = start.clone();
    for i in 0..n_steps {
        let tau = i as f64 * dt;
        let query = StageQuery {
            stage,
            scale: sched.scale(stage),
            t: t0 + tau * (t1 - t0),
            tau,
        };
        let v = guided_velocity(vfn, &x, &query, guidance)?;
        x = x.lincomb(1.0, &v, dt)?;
        observer(TraceEvent::Step {
            stage,
            step: i + 1,
            t: t0 + (i + 1) as f64 * dt * (t1 - t0),
            tau: (i + 1) as f64 * dt,
            state: &x,
        });
    }
    Ok(x)
}

/// How one stage's end state becomes the next stage's start state.
///
/// `rng` is offered to every rule so that the number of draws a rule makes
/// is observable from outside.
pub trait Transition {
    fn apply(
        &mut self,
        x_hat: &TemporalTensor,
        noise: &TemporalTensor,
        sched: &ScaleSchedule,
        stage: usize,
        rng: &mut dyn RngCore,
    ) -> Result<TemporalTensor>;
}

/// Denoise, upsample, renoise with the original noise.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExactTransition;

impl Transition for ExactTransition {
    fn apply(
        &mut self,
        x_hat: &TemporalTensor,
        noise: &TemporalTensor,
        sched: &ScaleSchedule,
        stage: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<TemporalTensor> {
        cross_scale_transition(x_hat, noise, sched, stage)
    }
}

/// Coarse-to-fine sampler over a fixed schedule.
#[derive(Debug, Clone)]
pub struct HierarchicalSampler {
    schedule: ScaleSchedule,
    steps_per_stage: Vec<usize>,
    guidance: GuidanceConfig,
}

impl HierarchicalSampler {
    pub fn new(schedule: ScaleSchedule, steps_per_stage: Vec<usize>, guidance: GuidanceConfig) -> Result<Self> {
        if steps_per_stage.len() != schedule.stages() {
            return Err(invalid_arg!(
                "{} step counts for a {}-stage schedule",
                steps_per_stage.len(),
                schedule.stages()
            ));
        }
        if steps_per_stage.contains(&0) {
            return Err(invalid_arg!("every stage needs at least one step"));
        }
        Ok(Self {
            schedule,
            steps_per_stage,
            guidance,
        })
    }

    pub fn schedule(&self) -> &ScaleSchedule {
        &self.schedule
    }

    pub fn steps_per_stage(&self) -> &[usize] {
        &self.steps_per_stage
    }

    pub fn guidance(&self) -> GuidanceConfig {
        self.guidance
    }

    /// Runs every stage with the exact transition and returns the
    /// full-length sample. Deterministic given `noise` and `vfn`.
    pub fn sample(&self, vfn: &dyn VelocityField, noise: &TemporalTensor) -> Result<TemporalTensor> {
        self.sample_with(vfn, noise, &mut ExactTransition, &mut NoRng, &mut |_| {})
    }

    pub fn sample_with(
        &self,
        vfn: &dyn VelocityField,
        noise: &TemporalTensor,
        transition: &mut dyn Transition,
        rng: &mut dyn RngCore,
        observer: &mut dyn FnMut(TraceEvent<'_>),
    ) -> Result<TemporalTensor> {
        let sched = &self.schedule;
        let full = noise.frames();
        let mut x = resample_to(noise, sched.stage_length(0, full)?)?;
        for stage in 0..sched.stages() {
            x = integrate_stage_traced(vfn, &x, sched, stage, self.steps_per_stage[stage], self.guidance, observer)?;
            if stage + 1 < sched.stages() {
                x = transition.apply(&x, noise, sched, stage, rng)?;
                observer(TraceEvent::Transition { stage, state: &x });
            }
        }
        resample_to(&x, full)
    }
}

/// `hierarchical_sample` with the exact transition.
pub fn hierarchical_sample(
    vfn: &dyn VelocityField,
    sched: &ScaleSchedule,
    noise: &TemporalTensor,
    steps_per_stage: &[usize],
    guidance: GuidanceConfig,
) -> Result<TemporalTensor> {
    HierarchicalSampler::new(sched.clone(), steps_per_stage.to_vec(), guidance)?.sample(vfn, noise)
}

/// An RNG that refuses to produce numbers; handed to transitions that must
/// not draw.
struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        panic!("the exact sampling path must not draw random numbers")
    }

    fn next_u64(&mut self) -> u64 {
        panic!("the exact sampling path must not draw random numbers")
    }

    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        panic!("the exact sampling path must not draw random numbers")
    }
}
