//! Stage-wise probability paths and the cross-scale transition.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid_arg, Error, Result};
use crate::resample::{resample_to, TemporalTensor};

use super::ScaleSchedule;

/// A noise draw and a clean sample, both at full temporal scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEndpoints {
    noise: TemporalTensor,
    data: TemporalTensor,
}

impl FlowEndpoints {
    pub fn new(noise: TemporalTensor, data: TemporalTensor) -> Result<Self> {
        noise.check_same_shape(&data)?;
        Ok(Self { noise, data })
    }

    pub fn noise(&self) -> &TemporalTensor {
        &self.noise
    }

    pub fn data(&self) -> &TemporalTensor {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.noise.frames()
    }
}

/// A standard-normal tensor of `frames x tail`.
pub fn draw_noise(frames: usize, tail: &[usize], rng: &mut (impl Rng + ?Sized)) -> TemporalTensor {
    let n = frames * tail.iter().product::<usize>();
    let values = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    TemporalTensor::from_vec(frames, tail, values).expect("shape and values are consistent")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageEndpoints {
    pub start: TemporalTensor,
    pub end: TemporalTensor,
}

/// A point on the stage-`stage` path with its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub stage: usize,
    pub t: f64,
    /// Normalized time within the stage.
    pub tau: f64,
    pub point: TemporalTensor,
    pub target: TemporalTensor,
}

/// `f(x, r_k)` evaluated to the stage's own temporal length.
fn at_stage(x: &TemporalTensor, sched: &ScaleSchedule, stage: usize, full: usize) -> Result<TemporalTensor> {
    resample_to(x, sched.stage_length(stage, full)?)
}

/// Start and end states of stage `stage`.
///
/// The start mixes the stage's view of the noise with the previous stage's
/// view of the data, upsampled; the end is the plain linear interpolation
/// at the stage's own scale.
pub fn stage_endpoints(ep: &FlowEndpoints, sched: &ScaleSchedule, stage: usize) -> Result<StageEndpoints> {
    sched.check_stage(stage)?;
    let full = ep.frames();
    let (t_start, t_end) = sched.interval(stage);
    let noise_k = at_stage(&ep.noise, sched, stage, full)?;

    let start = if t_start == 0.0 {
        noise_k.clone()
    } else {
        // t_start > 0 implies stage >= 1
        let coarse = at_stage(&ep.data, sched, stage - 1, full)?;
        let data_term = resample_to(&coarse, noise_k.frames())?;
        noise_k.lincomb(1.0 - t_start, &data_term, t_start)?
    };
    let data_k = at_stage(&ep.data, sched, stage, full)?;
    let end = noise_k.lincomb(1.0 - t_end, &data_k, t_end)?;
    Ok(StageEndpoints { start, end })
}

/// Training point at flow time `t` inside stage `stage`.
pub fn training_sample(ep: &FlowEndpoints, sched: &ScaleSchedule, stage: usize, t: f64) -> Result<FlowSample> {
    sched.check_stage(stage)?;
    let (t_start, t_end) = sched.interval(stage);
    if !(t >= t_start && t <= t_end) {
        return Err(invalid_arg!("t = {t} outside stage interval [{t_start}, {t_end}]"));
    }
    let tau = (t - t_start) / (t_end - t_start);
    let StageEndpoints { start, end } = stage_endpoints(ep, sched, stage)?;
    let point = start.lincomb(1.0 - tau, &end, tau)?;
    let target = end.sub(&start)?;
    Ok(FlowSample {
        stage,
        t,
        tau,
        point,
        target,
    })
}

/// Mean squared error between a velocity prediction and its target.
pub fn hfm_loss(pred: &TemporalTensor, target: &TemporalTensor) -> Result<f64> {
    pred.check_same_shape(target)?;
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Carries the end state of stage `stage` to the start of stage `stage + 1`:
/// extrapolate to clean data at the current scale, upsample it, then mix it
/// back with the (resampled) original noise. Draws no new randomness.
pub fn cross_scale_transition(
    x_hat: &TemporalTensor,
    noise: &TemporalTensor,
    sched: &ScaleSchedule,
    stage: usize,
) -> Result<TemporalTensor> {
    sched.check_stage(stage)?;
    if stage + 1 >= sched.stages() {
        return Err(invalid_arg!("no stage follows stage {stage}"));
    }
    let full = noise.frames();
    let len_k = sched.stage_length(stage, full)?;
    if x_hat.frames() != len_k || x_hat.tail_shape() != noise.tail_shape() {
        return Err(invalid_arg!(
            "stage {stage} state has shape {:?}, expected {len_k} frames of {:?}",
            x_hat.shape(),
            noise.tail_shape()
        ));
    }
    let t_k = sched.interval(stage).1;
    if t_k == 0.0 {
        return Err(Error::DegenerateTransition(format!(
            "stage {stage} ends at t = 0; cannot extrapolate to clean data"
        )));
    }
    let noise_k = resample_to(noise, len_k)?;
    let clean_k = x_hat.lincomb(1.0 / t_k, &noise_k, -(1.0 - t_k) / t_k)?;
    let len_next = sched.stage_length(stage + 1, full)?;
    let clean_next = resample_to(&clean_k, len_next)?;
    let noise_next = resample_to(noise, len_next)?;
    noise_next.lincomb(1.0 - t_k, &clean_next, t_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[f64]) -> TemporalTensor {
        TemporalTensor::from_frames(v).unwrap()
    }

    fn toy() -> (FlowEndpoints, ScaleSchedule) {
        let ep = FlowEndpoints::new(seq(&[1.0; 4]), seq(&[0.0, 2.0, 4.0, 6.0])).unwrap();
        let sched = ScaleSchedule::new(vec![0.5, 1.0], Some(vec![0.0, 0.5, 1.0])).unwrap();
        (ep, sched)
    }

    fn close(a: &TemporalTensor, b: &[f64], tol: f64) {
        assert_eq!(a.as_slice().len(), b.len());
        for (x, y) in a.as_slice().iter().zip(b) {
            assert!((x - y).abs() <= tol, "{:?} vs {:?}", a.as_slice(), b);
        }
    }

    #[test]
    fn first_stage_starts_at_resampled_noise() {
        let (ep, sched) = toy();
        let e = stage_endpoints(&ep, &sched, 0).unwrap();
        assert_eq!(e.start, resample_to(ep.noise(), 2).unwrap());
    }

    #[test]
    fn second_stage_endpoints() {
        let (ep, sched) = toy();
        let e = stage_endpoints(&ep, &sched, 1).unwrap();
        close(&e.start, &[0.5, 1.5, 2.5, 3.5], 1e-12);
        close(&e.end, &[0.0, 2.0, 4.0, 6.0], 0.0);
        assert!(stage_endpoints(&ep, &sched, 2).is_err());
    }

    #[test]
    fn training_sample_endpoints_and_midpoint() {
        let (ep, sched) = toy();
        let e = stage_endpoints(&ep, &sched, 1).unwrap();
        let left = training_sample(&ep, &sched, 1, 0.5).unwrap();
        assert_eq!(left.tau, 0.0);
        assert_eq!(left.point, e.start);
        let right = training_sample(&ep, &sched, 1, 1.0).unwrap();
        assert_eq!(right.tau, 1.0);
        assert_eq!(right.point, e.end);
        let mid = training_sample(&ep, &sched, 1, 0.75).unwrap();
        assert_eq!(mid.tau, 0.5);
        close(&mid.point, &[0.25, 1.75, 3.25, 4.75], 1e-12);
        close(&mid.target, &[-0.5, 0.5, 1.5, 2.5], 1e-12);
        assert!(training_sample(&ep, &sched, 1, 0.25).is_err());
        assert!(training_sample(&ep, &sched, 0, 0.75).is_err());
    }

    #[test]
    fn loss_examples() {
        let t = seq(&[0.3, -1.0, 2.0, 5.0]);
        assert_eq!(hfm_loss(&t, &t).unwrap(), 0.0);
        let ones = t.add(&seq(&[1.0; 4])).unwrap();
        assert!((hfm_loss(&ones, &t).unwrap() - 1.0).abs() < 1e-15);
        let spike = t.add(&seq(&[2.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((hfm_loss(&spike, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(hfm_loss(&t, &seq(&[0.0; 3])).is_err());
    }

    #[test]
    fn transition_reaches_next_start() {
        let (ep, sched) = toy();
        let end0 = stage_endpoints(&ep, &sched, 0).unwrap().end;
        close(&end0, &[0.5, 3.5], 1e-12);
        let next = cross_scale_transition(&end0, ep.noise(), &sched, 0).unwrap();
        close(&next, &[0.5, 1.5, 2.5, 3.5], 1e-12);
        assert!(cross_scale_transition(&end0, ep.noise(), &sched, 1).is_err());
        assert!(cross_scale_transition(&seq(&[0.0; 3]), ep.noise(), &sched, 0).is_err());
    }

    #[test]
    fn denoise_at_half_time() {
        // t_k = 0.5: the extrapolated clean data is 2 x_hat - f(x0, r_k)
        let noise = seq(&[0.2, -0.4, 1.0, 0.6]);
        let sched = ScaleSchedule::new(vec![0.5, 1.0], None).unwrap();
        let x_hat = seq(&[3.0, -1.0]);
        let out = cross_scale_transition(&x_hat, &noise, &sched, 0).unwrap();
        let noise_k = resample_to(&noise, 2).unwrap();
        let clean = x_hat.lincomb(2.0, &noise_k, -1.0).unwrap();
        let want = resample_to(&noise, 4)
            .unwrap()
            .lincomb(0.5, &resample_to(&clean, 4).unwrap(), 0.5)
            .unwrap();
        assert!(out.max_abs_diff(&want).unwrap() < 1e-12);
    }
}
