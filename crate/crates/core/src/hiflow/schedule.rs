use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::resample::resampled_length;

/// Temporal scales `r_1 < ... < r_K <= 1` and the time partition
/// `0 = t_0 < t_1 < ... < t_K = 1` that assigns each scale its slice of the
/// flow. Stages are indexed from zero: stage `k` runs at `scales[k]` over
/// `[times[k], times[k + 1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct ScaleSchedule {
    scales: Vec<f64>,
    times: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub scales: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

impl TryFrom<ScheduleSpec> for ScaleSchedule {
    type Error = Error;

    fn try_from(spec: ScheduleSpec) -> Result<Self> {
        ScaleSchedule::new(spec.scales, spec.times)
    }
}

impl From<ScaleSchedule> for ScheduleSpec {
    fn from(s: ScaleSchedule) -> Self {
        ScheduleSpec {
            scales: s.scales,
            times: Some(s.times),
        }
    }
}

impl ScaleSchedule {
    /// Validates a schedule. Omitted times default to the uniform partition
    /// `t_k = k / K`.
    pub fn new(scales: Vec<f64>, times: Option<Vec<f64>>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidSchedule(msg));
        if scales.is_empty() {
            return bad("at least one scale is required".into());
        }
        if scales.iter().any(|r| !r.is_finite() || *r <= 0.0 || *r > 1.0) {
            return bad(format!("scales must lie in (0, 1], got {scales:?}"));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("scales must be strictly increasing, got {scales:?}"));
        }
        let k = scales.len();
        let times = match times {
            Some(t) => t,
            None => (0..=k).map(|i| i as f64 / k as f64).collect(),
        };
        if times.len() != k + 1 {
            return bad(format!("expected {} time points, got {}", k + 1, times.len()));
        }
        if times[0] != 0.0 || times[k] != 1.0 {
            return bad(format!("time partition must start at 0 and end at 1, got {times:?}"));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("time points must be strictly increasing, got {times:?}"));
        }
        Ok(Self { scales, times })
    }

    /// Plain flow matching: one stage at full resolution.
    pub fn single() -> Self {
        Self::new(vec![1.0], None).expect("valid")
    }

    pub fn stages(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn scale(&self, stage: usize) -> f64 {
        self.scales[stage]
    }

    /// `(t_start, t_end)` of a stage.
    pub fn interval(&self, stage: usize) -> (f64, f64) {
        (self.times[stage], self.times[stage + 1])
    }

    pub fn check_stage(&self, stage: usize) -> Result<()> {
        if stage >= self.stages() {
            return Err(invalid_arg!(
                "stage {stage} out of range for a {}-stage schedule",
                self.stages()
            ));
        }
        Ok(())
    }

    /// Temporal length of stage `stage` for a full-scale length `frames`.
    pub fn stage_length(&self, stage: usize, frames: usize) -> Result<usize> {
        self.check_stage(stage)?;
        resampled_length(frames, self.scales[stage])
    }

    /// Index of the stage whose scale is `scale`, if any.
    pub fn stage_of_scale(&self, scale: f64) -> Option<usize> {
        self.scales.iter().position(|r| (r - scale).abs() < 1e-9)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_default_times() {
        let s = ScaleSchedule::new(vec![1.0 / 3.0, 2.0 / 3.0, 1.0], None).unwrap();
        assert_eq!(s.stages(), 3);
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in s.times().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_stage() {
        let s = ScaleSchedule::new(vec![1.0], None).unwrap();
        assert_eq!(s.stages(), 1);
        assert_eq!(s.times(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_schedules() {
        let cases: Vec<(Vec<f64>, Option<Vec<f64>>)> = vec![
            (vec![2.0 / 3.0, 1.0 / 3.0, 1.0], None),
            (vec![], None),
            (vec![0.5, 1.2], None),
            (vec![0.0, 1.0], None),
            (vec![0.5, 0.5], None),
            (vec![0.5, 1.0], Some(vec![0.0, 1.0])),
            (vec![0.5, 1.0], Some(vec![0.1, 0.5, 1.0])),
            (vec![0.5, 1.0], Some(vec![0.0, 0.5, 0.9])),
            (vec![0.5, 1.0], Some(vec![0.0, 0.0, 1.0])),
        ];
        for (scales, times) in cases {
            let err = ScaleSchedule::new(scales.clone(), times).unwrap_err();
            assert!(matches!(err, Error::InvalidSchedule(_)), "{scales:?}");
        }
    }

    #[test]
    fn serde_validates() {
        let ok: ScaleSchedule = toml::from_str("scales = [0.5, 1.0]").unwrap();
        assert_eq!(ok.times(), &[0.0, 0.5, 1.0]);
        assert!(toml::from_str::<ScaleSchedule>("scales = [1.0, 0.5]").is_err());
    }

    #[test]
    fn stage_lengths_for_thirds() {
        let s = ScaleSchedule::new(vec![1.0 / 3.0, 2.0 / 3.0, 1.0], None).unwrap();
        let lens: Vec<usize> = (0..3).map(|k| s.stage_length(k, 18).unwrap()).collect();
        assert_eq!(lens, vec![6, 12, 18]);
    }
}
