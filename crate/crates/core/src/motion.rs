//! Pose-feature sequences and their channel layout.

use crate::error::{invalid_arg, Result};
use crate::resample::TemporalTensor;

/// Channels per joint in the synthetic layout.
pub const CHANNELS: usize = 6;

/// Channel indices of the pelvis (root) joint.
pub mod root {
    pub const HEIGHT: usize = 0;
    pub const YAW_RATE: usize = 1;
    pub const VEL_LATERAL: usize = 2;
    pub const VEL_FORWARD: usize = 3;
    pub const VEL_UP: usize = 4;
}

/// Channel indices of every non-root joint: position relative to the root in
/// the heading frame (x lateral, y up, z forward) followed by its velocity.
pub mod local {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const Z: usize = 2;
}

/// `frames x joints x channels` pose features, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    frames: usize,
    joints: usize,
    channels: usize,
    data: Vec<f32>,
}

impl MotionSequence {
    pub fn new(frames: usize, joints: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || joints == 0 || channels == 0 {
            return Err(invalid_arg!("motion dimensions must be positive: {frames}x{joints}x{channels}"));
        }
        if data.len() != frames * joints * channels {
            return Err(invalid_arg!(
                "motion payload has {} values, expected {frames}x{joints}x{channels}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid_arg!("motion payload has non-finite values"));
        }
        Ok(Self {
            frames,
            joints,
            channels,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.joints, self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, frame: usize, joint: usize, channel: usize) -> f32 {
        self.data[(frame * self.joints + joint) * self.channels + channel]
    }

    /// One channel of one joint over time, widened to `f64`.
    pub fn track(&self, joint: usize, channel: usize) -> Vec<f64> {
        (0..self.frames).map(|f| self.get(f, joint, channel) as f64).collect()
    }

    pub fn to_temporal(&self) -> TemporalTensor {
        TemporalTensor::from_vec(
            self.frames,
            &[self.joints, self.channels],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("finite by construction")
    }

    pub fn from_temporal(t: &TemporalTensor) -> Result<Self> {
        match t.tail_shape() {
            &[j, c] => Self::new(t.frames(), j, c, t.as_slice().iter().map(|&v| v as f32).collect()),
            other => Err(invalid_arg!("expected frames x joints x channels, got tail {other:?}")),
        }
    }
}
