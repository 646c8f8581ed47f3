//! Loader for dense pose-feature arrays produced outside this crate.
//!
//! The input is a 2-D `.npy` array (`frames x feature_dim`, `f32` or `f64`).
//! A layout file maps flat feature indices onto per-joint channels:
//!
//! ```toml
//! feature_dim = 90
//! channels_per_joint = 6
//!
//! [[joints]]
//! name = "pelvis"
//! features = [0, 1, 2, 3, 4, 5]
//! ```
//!
//! A joint may list fewer features than `channels_per_joint`; the remaining
//! channels are zero. Each feature index may appear at most once.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFeatures {
    pub name: String,
    pub features: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub feature_dim: usize,
    pub channels_per_joint: usize,
    pub joints: Vec<JointFeatures>,
}

impl FeatureLayout {
    /// Identity layout of the synthetic corpus: joint `j` owns features
    /// `j*6 .. j*6+6`.
    pub fn synthetic(names: &[&str]) -> Self {
        Self {
            feature_dim: names.len() * CHANNELS,
            channels_per_joint: CHANNELS,
            joints: names
                .iter()
                .enumerate()
                .map(|(j, n)| JointFeatures {
                    name: n.to_string(),
                    features: (j * CHANNELS..(j + 1) * CHANNELS).collect(),
                })
                .collect(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let layout: FeatureLayout = toml::from_str(s).map_err(|e| Error::Format(format!("feature layout: {e}")))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fmt = |m: String| Err(Error::Format(format!("feature layout: {m}")));
        if self.joints.is_empty() || self.channels_per_joint == 0 {
            return fmt("needs at least one joint and one channel".into());
        }
        let mut seen = vec![false; self.feature_dim];
        for j in &self.joints {
            if j.features.len() > self.channels_per_joint {
                return fmt(format!(
                    "joint {} lists {} features, more than {}",
                    j.name,
                    j.features.len(),
                    self.channels_per_joint
                ));
            }
            for &f in &j.features {
                match seen.get_mut(f) {
                    None => return fmt(format!("feature {f} of joint {} out of range", j.name)),
                    Some(true) => return fmt(format!("feature {f} mapped twice")),
                    Some(s) => *s = true,
                }
            }
        }
        Ok(())
    }

    /// Arranges a `frames x feature_dim` row-major array into a motion.
    pub fn to_motion(&self, frames: usize, flat: &[f32]) -> Result<MotionSequence> {
        if flat.len() != frames * self.feature_dim {
            return Err(Error::Format(format!(
                "feature array has {} values, expected {frames} x {}",
                flat.len(),
                self.feature_dim
            )));
        }
        let (jn, cn) = (self.joints.len(), self.channels_per_joint);
        let mut data = vec![0f32; frames * jn * cn];
        for f in 0..frames {
            let row = &flat[f * self.feature_dim..(f + 1) * self.feature_dim];
            for (j, joint) in self.joints.iter().enumerate() {
                for (c, &src) in joint.features.iter().enumerate() {
                    data[(f * jn + j) * cn + c] = row[src];
                }
            }
        }
        MotionSequence::new(frames, jn, cn, data)
    }

    /// Inverse of [`FeatureLayout::to_motion`]; unmapped features are zero.
    pub fn to_flat(&self, motion: &MotionSequence) -> Result<Vec<f32>> {
        if motion.joints() != self.joints.len() || motion.channels() != self.channels_per_joint {
            return Err(Error::Format(format!(
                "motion is {}x{}, layout expects {}x{}",
                motion.joints(),
                motion.channels(),
                self.joints.len(),
                self.channels_per_joint
            )));
        }
        let mut flat = vec![0f32; motion.frames() * self.feature_dim];
        for f in 0..motion.frames() {
            for (j, joint) in self.joints.iter().enumerate() {
                for (c, &dst) in joint.features.iter().enumerate() {
                    flat[f * self.feature_dim + dst] = motion.get(f, j, c);
                }
            }
        }
        Ok(flat)
    }
}

/// Reads a `.npy` feature file and arranges it with `layout`.
pub fn load_pose_features(path: impl AsRef<Path>, layout: &FeatureLayout) -> Result<MotionSequence> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let t = Tensor::read_npy(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (frames, dim) = t
        .dims2()
        .map_err(|_| Error::Format(format!("{}: expected a 2-D array, got {:?}", path.display(), t.dims())))?;
    if dim != layout.feature_dim {
        return Err(Error::Format(format!(
            "{}: feature_dim {dim} does not match layout ({})",
            path.display(),
            layout.feature_dim
        )));
    }
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    layout.to_motion(frames, &flat)
}

/// Writes `motion` as a `frames x feature_dim` `f32` `.npy` file.
pub fn save_pose_features(path: impl AsRef<Path>, motion: &MotionSequence, layout: &FeatureLayout) -> Result<()> {
    let flat = layout.to_flat(motion)?;
    let t = Tensor::from_vec(flat, (motion.frames(), layout.feature_dim), &Device::Cpu)?;
    t.write_npy(path.as_ref())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::SkeletonLayout;
    use crate::synthdata::programs::{generate_motion, MotionLabel};

    fn synthetic() -> FeatureLayout {
        let skel = SkeletonLayout::reference();
        let names: Vec<&str> = skel.joints().iter().map(|j| j.name.as_str()).collect();
        FeatureLayout::synthetic(&names)
    }

    #[test]
    fn reshape_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.npy");
        let layout = synthetic();
        let m = generate_motion(&MotionLabel::Jump { height: 0.3 }, 40, 2).unwrap();
        save_pose_features(&path, &m, &layout).unwrap();
        let back = load_pose_features(&path, &layout).unwrap();
        assert_eq!(back.shape(), [40, 15, 6]);
        assert_eq!(back.data(), m.data());
    }

    #[test]
    fn reads_f64_arrays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.npy");
        let layout = synthetic();
        let vals: Vec<f64> = (0..3 * 90).map(|i| i as f64).collect();
        Tensor::from_vec(vals, (3, 90), &Device::Cpu).unwrap().write_npy(&path).unwrap();
        let m = load_pose_features(&path, &layout).unwrap();
        assert_eq!(m.get(2, 14, 5), (2 * 90 + 89) as f32);
    }

    #[test]
    fn wrong_feature_dim_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.npy");
        Tensor::zeros((4, 91), DType::F32, &Device::Cpu).unwrap().write_npy(&path).unwrap();
        assert!(matches!(load_pose_features(&path, &synthetic()), Err(Error::Format(_))));
    }

    #[test]
    fn layout_validation() {
        let bad = "feature_dim = 4\nchannels_per_joint = 2\n[[joints]]\nname = \"a\"\nfeatures = [0, 5]\n";
        assert!(FeatureLayout::from_toml_str(bad).is_err());
        let dup = "feature_dim = 4\nchannels_per_joint = 2\n[[joints]]\nname = \"a\"\nfeatures = [0, 1]\n[[joints]]\nname = \"b\"\nfeatures = [1]\n";
        assert!(FeatureLayout::from_toml_str(dup).is_err());
        let ok = "feature_dim = 3\nchannels_per_joint = 2\n[[joints]]\nname = \"a\"\nfeatures = [2, 0]\n[[joints]]\nname = \"b\"\nfeatures = [1]\n";
        let l = FeatureLayout::from_toml_str(ok).unwrap();
        let m = l.to_motion(1, &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(m.data(), &[12.0, 10.0, 11.0, 0.0]);
    }

    #[test]
    fn shipped_humanoid_layout_parses() {
        let text = include_str!("../../../../configs/layout_humanoid263.toml");
        let l = FeatureLayout::from_toml_str(text).unwrap();
        assert_eq!(l.feature_dim, 263);
        assert_eq!(l.joints.len(), 22);
    }
}
