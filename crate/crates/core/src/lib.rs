//! Coarse-to-fine flow matching for text-conditioned skeletal motion.
//!
//! The crate is organised bottom-up:
//!
//! * [`resample`] moves sequences between temporal scales.
//! * [`hiflow`] holds the stage-wise paths, the cross-scale transition and
//!   the sampler.
//! * [`skeleton`] and [`jointrope`] describe the body and encode token
//!   positions.
//! * [`tmdit`] and [`motionvae`] are the two networks.
//! * [`synthdata`], [`trainer`] and [`evalkit`] provide data, training and
//!   evaluation at desk scale.

pub mod checkpoint;
pub mod error;
pub mod evalkit;
pub mod hiflow;
pub mod jointrope;
pub mod motion;
pub mod motionvae;
pub mod nn;
pub mod pipeline;
pub mod resample;
pub mod skeleton;
pub mod synthdata;
pub mod tmdit;
pub mod trainer;

pub use candle_core::{DType, Device, Tensor};
pub use error::{Error, Result};
pub use hiflow::{FlowEndpoints, GuidanceConfig, HierarchicalSampler, ScaleSchedule};
pub use motion::MotionSequence;
pub use resample::{resample, resampled_length, TemporalTensor};
