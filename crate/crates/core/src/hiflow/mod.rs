//! Hierarchical flow matching: per-stage paths at increasing temporal
//! scales, glued together by an exact cross-scale transition.

mod path;
mod sampler;
mod schedule;

pub use path::{
    cross_scale_transition, draw_noise, hfm_loss, stage_endpoints, training_sample, FlowEndpoints, FlowSample,
    StageEndpoints,
};
pub use sampler::{
    cfg_velocity, hierarchical_sample, integrate_stage, integrate_stage_traced, Branch, ExactTransition,
    GuidanceConfig, HierarchicalSampler, StageQuery, TraceEvent, Transition, VelocityField,
};
pub use schedule::{ScaleSchedule, ScheduleSpec};
