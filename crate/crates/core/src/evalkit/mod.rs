//! Evaluation at desk scale: distributional distance, diversity,
//! rule-based semantic accuracy and sampler diagnostics.

pub mod diagnostic;
pub mod features;
pub mod retention;
pub mod rules;

pub use diagnostic::{noise_consistency_diagnostic, CountingRng, FreshNoiseTransition, NoiseConsistencyReport};
pub use features::{diversity, frechet_pose_distance, pose_features, PoseFeatureSet};
pub use retention::{retention_study, retention_table, RetentionRow, DEFAULT_RATIOS};
pub use rules::{rule_passes, semantic_accuracy, RootPath, RuleSet};
