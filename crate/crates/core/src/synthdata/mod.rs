//! Procedural motion-text corpus.

pub mod corpus;
pub mod posefeat;
pub mod programs;
pub mod text;

pub use corpus::{record_seed, splitmix64, Corpus, CorpusHeader, CorpusRecord, CorpusSpec, Split};
pub use posefeat::{load_pose_features, save_pose_features, FeatureLayout, JointFeatures};
pub use programs::{generate_motion, MotionLabel, Program, Rotation, Side, FPS, MIN_FRAMES, REST_HEIGHT};
pub use text::{describe, normalize_text, text_condition, Vocabulary, NULL_ID, NULL_TOKEN, PAD_ID, PAD_TOKEN};
