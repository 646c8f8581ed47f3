//! Semantic accuracy of ground-truth motions after temporal downsampling.

use crate::error::{invalid_arg, Result};
use crate::motion::MotionSequence;
use crate::resample::resample;
use crate::synthdata::programs::{MotionLabel, FPS};

use super::rules::RuleSet;

pub const DEFAULT_RATIOS: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

#[derive(Debug, Clone, PartialEq)]
pub struct RetentionRow {
    pub ratio: f64,
    pub mean_frames: f64,
    pub accuracy: f64,
}

/// Downsamples every motion by each ratio and scores it. Rules see the
/// original duration spread over the shorter sequence.
pub fn retention_study(
    samples: &[(MotionSequence, MotionLabel)],
    ratios: &[f64],
    rules: &RuleSet,
) -> Result<Vec<RetentionRow>> {
    if ratios.is_empty() {
        return Err(invalid_arg!("retention study needs at least one ratio"));
    }
    ratios
        .iter()
        .map(|&ratio| {
            let resampled = samples
                .iter()
                .map(|(m, label)| {
                    let short = MotionSequence::from_temporal(&resample(&m.to_temporal(), ratio)?)?;
                    let duration = (m.frames() - 1) as f64 / FPS;
                    let dt = duration / short.frames().saturating_sub(1).max(1) as f64;
                    Ok((short, *label, dt))
                })
                .collect::<Result<Vec<_>>>()?;
            let accuracy = rules.accuracy_with_dt(resampled.iter().map(|(m, l, dt)| (m, l, *dt)))?;
            let mean_frames = resampled.iter().map(|(m, _, _)| m.frames() as f64).sum::<f64>() / resampled.len() as f64;
            Ok(RetentionRow {
                ratio,
                mean_frames,
                accuracy,
            })
        })
        .collect()
}

/// Plot-data table with a header row.
pub fn retention_table(rows: &[RetentionRow]) -> String {
    let mut s = String::from("ratio\tmean_frames\taccuracy\n");
    for r in rows {
        s += &format!("{:.3}\t{:.2}\t{:.6}\n", r.ratio, r.mean_frames, r.accuracy);
    }
    s
}
