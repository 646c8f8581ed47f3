//! Compares the exact cross-scale transition with a naive rule that
//! renoises each new stage with a fresh draw.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid_arg, Result};
use crate::hiflow::{draw_noise, ExactTransition, HierarchicalSampler, ScaleSchedule, Transition, VelocityField};
use crate::resample::{resample_to, TemporalTensor};
use crate::synthdata::splitmix64;

/// Wraps an RNG and counts every request made of it.
#[derive(Debug, Clone)]
pub struct CountingRng<R> {
    inner: R,
    draws: u64,
}

impl<R: RngCore> CountingRng<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, draws: 0 }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

impl<R: RngCore> RngCore for CountingRng<R> {
    fn next_u32(&mut self) -> u32 {
        self.draws += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.draws += 1;
        self.inner.fill_bytes(dst)
    }
}

/// Denoise and upsample as the exact rule does, then renoise with a fresh
/// standard-normal draw instead of the resampled original noise.
#[derive(Debug, Default, Clone, Copy)]
pub struct FreshNoiseTransition;

impl Transition for FreshNoiseTransition {
    fn apply(
        &mut self,
        x_hat: &TemporalTensor,
        noise: &TemporalTensor,
        sched: &ScaleSchedule,
        stage: usize,
        rng: &mut dyn RngCore,
    ) -> Result<TemporalTensor> {
        let full = noise.frames();
        let t_k = sched.interval(stage).1;
        let noise_k = resample_to(noise, sched.stage_length(stage, full)?)?;
        let clean_k = x_hat.lincomb(1.0 / t_k, &noise_k, -(1.0 - t_k) / t_k)?;
        let len_next = sched.stage_length(stage + 1, full)?;
        let clean_next = resample_to(&clean_k, len_next)?;
        let fresh = draw_noise(len_next, noise.tail_shape(), rng);
        fresh.lincomb(1.0 - t_k, &clean_next, t_k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    /// RMS difference between two exact-rule runs from the same noise.
    pub exact_deviation: f64,
    /// RMS difference between two fresh-noise runs from the same noise.
    pub naive_deviation: f64,
    /// RMS difference between the first run of each rule.
    pub cross_rule: f64,
    pub exact_draws: u64,
    pub naive_draws: u64,
    pub exact_bitwise_repeatable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConsistencyReport {
    pub seeds: Vec<SeedReport>,
    pub exact_transition_gap: f64,
    pub naive_transition_gap: f64,
    pub cross_rule_gap: f64,
    pub exact_draws: u64,
}

impl NoiseConsistencyReport {
    pub fn exact_bitwise_repeatable(&self) -> bool {
        self.seeds.iter().all(|s| s.exact_bitwise_repeatable)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("seed\texact_dev\tnaive_dev\tcross_rule\texact_draws\tnaive_draws\n");
        for r in &self.seeds {
            s += &format!(
                "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{}\t{}\n",
                r.seed, r.exact_deviation, r.naive_deviation, r.cross_rule, r.exact_draws, r.naive_draws
            );
        }
        s += &format!(
            "mean\t{:.6e}\t{:.6e}\t{:.6e}\t{}\t-\n",
            self.exact_transition_gap, self.naive_transition_gap, self.cross_rule_gap, self.exact_draws
        );
        s
    }
}

fn rms(a: &TemporalTensor, b: &TemporalTensor) -> Result<f64> {
    Ok(a.sub(b)?.mean_square().sqrt())
}

/// For each seed, draws the initial noise of shape `frames x tail` and
/// samples twice with each transition rule.
pub fn noise_consistency_diagnostic(
    vfn: &dyn VelocityField,
    sampler: &HierarchicalSampler,
    frames: usize,
    tail: &[usize],
    seeds: &[u64],
) -> Result<NoiseConsistencyReport> {
    if sampler.schedule().stages() < 2 {
        return Err(invalid_arg!("the diagnostic needs a schedule with at least two stages"));
    }
    if seeds.is_empty() {
        return Err(invalid_arg!("the diagnostic needs at least one seed"));
    }
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let noise = draw_noise(frames, tail, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut exact_draws = 0;
        let mut exact = Vec::new();
        for run in 0..2u64 {
            let mut rng = CountingRng::new(ChaCha8Rng::seed_from_u64(splitmix64(seed ^ run)));
            exact.push(sampler.sample_with(vfn, &noise, &mut ExactTransition, &mut rng, &mut |_| {})?);
            exact_draws += rng.draws();
        }
        let mut naive_draws = 0;
        let mut naive = Vec::new();
        for run in 0..2u64 {
            let mut rng = CountingRng::new(ChaCha8Rng::seed_from_u64(splitmix64(seed ^ run)));
            naive.push(sampler.sample_with(vfn, &noise, &mut FreshNoiseTransition, &mut rng, &mut |_| {})?);
            naive_draws += rng.draws();
        }
        reports.push(SeedReport {
            seed,
            exact_deviation: rms(&exact[0], &exact[1])?,
            naive_deviation: rms(&naive[0], &naive[1])?,
            cross_rule: rms(&exact[0], &naive[0])?,
            exact_draws,
            naive_draws,
            exact_bitwise_repeatable: exact[0] == exact[1],
        });
    }
    let mean = |f: fn(&SeedReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    Ok(NoiseConsistencyReport {
        exact_transition_gap: mean(|r| r.exact_deviation),
        naive_transition_gap: mean(|r| r.naive_deviation),
        cross_rule_gap: mean(|r| r.cross_rule),
        exact_draws: reports.iter().map(|r| r.exact_draws).sum(),
        seeds: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hiflow::{stage_endpoints, Branch, FlowEndpoints, GuidanceConfig, StageQuery};

    fn sampler() -> HierarchicalSampler {
        let sched = ScaleSchedule::new(vec![1.0 / 3.0, 2.0 / 3.0, 1.0], None).unwrap();
        HierarchicalSampler::new(sched, vec![4, 4, 4], GuidanceConfig::unguided()).unwrap()
    }

    fn damped(x: &TemporalTensor, q: &StageQuery, _: Branch) -> Result<TemporalTensor> {
        Ok(x.scale(-0.5 * q.scale))
    }

    #[test]
    fn exact_rule_draws_nothing_and_repeats() {
        let report = noise_consistency_diagnostic(&damped, &sampler(), 18, &[2, 3], &[1, 2, 3]).unwrap();
        assert_eq!(report.exact_draws, 0);
        assert_eq!(report.exact_transition_gap, 0.0);
        assert!(report.exact_bitwise_repeatable());
        assert!(report.naive_transition_gap > 0.0);
        assert!(report.seeds.iter().all(|s| s.naive_draws > 0));
        assert!(report.to_text().lines().count() == 5);
    }

    #[test]
    fn oracle_reaches_data_only_with_exact_rule() {
        let s = sampler();
        let sched = s.schedule().clone();
        let noise = draw_noise(18, &[2], &mut ChaCha8Rng::seed_from_u64(5));
        let data = draw_noise(18, &[2], &mut ChaCha8Rng::seed_from_u64(6));
        let ep = FlowEndpoints::new(noise.clone(), data.clone()).unwrap();
        let oracle = move |_: &TemporalTensor, q: &StageQuery, _: Branch| {
            let se = stage_endpoints(&ep, &sched, q.stage)?;
            se.end.sub(&se.start)
        };
        let exact = s.sample(&oracle, &noise).unwrap();
        assert!(exact.max_abs_diff(&data).unwrap() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let naive = s
            .sample_with(&oracle, &noise, &mut FreshNoiseTransition, &mut rng, &mut |_| {})
            .unwrap();
        assert!(naive.max_abs_diff(&data).unwrap() > 1e-3);
    }

    #[test]
    fn single_stage_is_rejected() {
        let s = HierarchicalSampler::new(ScaleSchedule::single(), vec![2], GuidanceConfig::unguided()).unwrap();
        assert!(noise_consistency_diagnostic(&damped, &s, 8, &[1], &[0]).is_err());
    }
}
