use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hiflow_core::hiflow::{Branch, StageQuery};
use hiflow_core::jointrope::{token_positions, RopeConfig, RopeTable};
use hiflow_core::motionvae::Normalizer;
use hiflow_core::skeleton::{SkeletonLayout, LATENT_GROUPS};
use hiflow_core::synthdata::Vocabulary;
use hiflow_core::tmdit::{TextMotionModel, TmditConfig};
use hiflow_core::{resample, DType, Device, GuidanceConfig, HierarchicalSampler, ScaleSchedule, TemporalTensor, Tensor};

fn ramp(frames: usize, tail: &[usize]) -> TemporalTensor {
    let n = frames * tail.iter().product::<usize>();
    let values = (0..n).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
    TemporalTensor::from_vec(frames, tail, values).unwrap()
}

fn bench_resample(c: &mut Criterion) {
    let x = ramp(196, &[22, 3]);
    c.bench_function("resample 196x22x3 to half", |b| b.iter(|| resample(black_box(&x), 0.5).unwrap()));
}

fn bench_rope(c: &mut Criterion) {
    let layout = SkeletonLayout::reference().pooled(&LATENT_GROUPS).unwrap();
    let positions = token_positions(&layout, 16, 1.0).unwrap();
    let cfg = RopeConfig::with_head_dim(16).unwrap();
    let table = RopeTable::new(&positions, &cfg, DType::F32, &Device::Cpu).unwrap();
    let x = Tensor::ones((32, positions.len(), 4, 16), DType::F32, &Device::Cpu).unwrap();
    c.bench_function("joint rope apply 32x96x4x16", |b| b.iter(|| table.apply(black_box(&x)).unwrap()));
}

fn bench_sampler(c: &mut Criterion) {
    let sched = ScaleSchedule::new(vec![1.0 / 3.0, 2.0 / 3.0, 1.0], None).unwrap();
    let sampler = HierarchicalSampler::new(sched, vec![10; 3], GuidanceConfig::new(2.0).unwrap()).unwrap();
    let noise = ramp(64, &[6, 8]);
    // cheap analytic field so the sampler's own overhead is what gets timed
    let vfn = |x: &TemporalTensor, q: &StageQuery, _: Branch| Ok(x.scale(-q.scale));
    c.bench_function("hierarchical sampler 3x10 steps, 64x6x8", |b| {
        b.iter(|| sampler.sample(&vfn, black_box(&noise)).unwrap())
    });
}

fn bench_tmdit(c: &mut Criterion) {
    let vocab = Vocabulary::standard();
    let cfg = TmditConfig::desk(vocab.len());
    let width = cfg.latent_joints * cfg.latent_dim;
    let model = TextMotionModel::new(&cfg, vocab, Normalizer::identity(width), 0, DType::F32).unwrap();
    let tokens = vec![model.vocab.tokenize("a person jumps up").unwrap(); 8];
    let x = Tensor::zeros((8, cfg.latent_frames, cfg.latent_joints, cfg.latent_dim), DType::F32, &Device::Cpu).unwrap();
    let t = vec![0.5; 8];
    c.bench_function("tmdit desk forward, batch 8", |b| {
        b.iter(|| model.net.forward(black_box(&x), &t, 1.0, &tokens).unwrap())
    });
}

criterion_group!(benches, bench_resample, bench_rope, bench_sampler, bench_tmdit);
criterion_main!(benches);
