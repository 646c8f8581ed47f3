//! Topology-aware motion VAE.
//!
//! The encoder alternates graph convolutions over the skeleton with stride-2
//! temporal convolutions, then mean-pools joints into the latent groups. The
//! decoder broadcasts each group back to its member joints and mirrors the
//! encoder with 2x temporal upsampling.
//!
//! Tensors are laid out `[batch, frames, joints, channels]` throughout.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{meta_object, Checkpoint};
use crate::error::{invalid_arg, Error, Result};
use crate::motion::MotionSequence;
use crate::nn::{add_row, add_trailing, conv_weight, small_init, Dense, ParamStore, LINEAR_KAIMING};
use crate::resample::{resample_matrix, resampled_length, TemporalTensor};
use crate::skeleton::{SkeletonLayout, LATENT_GROUPS};

/// Temporal downsampling factor of the encoder.
pub const TIME_FACTOR: usize = 4;
const KERNEL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub joints: usize,
    pub channels: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub kl_weight: f64,
    pub aug_weight: f64,
    /// Fraction of each batch that receives the augmentation loss.
    pub aug_fraction: f64,
    pub aug_min_ratio: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            joints: 15,
            channels: 6,
            hidden: 64,
            latent_dim: 8,
            kl_weight: 1e-2,
            aug_weight: 0.5,
            aug_fraction: 0.5,
            aug_min_ratio: 0.3,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 || self.channels == 0 || self.hidden == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig("VAE dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.aug_fraction) || !(self.aug_min_ratio > 0.0 && self.aug_min_ratio <= 1.0) {
            return Err(Error::InvalidConfig("aug_fraction must be in [0, 1] and aug_min_ratio in (0, 1]".into()));
        }
        if self.kl_weight < 0.0 || self.aug_weight < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Symmetric-normalized adjacency with self loops, `D^-1/2 (A + I) D^-1/2`.
pub fn normalized_adjacency(layout: &SkeletonLayout) -> Vec<f64> {
    let n = layout.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for (p, c) in layout.edges() {
        a[p * n + c] = 1.0;
        a[c * n + p] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    a
}

/// `groups x joints` row-normalized pooling matrix and its one-hot
/// transpose for unpooling.
pub fn pooling_matrices(assignment: &[usize], groups: usize) -> (Vec<f64>, Vec<f64>) {
    let j = assignment.len();
    let mut pool = vec![0.0; groups * j];
    let mut unpool = vec![0.0; j * groups];
    for (ji, &g) in assignment.iter().enumerate() {
        pool[g * j + ji] = 1.0;
        unpool[ji * groups + g] = 1.0;
    }
    for g in 0..groups {
        let n: f64 = pool[g * j..(g + 1) * j].iter().sum();
        pool[g * j..(g + 1) * j].iter_mut().for_each(|v| *v /= n);
    }
    (pool, unpool)
}

/// Resamples axis 1 of `x: [batch, frames, ...]` to `frames` with the
/// linear operator, as a matmul so gradients flow.
pub fn resample_frames(x: &Tensor, frames: usize) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let src = dims[1];
    if src == frames {
        return Ok(x.clone());
    }
    let rest: usize = dims[2..].iter().product();
    let m = Tensor::from_vec(resample_matrix(src, frames), (frames, src), x.device())?.to_dtype(x.dtype())?;
    let flat = x.reshape((dims[0], src, rest))?;
    let out = m.broadcast_matmul(&flat)?;
    let mut shape = dims;
    shape[1] = frames;
    Ok(out.reshape(shape)?)
}

/// Temporal convolution shared over joints, on `[b, l, j, c]`: the input is
/// zero-padded by `pad` frames, then every output frame `t` mixes the
/// `KERNEL` input frames starting at `stride * t`. Written as one gather and
/// one 2-D matmul per kernel tap, so the backward pass only involves
/// indexing and matmuls.
fn temporal_conv(h: &Tensor, conv: &ConvParams, stride: usize, pad: (usize, usize)) -> Result<Tensor> {
    let h = h.pad_with_zeros(1, pad.0, pad.1)?;
    let (b, l, j, c) = h.dims4()?;
    if l < KERNEL {
        return Err(invalid_arg!("sequence of {l} frames is shorter than the kernel"));
    }
    let out_len = (l - KERNEL) / stride + 1;
    let o = conv.w.dim(0)?;
    let mut acc: Option<Tensor> = None;
    for i in 0..KERNEL {
        let idx: Vec<u32> = (0..out_len).map(|t| (i + stride * t) as u32).collect();
        let tap = h
            .index_select(&Tensor::new(idx.as_slice(), h.device())?, 1)?
            .reshape((b * out_len * j, c))?;
        let y = tap.matmul(&conv.w.narrow(1, i, 1)?.squeeze(1)?.t()?)?;
        acc = Some(match acc {
            None => y,
            Some(a) => (a + y)?,
        });
    }
    let y = add_row(&acc.expect("kernel is non-empty"), &conv.b)?;
    Ok(y.reshape((b, out_len, j, o))?)
}

/// 2x temporal upsampling: zero insertion followed by a length-preserving
/// convolution, i.e. a stride-2 transposed convolution.
fn upsample_conv(h: &Tensor, conv: &ConvParams) -> Result<Tensor> {
    let (b, l, j, c) = h.dims4()?;
    let zeros = h.zeros_like()?;
    let spread = Tensor::stack(&[h, &zeros], 2)?.reshape((b, 2 * l, j, c))?;
    temporal_conv(&spread, conv, 1, (2, 1))
}

struct GraphConv {
    mix: Dense,
}

impl GraphConv {
    fn new(c: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            mix: Dense::new(c, c, vb)?,
        })
    }

    /// `h + silu(W (A h))` over the joint axis.
    fn forward(&self, h: &Tensor, adj: &Tensor) -> Result<Tensor> {
        let (b, l, j, c) = h.dims4()?;
        let agg = adj.broadcast_matmul(&h.reshape((b * l, j, c))?)?.reshape((b, l, j, c))?;
        Ok((h + self.mix.forward(&agg)?.silu()?)?)
    }
}

struct ConvParams {
    w: Tensor,
    b: Tensor,
}

impl ConvParams {
    fn new(c: usize, vb: VarBuilder) -> Result<Self> {
        let (w, b) = conv_weight(&vb, c, c, KERNEL)?;
        Ok(Self { w, b })
    }
}

/// Loss terms of one composite VAE objective.
#[derive(Debug, Clone)]
pub struct VaeLossTerms {
    pub total: Tensor,
    pub recon: Tensor,
    pub kl: Tensor,
    pub aug: Option<Tensor>,
}

/// Which batch items receive the augmentation loss, and at which ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct AugPlan {
    pub items: Vec<u32>,
    pub ratio: f64,
}

pub struct MotionVae {
    cfg: VaeConfig,
    groups: usize,
    adj: Tensor,
    pool: Tensor,
    unpool: Tensor,
    enc_in: Dense,
    enc_joint: Tensor,
    enc_graph: Vec<GraphConv>,
    enc_conv: Vec<ConvParams>,
    enc_group: Tensor,
    head_mean: Dense,
    head_logvar: Dense,
    dec_in: Dense,
    dec_joint: Tensor,
    dec_conv: Vec<ConvParams>,
    dec_graph: Vec<GraphConv>,
    dec_out: Dense,
}

impl MotionVae {
    pub fn new(cfg: &VaeConfig, layout: &SkeletonLayout, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        if layout.len() != cfg.joints {
            return Err(Error::InvalidConfig(format!(
                "VAE expects {} joints, layout has {}",
                cfg.joints,
                layout.len()
            )));
        }
        let assignment = layout.group_assignment(&LATENT_GROUPS)?;
        let groups = LATENT_GROUPS.len();
        let (dev, dt) = (vb.device().clone(), vb.dtype());
        let (j, c, d) = (cfg.joints, cfg.hidden, cfg.latent_dim);
        let (pool, unpool) = pooling_matrices(&assignment, groups);
        let constant = |v: Vec<f64>, shape: (usize, usize)| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, shape, &dev)?.to_dtype(dt)?)
        };
        let enc = vb.pp("encoder");
        let dec = vb.pp("decoder");
        Ok(Self {
            cfg: cfg.clone(),
            groups,
            adj: constant(normalized_adjacency(layout), (j, j))?,
            pool: constant(pool, (groups, j))?,
            unpool: constant(unpool, (j, groups))?,
            enc_in: Dense::new(cfg.channels, c, enc.pp("input"))?,
            enc_joint: enc.get_with_hints((j, c), "joint_embed", small_init(0.1))?,
            enc_graph: (0..2)
                .map(|i| GraphConv::new(c, enc.pp(format!("graph{i}"))))
                .collect::<Result<_>>()?,
            enc_conv: (0..2)
                .map(|i| ConvParams::new(c, enc.pp(format!("conv{i}"))))
                .collect::<Result<_>>()?,
            enc_group: enc.get_with_hints((groups, c), "group_embed", small_init(0.1))?,
            head_mean: Dense::new(c, d, enc.pp("mean"))?,
            head_logvar: Dense::with_init(c, d, small_init(0.01), enc.pp("logvar"))?,
            dec_in: Dense::new(d, c, dec.pp("input"))?,
            dec_joint: dec.get_with_hints((j, c), "joint_embed", small_init(0.1))?,
            dec_conv: (0..2)
                .map(|i| ConvParams::new(c, dec.pp(format!("conv{i}"))))
                .collect::<Result<_>>()?,
            dec_graph: (0..2)
                .map(|i| GraphConv::new(c, dec.pp(format!("graph{i}"))))
                .collect::<Result<_>>()?,
            dec_out: Dense::with_init(c, cfg.channels, LINEAR_KAIMING, dec.pp("output"))?,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.cfg
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Posterior `(mean, logvar)`, each `[b, floor(L/4), groups, d]`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, l, j, c) = x.dims4()?;
        if l < TIME_FACTOR {
            return Err(invalid_arg!("the encoder needs at least {TIME_FACTOR} frames, got {l}"));
        }
        if j != self.cfg.joints || c != self.cfg.channels {
            return Err(invalid_arg!("expected {}x{} per frame, got {j}x{c}", self.cfg.joints, self.cfg.channels));
        }
        let mut h = add_trailing(&self.enc_in.forward(x)?, &self.enc_joint)?;
        for (g, conv) in self.enc_graph.iter().zip(&self.enc_conv) {
            h = g.forward(&h, &self.adj)?;
            h = temporal_conv(&h, conv, 2, (1, 1))?.silu()?;
        }
        let lat = h.dim(1)?;
        let pooled = self
            .pool
            .broadcast_matmul(&h.reshape((b * lat, j, self.cfg.hidden))?)?
            .reshape((b, lat, self.groups, self.cfg.hidden))?;
        let pooled = add_trailing(&pooled, &self.enc_group)?;
        Ok((self.head_mean.forward(&pooled)?, self.head_logvar.forward(&pooled)?))
    }

    /// Reconstruction of `[b, l', groups, d]` latents, `[b, 4 l', J, D]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let (_, _, g, d) = z.dims4()?;
        if g != self.groups || d != self.cfg.latent_dim {
            return Err(invalid_arg!("expected {}x{} latents, got {g}x{d}", self.groups, self.cfg.latent_dim));
        }
        if !z.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?.is_finite() {
            return Err(invalid_arg!("latent contains non-finite values"));
        }
        self.decode_unchecked(z)
    }

    /// `decode` without the finiteness check, for the training losses where
    /// a blow-up must surface as a non-finite loss.
    fn decode_unchecked(&self, z: &Tensor) -> Result<Tensor> {
        let (b, l, g, _) = z.dims4()?;
        let c = self.cfg.hidden;
        let h = self.dec_in.forward(z)?.reshape((b * l, g, c))?;
        let h = self.unpool.broadcast_matmul(&h)?.reshape((b, l, self.cfg.joints, c))?;
        let mut h = add_trailing(&h, &self.dec_joint)?;
        for (conv, graph) in self.dec_conv.iter().zip(&self.dec_graph) {
            h = upsample_conv(&h, conv)?.silu()?;
            h = graph.forward(&h, &self.adj)?;
        }
        Ok(self.dec_out.forward(&h)?)
    }

    /// `decode` followed by resampling to `frames` when `4 l'` differs.
    pub fn decode_to_length(&self, z: &Tensor, frames: usize) -> Result<Tensor> {
        resample_frames(&self.decode(z)?, frames)
    }

    /// Decoded downsampled latent against the motion resampled to the
    /// decoder's output length.
    pub fn aug_loss(&self, z: &Tensor, x: &Tensor, ratio: f64) -> Result<Tensor> {
        if !(self.cfg.aug_min_ratio..=1.0).contains(&ratio) {
            return Err(invalid_arg!(
                "augmentation ratio {ratio} outside [{}, 1]",
                self.cfg.aug_min_ratio
            ));
        }
        let l = z.dim(1)?;
        let short = resample_frames(z, resampled_length(l, ratio)?)?;
        let out = self.decode_unchecked(&short)?;
        let target = resample_frames(x, out.dim(1)?)?;
        mse(&out, &target)
    }

    /// `recon + kl_weight * kl + aug_weight * aug` for normalized motions
    /// `x`, with the reparameterization noise `eps` supplied by the caller.
    pub fn composite_loss(&self, x: &Tensor, eps: &Tensor, aug: Option<&AugPlan>) -> Result<VaeLossTerms> {
        let (mean, logvar) = self.encode(x)?;
        let z = (&mean + (&logvar * 0.5)?.exp()?.mul(eps)?)?;
        let recon_x = resample_frames(&self.decode_unchecked(&z)?, x.dim(1)?)?;
        let (recon, kl) = vae_losses(x, &recon_x, &mean, &logvar)?;
        let mut total = (&recon + (&kl * self.cfg.kl_weight)?)?;
        let aug = match aug {
            Some(plan) if !plan.items.is_empty() => {
                let idx = Tensor::new(plan.items.as_slice(), x.device())?;
                let a = self.aug_loss(&z.index_select(&idx, 0)?, &x.index_select(&idx, 0)?, plan.ratio)?;
                total = (total + (&a * self.cfg.aug_weight)?)?;
                Some(a)
            }
            _ => None,
        };
        Ok(VaeLossTerms { total, recon, kl, aug })
    }
}

fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(invalid_arg!("shape mismatch: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// `(recon_mse, kl)` with the KL term averaged over latent elements.
pub fn vae_losses(x: &Tensor, recon: &Tensor, mean: &Tensor, logvar: &Tensor) -> Result<(Tensor, Tensor)> {
    if mean.dims() != logvar.dims() {
        return Err(invalid_arg!("mean {:?} and logvar {:?} differ", mean.dims(), logvar.dims()));
    }
    let kl = ((logvar.exp()? + mean.sqr()?)? - 1.0)?.sub(logvar)?.mean_all()? * 0.5;
    Ok((mse(recon, x)?, kl?))
}

/// Per-(joint, channel) standardization fitted on a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Channels with (near) zero spread keep unit scale.
    pub fn fit<'a>(motions: impl IntoIterator<Item = &'a MotionSequence>) -> Result<Self> {
        let mut width = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for m in motions {
            let w = m.joints() * m.channels();
            if *width.get_or_insert(w) != w {
                return Err(invalid_arg!("motions have differing layouts"));
            }
            rows.push(m.data().iter().map(|&v| v as f64).collect());
        }
        Self::fit_values(width.unwrap_or(0), rows.iter().map(Vec::as_slice))
    }

    /// Fits on flat buffers that each hold whole frames of `width` values.
    pub fn fit_values<'a>(width: usize, buffers: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        if width == 0 {
            return Err(invalid_arg!("cannot fit a normalizer on no data"));
        }
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let mut n = 0usize;
        for buf in buffers {
            if buf.len() % width != 0 {
                return Err(invalid_arg!("buffer of {} values is not whole frames of {width}", buf.len()));
            }
            for frame in buf.chunks_exact(width) {
                for (i, &v) in frame.iter().enumerate() {
                    sum[i] += v;
                    sq[i] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(invalid_arg!("cannot fit a normalizer on no data"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n as f64 - m * m).max(0.0).sqrt();
                if sd < 1e-6 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let w = self.mean.len();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % w]) / self.std[i % w])
            .collect()
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        let w = self.mean.len();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.std[i % w] + self.mean[i % w])
            .collect()
    }

    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn normalize(&self, m: &MotionSequence) -> Vec<f32> {
        let raw: Vec<f64> = m.data().iter().map(|&v| v as f64).collect();
        self.apply(&raw).into_iter().map(|v| v as f32).collect()
    }

    pub fn denormalize(&self, values: &[f64]) -> Vec<f32> {
        self.invert(values).into_iter().map(|v| v as f32).collect()
    }
}

/// A VAE together with its parameters, normalizer and skeleton: the unit
/// that is trained, saved and used for encoding and decoding motions.
pub struct MotionAutoencoder {
    pub params: ParamStore,
    pub vae: MotionVae,
    pub normalizer: Normalizer,
    pub layout: SkeletonLayout,
}

pub const VAE_KIND: &str = "motion_vae";

impl MotionAutoencoder {
    pub fn new(cfg: &VaeConfig, layout: SkeletonLayout, normalizer: Normalizer, seed: u64, dtype: DType) -> Result<Self> {
        if normalizer.mean.len() != cfg.joints * cfg.channels {
            return Err(Error::InvalidConfig("normalizer width does not match the VAE".into()));
        }
        let params = ParamStore::new(seed, dtype);
        let vae = MotionVae::new(cfg, &layout, params.vb())?;
        Ok(Self {
            params,
            vae,
            normalizer,
            layout,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        self.vae.config()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// Normalized motions stacked into `[b, L, J, D]`; all must share `L`.
    pub fn batch_tensor(&self, motions: &[&MotionSequence]) -> Result<Tensor> {
        let first = motions.first().ok_or_else(|| invalid_arg!("empty motion batch"))?;
        let (l, j, c) = (first.frames(), first.joints(), first.channels());
        let mut data = Vec::with_capacity(motions.len() * l * j * c);
        for m in motions {
            if m.shape() != [l, j, c] {
                return Err(invalid_arg!("motion batch mixes shapes {:?} and {:?}", m.shape(), [l, j, c]));
            }
            data.extend(self.normalizer.normalize(m));
        }
        Ok(Tensor::from_vec(data, (motions.len(), l, j, c), self.device())?.to_dtype(self.params.dtype())?)
    }

    /// Posterior means of a batch of equal-length motions, each `l x groups x d`.
    pub fn encode_mean(&self, motions: &[&MotionSequence]) -> Result<Vec<TemporalTensor>> {
        let (mean, _) = self.vae.encode(&self.batch_tensor(motions)?)?;
        tensor_to_temporal_batch(&mean)
    }

    /// Decodes `l' x groups x d` latents (or `l' x b x groups x d` stacked
    /// batches) into motions of `frames` frames.
    pub fn decode(&self, z: &TemporalTensor, frames: usize) -> Result<Vec<MotionSequence>> {
        if !z.is_finite() {
            return Err(invalid_arg!("latent contains non-finite values"));
        }
        let items = match z.tail_shape().len() {
            2 => vec![z.clone()],
            3 => z.unstack_batch()?,
            _ => return Err(invalid_arg!("unexpected latent shape {:?}", z.shape())),
        };
        let t = temporal_batch_to_tensor(&items, self.device(), self.params.dtype())?;
        let out = self.vae.decode_to_length(&t, frames)?.to_dtype(DType::F64)?;
        let (b, l, j, c) = out.dims4()?;
        let flat = out.flatten_all()?.to_vec1::<f64>()?;
        flat.chunks_exact(l * j * c)
            .take(b)
            .map(|chunk| MotionSequence::new(l, j, c, self.normalizer.denormalize(chunk)))
            .collect()
    }

    /// Encode with the posterior mean, then decode to the input length.
    pub fn reconstruct(&self, motions: &[&MotionSequence]) -> Result<Vec<MotionSequence>> {
        let frames = motions.first().map(|m| m.frames()).unwrap_or(0);
        let (mean, _) = self.vae.encode(&self.batch_tensor(motions)?)?;
        let items = tensor_to_temporal_batch(&mean)?;
        let stacked = TemporalTensor::stack_batch(&items)?;
        self.decode(&stacked, frames)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = meta_object(
            VAE_KIND,
            &[
                ("config", self.config()),
                ("normalizer", &self.normalizer),
                ("skeleton", &self.layout.to_toml_string()),
            ],
        )?;
        Checkpoint::from_params(meta, &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint, dtype: DType) -> Result<Self> {
        ck.expect_kind(VAE_KIND)?;
        let cfg: VaeConfig = ck.meta_field("config")?;
        let normalizer: Normalizer = ck.meta_field("normalizer")?;
        let layout = SkeletonLayout::from_toml_str(&ck.meta_field::<String>("skeleton")?)?;
        let ae = Self::new(&cfg, layout, normalizer, 0, dtype)?;
        ck.load_params(&ae.params)?;
        Ok(ae)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>, dtype: DType) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, dtype)
    }
}

/// Splits `[b, l, ...]` into `b` temporal tensors of `l x ...`.
pub fn tensor_to_temporal_batch(t: &Tensor) -> Result<Vec<TemporalTensor>> {
    let dims = t.dims().to_vec();
    let b = dims[0];
    let per: usize = dims[1..].iter().product();
    let flat = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    flat.chunks_exact(per)
        .take(b)
        .map(|c| TemporalTensor::from_vec(dims[1], &dims[2..], c.to_vec()))
        .collect()
}

/// Stacks equal-shape temporal tensors into `[b, l, ...]`.
pub fn temporal_batch_to_tensor(items: &[TemporalTensor], device: &Device, dtype: DType) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| invalid_arg!("empty batch"))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.len());
    for it in items {
        it.check_same_shape(first)?;
        data.extend_from_slice(it.as_slice());
    }
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}
