//! Text-motion diffusion transformer: the velocity model.
//!
//! Motion tokens (one per latent frame and latent joint) and word tokens run
//! in two streams that meet in a joint self-attention in every block. Each
//! stream is modulated by the fused conditioning `y`. The first
//! `n_separate` blocks keep distinct parameters per stream; the remaining
//! blocks use one parameter set for both.

use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{meta_object, Checkpoint};
use crate::error::{invalid_arg, Error, Result};
use crate::hiflow::{Branch, StageQuery, VelocityField};
use crate::jointrope::{text_positions, token_positions, RopeConfig, RopeTable, DEFAULT_BASE};
use crate::motionvae::{temporal_batch_to_tensor, tensor_to_temporal_batch, Normalizer};
use crate::nn::{add_trailing, attention, expand_tokens, gelu, layer_norm, modulate, small_init, Dense, ParamStore};
use crate::resample::TemporalTensor;
use crate::skeleton::{SkeletonLayout, LATENT_GROUPS};
use crate::synthdata::{Vocabulary, NULL_ID, PAD_ID};

const LN_EPS: f64 = 1e-6;
const MASKED: f64 = -1e9;
/// Flow time is scaled by this before the sinusoidal features.
const TIME_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmditConfig {
    pub model_dim: usize,
    pub n_blocks: usize,
    pub n_separate: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_words: usize,
    /// Longest latent sequence the model is used with.
    pub latent_frames: usize,
    pub latent_joints: usize,
    pub latent_dim: usize,
    /// Stage scales the scale embedding is keyed by.
    pub scales: Vec<f64>,
    pub rope_base: f64,
    /// Rotate word tokens by their index. Off only in tests.
    pub text_rope: bool,
}

impl Default for TmditConfig {
    fn default() -> Self {
        Self::desk(Vocabulary::standard().len())
    }
}

impl TmditConfig {
    /// Desk scale: width 64, 2 separate + 2 shared blocks.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            model_dim: 64,
            n_blocks: 4,
            n_separate: 2,
            n_heads: 4,
            ffn_dim: 256,
            vocab_size,
            max_words: 16,
            latent_frames: 16,
            latent_joints: LATENT_GROUPS.len(),
            latent_dim: 8,
            scales: vec![1.0 / 3.0, 2.0 / 3.0, 1.0],
            rope_base: DEFAULT_BASE,
            text_rope: true,
        }
    }

    /// Full size: width 384, 9 blocks of which the last 6 are shared.
    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            model_dim: 384,
            n_blocks: 9,
            n_separate: 3,
            n_heads: 6,
            ffn_dim: 1536,
            latent_frames: 49,
            ..Self::desk(vocab_size)
        }
    }

    /// Width 32 with one separate and one shared block, for gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            model_dim: 32,
            n_blocks: 2,
            n_separate: 1,
            n_heads: 2,
            ffn_dim: 64,
            latent_dim: 4,
            ..Self::desk(vocab_size)
        }
    }

    pub fn n_shared(&self) -> usize {
        self.n_blocks.saturating_sub(self.n_separate)
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_blocks == 0 || self.n_separate > self.n_blocks {
            return bad(format!("{} separate blocks out of {}", self.n_separate, self.n_blocks));
        }
        if self.n_heads == 0 || self.model_dim % self.n_heads != 0 {
            return bad(format!("model_dim {} is not divisible by {} heads", self.model_dim, self.n_heads));
        }
        RopeConfig::new(self.head_dim(), self.rope_base)?;
        if self.model_dim % 2 != 0 || self.ffn_dim == 0 {
            return bad("model_dim must be even and ffn_dim positive".into());
        }
        if self.vocab_size <= PAD_ID as usize || self.max_words == 0 {
            return bad("vocabulary must contain the special tokens and max_words must be positive".into());
        }
        if self.latent_frames == 0 || self.latent_joints == 0 || self.latent_dim == 0 {
            return bad("latent shape must be positive".into());
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return bad(format!("stage scales {:?} must lie in (0, 1]", self.scales));
        }
        Ok(())
    }

    /// Stage index of `scale` in the scale table.
    pub fn stage_of_scale(&self, scale: f64) -> Result<usize> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(invalid_arg!("stage scale {scale} outside (0, 1]"));
        }
        self.scales
            .iter()
            .position(|s| (s - scale).abs() < 1e-9)
            .ok_or_else(|| invalid_arg!("scale {scale} is not one of {:?}", self.scales))
    }
}

/// Parameters of one stream inside one block.
#[derive(Debug, Clone)]
pub struct StreamParams {
    /// `silu(y)` to shift, scale, gate for attention then MLP.
    pub ada: Dense,
    pub qkv: Dense,
    pub proj: Dense,
    pub fc1: Dense,
    pub fc2: Dense,
}

impl StreamParams {
    fn new(cfg: &TmditConfig, vb: VarBuilder) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(Self {
            ada: linear_init(d, 6 * d, small_init(0.02), vb.pp("ada"))?,
            qkv: Dense::new(d, 3 * d, vb.pp("qkv"))?,
            proj: Dense::new(d, d, vb.pp("proj"))?,
            fc1: Dense::new(d, cfg.ffn_dim, vb.pp("fc1"))?,
            fc2: Dense::new(cfg.ffn_dim, d, vb.pp("fc2"))?,
        })
    }

    fn modulation(&self, y_act: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.ada.forward(y_act)?.chunk(6, D::Minus1)?)
    }

    fn mlp(&self, h: &Tensor) -> Result<Tensor> {
        Ok(self.fc2.forward(&gelu(&self.fc1.forward(h)?)?)?)
    }
}

fn linear_init(i: usize, o: usize, init: candle_nn::Init, vb: VarBuilder) -> Result<Dense> {
    Dense::with_init(i, o, init, vb)
}

#[derive(Debug, Clone)]
pub enum BlockStreams {
    Separate { motion: StreamParams, text: StreamParams },
    Shared(StreamParams),
}

#[derive(Debug, Clone)]
pub struct TmditBlock {
    pub streams: BlockStreams,
    n_heads: usize,
}

/// Per-call inputs shared by every block.
pub struct BlockContext<'a> {
    /// `silu(y)`, `[b, model_dim]`.
    pub y_act: &'a Tensor,
    pub motion_rope: &'a RopeTable,
    pub text_rope: Option<&'a RopeTable>,
    /// `[b, motion + words]`, 0 for visible keys and a large negative value
    /// for padding.
    pub key_bias: &'a Tensor,
}

impl TmditBlock {
    pub fn motion(&self) -> &StreamParams {
        match &self.streams {
            BlockStreams::Separate { motion, .. } => motion,
            BlockStreams::Shared(p) => p,
        }
    }

    pub fn text(&self) -> &StreamParams {
        match &self.streams {
            BlockStreams::Separate { text, .. } => text,
            BlockStreams::Shared(p) => p,
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self.streams, BlockStreams::Shared(_))
    }

    /// `x: [b, n, D]` motion tokens, `c: [b, w, D]` word tokens.
    pub fn forward(&self, x: &Tensor, c: &Tensor, ctx: &BlockContext) -> Result<(Tensor, Tensor)> {
        let (b, n, d) = x.dims3()?;
        let (bc, w, dc) = c.dims3()?;
        if bc != b || dc != d || ctx.y_act.dims() != [b, d] {
            return Err(invalid_arg!(
                "block inputs disagree: x {:?}, c {:?}, y {:?}",
                x.dims(),
                c.dims(),
                ctx.y_act.dims()
            ));
        }
        let (mp, tp) = (self.motion(), self.text());
        let mm = mp.modulation(ctx.y_act)?;
        let tm = tp.modulation(ctx.y_act)?;
        let h = self.n_heads;
        let hd = d / h;
        let split = |p: &StreamParams, t: &Tensor, m: &[Tensor], tokens: usize| -> Result<[Tensor; 3]> {
            let hidden = modulate(&layer_norm(t, LN_EPS)?, &m[0], &m[1])?;
            let qkv = p.qkv.forward(&hidden)?.reshape((b, tokens, 3, h, hd))?;
            Ok([0, 1, 2].map(|i| qkv.narrow(2, i, 1).and_then(|t| t.squeeze(2))).try_map_ok()?)
        };
        let [qx, kx, vx] = split(mp, x, &mm, n)?;
        let [qc, kc, vc] = split(tp, c, &tm, w)?;
        let (qx, kx) = (ctx.motion_rope.apply(&qx)?, ctx.motion_rope.apply(&kx)?);
        let (qc, kc) = match ctx.text_rope {
            Some(r) => (r.apply(&qc)?, r.apply(&kc)?),
            None => (qc, kc),
        };
        let q = Tensor::cat(&[qx, qc], 1)?;
        let k = Tensor::cat(&[kx, kc], 1)?;
        let v = Tensor::cat(&[vx, vc], 1)?;
        let att = attention(&q, &k, &v, Some(ctx.key_bias))?;
        let gate = |g: &Tensor, t: Tensor| -> Result<Tensor> { Ok((expand_tokens(g, t.dim(1)?)? * t)?) };
        let x = (x + gate(&mm[2], mp.proj.forward(&att.narrow(1, 0, n)?)?)?)?;
        let c = (c + gate(&tm[2], tp.proj.forward(&att.narrow(1, n, w)?)?)?)?;
        let x = (&x + gate(&mm[5], mp.mlp(&modulate(&layer_norm(&x, LN_EPS)?, &mm[3], &mm[4])?)?)?)?;
        let c = (&c + gate(&tm[5], tp.mlp(&modulate(&layer_norm(&c, LN_EPS)?, &tm[3], &tm[4])?)?)?)?;
        Ok((x, c))
    }
}

trait TryMapOk<T> {
    fn try_map_ok(self) -> candle_core::Result<[T; 3]>;
}

impl<T> TryMapOk<T> for [candle_core::Result<T>; 3] {
    fn try_map_ok(self) -> candle_core::Result<[T; 3]> {
        let [a, b, c] = self;
        Ok([a?, b?, c?])
    }
}

/// Padded word ids of a batch plus the matching attention bias.
#[derive(Debug, Clone)]
pub struct TextBatch {
    pub ids: Tensor,
    /// `[b, w]`, 1 for real words.
    pub mask: Tensor,
    pub words: usize,
}

pub struct Tmdit {
    cfg: TmditConfig,
    rope: RopeConfig,
    layout: SkeletonLayout,
    word_embed: Tensor,
    text_in: Dense,
    time_mlp: (Dense, Dense),
    text_vec: Dense,
    scale_embed: Tensor,
    latent_in: Dense,
    joint_embed: Tensor,
    blocks: Vec<TmditBlock>,
    final_ada: Dense,
    head: Dense,
}

impl Tmdit {
    /// `layout` is the pooled latent skeleton the motion tokens live on.
    pub fn new(cfg: &TmditConfig, layout: &SkeletonLayout, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        if layout.len() != cfg.latent_joints {
            return Err(Error::InvalidConfig(format!(
                "config has {} latent joints, layout {}",
                cfg.latent_joints,
                layout.len()
            )));
        }
        let d = cfg.model_dim;
        let blocks = (0..cfg.n_blocks)
            .map(|i| {
                let vb = vb.pp(format!("block{i}"));
                let streams = if i < cfg.n_separate {
                    BlockStreams::Separate {
                        motion: StreamParams::new(cfg, vb.pp("motion"))?,
                        text: StreamParams::new(cfg, vb.pp("text"))?,
                    }
                } else {
                    BlockStreams::Shared(StreamParams::new(cfg, vb.pp("shared"))?)
                };
                Ok(TmditBlock {
                    streams,
                    n_heads: cfg.n_heads,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            rope: RopeConfig::new(cfg.head_dim(), cfg.rope_base)?,
            layout: layout.clone(),
            word_embed: vb.get_with_hints((cfg.vocab_size, d), "text.embed", small_init(1.0))?,
            text_in: Dense::new(d, d, vb.pp("text.input"))?,
            time_mlp: (
                Dense::new(d, d, vb.pp("cond.mlp0"))?,
                Dense::new(d, d, vb.pp("cond.mlp1"))?,
            ),
            text_vec: Dense::new(d, d, vb.pp("cond.text"))?,
            scale_embed: vb.get_with_hints((cfg.scales.len(), d), "cond.scale", small_init(1.0))?,
            latent_in: Dense::new(cfg.latent_dim, d, vb.pp("latent.input"))?,
            joint_embed: vb.get_with_hints((cfg.latent_joints, d), "latent.joint", small_init(0.1))?,
            blocks,
            final_ada: linear_init(d, 2 * d, small_init(0.02), vb.pp("final.ada"))?,
            head: linear_init(d, cfg.latent_dim, small_init(0.02), vb.pp("final.head"))?,
        })
    }

    pub fn config(&self) -> &TmditConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[TmditBlock] {
        &self.blocks
    }

    pub fn layout(&self) -> &SkeletonLayout {
        &self.layout
    }

    fn device(&self) -> &Device {
        self.word_embed.device()
    }

    fn dtype(&self) -> DType {
        self.word_embed.dtype()
    }

    /// Pads a batch of token lists with `PAD_ID`.
    pub fn text_batch(&self, tokens: &[Vec<u32>]) -> Result<TextBatch> {
        let words = tokens.iter().map(Vec::len).max().unwrap_or(0);
        if tokens.is_empty() || tokens.iter().any(Vec::is_empty) {
            return Err(invalid_arg!("every condition needs at least one token"));
        }
        if words > self.cfg.max_words {
            return Err(invalid_arg!("{words} words exceed the limit of {}", self.cfg.max_words));
        }
        let mut ids = Vec::with_capacity(tokens.len() * words);
        let mut mask = Vec::with_capacity(tokens.len() * words);
        for t in tokens {
            if let Some(bad) = t.iter().find(|&&id| id as usize >= self.cfg.vocab_size) {
                return Err(invalid_arg!("token id {bad} outside the vocabulary"));
            }
            ids.extend(t.iter().copied().chain(std::iter::repeat(PAD_ID)).take(words));
            mask.extend((0..words).map(|i| if i < t.len() { 1.0 } else { 0.0 }));
        }
        let b = tokens.len();
        Ok(TextBatch {
            ids: Tensor::from_vec(ids, (b, words), self.device())?,
            mask: Tensor::from_vec(mask, (b, words), self.device())?.to_dtype(self.dtype())?,
            words,
        })
    }

    /// Word-level embeddings `c: [b, w, D]` and the pooled sentence vector
    /// `c_vec: [b, D]` (mean over real words).
    pub fn embed_text(&self, text: &TextBatch) -> Result<(Tensor, Tensor)> {
        let (b, w) = text.ids.dims2()?;
        let raw = self
            .word_embed
            .index_select(&text.ids.flatten_all()?, 0)?
            .reshape((b, w, self.cfg.model_dim))?;
        let mask = text.mask.unsqueeze(2)?;
        let count = text.mask.sum_keepdim(1)?;
        let c_vec = raw.broadcast_mul(&mask)?.sum(1)?.broadcast_div(&count)?;
        Ok((self.text_in.forward(&raw)?, c_vec))
    }

    /// `y = MLP(sinusoidal(t) + project(c_vec) + scale_embed[k])`.
    pub fn fuse_conditioning(&self, t: &[f64], c_vec: &Tensor, scale: f64) -> Result<Tensor> {
        let k = self.cfg.stage_of_scale(scale)?;
        let (b, _) = c_vec.dims2()?;
        if t.len() != b {
            return Err(invalid_arg!("{} flow times for a batch of {b}", t.len()));
        }
        let d = self.cfg.model_dim;
        let half = d / 2;
        let mut feats = Vec::with_capacity(b * d);
        for &ti in t {
            if !(0.0..=1.0).contains(&ti) {
                return Err(invalid_arg!("flow time {ti} outside [0, 1]"));
            }
            let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp() * ti * TIME_SCALE);
            let (cos, sin): (Vec<f64>, Vec<f64>) = freqs.map(|a| (a.cos(), a.sin())).unzip();
            feats.extend(cos);
            feats.extend(sin);
        }
        let time = Tensor::from_vec(feats, (b, d), self.device())?.to_dtype(self.dtype())?;
        let scale_row = self.scale_embed.narrow(0, k, 1)?;
        let h = (time + self.text_vec.forward(c_vec)?)?.broadcast_add(&scale_row)?;
        Ok(self.time_mlp.1.forward(&self.time_mlp.0.forward(&h)?.silu()?)?)
    }

    /// Predicted velocity for `x: [b, l, j, d]` at per-sample flow times
    /// `t`, the stage at `scale`, and word ids `tokens` per sample.
    pub fn forward(&self, x: &Tensor, t: &[f64], scale: f64, tokens: &[Vec<u32>]) -> Result<Tensor> {
        let text = self.text_batch(tokens)?;
        self.forward_text(x, t, scale, &text)
    }

    pub fn forward_text(&self, x: &Tensor, t: &[f64], scale: f64, text: &TextBatch) -> Result<Tensor> {
        let (b, l, j, dl) = x.dims4()?;
        if j != self.cfg.latent_joints || dl != self.cfg.latent_dim {
            return Err(invalid_arg!(
                "expected {}x{} latent frames, got {j}x{dl}",
                self.cfg.latent_joints,
                self.cfg.latent_dim
            ));
        }
        if text.ids.dim(0)? != b {
            return Err(invalid_arg!("{} conditions for a batch of {b}", text.ids.dim(0)?));
        }
        if !x.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?.is_finite() {
            return Err(invalid_arg!("input contains non-finite values"));
        }
        let d = self.cfg.model_dim;
        let (c, c_vec) = self.embed_text(text)?;
        let y = self.fuse_conditioning(t, &c_vec, scale)?;
        let y_act = y.silu()?;
        let n = l * j;
        let motion_rope = RopeTable::new(&token_positions(&self.layout, l, scale)?, &self.rope, self.dtype(), self.device())?;
        let text_rope = if self.cfg.text_rope {
            Some(RopeTable::new(&text_positions(text.words), &self.rope, self.dtype(), self.device())?)
        } else {
            None
        };
        let visible = Tensor::ones((b, n), self.dtype(), self.device())?;
        let key_bias = ((Tensor::cat(&[&visible, &text.mask], 1)? - 1.0)? * -MASKED)?;
        let ctx = BlockContext {
            y_act: &y_act,
            motion_rope: &motion_rope,
            text_rope: text_rope.as_ref(),
            key_bias: &key_bias,
        };
        let mut h = add_trailing(&self.latent_in.forward(x)?, &self.joint_embed)?.reshape((b, n, d))?;
        let mut c = c;
        for block in &self.blocks {
            (h, c) = block.forward(&h, &c, &ctx)?;
        }
        let m = self.final_ada.forward(&y_act)?.chunk(2, D::Minus1)?;
        let out = self.head.forward(&modulate(&layer_norm(&h, LN_EPS)?, &m[0], &m[1])?)?;
        Ok(out.reshape((b, l, j, dl))?)
    }
}

/// A TMDiT with its parameters, vocabulary and latent standardization.
pub struct TextMotionModel {
    pub params: ParamStore,
    pub net: Tmdit,
    pub vocab: Vocabulary,
    /// Per (latent joint, channel) statistics the flow is trained in.
    pub latent_norm: Normalizer,
}

pub const TMDIT_KIND: &str = "tmdit";

impl TextMotionModel {
    pub fn new(cfg: &TmditConfig, vocab: Vocabulary, latent_norm: Normalizer, seed: u64, dtype: DType) -> Result<Self> {
        if vocab.len() != cfg.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "vocabulary has {} words, config {}",
                vocab.len(),
                cfg.vocab_size
            )));
        }
        if latent_norm.mean.len() != cfg.latent_joints * cfg.latent_dim {
            return Err(Error::InvalidConfig("latent normalizer width does not match the model".into()));
        }
        let layout = SkeletonLayout::reference().pooled(&LATENT_GROUPS)?;
        let params = ParamStore::new(seed, dtype);
        let net = Tmdit::new(cfg, &layout, params.vb())?;
        Ok(Self {
            params,
            net,
            vocab,
            latent_norm,
        })
    }

    pub fn config(&self) -> &TmditConfig {
        self.net.config()
    }

    /// Velocity field over standardized latents for fixed prompts.
    pub fn velocity_field(&self, prompts: Vec<Vec<u32>>) -> Result<TmditVelocity<'_>> {
        TmditVelocity::new(&self.net, prompts)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = meta_object(
            TMDIT_KIND,
            &[
                ("config", self.config()),
                ("vocabulary", &self.vocab),
                ("latent_norm", &self.latent_norm),
            ],
        )?;
        Checkpoint::from_params(meta, &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint, dtype: DType) -> Result<Self> {
        ck.expect_kind(TMDIT_KIND)?;
        let model = Self::new(
            &ck.meta_field("config")?,
            ck.meta_field("vocabulary")?,
            ck.meta_field("latent_norm")?,
            0,
            dtype,
        )?;
        ck.load_params(&model.params)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>, dtype: DType) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, dtype)
    }
}

/// Adapts the network to the sampler. States are `l x j x d` for one prompt
/// or `l x b x j x d` for a batch of `b` prompts.
pub struct TmditVelocity<'a> {
    net: &'a Tmdit,
    cond: TextBatch,
    uncond: TextBatch,
    batch: usize,
}

impl<'a> TmditVelocity<'a> {
    pub fn new(net: &'a Tmdit, prompts: Vec<Vec<u32>>) -> Result<Self> {
        let batch = prompts.len();
        Ok(Self {
            net,
            cond: net.text_batch(&prompts)?,
            uncond: net.text_batch(&vec![vec![NULL_ID]; batch])?,
            batch,
        })
    }
}

impl VelocityField for TmditVelocity<'_> {
    fn velocity(&self, x: &TemporalTensor, q: &StageQuery, branch: Branch) -> Result<TemporalTensor> {
        let single = x.tail_shape().len() == 2;
        let items = if single { vec![x.clone()] } else { x.unstack_batch()? };
        if items.len() != self.batch {
            return Err(invalid_arg!("state holds {} samples, {} prompts given", items.len(), self.batch));
        }
        let dtype = self.net.dtype();
        let input = temporal_batch_to_tensor(&items, self.net.device(), dtype)?;
        let text = match branch {
            Branch::Conditional => &self.cond,
            Branch::Unconditional => &self.uncond,
        };
        let t = vec![q.t.clamp(0.0, 1.0); items.len()];
        let out = tensor_to_temporal_batch(&self.net.forward_text(&input, &t, q.scale, text)?)?;
        if single {
            Ok(out.into_iter().next().expect("one sample"))
        } else {
            TemporalTensor::stack_batch(&out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(dtype: DType, text_rope: bool) -> (ParamStore, Tmdit) {
        let cfg = TmditConfig {
            text_rope,
            ..TmditConfig::tiny(20)
        };
        let store = ParamStore::new(3, dtype);
        let layout = SkeletonLayout::reference().pooled(&LATENT_GROUPS).unwrap();
        let net = Tmdit::new(&cfg, &layout, store.vb()).unwrap();
        (store, net)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn values(t: &Tensor) -> Vec<f64> {
        t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        values(a).iter().zip(values(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn config_invariants() {
        let v = Vocabulary::standard().len();
        for cfg in [TmditConfig::desk(v), TmditConfig::full_scale(v), TmditConfig::tiny(v)] {
            cfg.validate().unwrap();
            assert_eq!(cfg.n_separate + cfg.n_shared(), cfg.n_blocks);
        }
        let p = TmditConfig::full_scale(v);
        assert_eq!((p.model_dim, p.n_blocks, p.n_shared(), p.n_heads, p.ffn_dim), (384, 9, 6, 6, 1536));
        let bad = TmditConfig { n_heads: 3, ..TmditConfig::desk(v) };
        assert!(bad.validate().is_err());
        let bad = TmditConfig { model_dim: 40, n_heads: 4, ..TmditConfig::desk(v) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_scale_is_constructible() {
        let v = Vocabulary::standard().len();
        let store = ParamStore::new(0, DType::F32);
        let layout = SkeletonLayout::reference().pooled(&LATENT_GROUPS).unwrap();
        let net = Tmdit::new(&TmditConfig::full_scale(v), &layout, store.vb()).unwrap();
        assert_eq!(net.blocks().iter().filter(|b| b.is_shared()).count(), 6);
    }

    #[test]
    fn output_shape_for_every_stage() {
        let (_, net) = tiny(DType::F64, true);
        for (scale, l) in [(1.0 / 3.0, 6), (2.0 / 3.0, 12), (1.0, 18)] {
            let x = random(&[2, l, 6, 4], l as u64);
            let out = net.forward(&x, &[0.2, 0.9], scale, &[vec![2, 3, 4], vec![5]]).unwrap();
            assert_eq!(out.dims(), x.dims());
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (_, net) = tiny(DType::F64, true);
        let x = random(&[1, 6, 6, 4], 1);
        let a = net.forward(&x, &[0.4], 2.0 / 3.0, &[vec![2, 3]]).unwrap();
        let b = net.forward(&x, &[0.4], 2.0 / 3.0, &[vec![2, 3]]).unwrap();
        assert_eq!(values(&a), values(&b));
    }

    #[test]
    fn conditioning_is_deterministic_and_time_sensitive() {
        let (_, net) = tiny(DType::F64, true);
        let text = net.text_batch(&[vec![4, 5]]).unwrap();
        let (_, c_vec) = net.embed_text(&text).unwrap();
        let y0 = net.fuse_conditioning(&[0.0], &c_vec, 1.0).unwrap();
        assert_eq!(values(&y0), values(&net.fuse_conditioning(&[0.0], &c_vec, 1.0).unwrap()));
        let y1 = net.fuse_conditioning(&[1.0], &c_vec, 1.0).unwrap();
        assert!(max_diff(&y0, &y1) > 1e-6);
        let null = net.text_batch(&[vec![NULL_ID]]).unwrap();
        let (_, null_vec) = net.embed_text(&null).unwrap();
        let y = net.fuse_conditioning(&[0.5], &null_vec, 1.0).unwrap();
        assert!(values(&y).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bad_conditioning_is_rejected() {
        let (_, net) = tiny(DType::F64, true);
        let x = random(&[1, 6, 6, 4], 1);
        let tok = [vec![2]];
        for (t, s) in [(-0.1, 1.0), (1.5, 1.0), (0.5, 0.5), (0.5, 0.0), (0.5, 1.2)] {
            assert!(matches!(net.forward(&x, &[t], s, &tok), Err(Error::InvalidArgument(_))), "{t} {s}");
        }
        assert!(net.forward(&x, &[0.5], 1.0, &[vec![]]).is_err());
        assert!(net.forward(&x, &[0.5], 1.0, &[vec![99]]).is_err());
        assert!(net.forward(&random(&[1, 6, 6, 3], 0), &[0.5], 1.0, &tok).is_err());
    }

    #[test]
    fn scale_conditioning_is_live() {
        let (_, net) = tiny(DType::F64, true);
        let x = random(&[1, 6, 6, 4], 2);
        let a = net.forward(&x, &[0.5], 1.0 / 3.0, &[vec![2, 3]]).unwrap();
        let b = net.forward(&x, &[0.5], 1.0, &[vec![2, 3]]).unwrap();
        assert!(max_diff(&a, &b) > 1e-9);
    }

    #[test]
    fn padding_does_not_leak() {
        let (_, net) = tiny(DType::F64, true);
        let x = random(&[2, 6, 6, 4], 5);
        let both = net.forward(&x, &[0.3, 0.3], 1.0, &[vec![2, 3, 4, 5], vec![6]]).unwrap();
        let alone = net.forward(&x.narrow(0, 1, 1).unwrap(), &[0.3], 1.0, &[vec![6]]).unwrap();
        assert!(max_diff(&both.narrow(0, 1, 1).unwrap(), &alone) < 1e-12);
    }

    fn block_inputs(net: &Tmdit, words: usize) -> (Tensor, Tensor, Tensor, RopeTable, Tensor) {
        let d = net.config().model_dim;
        let x = random(&[1, 12, d], 7);
        let c = random(&[1, words, d], 8);
        let y = random(&[1, d], 9).silu().unwrap();
        let rope = RopeTable::new(
            &token_positions(net.layout(), 2, 1.0).unwrap(),
            &net.rope,
            DType::F64,
            &Device::Cpu,
        )
        .unwrap();
        let bias = Tensor::zeros((1, 12 + words), DType::F64, &Device::Cpu).unwrap();
        (x, c, y, rope, bias)
    }

    #[test]
    fn block_preserves_shapes() {
        let (_, net) = tiny(DType::F64, true);
        let (x, c, y, rope, bias) = block_inputs(&net, 3);
        let trope = RopeTable::new(&text_positions(3), &net.rope, DType::F64, &Device::Cpu).unwrap();
        let ctx = BlockContext { y_act: &y, motion_rope: &rope, text_rope: Some(&trope), key_bias: &bias };
        for b in net.blocks() {
            let (x2, c2) = b.forward(&x, &c, &ctx).unwrap();
            assert_eq!((x2.dims(), c2.dims()), (x.dims(), c.dims()));
        }
        assert!(net.blocks()[0].forward(&x, &random(&[1, 3, 8], 0), &ctx).is_err());
    }

    #[test]
    fn zero_gates_make_blocks_identities() {
        let (store, net) = tiny(DType::F64, true);
        let d = net.config().model_dim;
        for (name, var) in store.vars() {
            if !name.contains(".ada.") || name.starts_with("final") {
                continue;
            }
            // rows [2d, 3d) and [5d, 6d) produce the two gates
            let mut v = values(var.as_tensor());
            let row = if name.ends_with("weight") { d } else { 1 };
            for gate in [2, 5] {
                v[gate * d * row..(gate + 1) * d * row].iter_mut().for_each(|x| *x = 0.0);
            }
            var.set(&Tensor::from_vec(v, var.shape(), &Device::Cpu).unwrap()).unwrap();
        }
        let (x, c, y, rope, bias) = block_inputs(&net, 3);
        let ctx = BlockContext { y_act: &y, motion_rope: &rope, text_rope: None, key_bias: &bias };
        for b in net.blocks() {
            let (x2, c2) = b.forward(&x, &c, &ctx).unwrap();
            assert_eq!(values(&x2), values(&x));
            assert_eq!(values(&c2), values(&c));
        }
    }

    #[test]
    fn word_order_does_not_matter_without_text_rope() {
        let (_, net) = tiny(DType::F64, false);
        let (x, c, y, rope, bias) = block_inputs(&net, 4);
        let perm = Tensor::new(&[2u32, 0, 3, 1], &Device::Cpu).unwrap();
        let cp = c.index_select(&perm, 1).unwrap();
        let ctx = BlockContext { y_act: &y, motion_rope: &rope, text_rope: None, key_bias: &bias };
        for b in net.blocks() {
            let (xa, _) = b.forward(&x, &c, &ctx).unwrap();
            let (xb, _) = b.forward(&x, &cp, &ctx).unwrap();
            assert!(max_diff(&xa, &xb) < 1e-12);
        }
        let x = random(&[1, 6, 6, 4], 3);
        let a = net.forward(&x, &[0.5], 1.0, &[vec![2, 3, 4, 5]]).unwrap();
        let b = net.forward(&x, &[0.5], 1.0, &[vec![4, 2, 5, 3]]).unwrap();
        assert!(max_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn shared_blocks_share_storage() {
        let (store, net) = tiny(DType::F64, true);
        let shared = &net.blocks()[1];
        assert!(shared.is_shared());
        assert_eq!(shared.motion().qkv.weight().id(), shared.text().qkv.weight().id());
        let sep = &net.blocks()[0];
        assert_ne!(sep.motion().qkv.weight().id(), sep.text().qkv.weight().id());
        let var = store.var("block1.shared.fc1.weight").unwrap();
        let ones = var.as_tensor().ones_like().unwrap();
        var.set(&ones).unwrap();
        assert!(values(shared.text().fc1.weight()).iter().all(|v| *v == 1.0));
        assert!(values(shared.motion().fc1.weight()).iter().all(|v| *v == 1.0));
        assert!(store.var("block1.text.fc1.weight").is_none());
    }

    #[test]
    fn velocity_gradients_match_finite_differences() {
        let (store, net) = tiny(DType::F64, true);
        let x = random(&[2, 4, 6, 4], 1);
        let target = random(&[2, 4, 6, 4], 2);
        let loss = || {
            let v = net.forward(&x, &[0.3, 0.8], 2.0 / 3.0, &[vec![2, 3], vec![4, 5, 6]])?;
            Ok((v - &target)?.sqr()?.mean_all()?)
        };
        let checks = crate::nn::gradient_check(&store, &loss, 10, 4, 1e-4, 5).unwrap();
        for c in &checks {
            assert!(c.rel_error < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn velocity_adapter_handles_batches() {
        let (_, net) = tiny(DType::F64, true);
        let f = TmditVelocity::new(&net, vec![vec![2, 3], vec![4]]).unwrap();
        let a = TemporalTensor::from_vec(6, &[6, 4], values(&random(&[6, 6, 4], 1))).unwrap();
        let b = TemporalTensor::from_vec(6, &[6, 4], values(&random(&[6, 6, 4], 2))).unwrap();
        let stacked = TemporalTensor::stack_batch(&[a.clone(), b]).unwrap();
        let q = StageQuery { stage: 0, scale: 1.0 / 3.0, t: 0.1, tau: 0.3 };
        let v = f.velocity(&stacked, &q, Branch::Conditional).unwrap();
        assert_eq!(v.shape(), stacked.shape());
        let single = TmditVelocity::new(&net, vec![vec![2, 3]]).unwrap();
        let va = single.velocity(&a, &q, Branch::Conditional).unwrap();
        assert!(va.max_abs_diff(&v.unstack_batch().unwrap()[0]).unwrap() < 1e-12);
        let vu = single.velocity(&a, &q, Branch::Unconditional).unwrap();
        assert!(va.max_abs_diff(&vu).unwrap() > 0.0);
        assert!(f.velocity(&a, &q, Branch::Conditional).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let vocab = Vocabulary::standard();
        let cfg = TmditConfig::tiny(vocab.len());
        let m = TextMotionModel::new(&cfg, vocab, Normalizer::identity(24), 4, DType::F32).unwrap();
        let bytes = m.checkpoint().unwrap().to_bytes().unwrap();
        let back = TextMotionModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), DType::F32).unwrap();
        assert_eq!(back.checkpoint().unwrap().to_bytes().unwrap(), bytes);
    }
}
