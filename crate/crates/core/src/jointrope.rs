//! Joint-aware rotary position encoding.
//!
//! Each attention head is split into four rotary segments of relative size
//! 1/2, 1/8, 1/8 and 1/4. They rotate by the token's temporal index, its
//! lateral and vertical T-pose coordinates, and its depth in the kinematic
//! tree respectively. Attention logits therefore depend only on differences
//! of these four coordinates.

use candle_core::{DType, Device, Tensor, D};

use crate::error::{invalid_arg, Error, Result};
use crate::skeleton::SkeletonLayout;

pub const DEFAULT_BASE: f64 = 10_000.0;

/// `[temporal, lateral, vertical, depth]` segment widths of one head.
pub fn segment_dims(head_dim: usize) -> Result<[usize; 4]> {
    if head_dim == 0 || head_dim % 16 != 0 {
        return Err(Error::InvalidConfig(format!(
            "head dimension {head_dim} must be a positive multiple of 16"
        )));
    }
    Ok([head_dim / 2, head_dim / 8, head_dim / 8, head_dim / 4])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeConfig {
    head_dim: usize,
    base: f64,
}

impl RopeConfig {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        segment_dims(head_dim)?;
        if !(base.is_finite() && base > 0.0) {
            return Err(Error::InvalidConfig(format!("rope base must be positive, got {base}")));
        }
        Ok(Self { head_dim, base })
    }

    pub fn with_head_dim(head_dim: usize) -> Result<Self> {
        Self::new(head_dim, DEFAULT_BASE)
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Rotation angle of every coordinate pair of a head at `pos`.
    pub fn angles(&self, pos: &TokenPosition) -> Vec<f64> {
        let dims = segment_dims(self.head_dim).expect("validated");
        let coords = pos.coords();
        let mut out = Vec::with_capacity(self.head_dim / 2);
        for (seg, &d) in dims.iter().enumerate() {
            for i in 0..d / 2 {
                let theta = self.base.powf(-2.0 * i as f64 / d as f64);
                out.push(coords[seg] * theta);
            }
        }
        out
    }
}

/// Rotary coordinates of one token.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TokenPosition {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl TokenPosition {
    pub fn coords(&self) -> [f64; 4] {
        [self.t, self.x, self.y, self.depth]
    }

    pub fn from_coords(c: [f64; 4]) -> Self {
        Self {
            t: c[0],
            x: c[1],
            y: c[2],
            depth: c[3],
        }
    }

    pub fn offset(&self, other: &TokenPosition) -> TokenPosition {
        let (a, b) = (self.coords(), other.coords());
        TokenPosition::from_coords([a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]])
    }
}

/// Positions of the `n_frames x joints` tokens of a stage at scale `scale`,
/// frame-major. Frame `i` sits at full-scale time `i / scale`.
pub fn token_positions(layout: &SkeletonLayout, n_frames: usize, scale: f64) -> Result<Vec<TokenPosition>> {
    if n_frames == 0 {
        return Err(invalid_arg!("need at least one frame"));
    }
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(invalid_arg!("stage scale must lie in (0, 1], got {scale}"));
    }
    let mut out = Vec::with_capacity(n_frames * layout.len());
    for f in 0..n_frames {
        let t = f as f64 / scale;
        out.extend(layout.joints().iter().map(|j| TokenPosition {
            t,
            x: j.tpose_x,
            y: j.tpose_y,
            depth: j.depth as f64,
        }));
    }
    Ok(out)
}

/// Word tokens: temporal segment at the word index, other coordinates zero.
pub fn text_positions(n_words: usize) -> Vec<TokenPosition> {
    (0..n_words)
        .map(|i| TokenPosition {
            t: i as f64,
            ..Default::default()
        })
        .collect()
}

/// Precomputed cos/sin tables for a fixed token sequence.
#[derive(Debug, Clone)]
pub struct RopeTable {
    cos: Tensor,
    sin: Tensor,
    tokens: usize,
    head_dim: usize,
}

impl RopeTable {
    pub fn new(positions: &[TokenPosition], cfg: &RopeConfig, dtype: DType, device: &Device) -> Result<Self> {
        let half = cfg.head_dim / 2;
        let mut cos = Vec::with_capacity(positions.len() * half);
        let mut sin = Vec::with_capacity(positions.len() * half);
        for p in positions {
            for a in cfg.angles(p) {
                cos.push(a.cos());
                sin.push(a.sin());
            }
        }
        let shape = (positions.len(), 1, half);
        Ok(Self {
            cos: Tensor::from_vec(cos, shape, device)?.to_dtype(dtype)?,
            sin: Tensor::from_vec(sin, shape, device)?.to_dtype(dtype)?,
            tokens: positions.len(),
            head_dim: cfg.head_dim,
        })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Rotates `x` of shape `[..., tokens, heads, head_dim]`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims();
        let n = dims.len();
        if n < 3 || dims[n - 1] != self.head_dim || dims[n - 3] != self.tokens {
            return Err(invalid_arg!(
                "rope expects [..., {}, heads, {}], got {dims:?}",
                self.tokens,
                self.head_dim
            ));
        }
        let mut paired: Vec<usize> = dims[..n - 1].to_vec();
        paired.extend([self.head_dim / 2, 2]);
        let x = x.reshape(paired)?;
        let even = x.narrow(D::Minus1, 0, 1)?.squeeze(D::Minus1)?;
        let odd = x.narrow(D::Minus1, 1, 1)?.squeeze(D::Minus1)?;
        let cos = self.cos.to_dtype(even.dtype())?;
        let sin = self.sin.to_dtype(even.dtype())?;
        let re = (even.broadcast_mul(&cos)? - odd.broadcast_mul(&sin)?)?;
        let im = (even.broadcast_mul(&sin)? + odd.broadcast_mul(&cos)?)?;
        Ok(Tensor::stack(&[re, im], D::Minus1)?.reshape(dims)?)
    }
}

/// Convenience wrapper: build the table and rotate `x`
/// (`[tokens, heads, head_dim]` or with leading batch axes).
pub fn apply_rope(x: &Tensor, positions: &[TokenPosition], cfg: &RopeConfig) -> Result<Tensor> {
    RopeTable::new(positions, cfg, x.dtype(), x.device())?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn rand_pos(rng: &mut ChaCha8Rng) -> TokenPosition {
        TokenPosition::from_coords([
            rng.random_range(0.0..64.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..5.0f64).floor(),
        ])
    }

    #[test]
    fn segment_examples() {
        assert_eq!(segment_dims(64).unwrap(), [32, 8, 8, 16]);
        assert_eq!(segment_dims(16).unwrap(), [8, 2, 2, 4]);
        assert!(matches!(segment_dims(20), Err(Error::InvalidConfig(_))));
        assert!(segment_dims(0).is_err());
    }

    #[test]
    fn positions_follow_layout_and_scale() {
        let s = SkeletonLayout::reference();
        let p = token_positions(&s, 8, 1.0).unwrap();
        assert_eq!(p.len(), 8 * 15);
        assert_eq!(p[5 * 15], TokenPosition::from_coords([5.0, 0.0, 0.0, 0.0]));
        let half = token_positions(&s, 4, 0.5).unwrap();
        assert_eq!(half[3 * 15], TokenPosition::from_coords([6.0, 0.0, 0.0, 0.0]));
        let wrist = s.index_of("l_wrist").unwrap();
        assert_eq!(p[wrist], TokenPosition::from_coords([0.0, 0.7, 0.45, 4.0]));
        assert!(token_positions(&s, 4, 1.5).is_err());
        assert!(token_positions(&s, 4, 0.0).is_err());
    }

    #[test]
    fn zero_positions_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = RopeConfig::with_head_dim(32).unwrap();
        let x = rand_tensor(&mut rng, &[5, 2, 32]);
        let y = apply_rope(&x, &[TokenPosition::default(); 5], &cfg).unwrap();
        let diff = (x - y).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn rotations_preserve_head_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = RopeConfig::with_head_dim(64).unwrap();
        let x = rand_tensor(&mut rng, &[7, 3, 64]);
        let pos: Vec<_> = (0..7).map(|_| rand_pos(&mut rng)).collect();
        let y = apply_rope(&x, &pos, &cfg).unwrap();
        let nx = x.sqr().unwrap().sum(D::Minus1).unwrap();
        let ny = y.sqr().unwrap().sum(D::Minus1).unwrap();
        let diff = (nx - ny).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-10);
    }

    #[test]
    fn rotations_compose_additively() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = RopeConfig::with_head_dim(32).unwrap();
        let x = rand_tensor(&mut rng, &[4, 1, 32]);
        let p: Vec<_> = (0..4).map(|_| rand_pos(&mut rng)).collect();
        let q: Vec<_> = (0..4).map(|_| rand_pos(&mut rng)).collect();
        let pq: Vec<_> = p.iter().zip(&q).map(|(a, b)| a.offset(b)).collect();
        let twice = apply_rope(&apply_rope(&x, &p, &cfg).unwrap(), &q, &cfg).unwrap();
        let once = apply_rope(&x, &pq, &cfg).unwrap();
        let diff = (twice - once).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-9);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let cfg = RopeConfig::with_head_dim(16).unwrap();
        let x = Tensor::zeros((3, 1, 16), DType::F64, &Device::Cpu).unwrap();
        assert!(apply_rope(&x, &[TokenPosition::default(); 2], &cfg).is_err());
        let y = Tensor::zeros((3, 1, 32), DType::F64, &Device::Cpu).unwrap();
        assert!(apply_rope(&y, &[TokenPosition::default(); 3], &cfg).is_err());
    }

    #[test]
    fn mirrored_pairs_share_depth_rotation() {
        let s = SkeletonLayout::reference();
        let cfg = RopeConfig::with_head_dim(64).unwrap();
        let pos = token_positions(&s, 1, 1.0).unwrap();
        let [dt, dx, dy, dd] = segment_dims(64).unwrap();
        let depth_pairs = (dt + dx + dy) / 2..(dt + dx + dy + dd) / 2;
        for &(l, r) in s.symmetry_pairs() {
            let (al, ar) = (cfg.angles(&pos[l]), cfg.angles(&pos[r]));
            for i in depth_pairs.clone() {
                assert_eq!(ar[i] - al[i], 0.0);
            }
        }
    }
}
