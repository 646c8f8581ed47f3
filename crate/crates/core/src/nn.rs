//! Shared building blocks for the two networks: seeded parameter storage
//! and a handful of differentiable layers.

use std::collections::BTreeMap;

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor, Var, D};
use candle_nn::init::{FanInOut, NormalOrUniform};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid_arg, Result};
use crate::synthdata::splitmix64;

/// FNV-1a, used to give every parameter name its own init stream.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn init_values(shape: &Shape, init: Init, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = shape.elem_count();
    let normal = |rng: &mut ChaCha8Rng, mean: f64, std: f64| -> Vec<f64> {
        (0..n).map(|_| mean + std * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, up: f64| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..up)).collect()
    };
    match init {
        Init::Const(c) => vec![c; n],
        Init::Randn { mean, stdev } => normal(rng, mean, stdev),
        Init::Uniform { lo, up } => uniform(rng, lo, up),
        Init::Kaiming {
            dist,
            fan,
            non_linearity,
        } => {
            let std = non_linearity.gain() / (fan.for_shape(shape) as f64).sqrt();
            match dist {
                NormalOrUniform::Uniform => {
                    let b = 3f64.sqrt() * std;
                    uniform(rng, -b, b)
                }
                NormalOrUniform::Normal => normal(rng, 0.0, std),
            }
        }
    }
}

/// A `VarMap` whose fresh variables are drawn from a seeded stream keyed by
/// parameter name, so initialization does not depend on creation order.
struct SeededBackend {
    varmap: VarMap,
    seed: u64,
}

impl SimpleBackend for SeededBackend {
    fn get(&self, s: Shape, name: &str, h: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        let mut data = self.varmap.data().lock().unwrap();
        if let Some(var) = data.get(name) {
            if var.shape() != &s {
                candle_core::bail!("shape mismatch on {name}: {s:?} vs {:?}", var.shape());
            }
            return Ok(var.as_tensor().clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ name_hash(name)));
        let values = init_values(&s, h, &mut rng);
        let var = Var::from_tensor(&Tensor::from_vec(values, s, dev)?.to_dtype(dtype)?)?;
        let t = var.as_tensor().clone();
        data.insert(name.to_string(), var);
        Ok(t)
    }

    fn get_unchecked(&self, name: &str, _dtype: DType, _dev: &Device) -> candle_core::Result<Tensor> {
        match self.varmap.data().lock().unwrap().get(name) {
            Some(v) => Ok(v.as_tensor().clone()),
            None => candle_core::bail!("no parameter named {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.varmap.data().lock().unwrap().contains_key(name)
    }
}

/// Trainable parameters of one network.
#[derive(Clone)]
pub struct ParamStore {
    varmap: VarMap,
    seed: u64,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("seed", &self.seed)
            .field("dtype", &self.dtype)
            .field("params", &self.len())
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            varmap: VarMap::new(),
            seed,
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn vb(&self) -> VarBuilder<'static> {
        let backend: Box<dyn SimpleBackend> = Box::new(SeededBackend {
            varmap: self.varmap.clone(),
            seed: self.seed,
        });
        VarBuilder::from_backend(backend, self.dtype, self.device.clone())
    }

    pub fn len(&self) -> usize {
        self.varmap.data().lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All variables, sorted by name.
    pub fn vars(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().unwrap();
        let sorted: BTreeMap<_, _> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        sorted.into_iter().collect()
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.varmap.data().lock().unwrap().get(name).cloned()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Overwrites every variable from `tensors`; names and shapes must match
    /// exactly.
    pub fn assign(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let vars = self.vars();
        if vars.len() != tensors.len() {
            return Err(invalid_arg!("expected {} parameters, got {}", vars.len(), tensors.len()));
        }
        for (name, var) in vars {
            let t = tensors
                .get(&name)
                .ok_or_else(|| invalid_arg!("missing parameter {name}"))?;
            if t.dims() != var.dims() {
                return Err(invalid_arg!("parameter {name} has shape {:?}, expected {:?}", t.dims(), var.dims()));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Snapshot of every parameter as `f64` host data.
    pub fn snapshot(&self) -> Result<BTreeMap<String, (Vec<usize>, Vec<f64>)>> {
        self.vars()
            .into_iter()
            .map(|(n, v)| {
                let dims = v.dims().to_vec();
                let data = v.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
                Ok((n, (dims, data)))
            })
            .collect()
    }
}

/// `x + row` for `x: [n, m]` and `row: [m]`. Broadcasting is written as an
/// outer product with a ones column so the gradient of `row` is a matmul
/// rather than a slow leading-axis reduction.
pub fn add_row(x: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (n, m) = x.dims2()?;
    let ones = Tensor::ones((n, 1), x.dtype(), x.device())?;
    Ok((x + ones.matmul(&row.reshape((1, m))?)?)?)
}

/// `x + t` where `t` has the shape of the trailing axes of `x`.
pub fn add_trailing(x: &Tensor, t: &Tensor) -> Result<Tensor> {
    let m = t.elem_count();
    Ok(add_row(&x.reshape((x.elem_count() / m, m))?, &t.flatten_all()?)?.reshape(x.shape())?)
}

/// Affine layer applied to the last axis. Leading axes are flattened so the
/// product is a single 2-D matmul in both directions.
#[derive(Debug, Clone)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
}

impl Dense {
    /// Kaiming-normal weights and a uniform bias, as for a standard linear
    /// layer.
    pub fn new(in_dim: usize, out_dim: usize, vb: VarBuilder) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = vb.get_with_hints((out_dim, in_dim), "weight", candle_nn::init::DEFAULT_KAIMING_NORMAL)?;
        let bias = vb.get_with_hints(out_dim, "bias", Init::Uniform { lo: -bound, up: bound })?;
        Ok(Self { weight, bias })
    }

    /// Weights from `init` and a zero bias.
    pub fn with_init(in_dim: usize, out_dim: usize, init: Init, vb: VarBuilder) -> Result<Self> {
        let weight = vb.get_with_hints((out_dim, in_dim), "weight", init)?;
        let bias = vb.get_with_hints(out_dim, "bias", Init::Const(0.0))?;
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims();
        let (out_dim, in_dim) = self.weight.dims2()?;
        let rows = x.elem_count() / in_dim;
        let y = add_row(&x.reshape((rows, in_dim))?.matmul(&self.weight.t()?)?, &self.bias)?;
        let mut shape = dims.to_vec();
        *shape.last_mut().expect("non-scalar input") = out_dim;
        Ok(y.reshape(shape)?)
    }
}

/// Layer normalization over the last axis without affine parameters.
pub fn layer_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// `x * (1 + scale) + shift` with per-sample `scale`, `shift` of shape
/// `[batch, dim]` broadcast over the token axis of `x: [batch, tokens, dim]`.
pub fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let tokens = x.dim(1)?;
    let scale = (expand_tokens(scale, tokens)? + 1.0)?;
    Ok(((x * scale)? + expand_tokens(shift, tokens)?)?)
}

/// Repeats `v: [b, d]` over a token axis, `[b, tokens, d]`, as a batched
/// outer product so the gradient is a matmul rather than a reduction.
pub fn expand_tokens(v: &Tensor, tokens: usize) -> Result<Tensor> {
    let b = v.dim(0)?;
    let ones = Tensor::ones((b, tokens, 1), v.dtype(), v.device())?;
    Ok(ones.matmul(&v.unsqueeze(1)?)?)
}

fn contiguous_slice<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((lo, hi)) => Ok(&data[lo..hi]),
        None => candle_core::bail!("custom op needs a contiguous input"),
    }
}

/// Applies `f32` and `f64` versions of a row kernel to a CPU buffer.
fn map_rows(
    storage: &CpuStorage,
    layout: &Layout,
    row: usize,
    f32_fn: impl Fn(&[f32], &mut [f32]),
    f64_fn: impl Fn(&[f64], &mut [f64]),
) -> candle_core::Result<(CpuStorage, Shape)> {
    fn run<T: Copy + Default>(x: &[T], row: usize, f: impl Fn(&[T], &mut [T])) -> Vec<T> {
        let mut out = vec![T::default(); x.len()];
        for (i, o) in x.chunks(row).zip(out.chunks_mut(row)) {
            f(i, o);
        }
        out
    }
    let out = match storage {
        CpuStorage::F32(d) => CpuStorage::F32(run(contiguous_slice(d, layout)?, row, f32_fn)),
        CpuStorage::F64(d) => CpuStorage::F64(run(contiguous_slice(d, layout)?, row, f64_fn)),
        _ => candle_core::bail!("custom op supports f32 and f64 only"),
    };
    Ok((out, layout.shape().clone()))
}

macro_rules! softmax_row {
    ($t:ty) => {
        |x: &[$t], y: &mut [$t]| {
            let m = x.iter().copied().fold(<$t>::NEG_INFINITY, <$t>::max);
            let mut sum = 0.0;
            for (o, v) in y.iter_mut().zip(x) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in y.iter_mut() {
                *o /= sum;
            }
        }
    };
}

/// Softmax over the last axis with a fused backward pass
/// `dx = y * (g - sum(g * y))`.
struct SoftmaxLast;

impl CustomOp1 for SoftmaxLast {
    fn name(&self) -> &'static str {
        "softmax-last"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let row = layout.dims().last().copied().unwrap_or(1).max(1);
        map_rows(storage, layout, row, softmax_row!(f32), softmax_row!(f64))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let dot = (grad * res)?.sum_keepdim(D::Minus1)?;
        Ok(Some(grad.broadcast_sub(&dot)?.mul(res)?))
    }
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(SoftmaxLast)?)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

macro_rules! gelu_kernel {
    ($t:ty, $deriv:expr) => {
        |x: &[$t], y: &mut [$t]| {
            for (o, &v) in y.iter_mut().zip(x) {
                // 0.5 (1 + tanh u) = sigmoid(2u), which needs one exp
                let u = GELU_C as $t * (v + 0.044715 * v * v * v);
                let s = 1.0 / (1.0 + (-2.0 * u).exp());
                *o = if $deriv {
                    let du = GELU_C as $t * (1.0 + 3.0 * 0.044715 * v * v);
                    s + 2.0 * v * s * (1.0 - s) * du
                } else {
                    v * s
                };
            }
        }
    };
}

/// Tanh-approximated GELU, elementwise. `derivative` selects the slope
/// instead of the value.
struct Gelu {
    derivative: bool,
}

impl CustomOp1 for Gelu {
    fn name(&self) -> &'static str {
        if self.derivative {
            "gelu-slope"
        } else {
            "gelu-tanh"
        }
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let n = layout.shape().elem_count().max(1);
        if self.derivative {
            map_rows(storage, layout, n, gelu_kernel!(f32, true), gelu_kernel!(f64, true))
        } else {
            map_rows(storage, layout, n, gelu_kernel!(f32, false), gelu_kernel!(f64, false))
        }
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let slope = arg.apply_op1_no_bwd(&Gelu { derivative: true })?;
        Ok(Some(grad.mul(&slope)?))
    }
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Gelu { derivative: false })?)
}

/// Scaled dot-product attention over `[batch, tokens, heads, head_dim]`
/// inputs. `key_bias`, if given, is `[batch, tokens]` and added to every
/// logit of the corresponding key.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
    let (b, t, h, hd) = q.dims4()?;
    let q = q.transpose(1, 2)?.contiguous()?;
    let k = k.transpose(1, 2)?.contiguous()?;
    let v = v.transpose(1, 2)?.contiguous()?;
    let mut logits = (q.matmul(&k.t()?)? * (1.0 / (hd as f64).sqrt()))?;
    if let Some(bias) = key_bias {
        logits = logits.broadcast_add(&bias.reshape((b, 1, 1, t))?)?;
    }
    let weights = softmax_last(&logits)?;
    let out = weights.matmul(&v)?;
    Ok(out.transpose(1, 2)?.reshape((b, t, h * hd))?)
}

/// Temporal convolution weights laid out `(out, kernel, in)`, plus bias.
pub fn conv_weight(vb: &VarBuilder, out_c: usize, in_c: usize, kernel: usize) -> Result<(Tensor, Tensor)> {
    let w = vb.get_with_hints((out_c, kernel, in_c), "weight", candle_nn::init::DEFAULT_KAIMING_NORMAL)?;
    let bound = 1.0 / ((in_c * kernel) as f64).sqrt();
    let b = vb.get_with_hints(out_c, "bias", Init::Uniform { lo: -bound, up: bound })?;
    Ok((w, b))
}

/// Weight init for layers whose output should start small.
pub fn small_init(std: f64) -> Init {
    Init::Randn { mean: 0.0, stdev: std }
}

/// Kaiming-normal with unit gain, for layers not followed by a rectifier.
pub const LINEAR_KAIMING: Init = Init::Kaiming {
    dist: NormalOrUniform::Normal,
    fan: FanInOut::FanIn,
    non_linearity: candle_nn::init::NonLinearity::Linear,
};

/// Backprop versus central differences on one slice of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceCheck {
    pub param: String,
    pub indices: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over the slice.
    pub rel_error: f64,
}

/// Compares parameter gradients of `loss` with central finite differences
/// on `n_slices` random slices of up to `slice_len` elements. The store
/// should be `f64`; parameters are restored afterwards.
pub fn gradient_check(
    store: &ParamStore,
    loss: &dyn Fn() -> Result<Tensor>,
    n_slices: usize,
    slice_len: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<SliceCheck>> {
    let vars = store.vars();
    if vars.is_empty() {
        return Err(invalid_arg!("no parameters to check"));
    }
    let grads = loss()?.backward()?;
    let scalar = |t: Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_slices);
    for _ in 0..n_slices {
        let (name, var) = &vars[rng.random_range(0..vars.len())];
        let n = var.elem_count();
        let start = rng.random_range(0..n);
        let indices: Vec<usize> = (start..(start + slice_len).min(n)).collect();
        let grad = match grads.get(var.as_tensor()) {
            Some(g) => g.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; n],
        };
        let original = var.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let mut numeric = Vec::with_capacity(indices.len());
        for &i in &indices {
            let eval = |delta: f64| -> Result<f64> {
                let mut v = original.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, var.shape(), var.device())?.to_dtype(var.dtype())?)?;
                scalar(loss()?)
            };
            let (plus, minus) = (eval(eps)?, eval(-eps)?);
            numeric.push((plus - minus) / (2.0 * eps));
        }
        var.set(&Tensor::from_vec(original, var.shape(), var.device())?.to_dtype(var.dtype())?)?;
        let analytic: Vec<f64> = indices.iter().map(|&i| grad[i]).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel_error = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
        out.push(SliceCheck {
            param: name.clone(),
            indices,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn fused_softmax_matches_reference() {
        let x = Var::randn(0f64, 3.0, (4, 3, 7), &Device::Cpu).unwrap();
        let w = Tensor::randn(0f64, 1.0, (4, 3, 7), &Device::Cpu).unwrap();
        let a = softmax_last(x.as_tensor()).unwrap();
        let b = candle_nn::ops::softmax(x.as_tensor(), D::Minus1).unwrap();
        assert!(max_diff(&a, &b) < 1e-12);
        let ga = (a * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let gb = (b * &w).unwrap().sum_all().unwrap().backward().unwrap();
        assert!(max_diff(ga.get(&x).unwrap(), gb.get(&x).unwrap()) < 1e-12);
        let t = x.as_tensor().transpose(1, 2).unwrap();
        assert!(max_diff(&softmax_last(&t).unwrap(), &candle_nn::ops::softmax(&t, D::Minus1).unwrap()) < 1e-12);
    }

    #[test]
    fn fused_gelu_value_and_slope() {
        let x = Var::randn(0f64, 3.0, 50, &Device::Cpu).unwrap();
        let y = gelu(x.as_tensor()).unwrap();
        assert!(max_diff(&y, &x.as_tensor().gelu().unwrap()) < 1e-12);
        let g = y.sum_all().unwrap().backward().unwrap();
        let h = 1e-5;
        let fd = ((gelu(&(x.as_tensor() + h).unwrap()).unwrap() - gelu(&(x.as_tensor() - h).unwrap()).unwrap()).unwrap() / (2.0 * h))
            .unwrap();
        assert!(max_diff(g.get(&x).unwrap(), &fd) < 1e-8);
    }

    #[test]
    fn init_is_seeded_and_order_free() {
        let a = ParamStore::new(7, DType::F64);
        let b = ParamStore::new(7, DType::F64);
        let va = a.vb();
        let vb_ = b.vb();
        let x1 = va.get_with_hints((3, 4), "x", small_init(1.0)).unwrap();
        let y1 = va.get_with_hints(5, "y", Init::Uniform { lo: 0.0, up: 1.0 }).unwrap();
        let y2 = vb_.get_with_hints(5, "y", Init::Uniform { lo: 0.0, up: 1.0 }).unwrap();
        let x2 = vb_.get_with_hints((3, 4), "x", small_init(1.0)).unwrap();
        let eq = |a: &Tensor, b: &Tensor| a.flatten_all().unwrap().to_vec1::<f64>().unwrap() == b.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(eq(&x1, &x2) && eq(&y1, &y2));
        let c = ParamStore::new(8, DType::F64);
        let x3 = c.vb().get_with_hints((3, 4), "x", small_init(1.0)).unwrap();
        assert!(!eq(&x1, &x3));
        assert_eq!(a.vars().len(), 2);
    }

    #[test]
    fn repeated_get_shares_storage() {
        let s = ParamStore::new(0, DType::F64);
        let t1 = s.vb().get_with_hints(3, "w", small_init(1.0)).unwrap();
        let t2 = s.vb().get_with_hints(3, "w", small_init(1.0)).unwrap();
        s.var("w").unwrap().set(&Tensor::new(&[1.0f64, 2.0, 3.0], &Device::Cpu).unwrap()).unwrap();
        assert_eq!(t1.to_vec1::<f64>().unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(t2.to_vec1::<f64>().unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn layer_norm_standardizes() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 6.0]], &Device::Cpu).unwrap();
        let y = layer_norm(&x, 0.0).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_check_on_a_quadratic() {
        let s = ParamStore::new(2, DType::F64);
        let w = s.vb().get_with_hints((3, 2), "w", small_init(1.0)).unwrap();
        let x = Tensor::new(&[[0.5f64, -1.0, 2.0]], &Device::Cpu).unwrap();
        let loss = || Ok(x.matmul(&w)?.tanh()?.sqr()?.sum_all()?);
        let checks = gradient_check(&s, &loss, 4, 3, 1e-5, 0).unwrap();
        assert!(checks.iter().all(|c| c.rel_error < 1e-6), "{checks:?}");
    }
}
