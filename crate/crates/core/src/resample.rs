//! Temporal linear resampling.
//!
//! Every stage of the hierarchy sees the sequence at a different temporal
//! resolution; this module is the single operator that moves data between
//! them. Sampling uses the align-corners convention: the first and last
//! frames of the source and target coincide, so affine ramps survive any
//! down/up round trip exactly.

use ndarray::{ArrayD, Axis, IxDyn};

use crate::error::{invalid_arg, Result};

/// A real tensor whose leading axis is time. Trailing axes are opaque.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalTensor {
    data: ArrayD<f64>,
}

impl TemporalTensor {
    pub fn new(data: ArrayD<f64>) -> Result<Self> {
        if data.ndim() == 0 || data.shape()[0] == 0 {
            return Err(invalid_arg!("temporal tensor needs at least one frame"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid_arg!("temporal tensor has non-finite entries"));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn from_vec(frames: usize, tail: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut shape = vec![frames];
        shape.extend_from_slice(tail);
        let data = ArrayD::from_shape_vec(IxDyn(&shape), values)
            .map_err(|e| invalid_arg!("shape {shape:?}: {e}"))?;
        Self::new(data)
    }

    /// A one-channel sequence, handy for scalar tracks.
    pub fn from_frames(values: &[f64]) -> Result<Self> {
        Self::from_vec(values.len(), &[], values.to_vec())
    }

    pub fn zeros(frames: usize, tail: &[usize]) -> Self {
        let mut shape = vec![frames.max(1)];
        shape.extend_from_slice(tail);
        Self {
            data: ArrayD::zeros(IxDyn(&shape)),
        }
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn tail_shape(&self) -> &[usize] {
        &self.data.shape()[1..]
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    /// Number of scalars per frame.
    pub fn channels(&self) -> usize {
        self.tail_shape().iter().product()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_array(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn into_array(self) -> ArrayD<f64> {
        self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("temporal tensors are kept in standard layout")
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data.into_raw_vec_and_offset().0
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &TemporalTensor, b: f64) -> Result<TemporalTensor> {
        self.check_same_shape(other)?;
        let data = ndarray::Zip::from(&self.data)
            .and(&other.data)
            .map_collect(|&x, &y| a * x + b * y);
        Ok(TemporalTensor { data })
    }

    pub fn scale(&self, a: f64) -> TemporalTensor {
        TemporalTensor {
            data: self.data.mapv(|v| a * v),
        }
    }

    pub fn sub(&self, other: &TemporalTensor) -> Result<TemporalTensor> {
        self.lincomb(1.0, other, -1.0)
    }

    pub fn add(&self, other: &TemporalTensor) -> Result<TemporalTensor> {
        self.lincomb(1.0, other, 1.0)
    }

    pub fn max_abs_diff(&self, other: &TemporalTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn mean_square(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }

    pub fn check_same_shape(&self, other: &TemporalTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(invalid_arg!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }

    /// Slice of frame `i` flattened over trailing axes.
    pub fn frame(&self, i: usize) -> &[f64] {
        let c = self.channels();
        &self.as_slice()[i * c..(i + 1) * c]
    }

    /// Stacks tensors along a new axis right after the frame axis, so that a
    /// batch can flow through frame-wise operators in one call.
    pub fn stack_batch(items: &[TemporalTensor]) -> Result<TemporalTensor> {
        let first = items
            .first()
            .ok_or_else(|| invalid_arg!("cannot stack an empty batch"))?;
        for it in items {
            first.check_same_shape(it)?;
        }
        let views: Vec<_> = items.iter().map(|t| t.data.view()).collect();
        let data = ndarray::stack(Axis(1), &views).map_err(|e| invalid_arg!("stack: {e}"))?;
        TemporalTensor::new(data)
    }

    /// Inverse of [`TemporalTensor::stack_batch`].
    pub fn unstack_batch(&self) -> Result<Vec<TemporalTensor>> {
        if self.data.ndim() < 2 {
            return Err(invalid_arg!("tensor has no batch axis"));
        }
        self.data
            .axis_iter(Axis(1))
            .map(|v| TemporalTensor::new(v.to_owned()))
            .collect()
    }
}

/// Length of a sequence of `frames` frames after resampling by `ratio`:
/// `max(1, round(ratio * frames))`, rounding half away from zero.
pub fn resampled_length(frames: usize, ratio: f64) -> Result<usize> {
    if frames == 0 {
        return Err(invalid_arg!("frame count must be positive"));
    }
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(invalid_arg!("resampling ratio must be positive, got {ratio}"));
    }
    Ok(((ratio * frames as f64).round() as usize).max(1))
}

/// One output frame as a blend of two source frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    /// Weight of `hi`; `lo` receives `1 - weight`.
    pub weight: f64,
}

/// Interpolation taps mapping `src` frames onto `dst` frames.
pub fn taps(src: usize, dst: usize) -> Vec<Tap> {
    assert!(src >= 1 && dst >= 1);
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                // integer numerator keeps grid-aligned positions exact
                (i * (src - 1)) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                weight: if hi == lo { 0.0 } else { pos - lo as f64 },
            }
        })
        .collect()
}

/// Dense `dst x src` interpolation matrix, row-major. Used to express the
/// resampling as a matmul inside autodiff graphs.
pub fn resample_matrix(src: usize, dst: usize) -> Vec<f64> {
    let mut m = vec![0.0; dst * src];
    for (i, tap) in taps(src, dst).into_iter().enumerate() {
        m[i * src + tap.lo] += 1.0 - tap.weight;
        m[i * src + tap.hi] += tap.weight;
    }
    m
}

/// Resamples `x` to exactly `frames` frames.
pub fn resample_to(x: &TemporalTensor, frames: usize) -> Result<TemporalTensor> {
    if frames == 0 {
        return Err(invalid_arg!("target frame count must be positive"));
    }
    if !x.is_finite() {
        return Err(invalid_arg!("cannot resample non-finite data"));
    }
    let src = x.frames();
    if frames == src {
        return Ok(x.clone());
    }
    let c = x.channels();
    let input = x.as_slice();
    let mut out = Vec::with_capacity(frames * c);
    for tap in taps(src, frames) {
        let a = &input[tap.lo * c..(tap.lo + 1) * c];
        let b = &input[tap.hi * c..(tap.hi + 1) * c];
        if tap.weight == 0.0 {
            out.extend_from_slice(a);
        } else {
            let w = tap.weight;
            out.extend(a.iter().zip(b).map(|(&a, &b)| (1.0 - w) * a + w * b));
        }
    }
    TemporalTensor::from_vec(frames, x.tail_shape(), out)
}

/// `f(x, r)`: resamples `x` by ratio `r` (downsampling for `r < 1`).
pub fn resample(x: &TemporalTensor, ratio: f64) -> Result<TemporalTensor> {
    let frames = resampled_length(x.frames(), ratio)?;
    if ratio == 1.0 {
        if !x.is_finite() {
            return Err(invalid_arg!("cannot resample non-finite data"));
        }
        return Ok(x.clone());
    }
    resample_to(x, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(values: &[f64]) -> TemporalTensor {
        TemporalTensor::from_frames(values).unwrap()
    }

    #[test]
    fn length_rule() {
        assert_eq!(resampled_length(4, 0.5).unwrap(), 2);
        assert_eq!(resampled_length(4, 1.0).unwrap(), 4);
        assert_eq!(resampled_length(100, 1.0 / 3.0).unwrap(), 33);
        assert_eq!(resampled_length(5, 0.5).unwrap(), 3);
        assert_eq!(resampled_length(3, 0.01).unwrap(), 1);
        assert!(resampled_length(0, 0.5).is_err());
        assert!(resampled_length(4, 0.0).is_err());
        assert!(resampled_length(4, -1.0).is_err());
    }

    #[test]
    fn documented_examples() {
        let x = ramp(&[0.0, 2.0, 4.0, 6.0]);
        assert_eq!(resample(&x, 1.0).unwrap(), x);
        assert_eq!(resample(&x, 0.5).unwrap().as_slice(), &[0.0, 6.0]);
        let up = resample(&ramp(&[0.0, 6.0]), 2.0).unwrap();
        for (a, b) in up.as_slice().iter().zip([0.0, 2.0, 4.0, 6.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_output_samples_midpoint() {
        let x = ramp(&[0.0, 2.0, 4.0, 6.0]);
        assert_eq!(resample_to(&x, 1).unwrap().as_slice(), &[3.0]);
    }

    #[test]
    fn trailing_dims_are_elementwise() {
        let x = TemporalTensor::from_vec(2, &[2], vec![0.0, 10.0, 3.0, 40.0]).unwrap();
        let y = resample_to(&x, 4).unwrap();
        assert_eq!(y.shape(), &[4, 2]);
        assert!((y.frame(1)[0] - 1.0).abs() < 1e-12);
        assert!((y.frame(1)[1] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let data = ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.0, f64::NAN]).unwrap();
        assert!(TemporalTensor::new(data).is_err());
    }

    #[test]
    fn matrix_matches_taps() {
        let x = ramp(&[1.0, -2.0, 5.0, 0.5, 3.0]);
        for dst in 1..9 {
            let m = resample_matrix(5, dst);
            let direct = resample_to(&x, dst).unwrap();
            for i in 0..dst {
                let v: f64 = (0..5).map(|j| m[i * 5 + j] * x.as_slice()[j]).sum();
                assert!((v - direct.as_slice()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_stacking_round_trips() {
        let a = TemporalTensor::from_vec(3, &[2], (0..6).map(f64::from).collect()).unwrap();
        let b = a.scale(-1.0);
        let s = TemporalTensor::stack_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[3, 2, 2]);
        let parts = s.unstack_batch().unwrap();
        assert_eq!(parts, vec![a, b]);
    }

    fn seq_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
        (1usize..24, 1usize..4).prop_flat_map(|(frames, ch)| {
            (
                Just(ch),
                proptest::collection::vec(-10.0f64..10.0, frames * ch),
            )
        })
    }

    proptest! {
        #[test]
        fn identity_at_unit_ratio((ch, v) in seq_strategy()) {
            let x = TemporalTensor::from_vec(v.len() / ch, &[ch], v).unwrap();
            prop_assert_eq!(resample(&x, 1.0).unwrap(), x);
        }

        #[test]
        fn affine_ramps_survive_round_trips(
            frames in 2usize..40,
            slope in -3.0f64..3.0,
            offset in -5.0f64..5.0,
            r in 0.05f64..1.0,
        ) {
            let v: Vec<f64> = (0..frames).map(|i| slope * i as f64 + offset).collect();
            let x = ramp(&v);
            let down = resample(&x, r).unwrap();
            prop_assume!(down.frames() >= 2);
            let back = resample_to(&down, frames).unwrap();
            prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-9);
        }

        #[test]
        fn linear_in_the_data(
            (ch, v) in seq_strategy(),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
            r in 0.1f64..3.0,
        ) {
            let frames = v.len() / ch;
            let x = TemporalTensor::from_vec(frames, &[ch], v.clone()).unwrap();
            let y = TemporalTensor::from_vec(frames, &[ch], v.iter().map(|a| a.sin()).collect()).unwrap();
            let lhs = resample(&x.lincomb(alpha, &y, beta).unwrap(), r).unwrap();
            let rhs = resample(&x, r).unwrap().lincomb(alpha, &resample(&y, r).unwrap(), beta).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        }

        #[test]
        fn outputs_stay_inside_channel_range((ch, v) in seq_strategy(), r in 0.1f64..3.0) {
            let frames = v.len() / ch;
            let x = TemporalTensor::from_vec(frames, &[ch], v.clone()).unwrap();
            let y = resample(&x, r).unwrap();
            for c in 0..ch {
                let src: Vec<f64> = (0..frames).map(|i| x.frame(i)[c]).collect();
                let lo = src.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..y.frames() {
                    let val = y.frame(i)[c];
                    prop_assert!(val >= lo - 1e-12 && val <= hi + 1e-12);
                }
            }
        }
    }
}
