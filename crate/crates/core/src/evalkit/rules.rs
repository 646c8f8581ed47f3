//! Rule-based semantic checks, one per motion program.
//!
//! Rules read only the pose features, so they apply equally to generated
//! motions and to temporally resampled ones. Quantities that depend on
//! duration are computed from per-second rates integrated with the caller's
//! frame spacing `dt`.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, PI};

use crate::error::{invalid_arg, Result};
use crate::motion::{local, root, MotionSequence, CHANNELS};
use crate::synthdata::programs::{joint, MotionLabel, Program, Side, FPS, JOINTS};

/// Root trajectory relative to the first frame: yaw 0, position 0, with x
/// lateral (left positive) and z forward.
#[derive(Debug, Clone)]
pub struct RootPath {
    pub yaw: Vec<f64>,
    pub position: Vec<[f64; 2]>,
    pub height: Vec<f64>,
}

impl RootPath {
    /// Integrates yaw rate and heading-frame velocity with left sums.
    pub fn integrate(m: &MotionSequence, dt: f64) -> RootPath {
        let n = m.frames();
        let mut yaw = Vec::with_capacity(n);
        let mut position = Vec::with_capacity(n);
        let (mut a, mut p) = (0.0f64, [0.0f64; 2]);
        for i in 0..n {
            yaw.push(a);
            position.push(p);
            let lat = m.get(i, joint::PELVIS, root::VEL_LATERAL) as f64;
            let fwd = m.get(i, joint::PELVIS, root::VEL_FORWARD) as f64;
            let (s, c) = a.sin_cos();
            p = [p[0] + dt * (c * lat + s * fwd), p[1] + dt * (-s * lat + c * fwd)];
            a += dt * m.get(i, joint::PELVIS, root::YAW_RATE) as f64;
        }
        RootPath {
            yaw,
            position,
            height: m.track(joint::PELVIS, root::HEIGHT),
        }
    }

    pub fn yaw_change(&self) -> f64 {
        *self.yaw.last().unwrap_or(&0.0)
    }

    pub fn displacement(&self) -> [f64; 2] {
        *self.position.last().unwrap_or(&[0.0, 0.0])
    }
}

fn side_joints(side: Side) -> (usize, usize) {
    match side {
        Side::Left => (joint::L_SHOULDER, joint::L_WRIST),
        Side::Right => (joint::R_SHOULDER, joint::R_WRIST),
    }
}

fn other(side: Side) -> Side {
    match side {
        Side::Left => Side::Right,
        Side::Right => Side::Left,
    }
}

/// Wrist height above its shoulder per frame.
fn wrist_lift(m: &MotionSequence, side: Side) -> Vec<f64> {
    let (s, w) = side_joints(side);
    (0..m.frames())
        .map(|f| (m.get(f, w, local::Y) - m.get(f, s, local::Y)) as f64)
        .collect()
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Number of swings across `center` that clear a band of `±band`.
pub fn hysteresis_crossings(v: &[f64], center: f64, band: f64) -> usize {
    let mut state = 0i8;
    let mut count = 0;
    for &x in v {
        let s = if x > center + band {
            1
        } else if x < center - band {
            -1
        } else {
            0
        };
        if s != 0 {
            if state != 0 && s != state {
                count += 1;
            }
            state = s;
        }
    }
    count
}

pub mod thresholds {
    /// Walking must cover this fraction of a 1 m/s pace.
    pub const WALK_MIN_SPEED: f64 = 0.3;
    pub const TURN_MAX_DISPLACEMENT: f64 = 0.5;
    pub const RAISE_MIN_LIFT: f64 = 0.15;
    pub const WAVE_MIN_ABOVE: f64 = 0.4;
    pub const WAVE_BAND: f64 = 0.04;
    pub const WAVE_MIN_CROSSINGS: usize = 2;
    pub const JUMP_MIN_RISE: f64 = 0.08;
    pub const CIRCLE_MIN_CONSISTENCY: f64 = 0.9;
}

/// Whether `m` shows the behaviour named by `label`. `dt` is the time
/// between consecutive frames of `m`.
pub fn rule_passes(m: &MotionSequence, label: &MotionLabel, dt: f64) -> Result<bool> {
    use thresholds::*;
    if m.joints() != JOINTS || m.channels() != CHANNELS {
        return Err(invalid_arg!(
            "rules expect {JOINTS}x{CHANNELS} motions, got {}x{}",
            m.joints(),
            m.channels()
        ));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid_arg!("frame spacing must be positive, got {dt}"));
    }
    let duration = dt * (m.frames().saturating_sub(1)) as f64;
    let ok = match *label {
        MotionLabel::WalkForward { .. } => {
            let path = RootPath::integrate(m, dt);
            path.displacement()[1] >= WALK_MIN_SPEED * duration && path.yaw_change().abs() <= FRAC_PI_4
        }
        MotionLabel::Turn { side, .. } => {
            let path = RootPath::integrate(m, dt);
            let [x, z] = path.displacement();
            side.sign() * path.yaw_change() >= FRAC_PI_3 && x.hypot(z) <= TURN_MAX_DISPLACEMENT
        }
        MotionLabel::RaiseArm { side, .. } => {
            max(&wrist_lift(m, side)) >= RAISE_MIN_LIFT && max(&wrist_lift(m, other(side))) < 0.0
        }
        MotionLabel::Wave { side, .. } => {
            let lift = wrist_lift(m, side);
            let (_, w) = side_joints(side);
            let lateral: Vec<f64> = (0..m.frames())
                .filter(|&f| lift[f] > 0.0)
                .map(|f| m.get(f, w, local::X) as f64)
                .collect();
            let above = lateral.len() as f64 / m.frames() as f64;
            above >= WAVE_MIN_ABOVE
                && hysteresis_crossings(&lateral, median(&lateral), WAVE_BAND) >= WAVE_MIN_CROSSINGS
        }
        MotionLabel::Jump { .. } => {
            let h = m.track(joint::PELVIS, root::HEIGHT);
            max(&h) - median(&h) >= JUMP_MIN_RISE
        }
        MotionLabel::WalkCircle { rotation, .. } => {
            let path = RootPath::integrate(m, dt);
            let rates = m.track(joint::PELVIS, root::YAW_RATE);
            let consistent = rates.iter().filter(|&&r| r * rotation.sign() > 0.0).count() as f64 / rates.len() as f64;
            rotation.sign() * path.yaw_change() >= PI && consistent >= CIRCLE_MIN_CONSISTENCY
        }
    };
    Ok(ok)
}

/// The programs a rule set can judge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    programs: BTreeSet<Program>,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::standard()
    }
}

impl RuleSet {
    pub fn standard() -> Self {
        Self::with_programs(&Program::ALL)
    }

    pub fn with_programs(programs: &[Program]) -> Self {
        Self {
            programs: programs.iter().copied().collect(),
        }
    }

    pub fn contains(&self, program: Program) -> bool {
        self.programs.contains(&program)
    }

    pub fn check(&self, m: &MotionSequence, label: &MotionLabel, dt: f64) -> Result<bool> {
        if !self.contains(label.program()) {
            return Err(invalid_arg!("no rule registered for {}", label.program()));
        }
        rule_passes(m, label, dt)
    }

    /// Fraction of `(motion, label, dt)` triples whose rule passes.
    pub fn accuracy_with_dt<'a>(
        &self,
        samples: impl IntoIterator<Item = (&'a MotionSequence, &'a MotionLabel, f64)>,
    ) -> Result<f64> {
        let (mut n, mut pass) = (0usize, 0usize);
        for (m, label, dt) in samples {
            n += 1;
            pass += self.check(m, label, dt)? as usize;
        }
        if n == 0 {
            return Err(invalid_arg!("semantic accuracy of an empty sample list"));
        }
        Ok(pass as f64 / n as f64)
    }

    /// Fraction of samples at the corpus frame rate whose rule passes.
    pub fn accuracy(&self, samples: &[(MotionSequence, MotionLabel)]) -> Result<f64> {
        self.accuracy_with_dt(samples.iter().map(|(m, l)| (m, l, 1.0 / FPS)))
    }
}

/// Semantic accuracy with every program's rule registered.
pub fn semantic_accuracy(samples: &[(MotionSequence, MotionLabel)]) -> Result<f64> {
    RuleSet::standard().accuracy(samples)
}
