//! Parametric motion programs on the reference skeleton.
//!
//! Every program is a closed-form kinematic recipe: a root trajectory
//! (planar position, heading, height) plus body-frame joint positions. The
//! feature extractor turns that into the per-joint channel layout described
//! in [`crate::motion`].

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::motion::{MotionSequence, CHANNELS};

/// Frame rate of the synthetic corpus.
pub const FPS: f64 = 20.0;
/// Pelvis height when standing.
pub const REST_HEIGHT: f64 = 0.9;
/// Shortest sequence a program will generate.
pub const MIN_FRAMES: usize = 16;

const GRAVITY: f64 = 9.81;
const UPPER_ARM: f64 = 0.25;
const FOREARM: f64 = 0.25;
const THIGH: f64 = 0.45;
const SHIN: f64 = 0.45;

pub const JOINTS: usize = 15;
/// Joint indices of the reference skeleton.
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const SPINE: usize = 1;
    pub const HEAD: usize = 2;
    pub const L_SHOULDER: usize = 3;
    pub const L_WRIST: usize = 5;
    pub const R_SHOULDER: usize = 6;
    pub const R_WRIST: usize = 8;
    pub const L_HIP: usize = 9;
    pub const R_HIP: usize = 12;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Program {
    WalkForward,
    Turn,
    RaiseArm,
    Wave,
    Jump,
    WalkCircle,
}

impl Program {
    pub const ALL: [Program; 6] = [
        Program::WalkForward,
        Program::Turn,
        Program::RaiseArm,
        Program::Wave,
        Program::Jump,
        Program::WalkCircle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Program::WalkForward => "walk_forward",
            Program::Turn => "turn",
            Program::RaiseArm => "raise_arm",
            Program::Wave => "wave",
            Program::Jump => "jump",
            Program::WalkCircle => "walk_circle",
        }
    }

    pub fn from_name(name: &str) -> Option<Program> {
        Program::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl std::fmt::Display for Program {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Lateral sign: the left side lies on +x.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    Clockwise,
    Counterclockwise,
}

impl Rotation {
    /// Yaw sign: counterclockwise (a left turn) increases yaw.
    pub fn sign(self) -> f64 {
        match self {
            Rotation::Clockwise => -1.0,
            Rotation::Counterclockwise => 1.0,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Rotation::Clockwise => "clockwise",
            Rotation::Counterclockwise => "counterclockwise",
        }
    }
}

/// Documented parameter ranges.
pub mod ranges {
    pub const WALK_SPEED: (f64, f64) = (0.6, 1.6);
    pub const TURN_ANGLE: (f64, f64) = (std::f64::consts::FRAC_PI_2, std::f64::consts::PI);
    pub const RAISE_ANGLE: (f64, f64) = (2.2, 2.9);
    pub const WAVE_CYCLES: (f64, f64) = (1.5, 2.2);
    pub const WAVE_AMPLITUDE: (f64, f64) = (0.45, 0.7);
    pub const JUMP_HEIGHT: (f64, f64) = (0.25, 0.5);
    pub const CIRCLE_RADIUS: (f64, f64) = (0.6, 1.2);
    pub const CIRCLE_TURN: (f64, f64) = (1.3 * std::f64::consts::PI, 2.0 * std::f64::consts::PI);
}

/// A program together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "program", rename_all = "snake_case")]
pub enum MotionLabel {
    WalkForward { speed: f64 },
    Turn { side: Side, angle: f64 },
    RaiseArm { side: Side, angle: f64 },
    Wave { side: Side, cycles: f64, amplitude: f64 },
    Jump { height: f64 },
    WalkCircle { rotation: Rotation, radius: f64, turn: f64 },
}

fn in_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(invalid_arg!("{name} = {v} outside [{lo}, {hi}]"))
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

fn draw_side(rng: &mut impl Rng) -> Side {
    if rng.random_bool(0.5) {
        Side::Left
    } else {
        Side::Right
    }
}

impl MotionLabel {
    pub fn program(&self) -> Program {
        match self {
            MotionLabel::WalkForward { .. } => Program::WalkForward,
            MotionLabel::Turn { .. } => Program::Turn,
            MotionLabel::RaiseArm { .. } => Program::RaiseArm,
            MotionLabel::Wave { .. } => Program::Wave,
            MotionLabel::Jump { .. } => Program::Jump,
            MotionLabel::WalkCircle { .. } => Program::WalkCircle,
        }
    }

    /// Draws parameters uniformly from the documented ranges.
    pub fn sample(program: Program, rng: &mut impl Rng) -> MotionLabel {
        use ranges::*;
        match program {
            Program::WalkForward => MotionLabel::WalkForward {
                speed: draw(rng, WALK_SPEED),
            },
            Program::Turn => MotionLabel::Turn {
                side: draw_side(rng),
                angle: draw(rng, TURN_ANGLE),
            },
            Program::RaiseArm => MotionLabel::RaiseArm {
                side: draw_side(rng),
                angle: draw(rng, RAISE_ANGLE),
            },
            Program::Wave => MotionLabel::Wave {
                side: draw_side(rng),
                cycles: draw(rng, WAVE_CYCLES),
                amplitude: draw(rng, WAVE_AMPLITUDE),
            },
            Program::Jump => MotionLabel::Jump {
                height: draw(rng, JUMP_HEIGHT),
            },
            Program::WalkCircle => MotionLabel::WalkCircle {
                rotation: if rng.random_bool(0.5) {
                    Rotation::Clockwise
                } else {
                    Rotation::Counterclockwise
                },
                radius: draw(rng, CIRCLE_RADIUS),
                turn: draw(rng, CIRCLE_TURN),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        use ranges::*;
        match *self {
            MotionLabel::WalkForward { speed } => in_range("speed", speed, WALK_SPEED),
            MotionLabel::Turn { angle, .. } => in_range("angle", angle, TURN_ANGLE),
            MotionLabel::RaiseArm { angle, .. } => in_range("angle", angle, RAISE_ANGLE),
            MotionLabel::Wave { cycles, amplitude, .. } => {
                in_range("cycles", cycles, WAVE_CYCLES)?;
                in_range("amplitude", amplitude, WAVE_AMPLITUDE)
            }
            MotionLabel::Jump { height } => in_range("height", height, JUMP_HEIGHT),
            MotionLabel::WalkCircle { radius, turn, .. } => {
                in_range("radius", radius, CIRCLE_RADIUS)?;
                in_range("turn", turn, CIRCLE_TURN)
            }
        }
    }
}

type Vec3 = [f64; 3];

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    scale(a, 1.0 / n)
}

fn smoothstep(a: f64, b: f64, u: f64) -> f64 {
    let x = ((u - a) / (b - a)).clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Upper-arm direction from abduction (sideways raise, 0 = hanging, pi =
/// overhead) and flexion (forward swing).
fn arm_dir(sign: f64, abduct: f64, flex: f64) -> Vec3 {
    [
        sign * abduct.sin() * flex.cos(),
        -abduct.cos() * flex.cos(),
        flex.sin(),
    ]
}

#[derive(Debug, Clone, Copy)]
struct LimbPose {
    upper: Vec3,
    lower: Vec3,
}

impl LimbPose {
    fn arm(sign: f64, abduct: f64, flex: f64, bend: f64) -> Self {
        let upper = arm_dir(sign, abduct, flex);
        let lower = normalize(add(upper, [0.0, 0.0, bend]));
        Self { upper, lower }
    }

    /// Hip pitch (forward swing positive) and knee flexion.
    fn leg(pitch: f64, knee: f64) -> Self {
        let shin = pitch - knee;
        Self {
            upper: [0.0, -pitch.cos(), pitch.sin()],
            lower: [0.0, -shin.cos(), shin.sin()],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BodyPose {
    lean: f64,
    arms: [LimbPose; 2],
    legs: [LimbPose; 2],
}

impl BodyPose {
    fn standing() -> Self {
        Self {
            lean: 0.0,
            arms: [LimbPose::arm(1.0, 0.12, 0.0, 0.15), LimbPose::arm(-1.0, 0.12, 0.0, 0.15)],
            legs: [LimbPose::leg(0.0, 0.0); 2],
        }
    }

    /// Body-frame joint positions relative to the pelvis, in skeleton order.
    fn joints(&self) -> [Vec3; JOINTS] {
        let spine = [0.0, 0.25, 0.25 * self.lean.sin()];
        let head = [0.0, 0.6, 0.6 * self.lean.sin()];
        let mut out = [[0.0; 3]; JOINTS];
        out[joint::SPINE] = spine;
        out[joint::HEAD] = head;
        for (k, sign) in [(0usize, 1.0), (1, -1.0)] {
            let shoulder = [0.2 * sign, 0.45, 0.45 * self.lean.sin()];
            let elbow = add(shoulder, scale(self.arms[k].upper, UPPER_ARM));
            let wrist = add(elbow, scale(self.arms[k].lower, FOREARM));
            let base = joint::L_SHOULDER + 3 * k;
            out[base] = shoulder;
            out[base + 1] = elbow;
            out[base + 2] = wrist;
            let hip = [0.1 * sign, 0.0, 0.0];
            let knee = add(hip, scale(self.legs[k].upper, THIGH));
            let ankle = add(knee, scale(self.legs[k].lower, SHIN));
            let base = joint::L_HIP + 3 * k;
            out[base] = hip;
            out[base + 1] = knee;
            out[base + 2] = ankle;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct KinematicFrame {
    root: [f64; 2],
    yaw: f64,
    height: f64,
    body: [Vec3; JOINTS],
}

/// Forward direction `(x, z)` for a heading.
pub(crate) fn heading(yaw: f64) -> [f64; 2] {
    [yaw.sin(), yaw.cos()]
}

/// Gait used by both walking programs.
struct Gait {
    freq: f64,
    phase: f64,
    swing: f64,
}

impl Gait {
    fn new(speed: f64, rng: &mut impl Rng) -> Self {
        Self {
            freq: (0.8 + 0.45 * speed) * rng.random_range(0.95..1.05),
            phase: rng.random_range(0.0..TAU),
            swing: (0.3 + 0.1 * speed) * rng.random_range(0.9..1.1),
        }
    }

    fn pose(&self, t: f64) -> (BodyPose, f64) {
        let phi = TAU * self.freq * t + self.phase;
        let s = phi.sin();
        let mut pose = BodyPose::standing();
        pose.lean = 0.05;
        pose.legs = [
            LimbPose::leg(self.swing * s, 0.3 * (1.0 + phi.cos())),
            LimbPose::leg(-self.swing * s, 0.3 * (1.0 - phi.cos())),
        ];
        pose.arms = [
            LimbPose::arm(1.0, 0.12, -0.7 * self.swing * s, 0.3),
            LimbPose::arm(-1.0, 0.12, 0.7 * self.swing * s, 0.3),
        ];
        let bob = -0.02 + 0.02 * (2.0 * phi).cos();
        (pose, bob)
    }
}

/// Kinematic recipe of `label` over `frames` frames.
fn animate(label: &MotionLabel, frames: usize, rng: &mut ChaCha8Rng) -> Vec<KinematicFrame> {
    let dt = 1.0 / FPS;
    let duration = (frames - 1) as f64 * dt;
    let yaw0 = rng.random_range(-PI..PI);
    let root0 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let sway = rng.random_range(0.0..TAU);
    let mut out = Vec::with_capacity(frames);
    match *label {
        MotionLabel::WalkForward { speed } => {
            let gait = Gait::new(speed, rng);
            let dir = heading(yaw0);
            for i in 0..frames {
                let t = i as f64 * dt;
                let (pose, bob) = gait.pose(t);
                out.push(KinematicFrame {
                    root: [root0[0] + speed * t * dir[0], root0[1] + speed * t * dir[1]],
                    yaw: yaw0,
                    height: REST_HEIGHT + bob,
                    body: pose.joints(),
                });
            }
        }
        MotionLabel::WalkCircle { rotation, radius, turn } => {
            let speed = radius * turn / duration;
            let gait = Gait::new(speed.min(1.6), rng);
            let rate = rotation.sign() * turn / duration;
            let mut root = root0;
            for i in 0..frames {
                let t = i as f64 * dt;
                let yaw = yaw0 + rate * t;
                let (pose, bob) = gait.pose(t);
                out.push(KinematicFrame {
                    root,
                    yaw,
                    height: REST_HEIGHT + bob,
                    body: pose.joints(),
                });
                // chord of the arc travelled during this frame
                let dir = heading(yaw + 0.5 * rate * dt);
                root = [root[0] + speed * dt * dir[0], root[1] + speed * dt * dir[1]];
            }
        }
        MotionLabel::Turn { side, angle } => {
            let step_freq = rng.random_range(1.4..1.8);
            for i in 0..frames {
                let t = i as f64 * dt;
                let u = t / duration;
                let window = (PI * ((u - 0.1) / 0.8).clamp(0.0, 1.0)).sin();
                let yaw = yaw0 + side.sign() * angle * smoothstep(0.15, 0.85, u);
                let step = 0.15 * window * (TAU * step_freq * t).sin();
                let mut pose = BodyPose::standing();
                pose.legs = [
                    LimbPose::leg(step, 0.4 * step.abs()),
                    LimbPose::leg(-step, 0.4 * step.abs()),
                ];
                out.push(KinematicFrame {
                    root: root0,
                    yaw,
                    height: REST_HEIGHT - 0.01 * window,
                    body: pose.joints(),
                });
            }
        }
        MotionLabel::RaiseArm { side, angle } => {
            let k = if side == Side::Left { 0 } else { 1 };
            let up_at = rng.random_range(0.1..0.2);
            let down_at = rng.random_range(0.7..0.8);
            for i in 0..frames {
                let t = i as f64 * dt;
                let u = t / duration;
                let lift = smoothstep(up_at, up_at + 0.3, u) * (1.0 - smoothstep(down_at, down_at + 0.18, u));
                let mut pose = BodyPose::standing();
                pose.arms[k] = LimbPose::arm(side.sign(), 0.12 + (angle - 0.12) * lift, 0.1 * lift, 0.15);
                pose.lean = 0.02 * (TAU * 0.3 * t + sway).sin();
                out.push(KinematicFrame {
                    root: root0,
                    yaw: yaw0,
                    height: REST_HEIGHT,
                    body: pose.joints(),
                });
            }
        }
        MotionLabel::Wave { side, cycles, amplitude } => {
            let k = if side == Side::Left { 0 } else { 1 };
            let sign = side.sign();
            let (wave_start, wave_end) = (0.2, 0.92);
            let freq = cycles / ((wave_end - wave_start) * duration);
            let phase0 = rng.random_range(-0.3..0.3);
            for i in 0..frames {
                let t = i as f64 * dt;
                let u = t / duration;
                let lift = smoothstep(0.03, 0.2, u);
                let abduct = 0.12 + (FRAC_PI_2 - 0.12) * lift;
                let waving = smoothstep(wave_start - 0.02, wave_start + 0.02, u);
                let osc = amplitude * waving * (TAU * freq * (t - wave_start * duration) + phase0).sin();
                // forearm angle in the frontal plane: 0 hangs down, pi points up
                let psi = PI * lift + osc;
                let upper = arm_dir(sign, abduct, 0.0);
                let lower = [sign * psi.sin(), -psi.cos(), 0.05];
                let mut pose = BodyPose::standing();
                pose.arms[k] = LimbPose {
                    upper,
                    lower: normalize(lower),
                };
                out.push(KinematicFrame {
                    root: root0,
                    yaw: yaw0,
                    height: REST_HEIGHT,
                    body: pose.joints(),
                });
            }
        }
        MotionLabel::Jump { height } => {
            let apex_frame = ((frames - 1) as f64 / 2.0).round();
            let apex = apex_frame * dt;
            let flight = (2.0 * height / GRAVITY).sqrt();
            let crouch_len = 0.3;
            let crouch_depth = rng.random_range(0.08..0.14);
            for i in 0..frames {
                let t = i as f64 * dt;
                let from_apex = (t - apex).abs();
                let (h, crouch) = if from_apex <= flight {
                    (height - 0.5 * GRAVITY * from_apex * from_apex, 0.0)
                } else if from_apex <= flight + crouch_len {
                    let c = (PI * (from_apex - flight) / crouch_len).sin();
                    (-crouch_depth * c, c)
                } else {
                    (0.0, 0.0)
                };
                let airborne = if from_apex <= flight { 1.0 - from_apex / flight } else { 0.0 };
                let mut pose = BodyPose::standing();
                let bend = 1.2 * crouch;
                pose.legs = [LimbPose::leg(0.5 * bend, bend); 2];
                pose.arms = [
                    LimbPose::arm(1.0, 0.12, 1.2 * airborne - 0.4 * crouch, 0.2),
                    LimbPose::arm(-1.0, 0.12, 1.2 * airborne - 0.4 * crouch, 0.2),
                ];
                pose.lean = 0.25 * crouch;
                out.push(KinematicFrame {
                    root: root0,
                    yaw: yaw0,
                    height: REST_HEIGHT + h,
                    body: pose.joints(),
                });
            }
        }
    }
    out
}

/// Pose features of a kinematic track: root channels on the pelvis, local
/// positions and velocities elsewhere. Velocities are forward differences;
/// the last frame repeats the previous one.
fn features(track: &[KinematicFrame]) -> Vec<f32> {
    let n = track.len();
    let mut data = vec![0f32; n * JOINTS * CHANNELS];
    for i in 0..n {
        let (a, b) = if i + 1 < n {
            (&track[i], &track[i + 1])
        } else {
            (&track[i - 1], &track[i])
        };
        let cur = &track[i];
        let base = i * JOINTS * CHANNELS;
        let dx = (b.root[0] - a.root[0]) * FPS;
        let dz = (b.root[1] - a.root[1]) * FPS;
        let (s, c) = a.yaw.sin_cos();
        let root = [
            cur.height,
            (b.yaw - a.yaw) * FPS,
            c * dx - s * dz,
            s * dx + c * dz,
            (b.height - a.height) * FPS,
            0.0,
        ];
        for (ch, v) in root.iter().enumerate() {
            data[base + ch] = *v as f32;
        }
        for j in 1..JOINTS {
            let p = cur.body[j];
            let off = base + j * CHANNELS;
            for d in 0..3 {
                data[off + d] = p[d] as f32;
                data[off + 3 + d] = ((b.body[j][d] - a.body[j][d]) * FPS) as f32;
            }
        }
    }
    data
}

/// Generates the motion of `label` over `frames` frames. Deterministic in
/// `(label, frames, seed)`.
pub fn generate_motion(label: &MotionLabel, frames: usize, seed: u64) -> Result<MotionSequence> {
    label.validate()?;
    if frames < MIN_FRAMES {
        return Err(invalid_arg!("programs need at least {MIN_FRAMES} frames, got {frames}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let track = animate(label, frames, &mut rng);
    MotionSequence::new(frames, JOINTS, CHANNELS, features(&track))
}
