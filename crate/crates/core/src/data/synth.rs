use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabelSpan, MotionRecord, TARGET_FPS, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::rotation::{from_rotation, RotMatrix};
use crate::skeleton::{MotionSequence, Pose};
use crate::JOINTS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ArmWave,
    Squat,
    WalkInPlace,
    Jump,
    Turn,
    Bow,
}

pub const FAMILIES: [Family; 6] = [
    Family::ArmWave,
    Family::Squat,
    Family::WalkInPlace,
    Family::Jump,
    Family::Turn,
    Family::Bow,
];

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::ArmWave => "arm-wave",
            Family::Squat => "squat",
            Family::WalkInPlace => "walk-in-place",
            Family::Jump => "jump",
            Family::Turn => "turn",
            Family::Bow => "bow",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        FAMILIES.into_iter().find(|f| f.name() == name)
    }

    /// Base frequency in Hz.
    fn frequency(self) -> f64 {
        match self {
            Family::ArmWave | Family::WalkInPlace => 1.0,
            Family::Jump => 1.5,
            Family::Squat | Family::Turn | Family::Bow => 0.5,
        }
    }

    fn channels(self) -> &'static [Channel] {
        match self {
            Family::ArmWave => ARM_WAVE,
            Family::Squat => SQUAT,
            Family::WalkInPlace => WALK_IN_PLACE,
            Family::Jump => JUMP,
            Family::Turn => TURN,
            Family::Bow => BOW,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Axis {
    X,
    Y,
    Z,
}

/// One joint-angle program: `amplitude · (base + ramp·t/(T−1) + osc·sin(ωt + φ + lag))`.
#[derive(Clone, Copy, Debug)]
struct Channel {
    joint: usize,
    axis: Axis,
    base: f64,
    ramp: f64,
    osc: f64,
    lag: f64,
}

const fn ch(joint: usize, axis: Axis, base: f64, osc: f64, lag: f64) -> Channel {
    Channel {
        joint,
        axis,
        base,
        ramp: 0.0,
        osc,
        lag,
    }
}

// Joint indices: 0 pelvis, 1/2 hips, 3/6/9 spine, 4/5 knees, 7/8 ankles,
// 12 neck, 15 head, 16/17 shoulders, 18/19 elbows, 20/21 wrists. Left is +x,
// up is +y, forward is +z.
const ARM_WAVE: &[Channel] = &[
    ch(17, Axis::Z, -1.3, 0.0, 0.0),
    ch(19, Axis::Z, -0.7, 0.6, 0.0),
    ch(21, Axis::Z, 0.0, 0.3, 0.5),
];

const SQUAT: &[Channel] = &[
    ch(1, Axis::X, -0.8, -0.6, 0.0),
    ch(2, Axis::X, -0.8, -0.6, 0.0),
    ch(4, Axis::X, 1.5, 1.1, 0.0),
    ch(5, Axis::X, 1.5, 1.1, 0.0),
    ch(16, Axis::Y, -1.2, 0.0, 0.0),
    ch(17, Axis::Y, 1.2, 0.0, 0.0),
];

const WALK_IN_PLACE: &[Channel] = &[
    ch(1, Axis::X, -0.2, 0.6, 0.0),
    ch(2, Axis::X, -0.2, 0.6, PI),
    ch(4, Axis::X, 0.5, 0.4, PI / 2.0),
    ch(5, Axis::X, 0.5, 0.4, 3.0 * PI / 2.0),
    ch(16, Axis::X, 0.0, 0.4, PI),
    ch(17, Axis::X, 0.0, 0.4, 0.0),
    ch(18, Axis::X, -0.3, 0.0, 0.0),
    ch(19, Axis::X, -0.3, 0.0, 0.0),
];

const JUMP: &[Channel] = &[
    ch(16, Axis::Z, 2.2, 0.5, 0.0),
    ch(17, Axis::Z, -2.2, -0.5, 0.0),
    ch(1, Axis::X, -0.3, -0.3, 0.0),
    ch(2, Axis::X, -0.3, -0.3, 0.0),
    ch(4, Axis::X, 0.6, 0.6, 0.0),
    ch(5, Axis::X, 0.6, 0.6, 0.0),
];

const TURN: &[Channel] = &[
    Channel {
        joint: 0,
        axis: Axis::Y,
        base: 0.0,
        ramp: 1.6,
        osc: 0.1,
        lag: 0.0,
    },
    ch(16, Axis::Z, 0.4, 0.0, 0.0),
    ch(17, Axis::Z, -0.4, 0.0, 0.0),
];

const BOW: &[Channel] = &[
    ch(3, Axis::X, 0.35, 0.2, 0.0),
    ch(6, Axis::X, 0.35, 0.2, 0.0),
    ch(9, Axis::X, 0.35, 0.2, 0.0),
    ch(12, Axis::X, 0.2, 0.1, 0.0),
];

/// Per-sample jitter. `amplitude` scales every angle, so 0 gives the rest pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    pub amplitude: f64,
    /// Multiplier on the family's base frequency.
    pub frequency: f64,
    pub phase: f64,
}

impl FamilyParams {
    pub const NOMINAL: FamilyParams = FamilyParams {
        amplitude: 1.0,
        frequency: 1.0,
        phase: 0.0,
    };

    fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            amplitude: rng.random_range(0.8..1.2),
            frequency: rng.random_range(0.8..1.2),
            phase: rng.random_range(0.0..TAU),
        }
    }
}

fn axis_vector(a: Axis) -> Vector3<f64> {
    match a {
        Axis::X => Vector3::x(),
        Axis::Y => Vector3::y(),
        Axis::Z => Vector3::z(),
    }
}

/// `frames` poses of `family` at `fps` with root translation zero.
pub fn family_motion(
    family: Family,
    p: &FamilyParams,
    frames: usize,
    fps: f64,
) -> Result<MotionSequence> {
    if frames == 0 {
        return Err(Error::input("family motion needs at least one frame"));
    }
    let omega = TAU * family.frequency() * p.frequency;
    let span = (frames.max(2) - 1) as f64;
    let poses = (0..frames)
        .map(|i| {
            let t = i as f64 / fps;
            let mut local = vec![Matrix3::identity(); JOINTS];
            for c in family.channels() {
                let angle = p.amplitude
                    * (c.base
                        + c.ramp * i as f64 / span
                        + c.osc * (omega * t + p.phase + c.lag).sin());
                let r = RotMatrix::from_axis_angle(axis_vector(c.axis), angle);
                local[c.joint] = local[c.joint] * r.matrix();
            }
            let mut pose = Pose::identity();
            for (j, m) in local.iter().enumerate() {
                if *m != Matrix3::identity() {
                    pose.rotations[j] =
                        from_rotation(&RotMatrix::new(*m, 1e-9).expect("product of rotations"));
                }
            }
            pose
        })
        .collect();
    MotionSequence::new(fps, poses)
}

/// `per_family` records for each of the first `families` families, labelled
/// with the family name; 60 frames at 30 fps.
pub fn synthesize_dataset(
    families: usize,
    per_family: usize,
    seed: u64,
) -> Result<Vec<MotionRecord>> {
    if families == 0 || families > FAMILIES.len() {
        return Err(Error::input(format!(
            "family count must be in 1..={}, got {families}",
            FAMILIES.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(families * per_family);
    for (k, family) in FAMILIES[..families].iter().enumerate() {
        for i in 0..per_family {
            let params = FamilyParams::sample(&mut rng);
            let motion = family_motion(*family, &params, WINDOW_LEN, TARGET_FPS)?;
            out.push(MotionRecord::new(
                format!("{}-{i:03}", family.name()),
                motion,
                vec![LabelSpan {
                    start: 0,
                    end: WINDOW_LEN - 1,
                    text: family.name().to_string(),
                }],
                Some(k as u32),
            )?);
        }
    }
    Ok(out)
}
