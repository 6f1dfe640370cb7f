//! Procedural motion families.
//!
//! Each sequence is an analytic program: a root that translates and turns at
//! constant rates plus sums of sinusoids on the local joint offsets. Every
//! feature is a smooth closed-form function of time, so derivatives of any
//! order (and therefore ground-truth jitter) are known exactly.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

use super::contacts::derive_foot_contacts;
use super::layout::{FeatureSlice, PoseLayout};
use super::sequence::MotionSequence;
use super::vocab::{ConditionId, ConditionVocab};

/// Joints of the synthetic skeleton: pelvis (root), left heel, left toe,
/// right heel, right toe, left wrist, right wrist.
pub const SYNTH_JOINTS: usize = 7;

/// Local (non-root) indices of the heel and toe joints, in contact order.
const FOOT_JOINTS: [usize; 4] = [0, 1, 2, 3];

const REST: [[f64; 3]; SYNTH_JOINTS - 1] = [
    [0.10, 0.05, -0.05],
    [0.10, 0.03, 0.15],
    [-0.10, 0.05, -0.05],
    [-0.10, 0.03, 0.15],
    [0.25, 0.85, 0.0],
    [-0.25, 0.85, 0.0],
];

const PELVIS_HEIGHT: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    StandStill,
    StraightWalk,
    CircularWalk,
    Wave,
}

impl FamilyKind {
    pub fn default_prompt(self) -> &'static str {
        match self {
            FamilyKind::StandStill => "a person stands still",
            FamilyKind::StraightWalk => "a person walks forward",
            FamilyKind::CircularWalk => "a person walks in a circle",
            FamilyKind::Wave => "a person waves with the right hand",
        }
    }
}

/// Closed interval a parameter is drawn from uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        ParamRange { lo, hi }
    }

    fn sample(&self, rng: &mut rng::Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.hi >= self.lo) {
            return Err(Error::InvalidConfig(format!(
                "{name} range [{}, {}] must be positive and ordered",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

fn default_speed() -> ParamRange {
    ParamRange::new(1.0, 1.2)
}
fn default_cadence() -> ParamRange {
    ParamRange::new(0.9, 1.0)
}
fn default_scale() -> ParamRange {
    ParamRange::new(0.95, 1.05)
}
fn default_radius() -> ParamRange {
    ParamRange::new(1.5, 2.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub prompt: String,
    /// Walking speed, length units per second.
    #[serde(default = "default_speed")]
    pub speed: ParamRange,
    /// Gait or wave cycles per second.
    #[serde(default = "default_cadence")]
    pub cadence: ParamRange,
    /// Uniform body scale.
    #[serde(default = "default_scale")]
    pub scale: ParamRange,
    /// Turning radius for circular walks.
    #[serde(default = "default_radius")]
    pub radius: ParamRange,
}

impl FamilySpec {
    pub fn new(kind: FamilyKind) -> Self {
        FamilySpec {
            kind,
            prompt: kind.default_prompt().to_string(),
            speed: default_speed(),
            cadence: default_cadence(),
            scale: default_scale(),
            radius: default_radius(),
        }
    }
}

fn default_fps() -> f64 {
    20.0
}
fn default_min_frames() -> usize {
    40
}
fn default_max_frames() -> usize {
    196
}
fn default_contact_threshold() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub families: Vec<FamilySpec>,
    pub sequences_per_family: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_min_frames")]
    pub min_frames: usize,
    #[serde(default = "default_max_frames")]
    pub max_frames: usize,
    /// Foot-contact speed threshold in length units per frame interval.
    #[serde(default = "default_contact_threshold")]
    pub contact_threshold: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            families: vec![
                FamilySpec::new(FamilyKind::StandStill),
                FamilySpec::new(FamilyKind::StraightWalk),
                FamilySpec::new(FamilyKind::CircularWalk),
                FamilySpec::new(FamilyKind::Wave),
            ],
            sequences_per_family: 200,
            fps: default_fps(),
            min_frames: default_min_frames(),
            max_frames: default_max_frames(),
            contact_threshold: default_contact_threshold(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::InvalidConfig("generator needs at least one family".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidConfig(format!("fps must be positive, got {}", self.fps)));
        }
        if self.sequences_per_family == 0 {
            return Err(Error::InvalidConfig("sequences_per_family must be positive".into()));
        }
        if self.min_frames < 4 || self.max_frames < self.min_frames {
            return Err(Error::InvalidConfig(format!(
                "frame range [{}, {}] must satisfy 4 <= min <= max",
                self.min_frames, self.max_frames
            )));
        }
        if !(self.contact_threshold.is_finite() && self.contact_threshold > 0.0) {
            return Err(Error::InvalidConfig("contact threshold must be positive".into()));
        }
        for f in &self.families {
            f.speed.validate("speed")?;
            f.cadence.validate("cadence")?;
            f.scale.validate("scale")?;
            f.radius.validate("radius")?;
        }
        Ok(())
    }

    pub fn vocab(&self) -> Result<ConditionVocab> {
        ConditionVocab::new(self.families.iter().map(|f| f.prompt.clone()).collect())
    }

    pub fn layout(&self) -> PoseLayout {
        PoseLayout::new(SYNTH_JOINTS).expect("synthetic skeleton is valid")
    }
}

/// A generated dataset: motions with their condition labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub motions: Vec<MotionSequence>,
    pub conditions: Vec<ConditionId>,
    pub vocab: ConditionVocab,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.motions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motions.is_empty()
    }

    pub fn layout(&self) -> Option<&PoseLayout> {
        self.motions.first().map(|m| m.layout())
    }

    pub fn fps(&self) -> Option<f64> {
        self.motions.first().map(|m| m.fps())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MotionSequence, ConditionId)> {
        self.motions.iter().zip(self.conditions.iter().copied())
    }
}

/// One sinusoidal component on a local joint offset and its rotation angle.
#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidTerm {
    pub joint: usize,
    pub amplitude: [f64; 3],
    pub angle_amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

/// Closed-form description of one synthetic clip.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionProgram {
    pub speed: f64,
    pub turn_rate: f64,
    pub height: f64,
    pub bob_amplitude: f64,
    pub bob_omega: f64,
    pub rest: Vec<[f64; 3]>,
    pub terms: Vec<SinusoidTerm>,
}

impl MotionProgram {
    pub fn sample(family: &FamilySpec, rng: &mut rng::Rng) -> Self {
        let scale = family.scale.sample(rng);
        let rest: Vec<[f64; 3]> = REST.iter().map(|p| p.map(|v| v * scale)).collect();
        let height = PELVIS_HEIGHT * scale;
        let mut program = MotionProgram {
            speed: 0.0,
            turn_rate: 0.0,
            height,
            bob_amplitude: 0.0,
            bob_omega: 0.0,
            rest,
            terms: Vec::new(),
        };
        match family.kind {
            FamilyKind::StandStill => {}
            FamilyKind::StraightWalk | FamilyKind::CircularWalk => {
                let speed = family.speed.sample(rng);
                let omega = TAU * family.cadence.sample(rng);
                program.speed = speed;
                if family.kind == FamilyKind::CircularWalk {
                    program.turn_rate = speed / family.radius.sample(rng);
                }
                program.bob_amplitude = 0.02 * scale;
                program.bob_omega = 2.0 * omega;
                // Feet swing so their global forward speed touches zero once
                // per cycle, which is when they plant.
                let stride = speed / omega;
                for (side, phase) in [(0usize, 0.0), (2usize, PI)] {
                    for joint in [side, side + 1] {
                        program.terms.push(SinusoidTerm {
                            joint,
                            amplitude: [0.0, 0.0, stride],
                            angle_amplitude: 0.3,
                            omega,
                            phase,
                        });
                        program.terms.push(SinusoidTerm {
                            joint,
                            amplitude: [0.0, 0.03 * scale, 0.0],
                            angle_amplitude: 0.0,
                            omega,
                            phase: phase + FRAC_PI_2,
                        });
                    }
                }
                // Arms swing against the same-side leg.
                for (joint, phase) in [(4usize, PI), (5usize, 0.0)] {
                    program.terms.push(SinusoidTerm {
                        joint,
                        amplitude: [0.0, 0.0, 0.15 * scale],
                        angle_amplitude: 0.4,
                        omega,
                        phase,
                    });
                }
            }
            FamilyKind::Wave => {
                let omega = TAU * 1.5 * family.cadence.sample(rng);
                program.rest[5] = [-0.30 * scale, 1.50 * scale, 0.10 * scale];
                program.terms.push(SinusoidTerm {
                    joint: 5,
                    amplitude: [0.15 * scale, 0.03 * scale, 0.0],
                    angle_amplitude: 0.5,
                    omega,
                    phase: 0.0,
                });
            }
        }
        program
    }

    pub fn local_joint_count(&self) -> usize {
        self.rest.len()
    }

    fn terms_for(&self, joint: usize) -> impl Iterator<Item = &SinusoidTerm> {
        self.terms.iter().filter(move |t| t.joint == joint)
    }

    /// `d^order/dt^order` of the local offset of `joint` at time `t`.
    pub fn local_derivative(&self, joint: usize, order: u32, t: f64) -> [f64; 3] {
        let mut out = if order == 0 {
            self.rest[joint]
        } else {
            [0.0; 3]
        };
        for term in self.terms_for(joint) {
            let s = sin_derivative(term.omega, term.phase, order, t);
            for (o, a) in out.iter_mut().zip(term.amplitude) {
                *o += a * s;
            }
        }
        out
    }

    pub fn joint_angle(&self, joint: usize, t: f64) -> f64 {
        self.terms_for(joint)
            .map(|term| term.angle_amplitude * (term.omega * t + term.phase).sin())
            .sum()
    }

    pub fn root_height(&self, t: f64) -> f64 {
        self.height + self.bob_amplitude * (self.bob_omega * t).sin()
    }

    fn root_height_rate(&self, t: f64) -> f64 {
        self.bob_amplitude * self.bob_omega * (self.bob_omega * t).cos()
    }

    fn heading(&self, t: f64) -> f64 {
        self.turn_rate * t
    }

    fn root_xz(&self, t: f64) -> [f64; 2] {
        if self.turn_rate == 0.0 {
            [0.0, self.speed * t]
        } else {
            let r = self.speed / self.turn_rate;
            let a = self.turn_rate * t;
            [r * (1.0 - a.cos()), r * a.sin()]
        }
    }

    /// Global position of a local joint.
    pub fn global_position(&self, joint: usize, t: f64) -> [f64; 3] {
        let l = self.local_derivative(joint, 0, t);
        let root = self.root_xz(t);
        let (s, c) = self.heading(t).sin_cos();
        [root[0] + l[0] * c + l[2] * s, l[1], root[1] - l[0] * s + l[2] * c]
    }

    /// Velocity of a local joint expressed in the root frame.
    fn local_frame_velocity(&self, joint: usize, t: f64) -> [f64; 3] {
        let l = self.local_derivative(joint, 0, t);
        let dl = self.local_derivative(joint, 1, t);
        [
            self.turn_rate * l[2] + dl[0],
            dl[1],
            self.speed - self.turn_rate * l[0] + dl[2],
        ]
    }

    /// Samples `n` frames at `fps` into the feature layout.
    pub fn render(&self, n: usize, fps: f64, contact_threshold: f64) -> Result<MotionSequence> {
        let layout = PoseLayout::new(self.local_joint_count() + 1)?;
        let mut frames = Matrix::zeros(n, layout.feature_dim());
        let mut feet = Vec::with_capacity(n);
        let jp = layout.range(FeatureSlice::JointPositions);
        let jv = layout.range(FeatureSlice::JointVelocities);
        let jr = layout.range(FeatureSlice::JointRotations);
        for k in 0..n {
            let t = k as f64 / fps;
            let row = frames.row_mut(k);
            row[layout.range(FeatureSlice::RootAngularVelocity).start] = self.turn_rate;
            row[layout.range(FeatureSlice::RootVelocityX).start] = 0.0;
            row[layout.range(FeatureSlice::RootVelocityZ).start] = self.speed;
            row[layout.range(FeatureSlice::RootHeight).start] = self.root_height(t);
            row[jv.start..jv.start + 3].copy_from_slice(&[0.0, self.root_height_rate(t), self.speed]);
            for j in 0..self.local_joint_count() {
                let p = self.local_derivative(j, 0, t);
                row[jp.start + 3 * j..jp.start + 3 * j + 3].copy_from_slice(&p);
                let v = self.local_frame_velocity(j, t);
                row[jv.start + 3 * (j + 1)..jv.start + 3 * (j + 2)].copy_from_slice(&v);
                let (s, c) = self.joint_angle(j, t).sin_cos();
                row[jr.start + 6 * j..jr.start + 6 * j + 6].copy_from_slice(&[1.0, 0.0, 0.0, 0.0, c, s]);
            }
            feet.push(FOOT_JOINTS.map(|j| self.global_position(j, t)));
        }
        let contacts = derive_foot_contacts(&feet, fps, contact_threshold)?;
        let cf = layout.range(FeatureSlice::FootContacts);
        for k in 0..n {
            frames.row_mut(k)[cf.clone()].copy_from_slice(contacts.row(k));
        }
        MotionSequence::new(frames, fps, layout)
    }

    /// Continuous-time counterpart of the jitter metric: mean norm of the
    /// `order`-th derivative of the local joint positions, evaluated at the
    /// centre of each finite-difference stencil of an `n`-frame clip.
    pub fn analytic_jitter(&self, order: u32, n: usize, fps: f64) -> f64 {
        let o = order as usize;
        if n <= o {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for k in 0..n - o {
            let t = (k as f64 + o as f64 / 2.0) / fps;
            for j in 0..self.local_joint_count() {
                let d = self.local_derivative(j, order, t);
                sum += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                count += 1;
            }
        }
        sum / count as f64
    }
}

/// `d^order/dt^order sin(ωt + φ)`.
fn sin_derivative(omega: f64, phase: f64, order: u32, t: f64) -> f64 {
    let x = omega * t + phase;
    let w = omega.powi(order as i32);
    match order % 4 {
        0 => w * x.sin(),
        1 => w * x.cos(),
        2 => -w * x.sin(),
        _ => -w * x.cos(),
    }
}

/// The program and frame count for sequence `index` of `family`.
pub fn sequence_program(spec: &GeneratorSpec, family: usize, index: usize, seed: u64) -> (MotionProgram, usize) {
    let global = (family * spec.sequences_per_family + index) as u64;
    let mut r = rng::stream(seed, global);
    let n = r.gen_range(spec.min_frames..=spec.max_frames);
    (MotionProgram::sample(&spec.families[family], &mut r), n)
}

/// Builds `sequences_per_family` clips for each family.
///
/// Sequence `i` of family `f` draws from its own ChaCha stream, so output is
/// identical regardless of generation order. Features are rounded to single
/// precision so that the dataset survives a trip through motion files
/// unchanged.
pub fn generate_synthetic_dataset(spec: &GeneratorSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let vocab = spec.vocab()?;
    let mut motions = Vec::with_capacity(spec.families.len() * spec.sequences_per_family);
    let mut conditions = Vec::with_capacity(motions.capacity());
    for f in 0..spec.families.len() {
        for i in 0..spec.sequences_per_family {
            let (program, n) = sequence_program(spec, f, i, seed);
            let threshold = spec.contact_threshold * spec.fps;
            motions.push(program.render(n, spec.fps, threshold)?.quantized());
            conditions.push(ConditionId(f));
        }
    }
    Ok(Dataset {
        motions,
        conditions,
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::jitter::{jitter, JitterOrder};

    fn one_family(kind: FamilyKind, n: usize) -> GeneratorSpec {
        GeneratorSpec {
            families: vec![FamilySpec::new(kind)],
            sequences_per_family: n,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn reconstructed_world_positions_follow_the_program() {
        let spec = GeneratorSpec::default();
        for family in [1, 2] {
            let (program, n) = sequence_program(&spec, family, 0, 5);
            let m = program.render(n, spec.fps, spec.contact_threshold * spec.fps).unwrap();
            let world = m.global_joint_positions();
            for k in [0, n / 2, n - 1] {
                let t = k as f64 / spec.fps;
                for j in 0..program.local_joint_count() {
                    let want = program.global_position(j, t);
                    let got = world[k][j + 1];
                    for a in 0..3 {
                        // Left-rectangle integration of the root path.
                        assert!((got[a] - want[a]).abs() < 0.05, "family {family} frame {k} joint {j}: {got:?} vs {want:?}");
                    }
                }
            }
            if family == 1 {
                assert!(world.windows(2).all(|w| w[1][0][2] > w[0][0][2]));
            }
        }
    }

    #[test]
    fn stand_still_positions_are_constant() {
        let d = generate_synthetic_dataset(&one_family(FamilyKind::StandStill, 5), 3).unwrap();
        for m in &d.motions {
            let first: Vec<f64> = m.slice(0, FeatureSlice::JointPositions).to_vec();
            for k in 1..m.frame_count() {
                assert_eq!(m.slice(k, FeatureSlice::JointPositions), &first[..]);
            }
            assert!(m.frames().as_slice().iter().all(|v| v.is_finite()));
            assert!((0..m.frame_count()).all(|k| m.slice(k, FeatureSlice::FootContacts) == [1.0; 4]));
        }
    }

    #[test]
    fn straight_walk_root_velocity_is_constant() {
        let spec = one_family(FamilyKind::StraightWalk, 4);
        let d = generate_synthetic_dataset(&spec, 11).unwrap();
        for m in &d.motions {
            let l = m.layout();
            let v0 = m.frames().row(0)[l.root_xz()].to_vec();
            assert_eq!(v0[0], 0.0);
            assert!(v0[1] >= 1.0 - 1e-6 && v0[1] <= 1.2 + 1e-6);
            for k in 0..m.frame_count() {
                assert_eq!(&m.frames().row(k)[l.root_xz()], &v0[..]);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec {
            sequences_per_family: 3,
            ..GeneratorSpec::default()
        };
        let a = generate_synthetic_dataset(&spec, 42).unwrap();
        let b = generate_synthetic_dataset(&spec, 42).unwrap();
        let c = generate_synthetic_dataset(&spec, 43).unwrap();
        assert_eq!(a.motions, b.motions);
        assert_eq!(a.conditions, b.conditions);
        assert_ne!(a.motions, c.motions);
        for m in &a.motions {
            assert!((40..=196).contains(&m.frame_count()));
            assert_eq!(m.layout().feature_dim(), 83);
        }
    }

    #[test]
    fn walking_feet_alternate_contact() {
        let d = generate_synthetic_dataset(&one_family(FamilyKind::StraightWalk, 2), 5).unwrap();
        let m = &d.motions[0];
        let col: Vec<f64> = (0..m.frame_count())
            .map(|k| m.slice(k, FeatureSlice::FootContacts)[0])
            .collect();
        assert!(col.contains(&1.0) && col.contains(&0.0));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = GeneratorSpec::default();
        s.families.clear();
        assert!(generate_synthetic_dataset(&s, 0).is_err());
        let s = GeneratorSpec {
            fps: 0.0,
            ..GeneratorSpec::default()
        };
        assert!(generate_synthetic_dataset(&s, 0).is_err());
        let s = GeneratorSpec {
            fps: -5.0,
            ..GeneratorSpec::default()
        };
        assert!(generate_synthetic_dataset(&s, 0).is_err());
    }

    #[test]
    fn discrete_jerk_converges_to_closed_form() {
        for kind in [FamilyKind::StraightWalk, FamilyKind::CircularWalk, FamilyKind::Wave] {
            let spec = one_family(kind, 1);
            let (program, _) = sequence_program(&spec, 0, 0, 9);
            let duration = 4.0;
            let mut errors = Vec::new();
            for fps in [20.0, 40.0, 80.0] {
                let n = (duration * fps) as usize;
                let m = program.render(n, fps, 0.4).unwrap();
                let discrete = jitter(&m, JitterOrder::Jerk).unwrap();
                let exact = program.analytic_jitter(3, n, fps);
                errors.push((discrete - exact).abs() / exact);
            }
            assert!(errors[0] > errors[1] && errors[1] > errors[2], "{kind:?}: {errors:?}");
            assert!(errors[2] < 0.01, "{kind:?}: {errors:?}");
        }
    }
}
