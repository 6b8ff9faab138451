//! Holonomic gates through the `|0>` ancilla and the circuit stages built
//! from them: Bell preparation, CNOT, the shelved nitrogen Hadamard, and
//! measurement pre-rotations.
//!
//! Every stage carries an ideal 9x9 unitary and a list of pulse segments.
//! Each segment is a single-band GRAPE problem with its own ideal and the
//! projector on which that ideal is enforced.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grape::{optimize, GrapeError, OptConfig, PulseFile, StopReason, TargetSpec};
use crate::hamiltonian::{
    rotating_hamiltonian, tone_controls, Band, ControlSet, ControlSystem, FrameSpec,
    HamiltonianError, Polarization, StaticParams, Tone,
};
use crate::hilbert::{
    c, embed, ket_from, logical_projector, BasisLabel, CMatrix,
    CVector, Level, Operator, QuantumState, Slot, C64, JOINT_DIM, LOGICAL_INDICES, QUTRIT_DIM,
};

/// Minimum subspace fidelity accepted from pulse synthesis, per segment.
pub const GATE_FIDELITY_FLOOR: f64 = 0.99;

pub const MW_DURATION: f64 = 2e-6;
pub const RF_DURATION: f64 = 500e-6;
pub const DEFAULT_SLICES: usize = 100;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("stage {0} has no synthesized pulses")]
    MissingPulse(String),
    #[error("stage {stage} segment {segment}: best fidelity {best:.6} below goal {goal}")]
    GoalNotMet {
        stage: String,
        segment: usize,
        best: f64,
        goal: f64,
    },
    #[error("{0} is not a logical computational basis state")]
    NotLogical(BasisLabel),
    #[error(transparent)]
    Grape(#[from] GrapeError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}

/// `|b> = cos(theta/2)|+1> + e^{i phi} sin(theta/2)|-1>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrightState {
    pub theta: f64,
    pub phi: f64,
}

impl BrightState {
    /// Logical X: `|b> = (|+1> - |-1>)/sqrt 2`.
    pub const X: BrightState = BrightState {
        theta: PI / 2.0,
        phi: PI,
    };
    pub const HADAMARD: BrightState = BrightState {
        theta: 3.0 * PI / 4.0,
        phi: PI,
    };
    /// Reflection `(Y + Z)/sqrt 2`, which rotates the Y basis onto Z.
    pub const Y_TO_Z: BrightState = BrightState {
        theta: 3.0 * PI / 4.0,
        phi: 3.0 * PI / 2.0,
    };

    pub fn new(theta: f64, phi: f64) -> Self {
        Self {
            theta: theta.clamp(0.0, PI),
            phi: phi.rem_euclid(2.0 * PI),
        }
    }

    /// Amplitudes on `(|+1>, |-1>)`.
    pub fn amplitudes(&self) -> (C64, C64) {
        let (s, co) = (self.theta / 2.0).sin_cos();
        (c(co, 0.0), C64::from_polar(s, self.phi))
    }

    pub fn dark_amplitudes(&self) -> (C64, C64) {
        let (bp, bm) = self.amplitudes();
        (-bm.conj(), bp.conj())
    }

    fn qutrit(amps: (C64, C64)) -> CVector {
        CVector::from_vec(vec![amps.0, c(0.0, 0.0), amps.1])
    }

    pub fn ket(&self) -> CVector {
        Self::qutrit(self.amplitudes())
    }

    pub fn dark_ket(&self) -> CVector {
        Self::qutrit(self.dark_amplitudes())
    }

    /// `I - 2|b><b|` on the logical pair.
    pub fn logical_reflection(&self) -> CMatrix {
        let (bp, bm) = self.amplitudes();
        let b = nalgebra::Vector2::new(bp, bm);
        CMatrix::identity(2, 2) - CMatrix::from_column_slice(2, 2, (b * b.adjoint() * c(2.0, 0.0)).as_slice())
    }
}

/// Single-qutrit 2pi-cycle unitary: `|0> -> -|0>`, `|b> -> -|b>`, `|d> -> |d>`.
pub fn qutrit_reflection(b: BrightState) -> Operator {
    let bk = b.ket();
    let zero = crate::hilbert::basis_ket(QUTRIT_DIM, Level::Zero.ord());
    let m = CMatrix::identity(QUTRIT_DIM, QUTRIT_DIM)
        - (&bk * bk.adjoint() + &zero * zero.adjoint()) * c(2.0, 0.0);
    Operator::new(m).expect("3x3")
}

/// Reflection on one spin, identity on the other.
pub fn holonomy_reflection(b: BrightState, spin: Slot) -> Operator {
    embed(&qutrit_reflection(b), spin).expect("qutrit operator")
}

/// Applies `op` to one spin only while the other spin sits in `control`.
pub fn conditional(op: &Operator, spin: Slot, control: Level) -> Operator {
    let other = match spin {
        Slot::Electron => Slot::Nitrogen,
        Slot::Nitrogen => Slot::Electron,
    };
    let pc = embed(
        &Operator::projector(&[control.ord()], QUTRIT_DIM),
        other,
    )
    .expect("qutrit projector");
    let lifted = embed(op, spin).expect("qutrit operator");
    let rest = &Operator::identity(JOINT_DIM) - &pc;
    &(&lifted * &pc) + &rest
}

/// Transfer between orthonormal `a` and `b`: `|a> -> |b>`, `|b> -> -|a>`,
/// identity on their complement.
pub fn transfer(a: &CVector, b: &CVector) -> Operator {
    let n = a.len();
    let m = CMatrix::identity(n, n) - a * a.adjoint() - b * b.adjoint() + b * a.adjoint()
        - a * b.adjoint();
    Operator::new(m).expect("qutrit or joint dimension")
}

fn label(ms: Level, mi: Level) -> BasisLabel {
    BasisLabel::new(ms, mi)
}

/// X on the electron logical qubit when `m_I = -1`; identity everywhere else.
pub fn cnot_ideal() -> Operator {
    let mut m = CMatrix::identity(JOINT_DIM, JOINT_DIM);
    m.swap_rows(
        label(Level::Plus, Level::Minus).index(),
        label(Level::Minus, Level::Minus).index(),
    );
    Operator::new(m).expect("9x9")
}

/// Bell states in the order they are interrogated by the measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bell {
    #[serde(rename = "phi+")]
    PhiPlus,
    #[serde(rename = "psi+")]
    PsiPlus,
    #[serde(rename = "psi-")]
    PsiMinus,
    #[serde(rename = "phi-")]
    PhiMinus,
}

impl Bell {
    pub const ALL: [Bell; 4] = [Bell::PhiPlus, Bell::PsiPlus, Bell::PsiMinus, Bell::PhiMinus];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Bell::PhiPlus => "phi+",
            Bell::PsiPlus => "psi+",
            Bell::PsiMinus => "psi-",
            Bell::PhiMinus => "phi-",
        }
    }

    pub fn from_name(s: &str) -> Option<Bell> {
        Bell::ALL.into_iter().find(|b| b.name() == s)
    }

    pub fn ket(self) -> CVector {
        let r = c(FRAC_1_SQRT_2, 0.0);
        let (a, b, sign) = match self {
            Bell::PhiPlus => (label(Level::Plus, Level::Plus), label(Level::Minus, Level::Minus), 1.0),
            Bell::PhiMinus => (label(Level::Plus, Level::Plus), label(Level::Minus, Level::Minus), -1.0),
            Bell::PsiPlus => (label(Level::Plus, Level::Minus), label(Level::Minus, Level::Plus), 1.0),
            Bell::PsiMinus => (label(Level::Plus, Level::Minus), label(Level::Minus, Level::Plus), -1.0),
        };
        ket_from(&[(a, r), (b, r * sign)])
    }

    /// Computational basis state this Bell state is disentangled into.
    pub fn readout_basis(self) -> BasisLabel {
        match self {
            Bell::PhiPlus => label(Level::Plus, Level::Plus),
            Bell::PsiPlus => label(Level::Minus, Level::Plus),
            Bell::PsiMinus => label(Level::Minus, Level::Minus),
            Bell::PhiMinus => label(Level::Plus, Level::Minus),
        }
    }
}

impl fmt::Display for Bell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Prep,
    Cnot,
    HadamardN,
    MapToReadout,
    Reinit,
    PreRotation,
}

/// One single-band pulse problem inside a stage.
#[derive(Debug, Clone)]
pub struct Segment {
    pub band: Band,
    pub ideal: Operator,
    pub projector: Operator,
    pub duration: f64,
    pub n_slices: usize,
    /// Tones sampled to seed the optimizer.
    pub seed: Vec<Tone>,
}

/// Free evolution `exp(-i H_rot t)` under the rotating-frame drift.
pub fn drift_propagator(p: &StaticParams, f: &FrameSpec, t: f64) -> Operator {
    let h = rotating_hamiltonian(p, f);
    let diag: Vec<C64> = (0..JOINT_DIM)
        .map(|i| C64::from_polar(1.0, -h.matrix()[(i, i)].re * t))
        .collect();
    Operator::new(CMatrix::from_diagonal(&CVector::from_vec(diag))).expect("9x9")
}

impl Segment {
    /// Gate ideals live in the interaction frame of the drift, so the pulse
    /// must produce `exp(-i H_rot T) * ideal` in the rotating frame.
    pub fn target(&self, p: &StaticParams, f: &FrameSpec) -> Result<TargetSpec, GrapeError> {
        let lab = &drift_propagator(p, f, self.duration) * &self.ideal;
        TargetSpec::subspace_unitary(&lab, &self.projector)
    }

    pub fn seed_controls(&self) -> ControlSet {
        tone_controls(&self.seed, self.n_slices, self.duration / self.n_slices as f64)
    }
}

#[derive(Debug, Clone)]
pub struct GateStage {
    pub kind: StageKind,
    pub name: String,
    pub ideal: Operator,
    /// Subspace on which pulse realizations are compared to `ideal`.
    pub projector: Operator,
    pub segments: Vec<Segment>,
    pub pulses: Option<Vec<ControlSet>>,
}

impl GateStage {
    fn from_segments(kind: StageKind, name: impl Into<String>, projector: Operator, segments: Vec<Segment>) -> Self {
        let ideal = segments
            .iter()
            .fold(Operator::identity(JOINT_DIM), |acc, s| &s.ideal * &acc);
        Self {
            kind,
            name: name.into(),
            ideal,
            projector,
            segments,
            pulses: None,
        }
    }

    pub fn is_synthesized(&self) -> bool {
        self.pulses.is_some()
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Via {
    Ideal,
    Pulse,
}

impl std::str::FromStr for Via {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ideal" => Ok(Via::Ideal),
            "pulse" => Ok(Via::Pulse),
            other => Err(format!("unknown mode {other:?} (expected ideal or pulse)")),
        }
    }
}

pub fn realize_stage(
    stage: &GateStage,
    via: Via,
    p: &StaticParams,
    f: &FrameSpec,
) -> Result<Operator, CircuitError> {
    match via {
        Via::Ideal => Ok(stage.ideal.clone()),
        Via::Pulse => {
            let pulses = stage
                .pulses
                .as_ref()
                .ok_or_else(|| CircuitError::MissingPulse(stage.name.clone()))?;
            let sys = ControlSystem::new(p, f);
            let mut u = Operator::identity(JOINT_DIM);
            for cs in pulses {
                let back = drift_propagator(p, f, cs.duration()).adjoint();
                u = &(&back * &sys.propagate(cs)?) * &u;
            }
            Ok(u)
        }
    }
}

/// `|Tr(P U_ideal^dag U P)|^2 / rank(P)^2` for a realized stage unitary.
/// With a rank-one `P` this is the transfer fidelity out of that state.
pub fn stage_fidelity(stage: &GateStage, u: &Operator) -> f64 {
    let p = stage.projector.matrix();
    let rank = stage.projector.trace().re;
    let overlap = (p * stage.ideal.matrix().adjoint() * u.matrix() * p).trace();
    (overlap.norm_sqr() / (rank * rank)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentReport {
    pub band: Band,
    pub fidelity: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Runs GRAPE on every segment of `stage`, seeded from its tones.
pub fn synthesize(
    stage: &GateStage,
    cfg: &OptConfig,
    p: &StaticParams,
    f: &FrameSpec,
) -> Result<(GateStage, Vec<SegmentReport>), CircuitError> {
    let mut pulses = Vec::with_capacity(stage.segments.len());
    let mut reports = Vec::with_capacity(stage.segments.len());
    for (i, seg) in stage.segments.iter().enumerate() {
        let target = seg.target(p, f)?;
        let seg_cfg = cfg.clone().only_band(seg.band);
        let mut cs0 = seg.seed_controls();
        let cap = cfg.caps.for_band(seg.band);
        for row in &mut cs0.slices {
            for v in row.iter_mut() {
                *v = v.clamp(-cap, cap);
            }
        }
        let res = optimize(&cs0, &target, &seg_cfg, p, f)?;
        if res.fidelity < GATE_FIDELITY_FLOOR.min(cfg.fid_goal) {
            return Err(CircuitError::GoalNotMet {
                stage: stage.name.clone(),
                segment: i,
                best: res.fidelity,
                goal: GATE_FIDELITY_FLOOR.min(cfg.fid_goal),
            });
        }
        reports.push(SegmentReport {
            band: seg.band,
            fidelity: res.fidelity,
            iterations: res.iterations,
            stop: res.stop,
        });
        pulses.push(res.controls);
    }
    let mut out = stage.clone();
    out.pulses = Some(pulses);
    Ok((out, reports))
}

/// Serializable form of a synthesized stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageFile {
    pub name: String,
    pub kind: StageKind,
    pub segments: Vec<SegmentFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentFile {
    pub band: Band,
    pub pulse: PulseFile,
}

impl StageFile {
    pub fn from_stage(stage: &GateStage) -> Result<Self, CircuitError> {
        let pulses = stage
            .pulses
            .as_ref()
            .ok_or_else(|| CircuitError::MissingPulse(stage.name.clone()))?;
        Ok(Self {
            name: stage.name.clone(),
            kind: stage.kind,
            segments: stage
                .segments
                .iter()
                .zip(pulses)
                .map(|(s, cs)| SegmentFile {
                    band: s.band,
                    pulse: PulseFile::from_controls(cs),
                })
                .collect(),
        })
    }
}

// Seeds. A tone on `|from> -> |to>` with detuning equal to the rotating-frame
// energy gap keeps the drive resonant with that line.

fn gap(p: &StaticParams, f: &FrameSpec, from: BasisLabel, to: BasisLabel) -> f64 {
    let h = rotating_hamiltonian(p, f);
    h.matrix()[(to.index(), to.index())].re - h.matrix()[(from.index(), from.index())].re
}

fn mw_tone(p: &StaticParams, f: &FrameSpec, s: Level, mi: Level, amplitude: C64) -> Tone {
    Tone {
        band: Band::Mw,
        pol: Polarization::for_level(s).expect("electron level +-1"),
        detuning: gap(p, f, label(Level::Zero, mi), label(s, mi)),
        amplitude,
    }
}

fn rf_tone(p: &StaticParams, f: &FrameSpec, ms: Level, m: Level, amplitude: C64) -> Tone {
    Tone {
        band: Band::Rf,
        pol: Polarization::for_level(m).expect("nuclear level +-1"),
        detuning: gap(p, f, label(ms, Level::Zero), label(ms, m)),
        amplitude,
    }
}

/// Amplitudes `(u_plus, u_minus)` whose bright state is `b` with Rabi frequency `omega`.
fn bright_drive(b: BrightState, omega: f64) -> (C64, C64) {
    let (bp, bm) = b.amplitudes();
    (bp * omega, bm * omega)
}

fn mw_segment(ideal: Operator, projector: Operator, seed: Vec<Tone>) -> Segment {
    Segment {
        band: Band::Mw,
        ideal,
        projector,
        duration: MW_DURATION,
        n_slices: DEFAULT_SLICES,
        seed,
    }
}

fn rf_segment(ideal: Operator, projector: Operator, seed: Vec<Tone>) -> Segment {
    Segment {
        band: Band::Rf,
        ideal,
        projector,
        duration: RF_DURATION,
        n_slices: DEFAULT_SLICES,
        seed,
    }
}

fn projector_of(labels: &[BasisLabel]) -> Operator {
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    Operator::projector(&idx, JOINT_DIM)
}

fn logical_labels() -> Vec<BasisLabel> {
    LOGICAL_INDICES
        .iter()
        .map(|&i| BasisLabel::from_index(i).expect("index in range"))
        .collect()
}

pub fn cnot_stage(p: &StaticParams, f: &FrameSpec) -> GateStage {
    // 2pi cycle through |0,-1> with bright state (|+1> - |-1>)/sqrt 2
    let omega = 2.0 * PI / MW_DURATION;
    let (up, um) = bright_drive(BrightState::X, omega);
    let seed = vec![
        mw_tone(p, f, Level::Plus, Level::Minus, up),
        mw_tone(p, f, Level::Minus, Level::Minus, um),
    ];
    let proj = logical_projector();
    GateStage::from_segments(
        StageKind::Cnot,
        "cnot",
        proj.clone(),
        vec![mw_segment(cnot_ideal(), proj, seed)],
    )
}

/// Electron shelving `|s> -> |0>` (unshelve when `inverse`), for every `m_I`.
fn shelve(s: Level, inverse: bool) -> Operator {
    let a = crate::hilbert::basis_ket(QUTRIT_DIM, s.ord());
    let z = crate::hilbert::basis_ket(QUTRIT_DIM, Level::Zero.ord());
    let t = if inverse { transfer(&z, &a) } else { transfer(&a, &z) };
    embed(&t, Slot::Electron).expect("qutrit operator")
}

/// Nitrogen reflection about `b` on both electron manifolds, implemented by
/// shelving each manifold into `m_s = 0` where the RF holonomy acts.
pub fn nitrogen_reflection_sequence(b: BrightState, p: &StaticParams, f: &FrameSpec, name: &str) -> GateStage {
    let nuclear_pm: Vec<BasisLabel> = Level::ALL
        .iter()
        .flat_map(|&ms| [label(ms, Level::Plus), label(ms, Level::Minus)])
        .collect();
    let seg_proj = projector_of(&nuclear_pm);
    let rf_ideal = conditional(&qutrit_reflection(b), Slot::Nitrogen, Level::Zero);
    let rf_omega = 2.0 * PI / RF_DURATION;
    let (up, um) = bright_drive(b, rf_omega);
    let rf_seed = vec![
        rf_tone(p, f, Level::Zero, Level::Plus, up),
        rf_tone(p, f, Level::Zero, Level::Minus, um),
    ];
    let shelf_omega = PI / MW_DURATION;

    let mut segments = Vec::new();
    for s in [Level::Plus, Level::Minus] {
        let mw_seed = |sign: f64| -> Vec<Tone> {
            [Level::Plus, Level::Minus]
                .iter()
                .map(|&mi| mw_tone(p, f, s, mi, c(0.0, sign * shelf_omega)))
                .collect()
        };
        segments.push(mw_segment(shelve(s, false), seg_proj.clone(), mw_seed(-1.0)));
        segments.push(rf_segment(rf_ideal.clone(), seg_proj.clone(), rf_seed.clone()));
        segments.push(mw_segment(shelve(s, true), seg_proj.clone(), mw_seed(1.0)));
    }
    let kind = if b == BrightState::HADAMARD {
        StageKind::HadamardN
    } else {
        StageKind::PreRotation
    };
    GateStage::from_segments(kind, name, logical_projector(), segments)
}

pub fn hadamard_n_sequence(p: &StaticParams, f: &FrameSpec) -> GateStage {
    nitrogen_reflection_sequence(BrightState::HADAMARD, p, f, "hadamard_n")
}

/// Electron reflection about `b` applied on every nuclear manifold.
pub fn electron_reflection_stage(b: BrightState, p: &StaticParams, f: &FrameSpec, name: &str) -> GateStage {
    let omega = 2.0 * PI / MW_DURATION;
    let (up, um) = bright_drive(b, omega);
    let seed = [Level::Plus, Level::Minus]
        .iter()
        .flat_map(|&mi| {
            [
                mw_tone(p, f, Level::Plus, mi, up),
                mw_tone(p, f, Level::Minus, mi, um),
            ]
        })
        .collect();
    let proj = logical_projector();
    GateStage::from_segments(
        StageKind::PreRotation,
        name,
        proj.clone(),
        vec![mw_segment(holonomy_reflection(b, Slot::Electron), proj, seed)],
    )
}

pub fn disentangle_ideal() -> Operator {
    let p = StaticParams::default();
    let f = FrameSpec::resonant(&p);
    &hadamard_n_sequence(&p, &f).ideal * &cnot_ideal()
}

/// CNOT followed by the nitrogen Hadamard.
pub fn disentangle_stages(p: &StaticParams, f: &FrameSpec) -> Vec<GateStage> {
    vec![cnot_stage(p, f), hadamard_n_sequence(p, f)]
}

fn bell_nuclear_superposition(which: Bell) -> BrightState {
    match which {
        Bell::PhiPlus | Bell::PsiPlus => BrightState::new(PI / 2.0, 0.0),
        Bell::PhiMinus | Bell::PsiMinus => BrightState::new(PI / 2.0, PI),
    }
}

/// Entangling stage from `|0,0>`: RF transfer `|0>_N -> (|+1> +- |-1>)/sqrt 2`,
/// then `m_I`-selective MW transfers out of `m_s = 0`.
pub fn prep_stage(which: Bell, p: &StaticParams, f: &FrameSpec) -> GateStage {
    let bn = bell_nuclear_superposition(which);
    let zero_n = crate::hilbert::basis_ket(QUTRIT_DIM, Level::Zero.ord());
    let rf_t = conditional(&transfer(&zero_n, &bn.ket()), Slot::Nitrogen, Level::Zero);
    let ms0: Vec<BasisLabel> = Level::ALL.iter().map(|&mi| label(Level::Zero, mi)).collect();
    let (bp, bm) = bn.amplitudes();
    let rf_omega = PI / RF_DURATION;
    let rf_seed = vec![
        rf_tone(p, f, Level::Zero, Level::Plus, c(0.0, rf_omega) * bp),
        rf_tone(p, f, Level::Zero, Level::Minus, c(0.0, rf_omega) * bm),
    ];

    // electron destination for m_I = +1 and m_I = -1
    let (dest_p, dest_m) = match which {
        Bell::PhiPlus | Bell::PhiMinus => (Level::Plus, Level::Minus),
        Bell::PsiPlus | Bell::PsiMinus => (Level::Minus, Level::Plus),
    };
    let mw_t = &transfer(
        &label(Level::Zero, Level::Plus).ket(),
        &label(dest_p, Level::Plus).ket(),
    ) * &transfer(
        &label(Level::Zero, Level::Minus).ket(),
        &label(dest_m, Level::Minus).ket(),
    );
    let mw_omega = PI / MW_DURATION;
    let mw_seed = vec![
        mw_tone(p, f, dest_p, Level::Plus, c(0.0, mw_omega)),
        mw_tone(p, f, dest_m, Level::Minus, c(0.0, mw_omega)),
    ];
    let mut mw_labels = logical_labels();
    mw_labels.extend([label(Level::Zero, Level::Plus), label(Level::Zero, Level::Minus)]);
    let mw_proj = projector_of(&mw_labels);
    let stage_proj = projector_of(&[label(Level::Zero, Level::Zero)]);
    GateStage::from_segments(
        StageKind::Prep,
        format!("prep_{}", which.name()),
        stage_proj,
        vec![
            rf_segment(rf_t, projector_of(&ms0), rf_seed),
            mw_segment(mw_t, mw_proj, mw_seed),
        ],
    )
}

pub fn prepare_bell(which: Bell) -> QuantumState {
    let p = StaticParams::default();
    let f = FrameSpec::resonant(&p);
    QuantumState::basis(label(Level::Zero, Level::Zero)).evolve(&prep_stage(which, &p, &f).ideal)
}

/// Moves logical basis `target` to `|0,0>` via `|s,m> -> |0,m>` (MW) and
/// `|0,m> -> |0,0>` (RF); the other logical states stay out of `m_s = 0`.
pub fn map_to_readout_stage(
    target: BasisLabel,
    p: &StaticParams,
    f: &FrameSpec,
) -> Result<GateStage, CircuitError> {
    if !target.is_logical() {
        return Err(CircuitError::NotLogical(target));
    }
    let (s, m) = (target.ms, target.mi);
    let mid = label(Level::Zero, m);
    let end = label(Level::Zero, Level::Zero);
    let mw_t = transfer(&target.ket(), &mid.ket());
    let rf_t = transfer(&mid.ket(), &end.ket());
    let mut mw_labels = logical_labels();
    mw_labels.push(mid);
    let mut rf_labels = mw_labels.clone();
    rf_labels.push(end);
    let mw_seed = vec![mw_tone(p, f, s, m, c(0.0, -PI / MW_DURATION))];
    let rf_seed = vec![rf_tone(p, f, Level::Zero, m, c(0.0, -PI / RF_DURATION))];
    Ok(GateStage::from_segments(
        StageKind::MapToReadout,
        format!("map_{}{}", sign_char(s), sign_char(m)),
        logical_projector(),
        vec![
            mw_segment(mw_t, projector_of(&mw_labels), mw_seed),
            rf_segment(rf_t, projector_of(&rf_labels), rf_seed),
        ],
    ))
}

fn sign_char(l: Level) -> char {
    match l {
        Level::Plus => 'p',
        Level::Zero => '0',
        Level::Minus => 'm',
    }
}

/// MW transfer `|+1,0> -> |0,0>` returning leaked readout population.
pub fn reinit_stage(p: &StaticParams, f: &FrameSpec) -> GateStage {
    let from = label(Level::Plus, Level::Zero);
    let to = label(Level::Zero, Level::Zero);
    let proj = projector_of(&[from, to]);
    let seed = vec![mw_tone(p, f, Level::Plus, Level::Zero, c(0.0, -PI / MW_DURATION))];
    GateStage::from_segments(
        StageKind::Reinit,
        "reinit",
        proj.clone(),
        vec![mw_segment(transfer(&from.ket(), &to.ket()), proj, seed)],
    )
}

/// Local Pauli measured on a logical qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    /// Reflection that rotates this Pauli's eigenbasis onto Z; `None` for Z.
    pub fn pre_rotation(self) -> Option<BrightState> {
        match self {
            Pauli::X => Some(BrightState::HADAMARD),
            Pauli::Y => Some(BrightState::Y_TO_Z),
            Pauli::Z => None,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Pauli::X => 'x',
            Pauli::Y => 'y',
            Pauli::Z => 'z',
        }
    }
}

/// Pre-rotation stages for measuring `pe` on the electron and `pn` on the nitrogen.
pub fn pre_rotation_stages(pe: Pauli, pn: Pauli, p: &StaticParams, f: &FrameSpec) -> Vec<GateStage> {
    let mut out = Vec::new();
    if let Some(b) = pe.pre_rotation() {
        out.push(electron_reflection_stage(b, p, f, &format!("pre_e_{}", pe.symbol())));
    }
    if let Some(b) = pn.pre_rotation() {
        out.push(nitrogen_reflection_sequence(b, p, f, &format!("pre_n_{}", pn.symbol())));
    }
    out
}

/// Every stage the measurement and tomography pipelines may use.
pub fn all_stages(p: &StaticParams, f: &FrameSpec) -> Vec<GateStage> {
    let mut stages: Vec<GateStage> = Bell::ALL.iter().map(|&b| prep_stage(b, p, f)).collect();
    stages.extend(disentangle_stages(p, f));
    for b in Bell::ALL {
        stages.push(map_to_readout_stage(b.readout_basis(), p, f).expect("logical basis"));
    }
    stages.push(reinit_stage(p, f));
    for pauli in [Pauli::X, Pauli::Y] {
        stages.extend(pre_rotation_stages(pauli, pauli, p, f));
    }
    stages
}

/// Per-segment optimizer reports of one named stage.
pub type StageReports = (String, Vec<SegmentReport>);

/// Named stages, optionally carrying synthesized pulses.
#[derive(Debug, Clone)]
pub struct StageLibrary {
    stages: Vec<GateStage>,
}

impl StageLibrary {
    pub fn ideal(p: &StaticParams, f: &FrameSpec) -> Self {
        Self {
            stages: all_stages(p, f),
        }
    }

    /// Synthesizes every stage in parallel; output order is fixed.
    pub fn synthesized(
        p: &StaticParams,
        f: &FrameSpec,
        cfg: &OptConfig,
    ) -> Result<(Self, Vec<StageReports>), CircuitError> {
        let results: Vec<_> = all_stages(p, f)
            .par_iter()
            .map(|s| synthesize(s, cfg, p, f))
            .collect::<Result<_, _>>()?;
        let mut stages = Vec::with_capacity(results.len());
        let mut reports = Vec::with_capacity(results.len());
        for (stage, rep) in results {
            reports.push((stage.name.clone(), rep));
            stages.push(stage);
        }
        Ok((Self { stages }, reports))
    }

    pub fn get(&self, name: &str) -> Option<&GateStage> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn stages(&self) -> &[GateStage] {
        &self.stages
    }
}
