//! Gradient ascent pulse engineering on piecewise-constant controls.
//!
//! The figure of merit is written as `Phi = |Tr(W U)|^2 / r^2` with a fixed
//! weight matrix `W`:
//!
//! * unitary on a subspace `P`: `W = P U_t^dag`, `r = rank(P)`
//! * state transfer `|s> -> |t>`: `W = |s><t|`, `r = 1`
//!
//! Slice derivatives are exact. With `H_j = V diag(l) V^dag`,
//! `dU_j/du_k = V (G o V^dag H_k V) V^dag` where
//! `G_ab = -i dt exp(-i dt (l_a + l_b) / 2) sinc(dt (l_a - l_b) / 2)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::{
    AmplitudeCaps, Channel, ControlSet, ControlSystem, FrameSpec, HamiltonianError, StaticParams,
    N_CHANNELS,
};
use crate::hilbert::{CMatrix, CVector, HilbertError, Operator, C64, JOINT_DIM, UNITARY_TOL};

#[derive(Debug, Error)]
pub enum GrapeError {
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("malformed pulse file: {0}")]
    PulseFormat(String),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    FullUnitary,
    SubspaceUnitary,
    StateTransfer,
}

/// What a pulse should accomplish.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    kind: TargetKind,
    weight: CMatrix,
    rank: f64,
}

impl TargetSpec {
    pub fn full_unitary(target: &Operator) -> Result<Self, GrapeError> {
        if target.dim() != JOINT_DIM || !target.is_unitary() {
            return Err(GrapeError::InvalidTarget("target is not a 9x9 unitary".into()));
        }
        Ok(Self {
            kind: TargetKind::FullUnitary,
            weight: target.adjoint().into_matrix(),
            rank: JOINT_DIM as f64,
        })
    }

    /// `target` only matters on the range of `projector`, where it must act unitarily.
    pub fn subspace_unitary(target: &Operator, projector: &Operator) -> Result<Self, GrapeError> {
        if target.dim() != JOINT_DIM || projector.dim() != JOINT_DIM {
            return Err(GrapeError::InvalidTarget("dimension mismatch".into()));
        }
        let p = projector.matrix();
        let idem = (p * p - p).camax();
        if idem > 1e-12 || projector.hermiticity_error() > 1e-12 {
            return Err(GrapeError::InvalidTarget(
                "projector is not a Hermitian idempotent".into(),
            ));
        }
        let rank = projector.trace().re.round();
        if rank < 1.0 {
            return Err(GrapeError::InvalidTarget("projector has rank zero".into()));
        }
        let t = target.matrix();
        let restricted = p * t * p;
        let err = (restricted.adjoint() * &restricted - p).camax();
        if err > UNITARY_TOL {
            return Err(GrapeError::InvalidTarget(format!(
                "target is not unitary on the subspace (error {err:.2e})"
            )));
        }
        Ok(Self {
            kind: TargetKind::SubspaceUnitary,
            weight: p * t.adjoint(),
            rank,
        })
    }

    pub fn state_transfer(start: &CVector, goal: &CVector) -> Result<Self, GrapeError> {
        if start.len() != JOINT_DIM || goal.len() != JOINT_DIM {
            return Err(GrapeError::InvalidTarget("state dimension mismatch".into()));
        }
        for v in [start, goal] {
            if (v.norm() - 1.0).abs() > 1e-10 {
                return Err(GrapeError::InvalidTarget("states must be normalized".into()));
            }
        }
        Ok(Self {
            kind: TargetKind::StateTransfer,
            weight: start * goal.adjoint(),
            rank: 1.0,
        })
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    /// Overlap `Tr(W U)`; its squared modulus over `rank^2` is the fidelity.
    pub fn overlap(&self, u: &Operator) -> C64 {
        (&self.weight * u.matrix()).trace()
    }

    pub fn fidelity_of(&self, u: &Operator) -> f64 {
        (self.overlap(u).norm_sqr() / (self.rank * self.rank)).clamp(0.0, 1.0)
    }
}

pub fn pulse_fidelity(
    cs: &ControlSet,
    t: &TargetSpec,
    p: &StaticParams,
    f: &FrameSpec,
) -> Result<f64, GrapeError> {
    let u = ControlSystem::new(p, f).propagate(cs)?;
    Ok(t.fidelity_of(&u))
}

struct SliceEigen {
    vals: Vec<f64>,
    vecs: CMatrix,
    u: CMatrix,
}

fn slice_eigen(sys: &ControlSystem, amps: &[f64; N_CHANNELS], dt: f64) -> Result<SliceEigen, GrapeError> {
    let (vals, vecs) = sys.slice_hamiltonian(amps).hermitian_eigen()?;
    let n = vals.len();
    let scaled = CMatrix::from_fn(n, n, |i, j| vecs[(i, j)] * C64::from_polar(1.0, -vals[j] * dt));
    let u = scaled * vecs.adjoint();
    Ok(SliceEigen { vals, vecs, u })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Fidelity and its exact gradient with respect to every amplitude.
pub fn fidelity_and_gradient(
    sys: &ControlSystem,
    cs: &ControlSet,
    t: &TargetSpec,
) -> Result<(f64, Vec<[f64; N_CHANNELS]>), GrapeError> {
    let n = cs.n_slices();
    let dt = cs.dt;
    let eig = cs
        .slices
        .iter()
        .map(|row| slice_eigen(sys, row, dt))
        .collect::<Result<Vec<_>, _>>()?;

    // forward[j] = U_j ... U_1, forward[0] = I
    let mut forward = Vec::with_capacity(n + 1);
    forward.push(CMatrix::identity(JOINT_DIM, JOINT_DIM));
    for e in &eig {
        let next = &e.u * forward.last().expect("non-empty");
        forward.push(next);
    }
    let total = Operator::new(forward[n].clone())?;
    let g = t.overlap(&total);
    let norm = t.rank * t.rank;
    let phi = (g.norm_sqr() / norm).clamp(0.0, 1.0);

    let mut grad = vec![[0.0; N_CHANNELS]; n];
    // back = W U_N ... U_{j+1}
    let mut back = t.weight.clone();
    for j in (0..n).rev() {
        let e = &eig[j];
        // d Tr(W B U_j F) = Tr(F W B dU_j)
        let x = e.vecs.adjoint() * (&forward[j] * &back) * &e.vecs;
        let gamma = CMatrix::from_fn(JOINT_DIM, JOINT_DIM, |a, b| {
            let (la, lb) = (e.vals[a], e.vals[b]);
            C64::new(0.0, -dt)
                * C64::from_polar(1.0, -dt * (la + lb) / 2.0)
                * sinc(dt * (la - lb) / 2.0)
        });
        // weighted[a][b] = Gamma_ab X_ba
        let weighted = CMatrix::from_fn(JOINT_DIM, JOINT_DIM, |a, b| gamma[(a, b)] * x[(b, a)]);
        for (k, h) in sys.generators.iter().enumerate() {
            let hk = e.vecs.adjoint() * h.matrix() * &e.vecs;
            let dg: C64 = hk.component_mul(&weighted).sum();
            grad[j][k] = 2.0 * (g.conj() * dg).re / norm;
        }
        back = &back * &e.u;
    }
    Ok((phi, grad))
}

/// `dPhi/du_k(j)` for all channels and slices, rad^-1 s.
pub fn pulse_gradient(
    cs: &ControlSet,
    t: &TargetSpec,
    p: &StaticParams,
    f: &FrameSpec,
) -> Result<Vec<[f64; N_CHANNELS]>, GrapeError> {
    Ok(fidelity_and_gradient(&ControlSystem::new(p, f), cs, t)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub max_iters: usize,
    /// Initial step as a fraction of the amplitude cap.
    pub step_init: f64,
    /// Smallest step tried before declaring a stall.
    pub step_floor: f64,
    pub fid_goal: f64,
    /// Max-norm threshold on the gradient in cap-scaled variables.
    pub grad_tol: f64,
    pub caps: AmplitudeCaps,
    pub penalty_weight: f64,
    /// Channels the optimizer may move; the rest keep their initial values.
    pub channel_mask: [bool; N_CHANNELS],
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step_init: 0.05,
            step_floor: 1e-9,
            fid_goal: 0.999,
            grad_tol: 1e-9,
            caps: AmplitudeCaps::default(),
            penalty_weight: 0.0,
            channel_mask: [true; N_CHANNELS],
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<(), GrapeError> {
        let bad = |m: &str| Err(GrapeError::InvalidConfig(m.into()));
        if !(self.fid_goal > 0.0 && self.fid_goal <= 1.0) {
            return bad("fid_goal must lie in (0, 1]");
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return bad("step_init must be positive");
        }
        if !(self.step_floor > 0.0 && self.step_floor <= self.step_init) {
            return bad("step_floor must be positive and at most step_init");
        }
        if self.grad_tol.is_nan() || self.grad_tol < 0.0 {
            return bad("grad_tol must be non-negative");
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return bad("penalty_weight must be non-negative");
        }
        if !(self.caps.mw > 0.0 && self.caps.rf > 0.0) {
            return bad("amplitude caps must be positive");
        }
        Ok(())
    }

    /// Only the channels of one band are free.
    pub fn only_band(mut self, band: crate::hamiltonian::Band) -> Self {
        for ch in Channel::ALL {
            self.channel_mask[ch.index()] = ch.band == band;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GoalReached,
    GradTol,
    MaxIters,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub controls: ControlSet,
    /// Objective after every accepted iteration, starting with the initial guess.
    pub trace: Vec<f64>,
    pub fidelity: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

impl OptResult {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::GoalReached
    }
}

struct Eval {
    phi: f64,
    objective: f64,
    grad_x: Vec<[f64; N_CHANNELS]>,
}

struct Optimizer<'a> {
    sys: ControlSystem,
    target: &'a TargetSpec,
    cfg: &'a OptConfig,
    caps: [f64; N_CHANNELS],
}

impl Optimizer<'_> {
    fn evaluate(&self, cs: &ControlSet) -> Result<Eval, GrapeError> {
        let (phi, grad) = fidelity_and_gradient(&self.sys, cs, self.target)?;
        let knobs = (cs.n_slices() * N_CHANNELS).max(1) as f64;
        let w = self.cfg.penalty_weight;
        let mut penalty = 0.0;
        let grad_x = grad
            .iter()
            .zip(&cs.slices)
            .map(|(g, row)| {
                let mut out = [0.0; N_CHANNELS];
                for k in 0..N_CHANNELS {
                    if !self.cfg.channel_mask[k] {
                        continue;
                    }
                    let x = row[k] / self.caps[k];
                    penalty += x * x;
                    out[k] = g[k] * self.caps[k] - 2.0 * w * x / knobs;
                }
                out
            })
            .collect();
        Ok(Eval {
            phi,
            objective: phi - w * penalty / knobs,
            grad_x,
        })
    }

    fn step(&self, cs: &ControlSet, grad_x: &[[f64; N_CHANNELS]], scale: f64, alpha: f64) -> ControlSet {
        let mut next = cs.clone();
        for (row, g) in next.slices.iter_mut().zip(grad_x) {
            for k in 0..N_CHANNELS {
                if self.cfg.channel_mask[k] {
                    let cap = self.caps[k];
                    row[k] = (row[k] + alpha * cap * g[k] / scale).clamp(-cap, cap);
                }
            }
        }
        next
    }
}

fn max_norm(g: &[[f64; N_CHANNELS]]) -> f64 {
    g.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

/// Projected gradient ascent in cap-normalized amplitudes with a
/// backtracking line search. The returned trace never decreases.
pub fn optimize(
    cs0: &ControlSet,
    target: &TargetSpec,
    cfg: &OptConfig,
    p: &StaticParams,
    f: &FrameSpec,
) -> Result<OptResult, GrapeError> {
    cfg.validate()?;
    cs0.validate(&cfg.caps)?;
    let mut caps = [0.0; N_CHANNELS];
    for ch in Channel::ALL {
        caps[ch.index()] = cfg.caps.for_channel(ch);
    }
    let opt = Optimizer {
        sys: ControlSystem::new(p, f),
        target,
        cfg,
        caps,
    };

    let mut cs = cs0.clone();
    let mut cur = opt.evaluate(&cs)?;
    let mut trace = vec![cur.objective];
    let mut alpha = cfg.step_init;
    let mut iterations = 0;

    let stop = loop {
        if cur.phi >= cfg.fid_goal {
            break StopReason::GoalReached;
        }
        let gnorm = max_norm(&cur.grad_x);
        if gnorm <= cfg.grad_tol {
            break StopReason::GradTol;
        }
        if iterations >= cfg.max_iters {
            break StopReason::MaxIters;
        }

        let mut accepted = None;
        while alpha >= cfg.step_floor {
            let trial = opt.step(&cs, &cur.grad_x, gnorm, alpha);
            let ev = opt.evaluate(&trial)?;
            if ev.objective > cur.objective {
                let bigger = opt.step(&cs, &cur.grad_x, gnorm, 2.0 * alpha);
                let ev2 = opt.evaluate(&bigger)?;
                if ev2.objective >= ev.objective {
                    alpha *= 2.0;
                    accepted = Some((bigger, ev2));
                } else {
                    accepted = Some((trial, ev));
                }
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, ev)) = accepted else {
            break StopReason::Stalled;
        };
        alpha = alpha.min(1.0);
        cs = next;
        cur = ev;
        trace.push(cur.objective);
        iterations += 1;
    };

    Ok(OptResult {
        controls: cs,
        trace,
        fidelity: cur.phi,
        iterations,
        stop,
    })
}

/// On-disk pulse representation; amplitudes in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseFile {
    pub dt: f64,
    pub n_slices: usize,
    pub channels: Vec<ChannelTrack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelTrack {
    pub name: String,
    pub amplitudes: Vec<f64>,
}

impl PulseFile {
    pub fn from_controls(cs: &ControlSet) -> Self {
        Self {
            dt: cs.dt,
            n_slices: cs.n_slices(),
            channels: Channel::ALL
                .iter()
                .map(|&ch| ChannelTrack {
                    name: ch.name().to_string(),
                    amplitudes: cs.track(ch),
                })
                .collect(),
        }
    }

    /// Missing channels are treated as zero.
    pub fn to_controls(&self) -> Result<ControlSet, GrapeError> {
        let mut cs = ControlSet::zeros(self.n_slices, self.dt);
        let mut seen = [false; N_CHANNELS];
        for track in &self.channels {
            let ch = Channel::from_name(&track.name)
                .ok_or_else(|| GrapeError::PulseFormat(format!("unknown channel {}", track.name)))?;
            if std::mem::replace(&mut seen[ch.index()], true) {
                return Err(GrapeError::PulseFormat(format!("duplicate channel {}", track.name)));
            }
            if track.amplitudes.len() != self.n_slices {
                return Err(GrapeError::PulseFormat(format!(
                    "channel {} has {} samples, expected {}",
                    track.name,
                    track.amplitudes.len(),
                    self.n_slices
                )));
            }
            for (row, &v) in cs.slices.iter_mut().zip(&track.amplitudes) {
                row[ch.index()] = v;
            }
        }
        Ok(cs)
    }

    pub fn to_json(&self) -> Result<String, GrapeError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, GrapeError> {
        Ok(serde_json::from_str(s)?)
    }
}
