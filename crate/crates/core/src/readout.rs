//! Photon-count readout of the `m_s = 0` manifold, the threshold cascade
//! that labels Bell states, its closed-form Poisson oracle, and two-qubit
//! state tomography over the logical subspace.
//!
//! Once a measurement lands in the bright branch the readout ancilla is
//! held: the remaining mapping stages are skipped, so every later
//! measurement of the same run sees the same bright population.

use nalgebra::{Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuits::{realize_stage, Bell, CircuitError, Pauli, StageLibrary, Via};
use crate::hamiltonian::{FrameSpec, StaticParams};
use crate::hilbert::{
    c, electron_manifold_projector, BasisLabel, CMatrix, CVector, Level, Operator, QuantumState,
    Slot, C64, JOINT_DIM, LOGICAL_INDICES, QUTRIT_DIM,
};

pub use crate::circuits::map_to_readout_stage as map_basis_to_readout;

#[derive(Debug, Error)]
pub enum ReadoutError {
    #[error("invalid readout parameter: {0}")]
    InvalidParams(String),
    #[error("{shots} shots per setting cannot resolve the outcome probabilities; need at least {required}")]
    InsufficientShots { shots: usize, required: usize },
    #[error("stage {0} missing from the library")]
    MissingStage(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutParams {
    /// Mean accumulated counts of one full bright measurement.
    pub lambda_bright: f64,
    pub lambda_dark: f64,
    pub n_reps_bsm: u32,
    pub n_reps_qst: u32,
    pub n_c: u32,
    /// Chance per measurement that bright population leaves `|0>_e`.
    pub p_leak: f64,
    /// Only the `|+1>_e` half of a leak is pumped back.
    pub recover_plus_only: bool,
    pub p_deph_n: f64,
    /// Label three dark reads as phi- without consulting the fourth.
    pub phi_minus_by_elimination: bool,
    /// Draw each sub-repetition separately instead of one accumulated count.
    pub sub_repetitions: bool,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        Self {
            lambda_bright: 1.8,
            lambda_dark: 0.3,
            n_reps_bsm: 25,
            n_reps_qst: 30,
            n_c: 1,
            p_leak: 0.1,
            recover_plus_only: true,
            p_deph_n: 0.0,
            phi_minus_by_elimination: false,
            sub_repetitions: false,
        }
    }
}

impl ReadoutParams {
    pub fn validate(&self) -> Result<(), ReadoutError> {
        let bad = |m: String| Err(ReadoutError::InvalidParams(m));
        if !(self.lambda_dark >= 0.0 && self.lambda_dark.is_finite()) {
            return bad(format!("lambda_dark = {} must be >= 0", self.lambda_dark));
        }
        if !(self.lambda_bright > self.lambda_dark && self.lambda_bright.is_finite()) {
            return bad(format!(
                "lambda_bright = {} must exceed lambda_dark = {}",
                self.lambda_bright, self.lambda_dark
            ));
        }
        for (name, v) in [("p_leak", self.p_leak), ("p_deph_n", self.p_deph_n)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        if self.n_c < 1 {
            return bad("n_c must be at least 1".into());
        }
        if self.n_reps_bsm < 1 || self.n_reps_qst < 1 {
            return bad("repetition counts must be at least 1".into());
        }
        Ok(())
    }

    /// Settings of one interrogation in the measurement loop.
    pub fn bsm_read(&self) -> ReadSettings {
        ReadSettings {
            lambda_bright: self.lambda_bright,
            lambda_dark: self.lambda_dark,
            n_reps: self.n_reps_bsm,
            p_lost: if self.recover_plus_only { self.p_leak / 2.0 } else { 0.0 },
            p_deph_n: self.p_deph_n,
            sub_repetitions: self.sub_repetitions,
        }
    }

    /// Tomography reads accumulate `n_reps_qst` repetitions and re-pump the
    /// electron optically, so leaked population is always recovered.
    pub fn qst_read(&self) -> ReadSettings {
        let scale = self.n_reps_qst as f64 / self.n_reps_bsm as f64;
        ReadSettings {
            lambda_bright: self.lambda_bright * scale,
            lambda_dark: self.lambda_dark * scale,
            n_reps: self.n_reps_qst,
            p_lost: 0.0,
            p_deph_n: self.p_deph_n,
            sub_repetitions: self.sub_repetitions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadSettings {
    pub lambda_bright: f64,
    pub lambda_dark: f64,
    pub n_reps: u32,
    /// Fraction of bright population left in `|-1>_e` after the read.
    pub p_lost: f64,
    pub p_deph_n: f64,
    pub sub_repetitions: bool,
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("finite positive mean").sample(rng) as u32
}

fn draw_counts<R: Rng + ?Sized>(lambda: f64, s: &ReadSettings, rng: &mut R) -> u32 {
    if s.sub_repetitions {
        let per = lambda / s.n_reps as f64;
        (0..s.n_reps).map(|_| poisson(per, rng)).sum()
    } else {
        poisson(lambda, rng)
    }
}

/// `|-1><0|` on the electron.
fn leak_operator() -> Operator {
    let mut m = CMatrix::zeros(QUTRIT_DIM, QUTRIT_DIM);
    m[(Level::Minus.ord(), Level::Zero.ord())] = c(1.0, 0.0);
    crate::hilbert::embed(&Operator::new(m).expect("3x3"), Slot::Electron).expect("qutrit")
}

fn leak_channel(rho: &CMatrix, p_lost: f64) -> CMatrix {
    if p_lost == 0.0 {
        return rho.clone();
    }
    let p0 = electron_manifold_projector(Level::Zero).into_matrix();
    let rest = CMatrix::identity(JOINT_DIM, JOINT_DIM) - &p0;
    let stay = rest + p0 * c((1.0 - p_lost).sqrt(), 0.0);
    let lost = leak_operator().into_matrix() * c(p_lost.sqrt(), 0.0);
    &stay * rho * stay.adjoint() + &lost * rho * lost.adjoint()
}

fn dephase_nitrogen(rho: &CMatrix, p: f64) -> CMatrix {
    if p == 0.0 {
        return rho.clone();
    }
    let mut out = rho * c(1.0 - p, 0.0);
    for i in 0..JOINT_DIM {
        for j in 0..JOINT_DIM {
            if i % QUTRIT_DIM == j % QUTRIT_DIM {
                out[(i, j)] += rho[(i, j)] * p;
            }
        }
    }
    out
}

/// One accumulated measurement: returns counts, the post-read state and
/// whether the bright branch was taken.
pub fn read_once<R: Rng + ?Sized>(
    state: &QuantumState,
    s: &ReadSettings,
    rng: &mut R,
) -> (u32, QuantumState, bool) {
    let p0 = electron_manifold_projector(Level::Zero);
    let pop = state.electron_population(Level::Zero).clamp(0.0, 1.0);
    let bright = rng.random::<f64>() < pop;
    let proj = if bright {
        p0
    } else {
        &Operator::identity(JOINT_DIM) - &p0
    };
    let lambda = if bright { s.lambda_bright } else { s.lambda_dark };
    let counts = draw_counts(lambda, s, rng);
    let projected = state
        .project(&proj)
        .map(|(_, st)| st)
        .unwrap_or_else(|| state.clone());
    let rho = dephase_nitrogen(&leak_channel(projected.rho(), s.p_lost), s.p_deph_n);
    let out = QuantumState::from_matrix(rho);
    (counts, out, bright)
}

pub fn single_shot<R: Rng + ?Sized>(
    state: &QuantumState,
    rp: &ReadoutParams,
    rng: &mut R,
) -> (u32, QuantumState) {
    let (n, st, _) = read_once(state, &rp.bsm_read(), rng);
    (n, st)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BsmLabel {
    Bell(Bell),
    Inconclusive,
}

impl BsmLabel {
    /// Label order used by probability vectors: four Bell states, then inconclusive.
    pub const ALL: [BsmLabel; 5] = [
        BsmLabel::Bell(Bell::PhiPlus),
        BsmLabel::Bell(Bell::PsiPlus),
        BsmLabel::Bell(Bell::PsiMinus),
        BsmLabel::Bell(Bell::PhiMinus),
        BsmLabel::Inconclusive,
    ];

    pub fn index(self) -> usize {
        match self {
            BsmLabel::Bell(b) => b.index(),
            BsmLabel::Inconclusive => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BsmLabel::Bell(b) => b.name(),
            BsmLabel::Inconclusive => "inconclusive",
        }
    }
}

impl From<BsmLabel> for String {
    fn from(l: BsmLabel) -> String {
        l.name().to_string()
    }
}

impl TryFrom<String> for BsmLabel {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        if s == "inconclusive" {
            return Ok(BsmLabel::Inconclusive);
        }
        Bell::from_name(&s)
            .map(BsmLabel::Bell)
            .ok_or_else(|| format!("unknown label {s}"))
    }
}

/// First-match threshold cascade over `(n1, n2, n3, n4)`.
pub fn classify(counts: [u32; 4], n_c: u32, phi_minus_by_elimination: bool) -> BsmLabel {
    for (k, &n) in counts.iter().enumerate().take(3) {
        if n >= n_c {
            return BsmLabel::Bell(Bell::ALL[k]);
        }
    }
    if phi_minus_by_elimination || counts[3] >= n_c {
        BsmLabel::Bell(Bell::PhiMinus)
    } else {
        BsmLabel::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsmOutcome {
    pub counts: [u32; 4],
    pub label: BsmLabel,
    /// Which interrogations took the bright branch.
    pub bright: [bool; 4],
}

/// Stage unitaries used by the measurement and tomography pipelines.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub via: Via,
    prep: Vec<Operator>,
    disentangle: Operator,
    maps: Vec<Operator>,
    pre_e: Vec<Option<Operator>>,
    pre_n: Vec<Option<Operator>>,
}

impl Pipeline {
    pub fn ideal() -> Self {
        let p = StaticParams::default();
        let f = FrameSpec::resonant(&p);
        Self::from_library(&StageLibrary::ideal(&p, &f), Via::Ideal, &p, &f)
            .expect("ideal stages are always available")
    }

    pub fn from_library(
        lib: &StageLibrary,
        via: Via,
        p: &StaticParams,
        f: &FrameSpec,
    ) -> Result<Self, ReadoutError> {
        let get = |name: &str| -> Result<Operator, ReadoutError> {
            let st = lib
                .get(name)
                .ok_or_else(|| ReadoutError::MissingStage(name.to_string()))?;
            Ok(realize_stage(st, via, p, f)?)
        };
        let prep = Bell::ALL
            .iter()
            .map(|b| get(&format!("prep_{}", b.name())))
            .collect::<Result<_, _>>()?;
        let disentangle = &get("hadamard_n")? * &get("cnot")?;
        let maps = Bell::ALL
            .iter()
            .map(|b| {
                let l = b.readout_basis();
                get(&format!("map_{}{}", sign(l.ms), sign(l.mi)))
            })
            .collect::<Result<_, _>>()?;
        let mut pre_e = Vec::new();
        let mut pre_n = Vec::new();
        for pauli in Pauli::ALL {
            if pauli == Pauli::Z {
                pre_e.push(None);
                pre_n.push(None);
            } else {
                let s = pauli.symbol();
                pre_e.push(Some(get(&format!("pre_e_{s}"))?));
                pre_n.push(Some(get(&format!("pre_n_{s}"))?));
            }
        }
        Ok(Self {
            via,
            prep,
            disentangle,
            maps,
            pre_e,
            pre_n,
        })
    }

    /// Bell state produced from `|0,0>` by the preparation stage.
    pub fn prepared(&self, which: Bell) -> QuantumState {
        QuantumState::basis(BasisLabel::new(Level::Zero, Level::Zero)).evolve(&self.prep[which.index()])
    }

    pub fn disentangle(&self) -> &Operator {
        &self.disentangle
    }

    /// Mapping stage for the `k`-th interrogated basis.
    pub fn map(&self, k: usize) -> &Operator {
        &self.maps[k]
    }

    /// Pre-rotation for the setting `(pe, pn)`; identity for `(Z, Z)`.
    pub fn pre_rotation(&self, pe: Pauli, pn: Pauli) -> Operator {
        let idx = |p: Pauli| Pauli::ALL.iter().position(|&q| q == p).expect("listed");
        let mut u = Operator::identity(JOINT_DIM);
        if let Some(r) = &self.pre_e[idx(pe)] {
            u = r * &u;
        }
        if let Some(r) = &self.pre_n[idx(pn)] {
            u = r * &u;
        }
        u
    }
}

fn sign(l: Level) -> char {
    match l {
        Level::Plus => 'p',
        Level::Zero => '0',
        Level::Minus => 'm',
    }
}

/// Sequential map-and-read over the four bases; a bright read holds the
/// ancilla for the rest of the run.
fn interrogate<R: Rng + ?Sized>(
    state: &QuantumState,
    s: &ReadSettings,
    pipe: &Pipeline,
    rng: &mut R,
) -> ([u32; 4], [bool; 4]) {
    let mut st = state.clone();
    let mut counts = [0; 4];
    let mut bright = [false; 4];
    let mut held = false;
    for k in 0..4 {
        if !held {
            st = st.evolve(pipe.map(k));
        }
        let (n, next, b) = read_once(&st, s, rng);
        counts[k] = n;
        bright[k] = b;
        held |= b;
        st = next;
    }
    (counts, bright)
}

/// Measures an already disentangled state.
pub fn run_bsm<R: Rng + ?Sized>(
    state: &QuantumState,
    rp: &ReadoutParams,
    pipe: &Pipeline,
    rng: &mut R,
) -> BsmOutcome {
    let (counts, bright) = interrogate(state, &rp.bsm_read(), pipe, rng);
    BsmOutcome {
        counts,
        label: classify(counts, rp.n_c, rp.phi_minus_by_elimination),
        bright,
    }
}

/// `P(N <= k)` for `N ~ Poisson(lambda)`.
pub fn poisson_cdf(k: u32, lambda: f64) -> f64 {
    let mut term = (-lambda).exp();
    let mut sum = term;
    for i in 1..=k {
        term *= lambda / i as f64;
        sum += term;
    }
    sum.min(1.0)
}

/// Exact label distribution for an ideally disentangled `prepared` state,
/// in [`BsmLabel::ALL`] order. After the first bright read each later read
/// loses the bright population with probability `p_lost` for good.
pub fn cascade_probabilities(rp: &ReadoutParams, prepared: Bell) -> [f64; 5] {
    let fd = poisson_cdf(rp.n_c - 1, rp.lambda_dark);
    let fb = poisson_cdf(rp.n_c - 1, rp.lambda_bright);
    let p_lost = rp.bsm_read().p_lost;
    let j = prepared.index();
    let mut out = [0.0; 5];
    // probability of reaching read k with every earlier read quiet,
    // split by whether the electron is still bright
    let (mut lit, mut gone) = (0.0, 1.0);
    for k in 0..4 {
        if k == j {
            (lit, gone) = (gone, 0.0);
        }
        let fire = lit * (1.0 - fb) + gone * (1.0 - fd);
        if k < 3 || !rp.phi_minus_by_elimination {
            out[k] = fire;
        } else {
            out[3] = lit + gone;
        }
        if k >= j {
            (lit, gone) = (lit * fb * (1.0 - p_lost), gone * fd + lit * fb * p_lost);
        } else {
            gone *= fd;
        }
    }
    if !rp.phi_minus_by_elimination {
        out[4] = lit + gone;
    }
    out
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id of trial `trial` within group `group`.
pub fn stream_id(group: u64, trial: u64) -> u64 {
    (group << 40) | trial
}

/// Independent measurement runs on a fixed input; output order follows the
/// trial index whatever the thread count.
pub fn run_bsm_batch(
    state: &QuantumState,
    rp: &ReadoutParams,
    pipe: &Pipeline,
    trials: usize,
    seed: u64,
    group: u64,
) -> Vec<BsmOutcome> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| run_bsm(state, rp, pipe, &mut trial_rng(seed, stream_id(group, t))))
        .collect()
}

/// Prepares, disentangles and measures each Bell state `trials` times.
pub fn simulate_bsm(
    rp: &ReadoutParams,
    pipe: &Pipeline,
    trials: usize,
    seed: u64,
) -> Vec<(Bell, Vec<BsmOutcome>)> {
    Bell::ALL
        .iter()
        .map(|&b| {
            let st = pipe.prepared(b).evolve(pipe.disentangle());
            (b, run_bsm_batch(&st, rp, pipe, trials, seed, b.index() as u64))
        })
        .collect()
}

pub fn label_frequencies(outcomes: &[BsmOutcome]) -> [f64; 5] {
    let mut f = [0.0; 5];
    for o in outcomes {
        f[o.label.index()] += 1.0;
    }
    let n = outcomes.len().max(1) as f64;
    f.map(|v| v / n)
}

/// `hist[k][n]` = number of runs where read `k` returned `n` counts.
pub fn count_histograms(outcomes: &[BsmOutcome]) -> [Vec<u64>; 4] {
    let max = outcomes
        .iter()
        .flat_map(|o| o.counts)
        .max()
        .unwrap_or(0) as usize;
    let mut h: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0; max + 1]);
    for o in outcomes {
        for (k, &n) in o.counts.iter().enumerate() {
            h[k][n as usize] += 1;
        }
    }
    h
}

// Tomography. The logical qubit of each spin is |+1> = |0_q>, |-1> = |1_q>,
// so the 4x4 logical block is ordered |00>, |01>, |10>, |11> (electron first).

/// Logical two-qubit outcome `(electron bit, nitrogen bit)` of the `k`-th read.
fn outcome_bits(k: usize) -> (usize, usize) {
    let l = Bell::ALL[k].readout_basis();
    let bit = |lv: Level| usize::from(lv == Level::Minus);
    (bit(l.ms), bit(l.mi))
}

/// 2x2 complex matrix as nested arrays.
pub type Mat2 = [[C64; 2]; 2];

/// Pauli matrix, or the identity for `None`.
pub fn pauli_matrix(p: Option<Pauli>) -> Mat2 {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    match p {
        None => [[one, z], [z, one]],
        Some(Pauli::X) => [[z, one], [one, z]],
        Some(Pauli::Y) => [[z, -i], [i, z]],
        Some(Pauli::Z) => [[one, z], [z, -one]],
    }
}


fn kron2(a: &Mat2, b: &Mat2) -> Matrix4<C64> {
    Matrix4::from_fn(|r, col| a[r / 2][col / 2] * b[r % 2][col % 2])
}

/// Logical 4x4 block as a fixed-size matrix.
pub fn logical_block(rho: &QuantumState) -> Matrix4<C64> {
    Matrix4::from_fn(|i, j| rho.rho()[(LOGICAL_INDICES[i], LOGICAL_INDICES[j])])
}

/// Logical target ket (4 amplitudes) of a joint ket.
pub fn logical_ket(psi: &CVector) -> nalgebra::Vector4<C64> {
    nalgebra::Vector4::from_fn(|i, _| psi[LOGICAL_INDICES[i]])
}

/// Outcome probabilities `P[setting][2*be + bn]` for settings in row-major
/// `(electron, nitrogen)` Pauli order.
pub type SettingProbabilities = [[f64; 4]; 9];

pub fn settings() -> [(Pauli, Pauli); 9] {
    std::array::from_fn(|i| (Pauli::ALL[i / 3], Pauli::ALL[i % 3]))
}

/// Born-rule probabilities of every setting for a logical density matrix.
pub fn exact_probabilities(rho: &Matrix4<C64>) -> SettingProbabilities {
    let r = |p: Pauli| -> Mat2 {
        match p.pre_rotation() {
            None => pauli_matrix(None),
            Some(b) => {
                let m = b.logical_reflection();
                [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
            }
        }
    };
    settings().map(|(pe, pn)| {
        let u = kron2(&r(pe), &r(pn));
        let rot = u * rho * u.adjoint();
        std::array::from_fn(|k| rot[(k, k)].re)
    })
}

/// `rho = (1/4) sum_ab <s_a s_b> s_a (x) s_b` from the nine settings.
pub fn linear_inversion(probs: &SettingProbabilities) -> Matrix4<C64> {
    let sgn = |bit: usize| if bit == 0 { 1.0 } else { -1.0 };
    let expect = |s: usize, we: bool, wn: bool| -> f64 {
        (0..4)
            .map(|k| {
                let (be, bn) = (k / 2, k % 2);
                let mut v = 1.0;
                if we {
                    v *= sgn(be);
                }
                if wn {
                    v *= sgn(bn);
                }
                v * probs[s][k]
            })
            .sum()
    };
    let ops: [Option<Pauli>; 4] = [None, Some(Pauli::X), Some(Pauli::Y), Some(Pauli::Z)];
    let index = |p: Pauli| Pauli::ALL.iter().position(|&q| q == p).expect("listed");
    let mut rho = Matrix4::<C64>::zeros();
    for a in ops {
        for b in ops {
            let coef = match (a, b) {
                (None, None) => 1.0,
                (Some(pa), None) => {
                    (0..3).map(|j| expect(3 * index(pa) + j, true, false)).sum::<f64>() / 3.0
                }
                (None, Some(pb)) => {
                    (0..3).map(|i| expect(3 * i + index(pb), false, true)).sum::<f64>() / 3.0
                }
                (Some(pa), Some(pb)) => expect(3 * index(pa) + index(pb), true, true),
            };
            rho += kron2(&pauli_matrix(a), &pauli_matrix(b)) * c(coef / 4.0, 0.0);
        }
    }
    rho
}

/// Clips negative eigenvalues and renormalizes the trace.
pub fn project_psd(rho: &Matrix4<C64>) -> Matrix4<C64> {
    let herm = (rho + rho.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let total: f64 = vals.sum();
    let vals = if total > 0.0 { vals / total } else { vals.map(|_| 0.25) };
    let v = &eig.eigenvectors;
    let d = Matrix4::from_diagonal(&vals.map(|x| c(x, 0.0)));
    v * d * v.adjoint()
}

fn ln_poisson(n: u32, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let ln_fact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
    n as f64 * lambda.ln() - lambda - ln_fact
}

/// Maximum-likelihood estimate of which basis was bright, from held-readout
/// count vectors. Categories: first bright read `0..4`, or never bright (4).
pub fn estimate_outcomes(runs: &[[u32; 4]], s: &ReadSettings) -> [f64; 5] {
    let like: Vec<[f64; 5]> = runs
        .iter()
        .map(|n| {
            std::array::from_fn(|h| {
                (0..4)
                    .map(|k| {
                        let lam = if k >= h { s.lambda_bright } else { s.lambda_dark };
                        ln_poisson(n[k], lam)
                    })
                    .sum::<f64>()
                    .exp()
            })
        })
        .collect();
    let mut pi = [0.2; 5];
    for _ in 0..5000 {
        let mut next = [0.0; 5];
        for l in &like {
            let z: f64 = (0..5).map(|h| pi[h] * l[h]).sum();
            if z > 0.0 {
                for h in 0..5 {
                    next[h] += pi[h] * l[h] / z;
                }
            }
        }
        let n = runs.len().max(1) as f64;
        let next = next.map(|v| v / n);
        let delta = (0..5).map(|h| (next[h] - pi[h]).abs()).fold(0.0, f64::max);
        pi = next;
        if delta < 1e-12 {
            break;
        }
    }
    pi
}

#[derive(Debug, Clone)]
pub struct TomographyResult {
    pub rho_hat: Matrix4<C64>,
    /// Linear-inversion estimate before PSD projection.
    pub rho_raw: Matrix4<C64>,
    pub probabilities: SettingProbabilities,
    pub fidelity_to_target: f64,
    pub settings_used: usize,
}

/// Smallest shot count per setting that resolves a probability to 0.1 at one
/// sigma with the given bright/dark separation.
pub fn min_shots(s: &ReadSettings) -> usize {
    let sep = s.lambda_bright - s.lambda_dark;
    ((s.lambda_bright + s.lambda_dark) / (sep * sep * 0.01)).ceil() as usize
}

pub fn state_fidelity4(rho: &Matrix4<C64>, target: &nalgebra::Vector4<C64>) -> f64 {
    (target.adjoint() * rho * target)[(0, 0)].re.clamp(0.0, 1.0)
}

/// Nine-setting tomography of the logical part of `state`.
pub fn qst(
    state: &QuantumState,
    target: &CVector,
    rp: &ReadoutParams,
    pipe: &Pipeline,
    shots: usize,
    seed: u64,
) -> Result<TomographyResult, ReadoutError> {
    rp.validate()?;
    let s = rp.qst_read();
    let required = min_shots(&s);
    if shots < required {
        return Err(ReadoutError::InsufficientShots { shots, required });
    }
    let mut probs = [[0.0; 4]; 9];
    for (i, (pe, pn)) in settings().into_iter().enumerate() {
        let rotated = state.evolve(&pipe.pre_rotation(pe, pn));
        let runs: Vec<[u32; 4]> = (0..shots as u64)
            .into_par_iter()
            .map(|t| interrogate(&rotated, &s, pipe, &mut trial_rng(seed, stream_id(i as u64, t))).0)
            .collect();
        let pi = estimate_outcomes(&runs, &s);
        let seen: f64 = pi[..4].iter().sum();
        for (k, &p) in pi[..4].iter().enumerate() {
            let (be, bn) = outcome_bits(k);
            probs[i][2 * be + bn] = if seen > 0.0 { p / seen } else { 0.25 };
        }
    }
    let rho_raw = linear_inversion(&probs);
    let rho_hat = project_psd(&rho_raw);
    Ok(TomographyResult {
        rho_hat,
        rho_raw,
        probabilities: probs,
        fidelity_to_target: state_fidelity4(&rho_hat, &logical_ket(target)),
        settings_used: 9,
    })
}

/// Tomography fed with exact probabilities (infinite shots).
pub fn qst_exact(state: &QuantumState, target: &CVector) -> TomographyResult {
    let probs = exact_probabilities(&logical_block(state));
    let rho_raw = linear_inversion(&probs);
    let rho_hat = project_psd(&rho_raw);
    TomographyResult {
        rho_hat,
        rho_raw,
        probabilities: probs,
        fidelity_to_target: state_fidelity4(&rho_hat, &logical_ket(target)),
        settings_used: 9,
    }
}

/// Trace distance `||a - b||_1 / 2` of two Hermitian 4x4 matrices.
pub fn trace_distance4(a: &Matrix4<C64>, b: &Matrix4<C64>) -> f64 {
    let d = a - b;
    let d = (d + d.adjoint()) * c(0.5, 0.0);
    SymmetricEigen::new(d).eigenvalues.iter().map(|v| v.abs()).sum::<f64>() / 2.0
}

pub fn bell_logical_ket(which: Bell) -> nalgebra::Vector4<C64> {
    logical_ket(&which.ket())
}
