//! Complex linear algebra for spin-1 qutrits and the 9-dimensional
//! electron-nitrogen joint space.
//!
//! Both spins use the level ordering `(+1, 0, -1)`, and the electron is the
//! major index of the joint space, so `|m_s, m_I>` lives at
//! `3 * ord(m_s) + ord(m_I)`. The logical qubit therefore sits on the corner
//! indices `{0, 2, 6, 8}`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Elementwise tolerance used when checking `M = M†`.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Max-norm tolerance used when checking `U†U = I`.
pub const UNITARY_TOL: f64 = 1e-10;
/// Tolerance for density-matrix trace, hermiticity and eigenvalue floor.
pub const STATE_TOL: f64 = 1e-10;

pub const QUTRIT_DIM: usize = 3;
pub const JOINT_DIM: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("expected a {expected}x{expected} operator, got {rows}x{cols}")]
    Dimension {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("target state is not normalized (norm {0})")]
    Unnormalized(f64),
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
}

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Magnetic quantum number of a spin-1 level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Plus,
    Zero,
    Minus,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Plus, Level::Zero, Level::Minus];

    pub fn m(self) -> i32 {
        match self {
            Level::Plus => 1,
            Level::Zero => 0,
            Level::Minus => -1,
        }
    }

    /// Position of the level in the `(+1, 0, -1)` ordering.
    pub fn ord(self) -> usize {
        match self {
            Level::Plus => 0,
            Level::Zero => 1,
            Level::Minus => 2,
        }
    }

    pub fn from_m(m: i32) -> Option<Level> {
        match m {
            1 => Some(Level::Plus),
            0 => Some(Level::Zero),
            -1 => Some(Level::Minus),
            _ => None,
        }
    }

    pub fn from_ord(ord: usize) -> Option<Level> {
        Level::ALL.get(ord).copied()
    }

    pub fn flipped(self) -> Level {
        match self {
            Level::Plus => Level::Minus,
            Level::Zero => Level::Zero,
            Level::Minus => Level::Plus,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Plus => write!(f, "+1"),
            Level::Zero => write!(f, "0"),
            Level::Minus => write!(f, "-1"),
        }
    }
}

/// Which spin of the pair an operator acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Electron,
    Nitrogen,
}

/// Joint computational basis label `|m_s, m_I>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisLabel {
    pub ms: Level,
    pub mi: Level,
}

impl BasisLabel {
    pub const fn new(ms: Level, mi: Level) -> Self {
        Self { ms, mi }
    }

    pub fn index(self) -> usize {
        3 * self.ms.ord() + self.mi.ord()
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= JOINT_DIM {
            return None;
        }
        Some(Self {
            ms: Level::from_ord(index / 3)?,
            mi: Level::from_ord(index % 3)?,
        })
    }

    /// True for the four `|±1, ±1>` computational bases of the logical qubits.
    pub fn is_logical(self) -> bool {
        self.ms != Level::Zero && self.mi != Level::Zero
    }

    pub fn all() -> impl Iterator<Item = BasisLabel> {
        (0..JOINT_DIM).filter_map(BasisLabel::from_index)
    }

    pub fn ket(self) -> CVector {
        basis_ket(JOINT_DIM, self.index())
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{},{}>", self.ms, self.mi)
    }
}

/// Joint indices of the logical subspace in the order
/// `|+1,+1>, |+1,-1>, |-1,+1>, |-1,-1>`.
pub const LOGICAL_INDICES: [usize; 4] = [0, 2, 6, 8];

pub fn basis_ket(dim: usize, index: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[index] = c(1.0, 0.0);
    v
}

/// Square complex matrix on a single qutrit (dim 3) or the joint space (dim 9).
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    m: CMatrix,
}

impl Operator {
    pub fn new(m: CMatrix) -> Result<Self, HilbertError> {
        let (rows, cols) = m.shape();
        if rows != cols || (rows != QUTRIT_DIM && rows != JOINT_DIM) {
            return Err(HilbertError::Dimension {
                expected: if rows == QUTRIT_DIM { QUTRIT_DIM } else { JOINT_DIM },
                rows,
                cols,
            });
        }
        Ok(Self { m })
    }

    /// Wraps a matrix whose shape the caller already guarantees.
    pub(crate) fn from_matrix(m: CMatrix) -> Self {
        debug_assert!(m.is_square());
        Self { m }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_matrix(CMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_matrix(CMatrix::zeros(dim, dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = CVector::from_iterator(diag.len(), diag.iter().map(|&x| c(x, 0.0)));
        Self::from_matrix(CMatrix::from_diagonal(&d))
    }

    /// `|ket><bra|`
    pub fn outer(ket: &CVector, bra: &CVector) -> Self {
        Self::from_matrix(ket * bra.adjoint())
    }

    pub fn projector(indices: &[usize], dim: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        for &i in indices {
            m[(i, i)] = c(1.0, 0.0);
        }
        Self::from_matrix(m)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn adjoint(&self) -> Self {
        Self::from_matrix(self.m.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_matrix(&self.m * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(c(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn commutator(&self, other: &Operator) -> Operator {
        Self::from_matrix(&self.m * &other.m - &other.m * &self.m)
    }

    pub fn kron(&self, other: &Operator) -> Operator {
        Self::from_matrix(self.m.kronecker(&other.m))
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        &self.m * v
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).norm()))
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_error() <= HERMITIAN_TOL
    }

    pub fn unitarity_error(&self) -> f64 {
        let n = self.dim();
        let prod = self.m.adjoint() * &self.m;
        let id = CMatrix::identity(n, n);
        prod.iter()
            .zip(id.iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).norm()))
    }

    pub fn is_unitary(&self) -> bool {
        self.unitarity_error() <= UNITARY_TOL
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.m[(i, j)] == c(0.0, 0.0)))
    }

    /// Restriction to the given basis indices: `P M P` as a small matrix.
    pub fn block(&self, indices: &[usize]) -> CMatrix {
        CMatrix::from_fn(indices.len(), indices.len(), |i, j| {
            self.m[(indices[i], indices[j])]
        })
    }

    /// Eigendecomposition of a Hermitian operator: `(eigenvalues, eigenvectors)`
    /// with eigenvectors stored column-wise.
    pub fn hermitian_eigen(&self) -> Result<(Vec<f64>, CMatrix), HilbertError> {
        let err = self.hermiticity_error();
        let scale = self.max_abs().max(1.0);
        if err > HERMITIAN_TOL * scale {
            return Err(HilbertError::NotHermitian(err));
        }
        let eig = SymmetricEigen::new(self.m.clone());
        Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator::from_matrix(&self.m * &rhs.m)
    }
}

impl Mul for Operator {
    type Output = Operator;
    fn mul(self, rhs: Operator) -> Operator {
        &self * &rhs
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator::from_matrix(&self.m + &rhs.m)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator::from_matrix(&self.m - &rhs.m)
    }
}

/// Standard spin-1 matrices `(Sx, Sy, Sz)` in the `(+1, 0, -1)` ordering.
pub fn spin1_operators() -> (Operator, Operator, Operator) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let z = c(0.0, 0.0);
    let sx = CMatrix::from_row_slice(
        3,
        3,
        &[z, c(r, 0.0), z, c(r, 0.0), z, c(r, 0.0), z, c(r, 0.0), z],
    );
    let sy = CMatrix::from_row_slice(
        3,
        3,
        &[z, c(0.0, -r), z, c(0.0, r), z, c(0.0, -r), z, c(0.0, r), z],
    );
    let sz = Operator::from_real_diagonal(&[1.0, 0.0, -1.0]);
    (Operator::from_matrix(sx), Operator::from_matrix(sy), sz)
}

/// Lifts a single-qutrit operator into the joint space.
pub fn embed(op: &Operator, slot: Slot) -> Result<Operator, HilbertError> {
    if op.dim() != QUTRIT_DIM {
        return Err(HilbertError::Dimension {
            expected: QUTRIT_DIM,
            rows: op.dim(),
            cols: op.dim(),
        });
    }
    let id = Operator::identity(QUTRIT_DIM);
    Ok(match slot {
        Slot::Electron => op.kron(&id),
        Slot::Nitrogen => id.kron(op),
    })
}

/// `exp(-i H t)` by eigendecomposition of the Hermitian generator.
pub fn expm_propagator(h: &Operator, t: f64) -> Result<Operator, HilbertError> {
    let (vals, vecs) = h.hermitian_eigen()?;
    let phases = CVector::from_iterator(vals.len(), vals.iter().map(|&l| C64::from_polar(1.0, -l * t)));
    let scaled = CMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * phases[j]);
    Ok(Operator::from_matrix(scaled * vecs.adjoint()))
}

/// Density matrix on the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    rho: CMatrix,
}

impl QuantumState {
    /// Validates trace, hermiticity and positivity before wrapping.
    pub fn new(rho: CMatrix) -> Result<Self, HilbertError> {
        let state = Self::from_matrix_unchecked(rho)?;
        state.validate(STATE_TOL)?;
        Ok(state)
    }

    fn from_matrix_unchecked(rho: CMatrix) -> Result<Self, HilbertError> {
        if rho.shape() != (JOINT_DIM, JOINT_DIM) {
            return Err(HilbertError::Dimension {
                expected: JOINT_DIM,
                rows: rho.nrows(),
                cols: rho.ncols(),
            });
        }
        Ok(Self { rho })
    }

    pub(crate) fn from_matrix(rho: CMatrix) -> Self {
        Self { rho }
    }

    pub fn pure(psi: &CVector) -> Result<Self, HilbertError> {
        let norm = psi.norm();
        if psi.len() != JOINT_DIM {
            return Err(HilbertError::Dimension {
                expected: JOINT_DIM,
                rows: psi.len(),
                cols: 1,
            });
        }
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(HilbertError::Unnormalized(norm));
        }
        Ok(Self {
            rho: psi * psi.adjoint(),
        })
    }

    pub fn basis(label: BasisLabel) -> Self {
        let k = label.ket();
        Self { rho: &k * k.adjoint() }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            rho: CMatrix::identity(JOINT_DIM, JOINT_DIM) / c(JOINT_DIM as f64, 0.0),
        }
    }

    /// Uniform mixture over the four logical computational bases.
    pub fn maximally_mixed_logical() -> Self {
        let mut rho = CMatrix::zeros(JOINT_DIM, JOINT_DIM);
        for &i in &LOGICAL_INDICES {
            rho[(i, i)] = c(0.25, 0.0);
        }
        Self { rho }
    }

    pub fn product(rho_e: &Operator, rho_n: &Operator) -> Result<Self, HilbertError> {
        if rho_e.dim() != QUTRIT_DIM || rho_n.dim() != QUTRIT_DIM {
            return Err(HilbertError::Dimension {
                expected: QUTRIT_DIM,
                rows: rho_e.dim().max(rho_n.dim()),
                cols: rho_e.dim().max(rho_n.dim()),
            });
        }
        Self::new(rho_e.kron(rho_n).into_matrix())
    }

    pub fn rho(&self) -> &CMatrix {
        &self.rho
    }

    pub fn as_operator(&self) -> Operator {
        Operator::from_matrix(self.rho.clone())
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn population(&self, label: BasisLabel) -> f64 {
        let i = label.index();
        self.rho[(i, i)].re
    }

    pub fn populations(&self) -> [f64; JOINT_DIM] {
        std::array::from_fn(|i| self.rho[(i, i)].re)
    }

    /// Total population with the electron in the given level.
    pub fn electron_population(&self, ms: Level) -> f64 {
        Level::ALL
            .iter()
            .map(|&mi| self.population(BasisLabel::new(ms, mi)))
            .sum()
    }

    pub fn logical_population(&self) -> f64 {
        LOGICAL_INDICES.iter().map(|&i| self.rho[(i, i)].re).sum()
    }

    pub fn evolve(&self, u: &Operator) -> Self {
        Self {
            rho: u.matrix() * &self.rho * u.matrix().adjoint(),
        }
    }

    /// `P rho P / tr(P rho P)`; `None` when the projected weight vanishes.
    pub fn project(&self, p: &Operator) -> Option<(f64, Self)> {
        let projected = p.matrix() * &self.rho * p.matrix();
        let w = projected.trace().re;
        if w <= 0.0 {
            return None;
        }
        Some((w, Self { rho: projected / c(w, 0.0) }))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.rho + self.rho.adjoint()) * c(0.5, 0.0);
        SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn validate(&self, tol: f64) -> Result<(), HilbertError> {
        let tr = self.rho.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(HilbertError::InvalidState(format!("trace {tr}")));
        }
        let herm = self
            .rho
            .iter()
            .zip(self.rho.adjoint().iter())
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).norm()));
        if herm > tol {
            return Err(HilbertError::InvalidState(format!(
                "not Hermitian ({herm:.3e})"
            )));
        }
        let min = self.min_eigenvalue();
        if min < -tol {
            return Err(HilbertError::InvalidState(format!(
                "negative eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.validate(tol).is_ok()
    }

    /// 4x4 block on the logical subspace in `LOGICAL_INDICES` order.
    pub fn logical_block(&self) -> CMatrix {
        self.as_operator().block(&LOGICAL_INDICES)
    }
}

/// State fidelity `<psi|rho|psi>` against a pure target.
pub fn fidelity(rho: &QuantumState, psi: &CVector) -> Result<f64, HilbertError> {
    if psi.len() != JOINT_DIM {
        return Err(HilbertError::Dimension {
            expected: JOINT_DIM,
            rows: psi.len(),
            cols: 1,
        });
    }
    let norm = psi.norm();
    if (norm - 1.0).abs() > STATE_TOL {
        return Err(HilbertError::Unnormalized(norm));
    }
    let f = (psi.adjoint() * rho.rho() * psi)[(0, 0)].re;
    Ok(f.clamp(0.0, 1.0))
}

/// Reduced density matrix of the kept qutrit.
pub fn partial_trace(rho: &QuantumState, keep: Slot) -> Operator {
    let r = rho.rho();
    let m = CMatrix::from_fn(QUTRIT_DIM, QUTRIT_DIM, |a, b| {
        (0..QUTRIT_DIM)
            .map(|k| match keep {
                Slot::Electron => r[(3 * a + k, 3 * b + k)],
                Slot::Nitrogen => r[(3 * k + a, 3 * k + b)],
            })
            .sum()
    });
    Operator::from_matrix(m)
}

/// Projector onto the joint states with the electron in `ms`.
pub fn electron_manifold_projector(ms: Level) -> Operator {
    let idx: Vec<usize> = Level::ALL
        .iter()
        .map(|&mi| BasisLabel::new(ms, mi).index())
        .collect();
    Operator::projector(&idx, JOINT_DIM)
}

pub fn logical_projector() -> Operator {
    Operator::projector(&LOGICAL_INDICES, JOINT_DIM)
}

/// Normalized joint ket from `(label, amplitude)` pairs.
pub fn ket_from(components: &[(BasisLabel, C64)]) -> CVector {
    let mut v = CVector::zeros(JOINT_DIM);
    for &(label, amp) in components {
        v[label.index()] += amp;
    }
    let n = v.norm();
    if n > 0.0 {
        v /= c(n, 0.0);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> Operator {
        let a = CMatrix::from_fn(dim, dim, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        Operator::from_matrix((&a + a.adjoint()) * c(0.5, 0.0))
    }

    fn taylor_expm(h: &Operator, t: f64, terms: usize) -> CMatrix {
        let n = h.dim();
        let a = h.matrix() * c(0.0, -t);
        let mut term = CMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..terms {
            term = &term * &a / c(k as f64, 0.0);
            sum += &term;
        }
        sum
    }

    #[test]
    fn spin1_algebra() {
        let (sx, sy, sz) = spin1_operators();
        assert_eq!(sz, Operator::from_real_diagonal(&[1.0, 0.0, -1.0]));
        let comm = sx.commutator(&sy);
        assert!(comm.max_abs_diff(&sz.scale(c(0.0, 1.0))) < 1e-14);
        let s2 = &(&(&sx * &sx) + &(&sy * &sy)) + &(&sz * &sz);
        assert!(s2.max_abs_diff(&Operator::identity(3).scale_real(2.0)) < 1e-14);
        assert_eq!(&sz * &sz, Operator::from_real_diagonal(&[1.0, 0.0, 1.0]));
        for op in [&sx, &sy, &sz] {
            assert!(op.is_hermitian());
        }
    }

    #[test]
    fn embed_slots() {
        let (_, _, sz) = spin1_operators();
        let se = embed(&sz, Slot::Electron).unwrap();
        let iz = embed(&sz, Slot::Nitrogen).unwrap();
        let prod = &se * &iz;
        let pp = BasisLabel::new(Level::Plus, Level::Plus).index();
        let pm = BasisLabel::new(Level::Plus, Level::Minus).index();
        assert_eq!(prod.matrix()[(pp, pp)], c(1.0, 0.0));
        assert_eq!(prod.matrix()[(pm, pm)], c(-1.0, 0.0));
        assert_eq!(se.commutator(&iz).max_abs(), 0.0);
        assert_eq!(
            embed(&Operator::identity(3), Slot::Electron).unwrap(),
            Operator::identity(9)
        );
        assert!(matches!(
            embed(&Operator::identity(9), Slot::Electron),
            Err(HilbertError::Dimension { .. })
        ));
    }

    #[test]
    fn embed_respects_index_map() {
        let (_, _, sz) = spin1_operators();
        let se = embed(&sz, Slot::Electron).unwrap();
        let iz = embed(&sz, Slot::Nitrogen).unwrap();
        for label in BasisLabel::all() {
            let k = label.ket();
            let e = se.apply(&k);
            let n = iz.apply(&k);
            assert!((e - &k * c(label.ms.m() as f64, 0.0)).norm() < 1e-15);
            assert!((n - &k * c(label.mi.m() as f64, 0.0)).norm() < 1e-15);
            assert_eq!(BasisLabel::from_index(label.index()), Some(label));
        }
    }

    #[test]
    fn expm_diagonal_and_inverse() {
        let h = Operator::from_real_diagonal(&[1.3, -0.4, 2.0]);
        let u = expm_propagator(&h, 0.7).unwrap();
        for (i, l) in [1.3, -0.4, 2.0].iter().enumerate() {
            assert!((u.matrix()[(i, i)] - C64::from_polar(1.0, -l * 0.7)).norm() < 1e-14);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(&mut rng, 9);
        let fwd = expm_propagator(&h, 1.7).unwrap();
        let back = expm_propagator(&h, -1.7).unwrap();
        assert!((&fwd * &back).max_abs_diff(&Operator::identity(9)) < 1e-10);
        assert!(fwd.unitarity_error() < 1e-10);
    }

    #[test]
    fn expm_matches_taylor_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let h = random_hermitian(&mut rng, 9);
            let u = expm_propagator(&h, 1.0).unwrap();
            let oracle = taylor_expm(&h, 1.0, 30);
            let diff = u
                .matrix()
                .iter()
                .zip(oracle.iter())
                .fold(0.0_f64, |a, (x, y)| a.max((x - y).norm()));
            assert!(diff < 1e-8, "diff {diff}");
        }
    }

    #[test]
    fn expm_rejects_non_hermitian() {
        let mut m = CMatrix::zeros(3, 3);
        m[(0, 1)] = c(1.0, 0.0);
        let op = Operator::new(m).unwrap();
        assert!(matches!(
            expm_propagator(&op, 1.0),
            Err(HilbertError::NotHermitian(_))
        ));
    }

    #[test]
    fn fidelity_cases() {
        let psi = ket_from(&[
            (BasisLabel::new(Level::Plus, Level::Plus), c(1.0, 0.0)),
            (BasisLabel::new(Level::Minus, Level::Minus), c(0.0, 1.0)),
        ]);
        let rho = QuantumState::pure(&psi).unwrap();
        assert!((fidelity(&rho, &psi).unwrap() - 1.0).abs() < 1e-14);
        let orth = BasisLabel::new(Level::Zero, Level::Zero).ket();
        assert!(fidelity(&rho, &orth).unwrap().abs() < 1e-14);
        let mixed = QuantumState::maximally_mixed();
        assert!((fidelity(&mixed, &psi).unwrap() - 1.0 / 9.0).abs() < 1e-14);
        let bad = &psi * c(2.0, 0.0);
        assert!(matches!(
            fidelity(&rho, &bad),
            Err(HilbertError::Unnormalized(_))
        ));
    }

    #[test]
    fn partial_trace_cases() {
        let re = Operator::from_real_diagonal(&[0.2, 0.3, 0.5]);
        let mut rn = Operator::from_real_diagonal(&[0.6, 0.1, 0.3]).into_matrix();
        rn[(0, 2)] = c(0.1, 0.05);
        rn[(2, 0)] = c(0.1, -0.05);
        let rn = Operator::new(rn).unwrap();
        let prod = QuantumState::product(&re, &rn).unwrap();
        assert!(partial_trace(&prod, Slot::Electron).max_abs_diff(&re) < 1e-15);
        assert!(partial_trace(&prod, Slot::Nitrogen).max_abs_diff(&rn) < 1e-15);

        let phi = ket_from(&[
            (BasisLabel::new(Level::Plus, Level::Plus), c(1.0, 0.0)),
            (BasisLabel::new(Level::Minus, Level::Minus), c(1.0, 0.0)),
        ]);
        let rho = QuantumState::pure(&phi).unwrap();
        let red = partial_trace(&rho, Slot::Electron);
        assert!(red.max_abs_diff(&Operator::from_real_diagonal(&[0.5, 0.0, 0.5])) < 1e-15);
        assert!((red.trace().re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn state_validation() {
        assert!(QuantumState::maximally_mixed_logical().is_valid(1e-12));
        let mut bad = CMatrix::zeros(9, 9);
        bad[(0, 0)] = c(1.5, 0.0);
        bad[(1, 1)] = c(-0.5, 0.0);
        assert!(QuantumState::new(bad).is_err());
    }

    proptest::proptest! {
        #[test]
        fn partial_trace_preserves_trace(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = CMatrix::from_fn(9, 9, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let rho = &a * a.adjoint();
            let tr = rho.trace();
            let state = QuantumState::new(rho / tr).unwrap();
            for slot in [Slot::Electron, Slot::Nitrogen] {
                let red = partial_trace(&state, slot);
                proptest::prop_assert!((red.trace().re - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn propagator_is_unitary(seed in 0u64..1000, t in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_hermitian(&mut rng, 9).scale_real(10.0);
            let u = expm_propagator(&h, t).unwrap();
            proptest::prop_assert!(u.unitarity_error() <= UNITARY_TOL);
        }
    }
}
