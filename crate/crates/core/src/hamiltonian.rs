//! Static double-qutrit Hamiltonian, its rotating-frame form, the polarized
//! MW/RF control generators, and piecewise-constant propagation.
//!
//! All frequencies are angular (rad/s). The rotating frame is generated by
//! `omega_mw * Sz^2 - omega_rf * Iz^2`, so resonant carriers
//! (`omega_mw = D0`, `omega_rf = Q`) leave only the hyperfine term
//! `-A Sz Iz`. Drives are kept in the rotating-wave approximation.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{
    c, embed, expm_propagator, BasisLabel, HilbertError, Level, Operator, Slot, C64, JOINT_DIM,
};

pub const N_CHANNELS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("control slice {slice} channel {channel} is not finite")]
    NonFinite { slice: usize, channel: usize },
    #[error("amplitude {value:.4e} rad/s on {channel} exceeds cap {cap:.4e} rad/s")]
    OverCap {
        channel: Channel,
        value: f64,
        cap: f64,
    },
    #[error("control set is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

/// Constants of `H = D0 Sz^2 - Q Iz^2 - A Sz Iz`, in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticParams {
    pub d0: f64,
    pub q: f64,
    pub a: f64,
}

impl Default for StaticParams {
    fn default() -> Self {
        Self {
            d0: TAU * 2.88e9,
            q: TAU * 4.95e6,
            a: TAU * 2.17e6,
        }
    }
}

impl StaticParams {
    /// `D0` and `Q` must be strictly positive. `A = 0` is accepted so that
    /// two-level reductions can switch the hyperfine coupling off.
    pub fn validate(&self) -> Result<(), HamiltonianError> {
        let check = |name, value: f64, strict: bool| {
            if !value.is_finite() || value < 0.0 || (strict && value == 0.0) {
                Err(HamiltonianError::InvalidParameter { name, value })
            } else {
                Ok(())
            }
        };
        check("D0", self.d0, true)?;
        check("Q", self.q, true)?;
        check("A", self.a, false)
    }

    /// Diagonal entry of the static Hamiltonian at `|m_s, m_I>`.
    pub fn energy(&self, label: BasisLabel) -> f64 {
        let ms = label.ms.m() as f64;
        let mi = label.mi.m() as f64;
        self.d0 * ms * ms - self.q * mi * mi - self.a * ms * mi
    }
}

/// MW and RF carrier angular frequencies defining the rotating frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub omega_mw: f64,
    pub omega_rf: f64,
}

impl FrameSpec {
    pub fn resonant(p: &StaticParams) -> Self {
        Self {
            omega_mw: p.d0,
            omega_rf: p.q,
        }
    }

    pub fn validate(&self) -> Result<(), HamiltonianError> {
        if !self.omega_mw.is_finite() {
            return Err(HamiltonianError::InvalidParameter {
                name: "omega_mw",
                value: self.omega_mw,
            });
        }
        if !self.omega_rf.is_finite() {
            return Err(HamiltonianError::InvalidParameter {
                name: "omega_rf",
                value: self.omega_rf,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Mw,
    Rf,
}

/// Circular polarization: `Plus` drives `|0> <-> |+1>`, `Minus` drives `|0> <-> |-1>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    Plus,
    Minus,
}

impl Polarization {
    pub fn level(self) -> Level {
        match self {
            Polarization::Plus => Level::Plus,
            Polarization::Minus => Level::Minus,
        }
    }

    pub fn for_level(level: Level) -> Option<Self> {
        match level {
            Level::Plus => Some(Polarization::Plus),
            Level::Minus => Some(Polarization::Minus),
            Level::Zero => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quadrature {
    Re,
    Im,
}

/// One real control track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Channel {
    pub band: Band,
    pub pol: Polarization,
    pub quad: Quadrature,
}

impl Channel {
    /// Canonical track order used by [`ControlSet`] and the pulse file.
    pub const ALL: [Channel; N_CHANNELS] = [
        Channel::new(Band::Mw, Polarization::Plus, Quadrature::Re),
        Channel::new(Band::Mw, Polarization::Plus, Quadrature::Im),
        Channel::new(Band::Mw, Polarization::Minus, Quadrature::Re),
        Channel::new(Band::Mw, Polarization::Minus, Quadrature::Im),
        Channel::new(Band::Rf, Polarization::Plus, Quadrature::Re),
        Channel::new(Band::Rf, Polarization::Plus, Quadrature::Im),
        Channel::new(Band::Rf, Polarization::Minus, Quadrature::Re),
        Channel::new(Band::Rf, Polarization::Minus, Quadrature::Im),
    ];

    pub const fn new(band: Band, pol: Polarization, quad: Quadrature) -> Self {
        Self { band, pol, quad }
    }

    pub fn index(self) -> usize {
        let b = match self.band {
            Band::Mw => 0,
            Band::Rf => 4,
        };
        let p = match self.pol {
            Polarization::Plus => 0,
            Polarization::Minus => 2,
        };
        let q = match self.quad {
            Quadrature::Re => 0,
            Quadrature::Im => 1,
        };
        b + p + q
    }

    pub fn name(self) -> &'static str {
        const NAMES: [&str; N_CHANNELS] = [
            "mw_plus_re",
            "mw_plus_im",
            "mw_minus_re",
            "mw_minus_im",
            "rf_plus_re",
            "rf_plus_im",
            "rf_minus_re",
            "rf_minus_im",
        ];
        NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|ch| ch.name() == name)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-band amplitude limits, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeCaps {
    pub mw: f64,
    pub rf: f64,
}

impl Default for AmplitudeCaps {
    fn default() -> Self {
        Self {
            mw: TAU * 10e6,
            rf: TAU * 50e3,
        }
    }
}

impl AmplitudeCaps {
    pub fn for_band(&self, band: Band) -> f64 {
        match band {
            Band::Mw => self.mw,
            Band::Rf => self.rf,
        }
    }

    pub fn for_channel(&self, ch: Channel) -> f64 {
        self.for_band(ch.band)
    }
}

/// Piecewise-constant amplitudes: one `[f64; 8]` row per time slice, rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    pub dt: f64,
    pub slices: Vec<[f64; N_CHANNELS]>,
}

impl ControlSet {
    pub fn zeros(n_slices: usize, dt: f64) -> Self {
        Self {
            dt,
            slices: vec![[0.0; N_CHANNELS]; n_slices],
        }
    }

    pub fn constant(n_slices: usize, dt: f64, amps: [f64; N_CHANNELS]) -> Self {
        Self {
            dt,
            slices: vec![amps; n_slices],
        }
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.slices.len() as f64
    }

    pub fn amplitude(&self, ch: Channel, slice: usize) -> f64 {
        self.slices[slice][ch.index()]
    }

    pub fn track(&self, ch: Channel) -> Vec<f64> {
        self.slices.iter().map(|s| s[ch.index()]).collect()
    }

    /// `sum_j u(j) dt` for one channel.
    pub fn area(&self, ch: Channel) -> f64 {
        self.slices.iter().map(|s| s[ch.index()]).sum::<f64>() * self.dt
    }

    pub fn validate(&self, caps: &AmplitudeCaps) -> Result<(), HamiltonianError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(HamiltonianError::InvalidParameter {
                name: "dt",
                value: self.dt,
            });
        }
        for (j, row) in self.slices.iter().enumerate() {
            for ch in Channel::ALL {
                let v = row[ch.index()];
                if !v.is_finite() {
                    return Err(HamiltonianError::NonFinite {
                        slice: j,
                        channel: ch.index(),
                    });
                }
                let cap = caps.for_channel(ch);
                if v.abs() > cap * (1.0 + 1e-12) {
                    return Err(HamiltonianError::OverCap {
                        channel: ch,
                        value: v,
                        cap,
                    });
                }
            }
        }
        Ok(())
    }

    /// Splits every slice into `factor` equal sub-slices with the same amplitudes.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            dt: self.dt / factor as f64,
            slices: self
                .slices
                .iter()
                .flat_map(|row| std::iter::repeat_n(*row, factor))
                .collect(),
        }
    }
}

/// Static Hamiltonian, exactly diagonal in the computational basis.
pub fn static_hamiltonian(p: &StaticParams) -> Operator {
    let diag: Vec<f64> = (0..JOINT_DIM)
        .map(|i| p.energy(BasisLabel::from_index(i).expect("index in range")))
        .collect();
    Operator::from_real_diagonal(&diag)
}

/// Static Hamiltonian minus the frame generator `omega_mw Sz^2 - omega_rf Iz^2`.
pub fn rotating_hamiltonian(p: &StaticParams, f: &FrameSpec) -> Operator {
    let delta_e = p.d0 - f.omega_mw;
    let delta_n = p.q - f.omega_rf;
    let diag: Vec<f64> = (0..JOINT_DIM)
        .map(|i| {
            let l = BasisLabel::from_index(i).expect("index in range");
            let ms = l.ms.m() as f64;
            let mi = l.mi.m() as f64;
            delta_e * ms * ms - delta_n * mi * mi - p.a * ms * mi
        })
        .collect();
    Operator::from_real_diagonal(&diag)
}

/// Rotating-wave generator for one channel on a single qutrit.
fn qutrit_generator(pol: Polarization, quad: Quadrature) -> Operator {
    let target = pol.level().ord();
    let zero = Level::Zero.ord();
    let mut m = Operator::zeros(3).into_matrix();
    match quad {
        Quadrature::Re => {
            m[(target, zero)] = c(0.5, 0.0);
            m[(zero, target)] = c(0.5, 0.0);
        }
        Quadrature::Im => {
            m[(target, zero)] = c(0.0, 0.5);
            m[(zero, target)] = c(0.0, -0.5);
        }
    }
    Operator::new(m).expect("3x3")
}

pub fn control_hamiltonian(ch: Channel) -> Operator {
    let slot = match ch.band {
        Band::Mw => Slot::Electron,
        Band::Rf => Slot::Nitrogen,
    };
    embed(&qutrit_generator(ch.pol, ch.quad), slot).expect("qutrit generator")
}

/// The eight control generators in [`Channel::ALL`] order.
pub fn control_hamiltonians() -> Vec<Operator> {
    Channel::ALL.iter().map(|&ch| control_hamiltonian(ch)).collect()
}

/// Drift plus controls, with the generators precomputed.
#[derive(Debug, Clone)]
pub struct ControlSystem {
    pub drift: Operator,
    pub generators: Vec<Operator>,
}

impl ControlSystem {
    pub fn new(p: &StaticParams, f: &FrameSpec) -> Self {
        Self {
            drift: rotating_hamiltonian(p, f),
            generators: control_hamiltonians(),
        }
    }

    pub fn slice_hamiltonian(&self, amps: &[f64; N_CHANNELS]) -> Operator {
        let mut h = self.drift.matrix().clone();
        for (u, g) in amps.iter().zip(&self.generators) {
            if *u != 0.0 {
                h += g.matrix() * C64::new(*u, 0.0);
            }
        }
        Operator::new(h).expect("9x9")
    }

    pub fn slice_propagator(
        &self,
        amps: &[f64; N_CHANNELS],
        dt: f64,
    ) -> Result<Operator, HamiltonianError> {
        Ok(expm_propagator(&self.slice_hamiltonian(amps), dt)?)
    }

    /// `U = U_N ... U_1`.
    pub fn propagate(&self, cs: &ControlSet) -> Result<Operator, HamiltonianError> {
        let mut u = Operator::identity(JOINT_DIM);
        for row in &cs.slices {
            u = &self.slice_propagator(row, cs.dt)? * &u;
        }
        Ok(u)
    }
}

pub fn propagate(
    cs: &ControlSet,
    p: &StaticParams,
    f: &FrameSpec,
) -> Result<Operator, HamiltonianError> {
    ControlSystem::new(p, f).propagate(cs)
}

/// One constant-envelope drive component used to seed pulse shapes.
///
/// The tone addresses the `|0> <-> |pol>` transition of its band with a
/// complex coupling `amplitude * e^{-i detuning t}`, which cancels a
/// rotating-frame detuning of `detuning` on that transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub band: Band,
    pub pol: Polarization,
    pub detuning: f64,
    pub amplitude: C64,
}

/// Samples a sum of tones at slice midpoints.
pub fn tone_controls(tones: &[Tone], n_slices: usize, dt: f64) -> ControlSet {
    let mut cs = ControlSet::zeros(n_slices, dt);
    for (j, row) in cs.slices.iter_mut().enumerate() {
        let t = (j as f64 + 0.5) * dt;
        for tone in tones {
            let z = tone.amplitude * C64::from_polar(1.0, -tone.detuning * t);
            row[Channel::new(tone.band, tone.pol, Quadrature::Re).index()] += z.re;
            row[Channel::new(tone.band, tone.pol, Quadrature::Im).index()] += z.im;
        }
    }
    cs
}
