//! Scenario configuration: a strict TOML schema with every field defaulted.
//! Physical frequencies are written in Hz and converted to rad/s on use.

use std::f64::consts::TAU;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::circuits::{Bell, Via};
use crate::grape::OptConfig;
use crate::hamiltonian::{AmplitudeCaps, FrameSpec, StaticParams};
use crate::readout::ReadoutParams;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SimulateBsm,
    OptimizePulse,
    Tomography,
    Sweep,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::SimulateBsm => "simulate-bsm",
            Scenario::OptimizePulse => "optimize-pulse",
            Scenario::Tomography => "tomography",
            Scenario::Sweep => "sweep",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self != Scenario::OptimizePulse
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub d0_hz: f64,
    pub q_hz: f64,
    pub a_hz: f64,
    /// Microwave carrier; resonant with `D0` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mw_carrier_hz: Option<f64>,
    /// RF carrier; resonant with `Q` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rf_carrier_hz: Option<f64>,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            d0_hz: 2.88e9,
            q_hz: 4.95e6,
            a_hz: 2.17e6,
            mw_carrier_hz: None,
            rf_carrier_hz: None,
        }
    }
}

impl PhysicsConfig {
    pub fn params(&self) -> StaticParams {
        StaticParams {
            d0: TAU * self.d0_hz,
            q: TAU * self.q_hz,
            a: TAU * self.a_hz,
        }
    }

    pub fn frame(&self) -> FrameSpec {
        FrameSpec {
            omega_mw: TAU * self.mw_carrier_hz.unwrap_or(self.d0_hz),
            omega_rf: TAU * self.rf_carrier_hz.unwrap_or(self.q_hz),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrapeConfig {
    pub max_iters: usize,
    pub step_init: f64,
    pub step_floor: f64,
    pub fid_goal: f64,
    pub grad_tol: f64,
    pub penalty_weight: f64,
    pub mw_cap_hz: f64,
    pub rf_cap_hz: f64,
    /// Stages to synthesize in `optimize-pulse`; empty means all of them.
    pub stages: Vec<String>,
}

impl Default for GrapeConfig {
    fn default() -> Self {
        let o = OptConfig::default();
        Self {
            max_iters: o.max_iters,
            step_init: o.step_init,
            step_floor: o.step_floor,
            fid_goal: o.fid_goal,
            grad_tol: o.grad_tol,
            penalty_weight: o.penalty_weight,
            mw_cap_hz: o.caps.mw / TAU,
            rf_cap_hz: o.caps.rf / TAU,
            stages: Vec::new(),
        }
    }
}

impl GrapeConfig {
    pub fn opt_config(&self) -> OptConfig {
        OptConfig {
            max_iters: self.max_iters,
            step_init: self.step_init,
            step_floor: self.step_floor,
            fid_goal: self.fid_goal,
            grad_tol: self.grad_tol,
            caps: AmplitudeCaps {
                mw: TAU * self.mw_cap_hz,
                rf: TAU * self.rf_cap_hz,
            },
            penalty_weight: self.penalty_weight,
            ..OptConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyConfig {
    pub shots: usize,
    /// A Bell state name (`phi+`, `psi+`, `psi-`, `phi-`) or `mixed`.
    pub state: String,
    /// Bell state the reconstruction is compared with; defaults to `state`,
    /// or `phi+` for the mixed state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self {
            shots: 10_000,
            state: "phi+".into(),
            target: None,
        }
    }
}

impl TomographyConfig {
    /// `None` for the maximally mixed logical state.
    pub fn state(&self) -> Option<Bell> {
        Bell::from_name(&self.state)
    }

    pub fn target(&self) -> Bell {
        self.target
            .as_deref()
            .and_then(Bell::from_name)
            .or(self.state())
            .unwrap_or(Bell::PhiPlus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    NC,
    LambdaBright,
    LambdaDark,
    PLeak,
    PDephN,
    NRepsBsm,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::NC => "n_c",
            SweepParameter::LambdaBright => "lambda_bright",
            SweepParameter::LambdaDark => "lambda_dark",
            SweepParameter::PLeak => "p_leak",
            SweepParameter::PDephN => "p_deph_n",
            SweepParameter::NRepsBsm => "n_reps_bsm",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, SweepParameter::NC | SweepParameter::NRepsBsm)
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &ReadoutParams, value: f64) -> ReadoutParams {
        let mut rp = base.clone();
        match self {
            SweepParameter::NC => rp.n_c = value as u32,
            SweepParameter::LambdaBright => rp.lambda_bright = value,
            SweepParameter::LambdaDark => rp.lambda_dark = value,
            SweepParameter::PLeak => rp.p_leak = value,
            SweepParameter::PDephN => rp.p_deph_n = value,
            SweepParameter::NRepsBsm => {
                // the per-read means scale with the repetition count
                let scale = value / rp.n_reps_bsm as f64;
                rp.lambda_bright *= scale;
                rp.lambda_dark *= scale;
                rp.n_reps_bsm = value as u32;
            }
        }
        rp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::NC,
            values: vec![1.0, 2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub mode: Via,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub trials: usize,
    /// Also log every measurement run to `outcomes.jsonl`.
    pub write_outcomes: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub physics: PhysicsConfig,
    pub readout: ReadoutParams,
    pub grape: GrapeConfig,
    pub tomography: TomographyConfig,
    pub sweep: SweepConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            mode: Via::Ideal,
            seed: None,
            trials: 10_000,
            write_outcomes: true,
            out: None,
            physics: PhysicsConfig::default(),
            readout: ReadoutParams::default(),
            grape: GrapeConfig::default(),
            tomography: TomographyConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Checks every section; `scenario` must be set by now.
    pub fn validate(&self) -> Result<Scenario, CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let Some(scenario) = self.scenario else {
            return bad("no scenario given".into());
        };
        if scenario.is_stochastic() && self.seed.is_none() {
            return bad(format!("scenario {scenario} needs a seed"));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        self.physics
            .params()
            .validate()
            .map_err(|e| CliError::Config(format!("physics: {e}")))?;
        self.physics
            .frame()
            .validate()
            .map_err(|e| CliError::Config(format!("physics: {e}")))?;
        self.readout
            .validate()
            .map_err(|e| CliError::Config(format!("readout: {e}")))?;
        self.grape
            .opt_config()
            .validate()
            .map_err(|e| CliError::Config(format!("grape: {e}")))?;
        if self.tomography.state != "mixed" && self.tomography.state().is_none() {
            return bad(format!("tomography: unknown state {:?}", self.tomography.state));
        }
        if let Some(t) = &self.tomography.target {
            if Bell::from_name(t).is_none() {
                return bad(format!("tomography: unknown target {t:?}"));
            }
        }
        if scenario == Scenario::Sweep {
            let p = self.sweep.parameter;
            if self.sweep.values.is_empty() {
                return bad("sweep: values must not be empty".into());
            }
            for &v in &self.sweep.values {
                if p.is_integer() && (v.fract() != 0.0 || v < 1.0) {
                    return bad(format!("sweep: {} takes positive integers, got {v}", p.name()));
                }
                p.apply(&self.readout, v)
                    .validate()
                    .map_err(|e| CliError::Config(format!("sweep {} = {v}: {e}", p.name())))?;
            }
        }
        Ok(scenario)
    }

    /// Copy with every implicit default written out.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.physics.mw_carrier_hz.get_or_insert(self.physics.d0_hz);
        out.physics.rf_carrier_hz.get_or_insert(self.physics.q_hz);
        out.tomography.target = Some(self.tomography.target().name().to_string());
        out
    }
}
