//! Run configuration: one JSON document per experiment.
//!
//! Three presets ship with the crate (`academic`, `crane-nominal`,
//! `crane-transfer`); the same files live under `configs/` in the
//! repository. The top-level `seed` drives every random choice of a run:
//! dataset excitation, network initialization, shuffling and splitting.

use std::path::{Path, PathBuf};

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::canonical::{LossWeights, TrainOptions};
use crate::control::{pole_placement, ControllerGains};
use crate::datastore::{ExcitationPolicy, SafetyBox};
use crate::dynamics::{AcademicSystem, CraneModel, CraneOptions, CraneParams, DiscreteSystem};
use crate::error::{Error, Result};
use crate::nn::Activation;

pub const PRESET_NAMES: [&str; 3] = ["academic", "crane-nominal", "crane-transfer"];

const ACADEMIC: &str = include_str!("../../../configs/academic.json");
const CRANE_NOMINAL: &str = include_str!("../../../configs/crane-nominal.json");
const CRANE_TRANSFER: &str = include_str!("../../../configs/crane-transfer.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    Academic,
    Crane {
        #[serde(default = "nominal_params")]
        params: CraneParams,
        #[serde(default)]
        options: CraneOptions,
        #[serde(default = "default_sampling_time")]
        sampling_time: f64,
    },
}

fn nominal_params() -> CraneParams {
    CraneParams::NOMINAL
}

fn default_sampling_time() -> f64 {
    0.005
}

impl SystemConfig {
    pub fn state_dim(&self) -> usize {
        match self {
            SystemConfig::Academic => AcademicSystem::STATE_DIM,
            SystemConfig::Crane { .. } => 4,
        }
    }

    pub fn build(&self) -> Result<Box<dyn DiscreteSystem>> {
        Ok(match self {
            SystemConfig::Academic => Box::new(AcademicSystem),
            SystemConfig::Crane {
                params,
                options,
                sampling_time,
            } => Box::new(CraneModel::new(*params, *options, *sampling_time)?),
        })
    }

    /// The same plant with different crane parameters.
    pub fn with_params(&self, target: CraneParams) -> Result<Self> {
        match self {
            SystemConfig::Crane {
                options,
                sampling_time,
                ..
            } => Ok(SystemConfig::Crane {
                params: target,
                options: *options,
                sampling_time: *sampling_time,
            }),
            SystemConfig::Academic => Err(Error::Config(
                "transfer needs a crane system".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub trajectories: usize,
    pub trajectory_length: usize,
    pub policy: ExcitationPolicy,
    /// Defaults to an unbounded box.
    #[serde(default)]
    pub safety: Option<SafetyBox>,
}

impl DatasetConfig {
    pub fn safety_box(&self, n: usize) -> SafetyBox {
        self.safety.clone().unwrap_or_else(|| SafetyBox::unbounded(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default)]
    pub options: TrainOptions,
    #[serde(default)]
    pub loss_weights: LossWeights,
}

/// A pole given as a real number or as `{"re": .., "im": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pole {
    Real(f64),
    Complex { re: f64, im: f64 },
}

impl Pole {
    pub fn value(self) -> Complex<f64> {
        match self {
            Pole::Real(re) => Complex::new(re, 0.0),
            Pole::Complex { re, im } => Complex::new(re, im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub poles: Vec<Pole>,
    pub horizon: usize,
    /// Physical state the plan starts from.
    pub start: Vec<f64>,
    /// Physical state the plan ends in.
    pub goal: Vec<f64>,
    /// Added to `start` to obtain the simulated initial state.
    #[serde(default)]
    pub initial_offset: Vec<f64>,
    /// Closed-loop steps; defaults to the horizon.
    #[serde(default)]
    pub steps: Option<usize>,
}

impl ControlConfig {
    pub fn gains(&self) -> Result<ControllerGains> {
        let poles: Vec<Complex<f64>> = self.poles.iter().map(|p| p.value()).collect();
        pole_placement(&poles)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.start
            .iter()
            .enumerate()
            .map(|(i, s)| s + self.initial_offset.get(i).copied().unwrap_or(0.0))
            .collect()
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or(self.horizon)
    }
}

/// Closed-loop recording campaign on the target plant and the subsequent
/// fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub target: CraneParams,
    pub experiments: usize,
    /// Range the random start and goal cart positions are drawn from.
    pub position_range: [f64; 2],
    /// Uniform initial cart offset amplitude.
    #[serde(default)]
    pub offset_amplitude: f64,
    /// Uniform input perturbation added to the controller output.
    #[serde(default)]
    pub input_noise: f64,
    #[serde(default = "TrainOptions::finetune")]
    pub training: TrainOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub system: SystemConfig,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    pub control: ControlConfig,
    #[serde(default)]
    pub transfer: Option<TransferConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Distinct seeds per consumer, all derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub dataset: u64,
    pub network: u64,
    pub shuffle: u64,
    pub split: u64,
    pub transfer: u64,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "academic" => ACADEMIC,
            "crane-nominal" => CRANE_NOMINAL,
            "crane-transfer" => CRANE_TRANSFER,
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (available: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Self::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A preset name or a path to a JSON file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if PRESET_NAMES.contains(&name_or_path) {
            return Self::preset(name_or_path);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seeds(&self) -> Seeds {
        let s = self.seed;
        Seeds {
            dataset: s,
            network: s.wrapping_mul(4).wrapping_add(1_000),
            shuffle: s.wrapping_add(2_000),
            split: s.wrapping_add(3_000),
            transfer: s.wrapping_add(4_000),
        }
    }

    /// Dataset policy with the run seed applied.
    pub fn policy(&self) -> ExcitationPolicy {
        ExcitationPolicy {
            seed: self.seeds().dataset,
            ..self.dataset.policy.clone()
        }
    }

    /// Training options with the run seed applied.
    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            seed: self.seeds().shuffle,
            ..self.training.options.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.system.state_dim();
        let cfg = |e: Error| Error::Config(e.to_string());
        if let SystemConfig::Crane {
            params,
            sampling_time,
            ..
        } = &self.system
        {
            params.validate().map_err(cfg)?;
            if !(sampling_time.is_finite() && *sampling_time > 0.0) {
                return Err(Error::Config("sampling_time must be positive".into()));
            }
        }
        self.dataset.policy.validate(n).map_err(cfg)?;
        if let Some(b) = &self.dataset.safety {
            if b.low.len() != n || b.high.len() != n {
                return Err(Error::Config(format!("safety box must have {n} entries per bound")));
            }
        }
        if self.dataset.trajectories < 2 || self.dataset.trajectory_length == 0 {
            return Err(Error::Config(
                "dataset needs at least two trajectories of positive length".into(),
            ));
        }
        if self.network.hidden == 0 {
            return Err(Error::Config("network.hidden must be positive".into()));
        }
        self.training.options.validate().map_err(cfg)?;
        self.training.loss_weights.validate().map_err(cfg)?;
        let c = &self.control;
        if c.poles.len() != n {
            return Err(Error::Config(format!("control.poles needs {n} entries")));
        }
        c.gains().map_err(cfg)?;
        if c.start.len() != n || c.goal.len() != n {
            return Err(Error::Config(format!("control.start and control.goal need {n} entries")));
        }
        if c.initial_offset.len() > n {
            return Err(Error::Config(format!("control.initial_offset has more than {n} entries")));
        }
        if c.horizon < n {
            return Err(Error::Config(format!("control.horizon must be at least {n}")));
        }
        if let Some(t) = &self.transfer {
            t.target.validate().map_err(cfg)?;
            t.training.validate().map_err(cfg)?;
            self.system.with_params(t.target)?;
            if t.experiments < 2 {
                return Err(Error::Config("transfer.experiments must be at least 2".into()));
            }
        }
        Ok(())
    }
}
