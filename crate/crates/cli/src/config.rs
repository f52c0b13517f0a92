//! Run configuration: one JSON file with per-subsystem sections, merged with
//! command-line overrides. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};

use pinnmpc::dynamics::{DynamicsModel, LinearTestModel, Manipulator, ManipulatorParams};
use pinnmpc::mpc::MpcConfig;
use pinnmpc::pinn::{SamplingDomain, TrainingConfig};
use pinnmpc::{Error, Result};

/// Plant/model selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `manipulator` or `linear-test`.
    pub kind: String,
    /// Manipulator parameters (used when kind = manipulator).
    pub params: ManipulatorParams,
    /// Oscillator frequency (linear-test).
    pub omega0: f64,
    /// Oscillator damping (linear-test).
    pub damping: f64,
    /// Oscillator input gain (linear-test).
    pub gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: "manipulator".to_string(),
            params: ManipulatorParams::default(),
            omega0: 2.0,
            damping: 0.5,
            gain: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<Box<dyn DynamicsModel>> {
        match self.kind.as_str() {
            "manipulator" => Ok(Box::new(Manipulator::new(self.params)?)),
            "linear-test" => {
                if !(self.omega0 > 0.0 && self.damping >= 0.0 && self.damping < 2.0 * self.omega0) {
                    return Err(Error::InvalidConfig(
                        "linear-test needs omega0 > 0 and 0 <= damping < 2 omega0".into(),
                    ));
                }
                Ok(Box::new(LinearTestModel::new(self.omega0, self.damping, self.gain)))
            }
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Timed repetitions per method.
    pub reps: usize,
    pub seed: u64,
    /// Fixed step size for the euler/rk4 rows (s).
    pub fixed_step: f64,
    /// Seeds for the fixed-step instability experiment.
    pub instability_seeds: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { reps: 1000, seed: 0, fixed_step: 0.02, instability_seeds: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".to_string() }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub domain: SamplingDomain,
    pub training: TrainingConfig,
    pub mpc: MpcConfig,
    pub bench: BenchSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.build().map(|_| ())?;
        self.domain.validate()?;
        self.training.validate()?;
        self.mpc.validate()?;
        if self.bench.reps < 100 {
            return Err(Error::InvalidConfig("bench.reps must be >= 100".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
