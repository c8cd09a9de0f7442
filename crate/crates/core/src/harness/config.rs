use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generator::GeneratorParams;
use super::instance::BoundKind;
use crate::envs::PredatorPreyConfig;
use crate::error::{Error, Result};
use crate::learning::TrainSchedule;
use crate::mdp::SolverSettings;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VerifyBounds,
    FruitForage,
    PredatorPrey,
    Sweep,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::VerifyBounds => "verify-bounds",
            ExperimentKind::FruitForage => "fruit-forage",
            ExperimentKind::PredatorPrey => "predator-prey",
            ExperimentKind::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FruitForageParams {
    pub grid_size: usize,
    pub num_agents: usize,
    pub gamma: f64,
    pub state_cap: usize,
    /// Joint-action Q-learning steps for the learned curves; 0 skips learning.
    pub learning_steps: u64,
    pub checkpoint_interval: u64,
    pub episode_horizon: u64,
}

impl Default for FruitForageParams {
    fn default() -> Self {
        Self {
            grid_size: 4,
            num_agents: 2,
            gamma: 0.9,
            state_cap: crate::envs::fruit_forage::DEFAULT_STATE_CAP,
            learning_steps: 200_000,
            checkpoint_interval: 20_000,
            episode_horizon: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredatorPreyParams {
    pub grid_size: usize,
    pub episode_limit: usize,
    pub prey_move_prob: f64,
    pub view_radius: Option<usize>,
    /// Suite names to run; all when empty.
    pub suites: Vec<String>,
    pub schedule: TrainSchedule,
    pub eval_episodes: usize,
}

impl Default for PredatorPreyParams {
    fn default() -> Self {
        Self {
            grid_size: 8,
            episode_limit: 100,
            prey_move_prob: 0.7,
            view_radius: None,
            suites: Vec::new(),
            schedule: TrainSchedule::default(),
            eval_episodes: 16,
        }
    }
}

impl PredatorPreyParams {
    pub fn base_config(&self, prey: Vec<u32>) -> PredatorPreyConfig {
        PredatorPreyConfig {
            grid_size: self.grid_size,
            episode_limit: self.episode_limit,
            prey_move_prob: self.prey_move_prob,
            view_radius: self.view_radius,
            ..PredatorPreyConfig::standard(vec![1; 4], prey, 0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub gammas: Vec<f64>,
    pub state_sizes: Vec<usize>,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            gammas: vec![0.5, 0.7, 0.9, 0.95],
            state_sizes: vec![2, 5, 10, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub generator: GeneratorParams,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub minimize_over_permutations: bool,
    /// Bound kinds for verify-bounds and sweep; all when absent.
    #[serde(default)]
    pub bounds: Option<Vec<BoundKind>>,
    #[serde(default)]
    pub fruit_forage: FruitForageParams,
    #[serde(default)]
    pub predator_prey: PredatorPreyParams,
    #[serde(default)]
    pub sweep: SweepParams,
    #[serde(default = "default_out")]
    pub out_dir: String,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_out() -> String {
    "results".into()
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment,
            seed: 0,
            generator: GeneratorParams::default(),
            solver: SolverSettings::default(),
            minimize_over_permutations: false,
            bounds: None,
            fruit_forage: FruitForageParams::default(),
            predator_prey: PredatorPreyParams::default(),
            sweep: SweepParams::default(),
            out_dir: default_out(),
            format: OutputFormat::Csv,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.generator.validate()?;
        self.solver
            .validate()
            .map_err(|e| Error::Config(format!("solver: {e}")))?;
        if let Some(b) = &self.bounds {
            if b.is_empty() {
                return Err(Error::Config("bounds: list must be nonempty".into()));
            }
        }
        let ff = &self.fruit_forage;
        if !(ff.gamma > 0.0 && ff.gamma < 1.0) {
            return Err(Error::Config("fruit_forage.gamma must lie in (0,1)".into()));
        }
        if ff.learning_steps > 0 && (ff.checkpoint_interval == 0 || ff.episode_horizon == 0) {
            return Err(Error::Config(
                "fruit_forage: checkpoint_interval and episode_horizon must be positive".into(),
            ));
        }
        let pp = &self.predator_prey;
        pp.schedule
            .validate()
            .map_err(|e| Error::Config(format!("predator_prey.schedule: {e}")))?;
        if pp.eval_episodes == 0 {
            return Err(Error::Config("predator_prey.eval_episodes must be >= 1".into()));
        }
        if self.sweep.gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(Error::Config("sweep.gammas must lie in (0,1)".into()));
        }
        if self.sweep.state_sizes.contains(&0) {
            return Err(Error::Config("sweep.state_sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn bound_kinds(&self) -> Vec<BoundKind> {
        self.bounds.clone().unwrap_or_else(|| BoundKind::ALL.to_vec())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Directory name used under `<out>/<experiment>/`.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}
