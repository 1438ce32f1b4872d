//! Run configuration file (TOML). Every section is optional and falls back
//! to the library defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use amc_core::features::WindowPlan;
use amc_core::modem::{CorpusSpec, ModulationClass, SynthesisConfig, FRAME_LEN};
use amc_core::network::ArchitectureConfig;
use amc_core::training::{check_plan, HyperGrid, TrainConfig};
use amc_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub classes: Vec<ModulationClass>,
    /// `inf` produces clean frames.
    pub snr_db: Vec<f64>,
    pub frames_per_cell: usize,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { classes: ModulationClass::ALL.to_vec(), snr_db: vec![0.0, 10.0, 20.0], frames_per_cell: 10, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("amc-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synthesis: SynthesisConfig,
    pub corpus: CorpusSection,
    /// Defaults to half-overlapping windows as long as the input side.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowPlan>,
    pub architecture: ArchitectureConfig,
    pub training: TrainConfig,
    pub grid: HyperGrid,
    pub output: OutputSection,
}

impl RunConfig {
    /// Desk-scale starting point: reduced geometry and a learning rate and
    /// epoch budget that suit it.
    pub fn reduced() -> Self {
        Self {
            architecture: ArchitectureConfig::reduced(),
            training: TrainConfig {
                learning_rate: 1e-3,
                drop_factor: 0.4,
                max_epochs: 30,
                patience: 5,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration is always representable as TOML")
    }

    pub fn window_plan(&self) -> WindowPlan {
        self.window.unwrap_or_else(|| self.architecture.window_plan())
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            classes: self.corpus.classes.clone(),
            snr_grid: self.corpus.snr_db.clone(),
            frames_per_cell: self.corpus.frames_per_cell,
            cfg: self.synthesis.clone(),
            seed: self.corpus.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.training.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synthesis.validate()?;
        self.architecture.validate()?;
        self.training.validate()?;
        let plan = self.window_plan();
        plan.validate(FRAME_LEN)?;
        check_plan(&plan, &self.architecture)
    }
}
