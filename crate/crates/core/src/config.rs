//! Run configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{ArchetypeKind, ArchetypeSpec, CohortConfig, VoterRule};
use crate::error::{Error, Result};
use crate::mechanism::MechanismConfig;
use crate::metagame::{DEFAULT_EPSILON, DEFAULT_REPETITIONS};
use crate::participant::{ContributionTraining, ModelGrid};
use crate::selfplay::OptimizeSchedule;

/// Where ACQUIRE gets its groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Sim,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub grid: ModelGrid,
    pub training: ContributionTraining,
    /// In live mode take contribution network sizes from the fixed
    /// per-iteration schedule instead of the grid.
    pub live_schedule: bool,
    pub include_bot_seats: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            grid: ModelGrid::default(),
            training: ContributionTraining::default(),
            live_schedule: true,
            include_bot_seats: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSection {
    #[serde(flatten)]
    pub schedule: OptimizeSchedule,
    /// Games per update.
    pub batch_size: usize,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        OptimizeSection {
            schedule: OptimizeSchedule::default(),
            batch_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetagameSection {
    pub repetitions: usize,
    pub epsilon: f64,
    /// When false the loop records convergence but keeps iterating up to
    /// the iteration cap.
    pub stop_on_convergence: bool,
}

impl Default for MetagameSection {
    fn default() -> Self {
        MetagameSection {
            repetitions: DEFAULT_REPETITIONS,
            epsilon: DEFAULT_EPSILON,
            stop_on_convergence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub groups: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { groups: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub max_iterations: usize,
    pub source: Source,
    pub cohort: CohortConfig,
    pub model: ModelSection,
    pub mechanism: MechanismConfig,
    pub optimize: OptimizeSection,
    pub metagame: MetagameSection,
    pub evaluate: EvaluateSection,
}

impl Default for CohortConfig {
    fn default() -> Self {
        let spec = |kind, voter, weight| ArchetypeSpec {
            noise: 0.15,
            weight,
            ..ArchetypeSpec::new(kind, voter)
        };
        CohortConfig {
            archetypes: vec![
                spec(ArchetypeKind::Reciprocator, VoterRule::OwnWelfare, 0.35),
                spec(ArchetypeKind::PayoffLearner, VoterRule::OwnWelfare, 0.35),
                spec(ArchetypeKind::Reciprocator, VoterRule::Fairness, 0.15),
                spec(ArchetypeKind::PayoffLearner, VoterRule::Fairness, 0.15),
            ],
            groups_per_iteration: 50,
            group_schedule: None,
            drift: None,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            max_iterations: 10,
            source: Source::Sim,
            cohort: CohortConfig::default(),
            model: ModelSection::default(),
            mechanism: MechanismConfig::default(),
            optimize: OptimizeSection::default(),
            metagame: MetagameSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        self.model.grid.validate()?;
        self.mechanism.validate()?;
        self.optimize.schedule.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.optimize.batch_size == 0 || self.optimize.batch_size % 5 != 0 {
            return Err(Error::Config(
                "optimize batch size must be a positive multiple of the 5 endowment conditions".into(),
            ));
        }
        if self.model.training.batch_size == 0 || self.model.training.epochs == 0 {
            return Err(Error::Config("model training needs epochs and a batch size".into()));
        }
        if self.metagame.repetitions == 0 || !(self.metagame.epsilon >= 0.0) {
            return Err(Error::Config("meta-game needs repetitions and ε ≥ 0".into()));
        }
        if self.evaluate.groups == 0 {
            return Err(Error::Config("evaluation needs at least one group".into()));
        }
        Ok(())
    }
}
