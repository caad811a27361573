//! TOML configuration covering the environment, policy training, assessment
//! and both experiments. Every field has a default; a file only needs the
//! keys it overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assessment::{AssessConfig, Outcome, OutcomeThreshold, TriggerConfig};
use crate::error::{Error, Result};
use crate::gridworld::EnvConfig;
use crate::policy::TrainParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessSettings {
    /// World-model rollouts per goal per assessment.
    pub n_rollouts: usize,
    /// Surprise threshold applied to every monitored marginal.
    pub delta: f64,
    /// Optional per-marginal thresholds `[s_c, s_z]`; overrides `delta`.
    pub deltas: Option<Vec<f64>>,
    /// Highest acceptable crater count; defaults to `hit_budget - 1`.
    pub max_craters_hit: Option<f64>,
    pub min_delivered: f64,
}

impl Default for AssessSettings {
    fn default() -> Self {
        AssessSettings {
            n_rollouts: 50,
            delta: 0.05,
            deltas: None,
            max_craters_hit: None,
            min_delivered: 1.0,
        }
    }
}

impl AssessSettings {
    pub fn to_assess_config(&self, env: &EnvConfig) -> AssessConfig {
        let crater_z = self
            .max_craters_hit
            .unwrap_or(f64::from(env.hit_budget.saturating_sub(1)));
        AssessConfig {
            n_rollouts: self.n_rollouts,
            thresholds: vec![
                OutcomeThreshold::new(Outcome::CratersHit, crater_z),
                OutcomeThreshold::new(Outcome::Delivered, self.min_delivered),
            ],
            trigger: match &self.deltas {
                Some(d) => TriggerConfig { deltas: d.clone() },
                None => TriggerConfig::uniform(self.delta),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp1Settings {
    /// Timestep at which the dynamic environment resamples every obstacle.
    pub change_t: u32,
}

impl Default for Exp1Settings {
    fn default() -> Self {
        Exp1Settings { change_t: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp2Settings {
    /// Index of the single goal pursued.
    pub goal: usize,
    pub first_change_t: u32,
    pub second_change_t: u32,
    /// Obstacles added by an add event; default to the environment counts.
    pub add_craters: Option<u32>,
    pub add_dust: Option<u32>,
}

impl Default for Exp2Settings {
    fn default() -> Self {
        Exp2Settings {
            goal: 1,
            first_change_t: 10,
            second_change_t: 30,
            add_craters: None,
            add_dust: None,
        }
    }
}

/// Settings for the single verbose episode of the `assess` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSettings {
    /// `static` or `dynamic`.
    pub environment: String,
    /// `none`, `goa` or `etgoa`.
    pub condition: String,
    pub episode: u64,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        EpisodeSettings {
            environment: "dynamic".into(),
            condition: "etgoa".into(),
            episode: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Directory holding `goal{i}.qtab` files.
    pub policies_dir: Option<PathBuf>,
    pub env: EnvConfig,
    pub train: TrainParams,
    pub assess: AssessSettings,
    pub exp1: Exp1Settings,
    pub exp2: Exp2Settings,
    pub episode: EpisodeSettings,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = toml::from_str(&text).map_err(|source| Error::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let a = &self.assess;
        if a.n_rollouts == 0 {
            return Err(Error::Config("assess.n_rollouts must be at least 1".into()));
        }
        if let Some(d) = &a.deltas {
            if d.len() != 2 {
                return Err(Error::Config(format!(
                    "assess.deltas needs 2 entries (s_c, s_z), got {}",
                    d.len()
                )));
            }
        }
        if self.exp2.goal >= self.env.goals.len() {
            return Err(Error::Config(format!(
                "exp2.goal {} out of range for {} goals",
                self.exp2.goal,
                self.env.goals.len()
            )));
        }
        if self.exp2.first_change_t >= self.exp2.second_change_t {
            return Err(Error::Config("exp2 change times must increase".into()));
        }
        Ok(())
    }

    pub fn assess_config(&self) -> AssessConfig {
        self.assess.to_assess_config(&self.env)
    }

    /// The configuration with every default spelled out, as TOML.
    pub fn documented_defaults() -> String {
        toml::to_string_pretty(&Config::default()).expect("defaults serialize")
    }
}
