//! The single JSON run configuration shared by every CLI command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grounder::NoiseProfile;
use crate::integrator::{parse_policy_list, IntegrationPolicy};
use crate::rtscore::TrainConfig;
use crate::synthworld::GenConfig;
use crate::tracker::TrackerConfig;
use crate::{Error, Result};

pub const CONFIG_FORMAT: &str = "gti-run-config-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format: String,
    /// Master seed for dataset generation and training.
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub gen: GenConfig,
    pub noise: NoiseProfile,
    pub tracker: TrackerConfig,
    pub train: TrainConfig,
    /// Policy names; `all` expands to the registry.
    pub policies: Vec<String>,
    /// Benchmark run seeds; each re-keys the grounder noise.
    pub seeds: Vec<u64>,
    pub include_ambiguous: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format: CONFIG_FORMAT.into(),
            seed: 0,
            dataset: None,
            samples: None,
            model: None,
            output: None,
            gen: GenConfig::default(),
            noise: NoiseProfile::default(),
            tracker: TrackerConfig::default(),
            train: TrainConfig::default(),
            policies: vec!["all".into()],
            seeds: vec![0, 1, 2],
            include_ambiguous: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CONFIG_FORMAT {
            return Err(Error::Config(format!("unsupported config format {:?}", self.format)));
        }
        self.gen.validate()?;
        self.noise.validate()?;
        self.tracker.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.policy_list()?;
        Ok(())
    }

    pub fn policy_list(&self) -> Result<Vec<IntegrationPolicy>> {
        parse_policy_list(&self.policies.join(","))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 4, "tracker": {"search_radius": 10}}"#).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.tracker.search_radius, 10);
        assert_eq!(c.tracker.template_size, 32);
    }

    #[test]
    fn unknown_keys_and_policies_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"sed": 4}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
        std::fs::write(&p, r#"{"policies": ["ours-xyz"]}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(&dir.path().join("missing.json")), Err(Error::Io { .. })));
    }
}
