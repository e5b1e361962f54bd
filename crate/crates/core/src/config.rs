//! Engine configuration. Every tunable parameter is a named key with its
//! default, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical;
use crate::error::ConfigError;
use crate::pcb::{default_schema, validate_schema, PersonaKeySchema};
use crate::prompts::PromptSet;
use crate::types::Speaker;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NsbConfig {
    /// Rounds packaged into one level-1 unit.
    pub theta1: usize,
    /// Level-1 units summarized into one level-2 unit.
    pub theta2: usize,
    /// Level-2 units summarized into one level-3 unit.
    pub theta3: usize,
    pub summary_max_length: usize,
}

impl Default for NsbConfig {
    fn default() -> Self {
        Self {
            theta1: 6,
            theta2: 5,
            theta3: 5,
            summary_max_length: 512,
        }
    }
}

impl NsbConfig {
    /// Number of children needed to build a unit at `level` (2 or 3).
    pub fn fan_in(&self, level: u8) -> usize {
        match level {
            1 => self.theta1,
            2 => self.theta2,
            _ => self.theta3,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("theta1", self.theta1), ("theta2", self.theta2), ("theta3", self.theta3)] {
            if v < 2 {
                return Err(ConfigError::Invalid(format!("nsb.{name} must be >= 2, got {v}")));
            }
        }
        if self.summary_max_length == 0 {
            return Err(ConfigError::Invalid("nsb.summary_max_length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcbConfig {
    pub snapshot_interval_rounds: u64,
    /// Similarity at or above which a partner-key value counts as contradicted.
    pub contradiction_threshold: f64,
    pub schema: Vec<PersonaKeySchema>,
    pub extraction_max_length: usize,
    pub merge_max_length: usize,
}

impl Default for PcbConfig {
    fn default() -> Self {
        Self {
            snapshot_interval_rounds: 10,
            contradiction_threshold: 0.8,
            schema: default_schema(),
            extraction_max_length: 1024,
            merge_max_length: 512,
        }
    }
}

impl PcbConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.snapshot_interval_rounds == 0 {
            return Err(ConfigError::Invalid("pcb.snapshot_interval_rounds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.contradiction_threshold) {
            return Err(ConfigError::Invalid(format!(
                "pcb.contradiction_threshold must lie in [0, 1], got {}",
                self.contradiction_threshold
            )));
        }
        if self.extraction_max_length == 0 || self.merge_max_length == 0 {
            return Err(ConfigError::Invalid("pcb max lengths must be positive".into()));
        }
        validate_schema(&self.schema)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    CompetitionInhibition,
    Ebbinghaus,
    Fifo,
    NoInhibition,
    None,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::CompetitionInhibition => "competition_inhibition",
            Policy::Ebbinghaus => "ebbinghaus",
            Policy::Fifo => "fifo",
            Policy::NoInhibition => "no_inhibition",
            Policy::None => "none",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "competition_inhibition" => Ok(Policy::CompetitionInhibition),
            "ebbinghaus" => Ok(Policy::Ebbinghaus),
            "fifo" => Ok(Policy::Fifo),
            "no_inhibition" => Ok(Policy::NoInhibition),
            "none" => Ok(Policy::None),
            other => Err(ConfigError::Invalid(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgettingConfig {
    /// Weight of the temporal-decay term.
    pub alpha: f64,
    /// Weight of the retrieval-reinforcement term.
    pub beta: f64,
    /// Decay rate inside the exponential.
    pub gamma: f64,
    pub epsilon: f64,
    /// Size of the relevant set; the next `k` candidates are the noisy set.
    pub k: usize,
    pub policy: Policy,
    /// Most recent retrieval rounds kept per memory.
    pub retrieval_history_cap: usize,
}

impl Default for ForgettingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.9,
            gamma: 1.0,
            epsilon: 1e-6,
            k: 9,
            policy: Policy::CompetitionInhibition,
            retrieval_history_cap: 64,
        }
    }
}

impl ForgettingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let finite = [self.alpha, self.beta, self.gamma, self.epsilon]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(ConfigError::Invalid("forgetting parameters must be finite".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(ConfigError::Invalid("forgetting.alpha and beta must be >= 0".into()));
        }
        if self.epsilon <= 0.0 || self.epsilon >= 1.0 {
            return Err(ConfigError::Invalid("forgetting.epsilon must lie in (0, 1)".into()));
        }
        if self.k == 0 {
            return Err(ConfigError::Invalid("forgetting.k must be >= 1".into()));
        }
        if self.retrieval_history_cap == 0 {
            return Err(ConfigError::Invalid("forgetting.retrieval_history_cap must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub nsb: NsbConfig,
    pub pcb: PcbConfig,
    pub forgetting: ForgettingConfig,
    /// Number of memories returned by read-only retrieval.
    pub retrieval_k: usize,
    /// Total characters of memory text the pool may hold; unbounded when unset.
    pub capacity_chars: Option<usize>,
    /// Required speaker of turn 0; either speaker may open when unset.
    pub first_speaker: Option<Speaker>,
    /// Text-generator calls allowed per completed round.
    pub max_generator_calls_per_round: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            nsb: NsbConfig::default(),
            pcb: PcbConfig::default(),
            forgetting: ForgettingConfig::default(),
            retrieval_k: 9,
            capacity_chars: None,
            first_speaker: None,
            max_generator_calls_per_round: 16,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.nsb.validate()?;
        self.pcb.validate()?;
        self.forgetting.validate()?;
        if self.retrieval_k == 0 {
            return Err(ConfigError::Invalid("retrieval_k must be >= 1".into()));
        }
        if self.capacity_chars == Some(0) {
            return Err(ConfigError::Invalid("capacity_chars must be positive".into()));
        }
        if self.max_generator_calls_per_round == 0 {
            return Err(ConfigError::Invalid("max_generator_calls_per_round must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Stable digest of the configuration and the prompt templates in use.
    pub fn config_hash(&self, prompts: &PromptSet) -> String {
        let value = serde_json::json!({
            "config": self,
            "prompts": prompts,
        });
        let bytes = canonical::to_vec(&value);
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = EngineConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.nsb.theta1, cfg.nsb.theta2, cfg.nsb.theta3), (6, 5, 5));
        assert_eq!(cfg.forgetting.alpha, 0.1);
        assert_eq!(cfg.forgetting.beta, 0.9);
        assert_eq!(cfg.forgetting.gamma, 1.0);
        assert_eq!(cfg.forgetting.k, 9);
        assert_eq!(cfg.pcb.snapshot_interval_rounds, 10);
        assert_eq!(cfg.pcb.contradiction_threshold, 0.8);
    }

    #[test]
    fn toml_overrides() {
        let cfg = EngineConfig::from_toml_str(
            r#"
            capacity_chars = 3000
            [nsb]
            theta1 = 4
            [forgetting]
            policy = "fifo"
            k = 3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.nsb.theta1, 4);
        assert_eq!(cfg.nsb.theta2, 5);
        assert_eq!(cfg.forgetting.policy, Policy::Fifo);
        assert_eq!(cfg.capacity_chars, Some(3000));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(EngineConfig::from_toml_str("[nsb]\ntheta1 = 1").is_err());
        assert!(EngineConfig::from_toml_str("[forgetting]\nk = 0").is_err());
        assert!(EngineConfig::from_toml_str("[pcb]\ncontradiction_threshold = 1.5").is_err());
        assert!(EngineConfig::from_toml_str("retrieval_k = 0").is_err());
        assert!(EngineConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn hash_tracks_config_and_prompts() {
        let prompts = PromptSet::default();
        let a = EngineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.config_hash(&prompts), b.config_hash(&prompts));
        b.forgetting.k = 5;
        assert_ne!(a.config_hash(&prompts), b.config_hash(&prompts));
        let mut p2 = prompts.clone();
        p2.summarize_level2.push('!');
        assert_ne!(a.config_hash(&prompts), a.config_hash(&p2));
    }

    #[test]
    fn policy_parses() {
        assert_eq!("no-inhibition".parse::<Policy>().unwrap(), Policy::NoInhibition);
        assert!("lru".parse::<Policy>().is_err());
    }
}
