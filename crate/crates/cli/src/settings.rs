//! Configuration file and backend selection.
//!
//! The file is TOML: the engine keys at the top level plus an optional
//! `[remote]` table for the chat-completion endpoint.

use std::path::Path;
use std::sync::Arc;

use clap::ValueEnum;
use memweave_core::backends::{
    Backends, EndpointConfig, MockBehavior, MockGenerator, RemoteGenerator, TextGenerator,
};
use memweave_core::config::{EngineConfig, Policy};

use crate::error::CliError;

/// Environment variable read for the bearer token when the file names none.
pub const DEFAULT_API_KEY_VAR: &str = "MEMWEAVE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Summaries echo their prompt.
    MockEcho,
    /// Summaries are `SUM[<ids>]` templates.
    MockSum,
    /// Generation through the `[remote]` endpoint.
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub engine: EngineConfig,
    pub remote: EndpointConfig,
}

impl Settings {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Input(format!("cannot parse configuration: {e}")))?;
        let remote = match table.remove("remote") {
            Some(v) => v
                .try_into()
                .map_err(|e| CliError::Input(format!("invalid [remote] section: {e}")))?,
            None => EndpointConfig::default(),
        };
        let engine: EngineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Input(format!("cannot parse configuration: {e}")))?;
        engine.validate()?;
        Ok(Self { engine, remote })
    }

    /// Defaults when `path` is unset.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn apply_overrides(&mut self, capacity_chars: Option<usize>, policy: Option<Policy>) -> Result<(), CliError> {
        if capacity_chars.is_some() {
            self.engine.capacity_chars = capacity_chars;
        }
        if let Some(p) = policy {
            self.engine.forgetting.policy = p;
        }
        self.engine
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    fn remote_generator(&self) -> Arc<RemoteGenerator> {
        let mut cfg = self.remote.clone();
        if cfg.api_key_env_var.is_none() {
            cfg.api_key_env_var = Some(DEFAULT_API_KEY_VAR.to_string());
        }
        Arc::new(RemoteGenerator::new(cfg))
    }

    /// Backends for the engine. Similarity and reranking stay lexical.
    pub fn engine_backends(&self, kind: BackendKind) -> Backends {
        match kind {
            BackendKind::MockEcho => Backends::mock(MockBehavior::Echo),
            BackendKind::MockSum => Backends::mock(MockBehavior::TemplateSum),
            BackendKind::Remote => {
                let remote = self.remote_generator();
                Backends {
                    summarizer: remote.clone(),
                    extractor: remote.clone(),
                    merger: remote,
                    ..Backends::mock(MockBehavior::TemplateSum)
                }
            }
        }
    }

    pub fn eval_models(&self, kind: BackendKind) -> EvalModels {
        match kind {
            BackendKind::Remote => {
                let remote = self.remote_generator();
                EvalModels {
                    probe_answerer: remote.clone(),
                    table_answerer: remote.clone(),
                    judge: remote,
                }
            }
            _ => EvalModels {
                probe_answerer: Arc::new(MockGenerator::new(MockBehavior::OverlapChoice)),
                table_answerer: Arc::new(MockGenerator::new(MockBehavior::RecallEcho)),
                judge: Arc::new(MockGenerator::new(MockBehavior::OverlapJudge)),
            },
        }
    }
}

/// Generators used by the evaluation commands.
#[derive(Clone)]
pub struct EvalModels {
    pub probe_answerer: Arc<dyn TextGenerator>,
    pub table_answerer: Arc<dyn TextGenerator>,
    pub judge: Arc<dyn TextGenerator>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Settings::from_toml_str("").unwrap(), Settings::default());
    }

    #[test]
    fn remote_section_is_split_off() {
        let s = Settings::from_toml_str(
            "capacity_chars = 6000\n[forgetting]\nk = 4\n[remote]\nbase_url = \"http://x/v1\"\nmax_retries = 0\n",
        )
        .unwrap();
        assert_eq!(s.engine.capacity_chars, Some(6000));
        assert_eq!(s.engine.forgetting.k, 4);
        assert_eq!(s.remote.base_url, "http://x/v1");
        assert_eq!(s.remote.max_retries, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Settings::from_toml_str("thetaa = 3"), Err(CliError::Input(_))));
        assert!(matches!(Settings::from_toml_str("[remote]\nurl = \"x\""), Err(CliError::Input(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Settings::from_toml_str("[nsb]\ntheta1 = 1").is_err());
        let mut s = Settings::default();
        assert!(matches!(s.apply_overrides(Some(0), None), Err(CliError::Usage(_))));
    }

    #[test]
    fn overrides_apply() {
        let mut s = Settings::default();
        s.apply_overrides(Some(3000), Some(Policy::Fifo)).unwrap();
        assert_eq!(s.engine.capacity_chars, Some(3000));
        assert_eq!(s.engine.forgetting.policy, Policy::Fifo);
    }
}
