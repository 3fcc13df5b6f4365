//! Flat TOML configuration. Every key can be overridden on the command line.
//! The API credential is only ever read from the environment.

use std::path::{Path, PathBuf};
use std::time::Duration;

use chainshort_core::backend::API_KEY_ENV;
use chainshort_core::mining::{MiningOptions, SHORTCUTS_FILE, STATS_FILE};
use chainshort_core::{
    AgentBackend, ChatCompletionsClient, Embedder, HashEmbedder, HttpEmbedder, LanguageProfile, MemoEmbedder,
    RunConfig, Sandbox, ScriptedBackend, ShortcutLibrary, SimulatedBackend,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

const SECRET_KEYS: [&str; 4] = ["api_key", "apikey", "token", "secret"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub base_url: String,
    pub model: String,
    pub embedding_url: String,
    pub embedding_model: String,
    /// Name of the environment variable holding the credential.
    pub api_key_env: String,
    /// Rule-based agents and the hashing embedder; no network.
    pub offline: bool,
    /// Scripted replies: a JSON file, or a directory of `<task_id>.json` files.
    pub script: Option<PathBuf>,

    pub time_budget_seconds: f64,
    pub token_budget: u64,
    pub disable_selection: bool,
    pub disable_cost: bool,
    pub disable_gamma: bool,
    pub disable_shortcuts: bool,
    pub utility_floor: f64,
    pub min_reference_sim: f64,
    pub max_rounds: usize,

    /// Directory holding `shortcuts.json` and `stats.json`.
    pub library: Option<PathBuf>,
    pub language: String,
    pub timeout_seconds: f64,
    pub granularity_cap: usize,
    pub max_pairs_per_trajectory: Option<usize>,
    pub final_target_only: bool,
    pub jobs: usize,
}

impl Default for Config {
    fn default() -> Self {
        let run = RunConfig::default();
        Config {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            embedding_url: "https://api.openai.com/v1/embeddings".into(),
            embedding_model: "text-embedding-ada-002".into(),
            api_key_env: API_KEY_ENV.into(),
            offline: false,
            script: None,
            time_budget_seconds: run.time_budget_seconds,
            token_budget: run.token_budget,
            disable_selection: false,
            disable_cost: false,
            disable_gamma: false,
            disable_shortcuts: false,
            utility_floor: run.utility_floor,
            min_reference_sim: run.min_reference_sim,
            max_rounds: run.max_rounds,
            library: None,
            language: "python".into(),
            timeout_seconds: LanguageProfile::python().timeout_seconds,
            granularity_cap: chainshort_core::evalkit::DEFAULT_GRANULARITY_CAP,
            max_pairs_per_trajectory: None,
            final_target_only: false,
            jobs: 1,
        }
    }
}

impl Config {
    /// Reads a config file; relative paths in it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let raw: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(k) = raw.keys().find(|k| SECRET_KEYS.contains(&k.to_ascii_lowercase().as_str())) {
            return Err(CliError::Config(format!(
                "`{k}` is not allowed in the config file; set the credential in the environment"
            )));
        }
        let mut cfg: Config =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.library, &mut cfg.script].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.run_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.profile()?;
        if self.granularity_cap == 0 {
            return Err(CliError::Config("granularity_cap must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be positive".into()));
        }
        if let Some(s) = &self.script {
            if !s.exists() {
                return Err(CliError::Config(format!("script {} does not exist", s.display())));
            }
        }
        Ok(())
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            time_budget_seconds: self.time_budget_seconds,
            token_budget: self.token_budget,
            disable_selection: self.disable_selection,
            disable_cost: self.disable_cost,
            disable_gamma: self.disable_gamma,
            disable_shortcuts: self.disable_shortcuts,
            utility_floor: self.utility_floor,
            min_reference_sim: self.min_reference_sim,
            reference_k: 1,
            max_rounds: self.max_rounds,
        }
    }

    pub fn mining_options(&self) -> MiningOptions {
        MiningOptions {
            max_pairs_per_trajectory: self.max_pairs_per_trajectory,
            final_target_only: self.final_target_only,
        }
    }

    pub fn profile(&self) -> Result<LanguageProfile, CliError> {
        let p = LanguageProfile::by_name(&self.language)
            .ok_or_else(|| CliError::Config(format!("unknown language `{}`", self.language)))?
            .with_timeout(self.timeout_seconds);
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn sandbox(&self) -> Result<Sandbox, CliError> {
        Sandbox::new(self.profile()?).map_err(|e| CliError::Config(e.to_string()))
    }

    fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty())
    }

    /// Backend for one task (or for mining, with `task_id = None`).
    pub fn backend(&self, task_id: Option<&str>) -> Result<Box<dyn AgentBackend>, CliError> {
        if let Some(script) = &self.script {
            let file = match task_id {
                Some(id) if script.is_dir() => script.join(format!("{id}.json")),
                _ => script.clone(),
            };
            let b = ScriptedBackend::from_file(&file)
                .map_err(|e| CliError::Config(format!("script {}: {e}", file.display())))?;
            return Ok(Box::new(b));
        }
        if self.offline {
            return Ok(Box::new(SimulatedBackend::default()));
        }
        let client = ChatCompletionsClient::new(&self.base_url, &self.model, self.api_key())
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Box::new(client))
    }

    pub fn embedder(&self) -> Result<Box<dyn Embedder>, CliError> {
        if self.offline || self.script.is_some() {
            return Ok(Box::new(HashEmbedder::default()));
        }
        let e = HttpEmbedder::new(&self.embedding_url, &self.embedding_model, self.api_key())
            .map_err(|e| CliError::Config(e.to_string()))?
            .with_retry(3, Duration::from_millis(500));
        Ok(Box::new(MemoEmbedder::new(e)))
    }

    pub fn load_library(&self) -> Result<ShortcutLibrary, CliError> {
        let dir = self
            .library
            .as_ref()
            .ok_or_else(|| CliError::Config("no shortcut library configured (--library)".into()))?;
        let (shortcuts, stats) = (dir.join(SHORTCUTS_FILE), dir.join(STATS_FILE));
        for f in [&shortcuts, &stats] {
            if !f.is_file() {
                return Err(CliError::Config(format!("missing {}", f.display())));
            }
        }
        ShortcutLibrary::read_from(&shortcuts, &stats)
            .map_err(|e| CliError::Config(format!("library {}: {e}", dir.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_keys_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "offline = true\ntoken_budget = 500\nlibrary = \"lib\"\n").unwrap();
        let cfg = Config::load(&path).unwrap();
        assert!(cfg.offline);
        assert_eq!(cfg.token_budget, 500);
        assert_eq!(cfg.library, Some(dir.path().join("lib")));
        assert_eq!(cfg.model, Config::default().model);
    }

    #[test]
    fn credentials_and_unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "api_key = \"sk-1\"\n").unwrap();
        assert!(matches!(Config::load(&path), Err(CliError::Config(m)) if m.contains("environment")));
        std::fs::write(&path, "budget = 3\n").unwrap();
        assert!(matches!(Config::load(&path), Err(CliError::Config(_))));
    }

    #[test]
    fn validation() {
        assert!(Config::default().validate().is_ok());
        let bad = Config {
            time_budget_seconds: 0.0,
            ..Config::default()
        };
        assert!(bad.validate().is_err());
        let bad = Config {
            language: "cobol".into(),
            ..Config::default()
        };
        assert!(bad.validate().is_err());
    }
}
