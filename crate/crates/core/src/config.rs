//! Run configuration: one TOML document holding every setting of a run.
//! Only the API key is read from the environment.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::{EndpointConfig, TaskContext};
use crate::harness::HarnessConfig;
use crate::reward::{MetricSpec, RewardParams};
use crate::sim::LandscapeParams;
use crate::tree::SearchConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Sim,
    Llm,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sim => "sim",
            Mode::Llm => "llm",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(Mode::Sim),
            "llm" => Ok(Mode::Llm),
            other => Err(format!("unknown mode {other:?} (expected sim or llm)")),
        }
    }
}

/// Options that only matter for model-driven runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    /// Ask the model to judge lesson duplicates instead of shingle similarity.
    pub model_dedup: bool,
    /// Unit-test each module while drafting.
    pub module_tests: bool,
    /// Time limit of one module test; defaults to the node limit.
    pub module_test_limit: Option<f64>,
    pub module_max_debug: u32,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model_dedup: true,
            module_tests: true,
            module_test_limit: None,
            module_max_debug: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Run directory receiving the log, exports, lessons and best solution.
    pub output: PathBuf,
    /// Directory of prompt overrides; missing files fall back to the built-in assets.
    pub prompts: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output: PathBuf::from("run"),
            prompts: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub search: SearchConfig,
    pub reward: RewardParams,
    /// Required in llm mode unless the model should infer it from the task.
    pub metric: Option<MetricSpec>,
    /// Sim mode only.
    pub landscape: Option<LandscapeParams>,
    /// Llm mode only.
    pub endpoint: Option<EndpointConfig>,
    pub harness: HarnessConfig,
    pub task: TaskContext,
    pub llm: LlmSettings,
    pub paths: Paths,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file; relative output and prompt paths are resolved
    /// against the file's directory. Not validated, so that command-line
    /// overrides can be applied first.
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.paths.output.is_relative() {
            cfg.paths.output = base.join(&cfg.paths.output);
        }
        if let Some(p) = cfg.paths.prompts.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.search.violations();
        if let Err(e) = self.reward.validate() {
            v.push(format!("reward.w: {e}"));
        }
        if let Some(m) = &self.metric {
            if m.name.trim().is_empty() {
                v.push("metric.name must be non-empty".into());
            }
        }
        match self.mode {
            Mode::Sim => {
                if self.endpoint.is_some() {
                    v.push("[endpoint] is only valid with mode = \"llm\"".into());
                }
                if let Some(l) = &self.landscape {
                    v.extend(l.violations());
                }
            }
            Mode::Llm => {
                if self.landscape.is_some() {
                    v.push("[landscape] is only valid with mode = \"sim\"".into());
                }
                match &self.endpoint {
                    Some(e) => v.extend(e.violations()),
                    None => v.push("mode = \"llm\" requires an [endpoint] section".into()),
                }
                if self.harness.entry_command.is_empty() {
                    v.push("harness.entry_command must be non-empty".into());
                }
                if self.llm.module_test_limit.is_some_and(|l| !(l > 0.0)) {
                    v.push("llm.module_test_limit must be > 0".into());
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    pub fn landscape(&self) -> LandscapeParams {
        self.landscape.clone().unwrap_or_default()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.mode, Mode::Sim);
        assert_eq!(cfg.search.limit(), 200.0 / 6.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn positive_weight_rejected() {
        let cfg = RunConfig::from_toml_str("[reward]\nw = 0.1\n").unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("reward.w"), "{err}");
    }

    #[test]
    fn every_violation_is_listed() {
        let cfg = RunConfig::from_toml_str(
            "mode = \"llm\"\n[search]\ntime_budget = -1\nnum_trees = 0\n[reward]\nw = 2\n[landscape]\n",
        )
        .unwrap();
        let v = cfg.violations();
        assert!(v.iter().any(|s| s.contains("time_budget")));
        assert!(v.iter().any(|s| s.contains("num_trees")));
        assert!(v.iter().any(|s| s.contains("reward.w")));
        assert!(v.iter().any(|s| s.contains("[landscape]")));
        assert!(v.iter().any(|s| s.contains("[endpoint]")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("[search]\nbudget = 3\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.search.seed = 9;
        cfg.landscape = Some(LandscapeParams::default());
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
