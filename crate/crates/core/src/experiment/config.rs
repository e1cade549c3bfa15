//! Declarative experiment configuration (one JSON document).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::experiment::recipes::SyntheticSpec;
use crate::llm::{LlmSettings, PromptTask};
use crate::predictor::TrainHyper;
use crate::propensity::IpwForm;
use crate::synthesis::SimulationParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    AmazonStars,
    AitaComments,
    AitaAnger,
    Synthetic,
}

impl Recipe {
    pub const ALL: [Recipe; 4] = [Recipe::AmazonStars, Recipe::AitaComments, Recipe::AitaAnger, Recipe::Synthetic];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::AmazonStars => "amazon_stars",
            Recipe::AitaComments => "aita_comments",
            Recipe::AitaAnger => "aita_anger",
            Recipe::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Recipe> {
        Recipe::ALL.into_iter().find(|r| r.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    BaselineIpw,
    Dann,
    DannIpw,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::BaselineIpw, Method::Dann, Method::DannIpw];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::BaselineIpw => "baseline_ipw",
            Method::Dann => "dann",
            Method::DannIpw => "dann_ipw",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn adversarial(self) -> bool {
        matches!(self, Method::Dann | Method::DannIpw)
    }

    pub fn weighted(self) -> bool {
        matches!(self, Method::BaselineIpw | Method::DannIpw)
    }
}

/// Schedule and batching of the adversarial variant; optimizer settings are
/// shared with `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DannSettings {
    pub gamma: f64,
    pub warmup_epochs: usize,
    pub batch_size: usize,
}

impl Default for DannSettings {
    fn default() -> Self {
        DannSettings {
            gamma: 1.0,
            warmup_epochs: 3,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpwSettings {
    pub form: IpwForm,
    /// Clamp propensities into `[clip, 1 - clip]` when set.
    pub clip: Option<f64>,
    /// Fit a temperature on each fold's validation split.
    pub calibrate: bool,
    /// Cross-fit the propensity model (otherwise one model on all data).
    pub cross_fit: bool,
}

impl Default for IpwSettings {
    fn default() -> Self {
        IpwSettings {
            form: IpwForm::Paper,
            clip: None,
            calibrate: true,
            cross_fit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionSettings {
    pub positive_stars: Vec<u8>,
    pub negative_stars: Vec<u8>,
    pub task: PromptTask,
    /// Number of topic dimensions used as covariates for forum recipes.
    pub topics: usize,
    pub max_price: f64,
    pub min_words: usize,
    /// Size of the built-in dataset when no `dataset` path is given.
    pub builtin_size: usize,
}

impl Default for InterventionSettings {
    fn default() -> Self {
        InterventionSettings {
            positive_stars: vec![5],
            negative_stars: vec![1, 2],
            task: PromptTask::AngerTransformation,
            topics: 30,
            max_price: 100.0,
            min_words: 5,
            builtin_size: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub model_id: String,
    pub temperature: f64,
    /// Overrides each task's default token limit when set.
    pub max_tokens: Option<u32>,
    /// Requests in flight at once.
    pub parallelism: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Fixture map for the mock client; the built-in fixture is used when
    /// neither this nor `http` is set.
    pub mock_fixture: Option<PathBuf>,
    /// Use the HTTP adapter instead of the mock.
    pub http: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let s = LlmSettings::default();
        LlmConfig {
            model_id: s.model_id,
            temperature: s.temperature,
            max_tokens: s.max_tokens,
            parallelism: s.parallelism,
            retries: s.retries,
            backoff_ms: s.backoff_ms,
            mock_fixture: None,
            http: false,
        }
    }
}

impl LlmConfig {
    pub fn settings(&self) -> LlmSettings {
        LlmSettings {
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            parallelism: self.parallelism,
            retries: self.retries,
            backoff_ms: self.backoff_ms,
        }
    }
}

fn default_encoder() -> Encoder {
    Encoder::hashing(4096, 0).expect("valid dimension")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub recipe: Option<Recipe>,
    /// JSONL input; for recipes it replaces the built-in dataset.
    pub dataset: Option<PathBuf>,
    #[serde(deserialize_with = "one_or_many")]
    pub method: Vec<Method>,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub encoder: Encoder,
    pub train: TrainHyper,
    pub dann: DannSettings,
    pub ipw: IpwSettings,
    pub simulation: SimulationParams<f64>,
    pub synthetic: SyntheticSpec,
    pub intervention: InterventionSettings,
    pub llm: LlmConfig,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    /// Write a checkpoint bundle per fold and model kind.
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            recipe: None,
            dataset: None,
            method: vec![Method::Baseline],
            folds: 5,
            seeds: vec![0, 1, 2, 3, 4],
            encoder: default_encoder(),
            train: TrainHyper::default(),
            dann: DannSettings::default(),
            ipw: IpwSettings::default(),
            simulation: SimulationParams::default(),
            synthetic: SyntheticSpec::default(),
            intervention: InterventionSettings::default(),
            llm: LlmConfig::default(),
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            save_checkpoints: false,
        }
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Method>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    let names = match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    };
    names
        .iter()
        .map(|s| {
            Method::parse(s).ok_or_else(|| {
                serde::de::Error::unknown_variant(s, &["baseline", "baseline_ipw", "dann", "dann_ipw"])
            })
        })
        .collect()
}

impl ExperimentConfig {
    /// Invariants serde cannot express.
    pub fn check(&self) -> Result<()> {
        let bad = |path: &str, message: &str| {
            Err(Error::TypeError {
                path: path.into(),
                message: message.into(),
            })
        };
        if self.recipe.is_none() && self.dataset.is_none() {
            return bad("recipe", "either recipe or dataset must be given");
        }
        if self.method.is_empty() {
            return bad("method", "at least one method is required");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required");
        }
        if self.folds < 2 {
            return bad("folds", "k must be at least 2");
        }
        if let Some(c) = self.ipw.clip {
            if !(c > 0.0 && c < 0.5) {
                return bad("ipw.clip", "must lie in (0, 0.5)");
            }
        }
        if self.dann.batch_size < 2 || !self.dann.batch_size.is_multiple_of(2) {
            return bad("dann.batch_size", "must be even and at least 2");
        }
        self.train.validate().map_err(|e| Error::TypeError {
            path: "train".into(),
            message: e.to_string(),
        })?;
        self.simulation.validate().map_err(|e| Error::TypeError {
            path: "simulation".into(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    /// Parses and checks a config document, mapping serde failures to
    /// errors that name the offending field.
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg = Self::parse(json)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Field-level parsing only; callers that override fields afterwards
    /// run [`check`](Self::check) themselves.
    pub fn parse(json: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(json);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().to_string();
            classify(path, msg)
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

fn between_backticks(msg: &str) -> Option<String> {
    let a = msg.find('`')? + 1;
    let b = a + msg[a..].find('`')?;
    Some(msg[a..b].to_string())
}

fn join(path: &str, leaf: &str) -> String {
    if path.is_empty() || path == "." {
        leaf.to_string()
    } else if path == leaf || path.ends_with(&format!(".{leaf}")) {
        path.to_string()
    } else {
        format!("{path}.{leaf}")
    }
}

fn classify(path: String, msg: String) -> Error {
    if msg.starts_with("unknown field") {
        let key = between_backticks(&msg).unwrap_or_default();
        Error::UnknownKey { path: join(&path, &key) }
    } else if msg.starts_with("unknown variant") {
        Error::UnknownValue {
            path,
            value: between_backticks(&msg).unwrap_or_default(),
        }
    } else {
        Error::TypeError { path, message: msg }
    }
}

/// Reads and validates a config file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(r#"{"recipe":"synthetic","method":"dann"}"#).unwrap();
        assert_eq!(c.folds, 5);
        assert_eq!(c.seeds.len(), 5);
        assert_eq!(c.dann.gamma, 1.0);
        assert_eq!(c.method, vec![Method::Dann]);
    }

    #[test]
    fn method_list() {
        let c = ExperimentConfig::from_json(r#"{"recipe":"synthetic","method":["baseline","dann_ipw"]}"#).unwrap();
        assert_eq!(c.method, vec![Method::Baseline, Method::DannIpw]);
    }

    #[test]
    fn errors_name_the_field() {
        match ExperimentConfig::from_json(r#"{"recipe":"synthetic","method":"xgboost"}"#) {
            Err(Error::UnknownValue { path, value }) => {
                assert_eq!(path, "method");
                assert_eq!(value, "xgboost");
            }
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json(r#"{"recipe":"synthetic","train":{"lr":1}}"#) {
            Err(Error::UnknownKey { path }) => assert_eq!(path, "train.lr"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json(r#"{"recipe":"synthetic","folds":"five"}"#) {
            Err(Error::TypeError { path, .. }) => assert_eq!(path, "folds"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json(r#"{"recipe":"synthetic","folds":1}"#) {
            Err(e) => assert!(e.is_config_error()),
            Ok(_) => panic!("k=1 accepted"),
        }
    }
}
