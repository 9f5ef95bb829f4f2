//! Engine configuration: a TOML file, then `CREAM_*` environment overrides,
//! then command-line overrides, each layer replacing the one before.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use chrono_tz::Tz;
use cream_core::corpus::US_EASTERN;
use cream_core::generator::{Endpoint, ProviderRef};
use cream_core::pairing::{default_split_date, PairingConfig};
use cream_core::scorer::{AssemblyMode, TrainConfig};
use cream_core::tournament::ParaphraseConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for {key}: {message}")]
    InvalidValue { key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot create {path}: {source}")]
    Create { path: PathBuf, source: std::io::Error },
}

/// A named explanation provider. `recordings` backs a `replay` endpoint with
/// a JSON array of `{prompt, text}` answers in addition to the cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(flatten)]
    pub reference: ProviderRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recordings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerBackend {
    /// The linear model stored at `model_path`.
    #[default]
    Model,
    Remote { url: String },
    /// JSON array of `{t1, t2, p_t1}` recorded scores.
    Replay { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParaphraserBackend {
    Http { url: String },
    /// JSON array of `{text, paraphrases}` recorded outputs.
    Replay { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaggerBackend {
    Http { url: String },
    Constant { label: String, prob: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub reference_timezone: Tz,
    /// First local day of the validation split.
    pub split_date: NaiveDate,
    pub pairing: PairingConfig,
    pub train: TrainConfig,
    pub assembly_mode: AssemblyMode,
    pub providers: BTreeMap<String, ProviderConfig>,
    /// Name of the provider answering "why is this engaging".
    pub explainer: String,
    pub paraphraser: Option<ParaphraserBackend>,
    pub paraphrase: ParaphraseConfig,
    pub scorer: ScorerBackend,
    pub tagger: Option<TaggerBackend>,
    pub cache_dir: PathBuf,
    pub model_path: PathBuf,
    pub run_log: PathBuf,
    pub artifacts_dir: PathBuf,
    pub listen: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let claude = ProviderRef {
            endpoint: Endpoint::Replay,
            ..ProviderRef::stub("claude", "claude-v1")
        };
        Self {
            reference_timezone: US_EASTERN,
            split_date: default_split_date(),
            pairing: PairingConfig::default(),
            train: TrainConfig::default(),
            assembly_mode: AssemblyMode::PairPlusExplanations,
            providers: BTreeMap::from([("claude".to_string(), ProviderConfig { reference: claude, recordings: None })]),
            explainer: "claude".into(),
            paraphraser: None,
            paraphrase: ParaphraseConfig::default(),
            scorer: ScorerBackend::Model,
            tagger: None,
            cache_dir: PathBuf::from("cream-data/cache"),
            model_path: PathBuf::from("cream-data/model.bin"),
            run_log: PathBuf::from("cream-data/runs.jsonl"),
            artifacts_dir: PathBuf::from("cream-data/artifacts"),
            listen: "127.0.0.1:8080".into(),
        }
    }
}

/// Values settable from the environment or the command line. `None` leaves
/// the lower layer in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub reference_timezone: Option<Tz>,
    pub split_date: Option<NaiveDate>,
    pub assembly_mode: Option<AssemblyMode>,
    pub explainer: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub run_log: Option<PathBuf>,
    pub artifacts_dir: Option<PathBuf>,
    pub listen: Option<String>,
    pub seed: Option<u64>,
    pub paraphraser_url: Option<String>,
    pub scorer_url: Option<String>,
    /// Endpoint per named provider.
    pub provider_endpoints: BTreeMap<String, Endpoint>,
}

pub const ENV_CONFIG: &str = "CREAM_CONFIG";
const ENV_PROVIDER_PREFIX: &str = "CREAM_PROVIDER_";
const ENV_PROVIDER_SUFFIX: &str = "_ENDPOINT";

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue { key: key.into(), message: e.to_string() })
}

impl ConfigOverrides {
    /// Reads `CREAM_*` variables. Provider endpoints use
    /// `CREAM_PROVIDER_<NAME>_ENDPOINT`, with `<NAME>` matched case-insensitively.
    pub fn from_env(env: &HashMap<String, String>) -> Result<Self, ConfigError> {
        let get = |k: &str| env.get(k).filter(|v| !v.is_empty());
        let mut o = ConfigOverrides::default();
        if let Some(v) = get("CREAM_TIMEZONE") {
            o.reference_timezone = Some(parse("CREAM_TIMEZONE", v)?);
        }
        if let Some(v) = get("CREAM_SPLIT_DATE") {
            o.split_date = Some(parse("CREAM_SPLIT_DATE", v)?);
        }
        if let Some(v) = get("CREAM_ASSEMBLY_MODE") {
            o.assembly_mode = Some(parse("CREAM_ASSEMBLY_MODE", v)?);
        }
        if let Some(v) = get("CREAM_SEED") {
            o.seed = Some(parse("CREAM_SEED", v)?);
        }
        o.explainer = get("CREAM_EXPLAINER").cloned();
        o.cache_dir = get("CREAM_CACHE_DIR").map(PathBuf::from);
        o.model_path = get("CREAM_MODEL_PATH").map(PathBuf::from);
        o.run_log = get("CREAM_RUN_LOG").map(PathBuf::from);
        o.artifacts_dir = get("CREAM_ARTIFACTS_DIR").map(PathBuf::from);
        o.listen = get("CREAM_LISTEN").cloned();
        o.paraphraser_url = get("CREAM_PARAPHRASER_URL").cloned();
        o.scorer_url = get("CREAM_SCORER_URL").cloned();
        for (k, v) in env {
            if let Some(name) = k.strip_prefix(ENV_PROVIDER_PREFIX).and_then(|r| r.strip_suffix(ENV_PROVIDER_SUFFIX)) {
                let endpoint = Endpoint::try_from(v.clone())
                    .map_err(|message| ConfigError::InvalidValue { key: k.clone(), message })?;
                o.provider_endpoints.insert(name.to_ascii_lowercase(), endpoint);
            }
        }
        Ok(o)
    }
}

impl EngineConfig {
    /// Parses TOML text. Relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, String> {
        let mut config: EngineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.rebase(base_dir);
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|message| ConfigError::Parse { path: path.into(), message })
    }

    /// File (explicit path, else `CREAM_CONFIG`, else defaults) < environment < flags.
    pub fn resolve(
        file: Option<&Path>,
        env: &HashMap<String, String>,
        flags: &ConfigOverrides,
    ) -> Result<Self, ConfigError> {
        let env_path = env.get(ENV_CONFIG).filter(|v| !v.is_empty()).map(PathBuf::from);
        let mut config = match file.map(Path::to_path_buf).or(env_path) {
            Some(path) => Self::from_file(&path)?,
            None => Self::default(),
        };
        config.apply(&ConfigOverrides::from_env(env)?);
        config.apply(flags);
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &ConfigOverrides) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &o.$field {
                    self.$field = v.clone();
                }
            };
        }
        set!(reference_timezone);
        set!(split_date);
        set!(assembly_mode);
        set!(explainer);
        set!(cache_dir);
        set!(model_path);
        set!(run_log);
        set!(artifacts_dir);
        set!(listen);
        if let Some(seed) = o.seed {
            self.train.seed = seed;
            self.pairing.order_seed = seed;
        }
        if let Some(url) = &o.paraphraser_url {
            self.paraphraser = Some(ParaphraserBackend::Http { url: url.clone() });
        }
        if let Some(url) = &o.scorer_url {
            self.scorer = ScorerBackend::Remote { url: url.clone() };
        }
        for (name, endpoint) in &o.provider_endpoints {
            if let Some(p) = self.providers.iter_mut().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, p)| p) {
                p.reference.endpoint = endpoint.clone();
            }
        }
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.cache_dir, &mut self.model_path, &mut self.run_log, &mut self.artifacts_dir] {
            fix(p);
        }
        for provider in self.providers.values_mut() {
            if let Some(r) = provider.recordings.as_mut() {
                fix(r);
            }
        }
        if let Some(ParaphraserBackend::Replay { path }) = self.paraphraser.as_mut() {
            fix(path);
        }
        if let ScorerBackend::Replay { path } = &mut self.scorer {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.pairing.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.paraphrase.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !self.providers.is_empty() && !self.providers.contains_key(&self.explainer) {
            return invalid(format!("explainer `{}` is not a configured provider", self.explainer));
        }
        let mut ids = std::collections::HashSet::new();
        for (name, p) in &self.providers {
            p.reference.validate().map_err(|e| ConfigError::Invalid(format!("provider `{name}`: {e}")))?;
            if !ids.insert((&p.reference.provider_id, &p.reference.model_id)) {
                return invalid(format!("provider `{name}` duplicates another provider's id and model"));
            }
        }
        if let Some(TaggerBackend::Constant { prob, .. }) = &self.tagger {
            if !(0.0..=1.0).contains(prob) {
                return invalid("tagger prob must be in [0, 1]".into());
            }
        }
        Ok(())
    }

    /// Creates the directories the engine writes into.
    pub fn prepare_dirs(&self) -> Result<(), ConfigError> {
        let mut dirs = vec![self.cache_dir.clone(), self.artifacts_dir.clone()];
        for file in [&self.model_path, &self.run_log] {
            if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
                dirs.push(parent.to_path_buf());
            }
        }
        for dir in dirs {
            std::fs::create_dir_all(&dir).map_err(|source| ConfigError::Create { path: dir, source })?;
        }
        Ok(())
    }

    /// Digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        cream_core::digest::sha256_hex(&bytes)
    }

    pub fn explainer_config(&self) -> Option<&ProviderConfig> {
        self.providers.get(&self.explainer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = EngineConfig::default();
        c.validate().unwrap();
        let text = toml::to_string(&c).unwrap();
        let back = EngineConfig::from_toml(&text, Path::new("/")).unwrap();
        assert_eq!(back.digest(), {
            let mut rebased = c.clone();
            rebased.rebase(Path::new("/"));
            rebased.digest()
        });
    }

    #[test]
    fn precedence_is_file_then_env_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cream.toml");
        std::fs::write(&path, "cache_dir = \"from-file\"\nmodel_path = \"/abs/model.bin\"\n[train]\nseed = 1\n").unwrap();
        let e = env(&[("CREAM_CACHE_DIR", "from-env"), ("CREAM_SEED", "2")]);
        let c = EngineConfig::resolve(Some(&path), &e, &ConfigOverrides::default()).unwrap();
        assert_eq!(c.cache_dir, PathBuf::from("from-env"));
        assert_eq!(c.model_path, PathBuf::from("/abs/model.bin"));
        assert_eq!(c.train.seed, 2);
        let flags = ConfigOverrides { cache_dir: Some("from-flag".into()), ..Default::default() };
        let c = EngineConfig::resolve(Some(&path), &e, &flags).unwrap();
        assert_eq!(c.cache_dir, PathBuf::from("from-flag"));

        let file_only = EngineConfig::resolve(Some(&path), &HashMap::new(), &ConfigOverrides::default()).unwrap();
        assert_eq!(file_only.cache_dir, dir.path().join("from-file"));
        assert_eq!(file_only.train.seed, 1);
    }

    #[test]
    fn provider_endpoint_from_env() {
        let e = env(&[("CREAM_PROVIDER_CLAUDE_ENDPOINT", "http://localhost:9000/complete")]);
        let c = EngineConfig::resolve(None, &e, &ConfigOverrides::default()).unwrap();
        assert_eq!(c.providers["claude"].reference.endpoint, Endpoint::Http("http://localhost:9000/complete".into()));
        let bad = env(&[("CREAM_PROVIDER_CLAUDE_ENDPOINT", "ftp://x")]);
        assert!(matches!(EngineConfig::resolve(None, &bad, &ConfigOverrides::default()), Err(ConfigError::InvalidValue { .. })));
    }

    #[test]
    fn unknown_keys_and_bad_explainer_are_rejected() {
        assert!(EngineConfig::from_toml("nonsense = 1", Path::new(".")).is_err());
        let c = EngineConfig { explainer: "nobody".into(), ..EngineConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn providers_parse_from_toml() {
        let text = r#"
explainer = "flan"
[providers.flan]
provider_id = "flan"
model_id = "flan-ul2"
endpoint = "replay"
recordings = "flan.json"
[scorer]
kind = "replay"
path = "scores.json"
"#;
        let c = EngineConfig::from_toml(text, Path::new("/fixtures")).unwrap();
        c.validate().unwrap();
        assert_eq!(c.providers["flan"].recordings.as_deref(), Some(Path::new("/fixtures/flan.json")));
        assert_eq!(c.scorer, ScorerBackend::Replay { path: "/fixtures/scores.json".into() });
        assert_eq!(c.providers["flan"].reference.max_response_tokens, 200);
    }
}
