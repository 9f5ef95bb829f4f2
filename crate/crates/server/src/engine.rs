//! Shared engine state and the request handlers behind both the CLI and the
//! HTTP service.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use cream_core::generator::{
    Endpoint, Generator, GeneratorError, ReplayProvider, ResponseCache, StubProvider,
};
use cream_core::scorer::{AssemblyMode, PairScorer, PairwiseModel, RemoteScorer, ReplayScorer, ScorerError};
use cream_core::tournament::{
    generate_candidates, select_with, HttpParaphraser, ParaphraserClient, ReplayParaphraser, Strategy,
    TournamentError,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{EngineConfig, ParaphraserBackend, ProviderConfig, ScorerBackend};
use crate::runlog::{ArtifactStore, RunKind, RunLog, RunRecord};

/// Upper bound on paraphrases per compose request.
pub const MAX_CANDIDATES: usize = 20;

/// Error body `{code, message, detail}` plus the HTTP status it maps to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>, detail: Value) -> Self {
        Self { status, code: code.into(), message: message.into(), detail }
    }

    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        Self::new(400, "validation_error", message, json!({ "field": field }))
    }

    pub fn model_not_loaded(detail: impl Into<String>) -> Self {
        Self::new(503, "model_not_loaded", "no scorer is loaded", json!({ "reason": detail.into() }))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "internal_error", message, Value::Null)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<GeneratorError> for ApiError {
    fn from(e: GeneratorError) -> Self {
        let message = e.to_string();
        match e {
            GeneratorError::EmptyText => ApiError::validation("text", message),
            GeneratorError::ProviderUnavailable(_) | GeneratorError::EmptyResponse => {
                ApiError::new(502, "provider_unavailable", message, Value::Null)
            }
            GeneratorError::ProviderRefusal(_) => ApiError::new(502, "provider_refusal", message, Value::Null),
            GeneratorError::InvalidProvider(_) | GeneratorError::Cache(_) => ApiError::internal(message),
        }
    }
}

impl From<ScorerError> for ApiError {
    fn from(e: ScorerError) -> Self {
        let message = e.to_string();
        match e {
            ScorerError::EmptyText => ApiError::validation("text", message),
            ScorerError::MissingExplanation => ApiError::new(502, "provider_unavailable", message, Value::Null),
            ScorerError::RemoteScorerUnavailable(_) => ApiError::new(502, "scorer_unavailable", message, Value::Null),
            _ => ApiError::internal(message),
        }
    }
}

impl From<TournamentError> for ApiError {
    fn from(e: TournamentError) -> Self {
        let message = e.to_string();
        match e {
            TournamentError::EmptyDraft | TournamentError::EmptyCandidateList => {
                ApiError::new(400, "empty_draft", message, json!({ "field": "draft" }))
            }
            TournamentError::InvalidConfig(_) => ApiError::internal(message),
            TournamentError::ParaphraserUnavailable(_) => {
                ApiError::new(502, "paraphraser_unavailable", message, Value::Null)
            }
            TournamentError::Explanation { index, source } => {
                let mut err = ApiError::from(source);
                err.detail = json!({ "candidate": index });
                err
            }
            TournamentError::Scorer { source, partial } => {
                let mut err = ApiError::from(source);
                err.detail = json!({ "completed_comparisons": partial.len() });
                err
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("provider `{name}`: {message}")]
    Provider { name: String, message: String },
    #[error("paraphraser: {0}")]
    Paraphraser(String),
    #[error("scorer: {0}")]
    Scorer(#[from] ScorerError),
    #[error("cache: {0}")]
    Cache(String),
}

/// The scorer currently serving requests, with the assembly mode it expects.
#[derive(Clone)]
pub struct LoadedScorer {
    pub scorer: Arc<dyn PairScorer>,
    pub mode: AssemblyMode,
    pub description: String,
}

pub struct Engine {
    config: EngineConfig,
    config_digest: String,
    scorer: RwLock<Option<LoadedScorer>>,
    generators: BTreeMap<String, Generator>,
    paraphraser: Option<Arc<dyn ParaphraserClient>>,
    runs: RunLog,
    artifacts: ArtifactStore,
}

/// Builds the generator behind a configured provider. `stub` endpoints answer
/// offline with the first words of the text; `replay` endpoints answer from
/// the cache and, when given, a recordings file.
pub fn build_generator(provider: &ProviderConfig, cache: Arc<ResponseCache>) -> Result<Generator, GeneratorError> {
    match (&provider.reference.endpoint, &provider.recordings) {
        (Endpoint::Stub, _) => {
            Generator::new(provider.reference.clone(), Arc::new(StubProvider::echo_first_words(8)), cache)
        }
        (Endpoint::Replay, Some(path)) => {
            let replay = ReplayProvider::from_path(path)
                .map_err(|e| GeneratorError::InvalidProvider(format!("recordings {}: {e}", path.display())))?;
            Generator::new(provider.reference.clone(), Arc::new(replay), cache)
        }
        _ => Generator::from_ref(provider.reference.clone(), cache),
    }
}

pub fn build_paraphraser(backend: &ParaphraserBackend) -> Result<Arc<dyn ParaphraserClient>, EngineError> {
    Ok(match backend {
        ParaphraserBackend::Http { url } => Arc::new(HttpParaphraser::new(url.clone())),
        ParaphraserBackend::Replay { path } => Arc::new(
            ReplayParaphraser::from_path(path).map_err(|e| EngineError::Paraphraser(format!("{}: {e}", path.display())))?,
        ),
    })
}

impl Engine {
    /// Builds every configured component. A missing model file is not an
    /// error: the engine starts and reports `model_not_loaded` until one appears.
    pub fn from_config(config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        config.prepare_dirs()?;
        let cache = Arc::new(ResponseCache::on_disk(&config.cache_dir).map_err(|e| EngineError::Cache(e.to_string()))?);
        let mut generators = BTreeMap::new();
        for (name, provider) in &config.providers {
            let g = build_generator(provider, cache.clone())
                .map_err(|e| EngineError::Provider { name: name.clone(), message: e.to_string() })?;
            generators.insert(name.clone(), g);
        }
        let paraphraser = config.paraphraser.as_ref().map(build_paraphraser).transpose()?;
        let engine = Self::with_parts(config, generators, paraphraser, None);
        let initial = match &engine.config.scorer {
            ScorerBackend::Model => {
                if engine.config.model_path.exists() {
                    Some(engine.load_model()?)
                } else {
                    None
                }
            }
            ScorerBackend::Remote { url } => Some(LoadedScorer {
                scorer: Arc::new(RemoteScorer::new(url.clone())),
                mode: engine.config.assembly_mode,
                description: format!("remote {url}"),
            }),
            ScorerBackend::Replay { path } => Some(LoadedScorer {
                scorer: Arc::new(ReplayScorer::from_path(path)?),
                mode: engine.config.assembly_mode,
                description: format!("replay {}", path.display()),
            }),
        };
        if let Some(s) = initial {
            engine.swap_scorer(s);
        }
        Ok(engine)
    }

    /// Assembles an engine from already-built parts; used by tests and embedders.
    pub fn with_parts(
        config: EngineConfig,
        generators: BTreeMap<String, Generator>,
        paraphraser: Option<Arc<dyn ParaphraserClient>>,
        scorer: Option<LoadedScorer>,
    ) -> Self {
        Self {
            config_digest: config.digest(),
            runs: RunLog::new(config.run_log.clone()),
            artifacts: ArtifactStore::new(config.artifacts_dir.clone()),
            scorer: RwLock::new(scorer),
            generators,
            paraphraser,
            config,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn runs(&self) -> &RunLog {
        &self.runs
    }

    pub fn explainer(&self) -> Option<&Generator> {
        self.generators.get(&self.config.explainer)
    }

    pub fn generator(&self, name: &str) -> Option<&Generator> {
        self.generators.get(name)
    }

    pub fn scorer(&self) -> Option<LoadedScorer> {
        self.scorer.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Replaces the serving scorer; in-flight requests keep the one they started with.
    pub fn swap_scorer(&self, scorer: LoadedScorer) {
        *self.scorer.write().unwrap_or_else(|e| e.into_inner()) = Some(scorer);
    }

    fn load_model(&self) -> Result<LoadedScorer, ScorerError> {
        let model = PairwiseModel::load(&self.config.model_path)?;
        Ok(LoadedScorer {
            mode: model.mode,
            description: format!("model {}", self.config.model_path.display()),
            scorer: Arc::new(model),
        })
    }

    /// Loads `model_path` and swaps it in.
    pub fn reload_model(&self) -> Result<(), ApiError> {
        let loaded = self.load_model().map_err(|e| ApiError::model_not_loaded(e.to_string()))?;
        self.swap_scorer(loaded);
        Ok(())
    }

    fn require_scorer(&self) -> Result<LoadedScorer, ApiError> {
        self.scorer().ok_or_else(|| {
            ApiError::model_not_loaded(format!("no model at {}", self.config.model_path.display()))
        })
    }

    fn require_explainer(&self) -> Result<&Generator, ApiError> {
        self.explainer().ok_or_else(|| {
            ApiError::new(502, "provider_unavailable", "no explanation provider configured", Value::Null)
        })
    }

    pub fn assess(&self, req: &AssessRequest) -> Result<AssessResponse, ApiError> {
        let t1 = required(&req.t1_text, "t1_text")?;
        let t2 = required(&req.t2_text, "t2_text")?;
        let loaded = self.require_scorer()?;
        let explanations = if req.with_explanations || loaded.mode.needs_explanations() {
            let g = self.require_explainer()?;
            let e1 = g.explain_text(&text_id(t1), t1)?.text;
            let e2 = g.explain_text(&text_id(t2), t2)?.text;
            Some(PairExplanations { t1: e1, t2: e2 })
        } else {
            None
        };
        let (e1, e2) = match &explanations {
            Some(e) => (Some(e.t1.as_str()), Some(e.t2.as_str())),
            None => (None, None),
        };
        let scored = loaded.scorer.predict(t1, t2, e1, e2, loaded.mode)?;
        Ok(AssessResponse {
            p_t1: scored.p_t1,
            verdict: scored.verdict,
            mode: loaded.mode,
            assembled_text: scored.assembled.text,
            explanations,
        })
    }

    pub fn compose(&self, req: &ComposeRequest) -> Result<ComposeResponse, ApiError> {
        let draft = req.draft.as_deref().unwrap_or("");
        if draft.trim().is_empty() {
            return Err(TournamentError::EmptyDraft.into());
        }
        let mut config = self.config.paraphrase.clone();
        if let Some(n) = req.n_candidates {
            if !(1..=MAX_CANDIDATES).contains(&n) {
                return Err(ApiError::validation("n_candidates", format!("n_candidates must be in 1..={MAX_CANDIDATES}")));
            }
            config.num_return_sequences = n;
        }
        let loaded = self.require_scorer()?;
        let paraphraser = self.paraphraser.as_ref().ok_or_else(|| {
            ApiError::new(502, "paraphraser_unavailable", "no paraphraser configured", Value::Null)
        })?;
        let candidates = generate_candidates(draft, paraphraser.as_ref(), &config)?;
        let source: Option<&dyn cream_core::tournament::ExplanationSource> =
            if loaded.mode.needs_explanations() && candidates.len() > 1 {
                Some(self.require_explainer()?)
            } else {
                None
            };
        let strategy = req.strategy.unwrap_or(Strategy::Champion);
        let result = select_with(&candidates, loaded.scorer.as_ref(), source, loaded.mode, strategy)?;
        Ok(ComposeResponse {
            winner: result.winner,
            winner_index: result.winner_index,
            candidates: result.candidates,
            champion_path: result.champion_path,
            strategy: result.strategy,
            mode: loaded.mode,
            comparisons: result
                .comparisons
                .into_iter()
                .map(|c| ComparisonView { first: c.first, second: c.second, p_first: c.scored.p_t1, first_wins: c.scored.verdict })
                .collect(),
            explanations: result.explanations,
        })
    }

    pub fn explain(&self, req: &ExplainRequest) -> Result<ExplainResponse, ApiError> {
        let text = required(&req.text, "text")?;
        let generator = match &req.provider {
            Some(name) => self
                .generator(name)
                .ok_or_else(|| ApiError::validation("provider", format!("unknown provider `{name}`")))?,
            None => self.require_explainer()?,
        };
        let prompt = cream_core::generator::render_engaging_prompt(text, generator.provider_ref().completion_stub)?;
        let digest = generator.provider_ref().prompt_digest(&prompt);
        let cached = generator.cache().get(&digest).map_err(GeneratorError::from)?.is_some();
        let e = generator.explain_text(&text_id(text), text)?;
        Ok(ExplainResponse {
            text: text.to_string(),
            explanation: e.text,
            provider_id: e.provider.provider_id,
            model_id: e.provider.model_id,
            prompt_digest: e.prompt_digest,
            created_at: e.created_at,
            cached,
        })
    }

    pub fn health(&self) -> HealthResponse {
        let scorer = self.scorer();
        HealthResponse {
            status: "ok".into(),
            model_loaded: scorer.is_some(),
            scorer: scorer.as_ref().map(|s| s.description.clone()),
            assembly_mode: scorer.map(|s| s.mode),
            explainer: self.explainer().map(|g| format!("{}/{}", g.provider_ref().provider_id, g.provider_ref().model_id)),
            paraphraser: self.paraphraser.is_some(),
            config_digest: self.config_digest.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    /// Newest first.
    pub fn list_runs(&self, limit: Option<usize>) -> Result<Vec<RunRecord>, ApiError> {
        let mut records = self.runs.records().map_err(|e| ApiError::internal(e.to_string()))?;
        records.reverse();
        records.truncate(limit.unwrap_or(usize::MAX));
        Ok(records)
    }

    /// Runs `f` inside a run record: the request is the input, the response
    /// (or error body) is stored as a content-addressed artifact.
    pub fn logged<Req: Serialize, Resp: Serialize>(
        &self,
        kind: RunKind,
        request: &Req,
        f: impl FnOnce() -> Result<Resp, ApiError>,
    ) -> (Result<Resp, ApiError>, Option<RunRecord>) {
        let input = serde_json::to_vec(request).expect("request serializes");
        let record = match self.runs.start(kind, &self.config_digest, &cream_core::digest::sha256_hex(&input)) {
            Ok(r) => r,
            Err(e) => return (Err(ApiError::internal(format!("run log: {e}"))), None),
        };
        let result = f();
        let mut record = record;
        let body = match &result {
            Ok(resp) => serde_json::to_vec_pretty(resp),
            Err(err) => serde_json::to_vec_pretty(err),
        }
        .expect("response serializes");
        match self.artifacts.put(&body, "json") {
            Ok(path) => record.outputs.push(path.display().to_string()),
            Err(e) => eprintln!("warning: cannot store run artifact: {e}"),
        }
        let outcome = result.as_ref().map(|_| ()).map_err(|e| e.to_string());
        let finished = match self.runs.finish(record, outcome) {
            Ok(r) => Some(r),
            Err(e) => {
                eprintln!("warning: cannot append run record: {e}");
                None
            }
        };
        (result, finished)
    }
}

fn required<'a>(value: &'a Option<String>, field: &str) -> Result<&'a str, ApiError> {
    match value.as_deref() {
        Some(v) if !v.trim().is_empty() => Ok(v),
        Some(_) => Err(ApiError::validation(field, format!("{field} is empty"))),
        None => Err(ApiError::validation(field, format!("{field} is required"))),
    }
}

/// Stable subject id for free-standing texts.
pub fn text_id(text: &str) -> String {
    cream_core::digest::sha256_hex(text.as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssessRequest {
    pub t1_text: Option<String>,
    pub t2_text: Option<String>,
    #[serde(default)]
    pub with_explanations: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExplanations {
    pub t1: String,
    pub t2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessResponse {
    pub p_t1: f64,
    pub verdict: bool,
    pub mode: AssemblyMode,
    pub assembled_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanations: Option<PairExplanations>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComposeRequest {
    pub draft: Option<String>,
    /// Paraphrases to request; the draft is always a candidate as well.
    #[serde(default)]
    pub n_candidates: Option<usize>,
    #[serde(default)]
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonView {
    pub first: usize,
    pub second: usize,
    /// Probability that `first` out-reacts `second`.
    pub p_first: f64,
    pub first_wins: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeResponse {
    pub winner: String,
    pub winner_index: usize,
    pub candidates: Vec<String>,
    pub champion_path: Vec<usize>,
    pub strategy: Strategy,
    pub mode: AssemblyMode,
    pub comparisons: Vec<ComparisonView>,
    /// Per candidate, when the scorer used explanations.
    #[serde(default)]
    pub explanations: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplainRequest {
    pub text: Option<String>,
    /// Named provider; defaults to the configured explainer.
    #[serde(default)]
    pub provider: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub text: String,
    pub explanation: String,
    pub provider_id: String,
    pub model_id: String,
    pub prompt_digest: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
    /// Whether the answer was already cached before this request.
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_loaded: bool,
    pub scorer: Option<String>,
    pub assembly_mode: Option<AssemblyMode>,
    pub explainer: Option<String>,
    pub paraphraser: bool,
    pub config_digest: String,
    pub version: String,
}
