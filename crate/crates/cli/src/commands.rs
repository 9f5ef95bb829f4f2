//! Subcommand implementations. Every command runs inside a run record whose
//! outputs list grows as artifacts are written, so a failure leaves an
//! accurate account of what exists on disk.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cream_core::corpus::{annotate_topics, ingest_path, AnnotateError, ConstantTagger, HttpTagger, IngestConfig, TopicAnnotation, TopicTagger, Tweet};
use cream_core::eval::{evaluate_with_topics, render_systems_table, significance, BucketSpec, EvalReport, PredictionRecord, PredictionSet};
use cream_core::generator::{Explanation, Generator, GeneratorError, ResponseCache};
use cream_core::pairing::{build_pairs, corpus_stats, pairs_to_jsonl, read_pairs, temporal_split, LabeledPair};
use cream_core::scorer::{examples_from_pairs, train, AssemblyMode, PairScorer, PairwiseModel, ScorerError};
use cream_server::config::TaggerBackend;
use cream_server::engine::{build_generator, AssessRequest, ComposeRequest};
use cream_server::runlog::{RunKind, RunLog};
use cream_server::{Engine, EngineConfig};

use crate::{AssessArgs, BuildArgs, CliError, ComposeArgs, EvalArgs, ExplainArgs, PredictArgs, TrainArgs, ZeroShotArgs};

pub struct Context {
    pub config: EngineConfig,
    pub config_digest: String,
    pub runs: RunLog,
}

impl Context {
    pub fn new(config: EngineConfig) -> Self {
        Self { config_digest: config.digest(), runs: RunLog::new(config.run_log.clone()), config }
    }

    fn cache(&self) -> Result<Arc<ResponseCache>, CliError> {
        ResponseCache::on_disk(&self.config.cache_dir)
            .map(Arc::new)
            .map_err(|e| CliError::Config(format!("cache {}: {e}", self.config.cache_dir.display())))
    }

    fn generator(&self, name: Option<&str>) -> Result<Generator, CliError> {
        let name = name.unwrap_or(&self.config.explainer);
        let provider = self
            .config
            .providers
            .get(name)
            .ok_or_else(|| CliError::Config(format!("no provider named `{name}`")))?;
        build_generator(provider, self.cache()?).map_err(|e| CliError::Config(format!("provider `{name}`: {e}")))
    }
}

/// Outputs written so far by the current run.
pub struct Run {
    pub run_id: String,
    outputs: Vec<String>,
}

impl Run {
    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        cream_core::jsonl::write_atomic(path, bytes).map_err(|e| io_err(path, e))?;
        self.record(path);
        Ok(())
    }

    fn record(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Digest over the arguments and input file contents. Unreadable files hash
/// as their error so the run is still recorded and fails in its body.
fn digest_inputs(args: &impl std::fmt::Debug, files: &[&Path]) -> String {
    let mut parts = vec![format!("{args:?}").into_bytes()];
    for f in files {
        parts.push(std::fs::read(f).unwrap_or_else(|e| format!("unreadable: {e}").into_bytes()));
    }
    cream_core::digest::digest_parts(parts.iter().map(Vec::as_slice))
}

/// Runs `body` between a `running` record and its terminal record.
fn recorded(
    ctx: &Context,
    kind: RunKind,
    inputs_digest: String,
    body: impl FnOnce(&mut Run) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let record = ctx
        .runs
        .start(kind, &ctx.config_digest, &inputs_digest)
        .map_err(|e| CliError::Config(format!("run log: {e}")))?;
    let mut run = Run { run_id: record.run_id.clone(), outputs: Vec::new() };
    let result = body(&mut run);
    let mut record = record;
    record.outputs = run.outputs;
    let outcome = result.as_ref().map(|_| ()).map_err(|e| e.to_string());
    if let Err(e) = ctx.runs.finish(record, outcome) {
        eprintln!("warning: cannot append run record: {e}");
    }
    result
}

fn json_bytes(value: &impl serde::Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializes");
    bytes.push(b'\n');
    bytes
}

fn load_pairs(ctx: &Context, path: &Path) -> Result<Vec<LabeledPair>, CliError> {
    read_pairs(path, ctx.config.reference_timezone).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn tagger(backend: &TaggerBackend) -> Box<dyn TopicTagger> {
    match backend {
        TaggerBackend::Http { url } => Box::new(HttpTagger::new(url.clone())),
        TaggerBackend::Constant { label, prob } => Box::new(ConstantTagger(TopicAnnotation::new(label.clone(), *prob))),
    }
}

pub fn cred_build(ctx: &Context, args: &BuildArgs) -> Result<(), CliError> {
    let inputs = digest_inputs(&(&args.strict, ctx.config.split_date), &[&args.input]);
    recorded(ctx, RunKind::Build, inputs, |run| {
        let config = IngestConfig { strict: args.strict, ..IngestConfig::new(ctx.config.reference_timezone) };
        let (corpus, report) = ingest_path(&args.input, &config).map_err(|e| CliError::Input(e.to_string()))?;
        let out = &args.out_dir;
        run.write(&out.join("ingest_report.json"), &json_bytes(&report))?;
        eprintln!("ingested {} records ({} rejected)", report.accepted, report.rejected);
        for (class, n) in &report.rejected_by_class {
            eprintln!("  rejected {class}: {n}");
        }

        let corpus = if corpus.is_fully_annotated() {
            corpus
        } else {
            let backend = ctx.config.tagger.as_ref().ok_or_else(|| {
                CliError::Config("corpus has tweets without topics and no tagger is configured".into())
            })?;
            annotate_topics(&corpus, tagger(backend).as_ref()).map_err(|e| match e {
                AnnotateError::TaggerUnavailable { .. } => CliError::Upstream(e.to_string()),
                _ => CliError::Input(e.to_string()),
            })?
        };
        let records = corpus.to_records();
        run.write(&out.join("corpus.jsonl"), &cream_core::jsonl::to_bytes(&records).expect("records serialize"))?;

        let pairs = build_pairs(&corpus, &ctx.config.pairing).map_err(|e| CliError::Input(e.to_string()))?;
        let (train_set, valid_set) = temporal_split(&pairs, ctx.config.split_date);
        run.write(&out.join("pairs.jsonl"), &pairs_to_jsonl(&pairs))?;
        run.write(&out.join("train.jsonl"), &pairs_to_jsonl(&train_set))?;
        run.write(&out.join("valid.jsonl"), &pairs_to_jsonl(&valid_set))?;
        let stats = corpus_stats(&pairs);
        let table = stats.render_table();
        run.write(&out.join("stats.json"), &json_bytes(&stats))?;
        run.write(&out.join("stats.txt"), table.as_bytes())?;
        println!("{table}");
        println!(
            "pairs: {} (train {}, validation {} from {})",
            pairs.len(),
            train_set.len(),
            valid_set.len(),
            ctx.config.split_date
        );
        Ok(())
    })
}

fn unique_tweets(pairs: &[LabeledPair]) -> Vec<Tweet> {
    let mut by_id: BTreeMap<&str, &Tweet> = BTreeMap::new();
    for p in pairs {
        by_id.entry(&p.t1.id).or_insert(&p.t1);
        by_id.entry(&p.t2.id).or_insert(&p.t2);
    }
    by_id.into_values().cloned().collect()
}

fn generator_error(e: GeneratorError) -> CliError {
    match e {
        GeneratorError::ProviderUnavailable(_) | GeneratorError::ProviderRefusal(_) | GeneratorError::EmptyResponse => {
            CliError::Upstream(e.to_string())
        }
        GeneratorError::EmptyText => CliError::Input(e.to_string()),
        _ => CliError::Internal(e.to_string()),
    }
}

/// Explains every tweet, returning the successes and the first failure.
fn explain_all(
    generator: &Generator,
    tweets: &[Tweet],
    parallelism: usize,
) -> (Vec<Explanation>, Option<(usize, GeneratorError)>) {
    let mut ok = Vec::with_capacity(tweets.len());
    let mut failed = 0;
    let mut first = None;
    for result in generator.explain_batch(tweets, parallelism.max(1)) {
        match result {
            Ok(e) => ok.push(e),
            Err(e) => {
                failed += 1;
                first.get_or_insert(e);
            }
        }
    }
    (ok, first.map(|e| (failed, e)))
}

pub fn ggea_explain(ctx: &Context, args: &ExplainArgs) -> Result<(), CliError> {
    let files: Vec<&Path> = args.pairs.iter().map(PathBuf::as_path).collect();
    let inputs = digest_inputs(&args.provider, &files);
    recorded(ctx, RunKind::Explain, inputs, |run| {
        let mut pairs = Vec::new();
        for f in &files {
            pairs.extend(load_pairs(ctx, f)?);
        }
        let tweets = unique_tweets(&pairs);
        let generator = ctx.generator(args.provider.as_deref())?;
        let (explanations, failure) = explain_all(&generator, &tweets, args.parallelism);
        run.write(&args.out, &cream_core::jsonl::to_bytes(&explanations).expect("explanations serialize"))?;
        eprintln!(
            "explained {} of {} tweets ({} provider requests)",
            explanations.len(),
            tweets.len(),
            generator.provider_requests()
        );
        match failure {
            Some((n, e)) => Err(CliError::Upstream(format!("{n} tweets not explained; first error: {e}"))),
            None => Ok(()),
        }
    })
}

fn read_explanations(path: &Path) -> Result<HashMap<String, Explanation>, CliError> {
    let list: Vec<Explanation> =
        cream_core::jsonl::read_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(list.into_iter().map(|e| (e.tweet_id.clone(), e)).collect())
}

/// Explanations from `path`, or generated through the explainer when the
/// mode needs them and no file was given.
fn explanations_for(
    ctx: &Context,
    pairs: &[LabeledPair],
    path: Option<&Path>,
    mode: AssemblyMode,
) -> Result<HashMap<String, Explanation>, CliError> {
    if let Some(p) = path {
        return read_explanations(p);
    }
    if !mode.needs_explanations() {
        return Ok(HashMap::new());
    }
    let generator = ctx.generator(None)?;
    let (list, failure) = explain_all(&generator, &unique_tweets(pairs), 8);
    if let Some((n, e)) = failure {
        return Err(CliError::Upstream(format!("{n} tweets not explained; first error: {e}")));
    }
    Ok(list.into_iter().map(|e| (e.tweet_id.clone(), e)).collect())
}

fn scorer_error(e: ScorerError) -> CliError {
    match e {
        ScorerError::MissingExplanation | ScorerError::EmptyTrainingSet | ScorerError::EmptyText => {
            CliError::Input(e.to_string())
        }
        ScorerError::InvalidConfig(_) => CliError::Config(e.to_string()),
        ScorerError::RemoteScorerUnavailable(_) => CliError::Upstream(e.to_string()),
        _ => CliError::Internal(e.to_string()),
    }
}

pub fn ggea_train(ctx: &Context, args: &TrainArgs) -> Result<(), CliError> {
    let mut files = vec![args.pairs.as_path()];
    files.extend(args.explanations.as_deref());
    let inputs = digest_inputs(&(args.epochs, ctx.config.assembly_mode), &files);
    recorded(ctx, RunKind::Train, inputs, |run| {
        let _lock = ctx.runs.lock_train(&run.run_id).map_err(|e| CliError::Busy(e.to_string()))?;
        let mode = ctx.config.assembly_mode;
        let mut config = ctx.config.train.clone();
        if let Some(epochs) = args.epochs {
            config.epochs = epochs;
        }
        let pairs = load_pairs(ctx, &args.pairs)?;
        let explanations = explanations_for(ctx, &pairs, args.explanations.as_deref(), mode)?;
        let (model, log) = train(&pairs, &explanations, &config, mode).map_err(scorer_error)?;
        let out = args.out.clone().unwrap_or_else(|| ctx.config.model_path.clone());
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        model.save(&out).map_err(scorer_error)?;
        run.record(&out);
        run.record(&PairwiseModel::manifest_path(&out));
        let mut log_path = out.clone().into_os_string();
        log_path.push(".trainlog.json");
        run.write(Path::new(&log_path), &json_bytes(&log))?;

        let examples = examples_from_pairs(&pairs, &explanations, mode).map_err(scorer_error)?;
        let correct = examples
            .iter()
            .filter(|ex| {
                model
                    .predict(&ex.t1, &ex.t2, ex.e1.as_deref(), ex.e2.as_deref(), mode)
                    .map(|s| s.verdict == ex.label)
                    .unwrap_or(false)
            })
            .count();
        println!(
            "trained {} on {} pairs: loss {:.4} -> {:.4}, training accuracy {}",
            mode,
            pairs.len(),
            log.initial_loss,
            log.final_loss(),
            cream_core::eval::pct(correct as f64 / examples.len() as f64)
        );
        println!("model: {}", out.display());
        Ok(())
    })
}

pub fn ggea_predict(ctx: &Context, args: &PredictArgs) -> Result<(), CliError> {
    let model_path = args.model.clone().unwrap_or_else(|| ctx.config.model_path.clone());
    let mut files = vec![args.pairs.as_path()];
    files.extend(args.explanations.as_deref());
    let inputs = digest_inputs(&(&model_path, &args.system_id), &files);
    recorded(ctx, RunKind::Predict, inputs, |run| {
        if !model_path.exists() {
            return Err(CliError::ModelNotLoaded(format!("no model at {}", model_path.display())));
        }
        let model = PairwiseModel::load(&model_path).map_err(|e| CliError::ModelNotLoaded(e.to_string()))?;
        let pairs = load_pairs(ctx, &args.pairs)?;
        let explanations = explanations_for(ctx, &pairs, args.explanations.as_deref(), model.mode)?;
        let system_id = args.system_id.clone().unwrap_or_else(|| format!("linear-{}", model.mode.as_str().to_lowercase()));
        let examples = examples_from_pairs(&pairs, &explanations, model.mode).map_err(scorer_error)?;
        let records = pairs
            .iter()
            .zip(&examples)
            .map(|(p, ex)| {
                let s = model.predict(&ex.t1, &ex.t2, ex.e1.as_deref(), ex.e2.as_deref(), model.mode).map_err(scorer_error)?;
                Ok(PredictionRecord { pair_id: p.pair_id.clone(), verdict: Some(s.verdict), p_t1: Some(s.p_t1), system_id: system_id.clone() })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        run.write(&args.out, &cream_core::jsonl::to_bytes(&records).expect("records serialize"))?;
        println!("{} predictions for {system_id}", records.len());
        Ok(())
    })
}

pub fn ggea_zero_shot(ctx: &Context, args: &ZeroShotArgs) -> Result<(), CliError> {
    let inputs = digest_inputs(&args.provider, &[&args.pairs]);
    recorded(ctx, RunKind::Predict, inputs, |run| {
        let name = args.provider.clone().unwrap_or_else(|| ctx.config.explainer.clone());
        let generator = ctx.generator(Some(&name))?;
        let pairs = load_pairs(ctx, &args.pairs)?;
        let mut records = Vec::with_capacity(pairs.len());
        let (mut refused, mut abstained) = (0, 0);
        for p in &pairs {
            let v = generator.zero_shot_compare(&p.t1, &p.t2).map_err(generator_error)?;
            if v.refused {
                refused += 1;
            } else if v.is_abstain() {
                abstained += 1;
            }
            records.push(PredictionRecord { pair_id: p.pair_id.clone(), verdict: v.t1_wins, p_t1: None, system_id: name.clone() });
        }
        run.write(&args.out, &cream_core::jsonl::to_bytes(&records).expect("records serialize"))?;
        println!("{} verdicts from {name} ({refused} refusals, {abstained} unparseable)", records.len());
        Ok(())
    })
}

fn file_stem(system_id: &str) -> String {
    system_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn ggea_eval(ctx: &Context, args: &EvalArgs) -> Result<(), CliError> {
    let mut files = vec![args.pairs.as_path()];
    files.extend(args.predictions.iter().map(PathBuf::as_path));
    let inputs = digest_inputs(&(&args.baseline, args.iterations, &args.buckets, ctx.config.train.seed), &files);
    recorded(ctx, RunKind::Eval, inputs, |run| {
        let pairs = load_pairs(ctx, &args.pairs)?;
        let mut records: Vec<PredictionRecord> = Vec::new();
        for f in &args.predictions {
            records.extend(
                cream_core::jsonl::read_path::<PredictionRecord>(f).map_err(|e| CliError::Input(format!("{}: {e}", f.display())))?,
            );
        }
        let sets = PredictionSet::from_records(records);
        let buckets = match &args.buckets {
            Some(b) => BucketSpec::new(b.clone()).map_err(|e| CliError::Input(e.to_string()))?,
            None => BucketSpec::default(),
        };
        let topics = cream_core::corpus::TopicVocabulary::default();
        let baseline = match &args.baseline {
            Some(id) => Some(
                sets.iter()
                    .find(|s| &s.system_id == id)
                    .ok_or_else(|| CliError::Input(format!("baseline `{id}` not among the prediction sets")))?,
            ),
            None => None,
        };
        let mut reports: Vec<EvalReport> = Vec::new();
        for set in &sets {
            let mut report = evaluate_with_topics(set, &pairs, &buckets, topics.labels())
                .map_err(|e| CliError::Eval(format!("{}: {e}", set.system_id)))?;
            if let Some(base) = baseline.filter(|b| b.system_id != set.system_id) {
                report.significance = Some(
                    significance(base, set, &pairs, args.iterations, ctx.config.train.seed)
                        .map_err(|e| CliError::Eval(format!("{} vs {}: {e}", set.system_id, base.system_id)))?,
                );
            }
            let stem = file_stem(&set.system_id);
            run.write(&args.out_dir.join(format!("{stem}.report.json")), &json_bytes(&report))?;
            run.write(&args.out_dir.join(format!("{stem}.report.txt")), report.render_text().as_bytes())?;
            reports.push(report);
        }
        let table = render_systems_table(&reports);
        run.write(&args.out_dir.join("summary.txt"), table.as_bytes())?;
        print!("{table}");
        for r in &reports {
            if let Some(s) = &r.significance {
                println!("{} vs {}: p = {:.4} ({} iterations, {})", r.system_id, s.baseline_id, s.p_value, s.iterations, s.metric);
            }
        }
        Ok(())
    })
}

fn engine(ctx: &Context) -> Result<Engine, CliError> {
    Engine::from_config(ctx.config.clone()).map_err(|e| CliError::Config(e.to_string()))
}

pub fn ggea_assess(ctx: &Context, args: &AssessArgs) -> Result<(), CliError> {
    let engine = engine(ctx)?;
    let req = AssessRequest { t1_text: Some(args.t1.clone()), t2_text: Some(args.t2.clone()), with_explanations: args.with_explanations };
    let (result, _) = engine.logged(RunKind::Assess, &req, || engine.assess(&req));
    let resp = result?;
    println!("{}", serde_json::to_string_pretty(&resp).expect("serializes"));
    Ok(())
}

pub fn compose(ctx: &Context, args: &ComposeArgs) -> Result<(), CliError> {
    let draft = match (&args.draft, &args.draft_file) {
        (Some(d), _) => d.clone(),
        (None, Some(f)) => std::fs::read_to_string(f).map_err(|e| io_err(f, e))?,
        (None, None) => return Err(CliError::Input("a draft is required".into())),
    };
    let engine = engine(ctx)?;
    let req = ComposeRequest { draft: Some(draft), n_candidates: args.n_candidates, strategy: args.strategy };
    let (result, _) = engine.logged(RunKind::Compose, &req, || engine.compose(&req));
    let resp = result?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&resp).expect("serializes"));
        return Ok(());
    }
    for (i, c) in resp.candidates.iter().enumerate() {
        let mark = if i == resp.winner_index { '*' } else { ' ' };
        println!("{mark} [{i}] {c}");
    }
    for c in &resp.comparisons {
        println!("  [{}] vs [{}]: p = {:.3}", c.first, c.second, c.p_first);
    }
    println!("winner: {}", resp.winner);
    Ok(())
}

pub fn serve(ctx: &Context) -> Result<(), CliError> {
    let inputs = digest_inputs(&ctx.config.listen, &[]);
    recorded(ctx, RunKind::Serve, inputs, |_| {
        let engine = Arc::new(engine(ctx)?);
        let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
        runtime.block_on(async {
            let listener = tokio::net::TcpListener::bind(&ctx.config.listen)
                .await
                .map_err(|e| CliError::Config(format!("cannot bind {}: {e}", ctx.config.listen)))?;
            eprintln!("listening on http://{}", listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?);
            cream_server::http::serve(engine, listener).await.map_err(|e| CliError::Internal(e.to_string()))
        })
    })
}
