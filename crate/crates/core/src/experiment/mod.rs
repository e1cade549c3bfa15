//! Experiment orchestration: dataset generation, cross-fitted training per
//! method, effect estimation and reporting, all driven by one config.
//!
//! Every stage reads its inputs from and writes its outputs to the output
//! directory, so stages can run separately (`generate`, `train`,
//! `estimate`, `report`) or together ([`run_pipeline`]). Outputs contain no
//! timestamps or host details; re-running a config reproduces them
//! byte for byte.

pub mod config;
pub mod recipes;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

pub use config::{validate_config, DannSettings, ExperimentConfig, IpwSettings, LlmConfig, Method, Recipe};

use crate::corpus::{ingest_corpus, is_paired, link_pairs, Corpus, CorpusFormat, Covariates, Treatment, Unit};
use crate::dann::{train_dann, DannHyper};
use crate::effects::{aggregate_runs, format_table, plugin_ate, plugin_cate, CateGroups, EffectReport, SeedEstimate};
use crate::error::{Error, Result, StageExt};
use crate::intervention::{build_transformed_corpus, sample_star_intervention};
use crate::llm::{run_bounded, LlmClient, MockClient, MockFixture, ResponseCache};
use crate::predictor::{
    cross_fit, save_checkpoint, train_outcome_predictor, CrossFit, CrossFitConfig, FoldSummary, LabelSource,
};
use crate::propensity::{
    clip_propensities, fit_propensity_split, ipw_ate, ipw_cate, overlap_report, train_propensity, IpwForm,
    OverlapReport,
};
use crate::synthesis::{
    assign_propensities, generate_potential_outcomes, ground_truth_from_outcomes, llm_verdict, GroundTruth,
    GroundTruthSidecar,
};
use crate::topics::{assign_topic_covariates, KeywordExtractor};

const BUILTIN_MOCK: &str = include_str!("../../fixtures/mock_llm.json");

pub const CONFIG_FILE: &str = "config.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const GENERATION_FILE: &str = "generation.json";
pub const SEEDS_FILE: &str = "seeds.json";
pub const ESTIMATES_FILE: &str = "estimates.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";

/// Seed for one named sub-task of a run.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    xxh64(label.as_bytes(), seed)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)? + "\n";
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

// ------------------------------------------------------------------ generate

/// Counts describing how the dataset was built.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub recipe: Option<Recipe>,
    pub n_units: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub n_pairs: usize,
    /// Inputs dropped because the LLM refused or answered off-format.
    pub dropped: usize,
    /// Overlap of the covariate-group propensity, when one is used.
    pub group_propensity_overlap: Option<OverlapReport>,
}

/// A corpus ready for estimation plus its ground truth, when known.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub truth: Option<GroundTruth>,
    pub summary: GenerationSummary,
}

fn llm_client(cfg: &ExperimentConfig) -> Result<Box<dyn LlmClient>> {
    if cfg.llm.http {
        #[cfg(feature = "http")]
        {
            return Ok(Box::new(crate::llm::HttpClient::from_env()?));
        }
        #[cfg(not(feature = "http"))]
        {
            return Err(Error::InvalidParameter("built without the http feature".into()));
        }
    }
    Ok(Box::new(match &cfg.llm.mock_fixture {
        Some(p) => MockClient::from_path(p)?,
        None => MockClient::new(serde_json::from_str::<MockFixture>(BUILTIN_MOCK)?),
    }))
}

fn cache(cfg: &ExperimentConfig) -> Result<Option<ResponseCache>> {
    cfg.cache_dir.as_ref().map(ResponseCache::new).transpose()
}

fn load_or(cfg: &ExperimentConfig, builtin: impl FnOnce() -> Result<Corpus>) -> Result<Corpus> {
    match &cfg.dataset {
        Some(p) => ingest_corpus(p, CorpusFormat::Jsonl),
        None => builtin(),
    }
}

fn simulate(corpus: Corpus, cfg: &ExperimentConfig, summary: &mut GenerationSummary) -> Result<Dataset> {
    let with_pi = assign_propensities(corpus)?;
    let pi: Vec<f64> = with_pi.units().iter().filter_map(|u| u.propensity).collect();
    summary.group_propensity_overlap = Some(overlap_report(&pi));
    let (corpus, truth) = generate_potential_outcomes(&with_pi, &cfg.simulation)?;
    Ok(Dataset {
        corpus,
        truth: Some(truth),
        summary: summary.clone(),
    })
}

/// Pairs whose verdict calls all succeeded; refusals and off-format answers
/// drop the whole pair.
fn judge_pairs(
    cfg: &ExperimentConfig,
    client: &dyn LlmClient,
    cache: Option<&ResponseCache>,
    jobs: Vec<(Unit, Unit, Option<String>, Option<String>)>,
    post_of: impl Fn(&Unit) -> String + Sync,
) -> Result<(Vec<Unit>, usize)> {
    let settings = cfg.llm.settings();
    let verdicts = run_bounded(&jobs, settings.parallelism, |(c, t, cc, tc)| {
        let one = |u: &Unit, comment: &Option<String>| llm_verdict(client, &post_of(u), comment.as_deref(), &settings, cache);
        match (one(c, cc), one(t, tc)) {
            (Ok(a), Ok(b)) => Ok(Some((a, b))),
            (Err(Error::Refused { .. } | Error::UnparseableVerdict(_)), _)
            | (_, Err(Error::Refused { .. } | Error::UnparseableVerdict(_))) => Ok(None),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    })?;
    let mut units = Vec::new();
    let mut dropped = 0;
    for ((mut c, mut t, _, _), v) in jobs.into_iter().zip(verdicts) {
        let Some((y0, y1)) = v else {
            dropped += 1;
            continue;
        };
        c.outcome = Some(y0);
        c.outcome_counterfactual = Some(y1);
        t.outcome = Some(y1);
        t.outcome_counterfactual = Some(y0);
        units.push(c);
        units.push(t);
    }
    Ok((units, dropped))
}

fn finish_llm_dataset(cfg: &ExperimentConfig, units: Vec<Unit>, mut summary: GenerationSummary) -> Result<Dataset> {
    let corpus = Corpus::new(units)?;
    let corpus = assign_topic_covariates(corpus, &KeywordExtractor::builtin(), cfg.intervention.topics)?;
    let truth = ground_truth_from_outcomes(&corpus)?;
    summary.n_pairs = link_pairs(&corpus)?.len();
    Ok(Dataset {
        corpus,
        truth: Some(truth),
        summary,
    })
}

/// Builds the dataset the config describes.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let mut summary = GenerationSummary {
        recipe: cfg.recipe,
        ..Default::default()
    };
    let seed = cfg.simulation.seed;
    let mut ds = match cfg.recipe {
        None => {
            let corpus = ingest_corpus(cfg.dataset.as_ref().expect("checked"), CorpusFormat::Jsonl)?;
            let truth = match ground_truth_from_outcomes(&corpus) {
                Ok(t) => Some(t),
                Err(Error::EmptyInput) => None,
                Err(e) => return Err(e),
            };
            Dataset { corpus, truth, summary }
        }
        Some(Recipe::Synthetic) => {
            let corpus = load_or(cfg, || recipes::synthetic_corpus(&cfg.synthetic, seed))?;
            simulate(corpus, cfg, &mut summary)?
        }
        Some(Recipe::AmazonStars) => {
            let reviews = load_or(cfg, || recipes::builtin_reviews(cfg.intervention.builtin_size, seed))?;
            let filtered = recipes::prefilter_reviews(&reviews, cfg.intervention.max_price, cfg.intervention.min_words)?;
            let sampled = sample_star_intervention(
                &filtered,
                &cfg.intervention.positive_stars,
                &cfg.intervention.negative_stars,
            )?;
            summary.dropped = reviews.len() - sampled.len();
            simulate(sampled, cfg, &mut summary)?
        }
        Some(Recipe::AitaComments) => {
            let posts = load_or(cfg, || recipes::builtin_posts(cfg.intervention.builtin_size, seed))?;
            let client = llm_client(cfg)?;
            let cache = cache(cfg)?;
            let comment = |u: &Unit, key: &str| u.extra.get(key).and_then(|v| v.as_str()).map(str::to_string);
            let mut jobs = Vec::new();
            for p in posts.units() {
                let (Some(top), Some(random)) = (comment(p, "top_comment"), comment(p, "random_comment")) else {
                    summary.dropped += 1;
                    continue;
                };
                let mut c = Unit::new(&p.id, format!("{}\n\n{}", p.text, random), Treatment::Control);
                c.extra.insert("post".into(), p.text.clone().into());
                let mut t = Unit::new(format!("{}::top", p.id), format!("{}\n\n{}", p.text, top), Treatment::Treated)
                    .with_pair(&p.id);
                t.extra.insert("post".into(), p.text.clone().into());
                t.extra.insert("task".into(), "top_vs_random_comment".into());
                jobs.push((c, t, Some(random), Some(top)));
            }
            let post_of = |u: &Unit| u.extra.get("post").and_then(|v| v.as_str()).unwrap_or_default().to_string();
            let (units, dropped) = judge_pairs(cfg, client.as_ref(), cache.as_ref(), jobs, post_of)?;
            summary.dropped += dropped;
            finish_llm_dataset(cfg, units, summary)?
        }
        Some(Recipe::AitaAnger) => {
            let posts = load_or(cfg, || recipes::builtin_posts(cfg.intervention.builtin_size, seed))?;
            let client = llm_client(cfg)?;
            let cache = cache(cfg)?;
            let (paired, stats) = build_transformed_corpus(
                client.as_ref(),
                &posts,
                cfg.intervention.task,
                &cfg.llm.settings(),
                cache.as_ref(),
            )?;
            summary.dropped = stats.refused;
            let units = paired.into_units();
            let jobs: Vec<_> = units
                .chunks(2)
                .map(|p| (p[0].clone(), p[1].clone(), None, None))
                .collect();
            let (units, dropped) = judge_pairs(cfg, client.as_ref(), cache.as_ref(), jobs, |u| u.text.clone())?;
            summary.dropped += dropped;
            finish_llm_dataset(cfg, units, summary)?
        }
    };
    let c = &ds.corpus;
    ds.summary.n_units = c.len();
    ds.summary.n_treated = c.arm(Treatment::Treated).count();
    ds.summary.n_control = c.arm(Treatment::Control).count();
    if is_paired(c) {
        ds.summary.n_pairs = c.arm(Treatment::Treated).count();
    }
    Ok(ds)
}

/// Stage 1: builds the dataset and writes corpus, ground truth and the
/// resolved config into the output directory.
pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e)).stage("generate")?;
    write_json(&out.join(CONFIG_FILE), cfg).stage("generate")?;
    let ds = build_dataset(cfg).stage("generate")?;
    ds.corpus.write_jsonl(out.join(CORPUS_FILE)).stage("generate")?;
    let truth_path = out.join(TRUTH_FILE);
    match &ds.truth {
        Some(t) => {
            let params = matches!(cfg.recipe, Some(Recipe::Synthetic | Recipe::AmazonStars)).then_some(cfg.simulation);
            GroundTruthSidecar::new(t, params).write(&truth_path).stage("generate")?;
        }
        None if truth_path.exists() => fs::remove_file(&truth_path).map_err(|e| Error::io(&truth_path, e)).stage("generate")?,
        None => {}
    }
    write_json(&out.join(GENERATION_FILE), &ds.summary).stage("generate")?;
    Ok(ds)
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<(Corpus, Option<GroundTruthSidecar>)> {
    let out = &cfg.output_dir;
    let corpus = ingest_corpus(out.join(CORPUS_FILE), CorpusFormat::Jsonl)?;
    let truth_path = out.join(TRUTH_FILE);
    let truth = truth_path.exists().then(|| GroundTruthSidecar::read(&truth_path)).transpose()?;
    Ok((corpus, truth))
}

// ------------------------------------------------------------------ train

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Outcome,
    DannOutcome,
    Propensity,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Outcome => "outcome",
            ModelKind::DannOutcome => "dann_outcome",
            ModelKind::Propensity => "propensity",
        }
    }
}

fn kinds_for(methods: &[Method]) -> Vec<ModelKind> {
    let mut kinds = Vec::new();
    for m in methods {
        let k = if m.adversarial() { ModelKind::DannOutcome } else { ModelKind::Outcome };
        if !kinds.contains(&k) {
            kinds.push(k);
        }
        if m.weighted() && !kinds.contains(&ModelKind::Propensity) {
            kinds.push(ModelKind::Propensity);
        }
    }
    kinds.sort();
    kinds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPrediction {
    pub id: String,
    pub value: f64,
}

/// Held-out predictions of one model kind for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub seed: u64,
    pub kind: ModelKind,
    pub predictions: Vec<UnitPrediction>,
    pub folds: Vec<FoldSummary>,
    pub overlap: Option<OverlapReport>,
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(format!("seed-{seed}"))
}

fn prediction_path(cfg: &ExperimentConfig, seed: u64, kind: ModelKind) -> PathBuf {
    seed_dir(cfg, seed).join(format!("{}.json", kind.name()))
}

/// Trains one model kind for one seed with k-fold cross-fitting and returns
/// the held-out predictions.
pub fn fit_kind(corpus: &Corpus, cfg: &ExperimentConfig, seed: u64, kind: ModelKind) -> Result<CrossFit<f64>> {
    let label = match kind {
        ModelKind::Propensity => LabelSource::Treatment,
        _ => LabelSource::ControlOutcome,
    };
    let xcfg = CrossFitConfig {
        val_fraction: cfg.train.val_fraction,
        ..CrossFitConfig::new(cfg.folds, seed, label)
    };
    let enc = &cfg.encoder;
    let hyper_for = |fold: usize| {
        let mut h = cfg.train.clone();
        h.seed = derive_seed(seed, &format!("{}/{fold}", kind.name()));
        h
    };
    match kind {
        ModelKind::Outcome => cross_fit(corpus, xcfg, |s| train_outcome_predictor(&s.train, &s.val, enc, &hyper_for(s.fold))),
        ModelKind::DannOutcome => cross_fit(corpus, xcfg, |s| {
            let mut h = DannHyper::from_train(&hyper_for(s.fold));
            h.gamma = cfg.dann.gamma;
            h.warmup_epochs = cfg.dann.warmup_epochs;
            h.batch_size = cfg.dann.batch_size;
            Ok(train_dann(&s.train, &s.val, &s.target, enc, &h)?.predictor)
        }),
        ModelKind::Propensity if cfg.ipw.cross_fit => cross_fit(corpus, xcfg, |s| {
            Ok(fit_propensity_split(&s.train, &s.val, enc, &hyper_for(s.fold), cfg.ipw.calibrate)?.into_calibrated_predictor())
        }),
        ModelKind::Propensity => {
            let model = train_propensity::<f64>(corpus, enc, &hyper_for(0), cfg.ipw.calibrate)?;
            let texts: Vec<&str> = corpus.units().iter().map(|u| u.text.as_str()).collect();
            let predictor = model.into_calibrated_predictor();
            let logits = predictor.logits_batch(&texts)?;
            Ok(CrossFit {
                predictions: logits.iter().map(|&z| crate::scalar::sigmoid(z)).collect(),
                logits,
                fold_of: vec![0; corpus.len()],
                folds: Vec::new(),
                models: vec![predictor],
            })
        }
    }
}

/// Stage 2: fits every model kind the configured methods need, per seed.
pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let (corpus, _) = load_dataset(cfg).stage("train")?;
    write_json(&cfg.output_dir.join(SEEDS_FILE), &cfg.seeds).stage("train")?;
    for &seed in &cfg.seeds {
        for kind in kinds_for(&cfg.method) {
            log::info!("seed {seed}: fitting {} models", kind.name());
            let fit = fit_kind(&corpus, cfg, seed, kind).stage("train")?;
            if cfg.save_checkpoints {
                for (f, m) in fit.models.iter().enumerate() {
                    let dir = seed_dir(cfg, seed).join("checkpoints").join(format!("{}-fold{f}", kind.name()));
                    let hyper = serde_json::to_value(&cfg.train)?;
                    save_checkpoint(&dir, m, &hyper, Some(f), Some(serde_json::json!({ "kind": kind.name(), "seed": seed })))
                        .stage("train")?;
                }
            }
            let overlap = (kind == ModelKind::Propensity).then(|| overlap_report(&fit.predictions));
            if let Some(o) = &overlap {
                if o.flagged {
                    log::warn!(
                        "seed {seed}: {:.0}% of propensities lie outside [0.05, 0.95]",
                        100.0 * o.fraction_outside
                    );
                }
            }
            let file = PredictionFile {
                seed,
                kind,
                predictions: corpus
                    .units()
                    .iter()
                    .zip(&fit.predictions)
                    .map(|(u, &v)| UnitPrediction {
                        id: u.id.clone(),
                        value: v,
                    })
                    .collect(),
                folds: fit.folds,
                overlap,
            };
            write_json(&prediction_path(cfg, seed, kind), &file).stage("train")?;
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ estimate

/// ATE and CATE estimates from per-unit predictions `mu` (and, for
/// weighted methods, propensities `pi`), both in corpus order.
pub fn estimate_effects(
    corpus: &Corpus,
    groups: &CateGroups,
    mu: &[f64],
    pi: Option<&[f64]>,
    ipw: &IpwSettings,
) -> Result<(f64, Vec<Option<f64>>)> {
    let treated: Vec<bool> = corpus.units().iter().map(|u| u.treatment.is_treated()).collect();
    let covs: Vec<Covariates> = corpus.units().iter().map(|u| u.covariates.clone()).collect();
    match pi {
        Some(pi) => {
            let pi = match ipw.clip {
                Some(eps) => clip_propensities(pi, eps)?,
                None => pi.to_vec(),
            };
            let named = |e: Error| match e {
                Error::PropensityOutOfRange { unit_ids } => Error::PropensityOutOfRange {
                    unit_ids: unit_ids
                        .iter()
                        .filter_map(|s| s.trim_start_matches('#').parse::<usize>().ok())
                        .map(|i| corpus.units()[i].id.clone())
                        .collect(),
                },
                e => e,
            };
            let ate = ipw_ate(mu, &pi, &treated, ipw.form).map_err(named)?;
            let cate = ipw_cate(mu, &pi, &treated, &covs, groups, ipw.form).map_err(named)?;
            Ok((ate, cate))
        }
        None if is_paired(corpus) => {
            let pairs = link_pairs(corpus)?;
            let (mut s, mut t, mut c) = (Vec::new(), Vec::new(), Vec::new());
            for p in &pairs {
                let i = corpus.position(&p.source_id).expect("linked");
                let j = corpus.position(&p.transformed_id).expect("linked");
                s.push(mu[i]);
                t.push(mu[j]);
                c.push(covs[i].clone());
            }
            Ok((plugin_ate(&s, &t)?, plugin_cate(&s, &t, &c, groups)?))
        }
        None => {
            // Unpaired arms: difference of arm means, overall and per group.
            let half = vec![0.5; mu.len()];
            let ate = ipw_ate(mu, &half, &treated, IpwForm::Hajek)?;
            let cate = ipw_cate(mu, &half, &treated, &covs, groups, IpwForm::Hajek)?;
            Ok((ate, cate))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimates {
    pub method: Method,
    pub labels: Vec<String>,
    pub per_seed: Vec<SeedEstimate>,
}

fn read_predictions(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64, kind: ModelKind) -> Result<Vec<f64>> {
    let file: PredictionFile = read_json(&prediction_path(cfg, seed, kind))?;
    let by_id: BTreeMap<&str, f64> = file.predictions.iter().map(|p| (p.id.as_str(), p.value)).collect();
    corpus
        .units()
        .iter()
        .map(|u| {
            by_id
                .get(u.id.as_str())
                .copied()
                .ok_or_else(|| Error::MalformedRecord {
                    line: 0,
                    message: format!("no {} prediction for unit {:?}", kind.name(), u.id),
                })
        })
        .collect()
}

/// Stage 3: turns stored predictions into per-seed estimates.
pub fn estimate(cfg: &ExperimentConfig) -> Result<Vec<MethodEstimates>> {
    let (corpus, truth) = load_dataset(cfg).stage("estimate")?;
    let groups = CateGroups::from_corpus(&corpus);
    let mut all = Vec::new();
    for &method in &cfg.method {
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            let kind = if method.adversarial() { ModelKind::DannOutcome } else { ModelKind::Outcome };
            let mu = read_predictions(cfg, &corpus, seed, kind).stage("estimate")?;
            let pi = method
                .weighted()
                .then(|| read_predictions(cfg, &corpus, seed, ModelKind::Propensity))
                .transpose()
                .stage("estimate")?;
            let (ate, cate) = estimate_effects(&corpus, &groups, &mu, pi.as_deref(), &cfg.ipw).stage("estimate")?;
            per_seed.push(SeedEstimate::new(seed, ate, cate, truth.as_ref().map(|t| t.summary())).stage("estimate")?);
        }
        all.push(MethodEstimates {
            method,
            labels: groups.labels(),
            per_seed,
        });
    }
    write_json(&cfg.output_dir.join(ESTIMATES_FILE), &all).stage("estimate")?;
    Ok(all)
}

// ------------------------------------------------------------------ report

/// Everything the final stage writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub recipe: Option<Recipe>,
    pub seeds: Vec<u64>,
    pub folds: usize,
    pub ground_truth: Option<GroundTruthSidecar>,
    pub methods: Vec<EffectReport>,
    /// Propensity overlap diagnostics per seed, when a weighted method ran.
    pub propensity_overlap: Vec<(u64, OverlapReport)>,
}

impl PipelineReport {
    pub fn method(&self, m: Method) -> Option<&EffectReport> {
        self.methods.iter().find(|r| r.method == m.name())
    }
}

/// Stage 4: aggregates per-seed estimates and writes the report and table.
pub fn report(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    let out = &cfg.output_dir;
    let estimates: Vec<MethodEstimates> = read_json(&out.join(ESTIMATES_FILE)).stage("report")?;
    let (_, truth) = load_dataset(cfg).stage("report")?;
    let mut methods = Vec::new();
    for m in &estimates {
        let singles: Vec<EffectReport> = m
            .per_seed
            .iter()
            .map(|s| EffectReport::single(m.method.name(), m.labels.clone(), s.clone()))
            .collect();
        methods.push(aggregate_runs(&singles).stage("report")?);
    }
    let mut propensity_overlap = Vec::new();
    if cfg.method.iter().any(|m| m.weighted()) {
        for &seed in &cfg.seeds {
            let file: PredictionFile = read_json(&prediction_path(cfg, seed, ModelKind::Propensity)).stage("report")?;
            if let Some(o) = file.overlap {
                propensity_overlap.push((seed, o));
            }
        }
    }
    let report = PipelineReport {
        recipe: cfg.recipe,
        seeds: cfg.seeds.clone(),
        folds: cfg.folds,
        ground_truth: truth,
        methods,
        propensity_overlap,
    };
    write_json(&out.join(REPORT_FILE), &report).stage("report")?;
    let mut table = format_table(&report.methods);
    if let Some(t) = &report.ground_truth {
        table.push_str(&format!("ground-truth ATE {:.4} over {} units\n", t.ate, t.n_units));
    }
    fs::write(out.join(TABLE_FILE), &table).map_err(|e| Error::io(out.join(TABLE_FILE), e)).stage("report")?;
    Ok(report)
}

/// Runs every stage in order and returns the final report.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    cfg.check()?;
    generate(cfg)?;
    train(cfg)?;
    estimate(cfg)?;
    report(cfg)
}
