use std::fs;
use std::path::Path;

use causaldann::effects::CateGroups;
use causaldann::experiment::{
    self, estimate_effects, run_pipeline, ExperimentConfig, IpwSettings, Method, PipelineReport, Recipe,
};
use causaldann::synthesis::GroundTruthSidecar;
use causaldann::{Corpus, Covariates, Error, Treatment, Unit};

fn small(recipe: Recipe, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        recipe: Some(recipe),
        method: vec![Method::Baseline],
        folds: 2,
        seeds: vec![0, 1],
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    c.train.epochs = 3;
    c.train.lr_init = 5e-3;
    c.dann.warmup_epochs = 1;
    c.synthetic.n_pairs = 200;
    c.synthetic.extra_controls = vec![0, 60, 120];
    c.synthetic.paired_groups = 2;
    c.intervention.builtin_size = 60;
    c.intervention.topics = 8;
    c
}

fn read_report(dir: &Path) -> PipelineReport {
    serde_json::from_str(&fs::read_to_string(dir.join(experiment::REPORT_FILE)).unwrap()).unwrap()
}

#[test]
fn synthetic_baseline_two_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Recipe::Synthetic, dir.path());
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report, read_report(dir.path()));
    let base = report.method(Method::Baseline).unwrap();
    assert_eq!(base.per_seed.len(), 2);
    assert_eq!(base.labels, vec!["c=0", "c=1", "c=2"]);
    assert!(base.per_seed.iter().all(|s| s.ate_hat.is_finite() && s.delta_ate.is_some()));
    // the unpaired group never has a transformed twin
    assert!(base.per_seed[0].cate_hat[2].is_none());
    let truth = GroundTruthSidecar::read(&dir.path().join(experiment::TRUTH_FILE)).unwrap();
    assert_eq!(truth.n_units, 200);
    assert!(truth.params.is_some());
    let table = fs::read_to_string(dir.path().join(experiment::TABLE_FILE)).unwrap();
    assert!(table.starts_with("Method"));
    assert!(table.contains("baseline"));
}

#[test]
fn staged_run_matches_single_call() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut ca = small(Recipe::Synthetic, a.path());
    ca.method = vec![Method::Baseline, Method::DannIpw];
    let mut cb = ca.clone();
    cb.output_dir = b.path().to_path_buf();
    run_pipeline(&ca).unwrap();
    experiment::generate(&cb).unwrap();
    experiment::train(&cb).unwrap();
    experiment::estimate(&cb).unwrap();
    experiment::report(&cb).unwrap();
    for f in [experiment::REPORT_FILE, experiment::TABLE_FILE, experiment::CORPUS_FILE, "seed-1/propensity.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let r = read_report(a.path());
    assert_eq!(r.propensity_overlap.len(), 2);
}

#[test]
fn llm_recipes_run_on_the_mock() {
    for recipe in [Recipe::AitaAnger, Recipe::AitaComments] {
        let dir = tempfile::tempdir().unwrap();
        let cache = tempfile::tempdir().unwrap();
        let mut cfg = small(recipe, dir.path());
        cfg.seeds = vec![0];
        cfg.cache_dir = Some(cache.path().to_path_buf());
        let ds = experiment::generate(&cfg).unwrap();
        assert!(ds.summary.dropped > 0, "{recipe:?}: sensitive posts are refused");
        assert_eq!(ds.summary.n_pairs * 2, ds.summary.n_units);
        assert!(ds.corpus.units().iter().all(|u| matches!(&u.covariates, Covariates::Vector(v) if v.len() == 8)));
        assert!(fs::read_dir(cache.path()).unwrap().count() > 0);
        experiment::train(&cfg).unwrap();
        experiment::estimate(&cfg).unwrap();
        let r = experiment::report(&cfg).unwrap();
        assert!(r.methods[0].per_seed[0].ate_hat.is_finite());
    }
}

#[test]
fn anger_transformation_raises_mock_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Recipe::AitaAnger, dir.path());
    cfg.intervention.builtin_size = 200;
    let ds = experiment::build_dataset(&cfg).unwrap();
    // the fixture makes angry posts far more likely to be judged at fault
    assert!(ds.truth.unwrap().ate > 0.2);
}

#[test]
fn amazon_stars_on_user_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("reviews.jsonl");
    let mut lines = String::new();
    for i in 0..80 {
        let star = [1, 2, 3, 4, 5][i % 5];
        let price = if i % 7 == 0 { 150.0 } else { 20.0 };
        let words = if star >= 4 { "great album love the songs" } else { "awful cd broke after a week" };
        lines.push_str(&format!(
            "{{\"id\":\"r{i}\",\"text\":\"{words} {i}\",\"treatment\":0,\"covariates\":{},\"star\":{star},\"price\":{price}}}\n",
            i % 2
        ));
    }
    fs::write(&data, lines).unwrap();
    let out = dir.path().join("out");
    let mut cfg = small(Recipe::AmazonStars, &out);
    cfg.dataset = Some(data);
    cfg.seeds = vec![3];
    let report = run_pipeline(&cfg).unwrap();
    let corpus = causaldann::corpus::ingest_corpus(out.join(experiment::CORPUS_FILE), causaldann::corpus::CorpusFormat::Jsonl).unwrap();
    // 3-star and over-priced reviews are gone
    assert!(corpus.units().iter().all(|u| u.star() != Some(3)));
    assert!(corpus.len() < 80 * 4 / 5);
    assert!(report.ground_truth.is_some());
}

#[test]
fn observational_dataset_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("obs.jsonl");
    let units: Vec<Unit> = (0..60)
        .map(|i| {
            let t = if i % 3 == 0 { Treatment::Treated } else { Treatment::Control };
            let text = if t.is_treated() { format!("angry words {i}") } else { format!("calm words {i}") };
            Unit::new(format!("u{i}"), text, t)
                .with_outcome((i % 2) as u8)
                .with_covariates(Covariates::Vector(vec![(i % 2) as u8, 1]))
        })
        .collect();
    Corpus::new(units).unwrap().write_jsonl(&data).unwrap();
    let mut cfg = small(Recipe::Synthetic, &dir.path().join("out"));
    cfg.recipe = None;
    cfg.dataset = Some(data);
    let report = run_pipeline(&cfg).unwrap();
    assert!(report.ground_truth.is_none());
    let b = report.method(Method::Baseline).unwrap();
    assert!(b.per_seed.iter().all(|s| s.delta_ate.is_none() && s.mse_cate.is_none()));
}

#[test]
fn stage_errors_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Recipe::Synthetic, dir.path());
    cfg.recipe = None;
    cfg.dataset = Some(dir.path().join("missing.jsonl"));
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "generate"),
        other => panic!("{other:?}"),
    }
    let cfg = small(Recipe::Synthetic, &dir.path().join("empty"));
    match experiment::estimate(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "estimate"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn out_of_range_propensities_name_units() {
    let units = vec![
        Unit::new("a", "x", Treatment::Control),
        Unit::new("b", "y", Treatment::Treated),
        Unit::new("c", "z", Treatment::Control),
    ];
    let corpus = Corpus::new(units).unwrap();
    let groups = CateGroups::from_corpus(&corpus);
    let mu = [0.1, 0.5, 0.2];
    match estimate_effects(&corpus, &groups, &mu, Some(&[0.5, 1.0, 0.3]), &IpwSettings::default()) {
        Err(Error::PropensityOutOfRange { unit_ids }) => assert_eq!(unit_ids, vec!["b"]),
        other => panic!("{other:?}"),
    }
    let clipped = IpwSettings {
        clip: Some(0.01),
        ..IpwSettings::default()
    };
    let (ate, _) = estimate_effects(&corpus, &groups, &mu, Some(&[0.5, 1.0, 0.3]), &clipped).unwrap();
    assert!(ate.is_finite());
}

#[test]
fn resolved_config_snapshot() {
    let cfg = ExperimentConfig::from_json(r#"{"recipe": "synthetic", "method": ["baseline", "dann"]}"#).unwrap();
    let golden = include_str!("fixtures/resolved_config.json");
    assert_eq!(cfg.to_json(), golden);
    let again = ExperimentConfig::from_json(golden).unwrap();
    assert_eq!(again.to_json(), golden);
}
