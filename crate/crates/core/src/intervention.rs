//! Building the intervened arm: LLM rewrites with paired rephrased
//! controls, and star-rating arm assignment.

use serde_json::Value;

use crate::corpus::{Corpus, Treatment, Unit};
use crate::error::{Error, Result};
use crate::llm::{
    build_request, cached_call, request_hash, run_bounded, LlmClient, LlmSettings, PromptTask, ResponseCache,
    RetryPolicy,
};

/// Generated text with the provenance needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transformed {
    pub text: String,
    pub model_id: String,
    pub prompt_hash: String,
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Rewrites `text` with a transformation task.
pub fn transform_text(
    client: &dyn LlmClient,
    text: &str,
    task: PromptTask,
    settings: &LlmSettings,
    cache: Option<&ResponseCache>,
) -> Result<Transformed> {
    if !matches!(task, PromptTask::AngerTransformation | PromptTask::Rephrasing) {
        return Err(Error::InvalidParameter(format!("{} is not a transformation task", task.name())));
    }
    let req = build_request(settings, task, text, None)?;
    let resp = cached_call(client, &req, cache, RetryPolicy::from_settings(settings))?;
    if resp.refused || crate::llm::detect_refusal(&resp.text) {
        return Err(Error::Refused {
            model_id: settings.model_id.clone(),
        });
    }
    let (before, after) = (word_count(text), word_count(&resp.text));
    if before > 0 && (after as f64 - before as f64).abs() > 0.5 * before as f64 {
        log::warn!("{} output length {after} words deviates >50% from input length {before}", task.name());
    }
    Ok(Transformed {
        text: resp.text,
        model_id: req.model_id.clone(),
        prompt_hash: request_hash(&req),
    })
}

/// Keeps reviews whose `star` is in `positive` (treated) or `negative`
/// (control) and drops the rest.
pub fn sample_star_intervention(reviews: &Corpus, positive: &[u8], negative: &[u8]) -> Result<Corpus> {
    let mut kept = Vec::new();
    for u in reviews.units() {
        let star = u.star().ok_or_else(|| Error::MalformedRecord {
            line: reviews.position(&u.id).map_or(0, |i| i + 1),
            message: format!("unit {:?} has no integer star rating", u.id),
        })?;
        let arm = if positive.contains(&star) {
            Treatment::Treated
        } else if negative.contains(&star) {
            Treatment::Control
        } else {
            continue;
        };
        let mut v = u.clone();
        v.treatment = arm;
        kept.push(v);
    }
    for arm in [Treatment::Treated, Treatment::Control] {
        if !kept.iter().any(|u| u.treatment == arm) {
            return Err(Error::EmptyArm(if arm.is_treated() { "treated" } else { "control" }));
        }
    }
    Corpus::with_schema(kept, reviews.schema().clone())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct InterventionStats {
    pub posts: usize,
    pub kept_pairs: usize,
    pub refused: usize,
}

/// Id given to the transformed twin of `source_id`.
pub fn transformed_id(source_id: &str) -> String {
    format!("{source_id}::g")
}

fn with_provenance(mut u: Unit, t: &Transformed, task: &str) -> Unit {
    u.extra.insert("task".into(), Value::String(task.into()));
    u.extra.insert("model_id".into(), Value::String(t.model_id.clone()));
    u.extra.insert("prompt_hash".into(), Value::String(t.prompt_hash.clone()));
    u
}

/// Builds a paired corpus from posts: each post yields a control unit
/// (rephrased by the same model, so both arms are generated text) and a
/// treated unit rewritten by `task`. Posts where either call is refused are
/// dropped. Covariates are carried over to both units.
pub fn build_transformed_corpus(
    client: &dyn LlmClient,
    posts: &Corpus,
    task: PromptTask,
    settings: &LlmSettings,
    cache: Option<&ResponseCache>,
) -> Result<(Corpus, InterventionStats)> {
    let results = run_bounded(posts.units(), settings.parallelism, |u| {
        let ctrl = transform_text(client, &u.text, PromptTask::Rephrasing, settings, cache);
        let trt = transform_text(client, &u.text, task, settings, cache);
        match (ctrl, trt) {
            (Ok(c), Ok(t)) => Ok(Some((c, t))),
            (Err(Error::Refused { .. }), _) | (_, Err(Error::Refused { .. })) => Ok(None),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    })?;
    let mut units = Vec::new();
    let mut stats = InterventionStats {
        posts: posts.len(),
        ..Default::default()
    };
    for (u, r) in posts.units().iter().zip(results) {
        let Some((c, t)) = r else {
            stats.refused += 1;
            continue;
        };
        let mut src = u.clone();
        src.text = c.text.clone();
        src.treatment = Treatment::Control;
        src.outcome = None;
        src.outcome_counterfactual = None;
        src.pair_id = None;
        src.propensity = None;
        src.extra.remove("star");
        let dst = Unit::new(transformed_id(&u.id), t.text.clone(), Treatment::Treated)
            .with_covariates(u.covariates.clone())
            .with_pair(u.id.clone());
        units.push(with_provenance(src, &c, PromptTask::Rephrasing.name()));
        units.push(with_provenance(dst, &t, task.name()));
        stats.kept_pairs += 1;
    }
    if stats.refused > 0 {
        log::info!("dropped {} of {} posts after refusals", stats.refused, stats.posts);
    }
    Ok((Corpus::with_schema(units, posts.schema().clone())?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockClient;

    fn reviews(stars: &[u8]) -> Corpus {
        Corpus::new(
            stars
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let mut u = Unit::new(format!("r{i}"), "text", Treatment::Control);
                    u.extra.insert("star".into(), s.into());
                    u
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn star_sampling() {
        let c = sample_star_intervention(&reviews(&[5, 4, 1]), &[5], &[1, 2]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.units()[0].treatment, Treatment::Treated);
        assert_eq!(c.units()[1].id, "r2");
        assert!(matches!(
            sample_star_intervention(&reviews(&[3, 3]), &[5], &[1, 2]),
            Err(Error::EmptyArm(_))
        ));
    }

    #[test]
    fn echo_and_refusal() {
        let s = LlmSettings::default();
        let c = MockClient::constant("X");
        assert_eq!(transform_text(&c, "post", PromptTask::Rephrasing, &s, None).unwrap().text, "X");
        let c = MockClient::constant("I can't assist with that");
        assert!(matches!(
            transform_text(&c, "post", PromptTask::AngerTransformation, &s, None),
            Err(Error::Refused { .. })
        ));
    }

    #[test]
    fn cache_hit_skips_client() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let s = LlmSettings::default();
        let c = MockClient::constant("X");
        let a = transform_text(&c, "p", PromptTask::Rephrasing, &s, Some(&cache)).unwrap();
        let b = transform_text(&c, "p", PromptTask::Rephrasing, &s, Some(&cache)).unwrap();
        assert_eq!(a, b);
        assert_eq!(c.calls(), 1);
    }

    #[test]
    fn paired_corpus_drops_refusals() {
        let fixture: crate::llm::MockFixture = serde_json::from_str(
            r#"{"rules": [{"contains": "forbidden", "reply": {"text": "I can't help with that"}}],
                "default": {"text": "rewritten"}}"#,
        )
        .unwrap();
        let c = MockClient::new(fixture);
        let posts = Corpus::new(vec![
            Unit::new("a", "fine post", Treatment::Control),
            Unit::new("b", "forbidden post", Treatment::Control),
        ])
        .unwrap();
        let (out, stats) =
            build_transformed_corpus(&c, &posts, PromptTask::AngerTransformation, &LlmSettings::default(), None).unwrap();
        assert_eq!(stats.refused, 1);
        assert_eq!(out.len(), 2);
        assert_eq!(out.units()[1].pair_id.as_deref(), Some("a"));
        assert!(crate::corpus::link_pairs(&out).unwrap()[0].task.is_some());
    }
}
