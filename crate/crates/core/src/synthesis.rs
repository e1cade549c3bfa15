//! Outcome generation: the logistic semi-synthetic simulator with known
//! ground truth, and LLM-judge verdicts.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_paired, link_pairs, Corpus, Covariates, Treatment, Unit};
use crate::effects::{CateGroups, TruthSummary};
use crate::error::{Error, Result};
use crate::llm::{build_request, cached_call, LlmClient, LlmSettings, PromptTask, ResponseCache, RetryPolicy};
use crate::rng::stream;
use crate::scalar::{lit, sigmoid, to_f64, Scalar};

/// How the two arms of a unit share randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// One noise draw and one uniform for both arms.
    #[default]
    Shared,
    /// Separate draws per arm.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationParams<F> {
    /// Confound strength.
    pub beta_c: F,
    /// Treatment strength.
    pub beta_t: F,
    /// Propensity offset.
    pub beta_0: F,
    /// Standard deviation of the Gaussian logit noise.
    pub noise_std: F,
    pub seed: u64,
    pub coupling: Coupling,
}

impl<F: Scalar> Default for SimulationParams<F> {
    fn default() -> Self {
        SimulationParams {
            beta_c: lit(4.0),
            beta_t: lit(0.8),
            beta_0: lit(0.8),
            noise_std: F::zero(),
            seed: 0,
            coupling: Coupling::Shared,
        }
    }
}

impl<F: Scalar> SimulationParams<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= F::zero()) {
            return Err(Error::InvalidParameter("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_f64(&self) -> SimulationParams<f64> {
        SimulationParams {
            beta_c: to_f64(self.beta_c),
            beta_t: to_f64(self.beta_t),
            beta_0: to_f64(self.beta_0),
            noise_std: to_f64(self.noise_std),
            seed: self.seed,
            coupling: self.coupling,
        }
    }
}

/// Share of treated units within each unit's covariate group.
pub fn empirical_propensity(corpus: &Corpus) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::EmptyGroup("(no units)".into()));
    }
    let mut counts: HashMap<&Covariates, (usize, usize)> = HashMap::new();
    for u in corpus.units() {
        let e = counts.entry(&u.covariates).or_default();
        e.0 += u.treatment.as_u8() as usize;
        e.1 += 1;
    }
    let degenerate = counts
        .values()
        .filter(|(t, n)| *t == 0 || t == n)
        .count();
    if degenerate > 0 {
        log::warn!("{degenerate} covariate group(s) have propensity 0 or 1 (overlap violation)");
    }
    Ok(corpus
        .units()
        .iter()
        .map(|u| {
            let (t, n) = counts[&u.covariates];
            t as f64 / n as f64
        })
        .collect())
}

/// Copy of the corpus with `propensity` set from [`empirical_propensity`].
pub fn assign_propensities(corpus: Corpus) -> Result<Corpus> {
    let pi = empirical_propensity(&corpus)?;
    let mut it = pi.into_iter();
    corpus.map_units(|u| u.propensity = it.next())
}

/// Arm probability `sigmoid(beta_c (pi - beta_0) + beta_t T + noise)`.
pub fn simulate_outcome_prob<F: Scalar>(t: Treatment, pi: F, params: &SimulationParams<F>, noise: F) -> F {
    let tt = if t.is_treated() { F::one() } else { F::zero() };
    sigmoid(params.beta_c * (pi - params.beta_0) + params.beta_t * tt + noise)
}

/// Ground truth of a corpus with both potential outcomes known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ate: f64,
    pub labels: Vec<String>,
    pub cate: Vec<Option<f64>>,
    /// Ids of the units the effects are defined on (pair sources for
    /// paired corpora, otherwise every unit).
    pub unit_ids: Vec<String>,
    pub per_unit_effects: Vec<f64>,
}

impl GroundTruth {
    pub fn summary(&self) -> TruthSummary {
        TruthSummary {
            ate: self.ate,
            cate: self.cate.clone(),
        }
    }

    fn from_effects(corpus: &Corpus, scope: Vec<&Unit>, effects: Vec<f64>) -> Result<Self> {
        if effects.is_empty() {
            return Err(Error::EmptyInput);
        }
        let groups = CateGroups::from_corpus(corpus);
        let covs: Vec<Covariates> = scope.iter().map(|u| u.covariates.clone()).collect();
        let cate = groups
            .members(&covs)
            .iter()
            .map(|idx| {
                (!idx.is_empty()).then(|| idx.iter().map(|&i| effects[i]).sum::<f64>() / idx.len() as f64)
            })
            .collect();
        Ok(GroundTruth {
            ate: effects.iter().sum::<f64>() / effects.len() as f64,
            labels: groups.labels(),
            cate,
            unit_ids: scope.iter().map(|u| u.id.clone()).collect(),
            per_unit_effects: effects,
        })
    }
}

/// Units the effect is averaged over, each with its `(Y(1), Y(0))`.
fn potential_pairs(corpus: &Corpus) -> Result<Vec<(&Unit, Option<u8>, Option<u8>)>> {
    if is_paired(corpus) {
        link_pairs(corpus)?
            .iter()
            .map(|p| {
                let src = corpus.get(&p.source_id).expect("linked");
                let dst = corpus.get(&p.transformed_id).expect("linked");
                Ok((src, dst.outcome, src.outcome))
            })
            .collect()
    } else {
        Ok(corpus
            .units()
            .iter()
            .map(|u| (u, u.potential_outcome(Treatment::Treated), u.potential_outcome(Treatment::Control)))
            .collect())
    }
}

/// Ground truth from recorded potential outcomes: `Y(g(W)) - Y(W)` per pair
/// for paired corpora, `Y(1) - Y(0)` per unit otherwise. Units lacking
/// either outcome are skipped.
pub fn ground_truth_from_outcomes(corpus: &Corpus) -> Result<GroundTruth> {
    let mut scope = Vec::new();
    let mut effects = Vec::new();
    for (u, y1, y0) in potential_pairs(corpus)? {
        if let (Some(a), Some(b)) = (y1, y0) {
            scope.push(u);
            effects.push(a as f64 - b as f64);
        }
    }
    GroundTruth::from_effects(corpus, scope, effects)
}

/// Probability-scale ground truth, `sigmoid(arm 1) - sigmoid(arm 0)` with
/// zero noise, averaged without sampling.
pub fn closed_form_ground_truth(corpus: &Corpus, params: &SimulationParams<f64>) -> Result<GroundTruth> {
    let scope: Vec<&Unit> = potential_pairs(corpus)?.into_iter().map(|(u, _, _)| u).collect();
    let effects = scope
        .iter()
        .map(|u| {
            let pi = u.propensity.ok_or_else(|| Error::MissingPropensity(u.id.clone()))?;
            Ok(simulate_outcome_prob(Treatment::Treated, pi, params, 0.0)
                - simulate_outcome_prob(Treatment::Control, pi, params, 0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    GroundTruth::from_effects(corpus, scope, effects)
}

/// Key shared by a source unit and its transformed twin.
fn root_key(u: &Unit) -> &str {
    match (u.treatment, &u.pair_id) {
        (Treatment::Treated, Some(src)) => src,
        _ => &u.id,
    }
}

/// Draws `(Y(1), Y(0))` for one unit from its own RNG stream.
fn draw_pair(u: &Unit, params: &SimulationParams<f64>) -> Result<(u8, u8)> {
    let pi = u.propensity.ok_or_else(|| Error::MissingPropensity(u.id.clone()))?;
    let mut rng = stream(params.seed, &format!("outcome/{}", root_key(u)));
    let normal = Normal::new(0.0, params.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let (n1, n0, u1, u0) = match params.coupling {
        Coupling::Shared => {
            let n = normal.sample(&mut rng);
            let v: f64 = rng.gen();
            (n, n, v, v)
        }
        Coupling::Independent => {
            let n1 = normal.sample(&mut rng);
            let n0 = normal.sample(&mut rng);
            (n1, n0, rng.gen(), rng.gen())
        }
    };
    let p1 = simulate_outcome_prob(Treatment::Treated, pi, params, n1);
    let p0 = simulate_outcome_prob(Treatment::Control, pi, params, n0);
    Ok(((u1 < p1) as u8, (u0 < p0) as u8))
}

/// Samples both potential outcomes for every unit, sets the observed
/// `outcome` to the unit's own arm and `outcome_counterfactual` to the
/// other, and returns the sampled ground truth. Paired units share draws.
pub fn generate_potential_outcomes(corpus: &Corpus, params: &SimulationParams<f64>) -> Result<(Corpus, GroundTruth)> {
    params.validate()?;
    let drawn: Vec<(u8, u8)> = corpus
        .units()
        .par_iter()
        .map(|u| draw_pair(u, params))
        .collect::<Result<_>>()?;
    let mut it = drawn.into_iter();
    let out = corpus.clone().map_units(|u| {
        let (y1, y0) = it.next().expect("one draw per unit");
        let (obs, cf) = if u.treatment.is_treated() { (y1, y0) } else { (y0, y1) };
        u.outcome = Some(obs);
        u.outcome_counterfactual = Some(cf);
    })?;
    let truth = ground_truth_from_outcomes(&out)?;
    Ok((out, truth))
}

/// On-disk companion of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSidecar {
    pub ate: f64,
    pub cate: Vec<Option<f64>>,
    pub labels: Vec<String>,
    pub n_units: usize,
    pub params: Option<SimulationParams<f64>>,
}

impl GroundTruthSidecar {
    pub fn new(truth: &GroundTruth, params: Option<SimulationParams<f64>>) -> Self {
        GroundTruthSidecar {
            ate: truth.ate,
            cate: truth.cate.clone(),
            labels: truth.labels.clone(),
            n_units: truth.per_unit_effects.len(),
            params,
        }
    }

    pub fn summary(&self) -> TruthSummary {
        TruthSummary {
            ate: self.ate,
            cate: self.cate.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Maps a verdict to the binary outcome: YTA/ESH to 1, NTA/NAH to 0,
/// judged on the first token, case-insensitively.
pub fn parse_verdict(response: &str) -> Result<u8> {
    let token: String = response
        .split_whitespace()
        .next()
        .unwrap_or("")
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_uppercase();
    match token.as_str() {
        "YTA" | "ESH" => Ok(1),
        "NTA" | "NAH" => Ok(0),
        _ => Err(Error::UnparseableVerdict(response.to_string())),
    }
}

/// Asks the judge for a verdict on `post`, with the community comment when
/// given, and maps it to 0/1.
pub fn llm_verdict(
    client: &dyn LlmClient,
    post: &str,
    comment: Option<&str>,
    settings: &LlmSettings,
    cache: Option<&ResponseCache>,
) -> Result<u8> {
    let task = if comment.is_some() {
        PromptTask::JudgeWithComment
    } else {
        PromptTask::GiveVerdict
    };
    let req = build_request(settings, task, post, comment)?;
    let resp = cached_call(client, &req, cache, RetryPolicy::from_settings(settings))?;
    if resp.refused {
        return Err(Error::Refused {
            model_id: settings.model_id.clone(),
        });
    }
    parse_verdict(&resp.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockClient;

    fn p() -> SimulationParams<f64> {
        SimulationParams::default()
    }

    #[test]
    fn outcome_probabilities() {
        let a = simulate_outcome_prob(Treatment::Control, 0.8, &p(), 0.0);
        assert!((a - 0.5).abs() < 1e-12);
        let b = simulate_outcome_prob(Treatment::Treated, 0.8, &p(), 0.0);
        assert!((b - 0.6900).abs() < 1e-4);
        let c = simulate_outcome_prob(Treatment::Control, 0.55, &p(), 0.0);
        assert!((c - 0.2689).abs() < 1e-4);
    }

    fn grouped() -> Corpus {
        let t = [1, 1, 1, 0, 0, 0];
        let c = [1, 1, 1, 1, 0, 0];
        Corpus::new(
            (0..6)
                .map(|i| {
                    Unit::new(format!("u{i}"), "x", Treatment::try_from(t[i]).unwrap())
                        .with_covariates(Covariates::Category(c[i]))
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn empirical_propensity_counts() {
        let pi = empirical_propensity(&grouped()).unwrap();
        assert_eq!(pi, vec![0.75, 0.75, 0.75, 0.75, 0.0, 0.0]);
    }

    #[test]
    fn zero_treatment_strength_means_zero_effect() {
        let corpus = assign_propensities(grouped()).unwrap();
        let params = SimulationParams {
            beta_t: 0.0,
            ..p()
        };
        let (_, gt) = generate_potential_outcomes(&corpus, &params).unwrap();
        assert!(gt.per_unit_effects.iter().all(|&e| e == 0.0));
        assert_eq!(gt.ate, 0.0);
    }

    #[test]
    fn deterministic_and_monotone() {
        let corpus = assign_propensities(grouped()).unwrap();
        let (a, ga) = generate_potential_outcomes(&corpus, &p()).unwrap();
        let (b, gb) = generate_potential_outcomes(&corpus, &p()).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(ga, gb);
        assert!(ga.per_unit_effects.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn missing_propensity() {
        assert!(matches!(
            generate_potential_outcomes(&grouped(), &p()),
            Err(Error::MissingPropensity(_))
        ));
    }

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("YTA").unwrap(), 1);
        assert_eq!(parse_verdict("nah").unwrap(), 0);
        assert_eq!(parse_verdict("ESH.").unwrap(), 1);
        assert!(matches!(parse_verdict("maybe"), Err(Error::UnparseableVerdict(_))));
        let c = MockClient::constant("YTA");
        assert_eq!(llm_verdict(&c, "post", Some("c"), &LlmSettings::default(), None).unwrap(), 1);
        let c = MockClient::constant("I can't help with that");
        assert!(matches!(
            llm_verdict(&c, "post", None, &LlmSettings::default(), None),
            Err(Error::Refused { .. })
        ));
    }
}
