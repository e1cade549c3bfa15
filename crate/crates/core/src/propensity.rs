//! Propensity model over texts, temperature calibration, inverse-propensity
//! weighted effect estimators and overlap diagnostics.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Covariates, Treatment, Unit};
use crate::effects::CateGroups;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::predictor::{encode_units, fit_labeled, shuffled_batches, TrainHyper, TrainedPredictor};
use crate::rng::{stream, StreamRng};
use crate::scalar::{bce_with_logit, from_usize, lit, sigmoid, Field, Scalar};

/// Text classifier for `P(T=1 | W)` with a calibration temperature.
#[derive(Debug, Clone)]
pub struct PropensityModel<F> {
    pub predictor: TrainedPredictor<F>,
    pub temperature: F,
}

impl<F: Scalar> PropensityModel<F> {
    /// Calibrated score `sigmoid(logit / temperature)`.
    pub fn score(&self, text: &str) -> Result<F> {
        Ok(sigmoid(self.predictor.logit(text)? / self.temperature))
    }

    pub fn score_batch(&self, texts: &[&str]) -> Result<Vec<F>> {
        Ok(self
            .predictor
            .logits_batch(texts)?
            .into_iter()
            .map(|z| sigmoid(z / self.temperature))
            .collect())
    }

    /// Folds the temperature into the head so the plain predictor emits
    /// calibrated probabilities.
    pub fn into_calibrated_predictor(self) -> TrainedPredictor<F> {
        let mut p = self.predictor;
        let t = self.temperature;
        let head = &mut p.network.outcome_head;
        head.weights.iter_mut().for_each(|w| *w = *w / t);
        head.bias.iter_mut().for_each(|b| *b = *b / t);
        p
    }
}

/// Mean binary cross-entropy of `sigmoid(z / t)`.
fn temperature_nll<F: Scalar>(logits: &[F], labels: &[F], t: F) -> F {
    let n: F = from_usize(logits.len());
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| bce_with_logit(z / t, y))
        .fold(F::zero(), |a, b| a + b)
        / n
}

/// Temperature minimizing validation cross-entropy, found by golden-section
/// search on `log10 T` over `[-3, 3]` to a bracket width of `1e-4`. The loss
/// is convex in `1/T`, hence unimodal in `log T`.
pub fn fit_temperature<F: Scalar>(val_logits: &[F], val_labels: &[F]) -> Result<F> {
    if val_logits.len() != val_labels.len() {
        return Err(Error::LengthMismatch {
            expected: val_logits.len(),
            found: val_labels.len(),
        });
    }
    let pos = val_labels.iter().filter(|&&y| y > F::zero()).count();
    if pos == 0 || pos == val_labels.len() {
        return Err(Error::DegenerateValidation);
    }
    let ten: F = lit(10.0);
    let loss = |s: F| temperature_nll(val_logits, val_labels, ten.powf(s));
    let inv_phi: F = lit((5f64.sqrt() - 1.0) / 2.0);
    let tol: F = lit(1e-4);
    let (mut a, mut b): (F, F) = (lit(-3.0), lit(3.0));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (loss(c), loss(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = loss(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = loss(d);
        }
    }
    let two = F::one() + F::one();
    Ok(ten.powf((a + b) / two))
}

/// Trains the propensity classifier on every unit with `T` as label, holding
/// out `val_fraction` of units to select the checkpoint and, when
/// `calibrate` is set, to fit the temperature.
pub fn train_propensity<F: Scalar>(
    corpus: &Corpus,
    encoder: &Encoder,
    hyper: &TrainHyper,
    calibrate: bool,
) -> Result<PropensityModel<F>> {
    if corpus.arm(Treatment::Treated).next().is_none() {
        return Err(Error::EmptyArm("treated"));
    }
    if corpus.arm(Treatment::Control).next().is_none() {
        return Err(Error::EmptyArm("control"));
    }
    let mut units: Vec<&Unit> = corpus.units().iter().collect();
    units.shuffle(&mut stream(hyper.seed, "propensity-split"));
    let n_val = ((units.len() as f64) * hyper.val_fraction).round().max(1.0) as usize;
    let n_val = n_val.min(units.len() - 1);
    let (val, train) = units.split_at(n_val);
    fit_propensity_split(train, val, encoder, hyper, calibrate)
}

/// Propensity training on an explicit split (used per fold when cross-fitting).
pub fn fit_propensity_split<F: Scalar>(
    train: &[&Unit],
    val: &[&Unit],
    encoder: &Encoder,
    hyper: &TrainHyper,
    calibrate: bool,
) -> Result<PropensityModel<F>> {
    hyper.validate()?;
    let label = |u: &&Unit| from_usize::<F>(u.treatment.as_u8() as usize);
    let train_y: Vec<F> = train.iter().map(label).collect();
    let val_y: Vec<F> = val.iter().map(label).collect();
    let train_x = encode_units::<F>(encoder, train)?;
    let val_x = encode_units::<F>(encoder, val)?;
    let (n, bs) = (train.len(), hyper.batch_size);
    let mut plan = move |_e: usize, rng: &mut StreamRng| shuffled_batches(n, bs, rng);
    let predictor = fit_labeled(encoder, hyper, &train_x, &train_y, &val_x, &val_y, &mut plan)?;
    let temperature = if calibrate {
        let logits: Vec<F> = (0..val_x.len())
            .map(|i| predictor.network.outcome_logit(val_x.row(i)))
            .collect();
        match fit_temperature(&logits, &val_y) {
            Ok(t) => t,
            Err(Error::DegenerateValidation) => {
                log::warn!("propensity validation split has one class; temperature left at 1");
                F::one()
            }
            Err(e) => return Err(e),
        }
    } else {
        F::one()
    };
    Ok(PropensityModel {
        predictor,
        temperature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpwForm {
    /// Arm-size normalization with inverse weights inside each sum.
    #[default]
    Paper,
    /// Within-arm weighted means (weights normalized to sum to one).
    Hajek,
}

/// Clamps propensities into `[eps, 1 - eps]`.
pub fn clip_propensities<F: Field>(pi: &[F], eps: F) -> Result<Vec<F>> {
    let half = F::one() / (F::one() + F::one());
    if !(eps > F::zero() && eps < half) {
        return Err(Error::InvalidParameter("clip epsilon must lie in (0, 0.5)".into()));
    }
    let hi = F::one() - eps;
    Ok(pi
        .iter()
        .map(|&p| if p < eps { eps } else if p > hi { hi } else { p })
        .collect())
}

fn check_inputs<F: Field>(mu: &[F], pi: &[F], treated: &[bool]) -> Result<()> {
    if mu.len() != pi.len() {
        return Err(Error::LengthMismatch {
            expected: mu.len(),
            found: pi.len(),
        });
    }
    if mu.len() != treated.len() {
        return Err(Error::LengthMismatch {
            expected: mu.len(),
            found: treated.len(),
        });
    }
    let bad: Vec<String> = pi
        .iter()
        .enumerate()
        .filter(|(_, &p)| !(p > F::zero() && p < F::one()))
        .map(|(i, _)| format!("#{i}"))
        .collect();
    if !bad.is_empty() {
        return Err(Error::PropensityOutOfRange { unit_ids: bad });
    }
    Ok(())
}

/// Inverse-propensity weighted ATE over units with predictions `mu`
/// (`mu(g(W_i))` for treated rows, `mu(W_i)` for controls).
pub fn ipw_ate<F: Field>(mu: &[F], pi: &[F], treated: &[bool], form: IpwForm) -> Result<F> {
    check_inputs(mu, pi, treated)?;
    let idx: Vec<usize> = (0..mu.len()).collect();
    ipw_on(mu, pi, treated, &idx, form)?.ok_or(Error::EmptyArm(if treated.iter().any(|&t| t) {
        "control"
    } else {
        "treated"
    }))
}

/// IPW estimate restricted to `idx`; `None` when either arm is empty there.
fn ipw_on<F: Field>(mu: &[F], pi: &[F], treated: &[bool], idx: &[usize], form: IpwForm) -> Result<Option<F>> {
    let (mut s1, mut w1, mut n1) = (F::zero(), F::zero(), 0usize);
    let (mut s0, mut w0, mut n0) = (F::zero(), F::zero(), 0usize);
    for &i in idx {
        if treated[i] {
            let w = F::one() / pi[i];
            s1 = s1 + mu[i] * w;
            w1 = w1 + w;
            n1 += 1;
        } else {
            let w = F::one() / (F::one() - pi[i]);
            s0 = s0 + mu[i] * w;
            w0 = w0 + w;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Ok(None);
    }
    Ok(Some(match form {
        IpwForm::Paper => s1 / from_usize::<F>(n1) - s0 / from_usize::<F>(n0),
        IpwForm::Hajek => s1 / w1 - s0 / w0,
    }))
}

/// IPW estimate within each covariate group; `None` where a group lacks
/// either arm.
pub fn ipw_cate<F: Field>(
    mu: &[F],
    pi: &[F],
    treated: &[bool],
    covariates: &[Covariates],
    groups: &CateGroups,
    form: IpwForm,
) -> Result<Vec<Option<F>>> {
    check_inputs(mu, pi, treated)?;
    if covariates.len() != mu.len() {
        return Err(Error::LengthMismatch {
            expected: mu.len(),
            found: covariates.len(),
        });
    }
    let members = groups.members(covariates);
    members
        .iter()
        .map(|idx| ipw_on(mu, pi, treated, idx, form))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Counts over 20 equal-width bins on `[0, 1]` (1.0 falls in the last bin).
    pub histogram: Vec<usize>,
    pub min: f64,
    pub max: f64,
    pub n: usize,
    /// Share of scores below 0.05 or above 0.95.
    pub fraction_outside: f64,
    /// Set when more than half of the scores are outside `[0.05, 0.95]`.
    pub flagged: bool,
}

pub const OVERLAP_BINS: usize = 20;

pub fn overlap_report(pi: &[f64]) -> OverlapReport {
    let mut histogram = vec![0usize; OVERLAP_BINS];
    let mut outside = 0usize;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &p in pi {
        let b = ((p * OVERLAP_BINS as f64).floor().max(0.0) as usize).min(OVERLAP_BINS - 1);
        histogram[b] += 1;
        if !(0.05..=0.95).contains(&p) {
            outside += 1;
        }
        min = min.min(p);
        max = max.max(p);
    }
    let fraction_outside = if pi.is_empty() {
        0.0
    } else {
        outside as f64 / pi.len() as f64
    };
    OverlapReport {
        histogram,
        min: if pi.is_empty() { f64::NAN } else { min },
        max: if pi.is_empty() { f64::NAN } else { max },
        n: pi.len(),
        fraction_outside,
        flagged: fraction_outside > 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ipw_paper_and_hajek_hand_values() {
        let mu = [0.6f64, 0.8, 0.4, 0.2];
        let pi = [0.5; 4];
        let t = [true, true, false, false];
        let paper = ipw_ate(&mu, &pi, &t, IpwForm::Paper).unwrap();
        assert!((paper - 0.8).abs() < 1e-12);
        let hajek = ipw_ate(&mu, &pi, &t, IpwForm::Hajek).unwrap();
        assert!((hajek - 0.4).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_propensity_reported() {
        let err = ipw_ate(&[0.5, 0.5], &[1.0, 0.3], &[true, false], IpwForm::Paper).unwrap_err();
        match err {
            Error::PropensityOutOfRange { unit_ids } => assert_eq!(unit_ids, vec!["#0"]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn empty_arm_is_error() {
        assert!(matches!(
            ipw_ate(&[0.5], &[0.5], &[true], IpwForm::Paper),
            Err(Error::EmptyArm(_))
        ));
    }

    #[test]
    fn clipping() {
        let c = clip_propensities(&[0.001, 0.5, 0.999], 0.01).unwrap();
        assert_eq!(c, vec![0.01, 0.5, 0.99]);
        assert!(clip_propensities(&[0.5], 0.5).is_err());
    }

    #[test]
    fn temperature_rejects_single_class() {
        assert!(matches!(
            fit_temperature(&[0.2f64, 1.0], &[1.0, 1.0]),
            Err(Error::DegenerateValidation)
        ));
    }

    #[test]
    fn overlap_cases() {
        let r = overlap_report(&[0.5; 10]);
        assert_eq!(r.fraction_outside, 0.0);
        assert!(!r.flagged);
        assert_eq!(r.histogram[10], 10);
        let r = overlap_report(&[0.001, 0.999, 0.001, 0.999]);
        assert_eq!(r.fraction_outside, 1.0);
        assert!(r.flagged);
        assert_eq!(r.histogram[0] + r.histogram[19], 4);
    }

    #[test]
    fn calibrated_predictor_matches_scaled_score() {
        use crate::nn::{Dense, Network};
        use crate::predictor::TrainingMeta;
        let mut head = Dense::<f64>::zeros(4, 1);
        head.weights = vec![1.5, -0.5, 2.0, 0.25];
        head.bias = vec![-0.3];
        let predictor = TrainedPredictor {
            encoder: Encoder::hashing(4, 1).unwrap(),
            network: Network {
                projection: None,
                outcome_head: head,
                domain_head: None,
                dropout: 0.3,
            },
            meta: TrainingMeta {
                epochs_run: 0,
                best_epoch: 0,
                best_val_f1: 0.0,
                seed: 0,
                history: vec![],
            },
        };
        let m = PropensityModel {
            predictor,
            temperature: 2.5,
        };
        let text = "some words here";
        let direct = m.score(text).unwrap();
        let baked = m.clone().into_calibrated_predictor();
        let via = crate::predictor::predict_prob(&baked, text).unwrap();
        assert!((direct - via).abs() < 1e-15);
    }
}
