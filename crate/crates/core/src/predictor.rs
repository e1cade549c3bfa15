//! Baseline outcome predictor: text encoder, dropout and a logistic head,
//! trained with Adam under a polynomial-decay learning-rate schedule with
//! best-validation-F1 checkpointing. Also hosts k-fold cross-fitting.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Treatment, Unit};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{Features, Network};
use crate::rng::{stream, StreamRng};
use crate::scalar::{from_usize, lit, to_f64, Scalar};
use crate::train::{fit, init_network, Architecture, Batch, EpochStats, FitPlan, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub lr_init: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub dropout: f64,
    /// Width of the trainable projection over the encoding (0 = linear head).
    pub hidden_units: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr_init: 5e-5,
            alpha: 10.0,
            beta: 0.25,
            epochs: 20,
            batch_size: 64,
            val_fraction: 0.2,
            dropout: 0.3,
            hidden_units: 32,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.lr_init > 0.0 && self.alpha > 0.0 && self.beta > 0.0) {
            return bad("lr_init, alpha and beta must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0,1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0,1)");
        }
        Ok(())
    }
}

/// Learning rate at training progress `p = epoch / epochs`:
/// `lr_init / (1 + alpha p)^beta`.
pub fn lr_at<F: Scalar>(progress: F, hyper: &TrainHyper) -> F {
    let lr0: F = lit(hyper.lr_init);
    let alpha: F = lit(hyper.alpha);
    let beta: F = lit(hyper.beta);
    lr0 / (F::one() + alpha * progress).powf(beta)
}

/// Per-epoch rate, with 0-based epochs so the first epoch uses `lr_init`.
pub fn lr_for_epoch<F: Scalar>(epoch: usize, hyper: &TrainHyper) -> F {
    lr_at(from_usize::<F>(epoch) / from_usize::<F>(hyper.epochs), hyper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub seed: u64,
    #[serde(default)]
    pub history: Vec<EpochStats>,
}

/// A fitted text classifier mapping a text to a probability.
#[derive(Debug, Clone)]
pub struct TrainedPredictor<F> {
    pub encoder: Encoder,
    pub network: Network<F>,
    pub meta: TrainingMeta,
}

impl<F: Scalar> TrainedPredictor<F> {
    pub fn logit(&self, text: &str) -> Result<F> {
        let m = self.encoder.encode_batch::<F>(&[text])?;
        let f = Features::from_matrix(&m);
        Ok(self.network.outcome_logit(f.row(0)))
    }

    /// Probabilities for many texts (dropout off).
    pub fn predict_batch(&self, texts: &[&str]) -> Result<Vec<F>> {
        Ok(self.logits_batch(texts)?.into_iter().map(crate::scalar::sigmoid).collect())
    }

    pub fn logits_batch(&self, texts: &[&str]) -> Result<Vec<F>> {
        let m = self.encoder.encode_batch::<F>(texts)?;
        let f = Features::from_matrix(&m);
        Ok((0..f.len()).map(|i| self.network.outcome_logit(f.row(i))).collect())
    }
}

/// Sigmoid of the head over the text's encoding.
pub fn predict_prob<F: Scalar>(model: &TrainedPredictor<F>, text: &str) -> Result<F> {
    model.logit(text).map(crate::scalar::sigmoid)
}

/// Encodes units and pulls out binary labels.
pub(crate) fn encode_units<F: Scalar>(encoder: &Encoder, units: &[&Unit]) -> Result<Features<F>> {
    let texts: Vec<&str> = units.iter().map(|u| u.text.as_str()).collect();
    Ok(Features::from_matrix(&encoder.encode_batch::<F>(&texts)?))
}

pub(crate) fn outcome_labels<F: Scalar>(units: &[&Unit]) -> Result<Vec<F>> {
    units
        .iter()
        .map(|u| {
            u.outcome
                .map(|y| from_usize::<F>(y as usize))
                .ok_or(Error::NoLabeledData)
        })
        .collect()
}

pub(crate) fn warn_single_class<F: Scalar>(labels: &[F]) {
    let pos = labels.iter().filter(|&&y| y > F::zero()).count();
    if pos == 0 || pos == labels.len() {
        log::warn!("training set contains a single class; validation F1 may be undefined (treated as 0)");
    }
}

/// Shuffled fixed-size batches over `n` source rows, one shuffle per epoch.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut StreamRng) -> Vec<Batch> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size)
        .map(|c| Batch {
            source: c.to_vec(),
            target: Vec::new(),
        })
        .collect()
}

/// Trains on labeled `train_units`, checkpointing on `val_units` F1.
pub fn train_outcome_predictor<F: Scalar>(
    train_units: &[&Unit],
    val_units: &[&Unit],
    encoder: &Encoder,
    hyper: &TrainHyper,
) -> Result<TrainedPredictor<F>> {
    let (n, bs) = (train_units.len(), hyper.batch_size);
    let mut plan = move |_epoch: usize, rng: &mut StreamRng| shuffled_batches(n, bs, rng);
    train_outcome_predictor_with_plan(train_units, val_units, encoder, hyper, &mut plan)
}

/// Same as [`train_outcome_predictor`] with an explicit batch plan over the
/// training rows.
pub fn train_outcome_predictor_with_plan<F: Scalar>(
    train_units: &[&Unit],
    val_units: &[&Unit],
    encoder: &Encoder,
    hyper: &TrainHyper,
    plan: &mut dyn FnMut(usize, &mut StreamRng) -> Vec<Batch>,
) -> Result<TrainedPredictor<F>> {
    hyper.validate()?;
    if train_units.is_empty() {
        return Err(Error::NoLabeledData);
    }
    let train_y: Vec<F> = outcome_labels(train_units)?;
    let val_y: Vec<F> = outcome_labels(val_units)?;
    warn_single_class(&train_y);
    let train_x = encode_units::<F>(encoder, train_units)?;
    let val_x = encode_units::<F>(encoder, val_units)?;
    fit_labeled(encoder, hyper, &train_x, &train_y, &val_x, &val_y, plan)
}

pub(crate) fn fit_labeled<F: Scalar>(
    encoder: &Encoder,
    hyper: &TrainHyper,
    train_x: &Features<F>,
    train_y: &[F],
    val_x: &Features<F>,
    val_y: &[F],
    plan: &mut dyn FnMut(usize, &mut StreamRng) -> Vec<Batch>,
) -> Result<TrainedPredictor<F>> {
    let arch = Architecture {
        input_dim: train_x.dim(),
        hidden_units: hyper.hidden_units,
        domain_head: false,
    };
    let net = init_network::<F>(arch, lit(hyper.dropout), hyper.seed);
    let lr = |e: usize| lr_for_epoch::<F>(e, hyper);
    let out = fit(
        net,
        TrainingSet {
            train_x,
            train_y,
            val_x,
            val_y,
            target_x: None,
        },
        FitPlan {
            epochs: hyper.epochs,
            seed: hyper.seed,
            lr: &lr,
            batches: plan,
            adversary: None,
        },
    );
    Ok(TrainedPredictor {
        encoder: encoder.clone(),
        network: out.best,
        meta: TrainingMeta {
            epochs_run: out.history.len(),
            best_epoch: out.best_epoch,
            best_val_f1: out.history.get(out.best_epoch).map_or(0.0, |s| s.val_f1),
            seed: hyper.seed,
            history: out.history,
        },
    })
}

/// Which label a cross-fitted model learns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Observed outcomes of control units only.
    ControlOutcome,
    /// Treatment indicator of every unit.
    Treatment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossFitConfig {
    pub k: usize,
    pub seed: u64,
    /// Share of the labeled training units held out for checkpoint selection.
    pub val_fraction: f64,
    pub label: LabelSource,
}

impl CrossFitConfig {
    pub fn new(k: usize, seed: u64, label: LabelSource) -> Self {
        CrossFitConfig {
            k,
            seed,
            val_fraction: 0.2,
            label,
        }
    }
}

/// Data handed to the trainer for one fold.
#[derive(Debug, Clone)]
pub struct FoldSplit<'a> {
    pub fold: usize,
    /// Labeled training units (80% of the labeled units outside the fold).
    pub train: Vec<&'a Unit>,
    /// Labeled validation units (the remaining 20%).
    pub val: Vec<&'a Unit>,
    /// Unlabeled treated units outside the fold (domain-adaptation target).
    pub target: Vec<&'a Unit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_target: usize,
    pub n_predicted: usize,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone)]
pub struct CrossFit<F> {
    /// One prediction per corpus unit, in corpus order.
    pub predictions: Vec<F>,
    /// Held-out logits, aligned with `predictions`.
    pub logits: Vec<F>,
    pub fold_of: Vec<usize>,
    pub folds: Vec<FoldSummary>,
    /// The model trained for each fold.
    pub models: Vec<TrainedPredictor<F>>,
}

/// Key that keeps a source unit and its transformed counterpart together.
fn pair_root(u: &Unit) -> &str {
    match (u.treatment, &u.pair_id) {
        (Treatment::Treated, Some(src)) => src,
        _ => &u.id,
    }
}

/// Fold index of every unit. Pair roots are shuffled with `seed` and dealt
/// round-robin, so folds differ in size by at most one pair.
pub fn assign_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidParameter("k must be at least 2".into()));
    }
    let mut roots: Vec<&str> = Vec::new();
    let mut seen = HashMap::new();
    for u in corpus.units() {
        let r = pair_root(u);
        if !seen.contains_key(r) {
            seen.insert(r, 0usize);
            roots.push(r);
        }
    }
    let mut rng = stream(seed, "folds");
    roots.shuffle(&mut rng);
    for (i, r) in roots.iter().enumerate() {
        seen.insert(r, i % k);
    }
    Ok(corpus.units().iter().map(|u| seen[pair_root(u)]).collect())
}

fn is_labeled(u: &Unit, label: LabelSource) -> bool {
    match label {
        LabelSource::ControlOutcome => u.treatment == Treatment::Control && u.outcome.is_some(),
        LabelSource::Treatment => true,
    }
}

/// Returns a copy of the unit whose `outcome` is the requested label.
fn relabel(u: &Unit, label: LabelSource) -> Unit {
    let mut v = u.clone();
    match label {
        LabelSource::Treatment => v.outcome = Some(u.treatment.as_u8()),
        LabelSource::ControlOutcome if u.treatment.is_treated() => v.outcome = None,
        LabelSource::ControlOutcome => {}
    }
    v.outcome_counterfactual = None;
    v
}

/// k-fold cross-fitting: each fold is predicted by a model trained on the
/// other folds, so no unit's label reaches the model that predicts it.
pub fn cross_fit<F, T>(corpus: &Corpus, cfg: CrossFitConfig, trainer: T) -> Result<CrossFit<F>>
where
    F: Scalar,
    T: Fn(FoldSplit<'_>) -> Result<TrainedPredictor<F>> + Sync,
{
    let CrossFitConfig {
        k,
        seed,
        val_fraction,
        label,
    } = cfg;
    let fold_of = assign_folds(corpus, k, seed)?;
    // Relabeled copies keep counterfactual fields out of every trainer.
    let views: Vec<Unit> = corpus.units().iter().map(|u| relabel(u, label)).collect();
    for f in 0..k {
        let labeled = views
            .iter()
            .zip(&fold_of)
            .filter(|(u, &g)| g == f && is_labeled(u, label))
            .count();
        if labeled == 0 {
            return Err(Error::FoldTooSmall { fold: f });
        }
    }

    let results: Vec<Result<(Vec<(usize, F)>, FoldSummary, TrainedPredictor<F>)>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let mut labeled: Vec<&Unit> = Vec::new();
            let mut target: Vec<&Unit> = Vec::new();
            for (u, &g) in views.iter().zip(&fold_of) {
                if g == f {
                    continue;
                }
                if is_labeled(u, label) {
                    labeled.push(u);
                } else if u.treatment == Treatment::Treated {
                    target.push(u);
                }
            }
            let mut rng = stream(seed ^ (f as u64).wrapping_mul(0x100_0000_01b3), "val-split");
            labeled.shuffle(&mut rng);
            let n_val = ((labeled.len() as f64) * val_fraction).round().max(1.0) as usize;
            let n_val = n_val.min(labeled.len().saturating_sub(1));
            let val = labeled[..n_val].to_vec();
            let train = labeled[n_val..].to_vec();
            let (n_train, n_val, n_target) = (train.len(), val.len(), target.len());
            let model = trainer(FoldSplit {
                fold: f,
                train,
                val,
                target,
            })?;
            let held: Vec<usize> = (0..views.len()).filter(|&i| fold_of[i] == f).collect();
            let texts: Vec<&str> = held.iter().map(|&i| views[i].text.as_str()).collect();
            let logits = model.logits_batch(&texts)?;
            let summary = FoldSummary {
                fold: f,
                n_train,
                n_val,
                n_target,
                n_predicted: held.len(),
                meta: model.meta.clone(),
            };
            Ok((held.into_iter().zip(logits).collect(), summary, model))
        })
        .collect();

    let mut logits = vec![F::nan(); views.len()];
    let mut folds = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    for r in results {
        let (preds, summary, model) = r?;
        models.push(model);
        for (i, z) in preds {
            logits[i] = z;
        }
        folds.push(summary);
    }
    let predictions = logits.iter().map(|&z| crate::scalar::sigmoid(z)).collect();
    Ok(CrossFit {
        predictions,
        logits,
        fold_of,
        folds,
        models,
    })
}

/// Metadata half of a checkpoint bundle; arrays live in `weights.bin` as
/// little-endian `f64` in the listed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: serde_json::Value,
    pub hyper: serde_json::Value,
    pub fold: Option<usize>,
    pub seed: u64,
    pub dropout: f64,
    pub arrays: Vec<ArrayEntry>,
    pub training: TrainingMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Writes `model.json` and `weights.bin` under `dir`.
pub fn save_checkpoint<F: Scalar>(
    dir: &Path,
    model: &TrainedPredictor<F>,
    hyper: &impl Serialize,
    fold: Option<usize>,
    extra: Option<serde_json::Value>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let net = &model.network;
    let mut arrays = Vec::new();
    let mut blob: Vec<f64> = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, data: &[F]| {
        arrays.push(ArrayEntry {
            name: name.to_string(),
            shape,
            offset: blob.len(),
        });
        blob.extend(data.iter().map(|&x| to_f64(x)));
    };
    if let Some(p) = &net.projection {
        push("projection.weight", vec![p.outputs, p.inputs], &p.weights);
        push("projection.bias", vec![p.outputs], &p.bias);
    }
    let h = &net.outcome_head;
    push("outcome_head.weight", vec![h.outputs, h.inputs], &h.weights);
    push("outcome_head.bias", vec![h.outputs], &h.bias);
    if let Some(d) = &net.domain_head {
        push("domain_head.weight", vec![d.outputs, d.inputs], &d.weights);
        push("domain_head.bias", vec![d.outputs], &d.bias);
    }
    let meta = CheckpointMeta {
        encoder: serde_json::to_value(&model.encoder)?,
        hyper: serde_json::to_value(hyper)?,
        fold,
        seed: model.meta.seed,
        dropout: to_f64(net.dropout),
        arrays,
        training: model.meta.clone(),
        extra,
    };
    let json_path = dir.join("model.json");
    fs::write(&json_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&json_path, e))?;
    let bytes: Vec<u8> = blob.iter().flat_map(|x| x.to_le_bytes()).collect();
    let bin_path = dir.join("weights.bin");
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
}

/// Reads a bundle written by [`save_checkpoint`].
pub fn load_checkpoint<F: Scalar>(dir: &Path) -> Result<(TrainedPredictor<F>, CheckpointMeta)> {
    let json_path = dir.join("model.json");
    let raw = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let meta: CheckpointMeta = serde_json::from_slice(&raw)?;
    let bin_path = dir.join("weights.bin");
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let blob: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let get = |name: &str| -> Option<(Vec<usize>, Vec<F>)> {
        meta.arrays.iter().find(|a| a.name == name).map(|a| {
            let n: usize = a.shape.iter().product();
            (a.shape.clone(), blob[a.offset..a.offset + n].iter().map(|&x| lit(x)).collect())
        })
    };
    let dense = |prefix: &str| -> Option<crate::nn::Dense<F>> {
        let (shape, weights) = get(&format!("{prefix}.weight"))?;
        let (_, bias) = get(&format!("{prefix}.bias"))?;
        Some(crate::nn::Dense {
            inputs: shape[1],
            outputs: shape[0],
            weights,
            bias,
        })
    };
    let outcome_head = dense("outcome_head").ok_or_else(|| Error::MalformedRecord {
        line: 0,
        message: "checkpoint lacks outcome head".into(),
    })?;
    let network = Network {
        projection: dense("projection"),
        outcome_head,
        domain_head: dense("domain_head"),
        dropout: lit(meta.dropout),
    };
    let encoder: Encoder = serde_json::from_value(meta.encoder.clone())?;
    Ok((
        TrainedPredictor {
            encoder,
            network,
            meta: meta.training.clone(),
        },
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;

    #[test]
    fn lr_schedule_values() {
        let h = TrainHyper::default();
        assert_eq!(lr_at(0.0f64, &h), 5e-5);
        // direct evaluation: 5e-5 / 11^0.25 and 5e-5 / 6^0.25
        let at1 = lr_at(1.0f64, &h);
        assert!(((at1 - 2.7455e-5) / 2.7455e-5).abs() < 1e-4, "{at1}");
        assert!((at1 - 5e-5 / 11f64.powf(0.25)).abs() < 1e-18);
        let half = lr_at(0.5f64, &h);
        assert!(((half - 3.1947e-5) / 3.1947e-5).abs() < 1e-4, "{half}");
        assert_eq!(lr_for_epoch::<f64>(0, &h), 5e-5);
    }

    #[test]
    fn zero_head_predicts_half() {
        let model = TrainedPredictor {
            encoder: Encoder::hashing(8, 0).unwrap(),
            network: Network {
                projection: None,
                outcome_head: Dense::zeros(8, 1),
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
        assert_eq!(predict_prob(&model, "anything at all").unwrap(), 0.5);
        assert_eq!(predict_prob(&model, "").unwrap(), 0.5);
    }

    #[test]
    fn hyper_validation() {
        assert!(TrainHyper::default().validate().is_ok());
        let h = TrainHyper {
            val_fraction: 1.0,
            ..TrainHyper::default()
        };
        assert!(h.validate().is_err());
    }
}
