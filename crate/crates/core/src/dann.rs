//! Domain-adversarial outcome predictor.
//!
//! The shared projection feeds an outcome head (trained on labeled control
//! texts) and a domain head (control = 0, transformed = 1). The domain head
//! is attached through a gradient reversal layer, so the projection is pushed
//! toward features that do not separate the two domains while the domain head
//! itself keeps minimizing its loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Unit;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{Dense, DenseAdam, DenseGrad, Features, Network};
use crate::predictor::{encode_units, lr_for_epoch, outcome_labels, warn_single_class, TrainHyper, TrainedPredictor, TrainingMeta};
use crate::rng::{stream, StreamRng};
use crate::scalar::{from_usize, lit, sigmoid, Scalar};
use crate::train::{fit, init_network, Architecture, Batch, FitPlan, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DannHyper {
    /// Gain of the adversary schedule.
    pub gamma: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    /// Split evenly between labeled source and unlabeled target rows.
    pub batch_size: usize,
    pub lr_init: f64,
    pub alpha: f64,
    pub beta: f64,
    pub dropout: f64,
    pub hidden_units: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for DannHyper {
    fn default() -> Self {
        let t = TrainHyper::default();
        DannHyper {
            gamma: 1.0,
            warmup_epochs: 3,
            total_epochs: 20,
            batch_size: 32,
            lr_init: t.lr_init,
            alpha: t.alpha,
            beta: t.beta,
            dropout: t.dropout,
            hidden_units: t.hidden_units,
            val_fraction: t.val_fraction,
            seed: t.seed,
        }
    }
}

impl DannHyper {
    /// Shares optimizer and schedule settings with a baseline configuration.
    pub fn from_train(t: &TrainHyper) -> Self {
        DannHyper {
            total_epochs: t.epochs,
            lr_init: t.lr_init,
            alpha: t.alpha,
            beta: t.beta,
            dropout: t.dropout,
            hidden_units: t.hidden_units,
            val_fraction: t.val_fraction,
            seed: t.seed,
            ..DannHyper::default()
        }
    }

    /// The equivalent baseline hyperparameters (same schedule and batch size).
    pub fn train_hyper(&self) -> TrainHyper {
        TrainHyper {
            lr_init: self.lr_init,
            alpha: self.alpha,
            beta: self.beta,
            epochs: self.total_epochs,
            batch_size: self.batch_size,
            val_fraction: self.val_fraction,
            dropout: self.dropout,
            hidden_units: self.hidden_units,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_hyper().validate()?;
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::InvalidParameter("warmup_epochs must be below total_epochs".into()));
        }
        if !self.batch_size.is_multiple_of(2) {
            return Err(Error::InvalidParameter("batch_size must be even".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter("gamma must be positive".into()));
        }
        Ok(())
    }
}

/// `2 / (1 + exp(-gamma p)) - 1`.
pub fn lambda_at_progress<F: Scalar>(progress: F, gamma: F) -> F {
    let two = F::one() + F::one();
    two / (F::one() + (-gamma * progress).exp()) - F::one()
}

/// Adversary weight for a 0-based epoch: 0 during warmup, then the
/// logistic ramp with `p = (epoch - warmup) / total_epochs`.
pub fn lambda_at<F: Scalar>(epoch: usize, hyper: &DannHyper) -> F {
    if epoch < hyper.warmup_epochs {
        return F::zero();
    }
    let p = from_usize::<F>(epoch - hyper.warmup_epochs) / from_usize::<F>(hyper.total_epochs);
    lambda_at_progress(p, lit(hyper.gamma))
}

/// Gradient reversal: identity forward, `-lambda` times the incoming gradient
/// backward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReversal<F> {
    pub lambda: F,
}

impl<F: Scalar> GradientReversal<F> {
    pub fn new(lambda: F) -> Result<Self> {
        if lambda < F::zero() {
            return Err(Error::InvalidParameter("lambda must be non-negative".into()));
        }
        Ok(GradientReversal { lambda })
    }

    pub fn forward<'a>(&self, encoding: &'a [F]) -> &'a [F] {
        encoding
    }

    pub fn backward(&self, upstream: &[F]) -> Vec<F> {
        grl_backward(upstream, self.lambda)
    }
}

pub fn grl_apply<F: Scalar>(encoding: &[F], _lambda: F) -> Vec<F> {
    encoding.to_vec()
}

pub fn grl_backward<F: Scalar>(upstream: &[F], lambda: F) -> Vec<F> {
    upstream.iter().map(|&g| -lambda * g).collect()
}

/// Reporting form of the adversarial objective: `outcome - lambda * domain`.
pub fn combined_loss<F: Scalar>(outcome_loss: F, domain_loss: F, lambda: F) -> F {
    outcome_loss - lambda * domain_loss
}

/// Balanced batches for one epoch: each batch holds `batch_size/2` source and
/// `batch_size/2` target rows. The larger arm is walked in a fresh random
/// order; the smaller arm, and the tail of the larger one, are drawn with
/// replacement.
pub fn make_balanced_batches(
    n_source: usize,
    n_target: usize,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Batch>> {
    if n_source == 0 {
        return Err(Error::EmptyArm("source"));
    }
    if n_target == 0 {
        return Err(Error::EmptyArm("target"));
    }
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(Error::InvalidParameter("batch_size must be even and at least 2".into()));
    }
    let half = batch_size / 2;
    let n_batches = n_source.max(n_target).div_ceil(half);
    let total = n_batches * half;
    let draw = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<usize> {
        use rand::seq::SliceRandom;
        if n >= n_source.max(n_target) {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            while idx.len() < total {
                idx.push(rng.gen_range(0..n));
            }
            idx
        } else {
            (0..total).map(|_| rng.gen_range(0..n)).collect()
        }
    };
    let src = draw(n_source, rng);
    let tgt = draw(n_target, rng);
    Ok(src
        .chunks(half)
        .zip(tgt.chunks(half))
        .map(|(s, t)| Batch {
            source: s.to_vec(),
            target: t.to_vec(),
        })
        .collect())
}

/// Trained adversarial model: the outcome predictor plus diagnostics.
#[derive(Debug, Clone)]
pub struct DannModel<F> {
    pub predictor: TrainedPredictor<F>,
    pub lambda_trace: Vec<f64>,
}

impl<F: Scalar> DannModel<F> {
    pub fn domain_head(&self) -> Option<&Dense<F>> {
        self.predictor.network.domain_head.as_ref()
    }

    pub fn domain_prob(&self, text: &str) -> Result<F> {
        let f = encode_units::<F>(&self.predictor.encoder, &[&Unit::new("", text, crate::corpus::Treatment::Control)])?;
        Ok(self.predictor.network.domain_prob(f.row(0)).unwrap_or_else(F::nan))
    }
}

/// Trains the adversarial predictor on labeled `source` rows (checkpointing
/// on `val` F1) and unlabeled `target` rows.
pub fn train_dann<F: Scalar>(
    source: &[&Unit],
    val: &[&Unit],
    target: &[&Unit],
    encoder: &Encoder,
    hyper: &DannHyper,
) -> Result<DannModel<F>> {
    let (ns, nt, bs) = (source.len(), target.len(), hyper.batch_size);
    if ns == 0 {
        return Err(Error::NoLabeledData);
    }
    if nt == 0 {
        return Err(Error::EmptyArm("target"));
    }
    let mut plan = move |_e: usize, rng: &mut StreamRng| {
        make_balanced_batches(ns, nt, bs, rng).expect("arms checked non-empty")
    };
    let schedule = |e: usize| (e >= hyper.warmup_epochs).then(|| lambda_at::<F>(e, hyper));
    train_dann_with(source, val, target, encoder, hyper, &schedule, &mut plan)
}

/// [`train_dann`] with an explicit adversary schedule (`None` = domain module
/// off for that epoch) and batch plan.
pub fn train_dann_with<F: Scalar>(
    source: &[&Unit],
    val: &[&Unit],
    target: &[&Unit],
    encoder: &Encoder,
    hyper: &DannHyper,
    schedule: &dyn Fn(usize) -> Option<F>,
    plan: &mut dyn FnMut(usize, &mut StreamRng) -> Vec<Batch>,
) -> Result<DannModel<F>> {
    hyper.validate()?;
    if source.is_empty() {
        return Err(Error::NoLabeledData);
    }
    if target.is_empty() {
        return Err(Error::EmptyArm("target"));
    }
    let train_y: Vec<F> = outcome_labels(source)?;
    let val_y: Vec<F> = outcome_labels(val)?;
    warn_single_class(&train_y);
    let train_x = encode_units::<F>(encoder, source)?;
    let val_x = encode_units::<F>(encoder, val)?;
    let target_x = encode_units::<F>(encoder, target)?;

    let arch = Architecture {
        input_dim: train_x.dim(),
        hidden_units: hyper.hidden_units,
        domain_head: true,
    };
    let net = init_network::<F>(arch, lit(hyper.dropout), hyper.seed);
    let th = hyper.train_hyper();
    let lr = |e: usize| lr_for_epoch::<F>(e, &th);
    let out = fit(
        net,
        TrainingSet {
            train_x: &train_x,
            train_y: &train_y,
            val_x: &val_x,
            val_y: &val_y,
            target_x: Some(&target_x),
        },
        FitPlan {
            epochs: hyper.total_epochs,
            seed: hyper.seed,
            lr: &lr,
            batches: plan,
            adversary: Some(schedule),
        },
    );
    let lambda_trace = out
        .history
        .iter()
        .map(|s| s.lambda.unwrap_or(0.0))
        .collect();
    Ok(DannModel {
        predictor: TrainedPredictor {
            encoder: encoder.clone(),
            network: out.best,
            meta: TrainingMeta {
                epochs_run: out.history.len(),
                best_epoch: out.best_epoch,
                best_val_f1: out.history.get(out.best_epoch).map_or(0.0, |s| s.val_f1),
                seed: hyper.seed,
                history: out.history,
            },
        },
        lambda_trace,
    })
}

/// Post-hoc domain probe: fits a fresh logistic classifier on the frozen
/// shared features of `net` to separate `source` from `target` rows and
/// returns its training accuracy. High accuracy means the features still
/// encode the domain.
pub fn domain_probe_accuracy<F: Scalar>(
    net: &Network<F>,
    source: &Features<F>,
    target: &Features<F>,
    epochs: usize,
    seed: u64,
) -> f64 {
    let feats: Vec<(Vec<F>, F)> = (0..source.len())
        .map(|i| (net.features(source.row(i)), F::zero()))
        .chain((0..target.len()).map(|i| (net.features(target.row(i)), F::one())))
        .collect();
    if feats.is_empty() {
        return 0.0;
    }
    let dim = net.feature_dim();
    let mut rng = stream(seed, "probe");
    let mut probe = Dense::<F>::glorot(dim, 1, &mut rng);
    let mut opt = DenseAdam::new(&probe);
    let mut grad = DenseGrad::zeros_like(&probe);
    let lr: F = lit(0.05);
    let n: F = from_usize(feats.len());
    for t in 1..=epochs {
        grad.clear();
        for (h, y) in &feats {
            let dz = (sigmoid(probe.scalar_out(h)) - *y) / n;
            grad.bias[0] = grad.bias[0] + dz;
            for k in 0..dim {
                grad.weights[k] = grad.weights[k] + dz * h[k];
            }
        }
        opt.step(&mut probe, &grad, lr, t);
    }
    let half: F = lit(0.5);
    let correct = feats
        .iter()
        .filter(|(h, y)| (sigmoid(probe.scalar_out(h)) >= half) == (*y > half))
        .count();
    correct as f64 / feats.len() as f64
}
