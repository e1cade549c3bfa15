//! Shared mini-batch training loop for the plain and domain-adversarial
//! predictors.
//!
//! Both trainers run through [`fit`]; they differ only in the batch plan and
//! whether an adversary schedule is supplied. Random draws come from separate
//! streams (initialization, batching, outcome dropout, domain dropout), so a
//! domain-adversarial run with its adversary switched off consumes exactly the
//! same outcome-path randomness as a plain run over the same source batches.

use serde::{Deserialize, Serialize};

use crate::dann::grl_backward;
use crate::nn::{dropout_mask, Dense, DenseAdam, DenseGrad, Features, Network};
use crate::rng::{stream, StreamRng};
use crate::scalar::{bce_with_logit, from_usize, sigmoid, to_f64, Scalar};

/// Indices into the source (labeled) and target (unlabeled) feature sets.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Batch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Labeled training rows, validation rows and optional unlabeled target rows.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSet<'a, F> {
    pub train_x: &'a Features<F>,
    pub train_y: &'a [F],
    pub val_x: &'a Features<F>,
    pub val_y: &'a [F],
    pub target_x: Option<&'a Features<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Width of the trainable tanh projection; 0 means no projection.
    pub hidden_units: usize,
    pub domain_head: bool,
}

/// Builds an initialized network. Projection and outcome head come from the
/// `init` stream; the domain head from its own stream.
pub fn init_network<F: Scalar>(arch: Architecture, dropout: F, seed: u64) -> Network<F> {
    let mut init = stream(seed, "init");
    let projection = (arch.hidden_units > 0)
        .then(|| Dense::glorot(arch.input_dim, arch.hidden_units, &mut init));
    let feat = if arch.hidden_units > 0 {
        arch.hidden_units
    } else {
        arch.input_dim
    };
    let outcome_head = Dense::glorot(feat, 1, &mut init);
    let domain_head = arch.domain_head.then(|| {
        let mut dinit = stream(seed, "domain-init");
        Dense::glorot(feat, 1, &mut dinit)
    });
    Network {
        projection,
        outcome_head,
        domain_head,
        dropout,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    /// Adversary weight used this epoch; `None` when the domain module was off.
    pub lambda: Option<f64>,
    /// Domain-head accuracy over the epoch's batches, when active.
    pub domain_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<F> {
    pub best: Network<F>,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Hooks that define one training run.
pub struct FitPlan<'a, F> {
    pub epochs: usize,
    pub seed: u64,
    pub lr: &'a dyn Fn(usize) -> F,
    /// Batches for an epoch, given the epoch index and the batching stream.
    pub batches: &'a mut dyn FnMut(usize, &mut StreamRng) -> Vec<Batch>,
    /// Adversary weight for an epoch, `None` while the domain module is off.
    pub adversary: Option<&'a dyn Fn(usize) -> Option<F>>,
}

/// Binary F1 at threshold 0.5; 0 when undefined.
pub fn f1_score<F: Scalar>(probs: &[F], labels: &[F]) -> f64 {
    let half = F::one() / (F::one() + F::one());
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        let pred = p >= half;
        let pos = y > half;
        match (pred, pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Picks the checkpoint epoch: highest validation F1, then lowest
/// validation loss, then earliest epoch.
pub fn select_best_epoch(history: &[EpochStats]) -> Option<usize> {
    let mut best: Option<&EpochStats> = None;
    for s in history {
        best = match best {
            None => Some(s),
            Some(b) => {
                let better = s.val_f1 > b.val_f1 || (s.val_f1 == b.val_f1 && s.val_loss < b.val_loss);
                Some(if better { s } else { b })
            }
        };
    }
    best.map(|s| s.epoch)
}

fn mean_bce<F: Scalar>(net: &Network<F>, x: &Features<F>, y: &[F]) -> (Vec<F>, f64) {
    let mut total = 0.0;
    let mut probs = Vec::with_capacity(x.len());
    for (i, &yi) in y.iter().enumerate() {
        let z = net.outcome_logit(x.row(i));
        total += to_f64(bce_with_logit(z, yi));
        probs.push(sigmoid(z));
    }
    let n = y.len().max(1) as f64;
    (probs, total / n)
}

/// Runs mini-batch Adam for `plan.epochs` epochs, evaluating validation F1
/// after each epoch and returning the best checkpoint.
pub fn fit<F: Scalar>(mut net: Network<F>, data: TrainingSet<'_, F>, plan: FitPlan<'_, F>) -> FitOutcome<F> {
    let mut batch_rng = stream(plan.seed, "batches");
    let mut drop_rng = stream(plan.seed, "dropout");
    let mut dom_drop_rng = stream(plan.seed, "domain-dropout");

    let mut proj_opt = net.projection.as_ref().map(DenseAdam::new);
    let mut head_opt = DenseAdam::new(&net.outcome_head);
    let mut dom_opt = net.domain_head.as_ref().map(DenseAdam::new);
    let mut proj_grad = net.projection.as_ref().map(DenseGrad::zeros_like);
    let mut head_grad = DenseGrad::zeros_like(&net.outcome_head);
    let mut dom_grad = net.domain_head.as_ref().map(DenseGrad::zeros_like);
    // Domain head steps are counted separately since it starts after warmup.
    let mut step = 0usize;
    let mut dom_step = 0usize;

    let feat = net.feature_dim();
    let mut history = Vec::with_capacity(plan.epochs);
    let mut snapshots: Vec<Network<F>> = Vec::with_capacity(plan.epochs);

    for epoch in 0..plan.epochs {
        let lr = (plan.lr)(epoch);
        let lambda = plan.adversary.and_then(|a| a(epoch));
        let domain_on = lambda.is_some() && net.domain_head.is_some();
        let batches = (plan.batches)(epoch, &mut batch_rng);
        let mut train_loss = 0.0;
        let mut seen = 0usize;
        let (mut dom_correct, mut dom_total) = (0usize, 0usize);

        for batch in &batches {
            if batch.source.is_empty() {
                continue;
            }
            if let Some(g) = proj_grad.as_mut() {
                g.clear();
            }
            head_grad.clear();
            if let Some(g) = dom_grad.as_mut() {
                g.clear();
            }
            let n_src: F = from_usize(batch.source.len());
            let n_dom: F = from_usize(batch.source.len() + batch.target.len());
            let lam = lambda.unwrap_or_else(F::zero);
            let reverse = domain_on && lam != F::zero();

            let mut dh = vec![F::zero(); feat];
            for &i in &batch.source {
                let x = data.train_x.row(i);
                let y = data.train_y[i];
                let h = net.features(x);
                let mask = dropout_mask(feat, net.dropout, &mut drop_rng);
                let hd: Vec<F> = h.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                let z = net.outcome_head.scalar_out(&hd);
                train_loss += to_f64(bce_with_logit(z, y));
                seen += 1;
                let dz = (sigmoid(z) - y) / n_src;
                head_grad.bias[0] = head_grad.bias[0] + dz;
                for k in 0..feat {
                    head_grad.weights[k] = head_grad.weights[k] + dz * hd[k];
                    dh[k] = dz * net.outcome_head.weights[k] * mask[k];
                }
                if domain_on {
                    let ddh = domain_step(&net, &h, F::zero(), n_dom, &mut dom_drop_rng, dom_grad.as_mut(), &mut dom_correct);
                    dom_total += 1;
                    if reverse {
                        for (d, r) in dh.iter_mut().zip(grl_backward(&ddh, lam)) {
                            *d = *d + r;
                        }
                    }
                }
                if let Some(g) = proj_grad.as_mut() {
                    net.projection_backward(x, &h, &dh, g);
                }
            }

            if domain_on {
                if let Some(tx) = data.target_x {
                    for &j in &batch.target {
                        let x = tx.row(j);
                        let h = net.features(x);
                        let ddh = domain_step(&net, &h, F::one(), n_dom, &mut dom_drop_rng, dom_grad.as_mut(), &mut dom_correct);
                        dom_total += 1;
                        if reverse {
                            let rev = grl_backward(&ddh, lam);
                            if let Some(g) = proj_grad.as_mut() {
                                net.projection_backward(x, &h, &rev, g);
                            }
                        }
                    }
                }
            }

            step += 1;
            if let (Some(p), Some(o), Some(g)) = (net.projection.as_mut(), proj_opt.as_mut(), proj_grad.as_ref()) {
                o.step(p, g, lr, step);
            }
            head_opt.step(&mut net.outcome_head, &head_grad, lr, step);
            if domain_on {
                dom_step += 1;
                if let (Some(d), Some(o), Some(g)) = (net.domain_head.as_mut(), dom_opt.as_mut(), dom_grad.as_ref()) {
                    o.step(d, g, lr, dom_step);
                }
            }
        }

        let (val_probs, val_loss) = mean_bce(&net, data.val_x, data.val_y);
        let val_f1 = f1_score(&val_probs, data.val_y);
        history.push(EpochStats {
            epoch,
            lr: to_f64(lr),
            train_loss: train_loss / seen.max(1) as f64,
            val_loss,
            val_f1,
            lambda: lambda.map(to_f64),
            domain_accuracy: (dom_total > 0).then(|| dom_correct as f64 / dom_total as f64),
        });
        snapshots.push(net.clone());
    }

    let best_epoch = select_best_epoch(&history).unwrap_or(0);
    let best = snapshots.into_iter().nth(best_epoch).unwrap_or(net);
    FitOutcome {
        best,
        best_epoch,
        history,
    }
}

/// Forward/backward through the domain head for one example. Accumulates the
/// head's own gradient and returns `dL_domain/dh` (before reversal).
fn domain_step<F: Scalar>(
    net: &Network<F>,
    h: &[F],
    label: F,
    n: F,
    rng: &mut StreamRng,
    grad: Option<&mut DenseGrad<F>>,
    correct: &mut usize,
) -> Vec<F> {
    let d = net.domain_head.as_ref().expect("domain head present");
    let feat = h.len();
    let mask = dropout_mask(feat, net.dropout, rng);
    let hd: Vec<F> = h.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
    let z = d.scalar_out(&hd);
    let p = sigmoid(z);
    let half = F::one() / (F::one() + F::one());
    if (p >= half) == (label > half) {
        *correct += 1;
    }
    let dz = (p - label) / n;
    if let Some(g) = grad {
        g.bias[0] = g.bias[0] + dz;
        for k in 0..feat {
            g.weights[k] = g.weights[k] + dz * hd[k];
        }
    }
    (0..feat).map(|k| dz * d.weights[k] * mask[k]).collect()
}
