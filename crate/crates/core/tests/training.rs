use causaldann::dann::{domain_probe_accuracy, grl_backward, make_balanced_batches, train_dann, train_dann_with, DannHyper};
use causaldann::encoder::Encoder;
use causaldann::nn::{DenseGrad, Features, Network, SparseRow};
use causaldann::predictor::{
    load_checkpoint, predict_prob, save_checkpoint, train_outcome_predictor, train_outcome_predictor_with_plan,
    TrainHyper,
};
use causaldann::propensity::fit_temperature;
use causaldann::rng::{stream, StreamRng};
use causaldann::scalar::{bce_with_logit, sigmoid};
use causaldann::train::{init_network, Architecture};
use causaldann::{Treatment, Unit};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn toy_net(seed: u64) -> Network<f64> {
    let arch = Architecture {
        input_dim: 6,
        hidden_units: 4,
        domain_head: true,
    };
    init_network(arch, 0.0, seed)
}

fn domain_loss(net: &Network<f64>, x: &SparseRow<f64>, d: f64) -> f64 {
    let h = net.features(x);
    bce_with_logit(net.domain_head.as_ref().unwrap().scalar_out(&h), d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Projection gradients through the reversed domain path equal
    /// `-lambda` times finite-difference gradients of the domain loss.
    #[test]
    fn reversed_domain_gradient_matches_finite_differences(
        seed in 0u64..10_000,
        lambda in 0.05..2.0f64,
        vals in prop::collection::vec(-1.0..1.0f64, 3),
        d in 0u8..2,
    ) {
        let net = toy_net(seed);
        let x = SparseRow { idx: vec![0, 2, 5], val: vals };
        let d = d as f64;
        let h = net.features(&x);
        let dom = net.domain_head.as_ref().unwrap();
        let z = dom.scalar_out(&h);
        let dh: Vec<f64> = dom.weights.iter().map(|w| (sigmoid(z) - d) * w).collect();
        let proj = net.projection.as_ref().unwrap();
        let mut g = DenseGrad::zeros_like(proj);
        net.projection_backward(&x, &h, &grl_backward(&dh, lambda), &mut g);

        let eps = 1e-6;
        for k in 0..proj.weights.len() {
            let mut plus = net.clone();
            plus.projection.as_mut().unwrap().weights[k] += eps;
            let mut minus = net.clone();
            minus.projection.as_mut().unwrap().weights[k] -= eps;
            let fd = (domain_loss(&plus, &x, d) - domain_loss(&minus, &x, d)) / (2.0 * eps);
            let expected = -lambda * fd;
            let err = (g.weights[k] - expected).abs() / expected.abs().max(g.weights[k].abs()).max(1e-7);
            prop_assert!(err < 1e-5, "weight {k}: {} vs {expected}", g.weights[k]);
        }
    }
}

fn labeled(prefix: &str, n: usize, seed: u64, style: &str) -> Vec<Unit> {
    let mut rng = stream(seed, prefix);
    (0..n)
        .map(|i| {
            let y = rng.gen_bool(0.5);
            let word = if y { "bright sunny warm" } else { "dark rainy cold" };
            let noise: String = (0..3).map(|_| format!("w{} ", rng.gen_range(0..40))).collect();
            Unit::new(format!("{prefix}{i}"), format!("{noise}{word} {style}"), Treatment::Control).with_outcome(y as u8)
        })
        .collect()
}

#[test]
fn zero_lambda_dann_equals_baseline_bit_for_bit() {
    let src = labeled("s", 60, 1, "calm");
    let val = labeled("v", 20, 2, "calm");
    let tgt = labeled("t", 40, 3, "angry furious");
    let (s, v, t): (Vec<&Unit>, Vec<&Unit>, Vec<&Unit>) = (src.iter().collect(), val.iter().collect(), tgt.iter().collect());
    let enc = Encoder::hashing(128, 0).unwrap();
    let th = TrainHyper {
        lr_init: 1e-2,
        epochs: 6,
        ..TrainHyper::default()
    };
    let dh = DannHyper {
        warmup_epochs: 0,
        ..DannHyper::from_train(&th)
    };
    let bs = dh.batch_size;
    let mut plan_a = |_e: usize, rng: &mut StreamRng| make_balanced_batches(60, 40, bs, rng).unwrap();
    let mut plan_b = |_e: usize, rng: &mut StreamRng| make_balanced_batches(60, 40, bs, rng).unwrap();
    let base = train_outcome_predictor_with_plan::<f64>(&s, &v, &enc, &th, &mut plan_a).unwrap();
    let adv = train_dann_with::<f64>(&s, &v, &t, &enc, &dh, &|_| Some(0.0), &mut plan_b).unwrap();
    let bits = |w: &[f64]| w.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let (a, b) = (&base.network, &adv.predictor.network);
    assert_eq!(bits(&a.outcome_head.weights), bits(&b.outcome_head.weights));
    assert_eq!(bits(&a.outcome_head.bias), bits(&b.outcome_head.bias));
    let (pa, pb) = (a.projection.as_ref().unwrap(), b.projection.as_ref().unwrap());
    assert_eq!(bits(&pa.weights), bits(&pb.weights));
    assert_eq!(bits(&pa.bias), bits(&pb.bias));
    assert_eq!(base.meta.best_epoch, adv.predictor.meta.best_epoch);
    // the adversary ran every epoch, with zero weight
    assert!(adv.lambda_trace.iter().all(|&l| l == 0.0));
}

#[test]
fn separable_toy_reaches_perfect_f1() {
    let units: Vec<Unit> = (0..40)
        .map(|i| {
            let y = i % 2;
            let text = if y == 1 { "excellent superb" } else { "awful dreadful" };
            Unit::new(format!("u{i}"), format!("{text} item{i}"), Treatment::Control).with_outcome(y as u8)
        })
        .collect();
    let (train, val) = units.split_at(30);
    let train: Vec<&Unit> = train.iter().collect();
    let val: Vec<&Unit> = val.iter().collect();
    let enc = Encoder::hashing(32, 0).unwrap();
    let hyper = TrainHyper {
        lr_init: 0.05,
        ..TrainHyper::default()
    };
    let m = train_outcome_predictor::<f64>(&train, &val, &enc, &hyper).unwrap();
    assert_eq!(m.meta.best_val_f1, 1.0);
    assert!(m.meta.epochs_run <= 20);
    assert!(predict_prob(&m, "excellent superb").unwrap() > 0.5);
    assert!(predict_prob(&m, "awful dreadful").unwrap() < 0.5);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let units = labeled("c", 40, 7, "");
    let refs: Vec<&Unit> = units.iter().collect();
    let enc = Encoder::hashing(64, 3).unwrap();
    let hyper = TrainHyper {
        lr_init: 1e-2,
        epochs: 3,
        ..TrainHyper::default()
    };
    let m = train_outcome_predictor::<f64>(&refs[..30], &refs[30..], &enc, &hyper).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &m, &hyper, Some(2), None).unwrap();
    let (back, meta) = load_checkpoint::<f64>(dir.path()).unwrap();
    assert_eq!(meta.fold, Some(2));
    assert_eq!(back.network, m.network);
    for u in &units {
        assert_eq!(predict_prob(&back, &u.text).unwrap(), predict_prob(&m, &u.text).unwrap());
    }
}

#[test]
fn temperature_recovers_known_scale() {
    let mut rng = stream(11, "temperature");
    let normal = Normal::new(0.0, 2.0).unwrap();
    let logits: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
    let labels: Vec<f64> = logits
        .iter()
        .map(|&z| (rng.gen::<f64>() < sigmoid(z)) as u8 as f64)
        .collect();
    let t1 = fit_temperature(&logits, &labels).unwrap();
    assert!((t1 - 1.0).abs() < 0.05, "{t1}");
    let doubled: Vec<f64> = logits.iter().map(|z| 2.0 * z).collect();
    let t2 = fit_temperature(&doubled, &labels).unwrap();
    assert!((t2 - 2.0).abs() < 0.2, "{t2}");
}

#[test]
fn adversary_weakens_domain_signal() {
    // Source and target differ only in style words; outcome depends on content.
    let src = labeled("s", 200, 21, "calm gentle polite");
    let val = labeled("v", 50, 22, "calm gentle polite");
    let tgt = labeled("t", 200, 23, "angry furious hostile");
    let (s, v, t): (Vec<&Unit>, Vec<&Unit>, Vec<&Unit>) = (src.iter().collect(), val.iter().collect(), tgt.iter().collect());
    let enc = Encoder::hashing(256, 0).unwrap();
    let th = TrainHyper {
        lr_init: 1e-2,
        epochs: 15,
        dropout: 0.0,
        ..TrainHyper::default()
    };
    let base = train_outcome_predictor::<f64>(&s, &v, &enc, &th).unwrap();
    let dh = DannHyper {
        gamma: 10.0,
        ..DannHyper::from_train(&th)
    };
    let adv = train_dann::<f64>(&s, &v, &t, &enc, &dh).unwrap();
    let feats = |us: &[&Unit]| {
        let texts: Vec<&str> = us.iter().map(|u| u.text.as_str()).collect();
        Features::from_matrix(&enc.encode_batch::<f64>(&texts).unwrap())
    };
    let (fs, ft) = (feats(&s), feats(&t));
    let probe = |net: &Network<f64>| domain_probe_accuracy(net, &fs, &ft, 200, 5);
    let (pb, pa) = (probe(&base.network), probe(&adv.predictor.network));
    assert!(pa <= pb, "probe accuracy: baseline {pb}, dann {pa}");
    assert!(adv.predictor.meta.best_val_f1 > 0.8);
}
