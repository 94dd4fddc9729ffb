mod common;

use common::*;
use dynattack_core::defense::*;
use dynattack_core::models::Behavior;
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn feats(values: Vec<f64>) -> TraceFeatures {
    TraceFeatures { behavior: Behavior::D1, values }
}

fn gaussian(rng: &mut dynattack_core::rng::Rng, n: usize, dim: usize, shift: f64) -> Vec<TraceFeatures> {
    (0..n)
        .map(|_| {
            feats(
                (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        shift + z
                    })
                    .collect(),
            )
        })
        .collect()
}

fn fresh_balanced_accuracy(d: &Detector, benign: &[TraceFeatures], adv: &[TraceFeatures]) -> f64 {
    let score = |f: &TraceFeatures| classify_trace(d, f).unwrap().score;
    let b: Vec<f64> = benign.iter().map(score).collect();
    let a: Vec<f64> = adv.iter().map(score).collect();
    balanced_accuracy(&b, &a, d.threshold)
}

#[test]
fn separable_features_are_learned_exactly() {
    let benign: Vec<_> = (0..50).map(|_| feats(vec![0.0])).collect();
    let adv: Vec<_> = (0..50).map(|_| feats(vec![1.0])).collect();
    let d = train_detector(&benign, &adv, 3).unwrap();
    assert_eq!(d.held_out_balanced_accuracy, 1.0);
    assert_eq!(fresh_balanced_accuracy(&d, &benign, &adv), 1.0);
}

#[test]
fn identical_distributions_sit_at_chance() {
    for seed in 0..5 {
        let mut rng = rng(seed);
        let b = gaussian(&mut rng, 500, 3, 0.0);
        let a = gaussian(&mut rng, 500, 3, 0.0);
        let d = train_detector(&b, &a, seed).unwrap();
        let acc = fresh_balanced_accuracy(&d, &gaussian(&mut rng, 2000, 3, 0.0), &gaussian(&mut rng, 2000, 3, 0.0));
        assert!((acc - 0.5).abs() <= 0.1, "seed {seed}: {acc}");
        assert!((d.held_out_balanced_accuracy - 0.5).abs() <= 0.1, "seed {seed}: {}", d.held_out_balanced_accuracy);
    }
}

#[test]
fn shifted_gaussians_reach_the_bayes_rate() {
    // unit-variance 1-d classes at 0 and 2: Bayes balanced accuracy Phi(1) = 0.8413
    let mut rng = rng(11);
    let d = train_detector(&gaussian(&mut rng, 1000, 1, 0.0), &gaussian(&mut rng, 1000, 1, 2.0), 5).unwrap();
    let acc = fresh_balanced_accuracy(&d, &gaussian(&mut rng, 20000, 1, 0.0), &gaussian(&mut rng, 20000, 1, 2.0));
    assert!((acc - 0.8413).abs() < 0.02, "{acc}");
}

#[test]
fn deterministic_and_skew_tolerant() {
    let mut rng = rng(2);
    let b = gaussian(&mut rng, 300, 2, 0.0);
    let a = gaussian(&mut rng, 30, 2, 3.0);
    let d1 = train_detector(&b, &a, 9).unwrap();
    assert_eq!(d1, train_detector(&b, &a, 9).unwrap());
    assert!(d1.threshold > 0.0 && d1.threshold < 1.0);
    assert!(fresh_balanced_accuracy(&d1, &gaussian(&mut rng, 2000, 2, 0.0), &gaussian(&mut rng, 2000, 2, 3.0)) > 0.9);
}

proptest! {
    #![proptest_config(fixed(64))]

    #[test]
    fn raising_the_threshold_never_adds_false_positives(seed in any::<u64>(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let mut rng = rng(seed);
        let shift = rng.random_range(0.0..3.0);
        let b = gaussian(&mut rng, 40, 2, 0.0);
        let a = gaussian(&mut rng, 40, 2, shift);
        let d = train_detector(&b, &a, seed).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let fp = |t: f64| {
            let d = d.with_threshold(t);
            b.iter().filter(|f| classify_trace(&d, f).unwrap().flag == Flag::Adversarial).count()
        };
        prop_assert!(fp(hi) <= fp(lo));
        for f in b.iter().chain(&a) {
            let v = classify_trace(&d, f).unwrap();
            prop_assert!(v.score > 0.0 && v.score < 1.0);
            prop_assert_eq!(v.flag == Flag::Adversarial, v.score >= d.threshold);
        }
    }
}
