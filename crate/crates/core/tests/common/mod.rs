#![allow(dead_code)]

use dynattack_core::models::*;
use dynattack_core::rng::{rng_from_seed, Rng};
use dynattack_core::tensor::Tensor;
use proptest::test_runner::{Config, RngSeed};
use rand::Rng as _;

pub fn fixed(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Config::default()
    }
}

pub const BEHAVIORS: [Behavior; 4] = [Behavior::D1, Behavior::D2, Behavior::D3, Behavior::D4];

fn widths(rng: &mut Rng, n: std::ops::RangeInclusive<usize>, w: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    (0..rng.random_range(n)).map(|_| rng.random_range(w.clone())).collect()
}

/// Small random architecture of the given behavior. `full_alphabet` pins the
/// generator vocabulary to the text alphabet so edit attacks apply.
pub fn random_spec(rng: &mut Rng, behavior: Behavior, full_alphabet: bool) -> ModelSpec {
    let seed = rng.random();
    match behavior {
        Behavior::D1 => ModelSpec::EarlyExit(EarlyExitSpec {
            seed,
            input_dim: rng.random_range(1..=6),
            widths: widths(rng, 2..=4, 1..=6),
            classes: rng.random_range(2..=4),
        }),
        Behavior::D2 => ModelSpec::Generator(GeneratorSpec {
            seed,
            vocab_size: if full_alphabet {
                Alphabet.vocab_size()
            } else {
                rng.random_range(3..=12)
            },
            context: rng.random_range(1..=4),
            embed_dim: rng.random_range(1..=4),
            hidden: rng.random_range(1..=8),
            max_len: rng.random_range(1..=12),
            ..GeneratorSpec::default()
        }),
        Behavior::D3 => {
            let side: usize = rng.random_range(1..=4);
            ModelSpec::Detector(DetectorSpec {
                seed,
                input_dim: rng.random_range(1..=6),
                hidden: rng.random_range(1..=6),
                grid: side * side,
                max_box: rng.random_range(0.1..=1.0),
                downstream_flops: rng.random_range(1..=100),
            })
        }
        Behavior::D4 => {
            let classes = rng.random_range(2..=3);
            let light = widths(rng, 0..=1, 1..=3);
            let mut heavy = light.clone();
            heavy.push(rng.random_range(classes..=classes + 4));
            ModelSpec::Gated(GatedSpec {
                seed,
                input_dim: rng.random_range(1..=5),
                gate_hidden: rng.random_range(0..=3),
                light,
                heavy,
                classes,
            })
        }
    }
}

pub fn input_dim(spec: &ModelSpec) -> usize {
    match spec {
        ModelSpec::EarlyExit(s) => s.input_dim,
        ModelSpec::Detector(s) => s.input_dim,
        ModelSpec::Gated(s) => s.input_dim,
        ModelSpec::Generator(_) => 0,
    }
}

/// Random input inside the behavior's domain (prompts use symbol ids only).
pub fn random_input(rng: &mut Rng, spec: &ModelSpec) -> Sample {
    match spec {
        ModelSpec::Generator(s) => {
            let n = rng.random_range(1..=8);
            Sample::Tokens((0..n).map(|_| rng.random_range(2..s.vocab_size)).collect())
        }
        _ => {
            let (lo, hi) = match spec.behavior() {
                Behavior::D3 => (0.0, 1.0),
                _ => (-3.0, 3.0),
            };
            let d = input_dim(spec);
            Sample::Vector(Tensor::vector((0..d).map(|_| rng.random_range(lo..=hi)).collect()).unwrap())
        }
    }
}

pub fn random_thresholds(rng: &mut Rng) -> Thresholds {
    Thresholds {
        tau: rng.random_range(0.3..=1.0),
        conf_thresh: rng.random_range(0.2..0.8),
        iou_thresh: rng.random_range(0.1..0.9),
        theta: rng.random_range(0.0..=1.0),
        max_len: None,
    }
}

pub fn rng(seed: u64) -> Rng {
    rng_from_seed(seed)
}
