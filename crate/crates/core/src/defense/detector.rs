use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Behavior, InferenceTrace, TraceDetail};
use crate::rng::{derive_seed, rng_from_seed};

pub const DETECTOR_EPOCHS: usize = 500;
pub const DETECTOR_LR: f64 = 0.5;
const HELD_OUT: f64 = 0.2;

/// Fixed-length summary of an inference trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFeatures {
    pub behavior: Behavior,
    pub values: Vec<f64>,
}

/// Feature layout:
///
/// * D1: max confidence at every exit (unexecuted exits repeat the last
///   executed one), then `exit_index / (exits - 1)`;
/// * D2: mean and min EOS probability over steps, `length / max_len`;
/// * D3: `passing / candidates`, mean candidate confidence;
/// * D4: gate score.
pub fn featurize_trace(trace: &InferenceTrace) -> Result<TraceFeatures> {
    let incomplete = |what: &str| Error::Usage(format!("trace is incomplete: {what}"));
    let values = match &trace.detail {
        TraceDetail::EarlyExit {
            confidences,
            exit_index,
            num_exits,
        } => {
            let last = *confidences.last().ok_or_else(|| incomplete("no exit ran"))?;
            if confidences.len() > *num_exits || exit_index + 1 != confidences.len() {
                return Err(incomplete("exit index does not match executed heads"));
            }
            let mut v = confidences.clone();
            v.resize(*num_exits, last);
            v.push(if *num_exits > 1 {
                *exit_index as f64 / (*num_exits - 1) as f64
            } else {
                0.0
            });
            v
        }
        TraceDetail::Generation {
            eos_probs,
            length,
            max_len,
            ..
        } => {
            if eos_probs.is_empty() || *max_len == 0 {
                return Err(incomplete("no decoding step ran"));
            }
            let mean = eos_probs.iter().sum::<f64>() / eos_probs.len() as f64;
            let min = eos_probs.iter().copied().fold(f64::INFINITY, f64::min);
            vec![mean, min, *length as f64 / *max_len as f64]
        }
        TraceDetail::Detection { scores, passing, .. } => {
            if scores.is_empty() {
                return Err(incomplete("backbone did not run"));
            }
            let n = scores.len() as f64;
            vec![*passing as f64 / n, scores.iter().sum::<f64>() / n]
        }
        TraceDetail::Gate { score, .. } => vec![*score],
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trace features".into()));
    }
    Ok(TraceFeatures {
        behavior: trace.behavior(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub behavior: Behavior,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Flag when the score reaches this value.
    pub threshold: f64,
    pub seed: u64,
    pub benign_count: usize,
    pub adversarial_count: usize,
    /// Balanced accuracy on the held-out split at `threshold`.
    pub held_out_balanced_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    Benign,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseVerdict {
    pub flag: Flag,
    pub score: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Detector {
    pub fn score(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.weights.len() {
            return Err(Error::Usage(format!(
                "detector expects {} features, got {}",
                self.weights.len(),
                values.len()
            )));
        }
        let z = self.bias + self.weights.iter().zip(values).map(|(w, x)| w * x).sum::<f64>();
        Ok(sigmoid(z))
    }

    /// Same weights, different threshold.
    pub fn with_threshold(&self, threshold: f64) -> Self {
        Detector {
            threshold,
            ..self.clone()
        }
    }
}

pub fn classify_trace(detector: &Detector, features: &TraceFeatures) -> Result<DefenseVerdict> {
    if features.behavior != detector.behavior {
        return Err(Error::Usage(format!(
            "detector trained on {} traces, got {}",
            detector.behavior, features.behavior
        )));
    }
    let score = detector.score(&features.values)?;
    let flag = if score >= detector.threshold {
        Flag::Adversarial
    } else {
        Flag::Benign
    };
    Ok(DefenseVerdict { flag, score })
}

/// Mean of the true-negative and true-positive rates for the rule `score >= t`.
pub fn balanced_accuracy(benign: &[f64], adversarial: &[f64], t: f64) -> f64 {
    let tnr = benign.iter().filter(|&&s| s < t).count() as f64 / benign.len().max(1) as f64;
    let tpr = adversarial.iter().filter(|&&s| s >= t).count() as f64 / adversarial.len().max(1) as f64;
    (tnr + tpr) / 2.0
}

/// Seeded split of `0..n` into (train, held-out); held-out gets round(20%) but
/// never the whole class.
fn split(n: usize, rng: &mut crate::rng::Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let held = ((n as f64 * HELD_OUT).round() as usize).min(n - 1);
    let train = idx.split_off(held);
    (train, idx)
}

/// Logistic regression by full-batch gradient descent on standardized
/// features, folded back into raw-feature weights. The threshold maximizes
/// held-out balanced accuracy over midpoints of held-out scores; the lowest
/// such threshold wins ties.
pub fn train_detector(benign: &[TraceFeatures], adversarial: &[TraceFeatures], seed: u64) -> Result<Detector> {
    if benign.is_empty() || adversarial.is_empty() {
        return Err(Error::Usage("detector training needs both benign and adversarial traces".into()));
    }
    let behavior = benign[0].behavior;
    let dim = benign[0].values.len();
    for f in benign.iter().chain(adversarial) {
        if f.behavior != behavior || f.values.len() != dim {
            return Err(Error::Usage("detector training traces disagree on behavior or dimension".into()));
        }
    }
    let mut rng = rng_from_seed(derive_seed(seed, "detector/split"));
    let (b_train, b_held) = split(benign.len(), &mut rng);
    let (a_train, a_held) = split(adversarial.len(), &mut rng);
    let train: Vec<(&[f64], f64)> = b_train
        .iter()
        .map(|&i| (benign[i].values.as_slice(), 0.0))
        .chain(a_train.iter().map(|&i| (adversarial[i].values.as_slice(), 1.0)))
        .collect();

    let n = train.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| train.iter().map(|(x, _)| x[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dim)
        .map(|j| {
            let var = train.iter().map(|(x, _)| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let z: Vec<Vec<f64>> = train
        .iter()
        .map(|(x, _)| (0..dim).map(|j| (x[j] - mean[j]) / std[j]).collect())
        .collect();
    // class weights keep skewed sets from collapsing onto the majority
    let pos = a_train.len() as f64;
    let neg = b_train.len() as f64;
    let weight = |y: f64| if y > 0.5 { n / (2.0 * pos) } else { n / (2.0 * neg) };

    let mut init = rng_from_seed(derive_seed(seed, "detector/init"));
    let mut w: Vec<f64> = (0..dim).map(|_| init.random_range(-0.01..0.01)).collect();
    let mut b = 0.0;
    for _ in 0..DETECTOR_EPOCHS {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (zi, (_, y)) in z.iter().zip(&train) {
            let p = sigmoid(b + w.iter().zip(zi).map(|(a, c)| a * c).sum::<f64>());
            let r = weight(*y) * (p - y) / n;
            gb += r;
            for (g, c) in gw.iter_mut().zip(zi) {
                *g += r * c;
            }
        }
        b -= DETECTOR_LR * gb;
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= DETECTOR_LR * g;
        }
    }
    let weights: Vec<f64> = w.iter().zip(&std).map(|(w, s)| w / s).collect();
    let bias = b - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    let mut det = Detector {
        behavior,
        weights,
        bias,
        threshold: 0.5,
        seed,
        benign_count: benign.len(),
        adversarial_count: adversarial.len(),
        held_out_balanced_accuracy: 0.0,
    };

    // with a single-sample class nothing is held out; fall back to training data
    let (bh, ah) = if b_held.is_empty() || a_held.is_empty() {
        (b_train, a_train)
    } else {
        (b_held, a_held)
    };
    let bs = bh.iter().map(|&i| det.score(&benign[i].values)).collect::<Result<Vec<_>>>()?;
    let as_ = ah.iter().map(|&i| det.score(&adversarial[i].values)).collect::<Result<Vec<_>>>()?;
    let mut all: Vec<f64> = bs.iter().chain(&as_).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut cands: Vec<f64> = all.windows(2).map(|p| (p[0] + p[1]) / 2.0).collect();
    cands.push(all[0]);
    cands.push(*all.last().expect("non-empty"));
    cands.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, 0.5);
    for t in cands {
        let t = t.clamp(f64::MIN_POSITIVE, 1.0f64.next_down());
        let acc = balanced_accuracy(&bs, &as_, t);
        if acc > best.0 {
            best = (acc, t);
        }
    }
    det.threshold = best.1;
    det.held_out_balanced_accuracy = best.0;
    Ok(det)
}
