//! Per-sample SGD for every model kind, driven by the gradient tape.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::generator::Slot;
use super::{DynModel, GatedModel, LabeledDataset, Route, Sample, Target};
use crate::error::{Error, Result};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed};
use crate::tensor::{sgd_step, GradTape, Tensor, ValueId, CE_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A gated model's gate learns to send inputs whose light-path confidence
/// falls below this to the heavy path.
pub const GATE_TARGET_CONFIDENCE: f64 = 0.9;

fn class_loss(tape: &mut GradTape, probs: ValueId, target: &Target) -> Result<ValueId> {
    match target {
        Target::Class(c) => {
            let p = tape.select(probs, *c)?;
            let l = tape.ln_floor(p, CE_FLOOR)?;
            tape.scale(l, -1.0)
        }
        Target::Soft(q) => {
            let q = tape.leaf(Tensor::vector(q.clone())?);
            let l = tape.ln_floor(probs, CE_FLOOR)?;
            let m = tape.mul(l, q)?;
            let s = tape.sum(m)?;
            tape.scale(s, -1.0)
        }
        other => Err(Error::Usage(format!("classifier training needs class targets, got {other:?}"))),
    }
}

/// `-Σ [y ln p + (1 - y) ln(1 - p)]` over a vector of probabilities.
fn bce_loss(tape: &mut GradTape, probs: ValueId, labels: &[f64]) -> Result<ValueId> {
    let y = tape.leaf(Tensor::vector(labels.to_vec())?);
    let not_y = tape.leaf(Tensor::vector(labels.iter().map(|v| 1.0 - v).collect())?);
    let lp = tape.ln_floor(probs, CE_FLOOR)?;
    let neg = tape.scale(probs, -1.0)?;
    let q = tape.add_const(neg, 1.0)?;
    let lq = tape.ln_floor(q, CE_FLOOR)?;
    let a = tape.mul(lp, y)?;
    let b = tape.mul(lq, not_y)?;
    let t = tape.add(a, b)?;
    let s = tape.sum(t)?;
    tape.scale(s, -1.0)
}

/// Runs shuffled per-sample SGD. `step` returns the loss of one item and its
/// gradients in the same order as `params_mut` yields parameters.
fn sgd_loop<M>(
    model: &mut M,
    items: usize,
    cfg: &TrainConfig,
    stream: &str,
    step: impl Fn(&M, usize) -> Result<(f64, Vec<Tensor>)>,
    params_mut: impl Fn(&mut M) -> Vec<&mut Tensor>,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..items).collect();
    let mut last_mean = 0.0;
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_indexed(cfg.seed, stream, epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, grads) = match step(model, i) {
                Err(Error::NonFinite(_)) => return Err(Error::Training { epoch, loss: f64::NAN }),
                r => r?,
            };
            if !loss.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Training { epoch, loss });
            }
            total += loss;
            let mut params = params_mut(model);
            let current: Vec<Tensor> = params.iter().map(|p| (**p).clone()).collect();
            let updated = sgd_step(&current, &grads, cfg.lr).map_err(|_| Error::Training { epoch, loss })?;
            for (p, u) in params.iter_mut().zip(updated) {
                **p = u;
            }
        }
        last_mean = total / items as f64;
        if !last_mean.is_finite() {
            return Err(Error::Training { epoch, loss: last_mean });
        }
    }
    Ok(last_mean)
}

fn grads_for(tape: &GradTape, loss: ValueId, leaves: &[ValueId]) -> Result<(f64, Vec<Tensor>)> {
    let mut g = tape.reverse_grad(loss)?;
    let grads = leaves
        .iter()
        .map(|&id| {
            g.take(id)
                .unwrap_or_else(|| Tensor::zeros(tape.value(id).shape()))
        })
        .collect();
    Ok((tape.scalar(loss), grads))
}

fn vector_of(dataset: &LabeledDataset, i: usize) -> Result<&Tensor> {
    dataset.inputs[i].as_vector()
}

/// Trains a copy of `model` and returns it with the mean loss of the final epoch.
///
/// Early-exit models minimize the summed cross-entropy of all heads.
/// Generators learn next-token prediction at every corpus position. Detectors
/// learn per-cell objectness with binary cross-entropy on the confidence
/// channels. Gated models train both paths on the labels, then fit the gate to
/// flag inputs the light path is unsure about; the returned loss is the gate's.
pub fn train_model(model: &DynModel, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<(DynModel, f64)> {
    if dataset.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Domain("training needs at least one epoch".into()));
    }
    if dataset.inputs.len() != dataset.targets.len() {
        return Err(Error::dim("dataset targets", dataset.inputs.len(), dataset.targets.len()));
    }
    let mut model = model.clone();
    let loss = match &mut model {
        DynModel::EarlyExit(m) => sgd_loop(
            m,
            dataset.len(),
            cfg,
            "train-early-exit",
            |m, i| {
                let mut tape = GradTape::new();
                let x = tape.leaf(vector_of(dataset, i)?.clone());
                let rec = m.record(&mut tape, x)?;
                let terms = rec
                    .probs
                    .iter()
                    .map(|&p| class_loss(&mut tape, p, &dataset.targets[i]))
                    .collect::<Result<Vec<_>>>()?;
                let loss = tape.add_all(&terms)?;
                grads_for(&tape, loss, &rec.params)
            },
            |m| m.params_mut(),
        )?,
        DynModel::Generator(m) => {
            let mut positions = Vec::new();
            for (s, (input, target)) in dataset.inputs.iter().zip(&dataset.targets).enumerate() {
                let (Sample::Tokens(tokens), Target::NextTokens(next)) = (input, target) else {
                    return Err(Error::Usage("generator training needs token samples with next-token targets".into()));
                };
                if tokens.len() != next.len() {
                    return Err(Error::dim("next-token targets", tokens.len(), next.len()));
                }
                positions.extend((0..tokens.len()).map(|p| (s, p)));
            }
            sgd_loop(
                m,
                positions.len(),
                cfg,
                "train-generator",
                |m, i| {
                    let (s, p) = positions[i];
                    let (Sample::Tokens(tokens), Target::NextTokens(next)) = (&dataset.inputs[s], &dataset.targets[s])
                    else {
                        unreachable!("checked above")
                    };
                    let mut tape = GradTape::new();
                    let leaves = m.leaves(&mut tape);
                    let slots: Vec<Slot> = m.window(&tokens[..=p]).into_iter().map(Slot::Token).collect();
                    let probs = m.record_step(&mut tape, &leaves, &slots)?;
                    let loss = class_loss(&mut tape, probs, &Target::Class(next[p]))?;
                    grads_for(&tape, loss, &leaves.all())
                },
                |m| m.params_mut(),
            )?
        }
        DynModel::Detector(m) => {
            let channels = m.confidence_channels();
            let grid = m.spec().grid;
            sgd_loop(
                m,
                dataset.len(),
                cfg,
                "train-detector",
                |m, i| {
                    let Target::Cells(cells) = &dataset.targets[i] else {
                        return Err(Error::Usage("detector training needs planted-cell targets".into()));
                    };
                    let mut labels = vec![0.0; grid];
                    for &c in cells {
                        *labels
                            .get_mut(c)
                            .ok_or_else(|| Error::Domain(format!("planted cell {c} outside grid {grid}")))? = 1.0;
                    }
                    let mut tape = GradTape::new();
                    let x = tape.leaf(vector_of(dataset, i)?.clone());
                    let (out, _, leaves) = m.record(&mut tape, x)?;
                    let conf = tape.gather(out, channels.clone())?;
                    let loss = bce_loss(&mut tape, conf, &labels)?;
                    grads_for(&tape, loss, &leaves)
                },
                |m| m.params_mut(),
            )?
        }
        DynModel::Gated(m) => train_gated(m, dataset, cfg)?,
    };
    Ok((model, loss))
}

fn train_gated(m: &mut GatedModel, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<f64> {
    for (route, label) in [(Route::Light, "train-light"), (Route::Heavy, "train-heavy")] {
        let sub = TrainConfig {
            seed: derive_seed(cfg.seed, label),
            ..*cfg
        };
        sgd_loop(
            m,
            dataset.len(),
            &sub,
            label,
            |m, i| {
                let mut tape = GradTape::new();
                let x = tape.leaf(vector_of(dataset, i)?.clone());
                let (probs, _, leaves) = m.path(route).record(&mut tape, x)?;
                let loss = class_loss(&mut tape, probs, &dataset.targets[i])?;
                grads_for(&tape, loss, &leaves)
            },
            |m| m.path_mut(route).params_mut(),
        )?;
    }
    let mut hard = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let probs = m.path(Route::Light).forward(vector_of(dataset, i)?)?.output;
        let conf = probs.data().iter().cloned().fold(f64::MIN, f64::max);
        hard.push(if conf < GATE_TARGET_CONFIDENCE { 1.0 } else { 0.0 });
    }
    let sub = TrainConfig {
        seed: derive_seed(cfg.seed, "train-gate"),
        ..*cfg
    };
    sgd_loop(
        m,
        dataset.len(),
        &sub,
        "train-gate",
        |m, i| {
            let mut tape = GradTape::new();
            let x = tape.leaf(vector_of(dataset, i)?.clone());
            let (s, leaves) = m.record_gate(&mut tape, x)?;
            let loss = bce_loss(&mut tape, s, &[hard[i]])?;
            grads_for(&tape, loss, &leaves)
        },
        |m| m.gate_mut().params_mut(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, synth_dataset, DatasetKind, ModelSpec};

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let model = build_model(&ModelSpec::reference_early_exit(1)).unwrap();
        let data = synth_dataset(DatasetKind::GaussBlobs { dim: 8 }, 20, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            lr: 0.0,
            seed: 3,
        };
        let (trained, loss) = train_model(&model, &data, &cfg).unwrap();
        assert_eq!(trained, model);
        assert!(loss.is_finite() && loss > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let model = build_model(&ModelSpec::reference_early_exit(1)).unwrap();
        let data = synth_dataset(DatasetKind::GaussBlobs { dim: 8 }, 30, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.05,
            seed: 3,
        };
        let a = train_model(&model, &data, &cfg).unwrap();
        let b = train_model(&model, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, model);
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let model = build_model(&ModelSpec::reference_early_exit(1)).unwrap();
        let data = synth_dataset(DatasetKind::GaussBlobs { dim: 8 }, 30, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            lr: 1e200,
            seed: 3,
        };
        let err = train_model(&model, &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Training { .. }), "{err}");
    }

    #[test]
    fn wrong_targets_are_usage_errors() {
        let model = build_model(&ModelSpec::reference_early_exit(1)).unwrap();
        let data = synth_dataset(DatasetKind::TokenCorpus, 3, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.1,
            seed: 0,
        };
        assert!(train_model(&model, &data, &cfg).is_err());
    }
}
