use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DynModel, LabeledDataset, Target};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoisonScheme {
    /// Data: replace hard labels with near-uniform targets.
    UniformSoftLabel,
    /// Model: divide every exit head's logits by the magnitude.
    ExitTemperature,
    /// Model: subtract the magnitude from the EOS logit bias.
    EosBias,
}

/// Weight of the uniform component in a softened label.
pub const SOFT_LABEL_MIX: f64 = 0.9;

/// Softens the labels of `floor(p * n)` seeded samples.
pub fn poison_dataset(dataset: &LabeledDataset, p: f64, scheme: PoisonScheme, seed: u64) -> Result<LabeledDataset> {
    if scheme != PoisonScheme::UniformSoftLabel {
        return Err(Error::Usage(format!("{scheme:?} is not a data-poisoning scheme")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("poison fraction {p} must lie in [0, 1]")));
    }
    let n = dataset.len();
    let count = ((p * n as f64).floor() as usize).min(n);
    let classes = dataset
        .targets
        .iter()
        .map(|t| match t {
            Target::Class(c) => Ok(c + 1),
            Target::Soft(q) => Ok(q.len()),
            other => Err(Error::Usage(format!("cannot soften a {other:?} target"))),
        })
        .try_fold(2, |acc, c| c.map(|c| acc.max(c)))?;
    let mut out = dataset.clone();
    let mut rng = rng_from_seed(seed);
    for i in sample(&mut rng, n, count).into_vec() {
        let hard = dataset.class_of(i).expect("class targets checked above");
        let mut q = vec![SOFT_LABEL_MIX / classes as f64; classes];
        q[hard] += 1.0 - SOFT_LABEL_MIX;
        out.targets[i] = Target::Soft(q);
    }
    Ok(out)
}

/// Tampers with trained parameters.
pub fn poison_model(model: &DynModel, scheme: PoisonScheme, magnitude: f64) -> Result<DynModel> {
    if !magnitude.is_finite() {
        return Err(Error::Domain(format!("poison magnitude {magnitude} must be finite")));
    }
    let mut out = model.clone();
    match (scheme, &mut out) {
        (PoisonScheme::ExitTemperature, DynModel::EarlyExit(m)) => {
            if magnitude < 1.0 {
                return Err(Error::Domain(format!("exit temperature {magnitude} must be at least 1")));
            }
            for head in m.heads_mut() {
                for layer in head.layers_mut() {
                    for p in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                        let scaled = p.data().iter().map(|v| v / magnitude).collect();
                        *p = p.with_data(scaled)?;
                    }
                }
            }
        }
        (PoisonScheme::EosBias, DynModel::Generator(m)) => {
            let eos = m.spec().eos_id;
            let last = m
                .body_mut()
                .layers_mut()
                .iter_mut()
                .rev()
                .find(|l| l.bias.is_some())
                .ok_or_else(|| Error::Usage("generator has no output bias".into()))?;
            let bias = last.bias.as_mut().expect("found above");
            let mut d = bias.data().to_vec();
            d[eos] -= magnitude;
            *bias = bias.with_data(d)?;
        }
        (scheme, m) => {
            return Err(Error::Usage(format!(
                "{scheme:?} does not apply to a {} model",
                m.behavior()
            )))
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, synth_dataset, DatasetKind, GeneratorSpec, ModelSpec};

    #[test]
    fn fractions() {
        let d = synth_dataset(DatasetKind::GaussBlobs { dim: 3 }, 10, 0).unwrap();
        assert_eq!(poison_dataset(&d, 0.0, PoisonScheme::UniformSoftLabel, 1).unwrap(), d);
        let all = poison_dataset(&d, 1.0, PoisonScheme::UniformSoftLabel, 1).unwrap();
        assert!(all.targets.iter().all(|t| matches!(t, Target::Soft(_))));
        let some = poison_dataset(&d, 0.35, PoisonScheme::UniformSoftLabel, 1).unwrap();
        assert_eq!(some.targets.iter().filter(|t| matches!(t, Target::Soft(_))).count(), 3);
        for i in 0..d.len() {
            assert_eq!(some.class_of(i), d.class_of(i));
        }
        assert!(poison_dataset(&d, 0.5, PoisonScheme::EosBias, 1).is_err());
    }

    #[test]
    fn unit_temperature_is_identity() {
        let m = build_model(&ModelSpec::reference_early_exit(0)).unwrap();
        assert_eq!(poison_model(&m, PoisonScheme::ExitTemperature, 1.0).unwrap(), m);
        assert!(poison_model(&m, PoisonScheme::EosBias, 1.0).is_err());
    }

    #[test]
    fn suppressed_eos_runs_to_cap() {
        let m = build_model(&ModelSpec::Generator(GeneratorSpec::default())).unwrap();
        let p = poison_model(&m, PoisonScheme::EosBias, 1e6).unwrap();
        let g = p.as_generator().unwrap().generate(&[4, 5], 64).unwrap();
        assert_eq!(g.output.tokens.len(), 64);
        let forced = poison_model(&m, PoisonScheme::EosBias, -1e6).unwrap();
        assert_eq!(forced.as_generator().unwrap().generate(&[4, 5], 64).unwrap().output.tokens.len(), 1);
    }
}
