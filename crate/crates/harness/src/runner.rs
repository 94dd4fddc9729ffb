use dynattack_core::attack::{
    blackbox_model_attack, pgd_cost_attack, poison_dataset, poison_model, random_noise_attack, text_attack,
    AttackConfig, EditLevel, TextMode, WordNeighbors,
};
use dynattack_core::cost::{aggregate, inflation, trace_cost, CostReport, PathDescriptor, Summary};
use dynattack_core::defense::{
    classify_trace, featurize_trace, guarded_infer, train_detector, transform_input, DefenseVerdict, Detector, Flag,
};
use dynattack_core::models::{
    build_model, split_prompt, synth_dataset, train_model, Behavior, DynModel, InferenceTrace, LabeledDataset,
    Prediction, Sample, Target, TrainConfig,
};
use dynattack_core::rng::{derive_indexed, derive_seed};
use dynattack_core::Result;

use crate::report::{EpsilonSummary, Record, Row, RunReport};
use crate::scenario::{AttackName, DefenseSpec, Scenario};
use crate::HarnessError;

/// What a correct answer looks like for one evaluation input.
#[derive(Debug, Clone)]
enum Reference {
    Class(usize),
    /// Continuation of the clean model on the clean prompt.
    Tokens(Vec<usize>),
    Cells(Vec<usize>),
}

fn quality(reference: &Reference, output: Option<&Prediction>) -> f64 {
    match (reference, output) {
        (Reference::Class(c), Some(p)) => f64::from(u8::from(p.label() == Some(*c))),
        (Reference::Tokens(t), Some(Prediction::Tokens(o))) => f64::from(u8::from(o == t)),
        (Reference::Cells(cells), Some(Prediction::Boxes(d))) => {
            let hit = cells.iter().filter(|&&c| d.boxes.iter().any(|b| b.index == c)).count();
            hit as f64 / cells.len() as f64
        }
        _ => 0.0,
    }
}

/// One inference as the deployed system would serve it.
struct Served {
    output: Option<Prediction>,
    cost: CostReport,
    trace: InferenceTrace,
    breached: Option<bool>,
}

fn plain(model: &DynModel, x: &Sample, sc: &Scenario) -> Result<Served> {
    let run = model.infer(x, &sc.thresholds)?;
    Ok(Served {
        cost: trace_cost(&run.trace, run.flops, &sc.hardware)?,
        output: Some(run.output),
        trace: run.trace,
        breached: None,
    })
}

fn serve(model: &DynModel, x: &Sample, sc: &Scenario) -> Result<Served> {
    match &sc.defense {
        Some(DefenseSpec::Transform { transform }) => {
            let t = transform_input(x, *transform, sc.behavior().default_bounds())?;
            plain(model, &t, sc)
        }
        Some(DefenseSpec::Guard { .. }) => {
            let guard = sc.guard().expect("guard defense");
            let g = guarded_infer(model, x, &sc.thresholds, &guard, &sc.hardware)?;
            Ok(Served {
                output: g.output,
                cost: g.cost,
                trace: g.trace,
                breached: Some(g.breached),
            })
        }
        _ => plain(model, x, sc),
    }
}

struct Attacked {
    sample: Sample,
    queries: usize,
    constraint_satisfied: bool,
    edits: usize,
}

fn attack(sc: &Scenario, model: &DynModel, x: &Sample, cfg: &AttackConfig, neighbors: &WordNeighbors) -> Result<Attacked> {
    let (th, hw) = (&sc.thresholds, &sc.hardware);
    let r = match sc.attack.name {
        AttackName::None | AttackName::PoisonData | AttackName::PoisonModel => {
            return Ok(Attacked {
                sample: x.clone(),
                queries: 0,
                constraint_satisfied: true,
                edits: 0,
            })
        }
        AttackName::Pgd => pgd_cost_attack(model, x.as_vector()?, th, cfg, hw)?,
        AttackName::Blackbox => blackbox_model_attack(model, x.as_vector()?, th, cfg, hw)?,
        AttackName::RandomNoise => random_noise_attack(model, x.as_vector()?, th, cfg, hw)?,
        AttackName::Text => text_attack(
            model,
            x.as_tokens()?,
            sc.attack.level.expect("validated"),
            sc.attack.mode.expect("validated"),
            cfg,
            th,
            hw,
            neighbors,
        )?,
    };
    Ok(Attacked {
        edits: r.edits.len(),
        sample: r.adversarial,
        queries: r.queries_used,
        constraint_satisfied: r.constraint_satisfied,
    })
}

/// Evaluation inputs: prompts are the prefix of each sentence up to its last space.
fn inputs_of(ds: &LabeledDataset) -> Result<Vec<Sample>> {
    ds.inputs
        .iter()
        .map(|s| match s {
            Sample::Tokens(t) => Ok(Sample::Tokens(split_prompt(t))),
            other => Ok(other.clone()),
        })
        .collect()
}

fn attack_label(sc: &Scenario) -> (String, String) {
    let a = &sc.attack;
    let name = match a.name {
        AttackName::None => "none".to_string(),
        AttackName::Pgd => "pgd".into(),
        AttackName::Blackbox => "blackbox".into(),
        AttackName::RandomNoise => "random-noise".into(),
        AttackName::Text => match a.level.expect("validated") {
            EditLevel::Character => "text-character".into(),
            EditLevel::Word => "text-word".into(),
        },
        AttackName::PoisonData => "poison-data".into(),
        AttackName::PoisonModel => match a.scheme {
            Some(s) => format!("poison-model-{}", serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
            None => "poison-model".into(),
        },
    };
    let mode = match a.name {
        AttackName::None => "none",
        AttackName::Pgd => "white-box",
        AttackName::Blackbox => "black-box",
        AttackName::RandomNoise => "baseline",
        AttackName::Text => match a.mode.expect("validated") {
            TextMode::Whitebox => "white-box",
            TextMode::Blackbox => "black-box",
        },
        AttackName::PoisonData | AttackName::PoisonModel => "poison",
    };
    (name, mode.to_string())
}

fn mean(v: impl IntoIterator<Item = f64>) -> Result<f64> {
    let v: Vec<f64> = v.into_iter().collect();
    Ok(Summary::of(&v)?.mean)
}

/// Mean quality over the inputs a screening detector let through; 0 if none.
fn screened_quality(q: &[(f64, Option<DefenseVerdict>)]) -> Result<f64> {
    let kept: Vec<f64> = q
        .iter()
        .filter(|(_, v)| v.is_none_or(|v| v.flag == Flag::Benign))
        .map(|(q, _)| *q)
        .collect();
    if kept.is_empty() {
        Ok(0.0)
    } else {
        mean(kept)
    }
}

pub fn run_scenario(sc: &Scenario) -> std::result::Result<RunReport, HarnessError> {
    sc.validate()?;
    run_validated(sc).map_err(|e| HarnessError::Runtime(format!("scenario {}: {e}", sc.id)))
}

/// Seeds and data shared by every budget of a campaign.
struct Setup {
    base: u64,
    train_ds: LabeledDataset,
    init: DynModel,
    train_cfg: Option<TrainConfig>,
}

impl Setup {
    fn new(sc: &Scenario) -> Result<Self> {
        let base = sc.model_seed.unwrap_or(sc.seed);
        Ok(Setup {
            base,
            train_ds: synth_dataset(sc.dataset_kind(), sc.dataset.n, derive_seed(base, "dataset"))?,
            init: build_model(&sc.model.clone().with_seed(derive_seed(base, "init")))?,
            train_cfg: sc.training.map(|t| TrainConfig {
                epochs: t.epochs,
                lr: t.lr,
                seed: derive_seed(base, "train"),
            }),
        })
    }

    fn train(&self, ds: &LabeledDataset) -> Result<DynModel> {
        match &self.train_cfg {
            Some(cfg) => Ok(train_model(&self.init, ds, cfg)?.0),
            None => Ok(self.init.clone()),
        }
    }
}

/// The unpoisoned model a scenario deploys.
pub fn trained_model(sc: &Scenario) -> std::result::Result<DynModel, HarnessError> {
    sc.validate()?;
    let setup = Setup::new(sc).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    setup.train(&setup.train_ds).map_err(|e| HarnessError::Runtime(e.to_string()))
}

/// Evaluation inputs of a scenario, in record order.
pub fn evaluation_inputs(sc: &Scenario) -> std::result::Result<Vec<Sample>, HarnessError> {
    sc.validate()?;
    synth_dataset(sc.dataset_kind(), sc.eval_inputs, derive_seed(sc.seed, "eval"))
        .and_then(|ds| inputs_of(&ds))
        .map_err(|e| HarnessError::Runtime(e.to_string()))
}

fn run_validated(sc: &Scenario) -> Result<RunReport> {
    let behavior = sc.behavior();
    let kind = sc.dataset_kind();
    let setup = Setup::new(sc)?;
    let base = setup.base;
    let train_ds = &setup.train_ds;
    let train = |ds: &LabeledDataset| setup.train(ds);
    let clean = train(train_ds)?;

    let eval_ds = synth_dataset(kind, sc.eval_inputs, derive_seed(sc.seed, "eval"))?;
    let inputs = inputs_of(&eval_ds)?;
    let references = inputs
        .iter()
        .zip(&eval_ds.targets)
        .map(|(x, t)| {
            Ok(match t {
                Target::Class(c) => Reference::Class(*c),
                Target::Cells(c) => Reference::Cells(c.clone()),
                _ => match clean.infer(x, &sc.thresholds)?.output {
                    Prediction::Tokens(t) => Reference::Tokens(t),
                    _ => unreachable!("only generators train on token targets"),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let neighbors = WordNeighbors::standard();
    let (attack_name, mode) = attack_label(sc);

    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (ei, &eps) in sc.epsilons().iter().enumerate() {
        let victim = match sc.attack.name {
            AttackName::PoisonData => {
                let seed = derive_indexed(base, "poison", ei as u64);
                train(&poison_dataset(train_ds, eps, sc.attack.scheme.expect("validated"), seed)?)?
            }
            AttackName::PoisonModel => poison_model(&clean, sc.attack.scheme.expect("validated"), eps)?,
            _ => clean.clone(),
        };
        let cfg_for = |label: &str, i: usize| AttackConfig {
            seed: derive_indexed(sc.seed, &format!("{label}/{ei}"), i as u64),
            ..sc.attack_config(eps)
        };

        let detector = match sc.defense {
            Some(DefenseSpec::Detector { train_inputs }) => {
                let ds = synth_dataset(kind, train_inputs, derive_seed(sc.seed, "detector-inputs"))?;
                let mut benign = Vec::new();
                let mut adversarial = Vec::new();
                for (j, x) in inputs_of(&ds)?.iter().enumerate() {
                    benign.push(featurize_trace(&clean.infer(x, &sc.thresholds)?.trace)?);
                    let adv = attack(sc, &clean, x, &cfg_for("detector-attack", j), &neighbors)?;
                    adversarial.push(featurize_trace(&victim.infer(&adv.sample, &sc.thresholds)?.trace)?);
                }
                Some(train_detector(&benign, &adversarial, derive_indexed(sc.seed, "detector", ei as u64))?)
            }
            _ => None,
        };
        let verdict = |d: &Option<Detector>, trace: &InferenceTrace| -> Result<Option<DefenseVerdict>> {
            d.as_ref().map(|d| classify_trace(d, &featurize_trace(trace)?)).transpose()
        };

        let mut eps_records = Vec::with_capacity(inputs.len());
        for (i, (x, reference)) in inputs.iter().zip(&references).enumerate() {
            let adv = attack(sc, &clean, x, &cfg_for("attack", i), &neighbors)?;
            let benign_raw = plain(&clean, x, sc)?;
            let adv_raw = plain(&victim, &adv.sample, sc)?;
            let defended = sc.defense.is_some() && !matches!(sc.defense, Some(DefenseSpec::Detector { .. }));
            let served = if defended {
                Some((serve(&clean, x, sc)?, serve(&victim, &adv.sample, sc)?))
            } else {
                None
            };
            let (benign_served, adv_served) = served.as_ref().map_or((&benign_raw, &adv_raw), |(b, a)| (b, a));
            eps_records.push(Record {
                epsilon: eps,
                index: i,
                inflation: inflation(&benign_raw.cost, &adv_served.cost)?,
                undefended_inflation: defended.then(|| inflation(&benign_raw.cost, &adv_raw.cost)).transpose()?,
                defended_benign: defended.then_some(benign_served.cost),
                benign_path: PathDescriptor::of_trace(&benign_served.trace),
                adv_path: PathDescriptor::of_trace(&adv_served.trace),
                constraint_satisfied: adv.constraint_satisfied,
                queries_used: adv.queries,
                edits: adv.edits,
                benign_quality: quality(reference, benign_served.output.as_ref()),
                adv_quality: quality(reference, adv_served.output.as_ref()),
                benign_verdict: verdict(&detector, &benign_served.trace)?,
                adv_verdict: verdict(&detector, &adv_served.trace)?,
                benign_breached: benign_served.breached,
                adv_breached: adv_served.breached,
            });
        }

        let summary = summarize(&eps_records, eps, detector)?;
        rows.push(Row {
            scenario_id: sc.id.clone(),
            behavior,
            attack: attack_name.clone(),
            mode: mode.clone(),
            epsilon: eps,
            flops_pct: summary.aggregate.flops_pct.mean,
            latency_pct: summary.aggregate.latency_pct.mean,
            energy_pct: summary.aggregate.energy_pct.mean,
            detection_rate: summary.detection_rate,
            benign_quality: summary.benign_quality,
            adv_quality: summary.adv_quality,
            seed: sc.seed,
        });
        summaries.push(summary);
        records.extend(eps_records);
    }
    Ok(RunReport {
        scenario_id: sc.id.clone(),
        behavior,
        attack: attack_name,
        mode,
        seed: sc.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: sc.clone(),
        rows,
        summaries,
        records,
    })
}

/// Per-budget aggregates, computed only from the records.
pub fn summarize(records: &[Record], epsilon: f64, detector: Option<Detector>) -> Result<EpsilonSummary> {
    let infl: Vec<_> = records.iter().map(|r| r.inflation).collect();
    let undefended: Vec<_> = records.iter().filter_map(|r| r.undefended_inflation).collect();
    let screening = detector.is_some();
    let rate = |flags: Vec<bool>| -> Option<f64> {
        (!flags.is_empty()).then(|| flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
    };
    let adv_flags: Vec<bool> = records
        .iter()
        .filter_map(|r| r.adv_verdict.map(|v| v.flag == Flag::Adversarial).or(r.adv_breached))
        .collect();
    let benign_flags: Vec<bool> = records
        .iter()
        .filter_map(|r| r.benign_verdict.map(|v| v.flag == Flag::Adversarial).or(r.benign_breached))
        .collect();
    let (benign_quality, adv_quality) = if screening {
        let b: Vec<_> = records.iter().map(|r| (r.benign_quality, r.benign_verdict)).collect();
        let a: Vec<_> = records.iter().map(|r| (r.adv_quality, r.adv_verdict)).collect();
        (screened_quality(&b)?, screened_quality(&a)?)
    } else {
        (
            mean(records.iter().map(|r| r.benign_quality))?,
            mean(records.iter().map(|r| r.adv_quality))?,
        )
    };
    Ok(EpsilonSummary {
        epsilon,
        aggregate: aggregate(&infl)?,
        undefended: if undefended.is_empty() {
            None
        } else {
            Some(aggregate(&undefended)?)
        },
        mean_benign_flops: mean(records.iter().map(|r| r.inflation.benign.flops as f64))?,
        mean_adversarial_flops: mean(records.iter().map(|r| r.inflation.adversarial.flops as f64))?,
        mean_benign_iterations: mean(records.iter().map(|r| r.inflation.benign.iterations as f64))?,
        mean_adversarial_iterations: mean(records.iter().map(|r| r.inflation.adversarial.iterations as f64))?,
        mean_undefended_adversarial_iterations: if undefended.is_empty() {
            None
        } else {
            Some(mean(undefended.iter().map(|r| r.adversarial.iterations as f64))?)
        },
        detection_rate: rate(adv_flags),
        false_positive_rate: rate(benign_flags),
        benign_quality,
        adv_quality,
        constraint_violations: records.iter().filter(|r| !r.constraint_satisfied).count(),
        detector,
    })
}

/// Behaviors whose benign quality is a class label.
pub fn is_classifier(b: Behavior) -> bool {
    matches!(b, Behavior::D1 | Behavior::D4)
}
