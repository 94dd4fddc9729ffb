use std::path::Path;

use dynattack_core::attack::{AttackConfig, CostMetric, EditLevel, PoisonScheme, TextMode};
use dynattack_core::cost::HardwareProfile;
use dynattack_core::defense::{BreachPolicy, GuardConfig, Transform};
use dynattack_core::models::{Behavior, DatasetKind, ModelSpec, Thresholds};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// One campaign: what to train, how to attack it and how to defend it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    /// Master seed. Every stream in the run is derived from it by label.
    #[serde(default)]
    pub seed: u64,
    /// Pins dataset, initialization and training to this seed instead of the
    /// master, so several master seeds can share one trained model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_seed: Option<u64>,
    #[serde(default = "Scenario::default_eval_inputs")]
    pub eval_inputs: usize,
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSpec>,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub attack: AttackSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense: Option<DefenseSpec>,
    #[serde(default)]
    pub hardware: HardwareProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    GaussBlobs,
    TokenCorpus,
    SceneVectors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetName,
    /// Training-set size.
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackName {
    None,
    Pgd,
    Blackbox,
    RandomNoise,
    Text,
    PoisonData,
    PoisonModel,
}

/// One value or a list, so a campaign can sweep budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub name: AttackName,
    /// L∞ radius, edit budget, soft-label fraction or poison magnitude,
    /// depending on `name`. A list yields one report row per value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<CostMetric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<EditLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<TextMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<PoisonScheme>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DefenseSpec {
    /// Logistic detector over trace features, trained on `train_inputs`
    /// fresh benign inputs and their attacked versions.
    Detector {
        #[serde(default = "DefenseSpec::default_train_inputs")]
        train_inputs: usize,
    },
    Transform {
        transform: Transform,
    },
    Guard {
        ceiling: f64,
        policy: BreachPolicy,
    },
}

impl DefenseSpec {
    fn default_train_inputs() -> usize {
        200
    }
}

impl Scenario {
    fn default_eval_inputs() -> usize {
        100
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| HarnessError::Validation(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Runtime(format!("serializing scenario: {e}")))
    }

    pub fn behavior(&self) -> Behavior {
        self.model.behavior()
    }

    pub fn dataset_kind(&self) -> DatasetKind {
        match self.dataset.kind {
            DatasetName::GaussBlobs => DatasetKind::GaussBlobs {
                dim: self.dataset.dim.unwrap_or(0),
            },
            DatasetName::TokenCorpus => DatasetKind::TokenCorpus,
            DatasetName::SceneVectors => DatasetKind::SceneVectors {
                grid: self.dataset.grid.unwrap_or(0),
            },
        }
    }

    /// Budgets swept by the campaign; `[0]` for the no-attack baseline.
    pub fn epsilons(&self) -> Vec<f64> {
        self.attack.epsilon.as_ref().map_or(vec![0.0], OneOrMany::values)
    }

    /// Attack configuration for one budget, before per-input seeding.
    pub fn attack_config(&self, epsilon: f64) -> AttackConfig {
        let mut cfg = AttackConfig::new(epsilon);
        if let Some(s) = self.attack.steps {
            cfg.steps = s;
        }
        cfg.alpha = self.attack.alpha;
        if let Some(q) = self.attack.query_budget {
            cfg.query_budget = q;
        }
        if let Some(m) = self.attack.metric {
            cfg.metric = m;
        }
        cfg
    }

    pub fn guard(&self) -> Option<GuardConfig> {
        match self.defense {
            Some(DefenseSpec::Guard { ceiling, policy }) => Some(GuardConfig { ceiling, policy }),
            _ => None,
        }
    }

    /// Checks everything that can be checked without running; errors name the key.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |field: &str, reason: String| Err(HarnessError::invalid(field, reason));
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return bad("id", "must be non-empty and use only letters, digits, '-', '_' or '.'".into());
        }
        if self.eval_inputs == 0 {
            return bad("eval_inputs", "must be at least 1".into());
        }
        self.model.validate().map_err(HarnessError::from_core)?;
        let behavior = self.behavior();

        let d = &self.dataset;
        if d.n == 0 {
            return bad("dataset.n", "must be at least 1".into());
        }
        let (expected, input) = match (&self.model, d.kind) {
            (ModelSpec::EarlyExit(s), DatasetName::GaussBlobs) => (None, Some((s.input_dim, d.dim))),
            (ModelSpec::Gated(s), DatasetName::GaussBlobs) => (None, Some((s.input_dim, d.dim))),
            (ModelSpec::Generator(_), DatasetName::TokenCorpus) => (None, None),
            (ModelSpec::Detector(s), DatasetName::SceneVectors) => {
                if d.grid != Some(s.input_dim) || s.grid != s.input_dim {
                    return bad(
                        "dataset.grid",
                        format!("must equal model.input_dim and model.grid, got {:?}", d.grid),
                    );
                }
                (None, None)
            }
            (_, kind) => (Some(kind), None),
        };
        if let Some(kind) = expected {
            return bad("dataset.kind", format!("{kind:?} data does not fit a {behavior} model"));
        }
        if let Some((want, got)) = input {
            if got != Some(want) {
                return bad("dataset.dim", format!("must equal model.input_dim = {want}"));
            }
        }
        if d.kind != DatasetName::GaussBlobs && d.dim.is_some() {
            return bad("dataset.dim", "only applies to gauss-blobs".into());
        }
        if d.kind != DatasetName::SceneVectors && d.grid.is_some() {
            return bad("dataset.grid", "only applies to scene-vectors".into());
        }
        if let ModelSpec::Generator(g) = &self.model {
            if g.vocab_size != dynattack_core::models::Alphabet.vocab_size() {
                return bad("model.vocab_size", "token corpora use the standard alphabet".into());
            }
        }
        if let Some(t) = &self.training {
            if t.epochs == 0 {
                return bad("training.epochs", "must be at least 1".into());
            }
            if !(t.lr.is_finite() && t.lr > 0.0) {
                return bad("training.lr", "must be finite and positive".into());
            }
        }
        let th = &self.thresholds;
        if !(th.tau > 0.0 && th.tau <= 1.0) {
            return bad("thresholds.tau", "must lie in (0, 1]".into());
        }
        if !(th.conf_thresh > 0.0 && th.conf_thresh < 1.0) {
            return bad("thresholds.conf_thresh", "must lie in (0, 1)".into());
        }
        if !(th.iou_thresh > 0.0 && th.iou_thresh < 1.0) {
            return bad("thresholds.iou_thresh", "must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&th.theta) {
            return bad("thresholds.theta", "must lie in [0, 1]".into());
        }
        if th.max_len == Some(0) {
            return bad("thresholds.max_len", "must be at least 1".into());
        }
        self.hardware.validate().map_err(HarnessError::from_core)?;
        self.validate_attack()?;
        self.validate_defense()
    }

    fn validate_attack(&self) -> Result<(), HarnessError> {
        let bad = |field: &str, reason: String| Err(HarnessError::invalid(field, reason));
        let a = &self.attack;
        let behavior = self.behavior();
        let text = behavior == Behavior::D2;
        let eps = match (&a.epsilon, a.name) {
            (None, AttackName::None) => vec![],
            (Some(_), AttackName::None) => return bad("attack.epsilon", "the none attack takes no budget".into()),
            (None, _) => return bad("attack.epsilon", "required for this attack".into()),
            (Some(e), _) => e.values(),
        };
        if a.name != AttackName::None && eps.is_empty() {
            return bad("attack.epsilon", "needs at least one value".into());
        }
        for &e in &eps {
            if !(e.is_finite() && e > 0.0) {
                return bad("attack.epsilon", format!("{e} must be finite and positive"));
            }
            self.attack_config(e).validate().map_err(HarnessError::from_core)?;
        }
        let only = |field: &str, present: bool, allowed: bool| {
            if present && !allowed {
                Err(HarnessError::invalid(field, format!("does not apply to the {:?} attack", a.name)))
            } else {
                Ok(())
            }
        };
        let vector = matches!(a.name, AttackName::Pgd | AttackName::Blackbox | AttackName::RandomNoise);
        only("attack.steps", a.steps.is_some(), a.name == AttackName::Pgd)?;
        only("attack.alpha", a.alpha.is_some(), a.name == AttackName::Pgd)?;
        only("attack.query_budget", a.query_budget.is_some(), a.name == AttackName::Blackbox)?;
        only(
            "attack.metric",
            a.metric.is_some(),
            vector || a.name == AttackName::Text,
        )?;
        only("attack.level", a.level.is_some(), a.name == AttackName::Text)?;
        only("attack.mode", a.mode.is_some(), a.name == AttackName::Text)?;
        only(
            "attack.scheme",
            a.scheme.is_some(),
            matches!(a.name, AttackName::PoisonData | AttackName::PoisonModel),
        )?;
        match a.name {
            AttackName::Pgd | AttackName::Blackbox | AttackName::RandomNoise if text => {
                bad("attack.name", "generators take prompts; use the text attack".into())
            }
            AttackName::Text if !text => bad("attack.name", "text attacks need a generator model".into()),
            AttackName::Text => {
                if a.level.is_none() {
                    return bad("attack.level", "required for text attacks".into());
                }
                if a.mode.is_none() {
                    return bad("attack.mode", "required for text attacks".into());
                }
                if let Some(e) = eps.iter().find(|e| e.fract() != 0.0) {
                    return bad("attack.epsilon", format!("edit budget {e} must be a whole number"));
                }
                Ok(())
            }
            AttackName::PoisonData => {
                if a.scheme != Some(PoisonScheme::UniformSoftLabel) {
                    return bad("attack.scheme", "poison-data uses uniform-soft-label".into());
                }
                if !matches!(behavior, Behavior::D1 | Behavior::D4) {
                    return bad("attack.name", "label poisoning needs a classifier".into());
                }
                if self.training.is_none() {
                    return bad("training", "poison-data needs a training section".into());
                }
                if let Some(e) = eps.iter().find(|&&e| e > 1.0) {
                    return bad("attack.epsilon", format!("poison fraction {e} must be at most 1"));
                }
                Ok(())
            }
            AttackName::PoisonModel => match (a.scheme, behavior) {
                (Some(PoisonScheme::ExitTemperature), Behavior::D1) => {
                    if let Some(e) = eps.iter().find(|&&e| e < 1.0) {
                        return bad("attack.epsilon", format!("exit temperature {e} must be at least 1"));
                    }
                    Ok(())
                }
                (Some(PoisonScheme::EosBias), Behavior::D2) => Ok(()),
                (None, _) => bad("attack.scheme", "required for poison-model".into()),
                (Some(s), b) => bad("attack.scheme", format!("{s:?} does not apply to a {b} model")),
            },
            _ => Ok(()),
        }
    }

    fn validate_defense(&self) -> Result<(), HarnessError> {
        let bad = |field: &str, reason: String| Err(HarnessError::invalid(field, reason));
        match &self.defense {
            None => Ok(()),
            Some(DefenseSpec::Detector { train_inputs }) => {
                if *train_inputs < 2 {
                    return bad("defense.train_inputs", "need at least 2 inputs".into());
                }
                if self.attack.name == AttackName::None {
                    return bad("defense.kind", "a detector needs an attack to train against".into());
                }
                Ok(())
            }
            Some(DefenseSpec::Transform { transform }) => {
                let text = self.behavior() == Behavior::D2;
                let (ok, value_ok) = match *transform {
                    Transform::Quantize { bits } => (!text, (1..=52).contains(&bits)),
                    Transform::MeanSmooth { window } => (!text, window >= 1),
                    Transform::TextNormalize { max_tokens } => (text, max_tokens >= 1),
                };
                if !ok {
                    return bad("defense.transform.kind", format!("does not apply to {} inputs", self.behavior()));
                }
                if !value_ok {
                    return bad("defense.transform", "parameter out of range".into());
                }
                Ok(())
            }
            Some(DefenseSpec::Guard { ceiling, policy }) => GuardConfig {
                ceiling: *ceiling,
                policy: *policy,
            }
            .validate()
            .map_err(HarnessError::from_core),
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("reading {}: {e}", path.display())))?;
    Scenario::from_toml(&text).map_err(|e| e.context(&path.display().to_string()))
}
