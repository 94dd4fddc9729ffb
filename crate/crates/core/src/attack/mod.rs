//! Cost-inflation attacks: white-box PGD on a differentiable surrogate,
//! query-only random search, edit attacks on prompts, and poisoning.

mod poison;
mod surrogate;
mod text;

pub use poison::{poison_dataset, poison_model, PoisonScheme, SOFT_LABEL_MIX};
pub use surrogate::{relaxed_generator_surrogate, surrogate_loss, Surrogate};
pub use text::{
    apply_edit, char_edit_distance, edit_distance, text_attack, word_edit_distance, word_units, EditKind, EditLevel,
    EditOp, TextMode, WordNeighbors,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cost::{inflation, trace_cost, CostReport, HardwareProfile, InflationReport};
use crate::error::{Error, Result};
use crate::models::{DynModel, Sample, Thresholds};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

/// Which cost figure the attacker compares when choosing between candidates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMetric {
    #[default]
    Flops,
    Latency,
    Energy,
}

impl CostMetric {
    pub fn of(self, c: &CostReport) -> f64 {
        match self {
            CostMetric::Flops => c.flops as f64,
            CostMetric::Latency => c.latency_ms,
            CostMetric::Energy => c.energy_mj,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// L∞ radius for vectors, edit budget for prompts.
    pub epsilon: f64,
    #[serde(default = "AttackConfig::default_steps")]
    pub steps: usize,
    /// PGD step; `epsilon / 10` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "AttackConfig::default_queries")]
    pub query_budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Per-coordinate valid range; the behavior's default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(f64, f64)>,
    #[serde(default)]
    pub metric: CostMetric,
}

impl AttackConfig {
    fn default_steps() -> usize {
        50
    }
    fn default_queries() -> usize {
        200
    }

    pub fn new(epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            steps: Self::default_steps(),
            alpha: None,
            query_budget: Self::default_queries(),
            seed: 0,
            bounds: None,
            metric: CostMetric::Flops,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid("attack.epsilon", "must be finite and non-negative"));
        }
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::invalid("attack.alpha", "must be finite and positive"));
            }
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid("attack.bounds", "need finite lo <= hi"));
            }
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.epsilon / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Sample,
    pub benign: CostReport,
    pub adversarial_cost: CostReport,
    pub inflation: InflationReport,
    pub queries_used: usize,
    pub constraint_satisfied: bool,
    /// Surrogate loss after each white-box step.
    pub trajectory: Vec<f64>,
    /// Edits applied to a prompt, in order.
    pub edits: Vec<EditOp>,
}

/// The ε-box around `x` intersected with `[lo, hi]`, computed so that every
/// point inside satisfies `|v - x| <= eps` exactly in floating point.
#[derive(Debug, Clone)]
pub struct LinfBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl LinfBox {
    pub fn new(x: &Tensor, eps: f64, (lo, hi): (f64, f64)) -> Result<Self> {
        let mut lower = Vec::with_capacity(x.len());
        let mut upper = Vec::with_capacity(x.len());
        for (i, &v) in x.data().iter().enumerate() {
            if v < lo || v > hi {
                return Err(Error::Domain(format!("input coordinate {i} = {v} lies outside [{lo}, {hi}]")));
            }
            let mut l = (v - eps).max(lo);
            while (v - l).abs() > eps {
                l = l.next_up();
            }
            let mut u = (v + eps).min(hi);
            while (u - v).abs() > eps {
                u = u.next_down();
            }
            lower.push(l);
            upper.push(u);
        }
        Ok(LinfBox { lower, upper })
    }

    pub fn project(&self, v: &mut [f64]) {
        for ((v, &l), &u) in v.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(l, u);
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
}

/// Whether `adv` is within `eps` of `x` in L∞ and inside `[lo, hi]`.
pub fn linf_satisfied(x: &Tensor, adv: &Tensor, eps: f64, (lo, hi): (f64, f64)) -> bool {
    x.shape() == adv.shape()
        && x.data()
            .iter()
            .zip(adv.data())
            .all(|(a, b)| (a - b).abs() <= eps && *b >= lo && *b <= hi)
}

fn bounds_for(model: &DynModel, cfg: &AttackConfig) -> Result<(f64, f64)> {
    cfg.bounds
        .or(model.behavior().default_bounds())
        .ok_or_else(|| Error::Usage(format!("{} inputs have no continuous domain", model.behavior())))
}

/// Measures the cost of one inference.
pub fn measure(model: &DynModel, input: &Sample, th: &Thresholds, profile: &HardwareProfile) -> Result<CostReport> {
    let run = model.infer(input, th)?;
    trace_cost(&run.trace, run.flops, profile)
}

fn finish(
    adversarial: Sample,
    benign: CostReport,
    adversarial_cost: CostReport,
    queries_used: usize,
    constraint_satisfied: bool,
    trajectory: Vec<f64>,
    edits: Vec<EditOp>,
) -> Result<AttackResult> {
    Ok(AttackResult {
        adversarial,
        inflation: inflation(&benign, &adversarial_cost)?,
        benign,
        adversarial_cost,
        queries_used,
        constraint_satisfied,
        trajectory,
        edits,
    })
}

/// Signed-gradient descent on the surrogate with projection onto the ε-box;
/// returns the iterate (including `x` itself) with the highest measured cost,
/// preferring the lower surrogate among equally costly iterates.
pub fn pgd_cost_attack(
    model: &DynModel,
    x: &Tensor,
    th: &Thresholds,
    cfg: &AttackConfig,
    profile: &HardwareProfile,
) -> Result<AttackResult> {
    if matches!(model, DynModel::Generator(_)) {
        return Err(Error::Usage("PGD needs continuous inputs; use text_attack for generators".into()));
    }
    cfg.validate()?;
    let bounds = bounds_for(model, cfg)?;
    let ball = LinfBox::new(x, cfg.epsilon, bounds)?;
    let alpha = cfg.alpha();

    let benign = measure(model, &Sample::Vector(x.clone()), th, profile)?;
    let mut best = (x.clone(), benign, f64::INFINITY);
    let mut trajectory = Vec::with_capacity(cfg.steps);
    if cfg.steps > 0 {
        let mut s = surrogate_loss(model, &Sample::Vector(x.clone()), th)?;
        best.2 = s.loss;
        let mut cur = x.data().to_vec();
        for _ in 0..cfg.steps {
            for (v, g) in cur.iter_mut().zip(s.grad.data()) {
                if *g > 0.0 {
                    *v -= alpha;
                } else if *g < 0.0 {
                    *v += alpha;
                }
            }
            ball.project(&mut cur);
            let xt = x.with_data(cur.clone())?;
            let sample = Sample::Vector(xt.clone());
            let cost = measure(model, &sample, th, profile)?;
            s = surrogate_loss(model, &sample, th)?;
            trajectory.push(s.loss);
            let (m_new, m_best) = (cfg.metric.of(&cost), cfg.metric.of(&best.1));
            if m_new > m_best || (m_new == m_best && s.loss < best.2) {
                best = (xt, cost, s.loss);
            }
        }
    }
    let (adv, cost, _) = best;
    let ok = linf_satisfied(x, &adv, cfg.epsilon, bounds);
    finish(Sample::Vector(adv), benign, cost, 0, ok, trajectory, Vec::new())
}

/// Query-only greedy random search. Each proposal redraws one coordinate
/// uniformly inside the ε-box and is kept only if the oracle reports a
/// strictly higher cost. The benign query is counted in `queries_used` on top
/// of at most `query_budget` proposals.
pub fn blackbox_search_attack<F>(mut oracle: F, x: &Tensor, cfg: &AttackConfig) -> Result<AttackResult>
where
    F: FnMut(&Tensor) -> Result<CostReport>,
{
    cfg.validate()?;
    let bounds = cfg
        .bounds
        .ok_or_else(|| Error::Usage("black-box search needs explicit input bounds".into()))?;
    let ball = LinfBox::new(x, cfg.epsilon, bounds)?;
    let mut rng = rng_from_seed(cfg.seed);
    let benign = oracle(x)?;
    let mut queries = 1;
    let mut best = (x.clone(), benign);
    for _ in 0..cfg.query_budget {
        let j = rng.random_range(0..x.len());
        let (l, u) = (ball.lower()[j], ball.upper()[j]);
        let mut cand = best.0.data().to_vec();
        cand[j] = if l < u { rng.random_range(l..=u) } else { l };
        let cand = x.with_data(cand)?;
        let cost = oracle(&cand)?;
        queries += 1;
        if cfg.metric.of(&cost) > cfg.metric.of(&best.1) {
            best = (cand, cost);
        }
    }
    let ok = linf_satisfied(x, &best.0, cfg.epsilon, bounds);
    finish(Sample::Vector(best.0), benign, best.1, queries, ok, Vec::new(), Vec::new())
}

/// Black-box search against a model's measured cost.
pub fn blackbox_model_attack(
    model: &DynModel,
    x: &Tensor,
    th: &Thresholds,
    cfg: &AttackConfig,
    profile: &HardwareProfile,
) -> Result<AttackResult> {
    let cfg = AttackConfig {
        bounds: Some(bounds_for(model, cfg)?),
        ..*cfg
    };
    blackbox_search_attack(|v| measure(model, &Sample::Vector(v.clone()), th, profile), x, &cfg)
}

/// Baseline: one uniform draw from the ε-box.
pub fn random_noise_attack(
    model: &DynModel,
    x: &Tensor,
    th: &Thresholds,
    cfg: &AttackConfig,
    profile: &HardwareProfile,
) -> Result<AttackResult> {
    cfg.validate()?;
    let bounds = bounds_for(model, cfg)?;
    let ball = LinfBox::new(x, cfg.epsilon, bounds)?;
    let mut rng = rng_from_seed(cfg.seed);
    let noisy: Vec<f64> = ball
        .lower()
        .iter()
        .zip(ball.upper())
        .map(|(&l, &u)| if l < u { rng.random_range(l..=u) } else { l })
        .collect();
    let adv = x.with_data(noisy)?;
    let benign = measure(model, &Sample::Vector(x.clone()), th, profile)?;
    let cost = measure(model, &Sample::Vector(adv.clone()), th, profile)?;
    let ok = linf_satisfied(x, &adv, cfg.epsilon, bounds);
    finish(Sample::Vector(adv), benign, cost, 0, ok, Vec::new(), Vec::new())
}
