use serde::{Deserialize, Serialize};

use crate::cost::{trace_cost, CostReport, HardwareProfile};
use crate::error::{Error, Result};
use crate::models::{Checkpoint, DynModel, GateDecision, InferenceTrace, Prediction, Route, Sample, Stage, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BreachPolicy {
    AbortAndFlag,
    ExitNow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardConfig {
    /// FLOP ceiling; `inf` disables the guard.
    pub ceiling: f64,
    pub policy: BreachPolicy,
}

impl GuardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ceiling.is_nan() || self.ceiling <= 0.0 {
            return Err(Error::Validation {
                field: "defense.ceiling".into(),
                reason: format!("must be > 0, got {}", self.ceiling),
            });
        }
        Ok(())
    }

    /// Integral ceiling; flops are whole numbers so `floor(B)` is equivalent.
    fn flop_ceiling(&self) -> Option<u64> {
        if self.ceiling.is_infinite() || self.ceiling >= u64::MAX as f64 {
            None
        } else {
            Some(self.ceiling.floor() as u64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardedOutcome {
    /// `None` when aborted, or when nothing had completed before the breach.
    pub output: Option<Prediction>,
    pub cost: CostReport,
    pub breached: bool,
    pub trace: InferenceTrace,
}

/// Inference that stops before cumulative FLOPs would pass the ceiling.
///
/// Exit-now keeps whatever finished: the latest completed exit, the tokens
/// decoded so far, the boxes kept so far. A gated model whose chosen path
/// does not fit answers with the light path when that still fits.
pub fn guarded_infer(
    model: &DynModel,
    x: &Sample,
    th: &Thresholds,
    guard: &GuardConfig,
    profile: &HardwareProfile,
) -> Result<GuardedOutcome> {
    guard.validate()?;
    let ceiling = guard.flop_ceiling();
    let run = model.run(x, th, ceiling)?;
    let mut output = run.output;
    let mut trace = run.trace;
    let mut flops = run.flops;
    if run.halted {
        match guard.policy {
            BreachPolicy::AbortAndFlag => output = None,
            BreachPolicy::ExitNow => {
                if let (None, DynModel::Gated(m)) = (&output, model) {
                    let gate_done = trace.checkpoints.iter().any(|c| c.stage == Stage::Gate);
                    let light = m.path_flops(Route::Light);
                    if gate_done && ceiling.is_none_or(|c| flops + light <= c) {
                        let (label, f) = m.classify(Route::Light, x.as_vector()?)?;
                        flops += f;
                        trace.checkpoints.push(Checkpoint {
                            stage: Stage::Path(Route::Light),
                            cumulative_flops: flops,
                        });
                        output = Some(Prediction::Gate(GateDecision {
                            label,
                            route: Route::Light,
                        }));
                    }
                }
            }
        }
    }
    debug_assert!(ceiling.is_none_or(|c| flops <= c));
    Ok(GuardedOutcome {
        output,
        cost: trace_cost(&trace, flops, profile)?,
        breached: run.halted,
        trace,
    })
}
