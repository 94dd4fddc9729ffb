use super::stack::Stack;
use super::{GatedSpec, Inference, InferenceTrace, Meter, Route, Run, Stage, TraceDetail};
use crate::cost::stack_flops;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::{argmax, GradTape, Tensor, ValueId};

#[derive(Debug, Clone, PartialEq)]
pub struct GatedModel {
    spec: GatedSpec,
    gate: Stack,
    light: Stack,
    heavy: Stack,
    gate_flops: u64,
    light_flops: u64,
    heavy_flops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateDecision {
    pub label: usize,
    pub route: Route,
}

impl GatedModel {
    pub(crate) fn new(spec: GatedSpec) -> Self {
        let mut rng = rng_from_seed(spec.seed);
        let gate = Stack::init(&spec.gate_layers(), &mut rng);
        let light = Stack::init(&spec.path_layers(Route::Light), &mut rng);
        let heavy = Stack::init(&spec.path_layers(Route::Heavy), &mut rng);
        GatedModel {
            gate_flops: stack_flops(&spec.gate_layers()),
            light_flops: stack_flops(&spec.path_layers(Route::Light)),
            heavy_flops: stack_flops(&spec.path_layers(Route::Heavy)),
            spec,
            gate,
            light,
            heavy,
        }
    }

    pub fn spec(&self) -> &GatedSpec {
        &self.spec
    }

    pub fn gate(&self) -> &Stack {
        &self.gate
    }

    pub fn gate_mut(&mut self) -> &mut Stack {
        &mut self.gate
    }

    pub fn path(&self, route: Route) -> &Stack {
        match route {
            Route::Light => &self.light,
            Route::Heavy => &self.heavy,
        }
    }

    pub fn path_mut(&mut self, route: Route) -> &mut Stack {
        match route {
            Route::Light => &mut self.light,
            Route::Heavy => &mut self.heavy,
        }
    }

    pub fn gate_flops(&self) -> u64 {
        self.gate_flops
    }

    pub fn path_flops(&self, route: Route) -> u64 {
        match route {
            Route::Light => self.light_flops,
            Route::Heavy => self.heavy_flops,
        }
    }

    /// Gate score `s` in (0, 1).
    pub fn gate_score(&self, x: &Tensor) -> Result<f64> {
        Ok(self.gate.forward(x)?.output.data()[0])
    }

    /// Label predicted by one path, ignoring the gate.
    pub fn classify(&self, route: Route, x: &Tensor) -> Result<(usize, u64)> {
        let out = self.path(route).forward(x)?;
        Ok((argmax(out.logits.data()), out.flops))
    }

    pub fn infer(&self, x: &Tensor, theta: f64) -> Result<Inference<GateDecision>> {
        Ok(self.run(x, theta, None)?.into_inference())
    }

    /// Scores the gate and runs the heavy path iff `s >= theta`.
    pub fn run(&self, x: &Tensor, theta: f64, ceiling: Option<u64>) -> Result<Run<GateDecision>> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Domain(format!("gate threshold theta = {theta} must lie in [0, 1]")));
        }
        if x.len() != self.spec.input_dim {
            return Err(Error::dim("gated input", self.spec.input_dim, x.len()));
        }
        let mut meter = Meter::new(ceiling);
        let mut score = 0.0;
        let mut route = Route::Light;
        let mut output = None;
        'run: {
            if !meter.admit(self.gate_flops) {
                break 'run;
            }
            let g = self.gate.forward(x)?;
            debug_assert_eq!(g.flops, self.gate_flops);
            meter.charge(Stage::Gate, g.flops);
            score = g.output.data()[0];
            route = if score >= theta { Route::Heavy } else { Route::Light };
            if !meter.admit(self.path_flops(route)) {
                break 'run;
            }
            let (label, flops) = self.classify(route, x)?;
            debug_assert_eq!(flops, self.path_flops(route));
            meter.charge(Stage::Path(route), flops);
            output = Some(GateDecision { label, route });
        }
        let halted = meter.halted();
        let flops = meter.used();
        Ok(Run {
            output,
            trace: InferenceTrace {
                checkpoints: meter.into_checkpoints(),
                detail: TraceDetail::Gate { score, route },
            },
            flops,
            halted,
        })
    }

    /// Records the gate; returns the score id and the gate's parameter leaves.
    pub fn record_gate(&self, tape: &mut GradTape, x: ValueId) -> Result<(ValueId, Vec<ValueId>)> {
        let (s, _, leaves) = self.gate.record(tape, x)?;
        Ok((s, leaves))
    }

    /// Gate, light path, heavy path.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.gate.params();
        p.extend(self.light.params());
        p.extend(self.heavy.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.gate.params_mut();
        p.extend(self.light.params_mut());
        p.extend(self.heavy.params_mut());
        p
    }
}
