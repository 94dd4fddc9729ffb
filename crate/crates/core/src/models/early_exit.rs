use super::stack::Stack;
use super::{EarlyExitSpec, Inference, InferenceTrace, Meter, Run, Stage, TraceDetail};
use crate::cost::stack_flops;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::{argmax, GradTape, Tensor, ValueId};

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyExitModel {
    spec: EarlyExitSpec,
    segments: Vec<Stack>,
    heads: Vec<Stack>,
    segment_flops: Vec<u64>,
    head_flops: Vec<u64>,
}

/// Prediction of the exit that terminated inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExitDecision {
    pub label: usize,
    pub exit_index: usize,
}

/// Tape ids produced by [`EarlyExitModel::record`].
#[derive(Debug, Clone)]
pub struct RecordedExits {
    pub probs: Vec<ValueId>,
    pub params: Vec<ValueId>,
}

impl EarlyExitModel {
    pub(crate) fn new(spec: EarlyExitSpec) -> Self {
        let mut rng = rng_from_seed(spec.seed);
        let mut segments = Vec::new();
        let mut heads = Vec::new();
        for i in 0..spec.num_exits() {
            segments.push(Stack::init(&spec.segment_layers(i), &mut rng));
            heads.push(Stack::init(&spec.head_layers(i), &mut rng));
        }
        let segment_flops = (0..spec.num_exits()).map(|i| stack_flops(&spec.segment_layers(i))).collect();
        let head_flops = (0..spec.num_exits()).map(|i| stack_flops(&spec.head_layers(i))).collect();
        EarlyExitModel {
            spec,
            segments,
            heads,
            segment_flops,
            head_flops,
        }
    }

    pub fn spec(&self) -> &EarlyExitSpec {
        &self.spec
    }

    pub fn num_exits(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[Stack] {
        &self.segments
    }

    pub fn heads(&self) -> &[Stack] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [Stack] {
        &mut self.heads
    }

    /// Closed-form cost of backbone segment `i`.
    pub fn segment_flops(&self, i: usize) -> u64 {
        self.segment_flops[i]
    }

    pub fn head_flops(&self, i: usize) -> u64 {
        self.head_flops[i]
    }

    /// Runs backbone segments in order and stops at the first exit whose max
    /// softmax probability reaches `tau` (the last exit always terminates).
    pub fn infer(&self, x: &Tensor, tau: f64) -> Result<Inference<ExitDecision>> {
        Ok(self.run(x, tau, None)?.into_inference())
    }

    pub fn run(&self, x: &Tensor, tau: f64, ceiling: Option<u64>) -> Result<Run<ExitDecision>> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Domain(format!("exit threshold tau = {tau} must lie in (0, 1]")));
        }
        if x.len() != self.spec.input_dim {
            return Err(Error::dim("early-exit input", self.spec.input_dim, x.len()));
        }
        let mut meter = Meter::new(ceiling);
        let mut confidences = Vec::new();
        let mut decided: Option<ExitDecision> = None;
        let mut latest: Option<ExitDecision> = None;
        let mut h = x.clone();
        let last = self.num_exits() - 1;
        for i in 0..=last {
            if !meter.admit(self.segment_flops[i]) {
                break;
            }
            let seg = self.segments[i].forward(&h)?;
            debug_assert_eq!(seg.flops, self.segment_flops[i]);
            meter.charge(Stage::Segment(i), seg.flops);
            h = seg.output;

            if !meter.admit(self.head_flops[i]) {
                break;
            }
            let head = self.heads[i].forward(&h)?;
            debug_assert_eq!(head.flops, self.head_flops[i]);
            meter.charge(Stage::Head(i), head.flops);
            let probs = head.output.data();
            let conf = probs[argmax(probs)];
            confidences.push(conf);
            let here = ExitDecision {
                label: argmax(head.logits.data()),
                exit_index: i,
            };
            latest = Some(here);
            if conf >= tau || i == last {
                decided = Some(here);
                break;
            }
        }
        let halted = meter.halted();
        let exit_index = decided.or(latest).map_or(0, |d| d.exit_index);
        let flops = meter.used();
        Ok(Run {
            output: if halted { latest } else { decided },
            trace: InferenceTrace {
                checkpoints: meter.into_checkpoints(),
                detail: TraceDetail::EarlyExit {
                    confidences,
                    exit_index,
                    num_exits: self.num_exits(),
                },
            },
            flops,
            halted,
        })
    }

    /// Argmax of every head on a full-depth pass, ignoring the exit rule.
    pub fn exit_labels(&self, x: &Tensor) -> Result<Vec<usize>> {
        if x.len() != self.spec.input_dim {
            return Err(Error::dim("early-exit input", self.spec.input_dim, x.len()));
        }
        let mut h = x.clone();
        let mut labels = Vec::with_capacity(self.num_exits());
        for (seg, head) in self.segments.iter().zip(&self.heads) {
            h = seg.forward(&h)?.output;
            labels.push(argmax(head.forward(&h)?.logits.data()));
        }
        Ok(labels)
    }

    /// Records the full-depth forward pass (every exit) on `tape`.
    pub fn record(&self, tape: &mut GradTape, x: ValueId) -> Result<RecordedExits> {
        let mut probs = Vec::new();
        let mut params = Vec::new();
        let mut h = x;
        for (seg, head) in self.segments.iter().zip(&self.heads) {
            let (out, _, p) = seg.record(tape, h)?;
            params.extend(p);
            h = out;
            let (prob, _, p) = head.record(tape, h)?;
            params.extend(p);
            probs.push(prob);
        }
        Ok(RecordedExits { probs, params })
    }

    /// Parameters in the order used by [`Self::record`].
    pub fn params(&self) -> Vec<&Tensor> {
        self.segments
            .iter()
            .zip(&self.heads)
            .flat_map(|(s, h)| s.params().into_iter().chain(h.params()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.segments
            .iter_mut()
            .zip(self.heads.iter_mut())
            .flat_map(|(s, h)| s.params_mut().into_iter().chain(h.params_mut()))
            .collect()
    }
}
