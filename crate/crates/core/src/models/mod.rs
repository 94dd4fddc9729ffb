//! Instrumented toy models, one per dynamic-inference behavior:
//!
//! * D1 [`EarlyExitModel`]: backbone segments with a classifier head after
//!   each; inference stops at the first head that is confident enough.
//! * D2 [`GeneratorModel`]: sliding-window character generator, greedy
//!   decoding until EOS or a step cap.
//! * D3 [`DetectorModel`]: grid detector whose downstream cost grows with the
//!   number of boxes surviving threshold + NMS.
//! * D4 [`GatedModel`]: a cheap gate routes each input to a light or a heavy
//!   classifier.
//!
//! Every inference returns an [`InferenceTrace`] and the exact FLOPs spent on
//! the executed path.

mod data;
mod detector;
mod early_exit;
mod gated;
mod generator;
mod stack;
mod train;

pub use data::{
    split_prompt, synth_dataset, Alphabet, DatasetKind, Grammar, LabeledDataset, Sample, Target, EOS, PAD,
};
pub use detector::{greedy_nms, nms_pairs, BoxCandidate, Detection, DetectorModel, CHANNELS, IOU_PAIR_FLOPS};
pub use early_exit::{EarlyExitModel, ExitDecision, RecordedExits};
pub use gated::{GateDecision, GatedModel};
pub use generator::{Generation, GeneratorLeaves, GeneratorModel, Slot};
pub use stack::{Layer, Stack, StackOutput};
pub use train::{train_model, TrainConfig, GATE_TARGET_CONFIDENCE};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::stack_flops;
use crate::error::{Error, Result};
use crate::tensor::LayerSpec;

pub const DEFAULT_TAU: f64 = 0.9;
pub const DEFAULT_CONTEXT: usize = 4;
pub const DEFAULT_MAX_LEN: usize = 64;
pub const DEFAULT_GRID: usize = 64;
pub const DEFAULT_CONF_THRESH: f64 = 0.5;
pub const DEFAULT_IOU_THRESH: f64 = 0.5;
pub const DEFAULT_DOWNSTREAM_FLOPS: u64 = 500;
pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Behavior {
    D1,
    D2,
    D3,
    D4,
}

impl Behavior {
    /// Default valid-input box for continuous inputs.
    pub fn default_bounds(self) -> Option<(f64, f64)> {
        match self {
            Behavior::D1 | Behavior::D4 => Some((-10.0, 10.0)),
            Behavior::D3 => Some((0.0, 1.0)),
            Behavior::D2 => None,
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "kebab-case")]
pub enum ModelSpec {
    EarlyExit(EarlyExitSpec),
    Generator(GeneratorSpec),
    Detector(DetectorSpec),
    Gated(GatedSpec),
}

/// D1: `widths[i]` is the width of backbone segment `i`; exit `i` follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyExitSpec {
    #[serde(default)]
    pub seed: u64,
    pub input_dim: usize,
    pub widths: Vec<usize>,
    #[serde(default = "two")]
    pub classes: usize,
}

/// D2: character generator over `vocab_size` ids with a `context`-token window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "GeneratorSpec::default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "GeneratorSpec::default_eos")]
    pub eos_id: usize,
    #[serde(default)]
    pub pad_id: usize,
    #[serde(default = "GeneratorSpec::default_context")]
    pub context: usize,
    #[serde(default = "GeneratorSpec::default_embed")]
    pub embed_dim: usize,
    #[serde(default = "GeneratorSpec::default_hidden")]
    pub hidden: usize,
    #[serde(default = "GeneratorSpec::default_max_len")]
    pub max_len: usize,
}

/// D3: `grid` candidate boxes on a square lattice, `downstream_flops` per kept box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "DetectorSpec::default_grid")]
    pub input_dim: usize,
    #[serde(default = "DetectorSpec::default_hidden")]
    pub hidden: usize,
    #[serde(default = "DetectorSpec::default_grid")]
    pub grid: usize,
    /// Largest box side, as a fraction of the scene.
    #[serde(default = "DetectorSpec::default_max_box")]
    pub max_box: f64,
    #[serde(default = "DetectorSpec::default_downstream")]
    pub downstream_flops: u64,
}

/// D4: `gate_hidden = 0` makes the gate a single logistic unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatedSpec {
    #[serde(default)]
    pub seed: u64,
    pub input_dim: usize,
    #[serde(default)]
    pub gate_hidden: usize,
    pub light: Vec<usize>,
    pub heavy: Vec<usize>,
    #[serde(default = "two")]
    pub classes: usize,
}

fn two() -> usize {
    2
}

impl EarlyExitSpec {
    pub fn num_exits(&self) -> usize {
        self.widths.len()
    }

    pub fn segment_layers(&self, i: usize) -> Vec<LayerSpec> {
        let prev = if i == 0 { self.input_dim } else { self.widths[i - 1] };
        vec![LayerSpec::dense(prev, self.widths[i], true), LayerSpec::relu(self.widths[i])]
    }

    pub fn head_layers(&self, i: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::dense(self.widths[i], self.classes, true),
            LayerSpec::softmax(self.classes),
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("model.input_dim", "must be positive"));
        }
        if self.widths.len() < 2 {
            return Err(Error::invalid("model.widths", "an early-exit model needs at least two exits"));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid("model.widths", "widths must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("model.classes", "need at least two classes"));
        }
        Ok(())
    }
}

impl GeneratorSpec {
    fn default_vocab() -> usize {
        Alphabet::standard().vocab_size()
    }
    fn default_eos() -> usize {
        EOS
    }
    fn default_context() -> usize {
        DEFAULT_CONTEXT
    }
    fn default_embed() -> usize {
        8
    }
    fn default_hidden() -> usize {
        32
    }
    fn default_max_len() -> usize {
        DEFAULT_MAX_LEN
    }

    pub fn embedding_layer(&self) -> LayerSpec {
        LayerSpec::embedding(self.vocab_size, self.embed_dim)
    }

    pub fn body_layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::dense(self.context * self.embed_dim, self.hidden, true),
            LayerSpec::relu(self.hidden),
            LayerSpec::dense(self.hidden, self.vocab_size, true),
            LayerSpec::softmax(self.vocab_size),
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return Err(Error::invalid("model.vocab_size", "need PAD, EOS and at least one symbol"));
        }
        if self.eos_id >= self.vocab_size {
            return Err(Error::invalid("model.eos_id", "must be below vocab_size"));
        }
        if self.pad_id >= self.vocab_size || self.pad_id == self.eos_id {
            return Err(Error::invalid("model.pad_id", "must be below vocab_size and differ from eos_id"));
        }
        for (field, v) in [
            ("model.context", self.context),
            ("model.embed_dim", self.embed_dim),
            ("model.hidden", self.hidden),
            ("model.max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            seed: 0,
            vocab_size: Self::default_vocab(),
            eos_id: EOS,
            pad_id: PAD,
            context: DEFAULT_CONTEXT,
            embed_dim: Self::default_embed(),
            hidden: Self::default_hidden(),
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl DetectorSpec {
    fn default_grid() -> usize {
        DEFAULT_GRID
    }
    fn default_hidden() -> usize {
        32
    }
    fn default_max_box() -> f64 {
        0.25
    }
    fn default_downstream() -> u64 {
        DEFAULT_DOWNSTREAM_FLOPS
    }

    /// Cells per side of the candidate lattice.
    pub fn side(&self) -> usize {
        (self.grid as f64).sqrt().round() as usize
    }

    pub fn backbone_layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::dense(self.input_dim, self.hidden, true),
            LayerSpec::relu(self.hidden),
            LayerSpec::dense(self.hidden, 5 * self.grid, true),
            LayerSpec::sigmoid(5 * self.grid),
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("model.input_dim", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("model.hidden", "must be positive"));
        }
        if self.grid == 0 || self.side() * self.side() != self.grid {
            return Err(Error::invalid("model.grid", "must be a positive perfect square"));
        }
        if !(self.max_box > 0.0 && self.max_box <= 1.0) {
            return Err(Error::invalid("model.max_box", "must lie in (0, 1]"));
        }
        if self.downstream_flops == 0 {
            return Err(Error::invalid("model.downstream_flops", "must be positive"));
        }
        Ok(())
    }
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            seed: 0,
            input_dim: DEFAULT_GRID,
            hidden: Self::default_hidden(),
            grid: DEFAULT_GRID,
            max_box: Self::default_max_box(),
            downstream_flops: DEFAULT_DOWNSTREAM_FLOPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Light,
    Heavy,
}

impl GatedSpec {
    pub fn gate_layers(&self) -> Vec<LayerSpec> {
        if self.gate_hidden == 0 {
            vec![LayerSpec::dense(self.input_dim, 1, true), LayerSpec::sigmoid(1)]
        } else {
            vec![
                LayerSpec::dense(self.input_dim, self.gate_hidden, true),
                LayerSpec::relu(self.gate_hidden),
                LayerSpec::dense(self.gate_hidden, 1, true),
                LayerSpec::sigmoid(1),
            ]
        }
    }

    pub fn path_layers(&self, route: Route) -> Vec<LayerSpec> {
        let widths = match route {
            Route::Light => &self.light,
            Route::Heavy => &self.heavy,
        };
        let mut layers = Vec::new();
        let mut prev = self.input_dim;
        for &w in widths {
            layers.push(LayerSpec::dense(prev, w, true));
            layers.push(LayerSpec::relu(w));
            prev = w;
        }
        layers.push(LayerSpec::dense(prev, self.classes, true));
        layers.push(LayerSpec::softmax(self.classes));
        layers
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("model.input_dim", "must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("model.classes", "need at least two classes"));
        }
        if self.light.contains(&0) {
            return Err(Error::invalid("model.light", "widths must be positive"));
        }
        if self.heavy.contains(&0) {
            return Err(Error::invalid("model.heavy", "widths must be positive"));
        }
        let light = stack_flops(&self.path_layers(Route::Light));
        let heavy = stack_flops(&self.path_layers(Route::Heavy));
        if heavy <= light {
            return Err(Error::invalid(
                "model.heavy",
                format!("heavy path ({heavy} FLOPs) must cost more than the light path ({light} FLOPs)"),
            ));
        }
        Ok(())
    }
}

impl ModelSpec {
    pub fn behavior(&self) -> Behavior {
        match self {
            ModelSpec::EarlyExit(_) => Behavior::D1,
            ModelSpec::Generator(_) => Behavior::D2,
            ModelSpec::Detector(_) => Behavior::D3,
            ModelSpec::Gated(_) => Behavior::D4,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelSpec::EarlyExit(s) => s.seed,
            ModelSpec::Generator(s) => s.seed,
            ModelSpec::Detector(s) => s.seed,
            ModelSpec::Gated(s) => s.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ModelSpec::EarlyExit(s) => s.seed = seed,
            ModelSpec::Generator(s) => s.seed = seed,
            ModelSpec::Detector(s) => s.seed = seed,
            ModelSpec::Gated(s) => s.seed = seed,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::EarlyExit(s) => s.validate(),
            ModelSpec::Generator(s) => s.validate(),
            ModelSpec::Detector(s) => s.validate(),
            ModelSpec::Gated(s) => s.validate(),
        }
    }

    /// Three exits over an 8-dim input, widths 8/8/8, two classes.
    pub fn reference_early_exit(seed: u64) -> Self {
        ModelSpec::EarlyExit(EarlyExitSpec {
            seed,
            input_dim: 8,
            widths: vec![8, 8, 8],
            classes: 2,
        })
    }

    /// Two input features, a single logistic gate unit, a direct linear light
    /// path and a 16/16 heavy path.
    pub fn reference_gated(seed: u64) -> Self {
        ModelSpec::Gated(GatedSpec {
            seed,
            input_dim: 2,
            gate_hidden: 0,
            light: vec![],
            heavy: vec![16, 16],
            classes: 2,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "index", rename_all = "kebab-case")]
pub enum Stage {
    Segment(usize),
    Head(usize),
    Step(usize),
    Backbone,
    Nms,
    Output(usize),
    Gate,
    Path(Route),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: Stage,
    pub cumulative_flops: u64,
}

/// Behavior-specific observations recorded during one inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "kebab-case")]
pub enum TraceDetail {
    EarlyExit {
        /// Max softmax probability of each executed head.
        confidences: Vec<f64>,
        exit_index: usize,
        num_exits: usize,
    },
    Generation {
        tokens: Vec<usize>,
        eos_probs: Vec<f64>,
        length: usize,
        max_len: usize,
    },
    Detection {
        /// Confidence of every candidate.
        scores: Vec<f64>,
        passing: usize,
        retained: usize,
        grid: usize,
    },
    Gate {
        score: f64,
        route: Route,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub checkpoints: Vec<Checkpoint>,
    pub detail: TraceDetail,
}

impl InferenceTrace {
    pub fn behavior(&self) -> Behavior {
        match self.detail {
            TraceDetail::EarlyExit { .. } => Behavior::D1,
            TraceDetail::Generation { .. } => Behavior::D2,
            TraceDetail::Detection { .. } => Behavior::D3,
            TraceDetail::Gate { .. } => Behavior::D4,
        }
    }

    pub fn total_flops(&self) -> u64 {
        self.checkpoints.last().map_or(0, |c| c.cumulative_flops)
    }
}

/// FLOP accounting with an optional ceiling checked before each unit of work.
#[derive(Debug, Clone)]
pub(crate) struct Meter {
    ceiling: Option<u64>,
    used: u64,
    checkpoints: Vec<Checkpoint>,
    halted: bool,
}

impl Meter {
    pub(crate) fn new(ceiling: Option<u64>) -> Self {
        Meter {
            ceiling,
            used: 0,
            checkpoints: Vec::new(),
            halted: false,
        }
    }

    /// Whether `cost` more FLOPs fit under the ceiling. Halts the meter if not.
    pub(crate) fn admit(&mut self, cost: u64) -> bool {
        if self.halted {
            return false;
        }
        match self.ceiling {
            Some(c) if self.used + cost > c => {
                self.halted = true;
                false
            }
            _ => true,
        }
    }

    pub(crate) fn charge(&mut self, stage: Stage, flops: u64) {
        self.used += flops;
        if flops > 0 {
            self.checkpoints.push(Checkpoint {
                stage,
                cumulative_flops: self.used,
            });
        }
    }

    pub(crate) fn used(&self) -> u64 {
        self.used
    }

    pub(crate) fn halted(&self) -> bool {
        self.halted
    }

    pub(crate) fn into_checkpoints(self) -> Vec<Checkpoint> {
        self.checkpoints
    }
}

/// Outcome of a possibly budget-limited inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Run<T> {
    /// Best output available when execution stopped; `None` if nothing completed.
    pub output: Option<T>,
    pub trace: InferenceTrace,
    pub flops: u64,
    /// True when a FLOP ceiling stopped execution early.
    pub halted: bool,
}

/// Outcome of an unbounded inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    pub output: T,
    pub trace: InferenceTrace,
    pub flops: u64,
}

impl<T> Run<T> {
    pub(crate) fn into_inference(self) -> Inference<T> {
        debug_assert!(!self.halted);
        Inference {
            output: self.output.expect("unbounded inference always completes"),
            trace: self.trace,
            flops: self.flops,
        }
    }
}

/// Decision thresholds applied at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "Thresholds::default_tau")]
    pub tau: f64,
    #[serde(default = "Thresholds::default_conf")]
    pub conf_thresh: f64,
    #[serde(default = "Thresholds::default_iou")]
    pub iou_thresh: f64,
    #[serde(default = "Thresholds::default_theta")]
    pub theta: f64,
    /// Decoding cap; the model's own `max_len` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
}

impl Thresholds {
    fn default_tau() -> f64 {
        DEFAULT_TAU
    }
    fn default_conf() -> f64 {
        DEFAULT_CONF_THRESH
    }
    fn default_iou() -> f64 {
        DEFAULT_IOU_THRESH
    }
    fn default_theta() -> f64 {
        DEFAULT_THETA
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau: DEFAULT_TAU,
            conf_thresh: DEFAULT_CONF_THRESH,
            iou_thresh: DEFAULT_IOU_THRESH,
            theta: DEFAULT_THETA,
            max_len: None,
        }
    }
}

/// Output of any model kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Exit(ExitDecision),
    Tokens(Vec<usize>),
    Boxes(Detection),
    Gate(GateDecision),
}

impl Prediction {
    /// Class label for classifiers.
    pub fn label(&self) -> Option<usize> {
        match self {
            Prediction::Exit(d) => Some(d.label),
            Prediction::Gate(d) => Some(d.label),
            _ => None,
        }
    }
}

fn map_run<T>(run: Run<T>, f: impl FnOnce(T) -> Prediction) -> Run<Prediction> {
    Run {
        output: run.output.map(f),
        trace: run.trace,
        flops: run.flops,
        halted: run.halted,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DynModel {
    EarlyExit(EarlyExitModel),
    Generator(GeneratorModel),
    Detector(DetectorModel),
    Gated(GatedModel),
}

impl DynModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            DynModel::EarlyExit(m) => ModelSpec::EarlyExit(m.spec().clone()),
            DynModel::Generator(m) => ModelSpec::Generator(m.spec().clone()),
            DynModel::Detector(m) => ModelSpec::Detector(m.spec().clone()),
            DynModel::Gated(m) => ModelSpec::Gated(m.spec().clone()),
        }
    }

    pub fn behavior(&self) -> Behavior {
        match self {
            DynModel::EarlyExit(_) => Behavior::D1,
            DynModel::Generator(_) => Behavior::D2,
            DynModel::Detector(_) => Behavior::D3,
            DynModel::Gated(_) => Behavior::D4,
        }
    }

    pub fn as_early_exit(&self) -> Result<&EarlyExitModel> {
        match self {
            DynModel::EarlyExit(m) => Ok(m),
            other => Err(mismatch(Behavior::D1, other.behavior())),
        }
    }

    pub fn as_generator(&self) -> Result<&GeneratorModel> {
        match self {
            DynModel::Generator(m) => Ok(m),
            other => Err(mismatch(Behavior::D2, other.behavior())),
        }
    }

    pub fn as_detector(&self) -> Result<&DetectorModel> {
        match self {
            DynModel::Detector(m) => Ok(m),
            other => Err(mismatch(Behavior::D3, other.behavior())),
        }
    }

    pub fn as_gated(&self) -> Result<&GatedModel> {
        match self {
            DynModel::Gated(m) => Ok(m),
            other => Err(mismatch(Behavior::D4, other.behavior())),
        }
    }

    /// Runs any model on a matching sample, optionally under a FLOP ceiling.
    pub fn run(&self, input: &Sample, th: &Thresholds, ceiling: Option<u64>) -> Result<Run<Prediction>> {
        Ok(match self {
            DynModel::EarlyExit(m) => map_run(m.run(input.as_vector()?, th.tau, ceiling)?, Prediction::Exit),
            DynModel::Generator(m) => {
                let cap = th.max_len.unwrap_or(m.spec().max_len);
                map_run(m.run(input.as_tokens()?, cap, ceiling)?, |g| Prediction::Tokens(g.tokens))
            }
            DynModel::Detector(m) => map_run(
                m.run(input.as_vector()?, th.conf_thresh, th.iou_thresh, ceiling)?,
                Prediction::Boxes,
            ),
            DynModel::Gated(m) => map_run(m.run(input.as_vector()?, th.theta, ceiling)?, Prediction::Gate),
        })
    }

    pub fn infer(&self, input: &Sample, th: &Thresholds) -> Result<Inference<Prediction>> {
        Ok(self.run(input, th, None)?.into_inference())
    }


    pub fn params(&self) -> Vec<&crate::tensor::Tensor> {
        match self {
            DynModel::EarlyExit(m) => m.params(),
            DynModel::Generator(m) => m.params(),
            DynModel::Detector(m) => m.params(),
            DynModel::Gated(m) => m.params(),
        }
    }
}

pub(crate) fn mismatch(expected: Behavior, found: Behavior) -> Error {
    Error::Usage(format!("expected a {expected} model, got {found}"))
}

/// Validates `spec` and initializes parameters from its seed.
pub fn build_model(spec: &ModelSpec) -> Result<DynModel> {
    spec.validate()?;
    Ok(match spec {
        ModelSpec::EarlyExit(s) => DynModel::EarlyExit(EarlyExitModel::new(s.clone())),
        ModelSpec::Generator(s) => DynModel::Generator(GeneratorModel::new(s.clone())),
        ModelSpec::Detector(s) => DynModel::Detector(DetectorModel::new(s.clone())),
        ModelSpec::Gated(s) => DynModel::Gated(GatedModel::new(s.clone())),
    })
}
