use super::stack::{init_uniform, Stack};
use super::{GeneratorSpec, Inference, InferenceTrace, Meter, Run, Stage, TraceDetail};
use crate::cost::stack_flops;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::{GradTape, Tensor, ValueId};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    spec: GeneratorSpec,
    /// `embed_dim x vocab`; column `t` embeds token `t`.
    embedding: Tensor,
    body: Stack,
    step_flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    /// Generated tokens, including the terminating EOS when one was emitted.
    pub tokens: Vec<usize>,
}

/// One position of a recorded context window.
#[derive(Debug, Clone, Copy)]
pub enum Slot {
    Token(usize),
    /// A one-hot (or relaxed) vocabulary vector already on the tape.
    OneHot(ValueId),
}

/// Parameter leaves of a generator on some tape.
#[derive(Debug, Clone)]
pub struct GeneratorLeaves {
    pub embedding: ValueId,
    pub body: Vec<ValueId>,
}

impl GeneratorLeaves {
    /// All leaves in [`GeneratorModel::params`] order.
    pub fn all(&self) -> Vec<ValueId> {
        std::iter::once(self.embedding).chain(self.body.iter().copied()).collect()
    }
}

impl GeneratorModel {
    pub(crate) fn new(spec: GeneratorSpec) -> Self {
        let mut rng = rng_from_seed(spec.seed);
        let embedding = init_uniform(&mut rng, &[spec.embed_dim, spec.vocab_size], spec.embed_dim);
        let body = Stack::init(&spec.body_layers(), &mut rng);
        let step_flops = stack_flops(&[spec.embedding_layer()]) * spec.context as u64 + stack_flops(&spec.body_layers());
        GeneratorModel {
            spec,
            embedding,
            body,
            step_flops,
        }
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn step_flops(&self) -> u64 {
        self.step_flops
    }

    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    pub fn body(&self) -> &Stack {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut Stack {
        &mut self.body
    }

    /// The `k` most recent tokens of `history`, left-padded with PAD.
    pub fn window(&self, history: &[usize]) -> Vec<usize> {
        let k = self.spec.context;
        let mut w = vec![self.spec.pad_id; k.saturating_sub(history.len())];
        w.extend_from_slice(&history[history.len().saturating_sub(k)..]);
        w
    }

    fn embed(&self, window: &[usize]) -> Result<Tensor> {
        let v = self.spec.vocab_size;
        let e = self.embedding.data();
        let mut x = Vec::with_capacity(window.len() * self.spec.embed_dim);
        for &t in window {
            if t >= v {
                return Err(Error::Domain(format!("token {t} is outside the vocabulary of {v}")));
            }
            x.extend((0..self.spec.embed_dim).map(|r| e[r * v + t]));
        }
        Tensor::vector(x)
    }

    /// Next-token distribution given the full token history.
    pub fn next_distribution(&self, history: &[usize]) -> Result<Tensor> {
        let x = self.embed(&self.window(history))?;
        Ok(self.body.forward(&x)?.output)
    }

    /// Greedy choice: the most probable non-PAD token, lowest id on ties.
    pub fn pick(&self, probs: &[f64]) -> usize {
        let mut best = usize::MAX;
        for (i, &p) in probs.iter().enumerate() {
            if i != self.spec.pad_id && (best == usize::MAX || p > probs[best]) {
                best = i;
            }
        }
        best
    }

    /// Greedy decoding from `prompt` until EOS or `max_len` steps.
    pub fn generate(&self, prompt: &[usize], max_len: usize) -> Result<Inference<Generation>> {
        Ok(self.run(prompt, max_len, None)?.into_inference())
    }

    pub fn run(&self, prompt: &[usize], max_len: usize, ceiling: Option<u64>) -> Result<Run<Generation>> {
        if max_len == 0 {
            return Err(Error::Domain("generation needs at least one step (L >= 1)".into()));
        }
        if let Some(&bad) = prompt.iter().find(|&&t| t >= self.spec.vocab_size) {
            return Err(Error::Domain(format!(
                "prompt token {bad} is outside the vocabulary of {}",
                self.spec.vocab_size
            )));
        }
        let mut meter = Meter::new(ceiling);
        let mut history = prompt.to_vec();
        let mut tokens = Vec::new();
        let mut eos_probs = Vec::new();
        for step in 0..max_len {
            if !meter.admit(self.step_flops) {
                break;
            }
            let x = self.embed(&self.window(&history))?;
            let out = self.body.forward(&x)?;
            debug_assert_eq!(out.flops, self.step_flops);
            meter.charge(Stage::Step(step), out.flops);
            let probs = out.output.data();
            eos_probs.push(probs[self.spec.eos_id]);
            let next = self.pick(probs);
            tokens.push(next);
            history.push(next);
            if next == self.spec.eos_id {
                break;
            }
        }
        let halted = meter.halted();
        let flops = meter.used();
        let length = tokens.len();
        Ok(Run {
            output: Some(Generation { tokens: tokens.clone() }),
            trace: InferenceTrace {
                checkpoints: meter.into_checkpoints(),
                detail: TraceDetail::Generation {
                    tokens,
                    eos_probs,
                    length,
                    max_len,
                },
            },
            flops,
            halted,
        })
    }

    pub fn leaves(&self, tape: &mut GradTape) -> GeneratorLeaves {
        GeneratorLeaves {
            embedding: tape.leaf(self.embedding.clone()),
            body: self.body.leaves(tape),
        }
    }

    /// Records one decoding step over a context window; returns the id of the
    /// next-token distribution.
    pub fn record_step(&self, tape: &mut GradTape, leaves: &GeneratorLeaves, window: &[Slot]) -> Result<ValueId> {
        if window.len() != self.spec.context {
            return Err(Error::dim("generator window", self.spec.context, window.len()));
        }
        let v = self.spec.vocab_size;
        let mut parts = Vec::with_capacity(window.len());
        for slot in window {
            let part = match *slot {
                Slot::Token(t) => {
                    if t >= v {
                        return Err(Error::Domain(format!("token {t} is outside the vocabulary of {v}")));
                    }
                    tape.gather(leaves.embedding, (0..self.spec.embed_dim).map(|r| r * v + t).collect())?
                }
                Slot::OneHot(id) => tape.dense(leaves.embedding, id, None)?,
            };
            parts.push(part);
        }
        let x = tape.concat(parts)?;
        Ok(self.body.apply(tape, x, &leaves.body)?.0)
    }

    /// Embedding table first, then the body parameters.
    pub fn params(&self) -> Vec<&Tensor> {
        std::iter::once(&self.embedding).chain(self.body.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        std::iter::once(&mut self.embedding).chain(self.body.params_mut()).collect()
    }
}
