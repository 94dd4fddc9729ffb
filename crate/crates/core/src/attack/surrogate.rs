use crate::error::{Error, Result};
use crate::models::{DynModel, GeneratorModel, Sample, Slot, Thresholds};
use crate::tensor::{GradTape, Tensor};

/// A differentiable proxy whose decrease should raise inference cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub loss: f64,
    /// Gradient w.r.t. the input vector, or for prompts an `n x vocab` matrix
    /// w.r.t. the one-hot encoding of each prompt position.
    pub grad: Tensor,
}

/// Per behavior:
///
/// * early exit: sum over exits of the max softmax probability;
/// * generator: sum of the EOS probability over the decoding steps the
///   model currently takes, generated tokens held fixed;
/// * detector: `-Σ sigmoid(z_i - logit(conf_thresh))` over confidence logits;
/// * gated: `-s`, the gate score.
pub fn surrogate_loss(model: &DynModel, input: &Sample, th: &Thresholds) -> Result<Surrogate> {
    if let DynModel::Generator(g) = model {
        return generator_surrogate(g, input.as_tokens()?, th);
    }
    let x = input.as_vector()?;
    let mut tape = GradTape::new();
    let xid = tape.leaf(x.clone());
    let loss = match model {
        DynModel::EarlyExit(m) => {
            let rec = m.record(&mut tape, xid)?;
            let maxes = rec.probs.iter().map(|&p| tape.max(p)).collect::<Result<Vec<_>>>()?;
            tape.add_all(&maxes)?
        }
        DynModel::Detector(m) => {
            let c = th.conf_thresh;
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::Domain(format!("confidence threshold {c} must lie in (0, 1)")));
            }
            let (_, pre, _) = m.record(&mut tape, xid)?;
            let z = tape.gather(pre, m.confidence_channels())?;
            let shifted = tape.add_const(z, -(c / (1.0 - c)).ln())?;
            let s = tape.sigmoid(shifted)?;
            let total = tape.sum(s)?;
            tape.scale(total, -1.0)?
        }
        DynModel::Gated(m) => {
            let (s, _) = m.record_gate(&mut tape, xid)?;
            tape.scale(s, -1.0)?
        }
        DynModel::Generator(_) => unreachable!(),
    };
    let mut grads = tape.reverse_grad(loss)?;
    let grad = grads.take(xid).unwrap_or_else(|| Tensor::zeros(x.shape()));
    Ok(Surrogate {
        loss: tape.scalar(loss),
        grad,
    })
}

fn generator_surrogate(m: &GeneratorModel, prompt: &[usize], th: &Thresholds) -> Result<Surrogate> {
    if prompt.is_empty() {
        return Err(Error::Domain("the surrogate needs a non-empty prompt".into()));
    }
    let cap = th.max_len.unwrap_or(m.spec().max_len);
    let generated = m.generate(prompt, cap)?.output.tokens;
    let v = m.spec().vocab_size;
    let mut onehot = vec![0.0; prompt.len() * v];
    for (i, &t) in prompt.iter().enumerate() {
        onehot[i * v + t] = 1.0;
    }
    relaxed_generator_surrogate(m, &Tensor::new(vec![prompt.len(), v], onehot)?, &generated)
}

/// Generator surrogate with the prompt given as an `n x vocab` matrix of
/// (possibly non one-hot) rows and the continuation held at `generated`.
/// Only the last `context` rows can influence any step.
pub fn relaxed_generator_surrogate(m: &GeneratorModel, relaxed: &Tensor, generated: &[usize]) -> Result<Surrogate> {
    let v = m.spec().vocab_size;
    let k = m.spec().context;
    if relaxed.shape().len() != 2 || relaxed.shape()[1] != v || relaxed.shape()[0] == 0 {
        return Err(Error::dim("relaxed prompt", format!("[n > 0, {v}]"), format!("{:?}", relaxed.shape())));
    }
    let n = relaxed.shape()[0];
    let mut tape = GradTape::new();
    let leaves = m.leaves(&mut tape);
    let visible = n.saturating_sub(k);
    let rows: Vec<Option<_>> = (0..n)
        .map(|i| {
            (i >= visible)
                .then(|| Tensor::vector(relaxed.data()[i * v..(i + 1) * v].to_vec()).map(|r| tape.leaf(r)))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let mut terms = Vec::with_capacity(generated.len());
    for step in 0..generated.len() {
        let end = n + step;
        let window: Vec<Slot> = (end as isize - k as isize..end as isize)
            .map(|pos| match pos {
                p if p < 0 => Slot::Token(m.spec().pad_id),
                p if (p as usize) < n => Slot::OneHot(rows[p as usize].expect("visible row")),
                p => Slot::Token(generated[p as usize - n]),
            })
            .collect();
        let probs = m.record_step(&mut tape, &leaves, &window)?;
        terms.push(tape.select(probs, m.spec().eos_id)?);
    }
    let loss = tape.add_all(&terms)?;
    let mut grads = tape.reverse_grad(loss)?;
    let mut grad = vec![0.0; n * v];
    for (i, row) in rows.iter().enumerate() {
        if let Some(g) = row.and_then(|id| grads.take(id)) {
            grad[i * v..(i + 1) * v].copy_from_slice(g.data());
        }
    }
    Ok(Surrogate {
        loss: tape.scalar(loss),
        grad: Tensor::new(vec![n, v], grad)?,
    })
}
