use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{activation_forward, dense_forward, GradTape, LayerKind, LayerSpec, Tensor, ValueId};

/// A layer together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Uniform `[-1/√fan_in, +1/√fan_in]` tensor.
pub(crate) fn init_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite uniform draws")
}

impl Layer {
    pub fn init(spec: LayerSpec, rng: &mut Rng) -> Self {
        match spec.kind {
            LayerKind::Dense => Layer {
                spec,
                weight: Some(init_uniform(rng, &[spec.out_dim, spec.in_dim], spec.in_dim)),
                bias: spec.has_bias.then(|| init_uniform(rng, &[spec.out_dim], spec.in_dim)),
            },
            LayerKind::EmbeddingLookup => Layer {
                spec,
                weight: Some(init_uniform(rng, &[spec.out_dim, spec.in_dim], spec.out_dim)),
                bias: None,
            },
            _ => Layer {
                spec,
                weight: None,
                bias: None,
            },
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, u64)> {
        match self.spec.kind {
            LayerKind::Dense => dense_forward(
                &self.spec,
                self.weight.as_ref().expect("dense layer has weights"),
                self.bias.as_ref(),
                x,
            ),
            LayerKind::EmbeddingLookup => Err(Error::Usage("embedding lookups take tokens, not vectors".into())),
            kind => {
                if x.len() != self.spec.in_dim {
                    return Err(Error::dim(format!("{kind:?} layer"), self.spec.in_dim, x.len()));
                }
                activation_forward(kind, x)
            }
        }
    }
}

/// Feed-forward chain of vector layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    layers: Vec<Layer>,
}

/// Result of running a stack: final output, the input of the last layer
/// (the logits when the stack ends in softmax/sigmoid) and the FLOPs spent.
#[derive(Debug, Clone)]
pub struct StackOutput {
    pub output: Tensor,
    pub logits: Tensor,
    pub flops: u64,
}

impl Stack {
    pub fn init(specs: &[LayerSpec], rng: &mut Rng) -> Self {
        Stack {
            layers: specs.iter().map(|&s| Layer::init(s, rng)).collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn forward(&self, x: &Tensor) -> Result<StackOutput> {
        let mut flops = 0;
        let mut logits = x.clone();
        let mut h = x.clone();
        for layer in &self.layers {
            let (next, f) = layer.forward(&h)?;
            flops += f;
            logits = h;
            h = next;
        }
        Ok(StackOutput {
            output: h,
            logits,
            flops,
        })
    }

    /// Records the stack on `tape`; returns the output id, the id of the last
    /// layer's input, and the parameter leaves in `params()` order.
    pub fn record(&self, tape: &mut GradTape, x: ValueId) -> Result<(ValueId, ValueId, Vec<ValueId>)> {
        let leaves = self.leaves(tape);
        let (out, pre) = self.apply(tape, x, &leaves)?;
        Ok((out, pre, leaves))
    }

    /// Puts every parameter on `tape` as a leaf, in `params()` order.
    pub fn leaves(&self, tape: &mut GradTape) -> Vec<ValueId> {
        self.params().into_iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Records the forward pass using parameter leaves from [`Self::leaves`].
    pub fn apply(&self, tape: &mut GradTape, x: ValueId, leaves: &[ValueId]) -> Result<(ValueId, ValueId)> {
        let mut h = x;
        let mut pre = x;
        let mut next_leaf = leaves.iter().copied();
        let mut take = || {
            next_leaf
                .next()
                .ok_or_else(|| Error::Usage("fewer parameter leaves than stack parameters".into()))
        };
        for layer in &self.layers {
            let next = match layer.spec.kind {
                LayerKind::Dense => {
                    let w = take()?;
                    let b = if layer.bias.is_some() { Some(take()?) } else { None };
                    tape.dense(w, h, b)?
                }
                LayerKind::Relu => tape.relu(h)?,
                LayerKind::Softmax => tape.softmax(h)?,
                LayerKind::Sigmoid => tape.sigmoid(h)?,
                LayerKind::EmbeddingLookup => {
                    return Err(Error::Usage("embedding lookups cannot be recorded in a vector stack".into()))
                }
            };
            pre = h;
            h = next;
        }
        Ok((h, pre))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
            .collect()
    }
}
