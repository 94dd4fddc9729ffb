use super::{LayerKind, LayerSpec, Tensor};
use crate::error::{Error, Result};

/// Probability floor inside the logarithm of every cross-entropy.
pub const CE_FLOOR: f64 = 1e-12;

pub(crate) fn matvec(weights: &[f64], bias: Option<&[f64]>, input: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = input.len();
    let mut out = Vec::with_capacity(out_dim);
    for i in 0..out_dim {
        let row = &weights[i * in_dim..(i + 1) * in_dim];
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        if let Some(b) = bias {
            acc += b[i];
        }
        out.push(acc);
    }
    out
}

pub(crate) fn relu_values(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub(crate) fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn sigmoid_values(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

pub(crate) fn dense_flops(in_dim: usize, out_dim: usize, has_bias: bool) -> u64 {
    2 * (in_dim as u64) * (out_dim as u64) + if has_bias { out_dim as u64 } else { 0 }
}

/// `W·x (+ b)` for a dense layer. `weights` is `out_dim x in_dim`.
pub fn dense_forward(
    layer: &LayerSpec,
    weights: &Tensor,
    bias: Option<&Tensor>,
    input: &Tensor,
) -> Result<(Tensor, u64)> {
    let ctx = format!("dense {}->{}", layer.in_dim, layer.out_dim);
    if layer.kind != LayerKind::Dense {
        return Err(Error::Usage(format!("dense_forward called with a {:?} layer", layer.kind)));
    }
    if weights.shape() != [layer.out_dim, layer.in_dim] {
        return Err(Error::dim(
            format!("{ctx} weights"),
            format!("[{}, {}]", layer.out_dim, layer.in_dim),
            format!("{:?}", weights.shape()),
        ));
    }
    if input.len() != layer.in_dim {
        return Err(Error::dim(format!("{ctx} input"), layer.in_dim, input.len()));
    }
    match (layer.has_bias, bias) {
        (true, Some(b)) if b.len() != layer.out_dim => {
            return Err(Error::dim(format!("{ctx} bias"), layer.out_dim, b.len()));
        }
        (true, None) => return Err(Error::Usage(format!("{ctx}: layer declares a bias but none given"))),
        (false, Some(_)) => return Err(Error::Usage(format!("{ctx}: bias given to a bias-free layer"))),
        _ => {}
    }
    let out = matvec(weights.data(), bias.map(Tensor::data), input.data(), layer.out_dim);
    let flops = dense_flops(layer.in_dim, layer.out_dim, layer.has_bias);
    Ok((Tensor::from_kernel(vec![layer.out_dim], out, &ctx)?, flops))
}

/// Column `token` of an embedding table stored `dim x vocab`. Costs no FLOPs.
pub fn embedding_lookup(layer: &LayerSpec, table: &Tensor, token: usize) -> Result<(Tensor, u64)> {
    if layer.kind != LayerKind::EmbeddingLookup {
        return Err(Error::Usage(format!("embedding_lookup called with a {:?} layer", layer.kind)));
    }
    if table.shape() != [layer.out_dim, layer.in_dim] {
        return Err(Error::dim(
            "embedding table",
            format!("[{}, {}]", layer.out_dim, layer.in_dim),
            format!("{:?}", table.shape()),
        ));
    }
    if token >= layer.in_dim {
        return Err(Error::Domain(format!("token {token} outside vocabulary of {}", layer.in_dim)));
    }
    let vocab = layer.in_dim;
    let col = (0..layer.out_dim).map(|i| table.data()[i * vocab + token]).collect();
    Ok((Tensor::from_kernel(vec![layer.out_dim], col, "embedding")?, 0))
}

pub fn activation_forward(kind: LayerKind, input: &Tensor) -> Result<(Tensor, u64)> {
    if !input.is_vector() {
        return Err(Error::Domain(format!("activation expects a vector, got shape {:?}", input.shape())));
    }
    let n = input.len() as u64;
    let (values, flops) = match kind {
        LayerKind::Relu => (relu_values(input.data()), n),
        LayerKind::Softmax => (softmax_values(input.data()), 4 * n - 1),
        LayerKind::Sigmoid => (sigmoid_values(input.data()), 4 * n),
        other => return Err(Error::Usage(format!("{other:?} is not an activation"))),
    };
    Ok((Tensor::from_kernel(vec![input.len()], values, "activation")?, flops))
}

/// `-ln(p[target] + η)`.
pub fn cross_entropy(probs: &Tensor, target: usize) -> Result<f64> {
    let p = probs
        .data()
        .get(target)
        .ok_or_else(|| Error::Domain(format!("target {target} out of range for {} classes", probs.len())))?;
    Ok(-(p + CE_FLOOR).ln())
}

/// `-Σ q_i ln(p_i + η)` against a target distribution `q`.
pub fn soft_cross_entropy(probs: &Tensor, target: &[f64]) -> Result<f64> {
    if target.len() != probs.len() {
        return Err(Error::dim("soft cross-entropy target", probs.len(), target.len()));
    }
    Ok(-probs
        .data()
        .iter()
        .zip(target)
        .map(|(p, q)| q * (p + CE_FLOOR).ln())
        .sum::<f64>())
}

/// `p <- p - lr·g` for each parameter tensor.
pub fn sgd_step(params: &[Tensor], grads: &[Tensor], lr: f64) -> Result<Vec<Tensor>> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Domain(format!("learning rate {lr} must be finite and non-negative")));
    }
    if params.len() != grads.len() {
        return Err(Error::dim("sgd_step parameter list", params.len(), grads.len()));
    }
    params
        .iter()
        .zip(grads)
        .enumerate()
        .map(|(i, (p, g))| {
            if p.shape() != g.shape() {
                return Err(Error::dim(
                    format!("sgd_step parameter {i}"),
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            let data = p.data().iter().zip(g.data()).map(|(p, g)| p - lr * g).collect();
            Tensor::from_kernel(p.shape().to_vec(), data, "sgd_step")
        })
        .collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec()).unwrap()
    }

    #[test]
    fn dense_flop_counts() {
        let layer = LayerSpec::dense(4, 8, true);
        let w = Tensor::zeros(&[8, 4]);
        let b = Tensor::zeros(&[8]);
        let (out, flops) = dense_forward(&layer, &w, Some(&b), &v(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(flops, 72);
        assert!(out.data().iter().all(|&x| x == 0.0));

        let layer = LayerSpec::dense(1, 1, false);
        let w = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let (out, flops) = dense_forward(&layer, &w, None, &v(&[3.0])).unwrap();
        assert_eq!(out.data(), &[6.0]);
        assert_eq!(flops, 2);
    }

    #[test]
    fn dense_shape_errors_name_the_layer() {
        let layer = LayerSpec::dense(3, 2, false);
        let w = Tensor::zeros(&[2, 3]);
        let err = dense_forward(&layer, &w, None, &v(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(&err, Error::Dimension { context, .. } if context.contains("dense 3->2")));
        let bad_w = Tensor::zeros(&[3, 2]);
        assert!(dense_forward(&layer, &bad_w, None, &v(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn activations() {
        let (p, flops) = activation_forward(LayerKind::Softmax, &v(&[0.0, 0.0])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        assert_eq!(flops, 7);
        let (r, flops) = activation_forward(LayerKind::Relu, &v(&[-1.0, 2.0])).unwrap();
        assert_eq!(r.data(), &[0.0, 2.0]);
        assert_eq!(flops, 2);
        let (p, _) = activation_forward(LayerKind::Softmax, &v(&[1f64.ln(), 3f64.ln()])).unwrap();
        assert!((p.data()[0] - 0.25).abs() < 1e-15);
        assert!((p.data()[1] - 0.75).abs() < 1e-15);
        let (s, flops) = activation_forward(LayerKind::Sigmoid, &v(&[0.0])).unwrap();
        assert_eq!(s.data(), &[0.5]);
        assert_eq!(flops, 4);
    }

    #[test]
    fn empty_activation_input_is_a_domain_error() {
        assert!(matches!(Tensor::vector(vec![]), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let (p, _) = activation_forward(LayerKind::Softmax, &v(&[1e6, 0.0, -1e6])).unwrap();
        assert_eq!(p.data()[0], 1.0);
        assert!(p.data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn cross_entropy_values() {
        assert!(cross_entropy(&v(&[1.0, 0.0]), 0).unwrap().abs() < 1e-11);
        assert!((cross_entropy(&v(&[0.5, 0.5]), 1).unwrap() - 2f64.ln()).abs() < 1e-11);
        assert!((cross_entropy(&v(&[0.25, 0.75]), 0).unwrap() - 4f64.ln()).abs() < 1e-11);
        assert!(cross_entropy(&v(&[0.0, 1.0]), 0).unwrap().is_finite());
        assert!(matches!(cross_entropy(&v(&[0.5, 0.5]), 2), Err(Error::Domain(_))));
    }

    #[test]
    fn sgd_arithmetic() {
        let p = vec![v(&[1.0])];
        assert_eq!(sgd_step(&p, &[v(&[2.0])], 0.5).unwrap()[0].data(), &[0.0]);
        assert_eq!(sgd_step(&p, &[v(&[0.0])], 0.5).unwrap(), p);
        let twice = sgd_step(&sgd_step(&p, &[v(&[0.5])], 1.0).unwrap(), &[v(&[0.5])], 1.0).unwrap();
        let once = sgd_step(&p, &[v(&[1.0])], 1.0).unwrap();
        assert_eq!(twice, once);
        assert!(matches!(sgd_step(&p, &[v(&[1.0, 2.0])], 0.1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }
}
