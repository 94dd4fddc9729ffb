//! Wengert tape over whole tensors.
//!
//! Values are appended in execution order; every non-leaf node remembers the
//! ids of its operands. `reverse_grad` walks the tape backwards once and
//! returns the adjoint of every leaf.

use std::collections::BTreeMap;

use super::ops::{matvec, relu_values, sigmoid_values, softmax_values};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Dense { w: ValueId, x: ValueId, b: Option<ValueId> },
    Relu(ValueId),
    Softmax(ValueId),
    Sigmoid(ValueId),
    Add(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, f64),
    AddConst(ValueId, f64),
    Sum(ValueId),
    Max(ValueId),
    Gather(ValueId, Vec<usize>),
    Concat(Vec<ValueId>),
    LnFloor(ValueId, f64),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to each leaf of the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    by_leaf: BTreeMap<ValueId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.by_leaf.get(&id)
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor> {
        self.by_leaf.remove(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ValueId, &Tensor)> {
        self.by_leaf.iter()
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: ValueId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf, value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        self.nodes.push(Node { op, value });
        ValueId(self.nodes.len() - 1)
    }

    fn check(&self, id: ValueId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Usage(format!("value {} is not on this tape", id.0)))
        }
    }

    fn compute(&self, op: &Op) -> Result<Tensor> {
        let val = |id: &ValueId| &self.nodes[id.0].value;
        let vector = |data: Vec<f64>, what: &str| {
            let n = data.len();
            Tensor::from_kernel(vec![n], data, what)
        };
        match op {
            Op::Leaf => unreachable!("leaves are not recomputed"),
            Op::Dense { w, x, b } => {
                let (w, x) = (val(w), val(x));
                if w.shape().len() != 2 || w.shape()[1] != x.len() {
                    return Err(Error::dim("tape dense", format!("[_, {}]", x.len()), format!("{:?}", w.shape())));
                }
                let out_dim = w.shape()[0];
                let bias = match b {
                    Some(b) if val(b).len() != out_dim => {
                        return Err(Error::dim("tape dense bias", out_dim, val(b).len()));
                    }
                    Some(b) => Some(val(b).data()),
                    None => None,
                };
                vector(matvec(w.data(), bias, x.data(), out_dim), "tape dense")
            }
            Op::Relu(a) => vector(relu_values(val(a).data()), "tape relu"),
            Op::Softmax(a) => vector(softmax_values(val(a).data()), "tape softmax"),
            Op::Sigmoid(a) => vector(sigmoid_values(val(a).data()), "tape sigmoid"),
            Op::Add(a, b) | Op::Mul(a, b) => {
                let (a, b) = (val(a), val(b));
                if a.shape() != b.shape() {
                    return Err(Error::dim("tape elementwise", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
                }
                let data = a.data().iter().zip(b.data());
                let data = if matches!(op, Op::Add(..)) {
                    data.map(|(x, y)| x + y).collect()
                } else {
                    data.map(|(x, y)| x * y).collect()
                };
                Tensor::from_kernel(a.shape().to_vec(), data, "tape elementwise")
            }
            Op::Scale(a, c) => {
                let a = val(a);
                Tensor::from_kernel(a.shape().to_vec(), a.data().iter().map(|x| x * c).collect(), "tape scale")
            }
            Op::AddConst(a, c) => {
                let a = val(a);
                Tensor::from_kernel(a.shape().to_vec(), a.data().iter().map(|x| x + c).collect(), "tape add")
            }
            Op::Sum(a) => vector(vec![val(a).data().iter().sum()], "tape sum"),
            Op::Max(a) => {
                let d = val(a).data();
                vector(vec![d[super::argmax(d)]], "tape max")
            }
            Op::Gather(a, idx) => {
                let d = val(a).data();
                if let Some(&bad) = idx.iter().find(|&&i| i >= d.len()) {
                    return Err(Error::Domain(format!("gather index {bad} out of range {}", d.len())));
                }
                if idx.is_empty() {
                    return Err(Error::Domain("gather of no indices".into()));
                }
                vector(idx.iter().map(|&i| d[i]).collect(), "tape gather")
            }
            Op::Concat(parts) => {
                if parts.is_empty() {
                    return Err(Error::Domain("concat of nothing".into()));
                }
                vector(parts.iter().flat_map(|p| val(p).data().iter().copied()).collect(), "tape concat")
            }
            Op::LnFloor(a, floor) => vector(val(a).data().iter().map(|x| (x + floor).ln()).collect(), "tape ln"),
        }
    }

    fn record(&mut self, op: Op, operands: &[ValueId]) -> Result<ValueId> {
        for &id in operands {
            self.check(id)?;
        }
        let value = self.compute(&op)?;
        Ok(self.push(op, value))
    }

    /// `w·x (+ b)` with `w` shaped `out x in`.
    pub fn dense(&mut self, w: ValueId, x: ValueId, b: Option<ValueId>) -> Result<ValueId> {
        let mut ops = vec![w, x];
        ops.extend(b);
        self.record(Op::Dense { w, x, b }, &ops)
    }

    pub fn relu(&mut self, a: ValueId) -> Result<ValueId> {
        self.record(Op::Relu(a), &[a])
    }

    pub fn softmax(&mut self, a: ValueId) -> Result<ValueId> {
        self.record(Op::Softmax(a), &[a])
    }

    pub fn sigmoid(&mut self, a: ValueId) -> Result<ValueId> {
        self.record(Op::Sigmoid(a), &[a])
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.record(Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.record(Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> Result<ValueId> {
        self.record(Op::Scale(a, c), &[a])
    }

    pub fn add_const(&mut self, a: ValueId, c: f64) -> Result<ValueId> {
        self.record(Op::AddConst(a, c), &[a])
    }

    pub fn sum(&mut self, a: ValueId) -> Result<ValueId> {
        self.record(Op::Sum(a), &[a])
    }

    /// Largest element; the gradient flows to the lowest maximizing index.
    pub fn max(&mut self, a: ValueId) -> Result<ValueId> {
        self.record(Op::Max(a), &[a])
    }

    pub fn select(&mut self, a: ValueId, index: usize) -> Result<ValueId> {
        self.gather(a, vec![index])
    }

    pub fn gather(&mut self, a: ValueId, indices: Vec<usize>) -> Result<ValueId> {
        self.record(Op::Gather(a, indices), &[a])
    }

    pub fn concat(&mut self, parts: Vec<ValueId>) -> Result<ValueId> {
        let operands = parts.clone();
        self.record(Op::Concat(parts), &operands)
    }

    /// `ln(a + floor)` elementwise.
    pub fn ln_floor(&mut self, a: ValueId, floor: f64) -> Result<ValueId> {
        self.record(Op::LnFloor(a, floor), &[a])
    }

    /// Sums a list of scalars.
    pub fn add_all(&mut self, terms: &[ValueId]) -> Result<ValueId> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Usage("add_all of no terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut fresh = GradTape { nodes: Vec::with_capacity(self.nodes.len()) };
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => fresh.compute(op)?,
            };
            fresh.nodes.push(Node { op: node.op.clone(), value });
        }
        Ok(fresh.nodes.into_iter().map(|n| n.value).collect())
    }

    /// Gradients of the scalar `output` with respect to every leaf.
    pub fn reverse_grad(&self, output: ValueId) -> Result<Gradients> {
        self.check(output)?;
        if !self.value(output).is_scalar() {
            return Err(Error::Usage(format!(
                "reverse_grad needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], id: ValueId, len: usize) -> &mut Vec<f64> {
            adj[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |id: ValueId| self.nodes[id.0].value.data();
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                }
                Op::Dense { w, x, b } => {
                    let (wv, xv) = (val(*w), val(*x));
                    let in_dim = xv.len();
                    {
                        let gw = acc(&mut adj, *w, wv.len());
                        for (i, gi) in g.iter().enumerate() {
                            for (j, xj) in xv.iter().enumerate() {
                                gw[i * in_dim + j] += gi * xj;
                            }
                        }
                    }
                    {
                        let gx = acc(&mut adj, *x, in_dim);
                        for (i, gi) in g.iter().enumerate() {
                            let row = &wv[i * in_dim..(i + 1) * in_dim];
                            for (gxj, wij) in gx.iter_mut().zip(row) {
                                *gxj += wij * gi;
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = acc(&mut adj, *b, g.len());
                        for (d, gi) in gb.iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                }
                Op::Relu(a) => {
                    let av = val(*a);
                    let ga = acc(&mut adj, *a, av.len());
                    for ((d, gi), x) in ga.iter_mut().zip(&g).zip(av) {
                        if *x > 0.0 {
                            *d += gi;
                        }
                    }
                }
                Op::Softmax(a) => {
                    let p = node.value.data();
                    let dot: f64 = g.iter().zip(p).map(|(gi, pi)| gi * pi).sum();
                    let ga = acc(&mut adj, *a, p.len());
                    for ((d, gi), pi) in ga.iter_mut().zip(&g).zip(p) {
                        *d += pi * (gi - dot);
                    }
                }
                Op::Sigmoid(a) => {
                    let s = node.value.data();
                    let ga = acc(&mut adj, *a, s.len());
                    for ((d, gi), si) in ga.iter_mut().zip(&g).zip(s) {
                        *d += gi * si * (1.0 - si);
                    }
                }
                Op::Add(a, b) => {
                    for id in [*a, *b] {
                        let ga = acc(&mut adj, id, g.len());
                        for (d, gi) in ga.iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                    let ga = acc(&mut adj, *a, g.len());
                    for ((d, gi), y) in ga.iter_mut().zip(&g).zip(&bv) {
                        *d += gi * y;
                    }
                    let gb = acc(&mut adj, *b, g.len());
                    for ((d, gi), x) in gb.iter_mut().zip(&g).zip(&av) {
                        *d += gi * x;
                    }
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for (d, gi) in ga.iter_mut().zip(&g) {
                        *d += gi * c;
                    }
                }
                Op::AddConst(a, _) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for (d, gi) in ga.iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::Sum(a) => {
                    let n = val(*a).len();
                    let ga = acc(&mut adj, *a, n);
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Max(a) => {
                    let av = val(*a);
                    let k = super::argmax(av);
                    let ga = acc(&mut adj, *a, av.len());
                    ga[k] += g[0];
                }
                Op::Gather(a, indices) => {
                    let n = val(*a).len();
                    let ga = acc(&mut adj, *a, n);
                    for (&i, gi) in indices.iter().zip(&g) {
                        ga[i] += gi;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = val(*p).len();
                        let gp = acc(&mut adj, *p, n);
                        for (d, gi) in gp.iter_mut().zip(&g[offset..offset + n]) {
                            *d += gi;
                        }
                        offset += n;
                    }
                }
                Op::LnFloor(a, floor) => {
                    let av = val(*a);
                    let ga = acc(&mut adj, *a, av.len());
                    for ((d, gi), x) in ga.iter_mut().zip(&g).zip(av) {
                        *d += gi / (x + floor);
                    }
                }
            }
        }

        let mut by_leaf = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if matches!(node.op, Op::Leaf) {
                let data = adj[idx].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                by_leaf.insert(
                    ValueId(idx),
                    Tensor::from_kernel(node.value.shape().to_vec(), data, "gradient")?,
                );
            }
        }
        Ok(Gradients { by_leaf })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec()).unwrap()
    }

    #[test]
    fn linear_map_gradient() {
        let mut tape = GradTape::new();
        let w = tape.leaf(Tensor::matrix(1, 1, vec![2.0]).unwrap());
        let x = tape.leaf(v(&[3.0]));
        let y = tape.dense(w, x, None).unwrap();
        let g = tape.reverse_grad(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
        assert_eq!(g.get(w).unwrap().data(), &[3.0]);
    }

    #[test]
    fn dead_relu_has_zero_gradient() {
        let mut tape = GradTape::new();
        let x = tape.leaf(v(&[-1.0]));
        let y = tape.relu(x).unwrap();
        let g = tape.reverse_grad(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0]);

        let mut tape = GradTape::new();
        let x = tape.leaf(v(&[0.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.reverse_grad(y).unwrap().get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = GradTape::new();
        let x = tape.leaf(v(&[1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.reverse_grad(y), Err(Error::Usage(_))));
    }

    #[test]
    fn replay_is_bit_exact() {
        let mut tape = GradTape::new();
        let w = tape.leaf(Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, 0.25, 0.5, -2.0]).unwrap());
        let b = tape.leaf(v(&[0.1, -0.2]));
        let x = tape.leaf(v(&[1.5, -0.5, 0.75]));
        let h = tape.dense(w, x, Some(b)).unwrap();
        let r = tape.relu(h).unwrap();
        let s = tape.softmax(r).unwrap();
        let m = tape.max(s).unwrap();
        let l = tape.ln_floor(m, 1e-12).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, t) in replayed.iter().enumerate() {
            assert_eq!(t, tape.value(ValueId(i)));
        }
        assert!(tape.reverse_grad(l).is_ok());
    }

    #[test]
    fn shared_operands_accumulate() {
        // f(x) = x*x + x  -> f'(x) = 2x + 1
        let mut tape = GradTape::new();
        let x = tape.leaf(v(&[3.0]));
        let sq = tape.mul(x, x).unwrap();
        let f = tape.add(sq, x).unwrap();
        assert_eq!(tape.reverse_grad(f).unwrap().get(x).unwrap().data(), &[7.0]);
    }
}
