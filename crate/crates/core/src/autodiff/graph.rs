use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    /// Trainable leaf backed by `params[offset..offset + len]`.
    Param { offset: usize },
    MatMul(NodeId, NodeId),
    /// `[B×m] + [1×m]`, bias broadcast over rows.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[B×m] ∘ [1×m]`, vector broadcast over rows.
    MulRow(NodeId, NodeId),
    /// `[B×m] ∘ [B×1]`, column broadcast over columns.
    MulCol(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    SoftmaxRows(NodeId),
    Column(NodeId, usize),
    Scale(NodeId, f64),
    Mse(NodeId, Vec<f64>),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param { .. } => vec![],
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::SoftmaxRows(a)
            | Op::Column(a, _)
            | Op::Scale(a, _)
            | Op::Mse(a, _) => vec![*a],
            Op::Concat(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so every parent
/// index is smaller than its child's and a single reverse sweep suffices.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_len: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    /// Empty tape whose gradients are reported over `param_len` parameters.
    pub fn new(param_len: usize) -> Self {
        Self {
            nodes: Vec::new(),
            param_len,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_len(&self) -> usize {
        self.param_len
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Parent indices of a node, for inspecting the recorded structure.
    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Records a trainable leaf holding `params[offset..]` reshaped to `rows × cols`.
    pub fn param(&mut self, params: &[f64], offset: usize, rows: usize, cols: usize) -> NodeId {
        let end = offset + rows * cols;
        assert!(end <= self.param_len, "parameter slice out of range");
        let value = Tensor::matrix(rows, cols, params[offset..end].to_vec());
        self.push(Op::Param { offset }, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.rows(), 1, "add_row bias must be a row vector");
        assert_eq!(xv.cols(), bv.cols(), "add_row width");
        let m = xv.cols();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let v = Tensor::matrix(xv.rows(), m, out);
        self.push(Op::AddRow(x, bias), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert!(self.value(a).same_shape(self.value(b)), "add shape");
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert!(self.value(a).same_shape(self.value(b)), "sub shape");
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert!(self.value(a).same_shape(self.value(b)), "mul shape");
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn mul_row(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let (xv, vv) = (self.value(x), self.value(v));
        assert_eq!(vv.rows(), 1, "mul_row operand must be a row vector");
        assert_eq!(xv.cols(), vv.cols(), "mul_row width");
        let m = xv.cols();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, s) in row.iter_mut().zip(vv.data()) {
                *o *= s;
            }
        }
        let value = Tensor::matrix(xv.rows(), m, out);
        self.push(Op::MulRow(x, v), value)
    }

    pub fn mul_col(&mut self, x: NodeId, c: NodeId) -> NodeId {
        let (xv, cv) = (self.value(x), self.value(c));
        assert_eq!(cv.cols(), 1, "mul_col operand must be a column vector");
        assert_eq!(xv.rows(), cv.rows(), "mul_col height");
        let m = xv.cols();
        let mut out = xv.data().to_vec();
        for (row, s) in out.chunks_mut(m).zip(cv.data()) {
            for o in row.iter_mut() {
                *o *= s;
            }
        }
        let value = Tensor::matrix(xv.rows(), m, out);
        self.push(Op::MulCol(x, c), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    /// Column-wise concatenation of equal-height matrices.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).rows(), rows, "concat height");
                self.value(p).cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..rows {
                out[i * total + col..i * total + col + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            col += w;
        }
        let v = Tensor::matrix(rows, total, out);
        self.push(Op::Concat(parts.to_vec()), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let m = av.cols();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(m) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let v = Tensor::matrix(av.rows(), m, out);
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn column(&mut self, a: NodeId, j: usize) -> NodeId {
        let av = self.value(a);
        let m = av.cols();
        assert!(j < m, "column index out of range");
        let v = Tensor::matrix(av.rows(), 1, av.data().iter().skip(j).step_by(m).copied().collect());
        self.push(Op::Column(a, j), v)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v)
    }

    /// Mean squared error of a `[B×1]` prediction column against fixed labels.
    pub fn mse(&mut self, predictions: NodeId, labels: &[f64]) -> Result<NodeId> {
        let pv = self.value(predictions);
        if pv.cols() != 1 {
            return Err(Error::Dimension {
                axis: "prediction width",
                expected: 1,
                actual: pv.cols(),
            });
        }
        if pv.rows() != labels.len() {
            return Err(Error::Argument(format!(
                "{} predictions but {} labels",
                pv.rows(),
                labels.len()
            )));
        }
        let n = labels.len() as f64;
        let loss = pv
            .data()
            .iter()
            .zip(labels)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / n;
        Ok(self.push(Op::Mse(predictions, labels.to_vec()), Tensor::scalar(loss)))
    }

    /// Gradient of the scalar node `loss` with respect to every parameter slot.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<f64>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar node, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = vec![0.0; self.param_len];

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |id: NodeId, t: Tensor| match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (o, v) in out[*offset..*offset + g.len()].iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, g.matmul_t(bv));
                    acc(*b, av.t_matmul(&g));
                }
                Op::AddRow(x, b) => {
                    acc(*b, g.column_sums());
                    acc(*x, g);
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, g.zip(bv, |d, y| d * y));
                    acc(*b, g.zip(av, |d, x| d * x));
                }
                Op::MulRow(x, v) => {
                    let (xv, vv) = (self.value(*x), self.value(*v));
                    let m = xv.cols();
                    let mut dx = g.data().to_vec();
                    let mut dv = vec![0.0; m];
                    for (i, row) in dx.chunks_mut(m).enumerate() {
                        for j in 0..m {
                            dv[j] += row[j] * xv.data()[i * m + j];
                            row[j] *= vv.data()[j];
                        }
                    }
                    acc(*x, Tensor::matrix(xv.rows(), m, dx));
                    acc(*v, Tensor::matrix(1, m, dv));
                }
                Op::MulCol(x, c) => {
                    let (xv, cv) = (self.value(*x), self.value(*c));
                    let m = xv.cols();
                    let mut dx = g.data().to_vec();
                    let mut dc = vec![0.0; xv.rows()];
                    for (i, row) in dx.chunks_mut(m).enumerate() {
                        let s = cv.data()[i];
                        for j in 0..m {
                            dc[i] += row[j] * xv.data()[i * m + j];
                            row[j] *= s;
                        }
                    }
                    acc(*x, Tensor::matrix(xv.rows(), m, dx));
                    acc(*c, Tensor::matrix(cv.rows(), 1, dc));
                }
                Op::Sigmoid(a) => acc(*a, g.zip(&node.value, |d, s| d * s * (1.0 - s))),
                Op::Tanh(a) => acc(*a, g.zip(&node.value, |d, t| d * (1.0 - t * t))),
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut part = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            part.extend_from_slice(&g.data()[i * total + col..i * total + col + w]);
                        }
                        acc(*p, Tensor::matrix(rows, w, part));
                        col += w;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let s = &node.value;
                    let m = s.cols();
                    let mut da = vec![0.0; s.len()];
                    for i in 0..s.rows() {
                        let srow = &s.data()[i * m..(i + 1) * m];
                        let grow = &g.data()[i * m..(i + 1) * m];
                        let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..m {
                            da[i * m + j] = srow[j] * (grow[j] - dot);
                        }
                    }
                    acc(*a, Tensor::matrix(s.rows(), m, da));
                }
                Op::Column(a, j) => {
                    let av = self.value(*a);
                    let m = av.cols();
                    let mut da = vec![0.0; av.len()];
                    for (i, d) in g.data().iter().enumerate() {
                        da[i * m + j] = *d;
                    }
                    acc(*a, Tensor::matrix(av.rows(), m, da));
                }
                Op::Scale(a, f) => acc(*a, g.map(|v| v * f)),
                Op::Mse(p, labels) => {
                    let pv = self.value(*p);
                    let n = labels.len() as f64;
                    let d = g.data()[0];
                    let dp = pv
                        .data()
                        .iter()
                        .zip(labels)
                        .map(|(p, y)| d * 2.0 * (p - y) / n)
                        .collect();
                    acc(*p, Tensor::matrix(pv.rows(), 1, dp));
                }
            }
        }
        Ok(out)
    }
}
