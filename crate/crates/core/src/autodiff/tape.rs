//! Tape-based reverse-mode differentiation over batched dense matrices.
//!
//! Every node holds a `rows x cols` value. Forward operations append nodes
//! in topological order, so the reverse pass is a single backwards sweep
//! over the node list. Parameter leaves copy their value out of a
//! [`ParameterStore`] and write their gradient back into it on
//! [`Tape::backward`], accumulating additively.

use super::{AutodiffError, DenseMatrix, ParamId, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    /// `x · Wᵀ` with `x: B x in`, `W: out x in`.
    Linear {
        input: NodeId,
        weight: NodeId,
    },
    /// Adds a `1 x n` row to every row of a `B x n` input.
    AddRow {
        input: NodeId,
        row: NodeId,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Per-row Euclidean norm, `B x n -> B x 1`.
    RowNorm(NodeId),
    /// `mean_b ½ x_b²` over a `B x 1` column, giving `1 x 1`.
    HalfSquareMean(NodeId),
    /// Mean softmax cross-entropy of `B x p` logits against labels.
    CrossEntropyMean {
        logits: NodeId,
        labels: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseMatrix,
}

/// Records a forward computation for later reverse traversal.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: DenseMatrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<(), AutodiffError> {
        if id.0 >= self.nodes.len() {
            return Err(AutodiffError::Contract(format!(
                "node {} does not belong to this tape",
                id.0
            )));
        }
        Ok(())
    }

    pub fn constant(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> NodeId {
        let value = store.get(id).value.clone();
        self.push(Op::Param(id), value)
    }

    pub fn linear(&mut self, input: NodeId, weight: NodeId) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        self.check(weight)?;
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        if x.cols() != w.cols() {
            return Err(AutodiffError::Shape(format!(
                "linear: input has {} features, weight expects {}",
                x.cols(),
                w.cols()
            )));
        }
        let (batch, out, inner) = (x.rows(), w.rows(), x.cols());
        let mut y = DenseMatrix::zeros(batch, out);
        for b in 0..batch {
            let xr = x.row(b);
            let yr = y.row_mut(b);
            for (o, yo) in yr.iter_mut().enumerate() {
                let wr = &w.as_slice()[o * inner..(o + 1) * inner];
                *yo = xr.iter().zip(wr).map(|(a, c)| a * c).sum();
            }
        }
        Ok(self.push(Op::Linear { input, weight }, y))
    }

    pub fn add_row(&mut self, input: NodeId, row: NodeId) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        self.check(row)?;
        let x = &self.nodes[input.0].value;
        let r = &self.nodes[row.0].value;
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(AutodiffError::Shape(format!(
                "add_row: cannot broadcast {}x{} onto {}x{}",
                r.rows(),
                r.cols(),
                x.rows(),
                x.cols()
            )));
        }
        let mut y = x.clone();
        for b in 0..y.rows() {
            for (v, a) in y.row_mut(b).iter_mut().zip(r.as_slice()) {
                *v += a;
            }
        }
        Ok(self.push(Op::AddRow { input, row }, y))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        let mut y = self.nodes[input.0].value.clone();
        y.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 });
        Ok(self.push(Op::Relu(input), y))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(), AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(AutodiffError::Shape(format!(
                "{what}: shapes {sa:?} and {sb:?} differ"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape(a, b, "add")?;
        let mut y = self.nodes[a.0].value.clone();
        y.add_assign(&self.nodes[b.0].value);
        Ok(self.push(Op::Add(a, b), y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape(a, b, "sub")?;
        let mut y = self.nodes[a.0].value.clone();
        for (v, w) in y
            .as_mut_slice()
            .iter_mut()
            .zip(self.nodes[b.0].value.as_slice())
        {
            *v -= w;
        }
        Ok(self.push(Op::Sub(a, b), y))
    }

    pub fn scale(&mut self, input: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        let mut y = self.nodes[input.0].value.clone();
        y.scale(c);
        Ok(self.push(Op::Scale(input, c), y))
    }

    pub fn row_norm(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        let x = &self.nodes[input.0].value;
        let mut y = DenseMatrix::zeros(x.rows(), 1);
        for b in 0..x.rows() {
            y.set(b, 0, super::l2_norm(x.row(b)));
        }
        Ok(self.push(Op::RowNorm(input), y))
    }

    pub fn half_square_mean(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        let x = &self.nodes[input.0].value;
        if x.cols() != 1 {
            return Err(AutodiffError::Shape(format!(
                "half_square_mean expects a column, got {}x{}",
                x.rows(),
                x.cols()
            )));
        }
        let n = x.rows() as f64;
        let v = x.as_slice().iter().map(|v| 0.5 * v * v).sum::<f64>() / n;
        Ok(self.push(Op::HalfSquareMean(input), DenseMatrix::scalar(v)))
    }

    pub fn cross_entropy_mean(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, AutodiffError> {
        self.check(logits)?;
        let z = &self.nodes[logits.0].value;
        if labels.len() != z.rows() {
            return Err(AutodiffError::Shape(format!(
                "cross_entropy: {} labels for {} rows",
                labels.len(),
                z.rows()
            )));
        }
        let mut total = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            total += softmax_cross_entropy(z.row(b), y)?;
        }
        let value = DenseMatrix::scalar(total / labels.len() as f64);
        Ok(self.push(
            Op::CrossEntropyMean {
                logits,
                labels: labels.to_vec(),
            },
            value,
        ))
    }

    /// Smallest absolute pre-activation fed into any ReLU on this tape, or
    /// `None` when the tape has no ReLU.
    pub fn min_relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(input) => Some(&self.nodes[input.0].value),
                _ => None,
            })
            .flat_map(|m| m.as_slice().iter().map(|v| v.abs()))
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            })
    }

    /// Propagates `seed · ∂output/∂(·)` back through the tape and adds the
    /// parameter gradients into `store`. `output` must be a `1 x 1` node.
    pub fn backward(
        &self,
        output: NodeId,
        seed: f64,
        store: &mut ParameterStore,
    ) -> Result<(), AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::Contract(
                "backward called on an empty tape; run a forward pass first".into(),
            ));
        }
        self.check(output)?;
        if self.nodes[output.0].value.shape() != (1, 1) {
            return Err(AutodiffError::Contract(format!(
                "backward expects a scalar output, got {:?}",
                self.nodes[output.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(DenseMatrix::scalar(seed));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => {
                    let p = store.get_mut(*pid);
                    if p.grad.shape() != g.shape() {
                        return Err(AutodiffError::Shape(format!(
                            "gradient for `{}` has shape {:?}, parameter is {:?}",
                            p.name,
                            g.shape(),
                            p.grad.shape()
                        )));
                    }
                    p.grad.add_assign(&g);
                }
                Op::Linear { input, weight } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[weight.0].value;
                    let inner = x.cols();
                    let mut gx = DenseMatrix::zeros(x.rows(), inner);
                    let mut gw = DenseMatrix::zeros(w.rows(), inner);
                    for b in 0..x.rows() {
                        let gr = g.row(b);
                        let xr = x.row(b);
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let wr = &w.as_slice()[o * inner..(o + 1) * inner];
                            for (gxi, wi) in gx.row_mut(b).iter_mut().zip(wr) {
                                *gxi += go * wi;
                            }
                            for (gwi, xi) in gw.row_mut(o).iter_mut().zip(xr) {
                                *gwi += go * xi;
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *weight, gw);
                }
                Op::AddRow { input, row } => {
                    let mut gr = DenseMatrix::zeros(1, g.cols());
                    for b in 0..g.rows() {
                        for (a, v) in gr.as_mut_slice().iter_mut().zip(g.row(b)) {
                            *a += v;
                        }
                    }
                    accumulate(&mut grads, *input, g);
                    accumulate(&mut grads, *row, gr);
                }
                Op::Relu(input) => {
                    let x = &self.nodes[input.0].value;
                    let mut gx = g;
                    for (gv, xv) in gx.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        // subgradient at 0 is 0
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *input, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    neg.scale(-1.0);
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Scale(input, c) => {
                    let mut gx = g;
                    gx.scale(*c);
                    accumulate(&mut grads, *input, gx);
                }
                Op::RowNorm(input) => {
                    let x = &self.nodes[input.0].value;
                    let norms = &node.value;
                    let mut gx = DenseMatrix::zeros(x.rows(), x.cols());
                    for b in 0..x.rows() {
                        let n = norms.get(b, 0);
                        if n == 0.0 {
                            continue;
                        }
                        let coef = g.get(b, 0) / n;
                        for (gv, xv) in gx.row_mut(b).iter_mut().zip(x.row(b)) {
                            *gv = coef * xv;
                        }
                    }
                    accumulate(&mut grads, *input, gx);
                }
                Op::HalfSquareMean(input) => {
                    let x = &self.nodes[input.0].value;
                    let coef = g.item() / x.rows() as f64;
                    let mut gx = x.clone();
                    gx.scale(coef);
                    accumulate(&mut grads, *input, gx);
                }
                Op::CrossEntropyMean { logits, labels } => {
                    let z = &self.nodes[logits.0].value;
                    let coef = g.item() / labels.len() as f64;
                    let mut gz = DenseMatrix::zeros(z.rows(), z.cols());
                    for (b, &y) in labels.iter().enumerate() {
                        let probs = softmax(z.row(b));
                        for (k, (gv, p)) in gz.row_mut(b).iter_mut().zip(probs).enumerate() {
                            let target = if k == y { 1.0 } else { 0.0 };
                            *gv = coef * (p - target);
                        }
                    }
                    accumulate(&mut grads, *logits, gz);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], id: NodeId, g: DenseMatrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`, computed with max-subtraction.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<f64, AutodiffError> {
    if label >= logits.len() {
        return Err(AutodiffError::Contract(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(AutodiffError::NonFinite(format!("logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}
