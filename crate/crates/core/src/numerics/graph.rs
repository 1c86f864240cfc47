use std::sync::Arc;

use super::kernels::{self, dot, row_moments};
use super::{NumericsError, Tensor};

/// The fixed primitive set. Each variant carries whatever non-tensor state its
/// forward needs, so a recorded op can be replayed from its inputs alone.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    MatMul,
    /// `a · bᵀ`
    MatMulNT,
    Add,
    /// Broadcast a `[1×n]` row over all rows.
    AddRow,
    Scale(f64),
    Gelu,
    Tanh,
    /// Inputs: x, gain, bias.
    LayerNorm,
    MaskedSoftmax(Arc<Vec<bool>>),
    L2Normalize,
    CosineDistance,
    Mse,
    CrossEntropy(Arc<Vec<usize>>),
    ConcatRows,
    SliceRows { start: usize, len: usize },
    GatherRows(Arc<Vec<usize>>),
    SliceCols { start: usize, len: usize },
    ConcatCols,
    MeanRows,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::MatMulNT => "matmul_nt",
            Op::Add => "add",
            Op::AddRow => "add_row",
            Op::Scale(_) => "scale",
            Op::Gelu => "gelu",
            Op::Tanh => "tanh",
            Op::LayerNorm => "layer_norm",
            Op::MaskedSoftmax(_) => "masked_softmax",
            Op::L2Normalize => "l2_normalize",
            Op::CosineDistance => "cosine_distance",
            Op::Mse => "mse",
            Op::CrossEntropy(_) => "cross_entropy",
            Op::ConcatRows => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::GatherRows(_) => "gather_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols => "concat_cols",
            Op::MeanRows => "mean_rows",
        }
    }
}

fn arity_error(op: &Op) -> NumericsError {
    NumericsError::Arity { op: op.name() }
}

/// Evaluate one op on concrete inputs and check the result is finite.
pub fn eval(op: &Op, inputs: &[&Tensor]) -> Result<Tensor, NumericsError> {
    let two = || -> Result<(&Tensor, &Tensor), NumericsError> {
        match inputs {
            [a, b] => Ok((a, b)),
            _ => Err(arity_error(op)),
        }
    };
    let one = || -> Result<&Tensor, NumericsError> {
        match inputs {
            [a] => Ok(a),
            _ => Err(arity_error(op)),
        }
    };
    let out = match op {
        Op::Leaf => return Err(arity_error(op)),
        Op::MatMul => {
            let (a, b) = two()?;
            kernels::matmul(a, b)?
        }
        Op::MatMulNT => {
            let (a, b) = two()?;
            kernels::matmul_nt(a, b)?
        }
        Op::Add => {
            let (a, b) = two()?;
            kernels::add(a, b)?
        }
        Op::AddRow => {
            let (a, b) = two()?;
            kernels::add_row(a, b)?
        }
        Op::Scale(c) => kernels::scale(one()?, *c),
        Op::Gelu => kernels::gelu(one()?),
        Op::Tanh => kernels::tanh(one()?),
        Op::LayerNorm => match inputs {
            [x, g, b] => kernels::layer_norm(x, g, b)?,
            _ => return Err(arity_error(op)),
        },
        Op::MaskedSoftmax(mask) => kernels::masked_softmax(one()?, mask)?,
        Op::L2Normalize => kernels::l2_normalize(one()?)?,
        Op::CosineDistance => {
            let (a, b) = two()?;
            Tensor::scalar(kernels::cosine_distance(a, b)?)
        }
        Op::Mse => {
            let (a, b) = two()?;
            Tensor::scalar(kernels::mse(a, b)?)
        }
        Op::CrossEntropy(t) => Tensor::scalar(kernels::cross_entropy(one()?, t)?),
        Op::ConcatRows => kernels::concat_rows(inputs)?,
        Op::SliceRows { start, len } => kernels::slice_rows(one()?, *start, *len)?,
        Op::GatherRows(idx) => kernels::gather_rows(one()?, idx)?,
        Op::SliceCols { start, len } => kernels::slice_cols(one()?, *start, *len)?,
        Op::ConcatCols => kernels::concat_cols(inputs)?,
        Op::MeanRows => kernels::mean_rows(one()?)?,
    };
    if !out.all_finite() {
        return Err(NumericsError::NonFinite { op: op.name() });
    }
    Ok(out)
}

/// A computation backend. Model code is written once against this trait and
/// runs either eagerly (inference) or on a [`Tape`] (training).
pub trait Graph {
    type Node: Clone;

    /// A value that never receives gradients.
    fn constant(&mut self, t: Tensor) -> Self::Node;
    /// Bind a stored parameter. `trainable == false` keeps it out of backward.
    fn bind(&mut self, t: &Arc<Tensor>, trainable: bool) -> Self::Node;
    fn value<'a>(&'a self, n: &'a Self::Node) -> &'a Tensor;
    fn apply(&mut self, op: Op, inputs: &[&Self::Node]) -> Result<Self::Node, NumericsError>;

    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, NumericsError> {
        self.apply(Op::MatMul, &[a, b])
    }
    fn matmul_nt(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, NumericsError> {
        self.apply(Op::MatMulNT, &[a, b])
    }
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, NumericsError> {
        self.apply(Op::Add, &[a, b])
    }
    fn add_row(&mut self, a: &Self::Node, bias: &Self::Node) -> Result<Self::Node, NumericsError> {
        self.apply(Op::AddRow, &[a, bias])
    }
    fn scale(&mut self, a: &Self::Node, c: f64) -> Result<Self::Node, NumericsError> {
        self.apply(Op::Scale(c), &[a])
    }
    fn gelu(&mut self, a: &Self::Node) -> Result<Self::Node, NumericsError> {
        self.apply(Op::Gelu, &[a])
    }
    fn tanh(&mut self, a: &Self::Node) -> Result<Self::Node, NumericsError> {
        self.apply(Op::Tanh, &[a])
    }
    fn layer_norm(
        &mut self,
        x: &Self::Node,
        gain: &Self::Node,
        bias: &Self::Node,
    ) -> Result<Self::Node, NumericsError> {
        self.apply(Op::LayerNorm, &[x, gain, bias])
    }
    fn masked_softmax(
        &mut self,
        scores: &Self::Node,
        mask: Arc<Vec<bool>>,
    ) -> Result<Self::Node, NumericsError> {
        self.apply(Op::MaskedSoftmax(mask), &[scores])
    }
    fn l2_normalize(&mut self, a: &Self::Node) -> Result<Self::Node, NumericsError> {
        self.apply(Op::L2Normalize, &[a])
    }
    fn cosine_distance(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, NumericsError> {
        self.apply(Op::CosineDistance, &[a, b])
    }
    fn mse(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node, NumericsError> {
        self.apply(Op::Mse, &[a, b])
    }
    fn cross_entropy(
        &mut self,
        logits: &Self::Node,
        targets: Vec<usize>,
    ) -> Result<Self::Node, NumericsError> {
        self.apply(Op::CrossEntropy(Arc::new(targets)), &[logits])
    }
    fn concat_rows(&mut self, parts: &[&Self::Node]) -> Result<Self::Node, NumericsError> {
        if parts.len() == 1 {
            return Ok(parts[0].clone());
        }
        self.apply(Op::ConcatRows, parts)
    }
    fn slice_rows(&mut self, a: &Self::Node, start: usize, len: usize) -> Result<Self::Node, NumericsError> {
        self.apply(Op::SliceRows { start, len }, &[a])
    }
    fn gather_rows(&mut self, a: &Self::Node, idx: Vec<usize>) -> Result<Self::Node, NumericsError> {
        self.apply(Op::GatherRows(Arc::new(idx)), &[a])
    }
    fn slice_cols(&mut self, a: &Self::Node, start: usize, len: usize) -> Result<Self::Node, NumericsError> {
        self.apply(Op::SliceCols { start, len }, &[a])
    }
    fn concat_cols(&mut self, parts: &[&Self::Node]) -> Result<Self::Node, NumericsError> {
        if parts.len() == 1 {
            return Ok(parts[0].clone());
        }
        self.apply(Op::ConcatCols, parts)
    }
    fn mean_rows(&mut self, a: &Self::Node) -> Result<Self::Node, NumericsError> {
        self.apply(Op::MeanRows, &[a])
    }
}

/// Immediate evaluation with no recording.
#[derive(Default)]
pub struct Eager;

impl Graph for Eager {
    type Node = Arc<Tensor>;

    fn constant(&mut self, t: Tensor) -> Arc<Tensor> {
        Arc::new(t)
    }

    fn bind(&mut self, t: &Arc<Tensor>, _trainable: bool) -> Arc<Tensor> {
        Arc::clone(t)
    }

    fn value<'a>(&'a self, n: &'a Arc<Tensor>) -> &'a Tensor {
        n
    }

    fn apply(&mut self, op: Op, inputs: &[&Arc<Tensor>]) -> Result<Arc<Tensor>, NumericsError> {
        let vals: Vec<&Tensor> = inputs.iter().map(|t| t.as_ref()).collect();
        eval(&op, &vals).map(Arc::new)
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index_for_tests(i: usize) -> Var {
        Var(i)
    }
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Arc<Tensor>,
    requires_grad: bool,
}

/// Linear record of a forward pass for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient per tape node; `None` where no gradient path exists.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape if it is not on any path to the loss.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_leaf(Arc::new(t), true)
    }

    /// Re-evaluate every recorded op from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>, NumericsError> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.as_ref().clone(),
                _ => {
                    let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &vals[i]).collect();
                    eval(&node.op, &ins)?
                }
            };
            vals.push(v);
        }
        Ok(vals)
    }

    pub fn recorded_value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: shapes[loss.0].clone(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(&shapes[loss.0], 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| self.nodes[i].value.as_ref()).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| self.nodes[i].requires_grad)
                .collect();
            let in_grads = vjp(&node.op, &ins, &node.value, &g, &needs)?;
            for (slot, ig) in node.inputs.iter().zip(in_grads) {
                if let Some(ig) = ig {
                    match &mut grads[*slot] {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                                *a += b;
                            }
                        }
                        empty => *empty = Some(ig),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

impl Graph for Tape {
    type Node = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(Arc::new(t), false)
    }

    fn bind(&mut self, t: &Arc<Tensor>, trainable: bool) -> Var {
        self.push_leaf(Arc::clone(t), trainable)
    }

    fn value<'a>(&'a self, n: &'a Var) -> &'a Tensor {
        &self.nodes[n.0].value
    }

    fn apply(&mut self, op: Op, inputs: &[&Var]) -> Result<Var, NumericsError> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| self.nodes[v.0].value.as_ref()).collect();
        let value = eval(&op, &vals)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs: inputs.iter().map(|v| v.0).collect(),
            value: Arc::new(value),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }
}

/// Vector-Jacobian product of one op. Returns a gradient for each input whose
/// `needs` flag is set.
fn vjp(
    op: &Op,
    ins: &[&Tensor],
    out: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Result<Vec<Option<Tensor>>, NumericsError> {
    let need = |i: usize| needs.get(i).copied().unwrap_or(false);
    let grads = match op {
        Op::Leaf => Vec::new(),
        Op::MatMul => {
            let (a, b) = (ins[0], ins[1]);
            vec![
                need(0).then(|| kernels::matmul_nt(g, b)).transpose()?,
                need(1).then(|| kernels::matmul_tn(a, g)).transpose()?,
            ]
        }
        Op::MatMulNT => {
            let (a, b) = (ins[0], ins[1]);
            vec![
                need(0).then(|| kernels::matmul(g, b)).transpose()?,
                need(1).then(|| kernels::matmul_tn(g, a)).transpose()?,
            ]
        }
        Op::Add => vec![need(0).then(|| g.clone()), need(1).then(|| g.clone())],
        Op::AddRow => {
            let bias_grad = need(1).then(|| {
                let mut acc = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (a, v) in acc.iter_mut().zip(g.row(r)) {
                        *a += v;
                    }
                }
                Tensor::new(ins[1].shape().to_vec(), acc)
            });
            vec![need(0).then(|| g.clone()), bias_grad.transpose()?]
        }
        Op::Scale(c) => vec![Some(kernels::scale(g, *c))],
        Op::Gelu => {
            let x = ins[0];
            let data = x
                .data()
                .iter()
                .zip(g.data())
                .map(|(&xv, &gv)| gv * kernels::gelu_grad_scalar(xv))
                .collect();
            vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
        }
        Op::Tanh => {
            let data = out
                .data()
                .iter()
                .zip(g.data())
                .map(|(&y, &gv)| gv * (1.0 - y * y))
                .collect();
            vec![Some(Tensor::new(out.shape().to_vec(), data)?)]
        }
        Op::LayerNorm => layer_norm_vjp(ins[0], ins[1], g, needs)?,
        Op::MaskedSoftmax(_) => {
            let mut dx = Tensor::zeros(out.shape());
            for r in 0..out.rows() {
                let y = out.row(r);
                let gy = g.row(r);
                let s = dot(y, gy);
                for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                    *d = y[j] * (gy[j] - s);
                }
            }
            vec![Some(dx)]
        }
        Op::L2Normalize => {
            let x = ins[0];
            let mut dx = Tensor::zeros(x.shape());
            for r in 0..x.rows() {
                let norm = dot(x.row(r), x.row(r)).sqrt();
                let y = out.row(r);
                let gy = g.row(r);
                let s = dot(y, gy);
                for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                    *d = (gy[j] - y[j] * s) / norm;
                }
            }
            vec![Some(dx)]
        }
        Op::CosineDistance => {
            let (a, b) = (ins[0], ins[1]);
            let scale = -g.item() / a.rows() as f64;
            let mut da = Tensor::zeros(a.shape());
            let mut db = Tensor::zeros(b.shape());
            for r in 0..a.rows() {
                let (ar, br) = (a.row(r), b.row(r));
                let na2 = dot(ar, ar);
                let nb2 = dot(br, br);
                let nanb = (na2 * nb2).sqrt();
                let cos = dot(ar, br) / nanb;
                for j in 0..ar.len() {
                    da.row_mut(r)[j] = scale * (br[j] / nanb - cos * ar[j] / na2);
                    db.row_mut(r)[j] = scale * (ar[j] / nanb - cos * br[j] / nb2);
                }
            }
            vec![need(0).then_some(da), need(1).then_some(db)]
        }
        Op::Mse => {
            let (a, b) = (ins[0], ins[1]);
            let c = 2.0 * g.item() / a.len() as f64;
            let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| c * (x - y)).collect();
            let da = Tensor::new(a.shape().to_vec(), data)?;
            let db = need(1).then(|| kernels::scale(&da, -1.0));
            vec![need(0).then_some(da), db]
        }
        Op::CrossEntropy(targets) => {
            let logits = ins[0];
            let n = targets.len() as f64;
            let mut dz = Tensor::zeros(logits.shape());
            for (r, &t) in targets.iter().enumerate() {
                let row = logits.row(r);
                let lse = kernels::log_sum_exp(row);
                for (j, d) in dz.row_mut(r).iter_mut().enumerate() {
                    let p = (row[j] - lse).exp();
                    *d = g.item() * (p - if j == t { 1.0 } else { 0.0 }) / n;
                }
            }
            vec![Some(dz)]
        }
        Op::ConcatRows => {
            let mut start = 0;
            let mut out_grads = Vec::with_capacity(ins.len());
            for (i, part) in ins.iter().enumerate() {
                let rows = part.rows();
                out_grads.push(need(i).then(|| kernels::slice_rows(g, start, rows)).transpose()?);
                start += rows;
            }
            out_grads
        }
        Op::SliceRows { start, .. } => {
            let mut dx = Tensor::zeros(ins[0].shape());
            let c = g.cols();
            dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
            vec![Some(dx)]
        }
        Op::GatherRows(idx) => {
            let mut dx = Tensor::zeros(ins[0].shape());
            for (k, &i) in idx.iter().enumerate() {
                for (d, v) in dx.row_mut(i).iter_mut().zip(g.row(k)) {
                    *d += v;
                }
            }
            vec![Some(dx)]
        }
        Op::SliceCols { start, len } => {
            let mut dx = Tensor::zeros(ins[0].shape());
            for r in 0..g.rows() {
                dx.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
            }
            vec![Some(dx)]
        }
        Op::ConcatCols => {
            let mut start = 0;
            let mut out_grads = Vec::with_capacity(ins.len());
            for (i, part) in ins.iter().enumerate() {
                let cols = part.cols();
                out_grads.push(need(i).then(|| kernels::slice_cols(g, start, cols)).transpose()?);
                start += cols;
            }
            out_grads
        }
        Op::MeanRows => {
            let x = ins[0];
            let n = x.rows() as f64;
            let mut dx = Tensor::zeros(x.shape());
            for r in 0..x.rows() {
                for (d, v) in dx.row_mut(r).iter_mut().zip(g.data()) {
                    *d = v / n;
                }
            }
            vec![Some(dx)]
        }
    };
    Ok(grads)
}

fn layer_norm_vjp(
    x: &Tensor,
    gain: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Result<Vec<Option<Tensor>>, NumericsError> {
    let n = x.cols();
    let mut dx = Tensor::zeros(x.shape());
    let mut dgain = vec![0.0; n];
    let mut dbias = vec![0.0; n];
    let mut xhat = vec![0.0; n];
    let mut dxhat = vec![0.0; n];
    for r in 0..x.rows() {
        let (mean, inv) = row_moments(x.row(r));
        let gr = g.row(r);
        for j in 0..n {
            xhat[j] = (x.row(r)[j] - mean) * inv;
            dxhat[j] = gr[j] * gain.data()[j];
            dgain[j] += gr[j] * xhat[j];
            dbias[j] += gr[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / n as f64;
        let m2 = dot(&dxhat, &xhat) / n as f64;
        for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
            *d = inv * (dxhat[j] - m1 - xhat[j] * m2);
        }
    }
    let need = |i: usize| needs.get(i).copied().unwrap_or(false);
    Ok(vec![
        need(0).then_some(dx),
        need(1)
            .then(|| Tensor::new(gain.shape().to_vec(), dgain))
            .transpose()?,
        need(2)
            .then(|| Tensor::new(gain.shape().to_vec(), dbias))
            .transpose()?,
    ])
}
