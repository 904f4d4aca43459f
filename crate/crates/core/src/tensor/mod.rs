//! Minimal f64 tensor algebra with reverse-mode automatic differentiation.
//!
//! Tensors are reference-counted nodes in a dynamically recorded compute
//! graph. An operation whose inputs all have `requires_grad == false`
//! produces a constant leaf, so pure inference retains no graph. `backward`
//! walks the recorded graph once in reverse topological order and
//! accumulates gradients additively; gradients are cleared explicitly by
//! the optimizer step (or `zero_grad`), never implicitly.
//!
//! A graph is single-threaded by construction (`Rc` interior); independent
//! training contexts run in parallel as separate processes.

pub mod adafactor;
pub mod checkpoint;
pub mod gradcheck;
pub mod rng;

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use rng::SplitRng;

enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    MatMul(Tensor, Tensor),
    Transpose(Tensor),
    Relu(Tensor),
    Softmax(Tensor, usize),
    RmsNorm {
        x: Tensor,
        gain: Tensor,
        eps: f64,
    },
    Embedding {
        table: Tensor,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Tensor>),
    SliceRows {
        x: Tensor,
        start: usize,
    },
    SliceCols {
        x: Tensor,
        start: usize,
    },
    ConcatCols(Vec<Tensor>),
    MeanRows(Tensor),
    Sum(Tensor),
    Mean(Tensor),
    CrossEntropy {
        logits: Tensor,
        targets: Vec<usize>,
        mask: Vec<bool>,
    },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// An n-dimensional f64 array participating in a recorded compute graph.
/// Cloning is cheap and shares the underlying value.
#[derive(Clone)]
pub struct Tensor(Rc<RefCell<Node>>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.borrow();
        f.debug_struct("Tensor")
            .field("shape", &n.shape)
            .field("requires_grad", &n.requires_grad)
            .field("data", &n.data)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn node(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor(Rc::new(RefCell::new(Node {
            data,
            shape,
            requires_grad,
            grad: None,
            op,
        })))
    }

    /// New leaf tensor. `requires_grad` marks it as a trainable parameter.
    pub fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<Tensor> {
        if data.len() != numel(&shape) {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::node(data, shape, requires_grad, Op::Leaf))
    }

    /// Constant leaf (no gradient).
    pub fn constant(data: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::leaf(data, shape, false)
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::leaf(data, shape, true)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::node(vec![value], vec![1], false, Op::Leaf)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = numel(&shape);
        Tensor::node(vec![0.0; n], shape, false, Op::Leaf)
    }

    /// Gaussian-initialized trainable parameter.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut SplitRng) -> Tensor {
        let n = numel(&shape);
        let data = (0..n).map(|_| rng.normal(std)).collect();
        Tensor::node(data, shape, true, Op::Leaf)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.0.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.borrow().data.clone()
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> Result<f64> {
        let n = self.0.borrow();
        if n.data.len() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor with {} elements",
                n.data.len()
            )));
        }
        Ok(n.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    /// Toggle gradient tracking on a leaf. Freezing a parameter keeps
    /// subsequent forwards from recording graph structure through it.
    pub fn set_requires_grad(&self, flag: bool) {
        self.0.borrow_mut().requires_grad = flag;
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad = None;
    }

    /// Stable identity of the underlying node; used to key optimizer state
    /// and to deduplicate parameter sets.
    pub fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// In-place element update, used by optimizers and test harnesses.
    /// Values are otherwise immutable once produced.
    pub fn apply_update(&self, f: impl FnMut(usize, &mut f64)) {
        let mut n = self.0.borrow_mut();
        let mut f = f;
        for (i, v) in n.data.iter_mut().enumerate() {
            f(i, v);
        }
    }

    /// Overwrite the stored values (shapes must match). Used when restoring
    /// parameters from a checkpoint.
    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        let mut n = self.0.borrow_mut();
        if data.len() != n.data.len() {
            return Err(Error::shape(format!(
                "set_data length {} != {}",
                data.len(),
                n.data.len()
            )));
        }
        n.data = data;
        Ok(())
    }

    fn binary_requires(a: &Tensor, b: &Tensor) -> bool {
        a.requires_grad() || b.requires_grad()
    }

    fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::same_shape(self, other, "add")?;
        let data: Vec<f64> = {
            let a = self.0.borrow();
            let b = other.0.borrow();
            a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect()
        };
        let rq = Tensor::binary_requires(self, other);
        let op = if rq {
            Op::Add(self.clone(), other.clone())
        } else {
            Op::Leaf
        };
        Ok(Tensor::node(data, self.shape(), rq, op))
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::same_shape(self, other, "sub")?;
        let data: Vec<f64> = {
            let a = self.0.borrow();
            let b = other.0.borrow();
            a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect()
        };
        let rq = Tensor::binary_requires(self, other);
        let op = if rq {
            Op::Sub(self.clone(), other.clone())
        } else {
            Op::Leaf
        };
        Ok(Tensor::node(data, self.shape(), rq, op))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::same_shape(self, other, "mul")?;
        let data: Vec<f64> = {
            let a = self.0.borrow();
            let b = other.0.borrow();
            a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect()
        };
        let rq = Tensor::binary_requires(self, other);
        let op = if rq {
            Op::Mul(self.clone(), other.clone())
        } else {
            Op::Leaf
        };
        Ok(Tensor::node(data, self.shape(), rq, op))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, k: f64) -> Tensor {
        let data: Vec<f64> = self.0.borrow().data.iter().map(|x| x * k).collect();
        let rq = self.requires_grad();
        let op = if rq { Op::Scale(self.clone(), k) } else { Op::Leaf };
        Tensor::node(data, self.shape(), rq, op)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(format!("matmul needs rank-2 inputs: {sa:?} x {sb:?}")));
        }
        if sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul inner dims: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = {
            let a = self.0.borrow();
            let b = other.0.borrow();
            matmul_raw(&a.data, &b.data, m, k, n)
        };
        let rq = Tensor::binary_requires(self, other);
        let op = if rq {
            Op::MatMul(self.clone(), other.clone())
        } else {
            Op::Leaf
        };
        Ok(Tensor::node(data, vec![m, n], rq, op))
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("transpose needs rank 2, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let a = self.0.borrow();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = a.data[i * n + j];
            }
        }
        drop(a);
        let rq = self.requires_grad();
        let op = if rq { Op::Transpose(self.clone()) } else { Op::Leaf };
        Ok(Tensor::node(data, vec![n, m], rq, op))
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f64> = self.0.borrow().data.iter().map(|x| x.max(0.0)).collect();
        let rq = self.requires_grad();
        let op = if rq { Op::Relu(self.clone()) } else { Op::Leaf };
        Tensor::node(data, self.shape(), rq, op)
    }

    /// Numerically stable softmax along `axis` (max-subtraction). Supports
    /// rank 1 (axis 0) and rank 2 (either axis). Rejects non-finite input.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape(format!("softmax axis {axis} for shape {shape:?}")));
        }
        {
            let n = self.0.borrow();
            if n.data.iter().any(|v| !v.is_finite() && !(*v == f64::NEG_INFINITY)) {
                return Err(Error::numeric("softmax input contains NaN or +inf".to_string()));
            }
        }
        let data = {
            let n = self.0.borrow();
            softmax_raw(&n.data, &shape, axis)
        };
        let rq = self.requires_grad();
        let op = if rq { Op::Softmax(self.clone(), axis) } else { Op::Leaf };
        Ok(Tensor::node(data, shape, rq, op))
    }

    /// Root-mean-square normalization over the last axis with a learned
    /// per-feature gain: y[i,j] = x[i,j] / rms(x[i,:]) * gain[j].
    pub fn rms_norm(&self, gain: &Tensor, eps: f64) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("rms_norm needs rank 2, got {s:?}")));
        }
        let d = s[1];
        if gain.shape() != vec![d] {
            return Err(Error::shape(format!(
                "rms_norm gain shape {:?} != [{d}]",
                gain.shape()
            )));
        }
        let data = {
            let x = self.0.borrow();
            let g = gain.0.borrow();
            let mut out = vec![0.0; x.data.len()];
            for i in 0..s[0] {
                let row = &x.data[i * d..(i + 1) * d];
                let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
                let inv = 1.0 / (ms + eps).sqrt();
                for j in 0..d {
                    out[i * d + j] = row[j] * inv * g.data[j];
                }
            }
            out
        };
        let rq = self.requires_grad() || gain.requires_grad();
        let op = if rq {
            Op::RmsNorm {
                x: self.clone(),
                gain: gain.clone(),
                eps,
            }
        } else {
            Op::Leaf
        };
        Ok(Tensor::node(data, s, rq, op))
    }

    /// Gather rows of `table` by index: out[i, :] = table[ids[i], :].
    pub fn embedding(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let s = table.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("embedding table must be rank 2, got {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::contract(format!("embedding id {bad} >= table rows {v}")));
        }
        let data = {
            let t = table.0.borrow();
            let mut out = Vec::with_capacity(ids.len() * d);
            for &i in ids {
                out.extend_from_slice(&t.data[i * d..(i + 1) * d]);
            }
            out
        };
        let rq = table.requires_grad();
        let op = if rq {
            Op::Embedding {
                table: table.clone(),
                ids: ids.to_vec(),
            }
        } else {
            Op::Leaf
        };
        Ok(Tensor::node(data, vec![ids.len(), d], rq, op))
    }

    /// Stack rank-2 tensors with equal column counts along axis 0.
    /// Zero-row inputs are legal and contribute nothing.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows of zero tensors".to_string()));
        }
        let cols = parts[0].shape()[1];
        let mut rows = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != 2 || s[1] != cols {
                return Err(Error::shape(format!("concat_rows: incompatible shape {s:?}")));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.0.borrow().data);
        }
        let rq = parts.iter().any(|p| p.requires_grad());
        let op = if rq { Op::ConcatRows(parts.to_vec()) } else { Op::Leaf };
        Ok(Tensor::node(data, vec![rows, cols], rq, op))
    }

    /// Contiguous row range of a rank-2 tensor.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("slice_rows needs rank 2, got {s:?}")));
        }
        if start + len > s[0] {
            return Err(Error::shape(format!(
                "slice_rows [{start}, {}) out of {} rows",
                start + len,
                s[0]
            )));
        }
        let cols = s[1];
        let data = self.0.borrow().data[start * cols..(start + len) * cols].to_vec();
        let rq = self.requires_grad();
        let op = if rq {
            Op::SliceRows {
                x: self.clone(),
                start,
            }
        } else {
            Op::Leaf
        };
        Ok(Tensor::node(data, vec![len, cols], rq, op))
    }

    /// Contiguous column range of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("slice_cols needs rank 2, got {s:?}")));
        }
        if start + len > s[1] {
            return Err(Error::shape(format!(
                "slice_cols [{start}, {}) out of {} cols",
                start + len,
                s[1]
            )));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.0.borrow();
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&src.data[i * cols + start..i * cols + start + len]);
        }
        drop(src);
        let rq = self.requires_grad();
        let op = if rq {
            Op::SliceCols {
                x: self.clone(),
                start,
            }
        } else {
            Op::Leaf
        };
        Ok(Tensor::node(data, vec![rows, len], rq, op))
    }

    /// Stack rank-2 tensors with equal row counts along axis 1.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero tensors".to_string()));
        }
        let rows = parts[0].shape()[0];
        let mut cols = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != 2 || s[0] != rows {
                return Err(Error::shape(format!("concat_cols: incompatible shape {s:?}")));
            }
            cols += s[1];
        }
        let mut data = vec![0.0; rows * cols];
        let mut off = 0;
        for p in parts {
            let s = p.shape();
            let pd = p.0.borrow();
            for i in 0..rows {
                data[i * cols + off..i * cols + off + s[1]]
                    .copy_from_slice(&pd.data[i * s[1]..(i + 1) * s[1]]);
            }
            off += s[1];
        }
        let rq = parts.iter().any(|p| p.requires_grad());
        let op = if rq { Op::ConcatCols(parts.to_vec()) } else { Op::Leaf };
        Ok(Tensor::node(data, vec![rows, cols], rq, op))
    }

    /// Mean over rows of a rank-2 tensor, producing shape [1, cols].
    pub fn mean_rows(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::shape(format!("mean_rows needs rank 2 with rows > 0, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.0.borrow();
        let mut data = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                data[j] += src.data[i * cols + j];
            }
        }
        for v in data.iter_mut() {
            *v /= rows as f64;
        }
        drop(src);
        let rq = self.requires_grad();
        let op = if rq { Op::MeanRows(self.clone()) } else { Op::Leaf };
        Ok(Tensor::node(data, vec![1, cols], rq, op))
    }

    /// Sum of all elements (scalar tensor).
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.0.borrow().data.iter().sum();
        let rq = self.requires_grad();
        let op = if rq { Op::Sum(self.clone()) } else { Op::Leaf };
        Tensor::node(vec![s], vec![1], rq, op)
    }

    /// Mean of all elements (scalar tensor).
    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        let s: f64 = self.0.borrow().data.iter().sum();
        let rq = self.requires_grad();
        let op = if rq { Op::Mean(self.clone()) } else { Op::Leaf };
        Tensor::node(vec![s / n], vec![1], rq, op)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, averaged over unmasked positions only.
    pub fn cross_entropy(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<Tensor> {
        let s = logits.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("cross_entropy logits must be rank 2, got {s:?}")));
        }
        let (t, v) = (s[0], s[1]);
        if targets.len() != t || mask.len() != t {
            return Err(Error::contract(format!(
                "cross_entropy: {t} rows vs {} targets / {} mask flags",
                targets.len(),
                mask.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&id| id >= v) {
            return Err(Error::contract(format!("cross_entropy target {bad} >= vocab {v}")));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::numeric(
                "cross_entropy: all positions masked, mean undefined".to_string(),
            ));
        }
        let total = {
            let l = logits.0.borrow();
            let mut total = 0.0;
            for i in 0..t {
                if !mask[i] {
                    continue;
                }
                let row = &l.data[i * v..(i + 1) * v];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                total += lse - row[targets[i]];
            }
            total
        };
        let rq = logits.requires_grad();
        let op = if rq {
            Op::CrossEntropy {
                logits: logits.clone(),
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            }
        } else {
            Op::Leaf
        };
        Ok(Tensor::node(vec![total / count as f64], vec![1], rq, op))
    }

    fn accumulate(&self, contribution: &[f64]) {
        let mut n = self.0.borrow_mut();
        match n.grad {
            Some(ref mut g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a += b;
                }
            }
            None => n.grad = Some(contribution.to_vec()),
        }
    }

    fn parents(&self) -> Vec<Tensor> {
        let n = self.0.borrow();
        match &n.op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                vec![a.clone(), b.clone()]
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Softmax(a, _)
            | Op::SliceRows { x: a, .. }
            | Op::SliceCols { x: a, .. }
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a.clone()],
            Op::RmsNorm { x, gain, .. } => vec![x.clone(), gain.clone()],
            Op::Embedding { table, .. } => vec![table.clone()],
            Op::ConcatRows(parts) | Op::ConcatCols(parts) => parts.clone(),
            Op::CrossEntropy { logits, .. } => vec![logits.clone()],
        }
    }

    /// Reverse-mode gradient pass from a scalar loss. Gradients accumulate
    /// additively into every tensor with `requires_grad` reachable from the
    /// loss; tensors used twice receive both contributions.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        // Post-order DFS (iterative) for reverse topological order.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, processed)) = stack.pop() {
            if processed {
                order.push(t);
                continue;
            }
            if !visited.insert(t.ptr_id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.parents() {
                if p.requires_grad() && !visited.contains(&p.ptr_id()) {
                    stack.push((p, false));
                }
            }
        }

        self.accumulate(&[1.0]);

        for t in order.iter().rev() {
            let grad = match t.0.borrow().grad.clone() {
                Some(g) => g,
                None => continue,
            };
            t.propagate(&grad);
        }
        Ok(())
    }

    fn propagate(&self, grad: &[f64]) {
        let node = self.0.borrow();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if a.requires_grad() {
                    a.accumulate(grad);
                }
                if b.requires_grad() {
                    b.accumulate(grad);
                }
            }
            Op::Sub(a, b) => {
                if a.requires_grad() {
                    a.accumulate(grad);
                }
                if b.requires_grad() {
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    b.accumulate(&neg);
                }
            }
            Op::Mul(a, b) => {
                if a.requires_grad() {
                    let bd = b.0.borrow();
                    let da: Vec<f64> = grad.iter().zip(&bd.data).map(|(g, v)| g * v).collect();
                    drop(bd);
                    a.accumulate(&da);
                }
                if b.requires_grad() {
                    let ad = a.0.borrow();
                    let db: Vec<f64> = grad.iter().zip(&ad.data).map(|(g, v)| g * v).collect();
                    drop(ad);
                    b.accumulate(&db);
                }
            }
            Op::Scale(a, k) => {
                if a.requires_grad() {
                    let da: Vec<f64> = grad.iter().map(|g| g * k).collect();
                    a.accumulate(&da);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (a.shape(), b.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if a.requires_grad() {
                    // dA = dC @ B^T
                    let bd = b.0.borrow();
                    let bt = transpose_raw(&bd.data, k, n);
                    drop(bd);
                    let da = matmul_raw(grad, &bt, m, n, k);
                    a.accumulate(&da);
                }
                if b.requires_grad() {
                    // dB = A^T @ dC
                    let ad = a.0.borrow();
                    let at = transpose_raw(&ad.data, m, k);
                    drop(ad);
                    let db = matmul_raw(&at, grad, k, m, n);
                    b.accumulate(&db);
                }
            }
            Op::Transpose(a) => {
                if a.requires_grad() {
                    let s = node.shape.clone(); // out shape [n, m]
                    let da = transpose_raw(grad, s[0], s[1]);
                    a.accumulate(&da);
                }
            }
            Op::Relu(a) => {
                if a.requires_grad() {
                    let ad = a.0.borrow();
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&ad.data)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    drop(ad);
                    a.accumulate(&da);
                }
            }
            Op::Softmax(a, axis) => {
                if a.requires_grad() {
                    // ds_i = s_i * (g_i - sum_j g_j s_j) per slice
                    let s = &node.data;
                    let shape = &node.shape;
                    let axis_len = shape[*axis];
                    let (outer, inner) = outer_inner(shape, *axis);
                    let mut da = vec![0.0; s.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut dot = 0.0;
                            for ax in 0..axis_len {
                                let idx = o * axis_len * inner + ax * inner + i;
                                dot += grad[idx] * s[idx];
                            }
                            for ax in 0..axis_len {
                                let idx = o * axis_len * inner + ax * inner + i;
                                da[idx] = s[idx] * (grad[idx] - dot);
                            }
                        }
                    }
                    a.accumulate(&da);
                }
            }
            Op::RmsNorm { x, gain, eps } => {
                let s = x.shape();
                let (rows, d) = (s[0], s[1]);
                let xd = x.0.borrow();
                let gd = gain.0.borrow();
                let mut dx = vec![0.0; xd.data.len()];
                let mut dg = vec![0.0; d];
                for i in 0..rows {
                    let row = &xd.data[i * d..(i + 1) * d];
                    let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
                    let inv = 1.0 / (ms + eps).sqrt();
                    let grow = &grad[i * d..(i + 1) * d];
                    let mut dot = 0.0;
                    for j in 0..d {
                        dot += grow[j] * gd.data[j] * row[j];
                        dg[j] += grow[j] * row[j] * inv;
                    }
                    let inv3 = inv * inv * inv;
                    for j in 0..d {
                        dx[i * d + j] =
                            grow[j] * gd.data[j] * inv - row[j] * inv3 / d as f64 * dot;
                    }
                }
                drop(xd);
                drop(gd);
                if x.requires_grad() {
                    x.accumulate(&dx);
                }
                if gain.requires_grad() {
                    gain.accumulate(&dg);
                }
            }
            Op::Embedding { table, ids } => {
                if table.requires_grad() {
                    let d = table.shape()[1];
                    let mut dt = vec![0.0; table.numel()];
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += grad[i * d + j];
                        }
                    }
                    table.accumulate(&dt);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let s = p.shape();
                    let len = s[0] * s[1];
                    if p.requires_grad() && len > 0 {
                        p.accumulate(&grad[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                if x.requires_grad() {
                    let s = x.shape();
                    let cols = s[1];
                    let mut dx = vec![0.0; x.numel()];
                    dx[start * cols..start * cols + grad.len()].copy_from_slice(grad);
                    x.accumulate(&dx);
                }
            }
            Op::SliceCols { x, start } => {
                if x.requires_grad() {
                    let s = x.shape();
                    let (rows, cols) = (s[0], s[1]);
                    let len = node.shape[1];
                    let mut dx = vec![0.0; rows * cols];
                    for i in 0..rows {
                        dx[i * cols + start..i * cols + start + len]
                            .copy_from_slice(&grad[i * len..(i + 1) * len]);
                    }
                    x.accumulate(&dx);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let cols = node.shape[1];
                let mut off = 0;
                for p in parts {
                    let w = p.shape()[1];
                    if p.requires_grad() {
                        let mut dp = vec![0.0; rows * w];
                        for i in 0..rows {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&grad[i * cols + off..i * cols + off + w]);
                        }
                        p.accumulate(&dp);
                    }
                    off += w;
                }
            }
            Op::MeanRows(a) => {
                if a.requires_grad() {
                    let s = a.shape();
                    let (rows, cols) = (s[0], s[1]);
                    let mut da = vec![0.0; rows * cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            da[i * cols + j] = grad[j] / rows as f64;
                        }
                    }
                    a.accumulate(&da);
                }
            }
            Op::Sum(a) => {
                if a.requires_grad() {
                    a.accumulate(&vec![grad[0]; a.numel()]);
                }
            }
            Op::Mean(a) => {
                if a.requires_grad() {
                    let n = a.numel() as f64;
                    a.accumulate(&vec![grad[0] / n; a.numel()]);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
            } => {
                if logits.requires_grad() {
                    let s = logits.shape();
                    let (t, v) = (s[0], s[1]);
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let ld = logits.0.borrow();
                    let mut dl = vec![0.0; t * v];
                    for i in 0..t {
                        if !mask[i] {
                            continue;
                        }
                        let row = &ld.data[i * v..(i + 1) * v];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
                        let z: f64 = exps.iter().sum();
                        for j in 0..v {
                            let p = exps[j] / z;
                            let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                            dl[i * v + j] = grad[0] * (p - onehot) / count;
                        }
                    }
                    drop(ld);
                    logits.accumulate(&dl);
                }
            }
        }
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, inner)
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn softmax_raw(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let axis_len = shape[axis];
    let (outer, inner) = outer_inner(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let mut max = f64::NEG_INFINITY;
            for ax in 0..axis_len {
                max = max.max(data[o * axis_len * inner + ax * inner + i]);
            }
            let mut z = 0.0;
            for ax in 0..axis_len {
                let idx = o * axis_len * inner + ax * inner + i;
                let e = (data[idx] - max).exp();
                out[idx] = e;
                z += e;
            }
            for ax in 0..axis_len {
                out[o * axis_len * inner + ax * inner + i] /= z;
            }
        }
    }
    out
}

/// Softmax over a plain slice (no graph). Shared by decoding paths.
pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!(
                (x - y).abs() <= tol,
                "index {i}: {x} vs {y} (tol {tol})"
            );
        }
    }

    #[test]
    fn matmul_identity() {
        let id = Tensor::constant(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2]).unwrap();
        let m = Tensor::constant(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).unwrap();
        let out = id.matmul(&m).unwrap();
        assert_close(&out.to_vec(), &[1.0, 2.0, 3.0, 4.0], 0.0);
    }

    #[test]
    fn matmul_projector() {
        let p = Tensor::constant(vec![1.0, 0.0, 0.0, 0.0], vec![2, 2]).unwrap();
        let m = Tensor::constant(vec![5.0, 6.0, 7.0, 8.0], vec![2, 2]).unwrap();
        let out = p.matmul(&m).unwrap();
        assert_close(&out.to_vec(), &[5.0, 6.0, 0.0, 0.0], 0.0);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = SplitRng::new(42);
        let a: Vec<f64> = (0..12).map(|_| rng.normal(1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.normal(1.0)).collect();
        let ta = Tensor::constant(a.clone(), vec![3, 4]).unwrap();
        let tb = Tensor::constant(b.clone(), vec![4, 2]).unwrap();
        let out = ta.matmul(&tb).unwrap().to_vec();
        // independent naive oracle
        let mut expect = vec![0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a[i * 4 + p] * b[p * 2 + j];
                }
                expect[i * 2 + j] = s;
            }
        }
        assert_close(&out, &expect, 1e-12);
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_symmetry() {
        let v = Tensor::constant(vec![0.0, 0.0], vec![2]).unwrap();
        let s = v.softmax(0).unwrap();
        assert_close(&s.to_vec(), &[0.5, 0.5], 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        for c in [-100.0, 0.0, 3.5, 1e6] {
            let base = Tensor::constant(vec![1.0, 2.0, 3.0], vec![3]).unwrap();
            let shifted =
                Tensor::constant(vec![1.0 + c, 2.0 + c, 3.0 + c], vec![3]).unwrap();
            assert_close(
                &base.softmax(0).unwrap().to_vec(),
                &shifted.softmax(0).unwrap().to_vec(),
                1e-12,
            );
        }
    }

    #[test]
    fn softmax_reference_values() {
        // high-precision values for softmax([1, 2, 3])
        let v = Tensor::constant(vec![1.0, 2.0, 3.0], vec![3]).unwrap();
        let s = v.softmax(0).unwrap();
        assert_close(&s.to_vec(), &[0.09003057, 0.24472847, 0.66524096], 1e-5);
    }

    #[test]
    fn softmax_rejects_nan() {
        let v = Tensor::constant(vec![f64::NAN, 1.0], vec![2]).unwrap();
        assert!(matches!(v.softmax(0), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = SplitRng::new(9);
        let data: Vec<f64> = (0..20).map(|_| rng.normal(3.0)).collect();
        let t = Tensor::constant(data, vec![4, 5]).unwrap();
        let s = t.softmax(1).unwrap().to_vec();
        for row in s.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_confident_correct() {
        let mut logits = vec![0.0; 4];
        logits[2] = 1e6;
        let l = Tensor::constant(logits, vec![1, 4]).unwrap();
        let loss = Tensor::cross_entropy(&l, &[2], &[true]).unwrap();
        assert!(loss.item().unwrap().abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_uniform_is_log_vocab() {
        let l = Tensor::constant(vec![0.0; 2 * 8], vec![2, 8]).unwrap();
        let loss = Tensor::cross_entropy(&l, &[3, 5], &[true, true]).unwrap();
        assert!((loss.item().unwrap() - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_scalar_oracle() {
        let mut rng = SplitRng::new(77);
        let data: Vec<f64> = (0..55).map(|_| rng.normal(2.0)).collect();
        let targets: Vec<usize> = (0..5).map(|_| rng.below(11)).collect();
        let mask = vec![true, false, true, true, false];
        let l = Tensor::constant(data.clone(), vec![5, 11]).unwrap();
        let loss = Tensor::cross_entropy(&l, &targets, &mask).unwrap();
        // per-position manual log-sum-exp oracle
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..5 {
            if !mask[i] {
                continue;
            }
            let row = &data[i * 11..(i + 1) * 11];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[targets[i]];
            count += 1;
        }
        assert!((loss.item().unwrap() - total / count as f64).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_all_masked_errors() {
        let l = Tensor::constant(vec![0.0; 8], vec![2, 4]).unwrap();
        let r = Tensor::cross_entropy(&l, &[0, 1], &[false, false]);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let x = Tensor::param(vec![1.0, -2.0, 3.0], vec![3]).unwrap();
        let loss = x.sum();
        loss.backward().unwrap();
        assert_close(&x.grad().unwrap(), &[1.0, 1.0, 1.0], 0.0);
    }

    #[test]
    fn backward_quadratic() {
        let x = Tensor::param(vec![1.0, 2.0], vec![2]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_close(&x.grad().unwrap(), &[2.0, 4.0], 1e-14);
    }

    #[test]
    fn backward_accumulates_across_uses() {
        let x = Tensor::param(vec![1.0, 1.0], vec![2]).unwrap();
        let loss = x.sum().add(&x.sum()).unwrap();
        loss.backward().unwrap();
        assert_close(&x.grad().unwrap(), &[2.0, 2.0], 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![1.0, 2.0], vec![2]).unwrap();
        assert!(matches!(x.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn no_graph_retained_for_constants() {
        let a = Tensor::constant(vec![1.0, 2.0], vec![2]).unwrap();
        let b = Tensor::constant(vec![3.0, 4.0], vec![2]).unwrap();
        let c = a.add(&b).unwrap();
        assert!(c.parents().is_empty());
    }

    #[test]
    fn gradients_match_finite_differences_per_op() {
        // randomized FD spot-checks for each differentiable op
        let rng = SplitRng::new(2024);
        for trial in 0..3 {
            let mut r = rng.derive(trial);
            let a = Tensor::randn(vec![3, 4], 1.0, &mut r);
            let b = Tensor::randn(vec![4, 2], 1.0, &mut r);
            let g = Tensor::randn(vec![4], 0.5, &mut r);
            let gain = g.apply_offset(1.0); // keep gains away from zero
            let params = vec![a.clone(), b.clone(), gain.clone()];
            let loss_fn = || -> crate::Result<Tensor> {
                let h = a.rms_norm(&gain, 1e-6)?;
                let h = h.relu();
                let y = h.matmul(&b)?;
                let s = y.softmax(1)?;
                let m = Tensor::concat_rows(&[s.slice_rows(0, 2)?, s.slice_rows(1, 2)?])?;
                let z = m.slice_cols(0, 2)?;
                Ok(z.mean_rows()?.sum())
            };
            let report = gradcheck::check_gradients(&params, loss_fn, 1e-5, 1e-4, None, &mut r)
                .unwrap();
            assert!(report.passed(), "trial {trial}: {report:?}");
        }
    }

    impl Tensor {
        fn apply_offset(&self, k: f64) -> Tensor {
            let data: Vec<f64> = self.to_vec().iter().map(|v| v + k).collect();
            Tensor::leaf(data, self.shape(), true).unwrap()
        }
    }
}
