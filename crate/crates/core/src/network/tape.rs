//! Arena-based reverse-mode autodiff over dense `f64` arrays.
//!
//! Nodes are appended in evaluation order, so the arena order is already a
//! topological order; [`Tape::backward`] walks it once in reverse.
//! Activations are laid out channel-major: shape `[channels, length]`.

use crate::error::{DgError, Result};
use crate::parallel::Execution;

/// Dense array with an optional accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(DgError::shape(format!("{shape:?}"), data.len()));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written vector-Jacobian product.
pub trait CustomOp {
    fn name(&self) -> &str;
    /// Gradients for each input given the output gradient; `None` for
    /// inputs that are not differentiated.
    fn backward(&self, inputs: &[&[f64]], output: &[f64], grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

enum Op<'a> {
    Input,
    Param(usize),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        cols: Option<Vec<f64>>,
        k: usize,
    },
    Relu(NodeId),
    Concat(Vec<NodeId>),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `a + alpha b`
    Axpy {
        a: NodeId,
        b: NodeId,
        alpha: f64,
    },
    Scale {
        x: NodeId,
        alpha: f64,
    },
    /// Copy of `x` with `idx` entries replaced by constants.
    Overwrite {
        x: NodeId,
        idx: Vec<usize>,
    },
    Sum(NodeId),
    /// Mean of `|x|` over entries with `mask[i]` true.
    MeanAbs {
        x: NodeId,
        mask: Vec<bool>,
        count: usize,
    },
    Custom {
        inputs: Vec<NodeId>,
        op: Box<dyn CustomOp + 'a>,
    },
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op<'a>,
}

/// Gradient of a scalar with respect to every tape node that needed one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Adds every parameter gradient into `params[i].grad`.
    pub fn accumulate_into(&self, params: &mut [Tensor]) {
        for &(node, pidx) in &self.params {
            if let Some(g) = &self.grads[node] {
                params[pidx].accumulate_grad(g);
            }
        }
    }
}

pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    exec: Execution,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// `C = op(A) op(B) + beta C`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    // row/column strides of op(A) (m x k) and op(B) (k x n)
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            exec: Execution::default(),
        }
    }

    pub fn with_execution(exec: Execution) -> Self {
        Self {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op<'a>) -> NodeId {
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input. Gradients are still tracked when `requires_grad`.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<NodeId> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(DgError::shape(format!("{shape:?}"), data.len()));
        }
        Ok(self.push(shape, data, requires_grad, Op::Input))
    }

    /// Registers parameter `index` with the current values of `t`.
    pub fn param(&mut self, index: usize, t: &Tensor) -> NodeId {
        self.push(t.shape.clone(), t.data.clone(), true, Op::Param(index))
    }

    /// Same-padded 1-D cross-correlation: `x [c_in, n]`, `w [c_out, c_in, k]`,
    /// `b [c_out]` gives `[c_out, n]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 2 || ws.len() != 3 || bs.len() != 1 {
            return Err(DgError::shape(
                "x [c, n], w [o, c, k], b [o]",
                format!("{xs:?} {ws:?} {bs:?}"),
            ));
        }
        let (c_in, n) = (xs[0], xs[1]);
        let (c_out, wc, k) = (ws[0], ws[1], ws[2]);
        if wc != c_in || bs[0] != c_out {
            return Err(DgError::shape(
                format!("weight [{c_out}, {c_in}, k], bias [{c_out}]"),
                format!("{ws:?} {bs:?}"),
            ));
        }
        if k % 2 == 0 {
            return Err(DgError::Config(format!("kernel size must be odd, got {k}")));
        }
        let cols = if k == 1 {
            None
        } else {
            Some(im2col(self.value(x), c_in, n, k, self.exec))
        };
        let mut out = vec![0.0; c_out * n];
        let bias = self.value(b);
        for (row, &bv) in out.chunks_exact_mut(n).zip(bias) {
            row.fill(bv);
        }
        let src = cols.as_deref().unwrap_or_else(|| self.value(x));
        gemm(c_out, c_in * k, n, self.value(w), false, src, false, 1.0, &mut out);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(vec![c_out, n], out, rg, Op::Conv1d { x, w, b, cols, k }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, v, rg, Op::Relu(x))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let n = self.shape(parts[0])[1];
        let mut c = 0;
        let mut v = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != n {
                return Err(DgError::shape(format!("[_, {n}]"), format!("{s:?}")));
            }
            c += s[0];
            v.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![c, n], v, rg, Op::Concat(parts.to_vec())))
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(DgError::shape(
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let id = self.axpy(a, b, 1.0)?;
        if let Op::Axpy { a, b, .. } = self.nodes[id.0].op {
            self.nodes[id.0].op = Op::Add(a, b);
        }
        Ok(id)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, v, rg, Op::Mul(a, b)))
    }

    /// `a + alpha b`.
    pub fn axpy(&mut self, a: NodeId, b: NodeId, alpha: f64) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + alpha * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, v, rg, Op::Axpy { a, b, alpha }))
    }

    pub fn scale(&mut self, x: NodeId, alpha: f64) -> NodeId {
        let v = self.value(x).iter().map(|a| alpha * a).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, v, rg, Op::Scale { x, alpha })
    }

    /// Replaces entries `idx` of `x` by `values` (no gradient flows to them).
    pub fn overwrite(&mut self, x: NodeId, idx: &[usize], values: &[f64]) -> NodeId {
        let mut v = self.value(x).to_vec();
        for (&i, &val) in idx.iter().zip(values) {
            v[i] = val;
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, v, rg, Op::Overwrite { x, idx: idx.to_vec() })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], rg, Op::Sum(x))
    }

    /// Mean absolute value over entries where `mask` is true (all if `None`).
    pub fn mean_abs(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let n = self.value(x).len();
        let mask = match mask {
            Some(m) if m.len() != n => return Err(DgError::shape(n, m.len())),
            Some(m) => m.to_vec(),
            None => vec![true; n],
        };
        let count = mask.iter().filter(|&&m| m).count();
        let s: f64 = self
            .value(x)
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v.abs())
            .sum();
        let v = if count == 0 { 0.0 } else { s / count as f64 };
        let rg = self.rg(x);
        Ok(self.push(vec![1], vec![v], rg, Op::MeanAbs { x, mask, count }))
    }

    /// Records a custom op whose forward value has already been computed.
    pub fn custom(
        &mut self,
        inputs: &[NodeId],
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Box<dyn CustomOp + 'a>,
    ) -> NodeId {
        let rg = inputs.iter().any(|&i| self.rg(i));
        self.push(
            shape,
            value,
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(DgError::Autodiff(format!(
                "backward needs a scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Vec::new();
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads)?;
            if let Op::Param(p) = node.op {
                params.push((id, p));
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let add = |grads: &mut [Option<Vec<f64>>], id: NodeId, v: Vec<f64>| {
            if !self.rg(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(v),
            }
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv1d { x, w, b, cols, k } => {
                let xs = self.shape(*x);
                let (c_in, n) = (xs[0], xs[1]);
                let c_out = node.shape[0];
                if self.rg(*b) {
                    let gb = g.chunks_exact(n).map(|r| r.iter().sum()).collect();
                    add(grads, *b, gb);
                }
                let src = cols.as_deref().unwrap_or_else(|| self.value(*x));
                if self.rg(*w) {
                    let mut gw = vec![0.0; c_out * c_in * k];
                    gemm(c_out, n, c_in * k, g, false, src, true, 0.0, &mut gw);
                    add(grads, *w, gw);
                }
                if self.rg(*x) {
                    let mut gcols = vec![0.0; c_in * k * n];
                    gemm(c_in * k, c_out, n, self.value(*w), true, g, false, 0.0, &mut gcols);
                    let gx = if *k == 1 {
                        gcols
                    } else {
                        col2im(&gcols, c_in, n, *k, self.exec)
                    };
                    add(grads, *x, gx);
                }
            }
            Op::Relu(x) => {
                let gx = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                add(grads, *x, gx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    add(grads, p, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::Add(a, b) => {
                add(grads, *a, g.to_vec());
                add(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let ga = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                let gb = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                add(grads, *a, ga);
                add(grads, *b, gb);
            }
            Op::Axpy { a, b, alpha } => {
                add(grads, *a, g.to_vec());
                add(grads, *b, g.iter().map(|v| alpha * v).collect());
            }
            Op::Scale { x, alpha } => add(grads, *x, g.iter().map(|v| alpha * v).collect()),
            Op::Overwrite { x, idx } => {
                let mut gx = g.to_vec();
                for &i in idx {
                    gx[i] = 0.0;
                }
                add(grads, *x, gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                add(grads, *x, vec![g[0]; n]);
            }
            Op::MeanAbs { x, mask, count } => {
                let scale = if *count == 0 { 0.0 } else { g[0] / *count as f64 };
                let gx = self
                    .value(*x)
                    .iter()
                    .zip(mask)
                    .map(|(&v, &m)| if m && v != 0.0 { scale * v.signum() } else { 0.0 })
                    .collect();
                add(grads, *x, gx);
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&[f64]> = inputs.iter().map(|&i| self.value(i)).collect();
                let gs = op.backward(&ins, &node.value, g);
                if gs.len() != inputs.len() {
                    return Err(DgError::Autodiff(format!(
                        "{} returned {} gradients",
                        op.name(),
                        gs.len()
                    )));
                }
                for (&i, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        add(grads, i, gi);
                    }
                }
            }
        }
        Ok(())
    }
}

/// `cols[(c * k + j) * n + i] = x[c, i + j - pad]`, zero outside.
fn im2col(x: &[f64], c_in: usize, n: usize, k: usize, exec: Execution) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let mut cols = vec![0.0; c_in * k * n];
    exec.for_each_chunk(&mut cols, k * n, |c, block| {
        let xc = &x[c * n..(c + 1) * n];
        for j in 0..k {
            let row = &mut block[j * n..(j + 1) * n];
            // i + j - pad in [0, n)
            let lo = pad.saturating_sub(j);
            let hi = (n + pad).saturating_sub(j).min(n);
            if lo < hi {
                row[lo..hi].copy_from_slice(&xc[lo + j - pad..hi + j - pad]);
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], c_in: usize, n: usize, k: usize, exec: Execution) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let mut x = vec![0.0; c_in * n];
    exec.for_each_chunk(&mut x, n, |c, xc| {
        for j in 0..k {
            let row = &cols[(c * k + j) * n..(c * k + j + 1) * n];
            let lo = pad.saturating_sub(j);
            let hi = (n + pad).saturating_sub(j).min(n);
            for i in lo..hi {
                xc[i + j - pad] += row[i];
            }
        }
    });
    x
}
