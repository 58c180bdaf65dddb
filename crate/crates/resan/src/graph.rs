//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an eager Wengert tape: every primitive computes its value
//! immediately and records itself, so the recorded order is a topological
//! order and [`Graph::backward`] is a single reverse sweep. Tensors are
//! rank-0 (scalar), rank-1 (feature column) or rank-2 (`[features,
//! positions]`, row-major).
//!
//! Broadcasting convention for the element-wise ops (`add`, `sub`, `mul`):
//! a rank-1 tensor `[d]` acts as a column `[d, 1]`, a scalar broadcasts
//! everywhere, and within rank-2 a dimension of size 1 stretches. So
//! `[d, n] + [d]` adds the vector to every column and `[d, n] * [1, n]`
//! scales every row.
//!
//! A graph and its tensors are confined to one thread; distinct graphs
//! (one per batch item) run concurrently with read-shared parameters.

use crate::error::{Error, Result};
use crate::Real;
use std::sync::atomic::{AtomicU64, Ordering};

/// Additive mask value standing in for -inf. Anything at or below
/// [`MASK_THRESHOLD`] is treated as fully blocked; the masked softmax maps
/// it to an exact zero probability instead of propagating NaNs.
pub const MASK_SENTINEL: Real = -1e30;

/// Scores at or below this are considered masked.
pub const MASK_THRESHOLD: Real = -1e29;

static GRAPH_IDS: AtomicU64 = AtomicU64::new(1);

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    graph: u64,
    id: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul,
    Add,
    Sub,
    Mul,
    Concat { axis: usize },
    Sigmoid,
    Tanh,
    Exp,
    Log,
    SoftmaxRows { mask: Vec<Real> },
    MeanPool { keep: Vec<bool> },
    Scale { factor: Real },
    Sum,
    Abs,
    Clamp { lo: Real, hi: Real },
    GatherCols { indices: Vec<usize> },
    RepeatCols { copies: usize },
    RowSums,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Concat { .. } => "concat",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::SoftmaxRows { .. } => "softmax_masked",
            Op::MeanPool { .. } => "mean_pool",
            Op::Scale { .. } => "scale",
            Op::Sum => "sum",
            Op::Abs => "abs",
            Op::Clamp { .. } => "clamp",
            Op::GatherCols { .. } => "gather_cols",
            Op::RepeatCols { .. } => "repeat_cols",
            Op::RowSums => "row_sums",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    values: Vec<Real>,
}

/// Recorded tape of primitive applications plus the parameter-leaf registry.
#[derive(Debug)]
pub struct Graph {
    uid: u64,
    nodes: Vec<Node>,
    grads: Vec<Vec<Real>>,
    params: Vec<(String, usize)>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// (rows, cols) view of a rank <= 2 shape, with rank-1 as a column.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (shape[0], 1),
        2 => (shape[0], shape[1]),
        _ => unreachable!("rank > 2 is rejected at construction"),
    }
}

fn stable_sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            uid: GRAPH_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, op: &'static str, t: Tensor) -> Result<()> {
        if t.graph != self.uid {
            return Err(Error::GraphMismatch { op });
        }
        Ok(())
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, shape: Vec<usize>, values: Vec<Real>) -> Tensor {
        debug_assert_eq!(numel(&shape), values.len());
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            values,
        });
        Tensor {
            graph: self.uid,
            id,
        }
    }

    // ---- leaves ------------------------------------------------------

    pub fn constant(&mut self, shape: &[usize], values: Vec<Real>) -> Result<Tensor> {
        if shape.len() > 2 {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                details: format!("rank {} unsupported (max 2)", shape.len()),
            });
        }
        if numel(shape) != values.len() {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                details: format!("shape {:?} holds {} values, got {}", shape, numel(shape), values.len()),
            });
        }
        Ok(self.push(Op::Leaf, vec![], shape.to_vec(), values))
    }

    pub fn scalar(&mut self, v: Real) -> Tensor {
        self.push(Op::Leaf, vec![], vec![], vec![v])
    }

    pub fn vector(&mut self, values: &[Real]) -> Tensor {
        self.push(Op::Leaf, vec![], vec![values.len()], values.to_vec())
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, values: Vec<Real>) -> Result<Tensor> {
        self.constant(&[rows, cols], values)
    }

    /// Bind a named parameter as a leaf. Binding the same name twice returns
    /// the first tensor, which is what ties parameters across sub-uses
    /// (e.g. the premise and hypothesis encoders share one binding).
    pub fn bind_param(&mut self, name: &str, shape: &[usize], values: &[Real]) -> Result<Tensor> {
        if let Some(&(_, id)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(Tensor {
                graph: self.uid,
                id,
            });
        }
        if numel(shape) != values.len() {
            return Err(Error::ShapeMismatch {
                op: "param",
                details: format!("{name}: shape {:?} vs {} values", shape, values.len()),
            });
        }
        let t = self.push(Op::Param, vec![], shape.to_vec(), values.to_vec());
        self.params.push((name.to_string(), t.id));
        Ok(t)
    }

    // ---- value access ------------------------------------------------

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.id].shape
    }

    pub fn values(&self, t: Tensor) -> &[Real] {
        &self.nodes[t.id].values
    }

    pub fn scalar_value(&self, t: Tensor) -> Real {
        debug_assert_eq!(self.nodes[t.id].values.len(), 1);
        self.nodes[t.id].values[0]
    }

    /// Gradient of the last `backward` call w.r.t. `t`, if it was computed.
    pub fn grad(&self, t: Tensor) -> Option<&[Real]> {
        self.grads.get(t.id).map(|g| g.as_slice())
    }

    /// Named parameter gradients after `backward`, in binding order.
    pub fn param_gradients(&self) -> impl Iterator<Item = (&str, &[Real])> {
        self.params
            .iter()
            .map(|(name, id)| (name.as_str(), self.grads[*id].as_slice()))
    }

    // ---- primitives ----------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`, or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check("matmul", a)?;
        self.check("matmul", b)?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k) = match sa.as_slice() {
            [m, k] => (*m, *k),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    details: format!("left operand must be rank 2, got {sa:?}"),
                })
            }
        };
        let (k2, n, vec_rhs) = match sb.as_slice() {
            [k2, n] => (*k2, *n, false),
            [k2] => (*k2, 1, true),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    details: format!("right operand must be rank 1 or 2, got {sb:?}"),
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                details: format!("inner dims differ: {sa:?} x {sb:?}"),
            });
        }
        let av = &self.nodes[a.id].values;
        let bv = &self.nodes[b.id].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (l, &aval) in arow.iter().enumerate() {
                let brow = &bv[l * n..(l + 1) * n];
                for (o, &bval) in orow.iter_mut().zip(brow) {
                    *o += aval * bval;
                }
            }
        }
        let shape = if vec_rhs { vec![m] } else { vec![m, n] };
        Ok(self.push(Op::MatMul, vec![a.id, b.id], shape, out))
    }

    fn binary_broadcast(&mut self, op: Op, a: Tensor, b: Tensor) -> Result<Tensor> {
        let name = op.name();
        self.check(name, a)?;
        self.check(name, b)?;
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (ra, ca) = rows_cols(&sa);
        let (rb, cb) = rows_cols(&sb);
        let rows = ra.max(rb);
        let cols = ca.max(cb);
        let ok = (ra == rows || ra == 1) && (rb == rows || rb == 1) && (ca == cols || ca == 1) && (cb == cols || cb == 1);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: name,
                details: format!("cannot broadcast {sa:?} with {sb:?}"),
            });
        }
        let av = &self.nodes[a.id].values;
        let bv = &self.nodes[b.id].values;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let ar = if ra == 1 { 0 } else { r };
            let br = if rb == 1 { 0 } else { r };
            for c in 0..cols {
                let x = av[ar * ca + if ca == 1 { 0 } else { c }];
                let y = bv[br * cb + if cb == 1 { 0 } else { c }];
                out[r * cols + c] = match op {
                    Op::Add => x + y,
                    Op::Sub => x - y,
                    Op::Mul => x * y,
                    _ => unreachable!(),
                };
            }
        }
        let rank = sa.len().max(sb.len());
        let shape = match rank {
            0 => vec![],
            1 => vec![rows],
            _ => vec![rows, cols],
        };
        Ok(self.push(op, vec![a.id, b.id], shape, out))
    }

    /// Element-wise sum with broadcasting (see module docs for the rule).
    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary_broadcast(Op::Add, a, b)
    }

    /// Element-wise difference with broadcasting.
    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary_broadcast(Op::Sub, a, b)
    }

    /// Element-wise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary_broadcast(Op::Mul, a, b)
    }

    /// Concatenate along `axis` (0 = features/rows, 1 = positions/cols).
    /// Rank-1 inputs act as columns for `axis == 1` and as runs for
    /// `axis == 0`.
    pub fn concat(&mut self, parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::EmptyInput { op: "concat" });
        }
        for &p in parts {
            self.check("concat", p)?;
        }
        if axis > 1 {
            return Err(Error::ShapeMismatch {
                op: "concat",
                details: format!("axis {axis} out of range"),
            });
        }
        let all_rank1 = parts.iter().all(|&p| self.shape(p).len() == 1);
        if axis == 0 && all_rank1 {
            // [a] ++ [b] -> [a+b]
            let mut values = Vec::new();
            for &p in parts {
                values.extend_from_slice(&self.nodes[p.id].values);
            }
            let shape = vec![values.len()];
            return Ok(self.push(Op::Concat { axis }, parts.iter().map(|p| p.id).collect(), shape, values));
        }
        // rank-2 view, rank-1 as column
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| rows_cols(self.shape(p))).collect();
        if axis == 0 {
            let cols = dims[0].1;
            if dims.iter().any(|&(_, c)| c != cols) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    details: format!("axis 0 needs equal column counts, got {dims:?}"),
                });
            }
            let rows: usize = dims.iter().map(|&(r, _)| r).sum();
            let mut values = Vec::with_capacity(rows * cols);
            for &p in parts {
                values.extend_from_slice(&self.nodes[p.id].values);
            }
            Ok(self.push(Op::Concat { axis }, parts.iter().map(|p| p.id).collect(), vec![rows, cols], values))
        } else {
            let rows = dims[0].0;
            if dims.iter().any(|&(r, _)| r != rows) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    details: format!("axis 1 needs equal row counts, got {dims:?}"),
                });
            }
            let cols: usize = dims.iter().map(|&(_, c)| c).sum();
            let mut values = vec![0.0; rows * cols];
            let mut offset = 0;
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                let pv = &self.nodes[p.id].values;
                for r in 0..rows {
                    values[r * cols + offset..r * cols + offset + c].copy_from_slice(&pv[r * c..(r + 1) * c]);
                }
                offset += c;
            }
            Ok(self.push(Op::Concat { axis }, parts.iter().map(|p| p.id).collect(), vec![rows, cols], values))
        }
    }

    fn unary(&mut self, op: Op, a: Tensor, f: impl Fn(Real) -> Real) -> Result<Tensor> {
        self.check(op.name(), a)?;
        let values: Vec<Real> = self.nodes[a.id].values.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.id].shape.clone();
        Ok(self.push(op, vec![a.id], shape, values))
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(Op::Sigmoid, a, stable_sigmoid)
    }

    pub fn tanh(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(Op::Tanh, a, Real::tanh)
    }

    pub fn exp(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(Op::Exp, a, Real::exp)
    }

    pub fn log(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(Op::Log, a, Real::ln)
    }

    pub fn abs(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(Op::Abs, a, Real::abs)
    }

    pub fn clamp(&mut self, a: Tensor, lo: Real, hi: Real) -> Result<Tensor> {
        self.unary(Op::Clamp { lo, hi }, a, |x| x.clamp(lo, hi))
    }

    pub fn scale(&mut self, a: Tensor, factor: Real) -> Result<Tensor> {
        self.unary(Op::Scale { factor }, a, |x| x * factor)
    }

    /// Row-wise masked softmax. Input is `[n]` or `[d, n]`; `mask` has one
    /// additive entry per column, each exactly `0` or [`MASK_SENTINEL`].
    /// Masked columns get probability exactly 0. A fully masked mask yields
    /// the uniform distribution `1/n` (the fallback the encoder relies on
    /// for unselected heads). Row max of the unmasked scores is subtracted
    /// before exponentiation, so scores up to +-1e4 stay finite.
    pub fn softmax_masked(&mut self, scores: Tensor, mask: &[Real]) -> Result<Tensor> {
        self.check("softmax_masked", scores)?;
        let shape = self.shape(scores).to_vec();
        let (rows, cols) = match shape.as_slice() {
            [n] => (1usize, *n),
            [d, n] => (*d, *n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "softmax_masked",
                    details: format!("rank {} unsupported", shape.len()),
                })
            }
        };
        if cols == 0 {
            return Err(Error::EmptyInput {
                op: "softmax_masked",
            });
        }
        if mask.len() != cols {
            return Err(Error::ShapeMismatch {
                op: "softmax_masked",
                details: format!("mask length {} vs {} columns", mask.len(), cols),
            });
        }
        debug_assert!(mask.iter().all(|&m| m == 0.0 || m <= MASK_THRESHOLD));
        let blocked: Vec<bool> = mask.iter().map(|&m| m <= MASK_THRESHOLD).collect();
        let any_open = blocked.iter().any(|&b| !b);
        let sv = &self.nodes[scores.id].values;
        let mut out = vec![0.0; rows * cols];
        if !any_open {
            let u = 1.0 / cols as Real;
            out.iter_mut().for_each(|p| *p = u);
        } else {
            for r in 0..rows {
                let row = &sv[r * cols..(r + 1) * cols];
                let mut max = Real::NEG_INFINITY;
                for (c, &s) in row.iter().enumerate() {
                    if !blocked[c] && s > max {
                        max = s;
                    }
                }
                let mut z = 0.0;
                for c in 0..cols {
                    if !blocked[c] {
                        let e = (row[c] - max).exp();
                        out[r * cols + c] = e;
                        z += e;
                    }
                }
                for c in 0..cols {
                    if !blocked[c] {
                        out[r * cols + c] /= z;
                    }
                }
            }
        }
        Ok(self.push(
            Op::SoftmaxRows { mask: mask.to_vec() },
            vec![scores.id],
            shape,
            out,
        ))
    }

    /// Mean over unmasked positions of a `[d, n]` sequence, giving `[d]`.
    /// Padding columns carry `keep = false` and are excluded.
    pub fn mean_pool(&mut self, seq: Tensor, keep: &[bool]) -> Result<Tensor> {
        self.check("mean_pool", seq)?;
        let shape = self.shape(seq).to_vec();
        let (d, n) = match shape.as_slice() {
            [d, n] => (*d, *n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "mean_pool",
                    details: format!("expected [d, n], got {shape:?}"),
                })
            }
        };
        if keep.len() != n {
            return Err(Error::ShapeMismatch {
                op: "mean_pool",
                details: format!("mask length {} vs {} positions", keep.len(), n),
            });
        }
        let count = keep.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::AllPositionsMasked);
        }
        let sv = &self.nodes[seq.id].values;
        let mut out = vec![0.0; d];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &sv[r * n..(r + 1) * n];
            let mut acc = 0.0;
            for c in 0..n {
                if keep[c] {
                    acc += row[c];
                }
            }
            *o = acc / count as Real;
        }
        Ok(self.push(Op::MeanPool { keep: keep.to_vec() }, vec![seq.id], vec![d], out))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Tensor) -> Result<Tensor> {
        self.check("sum", a)?;
        let total: Real = self.nodes[a.id].values.iter().sum();
        Ok(self.push(Op::Sum, vec![a.id], vec![], vec![total]))
    }

    /// Sum along the position axis: `[d, n] -> [d]`.
    pub fn row_sums(&mut self, a: Tensor) -> Result<Tensor> {
        self.check("row_sums", a)?;
        let shape = self.shape(a).to_vec();
        let (d, n) = match shape.as_slice() {
            [d, n] => (*d, *n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "row_sums",
                    details: format!("expected [d, n], got {shape:?}"),
                })
            }
        };
        let sv = &self.nodes[a.id].values;
        let out: Vec<Real> = (0..d).map(|r| sv[r * n..(r + 1) * n].iter().sum()).collect();
        Ok(self.push(Op::RowSums, vec![a.id], vec![d], out))
    }

    /// Select columns of `[d, n]` by index (repeats allowed), giving `[d, k]`.
    /// Doubles as the embedding lookup on a `[d, vocab]` table.
    pub fn gather_cols(&mut self, a: Tensor, indices: &[usize]) -> Result<Tensor> {
        self.check("gather_cols", a)?;
        let shape = self.shape(a).to_vec();
        let (d, n) = match shape.as_slice() {
            [d, n] => (*d, *n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "gather_cols",
                    details: format!("expected [d, n], got {shape:?}"),
                })
            }
        };
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::ShapeMismatch {
                op: "gather_cols",
                details: format!("index {bad} out of range for {n} columns"),
            });
        }
        let k = indices.len();
        let sv = &self.nodes[a.id].values;
        let mut out = vec![0.0; d * k];
        for r in 0..d {
            for (j, &c) in indices.iter().enumerate() {
                out[r * k + j] = sv[r * n + c];
            }
        }
        Ok(self.push(
            Op::GatherCols { indices: indices.to_vec() },
            vec![a.id],
            vec![d, k],
            out,
        ))
    }

    /// Tile a column `[d]` (or `[d, 1]`) into `[d, copies]`.
    pub fn repeat_cols(&mut self, a: Tensor, copies: usize) -> Result<Tensor> {
        self.check("repeat_cols", a)?;
        let shape = self.shape(a).to_vec();
        let d = match shape.as_slice() {
            [d] => *d,
            [d, 1] => *d,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "repeat_cols",
                    details: format!("expected a column, got {shape:?}"),
                })
            }
        };
        if copies == 0 {
            return Err(Error::EmptyInput { op: "repeat_cols" });
        }
        let sv = &self.nodes[a.id].values;
        let mut out = vec![0.0; d * copies];
        for r in 0..d {
            out[r * copies..(r + 1) * copies].iter_mut().for_each(|o| *o = sv[r]);
        }
        Ok(self.push(Op::RepeatCols { copies }, vec![a.id], vec![d, copies], out))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse sweep from a scalar loss. Fills gradient buffers for every
    /// node; parameter leaves are read back via [`Graph::param_gradients`].
    /// Calling it again (e.g. for a second objective on the same tape)
    /// resets all buffers first.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        self.check("backward", loss)?;
        if numel(&self.nodes[loss.id].shape) != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss.id].shape.clone(),
            });
        }
        self.grads.clear();
        self.grads
            .extend(self.nodes.iter().map(|n| vec![0.0; n.values.len()]));
        self.grads[loss.id][0] = 1.0;

        for id in (0..self.nodes.len()).rev() {
            if self.grads[id].iter().all(|&g| g == 0.0) {
                continue;
            }
            self.backprop_node(id);
        }
        Ok(())
    }

    fn backprop_node(&mut self, id: usize) {
        // nodes are read-only here; grads[id] is taken out so grads of the
        // inputs can be written without aliasing.
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[id];
        let inputs = &node.inputs;
        let g = std::mem::take(&mut grads[id]);
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
                let n = match nodes[b].shape.as_slice() {
                    [_, n] => *n,
                    _ => 1,
                };
                {
                    let bv = &nodes[b].values;
                    let da = &mut grads[a];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            let brow = &bv[l * n..(l + 1) * n];
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grow[j] * brow[j];
                            }
                            da[i * k + l] += acc;
                        }
                    }
                }
                {
                    let av = &nodes[a].values;
                    let db = &mut grads[b];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = &av[i * k..(i + 1) * k];
                        for (l, &aval) in arow.iter().enumerate() {
                            let dbrow = &mut db[l * n..(l + 1) * n];
                            for j in 0..n {
                                dbrow[j] += aval * grow[j];
                            }
                        }
                    }
                }
            }
            op @ (Op::Add | Op::Sub | Op::Mul) => {
                let (a, b) = (inputs[0], inputs[1]);
                let (ra, ca) = rows_cols(&nodes[a].shape);
                let (rb, cb) = rows_cols(&nodes[b].shape);
                let (rows, cols) = (ra.max(rb), ca.max(cb));
                let av = &nodes[a].values;
                let bv = &nodes[b].values;
                // a and b may be the same node (x * x); both writes land in
                // the same buffer and accumulate, which is the correct sum.
                for r in 0..rows {
                    let ar = if ra == 1 { 0 } else { r };
                    let br = if rb == 1 { 0 } else { r };
                    for c in 0..cols {
                        let gv = g[r * cols + c];
                        if gv == 0.0 {
                            continue;
                        }
                        let ai = ar * ca + if ca == 1 { 0 } else { c };
                        let bi = br * cb + if cb == 1 { 0 } else { c };
                        match op {
                            Op::Add => {
                                grads[a][ai] += gv;
                                grads[b][bi] += gv;
                            }
                            Op::Sub => {
                                grads[a][ai] += gv;
                                grads[b][bi] -= gv;
                            }
                            Op::Mul => {
                                grads[a][ai] += gv * bv[bi];
                                grads[b][bi] += gv * av[ai];
                            }
                            _ => unreachable!(),
                        }
                    }
                }
            }
            Op::Concat { axis } => {
                if *axis == 0 {
                    // row-major: axis-0 concat is contiguous
                    let mut offset = 0;
                    for &p in inputs {
                        let len = nodes[p].values.len();
                        for i in 0..len {
                            grads[p][i] += g[offset + i];
                        }
                        offset += len;
                    }
                } else {
                    let rows = rows_cols(&nodes[inputs[0]].shape).0;
                    let total_cols: usize = inputs.iter().map(|&p| rows_cols(&nodes[p].shape).1).sum();
                    let mut offset = 0;
                    for &p in inputs {
                        let c = rows_cols(&nodes[p].shape).1;
                        for r in 0..rows {
                            for j in 0..c {
                                grads[p][r * c + j] += g[r * total_cols + offset + j];
                            }
                        }
                        offset += c;
                    }
                }
            }
            Op::Sigmoid => {
                let da = &mut grads[inputs[0]];
                for i in 0..g.len() {
                    let y = node.values[i];
                    da[i] += g[i] * y * (1.0 - y);
                }
            }
            Op::Tanh => {
                let da = &mut grads[inputs[0]];
                for i in 0..g.len() {
                    let y = node.values[i];
                    da[i] += g[i] * (1.0 - y * y);
                }
            }
            Op::Exp => {
                let da = &mut grads[inputs[0]];
                for i in 0..g.len() {
                    da[i] += g[i] * node.values[i];
                }
            }
            Op::Log => {
                let a = inputs[0];
                let av = &nodes[a].values;
                let da = &mut grads[a];
                for i in 0..g.len() {
                    da[i] += g[i] / av[i];
                }
            }
            Op::Abs => {
                let a = inputs[0];
                let av = &nodes[a].values;
                let da = &mut grads[a];
                for i in 0..g.len() {
                    let s = if av[i] > 0.0 {
                        1.0
                    } else if av[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    da[i] += g[i] * s;
                }
            }
            Op::Clamp { lo, hi } => {
                let a = inputs[0];
                let av = &nodes[a].values;
                let da = &mut grads[a];
                for i in 0..g.len() {
                    if av[i] >= *lo && av[i] <= *hi {
                        da[i] += g[i];
                    }
                }
            }
            Op::Scale { factor } => {
                let da = &mut grads[inputs[0]];
                for i in 0..g.len() {
                    da[i] += g[i] * factor;
                }
            }
            Op::SoftmaxRows { mask } => {
                let cols = mask.len();
                let rows = node.values.len() / cols;
                let blocked: Vec<bool> = mask.iter().map(|&m| m <= MASK_THRESHOLD).collect();
                if blocked.iter().any(|&b| !b) {
                    let da = &mut grads[inputs[0]];
                    for r in 0..rows {
                        let p = &node.values[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let mut dot = 0.0;
                        for c in 0..cols {
                            if !blocked[c] {
                                dot += grow[c] * p[c];
                            }
                        }
                        for c in 0..cols {
                            if !blocked[c] {
                                da[r * cols + c] += p[c] * (grow[c] - dot);
                            }
                        }
                    }
                }
                // fully masked rows are the constant uniform: zero gradient
            }
            Op::MeanPool { keep } => {
                let n = keep.len();
                let count = keep.iter().filter(|&&k| k).count() as Real;
                let da = &mut grads[inputs[0]];
                for (r, &gr) in g.iter().enumerate() {
                    let gv = gr / count;
                    for c in 0..n {
                        if keep[c] {
                            da[r * n + c] += gv;
                        }
                    }
                }
            }
            Op::Sum => {
                let gv = g[0];
                for x in grads[inputs[0]].iter_mut() {
                    *x += gv;
                }
            }
            Op::RowSums => {
                let a = inputs[0];
                let n = nodes[a].values.len() / g.len();
                let da = &mut grads[a];
                for (r, &gv) in g.iter().enumerate() {
                    for c in 0..n {
                        da[r * n + c] += gv;
                    }
                }
            }
            Op::GatherCols { indices } => {
                let a = inputs[0];
                let k = indices.len();
                let n = rows_cols(&nodes[a].shape).1;
                let d = nodes[a].values.len() / n;
                let da = &mut grads[a];
                for r in 0..d {
                    for (j, &c) in indices.iter().enumerate() {
                        da[r * n + c] += g[r * k + j];
                    }
                }
            }
            Op::RepeatCols { copies } => {
                let da = &mut grads[inputs[0]];
                for (r, slot) in da.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..*copies {
                        acc += g[r * copies + c];
                    }
                    *slot += acc;
                }
            }
        }
        self.grads[id] = g;
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}
