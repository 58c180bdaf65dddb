//! The soft-attention family: vanilla and multi-dimensional attention,
//! masked token2token self-attention with positional masks, the fusion
//! gate, and source2token compression.
//!
//! The pairwise compatibility of dependent `x_i` with head `x_j` is
//! `c * tanh((W_dep x_i + W_head x_j + b) / c)` plus an additive mask
//! entry. In multi-dim mode the score is a feature vector; in vanilla mode
//! it collapses to the feature mean, which keeps the same `(-c, c)` bound.

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor, MASK_SENTINEL, MASK_THRESHOLD};
use crate::params::{ParamKind, ParamSet};
use crate::Real;
use serde::{Deserialize, Serialize};

/// Default tanh sharpness `c`.
pub const DEFAULT_SHARPNESS: Real = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Score granularity: one score per feature, or one per token pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    MultiDim,
    Vanilla,
}

/// Additive `n x n` mask; entry `(dep, head)` is exactly `0` (open) or the
/// `-inf` sentinel (blocked). Column `head` gates which dependents the head
/// may attend to.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    n: usize,
    entries: Vec<Real>,
}

impl AttentionMask {
    pub fn open(n: usize) -> Self {
        AttentionMask {
            n,
            entries: vec![0.0; n * n],
        }
    }

    /// Open everywhere except the diagonal: a token never attends to itself.
    pub fn diagonal_blocked(n: usize) -> Self {
        let mut m = Self::open(n);
        for i in 0..n {
            m.entries[i * n + i] = MASK_SENTINEL;
        }
        m
    }

    /// Temporal-order mask: `Forward` opens `(dep, head)` iff `dep < head`,
    /// `Backward` iff `dep > head`; the diagonal is always blocked.
    pub fn positional(n: usize, direction: Direction) -> Self {
        let mut entries = vec![MASK_SENTINEL; n * n];
        for dep in 0..n {
            for head in 0..n {
                let open = match direction {
                    Direction::Forward => dep < head,
                    Direction::Backward => dep > head,
                };
                if open {
                    entries[dep * n + head] = 0.0;
                }
            }
        }
        AttentionMask { n, entries }
    }

    /// Selection mask: `(dep, head)` is open iff both tokens were selected
    /// in their respective roles and `dep != head`.
    pub fn from_selection(z_head: &[bool], z_dep: &[bool]) -> Result<Self> {
        if z_head.len() != z_dep.len() {
            return Err(Error::ShapeMismatch {
                op: "selection_mask",
                details: format!("head len {} vs dep len {}", z_head.len(), z_dep.len()),
            });
        }
        let n = z_head.len();
        let mut entries = vec![MASK_SENTINEL; n * n];
        for (dep, &zd) in z_dep.iter().enumerate() {
            if !zd {
                continue;
            }
            for (head, &zh) in z_head.iter().enumerate() {
                if zh && dep != head {
                    entries[dep * n + head] = 0.0;
                }
            }
        }
        Ok(AttentionMask { n, entries })
    }

    /// Entry-wise combination: blocked if either side blocks.
    pub fn intersect(&self, other: &AttentionMask) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch {
                op: "mask_intersect",
                details: format!("{} vs {}", self.n, other.n),
            });
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| {
                if a <= MASK_THRESHOLD || b <= MASK_THRESHOLD {
                    MASK_SENTINEL
                } else {
                    0.0
                }
            })
            .collect();
        Ok(AttentionMask { n: self.n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn allows(&self, dep: usize, head: usize) -> bool {
        self.entries[dep * self.n + head] > MASK_THRESHOLD
    }

    /// Additive mask over dependents for one head column.
    pub fn column(&self, head: usize) -> Vec<Real> {
        (0..self.n)
            .map(|dep| self.entries[dep * self.n + head])
            .collect()
    }

    pub fn open_count(&self) -> usize {
        self.entries.iter().filter(|&&e| e > MASK_THRESHOLD).count()
    }

    pub fn transposed(&self) -> Self {
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[j * n + i] = self.entries[i * n + j];
            }
        }
        AttentionMask { n, entries }
    }
}

// ---- parameter families ------------------------------------------------

/// Pairwise compatibility parameters, bound into one graph.
pub struct MaskedAttentionParams {
    pub w_dep: Tensor,
    pub w_head: Tensor,
    pub bias: Tensor,
    pub sharpness: Real,
    pub kind: AttentionKind,
}

pub fn register_masked_attention(params: &mut ParamSet, prefix: &str, d: usize) {
    params.insert(&format!("{prefix}.w_dep"), &[d, d], ParamKind::Weight);
    params.insert(&format!("{prefix}.w_head"), &[d, d], ParamKind::Weight);
    params.insert(&format!("{prefix}.bias"), &[d], ParamKind::Bias);
}

pub fn bind_masked_attention(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    sharpness: Real,
    kind: AttentionKind,
) -> Result<MaskedAttentionParams> {
    Ok(MaskedAttentionParams {
        w_dep: params.bind(g, &format!("{prefix}.w_dep"))?,
        w_head: params.bind(g, &format!("{prefix}.w_head"))?,
        bias: params.bind(g, &format!("{prefix}.bias"))?,
        sharpness,
        kind,
    })
}

/// Query-free compatibility for sequence compression.
pub struct Source2TokenParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub sharpness: Real,
    pub kind: AttentionKind,
}

pub fn register_source2token(params: &mut ParamSet, prefix: &str, d: usize) {
    params.insert(&format!("{prefix}.weight"), &[d, d], ParamKind::Weight);
    params.insert(&format!("{prefix}.bias"), &[d], ParamKind::Bias);
}

pub fn bind_source2token(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    sharpness: Real,
    kind: AttentionKind,
) -> Result<Source2TokenParams> {
    Ok(Source2TokenParams {
        weight: params.bind(g, &format!("{prefix}.weight"))?,
        bias: params.bind(g, &format!("{prefix}.bias"))?,
        sharpness,
        kind,
    })
}

/// Sigmoid gate that convexly combines token embeddings with their
/// attended context.
pub struct FusionGateParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn register_fusion_gate(params: &mut ParamSet, prefix: &str, d: usize) {
    params.insert(&format!("{prefix}.weight"), &[d, 2 * d], ParamKind::Weight);
    params.insert(&format!("{prefix}.bias"), &[d], ParamKind::Bias);
}

pub fn bind_fusion_gate(g: &mut Graph, params: &ParamSet, prefix: &str) -> Result<FusionGateParams> {
    Ok(FusionGateParams {
        weight: params.bind(g, &format!("{prefix}.weight"))?,
        bias: params.bind(g, &format!("{prefix}.bias"))?,
    })
}

// ---- compatibility -------------------------------------------------------

/// Per-sequence projections shared by every head: `dep_proj = W_dep X + b`,
/// `head_proj = W_head X`. Head scores then only gather and combine columns.
pub struct CompatibilityCache {
    pub dep_proj: Tensor,
    pub head_proj: Tensor,
    pub sharpness: Real,
    pub kind: AttentionKind,
}

pub fn compatibility_cache(
    g: &mut Graph,
    p: &MaskedAttentionParams,
    x: Tensor,
) -> Result<CompatibilityCache> {
    let dp = g.matmul(p.w_dep, x)?;
    let dep_proj = g.add(dp, p.bias)?;
    let head_proj = g.matmul(p.w_head, x)?;
    Ok(CompatibilityCache {
        dep_proj,
        head_proj,
        sharpness: p.sharpness,
        kind: p.kind,
    })
}

fn bounded_tanh(g: &mut Graph, pre: Tensor, sharpness: Real) -> Result<Tensor> {
    let t = g.scale(pre, 1.0 / sharpness)?;
    let t = g.tanh(t)?;
    g.scale(t, sharpness)
}

fn to_vanilla(g: &mut Graph, scores: Tensor) -> Result<Tensor> {
    // feature mean keeps the (-c, c) bound that the multi-dim scores have
    let d = g.shape(scores)[0];
    let ones = g.constant(&[1, d], vec![1.0 / d as Real; d])?;
    g.matmul(ones, scores)
}

/// Pre-softmax scores of the given dependents against one head:
/// `[d, k]` in multi-dim mode, `[1, k]` in vanilla mode.
pub fn head_scores(
    g: &mut Graph,
    cache: &CompatibilityCache,
    deps: &[usize],
    head: usize,
) -> Result<Tensor> {
    let a = g.gather_cols(cache.dep_proj, deps)?;
    let b = g.gather_cols(cache.head_proj, &[head])?;
    let pre = g.add(a, b)?;
    let scores = bounded_tanh(g, pre, cache.sharpness)?;
    match cache.kind {
        AttentionKind::MultiDim => Ok(scores),
        AttentionKind::Vanilla => to_vanilla(g, scores),
    }
}

/// Compatibility of a single `(dependent, head)` pair with its additive
/// mask entry applied: `[d]` in multi-dim mode, `[1]` in vanilla mode.
pub fn masked_compatibility(
    g: &mut Graph,
    p: &MaskedAttentionParams,
    x_dep: Tensor,
    x_head: Tensor,
    mask_entry: Real,
) -> Result<Tensor> {
    let a = g.matmul(p.w_dep, x_dep)?;
    let b = g.matmul(p.w_head, x_head)?;
    let pre = g.add(a, b)?;
    let pre = g.add(pre, p.bias)?;
    let score = bounded_tanh(g, pre, p.sharpness)?;
    let score = match p.kind {
        AttentionKind::MultiDim => score,
        AttentionKind::Vanilla => {
            let d = g.shape(score)[0];
            let ones = g.constant(&[1, d], vec![1.0 / d as Real; d])?;
            let row = g.matmul(ones, score)?; // [1, 1]
            row
        }
    };
    let m = g.scalar(mask_entry);
    g.add(score, m)
}

// ---- attention operators -------------------------------------------------

/// Query-driven attention over a sequence: softmax of compatibility scores
/// against `query`, then the probability-weighted token sum.
pub fn vanilla_attention(
    g: &mut Graph,
    p: &MaskedAttentionParams,
    x: Tensor,
    query: Tensor,
    mask: Option<&[Real]>,
) -> Result<Tensor> {
    let n = match g.shape(x) {
        [_, n] => *n,
        other => {
            return Err(Error::ShapeMismatch {
                op: "vanilla_attention",
                details: format!("expected [d, n], got {other:?}"),
            })
        }
    };
    if n == 0 {
        return Err(Error::EmptyInput {
            op: "vanilla_attention",
        });
    }
    let xs = g.matmul(p.w_dep, x)?;
    let qv = g.matmul(p.w_head, query)?;
    let pre = g.add(xs, qv)?;
    let pre = g.add(pre, p.bias)?;
    let scores = bounded_tanh(g, pre, p.sharpness)?;
    let scores = match p.kind {
        AttentionKind::MultiDim => scores,
        AttentionKind::Vanilla => to_vanilla(g, scores)?,
    };
    let open = vec![0.0; n];
    let probs = g.softmax_masked(scores, mask.unwrap_or(&open))?;
    let weighted = g.mul(probs, x)?;
    g.row_sums(weighted)
}

pub struct SelfAttentionOutput {
    /// Context features, one column per head: `[d, n]`.
    pub context: Tensor,
    /// Token-level attention rows (feature-averaged in multi-dim mode),
    /// one row of length `n` per head.
    pub head_probs: Vec<Vec<Real>>,
}

/// Masked token2token self-attention over the full mask (the dense route).
/// Head `j`'s distribution covers all dependents its mask column opens; a
/// fully blocked column falls back to the uniform distribution, i.e. the
/// mean over all dependents.
pub fn masked_self_attention(
    g: &mut Graph,
    x: Tensor,
    mask: &AttentionMask,
    p: &MaskedAttentionParams,
) -> Result<SelfAttentionOutput> {
    let n = match g.shape(x) {
        [_, n] => *n,
        other => {
            return Err(Error::ShapeMismatch {
                op: "masked_self_attention",
                details: format!("expected [d, n], got {other:?}"),
            })
        }
    };
    if mask.n() != n {
        return Err(Error::ShapeMismatch {
            op: "masked_self_attention",
            details: format!("mask is {}x{} but sequence has {} tokens", mask.n(), mask.n(), n),
        });
    }
    let cache = compatibility_cache(g, p, x)?;
    let all: Vec<usize> = (0..n).collect();
    let mut columns = Vec::with_capacity(n);
    let mut head_probs = Vec::with_capacity(n);
    for head in 0..n {
        let scores = head_scores(g, &cache, &all, head)?;
        let probs = g.softmax_masked(scores, &mask.column(head))?;
        head_probs.push(feature_average(g.values(probs), n));
        let weighted = g.mul(probs, x)?;
        columns.push(g.row_sums(weighted)?);
    }
    let context = g.concat(&columns, 1)?;
    Ok(SelfAttentionOutput {
        context,
        head_probs,
    })
}

/// Average a `[d, n]` (or `[1, n]`) probability block over its feature rows.
pub(crate) fn feature_average(values: &[Real], n: usize) -> Vec<Real> {
    let rows = values.len() / n;
    let mut out = vec![0.0; n];
    for r in 0..rows {
        for c in 0..n {
            out[c] += values[r * n + c];
        }
    }
    out.iter_mut().for_each(|v| *v /= rows as Real);
    out
}

pub struct FusionOutput {
    /// Gated combination `F (.) x + (1 - F) (.) s`, shape `[d, n]`.
    pub fused: Tensor,
    /// The gate `F` itself, shape `[d, n]`.
    pub gate: Tensor,
}

/// `F = sigmoid(W [x; s] + b)`, `u = F (.) x + (1 - F) (.) s`.
pub fn fusion_gate(
    g: &mut Graph,
    p: &FusionGateParams,
    x: Tensor,
    s: Tensor,
) -> Result<FusionOutput> {
    if g.shape(x) != g.shape(s) {
        return Err(Error::ShapeMismatch {
            op: "fusion_gate",
            details: format!("{:?} vs {:?}", g.shape(x), g.shape(s)),
        });
    }
    let joint = g.concat(&[x, s], 0)?;
    let pre = g.matmul(p.weight, joint)?;
    let pre = g.add(pre, p.bias)?;
    let gate = g.sigmoid(pre)?;
    let one = g.scalar(1.0);
    let inv = g.sub(one, gate)?;
    let gx = g.mul(gate, x)?;
    let gs = g.mul(inv, s)?;
    let fused = g.add(gx, gs)?;
    Ok(FusionOutput { fused, gate })
}

/// Positional mask + masked self-attention + fusion gate.
pub fn directional_self_attention(
    g: &mut Graph,
    x: Tensor,
    direction: Direction,
    attn: &MaskedAttentionParams,
    gate: &FusionGateParams,
) -> Result<Tensor> {
    let n = g.shape(x)[1];
    let mask = AttentionMask::positional(n, direction);
    let out = masked_self_attention(g, x, &mask, attn)?;
    Ok(fusion_gate(g, gate, x, out.context)?.fused)
}

/// Query-free attention compressing a sequence into one vector.
pub fn source2token(g: &mut Graph, p: &Source2TokenParams, x: Tensor) -> Result<Tensor> {
    let n = match g.shape(x) {
        [_, n] => *n,
        other => {
            return Err(Error::ShapeMismatch {
                op: "source2token",
                details: format!("expected [d, n], got {other:?}"),
            })
        }
    };
    if n == 0 {
        return Err(Error::EmptyInput { op: "source2token" });
    }
    let proj = g.matmul(p.weight, x)?;
    let pre = g.add(proj, p.bias)?;
    let scores = bounded_tanh(g, pre, p.sharpness)?;
    let scores = match p.kind {
        AttentionKind::MultiDim => scores,
        AttentionKind::Vanilla => to_vanilla(g, scores)?,
    };
    let probs = g.softmax_masked(scores, &vec![0.0; n])?;
    let weighted = g.mul(probs, x)?;
    g.row_sums(weighted)
}
