//! ReSA context fusion and the ReSAN sentence encoder.
//!
//! Two token samplers pick head and dependent tokens; their selections
//! form an additive mask and the soft attention only scores the selected
//! (dependent, head) pairs. Heads with nothing to attend to fall back to
//! the mean over all tokens, exactly what the uniform distribution of a
//! fully masked softmax row would produce. A fusion gate then merges each
//! token embedding with its attended context.
//!
//! The sparse route below is the production path and carries an
//! instrumented pair-evaluation counter; [`resa_dense_reference`]
//! materializes the full `n x n` computation and exists as the oracle the
//! tests compare against.

use crate::attention::{
    bind_fusion_gate, bind_masked_attention, bind_source2token, compatibility_cache,
    feature_average, fusion_gate, head_scores, masked_self_attention, register_fusion_gate,
    register_masked_attention, register_source2token, source2token, AttentionKind, AttentionMask,
    Direction, FusionGateParams, MaskedAttentionParams, Source2TokenParams, DEFAULT_SHARPNESS,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::params::ParamSet;
use crate::rng::{role, RngKey};
use crate::sampling::{
    bind_rss, register_rss, rss_features, rss_log_prob, rss_probabilities, rss_sample, Activation,
    RssParams, SampleMode,
};
use crate::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResaVariant {
    /// Both samplers, unselected heads kept via the mean-pool fallback.
    Full,
    /// Compress selected-head outputs only.
    NoUnselectedHeads,
    /// One sampler serves both roles; compress selected outputs only.
    SingleRss,
}

/// Mask applied on top of the selection mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMask {
    /// Only self-attention of a token to itself is blocked (which the
    /// selection mask already enforces).
    DiagonalOnly,
    Forward,
    Backward,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResaConfig {
    pub hidden: usize,
    pub attention: AttentionKind,
    pub variant: ResaVariant,
    /// Selection behaviour at evaluation time.
    pub eval_mode: SampleMode,
    pub base_mask: BaseMask,
    /// Sampler gate width; defaults to `hidden`.
    pub rss_hidden: usize,
    pub activation: Activation,
    pub sharpness: Real,
}

impl ResaConfig {
    pub fn new(hidden: usize) -> Self {
        ResaConfig {
            hidden,
            attention: AttentionKind::MultiDim,
            variant: ResaVariant::Full,
            eval_mode: SampleMode::Threshold,
            base_mask: BaseMask::DiagonalOnly,
            rss_hidden: hidden,
            activation: Activation::Tanh,
            sharpness: DEFAULT_SHARPNESS,
        }
    }
}

/// How the encoder chooses selections for one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionMode {
    Sample,
    ForceAll,
    Threshold,
    /// Externally fixed selections (tests, enumeration, replay).
    Fixed { z_head: Vec<bool>, z_dep: Vec<bool> },
}

/// One draw from the two samplers with its probabilities.
#[derive(Debug, Clone)]
pub struct SelectionSample {
    pub z_head: Vec<bool>,
    pub z_dep: Vec<bool>,
    pub p_head: Vec<Real>,
    pub p_dep: Vec<Real>,
    pub joint_log_prob: Real,
}

/// Inspection record for one encoded sequence.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub z_head: Vec<bool>,
    pub z_dep: Vec<bool>,
    pub p_head: Vec<Real>,
    pub p_dep: Vec<Real>,
    /// Token-level attention distribution per head row, each summing to 1;
    /// heads that attended to nothing hold the uniform `1/n` row.
    pub attention: Vec<Vec<Real>>,
    /// Feature-averaged fusion-gate value per token.
    pub gate_mean: Vec<Real>,
    /// Pairwise compatibility evaluations actually performed.
    pub pair_evaluations: usize,
}

pub struct ResaBound {
    pub rss_head: RssParams,
    /// `None` when one sampler serves both roles.
    pub rss_dep: Option<RssParams>,
    pub attn: MaskedAttentionParams,
    pub gate: FusionGateParams,
    pub pool: Source2TokenParams,
}

pub fn register_resa(params: &mut ParamSet, cfg: &ResaConfig) {
    let d = cfg.hidden;
    match cfg.variant {
        ResaVariant::SingleRss => register_rss(params, "rss_shared", d, cfg.rss_hidden),
        _ => {
            register_rss(params, "rss_head", d, cfg.rss_hidden);
            register_rss(params, "rss_dep", d, cfg.rss_hidden);
        }
    }
    register_masked_attention(params, "attn", d);
    register_fusion_gate(params, "gate", d);
    register_source2token(params, "pool", d);
}

pub fn bind_resa(g: &mut Graph, params: &ParamSet, cfg: &ResaConfig) -> Result<ResaBound> {
    let (head_prefix, dep_prefix) = match cfg.variant {
        ResaVariant::SingleRss => ("rss_shared", None),
        _ => ("rss_head", Some("rss_dep")),
    };
    Ok(ResaBound {
        rss_head: bind_rss(g, params, head_prefix, cfg.activation)?,
        rss_dep: match dep_prefix {
            Some(p) => Some(bind_rss(g, params, p, cfg.activation)?),
            None => None,
        },
        attn: bind_masked_attention(g, params, "attn", cfg.sharpness, cfg.attention)?,
        gate: bind_fusion_gate(g, params, "gate")?,
        pool: bind_source2token(g, params, "pool", cfg.sharpness, cfg.attention)?,
    })
}

/// Selection mask per the sampler outputs: `(dep, head)` open iff both are
/// selected in their roles and `dep != head`.
pub fn build_rss_mask(z_head: &[bool], z_dep: &[bool]) -> Result<AttentionMask> {
    AttentionMask::from_selection(z_head, z_dep)
}

fn base_mask(cfg: &ResaConfig, n: usize) -> Option<AttentionMask> {
    match cfg.base_mask {
        BaseMask::DiagonalOnly => None,
        BaseMask::Forward => Some(AttentionMask::positional(n, Direction::Forward)),
        BaseMask::Backward => Some(AttentionMask::positional(n, Direction::Backward)),
    }
}

pub struct ResaForward {
    /// Context-aware representations `u`, shape `[d, n]`.
    pub fused: Tensor,
    /// Raw attended context `s`, shape `[d, n]`.
    pub context: Tensor,
    pub selection: SelectionSample,
    /// Joint selection log-probability on the graph (policy-gradient hook).
    pub sel_log_prob: Tensor,
    pub trace: EncodeTrace,
    pub selected_heads: Vec<usize>,
}

/// ReSA context fusion over one embedded sequence `[d, n]`, sparse route.
pub fn resa_forward(
    g: &mut Graph,
    x: Tensor,
    bound: &ResaBound,
    cfg: &ResaConfig,
    key: RngKey,
    mode: &SelectionMode,
) -> Result<ResaForward> {
    let n = match g.shape(x) {
        [_, n] => *n,
        other => {
            return Err(Error::ShapeMismatch {
                op: "resa_forward",
                details: format!("expected [d, n], got {other:?}"),
            })
        }
    };
    if n == 0 {
        return Err(Error::EmptyInput { op: "resa_forward" });
    }
    let keep = vec![true; n];

    // Selection probabilities; the pooled features are shared by both roles.
    let feats = rss_features(g, x, &keep)?;
    let p_head_t = rss_probabilities(g, feats, &bound.rss_head)?;
    let p_dep_t = match &bound.rss_dep {
        Some(p) => rss_probabilities(g, feats, p)?,
        None => p_head_t,
    };
    let p_head = g.values(p_head_t).to_vec();
    let p_dep = g.values(p_dep_t).to_vec();
    let shared = bound.rss_dep.is_none();

    let (z_head, z_dep) = match mode {
        SelectionMode::Sample => {
            let zh = rss_sample(&p_head, key.with(role::HEAD), SampleMode::Sample);
            let zd = if shared {
                zh.clone()
            } else {
                rss_sample(&p_dep, key.with(role::DEP), SampleMode::Sample)
            };
            (zh, zd)
        }
        SelectionMode::ForceAll => (vec![true; n], vec![true; n]),
        SelectionMode::Threshold => {
            let zh = rss_sample(&p_head, key, SampleMode::Threshold);
            let zd = rss_sample(&p_dep, key, SampleMode::Threshold);
            (zh, zd)
        }
        SelectionMode::Fixed { z_head, z_dep } => {
            if z_head.len() != n || z_dep.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "resa_forward",
                    details: format!("fixed selections sized for {} tokens, sequence has {n}", z_head.len()),
                });
            }
            (z_head.clone(), z_dep.clone())
        }
    };

    let lp_head = rss_log_prob(g, p_head_t, &z_head)?;
    let sel_log_prob = if shared {
        lp_head
    } else {
        let lp_dep = rss_log_prob(g, p_dep_t, &z_dep)?;
        g.add(lp_head, lp_dep)?
    };

    let mut mask = build_rss_mask(&z_head, &z_dep)?;
    if let Some(base) = base_mask(cfg, n) {
        mask = mask.intersect(&base)?;
    }

    // Sparse attention: score only pairs the mask leaves open; every other
    // head takes the mean over all tokens.
    let cache = compatibility_cache(g, &bound.attn, x)?;
    let mean_all = g.mean_pool(x, &keep)?;
    let uniform_row = vec![1.0 / n as Real; n];
    let mut columns = Vec::with_capacity(n);
    let mut attention = Vec::with_capacity(n);
    let mut pair_evaluations = 0;
    for (head, &head_selected) in z_head.iter().enumerate() {
        let deps: Vec<usize> = if head_selected {
            (0..n).filter(|&dep| mask.allows(dep, head)).collect()
        } else {
            Vec::new()
        };
        if deps.is_empty() {
            columns.push(mean_all);
            attention.push(uniform_row.clone());
            continue;
        }
        pair_evaluations += deps.len();
        let scores = head_scores(g, &cache, &deps, head)?;
        let probs = g.softmax_masked(scores, &vec![0.0; deps.len()])?;
        let dense_row = {
            let compact = feature_average(g.values(probs), deps.len());
            let mut row = vec![0.0; n];
            for (slot, &dep) in deps.iter().enumerate() {
                row[dep] = compact[slot];
            }
            row
        };
        attention.push(dense_row);
        let gathered = g.gather_cols(x, &deps)?;
        let weighted = g.mul(probs, gathered)?;
        columns.push(g.row_sums(weighted)?);
    }
    let context = g.concat(&columns, 1)?;
    let fused_out = fusion_gate(g, &bound.gate, x, context)?;
    let gate_mean = feature_average(g.values(fused_out.gate), n);

    let joint_log_prob = g.scalar_value(sel_log_prob);
    let selected_heads: Vec<usize> = (0..n).filter(|&j| z_head[j]).collect();
    Ok(ResaForward {
        fused: fused_out.fused,
        context,
        selection: SelectionSample {
            z_head: z_head.clone(),
            z_dep: z_dep.clone(),
            p_head: p_head.clone(),
            p_dep: p_dep.clone(),
            joint_log_prob,
        },
        sel_log_prob,
        trace: EncodeTrace {
            z_head,
            z_dep,
            p_head,
            p_dep,
            attention,
            gate_mean,
            pair_evaluations,
        },
        selected_heads,
    })
}

/// Dense oracle: materialize all `n x n` scores, mask additively, softmax
/// every column. Shares the compatibility formula with the sparse route;
/// what it cross-checks is the gather/fallback bookkeeping.
pub fn resa_dense_reference(
    g: &mut Graph,
    x: Tensor,
    bound: &ResaBound,
    cfg: &ResaConfig,
    z_head: &[bool],
    z_dep: &[bool],
) -> Result<(Tensor, Vec<Vec<Real>>)> {
    let n = g.shape(x)[1];
    let mut mask = build_rss_mask(z_head, z_dep)?;
    if let Some(base) = base_mask(cfg, n) {
        mask = mask.intersect(&base)?;
    }
    let out = masked_self_attention(g, x, &mask, &bound.attn)?;
    let fused = fusion_gate(g, &bound.gate, x, out.context)?;
    // transpose token-level rows to head-major like the sparse trace
    let mut rows = vec![vec![0.0; n]; n];
    for (head, col) in out.head_probs.iter().enumerate() {
        for (dep, &p) in col.iter().enumerate() {
            rows[head][dep] = p;
        }
    }
    Ok((fused.fused, rows))
}

/// Sentence encoding: ReSA followed by source2token compression.
/// The simplified variants compress selected-head outputs only, falling
/// back to all positions when nothing was selected.
pub fn resan_encode(
    g: &mut Graph,
    x: Tensor,
    bound: &ResaBound,
    cfg: &ResaConfig,
    key: RngKey,
    mode: &SelectionMode,
) -> Result<(Tensor, ResaForward)> {
    let forward = resa_forward(g, x, bound, cfg, key, mode)?;
    let pooled_input = match cfg.variant {
        ResaVariant::Full => forward.fused,
        ResaVariant::NoUnselectedHeads | ResaVariant::SingleRss => {
            if forward.selected_heads.is_empty() {
                forward.fused
            } else {
                g.gather_cols(forward.fused, &forward.selected_heads)?
            }
        }
    };
    let encoding = source2token(g, &bound.pool, pooled_input)?;
    Ok((encoding, forward))
}

// ---- sentence-pair features ----------------------------------------------

/// Classification features `[s_p; s_h; s_p - s_h; s_p (.) s_h]`.
pub fn pair_features_classify(g: &mut Graph, premise: Tensor, hypothesis: Tensor) -> Result<Tensor> {
    if g.shape(premise) != g.shape(hypothesis) {
        return Err(Error::ShapeMismatch {
            op: "pair_features_classify",
            details: format!("{:?} vs {:?}", g.shape(premise), g.shape(hypothesis)),
        });
    }
    let diff = g.sub(premise, hypothesis)?;
    let prod = g.mul(premise, hypothesis)?;
    g.concat(&[premise, hypothesis, diff, prod], 0)
}

/// Regression features `[s_1 (.) s_2; |s_1 - s_2|]`.
pub fn pair_features_regress(g: &mut Graph, a: Tensor, b: Tensor) -> Result<Tensor> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::ShapeMismatch {
            op: "pair_features_regress",
            details: format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        });
    }
    let prod = g.mul(a, b)?;
    let diff = g.sub(a, b)?;
    let absdiff = g.abs(diff)?;
    g.concat(&[prod, absdiff], 0)
}

/// Expected rating of a K-way distribution over levels `1..=K`.
pub fn expected_rating(distribution: &[Real]) -> Real {
    distribution
        .iter()
        .enumerate()
        .map(|(k, &p)| (k + 1) as Real * p)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn setup(cfg: &ResaConfig, seed: u64) -> ParamSet {
        let mut params = ParamSet::new();
        register_resa(&mut params, cfg);
        params.initialize(RngKey::new(seed));
        params
    }

    fn random_x(g: &mut Graph, d: usize, n: usize, seed: u64) -> Tensor {
        let mut rng = RngKey::new(seed).stream();
        let vals: Vec<Real> = (0..d * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        g.matrix(d, n, vals).unwrap()
    }

    #[test]
    fn rss_mask_case_analysis() {
        // z_dep = [1,1], z_head = [1,0]
        let m = build_rss_mask(&[true, false], &[true, true]).unwrap();
        assert!(!m.allows(0, 0)); // diagonal
        assert!(m.allows(1, 0));
        assert!(!m.allows(0, 1)); // head 1 unselected
        assert!(!m.allows(1, 1));
    }

    #[test]
    fn rss_mask_all_selected() {
        let m = build_rss_mask(&[true; 3], &[true; 3]).unwrap();
        for dep in 0..3 {
            for head in 0..3 {
                assert_eq!(m.allows(dep, head), dep != head);
            }
        }
    }

    #[test]
    fn rss_mask_no_heads_blocks_everything() {
        let m = build_rss_mask(&[false; 3], &[true; 3]).unwrap();
        assert_eq!(m.open_count(), 0);
    }

    #[test]
    fn rss_mask_length_mismatch() {
        assert!(build_rss_mask(&[true], &[true, false]).is_err());
    }

    #[test]
    fn force_all_matches_dense_reference() {
        let cfg = ResaConfig::new(5);
        let params = setup(&cfg, 3);
        let mut g = Graph::new();
        let bound = bind_resa(&mut g, &params, &cfg).unwrap();
        let x = random_x(&mut g, 5, 4, 4);
        let sparse = resa_forward(
            &mut g,
            x,
            &bound,
            &cfg,
            RngKey::new(0),
            &SelectionMode::ForceAll,
        )
        .unwrap();
        let (dense, dense_rows) =
            resa_dense_reference(&mut g, x, &bound, &cfg, &[true; 4], &[true; 4]).unwrap();
        let sv = g.values(sparse.fused);
        let dv = g.values(dense);
        for (a, b) in sv.iter().zip(dv) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
            assert!(rel <= 1e-10, "{a} vs {b}");
        }
        for (srow, drow) in sparse.trace.attention.iter().zip(&dense_rows) {
            for (a, b) in srow.iter().zip(drow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pair_counter_is_exact() {
        let cfg = ResaConfig::new(4);
        let params = setup(&cfg, 9);
        let mut rng = RngKey::new(10).stream();
        for _ in 0..20 {
            let n = rng.gen_range(2..7);
            let z_head: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let z_dep: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let h = z_head.iter().filter(|&&z| z).count();
            let k = z_dep.iter().filter(|&&z| z).count();
            let overlap = z_head
                .iter()
                .zip(&z_dep)
                .filter(|(&a, &b)| a && b)
                .count();
            let mut g = Graph::new();
            let bound = bind_resa(&mut g, &params, &cfg).unwrap();
            let x = random_x(&mut g, 4, n, rng.gen());
            let fwd = resa_forward(
                &mut g,
                x,
                &bound,
                &cfg,
                RngKey::new(0),
                &SelectionMode::Fixed {
                    z_head: z_head.clone(),
                    z_dep: z_dep.clone(),
                },
            )
            .unwrap();
            assert_eq!(fwd.trace.pair_evaluations, h * k - overlap);
        }
    }

    #[test]
    fn unselected_head_rows_are_uniform() {
        let cfg = ResaConfig::new(3);
        let params = setup(&cfg, 21);
        let mut g = Graph::new();
        let bound = bind_resa(&mut g, &params, &cfg).unwrap();
        let x = random_x(&mut g, 3, 5, 22);
        let fwd = resa_forward(
            &mut g,
            x,
            &bound,
            &cfg,
            RngKey::new(0),
            &SelectionMode::Fixed {
                z_head: vec![true, false, true, false, false],
                z_dep: vec![true, true, false, false, true],
            },
        )
        .unwrap();
        for (head, row) in fwd.trace.attention.iter().enumerate() {
            let total: Real = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "head {head} row sums to {total}");
            if !fwd.selection.z_head[head] {
                assert!(row.iter().all(|&p| (p - 0.2).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn zero_selected_heads_still_encodes() {
        let cfg = ResaConfig::new(3);
        let params = setup(&cfg, 31);
        let mut g = Graph::new();
        let bound = bind_resa(&mut g, &params, &cfg).unwrap();
        let x = random_x(&mut g, 3, 4, 32);
        let (e, fwd) = resan_encode(
            &mut g,
            x,
            &bound,
            &cfg,
            RngKey::new(0),
            &SelectionMode::Fixed {
                z_head: vec![false; 4],
                z_dep: vec![false; 4],
            },
        )
        .unwrap();
        assert_eq!(g.shape(e), &[3]);
        assert_eq!(fwd.trace.pair_evaluations, 0);
        assert!(g.values(e).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn variants_differ_on_mixed_selection() {
        let d = 4;
        let n = 5;
        let fixed = SelectionMode::Fixed {
            z_head: vec![true, false, true, false, true],
            z_dep: vec![true, true, false, true, false],
        };
        let encode = |variant: ResaVariant| -> Vec<Real> {
            let mut cfg = ResaConfig::new(d);
            cfg.variant = variant;
            // share one parameter layout across variants for comparability
            let mut params = ParamSet::new();
            register_rss(&mut params, "rss_head", d, cfg.rss_hidden);
            register_rss(&mut params, "rss_dep", d, cfg.rss_hidden);
            register_rss(&mut params, "rss_shared", d, cfg.rss_hidden);
            register_masked_attention(&mut params, "attn", d);
            register_fusion_gate(&mut params, "gate", d);
            register_source2token(&mut params, "pool", d);
            params.initialize(RngKey::new(41));
            let mut g = Graph::new();
            let bound = bind_resa(&mut g, &params, &cfg).unwrap();
            let x = random_x(&mut g, d, n, 42);
            let (e, _) = resan_encode(&mut g, x, &bound, &cfg, RngKey::new(0), &fixed).unwrap();
            g.values(e).to_vec()
        };
        let full = encode(ResaVariant::Full);
        let trimmed = encode(ResaVariant::NoUnselectedHeads);
        let diff: Real = full.iter().zip(&trimmed).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-9, "variants should disagree, diff {diff}");
    }

    #[test]
    fn single_rss_uses_one_selection() {
        let mut cfg = ResaConfig::new(3);
        cfg.variant = ResaVariant::SingleRss;
        let params = setup(&cfg, 51);
        let mut g = Graph::new();
        let bound = bind_resa(&mut g, &params, &cfg).unwrap();
        let x = random_x(&mut g, 3, 6, 52);
        let fwd = resa_forward(
            &mut g,
            x,
            &bound,
            &cfg,
            RngKey::new(7),
            &SelectionMode::Sample,
        )
        .unwrap();
        assert_eq!(fwd.selection.z_head, fwd.selection.z_dep);
        assert_eq!(fwd.selection.p_head, fwd.selection.p_dep);
    }

    #[test]
    fn single_token_encoding_is_deterministic() {
        let cfg = ResaConfig::new(4);
        let params = setup(&cfg, 61);
        let run = || -> Vec<Real> {
            let mut g = Graph::new();
            let bound = bind_resa(&mut g, &params, &cfg).unwrap();
            let x = g.matrix(4, 1, vec![0.3, -0.8, 0.1, 0.9]).unwrap();
            let (e, _) =
                resan_encode(&mut g, x, &bound, &cfg, RngKey::new(5), &SelectionMode::ForceAll)
                    .unwrap();
            g.values(e).to_vec()
        };
        let a = run();
        assert_eq!(a.len(), 4);
        assert_eq!(a, run());
    }

    #[test]
    fn classify_features_block_structure() {
        let mut g = Graph::new();
        let p = g.vector(&[1.0, 2.0]);
        let h = g.vector(&[1.0, 2.0]);
        let f = pair_features_classify(&mut g, p, h).unwrap();
        assert_eq!(g.values(f), &[1.0, 2.0, 1.0, 2.0, 0.0, 0.0, 1.0, 4.0]);

        let mut g = Graph::new();
        let p = g.vector(&[3.0, -1.0]);
        let zero = g.vector(&[0.0, 0.0]);
        let f = pair_features_classify(&mut g, p, zero).unwrap();
        assert_eq!(g.values(f), &[3.0, -1.0, 0.0, 0.0, 3.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn regress_features() {
        let mut g = Graph::new();
        let a = g.vector(&[2.0, -3.0]);
        let b = g.vector(&[4.0, 5.0]);
        let f = pair_features_regress(&mut g, a, b).unwrap();
        assert_eq!(g.values(f), &[8.0, -15.0, 2.0, 8.0]);
    }

    #[test]
    fn expected_rating_cases() {
        assert_eq!(expected_rating(&[0.0, 0.0, 0.0, 0.0, 1.0]), 5.0);
        assert!((expected_rating(&[0.2; 5]) - 3.0).abs() < 1e-12);
        assert!((expected_rating(&[0.0, 0.0, 0.0, 0.5, 0.5]) - 4.5).abs() < 1e-12);
    }
}
