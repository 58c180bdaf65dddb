//! The full gradient-check suite: every parameterized operation against
//! central finite differences on randomized small instances. Run from the
//! CLI (`resan gradcheck`) and by the acceptance tests.

use crate::attention::{
    bind_fusion_gate, bind_masked_attention, bind_source2token, directional_self_attention,
    fusion_gate, masked_self_attention, register_fusion_gate, register_masked_attention,
    register_source2token, source2token, AttentionKind, AttentionMask, Direction,
};
use crate::encoder::{resa_forward, ResaConfig, SelectionMode};
use crate::error::Result;
use crate::gradcheck::{finite_difference_named, max_relative_error};
use crate::graph::Graph;
use crate::model::{ModelConfig, PreparedExample, ResanModel, Target};
use crate::params::{GradMap, ParamSet};
use crate::rng::RngKey;
use crate::sampling::{bind_rss, register_rss, rss_features, rss_log_prob, rss_probabilities, Activation};
use crate::training::supervised_loss;
use crate::Real;
use rand::Rng;

pub const GRAD_TOLERANCE: Real = 1e-4;
pub const FD_EPSILON: Real = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_relative_error: Real,
    pub passed: bool,
}

fn check<F>(name: &str, params: &ParamSet, analytic: &GradMap, eval: F, out: &mut Vec<CheckResult>)
where
    F: Fn(&ParamSet) -> Real,
{
    for (pname, agrad) in analytic.iter() {
        let numeric = finite_difference_named(&eval, params, pname, FD_EPSILON)
            .expect("finite differences stay finite on these instances");
        let err = max_relative_error(agrad, &numeric);
        out.push(CheckResult {
            name: format!("{name}/{pname}"),
            max_relative_error: err,
            passed: err < GRAD_TOLERANCE,
        });
    }
}

fn collect_grads(g: &Graph, keep: impl Fn(&str) -> bool) -> GradMap {
    let mut grads = GradMap::new();
    for (name, grad) in g.param_gradients() {
        if keep(name) {
            grads.accumulate(name, grad, 1.0);
        }
    }
    grads
}

fn random_values(key: RngKey, count: usize) -> Vec<Real> {
    let mut rng = key.stream();
    (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Masked self-attention (scores, softmax, weighted sum) through all of
/// its parameters, both score granularities.
fn check_masked_attention(seed: u64, out: &mut Vec<CheckResult>) {
    for (label, kind) in [
        ("masked_self_attention/multi_dim", AttentionKind::MultiDim),
        ("masked_self_attention/vanilla", AttentionKind::Vanilla),
    ] {
        let (d, n) = (5, 5);
        let mut params = ParamSet::new();
        register_masked_attention(&mut params, "attn", d);
        params.initialize(RngKey::new(seed));
        let x_vals = random_values(RngKey::new(seed).with(1), d * n);
        let mask = AttentionMask::positional(n, Direction::Forward);
        let eval = |ps: &ParamSet| -> Real {
            let mut g = Graph::new();
            let p = bind_masked_attention(&mut g, ps, "attn", 5.0, kind).unwrap();
            let x = g.matrix(d, n, x_vals.clone()).unwrap();
            let attn = masked_self_attention(&mut g, x, &mask, &p).unwrap();
            let s = g.sum(attn.context).unwrap();
            g.scalar_value(s)
        };
        let mut g = Graph::new();
        let p = bind_masked_attention(&mut g, &params, "attn", 5.0, kind).unwrap();
        let x = g.matrix(d, n, x_vals.clone()).unwrap();
        let attn = masked_self_attention(&mut g, x, &mask, &p).unwrap();
        let s = g.sum(attn.context).unwrap();
        g.backward(s).unwrap();
        let analytic = collect_grads(&g, |_| true);
        check(label, &params, &analytic, eval, out);
    }
}

/// Sampler features + probabilities + selection log-probability (the
/// policy-gradient path).
fn check_rss(seed: u64, out: &mut Vec<CheckResult>) {
    let (d, n, dh) = (4, 5, 4);
    let mut params = ParamSet::new();
    register_rss(&mut params, "rss_head", d, dh);
    params.initialize(RngKey::new(seed));
    let x_vals = random_values(RngKey::new(seed).with(2), d * n);
    let z = vec![true, false, true, true, false];
    let eval = |ps: &ParamSet| -> Real {
        let mut g = Graph::new();
        let p = bind_rss(&mut g, ps, "rss_head", Activation::Tanh).unwrap();
        let x = g.matrix(d, n, x_vals.clone()).unwrap();
        let h = rss_features(&mut g, x, &[true; 5]).unwrap();
        let probs = rss_probabilities(&mut g, h, &p).unwrap();
        let lp = rss_log_prob(&mut g, probs, &z).unwrap();
        g.scalar_value(lp)
    };
    let mut g = Graph::new();
    let p = bind_rss(&mut g, &params, "rss_head", Activation::Tanh).unwrap();
    let x = g.matrix(d, n, x_vals.clone()).unwrap();
    let h = rss_features(&mut g, x, &[true; 5]).unwrap();
    let probs = rss_probabilities(&mut g, h, &p).unwrap();
    let lp = rss_log_prob(&mut g, probs, &z).unwrap();
    g.backward(lp).unwrap();
    let analytic = collect_grads(&g, |_| true);
    check("rss_log_prob", &params, &analytic, eval, out);
}

/// Fusion gate through its parameters.
fn check_fusion_gate(seed: u64, out: &mut Vec<CheckResult>) {
    let (d, n) = (4, 4);
    let mut params = ParamSet::new();
    register_fusion_gate(&mut params, "gate", d);
    params.initialize(RngKey::new(seed));
    let x_vals = random_values(RngKey::new(seed).with(3), d * n);
    let s_vals = random_values(RngKey::new(seed).with(4), d * n);
    let eval = |ps: &ParamSet| -> Real {
        let mut g = Graph::new();
        let p = bind_fusion_gate(&mut g, ps, "gate").unwrap();
        let x = g.matrix(d, n, x_vals.clone()).unwrap();
        let s = g.matrix(d, n, s_vals.clone()).unwrap();
        let f = fusion_gate(&mut g, &p, x, s).unwrap();
        let total = g.sum(f.fused).unwrap();
        g.scalar_value(total)
    };
    let mut g = Graph::new();
    let p = bind_fusion_gate(&mut g, &params, "gate").unwrap();
    let x = g.matrix(d, n, x_vals.clone()).unwrap();
    let s = g.matrix(d, n, s_vals.clone()).unwrap();
    let f = fusion_gate(&mut g, &p, x, s).unwrap();
    let total = g.sum(f.fused).unwrap();
    g.backward(total).unwrap();
    let analytic = collect_grads(&g, |_| true);
    check("fusion_gate", &params, &analytic, eval, out);
}

/// Directional self-attention end to end (mask + attention + gate).
fn check_directional(seed: u64, out: &mut Vec<CheckResult>) {
    let (d, n) = (4, 4);
    let mut params = ParamSet::new();
    register_masked_attention(&mut params, "attn", d);
    register_fusion_gate(&mut params, "gate", d);
    params.initialize(RngKey::new(seed));
    let x_vals = random_values(RngKey::new(seed).with(5), d * n);
    let eval = |ps: &ParamSet| -> Real {
        let mut g = Graph::new();
        let ap = bind_masked_attention(&mut g, ps, "attn", 5.0, AttentionKind::MultiDim).unwrap();
        let gp = bind_fusion_gate(&mut g, ps, "gate").unwrap();
        let x = g.matrix(d, n, x_vals.clone()).unwrap();
        let u = directional_self_attention(&mut g, x, Direction::Backward, &ap, &gp).unwrap();
        let total = g.sum(u).unwrap();
        g.scalar_value(total)
    };
    let mut g = Graph::new();
    let ap = bind_masked_attention(&mut g, &params, "attn", 5.0, AttentionKind::MultiDim).unwrap();
    let gp = bind_fusion_gate(&mut g, &params, "gate").unwrap();
    let x = g.matrix(d, n, x_vals.clone()).unwrap();
    let u = directional_self_attention(&mut g, x, Direction::Backward, &ap, &gp).unwrap();
    let total = g.sum(u).unwrap();
    g.backward(total).unwrap();
    let analytic = collect_grads(&g, |_| true);
    check("directional_self_attention", &params, &analytic, eval, out);
}

/// Source2token compression through its parameters.
fn check_source2token(seed: u64, out: &mut Vec<CheckResult>) {
    let (d, n) = (5, 4);
    let mut params = ParamSet::new();
    register_source2token(&mut params, "pool", d);
    params.initialize(RngKey::new(seed));
    let x_vals = random_values(RngKey::new(seed).with(6), d * n);
    let eval = |ps: &ParamSet| -> Real {
        let mut g = Graph::new();
        let p = bind_source2token(&mut g, ps, "pool", 5.0, AttentionKind::MultiDim).unwrap();
        let x = g.matrix(d, n, x_vals.clone()).unwrap();
        let e = source2token(&mut g, &p, x).unwrap();
        let total = g.sum(e).unwrap();
        g.scalar_value(total)
    };
    let mut g = Graph::new();
    let p = bind_source2token(&mut g, &params, "pool", 5.0, AttentionKind::MultiDim).unwrap();
    let x = g.matrix(d, n, x_vals.clone()).unwrap();
    let e = source2token(&mut g, &p, x).unwrap();
    let total = g.sum(e).unwrap();
    g.backward(total).unwrap();
    let analytic = collect_grads(&g, |_| true);
    check("source2token", &params, &analytic, eval, out);
}

/// ReSA context fusion with frozen selections, through the soft parameters.
fn check_resa(seed: u64, out: &mut Vec<CheckResult>) {
    let (d, n) = (4, 5);
    let cfg = ResaConfig::new(d);
    let mut params = ParamSet::new();
    crate::encoder::register_resa(&mut params, &cfg);
    params.initialize(RngKey::new(seed));
    let x_vals = random_values(RngKey::new(seed).with(7), d * n);
    let mode = SelectionMode::Fixed {
        z_head: vec![true, false, true, true, false],
        z_dep: vec![true, true, false, true, true],
    };
    let eval = |ps: &ParamSet| -> Real {
        let mut g = Graph::new();
        let bound = crate::encoder::bind_resa(&mut g, ps, &cfg).unwrap();
        let x = g.matrix(d, n, x_vals.clone()).unwrap();
        let fwd = resa_forward(&mut g, x, &bound, &cfg, RngKey::new(0), &mode).unwrap();
        let total = g.sum(fwd.fused).unwrap();
        g.scalar_value(total)
    };
    let mut g = Graph::new();
    let bound = crate::encoder::bind_resa(&mut g, &params, &cfg).unwrap();
    let x = g.matrix(d, n, x_vals.clone()).unwrap();
    let fwd = resa_forward(&mut g, x, &bound, &cfg, RngKey::new(0), &mode).unwrap();
    let total = g.sum(fwd.fused).unwrap();
    g.backward(total).unwrap();
    // the selection log-probability is a separate objective; the fused
    // output depends on the attention/gate parameters only
    let analytic = collect_grads(&g, |name| !name.starts_with("rss_"));
    check("resa_forward", &params, &analytic, eval, out);
}

/// Full model losses, both branches, through every supervised parameter
/// with selections frozen.
fn check_losses(seed: u64, out: &mut Vec<CheckResult>) {
    // classification branch (single sentence)
    {
        let mut config = ModelConfig::classify(4, 3, false, 9);
        config.classifier_hidden = 4;
        let model = ResanModel::new(config, seed);
        let item = PreparedExample {
            tokens_a: vec![1, 4, 7, 2],
            tokens_b: vec![],
            target: Target::Class(1),
        };
        run_loss_check("supervised_loss/classification", &model, &item, out);
    }
    // rating branch (pair; equal lengths so one fixed mask fits both)
    {
        let mut config = ModelConfig::rate(4, 5, 9);
        config.classifier_hidden = 4;
        let model = ResanModel::new(config, seed + 1);
        let item = PreparedExample {
            tokens_a: vec![0, 3, 6, 4],
            tokens_b: vec![2, 5, 8, 1],
            target: Target::Rating(3.5),
        };
        run_loss_check("supervised_loss/rating", &model, &item, out);
    }
}

fn run_loss_check(
    label: &str,
    model: &ResanModel,
    item: &PreparedExample,
    out: &mut Vec<CheckResult>,
) {
    let n = item.tokens_a.len();
    let mode = SelectionMode::Fixed {
        z_head: (0..n).map(|i| i % 2 == 0).collect(),
        z_dep: (0..n).map(|i| i != 1).collect(),
    };
    let eval_with = {
        let mode = mode.clone();
        move |ps: &ParamSet| -> Real {
            let stand_in = ResanModel {
                config: model.config.clone(),
                params: ps.clone(),
            };
            let mut g = Graph::new();
            let bound = stand_in.bind(&mut g).unwrap();
            let fwd = stand_in
                .forward_example(&mut g, &bound, item, &mode, RngKey::new(0), None)
                .unwrap();
            let l2 = stand_in.l2_penalty(&mut g, &bound).unwrap();
            let loss = supervised_loss(&mut g, fwd.probs, &item.target, l2, 5e-5).unwrap();
            g.scalar_value(loss)
        }
    };
    let mut g = Graph::new();
    let bound = model.bind(&mut g).unwrap();
    let fwd = model
        .forward_example(&mut g, &bound, item, &mode, RngKey::new(0), None)
        .unwrap();
    let l2 = model.l2_penalty(&mut g, &bound).unwrap();
    let loss = supervised_loss(&mut g, fwd.probs, &item.target, l2, 5e-5).unwrap();
    g.backward(loss).unwrap();
    let analytic = collect_grads(&g, |name| !name.starts_with("rss_"));
    check(label, &model.params, &analytic, eval_with, out);
}

/// Run every gradient check; `seed` drives all randomized instances.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    check_masked_attention(seed, &mut out);
    check_rss(seed, &mut out);
    check_fusion_gate(seed, &mut out);
    check_directional(seed, &mut out);
    check_source2token(seed, &mut out);
    check_resa(seed, &mut out);
    check_losses(seed, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let results = gradient_suite(12345).unwrap();
        assert!(results.len() > 10);
        for r in &results {
            assert!(
                r.passed,
                "{} failed with relative error {}",
                r.name, r.max_relative_error
            );
        }
    }
}
