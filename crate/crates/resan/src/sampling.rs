//! Reinforced sequence sampling: token selection by independent Bernoulli
//! draws whose probabilities come from a learned gate over mean-pooled
//! context features. All positions are scored and sampled in parallel;
//! that independence is the whole point, and the sequential
//! iterative-sampling baseline at the bottom of the module is the foil the
//! benches compare against.

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::par;
use crate::params::{ParamKind, ParamSet};
use crate::rng::RngKey;
use crate::Real;
use serde::{Deserialize, Serialize};

/// Selection probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`
/// inside log-probabilities so degenerate gates keep finite scores.
pub const PROB_CLAMP: Real = 1e-6;

/// Element-wise nonlinearity inside the selection gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

fn apply_activation(g: &mut Graph, t: Tensor, act: Activation) -> Result<Tensor> {
    match act {
        Activation::Tanh => g.tanh(t),
        Activation::Relu => g.clamp(t, 0.0, Real::INFINITY),
    }
}

fn activate(x: Real, act: Activation) -> Real {
    match act {
        Activation::Tanh => x.tanh(),
        Activation::Relu => x.max(0.0),
    }
}

// ---- graph route (differentiable, used by training) ----------------------

/// One sampler's parameters bound into a graph.
pub struct RssParams {
    pub feat_w: Tensor,
    pub feat_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
    pub activation: Activation,
}

pub fn register_rss(params: &mut ParamSet, prefix: &str, d: usize, hidden: usize) {
    params.insert(&format!("{prefix}.feat_w"), &[hidden, 3 * d], ParamKind::Weight);
    params.insert(&format!("{prefix}.feat_b"), &[hidden], ParamKind::Bias);
    params.insert(&format!("{prefix}.out_w"), &[1, hidden], ParamKind::Weight);
    params.insert(&format!("{prefix}.out_b"), &[1], ParamKind::Bias);
}

pub fn bind_rss(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    activation: Activation,
) -> Result<RssParams> {
    Ok(RssParams {
        feat_w: params.bind(g, &format!("{prefix}.feat_w"))?,
        feat_b: params.bind(g, &format!("{prefix}.feat_b"))?,
        out_w: params.bind(g, &format!("{prefix}.out_w"))?,
        out_b: params.bind(g, &format!("{prefix}.out_b"))?,
        activation,
    })
}

/// Per-token context features `h_i = [x_i; mean(x); x_i (.) mean(x)]`,
/// stacked as `[3d, n]`. The mean runs over `keep`-true positions only.
pub fn rss_features(g: &mut Graph, x: Tensor, keep: &[bool]) -> Result<Tensor> {
    let n = match g.shape(x) {
        [_, n] => *n,
        other => {
            return Err(Error::ShapeMismatch {
                op: "rss_features",
                details: format!("expected [d, n], got {other:?}"),
            })
        }
    };
    if n == 0 {
        return Err(Error::EmptyInput { op: "rss_features" });
    }
    let mean = g.mean_pool(x, keep)?;
    let tiled = g.repeat_cols(mean, n)?;
    let prod = g.mul(x, tiled)?;
    g.concat(&[x, tiled, prod], 0)
}

/// Selection probabilities `p_i = sigmoid(w^T act(W h_i + b_f) + b)`,
/// one per column, shape `[1, n]`.
pub fn rss_probabilities(g: &mut Graph, h: Tensor, p: &RssParams) -> Result<Tensor> {
    let a = g.matmul(p.feat_w, h)?;
    let a = g.add(a, p.feat_b)?;
    let a = apply_activation(g, a, p.activation)?;
    let logits = g.matmul(p.out_w, a)?;
    let logits = g.add(logits, p.out_b)?;
    g.sigmoid(logits)
}

/// How selections are drawn from the probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Independent Bernoulli draws from per-position streams.
    Sample,
    /// Select every token (warmup behaviour).
    ForceAll,
    /// Deterministic `p_i >= 0.5` (default at evaluation time).
    Threshold,
}

/// Draw a selection vector. `key` should already encode (seed, batch item,
/// sampler role); positions derive their own streams from it, so draws are
/// identical under any evaluation order.
pub fn rss_sample(probs: &[Real], key: RngKey, mode: SampleMode) -> Vec<bool> {
    match mode {
        SampleMode::ForceAll => vec![true; probs.len()],
        SampleMode::Threshold => probs.iter().map(|&p| p >= 0.5).collect(),
        SampleMode::Sample => probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (key.with(i as u64).uniform() as Real) < p)
            .collect(),
    }
}

/// Joint log-probability of a selection under the product distribution:
/// `sum_i z_i log p_i + (1 - z_i) log(1 - p_i)`, with probabilities
/// clamped. Differentiable w.r.t. whatever produced `probs`.
pub fn rss_log_prob(g: &mut Graph, probs: Tensor, z: &[bool]) -> Result<Tensor> {
    let shape = g.shape(probs).to_vec();
    let count: usize = shape.iter().product();
    if count != z.len() {
        return Err(Error::ShapeMismatch {
            op: "rss_log_prob",
            details: format!("{} probabilities vs {} selections", count, z.len()),
        });
    }
    let clamped = g.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let zvals: Vec<Real> = z.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let zt = g.constant(&shape, zvals)?;
    let one = g.scalar(1.0);
    let not_z = g.sub(one, zt)?;
    let comp = g.sub(one, clamped)?;
    let lp = g.log(clamped)?;
    let lq = g.log(comp)?;
    let t1 = g.mul(zt, lp)?;
    let t2 = g.mul(not_z, lq)?;
    let total = g.add(t1, t2)?;
    g.sum(total)
}

// ---- forward-only route (evaluation and benches) -------------------------

/// Tape-free RSS evaluator over position-major tokens (`n * d`, each token
/// contiguous). Exploits what makes the sampler parallel: the pooled
/// context is shared, so `W1 x_i + W3 (x_i (.) mean)` folds into a single
/// per-sequence matrix applied independently to every position.
#[derive(Debug, Clone)]
pub struct RssFast {
    d: usize,
    hidden: usize,
    feat_w: Vec<Real>,
    feat_b: Vec<Real>,
    out_w: Vec<Real>,
    out_b: Real,
    activation: Activation,
}

impl RssFast {
    pub fn from_params(params: &ParamSet, prefix: &str, activation: Activation) -> Result<Self> {
        let feat = params
            .get(&format!("{prefix}.feat_w"))
            .ok_or_else(|| Error::UnknownParam(format!("{prefix}.feat_w")))?;
        let hidden = feat.shape[0];
        let d = feat.shape[1] / 3;
        Ok(RssFast {
            d,
            hidden,
            feat_w: feat.values.clone(),
            feat_b: params.get(&format!("{prefix}.feat_b")).unwrap().values.clone(),
            out_w: params.get(&format!("{prefix}.out_w")).unwrap().values.clone(),
            out_b: params.get(&format!("{prefix}.out_b")).unwrap().values[0],
            activation,
        })
    }

    pub fn param_count(&self) -> usize {
        self.feat_w.len() + self.feat_b.len() + self.out_w.len() + 1
    }

    /// Selection probabilities for every position.
    pub fn probabilities(&self, tokens: &[Real], n: usize) -> Vec<Real> {
        let d = self.d;
        let dh = self.hidden;
        assert_eq!(tokens.len(), n * d);
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &t) in mean.iter_mut().zip(&tokens[i * d..(i + 1) * d]) {
                *m += t;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as Real);

        // base_k = sum_r W2[k][r] mean[r] + b_k; fold W1 and W3 (.) mean
        // into one [dh, d] matrix so each position costs d*dh flops.
        let mut base = self.feat_b.clone();
        let mut folded = vec![0.0; dh * d];
        for k in 0..dh {
            let row = &self.feat_w[k * 3 * d..(k + 1) * 3 * d];
            for r in 0..d {
                base[k] += row[d + r] * mean[r];
                folded[k * d + r] = row[r] + row[2 * d + r] * mean[r];
            }
        }
        let act = self.activation;
        let out_w = &self.out_w;
        let out_b = self.out_b;
        par::map_indexed(n, move |i| {
            let x = &tokens[i * d..(i + 1) * d];
            let mut logit = out_b;
            for k in 0..dh {
                let row = &folded[k * d..(k + 1) * d];
                let mut a = base[k];
                for r in 0..d {
                    a += row[r] * x[r];
                }
                logit += out_w[k] * activate(a, act);
            }
            1.0 / (1.0 + (-logit).exp())
        })
    }

    /// End-to-end selection: probabilities plus draws.
    pub fn select(
        &self,
        tokens: &[Real],
        n: usize,
        key: RngKey,
        mode: SampleMode,
    ) -> (Vec<bool>, Vec<Real>) {
        let probs = self.probabilities(tokens, n);
        let z = rss_sample(&probs, key, mode);
        (z, probs)
    }
}

// ---- sequential baseline --------------------------------------------------

/// Recurrent iterative sampler: each selection probability conditions on
/// the history through a plain tanh RNN state, so positions must be drawn
/// left to right.
#[derive(Debug, Clone)]
pub struct IterativeSampler {
    d: usize,
    state: usize,
    gate_hidden: usize,
    rnn_wx: Vec<Real>,
    rnn_wh: Vec<Real>,
    rnn_b: Vec<Real>,
    gate_w: Vec<Real>,
    gate_b: Vec<Real>,
    out_w: Vec<Real>,
    out_b: Real,
    activation: Activation,
}

pub fn register_iterative(
    params: &mut ParamSet,
    prefix: &str,
    d: usize,
    state: usize,
    gate_hidden: usize,
) {
    params.insert(&format!("{prefix}.rnn_wx"), &[state, d + 1], ParamKind::Weight);
    params.insert(&format!("{prefix}.rnn_wh"), &[state, state], ParamKind::Weight);
    params.insert(&format!("{prefix}.rnn_b"), &[state], ParamKind::Bias);
    params.insert(&format!("{prefix}.gate_w"), &[gate_hidden, state + d], ParamKind::Weight);
    params.insert(&format!("{prefix}.gate_b"), &[gate_hidden], ParamKind::Bias);
    params.insert(&format!("{prefix}.out_w"), &[1, gate_hidden], ParamKind::Weight);
    params.insert(&format!("{prefix}.out_b"), &[1], ParamKind::Bias);
}

impl IterativeSampler {
    pub fn from_params(params: &ParamSet, prefix: &str, activation: Activation) -> Result<Self> {
        let wx = params
            .get(&format!("{prefix}.rnn_wx"))
            .ok_or_else(|| Error::UnknownParam(format!("{prefix}.rnn_wx")))?;
        let state = wx.shape[0];
        let d = wx.shape[1] - 1;
        let gate = params.get(&format!("{prefix}.gate_w")).unwrap();
        Ok(IterativeSampler {
            d,
            state,
            gate_hidden: gate.shape[0],
            rnn_wx: wx.values.clone(),
            rnn_wh: params.get(&format!("{prefix}.rnn_wh")).unwrap().values.clone(),
            rnn_b: params.get(&format!("{prefix}.rnn_b")).unwrap().values.clone(),
            gate_w: gate.values.clone(),
            gate_b: params.get(&format!("{prefix}.gate_b")).unwrap().values.clone(),
            out_w: params.get(&format!("{prefix}.out_w")).unwrap().values.clone(),
            out_b: params.get(&format!("{prefix}.out_b")).unwrap().values[0],
            activation,
        })
    }

    pub fn param_count(&self) -> usize {
        self.rnn_wx.len()
            + self.rnn_wh.len()
            + self.rnn_b.len()
            + self.gate_w.len()
            + self.gate_b.len()
            + self.out_w.len()
            + 1
    }

    /// Left-to-right sampling over position-major tokens. Returns the
    /// selection and its joint log-probability.
    pub fn sample(&self, tokens: &[Real], n: usize, key: RngKey) -> (Vec<bool>, Real) {
        let (d, hs, gh) = (self.d, self.state, self.gate_hidden);
        assert_eq!(tokens.len(), n * d);
        let mut h = vec![0.0; hs];
        let mut h_next = vec![0.0; hs];
        let mut z = Vec::with_capacity(n);
        let mut log_prob = 0.0;
        for i in 0..n {
            let x = &tokens[i * d..(i + 1) * d];
            // p_i = sigmoid(w^T act(W_p [h_{i-1}; x_i] + b_p) + b)
            let mut logit = self.out_b;
            for k in 0..gh {
                let row = &self.gate_w[k * (hs + d)..(k + 1) * (hs + d)];
                let mut a = self.gate_b[k];
                for r in 0..hs {
                    a += row[r] * h[r];
                }
                for r in 0..d {
                    a += row[hs + r] * x[r];
                }
                logit += self.out_w[k] * activate(a, self.activation);
            }
            let p = 1.0 / (1.0 + (-logit).exp());
            let zi = (key.with(i as u64).uniform() as Real) < p;
            z.push(zi);
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            log_prob += if zi { pc.ln() } else { (1.0 - pc).ln() };
            // h_i = tanh(W_x [x_i; z_i] + W_h h_{i-1} + b)
            let zval = if zi { 1.0 } else { 0.0 };
            for (k, slot) in h_next.iter_mut().enumerate() {
                let wx = &self.rnn_wx[k * (d + 1)..(k + 1) * (d + 1)];
                let wh = &self.rnn_wh[k * hs..(k + 1) * hs];
                let mut a = self.rnn_b[k];
                for r in 0..d {
                    a += wx[r] * x[r];
                }
                a += wx[d] * zval;
                for r in 0..hs {
                    a += wh[r] * h[r];
                }
                *slot = a.tanh();
            }
            std::mem::swap(&mut h, &mut h_next);
        }
        (z, log_prob)
    }
}

// ---- speed comparison -------------------------------------------------------

/// One measured row of the parallel-vs-iterative selection comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeedRow {
    pub n: usize,
    pub rss_micros: f64,
    pub iterative_micros: f64,
    pub rss_params: usize,
    pub iterative_params: usize,
}

/// Median wall-clock of end-to-end selection (probabilities + draws) for
/// both samplers across sequence lengths, with parameter counts matched by
/// sizing the parallel sampler's gate to the iterative sampler's total.
pub fn speed_comparison(
    d: usize,
    lengths: &[usize],
    repeats: usize,
    seed: u64,
) -> crate::error::Result<Vec<SpeedRow>> {
    use rand::Rng;
    use std::time::Instant;

    let mut params = ParamSet::new();
    register_iterative(&mut params, "iter_bench", d, d, d);
    // iterative total: 4d^2 + 4d + 1; parallel total: dh(3d + 2) + 1
    let iter_total = 4 * d * d + 4 * d + 1;
    let rss_hidden = ((iter_total - 1) as f64 / (3 * d + 2) as f64).round() as usize;
    register_rss(&mut params, "rss_bench", d, rss_hidden.max(1));
    params.initialize(RngKey::new(seed));
    let rss = RssFast::from_params(&params, "rss_bench", Activation::Tanh)?;
    let iterative = IterativeSampler::from_params(&params, "iter_bench", Activation::Tanh)?;

    let median = |mut xs: Vec<f64>| -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs[xs.len() / 2]
    };

    let mut rows = Vec::with_capacity(lengths.len());
    for &n in lengths {
        let mut rng = RngKey::new(seed).with(n as u64).stream();
        let tokens: Vec<Real> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let key = RngKey::new(seed).with(7).with(n as u64);

        // warm both paths (thread pool spin-up, caches)
        let _ = rss.select(&tokens, n, key, SampleMode::Sample);
        let _ = iterative.sample(&tokens, n, key);

        let mut rss_times = Vec::with_capacity(repeats);
        let mut iter_times = Vec::with_capacity(repeats);
        for rep in 0..repeats.max(1) {
            let k = key.with(rep as u64);
            let t0 = Instant::now();
            let (z, _) = rss.select(&tokens, n, k, SampleMode::Sample);
            rss_times.push(t0.elapsed().as_secs_f64() * 1e6);
            std::hint::black_box(z);

            let t0 = Instant::now();
            let (z, _) = iterative.sample(&tokens, n, k);
            iter_times.push(t0.elapsed().as_secs_f64() * 1e6);
            std::hint::black_box(z);
        }
        rows.push(SpeedRow {
            n,
            rss_micros: median(rss_times),
            iterative_micros: median(iter_times),
            rss_params: rss.param_count(),
            iterative_params: iterative.param_count(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference_named, max_relative_error};
    use crate::rng::role;
    use rand::Rng;

    fn demo_params(d: usize, dh: usize, seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        register_rss(&mut p, "rss_head", d, dh);
        register_rss(&mut p, "rss_dep", d, dh);
        p.initialize(RngKey::new(seed));
        p
    }

    #[test]
    fn features_single_token() {
        let mut g = Graph::new();
        let x = g.matrix(2, 1, vec![1.0, 2.0]).unwrap();
        let h = rss_features(&mut g, x, &[true]).unwrap();
        assert_eq!(g.shape(h), &[6, 1]);
        assert_eq!(g.values(h), &[1.0, 2.0, 1.0, 2.0, 1.0, 4.0]);
    }

    #[test]
    fn features_hand_arithmetic() {
        // x1 = [2, 0], x2 = [0, 2] -> mean [1, 1]; h1 = [2,0, 1,1, 2,0]
        let mut g = Graph::new();
        let x = g.matrix(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap();
        let h = rss_features(&mut g, x, &[true, true]).unwrap();
        let v = g.values(h);
        let h1: Vec<Real> = (0..6).map(|r| v[r * 2]).collect();
        assert_eq!(h1, vec![2.0, 0.0, 1.0, 1.0, 2.0, 0.0]);
    }

    #[test]
    fn probabilities_half_for_zero_gate() {
        let d = 3;
        let mut params = ParamSet::new();
        register_rss(&mut params, "rss_head", d, d);
        // all zeros: logits are zero, sigmoid gives exactly 0.5
        let mut g = Graph::new();
        let bound = bind_rss(&mut g, &params, "rss_head", Activation::Tanh).unwrap();
        let x = g.matrix(d, 4, (0..12).map(|i| i as Real * 0.3 - 1.0).collect()).unwrap();
        let h = rss_features(&mut g, x, &[true; 4]).unwrap();
        let p = rss_probabilities(&mut g, h, &bound).unwrap();
        assert!(g.values(p).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn probabilities_saturate_with_large_bias() {
        let d = 2;
        let mut params = ParamSet::new();
        register_rss(&mut params, "rss_head", d, d);
        params.get_mut("rss_head.out_b").unwrap().values[0] = 50.0;
        let mut g = Graph::new();
        let bound = bind_rss(&mut g, &params, "rss_head", Activation::Tanh).unwrap();
        let x = g.matrix(d, 3, vec![0.1; 6]).unwrap();
        let h = rss_features(&mut g, x, &[true; 3]).unwrap();
        let p = rss_probabilities(&mut g, h, &bound).unwrap();
        assert!(g.values(p).iter().all(|&v| v > 0.999));
    }

    #[test]
    fn probabilities_match_independent_recomputation() {
        let (d, dh, n) = (3, 4, 5);
        let params = demo_params(d, dh, 41);
        let mut rng = RngKey::new(5).stream();
        let x_vals: Vec<Real> = (0..d * n).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let bound = bind_rss(&mut g, &params, "rss_head", Activation::Tanh).unwrap();
        let x = g.matrix(d, n, x_vals.clone()).unwrap();
        let h = rss_features(&mut g, x, &[true; 5]).unwrap();
        let p = rss_probabilities(&mut g, h, &bound).unwrap();
        let got = g.values(p).to_vec();

        // plain-loop recomputation straight from the formula
        let w = &params.get("rss_head.feat_w").unwrap().values;
        let bf = &params.get("rss_head.feat_b").unwrap().values;
        let wo = &params.get("rss_head.out_w").unwrap().values;
        let bo = params.get("rss_head.out_b").unwrap().values[0];
        let mean: Vec<Real> = (0..d)
            .map(|r| (0..n).map(|c| x_vals[r * n + c]).sum::<Real>() / n as Real)
            .collect();
        for i in 0..n {
            let xi: Vec<Real> = (0..d).map(|r| x_vals[r * n + i]).collect();
            let mut hvec = xi.clone();
            hvec.extend_from_slice(&mean);
            hvec.extend((0..d).map(|r| xi[r] * mean[r]));
            let mut logit = bo;
            for k in 0..dh {
                let mut a = bf[k];
                for (r, &hv) in hvec.iter().enumerate() {
                    a += w[k * 3 * d + r] * hv;
                }
                logit += wo[k] * a.tanh();
            }
            let expect = 1.0 / (1.0 + (-logit as Real).exp());
            assert!((got[i] - expect).abs() < 1e-12, "pos {i}: {} vs {expect}", got[i]);
        }
    }

    #[test]
    fn permuting_tokens_permutes_probabilities() {
        let (d, dh, n) = (4, 4, 6);
        let params = demo_params(d, dh, 7);
        let mut rng = RngKey::new(8).stream();
        let cols: Vec<Vec<Real>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let run = |order: &[usize]| -> Vec<Real> {
            let mut vals = vec![0.0; d * n];
            for (slot, &c) in order.iter().enumerate() {
                for r in 0..d {
                    vals[r * n + slot] = cols[c][r];
                }
            }
            let mut g = Graph::new();
            let bound = bind_rss(&mut g, &params, "rss_head", Activation::Tanh).unwrap();
            let x = g.matrix(d, n, vals).unwrap();
            let h = rss_features(&mut g, x, &[true; 6]).unwrap();
            let p = rss_probabilities(&mut g, h, &bound).unwrap();
            g.values(p).to_vec()
        };
        let id: Vec<usize> = (0..n).collect();
        let perm = vec![3, 0, 5, 1, 4, 2];
        let base = run(&id);
        let shuffled = run(&perm);
        for (slot, &c) in perm.iter().enumerate() {
            assert!((shuffled[slot] - base[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_is_degenerate_at_zero_and_one() {
        let key = RngKey::new(3).with(role::HEAD);
        let z = rss_sample(&[1.0, 1.0, 0.0], key, SampleMode::Sample);
        assert_eq!(z, vec![true, true, false]);
    }

    #[test]
    fn force_all_selects_everything() {
        let z = rss_sample(&[0.1, 0.0, 0.9], RngKey::new(1), SampleMode::ForceAll);
        assert_eq!(z, vec![true, true, true]);
    }

    #[test]
    fn threshold_mode() {
        let z = rss_sample(&[0.49, 0.5, 0.51], RngKey::new(1), SampleMode::Threshold);
        assert_eq!(z, vec![false, true, true]);
    }

    #[test]
    fn fixed_seed_reproduces_selection() {
        let p = vec![0.3, 0.7, 0.5, 0.2];
        let a = rss_sample(&p, RngKey::new(9).with(role::DEP), SampleMode::Sample);
        let b = rss_sample(&p, RngKey::new(9).with(role::DEP), SampleMode::Sample);
        assert_eq!(a, b);
    }

    #[test]
    fn log_prob_examples() {
        let mut g = Graph::new();
        let p = g.vector(&[0.5, 0.5]);
        let lp = rss_log_prob(&mut g, p, &[true, false]).unwrap();
        assert!((g.scalar_value(lp) - (0.25 as Real).ln()).abs() < 1e-12);

        let mut g = Graph::new();
        let p = g.vector(&[0.9]);
        let lp = rss_log_prob(&mut g, p, &[true]).unwrap();
        assert!((g.scalar_value(lp) - (0.9 as Real).ln()).abs() < 1e-12);
    }

    #[test]
    fn log_probs_normalize_over_all_selections() {
        // sum over all 2^3 selections of exp(log prob) must be 1
        let probs = [0.3, 0.8, 0.55];
        let mut total = 0.0;
        for bits in 0..8u32 {
            let z: Vec<bool> = (0..3).map(|i| bits >> i & 1 == 1).collect();
            let mut g = Graph::new();
            let p = g.vector(&probs);
            let lp = rss_log_prob(&mut g, p, &z).unwrap();
            total += g.scalar_value(lp).exp();
        }
        assert!((total - 1.0).abs() < 1e-9, "total {total}");
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let (d, dh, n) = (3, 3, 4);
        let params = demo_params(d, dh, 13);
        let mut rng = RngKey::new(14).stream();
        let x_vals: Vec<Real> = (0..d * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = vec![true, false, true, true];

        let eval = |ps: &ParamSet| -> Real {
            let mut g = Graph::new();
            let bound = bind_rss(&mut g, ps, "rss_head", Activation::Tanh).unwrap();
            let x = g.matrix(d, n, x_vals.clone()).unwrap();
            let h = rss_features(&mut g, x, &[true; 4]).unwrap();
            let p = rss_probabilities(&mut g, h, &bound).unwrap();
            let lp = rss_log_prob(&mut g, p, &z).unwrap();
            g.scalar_value(lp)
        };

        let mut g = Graph::new();
        let bound = bind_rss(&mut g, &params, "rss_head", Activation::Tanh).unwrap();
        let x = g.matrix(d, n, x_vals.clone()).unwrap();
        let h = rss_features(&mut g, x, &[true; 4]).unwrap();
        let p = rss_probabilities(&mut g, h, &bound).unwrap();
        let lp = rss_log_prob(&mut g, p, &z).unwrap();
        g.backward(lp).unwrap();

        for name in ["rss_head.feat_w", "rss_head.feat_b", "rss_head.out_w", "rss_head.out_b"] {
            let analytic: Vec<Real> = g
                .param_gradients()
                .find(|(n, _)| *n == name)
                .unwrap()
                .1
                .to_vec();
            let numeric = finite_difference_named(eval, &params, name, 1e-5).unwrap();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }

    #[test]
    fn samplers_are_parameter_untied() {
        let (d, dh, n) = (3, 3, 4);
        let mut params = demo_params(d, dh, 23);
        let mut rng = RngKey::new(24).stream();
        let x_vals: Vec<Real> = (0..d * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probs_of = |ps: &ParamSet, prefix: &str| -> Vec<Real> {
            let mut g = Graph::new();
            let bound = bind_rss(&mut g, ps, prefix, Activation::Tanh).unwrap();
            let x = g.matrix(d, n, x_vals.clone()).unwrap();
            let h = rss_features(&mut g, x, &[true; 4]).unwrap();
            let p = rss_probabilities(&mut g, h, &bound).unwrap();
            g.values(p).to_vec()
        };
        let dep_before = probs_of(&params, "rss_dep");
        for v in params.get_mut("rss_head.feat_w").unwrap().values.iter_mut() {
            *v += 0.5;
        }
        let dep_after = probs_of(&params, "rss_dep");
        assert_eq!(dep_before, dep_after);
    }

    #[test]
    fn empirical_frequency_matches_probabilities() {
        let probs = [0.15, 0.5, 0.92];
        let n_draws = 100_000u64;
        let mut counts = [0u64; 3];
        for s in 0..n_draws {
            let z = rss_sample(&probs, RngKey::new(77).with(s), SampleMode::Sample);
            for (c, &zi) in counts.iter_mut().zip(&z) {
                *c += zi as u64;
            }
        }
        for (i, &p) in probs.iter().enumerate() {
            let freq = counts[i] as f64 / n_draws as f64;
            let se = (p * (1.0 - p) / n_draws as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "position {i}: freq {freq} vs p {p} (3se = {})",
                3.0 * se
            );
        }
    }

    #[test]
    fn fast_route_matches_graph_route() {
        let (d, dh, n) = (4, 5, 7);
        let params = demo_params(d, dh, 31);
        let mut rng = RngKey::new(32).stream();
        // position-major for the fast path, feature-major for the graph
        let tokens: Vec<Real> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x_vals = vec![0.0; d * n];
        for i in 0..n {
            for r in 0..d {
                x_vals[r * n + i] = tokens[i * d + r];
            }
        }
        let mut g = Graph::new();
        let bound = bind_rss(&mut g, &params, "rss_head", Activation::Tanh).unwrap();
        let x = g.matrix(d, n, x_vals).unwrap();
        let h = rss_features(&mut g, x, &[true; 7]).unwrap();
        let p = rss_probabilities(&mut g, h, &bound).unwrap();
        let graph_probs = g.values(p).to_vec();

        let fast = RssFast::from_params(&params, "rss_head", Activation::Tanh).unwrap();
        let fast_probs = fast.probabilities(&tokens, n);
        for (a, b) in graph_probs.iter().zip(&fast_probs) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn iterative_zero_weights_give_half() {
        let d = 3;
        let mut params = ParamSet::new();
        register_iterative(&mut params, "iter", d, d, d);
        let sampler = IterativeSampler::from_params(&params, "iter", Activation::Tanh).unwrap();
        let tokens = vec![0.4; 5 * d];
        let (z, lp) = sampler.sample(&tokens, 5, RngKey::new(3).with(role::ITERATIVE));
        assert_eq!(z.len(), 5);
        assert!((lp - 5.0 * (0.5 as Real).ln()).abs() < 1e-9);
    }

    #[test]
    fn iterative_is_deterministic_per_seed() {
        let d = 4;
        let mut params = ParamSet::new();
        register_iterative(&mut params, "iter", d, d, d);
        params.initialize(RngKey::new(55));
        let sampler = IterativeSampler::from_params(&params, "iter", Activation::Tanh).unwrap();
        let mut rng = RngKey::new(56).stream();
        let tokens: Vec<Real> = (0..9 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = sampler.sample(&tokens, 9, RngKey::new(6).with(role::ITERATIVE));
        let b = sampler.sample(&tokens, 9, RngKey::new(6).with(role::ITERATIVE));
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
