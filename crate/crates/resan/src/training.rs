//! Supervised loss, reward shaping, policy-gradient estimation (with an
//! exact enumeration oracle), the Adadelta optimizer, and the two-phase
//! trainer.
//!
//! Training runs warmup first: every token is selected and only the
//! supervised parameters move, so the samplers never see a gradient and
//! stay bit-identical. Once the dev loss stops improving meaningfully the
//! trainer switches (permanently) to joint mode, where each step draws
//! selections, backpropagates the supervised loss through the sampled
//! mask, and nudges the policy parameters along `R * grad log pi`.

use crate::encoder::{ResaVariant, SelectionMode, SelectionSample};
use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::model::{
    is_policy_param, rating_target_distribution, PreparedExample, Prediction, ResanModel, Target,
    TaskKind,
};
use crate::par;
use crate::params::{GradMap, ParamSet};
use crate::rng::RngKey;
use crate::sampling::SampleMode;
use crate::Real;
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

const SHUFFLE_TAG: u64 = 90;
const EVAL_TAG: u64 = 91;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// L2 weight decay on the supervised parameters.
    pub gamma: Real,
    /// Selection penalty weight in the reward.
    pub lambda: Real,
    /// Dropout keep probability (input embeddings and pair features).
    pub keep_prob: Real,
    /// Warmup patience: epochs without meaningful dev improvement before
    /// switching to joint training.
    pub patience: usize,
    /// Relative dev-loss improvement below which an epoch counts as stalled.
    pub min_improvement: Real,
    pub rho: Real,
    pub eps_opt: Real,
    pub batch_size: usize,
    pub seed: u64,
    /// Subtract a moving-average reward baseline (off: plain estimator).
    pub use_baseline: bool,
    /// Draws per item for the standalone estimator.
    pub samples_per_item: usize,
    pub max_epochs: usize,
    /// Count both selection vectors in the penalty (one for the
    /// single-sampler variant).
    pub penalty_both_vectors: bool,
    /// Stop once dev accuracy reaches this (classification only).
    pub early_stop_accuracy: Option<Real>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 5e-5,
            lambda: 0.01,
            keep_prob: 0.75,
            patience: 2,
            min_improvement: 1e-3,
            rho: 0.95,
            eps_opt: 1e-6,
            batch_size: 32,
            seed: 0,
            use_baseline: false,
            samples_per_item: 1,
            max_epochs: 30,
            penalty_both_vectors: true,
            early_stop_accuracy: None,
        }
    }
}

// ---- loss and reward -------------------------------------------------------

/// Task loss plus weight decay: cross-entropy against a class index, or
/// KL(target || predicted) against the sparse rating target, plus
/// `gamma * l2_sum_sq`.
pub fn supervised_loss(
    g: &mut Graph,
    probs: Tensor,
    target: &Target,
    l2_sum_sq: Tensor,
    gamma: Real,
) -> Result<Tensor> {
    let k: usize = g.shape(probs).iter().product();
    let data_term = match target {
        Target::Class(y) => {
            if *y >= k {
                return Err(Error::InvalidConfig(format!(
                    "class {y} out of range for {k} classes"
                )));
            }
            let mut onehot = vec![0.0; k];
            onehot[*y] = 1.0;
            let w = g.constant(&[k], onehot)?;
            let lp = g.log(probs)?;
            let picked = g.mul(w, lp)?;
            let s = g.sum(picked)?;
            g.scale(s, -1.0)?
        }
        Target::Rating(r) => {
            let t = rating_target_distribution(*r, k)?;
            // KL(t || p) = sum t ln t - sum t ln p; the entropy term keeps
            // the loss exactly zero when the prediction matches.
            let entropy: Real = t
                .iter()
                .filter(|&&ti| ti > 0.0)
                .map(|&ti| ti * ti.ln())
                .sum();
            let w = g.constant(&[k], t)?;
            let lp = g.log(probs)?;
            let cross = g.mul(w, lp)?;
            let s = g.sum(cross)?;
            let neg = g.scale(s, -1.0)?;
            let e = g.scalar(entropy);
            g.add(neg, e)?
        }
    };
    let reg = g.scale(l2_sum_sq, gamma)?;
    g.add(data_term, reg)
}

/// `R = log p(target) - lambda * (selected count) / token_count`. The count
/// covers both selection vectors unless `count_both` is off (the
/// single-sampler variant draws only one).
pub fn reward(
    log_likelihood: Real,
    z_head: &[bool],
    z_dep: &[bool],
    token_count: usize,
    lambda: Real,
    count_both: bool,
) -> Real {
    let mut selected = z_head.iter().filter(|&&z| z).count();
    if count_both {
        selected += z_dep.iter().filter(|&&z| z).count();
    }
    log_likelihood - lambda * selected as Real / token_count as Real
}

/// Reward for a whole example, aggregating selections across sentences.
pub fn example_reward(
    log_likelihood: Real,
    selections: &[SelectionSample],
    token_count: usize,
    lambda: Real,
    count_both: bool,
) -> Real {
    let mut selected = 0usize;
    for s in selections {
        selected += s.z_head.iter().filter(|&&z| z).count();
        if count_both {
            selected += s.z_dep.iter().filter(|&&z| z).count();
        }
    }
    log_likelihood - lambda * selected as Real / token_count as Real
}

/// Inverted-scaling dropout multiplier: `Bernoulli(keep)/keep` during
/// training, all ones otherwise.
pub fn dropout_mask(count: usize, keep_prob: Real, key: RngKey, training: bool) -> Vec<Real> {
    if !training || keep_prob >= 1.0 {
        return vec![1.0; count];
    }
    let inv = 1.0 / keep_prob;
    (0..count)
        .map(|i| {
            if (key.with(i as u64).uniform() as Real) < keep_prob {
                inv
            } else {
                0.0
            }
        })
        .collect()
}

// ---- policy gradient -------------------------------------------------------

fn selection_bits(bits: usize, n: usize) -> Vec<bool> {
    (0..n).map(|i| bits >> i & 1 == 1).collect()
}

/// Exact `grad E[R]` over the policy parameters by enumerating every
/// selection configuration of a single-sentence item, with an arbitrary
/// reward function of `(log_likelihood, z_head, z_dep)`.
pub fn exact_policy_gradient_with<F>(
    model: &ResanModel,
    item: &PreparedExample,
    reward_fn: F,
) -> Result<GradMap>
where
    F: Fn(Real, &[bool], &[bool]) -> Real,
{
    if !item.tokens_b.is_empty() {
        return Err(Error::InvalidConfig(
            "enumeration oracle supports single-sentence items".to_string(),
        ));
    }
    let n = item.tokens_a.len();
    if n > 6 {
        return Err(Error::EnumerationTooLarge { max: 6, got: n });
    }
    let shared = model.config.resa.variant == ResaVariant::SingleRss;
    let head_configs = 1usize << n;
    let dep_configs = if shared { 1 } else { 1usize << n };
    let mut acc = GradMap::zeros_like(&model.params, is_policy_param);
    let mut total_prob = 0.0;
    for hb in 0..head_configs {
        for db in 0..dep_configs {
            let z_head = selection_bits(hb, n);
            let z_dep = if shared {
                z_head.clone()
            } else {
                selection_bits(db, n)
            };
            let mut g = Graph::new();
            let bound = model.bind(&mut g)?;
            let fwd = model.forward_example(
                &mut g,
                &bound,
                item,
                &SelectionMode::Fixed {
                    z_head: z_head.clone(),
                    z_dep: z_dep.clone(),
                },
                RngKey::new(0),
                None,
            )?;
            let ll = g.scalar_value(fwd.log_likelihood);
            let pi = g.scalar_value(fwd.sel_log_prob).exp();
            total_prob += pi;
            let r = reward_fn(ll, &z_head, &z_dep);
            g.backward(fwd.sel_log_prob)?;
            for (name, grad) in g.param_gradients() {
                if is_policy_param(name) {
                    acc.accumulate(name, grad, pi * r);
                }
            }
        }
    }
    debug_assert!((total_prob - 1.0).abs() < 1e-6, "pi sums to {total_prob}");
    Ok(acc)
}

/// Exact `grad E[R]` with the production reward.
pub fn exact_policy_gradient(
    model: &ResanModel,
    item: &PreparedExample,
    lambda: Real,
    count_both: bool,
) -> Result<GradMap> {
    let n = item.tokens_a.len();
    exact_policy_gradient_with(model, item, |ll, zh, zd| {
        reward(ll, zh, zd, n, lambda, count_both)
    })
}

/// One sampled score-function term `(R - baseline) * grad log pi`, plus the
/// raw reward.
fn sampled_policy_term(
    model: &ResanModel,
    item: &PreparedExample,
    key: RngKey,
    lambda: Real,
    count_both: bool,
    baseline: Real,
) -> Result<(GradMap, Real)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g)?;
    let fwd = model.forward_example(&mut g, &bound, item, &SelectionMode::Sample, key, None)?;
    let ll = g.scalar_value(fwd.log_likelihood);
    let r = example_reward(ll, &fwd.selections, fwd.token_count, lambda, count_both);
    g.backward(fwd.sel_log_prob)?;
    let mut grad = GradMap::zeros_like(&model.params, is_policy_param);
    for (name, gv) in g.param_gradients() {
        if is_policy_param(name) {
            grad.accumulate(name, gv, r - baseline);
        }
    }
    Ok((grad, r))
}

/// Monte-Carlo policy gradient (ascent direction on expected reward):
/// mean of `R * grad log pi` over items and draws.
pub fn reinforce_gradient(
    model: &ResanModel,
    items: &[PreparedExample],
    key: RngKey,
    lambda: Real,
    count_both: bool,
    samples_per_item: usize,
    baseline: Real,
) -> Result<(GradMap, Real)> {
    let total = items.len() * samples_per_item;
    if total == 0 {
        return Err(Error::EmptyInput {
            op: "reinforce_gradient",
        });
    }
    let terms: Vec<Result<(GradMap, Real)>> = par::map_indexed(total, |idx| {
        let item = &items[idx / samples_per_item];
        sampled_policy_term(model, item, key.with(idx as u64), lambda, count_both, baseline)
    });
    let mut acc = GradMap::zeros_like(&model.params, is_policy_param);
    let mut reward_sum = 0.0;
    let weight = 1.0 / total as Real;
    for term in terms {
        let (grad, r) = term?;
        acc.add_scaled(&grad, weight);
        reward_sum += r;
    }
    Ok((acc, reward_sum * weight))
}

/// Per-coordinate Monte-Carlo statistics of the score-function estimator
/// on one item, flattened in parameter order.
pub struct MonteCarloGradient {
    pub mean: Vec<Real>,
    pub std_error: Vec<Real>,
    pub samples: usize,
}

pub fn reinforce_moments(
    model: &ResanModel,
    item: &PreparedExample,
    key: RngKey,
    lambda: Real,
    count_both: bool,
    samples: usize,
) -> Result<MonteCarloGradient> {
    let dim = model.params.count_values(is_policy_param);
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let chunk = 256;
    let mut done = 0;
    while done < samples {
        let take = (samples - done).min(chunk);
        let flats: Vec<Result<Vec<Real>>> = par::map_indexed(take, |i| {
            let draw = (done + i) as u64;
            let (grad, _) = sampled_policy_term(model, item, key.with(draw), lambda, count_both, 0.0)?;
            Ok(grad.flat())
        });
        for flat in flats {
            let flat = flat?;
            for (i, v) in flat.iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        done += take;
    }
    let n = samples as Real;
    let mean: Vec<Real> = sum.iter().map(|s| s / n).collect();
    let std_error: Vec<Real> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(&sq, &m)| {
            let var = ((sq / n - m * m) * n / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(MonteCarloGradient {
        mean,
        std_error,
        samples,
    })
}

// ---- optimizer -------------------------------------------------------------

/// Adadelta: per-parameter running averages of squared gradients and
/// squared updates.
///
/// ```text
/// Eg  = rho Eg  + (1 - rho) g^2
/// dx  = -sqrt(Ed + eps) / sqrt(Eg + eps) * g
/// Ed  = rho Ed  + (1 - rho) dx^2
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adadelta {
    pub rho: Real,
    pub eps: Real,
    grad_sq: IndexMap<String, Vec<Real>>,
    update_sq: IndexMap<String, Vec<Real>>,
}

impl Adadelta {
    pub fn new(rho: Real, eps: Real) -> Self {
        Adadelta {
            rho,
            eps,
            grad_sq: IndexMap::new(),
            update_sq: IndexMap::new(),
        }
    }

    /// Apply one update. Only parameters named in `grads` are touched, so a
    /// warmup step that carries no policy gradients leaves the policy
    /// parameters and their accumulators byte-identical.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradMap) -> Result<()> {
        for (name, grad) in grads.iter() {
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("gradient of {name}"),
                });
            }
            let array = params
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
            let gs = self
                .grad_sq
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let us = self
                .update_sq
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; grad.len()]);
            for i in 0..grad.len() {
                let mut gv = grad[i];
                if let Some(mask) = &array.update_mask {
                    gv *= mask[i];
                }
                gs[i] = self.rho * gs[i] + (1.0 - self.rho) * gv * gv;
                let delta = -((us[i] + self.eps).sqrt() / (gs[i] + self.eps).sqrt()) * gv;
                us[i] = self.rho * us[i] + (1.0 - self.rho) * delta * delta;
                array.values[i] += delta;
            }
        }
        Ok(())
    }

    pub fn gradient_accumulator(&self, name: &str) -> Option<&[Real]> {
        self.grad_sq.get(name).map(Vec::as_slice)
    }

    pub fn update_accumulator(&self, name: &str) -> Option<&[Real]> {
        self.update_sq.get(name).map(Vec::as_slice)
    }
}

// ---- schedule ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Joint,
}

/// Tracks dev loss across epochs; switches to joint training after
/// `patience` consecutive epochs whose relative improvement over the best
/// loss stays at or below `min_improvement`. Joint is absorbing.
#[derive(Debug, Clone)]
pub struct WarmupSchedule {
    patience: usize,
    min_improvement: Real,
    best: Option<Real>,
    stalled: usize,
    phase: Phase,
}

impl WarmupSchedule {
    pub fn new(patience: usize, min_improvement: Real) -> Self {
        WarmupSchedule {
            patience,
            min_improvement,
            best: None,
            stalled: 0,
            phase: Phase::Warmup,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Record one epoch's dev loss; returns the phase for the next epoch.
    pub fn observe(&mut self, dev_loss: Real) -> Phase {
        if self.phase == Phase::Joint {
            return Phase::Joint;
        }
        match self.best {
            None => self.best = Some(dev_loss),
            Some(best) => {
                let relative = (best - dev_loss) / best.abs().max(1e-12);
                if relative > self.min_improvement {
                    self.stalled = 0;
                } else {
                    self.stalled += 1;
                }
                if dev_loss < best {
                    self.best = Some(dev_loss);
                }
                if self.stalled >= self.patience {
                    self.phase = Phase::Joint;
                }
            }
        }
        self.phase
    }
}

// ---- trainer ---------------------------------------------------------------

/// One line of the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: Real,
    pub dev_loss: Real,
    pub dev_accuracy_or_mse: Real,
    pub mean_selection_fraction_head: Real,
    pub mean_selection_fraction_dep: Real,
    pub mean_reward: Real,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub loss: Real,
    /// Accuracy for classification, MSE for ratings.
    pub metric: Real,
    pub selection_fraction_head: Real,
    pub selection_fraction_dep: Real,
    pub mean_reward: Real,
}

struct ItemStep {
    grads: GradMap,
    loss: Real,
    reward: Real,
    head_fraction: Real,
    dep_fraction: Real,
}

pub struct Trainer {
    pub model: ResanModel,
    pub config: TrainConfig,
    optimizer: Adadelta,
    schedule: WarmupSchedule,
    baseline: Option<Real>,
    epochs_run: usize,
}

impl Trainer {
    pub fn new(model: ResanModel, config: TrainConfig) -> Self {
        let optimizer = Adadelta::new(config.rho, config.eps_opt);
        let schedule = WarmupSchedule::new(config.patience, config.min_improvement);
        Trainer {
            model,
            config,
            optimizer,
            schedule,
            baseline: None,
            epochs_run: 0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.schedule.phase()
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    /// Train for up to `max_epochs` further epochs; `on_epoch` fires after
    /// each. Calling again resumes with fresh epoch indices, so RNG streams
    /// never repeat across calls.
    pub fn run(
        &mut self,
        train: &[PreparedExample],
        dev: &[PreparedExample],
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        let mut records = Vec::new();
        for epoch in self.epochs_run + 1..=self.epochs_run + self.config.max_epochs {
            let phase = self.schedule.phase();
            let (train_loss, head_frac, dep_frac, mean_reward) = self.run_epoch(train, epoch)?;
            self.epochs_run = epoch;
            let dev_report = self.evaluate(dev)?;
            let record = EpochRecord {
                epoch,
                phase,
                train_loss,
                dev_loss: dev_report.loss,
                dev_accuracy_or_mse: dev_report.metric,
                mean_selection_fraction_head: head_frac,
                mean_selection_fraction_dep: dep_frac,
                mean_reward,
            };
            on_epoch(&record);
            records.push(record);
            self.schedule.observe(dev_report.loss);
            if let Some(target) = self.config.early_stop_accuracy {
                if matches!(self.model.config.task, TaskKind::Classify { .. })
                    && dev_report.metric >= target
                {
                    break;
                }
            }
        }
        Ok(records)
    }

    /// One pass over the training set; returns (mean loss, mean selection
    /// fractions, mean reward).
    pub fn run_epoch(
        &mut self,
        train: &[PreparedExample],
        epoch: usize,
    ) -> Result<(Real, Real, Real, Real)> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = RngKey::new(self.config.seed)
            .with(SHUFFLE_TAG)
            .with(epoch as u64)
            .stream();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut head_sum = 0.0;
        let mut dep_sum = 0.0;
        let mut reward_sum = 0.0;
        let mut count = 0usize;
        for (step, batch_ids) in order.chunks(self.config.batch_size.max(1)).enumerate() {
            let stats = self.train_batch(train, batch_ids, epoch, step)?;
            for s in &stats {
                loss_sum += s.loss;
                head_sum += s.head_fraction;
                dep_sum += s.dep_fraction;
                reward_sum += s.reward;
            }
            count += stats.len();
        }
        let n = count.max(1) as Real;
        Ok((loss_sum / n, head_sum / n, dep_sum / n, reward_sum / n))
    }

    fn train_batch(
        &mut self,
        train: &[PreparedExample],
        batch_ids: &[usize],
        epoch: usize,
        step: usize,
    ) -> Result<Vec<ItemStep>> {
        let phase = self.schedule.phase();
        let model = &self.model;
        let cfg = &self.config;
        let baseline = if cfg.use_baseline {
            self.baseline.unwrap_or(0.0)
        } else {
            0.0
        };
        let outputs: Vec<Result<ItemStep>> = par::map_indexed(batch_ids.len(), |slot| {
            let item = &train[batch_ids[slot]];
            let key = RngKey::new(cfg.seed)
                .with(epoch as u64)
                .with(step as u64)
                .with(slot as u64);
            run_item_step(model, item, phase, key, cfg, baseline)
        });
        let mut stats = Vec::with_capacity(outputs.len());
        let mut merged = GradMap::new();
        let weight = 1.0 / batch_ids.len().max(1) as Real;
        for out in outputs {
            let item = out?;
            merged.add_scaled(&item.grads, weight);
            stats.push(item);
        }
        self.optimizer.step(&mut self.model.params, &merged)?;
        if self.config.use_baseline && self.schedule.phase() == Phase::Joint {
            let mean_r = stats.iter().map(|s| s.reward).sum::<Real>() / stats.len().max(1) as Real;
            self.baseline = Some(match self.baseline {
                Some(b) => 0.9 * b + 0.1 * mean_r,
                None => mean_r,
            });
        }
        Ok(stats)
    }

    /// Metrics over a held-out set; no dropout, no updates. While the
    /// schedule is still in warmup the samplers are untrained, so
    /// evaluation selects every token exactly as the training forward
    /// does; afterwards the configured evaluation mode applies.
    pub fn evaluate(&self, data: &[PreparedExample]) -> Result<EvalReport> {
        let mode = match self.schedule.phase() {
            Phase::Warmup => Some(SampleMode::ForceAll),
            Phase::Joint => None,
        };
        evaluate_model(&self.model, data, &self.config, mode)
    }
}

fn run_item_step(
    model: &ResanModel,
    item: &PreparedExample,
    phase: Phase,
    key: RngKey,
    cfg: &TrainConfig,
    baseline: Real,
) -> Result<ItemStep> {
    let mode = match phase {
        Phase::Warmup => SelectionMode::ForceAll,
        Phase::Joint => SelectionMode::Sample,
    };
    let mut g = Graph::new();
    let bound = model.bind(&mut g)?;
    let dropout = (cfg.keep_prob < 1.0).then_some((cfg.keep_prob, key));
    let fwd = model.forward_example(&mut g, &bound, item, &mode, key, dropout)?;
    let l2 = model.l2_penalty(&mut g, &bound)?;
    let loss = supervised_loss(&mut g, fwd.probs, &item.target, l2, cfg.gamma)?;
    let loss_val = g.scalar_value(loss);

    g.backward(loss)?;
    let mut grads = GradMap::new();
    for (name, grad) in g.param_gradients() {
        if !is_policy_param(name) {
            grads.accumulate(name, grad, 1.0);
        }
    }

    let ll = g.scalar_value(fwd.log_likelihood);
    let r = example_reward(
        ll,
        &fwd.selections,
        fwd.token_count,
        cfg.lambda,
        cfg.penalty_both_vectors,
    );
    if phase == Phase::Joint && !fwd.selections.is_empty() {
        // descend on -J_r: the update direction is -(R - b) grad log pi
        g.backward(fwd.sel_log_prob)?;
        for (name, grad) in g.param_gradients() {
            if is_policy_param(name) {
                grads.accumulate(name, grad, -(r - baseline));
            }
        }
    }

    let (head_fraction, dep_fraction) = selection_fractions(&fwd.selections, fwd.token_count);
    Ok(ItemStep {
        grads,
        loss: loss_val,
        reward: r,
        head_fraction,
        dep_fraction,
    })
}

fn selection_fractions(selections: &[SelectionSample], token_count: usize) -> (Real, Real) {
    if selections.is_empty() {
        return (1.0, 1.0);
    }
    let mut head = 0usize;
    let mut dep = 0usize;
    for s in selections {
        head += s.z_head.iter().filter(|&&z| z).count();
        dep += s.z_dep.iter().filter(|&&z| z).count();
    }
    (
        head as Real / token_count as Real,
        dep as Real / token_count as Real,
    )
}

/// Shared evaluation path; `mode_override` substitutes the configured
/// evaluation selection mode (the CLI's `--select-mode`).
pub fn evaluate_model(
    model: &ResanModel,
    data: &[PreparedExample],
    cfg: &TrainConfig,
    mode_override: Option<SampleMode>,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput { op: "evaluate" });
    }
    let eval_mode = mode_override.unwrap_or(model.config.resa.eval_mode);
    // (loss, metric, head fraction, dep fraction, reward)
    type EvalRow = (Real, Real, Real, Real, Real);
    let results: Vec<Result<EvalRow>> = par::map_indexed(data.len(), |i| {
            let item = &data[i];
            let key = RngKey::new(cfg.seed).with(EVAL_TAG).with(i as u64);
            let mode = match eval_mode {
                SampleMode::Sample => SelectionMode::Sample,
                SampleMode::ForceAll => SelectionMode::ForceAll,
                SampleMode::Threshold => SelectionMode::Threshold,
            };
            let mut g = Graph::new();
            let bound = model.bind(&mut g)?;
            let fwd = model.forward_example(&mut g, &bound, item, &mode, key, None)?;
            let l2 = model.l2_penalty(&mut g, &bound)?;
            let loss = supervised_loss(&mut g, fwd.probs, &item.target, l2, cfg.gamma)?;
            let loss_val = g.scalar_value(loss);
            let metric = match (&item.target, &fwd.prediction) {
                (Target::Class(y), Prediction::Class(p)) => (y == p) as usize as Real,
                (Target::Rating(y), Prediction::Rating(p)) => (y - p) * (y - p),
                _ => unreachable!("prediction kind follows task kind"),
            };
            let ll = g.scalar_value(fwd.log_likelihood);
            let r = example_reward(
                ll,
                &fwd.selections,
                fwd.token_count,
                cfg.lambda,
                cfg.penalty_both_vectors,
            );
            let (hf, df) = selection_fractions(&fwd.selections, fwd.token_count);
            Ok((loss_val, metric, hf, df, r))
        });
    let mut sums = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in results {
        let (l, m, h, d, rw) = r?;
        sums.0 += l;
        sums.1 += m;
        sums.2 += h;
        sums.3 += d;
        sums.4 += rw;
    }
    let n = data.len() as Real;
    Ok(EvalReport {
        loss: sums.0 / n,
        metric: sums.1 / n,
        selection_fraction_head: sums.2 / n,
        selection_fraction_dep: sums.3 / n,
        mean_reward: sums.4 / n,
    })
}
