//! Task models: a ReSAN sentence encoder (or a bag-of-words ablation)
//! under a classification or rating head, with the parameter schema that
//! the trainer and checkpoints share.
//!
//! Policy parameters (the token samplers) are the arrays whose names start
//! with `rss_`; everything else is supervised state. This split is what
//! the two training signals are routed by.

use crate::encoder::{
    expected_rating, pair_features_classify, pair_features_regress, register_resa, resan_encode,
    EncodeTrace, ResaBound, ResaConfig, SelectionMode, SelectionSample,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::params::{ParamKind, ParamSet};
use crate::rng::{role, RngKey};
use crate::training::dropout_mask;
use crate::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// K-way classification of a sentence or sentence pair.
    Classify { classes: usize },
    /// Rating regression over levels `1..=K` via a K-way distribution.
    Rate { levels: usize },
}

impl TaskKind {
    pub fn output_width(&self) -> usize {
        match self {
            TaskKind::Classify { classes } => *classes,
            TaskKind::Rate { levels } => *levels,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub resa: ResaConfig,
    pub task: TaskKind,
    /// Two sentences per example (inference/relatedness) or one (synthetic).
    pub pair_inputs: bool,
    /// Width of the classifier's hidden layer.
    pub classifier_hidden: usize,
    pub vocab_size: usize,
    /// Ablation: replace the encoder with a mean over token embeddings.
    #[serde(default)]
    pub bag_of_words: bool,
    /// Lowercase input text during tokenization.
    #[serde(default = "default_true")]
    pub lowercase: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn classify(hidden: usize, classes: usize, pair_inputs: bool, vocab_size: usize) -> Self {
        ModelConfig {
            resa: ResaConfig::new(hidden),
            task: TaskKind::Classify { classes },
            pair_inputs,
            classifier_hidden: hidden,
            vocab_size,
            bag_of_words: false,
            lowercase: true,
        }
    }

    pub fn rate(hidden: usize, levels: usize, vocab_size: usize) -> Self {
        ModelConfig {
            resa: ResaConfig::new(hidden),
            task: TaskKind::Rate { levels },
            pair_inputs: true,
            classifier_hidden: hidden,
            vocab_size,
            bag_of_words: false,
            lowercase: true,
        }
    }

    /// Width of the feature vector entering the classifier.
    pub fn feature_width(&self) -> usize {
        let d = self.resa.hidden;
        if !self.pair_inputs {
            d
        } else {
            match self.task {
                TaskKind::Classify { .. } => 4 * d,
                TaskKind::Rate { .. } => 2 * d,
            }
        }
    }
}

/// Policy parameters are routed to the policy-gradient update; the rest to
/// supervised backprop.
pub fn is_policy_param(name: &str) -> bool {
    name.starts_with("rss_")
}

/// Label or rating an example carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class(usize),
    Rating(Real),
}

/// A tokenized example ready for the model: vocabulary indices.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub tokens_a: Vec<usize>,
    pub tokens_b: Vec<usize>,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Class(usize),
    Rating(Real),
}

pub struct ResanModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

pub struct BoundModel {
    pub embed: Tensor,
    pub resa: ResaBound,
    pub head_hidden_w: Tensor,
    pub head_hidden_b: Tensor,
    pub head_out_w: Tensor,
    pub head_out_b: Tensor,
}

/// Everything the trainer needs from one example's forward pass.
pub struct ExampleForward {
    /// Output distribution over classes/levels, shape `[K]`.
    pub probs: Tensor,
    /// `log p(target)` on the graph.
    pub log_likelihood: Tensor,
    /// Joint selection log-probability across the example's sentences.
    pub sel_log_prob: Tensor,
    pub selections: Vec<SelectionSample>,
    pub traces: Vec<EncodeTrace>,
    /// Total token count across sentences (penalty normalizer).
    pub token_count: usize,
    pub prediction: Prediction,
}

impl ResanModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut params = ParamSet::new();
        params.insert("embed", &[config.resa.hidden, config.vocab_size], ParamKind::Embedding);
        register_resa(&mut params, &config.resa);
        let fw = config.feature_width();
        let ch = config.classifier_hidden;
        let k = config.task.output_width();
        params.insert("head.hidden_w", &[ch, fw], ParamKind::Weight);
        params.insert("head.hidden_b", &[ch], ParamKind::Bias);
        params.insert("head.out_w", &[k, ch], ParamKind::Weight);
        params.insert("head.out_b", &[k], ParamKind::Bias);
        params.initialize(RngKey::new(seed));
        ResanModel { config, params }
    }

    /// Install a pre-built embedding table (row-major `[d, vocab]`) and an
    /// optional gradient mask freezing pre-trained columns.
    pub fn install_embeddings(&mut self, table: Vec<Real>, mask: Option<Vec<Real>>) -> Result<()> {
        let embed = self
            .params
            .get_mut("embed")
            .ok_or_else(|| Error::UnknownParam("embed".to_string()))?;
        if table.len() != embed.numel() {
            return Err(Error::ShapeMismatch {
                op: "install_embeddings",
                details: format!("table has {} values, embed holds {}", table.len(), embed.numel()),
            });
        }
        embed.values = table;
        embed.update_mask = mask;
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundModel> {
        Ok(BoundModel {
            embed: self.params.bind(g, "embed")?,
            resa: crate::encoder::bind_resa(g, &self.params, &self.config.resa)?,
            head_hidden_w: self.params.bind(g, "head.hidden_w")?,
            head_hidden_b: self.params.bind(g, "head.hidden_b")?,
            head_out_w: self.params.bind(g, "head.out_w")?,
            head_out_b: self.params.bind(g, "head.out_b")?,
        })
    }

    /// Sum of squares over all supervised parameters (policy params carry
    /// no weight decay; they are trained by reward alone).
    pub fn l2_penalty(&self, g: &mut Graph, _bound: &BoundModel) -> Result<Tensor> {
        let mut total: Option<Tensor> = None;
        let names: Vec<String> = self
            .params
            .names()
            .filter(|n| !is_policy_param(n))
            .map(str::to_string)
            .collect();
        for name in names {
            let t = self.params.bind(g, &name)?;
            let sq = g.mul(t, t)?;
            let s = g.sum(sq)?;
            total = Some(match total {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
        }
        Ok(total.expect("model has supervised parameters"))
    }

    /// Encode one token sequence; `None` forward when the encoder is the
    /// bag-of-words ablation.
    pub fn encode_sentence(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        tokens: &[usize],
        mode: &SelectionMode,
        key: RngKey,
        dropout: Option<(Real, RngKey)>,
    ) -> Result<(Tensor, Option<crate::encoder::ResaForward>)> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput { op: "encode" });
        }
        let n = tokens.len();
        let d = self.config.resa.hidden;
        let mut x = g.gather_cols(bound.embed, tokens)?;
        if let Some((keep_prob, dkey)) = dropout {
            let mask = dropout_mask(d * n, keep_prob, dkey.with(role::DROPOUT_INPUT), true);
            let m = g.constant(&[d, n], mask)?;
            x = g.mul(x, m)?;
        }
        if self.config.bag_of_words {
            let e = g.mean_pool(x, &vec![true; n])?;
            return Ok((e, None));
        }
        let (e, fwd) = resan_encode(g, x, &bound.resa, &self.config.resa, key, mode)?;
        Ok((e, Some(fwd)))
    }

    /// Forward one example and assemble the task distribution, target
    /// log-likelihood and selection log-probability.
    pub fn forward_example(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        example: &PreparedExample,
        mode: &SelectionMode,
        key: RngKey,
        dropout: Option<(Real, RngKey)>,
    ) -> Result<ExampleForward> {
        let has_b = !example.tokens_b.is_empty();
        if self.config.pair_inputs != has_b {
            return Err(Error::InvalidConfig(format!(
                "model expects pair_inputs={}, example has {} sentences",
                self.config.pair_inputs,
                1 + has_b as usize
            )));
        }

        let dropout_for = |sentence: u64| dropout.map(|(keep, dkey)| (keep, dkey.with(sentence)));
        let (e_a, fwd_a) = self.encode_sentence(
            g,
            bound,
            &example.tokens_a,
            mode,
            key.with(0),
            dropout_for(0),
        )?;
        let (features, fwd_b) = if has_b {
            let (e_b, fwd_b) = self.encode_sentence(
                g,
                bound,
                &example.tokens_b,
                mode,
                key.with(1),
                dropout_for(1),
            )?;
            let f = match self.config.task {
                TaskKind::Classify { .. } => pair_features_classify(g, e_a, e_b)?,
                TaskKind::Rate { .. } => pair_features_regress(g, e_a, e_b)?,
            };
            (f, fwd_b)
        } else {
            (e_a, None)
        };
        let features = if let Some((keep_prob, dkey)) = dropout {
            let count: usize = g.shape(features).iter().product();
            let mask = dropout_mask(count, keep_prob, dkey.with(role::DROPOUT_FEATURES), true);
            let m = g.constant(&[count], mask)?;
            g.mul(features, m)?
        } else {
            features
        };

        let pre = g.matmul(bound.head_hidden_w, features)?;
        let pre = g.add(pre, bound.head_hidden_b)?;
        let hidden = g.tanh(pre)?;
        let logits = g.matmul(bound.head_out_w, hidden)?;
        let logits = g.add(logits, bound.head_out_b)?;
        let k = self.config.task.output_width();
        let probs = g.softmax_masked(logits, &vec![0.0; k])?;

        let log_likelihood = target_log_likelihood(g, probs, &example.target, k)?;

        // selection bookkeeping across the sentences
        let mut selections = Vec::new();
        let mut traces = Vec::new();
        let mut sel_log_prob: Option<Tensor> = None;
        for fwd in [fwd_a, fwd_b].into_iter().flatten() {
            sel_log_prob = Some(match sel_log_prob {
                Some(acc) => g.add(acc, fwd.sel_log_prob)?,
                None => fwd.sel_log_prob,
            });
            selections.push(fwd.selection);
            traces.push(fwd.trace);
        }
        let sel_log_prob = match sel_log_prob {
            Some(t) => t,
            None => g.scalar(0.0), // bag-of-words: no selections drawn
        };

        let values = g.values(probs);
        let prediction = match self.config.task {
            TaskKind::Classify { .. } => Prediction::Class(argmax(values)),
            TaskKind::Rate { .. } => Prediction::Rating(expected_rating(values)),
        };
        Ok(ExampleForward {
            probs,
            log_likelihood,
            sel_log_prob,
            selections,
            traces,
            token_count: example.tokens_a.len() + example.tokens_b.len(),
            prediction,
        })
    }
}

fn argmax(values: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Sparse target over rating levels `1..=K`: an integer rating is one-hot,
/// a fractional one splits mass between the two adjacent levels so its
/// expectation equals the rating.
pub fn rating_target_distribution(rating: Real, levels: usize) -> Result<Vec<Real>> {
    let k = levels as Real;
    if !(1.0..=k).contains(&rating) {
        return Err(Error::InvalidConfig(format!(
            "rating {rating} outside [1, {levels}]"
        )));
    }
    let mut t = vec![0.0; levels];
    let low = rating.floor() as usize;
    if low as Real == rating {
        t[low - 1] = 1.0;
    } else {
        let frac = rating - low as Real;
        t[low - 1] = 1.0 - frac;
        t[low] = frac;
    }
    Ok(t)
}

/// `log p(target)`: the target-class log-probability for classification,
/// the target-weighted mean log-probability for ratings.
fn target_log_likelihood(
    g: &mut Graph,
    probs: Tensor,
    target: &Target,
    k: usize,
) -> Result<Tensor> {
    let weights = match target {
        Target::Class(y) => {
            if *y >= k {
                return Err(Error::InvalidConfig(format!(
                    "class {y} out of range for {k} classes"
                )));
            }
            let mut w = vec![0.0; k];
            w[*y] = 1.0;
            w
        }
        Target::Rating(r) => rating_target_distribution(*r, k)?,
    };
    let w = g.constant(&[k], weights)?;
    let lp = g.log(probs)?;
    let weighted = g.mul(w, lp)?;
    g.sum(weighted)
}
