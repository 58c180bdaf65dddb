//! Command-line interface: train on the synthetic task or sentence-pair
//! datasets, evaluate checkpoints, export selection/attention traces,
//! compare sampler latency, and run the gradient-check suite.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use resan::attention::AttentionKind;
use resan::data::{
    export_single_dataset, generate_synthetic, load_embeddings, load_pair_dataset,
    load_single_dataset, prepare_examples, tokenize, LoadedDataset, PairFormat, RawExample,
    SyntheticExample, SyntheticSpec, Vocabulary,
};
use resan::encoder::{BaseMask, ResaConfig, ResaVariant, SelectionMode};
use resan::io::{
    content_hash, export_metrics, export_traces, load_checkpoint, save_checkpoint, save_snapshot,
    Checkpoint, RunSnapshot, TraceRecord, CHECKPOINT_VERSION,
};
use resan::model::{ModelConfig, PreparedExample, ResanModel, TaskKind};
use resan::rng::RngKey;
use resan::sampling::{speed_comparison, Activation, SampleMode};
use resan::suite::gradient_suite;
use resan::training::{evaluate_model, EpochRecord, TrainConfig, Trainer};
use resan::Real;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

const OOV_TOKEN: &str = "<oov>";

#[derive(Parser)]
#[command(name = "resan", version, about = "Reinforced self-attention sentence encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, metrics and run snapshot
    Train(TrainArgs),
    /// Evaluate a checkpoint on a data file
    Eval(EvalArgs),
    /// Export the selection and attention trace for one sentence
    Trace(TraceArgs),
    /// Compare parallel vs iterative token-selection latency
    BenchSampling(BenchArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Synthetic,
    Snli,
    Sick,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    /// JSON run configuration; omitted fields take per-task defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// full | no-unselected-heads | single-rss
    #[arg(long)]
    variant: Option<String>,
    /// Selection penalty weight
    #[arg(long)]
    lambda: Option<Real>,
    /// Dropout keep probability
    #[arg(long)]
    keep_prob: Option<Real>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// sample | threshold | force-all
    #[arg(long, default_value = "threshold")]
    select_mode: String,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sentence: String,
    /// sample | threshold | force-all
    #[arg(long, default_value = "threshold")]
    select_mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Sequence lengths to measure
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    repeats: usize,
    /// Token width (samplers sized to matching parameter counts)
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 12345)]
    seed: u64,
}

// ---- run configuration -----------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
struct RunConfig {
    hidden: Option<usize>,
    classifier_hidden: Option<usize>,
    rss_hidden: Option<usize>,
    attention: AttentionKind,
    variant: ResaVariant,
    base_mask: Option<BaseMask>,
    eval_mode: SampleMode,
    activation: Activation,
    sharpness: Real,
    bag_of_words: bool,
    lowercase: bool,
    train: TrainConfig,
    synthetic: SyntheticSpec,
    train_count: usize,
    dev_count: usize,
    test_count: usize,
    train_data: Option<PathBuf>,
    dev_data: Option<PathBuf>,
    embeddings: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hidden: None,
            classifier_hidden: None,
            rss_hidden: None,
            attention: AttentionKind::MultiDim,
            variant: ResaVariant::Full,
            base_mask: None,
            eval_mode: SampleMode::Threshold,
            activation: Activation::Tanh,
            sharpness: 5.0,
            bag_of_words: false,
            lowercase: true,
            train: TrainConfig::default(),
            synthetic: SyntheticSpec::default(),
            train_count: 10_000,
            dev_count: 1_000,
            test_count: 1_000,
            train_data: None,
            dev_data: None,
            embeddings: None,
        }
    }
}

fn parse_variant(s: &str) -> Result<ResaVariant> {
    Ok(match s {
        "full" => ResaVariant::Full,
        "no-unselected-heads" => ResaVariant::NoUnselectedHeads,
        "single-rss" => ResaVariant::SingleRss,
        other => bail!("unknown variant {other:?} (full | no-unselected-heads | single-rss)"),
    })
}

fn parse_select_mode(s: &str) -> Result<SampleMode> {
    Ok(match s {
        "sample" => SampleMode::Sample,
        "threshold" => SampleMode::Threshold,
        "force-all" => SampleMode::ForceAll,
        other => bail!("unknown select mode {other:?} (sample | threshold | force-all)"),
    })
}

fn resa_config(rc: &RunConfig, hidden: usize, default_base: BaseMask) -> ResaConfig {
    let mut resa = ResaConfig::new(hidden);
    resa.attention = rc.attention;
    resa.variant = rc.variant;
    resa.base_mask = rc.base_mask.unwrap_or(default_base);
    resa.eval_mode = rc.eval_mode;
    resa.activation = rc.activation;
    resa.sharpness = rc.sharpness;
    resa.rss_hidden = rc.rss_hidden.unwrap_or(hidden);
    resa
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Trace(args) => run_trace(args),
        Command::BenchSampling(args) => run_bench(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    }
}

// ---- train -------------------------------------------------------------------

fn load_run_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut rc: RunConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        rc.train.seed = seed;
        rc.synthetic.seed = seed;
    }
    if let Some(v) = &args.variant {
        rc.variant = parse_variant(v)?;
    }
    if let Some(l) = args.lambda {
        rc.train.lambda = l;
    }
    if let Some(k) = args.keep_prob {
        rc.train.keep_prob = k;
    }
    Ok(rc)
}

fn run_train(args: TrainArgs) -> Result<()> {
    let rc = load_run_config(&args)?;
    let mut inputs: Vec<(String, String)> = Vec::new();
    if let Some(cfg) = &args.config {
        inputs.push((cfg.display().to_string(), content_hash(cfg)?));
    }

    let (model, vocab, train_set, dev_set, test_set) = match args.task {
        TaskArg::Synthetic => build_synthetic_run(&rc)?,
        TaskArg::Snli => build_pair_run(&rc, PairFormat::SnliJsonl, &mut inputs)?,
        TaskArg::Sick => build_pair_run(&rc, PairFormat::SickTsv, &mut inputs)?,
    };

    println!(
        "training: {} examples, dev {}, vocab {}, {} parameters",
        train_set.len(),
        dev_set.len(),
        vocab.len(),
        model.params.count_values(|_| true),
    );
    let train_cfg = rc.train.clone();
    let mut trainer = Trainer::new(model, train_cfg.clone());
    let records = trainer.run(&train_set, &dev_set, |r| {
        println!(
            "epoch {:3} [{}] train_loss={:.4} dev_loss={:.4} dev_metric={:.4} sel={:.2}/{:.2} reward={:.4}",
            r.epoch,
            match r.phase {
                resan::training::Phase::Warmup => "warmup",
                resan::training::Phase::Joint => "joint ",
            },
            r.train_loss,
            r.dev_loss,
            r.dev_accuracy_or_mse,
            r.mean_selection_fraction_head,
            r.mean_selection_fraction_dep,
            r.mean_reward,
        );
    })?;

    fs::create_dir_all(&args.out)?;
    write_outputs(&args.out, &trainer.model, &train_cfg, &vocab, &records, inputs)?;

    if let Some(test) = test_set {
        // phase-aware: force-all selections if training never left warmup
        let report = trainer.evaluate(&test)?;
        println!(
            "test: metric={:.4} loss={:.4} sel={:.2}/{:.2}",
            report.metric,
            report.loss,
            report.selection_fraction_head,
            report.selection_fraction_dep
        );
    }
    if matches!(args.task, TaskArg::Synthetic) {
        // the generated test split, in the form `eval --data` reads back
        let mut s = rc.synthetic.clone();
        s.seed = rc.synthetic.seed + 2;
        let test_raw: Vec<RawExample> = generate_synthetic(&s, rc.test_count)?
            .into_iter()
            .map(|e| e.example)
            .collect();
        export_single_dataset(&test_raw, &args.out.join("synthetic_test.jsonl"))?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

type RunData = (
    ResanModel,
    Vocabulary,
    Vec<PreparedExample>,
    Vec<PreparedExample>,
    Option<Vec<PreparedExample>>,
);

fn build_synthetic_run(rc: &RunConfig) -> Result<RunData> {
    let hidden = rc.hidden.unwrap_or(24);
    let spec = rc.synthetic.clone();
    let make = |seed: u64, count: usize| -> Result<Vec<SyntheticExample>> {
        let mut s = spec.clone();
        s.seed = seed;
        Ok(generate_synthetic(&s, count)?)
    };
    let train_raw: Vec<RawExample> = make(spec.seed, rc.train_count)?
        .into_iter()
        .map(|e| e.example)
        .collect();
    let dev_raw: Vec<RawExample> = make(spec.seed + 1, rc.dev_count)?
        .into_iter()
        .map(|e| e.example)
        .collect();
    let test_raw: Vec<RawExample> = make(spec.seed + 2, rc.test_count)?
        .into_iter()
        .map(|e| e.example)
        .collect();

    let mut vocab = Vocabulary::new(hidden);
    let oov_key = RngKey::new(rc.train.seed).with(1234);
    vocab.get_or_insert(OOV_TOKEN, oov_key);
    let train_set = prepare_examples(&train_raw, &mut vocab, oov_key);
    let dev_set = prepare_examples(&dev_raw, &mut vocab, oov_key);
    let test_set = prepare_examples(&test_raw, &mut vocab, oov_key);

    let mut config = ModelConfig::classify(hidden, spec.classes, false, vocab.len());
    config.resa = resa_config(rc, hidden, BaseMask::Forward);
    config.classifier_hidden = rc.classifier_hidden.unwrap_or(hidden);
    config.bag_of_words = rc.bag_of_words;
    config.lowercase = rc.lowercase;
    let mut model = ResanModel::new(config, rc.train.seed);
    model.install_embeddings(vocab.embedding_table(), vocab.update_mask())?;
    Ok((model, vocab, train_set, dev_set, Some(test_set)))
}

fn build_pair_run(
    rc: &RunConfig,
    format: PairFormat,
    inputs: &mut Vec<(String, String)>,
) -> Result<RunData> {
    let hidden = rc.hidden.unwrap_or(300);
    let train_path = rc
        .train_data
        .as_ref()
        .context("config must set train_data for this task")?;
    let dev_path = rc
        .dev_data
        .as_ref()
        .context("config must set dev_data for this task")?;
    let train_loaded = load_pair_dataset(train_path, format, rc.lowercase)?;
    let dev_loaded = load_pair_dataset(dev_path, format, rc.lowercase)?;
    inputs.push((train_path.display().to_string(), content_hash(train_path)?));
    inputs.push((dev_path.display().to_string(), content_hash(dev_path)?));
    if train_loaded.skipped > 0 {
        println!("skipped {} unlabeled training records", train_loaded.skipped);
    }

    let mut vocab = match &rc.embeddings {
        Some(path) => {
            let v = load_embeddings(path, hidden)?;
            inputs.push((path.display().to_string(), content_hash(path)?));
            if v.duplicates > 0 {
                eprintln!("warning: {} duplicate embedding tokens ignored", v.duplicates);
            }
            v
        }
        None => Vocabulary::new(hidden),
    };
    let oov_key = RngKey::new(rc.train.seed).with(1234);
    vocab.get_or_insert(OOV_TOKEN, oov_key);
    let train_set = prepare_examples(&train_loaded.examples, &mut vocab, oov_key);
    let dev_set = prepare_examples(&dev_loaded.examples, &mut vocab, oov_key);

    let task = match format {
        PairFormat::SnliJsonl => TaskKind::Classify { classes: 3 },
        PairFormat::SickTsv => TaskKind::Rate { levels: 5 },
    };
    let mut config = ModelConfig {
        resa: resa_config(rc, hidden, BaseMask::DiagonalOnly),
        task,
        pair_inputs: true,
        classifier_hidden: rc.classifier_hidden.unwrap_or(hidden),
        vocab_size: vocab.len(),
        bag_of_words: rc.bag_of_words,
        lowercase: rc.lowercase,
    };
    config.resa.hidden = hidden;
    let mut model = ResanModel::new(config, rc.train.seed);
    model.install_embeddings(vocab.embedding_table(), vocab.update_mask())?;
    Ok((model, vocab, train_set, dev_set, None))
}

fn write_outputs(
    out: &Path,
    model: &ResanModel,
    train_cfg: &TrainConfig,
    vocab: &Vocabulary,
    records: &[EpochRecord],
    inputs: Vec<(String, String)>,
) -> Result<()> {
    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        model: model.config.clone(),
        train: train_cfg.clone(),
        vocab_tokens: vocab.tokens().to_vec(),
        params: model.params.clone(),
    };
    save_checkpoint(&checkpoint, &out.join("checkpoint.json"))?;
    export_metrics(records, &out.join("metrics.jsonl"))?;
    let snapshot = RunSnapshot {
        seed: train_cfg.seed,
        model: model.config.clone(),
        train: train_cfg.clone(),
        inputs,
        invocation: std::env::args().collect(),
    };
    save_snapshot(&snapshot, &out.join("run_config.json"))?;
    Ok(())
}

// ---- eval --------------------------------------------------------------------

fn token_index(tokens: &[String]) -> (HashMap<String, usize>, usize) {
    let map: HashMap<String, usize> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    let fallback = map.get(OOV_TOKEN).copied().unwrap_or(0);
    (map, fallback)
}

fn prepare_with_index(
    raw: &[RawExample],
    index: &HashMap<String, usize>,
    fallback: usize,
) -> Vec<PreparedExample> {
    let map = |tokens: &[String]| -> Vec<usize> {
        tokens
            .iter()
            .map(|t| index.get(t).copied().unwrap_or(fallback))
            .collect()
    };
    raw.iter()
        .map(|ex| PreparedExample {
            tokens_a: map(&ex.tokens_a),
            tokens_b: map(&ex.tokens_b),
            target: ex.target,
        })
        .collect()
}

fn load_for_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<LoadedDataset> {
    let lc = ckpt.model.lowercase;
    let loaded = match (ckpt.model.pair_inputs, ckpt.model.task) {
        (true, TaskKind::Classify { .. }) => load_pair_dataset(path, PairFormat::SnliJsonl, lc)?,
        (true, TaskKind::Rate { .. }) => load_pair_dataset(path, PairFormat::SickTsv, lc)?,
        (false, _) => load_single_dataset(path, lc)?,
    };
    Ok(loaded)
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let mode = parse_select_mode(&args.select_mode)?;
    let loaded = load_for_checkpoint(&ckpt, &args.data)?;
    let (index, fallback) = token_index(&ckpt.vocab_tokens);
    let prepared = prepare_with_index(&loaded.examples, &index, fallback);
    let model = ResanModel {
        config: ckpt.model,
        params: ckpt.params,
    };
    let report = evaluate_model(&model, &prepared, &ckpt.train, Some(mode))?;
    let metric_name = match model.config.task {
        TaskKind::Classify { .. } => "accuracy",
        TaskKind::Rate { .. } => "mse",
    };
    println!(
        "examples={} skipped={} {}={:.4} loss={:.4} sel_head={:.3} sel_dep={:.3} mean_reward={:.4}",
        prepared.len(),
        loaded.skipped,
        metric_name,
        report.metric,
        report.loss,
        report.selection_fraction_head,
        report.selection_fraction_dep,
        report.mean_reward,
    );
    Ok(())
}

// ---- trace -------------------------------------------------------------------

fn run_trace(args: TraceArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    if ckpt.model.bag_of_words {
        bail!("bag-of-words checkpoints have no attention to trace");
    }
    let mode = match parse_select_mode(&args.select_mode)? {
        SampleMode::Sample => SelectionMode::Sample,
        SampleMode::Threshold => SelectionMode::Threshold,
        SampleMode::ForceAll => SelectionMode::ForceAll,
    };
    let tokens = tokenize(&args.sentence, ckpt.model.lowercase);
    if tokens.is_empty() {
        bail!("sentence is empty after tokenization");
    }
    let (index, fallback) = token_index(&ckpt.vocab_tokens);
    let ids: Vec<usize> = tokens
        .iter()
        .map(|t| index.get(t).copied().unwrap_or(fallback))
        .collect();
    let model = ResanModel {
        config: ckpt.model,
        params: ckpt.params,
    };
    let mut g = resan::Graph::new();
    let bound = model.bind(&mut g)?;
    let key = RngKey::new(ckpt.train.seed).with(4242);
    let (_, fwd) = model.encode_sentence(&mut g, &bound, &ids, &mode, key, None)?;
    let fwd = fwd.expect("non-ablation model produces a trace");
    let record = TraceRecord::from_trace(&fwd.trace, Some(tokens.clone()));
    export_traces(std::slice::from_ref(&record), &args.out)?;

    let selected: Vec<&str> = tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| record.z_head[*i] || record.z_dep[*i])
        .map(|(_, t)| t.as_str())
        .collect();
    println!(
        "tokens={} heads={} deps={} pair_evaluations={} selected: {}",
        tokens.len(),
        record.z_head.iter().filter(|&&z| z).count(),
        record.z_dep.iter().filter(|&&z| z).count(),
        record.pair_evaluations,
        selected.join(" "),
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

// ---- bench-sampling ------------------------------------------------------------

fn run_bench(args: BenchArgs) -> Result<()> {
    if args.n.is_empty() {
        bail!("need at least one sequence length");
    }
    let rows = speed_comparison(args.dim, &args.n, args.repeats, args.seed)?;
    println!(
        "{:>6}  {:>12}  {:>14}  {:>8}",
        "n", "rss (us)", "iterative (us)", "speedup"
    );
    for row in &rows {
        println!(
            "{:>6}  {:>12.1}  {:>14.1}  {:>7.2}x",
            row.n,
            row.rss_micros,
            row.iterative_micros,
            row.iterative_micros / row.rss_micros
        );
    }
    println!(
        "parameters: rss={} iterative={} (dim {})",
        rows[0].rss_params, rows[0].iterative_params, args.dim
    );
    Ok(())
}

// ---- gradcheck -----------------------------------------------------------------

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    let results = gradient_suite(args.seed).map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let mut failures = 0;
    for r in &results {
        println!(
            "{} {} (max relative error {:.3e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.max_relative_error
        );
        if !r.passed {
            failures += 1;
        }
    }
    println!("{} checks, {} failed", results.len(), failures);
    if failures > 0 {
        bail!("{failures} gradient checks failed");
    }
    Ok(())
}
