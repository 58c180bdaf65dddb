//! Data ingestion: embedding tables, sentence-pair datasets, and a
//! synthetic task whose label hangs on one long-range marker pair.
//!
//! Everything is text-based and deterministic. The synthetic task plants
//! exactly one key marker and one value marker far apart in a sea of
//! distractors; the label depends on the value type and on which marker
//! comes first, so any order-blind bag of tokens caps out at chance while
//! an encoder that can relate the two markers separates cleanly.

use crate::error::{Error, Result};
use crate::model::{PreparedExample, Target};
use crate::rng::RngKey;
use crate::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// Token table with per-entry vectors and trainability flags. Entries
/// loaded from an embedding file stay frozen; out-of-vocabulary tokens are
/// added with small uniform vectors and marked trainable.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    dim: usize,
    token_to_index: HashMap<String, usize>,
    tokens: Vec<String>,
    vectors: Vec<Vec<Real>>,
    trainable: Vec<bool>,
    /// Duplicate lines encountered while loading (first occurrence wins).
    pub duplicates: usize,
}

impl Vocabulary {
    pub fn new(dim: usize) -> Self {
        Vocabulary {
            dim,
            token_to_index: HashMap::new(),
            tokens: Vec::new(),
            vectors: Vec::new(),
            trainable: Vec::new(),
            duplicates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.token_to_index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vector(&self, index: usize) -> &[Real] {
        &self.vectors[index]
    }

    pub fn is_trainable(&self, index: usize) -> bool {
        self.trainable[index]
    }

    /// Insert a token with an explicit vector; duplicates keep the first
    /// vector and bump the counter.
    pub fn insert(&mut self, token: &str, vector: Vec<Real>, trainable: bool) -> usize {
        if let Some(&idx) = self.token_to_index.get(token) {
            self.duplicates += 1;
            return idx;
        }
        debug_assert_eq!(vector.len(), self.dim);
        let idx = self.tokens.len();
        self.token_to_index.insert(token.to_string(), idx);
        self.tokens.push(token.to_string());
        self.vectors.push(vector);
        self.trainable.push(trainable);
        idx
    }

    /// Look up a token, adding it with a uniform(-0.05, 0.05) trainable
    /// vector when missing. The vector is keyed by the token text, so the
    /// result does not depend on encounter order.
    pub fn get_or_insert(&mut self, token: &str, key: RngKey) -> usize {
        if let Some(&idx) = self.token_to_index.get(token) {
            return idx;
        }
        let mut rng = key.with(fnv(token)).stream();
        let vector: Vec<Real> = (0..self.dim).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let idx = self.tokens.len();
        self.token_to_index.insert(token.to_string(), idx);
        self.tokens.push(token.to_string());
        self.vectors.push(vector);
        self.trainable.push(true);
        idx
    }

    /// Row-major `[d, vocab]` table for the model's embedding parameter.
    pub fn embedding_table(&self) -> Vec<Real> {
        let v = self.len();
        let mut out = vec![0.0; self.dim * v];
        for (c, vec) in self.vectors.iter().enumerate() {
            for (r, &x) in vec.iter().enumerate() {
                out[r * v + c] = x;
            }
        }
        out
    }

    /// Per-value gradient mask freezing non-trainable columns, or `None`
    /// if everything is trainable.
    pub fn update_mask(&self) -> Option<Vec<Real>> {
        if self.trainable.iter().all(|&t| t) {
            return None;
        }
        let v = self.len();
        let mut mask = vec![0.0; self.dim * v];
        for (c, &t) in self.trainable.iter().enumerate() {
            if t {
                for r in 0..self.dim {
                    mask[r * v + c] = 1.0;
                }
            }
        }
        Some(mask)
    }
}

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Load a text embedding file: one token per line followed by
/// whitespace-separated floats. Loaded vectors are frozen.
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<Vocabulary> {
    let file = File::open(path)?;
    let mut vocab = Vocabulary::new(expected_dim);
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line has a first field");
        let floats: std::result::Result<Vec<Real>, _> =
            parts.map(|p| p.parse::<Real>()).collect();
        let floats = floats.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: format!("bad float: {e}"),
        })?;
        if floats.len() != expected_dim {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("expected {expected_dim} values, found {}", floats.len()),
            });
        }
        vocab.insert(token, floats, false);
    }
    Ok(vocab)
}

/// Whitespace tokenization, lowercased by default.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            if lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// A parsed example before vocabulary lookup.
#[derive(Debug, Clone)]
pub struct RawExample {
    pub tokens_a: Vec<String>,
    pub tokens_b: Vec<String>,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairFormat {
    SnliJsonl,
    SickTsv,
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub examples: Vec<RawExample>,
    /// Records skipped for carrying no gold label.
    pub skipped: usize,
}

pub const INFERENCE_LABELS: [&str; 3] = ["entailment", "neutral", "contradiction"];

#[derive(Deserialize)]
struct SnliRecord {
    sentence1: String,
    sentence2: String,
    gold_label: String,
}

/// Load a sentence-pair dataset. SNLI-style JSONL records with gold label
/// `-` are skipped and counted; SICK-style TSV rows are
/// `sentence_a <TAB> sentence_b <TAB> rating` with ratings in `[1, 5]`.
pub fn load_pair_dataset(path: &Path, format: PairFormat, lowercase: bool) -> Result<LoadedDataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    let mut skipped = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match format {
            PairFormat::SnliJsonl => {
                let record: SnliRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
                if record.gold_label == "-" {
                    skipped += 1;
                    continue;
                }
                let label = INFERENCE_LABELS
                    .iter()
                    .position(|&l| l == record.gold_label)
                    .ok_or_else(|| Error::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        message: format!("unknown gold label {:?}", record.gold_label),
                    })?;
                examples.push(RawExample {
                    tokens_a: tokenize(&record.sentence1, lowercase),
                    tokens_b: tokenize(&record.sentence2, lowercase),
                    target: Target::Class(label),
                });
            }
            PairFormat::SickTsv => {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 3 {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                    });
                }
                let rating: Real = fields[2].trim().parse().map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: format!("bad rating: {e}"),
                })?;
                if !(1.0..=5.0).contains(&rating) {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        message: format!("rating {rating} outside [1, 5]"),
                    });
                }
                examples.push(RawExample {
                    tokens_a: tokenize(fields[0], lowercase),
                    tokens_b: tokenize(fields[1], lowercase),
                    target: Target::Rating(rating),
                });
            }
        }
    }
    Ok(LoadedDataset { examples, skipped })
}

#[derive(Serialize, Deserialize)]
struct SingleRecord {
    sentence: String,
    label: usize,
}

/// Load single-sentence classification data: one JSON record per line with
/// `sentence` and `label` fields (the format `train --task synthetic`
/// exports its splits in).
pub fn load_single_dataset(path: &Path, lowercase: bool) -> Result<LoadedDataset> {
    let file = File::open(path)?;
    let mut examples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SingleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        examples.push(RawExample {
            tokens_a: tokenize(&record.sentence, lowercase),
            tokens_b: Vec::new(),
            target: Target::Class(record.label),
        });
    }
    Ok(LoadedDataset {
        examples,
        skipped: 0,
    })
}

/// Write single-sentence examples in the JSONL form `load_single_dataset`
/// reads back.
pub fn export_single_dataset(examples: &[RawExample], path: &Path) -> Result<()> {
    use std::io::Write;
    let file = File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for ex in examples {
        let label = match ex.target {
            Target::Class(c) => c,
            Target::Rating(_) => {
                return Err(Error::InvalidConfig(
                    "single-sentence export expects class labels".to_string(),
                ))
            }
        };
        let record = SingleRecord {
            sentence: ex.tokens_a.join(" "),
            label,
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Map raw examples through a frozen vocabulary, sending unknown tokens to
/// `fallback` (conventionally the `<oov>` entry reserved at training time).
pub fn prepare_examples_frozen(
    raw: &[RawExample],
    vocab: &Vocabulary,
    fallback: usize,
) -> Vec<PreparedExample> {
    let map = |tokens: &[String]| -> Vec<usize> {
        tokens
            .iter()
            .map(|t| vocab.index_of(t).unwrap_or(fallback))
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

/// Map raw token examples to vocabulary indices, inserting OOV entries.
pub fn prepare_examples(
    raw: &[RawExample],
    vocab: &mut Vocabulary,
    oov_key: RngKey,
) -> Vec<PreparedExample> {
    raw.iter()
        .map(|ex| PreparedExample {
            tokens_a: ex
                .tokens_a
                .iter()
                .map(|t| vocab.get_or_insert(t, oov_key))
                .collect(),
            tokens_b: ex
                .tokens_b
                .iter()
                .map(|t| vocab.get_or_insert(t, oov_key))
                .collect(),
            target: ex.target,
        })
        .collect()
}

// ---- synthetic task --------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Distractor token inventory.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Distinct value-marker types.
    pub marker_types: usize,
    /// Probability a filler position draws a fresh distractor rather than
    /// the common filler token.
    pub distractor_rate: Real,
    pub seed: u64,
    pub classes: usize,
    /// Minimum distance between the two planted markers.
    pub min_marker_distance: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 50,
            min_len: 40,
            max_len: 40,
            marker_types: 1,
            distractor_rate: 1.0,
            seed: 1,
            classes: 2,
            min_marker_distance: 20,
        }
    }
}

/// One synthetic example with its planted marker positions (ground truth
/// for selection-recall measurements).
#[derive(Debug, Clone)]
pub struct SyntheticExample {
    pub example: RawExample,
    pub key_pos: usize,
    pub value_pos: usize,
}

/// Generate `count` deterministic examples. Each sentence holds exactly
/// one key marker and one value marker at distance >= the configured
/// minimum; the label is `(value_type + [key after value]) mod classes`,
/// balanced by construction.
pub fn generate_synthetic(spec: &SyntheticSpec, count: usize) -> Result<Vec<SyntheticExample>> {
    if spec.classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "synthetic task needs >= 2 classes, got {}",
            spec.classes
        )));
    }
    if spec.min_len < 4 || spec.min_len > spec.max_len {
        return Err(Error::InvalidConfig(format!(
            "bad length range [{}, {}]",
            spec.min_len, spec.max_len
        )));
    }
    if spec.min_marker_distance + 1 >= spec.min_len {
        return Err(Error::InvalidConfig(format!(
            "length {} cannot fit markers {} apart",
            spec.min_len, spec.min_marker_distance
        )));
    }
    if spec.marker_types == 0 || spec.vocab_size == 0 {
        return Err(Error::InvalidConfig(
            "need at least one marker type and one distractor".to_string(),
        ));
    }
    let base = RngKey::new(spec.seed);
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let mut rng = base.with(idx as u64).stream();
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let first = rng.gen_range(0..len - spec.min_marker_distance);
        let second = rng.gen_range(first + spec.min_marker_distance..len);
        let key_first = rng.gen_bool(0.5);
        let (key_pos, value_pos) = if key_first {
            (first, second)
        } else {
            (second, first)
        };
        let value_type = rng.gen_range(0..spec.marker_types);
        let label = (value_type + usize::from(key_pos > value_pos)) % spec.classes;
        let mut tokens: Vec<String> = (0..len)
            .map(|_| {
                if rng.gen_bool(spec.distractor_rate as f64) {
                    format!("w{:02}", rng.gen_range(0..spec.vocab_size))
                } else {
                    "the".to_string()
                }
            })
            .collect();
        tokens[key_pos] = "key".to_string();
        tokens[value_pos] = format!("val{value_type}");
        out.push(SyntheticExample {
            example: RawExample {
                tokens_a: tokens,
                tokens_b: Vec::new(),
                target: Target::Class(label),
            },
            key_pos,
            value_pos,
        });
    }
    Ok(out)
}

// ---- embedded batches ------------------------------------------------------

/// A batch of embedded token sequences padded to a common length, with the
/// per-item true lengths and padding masks.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub dim: usize,
    pub max_len: usize,
    pub lengths: Vec<usize>,
    data: Vec<Real>,
}

impl SequenceBatch {
    /// Embed index sequences through a vocabulary table.
    pub fn from_token_ids(items: &[Vec<usize>], vocab: &Vocabulary) -> Result<Self> {
        if items.is_empty() || items.iter().any(Vec::is_empty) {
            return Err(Error::EmptyInput {
                op: "sequence_batch",
            });
        }
        let dim = vocab.dim();
        let max_len = items.iter().map(Vec::len).max().unwrap();
        let mut data = vec![0.0; items.len() * dim * max_len];
        for (b, item) in items.iter().enumerate() {
            let block = &mut data[b * dim * max_len..(b + 1) * dim * max_len];
            for (pos, &id) in item.iter().enumerate() {
                for (r, &v) in vocab.vector(id).iter().enumerate() {
                    block[r * max_len + pos] = v;
                }
            }
        }
        Ok(SequenceBatch {
            dim,
            max_len,
            lengths: items.iter().map(Vec::len).collect(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Padded `[d, max_len]` values for one item.
    pub fn item(&self, index: usize) -> &[Real] {
        &self.data[index * self.dim * self.max_len..(index + 1) * self.dim * self.max_len]
    }

    /// True for real positions, false for padding.
    pub fn padding_mask(&self, index: usize) -> Vec<bool> {
        (0..self.max_len).map(|p| p < self.lengths[index]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn embeddings_parse_exact_floats() {
        let f = write_temp("hello 0.25 -1.5 3.0\nworld 1.0 2.0 -0.125\n");
        let vocab = load_embeddings(f.path(), 3).unwrap();
        assert_eq!(vocab.len(), 2);
        assert_eq!(vocab.vector(vocab.index_of("hello").unwrap()), &[0.25, -1.5, 3.0]);
        assert_eq!(vocab.vector(vocab.index_of("world").unwrap()), &[1.0, 2.0, -0.125]);
        assert!(!vocab.is_trainable(0));
    }

    #[test]
    fn embeddings_dimension_error_names_line() {
        let f = write_temp("ok 1.0 2.0 3.0\nshort 1.0 2.0\n");
        let err = load_embeddings(f.path(), 3).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn duplicate_tokens_keep_first() {
        let f = write_temp("a 1.0\na 2.0\n");
        let vocab = load_embeddings(f.path(), 1).unwrap();
        assert_eq!(vocab.len(), 1);
        assert_eq!(vocab.duplicates, 1);
        assert_eq!(vocab.vector(0), &[1.0]);
    }

    #[test]
    fn oov_tokens_are_small_and_trainable() {
        let mut vocab = Vocabulary::new(4);
        let idx = vocab.get_or_insert("mystery", RngKey::new(3));
        assert!(vocab.vector(idx).iter().all(|v| v.abs() <= 0.05));
        assert!(vocab.is_trainable(idx));
        // keyed by token text: same index path regardless of order
        let mut other = Vocabulary::new(4);
        other.get_or_insert("first", RngKey::new(3));
        let j = other.get_or_insert("mystery", RngKey::new(3));
        assert_eq!(vocab.vector(idx), other.vector(j));
    }

    #[test]
    fn tokenize_lowercases() {
        assert_eq!(tokenize("The Cat  sat", true), vec!["the", "cat", "sat"]);
        assert_eq!(tokenize("The Cat", false), vec!["The", "Cat"]);
    }

    #[test]
    fn snli_load_counts_and_skips() {
        let f = write_temp(concat!(
            r#"{"sentence1": "A b", "sentence2": "c", "gold_label": "entailment"}"#,
            "\n",
            r#"{"sentence1": "d", "sentence2": "e f", "gold_label": "-"}"#,
            "\n",
            r#"{"sentence1": "g", "sentence2": "h", "gold_label": "contradiction"}"#,
            "\n",
            r#"{"sentence1": "i", "sentence2": "j", "gold_label": "neutral"}"#,
            "\n",
        ));
        let ds = load_pair_dataset(f.path(), PairFormat::SnliJsonl, true).unwrap();
        assert_eq!(ds.examples.len(), 3);
        assert_eq!(ds.skipped, 1);
        assert_eq!(ds.examples[0].target, Target::Class(0));
        assert_eq!(ds.examples[1].target, Target::Class(2));
    }

    #[test]
    fn snli_unknown_label_errors_with_line() {
        let f = write_temp(r#"{"sentence1": "a", "sentence2": "b", "gold_label": "maybe"}"#);
        let err = load_pair_dataset(f.path(), PairFormat::SnliJsonl, true)
            .unwrap_err()
            .to_string();
        assert!(err.contains(":1:"), "{err}");
        assert!(err.contains("maybe"), "{err}");
    }

    #[test]
    fn snli_malformed_record_errors() {
        let f = write_temp("{not json}\n");
        assert!(load_pair_dataset(f.path(), PairFormat::SnliJsonl, true).is_err());
    }

    #[test]
    fn sick_ratings_parse() {
        let f = write_temp("A man walks\tA person is walking\t4.5\n");
        let ds = load_pair_dataset(f.path(), PairFormat::SickTsv, true).unwrap();
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.examples[0].target, Target::Rating(4.5));
    }

    #[test]
    fn sick_rejects_out_of_range() {
        let f = write_temp("a\tb\t9.0\n");
        assert!(load_pair_dataset(f.path(), PairFormat::SickTsv, true).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec, 20).unwrap();
        let b = generate_synthetic(&spec, 20).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.example.tokens_a, y.example.tokens_a);
            assert_eq!(x.example.target, y.example.target);
        }
    }

    #[test]
    fn synthetic_examples_have_one_marker_pair() {
        let spec = SyntheticSpec::default();
        for ex in generate_synthetic(&spec, 200).unwrap() {
            let keys = ex.example.tokens_a.iter().filter(|t| *t == "key").count();
            let vals = ex
                .example
                .tokens_a
                .iter()
                .filter(|t| t.starts_with("val"))
                .count();
            assert_eq!(keys, 1);
            assert_eq!(vals, 1);
            let dist = ex.key_pos.abs_diff(ex.value_pos);
            assert!(dist >= spec.min_marker_distance, "distance {dist}");
            assert_eq!(ex.example.tokens_a[ex.key_pos], "key");
            assert!(ex.example.tokens_a[ex.value_pos].starts_with("val"));
        }
    }

    #[test]
    fn synthetic_labels_are_balanced() {
        let spec = SyntheticSpec::default();
        let examples = generate_synthetic(&spec, 10_000).unwrap();
        let mut counts = vec![0usize; spec.classes];
        for ex in &examples {
            if let Target::Class(c) = ex.example.target {
                counts[c] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / examples.len() as f64;
            assert!((0.45..=0.55).contains(&freq), "class frequency {freq}");
        }
    }

    #[test]
    fn synthetic_rejects_infeasible_specs() {
        let spec = SyntheticSpec {
            min_len: 10,
            max_len: 10,
            min_marker_distance: 12,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&spec, 1).is_err());
        let spec = SyntheticSpec {
            min_len: 3,
            max_len: 3,
            min_marker_distance: 1,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&spec, 1).is_err());
    }

    #[test]
    fn single_dataset_round_trip() {
        let examples = vec![RawExample {
            tokens_a: vec!["key".into(), "w01".into(), "val0".into()],
            tokens_b: vec![],
            target: Target::Class(1),
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        export_single_dataset(&examples, &path).unwrap();
        let back = load_single_dataset(&path, true).unwrap();
        assert_eq!(back.examples.len(), 1);
        assert_eq!(back.examples[0].tokens_a, examples[0].tokens_a);
        assert_eq!(back.examples[0].target, Target::Class(1));
    }

    #[test]
    fn frozen_preparation_uses_fallback() {
        let mut vocab = Vocabulary::new(2);
        let oov = vocab.insert("<oov>", vec![0.0, 0.0], true);
        vocab.insert("cat", vec![1.0, 2.0], true);
        let raw = vec![RawExample {
            tokens_a: vec!["cat".into(), "unseen".into()],
            tokens_b: vec![],
            target: Target::Class(0),
        }];
        let prepared = prepare_examples_frozen(&raw, &vocab, oov);
        assert_eq!(prepared[0].tokens_a, vec![1, oov]);
    }

    #[test]
    fn sequence_batch_pads_and_masks() {
        let mut vocab = Vocabulary::new(2);
        vocab.insert("a", vec![1.0, 2.0], true);
        vocab.insert("b", vec![3.0, 4.0], true);
        let batch = SequenceBatch::from_token_ids(&[vec![0, 1, 0], vec![1]], &vocab).unwrap();
        assert_eq!(batch.max_len, 3);
        assert_eq!(batch.lengths, vec![3, 1]);
        assert_eq!(batch.padding_mask(1), vec![true, false, false]);
        let item1 = batch.item(1);
        assert_eq!(item1[0], 3.0); // feature 0, position 0
        assert_eq!(item1[3], 4.0); // feature 1, position 0
        assert_eq!(item1[1], 0.0); // padding
    }
}
