//! Labeled text corpora: loading, tokenization, length statistics, the
//! gap / reverse / reverse* alterations and vectorization into token ids.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{self, Class, SequenceExample};
use crate::error::{Error, Result};
use crate::numerics::{child_seed, SeededRng};

/// Bumped whenever [`tokenize`] changes, since token counts drive thresholds.
pub const TOKENIZER_VERSION: &str = "lower-ws/1";

/// Lowercase, then split on Unicode whitespace. Punctuation stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextExample {
    pub label: Class,
    pub text: String,
    pub tokens: Vec<String>,
}

impl TextExample {
    pub fn new(label: Class, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self { label, text, tokens }
    }

    fn from_tokens(label: Class, tokens: Vec<String>) -> Self {
        Self {
            label,
            text: tokens.join(" "),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadOptions {
    pub label_field: String,
    pub text_field: String,
    /// Fail on the first malformed record instead of skipping it.
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            label_field: "label".into(),
            text_field: "content".into(),
            strict: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub examples: Vec<TextExample>,
    /// Skipped records (lenient mode only).
    pub issues: Vec<ParseIssue>,
}

fn parse_record(line: &str, opts: &LoadOptions) -> std::result::Result<TextExample, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    let label = obj
        .get(&opts.label_field)
        .ok_or_else(|| format!("missing field `{}`", opts.label_field))?;
    let label = match label {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse::<u64>().ok(),
        _ => None,
    }
    .and_then(|v| u8::try_from(v).ok())
    .and_then(|v| Class::try_from(v).ok())
    .ok_or_else(|| format!("field `{}` must be 0 or 1, got {label}", opts.label_field))?;
    let text = obj
        .get(&opts.text_field)
        .ok_or_else(|| format!("missing field `{}`", opts.text_field))?
        .as_str()
        .ok_or_else(|| format!("field `{}` must be a string", opts.text_field))?;
    Ok(TextExample::new(label, text))
}

/// Parse JSONL records from a reader. Blank lines are ignored.
pub fn read_jsonl<R: BufRead>(reader: R, path: &Path, opts: &LoadOptions) -> Result<Loaded> {
    let mut out = Loaded::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, opts) {
            Ok(ex) => out.examples.push(ex),
            Err(message) if opts.strict => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                })
            }
            Err(message) => out.issues.push(ParseIssue { line: i + 1, message }),
        }
    }
    Ok(out)
}

/// Load a JSONL corpus (`{"label": 0|1, "content": "..."}` per line by default).
pub fn load(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Loaded> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_jsonl(BufReader::new(file), path, opts)
}

/// Write records in the same JSONL format [`load`] reads.
pub fn write_jsonl<W: Write>(examples: &[TextExample], opts: &LoadOptions, mut out: W) -> Result<()> {
    for ex in examples {
        let mut obj = serde_json::Map::new();
        obj.insert(opts.label_field.clone(), Value::from(ex.label as u8));
        obj.insert(opts.text_field.clone(), Value::from(ex.text.as_str()));
        serde_json::to_writer(&mut out, &Value::Object(obj))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save(path: impl AsRef<Path>, examples: &[TextExample], opts: &LoadOptions) -> Result<()> {
    let file = File::create(path)?;
    write_jsonl(examples, opts, std::io::BufWriter::new(file))
}

/// Content hash of the records as `(label, tokens)`; independent of field
/// names and of whitespace that tokenization discards.
pub fn fingerprint(examples: &[TextExample]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(b"seqlen-audit/text-v1/");
    h.update(TOKENIZER_VERSION.as_bytes());
    h.update((examples.len() as u64).to_le_bytes());
    for ex in examples {
        h.update([ex.label as u8]);
        h.update((ex.tokens.len() as u64).to_le_bytes());
        for t in &ex.tokens {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
    }
    dataset::hex_digest(h)
}

/// Per-class median token length, lower median for even counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMedians {
    pub negative: usize,
    pub positive: usize,
}

fn lower_median(mut xs: Vec<usize>) -> Option<usize> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_unstable();
    Some(xs[(xs.len() - 1) / 2])
}

pub fn class_medians(examples: &[TextExample]) -> Result<ClassMedians> {
    let lens = |c: Class| examples.iter().filter(|e| e.label == c).map(|e| e.len()).collect::<Vec<_>>();
    Ok(ClassMedians {
        negative: lower_median(lens(Class::Negative)).ok_or(Error::EmptyClass(0))?,
        positive: lower_median(lens(Class::Positive)).ok_or(Error::EmptyClass(1))?,
    })
}

/// Token-length thresholds: the gap side keeps positives with at most
/// `pos_max` tokens and negatives with at least `neg_min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlterationSpec {
    pub pos_max: usize,
    pub neg_min: usize,
}

impl Default for AlterationSpec {
    fn default() -> Self {
        Self {
            pos_max: 79,
            neg_min: 90,
        }
    }
}

impl AlterationSpec {
    pub fn new(pos_max: usize, neg_min: usize) -> Result<Self> {
        let s = Self { pos_max, neg_min };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pos_max == 0 || self.pos_max >= self.neg_min {
            return Err(Error::InvalidConfig(format!(
                "need 0 < pos_max < neg_min, got pos_max={} neg_min={}",
                self.pos_max, self.neg_min
            )));
        }
        Ok(())
    }

    /// Thresholds at the class medians (positive median as `pos_max`,
    /// negative median as `neg_min`).
    pub fn from_medians(m: ClassMedians) -> Result<Self> {
        Self::new(m.positive, m.negative)
    }

    pub fn on_gap_side(&self, ex: &TextExample) -> bool {
        match ex.label {
            Class::Positive => ex.len() <= self.pos_max,
            Class::Negative => ex.len() >= self.neg_min,
        }
    }
}

fn require_both_classes(examples: &[TextExample]) -> Result<()> {
    for c in Class::ALL {
        if !examples.iter().any(|e| e.label == c) {
            return Err(Error::DegenerateSplit(c as u8));
        }
    }
    Ok(())
}

/// Keep positives with length `<= pos_max` and negatives with length
/// `>= neg_min`, preserving order.
pub fn gap_filter(examples: &[TextExample], spec: &AlterationSpec) -> Result<Vec<TextExample>> {
    spec.validate()?;
    let out: Vec<_> = examples.iter().filter(|e| spec.on_gap_side(e)).cloned().collect();
    require_both_classes(&out)?;
    Ok(out)
}

/// Exact complement of [`gap_filter`]: long positives and short negatives.
pub fn reverse_filter(examples: &[TextExample], spec: &AlterationSpec) -> Result<Vec<TextExample>> {
    spec.validate()?;
    let out: Vec<_> = examples.iter().filter(|e| !spec.on_gap_side(e)).cloned().collect();
    require_both_classes(&out)?;
    Ok(out)
}

/// How short negatives are lengthened by [`reverse_star`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtendMode {
    /// Double the token list until it reaches `neg_min`.
    #[default]
    RepeatUntil,
    /// Append a single copy, whatever the resulting length.
    SingleDuplicate,
}

/// Move reverse-side examples back into the gap ranges without adding
/// content: positives keep their first `pos_max` tokens, negatives are
/// self-concatenated.
pub fn reverse_star(examples: &[TextExample], spec: &AlterationSpec, mode: ExtendMode) -> Result<Vec<TextExample>> {
    spec.validate()?;
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| match ex.label {
            Class::Positive if ex.len() > spec.pos_max => {
                Ok(TextExample::from_tokens(ex.label, ex.tokens[..spec.pos_max].to_vec()))
            }
            Class::Negative if ex.len() < spec.neg_min => {
                if ex.is_empty() {
                    return Err(Error::CannotExtend(i));
                }
                let mut tokens = ex.tokens.clone();
                match mode {
                    ExtendMode::RepeatUntil => {
                        while tokens.len() < spec.neg_min {
                            tokens.extend_from_within(..);
                        }
                    }
                    ExtendMode::SingleDuplicate => tokens.extend_from_within(..),
                }
                Ok(TextExample::from_tokens(ex.label, tokens))
            }
            _ => Ok(ex.clone()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start: usize,
    pub bin_end: usize,
    pub count_class0: usize,
    pub count_class1: usize,
}

/// Per-class counts of token lengths in `[k·w, (k+1)·w)` bins, from 0 up to
/// the bin holding the longest example.
pub fn length_histogram(lengths: &[(Class, usize)], bin_width: usize) -> Result<Vec<HistogramBin>> {
    if bin_width == 0 {
        return Err(Error::InvalidConfig("bin width must be >= 1".into()));
    }
    if lengths.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = lengths.iter().map(|&(_, l)| l).max().unwrap_or(0);
    let mut bins: Vec<HistogramBin> = (0..=max / bin_width)
        .map(|k| HistogramBin {
            bin_start: k * bin_width,
            bin_end: (k + 1) * bin_width,
            count_class0: 0,
            count_class1: 0,
        })
        .collect();
    for &(c, l) in lengths {
        let b = &mut bins[l / bin_width];
        match c {
            Class::Negative => b.count_class0 += 1,
            Class::Positive => b.count_class1 += 1,
        }
    }
    Ok(bins)
}

pub fn text_lengths(examples: &[TextExample]) -> Vec<(Class, usize)> {
    examples.iter().map(|e| (e.label, e.len())).collect()
}

/// CSV with header `bin_start,bin_end,count_class0,count_class1`.
pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for b in bins {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}

/// Uniformly chosen subset of at most `max` examples, original order kept.
pub fn subsample(examples: &[TextExample], max: usize, seed: u64) -> Vec<TextExample> {
    if examples.len() <= max {
        return examples.to_vec();
    }
    let mut rng = SeededRng::new(seed);
    let mut picked = index::sample(&mut rng, examples.len(), max).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| examples[i].clone()).collect()
}

pub const UNKNOWN_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    /// Tokens seen fewer times than this map to the unknown id.
    pub min_count: usize,
    /// Upper bound on vocabulary size including the unknown entry.
    pub max_size: Option<usize>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_count: 1,
            max_size: None,
        }
    }
}

/// Token -> id map. Id 0 is the shared unknown token; the rest are ordered
/// by descending frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn build(train: &[TextExample], config: &VocabConfig) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for ex in train {
            for t in &ex.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= config.min_count && t != UNKNOWN_TOKEN)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if let Some(max) = config.max_size {
            ranked.truncate(max.saturating_sub(1));
        }
        let tokens = std::iter::once(UNKNOWN_TOKEN.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuild from an id-ordered token list whose first entry is the unknown token.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Ids for a token list; an empty list becomes a single unknown token so
    /// every example can be fed to the model.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        if tokens.is_empty() {
            return vec![0];
        }
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Fixed U[0, 1) vectors, one per entry, each seeded from a hash of the
    /// token text and `seed`; the same token gets the same vector in any
    /// vocabulary.
    pub fn frozen_table(&self, dim: usize, seed: u64) -> Array2<f64> {
        let mut table = Array2::zeros((self.len(), dim));
        for (row, token) in self.tokens.iter().enumerate() {
            let digest = dataset::sha256_hex(token.as_bytes());
            let token_key = u64::from_str_radix(&digest[..16], 16).expect("hex");
            let mut rng = SeededRng::new(child_seed(seed, token_key));
            for x in table.row_mut(row) {
                *x = rng.uniform();
            }
        }
        table
    }
}

/// Map text examples to token-id sequences.
pub fn vectorize(examples: &[TextExample], vocab: &Vocabulary) -> Vec<SequenceExample> {
    examples
        .iter()
        .map(|e| SequenceExample::tokens(e.label, vocab.encode(&e.tokens)))
        .collect()
}

/// The training and test variants of the alteration experiment.
#[derive(Debug, Clone)]
pub struct CorpusSplits {
    pub spec: AlterationSpec,
    pub original_train: Vec<TextExample>,
    pub gap_train: Vec<TextExample>,
    pub original_test: Vec<TextExample>,
    pub gap_test: Vec<TextExample>,
    pub reverse: Vec<TextExample>,
    pub reverse_star: Vec<TextExample>,
}

impl CorpusSplits {
    pub fn build(train: Vec<TextExample>, test: Vec<TextExample>, spec: &AlterationSpec, extend: ExtendMode) -> Result<Self> {
        let gap_train = gap_filter(&train, spec)?;
        let gap_test = gap_filter(&test, spec)?;
        let reverse = reverse_filter(&test, spec)?;
        let reverse_star = reverse_star(&reverse, spec, extend)?;
        Ok(Self {
            spec: *spec,
            original_train: train,
            gap_train,
            original_test: test,
            gap_test,
            reverse,
            reverse_star,
        })
    }

    pub fn test_sets(&self) -> Vec<(&'static str, &[TextExample])> {
        vec![
            ("original-test", &self.original_test[..]),
            ("gap-test", &self.gap_test[..]),
            ("reverse", &self.reverse[..]),
            ("reverse-star", &self.reverse_star[..]),
        ]
    }
}
