//! Training and evaluation, plus the experiment suites built on them:
//! overlap scenarios, corpus alterations, regularization grids and hidden-size
//! sweeps.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusSplits, TextExample, VocabConfig, Vocabulary};
use crate::dataset::{self, class_counts, class_lengths, Class, Payload, SequenceExample};
use crate::error::{Error, Result};
use crate::model::{predict, LstmModel, Pass};
use crate::numerics::{empirical_overlap, overlap_coefficient, SeededRng};
use crate::optimizer::{AdamConfig, AdamState, DecayMode};
use crate::report::{AuditReport, ModelSummary, ReportRow};
use crate::synthdata::{self, ScenarioSpec};

const MODEL_STREAM: u64 = 10;
const SHUFFLE_STREAM: u64 = 11;
const DROPOUT_STREAM: u64 = 12;
const EMBEDDING_STREAM: u64 = 13;

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
    pub exempt_biases: bool,
    pub dropout_rate: f64,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    /// Full-scale recipe: 10 epochs, batches of 32, Adam at 1e-3, 300/300.
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            decay_mode: DecayMode::Coupled,
            exempt_biases: false,
            dropout_rate: 0.0,
            hidden_dim: 300,
            input_dim: 300,
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self::default()
    }

    /// Scaled-down profile (hidden and input 64) for desktop runs.
    pub fn desk() -> Self {
        Self {
            hidden_dim: 64,
            input_dim: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.hidden_dim == 0 || self.input_dim == 0 {
            return bad("hidden_dim and input_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            decay_mode: self.decay_mode,
            exempt_biases: self.exempt_biases,
            ..AdamConfig::default()
        }
    }

    /// Short content hash of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        dataset::sha256_hex(&bytes)[..16].to_string()
    }
}

/// How token inputs are embedded.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingInit {
    /// Trainable table of `vocab_size` rows, initialized from the run seed.
    Trainable { vocab_size: usize },
    /// Fixed table, never updated.
    Frozen(Array2<f64>),
}

/// Freshly initialized model for `config`, reproducible from its seed.
pub fn initial_model(config: &TrainConfig, embedding: Option<EmbeddingInit>) -> LstmModel {
    let root = SeededRng::new(config.seed);
    let model = LstmModel::init(config.input_dim, config.hidden_dim, &mut root.child(MODEL_STREAM));
    match embedding {
        None => model,
        Some(EmbeddingInit::Trainable { vocab_size }) => {
            model.with_trainable_embedding(vocab_size, &mut root.child(EMBEDDING_STREAM))
        }
        Some(EmbeddingInit::Frozen(table)) => model.with_embedding(table, false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Example-weighted mean training loss over the epoch.
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LstmModel,
    pub optimizer: AdamState,
    pub history: Vec<EpochRecord>,
}

fn check_trainable(data: &[SequenceExample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let counts = class_counts(data);
    for c in Class::ALL {
        if counts[c.index()] == 0 {
            return Err(Error::EmptyClass(c as u8));
        }
    }
    Ok(())
}

/// Train a fresh dense-input model.
pub fn train(config: &TrainConfig, data: &[SequenceExample]) -> Result<TrainOutcome> {
    let model = initial_model(config, None);
    train_model(config, model, data, |_| {})
}

/// Train `model` for `config.epochs` epochs of shuffled mini-batches. Every
/// epoch performs `ceil(n / batch_size)` optimizer steps; there is no early
/// stopping. `on_epoch` sees each epoch's record as it completes.
pub fn train_model(
    config: &TrainConfig,
    model: LstmModel,
    data: &[SequenceExample],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let optimizer = AdamState::new(&model, config.adam());
    resume_training(config, model, optimizer, Vec::new(), data, on_epoch)
}

/// Continue training from a saved state up to `config.epochs` epochs. The
/// shuffle order and dropout masks of epoch `e` depend only on the seed and
/// `e`, so a run resumed from a checkpoint matches an uninterrupted one bit
/// for bit.
pub fn resume_training(
    config: &TrainConfig,
    mut model: LstmModel,
    mut optimizer: AdamState,
    mut history: Vec<EpochRecord>,
    data: &[SequenceExample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_trainable(data)?;
    model.validate()?;
    let start = history.len();
    if start > config.epochs {
        return Err(Error::InvalidConfig(format!(
            "state has {start} epochs, more than the configured {}",
            config.epochs
        )));
    }
    optimizer.config = config.adam();
    let root = SeededRng::new(config.seed);
    let (shuffle_root, dropout_root) = (root.child(SHUFFLE_STREAM), root.child(DROPOUT_STREAM));

    for epoch in start..config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut shuffle_root.child(epoch as u64));
        let mut dropout_rng = dropout_root.child(epoch as u64);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&Payload, Class)> = chunk.iter().map(|&i| (&data[i].payload, data[i].label)).collect();
            let pass = Pass::Train {
                dropout_rate: config.dropout_rate,
                rng: &mut dropout_rng,
            };
            let (loss, grads) = model.batch_loss_and_gradients(&batch, pass)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    global_step: optimizer.step + 1,
                });
            }
            optimizer.step(&mut model, &grads)?;
            loss_sum += loss * chunk.len() as f64;
            steps += 1;
        }
        let record = EpochRecord {
            epoch,
            steps,
            mean_loss: loss_sum / data.len() as f64,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        history,
    })
}

/// Evaluation-mode logits for every example, in order.
pub fn predict_logits(model: &LstmModel, data: &[SequenceExample]) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(EVAL_CHUNK) {
        let payloads: Vec<&Payload> = chunk.iter().map(|e| &e.payload).collect();
        let logits = model.logits_batch(&payloads)?;
        out.extend(logits.outer_iter().map(|r| [r[0], r[1]]));
    }
    Ok(out)
}

/// Accuracy and related counts on a labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub class_total: [usize; 2],
    pub class_correct: [usize; 2],
    pub class_accuracy: [Option<f64>; 2],
    /// F1 of the positive class.
    pub f1_positive: f64,
    /// Unweighted mean of both classes' F1.
    pub f1_macro: f64,
    pub mean_loss: f64,
}

impl Evaluation {
    /// Score predictions against labels.
    pub fn from_predictions(labels: &[Class], predicted: &[Class], mean_loss: f64) -> Evaluation {
        let mut class_total = [0; 2];
        let mut class_correct = [0; 2];
        let mut predicted_count = [0; 2];
        for (&y, &p) in labels.iter().zip(predicted) {
            class_total[y.index()] += 1;
            predicted_count[p.index()] += 1;
            if y == p {
                class_correct[y.index()] += 1;
            }
        }
        let total = labels.len();
        let correct = class_correct[0] + class_correct[1];
        let f1 = |c: usize| {
            let tp = class_correct[c] as f64;
            let denom = (class_total[c] + predicted_count[c]) as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        };
        Evaluation {
            total,
            correct,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            class_total,
            class_correct,
            class_accuracy: [0, 1].map(|c| (class_total[c] > 0).then(|| class_correct[c] as f64 / class_total[c] as f64)),
            f1_positive: f1(1),
            f1_macro: 0.5 * (f1(0) + f1(1)),
            mean_loss,
        }
    }
}

/// Argmax-of-logits accuracy in evaluation mode (no dropout).
pub fn evaluate(model: &LstmModel, test: &[SequenceExample]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyInput);
    }
    let logits = predict_logits(model, test)?;
    let labels: Vec<Class> = test.iter().map(|e| e.label).collect();
    let predicted: Vec<Class> = logits.iter().map(|&l| predict(l)).collect();
    let loss = logits
        .iter()
        .zip(&labels)
        .map(|(&l, &y)| crate::model::cross_entropy(l, y).0)
        .sum::<f64>()
        / test.len() as f64;
    Ok(Evaluation::from_predictions(&labels, &predicted, loss))
}

fn empirical_class_overlap(data: &[SequenceExample]) -> f64 {
    let [a, b] = class_lengths(data);
    empirical_overlap(&a, &b)
}

fn summary(name: &str, config: &TrainConfig, train_fp: &str, outcome: &TrainOutcome) -> ModelSummary {
    ModelSummary {
        name: name.to_string(),
        config: config.clone(),
        config_fingerprint: config.fingerprint(),
        train_fingerprint: train_fp.to_string(),
        history: outcome.history.clone(),
    }
}

struct RowContext<'a> {
    experiment: &'a str,
    model_name: &'a str,
    config: &'a TrainConfig,
    train_fp: &'a str,
}

fn row(ctx: &RowContext<'_>, test_name: &str, test: &[SequenceExample], eval: &Evaluation) -> ReportRow {
    ReportRow::new(
        ctx.experiment,
        ctx.model_name,
        test_name,
        ctx.config,
        ctx.train_fp,
        &dataset::fingerprint(test),
        empirical_class_overlap(test),
        eval,
    )
}

/// Generate, train and evaluate each scenario. Scenario input width overrides
/// `config.input_dim`. Independent scenarios run in parallel; row order
/// follows `scenarios`.
pub fn scenario_suite(scenarios: &[ScenarioSpec], config: &TrainConfig) -> Result<AuditReport> {
    let cells: Vec<Result<(ReportRow, ModelSummary)>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let cfg = TrainConfig {
                input_dim: spec.vector_dim,
                ..config.clone()
            };
            let (train_set, test_set) = synthdata::generate(spec)?;
            let outcome = train(&cfg, &train_set)?;
            let eval = evaluate(&outcome.model, &test_set)?;
            let train_fp = dataset::fingerprint(&train_set);
            let name = format!("scenario-{i}");
            let ctx = RowContext {
                experiment: "scenario",
                model_name: &name,
                config: &cfg,
                train_fp: &train_fp,
            };
            let mut r = row(&ctx, "test", &test_set, &eval);
            r.overlap_theoretical = Some(overlap_coefficient(&spec.class0, &spec.class1));
            r.scenario = Some(spec.clone());
            Ok((r, summary(&name, &cfg, &train_fp, &outcome)))
        })
        .collect();
    AuditReport::from_cells(cells)
}

/// Which training split an alteration-suite model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainVariant {
    Original,
    Gap,
}

impl TrainVariant {
    pub fn name(self) -> &'static str {
        match self {
            TrainVariant::Original => "original-train",
            TrainVariant::Gap => "gap-train",
        }
    }
}

/// Token datasets ready for training: the vocabulary comes from the chosen
/// training split only.
pub struct PreparedCorpus {
    pub vocabulary: Vocabulary,
    pub train: Vec<SequenceExample>,
    /// `(name, examples)` in report order.
    pub tests: Vec<(String, Vec<SequenceExample>)>,
}

pub fn prepare_corpus(
    variant: TrainVariant,
    splits: &CorpusSplits,
    vocab: &VocabConfig,
) -> PreparedCorpus {
    let train_text: &[TextExample] = match variant {
        TrainVariant::Original => &splits.original_train,
        TrainVariant::Gap => &splits.gap_train,
    };
    let vocabulary = Vocabulary::build(train_text, vocab);
    let train = corpus::vectorize(train_text, &vocabulary);
    let tests = splits
        .test_sets()
        .into_iter()
        .map(|(name, set)| (name.to_string(), corpus::vectorize(set, &vocabulary)))
        .collect();
    PreparedCorpus {
        vocabulary,
        train,
        tests,
    }
}

/// Embedding table settings for corpus runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusEmbedding {
    pub frozen: bool,
    pub seed: u64,
}

fn corpus_embedding(cfg: &TrainConfig, vocabulary: &Vocabulary, emb: CorpusEmbedding) -> EmbeddingInit {
    if emb.frozen {
        EmbeddingInit::Frozen(vocabulary.frozen_table(cfg.input_dim, emb.seed))
    } else {
        EmbeddingInit::Trainable {
            vocab_size: vocabulary.len(),
        }
    }
}

/// Train one model per `(variant, weight decay)` pair and evaluate each on
/// the original, gap, reverse and reverse* test sets. Rows come out grouped
/// per model in test-set order.
pub fn alteration_suite(
    variants: &[TrainVariant],
    weight_decays: &[f64],
    splits: &CorpusSplits,
    vocab: &VocabConfig,
    embedding: CorpusEmbedding,
    config: &TrainConfig,
) -> Result<AuditReport> {
    let jobs: Vec<(TrainVariant, f64)> = variants
        .iter()
        .flat_map(|&v| weight_decays.iter().map(move |&wd| (v, wd)))
        .collect();
    let prepared: Vec<(TrainVariant, PreparedCorpus)> =
        variants.iter().map(|&v| (v, prepare_corpus(v, splits, vocab))).collect();
    let cells: Vec<Result<Vec<(ReportRow, ModelSummary)>>> = jobs
        .par_iter()
        .map(|&(variant, wd)| {
            let prep = &prepared.iter().find(|(v, _)| *v == variant).expect("prepared").1;
            let cfg = TrainConfig {
                weight_decay: wd,
                ..config.clone()
            };
            let init = initial_model(&cfg, Some(corpus_embedding(&cfg, &prep.vocabulary, embedding)));
            let outcome = train_model(&cfg, init, &prep.train, |_| {})?;
            let train_fp = dataset::fingerprint(&prep.train);
            let name = format!("{}/wd={wd}", variant.name());
            let ctx = RowContext {
                experiment: "alteration",
                model_name: &name,
                config: &cfg,
                train_fp: &train_fp,
            };
            let model_summary = summary(&name, &cfg, &train_fp, &outcome);
            prep.tests
                .iter()
                .map(|(test_name, test)| {
                    let eval = evaluate(&outcome.model, test)?;
                    let mut r = row(&ctx, test_name, test, &eval);
                    r.train_variant = Some(variant);
                    Ok((r, model_summary.clone()))
                })
                .collect()
        })
        .collect();
    let flat: Vec<Result<(ReportRow, ModelSummary)>> = cells
        .into_iter()
        .flat_map(|c| match c {
            Ok(rows) => rows.into_iter().map(Ok).collect::<Vec<_>>(),
            Err(e) => vec![Err(e)],
        })
        .collect();
    AuditReport::from_cells(flat)
}

/// A named train/test pair for grid experiments.
pub struct NamedDataset {
    pub name: String,
    pub train: Vec<SequenceExample>,
    pub test: Vec<SequenceExample>,
}

/// Train and evaluate every `(weight decay, dropout rate, dataset)` cell.
/// Cells run in parallel; rows follow the nesting order weight decay, dropout,
/// dataset.
pub fn regularization_grid(
    base: &TrainConfig,
    weight_decays: &[f64],
    dropout_rates: &[f64],
    datasets: &[NamedDataset],
) -> Result<AuditReport> {
    if weight_decays.is_empty() || dropout_rates.is_empty() || datasets.is_empty() {
        return Err(Error::InvalidConfig("regularization grid axes must be non-empty".into()));
    }
    let mut jobs = Vec::new();
    for &wd in weight_decays {
        for &dr in dropout_rates {
            for ds in datasets {
                jobs.push((wd, dr, ds));
            }
        }
    }
    let cells: Vec<Result<(ReportRow, ModelSummary)>> = jobs
        .par_iter()
        .map(|&(wd, dr, ds)| {
            let cfg = TrainConfig {
                weight_decay: wd,
                dropout_rate: dr,
                ..base.clone()
            };
            let outcome = train(&cfg, &ds.train)?;
            let eval = evaluate(&outcome.model, &ds.test)?;
            let train_fp = dataset::fingerprint(&ds.train);
            let name = format!("{}/wd={wd}/dropout={dr}", ds.name);
            let ctx = RowContext {
                experiment: "regularization",
                model_name: &name,
                config: &cfg,
                train_fp: &train_fp,
            };
            let mut r = row(&ctx, &ds.name, &ds.test, &eval);
            r.dataset = Some(ds.name.clone());
            Ok((r, summary(&name, &cfg, &train_fp, &outcome)))
        })
        .collect();
    AuditReport::from_cells(cells)
}

/// One trained model per hidden size on a single scenario.
pub fn hidden_size_sweep(sizes: &[usize], scenario: &ScenarioSpec, config: &TrainConfig) -> Result<AuditReport> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidConfig("hidden sizes must be >= 1".into()));
    }
    let (train_set, test_set) = synthdata::generate(scenario)?;
    let train_fp = dataset::fingerprint(&train_set);
    let cells: Vec<Result<(ReportRow, ModelSummary)>> = sizes
        .par_iter()
        .map(|&h| {
            let cfg = TrainConfig {
                hidden_dim: h,
                input_dim: scenario.vector_dim,
                ..config.clone()
            };
            let outcome = train(&cfg, &train_set)?;
            let eval = evaluate(&outcome.model, &test_set)?;
            let name = format!("hidden={h}");
            let ctx = RowContext {
                experiment: "hidden_size",
                model_name: &name,
                config: &cfg,
                train_fp: &train_fp,
            };
            let mut r = row(&ctx, "test", &test_set, &eval);
            r.overlap_theoretical = Some(overlap_coefficient(&scenario.class0, &scenario.class1));
            Ok((r, summary(&name, &cfg, &train_fp, &outcome)))
        })
        .collect();
    AuditReport::from_cells(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::NormalLengthSpec;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            hidden_dim: 4,
            input_dim: 3,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn tiny_data(n: usize) -> Vec<SequenceExample> {
        let spec = ScenarioSpec {
            class1: NormalLengthSpec { mu: 20.0, sigma: 2.0 },
            vector_dim: 3,
            n_train: n,
            n_test: 2,
            seed: 1,
            ..Default::default()
        };
        synthdata::generate(&spec).unwrap().0
    }

    #[test]
    fn one_epoch_full_batch_is_one_step() {
        let data = tiny_data(16);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..tiny_config()
        };
        let out = train(&cfg, &data).unwrap();
        assert_eq!(out.optimizer.step, 1);
        assert_eq!(out.history[0].steps, 1);
    }

    #[test]
    fn step_count_is_epochs_times_batches() {
        let data = tiny_data(20);
        let out = train(&tiny_config(), &data).unwrap();
        assert_eq!(out.optimizer.step, 2 * 3);
    }

    #[test]
    fn deterministic_training() {
        let data = tiny_data(16);
        let cfg = TrainConfig {
            dropout_rate: 0.3,
            ..tiny_config()
        };
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn single_class_rejected() {
        let data: Vec<_> = tiny_data(8).into_iter().filter(|e| e.label == Class::Negative).collect();
        assert!(matches!(train(&tiny_config(), &data), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn constant_predictor_scores_half() {
        let mut m = LstmModel::zeros(3, 4);
        m.head_b[1] = 1.0;
        let data = tiny_data(10);
        let eval = evaluate(&m, &data).unwrap();
        assert_eq!(eval.accuracy, 0.5);
        assert_eq!(eval.class_accuracy, [Some(0.0), Some(1.0)]);
        assert_eq!(evaluate(&m, &data).unwrap(), eval);
    }

    #[test]
    fn evaluation_counts_are_consistent() {
        let labels = [Class::Negative, Class::Negative, Class::Positive, Class::Positive, Class::Positive];
        let preds = [Class::Negative, Class::Positive, Class::Positive, Class::Positive, Class::Negative];
        let e = Evaluation::from_predictions(&labels, &preds, 0.0);
        assert_eq!(e.correct, 3);
        assert_eq!(e.accuracy, 3.0 / 5.0);
        assert_eq!(e.class_correct, [1, 2]);
        // positive: tp 2, 3 actual, 3 predicted
        assert!((e.f1_positive - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nan_parameters_abort_training() {
        let data = tiny_data(8);
        let cfg = tiny_config();
        let mut model = initial_model(&cfg, None);
        model.head_b[0] = f64::NAN;
        assert!(train_model(&cfg, model, &data, |_| {}).is_err());
    }
}
