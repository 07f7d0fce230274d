use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use seqlen_audit::checkpoint::Checkpoint;
use seqlen_audit::corpus::{self, AlterationSpec, CorpusSplits, ExtendMode, VocabConfig, Vocabulary};
use seqlen_audit::dataset::{self, class_counts};
use seqlen_audit::numerics::{empirical_overlap, overlap_coefficient, NormalLengthSpec};
use seqlen_audit::optimizer::AdamState;
use seqlen_audit::projection::{self, EmbeddingSet, TsneConfig};
use seqlen_audit::report::{AuditReport, ReportRow};
use seqlen_audit::synthdata::{self, MarkerMode, ScenarioSpec};
use seqlen_audit::trainer::{
    self, alteration_suite, hidden_size_sweep, initial_model, regularization_grid, resume_training, scenario_suite,
    CorpusEmbedding, EmbeddingInit, EpochRecord, NamedDataset, TrainConfig, TrainVariant,
};
use seqlen_audit::Error;
use serde::Serialize;

use crate::data::DataFile;
use crate::error::{usage, CliResult};
use crate::manifest::RunManifest;
use crate::{
    AlterArgs, AlterMode, AlterationArgs, AuditCommand, Cli, Command, EvaluateArgs, ExtendArg, HiddenSizeArgs,
    MarkerArg, MethodArg, OverlapArgs, ProjectArgs, RegularizationArgs, SuiteArgs, SynthArgs, ThresholdArgs,
    TrainArgs, VocabArgs,
};

pub fn run(cli: &Cli) -> CliResult<()> {
    let det = cli.deterministic;
    match &cli.command {
        Command::Synth(a) => synth(a, det),
        Command::Overlap(a) => overlap(a),
        Command::Alter(a) => alter(a, det),
        Command::Train(a) => train(a, det),
        Command::Evaluate(a) => evaluate(a, det),
        Command::Project(a) => project(a, det),
        Command::Audit(AuditCommand::Scenarios(a)) => audit_scenarios(a, det),
        Command::Audit(AuditCommand::Regularization(a)) => audit_regularization(a, det),
        Command::Audit(AuditCommand::HiddenSize(a)) => audit_hidden_size(a, det),
        Command::Audit(AuditCommand::Alteration(a)) => audit_alteration(a, det),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn buffered(dir: &Path, file: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(file))?))
}

fn marker_mode(m: MarkerArg) -> MarkerMode {
    match m {
        MarkerArg::PerElement => MarkerMode::PerElement,
        MarkerArg::PerSequence => MarkerMode::PerSequence,
    }
}

fn synth(a: &SynthArgs, det: bool) -> CliResult<()> {
    let n = a.n.unwrap_or(a.profile.examples());
    let spec = ScenarioSpec {
        class0: NormalLengthSpec::new(a.lengths.mu0, a.lengths.sigma0)?,
        class1: NormalLengthSpec::new(a.lengths.mu1, a.lengths.sigma1)?,
        vector_dim: a.dim.unwrap_or(a.profile.vector_dim()),
        n_train: a.n_train.unwrap_or(n),
        n_test: a.n_test.unwrap_or(n),
        informative: a.informative,
        marker_density: a.marker_density,
        marker_mode: marker_mode(a.marker_mode),
        seed: a.seed,
    };
    let (train, test) = synthdata::generate(&spec)?;
    create_dir(&a.out_dir)?;
    let mut manifest = RunManifest::new("synth", det);
    manifest.config(&spec)?;
    manifest.seed("data", spec.seed);
    for (file, set) in [("train.jsonl", &train), ("test.jsonl", &test)] {
        dataset::write_vector_jsonl(set, buffered(&a.out_dir, file)?)?;
        manifest.output(&a.out_dir, file)?;
    }
    manifest.write(&a.out_dir)?;
    println!(
        "theoretical overlap {:.1}%; wrote {} train and {} test examples to {}",
        100.0 * overlap_coefficient(&spec.class0, &spec.class1),
        train.len(),
        test.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn overlap(a: &OverlapArgs) -> CliResult<()> {
    let value = match (a.mu0, a.sigma0, a.mu1, a.sigma1) {
        (Some(mu0), Some(sigma0), Some(mu1), Some(sigma1)) => {
            overlap_coefficient(&NormalLengthSpec::new(mu0, sigma0)?, &NormalLengthSpec::new(mu1, sigma1)?)
        }
        _ if !a.datasets.is_empty() => {
            let mut pooled = [Vec::new(), Vec::new()];
            for path in &a.datasets {
                let [c0, c1] = DataFile::load(path, &a.text)?.class_lengths();
                pooled[0].extend(c0);
                pooled[1].extend(c1);
            }
            for (c, lens) in pooled.iter().enumerate() {
                if lens.is_empty() {
                    return Err(Error::EmptyClass(c as u8).into());
                }
            }
            empirical_overlap(&pooled[0], &pooled[1])
        }
        _ => return usage("give --mu0 --sigma0 --mu1 --sigma1 or at least one --dataset"),
    };
    println!("{:.1}%", 100.0 * value);
    Ok(())
}

fn alteration_spec(t: &ThresholdArgs, reference: &[corpus::TextExample]) -> CliResult<AlterationSpec> {
    if t.median_thresholds {
        return Ok(AlterationSpec::from_medians(corpus::class_medians(reference)?)?);
    }
    let d = AlterationSpec::default();
    Ok(AlterationSpec::new(t.pos_max.unwrap_or(d.pos_max), t.neg_min.unwrap_or(d.neg_min))?)
}

fn extend_mode(e: ExtendArg) -> ExtendMode {
    match e {
        ExtendArg::RepeatUntil => ExtendMode::RepeatUntil,
        ExtendArg::SingleDuplicate => ExtendMode::SingleDuplicate,
    }
}

#[derive(Serialize)]
struct AlterConfig<'a> {
    mode: &'a str,
    spec: AlterationSpec,
    extend: ExtendMode,
    tokenizer: &'a str,
}

fn alter(a: &AlterArgs, det: bool) -> CliResult<()> {
    let input = DataFile::load_text(&a.input, &a.text)?;
    let spec = alteration_spec(&a.thresholds, &input)?;
    let extend = extend_mode(a.thresholds.extend);
    let output = match a.mode {
        AlterMode::Gap => corpus::gap_filter(&input, &spec)?,
        AlterMode::Reverse => corpus::reverse_filter(&input, &spec)?,
        AlterMode::ReverseStar => corpus::reverse_star(&corpus::reverse_filter(&input, &spec)?, &spec, extend)?,
    };
    create_dir(&a.out_dir)?;
    let mut manifest = RunManifest::new("alter", det);
    manifest.config(AlterConfig {
        mode: a.mode.name(),
        spec,
        extend,
        tokenizer: corpus::TOKENIZER_VERSION,
    })?;
    manifest.input(&a.input, corpus::fingerprint(&input));
    let file = format!("{}.jsonl", a.mode.name());
    corpus::write_jsonl(&output, &a.text.options(), buffered(&a.out_dir, &file)?)?;
    manifest.output(&a.out_dir, &file)?;
    if let Some(width) = a.histogram_bin {
        let bins = corpus::length_histogram(&corpus::text_lengths(&output), width)?;
        corpus::write_histogram_csv(&bins, buffered(&a.out_dir, "histogram.csv")?)?;
        manifest.output(&a.out_dir, "histogram.csv")?;
    }
    manifest.write(&a.out_dir)?;
    let pos = output.iter().filter(|e| e.label == dataset::Class::Positive).count();
    println!(
        "{}: kept {} of {} examples ({} negative, {} positive); pos_max={} neg_min={}",
        a.mode.name(),
        output.len(),
        input.len(),
        output.len() - pos,
        pos,
        spec.pos_max,
        spec.neg_min
    );
    Ok(())
}

fn vocab_config(v: &VocabArgs) -> VocabConfig {
    VocabConfig {
        min_count: v.min_count,
        max_size: v.vocab_size,
    }
}

fn write_history(dir: &Path, history: &[EpochRecord]) -> CliResult<()> {
    let mut out = buffered(dir, "history.csv")?;
    writeln!(out, "epoch,steps,mean_loss")?;
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, r.steps, r.mean_loss)?;
    }
    out.flush()?;
    Ok(())
}

fn print_epoch(r: &EpochRecord) {
    eprintln!("epoch {:>3}: {} steps, mean loss {:.6}", r.epoch + 1, r.steps, r.mean_loss);
}

fn train(a: &TrainArgs, det: bool) -> CliResult<()> {
    let data = DataFile::load(&a.train, &a.text)?;
    let train_fp = data.fingerprint();
    let resumed = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let config = match &resumed {
        Some(ck) => a.config.resolve_from(ck.meta.config.clone(), det)?,
        None => a.config.resolve(det)?,
    };

    let (vocabulary, model, optimizer, history) = match resumed {
        Some(ck) => {
            let vocabulary = ck.meta.vocabulary.map(Vocabulary::from_tokens);
            let optimizer = ck.optimizer.unwrap_or_else(|| AdamState::new(&ck.model, config.adam()));
            (vocabulary, ck.model, optimizer, ck.meta.history)
        }
        None => {
            let (vocabulary, init) = match &data {
                DataFile::Vectors(_) => (None, None),
                DataFile::Text(t) => {
                    let vocab = Vocabulary::build(t, &vocab_config(&a.vocab));
                    let init = if a.vocab.frozen_embedding {
                        EmbeddingInit::Frozen(vocab.frozen_table(config.input_dim, a.vocab.embedding_seed))
                    } else {
                        EmbeddingInit::Trainable { vocab_size: vocab.len() }
                    };
                    (Some(vocab), Some(init))
                }
            };
            let model = initial_model(&config, init);
            let optimizer = AdamState::new(&model, config.adam());
            (vocabulary, model, optimizer, Vec::new())
        }
    };
    let sequences = data.sequences(vocabulary.as_ref())?;
    let outcome = resume_training(&config, model, optimizer, history, &sequences, print_epoch)?;

    create_dir(&a.out_dir)?;
    let mut manifest = RunManifest::new("train", det);
    manifest.config(&config)?;
    manifest.seed("train", config.seed);
    manifest.input(&a.train, train_fp.clone());
    if let Some(path) = &a.resume {
        manifest.input(path, dataset::sha256_hex(&fs::read(path)?));
    }
    let mut ck = Checkpoint::new(&config, outcome.model).with_optimizer(outcome.optimizer);
    ck.meta.train_fingerprint = Some(train_fp);
    ck.meta.history = outcome.history;
    ck.meta.vocabulary = vocabulary.map(|v| v.tokens().to_vec());
    ck.save(a.out_dir.join("model.ckpt"))?;
    manifest.output(&a.out_dir, "model.ckpt")?;
    write_history(&a.out_dir, &ck.meta.history)?;
    manifest.output(&a.out_dir, "history.csv")?;
    manifest.write(&a.out_dir)?;
    let last = ck.meta.history.last().map_or(f64::NAN, |r| r.mean_loss);
    println!("trained {} epochs, final loss {last:.6}; checkpoint in {}", ck.meta.history.len(), a.out_dir.display());
    Ok(())
}

fn parse_test_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path.file_stem().map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
            (name, path)
        }
    }
}

fn write_report(dir: &Path, report: &AuditReport, manifest: &mut RunManifest) -> CliResult<()> {
    report.write_json(buffered(dir, "report.json")?)?;
    manifest.output(dir, "report.json")?;
    report.write_csv(buffered(dir, "report.csv")?)?;
    manifest.output(dir, "report.csv")?;
    manifest.write(dir)?;
    print!("{}", report.render_table());
    Ok(())
}

fn evaluate(a: &EvaluateArgs, det: bool) -> CliResult<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let vocabulary = ck.meta.vocabulary.clone().map(Vocabulary::from_tokens);
    let model_name = a
        .checkpoint
        .file_stem()
        .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned());
    let mut manifest = RunManifest::new("evaluate", det);
    manifest.config(&ck.meta.config)?;
    manifest.input(&a.checkpoint, ck.model.fingerprint());
    let mut report = AuditReport::new();
    for arg in &a.tests {
        let (name, path) = parse_test_arg(arg);
        let data = DataFile::load(&path, &a.text)?;
        manifest.input(&path, data.fingerprint());
        let [l0, l1] = data.class_lengths();
        let overlap = if l0.is_empty() || l1.is_empty() { 0.0 } else { empirical_overlap(&l0, &l1) };
        let test = data.sequences(vocabulary.as_ref())?;
        let eval = trainer::evaluate(&ck.model, &test)?;
        report.rows.push(ReportRow::new(
            "evaluate",
            &model_name,
            &name,
            &ck.meta.config,
            ck.meta.train_fingerprint.as_deref().unwrap_or(""),
            &dataset::fingerprint(&test),
            overlap,
            &eval,
        ));
    }
    create_dir(&a.out_dir)?;
    write_report(&a.out_dir, &report, &mut manifest)
}

#[derive(Serialize)]
struct ProjectionSummary<'a> {
    method: &'a projection::ProjectionMethod,
    points: usize,
    separability: f64,
    separability_full_dim: f64,
    provenance: &'a Option<projection::Provenance>,
    kl_trace: &'a [(usize, f64)],
}

fn project(a: &ProjectArgs, det: bool) -> CliResult<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let vocabulary = ck.meta.vocabulary.clone().map(Vocabulary::from_tokens);
    let data = DataFile::load(&a.data, &a.text)?;
    let mut manifest = RunManifest::new("project", det);
    manifest.input(&a.checkpoint, ck.model.fingerprint());
    manifest.input(&a.data, data.fingerprint());
    let mut examples = data.sequences(vocabulary.as_ref())?;
    if let Some(limit) = a.limit {
        examples.truncate(limit);
    }
    let set: EmbeddingSet = projection::extract_embeddings(&ck.model, &examples)?;
    let full = projection::separability_score(set.points.view(), &set.labels)?;
    let proj = match a.method {
        MethodArg::Tsne => {
            let cfg = TsneConfig {
                perplexity: a.perplexity,
                iterations: a.iterations,
                seed: a.seed,
            };
            manifest.config(cfg)?;
            manifest.seed("tsne", a.seed);
            projection::tsne_2d(&set, &cfg)?
        }
        MethodArg::Pca => projection::pca_2d(&set)?,
    };
    let score = proj.separability()?;
    create_dir(&a.out_dir)?;
    proj.write_csv(buffered(&a.out_dir, "projection.csv")?)?;
    manifest.output(&a.out_dir, "projection.csv")?;
    let title = format!("{} — separability {score:.3}", a.checkpoint.display());
    proj.write_svg(buffered(&a.out_dir, "projection.svg")?, &title)?;
    manifest.output(&a.out_dir, "projection.svg")?;
    let summary = ProjectionSummary {
        method: &proj.method,
        points: set.len(),
        separability: score,
        separability_full_dim: full,
        provenance: &proj.provenance,
        kl_trace: &proj.kl_trace,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(a.out_dir.join("projection.json"), text)?;
    manifest.output(&a.out_dir, "projection.json")?;
    manifest.write(&a.out_dir)?;
    println!("separability {score:.4} (2-D), {full:.4} (embedding space) over {} points", set.len());
    Ok(())
}

fn suite_scenario(s: &SuiteArgs, config: &TrainConfig, class1: (f64, f64)) -> CliResult<ScenarioSpec> {
    let n = s.n.unwrap_or(s.config.profile.examples());
    Ok(ScenarioSpec {
        class1: NormalLengthSpec::new(class1.0, class1.1)?,
        vector_dim: config.input_dim,
        n_train: n,
        n_test: n,
        seed: s.data_seed,
        ..Default::default()
    })
}

#[derive(Serialize)]
struct SuiteConfig<'a, T: Serialize> {
    train: &'a TrainConfig,
    suite: T,
}

fn audit_scenarios(a: &SuiteArgs, det: bool) -> CliResult<()> {
    let config = a.config.resolve(det)?;
    let base = suite_scenario(a, &config, (10.0, 2.0))?;
    let scenarios: Vec<ScenarioSpec> = ScenarioSpec::overlap_sweep()
        .into_iter()
        .map(|s| ScenarioSpec { class1: s.class1, ..base.clone() })
        .collect();
    let report = scenario_suite(&scenarios, &config)?;
    create_dir(&a.out_dir)?;
    let mut manifest = RunManifest::new("audit scenarios", det);
    manifest.config(SuiteConfig { train: &config, suite: &scenarios })?;
    manifest.seed("data", a.data_seed);
    manifest.seed("train", config.seed);
    write_report(&a.out_dir, &report, &mut manifest)
}

fn audit_regularization(a: &RegularizationArgs, det: bool) -> CliResult<()> {
    let config = a.suite.config.resolve(det)?;
    let plain = suite_scenario(&a.suite, &config, (100.0, 10.0))?;
    let informative = ScenarioSpec {
        informative: true,
        marker_density: a.marker_density,
        marker_mode: marker_mode(a.marker_mode),
        ..plain.clone()
    };
    let mut datasets = Vec::new();
    for (name, spec) in [("uninformative", &plain), ("informative", &informative)] {
        let (train, test) = synthdata::generate(spec)?;
        datasets.push(NamedDataset {
            name: name.into(),
            train,
            test,
        });
    }
    let report = regularization_grid(&config, &a.weight_decays, &a.dropouts, &datasets)?;
    create_dir(&a.suite.out_dir)?;
    let mut manifest = RunManifest::new("audit regularization", det);
    manifest.config(SuiteConfig {
        train: &config,
        suite: (&a.weight_decays, &a.dropouts, [&plain, &informative]),
    })?;
    manifest.seed("data", a.suite.data_seed);
    manifest.seed("train", config.seed);
    write_report(&a.suite.out_dir, &report, &mut manifest)
}

fn audit_hidden_size(a: &HiddenSizeArgs, det: bool) -> CliResult<()> {
    let config = a.suite.config.resolve(det)?;
    let scenario = suite_scenario(&a.suite, &config, (100.0, 10.0))?;
    let report = hidden_size_sweep(&a.sizes, &scenario, &config)?;
    create_dir(&a.suite.out_dir)?;
    let mut manifest = RunManifest::new("audit hidden-size", det);
    manifest.config(SuiteConfig {
        train: &config,
        suite: (&a.sizes, &scenario),
    })?;
    manifest.seed("data", a.suite.data_seed);
    manifest.seed("train", config.seed);
    write_report(&a.suite.out_dir, &report, &mut manifest)
}

#[derive(Serialize)]
struct AlterationSuiteConfig<'a> {
    spec: AlterationSpec,
    extend: ExtendMode,
    weight_decays: &'a [f64],
    variants: &'a [TrainVariant],
    vocabulary: VocabConfig,
    embedding: CorpusEmbedding,
    max_train: Option<usize>,
    max_test: Option<usize>,
    tokenizer: &'a str,
    split_sizes: [usize; 6],
}

fn audit_alteration(a: &AlterationArgs, det: bool) -> CliResult<()> {
    let config = a.config.resolve(det)?;
    let mut train = DataFile::load_text(&a.train, &a.text)?;
    let mut test = DataFile::load_text(&a.test, &a.text)?;
    let mut manifest = RunManifest::new("audit alteration", det);
    manifest.input(&a.train, corpus::fingerprint(&train));
    manifest.input(&a.test, corpus::fingerprint(&test));
    if let Some(max) = a.max_train {
        train = corpus::subsample(&train, max, config.seed);
    }
    if let Some(max) = a.max_test {
        test = corpus::subsample(&test, max, config.seed.wrapping_add(1));
    }
    let spec = alteration_spec(&a.thresholds, &train)?;
    let extend = extend_mode(a.thresholds.extend);
    let splits = CorpusSplits::build(train, test, &spec, extend)?;
    for (name, set) in [("gap-train", &splits.gap_train), ("reverse", &splits.reverse)] {
        let [n0, n1] = class_counts(&corpus::vectorize(set, &Vocabulary::from_tokens(vec![corpus::UNKNOWN_TOKEN.into()])));
        eprintln!("{name}: {n0} negative, {n1} positive");
    }
    let variants: Vec<TrainVariant> = if a.with_original {
        vec![TrainVariant::Original, TrainVariant::Gap]
    } else {
        vec![TrainVariant::Gap]
    };
    let embedding = CorpusEmbedding {
        frozen: a.vocab.frozen_embedding,
        seed: a.vocab.embedding_seed,
    };
    let vocab = vocab_config(&a.vocab);
    let report = alteration_suite(&variants, &a.weight_decays, &splits, &vocab, embedding, &config)?;
    create_dir(&a.out_dir)?;
    manifest.config(SuiteConfig {
        train: &config,
        suite: AlterationSuiteConfig {
            spec,
            extend,
            weight_decays: &a.weight_decays,
            variants: &variants,
            vocabulary: vocab,
            embedding,
            max_train: a.max_train,
            max_test: a.max_test,
            tokenizer: corpus::TOKENIZER_VERSION,
            split_sizes: [
                splits.original_train.len(),
                splits.gap_train.len(),
                splits.original_test.len(),
                splits.gap_test.len(),
                splits.reverse.len(),
                splits.reverse_star.len(),
            ],
        },
    })?;
    manifest.seed("train", config.seed);
    write_report(&a.out_dir, &report, &mut manifest)
}
