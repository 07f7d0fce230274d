//! Audit reports: one row per (model, test set) evaluation, serialized as
//! JSON or flat CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::synthdata::ScenarioSpec;
use crate::trainer::{EpochRecord, Evaluation, TrainConfig, TrainVariant};

/// Package version, with the `git describe` output when built from a checkout.
pub fn toolkit_version() -> String {
    match option_env!("SEQLEN_AUDIT_GIT_DESCRIBE") {
        Some(g) if !g.is_empty() => format!("{} ({g})", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub model: String,
    pub test_set: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_variant: Option<TrainVariant>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dataset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scenario: Option<ScenarioSpec>,
    pub hidden_dim: usize,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    /// Theoretical overlap of the class length distributions, when known.
    pub overlap_theoretical: Option<f64>,
    /// Histogram overlap of the test set's class lengths.
    pub overlap_empirical: f64,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub accuracy_class0: Option<f64>,
    pub accuracy_class1: Option<f64>,
    pub f1_positive: f64,
    pub f1_macro: f64,
    pub mean_loss: f64,
    pub config_fingerprint: String,
    pub train_fingerprint: String,
    pub test_fingerprint: String,
    pub toolkit_version: String,
}

impl ReportRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        experiment: &str,
        model: &str,
        test_set: &str,
        config: &TrainConfig,
        train_fingerprint: &str,
        test_fingerprint: &str,
        overlap_empirical: f64,
        eval: &Evaluation,
    ) -> Self {
        Self {
            experiment: experiment.into(),
            model: model.into(),
            test_set: test_set.into(),
            train_variant: None,
            dataset: None,
            scenario: None,
            hidden_dim: config.hidden_dim,
            weight_decay: config.weight_decay,
            dropout_rate: config.dropout_rate,
            overlap_theoretical: None,
            overlap_empirical,
            total: eval.total,
            correct: eval.correct,
            accuracy: eval.accuracy,
            accuracy_class0: eval.class_accuracy[0],
            accuracy_class1: eval.class_accuracy[1],
            f1_positive: eval.f1_positive,
            f1_macro: eval.f1_macro,
            mean_loss: eval.mean_loss,
            config_fingerprint: config.fingerprint(),
            train_fingerprint: train_fingerprint.into(),
            test_fingerprint: test_fingerprint.into(),
            toolkit_version: toolkit_version(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub config: TrainConfig,
    pub config_fingerprint: String,
    pub train_fingerprint: String,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub toolkit_version: String,
    pub rows: Vec<ReportRow>,
    pub models: Vec<ModelSummary>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    experiment: &'a str,
    model: &'a str,
    test_set: &'a str,
    train_variant: Option<&'static str>,
    dataset: Option<&'a str>,
    mu0: Option<f64>,
    sigma0: Option<f64>,
    mu1: Option<f64>,
    sigma1: Option<f64>,
    hidden_dim: usize,
    weight_decay: f64,
    dropout_rate: f64,
    overlap_theoretical: Option<f64>,
    overlap_empirical: f64,
    total: usize,
    correct: usize,
    accuracy: f64,
    accuracy_class0: Option<f64>,
    accuracy_class1: Option<f64>,
    f1_positive: f64,
    f1_macro: f64,
    mean_loss: f64,
    config_fingerprint: &'a str,
    train_fingerprint: &'a str,
    test_fingerprint: &'a str,
    toolkit_version: &'a str,
}

impl AuditReport {
    pub fn new() -> Self {
        Self {
            toolkit_version: toolkit_version(),
            rows: Vec::new(),
            models: Vec::new(),
        }
    }

    /// Assemble from per-cell results in order; the first error wins.
    /// Consecutive rows sharing a model contribute one summary.
    pub fn from_cells(cells: Vec<Result<(ReportRow, ModelSummary)>>) -> Result<Self> {
        let mut report = Self::new();
        for cell in cells {
            let (row, summary) = cell?;
            if report.models.last().map(|m| &m.name) != Some(&summary.name) {
                report.models.push(summary);
            }
            report.rows.push(row);
        }
        Ok(report)
    }

    pub fn extend(&mut self, other: AuditReport) {
        self.rows.extend(other.rows);
        self.models.extend(other.models);
    }

    /// Rows of `model` keyed by test set.
    pub fn find(&self, model: &str, test_set: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.test_set == test_set)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            let s = r.scenario.as_ref();
            w.serialize(CsvRow {
                experiment: &r.experiment,
                model: &r.model,
                test_set: &r.test_set,
                train_variant: r.train_variant.map(TrainVariant::name),
                dataset: r.dataset.as_deref(),
                mu0: s.map(|s| s.class0.mu),
                sigma0: s.map(|s| s.class0.sigma),
                mu1: s.map(|s| s.class1.mu),
                sigma1: s.map(|s| s.class1.sigma),
                hidden_dim: r.hidden_dim,
                weight_decay: r.weight_decay,
                dropout_rate: r.dropout_rate,
                overlap_theoretical: r.overlap_theoretical,
                overlap_empirical: r.overlap_empirical,
                total: r.total,
                correct: r.correct,
                accuracy: r.accuracy,
                accuracy_class0: r.accuracy_class0,
                accuracy_class1: r.accuracy_class1,
                f1_positive: r.f1_positive,
                f1_macro: r.f1_macro,
                mean_loss: r.mean_loss,
                config_fingerprint: &r.config_fingerprint,
                train_fingerprint: &r.train_fingerprint,
                test_fingerprint: &r.test_fingerprint,
                toolkit_version: &r.toolkit_version,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Compact fixed-width table for terminals.
    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:<36} {:<14} {:>8} {:>8} {:>9} {:>8}\n",
            "model", "test set", "overlap", "wd", "dropout", "acc"
        );
        for r in &self.rows {
            let overlap = r.overlap_theoretical.unwrap_or(r.overlap_empirical);
            s.push_str(&format!(
                "{:<36} {:<14} {:>7.1}% {:>8} {:>9} {:>8.4}\n",
                r.model,
                r.test_set,
                overlap * 100.0,
                r.weight_decay,
                r.dropout_rate,
                r.accuracy
            ));
        }
        s
    }
}
