//! Dataset files: vector JSONL (synthetic) or text JSONL (corpora),
//! told apart by the first record.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use clap::Args;
use seqlen_audit::corpus::{self, LoadOptions, TextExample, Vocabulary};
use seqlen_audit::dataset::{self, class_lengths, SequenceExample};
use seqlen_audit::Error;

use crate::error::CliResult;

#[derive(Debug, Clone, Args)]
pub struct TextFlags {
    /// JSON field holding the 0/1 label in text corpora.
    #[arg(long, default_value = "label")]
    pub label_field: String,
    /// JSON field holding the document text.
    #[arg(long, default_value = "content")]
    pub text_field: String,
    /// Skip malformed records (reported on stderr) instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

impl TextFlags {
    pub fn options(&self) -> LoadOptions {
        LoadOptions {
            label_field: self.label_field.clone(),
            text_field: self.text_field.clone(),
            strict: !self.lenient,
        }
    }
}

pub enum DataFile {
    Vectors(Vec<SequenceExample>),
    Text(Vec<TextExample>),
}

fn is_vector_file(path: &Path) -> CliResult<bool> {
    let reader = BufReader::new(File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("invalid JSON: {e}"),
        })?;
        return Ok(value.get("vectors").is_some());
    }
    Err(Error::EmptyInput.into())
}

impl DataFile {
    pub fn load(path: &Path, text: &TextFlags) -> CliResult<Self> {
        if is_vector_file(path)? {
            let reader = BufReader::new(File::open(path)?);
            return Ok(DataFile::Vectors(dataset::read_vector_jsonl(reader, path)?));
        }
        let loaded = corpus::load(path, &text.options())?;
        for issue in &loaded.issues {
            eprintln!("{}:{}: skipped: {}", path.display(), issue.line, issue.message);
        }
        if loaded.examples.is_empty() {
            return Err(Error::EmptyInput.into());
        }
        Ok(DataFile::Text(loaded.examples))
    }

    pub fn load_text(path: &Path, text: &TextFlags) -> CliResult<Vec<TextExample>> {
        match Self::load(path, text)? {
            DataFile::Text(t) => Ok(t),
            DataFile::Vectors(_) => Err(Error::PayloadKind("expected a text corpus, found vector records").into()),
        }
    }

    pub fn fingerprint(&self) -> String {
        match self {
            DataFile::Vectors(v) => dataset::fingerprint(v),
            DataFile::Text(t) => corpus::fingerprint(t),
        }
    }

    pub fn class_lengths(&self) -> [Vec<usize>; 2] {
        match self {
            DataFile::Vectors(v) => class_lengths(v),
            DataFile::Text(t) => {
                let mut out = [Vec::new(), Vec::new()];
                for (c, len) in corpus::text_lengths(t) {
                    out[c.index()].push(len);
                }
                out
            }
        }
    }

    /// Model inputs; text needs the vocabulary the model was trained with.
    pub fn sequences(self, vocabulary: Option<&Vocabulary>) -> CliResult<Vec<SequenceExample>> {
        match (self, vocabulary) {
            (DataFile::Vectors(v), None) => Ok(v),
            (DataFile::Vectors(_), Some(_)) => {
                Err(Error::PayloadKind("token model cannot read vector records").into())
            }
            (DataFile::Text(t), Some(vocab)) => Ok(corpus::vectorize(&t, vocab)),
            (DataFile::Text(_), None) => Err(Error::PayloadKind("vector model cannot read text records").into()),
        }
    }
}
