//! Labeled sequence examples shared by the synthetic and corpus paths, plus
//! content fingerprints and the JSONL dataset format.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Binary class id: 0 = negative, 1 = positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Class {
    Negative,
    Positive,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Negative, Class::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Class {
        if i == 0 {
            Class::Negative
        } else {
            Class::Positive
        }
    }
}

impl From<Class> for u8 {
    fn from(c: Class) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for Class {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Class::Negative),
            1 => Ok(Class::Positive),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

/// Sequence content: dense input vectors (one row per step) or token ids
/// resolved through the model's embedding table.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Vectors(Array2<f64>),
    Tokens(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceExample {
    pub label: Class,
    pub payload: Payload,
}

impl SequenceExample {
    pub fn dense(label: Class, vectors: Array2<f64>) -> Self {
        Self {
            label,
            payload: Payload::Vectors(vectors),
        }
    }

    pub fn tokens(label: Class, ids: Vec<u32>) -> Self {
        Self {
            label,
            payload: Payload::Tokens(ids),
        }
    }

    pub fn len(&self) -> usize {
        match &self.payload {
            Payload::Vectors(v) => v.nrows(),
            Payload::Tokens(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Lengths of each class, negative first.
pub fn class_lengths(examples: &[SequenceExample]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for ex in examples {
        out[ex.label.index()].push(ex.len());
    }
    out
}

pub fn class_counts(examples: &[SequenceExample]) -> [usize; 2] {
    let mut out = [0, 0];
    for ex in examples {
        out[ex.label.index()] += 1;
    }
    out
}

/// SHA-256 over a canonical byte encoding of the examples, hex encoded.
///
/// Per example: label byte, kind byte (`0` vectors, `1` tokens), row count and
/// row width as u64 LE, then the payload as f64 LE or u32 LE values.
pub fn fingerprint(examples: &[SequenceExample]) -> String {
    let mut h = Sha256::new();
    h.update(b"seqlen-audit/sequence-v1");
    h.update((examples.len() as u64).to_le_bytes());
    for ex in examples {
        h.update([ex.label as u8]);
        match &ex.payload {
            Payload::Vectors(v) => {
                h.update([0u8]);
                h.update((v.nrows() as u64).to_le_bytes());
                h.update((v.ncols() as u64).to_le_bytes());
                for x in v.iter() {
                    h.update(x.to_le_bytes());
                }
            }
            Payload::Tokens(t) => {
                h.update([1u8]);
                h.update((t.len() as u64).to_le_bytes());
                h.update(1u64.to_le_bytes());
                for id in t {
                    h.update(id.to_le_bytes());
                }
            }
        }
    }
    hex_digest(h)
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_digest(h)
}

#[derive(Serialize, Deserialize)]
struct VectorRecord {
    label: Class,
    vectors: Vec<Vec<f64>>,
}

/// Write dense examples as JSONL: `{"label": 0|1, "vectors": [[...], ...]}`.
pub fn write_vector_jsonl<W: Write>(examples: &[SequenceExample], mut out: W) -> Result<()> {
    for ex in examples {
        let Payload::Vectors(v) = &ex.payload else {
            return Err(Error::PayloadKind("only vector payloads can be written as vector JSONL"));
        };
        let rec = VectorRecord {
            label: ex.label,
            vectors: v.outer_iter().map(|r| r.to_vec()).collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read vector JSONL written by [`write_vector_jsonl`]. Blank lines are skipped.
pub fn read_vector_jsonl<R: BufRead>(input: R, path: &Path) -> Result<Vec<SequenceExample>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: VectorRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.vectors.is_empty() {
            return Err(parse_err("empty sequence".into()));
        }
        let width = rec.vectors[0].len();
        if rec.vectors.iter().any(|r| r.len() != width) {
            return Err(parse_err("ragged vector rows".into()));
        }
        let flat: Vec<f64> = rec.vectors.into_iter().flatten().collect();
        let rows = flat.len() / width.max(1);
        let arr = Array2::from_shape_vec((rows, width), flat).map_err(|e| parse_err(e.to_string()))?;
        out.push(SequenceExample::dense(rec.label, arr));
    }
    Ok(out)
}
