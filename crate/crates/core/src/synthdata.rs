//! Synthetic datasets whose only class signal is (optionally) sequence length.
//!
//! Each example draws a length from its class's [`NormalLengthSpec`] and fills
//! every step with an independent U[0, 1) vector. The informative variant
//! plants all-ones vectors in positive examples.

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{Class, Payload, SequenceExample};
use crate::error::{Error, Result};
use crate::numerics::{sample_length, NormalLengthSpec, SeededRng};

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const TRAIN_MARKER_STREAM: u64 = 3;
const TEST_MARKER_STREAM: u64 = 4;

/// How the informative marker is planted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerMode {
    /// `ceil(density * len)` steps of every positive example become all-ones.
    #[default]
    PerElement,
    /// `ceil(density * n_positive)` positive examples each get one all-ones step.
    PerSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub class0: NormalLengthSpec,
    pub class1: NormalLengthSpec,
    pub vector_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub informative: bool,
    pub marker_density: f64,
    #[serde(default)]
    pub marker_mode: MarkerMode,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            class0: NormalLengthSpec { mu: 10.0, sigma: 2.0 },
            class1: NormalLengthSpec { mu: 10.0, sigma: 2.0 },
            vector_dim: 300,
            n_train: 10_000,
            n_test: 10_000,
            informative: false,
            marker_density: 0.10,
            marker_mode: MarkerMode::PerElement,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    /// The five length-distribution rows of the synthetic overlap sweep
    /// (nominal overlap 100, 80, 50, 10 and 0 %).
    pub fn overlap_sweep() -> Vec<ScenarioSpec> {
        [(10.0, 2.0), (11.0, 2.0), (13.0, 3.0), (20.0, 4.0), (100.0, 10.0)]
            .into_iter()
            .map(|(mu, sigma)| ScenarioSpec {
                class1: NormalLengthSpec { mu, sigma },
                ..Default::default()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.class0.validate()?;
        self.class1.validate()?;
        if self.vector_dim == 0 {
            return Err(Error::InvalidConfig("vector_dim must be >= 1".into()));
        }
        for (name, n) in [("n_train", self.n_train), ("n_test", self.n_test)] {
            if n == 0 || n % 2 != 0 {
                return Err(Error::InvalidConfig(format!("{name} must be even and positive, got {n}")));
            }
        }
        if self.informative && !(self.marker_density > 0.0 && self.marker_density <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "marker_density must be in (0, 1], got {}",
                self.marker_density
            )));
        }
        Ok(())
    }

    fn class_spec(&self, class: Class) -> &NormalLengthSpec {
        match class {
            Class::Negative => &self.class0,
            Class::Positive => &self.class1,
        }
    }
}

fn generate_split(spec: &ScenarioSpec, n: usize, stream: &SeededRng) -> Vec<SequenceExample> {
    (0..n)
        .map(|i| {
            let label = Class::from_index(i % 2);
            let mut rng = stream.child(i as u64);
            let len = sample_length(spec.class_spec(label), &mut rng);
            let vectors = Array2::from_shape_simple_fn((len, spec.vector_dim), || rng.uniform());
            SequenceExample::dense(label, vectors)
        })
        .collect()
}

/// Balanced train and test sets (labels alternate 0, 1, 0, ...), drawn from
/// disjoint child streams of `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<SequenceExample>, Vec<SequenceExample>)> {
    spec.validate()?;
    let root = SeededRng::new(spec.seed);
    let mut train = generate_split(spec, spec.n_train, &root.child(TRAIN_STREAM));
    let mut test = generate_split(spec, spec.n_test, &root.child(TEST_STREAM));
    if spec.informative {
        inject_informative(&mut train, spec.marker_density, spec.marker_mode, &root.child(TRAIN_MARKER_STREAM))?;
        inject_informative(&mut test, spec.marker_density, spec.marker_mode, &root.child(TEST_MARKER_STREAM))?;
    }
    Ok((train, test))
}

/// `ceil(density * len)` guarded against representation error (`0.1 * 30`
/// is slightly above 3).
fn marker_count(density: f64, len: usize) -> usize {
    let raw = density * len as f64;
    let c = (raw - 1e-9 * raw.max(1.0)).ceil();
    (c.max(1.0) as usize).min(len)
}

/// Plant all-ones steps in positive examples; negatives are left untouched.
/// Positions are drawn uniformly without replacement from a child stream per
/// example index.
pub fn inject_informative(
    dataset: &mut [SequenceExample],
    marker_density: f64,
    mode: MarkerMode,
    rng: &SeededRng,
) -> Result<()> {
    if !(marker_density > 0.0 && marker_density <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "marker_density must be in (0, 1], got {marker_density}"
        )));
    }
    if dataset.iter().any(|e| matches!(e.payload, Payload::Tokens(_))) {
        return Err(Error::PayloadKind("markers can only be planted in vector sequences"));
    }
    let positives: Vec<usize> = dataset
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label == Class::Positive)
        .map(|(i, _)| i)
        .collect();

    let mark = |ex: &mut SequenceExample, count: usize, r: &mut SeededRng| {
        let Payload::Vectors(v) = &mut ex.payload else { unreachable!() };
        for pos in index::sample(r, v.nrows(), count) {
            v.row_mut(pos).fill(1.0);
        }
    };

    match mode {
        MarkerMode::PerElement => {
            for &i in &positives {
                let mut r = rng.child(i as u64);
                let count = marker_count(marker_density, dataset[i].len());
                mark(&mut dataset[i], count, &mut r);
            }
        }
        MarkerMode::PerSequence => {
            let mut picker = rng.child(u64::MAX);
            let chosen = marker_count(marker_density, positives.len());
            let mut picked: Vec<usize> = index::sample(&mut picker, positives.len(), chosen).into_vec();
            picked.sort_unstable();
            for p in picked {
                let i = positives[p];
                let mut r = rng.child(i as u64);
                mark(&mut dataset[i], 1, &mut r);
            }
        }
    }
    Ok(())
}

/// True when some step of a vector sequence is exactly all-ones.
pub fn has_marker(example: &SequenceExample) -> bool {
    match &example.payload {
        Payload::Vectors(v) => v.outer_iter().any(|row| row.iter().all(|&x| x == 1.0)),
        Payload::Tokens(_) => false,
    }
}
