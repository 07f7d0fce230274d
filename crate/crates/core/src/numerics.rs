//! Seeded random generation, normal-distribution helpers and the class
//! length-distribution overlap coefficient.
//!
//! # Random streams
//!
//! [`SeededRng`] wraps the ChaCha8 stream cipher generator (`rand_chacha`),
//! which is counter based and value-stable across platforms. Child streams
//! are derived from the *seed* of the parent, never from its draw position,
//! with
//!
//! ```text
//! child_seed(seed, stream) = splitmix64(seed ^ splitmix64(stream + 1))
//! ```
//!
//! where `splitmix64` is the standard SplitMix64 finalizer. Workers that need
//! their own generator take a child stream keyed by a stable index (example
//! number, grid cell, ...), so results never depend on scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Composite Simpson panels per smooth piece of `min(pdf_a, pdf_b)`.
pub const SIMPSON_PANELS: usize = 4096;

/// Half-width of the integration window, in multiples of the larger sigma.
pub const WINDOW_SIGMAS: f64 = 8.0;

/// Normal distribution of sequence lengths for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalLengthSpec {
    pub mu: f64,
    pub sigma: f64,
}

impl NormalLengthSpec {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        let spec = Self { mu, sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidConfig(format!("length mean must be > 0, got {}", self.mu)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "length standard deviation must be > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child stream `stream` under parent seed `seed`.
pub fn child_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(1)))
}

/// Deterministic generator handle. Not `Sync`-shared: give each worker a
/// [`SeededRng::child`].
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `stream`; does not advance `self`.
    pub fn child(&self, stream: u64) -> SeededRng {
        SeededRng::new(child_seed(self.seed, stream))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draw a sequence length: `round(x)` with `x ~ Normal(mu, sigma)`, floored at 1.
pub fn sample_length(spec: &NormalLengthSpec, rng: &mut SeededRng) -> usize {
    let normal = Normal::new(spec.mu, spec.sigma).expect("validated spec");
    let x: f64 = normal.sample(rng);
    if x.is_nan() || x < 1.5 {
        1
    } else {
        x.round() as usize
    }
}

/// `dim` independent draws from U[0, 1).
pub fn uniform_vector(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..dim).map(|_| rng.uniform()).collect()
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Overlap of two normals with a shared sigma: `2 Phi(-|mu_a - mu_b| / (2 sigma))`.
pub fn equal_sigma_overlap(mu_a: f64, mu_b: f64, sigma: f64) -> f64 {
    2.0 * std_normal_cdf(-(mu_a - mu_b).abs() / (2.0 * sigma))
}

/// Points where the two densities cross, i.e. the real roots of
/// `log pdf_a(x) = log pdf_b(x)`.
fn density_crossings(a: &NormalLengthSpec, b: &NormalLengthSpec) -> Vec<f64> {
    let (va, vb) = (a.sigma * a.sigma, b.sigma * b.sigma);
    // (x-mb)^2/(2vb) - (x-ma)^2/(2va) + ln(sb/sa) = 0, written as qa x^2 + qb x + qc = 0
    let qa = 0.5 / vb - 0.5 / va;
    let qb = a.mu / va - b.mu / vb;
    let qc = 0.5 * b.mu * b.mu / vb - 0.5 * a.mu * a.mu / va + (b.sigma / a.sigma).ln();
    let mut roots = Vec::new();
    if qa.abs() < 1e-300 {
        if qb.abs() > 0.0 {
            roots.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let s = disc.sqrt();
            // numerically stable pair
            let q = -0.5 * (qb + qb.signum() * s);
            if q != 0.0 {
                roots.push(q / qa);
                roots.push(qc / q);
            } else {
                roots.push(-qb / (2.0 * qa));
            }
        }
    }
    roots.retain(|r| r.is_finite());
    roots
}

fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    debug_assert!(panels.is_multiple_of(2));
    if hi <= lo {
        return 0.0;
    }
    let h = (hi - lo) / panels as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * k as f64);
    }
    acc * h / 3.0
}

/// `∫ min(pdf_a, pdf_b) dx` by composite Simpson quadrature over
/// `[min mu - 8 max sigma, max mu + 8 max sigma]`.
///
/// The window is split at the density crossings so each piece integrates a
/// single smooth density; every piece gets [`SIMPSON_PANELS`] panels. The two
/// specs are put in a canonical order first, so the result is exactly
/// symmetric in its arguments.
pub fn overlap_coefficient(a: &NormalLengthSpec, b: &NormalLengthSpec) -> f64 {
    let (a, b) = if (a.mu, a.sigma) <= (b.mu, b.sigma) { (a, b) } else { (b, a) };
    let max_sigma = a.sigma.max(b.sigma);
    let lo = a.mu.min(b.mu) - WINDOW_SIGMAS * max_sigma;
    let hi = a.mu.max(b.mu) + WINDOW_SIGMAS * max_sigma;

    let mut cuts: Vec<f64> = density_crossings(a, b)
        .into_iter()
        .filter(|&x| x > lo && x < hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(lo);
    edges.extend(cuts);
    edges.push(hi);

    let integrand = |x: f64| a.pdf(x).min(b.pdf(x));
    let total: f64 = edges
        .windows(2)
        .map(|w| simpson(integrand, w[0], w[1], SIMPSON_PANELS))
        .sum();
    total.clamp(0.0, 1.0)
}

/// Overlap of two empirical integer-length distributions:
/// `Σ_k min(p_a(k), p_b(k))` with each histogram normalized to unit mass.
pub fn empirical_overlap(lengths_a: &[usize], lengths_b: &[usize]) -> f64 {
    if lengths_a.is_empty() || lengths_b.is_empty() {
        return 0.0;
    }
    let max = lengths_a.iter().chain(lengths_b).copied().max().unwrap_or(0);
    let mut ha = vec![0usize; max + 1];
    let mut hb = vec![0usize; max + 1];
    for &l in lengths_a {
        ha[l] += 1;
    }
    for &l in lengths_b {
        hb[l] += 1;
    }
    let (na, nb) = (lengths_a.len() as f64, lengths_b.len() as f64);
    ha.iter()
        .zip(&hb)
        .map(|(&x, &y)| (x as f64 / na).min(y as f64 / nb))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mu: f64, sigma: f64) -> NormalLengthSpec {
        NormalLengthSpec::new(mu, sigma).unwrap()
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(NormalLengthSpec::new(10.0, 0.0).is_err());
        assert!(NormalLengthSpec::new(0.0, 1.0).is_err());
        assert!(NormalLengthSpec::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn degenerate_length_distribution() {
        let mut rng = SeededRng::new(1);
        let s = spec(10.0, 1e-9);
        for _ in 0..100 {
            assert_eq!(sample_length(&s, &mut rng), 10);
        }
    }

    #[test]
    fn sample_mean_matches() {
        let mut rng = SeededRng::new(7);
        let s = spec(10.0, 2.0);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_length(&s, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((9.9..=10.1).contains(&mean), "mean {mean}");
    }

    #[test]
    fn clamp_floor() {
        let mut rng = SeededRng::new(3);
        let s = spec(0.4, 0.1);
        assert!((0..10_000).all(|_| sample_length(&s, &mut rng) >= 1));
    }

    #[test]
    fn uniform_vectors() {
        let mut rng = SeededRng::new(11);
        let v = uniform_vector(300, &mut rng);
        assert_eq!(v.len(), 300);
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));

        let a = uniform_vector(1, &mut SeededRng::new(5));
        let b = uniform_vector(1, &mut SeededRng::new(5));
        assert_eq!(a, b);

        let mut sum = vec![0.0; 300];
        for _ in 0..10_000 {
            for (s, x) in sum.iter_mut().zip(uniform_vector(300, &mut rng)) {
                *s += x;
            }
        }
        for s in sum {
            let m = s / 10_000.0;
            assert!((0.49..=0.51).contains(&m), "component mean {m}");
        }
    }

    #[test]
    fn child_streams_are_stable_and_distinct() {
        let root = SeededRng::new(42);
        let mut a = root.child(3);
        let mut b = root.child(3);
        let mut c = root.child(4);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_eq!(x, y);
        assert_ne!(x, z);
        // drawing from the parent does not change its children
        let mut parent = root.clone();
        parent.next_u64();
        assert_eq!(parent.child(3).next_u64(), x);
    }

    #[test]
    fn overlap_table_rows() {
        let base = spec(10.0, 2.0);
        assert!((overlap_coefficient(&base, &base) - 1.0).abs() < 1e-6);
        let o80 = overlap_coefficient(&base, &spec(11.0, 2.0));
        assert!((o80 - 0.8026).abs() < 1e-3, "{o80}");
        assert!(overlap_coefficient(&base, &spec(100.0, 10.0)) < 1e-3);
        let o50 = overlap_coefficient(&base, &spec(13.0, 3.0));
        assert!((o50 - 0.50).abs() < 0.03, "{o50}");
    }

    #[test]
    fn crossings_lie_on_equal_densities() {
        let (a, b) = (spec(10.0, 2.0), spec(13.0, 3.0));
        let roots = density_crossings(&a, &b);
        assert_eq!(roots.len(), 2);
        for r in roots {
            let (pa, pb) = (a.pdf(r), b.pdf(r));
            assert!((pa - pb).abs() <= 1e-12 * pa.max(pb), "{r}: {pa} vs {pb}");
        }
    }

    #[test]
    fn empirical_overlap_extremes() {
        assert_eq!(empirical_overlap(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(empirical_overlap(&[1, 2], &[5, 6]), 0.0);
        assert!((empirical_overlap(&[1, 2], &[2, 3]) - 0.5).abs() < 1e-15);
    }
}
