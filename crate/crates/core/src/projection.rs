//! Document-embedding analysis: extraction, 2-D projection (exact t-SNE or
//! PCA) and a leave-one-out nearest-centroid separability score.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Class, Payload, SequenceExample};
use crate::error::{Error, Result};
use crate::model::LstmModel;
use crate::numerics::SeededRng;

/// Exact t-SNE is quadratic in memory and time.
pub const TSNE_MAX_POINTS: usize = 5000;
pub const EARLY_EXAGGERATION: f64 = 12.0;
pub const EXAGGERATION_ITERS: usize = 250;
pub const TSNE_LEARNING_RATE: f64 = 200.0;
pub const INITIAL_MOMENTUM: f64 = 0.5;
pub const FINAL_MOMENTUM: f64 = 0.8;
const MIN_GAIN: f64 = 0.01;
const INIT_STD: f64 = 1e-4;
const PERPLEXITY_TOL: f64 = 1e-5;
const PERPLEXITY_STEPS: usize = 200;
const P_FLOOR: f64 = 1e-12;
const EMBED_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_fingerprint: String,
    pub dataset_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// `n × hidden_dim`
    pub points: Array2<f64>,
    pub labels: Vec<Class>,
    pub provenance: Option<Provenance>,
}

impl EmbeddingSet {
    pub fn new(points: Array2<f64>, labels: Vec<Class>) -> Result<Self> {
        if points.nrows() != labels.len() {
            return Err(Error::ShapeMismatch {
                tensor: "labels".into(),
                expected: vec![points.nrows()],
                found: vec![labels.len()],
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("embedding points must be finite".into()));
        }
        Ok(Self {
            points,
            labels,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// The classifier's input (`h_T`) for every example, in dataset order.
pub fn extract_embeddings(model: &LstmModel, data: &[SequenceExample]) -> Result<EmbeddingSet> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut points = Array2::zeros((data.len(), model.hidden_dim()));
    for (c, chunk) in data.chunks(EMBED_CHUNK).enumerate() {
        let payloads: Vec<&Payload> = chunk.iter().map(|e| &e.payload).collect();
        let rows = model.embeddings_batch(&payloads)?;
        points
            .slice_mut(ndarray::s![c * EMBED_CHUNK..c * EMBED_CHUNK + chunk.len(), ..])
            .assign(&rows);
    }
    let mut set = EmbeddingSet::new(points, data.iter().map(|e| e.label).collect())?;
    set.provenance = Some(Provenance {
        model_fingerprint: model.fingerprint(),
        dataset_fingerprint: dataset::fingerprint(data),
    });
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ProjectionMethod {
    Tsne {
        perplexity: f64,
        iterations: usize,
        seed: u64,
    },
    Pca {
        /// Variance along the two components, largest first.
        explained_variance: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    /// `n × 2`
    pub coords: Array2<f64>,
    pub labels: Vec<Class>,
    pub method: ProjectionMethod,
    pub provenance: Option<Provenance>,
    /// `(iteration, KL(P || Q))` samples; empty for PCA.
    pub kl_trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            seed: 0,
        }
    }
}

fn squared_distances(points: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = points.nrows();
    let norms: Array1<f64> = points.rows().into_iter().map(|r| r.dot(&r)).collect();
    let gram = points.dot(&points.t());
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (norms[i] + norms[j] - 2.0 * gram[[i, j]]).max(0.0)
        }
    })
}

/// One row of conditional affinities at precision `beta`; returns the row
/// and its Shannon entropy (nats).
fn affinity_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, p)) in dist.iter().zip(out.iter_mut()).enumerate() {
        *p = if j == i { 0.0 } else { (-(d - min) * beta).exp() };
        sum += *p;
        weighted += *p * (d - min);
    }
    for p in out.iter_mut() {
        *p /= sum;
    }
    sum.ln() + beta * weighted / sum
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<()> {
    if !(perplexity.is_finite() && perplexity > 0.0) {
        return Err(Error::InvalidConfig(format!("perplexity must be positive, got {perplexity}")));
    }
    if (n as f64) < 3.0 * perplexity || n > TSNE_MAX_POINTS {
        return Err(Error::InfeasiblePerplexity {
            perplexity,
            n,
            max: TSNE_MAX_POINTS,
        });
    }
    Ok(())
}

/// Row-normalized Gaussian affinities `p_{j|i}`, each row's bandwidth found
/// by bisection on the precision so that its perplexity matches.
pub fn conditional_affinities(points: ArrayView2<'_, f64>, perplexity: f64) -> Result<Array2<f64>> {
    let n = points.nrows();
    check_perplexity(n, perplexity)?;
    let dist = squared_distances(points);
    let target = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    p.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(dist.axis_iter(Axis(0)).into_par_iter())
        .enumerate()
        .for_each(|(i, (mut row, d))| {
            let d = d.as_slice().expect("standard layout");
            let out = row.as_slice_mut().expect("standard layout");
            let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
            for _ in 0..PERPLEXITY_STEPS {
                let h = affinity_row(d, i, beta, out);
                if (h - target).abs() < PERPLEXITY_TOL {
                    break;
                }
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
            }
        });
    Ok(p)
}

/// Symmetrized joint affinities `(P + Pᵀ) / 2n`; sums to 1.
pub fn joint_affinities(points: ArrayView2<'_, f64>, perplexity: f64) -> Result<Array2<f64>> {
    let cond = conditional_affinities(points, perplexity)?;
    let n = cond.nrows() as f64;
    Ok((&cond + &cond.t()) / (2.0 * n))
}

/// Student-t kernel `1 / (1 + |y_i - y_j|²)` with a zero diagonal, plus its sum.
fn kernel(y: &Array2<f64>) -> (Array2<f64>, f64) {
    let mut num = squared_distances(y.view());
    num.par_mapv_inplace(|d| 1.0 / (1.0 + d));
    num.diag_mut().fill(0.0);
    let row_sums: Vec<f64> = num.axis_iter(Axis(0)).into_par_iter().map(|r| r.sum()).collect();
    let z = row_sums.iter().sum();
    (num, z)
}

fn kl_divergence(p: &Array2<f64>, num: &Array2<f64>, z: f64) -> f64 {
    let rows: Vec<f64> = p
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(num.axis_iter(Axis(0)).into_par_iter())
        .enumerate()
        .map(|(i, (pr, nr))| {
            pr.iter()
                .zip(nr.iter())
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, (&pij, &nij))| {
                    let pij = pij.max(P_FLOOR);
                    pij * (pij / (nij / z).max(P_FLOOR)).ln()
                })
                .sum()
        })
        .collect();
    rows.iter().sum()
}

fn should_trace(it: usize, iterations: usize) -> bool {
    it + 100 >= iterations || (it + 1).is_multiple_of(50)
}

/// Exact t-SNE to two dimensions. Early exaggeration (×12) and momentum 0.5
/// hold for the first 250 iterations, then momentum 0.8; learning rate 200
/// with adaptive per-coordinate gains. Initial coordinates are N(0, 1e-4²).
pub fn tsne_2d(set: &EmbeddingSet, config: &TsneConfig) -> Result<Projection2D> {
    let n = set.len();
    let p = joint_affinities(set.points.view(), config.perplexity)?;
    let mut rng = SeededRng::new(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut y = Array2::from_shape_simple_fn((n, 2), || normal.sample(&mut rng));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut kl_trace = Vec::new();

    for it in 0..config.iterations {
        let (exaggeration, momentum) = if it < EXAGGERATION_ITERS {
            (EARLY_EXAGGERATION, INITIAL_MOMENTUM)
        } else {
            (1.0, FINAL_MOMENTUM)
        };
        let (num, z) = kernel(&y);
        let mut grad = Array2::<f64>::zeros((n, 2));
        grad.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut g)| {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let nij = num[[i, j]];
                let w = (exaggeration * p[[i, j]] - nij / z) * nij;
                gx += w * (y[[i, 0]] - y[[j, 0]]);
                gy += w * (y[[i, 1]] - y[[j, 1]]);
            }
            g[0] = 4.0 * gx;
            g[1] = 4.0 * gy;
        });
        ndarray::Zip::from(&mut gains)
            .and(&grad)
            .and(&velocity)
            .for_each(|gain, &g, &v| {
                *gain = if (g > 0.0) != (v > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(MIN_GAIN) };
            });
        ndarray::Zip::from(&mut velocity)
            .and(&gains)
            .and(&grad)
            .for_each(|v, &gain, &g| *v = momentum * *v - TSNE_LEARNING_RATE * gain * g);
        y += &velocity;
        let mean = y.mean_axis(Axis(0)).expect("n > 0");
        y -= &mean;

        if should_trace(it, config.iterations) {
            let (num, z) = kernel(&y);
            kl_trace.push((it, kl_divergence(&p, &num, z)));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { tensor: "tsne".into() });
    }
    Ok(Projection2D {
        coords: y,
        labels: set.labels.clone(),
        method: ProjectionMethod::Tsne {
            perplexity: config.perplexity,
            iterations: config.iterations,
            seed: config.seed,
        },
        provenance: set.provenance.clone(),
        kl_trace,
    })
}

/// Projection onto the top two principal components. Each component's sign
/// is fixed so its largest-magnitude loading is positive.
pub fn pca_2d(set: &EmbeddingSet) -> Result<Projection2D> {
    let (n, d) = set.points.dim();
    if n < 2 {
        return Err(Error::EmptyInput);
    }
    let mean = set.points.mean_axis(Axis(0)).expect("n > 0");
    let centered = &set.points - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut basis = Array2::<f64>::zeros((d, 2));
    let mut explained = [0.0; 2];
    for (k, &c) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(c);
        let pivot = v.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[[i, k]] = sign * v[i];
        }
        explained[k] = eig.eigenvalues[c].max(0.0);
    }
    Ok(Projection2D {
        coords: centered.dot(&basis),
        labels: set.labels.clone(),
        method: ProjectionMethod::Pca {
            explained_variance: explained,
        },
        provenance: set.provenance.clone(),
        kl_trace: Vec::new(),
    })
}

/// Leave-one-out nearest-centroid accuracy. Each point is assigned to the
/// nearer of its own class centroid (computed without it) and the other
/// class centroid; exact ties score one half, and a point that is alone in
/// its class counts as misclassified.
pub fn separability_score(points: ArrayView2<'_, f64>, labels: &[Class]) -> Result<f64> {
    if points.nrows() != labels.len() {
        return Err(Error::ShapeMismatch {
            tensor: "labels".into(),
            expected: vec![points.nrows()],
            found: vec![labels.len()],
        });
    }
    let d = points.ncols();
    let mut sums = [Array1::<f64>::zeros(d), Array1::<f64>::zeros(d)];
    let mut counts = [0usize; 2];
    for (row, &c) in points.rows().into_iter().zip(labels) {
        sums[c.index()] += &row;
        counts[c.index()] += 1;
    }
    for c in Class::ALL {
        if counts[c.index()] == 0 {
            return Err(Error::EmptyClass(c as u8));
        }
    }
    let mut score = 0.0;
    for (row, &c) in points.rows().into_iter().zip(labels) {
        let (own, other) = (c.index(), 1 - c.index());
        if counts[own] == 1 {
            continue;
        }
        let own_centroid = (&sums[own] - &row) / (counts[own] - 1) as f64;
        let other_centroid = &sums[other] / counts[other] as f64;
        let d_own: f64 = row.iter().zip(&own_centroid).map(|(a, b)| (a - b).powi(2)).sum();
        let d_other: f64 = row.iter().zip(&other_centroid).map(|(a, b)| (a - b).powi(2)).sum();
        score += match d_own.partial_cmp(&d_other) {
            Some(std::cmp::Ordering::Less) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        };
    }
    Ok(score / labels.len() as f64)
}

impl Projection2D {
    pub fn separability(&self) -> Result<f64> {
        separability_score(self.coords.view(), &self.labels)
    }

    /// `x,y,label` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "label"])?;
        for (p, &c) in self.coords.rows().into_iter().zip(&self.labels) {
            w.serialize((p[0], p[1], c as u8))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Standalone SVG scatter plot, one color per class, with a legend.
    pub fn write_svg<W: Write>(&self, mut out: W, title: &str) -> Result<()> {
        const SIZE: f64 = 480.0;
        const MARGIN: f64 = 36.0;
        const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in self.coords.rows() {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
        let span = (xmax - xmin).max(ymax - ymin).max(f64::MIN_POSITIVE);
        let inner = SIZE - 2.0 * MARGIN;
        let sx = |x: f64| MARGIN + (x - xmin) / span * inner;
        let sy = |y: f64| SIZE - MARGIN - (y - ymin) / span * inner;

        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        )?;
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
        writeln!(
            out,
            r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            SIZE / 2.0,
            escape_xml(title)
        )?;
        for (p, &c) in self.coords.rows().into_iter().zip(&self.labels) {
            writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
                sx(p[0]),
                sy(p[1]),
                COLORS[c.index()]
            )?;
        }
        for c in Class::ALL {
            let y = SIZE - 12.0 - 16.0 * (1 - c.index()) as f64;
            writeln!(out, r#"<circle cx="{}" cy="{}" r="4" fill="{}"/>"#, MARGIN, y - 4.0, COLORS[c.index()])?;
            writeln!(
                out,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">class {}</text>"#,
                MARGIN + 10.0,
                y,
                c as u8
            )?;
        }
        writeln!(out, "</svg>")?;
        Ok(())
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, sigma: f64, gap: f64, dim: usize, seed: u64) -> EmbeddingSet {
        let mut rng = SeededRng::new(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let labels: Vec<Class> = (0..n).map(|i| Class::from_index(i % 2)).collect();
        let points = Array2::from_shape_fn((n, dim), |(i, j)| {
            let centre = if j == 0 { gap * (i % 2) as f64 } else { 0.0 };
            centre + normal.sample(&mut rng)
        });
        EmbeddingSet::new(points, labels).unwrap()
    }

    #[test]
    fn zero_model_embeds_to_zero() {
        let m = LstmModel::zeros(3, 5);
        let data: Vec<_> = (0..4)
            .map(|i| SequenceExample::dense(Class::from_index(i % 2), Array2::from_elem((i + 1, 3), 0.7)))
            .collect();
        let set = extract_embeddings(&m, &data).unwrap();
        assert_eq!(set.points.dim(), (4, 5));
        assert!(set.points.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embeddings_match_single_calls() {
        let mut rng = SeededRng::new(2);
        let m = LstmModel::init(3, 4, &mut rng);
        let data: Vec<_> = (0..300)
            .map(|i| {
                let v = Array2::from_shape_simple_fn((1 + i % 7, 3), || rng.uniform());
                SequenceExample::dense(Class::from_index(i % 2), v)
            })
            .collect();
        let set = extract_embeddings(&m, &data).unwrap();
        for (i, ex) in data.iter().enumerate() {
            let e = m.document_embedding(&ex.payload).unwrap();
            for (a, b) in set.points.row(i).iter().zip(&e) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affinity_rows_normalized_and_perplexity_matched() {
        let set = blobs(120, 1.0, 3.0, 5, 1);
        let p = conditional_affinities(set.points.view(), 20.0).unwrap();
        for (i, row) in p.rows().into_iter().enumerate() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert_eq!(row[i], 0.0);
            let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
            assert!((h.exp() - 20.0).abs() < 1e-3, "row {i} perplexity {}", h.exp());
        }
        let joint = joint_affinities(set.points.view(), 20.0).unwrap();
        assert!((joint.sum() - 1.0).abs() < 1e-9);
        assert!(joint.iter().all(|&v| v >= 0.0));
        for i in 0..120 {
            for j in 0..120 {
                assert_eq!(joint[[i, j]], joint[[j, i]]);
            }
        }
    }

    #[test]
    fn infeasible_perplexity_rejected() {
        let set = blobs(20, 1.0, 1.0, 2, 0);
        assert!(matches!(
            tsne_2d(&set, &TsneConfig::default()),
            Err(Error::InfeasiblePerplexity { .. })
        ));
    }

    #[test]
    fn tsne_separates_blobs_and_is_deterministic() {
        let set = blobs(200, 0.1, 10.0, 10, 3);
        let cfg = TsneConfig {
            iterations: 500,
            ..Default::default()
        };
        let a = tsne_2d(&set, &cfg).unwrap();
        assert!(a.separability().unwrap() >= 0.99);
        let b = tsne_2d(&set, &cfg).unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.kl_trace.len(), 100 + 8);
    }

    #[test]
    fn pca_of_centered_plane_is_isometry() {
        let set = blobs(50, 1.0, 0.0, 2, 5);
        let mean = set.points.mean_axis(Axis(0)).unwrap();
        let centered = EmbeddingSet::new(&set.points - &mean, set.labels.clone()).unwrap();
        let proj = pca_2d(&centered).unwrap();
        let d0 = squared_distances(centered.points.view());
        let d1 = squared_distances(proj.coords.view());
        for (a, b) in d0.iter().zip(&d1) {
            assert!((a.sqrt() - b.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn pca_rank_one_and_ordering() {
        let points = Array2::from_shape_fn((30, 4), |(i, j)| i as f64 * [1.0, -2.0, 0.5, 3.0][j]);
        let labels = (0..30).map(|i| Class::from_index(i % 2)).collect();
        let proj = pca_2d(&EmbeddingSet::new(points, labels).unwrap()).unwrap();
        let ProjectionMethod::Pca { explained_variance: ev } = proj.method else { panic!() };
        assert!(ev[0] >= ev[1]);
        assert!(ev[1] < 1e-9 * ev[0]);
        assert!(proj.coords.column(1).iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn separability_extremes() {
        let pts = Array2::from_elem((10, 2), 3.0);
        let labels: Vec<_> = (0..10).map(|i| Class::from_index(i % 2)).collect();
        let s = separability_score(pts.view(), &labels).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
        let far = blobs(100, 0.1, 50.0, 3, 9);
        assert_eq!(separability_score(far.points.view(), &far.labels).unwrap(), 1.0);
    }

    #[test]
    fn singleton_class_point_counts_as_miss() {
        let pts = ndarray::array![[0.0, 0.0], [0.1, 0.0], [5.0, 5.0]];
        let labels = [Class::Negative, Class::Negative, Class::Positive];
        let s = separability_score(pts.view(), &labels).unwrap();
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn separability_needs_both_classes() {
        let pts = Array2::zeros((3, 2));
        assert!(separability_score(pts.view(), &[Class::Positive; 3]).is_err());
    }

    #[test]
    fn csv_and_svg_render() {
        let set = blobs(10, 1.0, 2.0, 3, 4);
        let proj = pca_2d(&set).unwrap();
        let mut csv = Vec::new();
        proj.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x,y,label\n"));
        assert_eq!(text.lines().count(), 11);
        let mut svg = Vec::new();
        proj.write_svg(&mut svg, "a < b").unwrap();
        let svg = String::from_utf8(svg).unwrap();
        assert_eq!(svg.matches("<circle").count(), 12);
        assert!(svg.contains("a &lt; b"));
    }
}
