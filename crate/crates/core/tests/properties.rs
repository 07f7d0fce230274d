//! Randomized invariants across modules.

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};
use seqlen_audit::corpus::{self, AlterationSpec, ExtendMode, TextExample};
use seqlen_audit::dataset::{Class, Payload};
use seqlen_audit::model::{Gradients, LstmModel, ParamId, Pass};
use seqlen_audit::numerics::{overlap_coefficient, NormalLengthSpec, SeededRng};
use seqlen_audit::optimizer::{AdamConfig, AdamState};
use seqlen_audit::projection::{separability_score, tsne_2d, EmbeddingSet, TsneConfig};

fn spec() -> impl Strategy<Value = NormalLengthSpec> {
    (1.0..200.0f64, 0.5..30.0f64).prop_map(|(mu, sigma)| NormalLengthSpec { mu, sigma })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn overlap_is_symmetric(a in spec(), b in spec()) {
        prop_assert_eq!(overlap_coefficient(&a, &b), overlap_coefficient(&b, &a));
    }

    #[test]
    fn overlap_with_itself_is_one(a in spec()) {
        prop_assert!((overlap_coefficient(&a, &a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn overlap_is_translation_invariant(a in spec(), b in spec(), c in -50.0..50.0f64) {
        let shifted = |s: &NormalLengthSpec| NormalLengthSpec { mu: s.mu + c, sigma: s.sigma };
        let base = overlap_coefficient(&a, &b);
        let moved = overlap_coefficient(&shifted(&a), &shifted(&b));
        prop_assert!((base - moved).abs() < 1e-9, "{base} vs {moved}");
    }
}

// ---------------------------------------------------------------------------

fn tokens_of(len: usize, seed: usize) -> String {
    (0..len).map(|k| format!("t{}", (k + seed) % 7)).collect::<Vec<_>>().join(" ")
}

fn text_dataset() -> impl Strategy<Value = Vec<TextExample>> {
    prop::collection::vec((any::<bool>(), 1usize..60), 0..20).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (pos, len))| {
                let label = if pos { Class::Positive } else { Class::Negative };
                TextExample::new(label, tokens_of(len, i))
            })
            .collect()
    })
}

fn thresholds() -> impl Strategy<Value = AlterationSpec> {
    (1usize..40, 1usize..20).prop_map(|(p, gap)| AlterationSpec::new(p, p + gap).unwrap())
}

fn sorted_texts(set: &[TextExample]) -> Vec<(Class, String)> {
    let mut v: Vec<_> = set.iter().map(|e| (e.label, e.text.clone())).collect();
    v.sort_by(|a, b| (a.0 as u8, &a.1).cmp(&(b.0 as u8, &b.1)));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn filters_partition_the_input(data in text_dataset(), spec in thresholds()) {
        let (Ok(gap), Ok(rev)) = (corpus::gap_filter(&data, &spec), corpus::reverse_filter(&data, &spec)) else {
            return Ok(());
        };
        let mut union = gap.clone();
        union.extend(rev.iter().cloned());
        prop_assert_eq!(sorted_texts(&union), sorted_texts(&data));
        prop_assert!(gap.iter().all(|e| spec.on_gap_side(e)));
        prop_assert!(rev.iter().all(|e| !spec.on_gap_side(e)));
        prop_assert_eq!(corpus::gap_filter(&gap, &spec).unwrap(), gap);
    }

    #[test]
    fn reverse_star_lands_in_range_without_new_content(data in text_dataset(), spec in thresholds()) {
        let Ok(rev) = corpus::reverse_filter(&data, &spec) else { return Ok(()) };
        for mode in [ExtendMode::RepeatUntil, ExtendMode::SingleDuplicate] {
            let star = corpus::reverse_star(&rev, &spec, mode).unwrap();
            prop_assert_eq!(star.len(), rev.len());
            for (s, r) in star.iter().zip(&rev) {
                prop_assert_eq!(s.label, r.label);
                match s.label {
                    Class::Positive => {
                        prop_assert!(s.len() <= spec.pos_max);
                        prop_assert_eq!(&s.tokens[..], &r.tokens[..s.len()]);
                    }
                    Class::Negative => {
                        if mode == ExtendMode::RepeatUntil {
                            prop_assert!(s.len() >= spec.neg_min);
                        }
                        prop_assert_eq!(s.len() % r.len(), 0);
                        for chunk in s.tokens.chunks(r.len()) {
                            prop_assert_eq!(chunk, &r.tokens[..]);
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------

fn one_scalar(theta: f64) -> LstmModel {
    let mut m = LstmModel::zeros(1, 1);
    m.head_b[0] = theta;
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Zero data gradient with decay: each step moves toward zero. The step
    /// budget (100 × lr) stays below |θ0| so Adam's momentum cannot cross zero.
    #[test]
    fn decay_alone_never_grows_a_parameter(
        theta in prop_oneof![0.2..10.0f64, -10.0..-0.2f64],
        lambda in 1e-4..1.0f64,
    ) {
        let mut m = one_scalar(theta);
        let cfg = AdamConfig { weight_decay: lambda, ..AdamConfig::default() };
        let mut st = AdamState::new(&m, cfg);
        let zero = Gradients::zeros_like(&m);
        let mut prev = theta.abs();
        for _ in 0..100 {
            st.step(&mut m, &zero).unwrap();
            let now = m.head_b[0].abs();
            prop_assert!(now < prev, "|θ| went from {prev} to {now}");
            prev = now;
        }
    }

    #[test]
    fn doubling_lambda_doubles_decay_term(theta in -10.0..10.0f64, lambda in 1e-4..1.0f64) {
        let first_moment = |l: f64| {
            let mut m = one_scalar(theta);
            let cfg = AdamConfig { weight_decay: l, ..AdamConfig::default() };
            let mut st = AdamState::new(&m, cfg);
            let zero = Gradients::zeros_like(&m);
            st.step(&mut m, &zero).unwrap();
            let slot = ParamId::ALL.iter().position(|&id| id == ParamId::HeadBias).unwrap();
            st.first_moment[slot][0]
        };
        prop_assert_eq!(first_moment(2.0 * lambda), 2.0 * first_moment(lambda));
    }
}

// ---------------------------------------------------------------------------

fn labeled_points() -> impl Strategy<Value = (Array2<f64>, Vec<Class>)> {
    (4usize..40, 1usize..5).prop_flat_map(|(n, d)| {
        (prop::collection::vec(-5.0..5.0f64, n * d), prop::collection::vec(any::<bool>(), n)).prop_map(
            move |(xs, flags)| {
                let mut labels: Vec<Class> =
                    flags.iter().map(|&p| if p { Class::Positive } else { Class::Negative }).collect();
                labels[0] = Class::Negative;
                labels[1] = Class::Positive;
                (Array2::from_shape_vec((n, d), xs).unwrap(), labels)
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn separability_ignores_translation_and_scale(
        (points, labels) in labeled_points(),
        shift in -100.0..100.0f64,
        scale in 0.01..100.0f64,
    ) {
        let base = separability_score(points.view(), &labels).unwrap();
        let moved = points.mapv(|x| x * scale + shift);
        let after = separability_score(moved.view(), &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert_eq!(base, after);
    }
}

// ---------------------------------------------------------------------------

fn blobs(n: usize, seed: u64) -> EmbeddingSet {
    let mut rng = SeededRng::new(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut points = Array2::zeros((n, 5));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in points.outer_iter_mut().enumerate() {
        let class = Class::from_index(i % 2);
        let center = if class == Class::Positive { 10.0 } else { 0.0 };
        row.mapv_inplace(|_| center + noise.sample(&mut rng));
        labels.push(class);
    }
    EmbeddingSet::new(points, labels).unwrap()
}

#[test]
fn tsne_objective_settles_over_final_iterations() {
    let runs = 20;
    let mut settled = 0;
    for seed in 0..runs {
        let cfg = TsneConfig {
            seed,
            ..TsneConfig::default()
        };
        let proj = tsne_2d(&blobs(200, 1000 + seed), &cfg).unwrap();
        let tail: Vec<f64> = proj
            .kl_trace
            .iter()
            .filter(|(it, _)| *it >= cfg.iterations - 100)
            .map(|&(_, kl)| kl)
            .collect();
        assert_eq!(tail.len(), 100);
        if tail.windows(2).all(|w| w[1] <= w[0] + 1e-12) {
            settled += 1;
        }
        assert!(proj.separability().unwrap() >= 0.99);
    }
    assert!(settled * 100 >= runs * 95, "KL non-increasing in {settled} of {runs} runs");
}

#[test]
fn inverted_dropout_preserves_input_mean() {
    let m = LstmModel::zeros(6, 2);
    let x = Array1::from(vec![0.1, 0.5, 1.0, 2.0, -0.7, 3.0]);
    let payload = Payload::Vectors(x.clone().insert_axis(ndarray::Axis(0)));
    let mut rng = SeededRng::new(12);
    let draws = 100_000;
    let mut sum = Array1::<f64>::zeros(6);
    for _ in 0..draws {
        let trace = m.forward(&payload, Pass::Train { dropout_rate: 0.3, rng: &mut rng }).unwrap();
        sum += &trace.inputs[0];
    }
    let mean = sum / draws as f64;
    for (got, want) in mean.iter().zip(x.iter()) {
        assert!((got - want).abs() <= 0.01 * want.abs(), "{got} vs {want}");
    }
}
