//! Per-client noise-transition estimation: confident-learning thresholds and
//! count matrix, the column-normalized transition estimate (standard and
//! prior-weighted), the percentile-anchor baseline, and the cosine-similarity
//! diagnostic against the true matrix.

use crate::data::ClientView;
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::noise::TransitionMatrix;

/// Anything that yields class probabilities for a sample — the trained global
/// model in production, scripted stubs in tests.
pub trait ProbModel: Sync {
    fn class_probs(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn num_classes(&self) -> usize;
}

impl ProbModel for ModelParams {
    fn class_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }

    fn num_classes(&self) -> usize {
        self.spec().num_classes
    }
}

/// Per-class confidence thresholds τ_j; `None` for classes with no observed
/// examples on the client (their threshold is undefined and nothing can
/// qualify for them).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    tau: Vec<Option<f64>>,
}

impl ThresholdVector {
    pub fn get(&self, class: usize) -> Option<f64> {
        self.tau[class]
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

/// |C|×|C| counts of confidently attributed examples; entry `(i, j)` counts
/// examples observed as i and attributed to true class j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    num_classes: usize,
    /// Row-major: `counts[i * num_classes + j]`.
    counts: Vec<u64>,
}

impl CountMatrix {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn entry(&self, observed: usize, true_class: usize) -> u64 {
        self.counts[observed * self.num_classes + true_class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn column_sum(&self, true_class: usize) -> u64 {
        (0..self.num_classes)
            .map(|i| self.entry(i, true_class))
            .sum()
    }
}

/// τ_j = mean predicted probability of class j over the client's examples
/// observed as j.
pub fn class_thresholds<M: ProbModel>(model: &M, data: &ClientView) -> Result<ThresholdVector> {
    if data.is_empty() {
        return Err(Error::EmptyInput("class_thresholds"));
    }
    let c = model.num_classes();
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for local in 0..data.len() {
        let label = data.observed_label(local);
        if label >= c {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: c,
            });
        }
        let probs = probs_checked(model, data.features(local))?;
        sums[label] += probs[label];
        counts[label] += 1;
    }
    let tau = sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| if n > 0 { Some(s / n as f64) } else { None })
        .collect();
    Ok(ThresholdVector { tau })
}

/// Per-example cell attribution: `Some((observed, attributed))` when the
/// example qualified for at least one class, `None` when it stays uncounted.
/// Qualification: p(j|x) ≥ τ_j over defined thresholds; multi-qualification
/// resolved by maximal predicted probability (first such class on exact ties).
pub fn count_assignments<M: ProbModel>(
    model: &M,
    data: &ClientView,
    thresholds: &ThresholdVector,
) -> Result<Vec<Option<(usize, usize)>>> {
    let c = model.num_classes();
    if thresholds.len() != c {
        return Err(Error::DimMismatch {
            context: "count_assignments thresholds",
            expected: c,
            actual: thresholds.len(),
        });
    }
    let mut assignments = Vec::with_capacity(data.len());
    for local in 0..data.len() {
        let observed = data.observed_label(local);
        let probs = probs_checked(model, data.features(local))?;
        let mut best: Option<usize> = None;
        for (j, &p) in probs.iter().enumerate() {
            let Some(tau_j) = thresholds.get(j) else {
                continue;
            };
            if p >= tau_j && best.is_none_or(|b| p > probs[b]) {
                best = Some(j);
            }
        }
        assignments.push(best.map(|j| (observed, j)));
    }
    Ok(assignments)
}

/// Aggregates per-example assignments into the count matrix.
pub fn count_matrix_from_assignments(
    assignments: &[Option<(usize, usize)>],
    num_classes: usize,
) -> CountMatrix {
    let mut counts = vec![0u64; num_classes * num_classes];
    for &(i, j) in assignments.iter().flatten() {
        debug_assert!(i < num_classes && j < num_classes);
        counts[i * num_classes + j] += 1;
    }
    CountMatrix {
        num_classes,
        counts,
    }
}

/// Thresholds + attribution in one call.
pub fn count_matrix<M: ProbModel>(
    model: &M,
    data: &ClientView,
    thresholds: &ThresholdVector,
) -> Result<CountMatrix> {
    let assignments = count_assignments(model, data, thresholds)?;
    Ok(count_matrix_from_assignments(&assignments, model.num_classes()))
}

/// Column-normalizes counts into p(observed = i | true = j); an all-zero
/// column falls back to the identity column e_j. A completely empty count
/// matrix is an error — the caller downgrades to uncorrected loss.
pub fn transition_from_counts(counts: &CountMatrix) -> Result<TransitionMatrix> {
    if counts.total() == 0 {
        return Err(Error::EmptyCountMatrix);
    }
    let c = counts.num_classes();
    let mut columns = Vec::with_capacity(c);
    for j in 0..c {
        columns.push(normalized_column(c, j, |i| counts.entry(i, j) as f64));
    }
    TransitionMatrix::from_columns(columns)
}

/// Prior-weighted variant: each row i is scaled by the client's observed-label
/// frequency p_i before column normalization, so rows of classes absent from
/// the client contribute nothing. With uniform priors the weights cancel and
/// the result equals [`transition_from_counts`].
pub fn weighted_transition(counts: &CountMatrix, data: &ClientView) -> Result<TransitionMatrix> {
    if counts.total() == 0 {
        return Err(Error::EmptyCountMatrix);
    }
    let c = counts.num_classes();
    if data.is_empty() {
        return Err(Error::EmptyInput("weighted_transition"));
    }
    let mut prior = vec![0.0; c];
    for local in 0..data.len() {
        let label = data.observed_label(local);
        if label >= c {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: c,
            });
        }
        prior[label] += 1.0;
    }
    let n = data.len() as f64;
    for p in &mut prior {
        *p /= n;
    }
    let mut columns = Vec::with_capacity(c);
    for j in 0..c {
        columns.push(normalized_column(c, j, |i| {
            prior[i] * counts.entry(i, j) as f64
        }));
    }
    TransitionMatrix::from_columns(columns)
}

/// Normalizes one column of nonnegative weights to sum 1, falling back to the
/// identity column when all weights vanish.
fn normalized_column(c: usize, j: usize, weight: impl Fn(usize) -> f64) -> Vec<f64> {
    let total: f64 = (0..c).map(&weight).sum();
    if total > 0.0 {
        (0..c).map(|i| weight(i) / total).collect()
    } else {
        let mut col = vec![0.0; c];
        col[j] = 1.0;
        col
    }
}

/// Percentile-anchor baseline: column j is the full probability vector of the
/// example whose p(j|x) sits at the given percentile of the client's data.
/// The anchor is the order statistic at `clamp(ceil(percentile/100·n) − 1, 0, n−1)`
/// under ascending (probability, sample index) order.
pub fn percentile_transition<M: ProbModel>(
    model: &M,
    data: &ClientView,
    percentile: f64,
) -> Result<TransitionMatrix> {
    if data.is_empty() {
        return Err(Error::EmptyInput("percentile_transition"));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::invalid(
            "percentile",
            format!("must be in (0, 100], got {percentile}"),
        ));
    }
    let c = model.num_classes();
    let n = data.len();
    let all_probs: Vec<Vec<f64>> = (0..n)
        .map(|local| probs_checked(model, data.features(local)))
        .collect::<Result<_>>()?;
    let rank = anchor_rank(percentile, n);
    let mut columns = Vec::with_capacity(c);
    for j in 0..c {
        let mut keyed: Vec<(f64, usize)> =
            all_probs.iter().enumerate().map(|(i, p)| (p[j], i)).collect();
        let (_, anchor, _) = keyed.select_nth_unstable_by(rank, |a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        });
        columns.push(all_probs[anchor.1].clone());
    }
    TransitionMatrix::from_columns(columns)
}

/// Rank of the percentile order statistic among `n` ascending values.
pub(crate) fn anchor_rank(percentile: f64, n: usize) -> usize {
    let raw = (percentile / 100.0 * n as f64).ceil() as isize - 1;
    raw.clamp(0, n as isize - 1) as usize
}

/// Flattened-matrix cosine similarity between an estimate and the truth.
pub fn cosine_similarity(a: &TransitionMatrix, b: &TransitionMatrix) -> Result<f64> {
    if a.num_classes() != b.num_classes() {
        return Err(Error::DimMismatch {
            context: "cosine_similarity",
            expected: a.num_classes(),
            actual: b.num_classes(),
        });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (&x, &y) in a.entries().iter().zip(b.entries()) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

fn probs_checked<M: ProbModel>(model: &M, x: &[f64]) -> Result<Vec<f64>> {
    let probs = model.class_probs(x)?;
    if probs.len() != model.num_classes() {
        return Err(Error::DimMismatch {
            context: "ProbModel::class_probs",
            expected: model.num_classes(),
            actual: probs.len(),
        });
    }
    Ok(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    /// Stub model: feature[0] is an index into a fixed probability table.
    struct TableModel {
        table: Vec<Vec<f64>>,
    }

    impl ProbModel for TableModel {
        fn class_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(self.table[x[0] as usize].clone())
        }

        fn num_classes(&self) -> usize {
            self.table[0].len()
        }
    }

    /// Dataset whose i-th sample has feature [i] and the given observed label.
    fn indexed_dataset(labels: &[usize], num_classes: usize) -> Dataset {
        let features: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
        let mut d = Dataset::new(features, vec![0; labels.len()], 1, num_classes).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            d.set_observed_label(i, l);
        }
        d
    }

    fn full_view(d: &Dataset) -> Vec<usize> {
        (0..d.len()).collect()
    }

    #[test]
    fn thresholds_match_hand_example() {
        // Two samples labeled 0 with p=(0.9,0.1),(0.8,0.2); one labeled 1 with
        // p=(0.7,0.3) → τ = (0.85, 0.3).
        let model = TableModel {
            table: vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.7, 0.3]],
        };
        let d = indexed_dataset(&[0, 0, 1], 2);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        let tau = class_thresholds(&model, &view).unwrap();
        assert!((tau.get(0).unwrap() - 0.85).abs() < 1e-15);
        assert!((tau.get(1).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn count_matrix_hand_example() {
        // Continuing the threshold example: (0.9,0.1) lands in cell (0,0),
        // (0.8,0.2) qualifies nowhere, (0.7,0.3) lands in cell (1,1).
        let model = TableModel {
            table: vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.7, 0.3]],
        };
        let d = indexed_dataset(&[0, 0, 1], 2);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        let tau = class_thresholds(&model, &view).unwrap();
        let assignments = count_assignments(&model, &view, &tau).unwrap();
        assert_eq!(assignments, vec![Some((0, 0)), None, Some((1, 1))]);
        let counts = count_matrix_from_assignments(&assignments, 2);
        assert_eq!(counts.entry(0, 0), 1);
        assert_eq!(counts.entry(1, 1), 1);
        assert_eq!(counts.total(), 2);
    }

    #[test]
    fn uniform_stub_thresholds_are_uniform() {
        let model = TableModel {
            table: vec![vec![0.25; 4]; 6],
        };
        let d = indexed_dataset(&[0, 1, 2, 2, 3, 3], 4);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        let tau = class_thresholds(&model, &view).unwrap();
        for j in 0..4 {
            assert!((tau.get(j).unwrap() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn absent_class_threshold_is_undefined() {
        let model = TableModel {
            table: vec![vec![0.1, 0.0, 0.9]],
        };
        let d = indexed_dataset(&[2], 3);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        let tau = class_thresholds(&model, &view).unwrap();
        assert_eq!(tau.get(0), None);
        assert_eq!(tau.get(1), None);
        assert!((tau.get(2).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn one_hot_confident_clean_stub_counts_diagonal() {
        let mut table = Vec::new();
        let labels: Vec<usize> = vec![0, 1, 2, 0, 1, 2];
        for &l in &labels {
            let mut row = vec![0.0; 3];
            row[l] = 1.0;
            table.push(row);
        }
        let model = TableModel { table };
        let d = indexed_dataset(&labels, 3);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        let tau = class_thresholds(&model, &view).unwrap();
        let counts = count_matrix(&model, &view, &tau).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 2 } else { 0 };
                assert_eq!(counts.entry(i, j), expected);
            }
        }
    }

    /// Brute-force recomputation, structured differently from production:
    /// scans all (sample, class) pairs per class rather than per sample.
    fn brute_force(
        table: &[Vec<f64>],
        labels: &[usize],
        c: usize,
    ) -> (Vec<Option<f64>>, Vec<Vec<u64>>) {
        let n = labels.len();
        let mut tau: Vec<Option<f64>> = vec![None; c];
        for j in 0..c {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == j).collect();
            if !members.is_empty() {
                let sum: f64 = members.iter().map(|&i| table[i][j]).sum();
                tau[j] = Some(sum / members.len() as f64);
            }
        }
        let mut counts = vec![vec![0u64; c]; c];
        for i in 0..n {
            let qualifying: Vec<usize> = (0..c)
                .filter(|&j| tau[j].is_some_and(|t| table[i][j] >= t))
                .collect();
            if qualifying.is_empty() {
                continue;
            }
            let mut best = qualifying[0];
            for &j in &qualifying[1..] {
                if table[i][j] > table[i][best] {
                    best = j;
                }
            }
            counts[labels[i]][best] += 1;
        }
        (tau, counts)
    }

    #[test]
    fn randomized_cross_check_against_brute_force() {
        use rand::Rng;
        let mut rng = crate::rng::SeedPlan::new(17).stream(crate::rng::Stream::TrainData);
        for c in [2usize, 3, 5] {
            for _ in 0..20 {
                let n = rng.random_range(1..40);
                let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
                let table: Vec<Vec<f64>> = (0..n)
                    .map(|_| {
                        let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
                        let s: f64 = raw.iter().sum();
                        raw.into_iter().map(|v| v / s).collect()
                    })
                    .collect();
                let (expected_tau, expected_counts) = brute_force(&table, &labels, c);
                let model = TableModel { table };
                let d = indexed_dataset(&labels, c);
                let idx = full_view(&d);
                let view = ClientView::new(&d, &idx).unwrap();
                let tau = class_thresholds(&model, &view).unwrap();
                for j in 0..c {
                    match (tau.get(j), expected_tau[j]) {
                        (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                        (None, None) => {}
                        other => panic!("threshold mismatch at class {j}: {other:?}"),
                    }
                }
                let counts = count_matrix(&model, &view, &tau).unwrap();
                for i in 0..c {
                    for j in 0..c {
                        assert_eq!(counts.entry(i, j), expected_counts[i][j]);
                    }
                }
            }
        }
    }

    #[test]
    fn each_counted_example_appears_exactly_once() {
        use rand::Rng;
        let mut rng = crate::rng::SeedPlan::new(23).stream(crate::rng::Stream::TrainData);
        let c = 4;
        let n = 60;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let table: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let model = TableModel { table };
        let d = indexed_dataset(&labels, c);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        let tau = class_thresholds(&model, &view).unwrap();
        let assignments = count_assignments(&model, &view, &tau).unwrap();
        assert_eq!(assignments.len(), n);
        let counts = count_matrix_from_assignments(&assignments, c);
        let counted = assignments.iter().flatten().count() as u64;
        assert_eq!(counts.total(), counted);
        assert!(counts.total() <= n as u64);
    }

    #[test]
    fn transition_normalizes_columns() {
        let counts = CountMatrix {
            num_classes: 2,
            counts: vec![8, 1, 2, 9],
        };
        let q = transition_from_counts(&counts).unwrap();
        assert!((q.entry(0, 0) - 0.8).abs() < 1e-15);
        assert!((q.entry(1, 0) - 0.2).abs() < 1e-15);
        assert!((q.entry(0, 1) - 0.1).abs() < 1e-15);
        assert!((q.entry(1, 1) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn diagonal_counts_give_identity() {
        let counts = CountMatrix {
            num_classes: 3,
            counts: vec![5, 0, 0, 0, 2, 0, 0, 0, 9],
        };
        let q = transition_from_counts(&counts).unwrap();
        assert_eq!(q, TransitionMatrix::identity(3));
    }

    #[test]
    fn empty_column_falls_back_to_identity_column() {
        let counts = CountMatrix {
            num_classes: 3,
            counts: vec![4, 0, 1, 1, 0, 0, 0, 0, 3],
        };
        let q = transition_from_counts(&counts).unwrap();
        assert_eq!(q.column(1), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_count_matrix_is_an_error() {
        let counts = CountMatrix {
            num_classes: 2,
            counts: vec![0; 4],
        };
        assert!(matches!(
            transition_from_counts(&counts),
            Err(Error::EmptyCountMatrix)
        ));
    }

    #[test]
    fn weighted_transition_with_uniform_prior_matches_standard() {
        let counts = CountMatrix {
            num_classes: 2,
            counts: vec![8, 1, 2, 9],
        };
        // Balanced observed labels → uniform prior (0.5, 0.5).
        let d = indexed_dataset(&[0, 0, 1, 1], 2);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        let weighted = weighted_transition(&counts, &view).unwrap();
        let standard = transition_from_counts(&counts).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((weighted.entry(i, j) - standard.entry(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weighted_transition_zeroes_absent_class_rows() {
        let counts = CountMatrix {
            num_classes: 2,
            counts: vec![8, 1, 2, 9],
        };
        // No observed label 1 on the client → row 1 contributes nothing.
        let d = indexed_dataset(&[0, 0, 0], 2);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        let q = weighted_transition(&counts, &view).unwrap();
        assert!((q.entry(0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(q.entry(1, 0), 0.0);
        assert!((q.entry(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(q.entry(1, 1), 0.0);
    }

    #[test]
    fn weighted_transition_skews_toward_frequent_rows() {
        // Prior (0.75, 0.25): column 0 reweights 8:2 to (0.75·8):(0.25·2) = 24:2.
        let counts = CountMatrix {
            num_classes: 2,
            counts: vec![8, 1, 2, 9],
        };
        let d = indexed_dataset(&[0, 0, 0, 1], 2);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        let q = weighted_transition(&counts, &view).unwrap();
        assert!((q.entry(0, 0) - 24.0 / 26.0).abs() < 1e-12);
        assert!((q.entry(1, 0) - 2.0 / 26.0).abs() < 1e-12);
    }

    /// Sort-based oracle for the percentile anchor.
    fn anchor_by_sort(values: &[f64], percentile: f64) -> usize {
        let mut keyed: Vec<(f64, usize)> =
            values.iter().cloned().zip(0..values.len()).collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        keyed[anchor_rank(percentile, values.len())].1
    }

    #[test]
    fn percentile_anchor_matches_sort_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::SeedPlan::new(29).stream(crate::rng::Stream::TrainData);
        for _ in 0..30 {
            let n = rng.random_range(1..50);
            let c = 3;
            let table: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-6).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|v| v / s).collect()
                })
                .collect();
            let percentile = rng.random_range(1.0..=100.0);
            let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
            let d = indexed_dataset(&labels, c);
            let idx = full_view(&d);
            let view = ClientView::new(&d, &idx).unwrap();
            let model = TableModel {
                table: table.clone(),
            };
            let q = percentile_transition(&model, &view, percentile).unwrap();
            for j in 0..c {
                let per_class: Vec<f64> = table.iter().map(|row| row[j]).collect();
                let anchor = anchor_by_sort(&per_class, percentile);
                for i in 0..c {
                    assert!((q.entry(i, j) - table[anchor][i]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn percentile_100_with_one_hot_stub_gives_identity() {
        let table = vec![
            vec![1.0 - 2e-12, 1e-12, 1e-12],
            vec![1e-12, 1.0 - 2e-12, 1e-12],
            vec![1e-12, 1e-12, 1.0 - 2e-12],
        ];
        let model = TableModel { table };
        let d = indexed_dataset(&[0, 1, 2], 3);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        let q = percentile_transition(&model, &view, 100.0).unwrap();
        for j in 0..3 {
            assert!(q.entry(j, j) > 0.999);
        }
    }

    #[test]
    fn percentile_rank_boundaries() {
        assert_eq!(anchor_rank(100.0, 5), 4);
        assert_eq!(anchor_rank(50.0, 5), 2);
        assert_eq!(anchor_rank(1.0, 5), 0);
        assert_eq!(anchor_rank(100.0, 1), 0);
    }

    #[test]
    fn percentile_rejects_bad_inputs() {
        let model = TableModel {
            table: vec![vec![0.5, 0.5]],
        };
        let d = indexed_dataset(&[0], 2);
        let idx = full_view(&d);
        let view = ClientView::new(&d, &idx).unwrap();
        assert!(percentile_transition(&model, &view, 0.0).is_err());
        assert!(percentile_transition(&model, &view, 100.1).is_err());
        let empty: Vec<usize> = Vec::new();
        let empty_view = ClientView::new(&d, &empty).unwrap();
        assert!(matches!(
            percentile_transition(&model, &empty_view, 97.0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn cosine_similarity_reference_values() {
        let id = TransitionMatrix::identity(2);
        assert!((cosine_similarity(&id, &id).unwrap() - 1.0).abs() < 1e-15);
        let swap = TransitionMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(cosine_similarity(&id, &swap).unwrap().abs() < 1e-15);
        let flat = TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let expected = 1.0 / 2.0f64.sqrt();
        assert!((cosine_similarity(&id, &flat).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cosine_similarity_matches_independent_recomputation() {
        use rand::Rng;
        let mut rng = crate::rng::SeedPlan::new(31).stream(crate::rng::Stream::TrainData);
        for _ in 0..20 {
            let c = 3;
            let random_stochastic = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut cols = Vec::new();
                for _ in 0..c {
                    let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-6).collect();
                    let s: f64 = raw.iter().sum();
                    cols.push(raw.into_iter().map(|v| v / s).collect::<Vec<_>>());
                }
                TransitionMatrix::from_columns(cols).unwrap()
            };
            let a = random_stochastic(&mut rng);
            let b = random_stochastic(&mut rng);
            // Oracle: explicit loops over (i, j) indices.
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for i in 0..c {
                for j in 0..c {
                    dot += a.entry(i, j) * b.entry(i, j);
                    na += a.entry(i, j).powi(2);
                    nb += b.entry(i, j).powi(2);
                }
            }
            let expected = dot / (na.sqrt() * nb.sqrt());
            let got = cosine_similarity(&a, &b).unwrap();
            assert!((got - expected).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn estimation_converges_to_truth_with_posterior_model() {
        // When the stub equals the true class posterior and labels follow T,
        // the count-matrix estimate approaches T (checked at n=5000, tol 0.05).
        use crate::noise::{apply_noise, build_true_transition, NoiseSpec};
        use crate::rng::{SeedPlan, Stream};
        let plan = SeedPlan::new(37);
        let c = 3;
        let spec = NoiseSpec::new(0.2, 0.0).unwrap();
        let t = build_true_transition(&spec, c, &mut plan.stream(Stream::Transition)).unwrap();

        // Well-separated mixture → posterior is nearly one-hot at the true
        // class; use the analytic posterior as the stub model.
        let mut data =
            crate::data::gen_gaussian_mixture(c, 2, 5000 / c + 1, 5.0, &mut plan.stream(Stream::TrainData))
                .unwrap();
        apply_noise(&mut data, &t, &mut plan.stream(Stream::Noise)).unwrap();

        struct PosteriorModel {
            centers: Vec<[f64; 2]>,
        }
        impl ProbModel for PosteriorModel {
            fn class_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
                let logits: Vec<f64> = self
                    .centers
                    .iter()
                    .map(|c| {
                        let dx = x[0] - c[0];
                        let dy = x[1] - c[1];
                        -0.5 * (dx * dx + dy * dy)
                    })
                    .collect();
                Ok(crate::nn::softmax(&logits))
            }
            fn num_classes(&self) -> usize {
                self.centers.len()
            }
        }
        let centers: Vec<[f64; 2]> = (0..c)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
                [5.0 * angle.cos(), 5.0 * angle.sin()]
            })
            .collect();
        let model = PosteriorModel { centers };
        let idx: Vec<usize> = (0..data.len()).collect();
        let view = ClientView::new(&data, &idx).unwrap();
        let tau = class_thresholds(&model, &view).unwrap();
        let counts = count_matrix(&model, &view, &tau).unwrap();
        let q = transition_from_counts(&counts).unwrap();
        for i in 0..c {
            for j in 0..c {
                assert!(
                    (q.entry(i, j) - t.entry(i, j)).abs() < 0.05,
                    "entry ({i},{j}): estimated {} vs true {}",
                    q.entry(i, j),
                    t.entry(i, j)
                );
            }
        }
        assert!(cosine_similarity(&q, &t).unwrap() > 0.99);
    }
}
