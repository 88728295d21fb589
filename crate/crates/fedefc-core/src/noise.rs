//! Sparsity-controlled label noise: the true class-conditional transition
//! matrix, label corruption, and realized-noise statistics.
//!
//! Noise is applied once, globally, before partitioning, so every client sees
//! the same class-conditional pattern.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Column-stochastic tolerance for constructed matrices.
pub const COLUMN_SUM_TOL: f64 = 1e-9;

/// Noise level ρ (fraction of flipped labels) and sparsity ζ (fraction of
/// off-diagonal flip targets carrying zero mass).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    rho: f64,
    zeta: f64,
}

impl NoiseSpec {
    pub fn new(rho: f64, zeta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid("rho", format!("must be in [0, 1], got {rho}")));
        }
        if !(0.0..=1.0).contains(&zeta) {
            return Err(Error::invalid(
                "zeta",
                format!("must be in [0, 1], got {zeta}"),
            ));
        }
        Ok(NoiseSpec { rho, zeta })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Number of off-diagonal flip targets per source class:
    /// `max(1, round((1−ζ)·(|C|−1)))`. Meaningless for the identity cases
    /// (ρ=0 or ζ=1), which carry no off-diagonal mass at all.
    pub fn flip_targets(&self, num_classes: usize) -> usize {
        let raw = ((1.0 - self.zeta) * (num_classes as f64 - 1.0)).round() as usize;
        raw.max(1)
    }
}

/// Column-stochastic |C|×|C| matrix; entry `(i, j)` is p(observed = i | true = j).
/// Houses both the synthetic ground truth T and per-client estimates Q.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    num_classes: usize,
    /// Row-major: `entries[i * num_classes + j]`.
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn identity(num_classes: usize) -> Self {
        let mut entries = vec![0.0; num_classes * num_classes];
        for i in 0..num_classes {
            entries[i * num_classes + i] = 1.0;
        }
        TransitionMatrix {
            num_classes,
            entries,
        }
    }

    /// Validates shape, nonnegativity, and column sums (within
    /// [`COLUMN_SUM_TOL`]); rows are observed labels, columns true labels.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = rows.len();
        if c < 2 {
            return Err(Error::invalid("transition", "needs at least 2 classes"));
        }
        let mut entries = Vec::with_capacity(c * c);
        for row in &rows {
            if row.len() != c {
                return Err(Error::DimMismatch {
                    context: "TransitionMatrix::from_rows",
                    expected: c,
                    actual: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        if let Some(bad) = entries.iter().find(|&&e| !(e.is_finite() && e >= 0.0)) {
            return Err(Error::invalid(
                "transition",
                format!("entries must be nonnegative and finite, got {bad}"),
            ));
        }
        let m = TransitionMatrix {
            num_classes: c,
            entries,
        };
        for j in 0..c {
            let sum: f64 = (0..c).map(|i| m.entry(i, j)).sum();
            if (sum - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::invalid(
                    "transition",
                    format!("column {j} sums to {sum}, expected 1"),
                ));
            }
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// p(observed = i | true = j).
    pub fn entry(&self, observed: usize, true_class: usize) -> f64 {
        self.entries[observed * self.num_classes + true_class]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn column(&self, true_class: usize) -> Vec<f64> {
        (0..self.num_classes)
            .map(|i| self.entry(i, true_class))
            .collect()
    }

    /// Mixes clean-class probabilities into observed-label probabilities:
    /// `out[i] = Σ_j entry(i, j) · probs[j]`.
    pub fn apply(&self, probs: &[f64]) -> Result<Vec<f64>> {
        if probs.len() != self.num_classes {
            return Err(Error::DimMismatch {
                context: "TransitionMatrix::apply",
                expected: self.num_classes,
                actual: probs.len(),
            });
        }
        let c = self.num_classes;
        let mut out = Vec::with_capacity(c);
        for i in 0..c {
            let mut acc = 0.0;
            for (j, &p) in probs.iter().enumerate() {
                acc += self.entries[i * c + j] * p;
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Determinant via LU decomposition with partial pivoting; used only as a
    /// diagnostic guard (forward correction never inverts the matrix).
    pub fn determinant(&self) -> f64 {
        let c = self.num_classes;
        let mut a = self.entries.clone();
        let mut det = 1.0;
        for col in 0..c {
            let mut pivot = col;
            for row in (col + 1)..c {
                if a[row * c + col].abs() > a[pivot * c + col].abs() {
                    pivot = row;
                }
            }
            if a[pivot * c + col] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for k in 0..c {
                    a.swap(col * c + k, pivot * c + k);
                }
                det = -det;
            }
            let d = a[col * c + col];
            det *= d;
            for row in (col + 1)..c {
                let factor = a[row * c + col] / d;
                for k in col..c {
                    a[row * c + k] -= factor * a[col * c + k];
                }
            }
        }
        det
    }

    /// Builder for estimation code: assembles from per-column vectors
    /// (`columns[j][i]` = p(observed = i | true = j)).
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let c = columns.len();
        let mut rows = vec![vec![0.0; c]; c];
        for (j, col) in columns.iter().enumerate() {
            if col.len() != c {
                return Err(Error::DimMismatch {
                    context: "TransitionMatrix::from_columns",
                    expected: c,
                    actual: col.len(),
                });
            }
            for (i, &v) in col.iter().enumerate() {
                rows[i][j] = v;
            }
        }
        TransitionMatrix::from_rows(rows)
    }
}

/// Builds the ground-truth transition matrix: diagonal 1−ρ, mass ρ split
/// equally over `m = max(1, round((1−ζ)(|C|−1)))` uniformly chosen
/// off-diagonal targets per column; ρ=0 or ζ=1 degenerate to the identity.
pub fn build_true_transition(
    spec: &NoiseSpec,
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TransitionMatrix> {
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "must be ≥ 2"));
    }
    if spec.rho() == 0.0 || spec.zeta() == 1.0 {
        return Ok(TransitionMatrix::identity(num_classes));
    }
    let m = spec.flip_targets(num_classes);
    let mass = spec.rho() / m as f64;
    let mut columns = Vec::with_capacity(num_classes);
    for j in 0..num_classes {
        let mut col = vec![0.0; num_classes];
        col[j] = 1.0 - spec.rho();
        // Choose m of the |C|−1 off-diagonal rows; index k skips the diagonal.
        let picks = rand::seq::index::sample(rng, num_classes - 1, m);
        for k in picks.iter() {
            let i = if k >= j { k + 1 } else { k };
            col[i] = mass;
        }
        columns.push(col);
    }
    TransitionMatrix::from_columns(columns)
}

/// Draws each observed label from column `clean_label` of `t`, in sample
/// order, one uniform variate per sample. Clean labels are preserved.
pub fn apply_noise(dataset: &mut Dataset, t: &TransitionMatrix, rng: &mut ChaCha8Rng) -> Result<()> {
    if t.num_classes() != dataset.num_classes() {
        return Err(Error::DimMismatch {
            context: "apply_noise transition",
            expected: dataset.num_classes(),
            actual: t.num_classes(),
        });
    }
    let n = dataset.len();
    for idx in 0..n {
        let clean = dataset.clean_label(idx);
        let u: f64 = rng.random();
        dataset.set_observed_label(idx, sample_column(t, clean, u));
    }
    Ok(())
}

/// Inverse-CDF walk down column `true_class`; the final row absorbs any
/// floating-point slack so a u close to 1 can never fall off the end.
fn sample_column(t: &TransitionMatrix, true_class: usize, u: f64) -> usize {
    let c = t.num_classes();
    let mut acc = 0.0;
    for i in 0..c - 1 {
        acc += t.entry(i, true_class);
        if u < acc {
            return i;
        }
    }
    c - 1
}

/// Realized corruption statistics: flip rate and the empirical joint
/// distribution `joint[i][j] = count(observed = i, clean = j) / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStats {
    pub flip_rate: f64,
    pub joint: Vec<Vec<f64>>,
}

impl NoiseStats {
    /// Joint renormalized per clean class — the empirical estimate of the
    /// transition matrix. Columns with no samples stay all zero.
    pub fn column_normalized(&self) -> Vec<Vec<f64>> {
        let c = self.joint.len();
        let mut out = vec![vec![0.0; c]; c];
        for j in 0..c {
            let mass: f64 = (0..c).map(|i| self.joint[i][j]).sum();
            if mass > 0.0 {
                for i in 0..c {
                    out[i][j] = self.joint[i][j] / mass;
                }
            }
        }
        out
    }
}

pub fn realized_stats(clean: &[usize], observed: &[usize], num_classes: usize) -> Result<NoiseStats> {
    if clean.is_empty() {
        return Err(Error::EmptyInput("realized_stats"));
    }
    if clean.len() != observed.len() {
        return Err(Error::DimMismatch {
            context: "realized_stats labels",
            expected: clean.len(),
            actual: observed.len(),
        });
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    let mut flips = 0u64;
    for (&y, &obs) in clean.iter().zip(observed) {
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes,
            });
        }
        if obs >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: obs,
                num_classes,
            });
        }
        counts[obs][y] += 1;
        if obs != y {
            flips += 1;
        }
    }
    let n = clean.len() as f64;
    let joint = counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / n).collect())
        .collect();
    Ok(NoiseStats {
        flip_rate: flips as f64 / n,
        joint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_mixture;
    use crate::rng::{SeedPlan, Stream};

    fn check_column_stochastic(t: &TransitionMatrix) {
        let c = t.num_classes();
        for j in 0..c {
            let sum: f64 = (0..c).map(|i| t.entry(i, j)).sum();
            assert!(
                (sum - 1.0).abs() <= COLUMN_SUM_TOL,
                "column {j} sums to {sum}"
            );
            for i in 0..c {
                assert!(t.entry(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn spec_validates_ranges() {
        assert!(NoiseSpec::new(-0.1, 0.0).is_err());
        assert!(NoiseSpec::new(1.1, 0.0).is_err());
        assert!(NoiseSpec::new(0.2, 1.5).is_err());
        assert!(NoiseSpec::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn symmetric_noise_hand_values() {
        // ρ=0.2, ζ=0, |C|=3: m=2 targets, every column (0.8 diag, 0.1, 0.1).
        let spec = NoiseSpec::new(0.2, 0.0).unwrap();
        let mut rng = SeedPlan::new(0).stream(Stream::Transition);
        let t = build_true_transition(&spec, 3, &mut rng).unwrap();
        for j in 0..3 {
            assert!((t.entry(j, j) - 0.8).abs() < 1e-15);
            for i in 0..3 {
                if i != j {
                    assert!((t.entry(i, j) - 0.1).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn degenerate_specs_build_identity() {
        let mut rng = SeedPlan::new(1).stream(Stream::Transition);
        let zeta_one = NoiseSpec::new(0.7, 1.0).unwrap();
        assert_eq!(
            build_true_transition(&zeta_one, 4, &mut rng).unwrap(),
            TransitionMatrix::identity(4)
        );
        let rho_zero = NoiseSpec::new(0.0, 0.3).unwrap();
        assert_eq!(
            build_true_transition(&rho_zero, 4, &mut rng).unwrap(),
            TransitionMatrix::identity(4)
        );
    }

    #[test]
    fn flip_target_count_formula() {
        let s = |zeta| NoiseSpec::new(0.5, zeta).unwrap();
        assert_eq!(s(0.0).flip_targets(10), 9);
        assert_eq!(s(0.8).flip_targets(10), 2); // round(0.2·9) = 2
        assert_eq!(s(0.9).flip_targets(10), 1); // round(0.1·9) = 1
        assert_eq!(s(0.99).flip_targets(10), 1); // floored at 1
        assert_eq!(s(0.0).flip_targets(2), 1);
    }

    #[test]
    fn zero_pattern_matches_flip_targets() {
        for &(zeta, c) in &[(0.0, 3), (0.5, 10), (0.8, 10), (0.2, 2)] {
            let spec = NoiseSpec::new(0.4, zeta).unwrap();
            let mut rng = SeedPlan::new(5).stream(Stream::Transition);
            let t = build_true_transition(&spec, c, &mut rng).unwrap();
            let m = spec.flip_targets(c);
            for j in 0..c {
                let nonzero_off_diag = (0..c).filter(|&i| i != j && t.entry(i, j) > 0.0).count();
                assert_eq!(nonzero_off_diag, m, "zeta={zeta} c={c} column {j}");
                let expected_mass = spec.rho() / m as f64;
                for i in 0..c {
                    if i != j && t.entry(i, j) > 0.0 {
                        assert!((t.entry(i, j) - expected_mass).abs() < 1e-15);
                    }
                }
            }
            check_column_stochastic(&t);
        }
    }

    #[test]
    fn column_stochastic_across_grid() {
        let mut rho = 0.0;
        while rho <= 0.8 + 1e-9 {
            for zeta in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
                for c in [2usize, 3, 10] {
                    let spec = NoiseSpec::new(rho, zeta).unwrap();
                    let mut rng = SeedPlan::new(9).stream(Stream::Transition);
                    let t = build_true_transition(&spec, c, &mut rng).unwrap();
                    check_column_stochastic(&t);
                }
            }
            rho += 0.1;
        }
    }

    #[test]
    fn identity_noise_preserves_labels() {
        let mut data = gen_gaussian_mixture(3, 2, 50, 4.0, &mut SeedPlan::new(2).stream(Stream::TrainData)).unwrap();
        let t = TransitionMatrix::identity(3);
        apply_noise(&mut data, &t, &mut SeedPlan::new(2).stream(Stream::Noise)).unwrap();
        for i in 0..data.len() {
            assert_eq!(data.observed_label(i), data.clean_label(i));
        }
    }

    #[test]
    fn apply_noise_is_deterministic() {
        let spec = NoiseSpec::new(0.3, 0.0).unwrap();
        let plan = SeedPlan::new(3);
        let t = build_true_transition(&spec, 3, &mut plan.stream(Stream::Transition)).unwrap();
        let make = || {
            let mut d =
                gen_gaussian_mixture(3, 2, 100, 4.0, &mut plan.stream(Stream::TrainData)).unwrap();
            apply_noise(&mut d, &t, &mut plan.stream(Stream::Noise)).unwrap();
            d.observed_labels().to_vec()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn realized_flip_rate_concentrates() {
        let spec = NoiseSpec::new(0.3, 0.0).unwrap();
        let plan = SeedPlan::new(4);
        let t = build_true_transition(&spec, 3, &mut plan.stream(Stream::Transition)).unwrap();
        let mut d = gen_gaussian_mixture(3, 2, 10_000, 4.0, &mut plan.stream(Stream::TrainData)).unwrap();
        apply_noise(&mut d, &t, &mut plan.stream(Stream::Noise)).unwrap();
        let stats = realized_stats(d.clean_labels(), d.observed_labels(), 3).unwrap();
        assert!(
            (stats.flip_rate - 0.3).abs() < 0.015,
            "flip rate {}",
            stats.flip_rate
        );
    }

    #[test]
    fn realized_stats_hand_cases() {
        let stats = realized_stats(&[0, 1, 0, 1], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(stats.flip_rate, 0.0);
        let flipped = realized_stats(&[0, 1], &[1, 0], 2).unwrap();
        assert_eq!(flipped.flip_rate, 1.0);
        assert_eq!(flipped.joint[0][0], 0.0);
        assert_eq!(flipped.joint[1][1], 0.0);
        assert!((flipped.joint[1][0] - 0.5).abs() < 1e-15);
        assert!(matches!(
            realized_stats(&[], &[], 2),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn determinant_of_structured_matrices() {
        assert!((TransitionMatrix::identity(4).determinant() - 1.0).abs() < 1e-12);
        let swap = TransitionMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((swap.determinant() + 1.0).abs() < 1e-12);
        let t = TransitionMatrix::from_rows(vec![vec![0.8, 0.1], vec![0.2, 0.9]]).unwrap();
        assert!((t.determinant() - 0.7).abs() < 1e-12);
        let singular =
            TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(singular.determinant().abs() < 1e-12);
    }

    #[test]
    fn from_rows_rejects_bad_columns() {
        assert!(TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.9]]).is_err());
        assert!(TransitionMatrix::from_rows(vec![vec![1.2, 0.0], vec![-0.2, 1.0]]).is_err());
    }

    #[test]
    fn apply_mixes_probabilities() {
        let t = TransitionMatrix::from_rows(vec![vec![0.8, 0.1], vec![0.2, 0.9]]).unwrap();
        let out = t.apply(&[0.5, 0.5]).unwrap();
        assert!((out[0] - 0.45).abs() < 1e-15);
        assert!((out[1] - 0.55).abs() < 1e-15);
    }
}
