//! Datasets and their allocation across clients.
//!
//! A [`Dataset`] always carries both label vectors: the clean ground truth and
//! the observed (possibly corrupted) view the training path is allowed to see.
//! Partitioning follows the non-IID scheme: per-class Bernoulli participation
//! indicators, then Dirichlet share draws among the participating clients.

mod idx;

pub use idx::load_idx;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Feature matrix plus clean and observed label vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    clean: Vec<usize>,
    observed: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    /// Observed labels start as a copy of the clean ones; corruption happens
    /// through [`crate::noise::apply_noise`].
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("Dataset::new"));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "must be ≥ 1"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "must be ≥ 2"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimMismatch {
                context: "Dataset features",
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        if let Some(&bad) = features.iter().find(|f| !f.is_finite()) {
            return Err(Error::invalid(
                "features",
                format!("non-finite feature value {bad}"),
            ));
        }
        Ok(Dataset {
            observed: labels.clone(),
            clean: labels,
            features,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, idx: usize) -> &[f64] {
        &self.features[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn clean_label(&self, idx: usize) -> usize {
        self.clean[idx]
    }

    pub fn observed_label(&self, idx: usize) -> usize {
        self.observed[idx]
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean
    }

    pub fn observed_labels(&self) -> &[usize] {
        &self.observed
    }

    pub(crate) fn set_observed_label(&mut self, idx: usize, label: usize) {
        debug_assert!(label < self.num_classes);
        self.observed[idx] = label;
    }

    /// `(features, observed label)` pairs — the training-time view.
    pub fn iter_observed(&self) -> impl Iterator<Item = (&[f64], usize)> {
        (0..self.len()).map(|i| (self.features(i), self.observed[i]))
    }

    /// `(features, clean label)` pairs — evaluation against ground truth.
    pub fn iter_clean(&self) -> impl Iterator<Item = (&[f64], usize)> {
        (0..self.len()).map(|i| (self.features(i), self.clean[i]))
    }
}

/// One client's window onto the global dataset.
#[derive(Debug, Clone, Copy)]
pub struct ClientView<'a> {
    dataset: &'a Dataset,
    indices: &'a [usize],
}

impl<'a> ClientView<'a> {
    pub fn new(dataset: &'a Dataset, indices: &'a [usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::invalid(
                "indices",
                format!("index {bad} out of range for dataset of {}", dataset.len()),
            ));
        }
        Ok(ClientView { dataset, indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.num_classes()
    }

    pub fn indices(&self) -> &'a [usize] {
        self.indices
    }

    pub fn features(&self, local: usize) -> &'a [f64] {
        self.dataset.features(self.indices[local])
    }

    pub fn observed_label(&self, local: usize) -> usize {
        self.dataset.observed_label(self.indices[local])
    }

    /// `(features, observed label)` in local order.
    pub fn iter_observed(&self) -> impl Iterator<Item = (&'a [f64], usize)> + '_ {
        self.indices
            .iter()
            .map(|&i| (self.dataset.features(i), self.dataset.observed_label(i)))
    }
}

/// Isotropic Gaussian blobs, one per class, centered `separation` from the
/// origin at equally spaced angles in the first two feature dimensions.
/// Samples are emitted class by class.
pub fn gen_gaussian_mixture(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "must be ≥ 2"));
    }
    if dim == 0 || per_class == 0 {
        return Err(Error::invalid("dim/per_class", "must be ≥ 1"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid(
            "separation",
            format!("must be positive and finite, got {separation}"),
        ));
    }
    if dim == 1 && num_classes > 2 {
        return Err(Error::invalid(
            "dim",
            "1-dimensional features admit at most 2 distinct class centers",
        ));
    }
    let normal = rand_distr::StandardNormal;
    let mut features = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
        let center = |d: usize| -> f64 {
            match d {
                0 => separation * angle.cos(),
                1 => separation * angle.sin(),
                _ => 0.0,
            }
        };
        for _ in 0..per_class {
            for d in 0..dim {
                let z: f64 = normal.sample(rng);
                features.push(center(d) + z);
            }
            labels.push(class);
        }
    }
    Dataset::new(features, labels, dim, num_classes)
}

/// Parameters of the Bernoulli/Dirichlet allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub alpha_dir: f64,
    pub p: f64,
}

impl PartitionSpec {
    pub fn new(num_clients: usize, alpha_dir: f64, p: f64) -> Result<Self> {
        if num_clients == 0 {
            return Err(Error::invalid("num_clients", "must be ≥ 1"));
        }
        if !(alpha_dir > 0.0 && alpha_dir.is_finite()) {
            return Err(Error::invalid(
                "alpha_dir",
                format!("must be positive and finite, got {alpha_dir}"),
            ));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid("p", format!("must be in (0, 1], got {p}")));
        }
        Ok(PartitionSpec {
            num_clients,
            alpha_dir,
            p,
        })
    }
}

/// Disjoint per-client index sets covering the dataset; clients may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.assignments[k]
    }

    /// Ids of clients holding at least one sample — the sampling pool.
    pub fn nonempty_clients(&self) -> Vec<usize> {
        (0..self.num_clients())
            .filter(|&k| !self.assignments[k].is_empty())
            .collect()
    }
}

/// Splits the dataset by observed class: for each class, Bernoulli(p) selects
/// the participating clients (at least one, forced uniformly if the draws
/// select none), Dirichlet(α) draws their shares, and largest-remainder
/// rounding converts shares to exact counts.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec, rng: &mut ChaCha8Rng) -> Result<Partition> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("partition"));
    }
    let n_clients = spec.num_clients;
    let c = dataset.num_classes();
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); n_clients];

    // Group sample indices by observed class (ascending within each class).
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in 0..dataset.len() {
        by_class[dataset.observed_label(i)].push(i);
    }

    let gamma = Gamma::new(spec.alpha_dir, 1.0)
        .map_err(|e| Error::invalid("alpha_dir", e.to_string()))?;

    for class_indices in by_class.iter() {
        // Bernoulli participation per client, in client order; draws happen
        // even for classes with no samples so the stream layout is stable.
        let mut selected: Vec<usize> = (0..n_clients)
            .filter(|_| rng.random::<f64>() < spec.p)
            .collect();
        if selected.is_empty() {
            selected.push(rng.random_range(0..n_clients));
        }
        if class_indices.is_empty() {
            continue;
        }

        // Dirichlet(α) shares via normalized Gamma draws, client order.
        let mut shares: Vec<f64> = selected.iter().map(|_| gamma.sample(rng)).collect();
        let total: f64 = shares.iter().sum();
        if total > 0.0 {
            for s in &mut shares {
                *s /= total;
            }
        } else {
            // All Gamma draws underflowed to zero (tiny α); fall back to equal shares.
            let equal = 1.0 / selected.len() as f64;
            shares.iter_mut().for_each(|s| *s = equal);
        }

        let counts = largest_remainder_counts(&shares, class_indices.len());

        let mut cursor = 0;
        for (slot, &client) in selected.iter().enumerate() {
            let take = counts[slot];
            assignments[client].extend_from_slice(&class_indices[cursor..cursor + take]);
            cursor += take;
        }
        debug_assert_eq!(cursor, class_indices.len());
    }

    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(Partition { assignments })
}

/// Rounds fractional shares to integer counts summing exactly to `total`:
/// floor everything, then hand the remainder out by descending fractional
/// part (ties broken by slot order).
fn largest_remainder_counts(shares: &[f64], total: usize) -> Vec<usize> {
    let n = shares.len();
    let mut counts = Vec::with_capacity(n);
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut assigned = 0usize;
    for (slot, &s) in shares.iter().enumerate() {
        let ideal = s * total as f64;
        let base = ideal.floor() as usize;
        counts.push(base);
        assigned += base;
        fracs.push((ideal - base as f64, slot));
    }
    let mut remainder = total - assigned;
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    while remainder > 0 {
        for &(_, slot) in &fracs {
            counts[slot] += 1;
            remainder -= 1;
            if remainder == 0 {
                break;
            }
        }
    }
    counts
}
