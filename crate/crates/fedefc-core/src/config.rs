//! Experiment configuration: a flat `key=value` text format, one key per
//! line, `#` full-line comments. Unknown and duplicate keys are rejected, and
//! every parse or range error names the key and the line it came from. The
//! only required key is `method`; every other key has a documented default
//! (see the README).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{ConfigError, Error, Result};

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Plain federated averaging on the observed (possibly noisy) labels.
    FedAvg,
    /// Prestopping, then per-round count-matrix estimation + corrected loss.
    FedEfc,
    /// Prestopping, then a percentile-anchor transition fixed at the switch.
    ForwardPercentile,
    /// Prestopping, then per-round pruning of confidently mislabeled examples.
    ConfidentPruning,
    /// Plain averaging with the noise step skipped — the clean-label control.
    FedAvgClean,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::FedAvg,
        Method::FedEfc,
        Method::ForwardPercentile,
        Method::ConfidentPruning,
        Method::FedAvgClean,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedEfc => "fedefc",
            Method::ForwardPercentile => "forward_percentile",
            Method::ConfidentPruning => "confident_pruning",
            Method::FedAvgClean => "fedavg_clean",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("expected one of {}, got '{s}'", names.join("|"))
            })
    }
}

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    /// Gaussian-mixture classes generated from the run's seed.
    Synthetic {
        num_classes: usize,
        input_dim: usize,
        per_class: usize,
        test_per_class: usize,
        separation: f64,
    },
    /// MNIST-format IDX file pairs for train and test splits.
    MnistIdx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset: DatasetConfig,
    /// Hidden layer widths; empty means a linear softmax model.
    pub hidden_dims: Vec<usize>,
    pub num_clients: usize,
    pub client_fraction: f64,
    pub rounds: u32,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Dirichlet concentration of the non-IID partition.
    pub alpha_dir: f64,
    /// Bernoulli class-participation probability of the partition.
    pub p: f64,
    /// Off-diagonal noise mass per column of the true transition matrix.
    pub rho: f64,
    /// Sparsity of the noise: fraction of off-diagonal targets zeroed out.
    pub zeta: f64,
    pub gamma_thr: u32,
    pub warmup_rounds: u32,
    /// fedefc only: weight count-matrix rows by observed-label frequency.
    pub weighted_matrix: bool,
    /// forward_percentile only: anchor percentile in (0, 100].
    pub percentile: f64,
    pub epsilon_clip: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut fields = Fields::scan(text)?;

        let method: Method = fields.require("method")?;
        let dataset = parse_dataset(&mut fields)?;
        let hidden_dims = fields.take_with("hidden_dims", vec![32], parse_dims)?;
        let config = ExperimentConfig {
            method,
            dataset,
            hidden_dims,
            num_clients: fields.take_at_least("num_clients", 20, 1)?,
            client_fraction: fields.take_real("client_fraction", 0.25, RealRange::HalfOpen01)?,
            rounds: fields.take_at_least("rounds", 60, 1)?,
            local_epochs: fields.take_at_least("local_epochs", 3, 0)?,
            batch_size: fields.take_at_least("batch_size", 32, 1)?,
            learning_rate: fields.take_real("learning_rate", 0.1, RealRange::PositiveFinite)?,
            momentum: fields.take_real("momentum", 0.5, RealRange::ClosedOpen01)?,
            alpha_dir: fields.take_real("alpha_dir", 10.0, RealRange::PositiveFinite)?,
            p: fields.take_real("p", 0.5, RealRange::Closed01)?,
            rho: fields.take_real("rho", 0.0, RealRange::Closed01)?,
            zeta: fields.take_real("zeta", 0.0, RealRange::Closed01)?,
            gamma_thr: fields.take_at_least("gamma_thr", 3, 1)?,
            warmup_rounds: fields.take_at_least("warmup_rounds", 10, 0)?,
            weighted_matrix: fields.take("weighted_matrix", false)?,
            percentile: fields.take_real("percentile", 97.0, RealRange::Percentile)?,
            epsilon_clip: fields.take_real(
                "epsilon_clip",
                crate::nn::DEFAULT_EPSILON_CLIP,
                RealRange::EpsilonClip,
            )?,
            seed: fields.take("seed", 42)?,
        };
        fields.finish()?;
        Ok(config)
    }
}

fn parse_dataset(fields: &mut Fields) -> Result<DatasetConfig> {
    const SYNTHETIC_KEYS: [&str; 5] = [
        "num_classes",
        "input_dim",
        "per_class",
        "test_per_class",
        "separation",
    ];
    const MNIST_KEYS: [&str; 4] = ["train_images", "train_labels", "test_images", "test_labels"];

    enum Kind {
        Synthetic,
        MnistIdx,
    }
    let kind = fields.take_with("dataset", Kind::Synthetic, |value| match value {
        "synthetic" => Ok(Kind::Synthetic),
        "mnist_idx" => Ok(Kind::MnistIdx),
        other => Err(format!("expected synthetic|mnist_idx, got '{other}'")),
    })?;
    match kind {
        Kind::Synthetic => {
            fields.forbid(&MNIST_KEYS, "dataset=synthetic")?;
            Ok(DatasetConfig::Synthetic {
                num_classes: fields.take_at_least("num_classes", 3, 2)?,
                input_dim: fields.take_at_least("input_dim", 10, 1)?,
                per_class: fields.take_at_least("per_class", 500, 1)?,
                test_per_class: fields.take_at_least("test_per_class", 200, 1)?,
                separation: fields.take_real("separation", 3.0, RealRange::NonNegativeFinite)?,
            })
        }
        Kind::MnistIdx => {
            fields.forbid(&SYNTHETIC_KEYS, "dataset=mnist_idx")?;
            Ok(DatasetConfig::MnistIdx {
                train_images: fields.require_path("train_images")?,
                train_labels: fields.require_path("train_labels")?,
                test_images: fields.require_path("test_images")?,
                test_labels: fields.require_path("test_labels")?,
            })
        }
    }
}

fn parse_dims(value: &str) -> std::result::Result<Vec<usize>, String> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|part| {
            let width: usize = part
                .trim()
                .parse()
                .map_err(|_| format!("expected comma-separated widths, got '{value}'"))?;
            if width == 0 {
                return Err("layer widths must be ≥ 1".to_string());
            }
            Ok(width)
        })
        .collect()
}

/// Accepted intervals for real-valued keys.
#[derive(Clone, Copy)]
enum RealRange {
    /// (0, 1]
    HalfOpen01,
    /// [0, 1)
    ClosedOpen01,
    /// [0, 1]
    Closed01,
    /// (0, ∞), finite
    PositiveFinite,
    /// [0, ∞), finite
    NonNegativeFinite,
    /// (0, 100]
    Percentile,
    /// (0, 1e-3]
    EpsilonClip,
}

impl RealRange {
    fn check(self, v: f64) -> std::result::Result<f64, String> {
        let (ok, description) = match self {
            RealRange::HalfOpen01 => (v > 0.0 && v <= 1.0, "in (0, 1]"),
            RealRange::ClosedOpen01 => ((0.0..1.0).contains(&v), "in [0, 1)"),
            RealRange::Closed01 => ((0.0..=1.0).contains(&v), "in [0, 1]"),
            RealRange::PositiveFinite => (v.is_finite() && v > 0.0, "positive and finite"),
            RealRange::NonNegativeFinite => (v.is_finite() && v >= 0.0, "nonnegative and finite"),
            RealRange::Percentile => (v > 0.0 && v <= 100.0, "in (0, 100]"),
            RealRange::EpsilonClip => (v > 0.0 && v <= crate::nn::MAX_EPSILON_CLIP, "in (0, 1e-3]"),
        };
        if ok {
            Ok(v)
        } else {
            Err(format!("must be {description}, got {v}"))
        }
    }
}

/// The raw key → (value, line) map scanned from the file, consumed key by key
/// so whatever is left at the end is, by construction, unknown.
struct Fields {
    entries: HashMap<String, (String, usize)>,
}

impl Fields {
    fn scan(text: &str) -> Result<Self> {
        let mut entries: HashMap<String, (String, usize)> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(
                    ConfigError::at(line_no, format!("expected key=value, got '{line}'")).into(),
                );
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::at(line_no, "empty key").into());
            }
            if let Some((_, first)) = entries.get(&key) {
                return Err(ConfigError::at(
                    line_no,
                    format!("duplicate key '{key}' (first set on line {first})"),
                )
                .into());
            }
            entries.insert(key, (value.trim().to_string(), line_no));
        }
        Ok(Fields { entries })
    }

    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.take_with(key, default, |value| {
            value.parse::<T>().map_err(|e| e.to_string())
        })
    }

    fn take_with<T>(
        &mut self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some((value, line)) => {
                let line = *line;
                let parsed = parse(value)
                    .map_err(|e| Error::from(ConfigError::at(line, format!("key '{key}': {e}"))))?;
                self.entries.remove(key);
                Ok(parsed)
            }
        }
    }

    fn take_at_least<T>(&mut self, key: &str, default: T, min: T) -> Result<T>
    where
        T: FromStr + PartialOrd + std::fmt::Display + Copy,
        T::Err: std::fmt::Display,
    {
        self.take_with(key, default, |value| {
            let parsed: T = value.parse().map_err(|e: T::Err| e.to_string())?;
            if parsed < min {
                return Err(format!("must be ≥ {min}, got {parsed}"));
            }
            Ok(parsed)
        })
    }

    fn take_real(&mut self, key: &str, default: f64, range: RealRange) -> Result<f64> {
        self.take_with(key, default, |value| {
            let parsed: f64 = value.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
            range.check(parsed)
        })
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if !self.entries.contains_key(key) {
            return Err(ConfigError::general(format!("missing required key '{key}'")).into());
        }
        // Present, so the default below is never returned.
        self.take_with(key, None, |value| {
            value.parse::<T>().map(Some).map_err(|e| e.to_string())
        })
        .map(|opt| opt.expect("key checked present"))
    }

    fn require_path(&mut self, key: &str) -> Result<PathBuf> {
        if !self.entries.contains_key(key) {
            return Err(ConfigError::general(format!(
                "missing required key '{key}' (dataset=mnist_idx)"
            ))
            .into());
        }
        self.take_with(key, PathBuf::new(), |value| {
            if value.is_empty() {
                return Err("empty path".to_string());
            }
            Ok(PathBuf::from(value))
        })
    }

    fn forbid(&self, keys: &[&str], context: &str) -> Result<()> {
        for &key in keys {
            if let Some((_, line)) = self.entries.get(key) {
                return Err(ConfigError::at(
                    *line,
                    format!("key '{key}' does not apply with {context}"),
                )
                .into());
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.iter().min_by_key(|(_, (_, line))| *line) {
            return Err(ConfigError::at(*line, format!("unknown key '{key}'")).into());
        }
        Ok(())
    }
}
