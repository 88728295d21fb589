//! End-to-end experiment pipeline — generate or load the dataset, build the
//! true transition matrix, inject label noise (skipped for the clean
//! control), partition across clients, run the federation — plus the metrics
//! table and its CSV format.
//!
//! All randomness derives from the config seed through fixed per-stage
//! streams, so a (config, seed) pair maps to one byte-exact CSV no matter how
//! many workers execute the client loop.

use std::path::Path;

use crate::config::{DatasetConfig, ExperimentConfig, Method};
use crate::data::{self, Dataset, Partition, PartitionSpec};
use crate::error::{Error, Result};
use crate::fed::{
    run_federation, FederationConfig, FederationInputs, FederationOutcome, MethodPolicy, Phase,
    RoundRecord,
};
use crate::nn::ModelSpec;
use crate::noise::{apply_noise, build_true_transition, NoiseSpec, TransitionMatrix};
use crate::rng::{SeedPlan, Stream};

/// Everything the engine consumes, derived deterministically from the config.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    pub true_transition: TransitionMatrix,
}

/// End-of-run digest appended to the CSV as comment lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub final_test_acc: f64,
    pub best_test_acc: f64,
    /// Round at which phase 2 began; absent when the run never switched.
    pub prestop_round: Option<u32>,
    /// Mean of the per-round cosine diagnostics over rounds that produced
    /// transition estimates; absent when no round did.
    pub mean_cos_sim: Option<f64>,
}

/// One row per completed round plus the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

/// Builds datasets, noise, and partition for a config. The train set's
/// observed labels are noisy unless the method is the clean control; clean
/// labels are kept alongside for diagnostics only.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let plan = SeedPlan::new(cfg.seed);
    let (mut train, test) = match &cfg.dataset {
        DatasetConfig::Synthetic {
            num_classes,
            input_dim,
            per_class,
            test_per_class,
            separation,
        } => {
            let train = data::gen_gaussian_mixture(
                *num_classes,
                *input_dim,
                *per_class,
                *separation,
                &mut plan.stream(Stream::TrainData),
            )?;
            let test = data::gen_gaussian_mixture(
                *num_classes,
                *input_dim,
                *test_per_class,
                *separation,
                &mut plan.stream(Stream::TestData),
            )?;
            (train, test)
        }
        DatasetConfig::MnistIdx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            data::load_idx(train_images, train_labels)?,
            data::load_idx(test_images, test_labels)?,
        ),
    };
    let noise = NoiseSpec::new(cfg.rho, cfg.zeta)?;
    let true_transition = build_true_transition(
        &noise,
        train.num_classes(),
        &mut plan.stream(Stream::Transition),
    )?;
    if cfg.method != Method::FedAvgClean {
        apply_noise(&mut train, &true_transition, &mut plan.stream(Stream::Noise))?;
    }
    let spec = PartitionSpec::new(cfg.num_clients, cfg.alpha_dir, cfg.p)?;
    let partition = data::partition(&train, &spec, &mut plan.stream(Stream::Partition))?;
    Ok(PreparedData {
        train,
        test,
        partition,
        true_transition,
    })
}

fn policy_for(cfg: &ExperimentConfig) -> MethodPolicy {
    match cfg.method {
        Method::FedAvg | Method::FedAvgClean => MethodPolicy::PlainAveraging,
        Method::FedEfc => MethodPolicy::ForwardCorrection {
            weighted: cfg.weighted_matrix,
        },
        Method::ForwardPercentile => MethodPolicy::PercentileAnchor {
            percentile: cfg.percentile,
        },
        Method::ConfidentPruning => MethodPolicy::ConfidentPruning,
    }
}

/// Runs the full pipeline for one (config, seed) pair.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    let data = prepare_data(cfg)?;
    let model = ModelSpec::new(
        data.train.dim(),
        cfg.hidden_dims.clone(),
        data.train.num_classes(),
    )?;
    let fed_cfg = FederationConfig {
        model,
        rounds: cfg.rounds,
        client_fraction: cfg.client_fraction,
        local_epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        gamma_thr: cfg.gamma_thr,
        warmup_rounds: cfg.warmup_rounds,
        epsilon_clip: cfg.epsilon_clip,
        policy: policy_for(cfg),
        seed: cfg.seed,
    };
    let inputs = FederationInputs {
        train: &data.train,
        partition: &data.partition,
        test: &data.test,
        true_transition: Some(&data.true_transition),
    };
    let outcome = run_federation(&fed_cfg, &inputs)?;
    let summary = summarize(cfg.method, cfg.seed, &outcome);
    Ok(MetricsTable {
        records: outcome.records,
        summary,
    })
}

fn summarize(method: Method, seed: u64, outcome: &FederationOutcome) -> RunSummary {
    let final_test_acc = outcome
        .records
        .last()
        .map(|r| r.test_accuracy)
        .unwrap_or(0.0);
    let best_test_acc = outcome
        .records
        .iter()
        .map(|r| r.test_accuracy)
        .fold(0.0, f64::max);
    let cos_values: Vec<f64> = outcome.records.iter().filter_map(|r| r.cos_sim).collect();
    let mean_cos_sim = if cos_values.is_empty() {
        None
    } else {
        Some(cos_values.iter().sum::<f64>() / cos_values.len() as f64)
    };
    RunSummary {
        method,
        seed,
        final_test_acc,
        best_test_acc,
        prestop_round: outcome.prestop_round,
        mean_cos_sim,
    }
}

pub const CSV_HEADER: &str = "round,phase,A_t,tau_p,test_acc,cos_sim";

/// Renders the table in the writer's canonical form: header, one row per
/// round, then the summary as '#'-prefixed comment lines. All reals use
/// shortest round-trip formatting, absent values print as '-'.
pub fn render_csv(table: &MetricsTable) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &table.records {
        let cos = match r.cos_sim {
            Some(c) => c.to_string(),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.round, r.phase, r.estimated_accuracy, r.tau_p, r.test_accuracy, cos
        ));
    }
    let s = &table.summary;
    out.push_str(&format!("# method={}\n", s.method));
    out.push_str(&format!("# seed={}\n", s.seed));
    out.push_str(&format!("# final_test_acc={}\n", s.final_test_acc));
    out.push_str(&format!("# best_test_acc={}\n", s.best_test_acc));
    match s.prestop_round {
        Some(t) => out.push_str(&format!("# prestop_round={t}\n")),
        None => out.push_str("# prestop_round=-\n"),
    }
    match s.mean_cos_sim {
        Some(c) => out.push_str(&format!("# mean_cos_sim={c}\n")),
        None => out.push_str("# mean_cos_sim=-\n"),
    }
    out
}

pub fn write_csv(table: &MetricsTable, path: &Path) -> Result<()> {
    std::fs::write(path, render_csv(table))?;
    Ok(())
}

pub fn parse_csv(path: &Path) -> Result<MetricsTable> {
    let text = std::fs::read_to_string(path)?;
    parse_csv_str(&text, &path.display().to_string())
}

/// Strict inverse of [`render_csv`]: `parse_csv_str(render_csv(t)) == t`.
pub fn parse_csv_str(text: &str, path_label: &str) -> Result<MetricsTable> {
    let schema_err = |line: usize, message: String| Error::CsvSchema {
        path: path_label.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == CSV_HEADER => {}
        Some((_, first)) => {
            return Err(schema_err(
                1,
                format!("expected header '{CSV_HEADER}', got '{first}'"),
            ))
        }
        None => return Err(schema_err(1, "empty file".to_string())),
    }

    let mut records: Vec<RoundRecord> = Vec::new();
    let mut summary: Vec<(String, String, usize)> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        if let Some(comment) = raw.strip_prefix('#') {
            let Some((key, value)) = comment.trim().split_once('=') else {
                return Err(schema_err(
                    line_no,
                    format!("expected '# key=value' summary line, got '{raw}'"),
                ));
            };
            summary.push((key.trim().to_string(), value.trim().to_string(), line_no));
            continue;
        }
        if !summary.is_empty() {
            return Err(schema_err(
                line_no,
                "data row after summary lines".to_string(),
            ));
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 6 {
            return Err(schema_err(
                line_no,
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let round: u32 = fields[0]
            .parse()
            .map_err(|_| schema_err(line_no, format!("bad round '{}'", fields[0])))?;
        if round as usize != records.len() {
            return Err(schema_err(
                line_no,
                format!("round {round} out of order (expected {})", records.len()),
            ));
        }
        let phase = match fields[1] {
            "phase1" => Phase::One,
            "phase2" => Phase::Two,
            other => return Err(schema_err(line_no, format!("bad phase '{other}'"))),
        };
        let estimated_accuracy: f64 = fields[2]
            .parse()
            .map_err(|_| schema_err(line_no, format!("bad A_t '{}'", fields[2])))?;
        let tau_p: u32 = fields[3]
            .parse()
            .map_err(|_| schema_err(line_no, format!("bad tau_p '{}'", fields[3])))?;
        let test_accuracy: f64 = fields[4]
            .parse()
            .map_err(|_| schema_err(line_no, format!("bad test_acc '{}'", fields[4])))?;
        let cos_sim = match fields[5] {
            "-" => None,
            v => Some(
                v.parse::<f64>()
                    .map_err(|_| schema_err(line_no, format!("bad cos_sim '{v}'")))?,
            ),
        };
        records.push(RoundRecord {
            round,
            phase,
            estimated_accuracy,
            tau_p,
            test_accuracy,
            cos_sim,
        });
    }
    if records.is_empty() {
        return Err(schema_err(2, "no data rows".to_string()));
    }

    let find = |name: &str| -> Result<(String, usize)> {
        summary
            .iter()
            .find(|(k, _, _)| k == name)
            .map(|(_, v, l)| (v.clone(), *l))
            .ok_or_else(|| schema_err(0, format!("missing summary line '{name}'")))
    };
    let (method_raw, method_line) = find("method")?;
    let method: Method = method_raw
        .parse()
        .map_err(|e| schema_err(method_line, format!("bad method: {e}")))?;
    let (seed_raw, seed_line) = find("seed")?;
    let seed: u64 = seed_raw
        .parse()
        .map_err(|_| schema_err(seed_line, format!("bad seed '{seed_raw}'")))?;
    let (final_raw, final_line) = find("final_test_acc")?;
    let final_test_acc: f64 = final_raw
        .parse()
        .map_err(|_| schema_err(final_line, format!("bad final_test_acc '{final_raw}'")))?;
    let (best_raw, best_line) = find("best_test_acc")?;
    let best_test_acc: f64 = best_raw
        .parse()
        .map_err(|_| schema_err(best_line, format!("bad best_test_acc '{best_raw}'")))?;
    let (prestop_raw, prestop_line) = find("prestop_round")?;
    let prestop_round = match prestop_raw.as_str() {
        "-" => None,
        v => Some(
            v.parse::<u32>()
                .map_err(|_| schema_err(prestop_line, format!("bad prestop_round '{v}'")))?,
        ),
    };
    let (cos_raw, cos_line) = find("mean_cos_sim")?;
    let mean_cos_sim = match cos_raw.as_str() {
        "-" => None,
        v => Some(
            v.parse::<f64>()
                .map_err(|_| schema_err(cos_line, format!("bad mean_cos_sim '{v}'")))?,
        ),
    };

    Ok(MetricsTable {
        records,
        summary: RunSummary {
            method,
            seed,
            final_test_acc,
            best_test_acc,
            prestop_round,
            mean_cos_sim,
        },
    })
}
