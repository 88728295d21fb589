//! The federated round engine: client sampling, local training, FedAvg
//! aggregation, the prestopping monitor, and the phase-2 correction policies.
//!
//! Per-round flow: sample clients → local work (possibly in parallel; every
//! client owns a fixed per-(round, client) RNG stream, so scheduling order and
//! worker count never change results) → estimated accuracy A(t) → monitor →
//! aggregate → record. When the monitor fires, that round's updates are
//! discarded and the round re-executes as the first phase-2 round against the
//! last aggregated global model.

use rayon::prelude::*;

use crate::correction::CorrectedLoss;
use crate::data::{ClientView, Dataset, Partition};
use crate::error::{Error, Result};
use crate::estimation::{
    class_thresholds, cosine_similarity, count_assignments, count_matrix,
    count_matrix_from_assignments, percentile_transition, transition_from_counts,
    weighted_transition,
};
use crate::nn::{self, CrossEntropy, Loss, ModelParams, ModelSpec, OptimizerState};
use crate::noise::TransitionMatrix;
use crate::rng::{SeedPlan, Stream};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Training phase: plain cross-entropy before the prestopping point,
/// method-specific handling after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::One => write!(f, "phase1"),
            Phase::Two => write!(f, "phase2"),
        }
    }
}

/// What a client does with its data once phase 2 begins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodPolicy {
    /// Plain loss for the whole run; the monitor only reports telemetry.
    PlainAveraging,
    /// Re-estimate the count-matrix transition every round with the current
    /// global model and train with the corrected loss.
    ForwardCorrection { weighted: bool },
    /// Estimate every client's transition once, at the switch, from
    /// percentile-anchor examples; reuse it for the rest of the run.
    PercentileAnchor { percentile: f64 },
    /// Re-compute count-matrix attributions every round and drop the
    /// off-diagonal examples from that round's working copy; plain loss.
    ConfidentPruning,
}

impl MethodPolicy {
    /// Whether the prestop trigger changes behavior at all.
    fn switches_phase(&self) -> bool {
        !matches!(self, MethodPolicy::PlainAveraging)
    }
}

/// Patience monitor over the estimated accuracy A(t). Strict improvement over
/// the best seen value resets patience; a tie counts toward it. Rounds before
/// `warmup_rounds` are ignored entirely, and the monitor freezes once it has
/// triggered.
#[derive(Debug, Clone)]
pub struct PrestopMonitor {
    gamma_thr: u32,
    warmup_rounds: u32,
    a_max: f64,
    tau_p: u32,
    triggered_at: Option<u32>,
}

impl PrestopMonitor {
    pub fn new(gamma_thr: u32, warmup_rounds: u32) -> Result<Self> {
        if gamma_thr == 0 {
            return Err(Error::invalid("gamma_thr", "must be ≥ 1"));
        }
        Ok(PrestopMonitor {
            gamma_thr,
            warmup_rounds,
            a_max: 0.0,
            tau_p: 0,
            triggered_at: None,
        })
    }

    /// Feeds one round's A(t); returns true exactly when the trigger fires.
    pub fn observe(&mut self, round: u32, a_t: f64) -> bool {
        if self.triggered_at.is_some() || round < self.warmup_rounds {
            return false;
        }
        if a_t > self.a_max {
            self.a_max = a_t;
            self.tau_p = 0;
            return false;
        }
        self.tau_p += 1;
        if self.tau_p == self.gamma_thr {
            self.triggered_at = Some(round);
            return true;
        }
        false
    }

    pub fn tau_p(&self) -> u32 {
        self.tau_p
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn triggered_at(&self) -> Option<u32> {
        self.triggered_at
    }
}

/// Per-round telemetry, one record per round index.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub phase: Phase,
    /// Mean client train accuracy of the incoming global model (A(t)).
    pub estimated_accuracy: f64,
    pub tau_p: u32,
    /// Central test accuracy of the aggregated model, against clean labels.
    pub test_accuracy: f64,
    /// Mean cosine similarity between this round's client transition
    /// estimates and the true matrix; absent when nothing was estimated.
    pub cos_sim: Option<f64>,
}

/// Engine hyperparameters (dataset-independent).
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub model: ModelSpec,
    pub rounds: u32,
    pub client_fraction: f64,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub gamma_thr: u32,
    pub warmup_rounds: u32,
    pub epsilon_clip: f64,
    pub policy: MethodPolicy,
    pub seed: u64,
}

impl FederationConfig {
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be ≥ 1"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::invalid(
                "client_fraction",
                format!("must be in (0, 1], got {}", self.client_fraction),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be ≥ 1"));
        }
        if self.gamma_thr == 0 {
            return Err(Error::invalid("gamma_thr", "must be ≥ 1"));
        }
        crate::nn::validate_clip(self.epsilon_clip)?;
        // Learning-rate/momentum ranges are enforced by OptimizerState; check
        // here too so a bad config fails before any training starts.
        OptimizerState::new(self.learning_rate, self.momentum, 0)?;
        if let MethodPolicy::PercentileAnchor { percentile } = self.policy {
            if !(percentile > 0.0 && percentile <= 100.0) {
                return Err(Error::invalid(
                    "percentile",
                    format!("must be in (0, 100], got {percentile}"),
                ));
            }
        }
        Ok(())
    }
}

/// The data a run operates on. `true_transition` is diagnostic-only: it feeds
/// the cosine-similarity telemetry and never influences training.
#[derive(Debug, Clone, Copy)]
pub struct FederationInputs<'a> {
    pub train: &'a Dataset,
    pub partition: &'a Partition,
    pub test: &'a Dataset,
    pub true_transition: Option<&'a TransitionMatrix>,
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub records: Vec<RoundRecord>,
    pub final_params: ModelParams,
    /// Round at which phase 2 began; `None` when the run never switched
    /// (plain averaging, or the monitor never fired).
    pub prestop_round: Option<u32>,
}

/// Uniform subset of `max(1, round(fraction·|pool|))` clients, ascending ids.
pub fn sample_clients(pool: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::EmptyInput("sample_clients"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(
            "fraction",
            format!("must be in (0, 1], got {fraction}"),
        ));
    }
    let count = ((fraction * pool.len() as f64).round() as usize)
        .max(1)
        .min(pool.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Unweighted mean of participating clients' accuracies (A(t)).
pub fn estimate_accuracy(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::EmptyInput("estimate_accuracy"));
    }
    Ok(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

/// Measures the incoming model's accuracy on the client's observed labels,
/// then runs `local_epochs` passes of shuffled mini-batch SGD.
pub fn local_update(
    view: &ClientView,
    global: &ModelParams,
    loss: &dyn Loss,
    local_epochs: u32,
    batch_size: usize,
    learning_rate: f64,
    momentum: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(ModelParams, f64)> {
    if view.is_empty() {
        return Err(Error::EmptyInput("local_update"));
    }
    let train_accuracy = nn::accuracy(global, view.iter_observed())?;
    let mut params = global.clone();
    let mut opt = OptimizerState::new(learning_rate, momentum, params.len())?;
    let mut order: Vec<usize> = (0..view.len()).collect();
    for _ in 0..local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&local| (view.features(local), view.observed_label(local)))
                .collect();
            let (_, grad) = nn::loss_and_grad(&params, &batch, loss)?;
            opt.step(&mut params, &grad)?;
        }
    }
    Ok((params, train_accuracy))
}

struct ClientOutcome {
    params: ModelParams,
    weight: f64,
    accuracy: f64,
    cos_sim: Option<f64>,
}

/// Runs the full federation. Records are emitted for every round index
/// `0..rounds`; the trigger round appears once, as the first phase-2 record.
pub fn run_federation(cfg: &FederationConfig, inputs: &FederationInputs) -> Result<FederationOutcome> {
    cfg.validate()?;
    check_inputs(cfg, inputs)?;

    let plan = SeedPlan::new(cfg.seed);
    let mut global = ModelParams::init(&cfg.model, &mut plan.stream(Stream::Init));
    let pool = inputs.partition.nonempty_clients();
    if pool.is_empty() {
        return Err(Error::EmptyInput("run_federation: every client is empty"));
    }
    let mut monitor = PrestopMonitor::new(cfg.gamma_thr, cfg.warmup_rounds)?;
    let plain_loss = CrossEntropy::new(cfg.epsilon_clip)?;
    let mut phase = Phase::One;
    let mut prestop_round: Option<u32> = None;
    // PercentileAnchor: per-client transitions, estimated once at the switch.
    let mut anchor_cache: Vec<Option<TransitionMatrix>> =
        vec![None; inputs.partition.num_clients()];
    let mut records = Vec::with_capacity(cfg.rounds as usize);

    let mut t = 0u32;
    while t < cfg.rounds {
        let sampled = sample_clients(
            &pool,
            cfg.client_fraction,
            &mut plan.stream(Stream::ClientSample { round: t }),
        )?;
        let outcomes: Vec<ClientOutcome> = sampled
            .par_iter()
            .map(|&k| client_round(cfg, inputs, &plan, &global, phase, t, k, &plain_loss, &anchor_cache))
            .collect::<Result<Vec<_>>>()?;

        let accuracies: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
        let a_t = estimate_accuracy(&accuracies)?;
        let triggered = monitor.observe(t, a_t);
        if phase == Phase::One && triggered && cfg.policy.switches_phase() {
            // Discard this round's phase-1 updates and replay it corrected,
            // against the last aggregated global model.
            phase = Phase::Two;
            prestop_round = Some(t);
            if let MethodPolicy::PercentileAnchor { percentile } = cfg.policy {
                for &k in &pool {
                    let view = ClientView::new(inputs.train, inputs.partition.client(k))?;
                    anchor_cache[k] = Some(percentile_transition(&global, &view, percentile)?);
                }
            }
            continue;
        }

        let entries: Vec<(f64, &ModelParams)> =
            outcomes.iter().map(|o| (o.weight, &o.params)).collect();
        global = nn::weighted_average(&entries)?;
        let test_accuracy = nn::accuracy(&global, inputs.test.iter_clean())?;
        let cos_values: Vec<f64> = outcomes.iter().filter_map(|o| o.cos_sim).collect();
        let cos_sim = if cos_values.is_empty() {
            None
        } else {
            Some(cos_values.iter().sum::<f64>() / cos_values.len() as f64)
        };
        records.push(RoundRecord {
            round: t,
            phase,
            estimated_accuracy: a_t,
            tau_p: monitor.tau_p(),
            test_accuracy,
            cos_sim,
        });
        t += 1;
    }

    Ok(FederationOutcome {
        records,
        final_params: global,
        prestop_round,
    })
}

#[allow(clippy::too_many_arguments)]
fn client_round(
    cfg: &FederationConfig,
    inputs: &FederationInputs,
    plan: &SeedPlan,
    global: &ModelParams,
    phase: Phase,
    round: u32,
    client: usize,
    plain_loss: &CrossEntropy,
    anchor_cache: &[Option<TransitionMatrix>],
) -> Result<ClientOutcome> {
    let view = ClientView::new(inputs.train, inputs.partition.client(client))?;
    let weight = view.len() as f64;
    let mut rng = plan.stream(Stream::LocalUpdate { round, client });
    let train = |loss: &dyn Loss, view: &ClientView, rng: &mut ChaCha8Rng| {
        local_update(
            view,
            global,
            loss,
            cfg.local_epochs,
            cfg.batch_size,
            cfg.learning_rate,
            cfg.momentum,
            rng,
        )
    };

    if phase == Phase::One || !cfg.policy.switches_phase() {
        let (params, accuracy) = train(plain_loss, &view, &mut rng)?;
        return Ok(ClientOutcome {
            params,
            weight,
            accuracy,
            cos_sim: None,
        });
    }

    match cfg.policy {
        MethodPolicy::PlainAveraging => unreachable!("handled above"),
        MethodPolicy::ForwardCorrection { weighted } => {
            let thresholds = class_thresholds(global, &view)?;
            let counts = count_matrix(global, &view, &thresholds)?;
            let estimate = if weighted {
                weighted_transition(&counts, &view)
            } else {
                transition_from_counts(&counts)
            };
            match estimate {
                Ok(q) => {
                    let cos_sim = diagnose_cosine(&q, inputs.true_transition)?;
                    let corrected = CorrectedLoss::new(q, cfg.epsilon_clip)?;
                    let (params, accuracy) = train(&corrected, &view, &mut rng)?;
                    Ok(ClientOutcome {
                        params,
                        weight,
                        accuracy,
                        cos_sim,
                    })
                }
                // No example qualified anywhere: no estimate exists, so the
                // client degrades to the uncorrected loss for this round.
                Err(Error::EmptyCountMatrix) => {
                    let (params, accuracy) = train(plain_loss, &view, &mut rng)?;
                    Ok(ClientOutcome {
                        params,
                        weight,
                        accuracy,
                        cos_sim: None,
                    })
                }
                Err(e) => Err(e),
            }
        }
        MethodPolicy::PercentileAnchor { .. } => {
            let q = anchor_cache[client]
                .as_ref()
                .expect("anchor transition estimated for every nonempty client at the switch");
            let cos_sim = diagnose_cosine(q, inputs.true_transition)?;
            let corrected = CorrectedLoss::new(q.clone(), cfg.epsilon_clip)?;
            let (params, accuracy) = train(&corrected, &view, &mut rng)?;
            Ok(ClientOutcome {
                params,
                weight,
                accuracy,
                cos_sim,
            })
        }
        MethodPolicy::ConfidentPruning => {
            // A(t) is always measured on the full shard; pruning only shapes
            // this round's training set.
            let accuracy = nn::accuracy(global, view.iter_observed())?;
            let thresholds = class_thresholds(global, &view)?;
            let assignments = count_assignments(global, &view, &thresholds)?;
            let counts = count_matrix_from_assignments(&assignments, view.num_classes());
            log::debug!(
                "round {round} client {client}: pruning {} of {} examples",
                counts.total() as usize - (0..view.num_classes()).map(|j| counts.entry(j, j) as usize).sum::<usize>(),
                view.len()
            );
            let kept: Vec<usize> = view
                .indices()
                .iter()
                .zip(&assignments)
                .filter(|(_, a)| !matches!(a, Some((i, j)) if i != j))
                .map(|(&idx, _)| idx)
                .collect();
            if kept.is_empty() {
                // Everything was flagged as mislabeled: nothing to train on;
                // the client returns the incoming model unchanged.
                return Ok(ClientOutcome {
                    params: global.clone(),
                    weight,
                    accuracy,
                    cos_sim: None,
                });
            }
            let pruned = ClientView::new(inputs.train, &kept)?;
            let (params, _) = train(plain_loss, &pruned, &mut rng)?;
            Ok(ClientOutcome {
                params,
                weight,
                accuracy,
                cos_sim: None,
            })
        }
    }
}

fn diagnose_cosine(q: &TransitionMatrix, truth: Option<&TransitionMatrix>) -> Result<Option<f64>> {
    match truth {
        Some(t) => cosine_similarity(q, t).map(Some),
        None => Ok(None),
    }
}

fn check_inputs(cfg: &FederationConfig, inputs: &FederationInputs) -> Result<()> {
    if inputs.train.dim() != cfg.model.input_dim {
        return Err(Error::DimMismatch {
            context: "run_federation train features",
            expected: cfg.model.input_dim,
            actual: inputs.train.dim(),
        });
    }
    if inputs.train.num_classes() != cfg.model.num_classes {
        return Err(Error::DimMismatch {
            context: "run_federation train classes",
            expected: cfg.model.num_classes,
            actual: inputs.train.num_classes(),
        });
    }
    if inputs.test.dim() != cfg.model.input_dim || inputs.test.num_classes() != cfg.model.num_classes
    {
        return Err(Error::DimMismatch {
            context: "run_federation test set",
            expected: cfg.model.input_dim,
            actual: inputs.test.dim(),
        });
    }
    if let Some(t) = inputs.true_transition {
        if t.num_classes() != cfg.model.num_classes {
            return Err(Error::DimMismatch {
                context: "run_federation true transition",
                expected: cfg.model.num_classes,
                actual: t.num_classes(),
            });
        }
    }
    Ok(())
}
