//! Forward-corrected cross-entropy: the loss mixes clean-class probabilities
//! through the transition matrix and scores the observed label.
//!
//! Correction lives in the loss only — model outputs stay uncorrected
//! clean-class probabilities at evaluation time.

use crate::error::Result;
use crate::nn::{self, Loss};
use crate::noise::TransitionMatrix;

/// `-ln(max((Q·p)[label], ε))` with its exact logit gradient.
///
/// The gradient is computed as `p_k − (p_k·Q[label][k]) / q_label`, an
/// association order under which Q = identity collapses **bitwise** to the
/// plain cross-entropy gradient `p − one_hot` (0·x = 0, x/x = 1, p − 0 = p in
/// IEEE-754), giving the exact reduction law the engine's determinism
/// contract relies on.
#[derive(Debug, Clone)]
pub struct CorrectedLoss {
    transition: TransitionMatrix,
    epsilon_clip: f64,
}

impl CorrectedLoss {
    /// The transition matrix is used as-is; a near-singular one (|det| ≤ 1e-8)
    /// only logs a warning, since forward correction never inverts it.
    pub fn new(transition: TransitionMatrix, epsilon_clip: f64) -> Result<Self> {
        crate::nn::validate_clip(epsilon_clip)?;
        let det = transition.determinant();
        if det.abs() <= 1e-8 {
            log::warn!(
                "transition matrix is near-singular (det {det:.3e}); \
                 correction proceeds but the minimizer-equivalence guarantee is void"
            );
        }
        Ok(CorrectedLoss {
            transition,
            epsilon_clip,
        })
    }

    pub fn with_default_clip(transition: TransitionMatrix) -> Result<Self> {
        CorrectedLoss::new(transition, nn::DEFAULT_EPSILON_CLIP)
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }
}

impl Loss for CorrectedLoss {
    fn loss_and_logit_grad(&self, probs: &[f64], label: usize) -> (f64, Vec<f64>) {
        debug_assert_eq!(probs.len(), self.transition.num_classes());
        let c = probs.len();
        // q_label = Σ_j Q[label][j]·p_j, accumulated in j order.
        let mut q_label = 0.0;
        for (j, &p) in probs.iter().enumerate() {
            q_label += self.transition.entry(label, j) * p;
        }
        if q_label <= self.epsilon_clip {
            return (-self.epsilon_clip.ln(), vec![0.0; c]);
        }
        let mut grad = Vec::with_capacity(c);
        for (k, &p) in probs.iter().enumerate() {
            grad.push(p - (p * self.transition.entry(label, k)) / q_label);
        }
        (-q_label.ln(), grad)
    }
}

/// Observed-label probabilities `Q·p` (Eq.-style mixture of the clean ones).
pub fn corrected_probs(q: &TransitionMatrix, clean_probs: &[f64]) -> Result<Vec<f64>> {
    q.apply(clean_probs)
}

/// Corrected loss value alone, from clean-class probabilities.
pub fn forward_loss(
    q: &TransitionMatrix,
    clean_probs: &[f64],
    observed_label: usize,
    epsilon_clip: f64,
) -> Result<f64> {
    let mixed = q.apply(clean_probs)?;
    Ok(-(mixed[observed_label].max(epsilon_clip)).ln())
}

/// Exact gradient of `forward_loss ∘ softmax` at the given logits.
pub fn forward_loss_grad(
    loss: &CorrectedLoss,
    logits: &[f64],
    observed_label: usize,
) -> Vec<f64> {
    let probs = nn::softmax(logits);
    loss.loss_and_logit_grad(&probs, observed_label).1
}
