//! Loss functions evaluated on softmax probabilities.
//!
//! A [`Loss`] consumes the probability vector a set of logits produced and
//! returns the per-sample loss together with the gradient **with respect to
//! those logits** (the softmax Jacobian is folded in analytically). Plain
//! cross-entropy lives here; the forward-corrected variant implements the same
//! trait in the correction module.

/// Default floor inside `-ln(max(p, ε))`; shared by the plain and corrected
/// losses so the identity-matrix reduction is exact.
pub const DEFAULT_EPSILON_CLIP: f64 = 1e-8;

/// Upper bound on a configurable clip (a floor this coarse already distorts
/// losses near 7; anything larger is a config mistake).
pub const MAX_EPSILON_CLIP: f64 = 1e-3;

pub trait Loss: Send + Sync {
    /// Loss and logit-gradient for one sample, given `probs = softmax(logits)`.
    ///
    /// When the (possibly corrected) probability of the observed label falls
    /// at or below the clip, the loss saturates at `-ln(ε)` and the gradient
    /// is zero — the clipped region is constant.
    fn loss_and_logit_grad(&self, probs: &[f64], label: usize) -> (f64, Vec<f64>);
}

/// `-ln(max(p_label, ε))` with gradient `probs − one_hot(label)`.
#[derive(Debug, Clone, Copy)]
pub struct CrossEntropy {
    epsilon_clip: f64,
}

impl CrossEntropy {
    pub fn new(epsilon_clip: f64) -> crate::error::Result<Self> {
        validate_clip(epsilon_clip)?;
        Ok(CrossEntropy { epsilon_clip })
    }

    pub fn epsilon_clip(&self) -> f64 {
        self.epsilon_clip
    }
}

impl Default for CrossEntropy {
    fn default() -> Self {
        CrossEntropy {
            epsilon_clip: DEFAULT_EPSILON_CLIP,
        }
    }
}

impl Loss for CrossEntropy {
    fn loss_and_logit_grad(&self, probs: &[f64], label: usize) -> (f64, Vec<f64>) {
        debug_assert!(label < probs.len());
        let p = probs[label];
        if p <= self.epsilon_clip {
            return (-self.epsilon_clip.ln(), vec![0.0; probs.len()]);
        }
        let mut grad = probs.to_vec();
        grad[label] -= 1.0;
        (-p.ln(), grad)
    }
}

pub(crate) fn validate_clip(epsilon_clip: f64) -> crate::error::Result<()> {
    if !(epsilon_clip > 0.0 && epsilon_clip <= MAX_EPSILON_CLIP) {
        return Err(crate::error::Error::invalid(
            "epsilon_clip",
            format!("must be in (0, {MAX_EPSILON_CLIP}], got {epsilon_clip}"),
        ));
    }
    Ok(())
}
