//! Common prediction interface shared by every tracer.

use serde::{Deserialize, Serialize};

use crate::data::Step;
use crate::error::{KtError, Result};

/// Maps a probability to a hard response; exactly 0.5 maps to 1.
pub fn binarize(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

/// What accumulative prediction feeds back as the response of a filled step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    #[default]
    Binarized,
    Probability,
}

/// A model that scores the correctness of the next response.
///
/// Responses are passed as `f64` so that soft (probability) feedback can be
/// represented; observed data is always exactly 0.0 or 1.0.
pub trait KnowledgeTracer {
    /// Teacher-forced predictions: element `t - 1` is the probability that the
    /// response at position `t` is correct given `steps[..=t]` and
    /// `responses[..t]`. Returns `steps.len() - 1` values.
    fn predict_next(&self, steps: &[Step], responses: &[f64]) -> Result<Vec<f64>>;

    /// Predicts every position after the observed `prefix` from the state the
    /// prefix leaves behind; nothing predicted is fed back.
    fn predict_frozen(&self, steps: &[Step], prefix: &[f64]) -> Result<Vec<f64>>;

    /// Predicts the unknown suffix left to right, feeding each prediction back
    /// as the response of its step.
    fn predict_accumulative(
        &self,
        steps: &[Step],
        prefix: &[f64],
        feedback: Feedback,
    ) -> Result<Vec<f64>> {
        check_prefix(steps, prefix)?;
        let mut history = prefix.to_vec();
        let mut out = Vec::with_capacity(steps.len() - prefix.len());
        for j in prefix.len()..steps.len() {
            let p = *self
                .predict_next(&steps[..=j], &history)?
                .last()
                .expect("j >= 1 gives at least one prediction");
            out.push(p);
            history.push(feedback_value(p, feedback));
        }
        Ok(out)
    }
}

pub(crate) fn feedback_value(p: f64, feedback: Feedback) -> f64 {
    match feedback {
        Feedback::Binarized => f64::from(binarize(p)),
        Feedback::Probability => p,
    }
}

pub(crate) fn check_prefix(steps: &[Step], prefix: &[f64]) -> Result<()> {
    if prefix.is_empty() {
        return Err(KtError::Protocol("known prefix is empty".into()));
    }
    if prefix.len() > steps.len() {
        return Err(KtError::Protocol(format!(
            "prefix of {} responses for {} steps",
            prefix.len(),
            steps.len()
        )));
    }
    Ok(())
}
