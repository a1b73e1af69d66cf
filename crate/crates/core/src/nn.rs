//! Named parameter storage and helpers shared by the neural tracers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::InteractionSequence;
use crate::error::{KtError, Result};
use crate::tensor::{Tape, Tensor, Var};

/// An ordered list of named tensors. Order is part of the model definition:
/// optimizers and checkpoints address parameters by position and name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        self.find(name)
            .map(|i| self.get(i))
            .ok_or_else(|| KtError::Config(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Puts every parameter on the tape, as trainable leaves or constants.
    pub fn load(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect()
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(KtError::Config(format!(
                "expected {} parameter tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.iter().zip(other.iter()) {
            if a != b || ta.shape() != tb.shape() {
                return Err(KtError::Config(format!(
                    "parameter '{b}' {:?} does not match expected '{a}' {:?}",
                    tb.shape(),
                    ta.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Uniform initialization in `[-bound, bound]`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite uniform draws")
}

/// Inverted dropout mask: entries are 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask(rng: &mut ChaCha8Rng, shape: &[usize], rate: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite mask")
}

/// Applies dropout when an RNG is supplied (training) and `rate > 0`.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let mask = dropout_mask(rng, tape.value(x).shape(), rate);
            let m = tape.constant(mask);
            tape.mul(x, m)
        }
        _ => Ok(x),
    }
}

/// A model trained by gradient descent through the tape.
pub trait Differentiable {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Mean masked next-response loss over the real positions of a batch of
    /// (possibly padded) training sequences, plus any regularizer. `vars`
    /// holds the parameters as loaded on `tape`. Supplying `rng` enables
    /// training-time stochasticity such as dropout.
    fn batch_loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &[&InteractionSequence],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var>;
}

/// Next-position training targets of one sequence: for `t` in `1..n`, the
/// response at `t` and whether it counts (real and observed).
pub(crate) fn next_targets(seq: &InteractionSequence, n: usize) -> (Vec<f64>, Vec<bool>) {
    (1..n)
        .map(|t| {
            let keep = seq.selectmask[t] == 1 && (seq.responses[t] == 0 || seq.responses[t] == 1);
            (
                if keep {
                    f64::from(seq.responses[t])
                } else {
                    0.0
                },
                keep,
            )
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn layout_check_catches_renames_and_shapes() {
        let mut a = ParamSet::new();
        a.push("w", Tensor::zeros(&[2, 3]));
        let mut b = a.clone();
        a.check_layout(&b).unwrap();
        *b.get_mut(0) = Tensor::zeros(&[3, 2]);
        assert!(a.check_layout(&b).is_err());
        let mut c = ParamSet::new();
        c.push("v", Tensor::zeros(&[2, 3]));
        assert!(a.check_layout(&c).is_err());
    }

    #[test]
    fn dropout_mask_is_inverted_and_seeded() {
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let m1 = dropout_mask(&mut r1, &[1000], 0.2);
        assert_eq!(m1, dropout_mask(&mut r2, &[1000], 0.2));
        assert!(m1
            .data()
            .iter()
            .all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        let mean = m1.data().iter().sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 0.1);
    }
}
