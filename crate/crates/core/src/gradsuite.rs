//! Finite-difference suites over the tape primitives and both neural tracers.
//!
//! Each suite draws every parameter uniformly from `[-POINT_SCALE,
//! POINT_SCALE]` and a pair of random 8-step sequences, then compares the
//! analytic gradient of the training loss with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::akt::{AktConfig, AktModel, DecayMode};
use crate::data::InteractionSequence;
use crate::dkt::{Cell, DktConfig, DktModel};
use crate::error::Result;
use crate::nn::{uniform, Differentiable};
use crate::tensor::gradcheck::DEFAULT_STEP;
use crate::tensor::{grad_check_groups, Tensor};

pub const TOLERANCE: f64 = 1e-4;
pub const POINT_SCALE: f64 = 0.5;
pub const SEQUENCE_LENGTH: usize = 8;
pub const WIDTH: usize = 16;

const NUM_KCS: usize = 4;
const NUM_QUESTIONS: usize = 6;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    /// Largest relative error per parameter group.
    pub groups: Vec<(String, f64)>,
    pub max_error: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_error <= TOLERANCE
    }

    fn new(suite: &str, names: Vec<String>, errors: Vec<f64>) -> Self {
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        SuiteReport {
            suite: suite.to_string(),
            groups: names.into_iter().zip(errors).collect(),
            max_error,
        }
    }
}

pub fn random_sequences(rng: &mut ChaCha8Rng, count: usize) -> Vec<InteractionSequence> {
    (0..count)
        .map(|u| {
            let n = SEQUENCE_LENGTH;
            InteractionSequence::unpadded(
                u,
                Some(0),
                (0..n)
                    .map(|_| rng.gen_range(0..NUM_QUESTIONS) as i64)
                    .collect(),
                (0..n).map(|_| rng.gen_range(0..NUM_KCS) as i64).collect(),
                (0..n).map(|_| rng.gen_range(0..2)).collect(),
                (0..n as i64).collect(),
                vec![0; n],
            )
        })
        .collect()
}

fn randomize<M: Differentiable>(model: &mut M, rng: &mut ChaCha8Rng) {
    let params = model.params_mut();
    for i in 0..params.len() {
        let shape = params.get(i).shape().to_vec();
        *params.get_mut(i) = uniform(rng, &shape, POINT_SCALE);
    }
}

fn check_model<M: Differentiable>(
    suite: &str,
    model: &M,
    seqs: &[InteractionSequence],
) -> Result<SuiteReport> {
    let refs: Vec<&InteractionSequence> = seqs.iter().collect();
    let errors = grad_check_groups(
        |tape, vars| model.batch_loss(tape, vars, &refs, None),
        &model.params().tensors(),
        DEFAULT_STEP,
    )?;
    let names = model.params().iter().map(|(n, _)| n.to_string()).collect();
    Ok(SuiteReport::new(suite, names, errors))
}

pub fn dkt_suite(cell: Cell, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DktModel::zeros(DktConfig::new(NUM_KCS, WIDTH, cell))?;
    randomize(&mut model, &mut rng);
    let seqs = random_sequences(&mut rng, 2);
    let name = match cell {
        Cell::Vanilla => "dkt_vanilla",
        Cell::Lstm => "dkt_lstm",
    };
    check_model(name, &model, &seqs)
}

pub fn akt_config(mode: DecayMode) -> AktConfig {
    AktConfig {
        d_model: WIDTH,
        num_heads: 2,
        num_layers: 1,
        ff_dim: WIDTH,
        decay_mode: mode,
        dropout: 0.0,
        ..AktConfig::new(NUM_KCS, NUM_QUESTIONS)
    }
}

pub fn akt_suite(mode: DecayMode, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = AktModel::new(akt_config(mode), seed)?;
    randomize(&mut model, &mut rng);
    let seqs = random_sequences(&mut rng, 2);
    let name = match mode {
        DecayMode::IndexDistance => "akt_index_distance",
        DecayMode::ContextAware => "akt_context_aware",
    };
    check_model(name, &model, &seqs)
}

/// A single objective exercising every tape primitive.
pub fn primitives_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&mut rng, &[3, 4], 1.0);
    let b = uniform(&mut rng, &[4, 2], 1.0);
    let bias = uniform(&mut rng, &[2], 1.0);
    let s = uniform(&mut rng, &[3], 1.0);
    let theta = Tensor::scalar(0.7);
    let mask = [true, false, true, true, true, false];
    let errors = grad_check_groups(
        |t, v| {
            let ab = t.matmul(v[0], v[1])?;
            let ab = t.add_bias(ab, v[2])?;
            let ab = t.scale_rows(ab, v[3])?;
            let tr = t.transpose(ab)?;
            let th = t.tanh(tr)?;
            let sc = t.mul(th, v[4])?;
            let sm = t.masked_softmax_rows(sc, &mask, false)?;
            let ex = t.exp(sm)?;
            let sp = t.softplus(ex)?;
            let lg = t.log(sp)?;
            let g = t.gather_rows(lg, &[1, 0, 1])?;
            let p = t.pick(g, &[0, 2, 1])?;
            let sl = t.slice_cols(g, 1, 2)?;
            let cat = t.concat_cols(&[p, sl])?;
            let sg = t.sigmoid(cat)?;
            let af = t.affine(sg, -2.0, 0.5)?;
            let d = t.sub(af, v[4])?;
            let m = t.mean(d)?;
            let probs = t.sigmoid(cat)?;
            let bce = t.bce(
                probs,
                &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
                &[true; 9],
            )?;
            let total = t.add(m, bce)?;
            let sq = t.mul(total, total)?;
            t.sum(sq)
        },
        &[a, b, bias, s, theta],
        DEFAULT_STEP,
    )?;
    let names = ["a", "b", "bias", "row_scale", "theta"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Ok(SuiteReport::new("primitives", names, errors))
}

/// Every suite at its fixed seed.
pub fn run_all() -> Result<Vec<SuiteReport>> {
    Ok(vec![
        primitives_suite(11)?,
        dkt_suite(Cell::Vanilla, 21)?,
        dkt_suite(Cell::Lstm, 22)?,
        akt_suite(DecayMode::IndexDistance, 31)?,
        akt_suite(DecayMode::ContextAware, 32)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        for r in run_all().unwrap() {
            for (g, e) in &r.groups {
                assert!(*e <= TOLERANCE, "{} {g}: {e}", r.suite);
            }
        }
    }
}
