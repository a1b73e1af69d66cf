//! Recurrent knowledge tracer.
//!
//! The input at each step is a one-hot encoding of the (KC, response) pair,
//! the hidden state is updated by either a plain tanh recurrence or an LSTM
//! cell, and a sigmoid readout gives one probability per KC. The prediction
//! for the next step is the readout component of the next step's KC.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionSequence, Step};
use crate::error::{KtError, Result};
use crate::model::{check_prefix, feedback_value, Feedback, KnowledgeTracer};
use crate::nn::{next_targets, uniform, Differentiable, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Vanilla,
    #[default]
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DktConfig {
    pub num_kcs: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub cell: Cell,
}

impl DktConfig {
    pub fn new(num_kcs: usize, hidden_dim: usize, cell: Cell) -> Self {
        DktConfig {
            num_kcs,
            hidden_dim,
            cell,
        }
    }

    pub fn input_width(&self) -> usize {
        2 * self.num_kcs
    }

    /// Rows of the recurrent weight matrices: four gates for the LSTM.
    pub fn gate_width(&self) -> usize {
        match self.cell {
            Cell::Vanilla => self.hidden_dim,
            Cell::Lstm => 4 * self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_kcs == 0 || self.hidden_dim == 0 {
            return Err(KtError::Config(
                "num_kcs and hidden_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

const W_HX: usize = 0;
const W_HH: usize = 1;
const B_H: usize = 2;
const W_HY: usize = 3;
const B_P: usize = 4;

/// Position of the hot entry for `(kc, response)`.
pub fn input_index(kc: usize, response: u8, num_kcs: usize) -> Result<usize> {
    if kc >= num_kcs {
        return Err(KtError::Index {
            what: "KC",
            index: kc,
            size: num_kcs,
        });
    }
    Ok(usize::from(response) * num_kcs + kc)
}

pub fn encode_input(kc: usize, response: u8, num_kcs: usize) -> Result<Tensor> {
    let mut data = vec![0.0; 2 * num_kcs];
    data[input_index(kc, response, num_kcs)?] = 1.0;
    Tensor::vector(data)
}

/// Recurrent state; `c` is empty for the vanilla cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DktModel {
    pub config: DktConfig,
    pub params: ParamSet,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl DktModel {
    /// Uniform `±1/sqrt(hidden_dim)` initialization from `seed`.
    pub fn new(config: DktConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng(config: DktConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let bound = 1.0 / (config.hidden_dim as f64).sqrt();
        let mut model = Self::zeros(config)?;
        for i in 0..model.params.len() {
            let shape = model.params.get(i).shape().to_vec();
            *model.params.get_mut(i) = uniform(rng, &shape, bound);
        }
        Ok(model)
    }

    pub fn zeros(config: DktConfig) -> Result<Self> {
        config.validate()?;
        let (k, h, g) = (config.num_kcs, config.hidden_dim, config.gate_width());
        let mut params = ParamSet::new();
        params.push("W_hx", Tensor::zeros(&[g, 2 * k]));
        params.push("W_hh", Tensor::zeros(&[g, h]));
        params.push("b_h", Tensor::zeros(&[g]));
        params.push("W_hy", Tensor::zeros(&[k, h]));
        params.push("b_p", Tensor::zeros(&[k]));
        Ok(DktModel { config, params })
    }

    pub fn from_params(config: DktConfig, params: ParamSet) -> Result<Self> {
        let model = Self::zeros(config)?;
        model.params.check_layout(&params)?;
        Ok(DktModel { config, params })
    }

    pub fn initial_state(&self) -> CellState {
        let h = vec![0.0; self.config.hidden_dim];
        let c = match self.config.cell {
            Cell::Vanilla => Vec::new(),
            Cell::Lstm => h.clone(),
        };
        CellState { h, c }
    }

    /// One recurrence step on a dense input vector.
    pub fn step(&self, state: &CellState, x: &[f64]) -> Result<CellState> {
        let (hd, g, w) = (
            self.config.hidden_dim,
            self.config.gate_width(),
            self.config.input_width(),
        );
        if x.len() != w || state.h.len() != hd {
            return Err(KtError::Dimension {
                op: "dkt step",
                lhs: vec![w, hd],
                rhs: vec![x.len(), state.h.len()],
            });
        }
        let (wx, wh, b) = (
            self.params.get(W_HX).data(),
            self.params.get(W_HH).data(),
            self.params.get(B_H).data(),
        );
        let mut z = b.to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    *zr += wx[r * w + j] * xj;
                }
            }
            for (j, &hj) in state.h.iter().enumerate() {
                *zr += wh[r * hd + j] * hj;
            }
        }
        debug_assert_eq!(z.len(), g);
        let next = match self.config.cell {
            Cell::Vanilla => CellState {
                h: z.iter().map(|v| v.tanh()).collect(),
                c: Vec::new(),
            },
            Cell::Lstm => {
                let mut h = vec![0.0; hd];
                let mut c = vec![0.0; hd];
                for j in 0..hd {
                    let i_g = sigmoid(z[j]);
                    let f_g = sigmoid(z[hd + j]);
                    let g_g = z[2 * hd + j].tanh();
                    let o_g = sigmoid(z[3 * hd + j]);
                    c[j] = f_g * state.c[j] + i_g * g_g;
                    h[j] = o_g * c[j].tanh();
                }
                CellState { h, c }
            }
        };
        if next.h.iter().chain(&next.c).any(|v| !v.is_finite()) {
            return Err(KtError::Numeric("dkt step".into()));
        }
        Ok(next)
    }

    /// Readout probability for one KC.
    pub fn output(&self, h: &[f64], kc: usize) -> Result<f64> {
        let (k, hd) = (self.config.num_kcs, self.config.hidden_dim);
        if kc >= k {
            return Err(KtError::Index {
                what: "KC",
                index: kc,
                size: k,
            });
        }
        let row = &self.params.get(W_HY).data()[kc * hd..(kc + 1) * hd];
        let logit =
            self.params.get(B_P).data()[kc] + row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        Ok(sigmoid(logit))
    }

    /// All per-KC readout probabilities.
    pub fn output_all(&self, h: &[f64]) -> Result<Vec<f64>> {
        (0..self.config.num_kcs)
            .map(|k| self.output(h, k))
            .collect()
    }

    /// Recurrence plus readout on a dense input.
    pub fn forward_step(&self, state: &CellState, x: &[f64]) -> Result<(CellState, Vec<f64>)> {
        let next = self.step(state, x)?;
        let p = self.output_all(&next.h)?;
        Ok((next, p))
    }

    /// Input for a possibly soft response `y`: weight `1 - y` on the
    /// incorrect slot and `y` on the correct slot.
    fn soft_input(&self, kc: usize, y: f64) -> Result<Vec<f64>> {
        let k = self.config.num_kcs;
        let mut x = vec![0.0; 2 * k];
        x[input_index(kc, 0, k)?] = 1.0 - y;
        x[k + kc] += y;
        Ok(x)
    }

    fn observe(&self, state: &CellState, kc: usize, y: f64) -> Result<CellState> {
        self.step(state, &self.soft_input(kc, y)?)
    }

    /// Teacher-forced next-step predictions over the real positions.
    pub fn forward_sequence(&self, seq: &InteractionSequence) -> Result<Vec<f64>> {
        let n = seq.real_len();
        let steps = seq.steps();
        let responses: Vec<f64> = seq.responses[..n]
            .iter()
            .map(|&r| f64::from(r.max(0)))
            .collect();
        self.predict_next(&steps[..n], &responses)
    }

    /// Per-step next-KC probabilities for a padded batch, on the tape, as a
    /// `batch x (T - 1)` matrix where `T` is the longest real length.
    pub fn tape_forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &[&InteractionSequence],
    ) -> Result<Var> {
        let (k, hd) = (self.config.num_kcs, self.config.hidden_dim);
        let b = batch.len();
        let lens: Vec<usize> = batch.iter().map(|s| s.real_len()).collect();
        let t_max = lens.iter().copied().max().unwrap_or(0);
        if t_max < 2 {
            return Err(KtError::NoSignal(
                "no sequence has two real positions".into(),
            ));
        }
        let wxt = tape.transpose(vars[W_HX])?;
        let wht = tape.transpose(vars[W_HH])?;
        let wyt = tape.transpose(vars[W_HY])?;
        let mut h = tape.constant(Tensor::zeros(&[b, hd]));
        let mut c = tape.constant(Tensor::zeros(&[b, hd]));
        let mut columns = Vec::with_capacity(t_max - 1);
        for t in 0..t_max - 1 {
            let mut x = vec![0.0; b * 2 * k];
            for (i, s) in batch.iter().enumerate() {
                if t < lens[i] {
                    let kc = usize::try_from(s.concepts[t])
                        .map_err(|_| KtError::Data("negative KC".into()))?;
                    let r = u8::try_from(s.responses[t])
                        .map_err(|_| KtError::Data("unobserved response".into()))?;
                    x[i * 2 * k + input_index(kc, r, k)?] = 1.0;
                }
            }
            let x = tape.constant(Tensor::matrix(b, 2 * k, x)?);
            let zx = tape.matmul(x, wxt)?;
            let zh = tape.matmul(h, wht)?;
            let z = tape.add(zx, zh)?;
            let z = tape.add_bias(z, vars[B_H])?;
            match self.config.cell {
                Cell::Vanilla => h = tape.tanh(z)?,
                Cell::Lstm => {
                    let zi = tape.slice_cols(z, 0, hd)?;
                    let zf = tape.slice_cols(z, hd, hd)?;
                    let zg = tape.slice_cols(z, 2 * hd, hd)?;
                    let zo = tape.slice_cols(z, 3 * hd, hd)?;
                    let i_g = tape.sigmoid(zi)?;
                    let f_g = tape.sigmoid(zf)?;
                    let g_g = tape.tanh(zg)?;
                    let o_g = tape.sigmoid(zo)?;
                    let keep = tape.mul(f_g, c)?;
                    let write = tape.mul(i_g, g_g)?;
                    c = tape.add(keep, write)?;
                    let tc = tape.tanh(c)?;
                    h = tape.mul(o_g, tc)?;
                }
            }
            let logits = tape.matmul(h, wyt)?;
            let logits = tape.add_bias(logits, vars[B_P])?;
            let next_kc: Vec<usize> = batch
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    if t + 1 < lens[i] {
                        s.concepts[t + 1].max(0) as usize
                    } else {
                        0
                    }
                })
                .collect();
            columns.push(tape.pick(logits, &next_kc)?);
        }
        let logits = tape.concat_cols(&columns)?;
        tape.sigmoid(logits)
    }
}

/// Mean binary cross-entropy over positions with `selectmask == 1`.
pub fn masked_bce_loss(predictions: &[f64], targets: &[f64], selectmask: &[i8]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.len() != selectmask.len() {
        return Err(KtError::Dimension {
            op: "masked_bce_loss",
            lhs: vec![predictions.len()],
            rhs: vec![targets.len(), selectmask.len()],
        });
    }
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::vector(predictions.to_vec())?);
    let mask: Vec<bool> = selectmask.iter().map(|&m| m == 1).collect();
    let loss = tape.bce(p, targets, &mask)?;
    Ok(tape.value(loss).item())
}

impl Differentiable for DktModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &[&InteractionSequence],
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let probs = self.tape_forward(tape, vars, batch)?;
        let width = tape.value(probs).dims2().expect("matrix").1;
        let mut targets = Vec::with_capacity(batch.len() * width);
        let mut mask = Vec::with_capacity(batch.len() * width);
        for s in batch {
            let (mut y, mut m) = next_targets(s, s.len().min(width + 1));
            y.resize(width, 0.0);
            m.resize(width, false);
            targets.extend(y);
            mask.extend(m);
        }
        tape.bce(probs, &targets, &mask)
    }
}

impl KnowledgeTracer for DktModel {
    fn predict_next(&self, steps: &[Step], responses: &[f64]) -> Result<Vec<f64>> {
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(steps.len().saturating_sub(1));
        for t in 0..steps.len().saturating_sub(1) {
            state = self.observe(&state, steps[t].concept, responses[t])?;
            out.push(self.output(&state.h, steps[t + 1].concept)?);
        }
        Ok(out)
    }

    fn predict_frozen(&self, steps: &[Step], prefix: &[f64]) -> Result<Vec<f64>> {
        check_prefix(steps, prefix)?;
        let mut state = self.initial_state();
        for (s, &y) in steps.iter().zip(prefix) {
            state = self.observe(&state, s.concept, y)?;
        }
        steps[prefix.len()..]
            .iter()
            .map(|s| self.output(&state.h, s.concept))
            .collect()
    }

    fn predict_accumulative(
        &self,
        steps: &[Step],
        prefix: &[f64],
        feedback: Feedback,
    ) -> Result<Vec<f64>> {
        check_prefix(steps, prefix)?;
        let mut state = self.initial_state();
        for (s, &y) in steps.iter().zip(prefix) {
            state = self.observe(&state, s.concept, y)?;
        }
        let mut out = Vec::with_capacity(steps.len() - prefix.len());
        for (j, s) in steps.iter().enumerate().skip(prefix.len()) {
            let p = self.output(&state.h, s.concept)?;
            out.push(p);
            if j + 1 < steps.len() {
                state = self.observe(&state, s.concept, feedback_value(p, feedback))?;
            }
        }
        Ok(out)
    }
}
