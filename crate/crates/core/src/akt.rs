//! Attentive knowledge tracer with Rasch-style embeddings.
//!
//! Exercises and interactions are embedded as a KC vector plus a scalar
//! question difficulty times a KC variation vector. Two causal self-attention
//! encoders contextualize them, a retriever attends from each exercise over
//! strictly earlier interactions, and a small head scores the retrieved state
//! against the exercise. Attention logits are penalized by a learned,
//! per-head rate times a temporal distance, so weights decay with elapsed
//! steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionSequence, Step};
use crate::error::{KtError, Result};
use crate::model::{check_prefix, KnowledgeTracer};
use crate::nn::{dropout, next_targets, uniform, Differentiable, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// Distance is `t - tau`.
    #[default]
    IndexDistance,
    /// Distance is `t - tau` scaled by the attention mass (under the raw
    /// scores) that lies strictly after `tau`.
    ContextAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AktConfig {
    pub num_kcs: usize,
    pub num_questions: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ff_dim: usize,
    pub decay_mode: DecayMode,
    pub dropout: f64,
    pub rasch_lambda: f64,
}

impl AktConfig {
    pub fn new(num_kcs: usize, num_questions: usize) -> Self {
        AktConfig {
            num_kcs,
            num_questions,
            d_model: 64,
            num_heads: 4,
            num_layers: 1,
            ff_dim: 64,
            decay_mode: DecayMode::IndexDistance,
            dropout: 0.05,
            rasch_lambda: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_kcs == 0 || self.num_questions == 0 || self.d_model == 0 || self.ff_dim == 0 {
            return Err(KtError::Config("AKT sizes must be positive".into()));
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(KtError::Config(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(KtError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.rasch_lambda >= 0.0) {
            return Err(KtError::Config("rasch_lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// Parameter positions of one attention block.
#[derive(Debug, Clone, Copy)]
struct Block {
    wk: usize,
    wv: usize,
    wo: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
    theta: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    c: usize,
    d: usize,
    mu: usize,
    q: usize,
    f: usize,
    exercise: Vec<Block>,
    knowledge: Vec<Block>,
    retriever: Block,
    head: [usize; 4],
}

/// softplus(THETA_INIT_RAW) == 1.
pub const THETA_INIT_RAW: f64 = 0.541_324_854_612_918_1;

fn build(config: &AktConfig) -> (ParamSet, Layout) {
    let (k, dm, ff, h) = (
        config.num_kcs,
        config.d_model,
        config.ff_dim,
        config.num_heads,
    );
    let mut p = ParamSet::new();
    let c = p.push("c", Tensor::zeros(&[k, dm]));
    let d = p.push("d", Tensor::zeros(&[k, dm]));
    let mu = p.push("mu", Tensor::zeros(&[config.num_questions]));
    let q = p.push("q", Tensor::zeros(&[2 * k, dm]));
    let f = p.push("f", Tensor::zeros(&[2 * k, dm]));
    let block = |p: &mut ParamSet, prefix: String| Block {
        wk: p.push(format!("{prefix}.wk"), Tensor::zeros(&[dm, dm])),
        wv: p.push(format!("{prefix}.wv"), Tensor::zeros(&[dm, dm])),
        wo: p.push(format!("{prefix}.wo"), Tensor::zeros(&[dm, dm])),
        ff1_w: p.push(format!("{prefix}.ff1_w"), Tensor::zeros(&[dm, ff])),
        ff1_b: p.push(format!("{prefix}.ff1_b"), Tensor::zeros(&[ff])),
        ff2_w: p.push(format!("{prefix}.ff2_w"), Tensor::zeros(&[ff, dm])),
        ff2_b: p.push(format!("{prefix}.ff2_b"), Tensor::zeros(&[dm])),
        theta: p.push(
            format!("{prefix}.theta"),
            Tensor::full(&[h], THETA_INIT_RAW),
        ),
    };
    let exercise = (0..config.num_layers)
        .map(|l| block(&mut p, format!("exercise{l}")))
        .collect();
    let knowledge = (0..config.num_layers)
        .map(|l| block(&mut p, format!("knowledge{l}")))
        .collect();
    let retriever = block(&mut p, "retriever".into());
    let head = [
        p.push("head.w1", Tensor::zeros(&[2 * dm, dm])),
        p.push("head.b1", Tensor::zeros(&[dm])),
        p.push("head.w2", Tensor::zeros(&[dm, 1])),
        p.push("head.b2", Tensor::zeros(&[1])),
    ];
    (
        p,
        Layout {
            c,
            d,
            mu,
            q,
            f,
            exercise,
            knowledge,
            retriever,
            head,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AktModel {
    pub config: AktConfig,
    pub params: ParamSet,
    #[serde(skip)]
    layout: Option<Layout>,
}

impl PartialEq for AktModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

/// Intermediate values of one forward pass, for inspection.
#[derive(Debug, Clone)]
pub struct AktTrace {
    /// Context-aware exercise embeddings, `n x D`.
    pub exercise: Tensor,
    /// Context-aware interaction embeddings, `n x D`.
    pub knowledge: Tensor,
    /// Retrieved knowledge states, `n x D`.
    pub retrieved: Tensor,
    /// Probability of a correct response at every position (row 0 included).
    pub probs: Vec<f64>,
    /// Per head `n x n` attention weights of the last exercise-encoder layer.
    pub exercise_weights: Vec<Tensor>,
    /// Per head `n x n` retriever weights.
    pub retrieval_weights: Vec<Tensor>,
}

struct Forward {
    exercise: Var,
    knowledge: Var,
    retrieved: Var,
    probs: Var,
    exercise_weights: Vec<Var>,
    retrieval_weights: Vec<Var>,
}

/// `dist[t][tau] = t - tau` on and below the diagonal, 0 above.
fn index_distance(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for t in 0..n {
        for tau in 0..=t {
            data[t * n + tau] = (t - tau) as f64;
        }
    }
    Tensor::from_parts(vec![n, n], data)
}

/// `later[a][b] = 1` iff `a > b`; right-multiplying attention weights by it
/// sums, for each key position, the weight on strictly later keys.
fn strictly_later(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..a {
            data[a * n + b] = 1.0;
        }
    }
    Tensor::from_parts(vec![n, n], data)
}

/// Single-head attention weights with monotonic decay. Logits are
/// `q k^T / sqrt(dk) - theta * dist` over the `mask`ed support, where `theta`
/// is a one-element tensor.
pub fn decayed_attention_weights(
    tape: &mut Tape,
    queries: Var,
    keys: Var,
    mask: &[bool],
    mode: DecayMode,
    theta: Var,
    allow_empty_rows: bool,
) -> Result<Var> {
    let (n, dk) = tape
        .value(queries)
        .dims2()
        .ok_or_else(|| KtError::Contract("queries must be a matrix".into()))?;
    let kt = tape.transpose(keys)?;
    let raw = tape.matmul(queries, kt)?;
    let scores = tape.scale(raw, 1.0 / (dk as f64).sqrt())?;
    let dist = tape.constant(index_distance(n));
    let dist = match mode {
        DecayMode::IndexDistance => dist,
        DecayMode::ContextAware => {
            let gamma = tape.masked_softmax_rows(scores, mask, allow_empty_rows)?;
            let later = tape.constant(strictly_later(n));
            let remaining = tape.matmul(gamma, later)?;
            tape.mul(remaining, dist)?
        }
    };
    let decay = tape.mul(dist, theta)?;
    let logits = tape.sub(scores, decay)?;
    tape.masked_softmax_rows(logits, mask, allow_empty_rows)
}

/// [`decayed_attention_weights`] applied to `values`; returns the mixed
/// values and the weights.
#[allow(clippy::too_many_arguments)]
pub fn monotonic_attention(
    tape: &mut Tape,
    queries: Var,
    keys: Var,
    values: Var,
    mask: &[bool],
    mode: DecayMode,
    theta: Var,
    allow_empty_rows: bool,
) -> Result<(Var, Var)> {
    let weights =
        decayed_attention_weights(tape, queries, keys, mask, mode, theta, allow_empty_rows)?;
    let out = tape.matmul(weights, values)?;
    Ok((out, weights))
}

fn causal_mask(n: usize, strict: bool, cutoff: usize) -> Vec<bool> {
    let mut m = vec![false; n * n];
    for t in 0..n {
        for tau in 0..n {
            m[t * n + tau] = if strict {
                tau < t && tau < cutoff
            } else {
                tau <= t
            };
        }
    }
    m
}

impl AktModel {
    pub fn new(config: AktConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(config, &mut rng)
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, embeddings in `±1/sqrt(D)`,
    /// difficulties 0 and decay rates 1.
    pub fn with_rng(config: AktConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (mut params, layout) = build(&config);
        let emb = 1.0 / (config.d_model as f64).sqrt();
        for i in 0..params.len() {
            let name = params.name(i).to_string();
            let shape = params.get(i).shape().to_vec();
            let bound = if name == "mu" || name.ends_with(".theta") {
                continue;
            } else if ["c", "d", "q", "f"].contains(&name.as_str()) {
                emb
            } else if shape.len() == 2 {
                1.0 / (shape[0] as f64).sqrt()
            } else {
                emb
            };
            *params.get_mut(i) = uniform(rng, &shape, bound);
        }
        Ok(AktModel {
            config,
            params,
            layout: Some(layout),
        })
    }

    pub fn from_params(config: AktConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let (expected, layout) = build(&config);
        expected.check_layout(&params)?;
        Ok(AktModel {
            config,
            params,
            layout: Some(layout),
        })
    }

    fn layout(&self) -> Layout {
        self.layout.clone().unwrap_or_else(|| build(&self.config).1)
    }

    fn check_step(&self, s: &Step) -> Result<()> {
        if s.concept >= self.config.num_kcs {
            return Err(KtError::Index {
                what: "KC",
                index: s.concept,
                size: self.config.num_kcs,
            });
        }
        if s.question >= self.config.num_questions {
            return Err(KtError::Index {
                what: "question",
                index: s.question,
                size: self.config.num_questions,
            });
        }
        Ok(())
    }

    /// `c[kc] + mu[question] * d[kc]`.
    pub fn embed_exercise(&self, kc: usize, question: usize) -> Result<Vec<f64>> {
        self.check_step(&Step {
            question,
            concept: kc,
        })?;
        let l = self.layout();
        let mu = self.params.get(l.mu).data()[question];
        Ok(self
            .params
            .get(l.c)
            .row(kc)
            .iter()
            .zip(self.params.get(l.d).row(kc))
            .map(|(c, d)| c + mu * d)
            .collect())
    }

    /// `q[a*K + kc] + mu[question] * f[a*K + kc]`.
    pub fn embed_interaction(&self, kc: usize, answer: u8, question: usize) -> Result<Vec<f64>> {
        self.check_step(&Step {
            question,
            concept: kc,
        })?;
        let l = self.layout();
        let row = usize::from(answer) * self.config.num_kcs + kc;
        let mu = self.params.get(l.mu).data()[question];
        Ok(self
            .params
            .get(l.q)
            .row(row)
            .iter()
            .zip(self.params.get(l.f).row(row))
            .map(|(q, f)| q + mu * f)
            .collect())
    }

    /// `lambda * sum(mu^2)`.
    pub fn rasch_penalty(&self) -> f64 {
        self.config.rasch_lambda * self.params.get(self.layout().mu).sum_of_squares()
    }

    fn ffn(&self, tape: &mut Tape, vars: &[Var], b: &Block, x: Var) -> Result<Var> {
        let z = tape.matmul(x, vars[b.ff1_w])?;
        let z = tape.add_bias(z, vars[b.ff1_b])?;
        let z = tape.tanh(z)?;
        let z = tape.matmul(z, vars[b.ff2_w])?;
        tape.add_bias(z, vars[b.ff2_b])
    }

    /// Multi-head attention with shared query/key projection.
    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        b: &Block,
        query_in: Var,
        value_in: Var,
        mask: &[bool],
        allow_empty_rows: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Vec<Var>)> {
        let dk = self.config.head_dim();
        let qk = tape.matmul(query_in, vars[b.wk])?;
        let v = tape.matmul(value_in, vars[b.wv])?;
        let thetas = tape.softplus(vars[b.theta])?;
        let mut heads = Vec::with_capacity(self.config.num_heads);
        let mut weights = Vec::with_capacity(self.config.num_heads);
        for h in 0..self.config.num_heads {
            let qh = tape.slice_cols(qk, h * dk, dk)?;
            let vh = tape.slice_cols(v, h * dk, dk)?;
            let theta = tape.gather_rows(thetas, &[h])?;
            let w = decayed_attention_weights(
                tape,
                qh,
                qh,
                mask,
                self.config.decay_mode,
                theta,
                allow_empty_rows,
            )?;
            weights.push(w);
            let w = dropout(tape, w, self.config.dropout, rng.as_deref_mut())?;
            heads.push(tape.matmul(w, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        Ok((tape.matmul(cat, vars[b.wo])?, weights))
    }

    fn encoder_layer(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        b: &Block,
        x: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Vec<Var>)> {
        let n = tape.value(x).dims2().expect("matrix").0;
        let mask = causal_mask(n, false, n);
        let (a, w) = self.attend(tape, vars, b, x, x, &mask, false, rng.as_deref_mut())?;
        let a = dropout(tape, a, self.config.dropout, rng.as_deref_mut())?;
        let x1 = tape.add(x, a)?;
        let z = self.ffn(tape, vars, b, x1)?;
        let z = dropout(tape, z, self.config.dropout, rng)?;
        Ok((tape.add(x1, z)?, w))
    }

    /// Full forward pass on the tape. `responses` may be soft; the retriever
    /// only reads interactions at positions below `cutoff`.
    fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        steps: &[Step],
        responses: &[f64],
        cutoff: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let n = steps.len();
        if n == 0 || responses.len() != n {
            return Err(KtError::Contract(format!(
                "forward needs {} responses for {} steps",
                n,
                responses.len()
            )));
        }
        for s in steps {
            self.check_step(s)?;
        }
        let l = self.layout();
        let k = self.config.num_kcs;
        let kcs: Vec<usize> = steps.iter().map(|s| s.concept).collect();
        let qs: Vec<usize> = steps.iter().map(|s| s.question).collect();
        let mu = tape.gather_rows(vars[l.mu], &qs)?;

        let c = tape.gather_rows(vars[l.c], &kcs)?;
        let d = tape.gather_rows(vars[l.d], &kcs)?;
        let d = tape.scale_rows(d, mu)?;
        let mut x = tape.add(c, d)?;

        let hard = responses.iter().all(|&y| y == 0.0 || y == 1.0);
        let interaction = |tape: &mut Tape, rows: &[usize]| -> Result<Var> {
            let q = tape.gather_rows(vars[l.q], rows)?;
            let f = tape.gather_rows(vars[l.f], rows)?;
            let f = tape.scale_rows(f, mu)?;
            tape.add(q, f)
        };
        let mut y = if hard {
            let rows: Vec<usize> = kcs
                .iter()
                .zip(responses)
                .map(|(&kc, &r)| (r as usize) * k + kc)
                .collect();
            interaction(tape, &rows)?
        } else {
            let wrong = interaction(tape, &kcs)?;
            let right_rows: Vec<usize> = kcs.iter().map(|&kc| k + kc).collect();
            let right = interaction(tape, &right_rows)?;
            let wy = tape.constant(Tensor::vector(responses.to_vec())?);
            let wn = tape.constant(Tensor::vector(responses.iter().map(|r| 1.0 - r).collect())?);
            let a = tape.scale_rows(right, wy)?;
            let b = tape.scale_rows(wrong, wn)?;
            tape.add(a, b)?
        };

        let mut exercise_weights = Vec::new();
        for b in &l.exercise {
            let (out, w) = self.encoder_layer(tape, vars, b, x, rng.as_deref_mut())?;
            x = out;
            exercise_weights = w;
        }
        for b in &l.knowledge {
            y = self.encoder_layer(tape, vars, b, y, rng.as_deref_mut())?.0;
        }

        let mask = causal_mask(n, true, cutoff);
        let r = &l.retriever;
        let (a, retrieval_weights) =
            self.attend(tape, vars, r, x, y, &mask, true, rng.as_deref_mut())?;
        let z = self.ffn(tape, vars, r, a)?;
        let z = dropout(tape, z, self.config.dropout, rng)?;
        let h = tape.add(a, z)?;

        let [w1, b1, w2, b2] = l.head;
        let hx = tape.concat_cols(&[h, x])?;
        let z = tape.matmul(hx, vars[w1])?;
        let z = tape.add_bias(z, vars[b1])?;
        let z = tape.tanh(z)?;
        let z = tape.matmul(z, vars[w2])?;
        let z = tape.add_bias(z, vars[b2])?;
        let probs = tape.sigmoid(z)?;
        Ok(Forward {
            exercise: x,
            knowledge: y,
            retrieved: h,
            probs,
            exercise_weights,
            retrieval_weights,
        })
    }

    /// Evaluation-mode forward pass returning every intermediate.
    pub fn trace(&self, steps: &[Step], responses: &[f64]) -> Result<AktTrace> {
        let mut tape = Tape::new();
        let vars = self.params.load(&mut tape, false);
        let fw = self.forward(&mut tape, &vars, steps, responses, steps.len(), None)?;
        Ok(AktTrace {
            exercise: tape.value(fw.exercise).clone(),
            knowledge: tape.value(fw.knowledge).clone(),
            retrieved: tape.value(fw.retrieved).clone(),
            probs: tape.value(fw.probs).data().to_vec(),
            exercise_weights: fw
                .exercise_weights
                .iter()
                .map(|&w| tape.value(w).clone())
                .collect(),
            retrieval_weights: fw
                .retrieval_weights
                .iter()
                .map(|&w| tape.value(w).clone())
                .collect(),
        })
    }

    fn probs(&self, steps: &[Step], responses: &[f64], cutoff: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.load(&mut tape, false);
        let fw = self.forward(&mut tape, &vars, steps, responses, cutoff, None)?;
        Ok(tape.value(fw.probs).data().to_vec())
    }

    /// Sum of masked cross-entropy terms of one sequence and their count.
    fn sequence_loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        seq: &InteractionSequence,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Option<(Var, usize)>> {
        let n = seq.real_len();
        if n < 2 {
            return Ok(None);
        }
        let (targets, keep) = next_targets(seq, n);
        let count = keep.iter().filter(|&&k| k).count();
        if count == 0 {
            return Ok(None);
        }
        let steps = seq.steps();
        let responses: Vec<f64> = seq.responses[..n]
            .iter()
            .map(|&r| f64::from(r.max(0)))
            .collect();
        let fw = self.forward(tape, vars, &steps[..n], &responses, n, rng)?;
        let mut y = vec![0.0];
        y.extend(targets);
        let mut m = vec![false];
        m.extend(keep);
        let mean = tape.bce(fw.probs, &y, &m)?;
        Ok(Some((tape.scale(mean, count as f64)?, count)))
    }
}

impl Differentiable for AktModel {
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
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut total: Option<Var> = None;
        let mut count = 0usize;
        for s in batch {
            if let Some((loss, c)) = self.sequence_loss(tape, vars, s, rng.as_deref_mut())? {
                total = Some(match total {
                    Some(t) => tape.add(t, loss)?,
                    None => loss,
                });
                count += c;
            }
        }
        let total =
            total.ok_or_else(|| KtError::NoSignal("every loss position is masked".into()))?;
        let mean = tape.scale(total, 1.0 / count as f64)?;
        let mu = vars[self.layout().mu];
        let sq = tape.mul(mu, mu)?;
        let sq = tape.sum(sq)?;
        let penalty = tape.scale(sq, self.config.rasch_lambda)?;
        tape.add(mean, penalty)
    }
}

impl KnowledgeTracer for AktModel {
    fn predict_next(&self, steps: &[Step], responses: &[f64]) -> Result<Vec<f64>> {
        if steps.len() < 2 {
            return Ok(Vec::new());
        }
        let mut r = responses[..steps.len() - 1].to_vec();
        r.push(0.0);
        Ok(self.probs(steps, &r, steps.len())?[1..].to_vec())
    }

    fn predict_frozen(&self, steps: &[Step], prefix: &[f64]) -> Result<Vec<f64>> {
        check_prefix(steps, prefix)?;
        let mut r = prefix.to_vec();
        r.resize(steps.len(), 0.0);
        Ok(self.probs(steps, &r, prefix.len())?[prefix.len()..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small(mode: DecayMode) -> AktConfig {
        AktConfig {
            d_model: 16,
            num_heads: 2,
            ff_dim: 16,
            decay_mode: mode,
            dropout: 0.0,
            ..AktConfig::new(4, 6)
        }
    }

    fn randomized(config: AktConfig, seed: u64) -> AktModel {
        let mut m = AktModel::new(config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mu = m.params.find("mu").unwrap();
        *m.params.get_mut(mu) = uniform(&mut rng, &[config.num_questions], 1.0);
        for name in ["exercise0.theta", "knowledge0.theta", "retriever.theta"] {
            let idx = m.params.find(name).unwrap();
            *m.params.get_mut(idx) = uniform(&mut rng, &[config.num_heads], 1.0);
        }
        m
    }

    fn random_steps(rng: &mut ChaCha8Rng, n: usize, k: usize, nq: usize) -> (Vec<Step>, Vec<f64>) {
        let steps = (0..n)
            .map(|_| Step {
                question: rng.gen_range(0..nq),
                concept: rng.gen_range(0..k),
            })
            .collect();
        let responses = (0..n).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
        (steps, responses)
    }

    #[test]
    fn embedding_examples() {
        let mut m = AktModel::new(
            AktConfig {
                d_model: 2,
                num_heads: 1,
                ..AktConfig::new(3, 4)
            },
            0,
        )
        .unwrap();
        let l = m.layout();
        assert_eq!(m.embed_exercise(1, 2).unwrap(), m.params.get(l.c).row(1));
        *m.params.get_mut(l.c) = Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 2.0, 0.0, 0.0]).unwrap();
        *m.params.get_mut(l.d) = Tensor::matrix(3, 2, vec![0.0, 0.0, 0.5, -1.0, 0.0, 0.0]).unwrap();
        *m.params.get_mut(l.mu) = Tensor::vector(vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        assert_eq!(m.embed_exercise(1, 2).unwrap(), vec![2.0, 0.0]);
        assert_eq!(m.embed_exercise(1, 0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            m.embed_interaction(2, 1, 0).unwrap(),
            m.params.get(l.q).row(5)
        );
        assert_ne!(
            m.embed_interaction(2, 1, 3).unwrap(),
            m.embed_interaction(2, 0, 3).unwrap()
        );
        assert!(matches!(m.embed_exercise(3, 0), Err(KtError::Index { .. })));
        assert!(matches!(
            m.embed_interaction(0, 1, 4),
            Err(KtError::Index { .. })
        ));
    }

    fn attention_weights(scores: Tensor, mode: DecayMode, theta: f64, mask: &[bool]) -> Tensor {
        // Queries whose self-products are the given score matrix are awkward
        // to build, so this drives the decay arithmetic through unit keys.
        let mut tape = Tape::new();
        let n = scores.dims2().unwrap().0;
        let q = tape.constant(scores);
        let k = tape.constant(Tensor::eye(n));
        let v = tape.constant(Tensor::eye(n));
        let th = tape.constant(Tensor::scalar(theta));
        // q k^T / sqrt(n) == scores / sqrt(n); rescale to undo it.
        let q = tape.scale(q, (n as f64).sqrt()).unwrap();
        let (_, w) = monotonic_attention(&mut tape, q, k, v, mask, mode, th, false).unwrap();
        tape.value(w).clone()
    }

    #[test]
    fn monotonic_attention_examples() {
        let mask = causal_mask(2, false, 2);
        let w = attention_weights(
            Tensor::zeros(&[2, 2]),
            DecayMode::IndexDistance,
            2f64.ln(),
            &mask,
        );
        assert!((w.get2(1, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.get2(1, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w.get2(0, 0), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let scores = uniform(&mut rng, &[n, n], 2.0);
        let mask = causal_mask(n, false, n);
        let w = attention_weights(scores.clone(), DecayMode::IndexDistance, 0.0, &mask);
        for t in 0..n {
            let row = &scores.row(t)[..=t];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|s| (s - m).exp()).sum();
            for tau in 0..n {
                let expect = if tau <= t {
                    (row[tau] - m).exp() / z
                } else {
                    0.0
                };
                assert!((w.get2(t, tau) - expect).abs() < 1e-12);
            }
        }

        let empty = vec![false; 4];
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::zeros(&[2, 2]));
        let th = tape.constant(Tensor::scalar(1.0));
        assert!(matches!(
            monotonic_attention(
                &mut tape,
                q,
                q,
                q,
                &empty,
                DecayMode::IndexDistance,
                th,
                false
            ),
            Err(KtError::EmptySupport(_))
        ));
    }

    #[test]
    fn equal_scores_decay_monotonically() {
        let n = 7;
        let mask = causal_mask(n, false, n);
        for mode in [DecayMode::IndexDistance, DecayMode::ContextAware] {
            let w = attention_weights(Tensor::zeros(&[n, n]), mode, 0.7, &mask);
            for t in 0..n {
                let total: f64 = w.row(t).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                for tau in 0..t {
                    assert!(
                        w.get2(t, tau) <= w.get2(t, tau + 1) + 1e-15,
                        "{mode:?} {t} {tau}"
                    );
                }
            }
        }
    }

    #[test]
    fn weights_form_simplices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mode in [DecayMode::IndexDistance, DecayMode::ContextAware] {
            let m = randomized(small(mode), 2);
            let (steps, responses) = random_steps(&mut rng, 9, 4, 6);
            let tr = m.trace(&steps, &responses).unwrap();
            for w in &tr.exercise_weights {
                for t in 0..9 {
                    assert!(w.row(t).iter().all(|&v| v >= 0.0));
                    assert!((w.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(w.row(t)[t + 1..].iter().all(|&v| v == 0.0));
                }
            }
            for w in &tr.retrieval_weights {
                assert!(w.row(0).iter().all(|&v| v == 0.0));
                for t in 1..9 {
                    assert!((w.row(t)[..t].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(w.row(t)[t..].iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn causality_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for mode in [DecayMode::IndexDistance, DecayMode::ContextAware] {
            let m = randomized(small(mode), 3);
            let (steps, responses) = random_steps(&mut rng, 10, 4, 6);
            let base = m.trace(&steps, &responses).unwrap();
            for cut in 1..10 {
                let mut s2 = steps.clone();
                let mut r2 = responses.clone();
                for t in cut..10 {
                    s2[t] = Step {
                        question: (s2[t].question + 1) % 6,
                        concept: (s2[t].concept + 3) % 4,
                    };
                    r2[t] = 1.0 - r2[t];
                }
                let other = m.trace(&s2, &r2).unwrap();
                for t in 0..cut {
                    for (a, b) in [
                        (&base.exercise, &other.exercise),
                        (&base.knowledge, &other.knowledge),
                        (&base.retrieved, &other.retrieved),
                    ] {
                        let diff = a
                            .row(t)
                            .iter()
                            .zip(b.row(t))
                            .map(|(x, y)| (x - y).abs())
                            .fold(0.0, f64::max);
                        assert!(diff <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn first_state_is_zero_context_default() {
        let m = randomized(small(DecayMode::IndexDistance), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (steps, responses) = random_steps(&mut rng, 1, 4, 6);
        let tr = m.trace(&steps, &responses).unwrap();
        let l = m.layout();
        let r = l.retriever;
        let (b1, w2, b2) = (
            m.params.get(r.ff1_b),
            m.params.get(r.ff2_w),
            m.params.get(r.ff2_b),
        );
        for j in 0..16 {
            let mut v = b2.data()[j];
            for i in 0..16 {
                v += b1.data()[i].tanh() * w2.get2(i, j);
            }
            assert!((tr.retrieved.get2(0, j) - v).abs() < 1e-12);
        }
        let (s2, r2) = random_steps(&mut rng, 1, 4, 6);
        let tr2 = m.trace(&s2, &r2).unwrap();
        assert_eq!(tr.retrieved, tr2.retrieved);
    }

    #[test]
    fn identical_inputs_give_identical_encodings() {
        let mut m = randomized(small(DecayMode::IndexDistance), 8);
        for name in ["exercise0.theta", "knowledge0.theta"] {
            let i = m.params.find(name).unwrap();
            *m.params.get_mut(i) = Tensor::full(&[2], -60.0);
        }
        let steps = vec![
            Step {
                question: 2,
                concept: 1
            };
            5
        ];
        let tr = m.trace(&steps, &[1.0; 5]).unwrap();
        for t in 1..5 {
            let diff = tr
                .exercise
                .row(t)
                .iter()
                .zip(tr.exercise.row(0))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn head_bounds_and_zero_head() {
        let mut m = randomized(small(DecayMode::ContextAware), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..12);
            let (steps, responses) = random_steps(&mut rng, n, 4, 6);
            for p in m.trace(&steps, &responses).unwrap().probs {
                assert!(p > 0.0 && p < 1.0);
            }
        }
        for name in ["head.w1", "head.b1", "head.w2", "head.b2"] {
            let i = m.params.find(name).unwrap();
            let shape = m.params.get(i).shape().to_vec();
            *m.params.get_mut(i) = Tensor::zeros(&shape);
        }
        let (steps, responses) = random_steps(&mut rng, 6, 4, 6);
        assert!(m
            .trace(&steps, &responses)
            .unwrap()
            .probs
            .iter()
            .all(|&p| p == 0.5));
    }

    #[test]
    fn rasch_collapse_at_zero_difficulty() {
        let mut m = randomized(small(DecayMode::ContextAware), 10);
        let mu = m.params.find("mu").unwrap();
        *m.params.get_mut(mu) = Tensor::zeros(&[6]);
        let a = [
            Step {
                question: 0,
                concept: 1,
            },
            Step {
                question: 3,
                concept: 2,
            },
            Step {
                question: 1,
                concept: 1,
            },
        ];
        let mut b = a;
        b[2].question = 4;
        b[0].question = 5;
        let r = [1.0, 0.0, 1.0];
        assert_eq!(
            m.trace(&a, &r).unwrap().probs,
            m.trace(&b, &r).unwrap().probs
        );
    }

    #[test]
    fn rasch_penalty_examples() {
        let mut m = AktModel::new(
            AktConfig {
                d_model: 4,
                num_heads: 1,
                ..AktConfig::new(2, 2)
            },
            0,
        )
        .unwrap();
        assert_eq!(m.rasch_penalty(), 0.0);
        let mu = m.params.find("mu").unwrap();
        *m.params.get_mut(mu) = Tensor::vector(vec![1.0, -2.0]).unwrap();
        assert!((m.rasch_penalty() - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn frozen_and_accumulative_agree_on_single_step_suffix() {
        let m = randomized(small(DecayMode::ContextAware), 12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (steps, responses) = random_steps(&mut rng, 7, 4, 6);
        let frozen = m.predict_frozen(&steps, &responses[..6]).unwrap();
        let acc = m
            .predict_accumulative(&steps, &responses[..6], crate::model::Feedback::Binarized)
            .unwrap();
        assert_eq!(frozen, acc);
        let teacher = m.predict_next(&steps, &responses).unwrap();
        assert_eq!(teacher[5], frozen[0]);
    }
}
