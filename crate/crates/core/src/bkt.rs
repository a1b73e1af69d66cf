//! Bayesian knowledge tracing: a two-state hidden Markov model per KC.
//!
//! Filtering follows the Corbett–Anderson recursion: condition the mastery
//! probability on the observed response, then apply the learning transition.
//! Forgetting is fixed at zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{InteractionSequence, Step};
use crate::error::{KtError, Result};
use crate::model::{check_prefix, KnowledgeTracer};

/// Fitted parameters are kept inside `[PARAM_MIN, PARAM_MAX]`.
pub const PARAM_MIN: f64 = 1e-4;
pub const PARAM_MAX: f64 = 1.0 - 1e-4;

pub const EM_TOLERANCE: f64 = 1e-6;
pub const EM_MAX_ITERATIONS: usize = 200;
pub const GRID_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BktParams {
    #[serde(rename = "pL0")]
    pub p_init: f64,
    #[serde(rename = "pT")]
    pub p_learn: f64,
    #[serde(rename = "pS")]
    pub p_slip: f64,
    #[serde(rename = "pG")]
    pub p_guess: f64,
    #[serde(rename = "pF", default)]
    pub p_forget: f64,
}

impl Default for BktParams {
    fn default() -> Self {
        BktParams::new(0.4, 0.1, 0.1, 0.2)
    }
}

impl BktParams {
    pub fn new(p_init: f64, p_learn: f64, p_slip: f64, p_guess: f64) -> Self {
        BktParams {
            p_init,
            p_learn,
            p_slip,
            p_guess,
            p_forget: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pL0", self.p_init),
            ("pT", self.p_learn),
            ("pS", self.p_slip),
            ("pG", self.p_guess),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(KtError::Config(format!(
                    "{name} = {v} is not a probability"
                )));
            }
        }
        if self.p_forget != 0.0 {
            return Err(KtError::Config("pF must be 0 in BKT".into()));
        }
        Ok(())
    }

    /// Slope of [`predict_correct`] in the mastery probability.
    pub fn emission_slope(&self) -> f64 {
        1.0 - self.p_slip - self.p_guess
    }

    fn emission(&self, learned: bool, observed: u8) -> f64 {
        match (learned, observed) {
            (true, 1) => 1.0 - self.p_slip,
            (true, _) => self.p_slip,
            (false, 1) => self.p_guess,
            (false, _) => 1.0 - self.p_guess,
        }
    }
}

/// Probability of a correct response at the given mastery probability.
pub fn predict_correct(params: &BktParams, mastery: f64) -> f64 {
    mastery * (1.0 - params.p_slip) + (1.0 - mastery) * params.p_guess
}

/// Bayes update on one observation followed by the learning transition.
pub fn posterior_update(params: &BktParams, mastery: f64, observed: u8) -> Result<f64> {
    let p_correct = predict_correct(params, mastery);
    let evidence = if observed == 1 {
        p_correct
    } else {
        1.0 - p_correct
    };
    if evidence <= 0.0 {
        return Err(KtError::DegenerateEvidence);
    }
    let conditioned = (mastery * params.emission(true, observed) / evidence).min(1.0);
    Ok((conditioned + (1.0 - conditioned) * params.p_learn).min(1.0))
}

/// Update with a soft observation `y` in `[0, 1]`: the mixture of the two
/// hard updates weighted by `y`.
fn soft_update(params: &BktParams, mastery: f64, y: f64) -> Result<f64> {
    if y == 1.0 {
        posterior_update(params, mastery, 1)
    } else if y == 0.0 {
        posterior_update(params, mastery, 0)
    } else {
        Ok(y * posterior_update(params, mastery, 1)?
            + (1.0 - y) * posterior_update(params, mastery, 0)?)
    }
}

/// Marginal probability of the response sequence under the HMM.
pub fn sequence_likelihood(params: &BktParams, responses: &[u8]) -> Result<f64> {
    if responses.is_empty() {
        return Err(KtError::Contract(
            "sequence_likelihood needs at least one response".into(),
        ));
    }
    Ok(log_likelihood(params, responses).exp())
}

/// Log of [`sequence_likelihood`]; `-inf` if the data is impossible.
pub fn log_likelihood(params: &BktParams, responses: &[u8]) -> f64 {
    let mut mastery = params.p_init;
    let mut ll = 0.0;
    for &obs in responses {
        let p = predict_correct(params, mastery);
        let evidence = if obs == 1 { p } else { 1.0 - p };
        if evidence <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ll += evidence.ln();
        let conditioned = mastery * params.emission(true, obs) / evidence;
        mastery = conditioned + (1.0 - conditioned) * params.p_learn;
    }
    ll
}

fn total_log_likelihood(params: &BktParams, data: &[Vec<u8>]) -> f64 {
    data.iter()
        .filter(|s| !s.is_empty())
        .map(|s| log_likelihood(params, s))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    #[default]
    Em,
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: BktParams,
    /// Training log-likelihood after each iteration (one entry for grid).
    pub log_likelihoods: Vec<f64>,
}

/// Expected sufficient statistics from one E-step.
#[derive(Debug, Default)]
struct Expectations {
    init_learned: f64,
    sequences: f64,
    learn_events: f64,
    unlearned_before_last: f64,
    slips: f64,
    learned_correct: f64,
    guesses: f64,
    unlearned_wrong: f64,
}

fn e_step(params: &BktParams, data: &[Vec<u8>]) -> (Expectations, f64) {
    let mut ex = Expectations::default();
    let mut ll = 0.0;
    let pt = params.p_learn;
    for obs in data.iter().filter(|s| !s.is_empty()) {
        let n = obs.len();
        // Scaled forward pass; alpha[t] = [P(U), P(L)] given o_1..o_t.
        let mut alpha = vec![[0.0f64; 2]; n];
        let mut scale = vec![0.0f64; n];
        let mut prior = [1.0 - params.p_init, params.p_init];
        for t in 0..n {
            let a = [
                prior[0] * params.emission(false, obs[t]),
                prior[1] * params.emission(true, obs[t]),
            ];
            let c = a[0] + a[1];
            scale[t] = c;
            alpha[t] = [a[0] / c, a[1] / c];
            ll += c.ln();
            prior = [alpha[t][0] * (1.0 - pt), alpha[t][0] * pt + alpha[t][1]];
        }
        // Backward pass with the same scaling.
        let mut beta = vec![[1.0f64; 2]; n];
        for t in (0..n.saturating_sub(1)).rev() {
            let bu = params.emission(false, obs[t + 1]) * beta[t + 1][0];
            let bl = params.emission(true, obs[t + 1]) * beta[t + 1][1];
            beta[t] = [
                ((1.0 - pt) * bu + pt * bl) / scale[t + 1],
                bl / scale[t + 1],
            ];
        }
        for t in 0..n {
            let gu = alpha[t][0] * beta[t][0];
            let gl = alpha[t][1] * beta[t][1];
            let norm = gu + gl;
            let (gu, gl) = (gu / norm, gl / norm);
            if t == 0 {
                ex.init_learned += gl;
                ex.sequences += 1.0;
            }
            if obs[t] == 1 {
                ex.learned_correct += gl;
                ex.guesses += gu;
            } else {
                ex.slips += gl;
                ex.unlearned_wrong += gu;
            }
            if t + 1 < n {
                ex.unlearned_before_last += gu;
                let xi_ul = alpha[t][0] * pt * params.emission(true, obs[t + 1]) * beta[t + 1][1]
                    / scale[t + 1];
                ex.learn_events += xi_ul;
            }
        }
    }
    (ex, ll)
}

fn clamp_param(v: f64) -> f64 {
    v.clamp(PARAM_MIN, PARAM_MAX)
}

/// Maximizes `a ln x + b ln(1 - x)` over the box.
fn binomial_mle(a: f64, b: f64, fallback: f64) -> f64 {
    if a + b <= 0.0 {
        fallback
    } else {
        clamp_param(a / (a + b))
    }
}

/// Largest admissible `pS + pG`.
const IDENTIFIABILITY_BOUND: f64 = 1.0 - PARAM_MIN;

/// Maximizes the slip/guess part of the expected log-likelihood subject to
/// the box and `pS + pG <= IDENTIFIABILITY_BOUND`.
fn emission_m_step(ex: &Expectations, prev: &BktParams) -> (f64, f64) {
    let (a1, b1) = (ex.slips, ex.learned_correct);
    let (a2, b2) = (ex.guesses, ex.unlearned_wrong);
    let slip = binomial_mle(a1, b1, prev.p_slip);
    let guess = binomial_mle(a2, b2, prev.p_guess);
    if slip + guess <= IDENTIFIABILITY_BOUND {
        return (slip, guess);
    }
    // The objective is concave, so the constrained optimum lies on the line
    // slip + guess = c; bisect on its derivative.
    let c = IDENTIFIABILITY_BOUND;
    let lo0 = PARAM_MIN.max(c - PARAM_MAX);
    let hi0 = PARAM_MAX.min(c - PARAM_MIN);
    let deriv = |s: f64| a1 / s - b1 / (1.0 - s) - a2 / (c - s) + b2 / (1.0 - c + s);
    let (mut lo, mut hi) = (lo0, hi0);
    if deriv(lo) <= 0.0 {
        return (lo, c - lo);
    }
    if deriv(hi) >= 0.0 {
        return (hi, c - hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    (s, c - s)
}

fn project(params: BktParams) -> BktParams {
    let mut p = BktParams::new(
        clamp_param(params.p_init),
        clamp_param(params.p_learn),
        clamp_param(params.p_slip),
        clamp_param(params.p_guess),
    );
    if p.p_slip + p.p_guess > IDENTIFIABILITY_BOUND {
        let excess = p.p_slip + p.p_guess - IDENTIFIABILITY_BOUND;
        p.p_slip = (p.p_slip - excess / 2.0).max(PARAM_MIN);
        p.p_guess = IDENTIFIABILITY_BOUND - p.p_slip;
    }
    p
}

/// Expectation-maximization from `init`. Each M-step maximizes the expected
/// complete-data log-likelihood inside the admissible region, so the training
/// log-likelihood never decreases.
pub fn fit_em(data: &[Vec<u8>], init: BktParams) -> Result<FitReport> {
    if data.iter().all(Vec::is_empty) {
        return Err(KtError::InsufficientData(
            "no observations for this KC".into(),
        ));
    }
    let mut params = project(init);
    let mut history = vec![total_log_likelihood(&params, data)];
    for _ in 0..EM_MAX_ITERATIONS {
        let (ex, _) = e_step(&params, data);
        let (p_slip, p_guess) = emission_m_step(&ex, &params);
        let next = BktParams::new(
            binomial_mle(
                ex.init_learned,
                ex.sequences - ex.init_learned,
                params.p_init,
            ),
            binomial_mle(
                ex.learn_events,
                ex.unlearned_before_last - ex.learn_events,
                params.p_learn,
            ),
            p_slip,
            p_guess,
        );
        let ll = total_log_likelihood(&next, data);
        let prev = *history.last().expect("non-empty");
        let slack = 1e-9 * prev.abs().max(1.0);
        assert!(
            ll >= prev - slack,
            "EM log-likelihood decreased: {prev} -> {ll}"
        );
        params = next;
        history.push(ll);
        if ll - prev < EM_TOLERANCE {
            break;
        }
    }
    Ok(FitReport {
        params,
        log_likelihoods: history,
    })
}

/// Exhaustive search over the `GRID_STEP` lattice in `(0, 1)` with
/// `pS + pG < 1`.
pub fn fit_grid(data: &[Vec<u8>]) -> Result<FitReport> {
    if data.iter().all(Vec::is_empty) {
        return Err(KtError::InsufficientData(
            "no observations for this KC".into(),
        ));
    }
    let steps = (1.0 / GRID_STEP).round() as usize;
    let lattice: Vec<f64> = (1..steps).map(|k| k as f64 * GRID_STEP).collect();
    let mut best = (f64::NEG_INFINITY, BktParams::default());
    for &pi in &lattice {
        for &pt in &lattice {
            for &ps in &lattice {
                for &pg in &lattice {
                    if ps + pg >= 1.0 - 1e-12 {
                        continue;
                    }
                    let cand = BktParams::new(pi, pt, ps, pg);
                    let ll = total_log_likelihood(&cand, data);
                    if ll > best.0 {
                        best = (ll, cand);
                    }
                }
            }
        }
    }
    Ok(FitReport {
        params: project(best.1),
        log_likelihoods: vec![best.0],
    })
}

pub fn fit(data: &[Vec<u8>], method: FitMethod) -> Result<FitReport> {
    match method {
        FitMethod::Em => fit_em(data, BktParams::default()),
        FitMethod::Grid => fit_grid(data),
    }
}

/// Per-student response subsequences of each KC, over the observed
/// positions of every sequence.
pub fn group_by_kc(sequences: &[InteractionSequence]) -> BTreeMap<usize, Vec<Vec<u8>>> {
    let mut groups: BTreeMap<usize, Vec<Vec<u8>>> = BTreeMap::new();
    for s in sequences {
        let mut per_seq: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
        for i in 0..s.known_len() {
            per_seq
                .entry(s.concepts[i] as usize)
                .or_default()
                .push(s.responses[i] as u8);
        }
        for (kc, obs) in per_seq {
            groups.entry(kc).or_default().push(obs);
        }
    }
    groups
}

/// One BKT per KC, with pooled parameters for KCs unseen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BktModel {
    pub default: BktParams,
    pub kcs: BTreeMap<usize, BktParams>,
}

impl BktModel {
    pub fn fit(sequences: &[InteractionSequence], method: FitMethod) -> Result<Self> {
        let groups = group_by_kc(sequences);
        if groups.is_empty() {
            return Err(KtError::InsufficientData("no observed responses".into()));
        }
        let pooled: Vec<Vec<u8>> = groups.values().flatten().cloned().collect();
        let default = fit(&pooled, method)?.params;
        let mut kcs = BTreeMap::new();
        for (kc, data) in &groups {
            kcs.insert(*kc, fit(data, method)?.params);
        }
        Ok(BktModel { default, kcs })
    }

    pub fn params(&self, kc: usize) -> &BktParams {
        self.kcs.get(&kc).unwrap_or(&self.default)
    }

    fn mastery<'a>(&self, state: &'a mut BTreeMap<usize, f64>, kc: usize) -> &'a mut f64 {
        state.entry(kc).or_insert(self.params(kc).p_init)
    }

    /// Filtered mastery per KC after the given observations.
    fn filter(&self, steps: &[Step], responses: &[f64]) -> Result<BTreeMap<usize, f64>> {
        let mut state = BTreeMap::new();
        for (step, &y) in steps.iter().zip(responses) {
            let params = *self.params(step.concept);
            let m = self.mastery(&mut state, step.concept);
            *m = soft_update(&params, *m, y)?;
        }
        Ok(state)
    }
}

impl KnowledgeTracer for BktModel {
    fn predict_next(&self, steps: &[Step], responses: &[f64]) -> Result<Vec<f64>> {
        let mut state = BTreeMap::new();
        let mut out = Vec::with_capacity(steps.len().saturating_sub(1));
        for (t, step) in steps.iter().enumerate() {
            let params = *self.params(step.concept);
            let m = self.mastery(&mut state, step.concept);
            if t > 0 {
                out.push(predict_correct(&params, *m));
            }
            if t + 1 < steps.len() {
                *m = soft_update(&params, *m, responses[t])?;
            }
        }
        Ok(out)
    }

    fn predict_frozen(&self, steps: &[Step], prefix: &[f64]) -> Result<Vec<f64>> {
        check_prefix(steps, prefix)?;
        let mut state = self.filter(&steps[..prefix.len()], prefix)?;
        Ok(steps[prefix.len()..]
            .iter()
            .map(|s| {
                let params = *self.params(s.concept);
                predict_correct(&params, *self.mastery(&mut state, s.concept))
            })
            .collect())
    }

    fn predict_accumulative(
        &self,
        steps: &[Step],
        prefix: &[f64],
        feedback: crate::model::Feedback,
    ) -> Result<Vec<f64>> {
        check_prefix(steps, prefix)?;
        let mut state = self.filter(&steps[..prefix.len()], prefix)?;
        let mut out = Vec::with_capacity(steps.len() - prefix.len());
        for s in &steps[prefix.len()..] {
            let params = *self.params(s.concept);
            let m = self.mastery(&mut state, s.concept);
            let p = predict_correct(&params, *m);
            out.push(p);
            *m = soft_update(&params, *m, crate::model::feedback_value(p, feedback))?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sum over all 2^n hidden mastery paths of the joint probability.
    fn enumerate_likelihood(p: &BktParams, obs: &[u8]) -> f64 {
        let n = obs.len();
        let mut total = 0.0;
        for path in 0u32..(1 << n) {
            let learned = |t: usize| path >> t & 1 == 1;
            let mut prob = if learned(0) { p.p_init } else { 1.0 - p.p_init };
            for t in 0..n {
                if t > 0 {
                    prob *= match (learned(t - 1), learned(t)) {
                        (false, false) => 1.0 - p.p_learn,
                        (false, true) => p.p_learn,
                        (true, true) => 1.0,
                        (true, false) => 0.0,
                    };
                }
                prob *= p.emission(learned(t), obs[t]);
            }
            total += prob;
        }
        total
    }

    fn example() -> BktParams {
        BktParams::new(0.5, 0.2, 0.1, 0.2)
    }

    #[test]
    fn first_step_prediction() {
        assert!((predict_correct(&example(), 0.5) - 0.55).abs() < 1e-15);
        let p = BktParams::new(0.3, 0.2, 0.0, 0.0);
        assert_eq!(predict_correct(&p, 0.37), 0.37);
        let p = BktParams::new(0.3, 0.2, 0.5, 0.5);
        for m in [0.0, 0.2, 1.0] {
            assert_eq!(predict_correct(&p, m), 0.5);
        }
    }

    #[test]
    fn posterior_update_examples() {
        let m = posterior_update(&example(), 0.5, 1).unwrap();
        let conditioned = 0.45 / 0.55;
        assert!((m - (conditioned + (1.0 - conditioned) * 0.2)).abs() < 1e-15);
        assert!((m - 0.854545).abs() < 1e-6);

        let flat = BktParams::new(0.5, 0.0, 0.5, 0.5);
        assert_eq!(posterior_update(&flat, 0.3, 1).unwrap(), 0.3);
        assert_eq!(posterior_update(&example(), 1.0, 0).unwrap(), 1.0);
        assert_eq!(posterior_update(&example(), 1.0, 1).unwrap(), 1.0);

        let no_guess = BktParams::new(0.5, 0.2, 0.1, 0.0);
        assert!(matches!(
            posterior_update(&no_guess, 0.0, 1),
            Err(KtError::DegenerateEvidence)
        ));
    }

    #[test]
    fn likelihood_examples() {
        let p = example();
        assert!((sequence_likelihood(&p, &[1]).unwrap() - 0.55).abs() < 1e-15);
        let two = sequence_likelihood(&p, &[1, 1]).unwrap();
        assert!((two - enumerate_likelihood(&p, &[1, 1])).abs() < 1e-15);
        // Paths (L,L), (U,L), (U,U): 0.405 + 0.018 + 0.016.
        assert!((two - 0.439).abs() < 1e-12);
        let flat = BktParams::new(0.3, 0.4, 0.5, 0.5);
        assert!(
            (sequence_likelihood(&flat, &[1, 0, 0, 1, 1]).unwrap() - 0.5f64.powi(5)).abs() < 1e-15
        );
        assert!(sequence_likelihood(&p, &[]).is_err());
    }

    #[test]
    fn likelihood_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = BktParams::new(
                rng.gen(),
                rng.gen(),
                rng.gen_range(0.0..0.5),
                rng.gen_range(0.0..0.5),
            );
            let n = rng.gen_range(1..=8);
            let obs: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let a = sequence_likelihood(&p, &obs).unwrap();
            let b = enumerate_likelihood(&p, &obs);
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    fn simulate(p: &BktParams, students: usize, steps: usize, seed: u64) -> Vec<Vec<u8>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..students)
            .map(|_| {
                let mut learned = rng.gen::<f64>() < p.p_init;
                (0..steps)
                    .map(|_| {
                        let correct = if learned {
                            rng.gen::<f64>() >= p.p_slip
                        } else {
                            rng.gen::<f64>() < p.p_guess
                        };
                        if !learned && rng.gen::<f64>() < p.p_learn {
                            learned = true;
                        }
                        u8::from(correct)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn em_recovers_generating_parameters() {
        let truth = BktParams::new(0.3, 0.25, 0.1, 0.15);
        let data = simulate(&truth, 500, 20, 17);
        let report = fit_em(&data, BktParams::default()).unwrap();
        let p = report.params;
        for (a, b) in [
            (p.p_init, truth.p_init),
            (p.p_learn, truth.p_learn),
            (p.p_slip, truth.p_slip),
            (p.p_guess, truth.p_guess),
        ] {
            assert!((a - b).abs() <= 0.05, "{p:?}");
        }
        for w in report.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
    }

    #[test]
    fn grid_lands_near_em_on_small_data() {
        let truth = BktParams::new(0.3, 0.25, 0.1, 0.15);
        let data = simulate(&truth, 60, 10, 5);
        let grid = fit_grid(&data).unwrap();
        let em = fit_em(&data, BktParams::default()).unwrap();
        assert!(grid.params.p_slip + grid.params.p_guess < 1.0);
        assert!(em.log_likelihoods.last().unwrap() + 1e-6 >= grid.log_likelihoods[0] - 0.5);
    }

    #[test]
    fn degenerate_inputs() {
        let all_correct = vec![vec![1u8; 15]; 40];
        let p = fit_em(&all_correct, BktParams::default()).unwrap().params;
        for v in [p.p_init, p.p_learn, p.p_slip, p.p_guess] {
            assert!((PARAM_MIN..=PARAM_MAX).contains(&v));
        }
        assert!(p.p_slip + p.p_guess < 1.0);
        assert!(p.p_slip < 0.01);

        let single = fit_em(&[vec![0]], BktParams::default()).unwrap().params;
        single.validate().unwrap();
        assert!(single.p_slip + single.p_guess < 1.0);

        assert!(matches!(
            fit_em(&[], BktParams::default()),
            Err(KtError::InsufficientData(_))
        ));
        assert!(matches!(
            fit_grid(&[vec![]]),
            Err(KtError::InsufficientData(_))
        ));
    }

    #[test]
    fn serializes_with_conventional_names() {
        let json = serde_json::to_string(&example()).unwrap();
        assert!(json.contains("\"pL0\":0.5") && json.contains("\"pF\":0.0"));
    }

    proptest! {
        #[test]
        fn prediction_is_affine_in_mastery(
            ps in 0.0f64..1.0, pg in 0.0f64..1.0, m1 in 0.0f64..1.0, m2 in 0.0f64..1.0,
        ) {
            let p = BktParams::new(0.5, 0.1, ps, pg);
            let slope = p.emission_slope();
            let d = predict_correct(&p, m2) - predict_correct(&p, m1);
            prop_assert!((d - slope * (m2 - m1)).abs() < 1e-12);
            prop_assert_eq!(slope > 0.0, ps + pg < 1.0);
        }

        #[test]
        fn mastery_grows_with_consecutive_correct(
            pi in 0.0f64..1.0, pt in 0.01f64..1.0, ps in 0.0f64..0.5, pg in 0.0f64..0.49, n in 1usize..30,
        ) {
            let p = BktParams::new(pi, pt, ps, pg);
            let mut m = pi;
            for _ in 0..n {
                let next = posterior_update(&p, m, 1).unwrap();
                prop_assert!(next >= m - 1e-15);
                m = next;
            }
        }
    }
}
