//! Synthetic students with known dynamics: per-KC BKT parameters, hard
//! prerequisite gates and per-step forgetting of unpracticed KCs.
//!
//! Each step a student attempts one uniformly chosen question. The response
//! is correct when every KC of the question independently emits a correct
//! answer (`1 - pS` if mastered, `pG` otherwise). Then, from the state
//! before the step, a practiced unmastered KC becomes mastered with
//! probability `pT` provided all its prerequisites are mastered, and an
//! unpracticed mastered KC stays mastered with probability `decay`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bkt::{BktModel, BktParams};
use crate::data::{
    expand_to_kc_level, truncate_and_pad, write_test, write_train_valid, IdMap, IdMaps,
    InteractionSequence, QuestionBank, QuestionInfo, QuestionSequence, Step, KEYID_FILE,
    QUESTIONS_FILE, TEST_FILE, TRAIN_FILE, WINDOW,
};
use crate::error::{KtError, Result};
use crate::evaluation::{auc, fill_set, hide_suffix, predict_fills, Granularity, Mode};
use crate::model::{check_prefix, feedback_value, Feedback, KnowledgeTracer};
use crate::training::NUM_FOLDS;

pub const TRUTH_VERSION: u32 = 1;
pub const TRUTH_FILE: &str = "ground_truth.json";
/// Largest KC count the exact joint filter accepts (it tracks `2^K` states).
pub const MAX_FILTER_KCS: usize = 12;

const BASE_TIME_MS: i64 = 1_600_000_000_000;
const STEP_MS: i64 = 60_000;
/// RNG stream reserved for the label shuffle; students use streams `0..`.
const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KcTruth {
    #[serde(default)]
    pub name: String,
    pub params: BktParams,
    /// Per-step probability that an unpracticed mastered KC stays mastered.
    pub decay: f64,
}

fn truth_version() -> u32 {
    TRUTH_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(default = "truth_version")]
    pub version: u32,
    pub kcs: Vec<KcTruth>,
    /// Edges `(u, v)`: `u` must be mastered before `v` can be learned.
    #[serde(default)]
    pub prerequisites: Vec<(usize, usize)>,
    /// KC set of every question.
    pub questions: Vec<Vec<usize>>,
    pub train_students: usize,
    pub test_students: usize,
    /// Questions attempted per student.
    pub steps: usize,
    pub seed: u64,
    /// Replace the responses by a random permutation of all of them.
    #[serde(default)]
    pub shuffle_labels: bool,
}

impl GroundTruth {
    /// Four KCs, twelve single-KC questions and the prerequisite graph
    /// {0→2, 0→3, 1→3}; KC 0 forgets fastest and KC 3 slowest.
    pub fn default_scenario() -> Self {
        let kc = |name: &str, p: (f64, f64, f64, f64), decay: f64| KcTruth {
            name: name.to_string(),
            params: BktParams::new(p.0, p.1, p.2, p.3),
            decay,
        };
        GroundTruth {
            version: TRUTH_VERSION,
            kcs: vec![
                kc("equality", (0.40, 0.08, 0.05, 0.15), 0.97),
                kc("inequality", (0.45, 0.10, 0.05, 0.10), 0.98),
                kc("plane_vector", (0.35, 0.10, 0.08, 0.12), 0.99),
                kc("probability", (0.30, 0.12, 0.06, 0.10), 0.995),
            ],
            prerequisites: vec![(0, 2), (0, 3), (1, 3)],
            questions: (0..12).map(|q| vec![q / 3]).collect(),
            train_students: 2000,
            test_students: 500,
            steps: 50,
            seed: 2023,
            shuffle_labels: false,
        }
    }

    /// The same students with no prerequisites and no forgetting, so that
    /// every KC follows plain BKT.
    pub fn without_structure(&self) -> Self {
        let mut gt = self.clone();
        gt.prerequisites.clear();
        gt.kcs.iter_mut().for_each(|k| k.decay = 1.0);
        gt
    }

    pub fn num_kcs(&self) -> usize {
        self.kcs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KtError::Validation(m));
        if self.version != TRUTH_VERSION {
            return bad(format!(
                "ground truth version {} is not supported",
                self.version
            ));
        }
        if self.kcs.is_empty() || self.questions.is_empty() {
            return bad("at least one KC and one question are required".into());
        }
        for (k, kc) in self.kcs.iter().enumerate() {
            kc.params
                .validate()
                .map_err(|e| KtError::Validation(format!("KC {k}: {e}")))?;
            if !(kc.decay > 0.0 && kc.decay <= 1.0) {
                return bad(format!("KC {k}: decay {} is outside (0, 1]", kc.decay));
            }
        }
        let k = self.num_kcs();
        for &(u, v) in &self.prerequisites {
            if u >= k || v >= k || u == v {
                return bad(format!("invalid prerequisite edge {u} -> {v}"));
            }
        }
        for (q, kcs) in self.questions.iter().enumerate() {
            let distinct: BTreeSet<usize> = kcs.iter().copied().collect();
            if kcs.is_empty() || distinct.len() != kcs.len() || kcs.iter().any(|&c| c >= k) {
                return bad(format!(
                    "question {q} needs distinct valid KCs, got {kcs:?}"
                ));
            }
        }
        if self.steps < 2 || self.train_students == 0 {
            return bad("need at least 2 steps and 1 training student".into());
        }
        self.topological_order().map(|_| ())
    }

    /// KCs ordered so that every prerequisite precedes its dependents.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let k = self.num_kcs();
        let mut indegree = vec![0usize; k];
        for &(_, v) in &self.prerequisites {
            indegree[v] += 1;
        }
        let mut ready: Vec<usize> = (0..k).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(k);
        while let Some(u) = ready.pop() {
            order.push(u);
            for &(a, b) in &self.prerequisites {
                if a == u {
                    indegree[b] -= 1;
                    if indegree[b] == 0 {
                        ready.push(b);
                    }
                }
            }
        }
        if order.len() != k {
            return Err(KtError::Validation("prerequisite graph has a cycle".into()));
        }
        Ok(order)
    }

    fn prerequisite_masks(&self) -> Vec<usize> {
        let mut masks = vec![0usize; self.num_kcs()];
        for &(u, v) in &self.prerequisites {
            masks[v] |= 1 << u;
        }
        masks
    }

    fn question_id(q: usize) -> String {
        (1000 + q).to_string()
    }

    fn kc_id(k: usize) -> String {
        (100 + k).to_string()
    }

    pub fn id_maps(&self) -> IdMaps {
        let students = self.train_students + self.test_students;
        IdMaps {
            questions: IdMap::from_ordered((0..self.questions.len()).map(Self::question_id)),
            concepts: IdMap::from_ordered((0..self.num_kcs()).map(Self::kc_id)),
            users: IdMap::from_ordered((0..students).map(|u| u.to_string())),
        }
    }

    pub fn question_bank(&self) -> QuestionBank {
        QuestionBank::from_infos(
            self.questions
                .iter()
                .map(|kcs| QuestionInfo::with_kcs(kcs.clone()))
                .collect(),
        )
    }
}

/// One simulated student at question level.
fn simulate_student(
    gt: &GroundTruth,
    masks: &[usize],
    uid: usize,
    rng: &mut ChaCha8Rng,
) -> QuestionSequence {
    let k = gt.num_kcs();
    let mut mastered: Vec<bool> = gt
        .kcs
        .iter()
        .map(|kc| rng.gen::<f64>() < kc.params.p_init)
        .collect();
    let mut seq = QuestionSequence {
        uid,
        fold: None,
        questions: Vec::with_capacity(gt.steps),
        responses: Vec::with_capacity(gt.steps),
        timestamps: Vec::with_capacity(gt.steps),
    };
    for t in 0..gt.steps {
        let q = rng.gen_range(0..gt.questions.len());
        let kcs = &gt.questions[q];
        let mut correct = true;
        for &c in kcs {
            let p = &gt.kcs[c].params;
            let emit = if mastered[c] {
                1.0 - p.p_slip
            } else {
                p.p_guess
            };
            correct &= rng.gen::<f64>() < emit;
        }
        seq.questions.push(q);
        seq.responses.push(i8::from(correct));
        seq.timestamps.push(BASE_TIME_MS + t as i64 * STEP_MS);
        let state: usize = (0..k).filter(|&c| mastered[c]).map(|c| 1 << c).sum();
        for c in 0..k {
            let draw = rng.gen::<f64>();
            mastered[c] = if kcs.contains(&c) {
                mastered[c] || (state & masks[c] == masks[c] && draw < gt.kcs[c].params.p_learn)
            } else {
                mastered[c] && draw < gt.kcs[c].decay
            };
        }
    }
    seq
}

/// Counts of the emitted training file, tallied during generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCounts {
    pub train_students: usize,
    pub test_students: usize,
    pub train_rows: usize,
    pub questions: usize,
    pub kcs: usize,
    pub interactions: usize,
    pub kc_interactions: usize,
    pub mean_length: f64,
    pub positive_rate: f64,
}

/// Everything needed to score generated test files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub ground_truth: GroundTruth,
    pub counts: SynthCounts,
    /// Complete KC-level responses of each test row, in file order.
    pub test_labels: Vec<Vec<i8>>,
}

impl SynthTruth {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| KtError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Copies of `tests` with their hidden responses restored.
    pub fn labelled(&self, tests: &[InteractionSequence]) -> Result<Vec<InteractionSequence>> {
        if tests.len() != self.test_labels.len() {
            return Err(KtError::Completeness(format!(
                "{} test rows but {} label rows",
                tests.len(),
                self.test_labels.len()
            )));
        }
        tests
            .iter()
            .zip(&self.test_labels)
            .map(|(t, labels)| {
                if labels.len() != t.len() {
                    return Err(KtError::Completeness(format!(
                        "uid {}: label length mismatch",
                        t.uid
                    )));
                }
                let mut s = t.clone();
                s.responses = labels.clone();
                Ok(s)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    /// Training rows, windowed and padded, with folds.
    pub train: Vec<InteractionSequence>,
    /// Test rows with the hidden suffix set to -1.
    pub test: Vec<InteractionSequence>,
    pub maps: IdMaps,
    pub bank: QuestionBank,
    pub truth: SynthTruth,
}

pub fn generate(gt: &GroundTruth) -> Result<Generated> {
    gt.validate()?;
    let masks = gt.prerequisite_masks();
    let bank = gt.question_bank();
    let total = gt.train_students + gt.test_students;
    let mut students: Vec<QuestionSequence> = (0..total)
        .map(|uid| {
            let mut rng = ChaCha8Rng::seed_from_u64(gt.seed);
            rng.set_stream(uid as u64);
            simulate_student(gt, &masks, uid, &mut rng)
        })
        .collect();
    if gt.shuffle_labels {
        let mut pool: Vec<i8> = students
            .iter()
            .flat_map(|s| s.responses.iter().copied())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(gt.seed);
        rng.set_stream(SHUFFLE_STREAM);
        pool.shuffle(&mut rng);
        let mut it = pool.into_iter();
        for s in &mut students {
            s.responses
                .iter_mut()
                .for_each(|r| *r = it.next().expect("pool covers every response"));
        }
    }

    let mut train = Vec::new();
    let mut questions = BTreeSet::new();
    let mut kcs = BTreeSet::new();
    let (mut interactions, mut kc_interactions, mut positives) = (0, 0, 0);
    for s in &mut students[..gt.train_students] {
        s.fold = Some((s.uid % NUM_FOLDS as usize) as u8);
        for (&q, &r) in s.questions.iter().zip(&s.responses) {
            questions.insert(q);
            kcs.extend(gt.questions[q].iter().copied());
            interactions += 1;
            kc_interactions += gt.questions[q].len();
            positives += usize::from(r == 1);
        }
        train.extend(truncate_and_pad(&expand_to_kc_level(s, &bank)?, WINDOW)?);
    }

    let mut test = Vec::with_capacity(gt.test_students);
    let mut test_labels = Vec::with_capacity(gt.test_students);
    for s in &students[gt.train_students..] {
        let full = expand_to_kc_level(s, &bank)?;
        test.push(hide_suffix(&full).expect("at least two questions per student"));
        test_labels.push(full.responses);
    }

    let counts = SynthCounts {
        train_students: gt.train_students,
        test_students: gt.test_students,
        train_rows: train.len(),
        questions: questions.len(),
        kcs: kcs.len(),
        interactions,
        kc_interactions,
        mean_length: interactions as f64 / gt.train_students as f64,
        positive_rate: positives as f64 / interactions as f64,
    };
    Ok(Generated {
        train,
        test,
        maps: gt.id_maps(),
        bank,
        truth: SynthTruth {
            ground_truth: gt.clone(),
            counts,
            test_labels,
        },
    })
}

impl Generated {
    /// Writes the four data files and the ground truth into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| KtError::io(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            fs::File::create(&path).map_err(|e| KtError::io(path, e))
        };
        write_train_valid(std::io::BufWriter::new(create(TRAIN_FILE)?), &self.train)?;
        write_test(std::io::BufWriter::new(create(TEST_FILE)?), &self.test)?;
        let put = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| KtError::io(path, e))
        };
        put(KEYID_FILE, self.maps.to_json_string())?;
        put(QUESTIONS_FILE, self.bank.to_json_string(&self.maps)?)?;
        put(TRUTH_FILE, serde_json::to_string_pretty(&self.truth)?)
    }
}

/// Exact filter over the joint mastery of all KCs under the generator's own
/// dynamics: the Bayes-optimal predictor for generated data. The positions
/// of one multi-KC question share one prediction, made before its response.
#[derive(Debug, Clone)]
pub struct BayesFilter {
    truth: GroundTruth,
    /// Dependents before their prerequisites.
    order: Vec<usize>,
    masks: Vec<usize>,
}

impl BayesFilter {
    pub fn new(truth: &GroundTruth) -> Result<Self> {
        truth.validate()?;
        if truth.num_kcs() > MAX_FILTER_KCS {
            return Err(KtError::Config(format!(
                "exact filter supports at most {MAX_FILTER_KCS} KCs, got {}",
                truth.num_kcs()
            )));
        }
        let mut order = truth.topological_order()?;
        order.reverse();
        Ok(BayesFilter {
            truth: truth.clone(),
            order,
            masks: truth.prerequisite_masks(),
        })
    }

    fn prior(&self) -> Vec<f64> {
        let k = self.truth.num_kcs();
        (0..1usize << k)
            .map(|s| {
                (0..k)
                    .map(|c| {
                        let p = self.truth.kcs[c].params.p_init;
                        if s >> c & 1 == 1 {
                            p
                        } else {
                            1.0 - p
                        }
                    })
                    .product()
            })
            .collect()
    }

    fn correct_given(&self, state: usize, kcs: &[usize]) -> f64 {
        kcs.iter()
            .map(|&c| {
                let p = &self.truth.kcs[c].params;
                if state >> c & 1 == 1 {
                    1.0 - p.p_slip
                } else {
                    p.p_guess
                }
            })
            .product()
    }

    fn predict(&self, dist: &[f64], kcs: &[usize]) -> f64 {
        dist.iter()
            .enumerate()
            .map(|(s, &w)| w * self.correct_given(s, kcs))
            .sum()
    }

    /// Conditions on a (possibly soft) response `y`.
    fn observe(&self, dist: &mut [f64], kcs: &[usize], y: f64) -> Result<()> {
        for (s, w) in dist.iter_mut().enumerate() {
            let p = self.correct_given(s, kcs);
            *w *= y * p + (1.0 - y) * (1.0 - p);
        }
        let z: f64 = dist.iter().sum();
        if !(z > 0.0) {
            return Err(KtError::DegenerateEvidence);
        }
        dist.iter_mut().for_each(|w| *w /= z);
        Ok(())
    }

    /// Applies one step of learning and forgetting. Each KC's move reads only
    /// its own bit and its prerequisites' bits, and prerequisites are moved
    /// after their dependents, so every gate sees the pre-step state.
    fn advance(&self, dist: &mut [f64], kcs: &[usize]) {
        for &c in &self.order {
            let bit = 1usize << c;
            let kc = &self.truth.kcs[c];
            if kcs.contains(&c) {
                let mask = self.masks[c];
                for s in (0..dist.len()).filter(|s| s & bit == 0 && s & mask == mask) {
                    let moved = dist[s] * kc.params.p_learn;
                    dist[s] -= moved;
                    dist[s | bit] += moved;
                }
            } else if kc.decay < 1.0 {
                for s in (0..dist.len()).filter(|s| s & bit != 0) {
                    let moved = dist[s] * (1.0 - kc.decay);
                    dist[s] -= moved;
                    dist[s & !bit] += moved;
                }
            }
        }
    }

    /// Splits KC-level steps into questions: `(start, kcs)`.
    fn events<'a>(&'a self, steps: &[Step]) -> Result<Vec<(usize, &'a [usize])>> {
        let mut events = Vec::new();
        let mut i = 0;
        while i < steps.len() {
            let kcs = self
                .truth
                .questions
                .get(steps[i].question)
                .ok_or(KtError::Index {
                    what: "question",
                    index: steps[i].question,
                    size: self.truth.questions.len(),
                })?;
            let end = (i + kcs.len()).min(steps.len());
            let matches = steps[i..end]
                .iter()
                .zip(kcs)
                .all(|(s, &c)| s.question == steps[i].question && s.concept == c);
            if !matches {
                return Err(KtError::Data(format!(
                    "steps at {i} do not follow the KC list of question {}",
                    steps[i].question
                )));
            }
            events.push((i, kcs.as_slice()));
            i = end;
        }
        Ok(events)
    }

    /// Predictions for every position. A question is conditioned on
    /// `known[start]` when available, otherwise on its own prediction if
    /// `fill` is set, otherwise only advanced in time.
    fn run(&self, steps: &[Step], known: &[f64], fill: Option<Feedback>) -> Result<Vec<f64>> {
        let mut dist = self.prior();
        let mut out = vec![0.0; steps.len()];
        for (start, kcs) in self.events(steps)? {
            let p = self.predict(&dist, kcs);
            for o in &mut out[start..(start + kcs.len()).min(steps.len())] {
                *o = p;
            }
            match (known.get(start), fill) {
                (Some(&y), _) => self.observe(&mut dist, kcs, y)?,
                (None, Some(fb)) => self.observe(&mut dist, kcs, feedback_value(p, fb))?,
                (None, None) => {}
            }
            self.advance(&mut dist, kcs);
        }
        Ok(out)
    }
}

impl KnowledgeTracer for BayesFilter {
    fn predict_next(&self, steps: &[Step], responses: &[f64]) -> Result<Vec<f64>> {
        if steps.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.run(steps, responses, None)?.split_off(1))
    }

    /// Marginal predictive probabilities given the prefix: the optimal
    /// non-accumulative fill.
    fn predict_frozen(&self, steps: &[Step], prefix: &[f64]) -> Result<Vec<f64>> {
        check_prefix(steps, prefix)?;
        Ok(self.run(steps, prefix, None)?.split_off(prefix.len()))
    }

    fn predict_accumulative(
        &self,
        steps: &[Step],
        prefix: &[f64],
        feedback: Feedback,
    ) -> Result<Vec<f64>> {
        check_prefix(steps, prefix)?;
        Ok(self
            .run(steps, prefix, Some(feedback))?
            .split_off(prefix.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamError {
    pub kc: usize,
    pub p_init: f64,
    pub p_learn: f64,
    pub p_slip: f64,
    pub p_guess: f64,
}

impl ParamError {
    pub fn max(&self) -> f64 {
        self.p_init
            .max(self.p_learn)
            .max(self.p_slip)
            .max(self.p_guess)
    }
}

/// Absolute parameter errors of a fitted BKT model per KC.
pub fn bkt_param_errors(truth: &GroundTruth, fitted: &BktModel) -> Vec<ParamError> {
    truth
        .kcs
        .iter()
        .enumerate()
        .map(|(kc, t)| {
            let f = fitted.params(kc);
            let t = &t.params;
            ParamError {
                kc,
                p_init: (f.p_init - t.p_init).abs(),
                p_learn: (f.p_learn - t.p_learn).abs(),
                p_slip: (f.p_slip - t.p_slip).abs(),
                p_guess: (f.p_guess - t.p_guess).abs(),
            }
        })
        .collect()
}

/// Allowed excess of a model's AUC over the Bayes-optimal AUC.
pub const BAYES_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recoverability {
    pub mode: Mode,
    pub model_auc: f64,
    pub bayes_auc: f64,
    /// `bayes_auc - model_auc`.
    pub gap: f64,
    pub within_bayes_bound: bool,
    pub bkt_errors: Option<Vec<ParamError>>,
}

/// Scores `model` and the generator's own filter on the generated test rows.
pub fn recoverability_report(
    truth: &SynthTruth,
    tests: &[InteractionSequence],
    model: &dyn KnowledgeTracer,
    mode: Mode,
    fitted_bkt: Option<&BktModel>,
) -> Result<Recoverability> {
    let labels = truth.labelled(tests)?;
    let score = |m: &dyn KnowledgeTracer| -> Result<f64> {
        let fills = predict_fills(m, tests, mode, Feedback::Binarized)?;
        let set = fill_set(tests, &labels, &fills, Granularity::Kc)?;
        auc(&set.scores, &set.labels)
    };
    let bayes = BayesFilter::new(&truth.ground_truth)?;
    let bayes_auc = score(&bayes)?;
    let model_auc = score(model)?;
    Ok(Recoverability {
        mode,
        model_auc,
        bayes_auc,
        gap: bayes_auc - model_auc,
        within_bayes_bound: model_auc <= bayes_auc + BAYES_MARGIN,
        bkt_errors: fitted_bkt.map(|f| bkt_param_errors(&truth.ground_truth, f)),
    })
}
