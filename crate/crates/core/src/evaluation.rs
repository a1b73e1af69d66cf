//! Metrics, the known-prefix test protocol and submission files.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::csvio::{join_list, split_list};
use crate::data::InteractionSequence;
use crate::error::{KtError, Result};
use crate::model::{binarize, Feedback, KnowledgeTracer};

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half. Computed from average
/// ranks after one sort.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(KtError::Dimension {
            op: "auc",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(KtError::UndefinedAuc(format!(
            "{positives} positive and {negatives} negative labels"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(KtError::Numeric("NaN score in auc".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives keeps tied half-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean (i + j + 2) / 2.
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += pos_in_tie * (i + j + 2) as u128;
        i = j + 1;
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

/// Fraction of scores whose binarized value equals the label.
pub fn accuracy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(KtError::Dimension {
            op: "accuracy",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| binarize(s) == l)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    NonAccumulative,
    Accumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Kc,
    /// Mean over the KC-expanded positions of each question.
    Question,
}

fn prefix_of(seq: &InteractionSequence) -> Result<Vec<f64>> {
    let known = seq.known_len();
    if known == 0 {
        return Err(KtError::Protocol(format!(
            "uid {}: known prefix is empty",
            seq.uid
        )));
    }
    Ok(seq.responses[..known]
        .iter()
        .map(|&r| f64::from(r))
        .collect())
}

/// Copy of the real part of `seq` with the responses of its second half of
/// questions replaced by -1, as in the challenge test file. `None` when the
/// sequence has fewer than two questions.
pub fn hide_suffix(seq: &InteractionSequence) -> Option<InteractionSequence> {
    let mut out = seq.strip_padding();
    let starts = out.question_starts();
    let known = starts.len() / 2;
    if known == 0 {
        return None;
    }
    for r in &mut out.responses[starts[known]..] {
        *r = -1;
    }
    Some(out)
}

/// Fills every unknown position from the state after the known prefix.
pub fn predict_non_accumulative(
    model: &dyn KnowledgeTracer,
    seq: &InteractionSequence,
) -> Result<Vec<f64>> {
    let prefix = prefix_of(seq)?;
    model.predict_frozen(&seq.steps(), &prefix)
}

/// Fills unknown positions left to right, feeding each prediction back.
pub fn predict_accumulative(
    model: &dyn KnowledgeTracer,
    seq: &InteractionSequence,
    feedback: Feedback,
) -> Result<Vec<f64>> {
    let prefix = prefix_of(seq)?;
    model.predict_accumulative(&seq.steps(), &prefix, feedback)
}

pub fn predict_fills(
    model: &dyn KnowledgeTracer,
    sequences: &[InteractionSequence],
    mode: Mode,
    feedback: Feedback,
) -> Result<Vec<Vec<f64>>> {
    sequences
        .iter()
        .map(|s| match mode {
            Mode::NonAccumulative => predict_non_accumulative(model, s),
            Mode::Accumulative => predict_accumulative(model, s, feedback),
        })
        .collect()
}

/// Pooled predictions with their labels and owners.
#[derive(Debug, Clone, Default)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    /// Index of the owning sequence.
    pub owner: Vec<usize>,
    pub fold: Vec<Option<u8>>,
}

impl ScoredSet {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Adds the positions `start..` of one sequence, aggregating to
    /// questions if requested. `scores[i]` belongs to position `start + i`.
    fn extend(
        &mut self,
        owner: usize,
        seq: &InteractionSequence,
        start: usize,
        scores: &[f64],
        truth: &[i8],
        granularity: Granularity,
    ) -> Result<()> {
        let mut push = |s: f64, label: i8| -> Result<()> {
            let label = u8::try_from(label)
                .ok()
                .filter(|&l| l <= 1)
                .ok_or_else(|| {
                    KtError::Data(format!("uid {}: missing ground-truth label", seq.uid))
                })?;
            self.scores.push(s);
            self.labels.push(label);
            self.owner.push(owner);
            self.fold.push(seq.fold);
            Ok(())
        };
        match granularity {
            Granularity::Kc => {
                for (i, &s) in scores.iter().enumerate() {
                    push(s, truth[start + i])?;
                }
            }
            Granularity::Question => {
                let mut i = 0;
                while i < scores.len() {
                    let mut j = i + 1;
                    while j < scores.len() && seq.is_repeat[start + j] == 1 {
                        j += 1;
                    }
                    let mean = scores[i..j].iter().sum::<f64>() / (j - i) as f64;
                    push(mean, truth[start + i])?;
                    i = j;
                }
            }
        }
        Ok(())
    }
}

/// Teacher-forced next-step predictions over the observed positions `1..` of
/// every sequence.
pub fn teacher_forced_set(
    model: &dyn KnowledgeTracer,
    sequences: &[InteractionSequence],
    granularity: Granularity,
) -> Result<ScoredSet> {
    let mut set = ScoredSet::default();
    for (k, s) in sequences.iter().enumerate() {
        let n = s.known_len();
        if n < 2 {
            continue;
        }
        let steps = s.steps();
        let responses: Vec<f64> = s.responses[..n].iter().map(|&r| f64::from(r)).collect();
        let p = model.predict_next(&steps[..n], &responses)?;
        set.extend(k, s, 1, &p, &s.responses, granularity)?;
    }
    Ok(set)
}

/// Scores test fills against the hidden labels in `truth`, matched to
/// `tests` by position.
pub fn fill_set(
    tests: &[InteractionSequence],
    truth: &[InteractionSequence],
    fills: &[Vec<f64>],
    granularity: Granularity,
) -> Result<ScoredSet> {
    if tests.len() != truth.len() || tests.len() != fills.len() {
        return Err(KtError::Completeness(format!(
            "{} test sequences, {} truth sequences, {} fills",
            tests.len(),
            truth.len(),
            fills.len()
        )));
    }
    let mut set = ScoredSet::default();
    for (k, ((t, g), f)) in tests.iter().zip(truth).zip(fills).enumerate() {
        let known = t.known_len();
        if t.uid != g.uid || g.real_len() != t.real_len() || f.len() != t.real_len() - known {
            return Err(KtError::Completeness(format!(
                "uid {}: fills do not match the sequence",
                t.uid
            )));
        }
        set.extend(k, t, known, f, &g.responses, granularity)?;
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub accuracy: f64,
    pub scored: usize,
    /// Mean per-student AUC over students whose labels contain both classes.
    pub macro_auc: Option<f64>,
    pub macro_students: usize,
}

pub fn metrics(set: &ScoredSet) -> Result<Metrics> {
    let pooled = auc(&set.scores, &set.labels)?;
    let acc = accuracy(&set.scores, &set.labels)?;
    let mut by_owner: BTreeMap<usize, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for i in 0..set.len() {
        let e = by_owner.entry(set.owner[i]).or_default();
        e.0.push(set.scores[i]);
        e.1.push(set.labels[i]);
    }
    let per: Vec<f64> = by_owner
        .values()
        .filter_map(|(s, l)| auc(s, l).ok())
        .collect();
    Ok(Metrics {
        auc: pooled,
        accuracy: acc,
        scored: set.len(),
        macro_auc: (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64),
        macro_students: per.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: u8,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Option<Mode>,
    pub granularity: Granularity,
    pub metrics: Metrics,
    pub per_fold: Vec<FoldMetrics>,
}

pub fn report(set: &ScoredSet, mode: Option<Mode>, granularity: Granularity) -> Result<EvalReport> {
    let mut per_fold = Vec::new();
    let folds: std::collections::BTreeSet<u8> = set.fold.iter().flatten().copied().collect();
    for f in folds {
        let mut sub = ScoredSet::default();
        for i in (0..set.len()).filter(|&i| set.fold[i] == Some(f)) {
            sub.scores.push(set.scores[i]);
            sub.labels.push(set.labels[i]);
            sub.owner.push(set.owner[i]);
            sub.fold.push(set.fold[i]);
        }
        if let Ok(m) = metrics(&sub) {
            per_fold.push(FoldMetrics {
                fold: f,
                metrics: m,
            });
        }
    }
    Ok(EvalReport {
        mode,
        granularity,
        metrics: metrics(set)?,
        per_fold,
    })
}

/// Name of the column holding binarized responses in a submission.
pub const BINARIZED_COLUMN: &str = "binarized_responses";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SubmissionSummary {
    pub rows: usize,
    pub filled: usize,
}

/// Per-token fills of one row: the row's response cell may list KC-expanded
/// positions (one token each) or questions (one token per `is_repeat` group,
/// filled with the mean over the group).
fn row_fills(seq: &InteractionSequence, fill: &[f64], tokens: usize) -> Result<Vec<Option<f64>>> {
    let known = seq.known_len();
    let n = seq.real_len();
    if fill.len() != n - known {
        return Err(KtError::Completeness(format!(
            "uid {}: {} fills for {} unknown positions",
            seq.uid,
            fill.len(),
            n - known
        )));
    }
    let at = |i: usize| {
        if i >= known {
            Some(fill[i - known])
        } else {
            None
        }
    };
    if tokens == n {
        return Ok((0..n).map(at).collect());
    }
    let starts = seq.question_starts();
    if tokens != starts.len() {
        return Err(KtError::Data(format!(
            "uid {}: {tokens} response tokens match neither {n} positions nor {} questions",
            seq.uid,
            starts.len()
        )));
    }
    Ok(starts
        .iter()
        .enumerate()
        .map(|(g, &s)| {
            let end = starts.get(g + 1).copied().unwrap_or(n);
            let vals: Vec<f64> = (s..end).filter_map(at).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect())
}

/// Copies the test CSV from `input` to `output`, replacing each `-1`
/// response by its predicted probability and appending a column of
/// binarized responses. `sequences` are the parsed rows of the same input in
/// order. Every other field is copied verbatim.
pub fn write_submission<R: Read, W: Write>(
    input: R,
    output: W,
    sequences: &[InteractionSequence],
    fills: &[Vec<f64>],
) -> Result<SubmissionSummary> {
    if sequences.len() != fills.len() {
        return Err(KtError::Completeness(format!(
            "{} sequences but {} fill lists",
            sequences.len(),
            fills.len()
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let mut writer = csv::Writer::from_writer(output);
    let mut header = reader.headers()?.clone();
    let col = header
        .iter()
        .position(|h| h.trim() == "responses")
        .ok_or_else(|| KtError::Schema("missing required column 'responses'".into()))?;
    header.push_field(BINARIZED_COLUMN);
    writer.write_record(&header)?;
    let mut summary = SubmissionSummary { rows: 0, filled: 0 };
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let seq = sequences.get(row).ok_or_else(|| {
            KtError::Completeness(format!("row {} has no parsed sequence", row + 1))
        })?;
        let tokens: Vec<&str> = split_list(record.get(col).unwrap_or("")).collect();
        let fills_here = row_fills(seq, &fills[row], tokens.len())?;
        let mut replaced = Vec::with_capacity(tokens.len());
        let mut binary = Vec::with_capacity(tokens.len());
        for (tok, fill) in tokens.iter().zip(&fills_here) {
            if *tok == "-1" {
                let p = fill.ok_or_else(|| {
                    KtError::Completeness(format!(
                        "uid {}: unknown response without a fill",
                        seq.uid
                    ))
                })?;
                replaced.push(p.to_string());
                binary.push(binarize(p).to_string());
                summary.filled += 1;
            } else {
                replaced.push(tok.to_string());
                binary.push(tok.to_string());
            }
        }
        let mut out = csv::StringRecord::new();
        for (i, field) in record.iter().enumerate() {
            if i == col {
                out.push_field(&replaced.join(","));
            } else {
                out.push_field(field);
            }
        }
        out.push_field(&binary.join(","));
        writer.write_record(&out)?;
        summary.rows += 1;
    }
    if summary.rows != sequences.len() {
        return Err(KtError::Completeness(format!(
            "{} rows written for {} sequences",
            summary.rows,
            sequences.len()
        )));
    }
    writer
        .flush()
        .map_err(|e| KtError::io(std::path::PathBuf::from("<submission>"), e))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmissionRow {
    pub fields: BTreeMap<String, String>,
    pub responses: Vec<f64>,
    pub binarized: Vec<u8>,
}

pub fn read_submission<R: Read>(input: R) -> Result<Vec<SubmissionRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let fields: BTreeMap<String, String> = header
            .iter()
            .zip(record.iter())
            .map(|(h, v)| (h.trim().to_string(), v.to_string()))
            .collect();
        let parse = |name: &str| -> Result<Vec<f64>> {
            let cell = fields
                .get(name)
                .ok_or_else(|| KtError::Schema(format!("missing required column '{name}'")))?;
            split_list(cell)
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| KtError::Data(format!("bad value '{t}' in {name}")))
                })
                .collect()
        };
        let responses = parse("responses")?;
        let binarized = parse(BINARIZED_COLUMN)?
            .into_iter()
            .map(|v| v as u8)
            .collect();
        rows.push(SubmissionRow {
            fields,
            responses,
            binarized,
        });
    }
    Ok(rows)
}

/// Known prefix plus fills as one response list, for display.
pub fn filled_responses(seq: &InteractionSequence, fill: &[f64]) -> String {
    let known = seq.known_len();
    let mut v: Vec<String> = seq.responses[..known]
        .iter()
        .map(|r| r.to_string())
        .collect();
    v.extend(fill.iter().map(|p| p.to_string()));
    join_list(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bkt::{BktModel, BktParams};
    use crate::data::{read_test, write_test, Step};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::path::Path;

    fn pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.4, 0.6, 0.2], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1]),
            Err(KtError::UndefinedAuc(_))
        ));
    }

    #[test]
    fn auc_equals_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut done = 0;
        while done < 1000 {
            let n = rng.gen_range(2..=200);
            let levels = rng.gen_range(1..=20);
            let scores: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
                .collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            assert_eq!(auc(&scores, &labels).unwrap(), pairwise(&scores, &labels));
            done += 1;
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.2], &[1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.1, 0.8], &[1, 0]).unwrap(), 0.0);
        let scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0];
        let labels = [1, 1, 1, 0, 0, 0, 0, 1, 0, 0];
        // Binarized: 1,1,1,1,1,0,0,0,0,0 -> 7 matches.
        assert!((accuracy(&scores, &labels).unwrap() - 0.7).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn auc_invariances(pairs in proptest::collection::vec((0.0f64..1.0, 0u8..2), 2..100)) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(labels.iter().any(|&l| l == 0) && labels.iter().any(|&l| l == 1));
            let a = auc(&scores, &labels).unwrap();
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            let affine: Vec<f64> = scores.iter().map(|s| 0.1 * s + 0.2).collect();
            prop_assert_eq!(a, auc(&cubed, &labels).unwrap());
            prop_assert_eq!(a, auc(&affine, &labels).unwrap());
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            prop_assert!((a + auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    fn bkt() -> BktModel {
        BktModel {
            default: BktParams::new(0.3, 0.2, 0.1, 0.2),
            kcs: [(0, BktParams::new(0.5, 0.3, 0.05, 0.25))]
                .into_iter()
                .collect(),
        }
    }

    fn test_seq(responses: Vec<i8>) -> InteractionSequence {
        let n = responses.len();
        InteractionSequence::unpadded(
            3,
            None,
            (0..n as i64).collect(),
            (0..n).map(|i| (i % 2) as i64).collect(),
            responses,
            (0..n as i64).collect(),
            vec![0; n],
        )
    }

    #[test]
    fn protocol_counts_and_independence() {
        let m = bkt();
        let s = test_seq(vec![1, 0, 1, -1, -1, -1, -1]);
        let a = predict_non_accumulative(&m, &s).unwrap();
        assert_eq!(a.len(), 4);
        // Frozen state: both suffix predictions of KC 1 agree, as do KC 0's.
        assert_eq!(a[0], a[2]);
        assert_eq!(a[1], a[3]);
        let b = predict_accumulative(&m, &s, Feedback::Binarized).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(
            b,
            predict_accumulative(&m, &s, Feedback::Binarized).unwrap()
        );
        let empty = test_seq(vec![-1, -1]);
        assert!(matches!(
            predict_non_accumulative(&m, &empty),
            Err(KtError::Protocol(_))
        ));
    }

    #[test]
    fn all_mastered_student_fills_ones() {
        let m = BktModel {
            default: BktParams::new(0.999, 0.5, 1e-4, 0.2),
            kcs: Default::default(),
        };
        let s = test_seq(vec![1, 1, 1, -1, -1, -1, -1, -1]);
        let fills = predict_accumulative(&m, &s, Feedback::Binarized).unwrap();
        assert!(fills.iter().all(|&p| binarize(p) == 1));
    }

    #[test]
    fn submission_round_trip() {
        let seqs = vec![test_seq(vec![1, 0, -1, -1]), test_seq(vec![0, -1])];
        let mut input = Vec::new();
        write_test(&mut input, &seqs).unwrap();
        let parsed = read_test(&input[..], Path::new("t.csv")).unwrap().sequences;
        let fills =
            predict_fills(&bkt(), &parsed, Mode::Accumulative, Feedback::Binarized).unwrap();
        let mut out = Vec::new();
        let summary = write_submission(&input[..], &mut out, &parsed, &fills).unwrap();
        assert_eq!(summary, SubmissionSummary { rows: 2, filled: 3 });
        let rows = read_submission(&out[..]).unwrap();
        let original = read_submission_like(&input);
        assert_eq!(rows.len(), 2);
        for (row, (orig, seq)) in rows.iter().zip(original.iter().zip(&parsed)) {
            assert!(row.responses.iter().all(|&r| r != -1.0));
            let known = seq.known_len();
            for i in 0..known {
                assert_eq!(row.responses[i], f64::from(seq.responses[i]));
            }
            for (k, v) in orig {
                if k != "responses" {
                    assert_eq!(&row.fields[k], v);
                }
            }
        }
        assert!(matches!(
            write_submission(
                &input[..],
                &mut Vec::new(),
                &parsed,
                &[fills[0].clone(), vec![]]
            ),
            Err(KtError::Completeness(_))
        ));
    }

    fn read_submission_like(input: &[u8]) -> Vec<BTreeMap<String, String>> {
        let mut r = csv::Reader::from_reader(input);
        let h = r.headers().unwrap().clone();
        r.records()
            .map(|rec| {
                h.iter()
                    .zip(rec.unwrap().iter())
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn question_level_rows_get_mean_fills() {
        let text =
            "uid,questions,concepts,responses,timestamps\n5,\"1,2\",\"0,0_1\",\"1,-1\",\"1,2\"\n";
        let parsed = read_test(text.as_bytes(), Path::new("q.csv"))
            .unwrap()
            .sequences;
        assert_eq!(parsed[0].len(), 3);
        let fills = vec![vec![0.2, 0.6]];
        let mut out = Vec::new();
        write_submission(text.as_bytes(), &mut out, &parsed, &fills).unwrap();
        let rows = read_submission(&out[..]).unwrap();
        assert_eq!(rows[0].responses, vec![1.0, 0.4]);
        assert_eq!(rows[0].binarized, vec![1, 0]);
        assert_eq!(rows[0].fields["concepts"], "0,0_1");
    }

    #[test]
    fn hidden_suffix_starts_at_a_question() {
        let mut s = test_seq(vec![1, 0, 1, 1, 0]);
        s.questions = vec![0, 1, 1, 2, 3];
        s.is_repeat = vec![0, 0, 1, 0, 0];
        let h = hide_suffix(&s).unwrap();
        assert_eq!(h.responses, vec![1, 0, 1, -1, -1]);
        assert_eq!(h.known_len(), 3);
        assert!(hide_suffix(&test_seq(vec![1])).is_none());
    }

    #[test]
    fn granularity_aggregation() {
        let mut s = test_seq(vec![1, 1, 0, 0]);
        s.is_repeat = vec![0, 0, 1, 0];
        s.questions = vec![0, 1, 1, 2];
        let mut set = ScoredSet::default();
        set.extend(
            0,
            &s,
            1,
            &[0.2, 0.4, 0.9],
            &s.responses,
            Granularity::Question,
        )
        .unwrap();
        assert_eq!(set.scores, vec![0.30000000000000004, 0.9]);
        assert_eq!(set.labels, vec![1, 0]);
        let steps: Vec<Step> = s.steps();
        assert_eq!(steps.len(), 4);
    }
}
