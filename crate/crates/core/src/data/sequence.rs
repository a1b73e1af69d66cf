use serde::{Deserialize, Serialize};

use crate::data::questions::QuestionBank;
use crate::error::{KtError, Result};

/// Padding marker used in every list column.
pub const PAD: i64 = -1;

/// Default sub-sequence length of the challenge files.
pub const WINDOW: usize = 200;

/// One KC-level position, as seen by the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Step {
    pub question: usize,
    pub concept: usize,
}

/// A student's KC-expanded interaction record, possibly padded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub uid: usize,
    /// `None` for test sequences.
    pub fold: Option<u8>,
    pub questions: Vec<i64>,
    pub concepts: Vec<i64>,
    /// 0/1, or -1 for padding and for responses still to be predicted.
    pub responses: Vec<i8>,
    pub timestamps: Vec<i64>,
    /// 1 for real positions, -1 for padding.
    pub selectmask: Vec<i8>,
    pub is_repeat: Vec<u8>,
}

/// A question-level record before KC expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSequence {
    pub uid: usize,
    pub fold: Option<u8>,
    pub questions: Vec<usize>,
    pub responses: Vec<i8>,
    pub timestamps: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceKind {
    /// Responses are all observed; padding allowed.
    Train,
    /// Responses may end in a -1 suffix; no padding.
    Test,
}

impl InteractionSequence {
    /// An unpadded sequence with every position real.
    pub fn unpadded(
        uid: usize,
        fold: Option<u8>,
        questions: Vec<i64>,
        concepts: Vec<i64>,
        responses: Vec<i8>,
        timestamps: Vec<i64>,
        is_repeat: Vec<u8>,
    ) -> Self {
        let n = questions.len();
        InteractionSequence {
            uid,
            fold,
            questions,
            concepts,
            responses,
            timestamps,
            selectmask: vec![1; n],
            is_repeat,
        }
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Number of non-padded positions (padding is always a suffix).
    pub fn real_len(&self) -> usize {
        self.selectmask.iter().take_while(|&&m| m == 1).count()
    }

    /// Number of leading positions with an observed response.
    pub fn known_len(&self) -> usize {
        self.responses[..self.real_len()]
            .iter()
            .take_while(|&&r| r == 0 || r == 1)
            .count()
    }

    pub fn steps(&self) -> Vec<Step> {
        (0..self.real_len())
            .map(|i| Step {
                question: self.questions[i] as usize,
                concept: self.concepts[i] as usize,
            })
            .collect()
    }

    /// Observed responses of the real prefix, as 0/1.
    pub fn observed(&self) -> Vec<u8> {
        self.responses[..self.known_len()]
            .iter()
            .map(|&r| r as u8)
            .collect()
    }

    /// Copy of the real positions only.
    pub fn strip_padding(&self) -> InteractionSequence {
        let n = self.real_len();
        InteractionSequence {
            uid: self.uid,
            fold: self.fold,
            questions: self.questions[..n].to_vec(),
            concepts: self.concepts[..n].to_vec(),
            responses: self.responses[..n].to_vec(),
            timestamps: self.timestamps[..n].to_vec(),
            selectmask: self.selectmask[..n].to_vec(),
            is_repeat: self.is_repeat[..n].to_vec(),
        }
    }

    /// Positions starting a new question (`is_repeat == 0`) among the real ones.
    pub fn question_starts(&self) -> Vec<usize> {
        (0..self.real_len())
            .filter(|&i| self.is_repeat[i] == 0)
            .collect()
    }

    /// Checks every structural invariant; `detail` errors describe the first
    /// violation found.
    pub fn validate(&self, kind: SequenceKind) -> Result<()> {
        let n = self.len();
        let lens = [
            self.concepts.len(),
            self.responses.len(),
            self.timestamps.len(),
            self.selectmask.len(),
            self.is_repeat.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(KtError::Data(format!(
                "uid {}: parallel fields disagree in length ({n} questions vs {lens:?})",
                self.uid
            )));
        }
        if let Some(f) = self.fold {
            if f > 4 {
                return Err(KtError::Schema(format!("fold {f} outside 0..=4")));
            }
        }
        let real = self.real_len();
        if let Some(i) = self.selectmask[real..].iter().position(|&m| m != -1) {
            return Err(KtError::Data(format!(
                "uid {}: selectmask {} at position {} follows padding",
                self.uid,
                self.selectmask[real + i],
                real + i
            )));
        }
        if kind == SequenceKind::Test && real != n {
            return Err(KtError::Data(format!(
                "uid {}: test sequences are not padded",
                self.uid
            )));
        }
        let known = self.known_len();
        for i in 0..real {
            if self.questions[i] < 0 || self.concepts[i] < 0 {
                return Err(KtError::Data(format!(
                    "uid {}: negative question/concept index at real position {i}",
                    self.uid
                )));
            }
            let r = self.responses[i];
            match (kind, r) {
                (_, 0 | 1) if i < known => {}
                (SequenceKind::Test, -1) if i >= known => {}
                (SequenceKind::Test, 0 | 1) => {
                    return Err(KtError::Protocol(format!(
                        "uid {}: observed response at position {i} after an unknown (-1) response",
                        self.uid
                    )))
                }
                _ => {
                    return Err(KtError::Data(format!(
                        "uid {}: response {r} at real position {i}",
                        self.uid
                    )))
                }
            }
            if self.is_repeat[i] > 1 {
                return Err(KtError::Data(format!(
                    "uid {}: is_repeat {} at {i}",
                    self.uid, self.is_repeat[i]
                )));
            }
            if i > 0 {
                if self.timestamps[i] < self.timestamps[i - 1] {
                    return Err(KtError::Data(format!(
                        "uid {}: timestamps decrease at position {i}",
                        self.uid
                    )));
                }
                if self.is_repeat[i] == 1 && self.questions[i] != self.questions[i - 1] {
                    return Err(KtError::Data(format!(
                        "uid {}: is_repeat=1 at position {i} but question changes",
                        self.uid
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that every real index is below the declared table sizes.
    pub fn check_bounds(&self, num_questions: usize, num_concepts: usize) -> Result<()> {
        for i in 0..self.real_len() {
            let (q, c) = (self.questions[i] as usize, self.concepts[i] as usize);
            if q >= num_questions {
                return Err(KtError::Index {
                    what: "question map",
                    index: q,
                    size: num_questions,
                });
            }
            if c >= num_concepts {
                return Err(KtError::Index {
                    what: "concept map",
                    index: c,
                    size: num_concepts,
                });
            }
        }
        Ok(())
    }
}

/// Expands each question into one position per associated KC. The first
/// position of a question has `is_repeat = 0`, the rest `1`.
pub fn expand_to_kc_level(
    seq: &QuestionSequence,
    bank: &QuestionBank,
) -> Result<InteractionSequence> {
    let n = seq.questions.len();
    if seq.responses.len() != n || seq.timestamps.len() != n {
        return Err(KtError::Data(format!(
            "uid {}: question-level fields disagree in length",
            seq.uid
        )));
    }
    let mut out =
        InteractionSequence::unpadded(seq.uid, seq.fold, vec![], vec![], vec![], vec![], vec![]);
    for i in 0..n {
        let q = seq.questions[i];
        let kcs = bank.kcs(q)?;
        if kcs.is_empty() {
            return Err(KtError::Data(format!("question {q} has no associated KC")));
        }
        for (j, &kc) in kcs.iter().enumerate() {
            out.questions.push(q as i64);
            out.concepts.push(kc as i64);
            out.responses.push(seq.responses[i]);
            out.timestamps.push(seq.timestamps[i]);
            out.selectmask.push(1);
            out.is_repeat.push(u8::from(j > 0));
        }
    }
    Ok(out)
}

/// Splits the real part of `seq` into consecutive chunks of at most `window`
/// positions, each right-padded to exactly `window`.
pub fn truncate_and_pad(
    seq: &InteractionSequence,
    window: usize,
) -> Result<Vec<InteractionSequence>> {
    if window == 0 {
        return Err(KtError::Config("window must be at least 1".into()));
    }
    let real = seq.strip_padding();
    let n = real.len();
    let mut chunks = Vec::with_capacity(n.div_ceil(window));
    let mut start = 0;
    while start < n {
        let end = (start + window).min(n);
        let pad = window - (end - start);
        let take_i64 = |v: &[i64]| {
            let mut out = v[start..end].to_vec();
            out.extend(std::iter::repeat(PAD).take(pad));
            out
        };
        let mut responses = real.responses[start..end].to_vec();
        responses.extend(std::iter::repeat(-1).take(pad));
        let mut selectmask = vec![1i8; end - start];
        selectmask.extend(std::iter::repeat(-1).take(pad));
        let mut is_repeat = real.is_repeat[start..end].to_vec();
        is_repeat.extend(std::iter::repeat(0).take(pad));
        chunks.push(InteractionSequence {
            uid: real.uid,
            fold: real.fold,
            questions: take_i64(&real.questions),
            concepts: take_i64(&real.concepts),
            responses,
            timestamps: take_i64(&real.timestamps),
            selectmask,
            is_repeat,
        });
        start = end;
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::questions::QuestionInfo;
    use proptest::prelude::*;

    fn seq_of_len(n: usize) -> InteractionSequence {
        InteractionSequence::unpadded(
            3,
            Some(1),
            (0..n as i64).map(|i| i / 2).collect(),
            (0..n as i64).map(|i| i % 5).collect(),
            (0..n).map(|i| (i % 3 == 0) as i8).collect(),
            (0..n as i64).map(|i| 1000 + i).collect(),
            vec![0; n],
        )
    }

    fn bank() -> QuestionBank {
        QuestionBank::from_infos(vec![
            QuestionInfo::with_kcs(vec![0, 1]),
            QuestionInfo::with_kcs(vec![2]),
            QuestionInfo::with_kcs(vec![]),
        ])
    }

    #[test]
    fn chunk_lengths() {
        let chunks = truncate_and_pad(&seq_of_len(450), WINDOW).unwrap();
        let lens: Vec<usize> = chunks.iter().map(|c| c.real_len()).collect();
        assert_eq!(lens, vec![200, 200, 50]);
        assert!(chunks.iter().all(|c| c.len() == 200));
        assert_eq!(
            chunks[2].selectmask.iter().filter(|&&m| m == -1).count(),
            150
        );

        let chunks = truncate_and_pad(&seq_of_len(200), WINDOW).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].real_len(), 200);

        assert!(truncate_and_pad(&seq_of_len(0), WINDOW).unwrap().is_empty());
    }

    #[test]
    fn three_real_positions_get_197_pads() {
        let chunks = truncate_and_pad(&seq_of_len(3), WINDOW).unwrap();
        assert_eq!(
            chunks[0].selectmask.iter().filter(|&&m| m == -1).count(),
            197
        );
        assert_eq!(&chunks[0].selectmask[..3], &[1, 1, 1]);
        chunks[0].validate(SequenceKind::Train).unwrap();
    }

    #[test]
    fn expansion_of_multi_kc_question() {
        let qs = QuestionSequence {
            uid: 0,
            fold: Some(0),
            questions: vec![0, 1],
            responses: vec![1, 0],
            timestamps: vec![5, 9],
        };
        let e = expand_to_kc_level(&qs, &bank()).unwrap();
        assert_eq!(e.questions, vec![0, 0, 1]);
        assert_eq!(e.concepts, vec![0, 1, 2]);
        assert_eq!(e.responses, vec![1, 1, 0]);
        assert_eq!(e.timestamps, vec![5, 5, 9]);
        assert_eq!(e.is_repeat, vec![0, 1, 0]);
        e.validate(SequenceKind::Train).unwrap();
    }

    #[test]
    fn single_kc_question_and_zero_kc_error() {
        let qs = QuestionSequence {
            uid: 0,
            fold: None,
            questions: vec![1],
            responses: vec![1],
            timestamps: vec![0],
        };
        let e = expand_to_kc_level(&qs, &bank()).unwrap();
        assert_eq!(e.is_repeat, vec![0]);
        let qs = QuestionSequence {
            questions: vec![2],
            ..qs
        };
        assert!(matches!(
            expand_to_kc_level(&qs, &bank()),
            Err(KtError::Data(_))
        ));
    }

    #[test]
    fn repeat_flag_requires_same_question() {
        let mut s = seq_of_len(4);
        s.is_repeat = vec![0, 0, 1, 0];
        // questions are [0,0,1,1]: position 2 changes question.
        assert!(s.validate(SequenceKind::Train).is_err());
        s.is_repeat = vec![0, 1, 0, 1];
        s.validate(SequenceKind::Train).unwrap();
    }

    #[test]
    fn test_split_and_protocol_error() {
        let mut s = seq_of_len(4);
        s.fold = None;
        s.responses = vec![1, 0, -1, -1];
        s.validate(SequenceKind::Test).unwrap();
        assert_eq!(s.known_len(), 2);
        assert_eq!(s.len() - s.known_len(), 2);
        let mut s = seq_of_len(3);
        s.fold = None;
        s.responses = vec![1, -1, 0];
        assert!(matches!(
            s.validate(SequenceKind::Test),
            Err(KtError::Protocol(_))
        ));
    }

    proptest! {
        #[test]
        fn padding_round_trip_is_identity(n in 0usize..700, window in 1usize..260) {
            let s = seq_of_len(n);
            let chunks = truncate_and_pad(&s, window).unwrap();
            let mut joined = InteractionSequence::unpadded(s.uid, s.fold, vec![], vec![], vec![], vec![], vec![]);
            for c in &chunks {
                prop_assert_eq!(c.len(), window);
                let r = c.strip_padding();
                joined.questions.extend(r.questions);
                joined.concepts.extend(r.concepts);
                joined.responses.extend(r.responses);
                joined.timestamps.extend(r.timestamps);
                joined.selectmask.extend(r.selectmask);
                joined.is_repeat.extend(r.is_repeat);
            }
            prop_assert_eq!(joined, s);
        }

        #[test]
        fn expansion_preserves_question_count(qs in prop::collection::vec(0usize..2, 0..60)) {
            let n = qs.len();
            let seq = QuestionSequence {
                uid: 1,
                fold: Some(2),
                questions: qs,
                responses: vec![1; n],
                timestamps: vec![0; n],
            };
            let e = expand_to_kc_level(&seq, &bank()).unwrap();
            let starts = e.is_repeat.iter().filter(|&&r| r == 0).count();
            prop_assert_eq!(starts, n);
        }
    }
}
