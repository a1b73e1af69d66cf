use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::sequence::InteractionSequence;

/// Summary counts over parsed sequences.
///
/// `interactions` and `positive_rate` count question-level responses
/// (positions with `is_repeat == 0`); `kc_interactions` counts every real
/// KC-expanded position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sequences: usize,
    pub students: usize,
    pub questions: usize,
    pub kcs: usize,
    pub interactions: usize,
    pub kc_interactions: usize,
    pub mean_length: f64,
    pub positive_rate: f64,
}

impl DatasetStats {
    pub fn positive_percent(&self) -> f64 {
        100.0 * self.positive_rate
    }
}

pub fn dataset_stats(sequences: &[InteractionSequence]) -> DatasetStats {
    let mut students = HashSet::new();
    let mut questions = HashSet::new();
    let mut kcs = HashSet::new();
    let (mut interactions, mut kc_interactions, mut positives) = (0usize, 0usize, 0usize);
    for s in sequences {
        students.insert(s.uid);
        for i in 0..s.real_len() {
            questions.insert(s.questions[i]);
            kcs.insert(s.concepts[i]);
            kc_interactions += 1;
            if s.is_repeat[i] == 0 {
                interactions += 1;
                positives += usize::from(s.responses[i] == 1);
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    DatasetStats {
        sequences: sequences.len(),
        students: students.len(),
        questions: questions.len(),
        kcs: kcs.len(),
        interactions,
        kc_interactions,
        mean_length: ratio(interactions, students.len()),
        positive_rate: ratio(positives, interactions),
    }
}
