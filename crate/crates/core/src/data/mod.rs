//! Challenge data files: id maps, question bank, sequence CSVs, KC expansion
//! and fixed-window padding.

pub mod csvio;
pub mod ids;
pub mod questions;
pub mod sequence;
pub mod stats;

pub use csvio::{
    parse_test, parse_train_valid, read_test, read_train_valid, write_test, write_train_valid,
    ParseOutput,
};
pub use ids::{parse_keyid2idx, IdMap, IdMaps};
pub use questions::{parse_questions, QuestionBank, QuestionInfo};
pub use sequence::{
    expand_to_kc_level, truncate_and_pad, InteractionSequence, QuestionSequence, SequenceKind,
    Step, PAD, WINDOW,
};
pub use stats::{dataset_stats, DatasetStats};

/// Standard file names inside a data directory.
pub const TRAIN_FILE: &str = "train_valid_sequences.csv";
pub const TEST_FILE: &str = "pykt_test.csv";
pub const KEYID_FILE: &str = "keyid2idx.json";
pub const QUESTIONS_FILE: &str = "questions.json";
