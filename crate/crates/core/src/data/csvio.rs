//! Readers and writers for `train_valid_sequences.csv` and `pykt_test.csv`.
//!
//! One row per (sub)sequence. List cells hold comma-joined integers inside a
//! single quoted field, e.g. `"12,12,40"`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::data::sequence::{InteractionSequence, SequenceKind};
use crate::error::{KtError, Result};

pub const TRAIN_COLUMNS: [&str; 8] = [
    "fold",
    "uid",
    "questions",
    "concepts",
    "responses",
    "timestamps",
    "selectmasks",
    "is_repeat",
];

pub const TEST_COLUMNS: [&str; 6] = [
    "uid",
    "questions",
    "concepts",
    "responses",
    "timestamps",
    "is_repeat",
];

/// Separator between KC ids of one question in non-expanded test files.
pub const KC_JOIN: char = '_';

#[derive(Debug, Clone, Default)]
pub struct ParseOutput {
    pub sequences: Vec<InteractionSequence>,
    pub warnings: Vec<String>,
}

pub fn join_list<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn split_list(cell: &str) -> impl Iterator<Item = &str> {
    let cell = cell.trim();
    let mut it = cell.split(',');
    if cell.is_empty() {
        it.next();
    }
    it.map(str::trim)
}

struct RowCtx<'a> {
    path: &'a Path,
    line: u64,
}

impl RowCtx<'_> {
    fn err(&self, detail: impl Into<String>) -> KtError {
        KtError::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            detail: detail.into(),
        }
    }

    fn ints<T: std::str::FromStr>(&self, column: &str, cell: &str) -> Result<Vec<T>> {
        split_list(cell)
            .map(|tok| {
                tok.parse::<T>()
                    .map_err(|_| self.err(format!("column '{column}': cannot parse '{tok}'")))
            })
            .collect()
    }

    fn scalar<T: std::str::FromStr>(&self, column: &str, cell: &str) -> Result<T> {
        cell.trim()
            .parse::<T>()
            .map_err(|_| self.err(format!("column '{column}': cannot parse '{cell}'")))
    }

    /// Attaches the row location to invariant violations.
    fn locate(&self, e: KtError) -> KtError {
        let at = format!("{}:{}", self.path.display(), self.line);
        match e {
            KtError::Schema(m) => KtError::Schema(format!("{at}: {m}")),
            KtError::Protocol(m) => KtError::Protocol(format!("{at}: {m}")),
            other => self.err(other.to_string()),
        }
    }
}

fn header_index<R: Read>(
    reader: &mut csv::Reader<R>,
    known: &[&str],
    warnings: &mut Vec<String>,
) -> Result<HashMap<String, usize>> {
    let headers = reader.headers()?.clone();
    let mut idx = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if known.contains(&h) || h == "fold" || h == "selectmasks" {
            idx.insert(h.to_string(), i);
        } else {
            warnings.push(format!("ignoring unknown column '{h}'"));
        }
    }
    Ok(idx)
}

fn require<'a>(
    cols: &HashMap<String, usize>,
    name: &str,
    record: &'a csv::StringRecord,
) -> Result<&'a str> {
    let i = cols
        .get(name)
        .ok_or_else(|| KtError::Schema(format!("missing required column '{name}'")))?;
    Ok(record.get(*i).unwrap_or(""))
}

fn check_columns(cols: &HashMap<String, usize>, required: &[&str]) -> Result<()> {
    for name in required {
        if !cols.contains_key(*name) {
            return Err(KtError::Schema(format!("missing required column '{name}'")));
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| KtError::io(path, e))
}

pub fn parse_train_valid(path: impl AsRef<Path>) -> Result<ParseOutput> {
    let path = path.as_ref();
    let out = read_train_valid(open(path)?, path)?;
    for w in &out.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(out)
}

pub fn read_train_valid<R: Read>(input: R, source: &Path) -> Result<ParseOutput> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let mut out = ParseOutput::default();
    let cols = header_index(&mut reader, &TRAIN_COLUMNS, &mut out.warnings)?;
    check_columns(&cols, &TRAIN_COLUMNS)?;
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let ctx = RowCtx {
            path: source,
            line: record.position().map_or(0, |p| p.line()),
        };
        let fold: u8 = ctx.scalar("fold", require(&cols, "fold", &record)?)?;
        if fold > 4 {
            return Err(ctx.locate(KtError::Schema(format!("fold {fold} outside 0..=4"))));
        }
        let seq = InteractionSequence {
            uid: ctx.scalar("uid", require(&cols, "uid", &record)?)?,
            fold: Some(fold),
            questions: ctx.ints("questions", require(&cols, "questions", &record)?)?,
            concepts: ctx.ints("concepts", require(&cols, "concepts", &record)?)?,
            responses: ctx.ints("responses", require(&cols, "responses", &record)?)?,
            timestamps: ctx.ints("timestamps", require(&cols, "timestamps", &record)?)?,
            selectmask: ctx.ints("selectmasks", require(&cols, "selectmasks", &record)?)?,
            is_repeat: normalize_repeat(
                ctx.ints::<i8>("is_repeat", require(&cols, "is_repeat", &record)?)?,
            ),
        };
        check_lengths(&ctx, &seq)?;
        seq.validate(SequenceKind::Train)
            .map_err(|e| ctx.locate(e))?;
        out.sequences.push(seq);
    }
    Ok(out)
}

/// Padding positions may carry -1 in `is_repeat`; they are stored as 0.
fn normalize_repeat(values: Vec<i8>) -> Vec<u8> {
    values
        .into_iter()
        .map(|v| if v < 0 { 0 } else { v as u8 })
        .collect()
}

fn check_lengths(ctx: &RowCtx<'_>, seq: &InteractionSequence) -> Result<()> {
    let lens = [
        ("questions", seq.questions.len()),
        ("concepts", seq.concepts.len()),
        ("responses", seq.responses.len()),
        ("timestamps", seq.timestamps.len()),
        ("selectmasks", seq.selectmask.len()),
        ("is_repeat", seq.is_repeat.len()),
    ];
    if lens.iter().any(|(_, l)| *l != lens[0].1) {
        let desc: Vec<String> = lens.iter().map(|(n, l)| format!("{n}={l}")).collect();
        return Err(ctx.err(format!(
            "parallel fields disagree in length: {}",
            desc.join(", ")
        )));
    }
    Ok(())
}

pub fn parse_test(path: impl AsRef<Path>) -> Result<ParseOutput> {
    let path = path.as_ref();
    let out = read_test(open(path)?, path)?;
    for w in &out.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(out)
}

/// Reads a test file. With an `is_repeat` column the rows are taken as
/// already KC-expanded; without it each question's `concepts` token may list
/// several KCs joined by `_`, and the row is expanded here.
pub fn read_test<R: Read>(input: R, source: &Path) -> Result<ParseOutput> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let mut out = ParseOutput::default();
    let cols = header_index(&mut reader, &TEST_COLUMNS, &mut out.warnings)?;
    check_columns(&cols, &TEST_COLUMNS[..5])?;
    let expanded = cols.contains_key("is_repeat");
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let ctx = RowCtx {
            path: source,
            line: record.position().map_or(0, |p| p.line()),
        };
        let uid = ctx.scalar("uid", require(&cols, "uid", &record)?)?;
        let questions: Vec<i64> = ctx.ints("questions", require(&cols, "questions", &record)?)?;
        let responses: Vec<i8> = ctx.ints("responses", require(&cols, "responses", &record)?)?;
        let timestamps: Vec<i64> =
            ctx.ints("timestamps", require(&cols, "timestamps", &record)?)?;
        let seq = if expanded {
            let concepts = ctx.ints("concepts", require(&cols, "concepts", &record)?)?;
            let is_repeat =
                normalize_repeat(ctx.ints("is_repeat", require(&cols, "is_repeat", &record)?)?);
            InteractionSequence::unpadded(
                uid, None, questions, concepts, responses, timestamps, is_repeat,
            )
        } else {
            let groups: Vec<&str> = split_list(require(&cols, "concepts", &record)?).collect();
            if [questions.len(), responses.len(), timestamps.len()]
                .iter()
                .any(|&l| l != groups.len())
            {
                return Err(ctx.err("parallel fields disagree in length"));
            }
            let mut seq =
                InteractionSequence::unpadded(uid, None, vec![], vec![], vec![], vec![], vec![]);
            for (i, group) in groups.iter().enumerate() {
                for (j, tok) in group.split(KC_JOIN).enumerate() {
                    seq.questions.push(questions[i]);
                    seq.concepts.push(ctx.scalar("concepts", tok)?);
                    seq.responses.push(responses[i]);
                    seq.timestamps.push(timestamps[i]);
                    seq.selectmask.push(1);
                    seq.is_repeat.push(u8::from(j > 0));
                }
            }
            seq
        };
        check_lengths(&ctx, &seq)?;
        seq.validate(SequenceKind::Test)
            .map_err(|e| ctx.locate(e))?;
        out.sequences.push(seq);
    }
    Ok(out)
}

pub fn write_train_valid<W: Write>(output: W, sequences: &[InteractionSequence]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(TRAIN_COLUMNS)?;
    for s in sequences {
        let fold = s
            .fold
            .ok_or_else(|| KtError::Data(format!("uid {}: training rows need a fold", s.uid)))?;
        w.write_record([
            fold.to_string(),
            s.uid.to_string(),
            join_list(&s.questions),
            join_list(&s.concepts),
            join_list(&s.responses),
            join_list(&s.timestamps),
            join_list(&s.selectmask),
            join_list(&s.is_repeat),
        ])?;
    }
    w.flush()
        .map_err(|e| KtError::io(PathBuf::from("<csv output>"), e))?;
    Ok(())
}

pub fn write_test<W: Write>(output: W, sequences: &[InteractionSequence]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(TEST_COLUMNS)?;
    for s in sequences {
        w.write_record([
            s.uid.to_string(),
            join_list(&s.questions),
            join_list(&s.concepts),
            join_list(&s.responses),
            join_list(&s.timestamps),
            join_list(&s.is_repeat),
        ])?;
    }
    w.flush()
        .map_err(|e| KtError::io(PathBuf::from("<csv output>"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sequence::truncate_and_pad;

    fn src() -> PathBuf {
        PathBuf::from("fixture.csv")
    }

    fn fixture(fold: u8) -> String {
        let s = InteractionSequence::unpadded(
            7,
            Some(fold),
            vec![4, 4, 9],
            vec![1, 2, 0],
            vec![1, 1, 0],
            vec![10, 10, 20],
            vec![0, 1, 0],
        );
        let chunks = truncate_and_pad(&s, 200).unwrap();
        let mut buf = Vec::new();
        write_train_valid(&mut buf, &chunks).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn three_interaction_row_is_padded_to_200() {
        let out = read_train_valid(fixture(4).as_bytes(), &src()).unwrap();
        assert_eq!(out.sequences.len(), 1);
        let s = &out.sequences[0];
        assert_eq!(s.len(), 200);
        assert_eq!(s.real_len(), 3);
        assert_eq!(s.selectmask.iter().filter(|&&m| m == -1).count(), 197);
        assert_eq!(s.fold, Some(4));
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn fold_five_is_schema_error() {
        let text = fixture(4).replacen("\n4,", "\n5,", 1);
        assert!(matches!(
            read_train_valid(text.as_bytes(), &src()),
            Err(KtError::Schema(_))
        ));
    }

    #[test]
    fn ragged_row_reports_line() {
        let text = "fold,uid,questions,concepts,responses,timestamps,selectmasks,is_repeat\n\
                    0,1,\"1,2\",\"1,2\",\"1,0\",\"5,6\",\"1,1\",\"0,0\"\n\
                    0,2,\"1,2\",\"1\",\"1,0\",\"5,6\",\"1,1\",\"0,0\"\n";
        match read_train_valid(text.as_bytes(), &src()) {
            Err(KtError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_columns_warn() {
        let text = "fold,uid,questions,concepts,responses,timestamps,selectmasks,is_repeat,extra\n\
                    0,1,\"1\",\"1\",\"1\",\"5\",\"1\",\"0\",x\n";
        let out = read_train_valid(text.as_bytes(), &src()).unwrap();
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn test_file_prefix_suffix_and_protocol() {
        let text = "uid,questions,concepts,responses,timestamps,is_repeat\n\
                    3,\"1,2,3,4\",\"0,1,0,1\",\"1,0,-1,-1\",\"1,2,3,4\",\"0,0,0,0\"\n";
        let out = read_test(text.as_bytes(), &src()).unwrap();
        assert_eq!(out.sequences[0].known_len(), 2);
        assert_eq!(out.sequences[0].fold, None);

        let bad = "uid,questions,concepts,responses,timestamps,is_repeat\n\
                   3,\"1,2,3\",\"0,1,0\",\"1,-1,0\",\"1,2,3\",\"0,0,0\"\n";
        assert!(matches!(
            read_test(bad.as_bytes(), &src()),
            Err(KtError::Protocol(_))
        ));
    }

    #[test]
    fn question_level_test_file_is_expanded() {
        let text = "uid,questions,concepts,responses,timestamps\n\
                    3,\"5,6\",\"0_2,1\",\"1,-1\",\"1,2\"\n";
        let out = read_test(text.as_bytes(), &src()).unwrap();
        let s = &out.sequences[0];
        assert_eq!(s.questions, vec![5, 5, 6]);
        assert_eq!(s.concepts, vec![0, 2, 1]);
        assert_eq!(s.is_repeat, vec![0, 1, 0]);
        assert_eq!(s.responses, vec![1, 1, -1]);
    }

    #[test]
    fn test_writer_round_trip() {
        let s = InteractionSequence::unpadded(
            2,
            None,
            vec![1, 1],
            vec![3, 4],
            vec![1, -1],
            vec![9, 9],
            vec![0, 1],
        );
        let mut buf = Vec::new();
        write_test(&mut buf, std::slice::from_ref(&s)).unwrap();
        let out = read_test(buf.as_slice(), &src()).unwrap();
        assert_eq!(out.sequences, vec![s]);
    }
}
