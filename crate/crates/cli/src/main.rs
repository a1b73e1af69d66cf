//! `kt`: data preparation, statistics, training, evaluation, submissions,
//! synthetic data and gradient self-checks for knowledge tracing models.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use kt_core::akt::DecayMode;
use kt_core::bkt::FitMethod;
use kt_core::checkpoint::Checkpoint;
use kt_core::data::{
    dataset_stats, parse_keyid2idx, parse_questions, parse_test, parse_train_valid, IdMaps,
    InteractionSequence, SequenceKind, KEYID_FILE, QUESTIONS_FILE, TEST_FILE, TRAIN_FILE,
};
use kt_core::dkt::Cell;
use kt_core::evaluation::{
    fill_set, hide_suffix, predict_fills, report, teacher_forced_set, write_submission,
    Granularity, Mode,
};
use kt_core::gradsuite;
use kt_core::model::Feedback;
use kt_core::synth::{generate, GroundTruth, SynthTruth};
use kt_core::training::{
    kfold_split, train_model, ModelKind, TrainConfig, TrainOutcome, NUM_FOLDS,
};
use kt_core::{KtError, Result};

#[derive(Parser)]
#[command(name = "kt", version, about = "Knowledge tracing workbench")]
struct Cli {
    /// Indented, human-oriented JSON output.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory holding the challenge files.
    #[arg(long, env = "KT_DATA_DIR", default_value = ".")]
    data_dir: PathBuf,
    /// Training file (default: <data-dir>/train_valid_sequences.csv).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test file (default: <data-dir>/pykt_test.csv).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Id mapping file (default: <data-dir>/keyid2idx.json).
    #[arg(long)]
    keyid: Option<PathBuf>,
    /// Question metadata (default: <data-dir>/questions.json).
    #[arg(long)]
    questions: Option<PathBuf>,
}

impl DataArgs {
    fn train_path(&self) -> PathBuf {
        self.train
            .clone()
            .unwrap_or_else(|| self.data_dir.join(TRAIN_FILE))
    }

    fn test_path(&self) -> PathBuf {
        self.test
            .clone()
            .unwrap_or_else(|| self.data_dir.join(TEST_FILE))
    }

    /// Explicit paths must exist; default ones are optional.
    fn optional(&self, explicit: &Option<PathBuf>, name: &str) -> Result<Option<PathBuf>> {
        match explicit {
            Some(p) if !p.exists() => Err(missing(p)),
            Some(p) => Ok(Some(p.clone())),
            None => {
                let p = self.data_dir.join(name);
                Ok(p.exists().then_some(p))
            }
        }
    }

    fn maps(&self) -> Result<Option<IdMaps>> {
        self.optional(&self.keyid, KEYID_FILE)?
            .map(parse_keyid2idx)
            .transpose()
    }
}

fn missing(path: &Path) -> KtError {
    KtError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(missing(&path))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Accumulative,
    NonAccumulative,
    /// Next-step predictions with every true response visible.
    TeacherForced,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Kc,
    Question,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Kc => Granularity::Kc,
            GranularityArg::Question => Granularity::Question,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FeedbackArg {
    Binarized,
    Probability,
}

impl From<FeedbackArg> for Feedback {
    fn from(f: FeedbackArg) -> Self {
        match f {
            FeedbackArg::Binarized => Feedback::Binarized,
            FeedbackArg::Probability => Feedback::Probability,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Bkt,
    Dkt,
    Akt,
}

#[derive(Clone, Copy, ValueEnum)]
enum CellArg {
    Lstm,
    Vanilla,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecayArg {
    IndexDistance,
    ContextAware,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitArg {
    Em,
    Grid,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON TrainConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Validation fold, 0 to 4.
    #[arg(long)]
    fold: Option<u8>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long, value_enum)]
    bkt_fit: Option<FitArg>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_enum)]
    cell: Option<CellArg>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    ff: Option<usize>,
    #[arg(long, value_enum)]
    decay: Option<DecayArg>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Train all five folds as concurrent independent runs.
    #[arg(long)]
    parallel_folds: bool,
    /// Output directory for checkpoints and run logs.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate the data files.
    Prepare {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Dataset statistics of the training file.
    Stats {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train one model per fold.
    Train(Box<TrainArgs>),
    /// Score a checkpoint on validation data or labelled test data.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "valid")]
        split: SplitArg,
        /// Validation fold, 0 to 4.
        #[arg(long, default_value_t = 0)]
        fold: u8,
        #[arg(long, value_enum, default_value = "non-accumulative")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "kc")]
        granularity: GranularityArg,
        #[arg(long, value_enum, default_value = "binarized")]
        feedback: FeedbackArg,
        /// Ground truth with the hidden test labels (from `synth`).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fill the unknown test responses and write a submission file.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "non-accumulative")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "binarized")]
        feedback: FeedbackArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic challenge files from a ground-truth config.
    Synth {
        /// GroundTruth JSON; the built-in scenario when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        shuffle_labels: bool,
        /// Drop prerequisites and forgetting.
        #[arg(long)]
        plain: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every model gradient.
    Gradcheck,
}

fn emit(value: &Value, pretty: bool) {
    let text = if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    }
    .expect("JSON values serialize");
    println!("{text}");
}

/// Sizes of the question and KC index spaces: the id maps when present,
/// otherwise the largest index seen plus one.
fn index_sizes(maps: Option<&IdMaps>, seqs: &[&[InteractionSequence]]) -> (usize, usize) {
    let mut q = 0;
    let mut k = 0;
    for s in seqs.iter().flat_map(|s| s.iter()) {
        for i in 0..s.real_len() {
            q = q.max(s.questions[i] as usize + 1);
            k = k.max(s.concepts[i] as usize + 1);
        }
    }
    match maps {
        Some(m) if !m.questions.is_empty() && !m.concepts.is_empty() => {
            (m.questions.len().max(q), m.concepts.len().max(k))
        }
        _ => (q, k),
    }
}

fn prepare(data: &DataArgs) -> Result<Value> {
    let train = parse_train_valid(require(data.train_path())?)?;
    let test = parse_test(require(data.test_path())?)?;
    let maps = data.maps()?;
    let bank = match (&maps, data.optional(&data.questions, QUESTIONS_FILE)?) {
        (Some(m), Some(p)) => Some(parse_questions(p, m)?),
        (None, Some(_)) => {
            return Err(KtError::Schema(
                "questions.json needs keyid2idx.json to resolve ids".into(),
            ));
        }
        _ => None,
    };
    if let Some(m) = &maps {
        for s in train.sequences.iter().chain(&test.sequences) {
            s.check_bounds(m.questions.len(), m.concepts.len())?;
        }
    }
    let folds: Vec<usize> = (0..NUM_FOLDS)
        .map(|f| train.sequences.iter().filter(|s| s.fold == Some(f)).count())
        .collect();
    let to_predict: usize = test
        .sequences
        .iter()
        .map(|s| s.real_len() - s.known_len())
        .sum();
    Ok(json!({
        "train": {
            "sequences": train.sequences.len(),
            "per_fold": folds,
            "warnings": train.warnings,
        },
        "test": {
            "sequences": test.sequences.len(),
            "positions_to_predict": to_predict,
            "warnings": test.warnings,
        },
        "keyid2idx": maps.as_ref().map(|m| json!({
            "questions": m.questions.len(),
            "concepts": m.concepts.len(),
            "users": m.users.len(),
        })),
        "questions": bank.as_ref().map(|b| b.len()),
        "valid": true,
    }))
}

fn build_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| KtError::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(m) = args.model {
        c.model = match m {
            ModelArg::Bkt => ModelKind::Bkt,
            ModelArg::Dkt => ModelKind::Dkt,
            ModelArg::Akt => ModelKind::Akt,
        };
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { c.$field = v; })*
        };
    }
    set!(fold => fold, seed => seed, lr => lr, epochs => epochs, batch_size => batch_size,
         patience => patience, clip_norm => clip_norm, hidden => dkt_hidden, d_model => akt_d_model,
         heads => akt_heads, layers => akt_layers, ff => akt_ff, dropout => akt_dropout);
    if let Some(v) = args.cell {
        c.dkt_cell = match v {
            CellArg::Lstm => Cell::Lstm,
            CellArg::Vanilla => Cell::Vanilla,
        };
    }
    if let Some(v) = args.decay {
        c.akt_decay = match v {
            DecayArg::IndexDistance => DecayMode::IndexDistance,
            DecayArg::ContextAware => DecayMode::ContextAware,
        };
    }
    if let Some(v) = args.bkt_fit {
        c.bkt_fit = match v {
            FitArg::Em => FitMethod::Em,
            FitArg::Grid => FitMethod::Grid,
        };
    }
    c.validate()?;
    Ok(c)
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Bkt => "bkt",
        ModelKind::Dkt => "dkt",
        ModelKind::Akt => "akt",
    }
}

fn train(args: &TrainArgs) -> Result<Value> {
    let base = build_config(args)?;
    let parsed = parse_train_valid(require(args.data.train_path())?)?.sequences;
    let maps = args.data.maps()?;
    let (num_questions, num_kcs) = index_sizes(maps.as_ref(), &[&parsed]);
    fs::create_dir_all(&args.out).map_err(|e| KtError::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let folds: Vec<u8> = if args.parallel_folds {
        (0..NUM_FOLDS).collect()
    } else {
        vec![base.fold]
    };
    let run_fold = |fold: u8| -> Result<Value> {
        let config = TrainConfig {
            fold,
            ..base.clone()
        };
        let (tr, va) = kfold_split(&parsed, fold)?;
        let TrainOutcome { record, model } = train_model(
            &config,
            &tr,
            &va,
            num_kcs,
            num_questions,
            &mut |e| {
                let line = json!({"fold": fold, "epoch": e.epoch, "train_loss": e.train_loss, "valid_auc": e.valid_auc, "seconds": e.seconds});
                println!("{line}");
            },
        )?;
        let stem = format!("{}_fold{fold}", model_name(config.model));
        let ck_path = args.out.join(format!("{stem}.json"));
        Checkpoint::new(model).save(&ck_path)?;
        let log_path = args.out.join(format!("{stem}_run.json"));
        let log = json!({"config": json!(config), "record": json!(record), "checkpoint": ck_path});
        fs::write(&log_path, serde_json::to_string_pretty(&log)?).map_err(|e| KtError::Io {
            path: log_path.clone(),
            source: e,
        })?;
        Ok(json!({
            "fold": fold,
            "best_epoch": record.best_epoch,
            "best_valid_auc": record.best_valid_auc,
            "epochs": record.epochs.len(),
            "checkpoint": ck_path,
            "run_log": log_path,
        }))
    };
    let results: Vec<Result<Value>> = if folds.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = folds
                .iter()
                .map(|&f| scope.spawn(move || run_fold(f)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fold thread panicked"))
                .collect()
        })
    } else {
        folds.iter().map(|&f| run_fold(f)).collect()
    };
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(json!({"model": model_name(base.model), "runs": runs}))
}

#[allow(clippy::too_many_arguments)]
fn eval(
    data: &DataArgs,
    checkpoint: &Path,
    split: SplitArg,
    fold: u8,
    mode: ModeArg,
    granularity: Granularity,
    feedback: Feedback,
    truth: Option<&Path>,
) -> Result<Value> {
    let model = Checkpoint::load(checkpoint)?.model;
    let (hidden, labelled) = match split {
        SplitArg::Valid => {
            let parsed = parse_train_valid(require(data.train_path())?)?.sequences;
            let (_, valid) = kfold_split(&parsed, fold)?;
            let labelled: Vec<InteractionSequence> =
                valid.iter().map(|s| s.strip_padding()).collect();
            let pairs: Vec<(InteractionSequence, InteractionSequence)> = labelled
                .into_iter()
                .filter_map(|s| hide_suffix(&s).map(|h| (h, s)))
                .collect();
            pairs.into_iter().unzip()
        }
        SplitArg::Test => {
            let truth = truth.ok_or_else(|| {
                KtError::Config("test evaluation needs --truth with the hidden labels".into())
            })?;
            let truth = SynthTruth::load(require(truth.to_path_buf())?)?;
            let tests = parse_test(require(data.test_path())?)?.sequences;
            let labelled = truth.labelled(&tests)?;
            (tests, labelled)
        }
    };
    let (set, mode) = match mode {
        ModeArg::TeacherForced => (teacher_forced_set(&model, &labelled, granularity)?, None),
        ModeArg::Accumulative | ModeArg::NonAccumulative => {
            let m = if matches!(mode, ModeArg::Accumulative) {
                Mode::Accumulative
            } else {
                Mode::NonAccumulative
            };
            let fills = predict_fills(&model, &hidden, m, feedback)?;
            (fill_set(&hidden, &labelled, &fills, granularity)?, Some(m))
        }
    };
    let r = report(&set, mode, granularity)?;
    let mut v = json!(r);
    v["model"] = json!(model.kind());
    v["split"] = json!(match split {
        SplitArg::Valid => "valid",
        SplitArg::Test => "test",
    });
    Ok(v)
}

fn predict(
    data: &DataArgs,
    checkpoint: &Path,
    mode: ModeArg,
    feedback: Feedback,
    out: &Path,
) -> Result<Value> {
    let model = Checkpoint::load(checkpoint)?.model;
    let mode = match mode {
        ModeArg::Accumulative => Mode::Accumulative,
        ModeArg::NonAccumulative => Mode::NonAccumulative,
        ModeArg::TeacherForced => {
            return Err(KtError::Config(
                "predict needs accumulative or non-accumulative mode".into(),
            ));
        }
    };
    let test_path = require(data.test_path())?;
    let tests = parse_test(&test_path)?.sequences;
    for s in &tests {
        s.validate(SequenceKind::Test)?;
    }
    let fills = predict_fills(&model, &tests, mode, feedback)?;
    let input = fs::read(&test_path).map_err(|e| KtError::Io {
        path: test_path.clone(),
        source: e,
    })?;
    let mut buffer = Vec::new();
    let summary = write_submission(&input[..], &mut buffer, &tests, &fills)?;
    fs::write(out, buffer).map_err(|e| KtError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    Ok(json!({
        "model": model.kind(),
        "mode": json!(mode),
        "rows": summary.rows,
        "filled": summary.filled,
        "out": out,
    }))
}

fn synth(
    config: Option<&Path>,
    seed: Option<u64>,
    shuffle: bool,
    plain: bool,
    out: &Path,
) -> Result<Value> {
    let mut gt = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| KtError::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            serde_json::from_str::<GroundTruth>(&text)
                .map_err(|e| KtError::Validation(format!("{}: {e}", p.display())))?
        }
        None => GroundTruth::default_scenario(),
    };
    if let Some(s) = seed {
        gt.seed = s;
    }
    gt.shuffle_labels |= shuffle;
    if plain {
        gt = gt.without_structure();
    }
    let generated = generate(&gt)?;
    generated.write(out)?;
    Ok(json!({"out": out, "counts": json!(generated.truth.counts)}))
}

fn gradcheck() -> Result<(Value, bool)> {
    let reports = gradsuite::run_all()?;
    let passed = reports.iter().all(|r| r.passed());
    Ok((
        json!({"tolerance": gradsuite::TOLERANCE, "passed": passed, "suites": json!(reports)}),
        passed,
    ))
}

fn run(cli: Cli) -> Result<(Value, bool)> {
    let ok = |v: Value| Ok((v, true));
    match cli.command {
        Command::Prepare { data } => ok(prepare(&data)?),
        Command::Stats { data } => {
            let parsed = parse_train_valid(require(data.train_path())?)?;
            let s = dataset_stats(&parsed.sequences);
            let mut v = json!(s);
            v["positive_percent"] = json!(s.positive_percent());
            ok(v)
        }
        Command::Train(args) => ok(train(&args)?),
        Command::Eval {
            data,
            checkpoint,
            split,
            fold,
            mode,
            granularity,
            feedback,
            truth,
        } => ok(eval(
            &data,
            &checkpoint,
            split,
            fold,
            mode,
            granularity.into(),
            feedback.into(),
            truth.as_deref(),
        )?),
        Command::Predict {
            data,
            checkpoint,
            mode,
            feedback,
            out,
        } => ok(predict(&data, &checkpoint, mode, feedback.into(), &out)?),
        Command::Synth {
            config,
            seed,
            shuffle_labels,
            plain,
            out,
        } => ok(synth(config.as_deref(), seed, shuffle_labels, plain, &out)?),
        Command::Gradcheck => gradcheck(),
    }
}

fn fail(kind: &str, message: &str, detail: Option<&str>) {
    eprintln!("{}", json!({"error": kind, "message": message}));
    if let Some(d) = detail {
        eprintln!("{d}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            fail("usage", first, Some(rendered.trim_end()));
            return ExitCode::from(2);
        }
    };
    let pretty = cli.pretty;
    match run(cli) {
        Ok((value, passed)) => {
            emit(&value, pretty);
            if passed {
                ExitCode::SUCCESS
            } else {
                fail(
                    "gradcheck",
                    "a finite-difference suite exceeded the tolerance",
                    None,
                );
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            let mut detail = String::new();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                detail.push_str(&format!("caused by: {s}\n"));
                source = s.source();
            }
            fail(
                e.kind(),
                &e.to_string(),
                (!detail.is_empty()).then_some(detail.trim_end()),
            );
            ExitCode::FAILURE
        }
    }
}
