//! `jet`: train, run and score the triplet extractor from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufWriter, Read, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use jet_core::checkpoint::{self, Checkpoint, Dtype};
use jet_core::embeddings::Pretrained;
use jet_core::eval::{self, Facet, MatchMode, Prf};
use jet_core::io::{self as corpus, CorpusRecord};
use jet_core::selfcheck;
use jet_core::tagging::{self, Scheme, TagSequence, Triplet};
use jet_core::training::{self, TrainConfig, TrainError};

/// Relative input paths that do not exist are looked up under this directory.
const DATA_DIR_VAR: &str = "JET_DATA_DIR";

#[derive(Parser)]
#[command(name = "jet", version, about = "Joint extraction of (target, opinion, sentiment) triplets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best-dev checkpoint.
    Train(TrainArgs),
    /// Tag a corpus with a trained model, writing JSONL.
    Predict(PredictArgs),
    /// Score predictions against gold triplets.
    Eval(EvalArgs),
    /// Print the tag sequence of every record, one line each.
    Encode(CodecArgs),
    /// Turn tag-sequence lines back into triplets, one JSON line each.
    Decode(CodecArgs),
    /// Add donor triplets that overlap no base triplet.
    Merge(MergeArgs),
    /// Dataset statistics.
    Stats(StatsArgs),
    /// Run the built-in verification suites.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with training settings and data paths.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training corpus (JSONL, or ASTE text when the extension is .txt).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Word vectors in text format: a token then its components per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Checkpoint directory to write.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    max_offset: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    offset_dim: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Drop the offset factor.
    #[arg(long)]
    no_offset_features: bool,
    /// Drop the opinion-span factor.
    #[arg(long)]
    no_opinion_features: bool,
    /// Let the CRF produce sequences that break the BIOES structure.
    #[arg(long)]
    no_structural_mask: bool,
    #[arg(long)]
    freeze_embeddings: bool,
    /// Payload precision of the checkpoint.
    #[arg(long, default_value = "f64")]
    dtype: Dtype,
}

/// Layout of the `--config` file: every training setting as a top-level key,
/// plus an optional `[data]` table.
#[derive(Deserialize, Default)]
#[serde(default)]
struct ConfigFile {
    data: DataPaths,
    #[serde(flatten)]
    train: TrainConfig,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct DataPaths {
    train: Option<PathBuf>,
    dev: Option<PathBuf>,
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sentences to tag; gold triplets, if any, are ignored.
    #[arg(long)]
    input: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    PartialTarget,
    PartialOpinion,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum FacetArg {
    TargetLen,
    OpinionLen,
    OffsetLen,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Table,
    Kv,
    Json,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Report scores per length bucket as CSV.
    #[arg(long, value_enum)]
    by_length: Option<FacetArg>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct CodecArgs {
    #[arg(long, default_value = "t")]
    scheme: Scheme,
    #[arg(long, default_value_t = 6)]
    max_offset: usize,
    /// Input file; standard input when absent. Encode reads a corpus, decode
    /// reads one tag sequence per line.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    donor: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// One or more corpora; a total row is added for several.
    #[arg(required = true)]
    corpora: Vec<PathBuf>,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// A failed command, classified by exit code.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
    fn internal(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }

    fn internal(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Internal(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => evaluate(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Merge(a) => merge(a),
        Command::Stats(a) => stats(a),
        Command::Selfcheck(a) => self_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("data error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn resolve(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(DATA_DIR_VAR) {
            return Path::new(&dir).join(path);
        }
    }
    path.to_path_buf()
}

fn load(path: &Path) -> Result<Vec<CorpusRecord>, Failure> {
    let records = corpus::load_corpus(&resolve(path)).data()?;
    for w in corpus::self_overlap_warnings(&records) {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(records)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("cannot create {}", p.display())).data()?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Maps write failures to data errors; a closed pipe (`jet ... | head`) ends
/// the output quietly.
fn written(result: io::Result<()>) -> Result<(), Failure> {
    match result {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => other.context("cannot write output").data(),
    }
}

fn emit(text: &str) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    written(out.write_all(text.as_bytes()).and_then(|()| out.flush()))
}

fn triplet_sets(records: &[CorpusRecord]) -> Vec<Vec<Triplet>> {
    records.iter().map(|r| r.triplets.clone()).collect()
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let file: ConfigFile = match &a.config {
        Some(path) => {
            let path = resolve(path);
            let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display())).data()?;
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display())).data()?
        }
        None => ConfigFile::default(),
    };
    let mut config = file.train;
    macro_rules! override_with {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { config.$field = v; })* };
    }
    override_with!(seed, scheme, max_offset, epochs, batch_size, learning_rate, dropout, embed_dim, hidden_dim, offset_dim);
    if a.clip_norm.is_some() {
        config.clip_norm = a.clip_norm;
    }
    config.use_offset_features &= !a.no_offset_features;
    config.use_opinion_features &= !a.no_opinion_features;
    config.structural_mask &= !a.no_structural_mask;
    config.freeze_embeddings |= a.freeze_embeddings;
    config.validate().usage()?;

    let train_path = a.train.or(file.data.train).ok_or_else(|| anyhow!("no training corpus given")).usage()?;
    let dev_path = a.dev.or(file.data.dev).ok_or_else(|| anyhow!("no development corpus given")).usage()?;
    let train_set = load(&train_path)?;
    let dev_set = load(&dev_path)?;

    let pretrained = match a.embeddings.or(file.data.embeddings) {
        Some(path) => {
            let keep: HashSet<String> = train_set.iter().chain(&dev_set).flat_map(|r| r.tokens.iter().cloned()).collect();
            Some(Pretrained::load(&resolve(&path), Some(&keep)).data()?)
        }
        None => None,
    };
    let model = training::init_model(&config, &train_set, &dev_set, pretrained.as_ref()).map_err(train_failure)?;
    eprintln!(
        "training on {} sentences, {} parameters, vocabulary {}",
        train_set.len(),
        model.params().num_parameters(),
        model.vocab.len()
    );
    let outcome = training::train_with_observer(&config, model, &train_set, &dev_set, |r, _| {
        eprintln!(
            "epoch {:>3}  loss {:>12.4}  dev P {:.4} R {:.4} F1 {:.4}",
            r.epoch, r.train_loss, r.dev.precision, r.dev.recall, r.dev.f1
        );
        ControlFlow::Continue(())
    })
    .map_err(train_failure)?;
    eprintln!("instances: {}", outcome.drops);
    let best = Checkpoint {
        model: outcome.model,
        train_config: config,
        dev_f1: outcome.best_dev_f1,
        epoch: outcome.best_epoch,
    };
    checkpoint::save(&a.output, &best, a.dtype).data()?;
    emit(&format!(
        "best dev F1 {:.4} at epoch {}, checkpoint written to {}\n",
        best.dev_f1,
        best.epoch,
        a.output.display()
    ))
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::InvalidConfig(_) => Failure::Usage(e.into()),
        TrainError::NoTrainableInstances | TrainError::EmptyDevSet => Failure::Data(e.into()),
        other => Failure::Internal(other.into()),
    }
}

fn predict(a: PredictArgs) -> Result<(), Failure> {
    let ck = checkpoint::load(&resolve(&a.checkpoint)).data()?;
    let records = load(&a.input)?;
    let sentences: Vec<Vec<String>> = records.iter().map(|r| r.tokens.clone()).collect();
    let predicted = training::predict_all(&ck.model, &sentences).internal()?;
    let out: Vec<CorpusRecord> = sentences
        .into_iter()
        .zip(predicted)
        .map(|(tokens, triplets)| CorpusRecord { tokens, triplets })
        .collect();
    written(corpus::write_jsonl_to(output(a.output.as_deref())?, &out))
}

fn print_scores(rows: &[(String, Prf)], format: Format) -> Result<(), Failure> {
    let mut text = String::new();
    match format {
        Format::Text => {
            for (name, p) in rows {
                text += &format!(
                    "{name}: P {:.3} R {:.3} F1 {:.3} (matched {}, predicted {}, gold {})\n",
                    p.precision, p.recall, p.f1, p.matched, p.predicted, p.gold
                );
            }
        }
        Format::Table => text = eval::render_table(rows),
        Format::Kv => {
            for (name, p) in rows {
                for line in p.to_key_values().lines() {
                    text += &format!("{name}.{line}\n");
                }
            }
        }
        Format::Json => {
            let map: serde_json::Map<String, serde_json::Value> = rows
                .iter()
                .map(|(n, p)| (n.clone(), serde_json::to_value(p).expect("scores serialize")))
                .collect();
            text = serde_json::to_string_pretty(&map).expect("scores serialize") + "\n";
        }
    }
    emit(&text)
}

fn evaluate(a: EvalArgs) -> Result<(), Failure> {
    let gold = triplet_sets(&load(&a.gold)?);
    let pred = triplet_sets(&load(&a.pred)?);
    let modes: Vec<MatchMode> = match a.mode {
        ModeArg::Exact => vec![MatchMode::Exact],
        ModeArg::PartialTarget => vec![MatchMode::PartialTarget],
        ModeArg::PartialOpinion => vec![MatchMode::PartialOpinion],
        ModeArg::All => MatchMode::ALL.to_vec(),
    };
    if let Some(facet) = a.by_length {
        let facet = match facet {
            FacetArg::TargetLen => Facet::TargetLen,
            FacetArg::OpinionLen => Facet::OpinionLen,
            FacetArg::OffsetLen => Facet::OffsetLen,
        };
        let mut text = String::new();
        for mode in modes {
            if a.mode_is_all() {
                text += &format!("# {}\n", mode.name());
            }
            let buckets = eval::length_breakdown(&gold, &pred, mode, facet).data()?;
            text += &eval::breakdown_csv(facet, &buckets);
        }
        return emit(&text);
    }
    let rows = modes
        .into_iter()
        .map(|m| Ok((m.name().to_string(), eval::score(&gold, &pred, m).data()?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    print_scores(&rows, a.format)
}

impl EvalArgs {
    fn mode_is_all(&self) -> bool {
        matches!(self.mode, ModeArg::All)
    }
}

fn read_input(path: Option<&Path>) -> Result<String, Failure> {
    match path {
        Some(p) => {
            let p = resolve(p);
            fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display())).data()
        }
        None => {
            let mut text = String::new();
            io::stdin().read_to_string(&mut text).context("cannot read standard input").data()?;
            Ok(text)
        }
    }
}

fn encode(a: CodecArgs) -> Result<(), Failure> {
    let records = match &a.input {
        Some(p) => load(p)?,
        None => corpus::read_jsonl(io::Cursor::new(read_input(None)?)).data()?,
    };
    let mut text = String::new();
    for (i, r) in records.iter().enumerate() {
        let seq = tagging::encode(r.tokens.len(), &r.triplets, a.scheme, a.max_offset)
            .with_context(|| format!("sentence {}", i + 1))
            .data()?;
        text += &format!("{seq}\n");
    }
    emit(&text)
}

fn decode(a: CodecArgs) -> Result<(), Failure> {
    let input = read_input(a.input.as_deref())?;
    let mut text = String::new();
    for (i, line) in io::Cursor::new(input).lines().enumerate() {
        let line = line.data()?;
        if line.trim().is_empty() {
            continue;
        }
        let seq = TagSequence::parse(&line, a.scheme, a.max_offset)
            .map_err(|e| anyhow!("line {}: {e}", i + 1))
            .data()?;
        let triplets = tagging::decode(&seq).with_context(|| format!("line {}", i + 1)).data()?;
        let json: Vec<serde_json::Value> = triplets
            .iter()
            .map(|t| {
                serde_json::json!({
                    "target": [t.target.start, t.target.end],
                    "opinion": [t.opinion.start, t.opinion.end],
                    "sentiment": t.sentiment,
                })
            })
            .collect();
        text += &format!("{}\n", serde_json::json!({ "length": seq.tags.len(), "triplets": json }));
    }
    emit(&text)
}

fn merge(a: MergeArgs) -> Result<(), Failure> {
    let base = load(&a.base)?;
    let donor = load(&a.donor)?;
    if base.iter().zip(&donor).any(|(b, d)| b.tokens != d.tokens) {
        return Err(Failure::Data(anyhow!("base and donor predictions cover different sentences")));
    }
    let merged = eval::ensemble_merge(&triplet_sets(&base), &triplet_sets(&donor)).data()?;
    let out: Vec<CorpusRecord> = base
        .into_iter()
        .zip(merged)
        .map(|(r, triplets)| CorpusRecord {
            tokens: r.tokens,
            triplets,
        })
        .collect();
    written(corpus::write_jsonl_to(output(a.output.as_deref())?, &out))
}

fn stats(a: StatsArgs) -> Result<(), Failure> {
    let mut total = corpus::DatasetStats::default();
    let mut text = String::new();
    for path in &a.corpora {
        let s = corpus::stats(&load(path)?);
        text += &format!("{}\n{s}\n", path.display());
        total += s;
    }
    if a.corpora.len() > 1 {
        text += &format!("total\n{total}\n");
    }
    emit(&text)
}

fn self_check(a: SelfcheckArgs) -> Result<(), Failure> {
    let reports = selfcheck::run_all(a.seed);
    let mut text = String::new();
    for r in &reports {
        text += &format!("[{}] {}: {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    emit(&text)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Internal(anyhow!("suites failed: {}", failed.join(", "))))
    }
}
