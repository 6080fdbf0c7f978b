use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use triage_core::baselines::LogRegConfig;
use triage_core::datagen::{generate, GeneratorConfig};
use triage_core::eval::Metric;
use triage_core::pipeline::{
    evaluate_against, feature_rows, write_feature_csv, CompareOptions, Dataset, LogRegRanker, Ranker,
};
use triage_core::{
    parse_annotations, parse_report, train, Checkpoint, EncoderKind, FeatureMode, ModelConfig, RankingModel,
    RankingOutput, StackTrace, TokenMode,
};

#[derive(Parser, Debug)]
#[command(name = "triage", version, about = "Rank developers as fixers for crash reports")]
struct Cli {
    /// Log progress (per-epoch loss, warnings) to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus with a planted fixer signal.
    Generate(GenerateArgs),
    /// Train a ranking model on the training split of a corpus.
    Train(TrainArgs),
    /// Rank developers for a single report.
    Rank(RankArgs),
    /// Evaluate a model on the test split, optionally against baselines.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SeedArg {
    /// Random seed.
    #[arg(long, env = "DAPSTEP_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 20)]
    devs: usize,
    #[arg(long, default_value_t = 200)]
    files: usize,
    #[arg(long, default_value_t = 500)]
    reports: usize,
    /// Mean number of frames per trace.
    #[arg(long, default_value_t = 50.0)]
    mean_len: f64,
    /// Probability that the fixer is not the planted owner.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Fraction of annotations to remove.
    #[arg(long, default_value_t = 0.0)]
    drop_annotations: f64,
    /// Fraction of late reports assigned to developers absent from earlier history.
    #[arg(long, default_value_t = 0.0)]
    newcomer_fraction: f64,
    #[command(flatten)]
    seed: SeedArg,
    /// Output directory for reports.jsonl, annotations.jsonl and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Public,
    Private,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Rnn,
    Cnn,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FeaturesArg {
    None,
    Manual,
    Neural,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TokenArg {
    File,
    Method,
    Subsystem,
}

/// Model flags; anything given explicitly overrides the preset.
#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "public")]
    preset: Preset,
    #[arg(long, value_enum, default_value = "rnn")]
    model: ModelArg,
    /// Per-frame features fed to the developer encoder.
    #[arg(long, value_enum, default_value = "none")]
    features: FeaturesArg,
    /// Append the stack-level features to the scorer input.
    #[arg(long)]
    stack_features: bool,
    #[arg(long, value_enum, default_value = "file")]
    tokens: TokenArg,
    /// Ignore annotation lines edited after the report [default: off]
    #[arg(long)]
    mask_future_edits: bool,
    /// Embedding size [default: 50 public, 70 private]
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// LSTM hidden size [default: 70 public, 100 private]
    #[arg(long)]
    hidden: Option<usize>,
    /// CNN filter count [default: 32 public, 64 private]
    #[arg(long)]
    filters: Option<usize>,
    /// Scorer hidden width [default: 64]
    #[arg(long)]
    mlp_hidden: Option<usize>,
    /// Candidates per training query [default: 64]
    #[arg(long)]
    max_candidates: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Decoupled weight decay [default: 0.001]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// [default: 0.2]
    #[arg(long)]
    dropout: Option<f64>,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> Result<ModelConfig> {
        let encoder = match self.model {
            ModelArg::Rnn => EncoderKind::Rnn,
            ModelArg::Cnn => EncoderKind::Cnn,
        };
        let mut c = match self.preset {
            Preset::Public => ModelConfig::public(encoder),
            Preset::Private => ModelConfig::private(encoder),
        };
        c.feature_mode = match self.features {
            FeaturesArg::None => FeatureMode::None,
            FeaturesArg::Manual => FeatureMode::ManualFrame,
            FeaturesArg::Neural => FeatureMode::NeuralFrame,
        };
        c.token_mode = match self.tokens {
            TokenArg::File => TokenMode::File,
            TokenArg::Method => TokenMode::Method,
            TokenArg::Subsystem => TokenMode::Subsystem,
        };
        c.use_stack_features = self.stack_features;
        c.mask_future_edits = self.mask_future_edits;
        c.seed = seed;
        macro_rules! take {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag { c.$field = v; }
            )*};
        }
        take!(embedding_dim => embedding_dim, hidden => hidden_size, filters => filters,
              mlp_hidden => mlp_hidden, max_candidates => max_candidates, epochs => epochs,
              lr => learning_rate, weight_decay => weight_decay, dropout => dropout);
        for (name, v) in [
            ("embedding-dim", c.embedding_dim),
            ("hidden", c.hidden_size),
            ("filters", c.filters),
            ("mlp-hidden", c.mlp_hidden),
        ] {
            if v == 0 {
                return Err(invalid(format!("--{name} must be positive")));
            }
        }
        if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
            return Err(invalid("--lr must be positive"));
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return Err(invalid("--dropout must be in [0, 1)"));
        }
        if !(c.weight_decay >= 0.0 && c.weight_decay.is_finite()) {
            return Err(invalid("--weight-decay must be non-negative"));
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus directory with reports.jsonl and annotations.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArg,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineArg {
    Heuristic,
    TfidfLogreg,
}

#[derive(Args, Debug)]
struct RankArgs {
    /// Checkpoint to rank with.
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    model: Option<PathBuf>,
    /// Rank with a baseline instead of a model.
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    /// Corpus directory; supplies annotations, the developer pool and
    /// the tfidf-logreg training split.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Id of a report in the corpus.
    #[arg(long, requires = "data", conflicts_with = "report")]
    id: Option<String>,
    /// File holding one report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Annotations JSON lines, when no corpus directory is given.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Number of entries to print; the full ranking is always computed.
    #[arg(long)]
    top: Option<usize>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint under evaluation.
    #[arg(long)]
    model: PathBuf,
    /// Comparison: `heuristic`, `tfidf-logreg`, or another checkpoint path.
    /// Repeatable.
    #[arg(long)]
    baseline: Vec<String>,
    /// Bootstrap resamples for each comparison.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Metric compared by the bootstrap.
    #[arg(long, default_value = "mrr")]
    metric: Metric,
    /// Confidence level of the bootstrap interval.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    seed: SeedArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a per (report, developer) feature CSV for the test split.
    #[arg(long)]
    dump_features: Option<PathBuf>,
}

/// User-input problems, reported with exit code 1.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose {
        "info"
    } else {
        "warn"
    }))
    .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let io = e.chain().any(|c| {
        c.is::<std::io::Error>() || matches!(c.downcast_ref::<triage_core::Error>(), Some(triage_core::Error::Io(_)))
    });
    if io {
        2
    } else {
        1
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let config = GeneratorConfig {
        n_developers: a.devs,
        n_files: a.files,
        n_reports: a.reports,
        mean_trace_len: a.mean_len,
        noise: a.noise,
        drop_annotations: a.drop_annotations,
        newcomer_fraction: a.newcomer_fraction,
        seed: a.seed.seed,
    };
    let corpus = generate(&config)?;
    corpus
        .write_dir(&a.out)
        .with_context(|| format!("writing corpus to {}", a.out.display()))?;
    print_json(&serde_json::json!({
        "out": a.out,
        "reports": corpus.reports.len(),
        "annotations": corpus.annotations.len(),
    }))
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading corpus from {}", dir.display()))
}

fn load_model(path: &Path) -> Result<(RankingModel, Checkpoint)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = ckpt.clone().into_model()?;
    Ok((model, ckpt))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = a.model.config(a.seed.seed)?;
    let dataset = load_dataset(&a.data)?;
    let split = dataset.split()?;
    let (model, summary) = train(&split.train, &dataset.annotations, &config)?;
    Checkpoint::from_model(&model, Some(summary.clone()))
        .save(&a.out)
        .with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    print_json(&summary)
}

fn cmd_rank(a: RankArgs) -> Result<()> {
    let dataset = a.data.as_deref().map(load_dataset).transpose()?;
    let trace: StackTrace = match (&a.id, &a.report) {
        (Some(id), _) => dataset
            .as_ref()
            .and_then(|d| d.reports.iter().find(|r| &r.report_id == id))
            .cloned()
            .ok_or_else(|| invalid(format!("no report with id `{id}`")))?,
        (None, Some(path)) => {
            let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_report(raw.trim())?
        }
        (None, None) => bail!(invalid("one of --id or --report is required")),
    };
    let store = match (&a.annotations, &dataset) {
        (Some(path), _) => {
            let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_annotations(&raw)?
        }
        (None, Some(d)) => d.annotations.clone(),
        (None, None) => bail!(invalid("--annotations or --data is required")),
    };
    let mut all_devs: BTreeSet<String> = store.all_authors();
    if let Some(d) = &dataset {
        all_devs.extend(d.developers());
    }

    let list = match (a.model, a.baseline) {
        (Some(path), _) => load_model(&path)?.0.rank(&trace, &store, &all_devs),
        (None, Some(BaselineArg::Heuristic)) => Ranker::Heuristic.rank(&trace, &store, &all_devs),
        (None, Some(BaselineArg::TfidfLogreg)) => {
            let d = dataset
                .as_ref()
                .ok_or_else(|| invalid("tfidf-logreg needs --data to train on"))?;
            let split = d.split()?;
            let cfg = LogRegConfig {
                seed: a.seed.seed,
                ..Default::default()
            };
            LogRegRanker::fit(&split.train, TokenMode::File, &cfg)?.rank(&trace, &all_devs)
        }
        (None, None) => bail!(invalid("one of --model or --baseline is required")),
    };
    print_json(&RankingOutput::new(&trace.report_id, &list, a.top))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(invalid("--level must be in (0, 1)"));
    }
    if a.bootstrap == Some(0) {
        return Err(invalid("--bootstrap must be positive"));
    }
    let dataset = load_dataset(&a.data)?;
    let split = dataset.split()?;
    let (model, ckpt) = load_model(&a.model)?;

    let mut logreg = None;
    let mut others = Vec::new();
    for b in &a.baseline {
        match b.as_str() {
            "heuristic" => {}
            "tfidf-logreg" => {
                if logreg.is_none() {
                    let cfg = LogRegConfig {
                        seed: a.seed.seed,
                        ..Default::default()
                    };
                    logreg = Some(LogRegRanker::fit(&split.train, model.config.token_mode, &cfg)?);
                }
            }
            path => others.push((path.to_owned(), load_model(Path::new(path))?.0)),
        }
    }
    let baselines: Vec<(String, Ranker)> = a
        .baseline
        .iter()
        .map(|b| {
            let ranker = match b.as_str() {
                "heuristic" => Ranker::Heuristic,
                "tfidf-logreg" => Ranker::LogReg(logreg.as_ref().expect("fitted above")),
                path => Ranker::Model(&others.iter().find(|(p, _)| p == path).expect("loaded above").1),
            };
            (b.clone(), ranker)
        })
        .collect();

    let options = CompareOptions {
        bootstrap: a.bootstrap,
        metric: a.metric,
        level: a.level,
        seed: a.seed.seed,
    };
    let report = evaluate_against(
        &a.model.display().to_string(),
        &model,
        ckpt.training.as_ref(),
        &baselines,
        &dataset,
        &split,
        &options,
    )?;

    if let Some(path) = &a.dump_features {
        let rows: Vec<_> = split
            .test
            .iter()
            .flat_map(|r| feature_rows(r, &dataset.annotations, &model.idf))
            .collect();
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_feature_csv(&rows, std::io::BufWriter::new(file))?;
    }

    match &a.out {
        Some(path) => {
            let text = serde_json::to_string_pretty(&report)? + "\n";
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            Ok(())
        }
        None => print_json(&report),
    }
}
