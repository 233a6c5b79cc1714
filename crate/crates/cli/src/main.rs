use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dynamar::data::{GeneratorSpec, SyntheticTask};
use dynamar::encoder::Checkpoint;
use dynamar::harness::{emit_comparison, run_comparison, run_pool_ablation, ExperimentConfig, TemplateFile};
use dynamar::templating::{select_pool, EmbeddingCosine, ScorerKind, TokenJaccard};
use dynamar::tokenizer::{train_bpe, Vocab};
use dynamar::Error;

#[derive(Parser)]
#[command(name = "dynamar", version, about = "Dynamic prompt pools with mask-token fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenizer utilities.
    #[command(subcommand)]
    Tokenizer(TokenizerCommand),
    /// Prompt pool utilities.
    #[command(subcommand)]
    Pool(PoolCommand),
    /// Dataset utilities.
    #[command(subcommand)]
    Data(DataCommand),
    /// Compare fine-tuning strategies across tasks and seeds.
    Run(RunArgs),
    /// Sweep DYNAMAR's pool size against the PFT_CLS baseline.
    Ablate(AblateArgs),
}

#[derive(Subcommand)]
enum TokenizerCommand {
    /// Train a BPE vocabulary on a text corpus (one document per line).
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = dynamar::tokenizer::DEFAULT_VOCAB_SIZE)]
        vocab_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PoolCommand {
    /// Select a diverse pool from a template candidate file.
    Select(PoolSelectArgs),
}

#[derive(Args)]
struct PoolSelectArgs {
    #[arg(long)]
    templates: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "jaccard")]
    scorer: ScorerKind,
    #[arg(long)]
    min_dissimilarity: Option<f64>,
    /// Encoder checkpoint for the embedding scorer.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Vocabulary for the embedding scorer.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Probe document for the embedding scorer, once per slot.
    #[arg(long)]
    probe: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DataCommand {
    /// Generate a synthetic task as JSONL.
    Gen {
        #[arg(long)]
        task: String,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Number of genres for toy_genre.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        long_documents: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pool_sizes: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// A failure and the exit code it maps to.
enum Failure {
    Config(Error),
    Run(Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 3,
        }
    }
}

/// Errors caused by the user's inputs rather than by execution.
fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_)
        | Error::Json(_)
        | Error::MissingBaseline
        | Error::InvalidParams(_)
        | Error::InvalidFraction(_)
        | Error::InvalidArgument(_)
        | Error::NotEnoughCandidates { .. }
        | Error::ArityMismatch { .. }
        | Error::NoMask(_)
        | Error::MultipleMasks(_)
        | Error::BadSlots { .. }
        | Error::VocabTooSmall { .. } => Failure::Config(e),
        other => Failure::Run(other),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let config = ExperimentConfig::load(path).map_err(Failure::Config)?;
    config.validate().map_err(Failure::Config)?;
    Ok(config)
}

fn read_corpus(path: &Path) -> Result<Vec<String>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn write(path: &Path, body: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn tokenizer_train(corpus: &Path, vocab_size: usize, out: &Path) -> Result<(), Failure> {
    let docs = read_corpus(corpus).map_err(Failure::Config)?;
    let vocab = train_bpe(&docs, vocab_size).map_err(classify)?;
    vocab.save(out).map_err(Failure::Run)?;
    println!("vocabulary of {} tokens written to {}", vocab.len(), out.display());
    Ok(())
}

fn pool_select(args: &PoolSelectArgs) -> Result<(), Failure> {
    let file = TemplateFile::load(&args.templates).map_err(Failure::Config)?;
    let candidates = file.parse().map_err(Failure::Config)?;
    let selection = match args.scorer {
        ScorerKind::Jaccard => select_pool(&candidates, args.k, &TokenJaccard, args.min_dissimilarity),
        ScorerKind::Embedding => {
            let (Some(ckpt), Some(vocab)) = (&args.checkpoint, &args.vocab) else {
                return Err(Failure::Config(Error::Config(
                    "the embedding scorer needs --checkpoint and --vocab".into(),
                )));
            };
            let model = Checkpoint::load(ckpt).map_err(Failure::Config)?.model;
            let vocab = Vocab::load(vocab).map_err(Failure::Config)?;
            let probe: Vec<&str> = if args.probe.is_empty() {
                vec!["sample document"; file.arity.count()]
            } else {
                args.probe.iter().map(String::as_str).collect()
            };
            let scorer = EmbeddingCosine::new(&model, &vocab, &probe);
            select_pool(&candidates, args.k, &scorer, args.min_dissimilarity)
        }
    }
    .map_err(classify)?;
    let out = TemplateFile {
        task: file.task,
        arity: file.arity,
        candidates: selection.pool.templates().iter().map(|t| t.source().to_string()).collect(),
    };
    let json = serde_json::to_string_pretty(&out).map_err(|e| Failure::Run(e.into()))?;
    write(&args.out, &(json + "\n")).map_err(Failure::Run)?;
    for (i, t) in selection.indices.iter().zip(selection.pool.templates()) {
        println!("{i}\t{}", t.source());
    }
    Ok(())
}

fn data_gen(task: &str, spec: impl FnOnce(SyntheticTask) -> GeneratorSpec, out: &Path) -> Result<(), Failure> {
    let task = SyntheticTask::parse(task)
        .ok_or_else(|| Failure::Config(Error::Config(format!("unknown synthetic task {task:?}"))))?;
    let dataset = spec(task).generate().map_err(classify)?;
    write(out, &dataset.to_jsonl()).map_err(Failure::Run)?;
    println!("{} examples written to {}", dataset.len(), out.display());
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let config = load_config(&args.config)?;
    let comparison = run_comparison(&config).map_err(classify)?;
    emit_comparison(&comparison, &args.out).map_err(Failure::Run)?;
    print!("{}", comparison.report.markdown());
    Ok(())
}

fn ablate(args: &AblateArgs) -> Result<(), Failure> {
    let config = load_config(&args.config)?;
    let curve = run_pool_ablation(&config, &args.pool_sizes).map_err(classify)?;
    curve.write(&args.out).map_err(Failure::Run)?;
    for p in &curve.points {
        println!("pool {:>2}: {:+.2}% (se {:.2})", p.pool_size, p.avg_improvement, p.std_err);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Tokenizer(TokenizerCommand::Train { corpus, vocab_size, out }) => {
            tokenizer_train(corpus, *vocab_size, out)
        }
        Command::Pool(PoolCommand::Select(args)) => pool_select(args),
        Command::Data(DataCommand::Gen { task, size, seed, noise, classes, long_documents, out }) => data_gen(
            task,
            |t| {
                let mut spec = GeneratorSpec::new(t, *size, *seed, *noise);
                if let Some(c) = classes {
                    spec.classes = *c;
                }
                spec.long_documents = *long_documents;
                spec
            },
            out,
        ),
        Command::Run(args) => run(args),
        Command::Ablate(args) => ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(e) | Failure::Run(e)) = &f;
            eprintln!("error: {e}");
            ExitCode::from(f.code())
        }
    }
}
