use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use quizhost_core::corpus::{
    corpus_stats, generate_corpus, load_corpus, parse_corpus, training_sequences, write_corpus,
    GeneratorConfig,
};
use quizhost_core::eval::{
    load_scripts, run_scripts, EvalConfig, BUNDLED_SCRIPTS_DIR, DEFAULT_CROSSTALK_PROBABILITY,
};
use quizhost_core::policy::{
    accuracy, gradient_check, train, Accuracy, Lstm, TrainingSequence, DEFAULT_HIDDEN,
    DEFAULT_THRESHOLD,
};
use quizhost_core::trivia::{fetch_questions, Fixture, QuestionSource, OPENTDB_URL};
use quizhost_core::{IntentRegistry, LockInStrategy, PolicyModel, SpeakerId, TrainConfig};
use quizhost_server::http::serve;
use quizhost_server::{
    GameSession, Outgoing, Recipient, ServerBody, Service, ServiceConfig, SessionSettings, Shared,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tracing_subscriber::EnvFilter;

/// Deterministic token source for local play.
fn local_tokens() -> impl FnMut() -> String {
    let mut n = 0u32;
    move || {
        n += 1;
        format!("local-{n}")
    }
}

#[derive(Parser)]
#[command(
    name = "quizhost",
    version,
    about = "Two-player quiz host: corpus tools, policy training, evaluation and game service"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect annotated transcript corpora.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Train the host policy and write a model artifact.
    Train(TrainArgs),
    /// Run the agreement-detection harness over scripted dialogues.
    Eval(EvalArgs),
    /// Run the WebSocket game service.
    Serve(ServeArgs),
    /// Play a game from standard input.
    Play(PlayArgs),
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Write a synthetic corpus as JSON lines.
    Generate {
        #[arg(long, default_value_t = 60)]
        episodes: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value = "syn")]
        prefix: String,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-intent counts, target balance and sequence lengths.
    Stats {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus file (JSON lines). A synthetic corpus is generated when absent.
    #[arg(long, env = "QUIZHOST_CORPUS")]
    corpus: Option<PathBuf>,
    /// Episodes to generate when no corpus is given (10 questions each).
    #[arg(long, default_value_t = 7)]
    episodes: usize,
    #[arg(long, default_value_t = 2024)]
    corpus_seed: u64,
    /// Question sequences held out from the end of the corpus.
    #[arg(long, default_value_t = 20)]
    holdout: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, env = "QUIZHOST_MODEL", default_value = "model.json")]
    out: PathBuf,
    /// Write a JSON training report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Check analytic gradients against finite differences before training.
    #[arg(long)]
    gradient_check: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = BUNDLED_SCRIPTS_DIR)]
    scripts: PathBuf,
    #[arg(long, env = "QUIZHOST_MODEL")]
    model: PathBuf,
    /// Inject cross-channel copies of utterances.
    #[arg(long)]
    crosstalk: bool,
    /// Turn off the duplicate filter.
    #[arg(long)]
    no_dedup: bool,
    #[arg(long, default_value_t = DEFAULT_CROSSTALK_PROBABILITY)]
    crosstalk_probability: f64,
    /// Strategy for scripts that do not fix their own.
    #[arg(long, default_value_t = LockInStrategy::default())]
    strategy: LockInStrategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "QUIZHOST_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "QUIZHOST_BIND", default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, env = "QUIZHOST_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = LockInStrategy::default())]
    strategy: LockInStrategy,
    /// `bundled`, `opentdb`, an http(s) URL, or a fixture file path.
    #[arg(long, env = "QUIZHOST_QUESTIONS", default_value = "bundled")]
    questions_source: String,
    /// Append-only JSONL log of every server message.
    #[arg(long, env = "QUIZHOST_LOG")]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 15_000)]
    idle_ms: u64,
    #[arg(long, default_value_t = 600)]
    gc_secs: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct PlayArgs {
    /// Both players on standard input, one `1: ...` or `2: ...` line each.
    #[arg(long)]
    local: bool,
    #[arg(long, env = "QUIZHOST_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = LockInStrategy::default())]
    strategy: LockInStrategy,
    #[arg(long, env = "QUIZHOST_QUESTIONS", default_value = "bundled")]
    questions_source: String,
    #[arg(long, default_value_t = 10)]
    questions: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Milliseconds between input lines on the session clock.
    #[arg(long, default_value_t = 2_000)]
    step_ms: u64,
    /// Print every server message as a JSON line instead of plain text.
    #[arg(long)]
    jsonl: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Corpus { command } => corpus_cmd(command),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Serve(args) => serve_cmd(args),
        Command::Play(args) => play_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn corpus_cmd(cmd: CorpusCommand) -> Result<()> {
    match cmd {
        CorpusCommand::Generate {
            episodes,
            seed,
            prefix,
            out,
        } => {
            let rows = generate_corpus(&GeneratorConfig {
                episodes,
                seed,
                episode_prefix: prefix,
            })?;
            match out {
                Some(path) => {
                    let f = std::fs::File::create(&path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    write_corpus(&rows, std::io::BufWriter::new(f))?;
                    eprintln!("wrote {} rows to {}", rows.len(), path.display());
                }
                None => write_corpus(&rows, std::io::stdout().lock())?,
            }
        }
        CorpusCommand::Stats { path, json } => {
            let corpus = load_corpus(&path)?;
            let stats = corpus_stats(&corpus, &IntentRegistry::standard())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                println!(
                    "episodes {}  sequences {}  rows {}  mean length {:.2}",
                    stats.episodes, stats.sequences, stats.rows, stats.mean_sequence_length
                );
                println!("intents:");
                for (k, v) in &stats.intents {
                    println!("  {k:<28} {v}");
                }
                println!("policy targets:");
                let total: usize = stats.targets.values().sum();
                for (k, v) in &stats.targets {
                    println!(
                        "  {k:<28} {v} ({:.1}%)",
                        100.0 * *v as f64 / total.max(1) as f64
                    );
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct GradientReport {
    hidden: usize,
    steps: usize,
    max_relative_error: f64,
    masked_head_zero: bool,
    seconds: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    train_questions: usize,
    holdout_questions: usize,
    config: TrainConfig,
    train_accuracy: Accuracy,
    holdout_accuracy: Option<Accuracy>,
    final_loss: f64,
    seconds: f64,
    model: PathBuf,
    model_sha256: String,
    gradient_check: Option<GradientReport>,
}

/// Hidden size 8 over the first five steps of a corpus sequence, plus a
/// check that silent targets leave the action head untouched.
fn check_gradients(
    seqs: &[TrainingSequence],
    registry: &IntentRegistry,
    seed: u64,
) -> Result<GradientReport> {
    let started = Instant::now();
    let seq = seqs
        .iter()
        .find(|s| s.steps.len() >= 5)
        .context("no sequence with five steps for the gradient check")?;
    let (steps, targets) = seq.raw();
    let (steps, targets) = (&steps[..5], &targets[..5]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Lstm::init(registry.input_dim(), 8, &mut rng);
    let max_relative_error = gradient_check(&net, steps, targets, 1e-5);
    let silent = vec![None; steps.len()];
    let (_, grad) = net.loss_and_grad(steps, &silent);
    let layout = net.layout;
    let masked_head_zero = grad[layout.wa()]
        .iter()
        .chain(&grad[layout.ba()])
        .all(|g| g.to_bits() == 0);
    Ok(GradientReport {
        hidden: 8,
        steps: 5,
        max_relative_error,
        masked_head_zero,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let registry = IntentRegistry::standard();
    let corpus = match &args.corpus {
        Some(path) => load_corpus(path)?,
        None => {
            let rows = generate_corpus(&GeneratorConfig {
                episodes: args.episodes,
                seed: args.corpus_seed,
                ..GeneratorConfig::default()
            })?;
            let mut buf = Vec::new();
            write_corpus(&rows, &mut buf)?;
            parse_corpus(std::str::from_utf8(&buf)?)?
        }
    };
    if args.holdout >= corpus.sequences.len() {
        bail!(
            "holdout of {} leaves nothing to train on ({} sequences)",
            args.holdout,
            corpus.sequences.len()
        );
    }
    let (train_part, holdout_part) = corpus.split_holdout(args.holdout);
    let train_seqs = training_sequences(&train_part, &registry)?;
    let holdout_seqs = training_sequences(&holdout_part, &registry)?;
    let config = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        hidden: args.hidden,
        seed: args.seed,
        threshold: args.threshold,
        ..TrainConfig::default()
    };
    let gradient = if args.gradient_check {
        let g = check_gradients(&train_seqs, &registry, args.seed)?;
        eprintln!(
            "gradient check: max relative error {:.3e} (hidden 8, 5 steps, {:.2}s); masked head zero: {}",
            g.max_relative_error, g.seconds, g.masked_head_zero
        );
        Some(g)
    } else {
        None
    };
    let started = Instant::now();
    let (model, report) = train(registry, &train_seqs, config.clone())?;
    let seconds = started.elapsed().as_secs_f64();
    model.save(&args.out)?;
    let holdout_accuracy =
        (!holdout_seqs.is_empty()).then(|| accuracy(&model, &holdout_seqs, args.threshold));
    let summary = TrainSummary {
        train_questions: train_seqs.len(),
        holdout_questions: holdout_seqs.len(),
        config,
        train_accuracy: report.train_accuracy,
        holdout_accuracy,
        final_loss: report.epochs.last().map_or(0.0, |e| e.mean_loss),
        seconds,
        model: args.out.clone(),
        model_sha256: model.sha256()?,
        gradient_check: gradient,
    };
    println!(
        "trained on {} questions in {:.2}s: train accuracy {:.4}, priming {:.4}",
        summary.train_questions,
        seconds,
        summary.train_accuracy.rate(),
        summary.train_accuracy.priming_rate()
    );
    if let Some(h) = &summary.holdout_accuracy {
        println!(
            "held-out {} questions: accuracy {:.4}, priming {:.4}",
            summary.holdout_questions,
            h.rate(),
            h.priming_rate()
        );
    }
    println!(
        "model written to {} (sha256 {})",
        args.out.display(),
        summary.model_sha256
    );
    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&summary)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let scripts = load_scripts(&args.scripts)?;
    let model = PolicyModel::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let cfg = EvalConfig {
        crosstalk: args.crosstalk,
        dedup: !args.no_dedup,
        crosstalk_probability: args.crosstalk_probability,
        model: Some(Arc::new(model)),
        threshold: args.threshold,
        strategy: args.strategy,
        seed: args.seed,
        ..EvalConfig::default()
    };
    let report = run_scripts(&scripts, &cfg)?;
    print!("{}", report.table());
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn question_source(spec: &str) -> QuestionSource {
    match spec {
        "bundled" => QuestionSource::Fixture(Fixture::Bundled),
        "opentdb" => QuestionSource::Remote {
            url: OPENTDB_URL.to_string(),
            fallback: Some(Fixture::Bundled),
        },
        s if s.starts_with("http://") || s.starts_with("https://") => QuestionSource::Remote {
            url: s.to_string(),
            fallback: Some(Fixture::Bundled),
        },
        path => QuestionSource::Fixture(Fixture::Path(PathBuf::from(path))),
    }
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let service = Service::new(ServiceConfig {
        model: args.model,
        strategy: args.strategy,
        questions: question_source(&args.questions_source),
        threshold: args.threshold,
        idle_threshold_ms: args.idle_ms,
        gc_after: Duration::from_secs(args.gc_secs),
        log: args.log,
        ..ServiceConfig::default()
    })?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.bind.as_str(), args.port)).await?;
        let addr = listener.local_addr()?;
        println!("listening on {addr}");
        std::io::stdout().flush()?;
        if let Some(sha) = service.model_sha256() {
            tracing::info!(model_sha256 = sha, "model loaded");
        }
        serve(listener, service).await?;
        Ok(())
    })
}

fn load_optional_model(path: Option<&Path>) -> Result<Option<Arc<PolicyModel>>> {
    path.map(|p| {
        PolicyModel::load(p)
            .map(Arc::new)
            .with_context(|| format!("loading model {}", p.display()))
    })
    .transpose()
}

fn print_outgoing(out: &[Outgoing], jsonl: bool, w: &mut impl Write) -> Result<()> {
    for o in out {
        if jsonl {
            writeln!(w, "{}", serde_json::to_string(&o.message)?)?;
            continue;
        }
        let to = match o.to {
            Recipient::All => String::new(),
            Recipient::Player(p) => format!(" [to {p}]"),
        };
        match &o.message.body {
            ServerBody::HostSay { text, .. } => writeln!(w, "host{to}: {text}")?,
            ServerBody::Error { code, message } => writeln!(w, "error{to}: {message} ({code:?})")?,
            ServerBody::GameOver {
                score,
                total,
                winnings,
            } => writeln!(w, "game over: {score}/{total} correct, winnings {winnings}")?,
            ServerBody::Joined { .. } | ServerBody::State { .. } => {}
        }
    }
    Ok(())
}

/// Parses `1: text`, `2: text`, or `1@4500: text` with an explicit time.
fn parse_line(line: &str) -> Option<(SpeakerId, Option<u64>, &str)> {
    let (head, text) = line.split_once(':')?;
    let (who, at) = match head.split_once('@') {
        Some((w, t)) => (w.trim(), Some(t.trim().parse().ok()?)),
        None => (head.trim(), None),
    };
    let speaker = match who {
        "1" => SpeakerId::User1,
        "2" => SpeakerId::User2,
        _ => return None,
    };
    Some((speaker, at, text.trim()))
}

fn play_cmd(args: PlayArgs) -> Result<()> {
    if !args.local {
        bail!("only --local play is available here; use `serve` for networked games");
    }
    let model = load_optional_model(args.model.as_deref())?;
    let questions = fetch_questions(
        args.questions,
        &question_source(&args.questions_source),
        args.seed,
    )?;
    let settings = SessionSettings {
        strategy: args.strategy,
        seed: args.seed,
        threshold: args.threshold,
        model,
        ..SessionSettings::default()
    };
    let mut session = GameSession::new("local", questions, settings, Shared::default())?;
    let mut tokens = local_tokens();
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for _ in 0..2 {
        let (_, out) = session.join(None, &mut tokens)?;
        print_outgoing(&out, args.jsonl, &mut w)?;
    }
    let mut clock = 0;
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(ms) = line.strip_prefix("!idle") {
            let ms: u64 = ms.trim().parse().context("`!idle` takes milliseconds")?;
            clock += ms;
            let out = session.tick(clock);
            print_outgoing(&out, args.jsonl, &mut w)?;
            continue;
        }
        let Some((speaker, at, text)) = parse_line(line) else {
            eprintln!("ignored (expected `1: ...` or `2: ...`): {line}");
            continue;
        };
        clock = at.unwrap_or(clock + args.step_ms).max(clock);
        let out = session.utterance(speaker, text, Some(clock));
        print_outgoing(&out, args.jsonl, &mut w)?;
        if session.is_over() {
            break;
        }
    }
    w.flush()?;
    Ok(())
}
