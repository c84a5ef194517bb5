//! `auditnet`: operator entry point for ingestion, indexing, calibration,
//! evaluation, querying and serving.
//!
//! stdout carries only JSON or Markdown payloads. Logs and prompts go to
//! stderr. Exit code 1 means a usage error, 2 a data or provider error.

mod confirm;

use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auditnet_core::corpus::DocFormat;
use auditnet_core::embed::embed_texts;
use auditnet_core::engine::{Engine, EngineConfig, EngineError};
use auditnet_core::evalkit::{self, EvalError, LlmParaphraser, MockParaphraser, Paraphraser};
use auditnet_core::extractor::{read_labels, ExtractError};
use auditnet_core::interpreter::{confirm as confirm_slots, ConfirmError};
use auditnet_core::tagger::TagMode;
use auditnet_server::ServerConfig;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use confirm::Decision;

#[derive(Parser)]
#[command(name = "auditnet", version, about = "Compliance auditing assistant over security standards")]
struct Cli {
    /// Directory holding the corpus, index and configuration files.
    #[arg(long, global = true, env = "AUDITNET_DATA_DIR", default_value = "auditnet-data")]
    data_dir: PathBuf,

    /// Scripted responses for the mock LLM provider.
    #[arg(long, global = true, env = "AUDITNET_MOCK_SCRIPT")]
    mock_script: Option<PathBuf>,

    /// Log more (-v info, -vv debug). Logs go to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Md,
    Txt,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParaphraserArg {
    Mock,
    Llm,
}

#[derive(Subcommand)]
enum Command {
    /// Register documents as one standard and re-chunk the corpus.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        standard: String,
        /// Defaults to the file extension (.md is Markdown, anything else text).
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Title for a single document; defaults to the file stem.
        #[arg(long)]
        title: Option<String>,
    },
    /// Rebuild the vector index over every chunk.
    Index,
    /// Histogram of normalized section lengths.
    Stats {
        #[arg(long, default_value_t = 10)]
        buckets: usize,
        #[arg(long)]
        doc: Option<String>,
    },
    /// Fit per-document similarity thresholds from labeled pairs (JSONL).
    Calibrate {
        #[arg(long)]
        labels: PathBuf,
    },
    /// Slot accuracy and retrieval hit@k over a dataset (JSONL).
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build an evaluation dataset from question templates.
    Dataset {
        #[arg(long)]
        templates: PathBuf,
        #[arg(long, default_value_t = 10)]
        paraphrases: usize,
        #[arg(long, value_enum, default_value = "mock")]
        paraphraser: ParaphraserArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpret, confirm and answer one question.
    Query {
        text: String,
        /// Confirm the interpretation without prompting.
        #[arg(long)]
        yes: bool,
        /// Emit the answer bundle as JSON instead of Markdown.
        #[arg(long)]
        json: bool,
        #[arg(long, value_enum)]
        tag_mode: Option<TagModeArg>,
    },
    /// Interactive loop of query, confirmation and answer.
    Chat,
    /// Embed texts with the active provider and print the vectors as JSON.
    /// Reads one text per stdin line when no texts are given.
    Embed { texts: Vec<String> },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Allowed browser origin; repeat for several. Any origin when absent.
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TagModeArg {
    Sentence,
    Paragraph,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Confirm(#[from] ConfirmError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Other(String),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

fn open_engine(cli: &Cli) -> Result<Engine, CliError> {
    let mut config = EngineConfig::from_env(&cli.data_dir)?;
    if cli.mock_script.is_some() {
        config.mock_script = cli.mock_script.clone();
    }
    Ok(Engine::open(config)?)
}

fn ingest(engine: &mut Engine, paths: &[PathBuf], standard: &str, format: Option<FormatArg>, title: Option<&str>) -> Result<(), CliError> {
    if title.is_some() && paths.len() > 1 {
        return Err(CliError::Other("--title applies to a single document".into()));
    }
    let mut outcomes = Vec::new();
    for path in paths {
        let content = std::fs::read_to_string(path).map_err(io_at(path))?;
        let format = match format {
            Some(FormatArg::Md) => DocFormat::Markdown,
            Some(FormatArg::Txt) => DocFormat::Plaintext,
            None if path.extension().is_some_and(|e| e == "md" || e == "markdown") => DocFormat::Markdown,
            None => DocFormat::Plaintext,
        };
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let outcome = engine.ingest(title.unwrap_or(&stem), standard, format, &content)?;
        tracing::info!(doc_id = %outcome.doc_id, chunks = outcome.n_chunks, "ingested");
        outcomes.push(outcome);
    }
    print_json(&outcomes);
    Ok(())
}

/// Interprets `text`, confirms it (interactively unless `yes`) and answers.
/// Returns `None` when the user rejects the interpretation.
fn answer_one(
    engine: &Engine,
    text: &str,
    yes: bool,
    input: &mut impl BufRead,
) -> Result<Option<auditnet_core::composer::AnswerBundle>, CliError> {
    let interpreted = engine.interpret_with_fallback(text)?;
    if let Some(reason) = &interpreted.degraded_reason {
        tracing::warn!("language model unavailable ({reason}); slots come from the gazetteer");
    }
    let edits = if yes {
        eprintln!("Interpreted query:\n{}", confirm::describe(&interpreted.interpretation));
        Default::default()
    } else {
        match confirm::ask(&interpreted.interpretation, input, &mut io::stderr()).map_err(io_at(Path::new("<stdin>")))? {
            Decision::Accept(edits) => edits,
            Decision::Reject => return Ok(None),
        }
    };
    let confirmed = confirm_slots(&interpreted.interpretation, &edits)?;
    Ok(Some(engine.answer(&confirmed, chrono::Utc::now())?))
}

fn chat(engine: &Engine) -> Result<(), CliError> {
    let stdin = io::stdin();
    let mut input = stdin.lock();
    loop {
        eprint!("question> ");
        io::stderr().flush().ok();
        let mut line = String::new();
        if input.read_line(&mut line).map_err(io_at(Path::new("<stdin>")))? == 0 {
            return Ok(());
        }
        let text = line.trim();
        match text {
            "" => continue,
            "exit" | "quit" => return Ok(()),
            _ => {}
        }
        match answer_one(engine, text, false, &mut input) {
            Ok(Some(answer)) => {
                println!("{}", answer.rendered_markdown);
                io::stdout().flush().ok();
            }
            Ok(None) => eprintln!("Discarded."),
            // Recoverable per question; the loop keeps going.
            Err(e @ (CliError::Confirm(_) | CliError::Engine(_))) => eprintln!("error: {e}"),
            Err(e) => return Err(e),
        }
    }
}

fn serve(engine: Engine, port: u16, cors_origins: Vec<String>) -> Result<(), CliError> {
    let config = ServerConfig {
        port,
        cors_origins: (!cors_origins.is_empty()).then_some(cors_origins),
        ..ServerConfig::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
    runtime
        .block_on(auditnet_server::serve(engine, config, async {
            tokio::signal::ctrl_c().await.ok();
        }))
        .map_err(|e| CliError::Other(format!("server: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut engine = open_engine(&cli)?;
    match cli.command {
        Command::Ingest {
            ref paths,
            ref standard,
            format,
            ref title,
        } => ingest(&mut engine, paths, standard, format, title.as_deref()),
        Command::Index => {
            print_json(&engine.rebuild_index()?);
            Ok(())
        }
        Command::Stats { buckets, ref doc } => {
            print_json(&engine.length_histogram(doc.as_deref(), buckets)?);
            Ok(())
        }
        Command::Calibrate { ref labels } => {
            let pairs = read_labels(labels)?;
            print_json(&engine.calibrate(&pairs)?);
            Ok(())
        }
        Command::Eval { ref dataset, k, ref report } => {
            let cases = evalkit::read_dataset(dataset)?;
            let metrics = engine.evaluate(&cases, k)?;
            match report {
                Some(path) => {
                    let text = serde_json::to_string_pretty(&metrics).expect("serializable report");
                    std::fs::write(path, text + "\n").map_err(io_at(path))?;
                }
                None => print_json(&metrics),
            }
            Ok(())
        }
        Command::Dataset {
            ref templates,
            paraphrases,
            paraphraser,
            ref out,
        } => {
            let templates = evalkit::read_templates(templates)?;
            let llm = LlmParaphraser {
                gateway: engine.gateway(),
            };
            let paraphraser: &dyn Paraphraser = match paraphraser {
                ParaphraserArg::Mock => &MockParaphraser,
                ParaphraserArg::Llm => &llm,
            };
            let cases = evalkit::build_dataset(&templates, paraphrases, paraphraser)?;
            evalkit::write_dataset(out, &cases)?;
            let base = cases.iter().filter(|c| c.parent_id.is_none()).count();
            print_json(&serde_json::json!({
                "base_cases": base,
                "paraphrases": cases.len() - base,
                "total": cases.len(),
            }));
            Ok(())
        }
        Command::Query {
            ref text,
            yes,
            json,
            tag_mode,
        } => {
            if let Some(mode) = tag_mode {
                engine.set_tag_mode(match mode {
                    TagModeArg::Sentence => TagMode::Sentence,
                    TagModeArg::Paragraph => TagMode::Paragraph,
                });
            }
            match answer_one(&engine, text, yes, &mut io::stdin().lock())? {
                Some(answer) if json => print_json(&answer),
                Some(answer) => print!("{}", answer.rendered_markdown),
                None => eprintln!("Discarded."),
            }
            Ok(())
        }
        Command::Chat => chat(&engine),
        Command::Embed { ref texts } => {
            let texts = if texts.is_empty() {
                io::stdin()
                    .lock()
                    .lines()
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(io_at(Path::new("<stdin>")))?
            } else {
                texts.clone()
            };
            let vectors = embed_texts(engine.embedder(), &texts).map_err(EngineError::from)?;
            let rows: Vec<_> = texts
                .iter()
                .zip(&vectors)
                .map(|(t, v)| serde_json::json!({"text": t, "vector": v.values()}))
                .collect();
            print_json(&rows);
            Ok(())
        }
        Command::Serve { port, cors_origins } => serve(engine, port, cors_origins),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_max_level(level)
        .with_target(false)
        .with_ansi(io::stderr().is_terminal())
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
