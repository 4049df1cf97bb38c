//! `posbias`: run positional-bias and context-importance audits against an
//! embedding provider.

use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use posbias::backend::conformance::run_conformance;
use posbias::backend::{EmbeddingProvider, HttpProvider, MockProvider};
use posbias::orchestrator::{
    load_results, render_reports, run_audit, AuditMode, ExperimentConfig, ResultTables, RunOptions, CURVES_CSV,
    IMPORTANCE_CSV,
};
use posbias::textprobe::shuffle_corpus;
use serde_json::{json, Value};

const CACHE_ENV: &str = "POSBIAS_CACHE_DIR";

#[derive(Parser)]
#[command(name = "posbias", version, about = "Positional-bias and context-importance audits for dual encoders")]
struct Cli {
    /// Use the deterministic in-process mock provider everywhere.
    #[arg(long, global = true)]
    mock_provider: bool,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Show the model profile a provider reports.
    Info {
        /// Base URL of the provider, e.g. http://127.0.0.1:8000
        #[arg(long)]
        provider: Option<String>,
        /// Also run the protocol conformance checks.
        #[arg(long)]
        conformance: bool,
    },
    /// Run the audit described by a config file.
    Audit(RunArgs),
    /// Run a context-importance audit (sets mode to importance).
    Importance(RunArgs),
    /// Run a zero-shot classification bias audit (sets mode to classify).
    Classify(RunArgs),
    /// Reorder the sentences of every caption in a JSONL corpus.
    ShuffleCaptions {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Re-render tables and plots of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Continue an interrupted run from its manifest.
    #[arg(long)]
    resume: bool,
    /// Stop after this many items, leaving a resumable manifest.
    #[arg(long, value_name = "N")]
    halt_after_items: Option<usize>,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Display) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }

    fn runtime(message: impl Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<posbias::Error> for Failure {
    fn from(e: posbias::Error) -> Self {
        if e.is_validation() {
            Failure::usage(e)
        } else {
            Failure::runtime(e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Info { provider, conformance } => info(cli, provider.as_deref(), *conformance),
        Command::Audit(args) => audit(cli, args, None),
        Command::Importance(args) => audit(cli, args, Some(AuditMode::Importance)),
        Command::Classify(args) => audit(cli, args, Some(AuditMode::Classify)),
        Command::ShuffleCaptions { input, output, seed } => shuffle(cli, input, output, *seed),
        Command::Report { run } => report(cli, run),
    }
}

fn print_json(value: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::runtime)?;
    println!("{text}");
    Ok(())
}

fn info(cli: &Cli, url: Option<&str>, conformance: bool) -> Result<(), Failure> {
    let provider: Box<dyn EmbeddingProvider> = match (cli.mock_provider, url) {
        (true, _) => Box::new(MockProvider::new()),
        (false, Some(url)) => Box::new(HttpProvider::new(url)?),
        (false, None) => return Err(Failure::usage("info needs --provider URL or --mock-provider")),
    };
    let info = provider.info()?;
    let checks = conformance.then(|| run_conformance(provider.as_ref()));
    let failed = checks.iter().flatten().filter(|c| !c.passed).count();

    if cli.json {
        let info = serde_json::to_value(&info).map_err(Failure::runtime)?;
        match &checks {
            Some(checks) => print_json(&json!({"info": info, "conformance": checks}))?,
            None => print_json(&info)?,
        }
    } else {
        let p = &info.profile;
        println!("model        {}", p.model_id);
        println!("text window  {}", p.text_window);
        println!("resolution   {}", p.image_resolution);
        println!("dimension    {}", p.embed_dim);
        println!("tokenizer    {} (vocab {})", info.tokenizer_id, info.vocab_size);
        for c in checks.iter().flatten() {
            let mark = if c.passed { "ok  " } else { "FAIL" };
            println!("{mark} {:<24} {}", c.name, c.detail);
        }
    }
    if failed > 0 {
        return Err(Failure::runtime(format!("{failed} conformance check(s) failed")));
    }
    Ok(())
}

fn audit(cli: &Cli, args: &RunArgs, mode: Option<AuditMode>) -> Result<(), Failure> {
    // an unreadable or malformed config is a user error, not a runtime one
    let mut config = ExperimentConfig::load(&args.config).map_err(Failure::usage)?;
    if let Some(mode) = mode {
        config.require_mode(mode)?;
    }
    config.validate()?;
    let provider: Arc<dyn EmbeddingProvider> = if cli.mock_provider || config.mock {
        Arc::new(MockProvider::new())
    } else if let Some(url) = &config.provider_url {
        Arc::new(HttpProvider::new(url)?)
    } else {
        return Err(Failure::usage("config sets neither provider_url nor mock; pass --mock-provider to use the mock"));
    };
    let opts = RunOptions {
        resume: args.resume,
        halt_after_items: args.halt_after_items,
        cache_dir: std::env::var_os(CACHE_ENV).map(PathBuf::from),
    };
    let summary = run_audit(&config, provider, &opts)?;

    if cli.json {
        let results = summary.results.as_ref().map(summarize).transpose()?;
        print_json(&json!({
            "complete": summary.complete,
            "output_dir": summary.output_dir,
            "items_scored": summary.items_scored,
            "items_skipped": summary.items_skipped,
            "stats": summary.stats,
            "results": results,
        }))
    } else {
        let s = &summary.stats;
        println!(
            "{} items scored, {} skipped; {} embed requests, {} inputs encoded, {} cache hits",
            summary.items_scored, summary.items_skipped, s.embed_requests, s.items_encoded, s.cache_hits
        );
        match &summary.results {
            Some(results) => print_results(results),
            None => println!("run halted; continue with --resume (output in {})", summary.output_dir.display()),
        }
        println!("output: {}", summary.output_dir.display());
        Ok(())
    }
}

fn shuffle(cli: &Cli, input: &Path, output: &Path, seed: u64) -> Result<(), Failure> {
    let reader = File::open(input).map_err(|e| Failure::usage(format!("{}: {e}", input.display())))?;
    let file = File::create(output).map_err(|e| Failure::runtime(format!("{}: {e}", output.display())))?;
    let mut writer = BufWriter::new(file);
    let rows = shuffle_corpus(BufReader::new(reader), &mut writer, seed)?;
    writer
        .flush()
        .map_err(|e| Failure::runtime(format!("{}: {e}", output.display())))?;
    if cli.json {
        print_json(&json!({"rows": rows, "seed": seed, "out": output}))
    } else {
        println!("shuffled {rows} captions into {}", output.display());
        Ok(())
    }
}

fn report(cli: &Cli, dir: &Path) -> Result<(), Failure> {
    let results = load_results(dir).map_err(Failure::usage)?;
    render_reports(dir, &results)?;
    if cli.json {
        print_json(&summarize(&results)?)
    } else {
        print_results(&results);
        Ok(())
    }
}

fn summarize(results: &ResultTables) -> Result<Value, Failure> {
    let mut v = serde_json::to_value(results).map_err(Failure::runtime)?;
    let table = if results.curves.is_some() { CURVES_CSV } else { IMPORTANCE_CSV };
    v["table"] = json!(table);
    Ok(v)
}

fn print_results(results: &ResultTables) {
    println!(
        "{} / {} on {} ({} items, metric {})",
        results.modality, results.mode, results.model_id, results.num_items, results.metric_id
    );
    let mut out = io::stdout().lock();
    if let Some(curves) = &results.curves {
        for c in curves {
            let accs: Vec<String> = c.accuracies.iter().map(|a| format!("{a:.3}")).collect();
            let cv = c.cv.map_or("-".to_string(), |cv| format!("{cv:.4}"));
            let _ = writeln!(out, "  segment {:>2}: [{}]  cv {cv}", c.segment_index, accs.join(", "));
        }
    }
    if let Some(imp) = &results.importance {
        let accs: Vec<String> = imp.per_segment.iter().map(|a| format!("{a:.3}")).collect();
        let _ = writeln!(out, "  per segment: [{}]", accs.join(", "));
    }
}
