//! `semrouter` command-line entry point.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tokio::net::TcpListener;
use tracing_subscriber::EnvFilter;

use semrouter_core::harness::{
    convert_mmlu_pro, dataset_to_jsonl, synthesize_dataset, write_report, ArmSpec, BenchPlan,
};
use semrouter_core::{load_config, load_dataset, run_bench, ConfigStore, CostModel, ReasoningMode, Router};
use semrouter_server::{serve_extproc, serve_sim, DecisionLog, Gateway, SimSettings, UsageSink};

#[derive(Debug, Parser)]
#[command(name = "semrouter", version, about = "Semantic request router for reasoning-capable LLMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Envoy ext_proc gRPC gateway.
    Serve(ServeArgs),
    /// Check a routing config and exit nonzero on the first error.
    Validate {
        #[arg(long, env = "ROUTER_CONFIG")]
        config: PathBuf,
    },
    /// Simulated chat-completions backend.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Benchmark harness and dataset tools.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "ROUTER_CONFIG")]
    config: PathBuf,
    #[arg(long, default_value = "127.0.0.1:50051")]
    listen: SocketAddr,
    /// Write one JSON line per decision here; `-` means stdout.
    #[arg(long)]
    decision_log: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SimCommand {
    Serve {
        #[arg(long)]
        cost_model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8000")]
        listen: SocketAddr,
        /// Scale applied to simulated latency; 0 disables sleeping.
        #[arg(long, default_value_t = 1.0)]
        delay_scale: f64,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Run the router arm against a fixed-mode baseline and write a report.
    Run(BenchRunArgs),
    /// Convert raw MMLU-Pro records (JSON array or JSON lines) to a bench dataset.
    ConvertMmlupro {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled dataset from a routing config's utterances.
    Synth {
        #[arg(long, env = "ROUTER_CONFIG")]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        per_category: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct BenchRunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, env = "ROUTER_CONFIG")]
    config: PathBuf,
    #[arg(long)]
    cost_model: PathBuf,
    /// Overrides the seed stored in the cost model.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; the extension (.md, .csv, .json) picks the format. Repeatable.
    #[arg(long, required = true)]
    out: Vec<PathBuf>,
    /// Reasoning mode of the baseline arm.
    #[arg(long, default_value = "on")]
    baseline: ReasoningMode,
    /// Extra fixed-mode arms as `name=on|off`. Repeatable.
    #[arg(long = "arm", value_parser = parse_arm)]
    arms: Vec<ArmSpec>,
}

fn parse_arm(s: &str) -> Result<ArmSpec, String> {
    let (name, mode) = s.split_once('=').ok_or("expected name=on|off")?;
    if name.is_empty() || name == "router" {
        return Err(format!("invalid arm name {name:?}"));
    }
    Ok(ArmSpec::fixed(name, mode.parse()?))
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
}

async fn serve(args: ServeArgs) -> Result<()> {
    let store = Arc::new(
        ConfigStore::open(&args.config).with_context(|| format!("loading {}", args.config.display()))?,
    );
    let log = match &args.decision_log {
        None => DecisionLog::disabled(),
        Some(p) if p.as_os_str() == "-" => DecisionLog::stdout(),
        Some(p) => DecisionLog::to_file(p).with_context(|| format!("opening {}", p.display()))?,
    };
    spawn_reload_on_hangup(Arc::clone(&store))?;
    let listener = TcpListener::bind(args.listen)
        .await
        .with_context(|| format!("binding {}", args.listen))?;
    tracing::info!(addr = %listener.local_addr()?, config = %args.config.display(), "ext_proc gateway listening");
    let gateway = Gateway::new(store, Arc::new(UsageSink::new()), log);
    serve_extproc(listener, gateway, shutdown_signal()).await?;
    Ok(())
}

#[cfg(unix)]
fn spawn_reload_on_hangup(store: Arc<ConfigStore>) -> Result<()> {
    use tokio::signal::unix::{signal, SignalKind};
    let mut hup = signal(SignalKind::hangup()).context("installing SIGHUP handler")?;
    tokio::spawn(async move {
        while hup.recv().await.is_some() {
            // rejection is logged by reload; the old snapshot stays live
            let _ = store.reload();
        }
    });
    Ok(())
}

#[cfg(not(unix))]
fn spawn_reload_on_hangup(_store: Arc<ConfigStore>) -> Result<()> {
    Ok(())
}

fn validate(path: &PathBuf) -> Result<()> {
    let config = load_config(path)?;
    let router = Router::from_config(config)?;
    println!(
        "{}: ok ({} routes, dimension {})",
        path.display(),
        router.table().routes().len(),
        router.table().dimension()
    );
    Ok(())
}

async fn sim_serve(cost_model: PathBuf, listen: SocketAddr, delay_scale: f64) -> Result<()> {
    if !(delay_scale >= 0.0 && delay_scale.is_finite()) {
        bail!("--delay-scale must be a finite non-negative number");
    }
    let model = CostModel::load(&cost_model)?;
    let listener = TcpListener::bind(listen)
        .await
        .with_context(|| format!("binding {listen}"))?;
    tracing::info!(addr = %listener.local_addr()?, "simulated backend listening");
    let settings = SimSettings {
        delay_scale,
        ..SimSettings::default()
    };
    serve_sim(listener, model, settings, shutdown_signal()).await?;
    Ok(())
}

fn bench_run(args: BenchRunArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let router = Router::from_config(load_config(&args.config)?)?;
    let model = CostModel::load(&args.cost_model)?;
    let plan = BenchPlan {
        baseline: ArmSpec::fixed("baseline", args.baseline),
        extra_arms: args.arms,
    };
    let report = run_bench(&dataset, &router, &model, &plan, args.seed)?;
    for out in &args.out {
        write_report(&report, out)?;
        tracing::info!(path = %out.display(), "report written");
    }
    let d = report.deltas;
    eprintln!(
        "{} queries, seed {}: accuracy {:+.2}pp, latency {:.1}% saved, tokens {:.1}% saved",
        dataset.len(),
        report.seed,
        d.accuracy_pp,
        d.latency_pct,
        d.tokens_pct
    );
    Ok(())
}

fn convert(input: PathBuf, out: PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
    let queries = convert_mmlu_pro(&text)?;
    std::fs::write(&out, dataset_to_jsonl(&queries)).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {} queries to {}", queries.len(), out.display());
    Ok(())
}

fn synth(config: PathBuf, per_category: usize, seed: u64, out: PathBuf) -> Result<()> {
    let config = load_config(&config)?;
    let queries = synthesize_dataset(&config, per_category, seed);
    std::fs::write(&out, dataset_to_jsonl(&queries)).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {} queries to {}", queries.len(), out.display());
    Ok(())
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve(args) => serve(args).await,
        Command::Validate { config } => validate(&config),
        Command::Sim {
            command: SimCommand::Serve { cost_model, listen, delay_scale },
        } => sim_serve(cost_model, listen, delay_scale).await,
        Command::Bench { command } => match command {
            BenchCommand::Run(args) => bench_run(args),
            BenchCommand::ConvertMmlupro { input, out } => convert(input, out),
            BenchCommand::Synth { config, per_category, seed, out } => synth(config, per_category, seed, out),
        },
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
