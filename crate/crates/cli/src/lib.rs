//! Argument parsing and command implementations for the `textloom` binary.

use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use textloom_core::corpus::{parse_corpus, Corpus, DelimiterConfig, RecordKind};
use textloom_core::session::Session;
use textloom_core::simulate::{
    make_synthetic_dataset, run_simulation, split_corpus, SimStrategy, SimulationConfig, SimulationResult,
};
use textloom_service::ServiceConfig;

#[derive(Debug, Parser)]
#[command(name = "textloom", version, about = "Active-learning annotation of structured records with text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic restaurant-domain corpus with gold labels.
    Synth(SynthArgs),
    /// Replay gold labels under each strategy and score retrieval by BLEU.
    Simulate(SimulateArgs),
    /// Serve a session over HTTP.
    Serve(ServeArgs),
    /// Print a saved session's statistics as key=value lines.
    Stats(SessionArgs),
    /// Write a saved session's export file and its stats sidecar.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Training pool with gold labels.
    #[arg(long)]
    pub data: PathBuf,
    /// Fixed test file; without it a share of `--data` is held out.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, value_delimiter = ',', default_value = "sampler,random,all")]
    pub strategy: Vec<SimStrategy>,
    #[arg(long, value_delimiter = ',', default_value = "200,500,1000,2000")]
    pub budgets: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    /// JSON session configuration replacing the desk-scale defaults.
    #[arg(long)]
    pub session_config: Option<PathBuf>,
    #[arg(long)]
    pub retrain_interval: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Final quality reports per strategy and seed, as JSON.
    #[arg(long)]
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Session file; created on the first corpus upload.
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = textloom_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
    #[arg(long, default_value_t = textloom_service::DEFAULT_BODY_LIMIT)]
    pub body_limit: usize,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    #[arg(long)]
    pub session: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Export file; the sidecar goes to the same path with `.stats` appended.
    #[arg(long)]
    pub out: PathBuf,
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_corpus(&raw, &DelimiterConfig::default(), RecordKind::AttributeValue)
        .with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    write(&args.out, &make_synthetic_dataset(args.n, args.seed)?)
}

pub fn simulation_config(args: &SimulateArgs) -> Result<SimulationConfig> {
    let mut cfg = SimulationConfig::desk_scale();
    if let Some(path) = &args.session_config {
        let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.session = serde_json::from_slice(&raw).with_context(|| format!("parsing {}", path.display()))?;
    }
    if let Some(r) = args.retrain_interval {
        cfg.session.retrain_interval = r;
    }
    cfg.strategies = args.strategy.clone();
    cfg.budgets = args.budgets.clone();
    cfg.batch_size = args.batch_size;
    cfg.k = args.k;
    cfg.seeds = args.seeds.clone();
    Ok(cfg)
}

pub fn simulate(args: &SimulateArgs) -> Result<SimulationResult> {
    let data = read_corpus(&args.data)?;
    let (train, test) = match &args.test {
        Some(path) => (data, read_corpus(path)?),
        None => split_corpus(&data, args.test_fraction)?,
    };
    let cfg = simulation_config(args)?;
    log::info!("simulating on {} training and {} test records", train.len(), test.len());
    let result = run_simulation(&train, &test, &cfg)?;
    write(&args.out, &result.to_csv())?;
    if let Some(path) = &args.reports {
        write(path, &serde_json::to_string_pretty(&result.final_reports)?)?;
    }
    Ok(result)
}

pub fn serve_config(args: &ServeArgs) -> ServiceConfig {
    ServiceConfig {
        bind: args.bind,
        port: args.port,
        session_path: args.session.clone(),
        cors_origins: args.cors_origins.clone(),
        body_limit: args.body_limit,
    }
}

/// Binds, announces the address on stdout, then serves until Ctrl-C.
pub fn serve(args: &ServeArgs) -> Result<()> {
    let cfg = serve_config(args);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let service = textloom_service::Service::bind(&cfg).await?;
        let addr = service.local_addr()?;
        let mut stdout = std::io::stdout();
        writeln!(stdout, "listening on {addr}")?;
        stdout.flush()?;
        service
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn load(path: &Path) -> Result<Session> {
    if !path.exists() {
        bail!("no session file at {}", path.display());
    }
    Session::load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn stats_text(args: &SessionArgs) -> Result<String> {
    let session = load(&args.session)?;
    Ok(session.stats().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect())
}

pub fn export(args: &ExportArgs) -> Result<()> {
    let session = load(&args.session)?;
    let bundle = session.export();
    write(&args.out, &bundle.to_text(session.corpus()))?;
    let mut sidecar = args.out.clone().into_os_string();
    sidecar.push(".stats");
    write(Path::new(&sidecar), &bundle.stats_text())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Simulate(a) => {
            let result = simulate(&a)?;
            for ((strategy, budget), bleu) in result.seed_means() {
                println!("{strategy}\t{budget}\t{bleu:.4}");
            }
            Ok(())
        }
        Command::Serve(a) => serve(&a),
        Command::Stats(a) => {
            print!("{}", stats_text(&a)?);
            Ok(())
        }
        Command::Export(a) => export(&a),
    }
}
