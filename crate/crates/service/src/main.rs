use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use quaketruth::app::{App, RegisterPayload, ReportKind, ReviewKind, TruthPointView};
use quaketruth::scheduler::{self, SystemClock};
use quaketruth::{api, Config};
use quaketruth_core::truth::TruthStatus;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "quaketruth", version, about = "Casualty truth discovery for earthquake events")]
struct Cli {
    /// TOML config file. Defaults apply when absent.
    #[arg(long, short, env = "QT_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Overrides `data_dir` from the config.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register an event from a JSON payload file.
    Register { payload: PathBuf },
    /// Register (if needed) and run a replay-bound event to completion.
    Replay {
        payload: PathBuf,
        /// Print truth points as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the next batch of an event.
    Batch { event_id: String },
    /// List truth points.
    Truth {
        event_id: String,
        #[arg(long)]
        status: Option<TruthStatus>,
        #[arg(long)]
        json: bool,
    },
    /// Approve or reject a pending truth point.
    Review {
        tp_id: String,
        #[arg(value_parser = parse_review)]
        action: ReviewKind,
        #[arg(long, default_value = "cli")]
        actor: String,
    },
    /// Show the current fatality projection.
    Project { event_id: String },
    /// Write a CSV report to stdout or a file.
    Report {
        event_id: String,
        /// truth_csv, scores_csv, bins_csv or language_csv
        kind: String,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

fn parse_review(s: &str) -> Result<ReviewKind, String> {
    s.parse().map_err(|e: quaketruth::ServiceError| e.to_string())
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    Ok(config)
}

fn read_payload(path: &PathBuf) -> Result<RegisterPayload> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut payload: RegisterPayload =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    // Replay paths in a payload file are relative to that file.
    if let (Some(replay), Some(base)) = (&payload.replay, path.parent()) {
        if replay.is_relative() && base.join(replay).is_file() {
            payload.replay = Some(base.join(replay));
        }
    }
    Ok(payload)
}

fn print_points(points: &[TruthPointView], json: bool) -> Result<()> {
    let mut out = std::io::stdout().lock();
    if json {
        serde_json::to_writer_pretty(&mut out, points)?;
        writeln!(out)?;
        return Ok(());
    }
    writeln!(out, "{:<34} {:<9} {:>7} {:>7} {:>6} {:<8}", "id", "kind", "value", "hours", "round", "status")?;
    for p in points {
        writeln!(
            out,
            "{:<34} {:<9} {:>7} {:>7.1} {:>6} {:<8}",
            p.id,
            p.kind.as_str(),
            p.value,
            p.hours_since_origin,
            p.round,
            p.status.as_str()
        )?;
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("QT_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let config = load_config(&cli)?;

    match cli.command {
        Command::Register { payload } => {
            let app = App::open(config)?;
            let summary = app.register_event(read_payload(&payload)?)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Replay { payload, json } => {
            let app = App::open(config)?;
            let payload = read_payload(&payload)?;
            let id = payload.event_id.clone();
            if app.snapshot(&id).is_err() {
                app.register_event(payload)?;
            }
            let batches = app.run_replay(&id).or_else(|e| match e {
                quaketruth::ServiceError::State(_) if app.snapshot(&id).is_ok() => Ok(Vec::new()),
                e => Err(e),
            })?;
            for b in batches.iter().filter(|b| !b.errors.is_empty()) {
                eprintln!("round {}: {}", b.round, b.errors.join("; "));
            }
            print_points(&app.truth(&id, None)?, json)?;
        }
        Command::Batch { event_id } => {
            let app = App::open(config)?;
            let summary = app.run_batch(&event_id)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Truth { event_id, status, json } => {
            let app = App::open(config)?;
            print_points(&app.truth(&event_id, status)?, json)?;
        }
        Command::Review { tp_id, action, actor } => {
            let app = App::open(config)?;
            let view = app.review(&tp_id, action, &actor)?;
            println!("{}", serde_json::to_string_pretty(&view)?);
        }
        Command::Project { event_id } => {
            let app = App::open(config)?;
            let view = app.projection(&event_id)?;
            let p = view.projection;
            println!("final deaths median {:.0} (90% interval {:.0} to {:.0})", p.median, p.p05, p.p95);
            for bin in &view.latest.bins {
                let hi = bin.high.map_or("inf".to_string(), |h| h.to_string());
                println!("{:>7} to {:<7} {:.4}", bin.low, hi, bin.probability);
            }
        }
        Command::Report { event_id, kind, out } => {
            let app = App::open(config)?;
            let kind: ReportKind = kind.parse()?;
            let body = app.report(&event_id, kind)?;
            match out {
                Some(path) => std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{body}"),
            }
        }
        Command::Serve { bind } => {
            let bind = bind.unwrap_or_else(|| config.bind.clone());
            let schedule = config.schedule;
            let tick = config.cadence().to_std()?.min(Duration::from_secs(60));
            let app = Arc::new(App::open(config)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                tracing::info!(addr = %listener.local_addr()?, "serving");
                let (tx, rx) = tokio::sync::watch::channel(false);
                let scheduler = schedule.then(|| {
                    let mut rx = rx.clone();
                    tokio::spawn(scheduler::run(app.clone(), Arc::new(SystemClock), tick, async move {
                        let _ = rx.changed().await;
                    }))
                });
                let mut rx_serve = rx;
                let server = api::serve(app, listener, async move {
                    let _ = rx_serve.changed().await;
                });
                tokio::spawn(async move {
                    let _ = tokio::signal::ctrl_c().await;
                    let _ = tx.send(true);
                });
                server.await?;
                if let Some(handle) = scheduler {
                    let _ = handle.await;
                }
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
