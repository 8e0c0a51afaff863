//! Command-line front end.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dcm_core::profile::{make_load_profile, ProfileKind};
use dcm_core::scenario::ScenarioError;
use dcm_core::sim::{replay_events, Simulation};
use dcm_core::tariff::{simulate_arbitrage, TariffError, TariffSchedule};
use thiserror::Error;

use crate::bus::LocalBroker;
use crate::config::{load_config, Config, ConfigError};
use crate::daemon::{run_controller, DaemonError};
use crate::framedump::{dump, FrameDumpError};
use crate::output::{
    read_event_log, write_day_csv, write_rows_csv, EventLogWriter, LogHeader, OutputError,
};
use crate::report::{arbitrage_summary, simulation_summary};
use crate::scenarios::{load_scenario, Overrides, ScenarioLoadError};

/// Largest tolerated relative energy-balance error of a run.
pub const BALANCE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "dcm", version, about = "Battery demand charge manager")]
pub struct Cli {
    /// TOML config file; defaults apply when omitted. DCM_<SECTION>__<KEY>
    /// environment variables override individual keys.
    #[arg(long, global = true, env = "DCM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Control tick in seconds (overrides plant.tick).
    #[arg(long, global = true)]
    pub tick: Option<f64>,
    /// Seed for randomized scenarios and measurement noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run the controller live against the simulated plant, serving the
    /// topic contract over WebSocket (and MQTT when enabled).
    Daemon {
        /// Built-in scenario name or JSON file; defaults to the config's
        /// scenario_path, then reference_day.
        scenario: Option<String>,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Run a scenario headless. Writes the tick CSV to stdout, or CSV, event
    /// log and summary into --out.
    Simulate {
        /// reference_day, switching, failover, or a JSON scenario file.
        scenario: String,
    },
    /// One-day arbitrage against a tariff.
    Arbitrage {
        /// reference_tariff, config (the [tariff] section) or a TOML file.
        tariff: String,
        /// Load profile name.
        #[arg(long, default_value = "household_day")]
        profile: String,
    },
    /// Re-derive every decision in an event log and report differences.
    Replay { log: PathBuf },
    /// Decode one Modbus-RTU (hex) or CAN (`ID#DATA`) frame.
    Framedump { hex: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioLoadError),
    #[error("scenario: {0}")]
    Sim(#[from] ScenarioError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("tariff: {0}")]
    Tariff(#[from] TariffError),
    #[error("tariff file {path}: {message}")]
    TariffFile { path: PathBuf, message: String },
    #[error("profile: {0}")]
    Profile(String),
    #[error(transparent)]
    FrameDump(#[from] FrameDumpError),
    #[error("replay: {diffs} of {total} decisions differ (first at event {first})")]
    ReplayMismatch {
        diffs: usize,
        total: usize,
        first: usize,
    },
    #[error("energy balance off by {:.4}% (limit {:.1}%)", .0 * 100.0, BALANCE_TOLERANCE * 100.0)]
    Balance(f64),
    #[error(transparent)]
    Daemon(#[from] DaemonError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(file_err(path))
}

fn out_dir(dir: &Path) -> Result<&Path, CliError> {
    std::fs::create_dir_all(dir).map_err(file_err(dir))?;
    Ok(dir)
}

fn overrides(cli: &Cli) -> Overrides {
    Overrides {
        seed: cli.seed,
        tick: cli.tick,
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Cmd::Replay { log } => replay(log),
        Cmd::Framedump { hex } => {
            let d = dump(hex)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&d).expect("dump serializes")
            );
            Ok(())
        }
        Cmd::Simulate { scenario } => {
            let cfg = load_config(cli.config.as_deref())?;
            simulate(&cli, &cfg, scenario)
        }
        Cmd::Arbitrage { tariff, profile } => {
            let cfg = load_config(cli.config.as_deref())?;
            arbitrage(&cli, &cfg, tariff, profile)
        }
        Cmd::Daemon { scenario, speed } => {
            let cfg = load_config(cli.config.as_deref())?;
            let spec = scenario
                .clone()
                .or_else(|| cfg.scenario_path.as_ref().map(|p| p.display().to_string()))
                .unwrap_or_else(|| "reference_day".into());
            let rt = tokio::runtime::Runtime::new().map_err(file_err(Path::new("<runtime>")))?;
            rt.block_on(daemon(&cli, &cfg, &spec, *speed))
        }
    }
}

fn simulate(cli: &Cli, cfg: &Config, spec: &str) -> Result<(), CliError> {
    let scenario = load_scenario(spec, &cfg.plant, overrides(cli))?;
    let header = LogHeader::new(&scenario.name, cfg.control);
    let name = scenario.name.clone();
    let tick = scenario.plant.tick;
    let report = Simulation::new(scenario, cfg.control)?.finish();

    match &cli.out {
        Some(dir) => {
            let dir = out_dir(dir)?;
            let mut csv = create(&dir.join(format!("{name}.csv")))?;
            write_rows_csv(&mut csv, &report.rows)?;
            csv.flush().map_err(file_err(dir))?;
            let mut log =
                EventLogWriter::new(create(&dir.join(format!("{name}.events.jsonl")))?, &header)?;
            for e in &report.events {
                log.write(e)?;
            }
            log.flush()?;
            let summary = serde_json::json!({
                "scenario": name,
                "ticks": report.rows.len(),
                "outages": report.outages,
                "unserved_outside_outages_s": report.unserved_outside_outages_s,
                "ledger": report.ledger,
                "balance": report.balance,
                "soc_min": report.soc_min,
                "soc_max": report.soc_max,
                "floor_deviations": report.floor_deviations,
            });
            let path = dir.join(format!("{name}.summary.json"));
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&summary).expect("summary serializes"),
            )
            .map_err(file_err(&path))?;
            print!("{}", simulation_summary(&name, tick, &report));
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_rows_csv(&mut lock, &report.rows)?;
            eprint!("{}", simulation_summary(&name, tick, &report));
        }
    }
    if !report.balance.within(BALANCE_TOLERANCE) {
        return Err(CliError::Balance(report.balance.relative_error));
    }
    Ok(())
}

fn load_tariff(spec: &str, cfg: &Config) -> Result<TariffSchedule, CliError> {
    let tariff = match spec {
        "reference_tariff" | "reference" => TariffSchedule::reference(),
        "config" => cfg.tariff.clone(),
        path => {
            let path = Path::new(path);
            let text = std::fs::read_to_string(path).map_err(file_err(path))?;
            toml::from_str(&text).map_err(|e: toml::de::Error| CliError::TariffFile {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
        }
    };
    tariff.validate()?;
    Ok(tariff)
}

fn arbitrage(cli: &Cli, cfg: &Config, tariff_spec: &str, profile: &str) -> Result<(), CliError> {
    let tariff = load_tariff(tariff_spec, cfg)?;
    let kind = ProfileKind::from_name(profile).map_err(|e| CliError::Profile(e.to_string()))?;
    let load = make_load_profile(&kind, 86_400.0).map_err(|e| CliError::Profile(e.to_string()))?;
    let day = simulate_arbitrage(&load, &tariff, &cfg.arbitrage)?;
    print!("{}", arbitrage_summary(tariff_spec, &day));
    if let Some(dir) = &cli.out {
        let dir = out_dir(dir)?;
        let path = dir.join("arbitrage.json");
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&day).expect("day serializes"),
        )
        .map_err(file_err(&path))?;
        let mut csv = create(&dir.join("arbitrage.csv"))?;
        write_day_csv(&mut csv, &day)?;
        csv.flush().map_err(file_err(dir))?;
    }
    Ok(())
}

fn replay(path: &Path) -> Result<(), CliError> {
    let file = File::open(path).map_err(file_err(path))?;
    let (header, events) = read_event_log(BufReader::new(file))?;
    let diffs = replay_events(&header.control, &events);
    println!(
        "replayed {} decisions from {} ({}): {} differ",
        events.len(),
        path.display(),
        header.scenario,
        diffs.len()
    );
    match diffs.first() {
        None => Ok(()),
        Some(&first) => Err(CliError::ReplayMismatch {
            diffs: diffs.len(),
            total: events.len(),
            first,
        }),
    }
}

async fn daemon(cli: &Cli, cfg: &Config, spec: &str, speed: f64) -> Result<(), CliError> {
    let scenario = load_scenario(spec, &cfg.plant, overrides(cli))?;
    let log = match &cli.out {
        Some(dir) => {
            let dir = out_dir(dir)?;
            let header = LogHeader::new(&scenario.name, cfg.control);
            Some(EventLogWriter::new(
                create(&dir.join("daemon.events.jsonl"))?,
                &header,
            )?)
        }
        None => None,
    };
    let sim = Simulation::new(scenario, cfg.control)?;
    let (broker, queue) = LocalBroker::new();

    let addr = format!(
        "{}:{}",
        cfg.broker.websocket_bind, cfg.broker.websocket_port
    );
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| CliError::Bind {
            addr: addr.clone(),
            source,
        })?;
    let bound: SocketAddr = listener
        .local_addr()
        .map_err(|source| CliError::Bind { addr, source })?;
    println!("websocket bridge listening on ws://{bound}/ws");

    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let bridge = tokio::spawn(crate::bridge::serve(listener, broker.clone(), async {
        let _ = stop_rx.await;
    }));
    let mqtt = cfg
        .broker
        .mqtt_enabled
        .then(|| tokio::spawn(crate::mqtt::run_link(cfg.broker.clone(), broker.clone())));

    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    let summary = run_controller(sim, broker, queue, speed, log, ctrl_c).await;

    let _ = stop_tx.send(());
    let _ = bridge.await;
    if let Some(h) = mqtt {
        h.abort();
    }
    let summary = summary?;
    println!(
        "controller stopped after {} ticks ({})",
        summary.ticks,
        if summary.completed {
            "scenario complete"
        } else {
            "interrupted"
        }
    );
    if let Some(dir) = &cli.out {
        let mut csv = create(&dir.join("daemon.csv"))?;
        write_rows_csv(&mut csv, &summary.rows)?;
        csv.flush().map_err(file_err(dir))?;
    }
    Ok(())
}
