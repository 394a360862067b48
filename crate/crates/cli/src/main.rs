//! `twin`: run, inspect and audit digital twins described by a
//! configuration file.
//!
//! Exit codes: 0 success, 1 a check failed (audit violation, scenario
//! expectation, denied request), 2 usage or configuration error.

mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use twin_core::conformance::{audit, classify, TwinConfiguration};
use twin_core::data::{DataManager, Origin, OriginFilter, Processing, Selector, Timeliness};
use twin_core::runtime::{
    control_request, ControlRequest, ControlServer, InspectView, Scenario, Twin, TwinOptions,
    CONTROL_ADDR_ENV,
};
use twin_core::value::Value;

use render::Format;

#[derive(Parser)]
#[command(name = "twin", version, about = "Digital twin runtime")]
struct Cli {
    /// Twin configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write one line per synchronization decision to this file.
    #[arg(long, global = true)]
    decisions: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the twin, driven by a timer or by a scenario script.
    Run {
        #[arg(long, conflicts_with = "timer_ms")]
        script: Option<PathBuf>,
        /// Tick period in milliseconds.
        #[arg(long)]
        timer_ms: Option<u64>,
        /// Stop after this many ticks (timer mode).
        #[arg(long)]
        ticks: Option<u64>,
        /// Run even if the audit reports violations.
        #[arg(long)]
        force: bool,
        /// Journal file, overriding the configuration.
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Control socket address.
        #[arg(long, env = CONTROL_ADDR_ENV)]
        control: Option<String>,
    },
    /// Replay a scenario script; same as `run --script`.
    Scenario {
        script: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Print whether the configuration is a digital model, shadow or twin.
    Classify,
    /// Check the configuration against the seven architecture conclusions.
    Audit,
    /// Show gateways, models, mappings and services.
    Inspect {
        #[arg(long, env = CONTROL_ADDR_ENV)]
        control: Option<String>,
    },
    /// Invoke a gateway function on a running twin.
    Invoke {
        gateway: String,
        function: String,
        /// Arguments as JSON values, e.g. '{"text":"hi"}'.
        args: Vec<String>,
        #[arg(long, env = CONTROL_ADDR_ENV)]
        control: Option<String>,
    },
    /// Query data records.
    History {
        /// actual-system, service, operator, or service:<id>.
        #[arg(long)]
        origin: Option<String>,
        #[arg(long, value_enum)]
        timeliness: Option<TimelinessArg>,
        #[arg(long, value_enum)]
        processing: Option<ProcessingArg>,
        /// Read this journal instead of asking a running twin.
        #[arg(long)]
        journal: Option<PathBuf>,
        #[arg(long, env = CONTROL_ADDR_ENV)]
        control: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TimelinessArg {
    Live,
    Historical,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcessingArg {
    Raw,
    Processed,
}

/// An error that maps to exit code 1 rather than 2.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        // Output piped into `head` and friends.
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) if e.is::<CheckFailed>() => {
            eprintln!("twin: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("twin: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<(TwinConfiguration, PathBuf)> {
    let path = path.ok_or_else(|| anyhow!("--config is required"))?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config = TwinConfiguration::from_json(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

fn control_addr(control: &Option<String>) -> Result<&str> {
    control
        .as_deref()
        .ok_or_else(|| anyhow!("no running twin: set {CONTROL_ADDR_ENV} or pass --control"))
}

fn ask(control: &Option<String>, req: &ControlRequest) -> Result<serde_json::Value> {
    let addr = control_addr(control)?;
    let resp = control_request(addr, req, Duration::from_secs(10))
        .with_context(|| format!("no running twin at {addr}"))?;
    if !resp.ok {
        bail!(CheckFailed(
            resp.error.unwrap_or_else(|| "request failed".into())
        ));
    }
    Ok(resp.result.unwrap_or(serde_json::Value::Null))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let out = &mut std::io::stdout().lock();
    match &cli.command {
        Command::Classify => {
            let (config, _) = load_config(cli.config.as_deref())?;
            let c = classify(&config)?;
            render::classification(out, cli.format, &c)?;
        }
        Command::Audit => {
            let (config, _) = load_config(cli.config.as_deref())?;
            let report = audit(&config);
            render::report(out, cli.format, &report)?;
            if !report.passed() {
                let names: Vec<String> = report.violated().iter().map(|c| c.to_string()).collect();
                bail!(CheckFailed(format!("violated: {}", names.join(", "))));
            }
        }
        Command::Inspect { control } => {
            let view = match cli.config.as_deref() {
                Some(p) => InspectView::of_config(&load_config(Some(p))?.0),
                None => serde_json::from_value(ask(control, &ControlRequest::Inspect)?)?,
            };
            render::inspect(out, cli.format, &view)?;
        }
        Command::Invoke {
            gateway,
            function,
            args,
            control,
        } => {
            let args = args
                .iter()
                .map(|a| {
                    serde_json::from_str::<Value>(a).with_context(|| format!("argument {a:?}"))
                })
                .collect::<Result<Vec<_>>>()?;
            let req = ControlRequest::Invoke {
                gateway: gateway.clone(),
                function: function.clone(),
                args,
            };
            let result: Value = serde_json::from_value(ask(control, &req)?)?;
            render::value(out, cli.format, &result)?;
        }
        Command::History {
            origin,
            timeliness,
            processing,
            journal,
            control,
        } => {
            let selector = Selector {
                origin: origin.as_deref().map(parse_origin).transpose()?,
                timeliness: timeliness.map(|t| match t {
                    TimelinessArg::Live => Timeliness::Live,
                    TimelinessArg::Historical => Timeliness::Historical,
                }),
                processing: processing.map(|p| match p {
                    ProcessingArg::Raw => Processing::Raw,
                    ProcessingArg::Processed => Processing::Processed,
                }),
                ..Selector::default()
            };
            let records = match journal {
                Some(path) => {
                    if !path.exists() {
                        bail!("journal {} does not exist", path.display());
                    }
                    DataManager::open(path)?.query(&selector)
                }
                None => {
                    serde_json::from_value(ask(control, &ControlRequest::History { selector })?)?
                }
            };
            render::records(out, cli.format, &records)?;
        }
        Command::Run {
            script: Some(script),
            force,
            journal,
            ..
        }
        | Command::Scenario {
            script,
            force,
            journal,
        } => {
            run_script(cli, script, *force, journal.as_deref())?;
        }
        Command::Run {
            script: None,
            timer_ms,
            ticks,
            force,
            journal,
            control,
        } => {
            let period = timer_ms.ok_or_else(|| anyhow!("run needs --script or --timer-ms"))?;
            run_timer(
                cli,
                period,
                *ticks,
                *force,
                journal.as_deref(),
                control.as_deref(),
            )?;
        }
    }
    Ok(())
}

fn parse_origin(s: &str) -> Result<OriginFilter> {
    Ok(match s {
        "actual-system" => OriginFilter::AnyActualSystem,
        "service" => OriginFilter::AnyService,
        "operator" => OriginFilter::Exact(Origin::Operator),
        other => match other.split_once(':') {
            Some(("service", id)) => OriginFilter::Exact(Origin::Service(id.to_owned())),
            Some(("actual-system", id)) => OriginFilter::Exact(Origin::ActualSystem(id.to_owned())),
            _ => bail!("unknown origin {other:?}"),
        },
    })
}

fn start(cli: &Cli, force: bool, journal: Option<&Path>, fresh: bool) -> Result<Twin> {
    let (config, base_dir) = load_config(cli.config.as_deref())?;
    let report = audit(&config);
    if !report.passed() && !force {
        let names: Vec<String> = report.violated().iter().map(|c| c.to_string()).collect();
        bail!(CheckFailed(format!(
            "audit failed ({}); use --force to run anyway",
            names.join(", ")
        )));
    }
    let journal = journal
        .map(Path::to_path_buf)
        .or_else(|| config.data.journal.as_ref().map(|j| base_dir.join(j)));
    if fresh {
        if let Some(j) = &journal {
            if j.exists() {
                std::fs::remove_file(j).with_context(|| format!("removing {}", j.display()))?;
            }
        }
    }
    let opts = TwinOptions {
        base_dir,
        journal,
        decisions: cli.decisions.clone(),
    };
    Ok(Twin::start(&config, &opts)?)
}

/// Scenario runs start from an empty journal so that replays are
/// reproducible.
fn run_script(cli: &Cli, script: &Path, force: bool, journal: Option<&Path>) -> Result<()> {
    let text =
        std::fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
    let scenario =
        Scenario::from_json(&text).with_context(|| format!("parsing {}", script.display()))?;
    let mut twin = start(cli, force, journal, true)?;
    if let Err(e) = scenario.run(&mut twin) {
        bail!(CheckFailed(format!("scenario failed at {e}")));
    }
    let out = &mut std::io::stdout().lock();
    render::summary(out, cli.format, &twin)?;
    Ok(())
}

fn run_timer(
    cli: &Cli,
    period_ms: u64,
    ticks: Option<u64>,
    force: bool,
    journal: Option<&Path>,
    control: Option<&str>,
) -> Result<()> {
    let mut twin = start(cli, force, journal, false)?;
    let server = match control {
        Some(addr) => {
            let s = ControlServer::bind(addr)
                .with_context(|| format!("binding control socket {addr}"))?;
            eprintln!("control listening on {}", s.addr());
            Some(s)
        }
        None => None,
    };
    let period = Duration::from_millis(period_ms.max(1));
    let mut next = Instant::now() + period;
    while ticks.is_none_or(|n| twin.current_tick() < n) {
        match &server {
            Some(s) => s.serve_until(next, |req| twin.handle_control(req)),
            None => std::thread::sleep(next.saturating_duration_since(Instant::now())),
        }
        twin.tick()?;
        next += period;
    }
    Ok(())
}
