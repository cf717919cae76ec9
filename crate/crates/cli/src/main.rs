use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use futures_util::{SinkExt, StreamExt};
use serde::Serialize;
use serde_json::json;

use zombihub_core::harness::{connect, load_scenario, run_real, run_virtual, Endpoint, Mode};
use zombihub_core::hub::load_hub_config;
use zombihub_core::osc::{load_bridge_config, OscBridge};
use zombihub_core::protocol::{
    decode_envelope, encode_envelope, CapabilityProfile, Envelope, Hello, Payload, Pong, Role,
    ScriptBaseline, TopicPattern, Topics, UnitId,
};
use zombihub_core::server;
use zombihub_core::surface::{bundled_specs, load_spec};
use zombihub_core::tls::generate_certificate;

#[derive(Parser)]
#[command(name = "zombihub", version, about = "Real-time control hub for fleets of old phones and tablets")]
struct Cli {
    /// Output style for results and diagnostics.
    #[arg(long, value_enum, global = true, default_value_t = Format::Human)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the hub described by a config file.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a self-signed certificate bound to an IP address.
    Certgen {
        /// Address the devices will dial, e.g. the hotspot gateway.
        #[arg(long)]
        ip: IpAddr,
        /// Validity in days (at least 1).
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        days: u32,
        /// Directory for cert.pem and key.pem.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Forward a running hub's traffic to an OSC destination.
    Bridge {
        /// OSC mapping file.
        #[arg(long)]
        config: PathBuf,
        /// Websocket URL of the hub.
        #[arg(long, default_value = "ws://127.0.0.1:8080/ws")]
        hub: String,
        /// Certificate to pin when the hub URL is wss.
        #[arg(long)]
        pin_cert: Option<PathBuf>,
    },
    /// Run a scripted-client scenario and report on it.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the JSON report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Inspect surface definitions.
    Specs {
        #[command(subcommand)]
        command: SpecsCommand,
    },
}

#[derive(Subcommand)]
enum SpecsCommand {
    /// Check surface files and summarize them.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// List the bundled surfaces.
    List,
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let format = cli.format;
    let result = match cli.command {
        Command::Serve { config } => serve(&config, format),
        Command::Certgen { ip, days, out } => certgen(ip, days, &out, format),
        Command::Bridge { config, hub, pin_cert } => bridge(&config, &hub, pin_cert.as_deref(), format),
        Command::Simulate { scenario, seed, report } => simulate(&scenario, seed, report.as_deref(), format),
        Command::Specs { command } => match command {
            SpecsCommand::Validate { files } => validate_specs(&files, format),
            SpecsCommand::List => list_specs(format),
        },
    };
    match result {
        Ok(code) => code,
        Err(Failure(msg)) => {
            match format {
                Format::Human => eprintln!("error: {msg}"),
                Format::Json => println!("{}", json!({ "ok": false, "error": msg })),
            }
            ExitCode::FAILURE
        }
    }
}

fn emit<T: Serialize>(format: Format, value: &T, human: impl FnOnce() -> String) {
    match format {
        Format::Human => print!("{}", human()),
        Format::Json => println!("{}", serde_json::to_string(value).expect("serializable")),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

#[cfg(unix)]
async fn hangup() {
    use tokio::signal::unix::{signal, SignalKind};
    match signal(SignalKind::hangup()) {
        Ok(mut s) => {
            s.recv().await;
        }
        Err(_) => std::future::pending().await,
    }
}

#[cfg(not(unix))]
async fn hangup() {
    std::future::pending().await
}

#[cfg(unix)]
async fn terminate() {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = match signal(SignalKind::terminate()) {
        Ok(s) => s,
        Err(_) => {
            let _ = tokio::signal::ctrl_c().await;
            return;
        }
    };
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = term.recv() => {}
    }
}

#[cfg(not(unix))]
async fn terminate() {
    let _ = tokio::signal::ctrl_c().await;
}

fn serve(config: &Path, format: Format) -> Outcome {
    let config = load_hub_config(config)?;
    runtime()?.block_on(async move {
        let handle = server::start(config).await.map_err(|e| Failure(format!("{} ({})", e, e.code())))?;
        emit(
            format,
            &json!({ "event": "listening", "http": handle.http_url(), "ws": handle.ws_url() }),
            || format!("hub listening: {}  (websocket {})\n", handle.http_url(), handle.ws_url()),
        );
        loop {
            tokio::select! {
                _ = terminate() => break,
                _ = hangup() => match handle.reload_bridge() {
                    Ok(()) => log::info!("reloading OSC mapping"),
                    Err(e) => log::warn!("reload failed: {e}"),
                },
            }
        }
        let stats = handle.stats().await.ok();
        handle.shutdown().await;
        if let Some(stats) = stats {
            emit(format, &json!({ "event": "stopped", "stats": stats }), || {
                format!(
                    "hub stopped: {} frames in, {} out, {} rejected, {} evictions\n",
                    stats.hub.frames_in, stats.hub.frames_out, stats.hub.rejected_frames, stats.hub.evictions
                )
            });
        }
        Ok(ExitCode::SUCCESS)
    })
}

fn certgen(ip: IpAddr, days: u32, out: &Path, format: Format) -> Outcome {
    let files = generate_certificate(&ip.to_string(), days, out)?;
    emit(
        format,
        &json!({ "ok": true, "ip": ip.to_string(), "days": days, "cert": files.cert, "key": files.key }),
        || {
            format!(
                "certificate for {ip}, valid {days} days\n  cert: {}\n  key:  {}\n",
                files.cert.display(),
                files.key.display()
            )
        },
    );
    Ok(ExitCode::SUCCESS)
}

fn bridge(config: &Path, hub: &str, pin: Option<&Path>, format: Format) -> Outcome {
    let text = std::fs::read_to_string(config).map_err(|e| Failure(format!("{}: {e}", config.display())))?;
    let mapping = load_bridge_config(&text)?;
    let endpoint = Endpoint::parse(hub, pin)?;
    runtime()?.block_on(async move {
        let ws = connect(&endpoint).await?;
        let (mut sink, mut stream) = ws.split();
        let caps = CapabilityProfile {
            touch: false,
            accelerometer: false,
            gyroscope: false,
            secure_transport: endpoint.tls.is_some(),
            script_baseline: ScriptBaseline::Es6plus,
        };
        let mut seq = 0u64;
        let mut me = UnitId::new("osc-bridge")?;
        let mut frame = |me: &UnitId, payload: Payload| {
            let env = Envelope::new(me.clone(), seq, 0, payload);
            seq += 1;
            encode_envelope(&env)
        };
        let hello = frame(
            &me,
            Payload::Hello(Hello {
                roles: [Role::Client].into(),
                caps,
                wants_surface: None,
            }),
        )?;
        sink.send(hello.into()).await?;

        let bridge = OscBridge::spawn(mapping.clone())?;
        let mut subscribed = false;
        loop {
            tokio::select! {
                msg = stream.next() => {
                    let Some(Ok(msg)) = msg else { break };
                    let Ok(text) = msg.to_text() else { continue };
                    let Ok(env) = decode_envelope(text) else { continue };
                    match env.payload {
                        Payload::Welcome(ref w) => {
                            me = w.unit.clone();
                            log::info!("joined session {} as {me}", w.session);
                            if !subscribed {
                                let topics: Vec<TopicPattern> = mapping.rules.iter().map(|r| r.pattern.clone()).collect();
                                let sub = frame(&me, Payload::Subscribe(Topics { topics }))?;
                                sink.send(sub.into()).await?;
                                subscribed = true;
                            }
                        }
                        Payload::Ping(p) => {
                            let pong = frame(&me, Payload::Pong(Pong { nonce: p.nonce, hub_ts_ms: 0 }))?;
                            sink.send(pong.into()).await?;
                        }
                        Payload::Error(ref e) => log::warn!("hub error {}: {}", e.code, e.detail),
                        _ => bridge.feed(Arc::new(env)),
                    }
                }
                _ = hangup() => {
                    match std::fs::read_to_string(config).map_err(Failure::from).and_then(|t| load_bridge_config(&t).map_err(Failure::from)) {
                        Ok(c) => bridge.reload(c),
                        Err(Failure(e)) => log::warn!("keeping previous mapping: {e}"),
                    }
                }
                _ = terminate() => break,
            }
        }
        bridge.flush();
        let stats = bridge.stats();
        emit(format, &json!({ "event": "stopped", "bridge": stats }), || {
            format!(
                "bridge stopped: {} routed, {} sent, {} send errors, {} dropped\n",
                stats.routed, stats.sent, stats.send_errors, stats.dropped
            )
        });
        Ok(ExitCode::SUCCESS)
    })
}

fn simulate(path: &Path, seed: Option<u64>, report_file: Option<&Path>, format: Format) -> Outcome {
    let mut scenario = load_scenario(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let outcome = match scenario.mode {
        Mode::Virtual => run_virtual(&scenario),
        Mode::Real => runtime()?.block_on(run_real(&scenario))?,
    };
    let report = outcome.report;
    if let Some(file) = report_file {
        std::fs::write(file, serde_json::to_string_pretty(&report)?)
            .map_err(|e| Failure(format!("{}: {e}", file.display())))?;
    }
    emit(format, &report, || report.human());
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

#[derive(Serialize)]
struct SpecSummary {
    file: Option<PathBuf>,
    name: String,
    ok: bool,
    error: Option<String>,
    controls: usize,
    requires: Vec<String>,
}

fn summarize(file: Option<PathBuf>, result: Result<zombihub_core::SurfaceSpec, String>) -> SpecSummary {
    match result {
        Ok(spec) => SpecSummary {
            file,
            name: spec.name.clone(),
            ok: true,
            error: None,
            controls: spec.controls.len(),
            requires: spec.requires().iter().map(|c| c.to_string()).collect(),
        },
        Err(e) => SpecSummary {
            file,
            name: String::new(),
            ok: false,
            error: Some(e),
            controls: 0,
            requires: Vec::new(),
        },
    }
}

fn print_summaries(summaries: &[SpecSummary], format: Format) {
    emit(format, &summaries, || {
        summaries
            .iter()
            .map(|s| {
                let label = s
                    .file
                    .as_ref()
                    .map(|f| f.display().to_string())
                    .unwrap_or_else(|| s.name.clone());
                match &s.error {
                    None => format!(
                        "ok    {label}: surface {} with {} controls, requires [{}]\n",
                        s.name,
                        s.controls,
                        s.requires.join(", ")
                    ),
                    Some(e) => format!("error {label}: {e}\n"),
                }
            })
            .collect()
    });
}

fn validate_specs(files: &[PathBuf], format: Format) -> Outcome {
    let summaries: Vec<SpecSummary> = files
        .iter()
        .map(|f| {
            let result = std::fs::read_to_string(f)
                .map_err(|e| e.to_string())
                .and_then(|t| load_spec(&t).map_err(|e| e.to_string()));
            summarize(Some(f.clone()), result)
        })
        .collect();
    print_summaries(&summaries, format);
    Ok(if summaries.iter().all(|s| s.ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn list_specs(format: Format) -> Outcome {
    let summaries: Vec<SpecSummary> = bundled_specs().into_iter().map(|s| summarize(None, Ok(s))).collect();
    print_summaries(&summaries, format);
    Ok(ExitCode::SUCCESS)
}
