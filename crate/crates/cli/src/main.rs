use std::path::PathBuf;
use std::process::ExitCode;

use ccotdr_cli::config::{self, PRESET_NAMES};
use ccotdr_cli::{analyze, process, scenario, CliError, CliResult};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ccotdr", version, about = "Coherent correlation OTDR simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an acquisition into a capture file plus manifest.
    Simulate {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Use a shipped preset instead of a config file.
        #[arg(long)]
        preset: Option<String>,
        /// Capture path; the manifest is written to `<out>.manifest.json`.
        /// Defaults to `output.capture` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write only the manifest.
        #[arg(long)]
        dry_run: bool,
    },
    /// Correlate a capture and extract fingerprint peaks and waterfalls.
    Process {
        #[arg(long)]
        capture: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Processing config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Detect tones and transients and localize impacts.
    Analyze {
        #[arg(long, num_args = 1.., required = true)]
        waterfall: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write SVG plots next to the report.
        #[arg(long)]
        svg: bool,
        /// Analysis config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Accept waterfalls from different manifests.
        #[arg(long)]
        allow_mixed: bool,
    },
    /// List or print the shipped scenario presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Show { name: String },
}

fn preset(name: &str) -> CliResult<config::ScenarioConfig> {
    config::preset(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown preset {name:?}; available: {}",
            PRESET_NAMES.join(", ")
        ))
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            config,
            preset: name,
            out,
            dry_run,
        } => {
            let cfg = match (&config, &name) {
                (Some(path), _) => config::load_scenario(path)?,
                (None, Some(n)) => preset(n)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let out = out
                .or_else(|| cfg.output.capture.clone())
                .ok_or_else(|| CliError::Config("no output path: pass --out".into()))?;
            let m = scenario::cmd_simulate(&cfg, &out, dry_run, 64)?;
            println!(
                "{} frames of {} samples, frame duration {:.3} µs, probe rate {:.3} Hz, resolution {:.3} m",
                m.frame_count,
                m.frame_length,
                m.timing.frame_duration * 1e6,
                m.timing.probe_rate,
                m.timing.spatial_resolution
            );
        }
        Command::Process {
            capture,
            out_dir,
            config,
        } => {
            let cfg = config::load_processing(config.as_deref())?;
            let out = process::cmd_process(&capture, &out_dir, &cfg)?;
            println!(
                "{} frames, {} peaks, {} sections",
                out.amplitude.len(),
                out.peaks.len(),
                out.phase[0].section_count()
            );
        }
        Command::Analyze {
            waterfall,
            out,
            svg,
            config,
            allow_mixed,
        } => {
            let cfg = config::load_analysis(config.as_deref())?;
            let report = analyze::cmd_analyze(&waterfall, &out, svg, &cfg, allow_mixed)?;
            println!(
                "{} tones, {} events, {} strikes",
                report.tones.len(),
                report.events.len(),
                report.strikes.len()
            );
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for name in PRESET_NAMES {
                    println!("{name}");
                }
            }
            PresetAction::Show { name } => {
                let cfg = preset(&name)?;
                println!(
                    "{}",
                    serde_json::to_string_pretty(&cfg).expect("config serializes")
                );
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ccotdr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
