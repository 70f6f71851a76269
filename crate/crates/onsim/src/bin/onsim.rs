//! Command-line front end: validate scenario configs, execute single runs,
//! and drive parameter sweeps over phases, mobility levels and protocols.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use onsim::metrics::{fmt_f64, fmt_level, fmt_opt_f64};
use onsim::radio::PowerPhase;
use onsim::routing::ProtocolKind;
use onsim::runner::{self, SweepAxes};
use onsim::scenario::ScenarioConfig;

#[derive(Parser)]
#[command(name = "onsim", version, about = "Opportunistic-network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario once and write its artifact CSVs.
    Run(RunArgs),
    /// Run a phase x mobility-level x protocol sweep with replications.
    Sweep(SweepArgs),
    /// Parse and validate a scenario config.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the phase schedule with a single phase from t=0.
    #[arg(long)]
    phase: Option<u8>,
    /// Mobility level override (m/s, one of the configured speeds).
    #[arg(long)]
    level: Option<f64>,
    /// Routing protocol override.
    #[arg(long)]
    protocol: Option<String>,
    /// Also log sampled node positions to positions.csv.
    #[arg(long)]
    verbose: bool,
    /// Output directory for CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    config: PathBuf,
    /// Power phases, e.g. 1,2,3,4
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u8, 2, 3, 4])]
    phases: Vec<u8>,
    /// Mobility levels in m/s, e.g. 0,0.5,1.5,3,6,10,15
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Routing protocols, e.g. reactive,proactive (aliases aodv/olsr accepted)
    #[arg(long, value_delimiter = ',', default_values_t = vec!["reactive".to_string()])]
    protocols: Vec<String>,
    /// Replications per cell (seeds master_seed..master_seed+reps-1).
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => match ScenarioConfig::load(&config) {
            Ok(cfg) => {
                println!(
                    "ok: scenario `{}` ({} nodes, {} flows, horizon {} s)",
                    cfg.scenario.name,
                    cfg.nodes.len(),
                    cfg.flows.len(),
                    cfg.scenario.horizon_s
                );
                ExitCode::SUCCESS
            }
            Err(err) => {
                eprintln!("config error: {err}");
                ExitCode::from(2)
            }
        },
        Command::Run(args) => {
            let mut cfg = match ScenarioConfig::load(&args.config) {
                Ok(cfg) => cfg,
                Err(err) => {
                    eprintln!("config error: {err}");
                    return ExitCode::from(2);
                }
            };
            if args.verbose {
                cfg.output.log_positions = true;
            }
            let phase = match args.phase {
                Some(p) => match PowerPhase::new(p) {
                    Some(phase) => Some(phase),
                    None => {
                        eprintln!("config error: phase {p} outside 1..=4");
                        return ExitCode::from(2);
                    }
                },
                None => None,
            };
            let protocol = match &args.protocol {
                Some(name) => match ProtocolKind::parse(name) {
                    Some(p) => Some(p),
                    None => {
                        eprintln!("config error: unknown protocol `{name}`");
                        return ExitCode::from(2);
                    }
                },
                None => None,
            };
            if let Some(level) = args.level
                && cfg.mobility_config().level_index(level).is_none() {
                    eprintln!(
                        "config error: level {level} is not one of the configured speeds {:?}",
                        cfg.mobility.level_speeds
                    );
                    return ExitCode::from(2);
                }
            let overrides = onsim::engine::RunOverrides {
                seed: args.seed,
                max_speed_mps: args.level,
                phase,
                protocol,
                cms_enabled: None,
            };
            let report = runner::run_scenario(&cfg, &overrides);
            if let Err(err) = runner::write_run_artifacts(&args.out, &cfg, &report) {
                eprintln!("runtime error: {err}");
                return ExitCode::from(3);
            }
            let s = &report.primary.summary;
            println!(
                "scenario `{}` seed {} phase {} level {} protocol {}",
                cfg.scenario.name,
                s.seed,
                s.phase,
                fmt_level(s.level_mps),
                s.protocol
            );
            println!(
                "  power {} mW (reduction {} % vs phase 1)",
                fmt_f64(s.total_power_mw, 3),
                fmt_f64(s.reduction_pct, 2)
            );
            if let Some(d) = s.mean_delay_s {
                println!(
                    "  mean end-to-end delay {} s (acceptable: {} against the {} s budget, \
                     a conversational-voice convention)",
                    fmt_f64(d, 6),
                    s.acceptable.map(|b| b.to_string()).unwrap_or_default(),
                    cfg.cms.voip_max_delay_s
                );
            }
            if let Some(l) = s.mean_latency_s {
                println!("  mean delivery latency {} s", fmt_f64(l, 6));
            }
            if let Some(direct) = &report.direct_baseline {
                println!(
                    "  direct baseline: latency {} s, power {} mW",
                    fmt_opt_f64(direct.summary.mean_latency_s, 6),
                    fmt_f64(direct.summary.total_power_mw, 3)
                );
            }
            println!(
                "  {} opportunistic networks, {} packets, trace digest {}",
                report.primary.output.on_log.len(),
                report.primary.output.packets.len(),
                s.trace_digest
            );
            println!("artifacts written to {}", args.out.display());
            ExitCode::SUCCESS
        }
        Command::Sweep(args) => {
            let cfg = match ScenarioConfig::load(&args.config) {
                Ok(cfg) => cfg,
                Err(err) => {
                    eprintln!("config error: {err}");
                    return ExitCode::from(2);
                }
            };
            let mut phases = Vec::new();
            for p in &args.phases {
                match PowerPhase::new(*p) {
                    Some(phase) => phases.push(phase),
                    None => {
                        eprintln!("config error: phase {p} outside 1..=4");
                        return ExitCode::from(2);
                    }
                }
            }
            let mut protocols = Vec::new();
            for name in &args.protocols {
                match ProtocolKind::parse(name) {
                    Some(p) => protocols.push(p),
                    None => {
                        eprintln!("config error: unknown protocol `{name}`");
                        return ExitCode::from(2);
                    }
                }
            }
            let levels = args
                .levels
                .clone()
                .unwrap_or_else(|| cfg.mobility.level_speeds.clone());
            for level in &levels {
                if cfg.mobility_config().level_index(*level).is_none() {
                    eprintln!(
                        "config error: level {level} is not one of the configured speeds {:?}",
                        cfg.mobility.level_speeds
                    );
                    return ExitCode::from(2);
                }
            }
            let axes = SweepAxes {
                phases,
                levels_mps: levels,
                protocols,
                replications: args.reps.unwrap_or(cfg.scenario.replications),
            };
            let result = runner::sweep(&cfg, &axes, cfg.cms.voip_max_delay_s);
            if let Err(err) = runner::write_sweep_artifacts(&args.out, &cfg, &result) {
                eprintln!("runtime error: {err}");
                return ExitCode::from(3);
            }
            println!(
                "swept {} runs over {} cells; artifacts written to {}",
                result.runs.len(),
                result.cells.len(),
                args.out.display()
            );
            println!(
                "acceptability budget: {} s mean end-to-end delay (conversational-voice convention)",
                cfg.cms.voip_max_delay_s
            );
            println!("phase level protocol   mean_delay_s  acceptable");
            for cell in &result.cells {
                println!(
                    "{:>5} {:>5} {:<10} {:>12} {:>10}",
                    cell.key.phase,
                    fmt_level(cell.key.level_mps),
                    cell.key.protocol.as_str(),
                    fmt_f64(cell.mean_delay_s, 6),
                    cell.acceptable
                );
            }
            ExitCode::SUCCESS
        }
    }
}
