use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use immunoevo::arena::ScenarioKind;
use immunoevo::experiment::{run_scenario, run_sharing, sweep_epsilon, ExperimentConfig};
use immunoevo::net::SchemeKind;
use immunoevo::Error;

#[derive(Parser)]
#[command(name = "immunoevo", version, about = "Immune-inspired online evolution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an arena scenario for each seed.
    RunScenario(Common),
    /// Compare broadcast and packet-based genome sharing.
    RunSharing(Common),
    /// Run a scenario over several epsilon values.
    SweepEpsilon(Sweep),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    iterations: Option<u64>,
    /// Comma-separated list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Use a single controller for the whole sensor space.
    #[arg(long)]
    monolithic: bool,
    #[arg(long, value_delimiter = ',')]
    scheme: Option<Vec<SchemeKind>>,
    #[arg(long, value_delimiter = ',')]
    nodes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    packets: Option<Vec<usize>>,
    #[arg(long)]
    robots: Option<usize>,
    /// Also write per-step fitness terms.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file; its values take precedence over flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Sweep {
    #[command(flatten)]
    common: Common,
    /// Epsilon values, comma-separated.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Also replay a fixed epitope stream of this length per epsilon and seed.
    #[arg(long)]
    replay: Option<usize>,
}

fn apply_flags(cfg: &mut ExperimentConfig, f: &Common) {
    if let Some(s) = f.scenario {
        cfg.scenario = s;
    }
    if f.epsilon.is_some() {
        cfg.epsilon = f.epsilon;
    }
    if f.iterations.is_some() {
        cfg.iterations = f.iterations;
    }
    if let Some(s) = &f.seeds {
        cfg.seeds = s.clone();
    }
    cfg.monolithic |= f.monolithic;
    if let Some(s) = &f.scheme {
        cfg.schemes = s.clone();
    }
    if let Some(n) = &f.nodes {
        cfg.network.nodes = n.clone();
    }
    if let Some(p) = &f.packets {
        cfg.network.packets = p.clone();
    }
    if let Some(r) = f.robots {
        cfg.robots = r;
    }
    cfg.trace_steps |= f.trace;
    if let Some(o) = &f.out {
        cfg.out = o.clone();
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then flags, then the config file on top.
fn resolve(f: &Common, extra: impl FnOnce(&mut ExperimentConfig)) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::default();
    apply_flags(&mut cfg, f);
    extra(&mut cfg);
    let Some(path) = &f.config else {
        return Ok(cfg);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: toml::Value = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut base = toml::Value::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut base, file.clone());
    let mut merged: ExperimentConfig = base.try_into().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if file.get("out").is_none() {
        merged.out = cfg.out;
    }
    Ok(merged)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, Error> {
    match cli.command {
        Command::RunScenario(f) => {
            let cfg = resolve(&f, |_| {})?;
            let report = run_scenario(&cfg)?;
            for s in &report.summaries {
                println!(
                    "seed {} robot {}: {} antibodies created, final fitness {:.4}",
                    s.seed, s.robot, s.antibodies_created, s.mean_final_fitness
                );
            }
            Ok(report.files)
        }
        Command::RunSharing(f) => {
            let cfg = resolve(&f, |_| {})?;
            let report = run_sharing(&cfg)?;
            for c in &report.summary {
                let eta = c.eta_median.map_or("-".to_string(), |e| format!("{e}"));
                println!("{} n={} x={}: gamma_avg {:.2}, median eta {eta}", c.scheme, c.n, c.packets, c.gamma_avg);
            }
            Ok(report.files)
        }
        Command::SweepEpsilon(s) => {
            let cfg = resolve(&s.common, |cfg| {
                if let Some(v) = s.values {
                    cfg.epsilons = v;
                }
                if let Some(r) = s.replay {
                    cfg.replay_length = r;
                }
            })?;
            let report = sweep_epsilon(&cfg)?;
            for g in &report.groups {
                println!(
                    "epsilon {}: {:.2} antibodies, final fitness {:.4}",
                    g.epsilon, g.mean_antibodies, g.mean_final_fitness
                );
            }
            Ok(report.files)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
