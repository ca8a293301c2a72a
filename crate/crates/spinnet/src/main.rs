//! Command-line front end: run scenarios, calibrate the probe, list
//! presets, validate configurations.

use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::PathBuf;

use spinnet::config;
use spinnet::export::export;
use spinnet::harness::{calibrate_probe, run_scenario, ScenarioConfig};
use spinnet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "spinnet",
    version,
    about = "Deterministic simulator of entangled atomic sensor networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and export trial tables, summary, and figure data
    Run {
        #[command(flatten)]
        source: ConfigSource,
        /// Output directory (created if missing)
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Find the probe resolution that reaches a target net squeezing
    Calibrate {
        #[command(flatten)]
        source: ConfigSource,
        /// Target net squeezing parameter, dB
        #[arg(long, allow_hyphen_values = true)]
        target_db: f64,
    },
    /// List the built-in presets
    ListPresets,
    /// Parse, validate, and echo a configuration
    Validate {
        #[command(flatten)]
        source: ConfigSource,
    },
}

#[derive(Args)]
struct ConfigSource {
    /// TOML configuration file
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name (see list-presets)
    #[arg(long)]
    preset: Option<String>,
    /// Replace the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the trials-per-set count
    #[arg(long)]
    trials: Option<usize>,
    /// Replace the number of sets
    #[arg(long)]
    sets: Option<usize>,
    /// Override any configuration key, e.g. --override qnd.resolution_std=25
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    Error::Io(std::io::Error::new(
                        e.kind(),
                        format!("{}: {e}", path.display()),
                    ))
                })?;
                config::parse_config(&text)?
            }
            (None, Some(name)) => config::preset(name)?,
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "pass --config PATH or --preset NAME".into(),
                ))
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(sets) = self.sets {
            cfg.sets = sets;
        }
        let cfg = config::apply_overrides(&cfg, &self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { source, out } => {
            let cfg = source.load()?;
            let report = run_scenario(&cfg)?;
            let degenerate = report.rows.iter().any(|r| {
                r.pooled.xi_net_db == f64::NEG_INFINITY
                    || r.per_set.iter().any(|s| s.xi_net_db == f64::NEG_INFINITY)
            });
            if degenerate {
                eprintln!(
                    "warning: at least one row measured zero variance; \
                     its squeezing parameter is reported as -inf dB"
                );
            }
            let bundle = export(&report, &out)?;
            println!(
                "wrote {} trial tables and {} figure files to {}",
                bundle.trial_tables.len(),
                bundle.figure_paths.len(),
                bundle.root.display()
            );
            for row in &report.rows {
                println!(
                    "row series={} sweep_value={} modes={} n={} xi_net_db={:.3} \
                     improvement_db={:.3} sensitivity_rad={:.6e}",
                    row.series,
                    row.sweep_value,
                    row.modes,
                    row.pooled.n_trials,
                    row.pooled.xi_net_db,
                    -row.pooled.xi_net_db,
                    row.pooled.sensitivity_rad
                );
            }
            Ok(())
        }
        Command::Calibrate { source, target_db } => {
            let cfg = source.load()?;
            let outcome = calibrate_probe(target_db, &cfg)?;
            if outcome.no_squeezing_needed {
                println!(
                    "probe off: target {target_db} dB is already met without conditioning \
                     (measured {:.3} dB, {} evaluations)",
                    outcome.achieved_db, outcome.evaluations
                );
            } else {
                println!(
                    "qnd.resolution_std = {} reaches {:.3} dB (target {target_db} dB, {} evaluations)",
                    outcome.qnd.resolution_std, outcome.achieved_db, outcome.evaluations
                );
            }
            Ok(())
        }
        Command::ListPresets => {
            for (name, description) in config::list_presets() {
                println!("{name:9} {description}");
            }
            Ok(())
        }
        Command::Validate { source } => {
            let cfg = source.load()?;
            print!("{}", config::serialize_config(&cfg)?);
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
