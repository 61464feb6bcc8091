//! Command-line surface: `simulate`, `sweep`, `concentration`, `validate`.
//! The binary in `src/main.rs` is a thin wrapper around [`run`].

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::run::{run_experiment, validate_trace};
use super::sweep::{run_sweep, SweepAxis};
use super::{ExperimentConfig, HarnessError};
use crate::concentration::{emit_distribution_report, JurisdictionSet};
use crate::directory::parse_consensus;

#[derive(Parser)]
#[command(
    name = "introsect",
    version,
    about = "Deterministic simulator of intersection attacks against onion-service introduction circuits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trials_per_hop.csv, trace.csv, and
    /// summary.json.
    Simulate {
        /// Experiment config file (JSON); desk-scale defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report directory.
        #[arg(long, default_value = "introsect-report")]
        out: PathBuf,
    },
    /// Run a batch sweep over one axis and write sweep_rows.csv and
    /// sweep_groups.csv.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Axis: time_of_day, consensus_weight, intensity, or
        /// mitigation_interval.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, default_value = "introsect-sweep")]
        out: PathBuf,
    },
    /// Jurisdictional concentration analytics over a relay-list snapshot.
    Concentration {
        /// Relay-list file (top-level array of relay records).
        #[arg(long)]
        snapshot: PathBuf,
        /// Built-in set name (five_eyes, nine_eyes, fourteen_eyes).
        #[arg(long, default_value = "fourteen_eyes")]
        set: String,
        /// Optional directory for concentration.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a recorded trace.csv against the intersection invariants.
    Validate {
        #[arg(long)]
        trace: PathBuf,
    },
}

/// Entry point used by the binary and by integration tests. Returns the
/// process exit status: 0 on success, 1 on runtime failure, 2 on usage
/// errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, HarnessError> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path.clone(), e))?;
            ExperimentConfig::from_json(&text)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut config = load_config(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            config.out_dir = Some(out.clone());
            let report = run_experiment(&config)?;
            println!("seed {}: reconstructed={}", report.seed, report.reconstructed);
            for stage in &report.stages {
                println!(
                    "  stage {} ({}): {} after {} trials (weight {})",
                    stage.stage, stage.node, stage.status, stage.trials_done, stage.monitored_weight
                );
            }
            println!("reports written to {}", out.display());
            Ok(())
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let config = load_config(&config)?;
            let axis: SweepAxis = axis.parse().map_err(|reason| HarnessError::InvalidConfig {
                field: "sweep.axis",
                reason,
            })?;
            let report = run_sweep(&config, axis, &values, &seeds)?;
            fs::create_dir_all(&out).map_err(|e| HarnessError::io(out.clone(), e))?;
            let rows_path = out.join("sweep_rows.csv");
            fs::write(&rows_path, report.rows_csv())
                .map_err(|e| HarnessError::io(rows_path, e))?;
            let groups_path = out.join("sweep_groups.csv");
            fs::write(&groups_path, report.groups_csv())
                .map_err(|e| HarnessError::io(groups_path, e))?;
            for group in &report.groups {
                let medians: Vec<String> = group
                    .median_trials_per_stage
                    .iter()
                    .map(|(node, m)| format!("{node}={m:.1}"))
                    .collect();
                println!(
                    "{axis}={:.3}: {}/{} reconstructed, median trials {}",
                    group.value,
                    group.reconstructed,
                    group.runs,
                    medians.join(" ")
                );
            }
            println!(
                "spearman(trials, consensus weight) = {:.3}",
                report.spearman_trials_vs_weight
            );
            Ok(())
        }
        Command::Concentration { snapshot, set, out } => {
            let text =
                fs::read_to_string(&snapshot).map_err(|e| HarnessError::io(snapshot.clone(), e))?;
            let parsed = parse_consensus(&text)?;
            let set = JurisdictionSet::builtin(&set)?;
            let report = emit_distribution_report(&parsed, std::slice::from_ref(&set));
            let summary = &report.sets[0];
            println!("set={}", summary.set_name);
            println!("p_guard={:.6}", summary.p_guard);
            println!("p_middle={:.6}", summary.p_middle);
            println!("p_all_hops_intro={:.6}", summary.p_all_hops_intro);
            println!(
                "relays_inside={} relays_outside={}",
                summary.relays_inside, summary.relays_outside
            );
            if let Some(out) = out {
                fs::create_dir_all(&out).map_err(|e| HarnessError::io(out.clone(), e))?;
                let path = out.join("concentration.csv");
                fs::write(&path, report.to_csv()).map_err(|e| HarnessError::io(path.clone(), e))?;
                println!("table written to {}", path.display());
            }
            Ok(())
        }
        Command::Validate { trace } => {
            let text = fs::read_to_string(&trace).map_err(|e| HarnessError::io(trace.clone(), e))?;
            validate_trace(&text)?;
            println!("trace ok");
            Ok(())
        }
    }
}
