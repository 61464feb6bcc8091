//! Batch sweep over the time-of-day axis: repeated attacks at 02:00, 10:00,
//! and 18:00 UTC with per-anchor medians and the trials-versus-weight rank
//! correlation.
//!
//! ```bash
//! cargo run --release -p introsect --example sweep
//! ```

use introsect::harness::{run_sweep, ExperimentConfig, SweepAxis};

fn main() {
    let base = ExperimentConfig::default();
    let seeds: Vec<u64> = (0..5).collect();
    let report = run_sweep(&base, SweepAxis::TimeOfDay, &[2.0, 10.0, 18.0], &seeds)
        .expect("sweep runs");

    println!("{} runs, grouped by start hour:", report.rows.len() / 4);
    for group in &report.groups {
        let medians: Vec<String> = group
            .median_trials_per_stage
            .iter()
            .map(|(node, m)| format!("{node}={m:.0}"))
            .collect();
        println!(
            "  {:>5.2}h: {}/{} reconstructed, median trials {}",
            group.value,
            group.reconstructed,
            group.runs,
            medians.join(" ")
        );
    }
    println!(
        "pooled spearman(trials, consensus weight) = {:.3}",
        report.spearman_trials_vs_weight
    );
    println!("\nfirst rows of the per-run table:");
    for line in report.rows_csv().lines().take(6) {
        println!("  {line}");
    }
}
