//! Matched-pair evaluation of the circuit-rebuild mitigation: identical
//! seeds with and without periodic rebuilds of the intro circuit's internal
//! hops.
//!
//! ```bash
//! cargo run --release -p introsect --example mitigation
//! ```

use std::time::Duration;

use introsect::attack::evaluate_mitigation;
use introsect::harness::{build_world, ExperimentConfig, HarnessError};

fn main() {
    let attack = ExperimentConfig::default().attack.to_attack_config();
    let seeds: Vec<u64> = (0..8).collect();
    let comparison = evaluate_mitigation(
        |seed, interval| {
            let config = ExperimentConfig {
                seed,
                ..ExperimentConfig::default()
            };
            build_world(&config, Some(interval)).map_err(|e| match e {
                HarnessError::Attack(a) => a,
                other => panic!("world build failed: {other}"),
            })
        },
        Some(Duration::from_secs(600)),
        &attack,
        &seeds,
    )
    .expect("matched pairs");

    println!("rebuild interval: 10 min");
    println!(
        "baseline reconstruction rate:  {:.0}%",
        100.0 * comparison.baseline_reconstruction_rate()
    );
    println!(
        "mitigated reconstruction rate: {:.0}%",
        100.0 * comparison.mitigated_reconstruction_rate()
    );
    println!(
        "mitigated stage convergences beyond the entry-guard stage: {}",
        comparison.mitigated_convergences_beyond_stage_one()
    );
    println!(
        "rebuild overhead: {:.1} circuit builds per virtual hour",
        comparison.rebuild_overhead_per_hour()
    );
    println!("\nper-seed outcomes:");
    for pair in &comparison.pairs {
        let baseline: Vec<String> = pair
            .baseline
            .stages
            .iter()
            .map(|s| format!("{}:{}({})", s.node, s.trials_done, s.status))
            .collect();
        let mitigated: Vec<String> = pair
            .mitigated
            .stages
            .iter()
            .map(|s| format!("{}:{}({})", s.node, s.trials_done, s.status))
            .collect();
        println!("  seed {}", pair.seed);
        println!("    baseline:  {}", baseline.join(" "));
        println!("    mitigated: {}", mitigated.join(" "));
    }
}
