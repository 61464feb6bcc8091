//! Jurisdictional relay-concentration analytics: probability mass inside the
//! Five/Nine/Fourteen Eyes sets and the all-hops exposure estimate for a
//! four-hop introduction circuit.
//!
//! ```bash
//! cargo run -p introsect --example concentration
//! ```

use introsect::concentration::{
    all_hops_intro_probability, emit_distribution_report, monte_carlo_all_hops, JurisdictionSet,
};
use introsect::harness::synthesize_snapshot;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    let snapshot = synthesize_snapshot(300, 14);
    let sets = [
        JurisdictionSet::five_eyes(),
        JurisdictionSet::nine_eyes(),
        JurisdictionSet::fourteen_eyes(),
    ];
    let report = emit_distribution_report(&snapshot, &sets);

    println!("per-set selection mass:");
    for summary in &report.sets {
        println!(
            "  {:<14} p_guard={:.4} p_middle={:.4} p_all_hops_intro={:.4} ({} relays inside)",
            summary.set_name,
            summary.p_guard,
            summary.p_middle,
            summary.p_all_hops_intro,
            summary.relays_inside
        );
    }

    // The independence product is a conservative upper bound; compare it
    // against circuits actually sampled without replacement.
    let fourteen = JurisdictionSet::fourteen_eyes();
    let summary = &report.sets[2];
    let bound = all_hops_intro_probability(summary.p_guard, summary.p_middle).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(14);
    let estimate = monte_carlo_all_hops(&snapshot, &fourteen, 50_000, &mut rng);
    println!("\nall-hops exposure, fourteen_eyes:");
    println!("  independence bound: {bound:.4}");
    println!("  monte carlo (without replacement): {estimate:.4}");

    println!("\ntop of the per-country table:");
    for line in report.to_csv().lines().take(8) {
        println!("  {line}");
    }
}
