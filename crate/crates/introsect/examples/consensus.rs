//! Consensus ingestion: parse an Onionoo-style relay list, inspect
//! eligibility, and turn role probabilities into a sampling distribution.
//!
//! ```bash
//! cargo run -p introsect --example consensus
//! ```

use introsect::directory::{
    eligible_relays, normalize_selection_distribution, parse_consensus, serialize_consensus, Role,
};
use introsect::harness::synthesize_snapshot;

fn main() {
    // A handwritten relay list in the on-disk format.
    let document = r#"[
        {"id": "A", "address": "198.51.100.1", "country": "DE",
         "consensus_weight": 9300, "flags": ["Running", "Valid", "Guard"],
         "guard_probability": 0.001, "middle_probability": 0.0007},
        {"id": "B", "address": "198.51.100.2",
         "consensus_weight": 4000, "flags": ["Running", "Valid"],
         "middle_probability": 0.0004},
        {"id": "C", "address": "198.51.100.3", "country": "US",
         "consensus_weight": 0, "flags": ["Running"]}
    ]"#;
    let snapshot = parse_consensus(document).expect("well-formed document");
    println!(
        "parsed {} relays: {} guard-eligible, {} middle-eligible",
        snapshot.len(),
        snapshot.total_guard_count(),
        snapshot.total_middle_count()
    );
    for relay in snapshot.relays() {
        println!(
            "  {} country={} weight={} flags={:?}",
            relay.id, relay.country, relay.consensus_weight, relay.flags
        );
    }

    let guards = eligible_relays(&snapshot, Role::Guard);
    println!("guard-eligible ids: {guards:?}");

    let middles = normalize_selection_distribution(&snapshot, Role::Middle).unwrap();
    println!("middle selection distribution:");
    for (id, p) in &middles {
        println!("  {id}: {p:.4}");
    }

    // Synthetic consensus generation used by the experiment harness; the
    // round trip through the file format is lossless.
    let synthetic = synthesize_snapshot(300, 7);
    let text = serialize_consensus(&synthetic);
    let reparsed = parse_consensus(&text).unwrap();
    println!(
        "synthesized {} relays ({} guards), round-trip identical: {}",
        synthetic.len(),
        synthetic.total_guard_count(),
        reparsed.relays() == synthetic.relays()
    );
}
