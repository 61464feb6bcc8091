//! Weighted path selection: stream circuits, the four-hop Vanguard-Lite
//! introduction circuit, and population churn.
//!
//! ```bash
//! cargo run -p introsect --example circuits
//! ```

use std::time::Duration;

use introsect::directory::Role;
use introsect::harness::synthesize_snapshot;
use introsect::pathsel::{
    build_intro_circuit, sample_circuit, CircuitIdGen, CircuitPopulation, CircuitSpec,
    PathSelector, INTRO_LIFETIME_RANGE, STREAM_CIRCUIT_LIFETIME,
};
use introsect::time::SimTime;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    let snapshot = synthesize_snapshot(300, 1);
    let selector = PathSelector::new(&snapshot);
    let mut ids = CircuitIdGen::new();
    let mut rng = ChaCha12Rng::seed_from_u64(1);

    let spec = CircuitSpec::rendezvous(STREAM_CIRCUIT_LIFETIME);
    let circuit = sample_circuit(&selector, &spec, SimTime::ZERO, &mut ids, &mut rng).unwrap();
    println!("rendezvous circuit {}: {:?}", circuit.id, circuit.hops);

    // Service-side introduction circuit with a pinned guard and vanguard.
    let guard = selector
        .sample_relay(Role::Guard, &mut rng)
        .cloned()
        .unwrap();
    let vanguard = loop {
        let candidate = selector.sample_relay(Role::Middle, &mut rng).cloned().unwrap();
        if candidate != guard {
            break candidate;
        }
    };
    let intro = build_intro_circuit(
        &selector,
        &guard,
        &vanguard,
        INTRO_LIFETIME_RANGE,
        SimTime::ZERO,
        &mut ids,
        &mut rng,
    )
    .unwrap();
    println!(
        "intro circuit [EG, M0, M1, IP] = {:?}, lifetime {:.1} h",
        intro.hops,
        (intro.expires_at - intro.created_at).as_secs_f64() / 3600.0
    );

    // A background population cycling through ten-minute lifetimes; initial
    // ages are staggered, so churn arrives as a steady trickle.
    let mut population = CircuitPopulation::new(1000, 0.1, &selector, &mut ids, &mut rng).unwrap();
    let mut now = SimTime::ZERO;
    for step in 1..=8 {
        now += Duration::from_secs(150);
        let replaced = population
            .expire_and_replace(now, &selector, &mut ids, &mut rng)
            .unwrap();
        println!(
            "t = {:>4.0} s: replaced {replaced} expired circuits",
            now.as_secs_f64()
        );
        let _ = step;
    }
    println!("ids issued so far: {}", ids.issued());
}
