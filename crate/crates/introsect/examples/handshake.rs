//! One full introduction handshake at cell granularity, with the
//! INTRODUCE1..RENDEZVOUS2 interval the attacker measures.
//!
//! ```bash
//! cargo run -p introsect --example handshake
//! ```

use std::collections::BTreeMap;

use introsect::directory::{Address, Role};
use introsect::harness::synthesize_snapshot;
use introsect::pathsel::{build_intro_circuit, CircuitIdGen, PathSelector, INTRO_LIFETIME_RANGE};
use introsect::protocol::{
    establish_intro, plan_handshake, Fault, HiddenService, IntroRegistry, LatencyModel,
    OnionAddress, SimEvent,
};
use introsect::time::SimTime;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    let snapshot = synthesize_snapshot(300, 5);
    let selector = PathSelector::new(&snapshot);
    let mut ids = CircuitIdGen::new();
    let mut rng = ChaCha12Rng::seed_from_u64(5);

    let guard = selector.sample_relay(Role::Guard, &mut rng).cloned().unwrap();
    let vanguard = loop {
        let candidate = selector.sample_relay(Role::Middle, &mut rng).cloned().unwrap();
        if candidate != guard {
            break candidate;
        }
    };
    let intro_circuit = build_intro_circuit(
        &selector,
        &guard,
        &vanguard,
        INTRO_LIFETIME_RANGE,
        SimTime::ZERO,
        &mut ids,
        &mut rng,
    )
    .unwrap();
    let service = HiddenService {
        onion: OnionAddress::new("demo.onion"),
        host_address: Address::new("hs-demo-host"),
        intro_circuit,
    };
    let mut registry = IntroRegistry::new();
    establish_intro(&mut registry, &service, SimTime::ZERO).unwrap();
    let mut services = BTreeMap::new();
    services.insert(service.onion.clone(), service);

    let plan = plan_handshake(
        &selector,
        &snapshot,
        &registry,
        &services[&OnionAddress::new("demo.onion")],
        &LatencyModel::default(),
        Fault::None,
        (4, 1),
        SimTime::ZERO,
        &mut ids,
        &mut rng,
    )
    .unwrap();

    println!("cell schedule:");
    for (at, event) in &plan.events {
        match event {
            SimEvent::CellDelivery { cell, observation } => {
                let seen = observation
                    .as_ref()
                    .map(|o| format!("  [observed at {}: dst {}]", o.at_relay, o.dst))
                    .unwrap_or_default();
                println!("  {at}  {:?} on {}{seen}", cell.kind, cell.circuit_id);
            }
            other => println!("  {at}  {other:?}"),
        }
    }
    let transcript = plan.transcript();
    println!(
        "window: INTRODUCE1 at {} .. RENDEZVOUS2 at {} (dt = {:.3} s, success = {})",
        transcript.t_introduce1,
        transcript.t_rendezvous2,
        transcript.delta_t().as_secs_f64(),
        transcript.success
    );
}
