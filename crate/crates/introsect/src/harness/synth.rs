//! Synthetic consensus generation: heavy-tailed weights, a realistic country
//! mix, and Onionoo-style probability fields derived from the weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, LogNormal};
use std::collections::BTreeSet;

use crate::directory::{Address, Relay, RelayFlag, RelayId, RelaySnapshot};

/// No relay may hold more than this share of total consensus weight.
const MAX_WEIGHT_SHARE: f64 = 0.02;

/// Country palette loosely following the live network's concentration:
/// heavy mass in the United States, Germany, and the Netherlands, a tail of
/// other jurisdictions, and a sliver of unknown geolocation.
const COUNTRY_PALETTE: &[(&str, u32)] = &[
    ("US", 18),
    ("DE", 16),
    ("NL", 9),
    ("FR", 7),
    ("GB", 5),
    ("CH", 5),
    ("RO", 5),
    ("RU", 5),
    ("SE", 4),
    ("CA", 3),
    ("AT", 3),
    ("PL", 3),
    ("FI", 2),
    ("ES", 2),
    ("IT", 2),
    ("JP", 2),
    ("AU", 2),
    ("UA", 2),
    ("SG", 1),
    ("NO", 1),
    ("DK", 1),
    ("BE", 1),
    ("??", 1),
];

/// Generate a deterministic synthetic snapshot of `relay_count` relays.
pub fn synthesize_snapshot(relay_count: usize, seed: u64) -> RelaySnapshot {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(7));
    let lognormal = LogNormal::new(0.0, 1.1).expect("valid lognormal parameters");
    let mut weights: Vec<u64> = (0..relay_count)
        .map(|_| ((lognormal.sample(&mut rng) * 1500.0) as u64).max(10))
        .collect();
    clamp_weight_shares(&mut weights);

    let palette_total: u32 = COUNTRY_PALETTE.iter().map(|(_, w)| w).sum();
    let relays: Vec<SynthRelay> = weights
        .into_iter()
        .enumerate()
        .map(|(i, weight)| {
            let mut flags = BTreeSet::from([RelayFlag::Running, RelayFlag::Valid, RelayFlag::Fast]);
            if rng.gen_bool(0.8) {
                flags.insert(RelayFlag::Stable);
            }
            if rng.gen_bool(0.55) {
                flags.insert(RelayFlag::Guard);
                flags.insert(RelayFlag::V2Dir);
            }
            if rng.gen_bool(0.15) {
                flags.insert(RelayFlag::Exit);
            }
            let mut pick = rng.gen_range(0..palette_total);
            let country = COUNTRY_PALETTE
                .iter()
                .find(|(_, share)| {
                    if pick < *share {
                        true
                    } else {
                        pick -= share;
                        false
                    }
                })
                .map(|(code, _)| *code)
                .unwrap_or("??");
            SynthRelay {
                id: format!("r{i:04}"),
                address: format!("host-{i:04}"),
                country: country.to_string(),
                weight,
                flags,
            }
        })
        .collect();
    finish_snapshot(relays)
}

/// Rebuild a synthetic snapshot with one relay's consensus weight replaced,
/// re-deriving every probability field so the snapshot stays coherent.
/// Used by the consensus-weight sweep axis.
pub fn override_weight(snapshot: &RelaySnapshot, id: &RelayId, weight: u64) -> RelaySnapshot {
    let relays: Vec<SynthRelay> = snapshot
        .relays()
        .iter()
        .map(|r| {
            let mut flags = r.flags.clone();
            if r.id == *id {
                // The overridden relay must stay guard-eligible so it can be
                // planted as the entry guard.
                flags.insert(RelayFlag::Guard);
            }
            SynthRelay {
                id: r.id.to_string(),
                address: r.address.to_string(),
                country: r.country.clone(),
                weight: if r.id == *id { weight } else { r.consensus_weight },
                flags,
            }
        })
        .collect();
    finish_snapshot(relays)
}

struct SynthRelay {
    id: String,
    address: String,
    country: String,
    weight: u64,
    flags: BTreeSet<RelayFlag>,
}

fn clamp_weight_shares(weights: &mut [u64]) {
    for _ in 0..3 {
        let total: u64 = weights.iter().sum();
        let cap = ((total as f64) * MAX_WEIGHT_SHARE) as u64;
        let mut changed = false;
        for w in weights.iter_mut() {
            if *w > cap {
                *w = cap;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

fn finish_snapshot(relays: Vec<SynthRelay>) -> RelaySnapshot {
    let guard_total: u64 = relays
        .iter()
        .filter(|r| r.flags.contains(&RelayFlag::Guard))
        .map(|r| r.weight)
        .sum();
    let middle_total: u64 = relays.iter().map(|r| r.weight).sum();
    let relays: Vec<Relay> = relays
        .into_iter()
        .map(|r| {
            let guard_probability = if r.flags.contains(&RelayFlag::Guard) && guard_total > 0 {
                Some(r.weight as f64 / guard_total as f64)
            } else {
                Some(0.0)
            };
            let middle_probability = if middle_total > 0 {
                Some(r.weight as f64 / middle_total as f64)
            } else {
                Some(0.0)
            };
            Relay {
                id: RelayId::new(r.id),
                address: Address::new(r.address),
                country: r.country,
                consensus_weight: r.weight,
                flags: r.flags,
                guard_probability,
                middle_probability,
            }
        })
        .collect();
    RelaySnapshot::new(relays).expect("synthetic snapshots satisfy every invariant")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directory::{eligible_relays, serialize_consensus, Role};

    #[test]
    fn synthesis_is_deterministic() {
        let a = synthesize_snapshot(100, 7);
        let b = synthesize_snapshot(100, 7);
        assert_eq!(serialize_consensus(&a), serialize_consensus(&b));
        let c = synthesize_snapshot(100, 8);
        assert_ne!(serialize_consensus(&a), serialize_consensus(&c));
    }

    #[test]
    fn snapshot_passes_directory_validation() {
        let snapshot = synthesize_snapshot(300, 1);
        assert_eq!(snapshot.len(), 300);
        assert!(snapshot.total_guard_count() > 0);
        assert!(snapshot.total_middle_count() > 0);
        let text = serialize_consensus(&snapshot);
        let reparsed = crate::directory::parse_consensus(&text).unwrap();
        assert_eq!(reparsed.relays(), snapshot.relays());
    }

    #[test]
    fn no_relay_dominates_weight() {
        let snapshot = synthesize_snapshot(300, 2);
        let total: u64 = snapshot.relays().iter().map(|r| r.consensus_weight).sum();
        for relay in snapshot.relays() {
            let share = relay.consensus_weight as f64 / total as f64;
            assert!(share <= MAX_WEIGHT_SHARE * 1.2, "share {share}");
        }
    }

    #[test]
    fn weight_override_keeps_coherence() {
        let snapshot = synthesize_snapshot(50, 3);
        let id = snapshot.relays()[0].id.clone();
        let updated = override_weight(&snapshot, &id, 999_999);
        let relay = updated.get(&id).unwrap();
        assert_eq!(relay.consensus_weight, 999_999);
        assert!(relay.guard_probability.unwrap() > 0.0);
        assert!(eligible_relays(&updated, Role::Guard).contains(&id));
        let gp_sum: f64 = updated
            .relays()
            .iter()
            .filter_map(|r| r.guard_probability)
            .sum();
        assert!((gp_sum - 1.0).abs() < 1e-9);
    }
}
