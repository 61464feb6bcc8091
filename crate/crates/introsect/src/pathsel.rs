//! Weighted relay path selection and circuit construction, including the
//! four-hop Vanguard-Lite introduction circuit and short-lived stream and
//! rendezvous circuits.

use std::time::Duration;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::directory::{RelayId, RelaySnapshot, Role};
use crate::time::SimTime;

/// Default lifetime of stream and rendezvous circuits (~ten minutes).
pub const STREAM_CIRCUIT_LIFETIME: Duration = Duration::from_secs(600);
/// Default intro-circuit lifetime range (18 to 24 hours of virtual time).
pub const INTRO_LIFETIME_RANGE: (Duration, Duration) =
    (Duration::from_secs(18 * 3600), Duration::from_secs(24 * 3600));

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CircuitPurpose {
    IntroServiceSide,
    Rendezvous,
    GeneralStream,
}

/// Position pattern entry. Introduction and rendezvous points are drawn
/// from the middle-eligible distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HopRole {
    Guard,
    Middle,
    IntroPoint,
}

impl HopRole {
    fn selection_role(self) -> Role {
        match self {
            HopRole::Guard => Role::Guard,
            HopRole::Middle | HopRole::IntroPoint => Role::Middle,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub purpose: CircuitPurpose,
    pub role_pattern: Vec<HopRole>,
    pub lifetime: Duration,
}

impl CircuitSpec {
    /// Service-side introduction circuit, ordered [EG, M0, M1, IP] from the
    /// service outward.
    pub fn intro_service_side(lifetime: Duration) -> Self {
        CircuitSpec {
            purpose: CircuitPurpose::IntroServiceSide,
            role_pattern: vec![
                HopRole::Guard,
                HopRole::Middle,
                HopRole::Middle,
                HopRole::IntroPoint,
            ],
            lifetime,
        }
    }

    pub fn rendezvous(lifetime: Duration) -> Self {
        CircuitSpec {
            purpose: CircuitPurpose::Rendezvous,
            role_pattern: vec![HopRole::Guard, HopRole::Middle, HopRole::Middle],
            lifetime,
        }
    }

    pub fn general_stream(lifetime: Duration) -> Self {
        CircuitSpec {
            purpose: CircuitPurpose::GeneralStream,
            role_pattern: vec![HopRole::Guard, HopRole::Middle, HopRole::Middle],
            lifetime,
        }
    }

    pub fn validate(&self) -> Result<(), PathError> {
        let expected = match self.purpose {
            CircuitPurpose::IntroServiceSide => 4,
            _ => 3,
        };
        if self.role_pattern.len() != expected {
            return Err(PathError::BadSpec(format!(
                "{:?} circuits take {expected} hops, pattern has {}",
                self.purpose,
                self.role_pattern.len()
            )));
        }
        if self.lifetime.is_zero() {
            return Err(PathError::BadSpec("lifetime must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CircuitId(pub u64);

impl std::fmt::Display for CircuitId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Monotonic circuit id source; ids are never reused within a run.
#[derive(Debug, Default)]
pub struct CircuitIdGen {
    next: u64,
}

impl CircuitIdGen {
    pub fn new() -> Self {
        CircuitIdGen { next: 0 }
    }

    pub fn next_id(&mut self) -> CircuitId {
        let id = CircuitId(self.next);
        self.next += 1;
        id
    }

    pub fn issued(&self) -> u64 {
        self.next
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    pub id: CircuitId,
    pub hops: Vec<RelayId>,
    pub spec: CircuitSpec,
    pub created_at: SimTime,
    pub expires_at: SimTime,
}

impl Circuit {
    pub fn is_alive(&self, now: SimTime) -> bool {
        now < self.expires_at
    }

    pub fn contains(&self, relay: &RelayId) -> bool {
        self.hops.iter().any(|h| h == relay)
    }
}

#[derive(Debug, Error)]
pub enum PathError {
    #[error("invalid circuit spec: {0}")]
    BadSpec(String),
    #[error("insufficient eligible relays: need {needed} for role pattern, pool has {available}")]
    InsufficientRelays { needed: usize, available: usize },
    #[error("pinned relay `{0}` is not eligible for the {1} position")]
    PinnedNotEligible(RelayId, String),
    #[error("pinned relays must be distinct, `{0}` appears twice")]
    PinnedDuplicate(RelayId),
    #[error(transparent)]
    Directory(#[from] crate::directory::DirectoryError),
}

/// Precomputed per-role sampling distributions over a snapshot.
///
/// Selection order follows the snapshot's relay order, so sampling is
/// deterministic given the snapshot, the spec, and the rng state.
pub struct PathSelector {
    guard_ids: Vec<RelayId>,
    guard_index: Option<WeightedIndex<f64>>,
    middle_ids: Vec<RelayId>,
    middle_index: Option<WeightedIndex<f64>>,
}

impl PathSelector {
    pub fn new(snapshot: &RelaySnapshot) -> Self {
        let (guard_ids, guard_index) = Self::build_role(snapshot, Role::Guard);
        let (middle_ids, middle_index) = Self::build_role(snapshot, Role::Middle);
        PathSelector {
            guard_ids,
            guard_index,
            middle_ids,
            middle_index,
        }
    }

    fn build_role(
        snapshot: &RelaySnapshot,
        role: Role,
    ) -> (Vec<RelayId>, Option<WeightedIndex<f64>>) {
        let pairs: Vec<(RelayId, f64)> = snapshot
            .relays()
            .iter()
            .filter_map(|r| {
                let w = snapshot.role_weight(r, role);
                (w > 0.0).then(|| (r.id.clone(), w))
            })
            .collect();
        if pairs.is_empty() {
            return (Vec::new(), None);
        }
        let index = WeightedIndex::new(pairs.iter().map(|(_, w)| *w))
            .expect("positive weights build a weighted index");
        (pairs.into_iter().map(|(id, _)| id).collect(), Some(index))
    }

    pub fn eligible_count(&self, role: Role) -> usize {
        match role {
            Role::Guard => self.guard_ids.len(),
            Role::Middle => self.middle_ids.len(),
        }
    }

    pub fn is_eligible(&self, id: &RelayId, role: Role) -> bool {
        match role {
            Role::Guard => self.guard_ids.contains(id),
            Role::Middle => self.middle_ids.contains(id),
        }
    }

    /// One weighted draw for a role. Duplicate rejection is the caller's job.
    pub fn sample_relay<R: Rng>(&self, role: Role, rng: &mut R) -> Option<&RelayId> {
        match role {
            Role::Guard => {
                let index = self.guard_index.as_ref()?;
                Some(&self.guard_ids[index.sample(rng)])
            }
            Role::Middle => {
                let index = self.middle_index.as_ref()?;
                Some(&self.middle_ids[index.sample(rng)])
            }
        }
    }

    /// Draw a role, rejecting relays already present in `taken`.
    fn sample_distinct<R: Rng>(
        &self,
        role: Role,
        taken: &[RelayId],
        rng: &mut R,
    ) -> Result<RelayId, PathError> {
        let pool: &[RelayId] = match role {
            Role::Guard => &self.guard_ids,
            Role::Middle => &self.middle_ids,
        };
        if !pool.iter().any(|id| !taken.contains(id)) {
            return Err(PathError::InsufficientRelays {
                needed: taken.len() + 1,
                available: pool.len(),
            });
        }
        loop {
            let candidate = self
                .sample_relay(role, rng)
                .ok_or(PathError::InsufficientRelays {
                    needed: taken.len() + 1,
                    available: 0,
                })?;
            if !taken.contains(candidate) {
                return Ok(candidate.clone());
            }
        }
    }
}

/// Sample a circuit hop by hop, rejecting already-chosen relays.
pub fn sample_circuit<R: Rng>(
    selector: &PathSelector,
    spec: &CircuitSpec,
    now: SimTime,
    ids: &mut CircuitIdGen,
    rng: &mut R,
) -> Result<Circuit, PathError> {
    spec.validate()?;
    let needed = spec.role_pattern.len();
    for hop in &spec.role_pattern {
        let available = selector.eligible_count(hop.selection_role());
        if available < needed {
            return Err(PathError::InsufficientRelays { needed, available });
        }
    }
    let mut hops: Vec<RelayId> = Vec::with_capacity(needed);
    for hop in &spec.role_pattern {
        let relay = selector.sample_distinct(hop.selection_role(), &hops, rng)?;
        hops.push(relay);
    }
    Ok(Circuit {
        id: ids.next_id(),
        hops,
        spec: spec.clone(),
        created_at: now,
        expires_at: now + spec.lifetime,
    })
}

/// Variant of [`sample_circuit`] with some positions pinned in advance,
/// used for persistent-guard clients and for circuits that must terminate
/// at a specific relay.
pub fn sample_circuit_pinned<R: Rng>(
    selector: &PathSelector,
    spec: &CircuitSpec,
    pinned: &[(usize, RelayId)],
    now: SimTime,
    ids: &mut CircuitIdGen,
    rng: &mut R,
) -> Result<Circuit, PathError> {
    spec.validate()?;
    let needed = spec.role_pattern.len();
    let mut hops: Vec<Option<RelayId>> = vec![None; needed];
    for (pos, id) in pinned {
        if hops.iter().flatten().any(|h| h == id) {
            return Err(PathError::PinnedDuplicate(id.clone()));
        }
        hops[*pos] = Some(id.clone());
    }
    let mut taken: Vec<RelayId> = hops.iter().flatten().cloned().collect();
    for (pos, hop) in spec.role_pattern.iter().enumerate() {
        if hops[pos].is_some() {
            continue;
        }
        let relay = selector.sample_distinct(hop.selection_role(), &taken, rng)?;
        taken.push(relay.clone());
        hops[pos] = Some(relay);
    }
    Ok(Circuit {
        id: ids.next_id(),
        hops: hops.into_iter().map(|h| h.expect("all positions filled")).collect(),
        spec: spec.clone(),
        created_at: now,
        expires_at: now + spec.lifetime,
    })
}

/// Build the four-hop service-side introduction circuit [EG, M0, M1, IP].
///
/// The entry guard and vanguard are pinned; M1 and the introduction point
/// are freshly sampled. The lifetime is drawn uniformly from `lifetime_range`.
pub fn build_intro_circuit<R: Rng>(
    selector: &PathSelector,
    service_guard: &RelayId,
    vanguard: &RelayId,
    lifetime_range: (Duration, Duration),
    now: SimTime,
    ids: &mut CircuitIdGen,
    rng: &mut R,
) -> Result<Circuit, PathError> {
    if service_guard == vanguard {
        return Err(PathError::PinnedDuplicate(service_guard.clone()));
    }
    if !selector.is_eligible(service_guard, Role::Guard) {
        return Err(PathError::PinnedNotEligible(
            service_guard.clone(),
            "entry guard".into(),
        ));
    }
    if !selector.is_eligible(vanguard, Role::Middle) {
        return Err(PathError::PinnedNotEligible(
            vanguard.clone(),
            "vanguard".into(),
        ));
    }
    let (lo, hi) = lifetime_range;
    let lifetime = if hi > lo {
        Duration::from_nanos(rng.gen_range(lo.as_nanos() as u64..=hi.as_nanos() as u64))
    } else {
        lo
    };
    let spec = CircuitSpec::intro_service_side(lifetime);
    sample_circuit_pinned(
        selector,
        &spec,
        &[(0, service_guard.clone()), (1, vanguard.clone())],
        now,
        ids,
        rng,
    )
}

/// Remove expired circuits and sample replacements for expired stream and
/// rendezvous circuits, conserving the population size. Intro circuits are
/// never auto-replaced here; the service rebuilds those itself.
pub fn expire_and_replace<R: Rng>(
    active: Vec<Circuit>,
    now: SimTime,
    selector: &PathSelector,
    ids: &mut CircuitIdGen,
    rng: &mut R,
) -> Result<Vec<Circuit>, PathError> {
    let mut kept = Vec::with_capacity(active.len());
    for circuit in active {
        if circuit.expires_at > now {
            kept.push(circuit);
            continue;
        }
        match circuit.spec.purpose {
            CircuitPurpose::IntroServiceSide => {}
            _ => {
                let fresh = sample_circuit(selector, &circuit.spec, now, ids, rng)?;
                kept.push(fresh);
            }
        }
    }
    Ok(kept)
}

/// Background circuit population with optional long-lived guard pinning.
///
/// A configurable fraction of slots model clients that keep a persistent
/// entry guard (and possibly a pinned second hop), so rebuilt circuits in
/// those slots reproduce stable relay-to-relay edges.
pub struct CircuitPopulation {
    slots: Vec<Slot>,
}

struct Slot {
    circuit: Circuit,
    pinned: Vec<(usize, RelayId)>,
}

impl CircuitPopulation {
    /// Build `size` background circuits with creation times staggered over
    /// one lifetime so expiries spread out instead of arriving in lockstep.
    pub fn new<R: Rng>(
        size: usize,
        guard_pin_fraction: f64,
        selector: &PathSelector,
        ids: &mut CircuitIdGen,
        rng: &mut R,
    ) -> Result<Self, PathError> {
        let mut slots = Vec::with_capacity(size);
        for i in 0..size {
            let spec = if i % 2 == 0 {
                CircuitSpec::general_stream(STREAM_CIRCUIT_LIFETIME)
            } else {
                CircuitSpec::rendezvous(STREAM_CIRCUIT_LIFETIME)
            };
            let mut pinned: Vec<(usize, RelayId)> = Vec::new();
            if rng.gen_bool(guard_pin_fraction.clamp(0.0, 1.0)) {
                if let Some(guard) = selector.sample_relay(Role::Guard, rng).cloned() {
                    pinned.push((0, guard.clone()));
                    // Half of pinned clients also keep a second-layer guard.
                    if rng.gen_bool(0.5) {
                        loop {
                            let second = selector
                                .sample_relay(Role::Middle, rng)
                                .cloned()
                                .expect("middle pool is non-empty when guards exist");
                            if second != guard {
                                pinned.push((1, second));
                                break;
                            }
                        }
                    }
                }
            }
            let mut circuit = sample_circuit_pinned(selector, &spec, &pinned, SimTime::ZERO, ids, rng)?;
            // Stagger the first generation's age.
            let age = Duration::from_nanos(
                rng.gen_range(0..spec.lifetime.as_nanos() as u64),
            );
            circuit.expires_at = SimTime::ZERO + (spec.lifetime - age);
            slots.push(Slot { circuit, pinned });
        }
        Ok(CircuitPopulation { slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn circuits(&self) -> impl Iterator<Item = &Circuit> {
        self.slots.iter().map(|s| &s.circuit)
    }

    /// Replace every expired circuit in place, keeping each slot's pinned
    /// prefix. Returns the number of circuits rebuilt.
    pub fn expire_and_replace<R: Rng>(
        &mut self,
        now: SimTime,
        selector: &PathSelector,
        ids: &mut CircuitIdGen,
        rng: &mut R,
    ) -> Result<usize, PathError> {
        let mut replaced = 0;
        for slot in &mut self.slots {
            if slot.circuit.expires_at > now {
                continue;
            }
            slot.circuit =
                sample_circuit_pinned(selector, &slot.circuit.spec, &slot.pinned, now, ids, rng)?;
            replaced += 1;
        }
        Ok(replaced)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directory::parse_consensus;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn uniform_snapshot(n: usize) -> RelaySnapshot {
        let records: Vec<serde_json::Value> = (0..n)
            .map(|i| {
                serde_json::json!({
                    "id": format!("r{i:03}"),
                    "address": format!("host-{i:03}"),
                    "consensus_weight": 1000,
                    "flags": ["Running", "Valid", "Fast", "Guard"],
                })
            })
            .collect();
        parse_consensus(&serde_json::Value::Array(records).to_string()).unwrap()
    }

    #[test]
    fn forced_support_uses_all_relays() {
        let snapshot = uniform_snapshot(3);
        let selector = PathSelector::new(&snapshot);
        let mut ids = CircuitIdGen::new();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let spec = CircuitSpec::general_stream(STREAM_CIRCUIT_LIFETIME);
        let circuit = sample_circuit(&selector, &spec, SimTime::ZERO, &mut ids, &mut rng).unwrap();
        let mut hops = circuit.hops.clone();
        hops.sort();
        hops.dedup();
        assert_eq!(hops.len(), 3);
    }

    #[test]
    fn pigeonhole_rejects_short_pool() {
        let snapshot = uniform_snapshot(2);
        let selector = PathSelector::new(&snapshot);
        let mut ids = CircuitIdGen::new();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let spec = CircuitSpec::general_stream(STREAM_CIRCUIT_LIFETIME);
        assert!(matches!(
            sample_circuit(&selector, &spec, SimTime::ZERO, &mut ids, &mut rng),
            Err(PathError::InsufficientRelays { needed: 3, available: 2 })
        ));
    }

    #[test]
    fn uniform_first_hop_frequencies() {
        // Uniform 10-relay pool: each relay's first-hop frequency should sit
        // at 0.1 within 0.02 over ten thousand samples.
        let snapshot = uniform_snapshot(10);
        let selector = PathSelector::new(&snapshot);
        let mut ids = CircuitIdGen::new();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let spec = CircuitSpec::general_stream(STREAM_CIRCUIT_LIFETIME);
        let mut counts = std::collections::BTreeMap::new();
        let samples = 10_000;
        for _ in 0..samples {
            let c = sample_circuit(&selector, &spec, SimTime::ZERO, &mut ids, &mut rng).unwrap();
            *counts.entry(c.hops[0].clone()).or_insert(0u32) += 1;
        }
        for (_, count) in counts {
            let freq = count as f64 / samples as f64;
            assert!((freq - 0.1).abs() < 0.02, "first-hop frequency {freq}");
        }
    }

    #[test]
    fn intro_circuit_respects_pins() {
        let snapshot = uniform_snapshot(6);
        let selector = PathSelector::new(&snapshot);
        let mut ids = CircuitIdGen::new();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let guard = RelayId::new("r000");
        let vanguard = RelayId::new("r001");
        let circuit = build_intro_circuit(
            &selector,
            &guard,
            &vanguard,
            INTRO_LIFETIME_RANGE,
            SimTime::ZERO,
            &mut ids,
            &mut rng,
        )
        .unwrap();
        assert_eq!(circuit.hops.len(), 4);
        assert_eq!(circuit.hops[0], guard);
        assert_eq!(circuit.hops[1], vanguard);
        let mut unique = circuit.hops.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 4);
    }

    #[test]
    fn intro_circuit_rejects_duplicate_pin() {
        let snapshot = uniform_snapshot(6);
        let selector = PathSelector::new(&snapshot);
        let mut ids = CircuitIdGen::new();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let guard = RelayId::new("r000");
        assert!(matches!(
            build_intro_circuit(
                &selector,
                &guard,
                &guard,
                INTRO_LIFETIME_RANGE,
                SimTime::ZERO,
                &mut ids,
                &mut rng,
            ),
            Err(PathError::PinnedDuplicate(_))
        ));
    }

    #[test]
    fn intro_lifetime_stays_in_range() {
        let snapshot = uniform_snapshot(8);
        let selector = PathSelector::new(&snapshot);
        let mut ids = CircuitIdGen::new();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let guard = RelayId::new("r000");
        let vanguard = RelayId::new("r001");
        for _ in 0..1000 {
            let c = build_intro_circuit(
                &selector,
                &guard,
                &vanguard,
                INTRO_LIFETIME_RANGE,
                SimTime::ZERO,
                &mut ids,
                &mut rng,
            )
            .unwrap();
            let life = c.expires_at - c.created_at;
            assert!(life >= Duration::from_secs(18 * 3600));
            assert!(life <= Duration::from_secs(24 * 3600));
        }
    }

    #[test]
    fn expire_and_replace_swaps_expired() {
        let snapshot = uniform_snapshot(8);
        let selector = PathSelector::new(&snapshot);
        let mut ids = CircuitIdGen::new();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let spec = CircuitSpec::general_stream(Duration::from_secs(600));
        let circuit = sample_circuit(&selector, &spec, SimTime::ZERO, &mut ids, &mut rng).unwrap();
        let old_id = circuit.id;
        let now = SimTime::from_secs_f64(601.0);
        let updated = expire_and_replace(vec![circuit], now, &selector, &mut ids, &mut rng).unwrap();
        assert_eq!(updated.len(), 1);
        assert_ne!(updated[0].id, old_id);
        assert_eq!(updated[0].created_at, now);
    }

    #[test]
    fn expire_and_replace_is_identity_before_expiry() {
        let snapshot = uniform_snapshot(8);
        let selector = PathSelector::new(&snapshot);
        let mut ids = CircuitIdGen::new();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let spec = CircuitSpec::general_stream(Duration::from_secs(600));
        let circuit = sample_circuit(&selector, &spec, SimTime::ZERO, &mut ids, &mut rng).unwrap();
        let snapshot_before = vec![circuit.clone()];
        let updated = expire_and_replace(
            snapshot_before.clone(),
            SimTime::from_secs_f64(10.0),
            &selector,
            &mut ids,
            &mut rng,
        )
        .unwrap();
        assert_eq!(updated, snapshot_before);
    }

    #[test]
    fn population_turns_over_completely() {
        // 1000 circuits with 600 s lifetimes, stepped minute by minute for an
        // hour: roughly six generations and none of the original ids left.
        let snapshot = uniform_snapshot(20);
        let selector = PathSelector::new(&snapshot);
        let mut ids = CircuitIdGen::new();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut population =
            CircuitPopulation::new(1000, 0.0, &selector, &mut ids, &mut rng).unwrap();
        let original: std::collections::BTreeSet<CircuitId> =
            population.circuits().map(|c| c.id).collect();
        for minute in 1..=60 {
            let now = SimTime::from_secs_f64(minute as f64 * 60.0);
            population
                .expire_and_replace(now, &selector, &mut ids, &mut rng)
                .unwrap();
        }
        let remaining = population
            .circuits()
            .filter(|c| original.contains(&c.id))
            .count();
        assert_eq!(remaining, 0);
        let generations = ids.issued() as f64 / 1000.0;
        assert!(
            (5.0..=8.0).contains(&generations),
            "expected about six generations of ids, saw {generations}"
        );
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let snapshot = uniform_snapshot(12);
        let selector = PathSelector::new(&snapshot);
        let spec = CircuitSpec::rendezvous(Duration::from_secs(600));
        let run = |seed: u64| {
            let mut ids = CircuitIdGen::new();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| {
                    sample_circuit(&selector, &spec, SimTime::ZERO, &mut ids, &mut rng)
                        .unwrap()
                        .hops
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(99), run(99));
        assert_ne!(run(99), run(100));
    }

    proptest! {
        #[test]
        fn circuits_have_distinct_hops(seed in 0u64..500, n in 4usize..16) {
            let snapshot = uniform_snapshot(n);
            let selector = PathSelector::new(&snapshot);
            let mut ids = CircuitIdGen::new();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let spec = CircuitSpec::general_stream(Duration::from_secs(600));
            let circuit = sample_circuit(&selector, &spec, SimTime::ZERO, &mut ids, &mut rng).unwrap();
            let mut hops = circuit.hops.clone();
            hops.sort();
            hops.dedup();
            prop_assert_eq!(hops.len(), circuit.hops.len());
            prop_assert_eq!(circuit.expires_at - circuit.created_at, circuit.spec.lifetime);
        }

        #[test]
        fn no_circuit_id_resurrection(seed in 0u64..200) {
            let snapshot = uniform_snapshot(10);
            let selector = PathSelector::new(&snapshot);
            let mut ids = CircuitIdGen::new();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut population = CircuitPopulation::new(20, 0.1, &selector, &mut ids, &mut rng).unwrap();
            let at_start: std::collections::BTreeSet<CircuitId> =
                population.circuits().map(|c| c.id).collect();
            // Step two lifetimes past the start.
            for step in 1..=4 {
                let now = SimTime::from_secs_f64(step as f64 * 300.0);
                population.expire_and_replace(now, &selector, &mut ids, &mut rng).unwrap();
            }
            let at_end: std::collections::BTreeSet<CircuitId> =
                population.circuits().map(|c| c.id).collect();
            prop_assert!(at_start.is_disjoint(&at_end));
        }
    }
}
