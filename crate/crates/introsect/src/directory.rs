//! Network consensus model: relay inventory, flags, weights, country codes,
//! and position-selection probabilities, with Onionoo-style ingestion.
//!
//! Snapshots are immutable after construction and safe to share read-only
//! across parallel experiment runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Country code used for relays whose record carries no geolocation.
/// Such relays are excluded from every jurisdiction set.
pub const UNKNOWN_COUNTRY: &str = "??";

/// Fingerprint-like opaque relay identifier, unique within a snapshot.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelayId(String);

impl RelayId {
    pub fn new(id: impl Into<String>) -> Self {
        RelayId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RelayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Network-address token. Unique per host; two relays share one only when
/// co-location is deliberately being tested.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(String);

impl Address {
    pub fn new(addr: impl Into<String>) -> Self {
        Address(addr.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Consensus flags carried by relay records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelayFlag {
    Running,
    Valid,
    Stable,
    Fast,
    Guard,
    V2Dir,
    Exit,
}

impl FromStr for RelayFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Running" => Ok(RelayFlag::Running),
            "Valid" => Ok(RelayFlag::Valid),
            "Stable" => Ok(RelayFlag::Stable),
            "Fast" => Ok(RelayFlag::Fast),
            "Guard" => Ok(RelayFlag::Guard),
            "V2Dir" => Ok(RelayFlag::V2Dir),
            "Exit" => Ok(RelayFlag::Exit),
            other => Err(format!("unknown relay flag `{other}`")),
        }
    }
}

impl fmt::Display for RelayFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RelayFlag::Running => "Running",
            RelayFlag::Valid => "Valid",
            RelayFlag::Stable => "Stable",
            RelayFlag::Fast => "Fast",
            RelayFlag::Guard => "Guard",
            RelayFlag::V2Dir => "V2Dir",
            RelayFlag::Exit => "Exit",
        };
        f.write_str(s)
    }
}

/// Circuit position a relay can be selected for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Guard,
    Middle,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Guard => f.write_str("guard"),
            Role::Middle => f.write_str("middle"),
        }
    }
}

/// One relay as seen in a consensus snapshot.
///
/// `guard_probability`/`middle_probability` mirror Onionoo's precomputed
/// fields; when absent, selection falls back to `consensus_weight` among
/// role-eligible relays.
#[derive(Clone, Debug, PartialEq)]
pub struct Relay {
    pub id: RelayId,
    pub address: Address,
    pub country: String,
    pub consensus_weight: u64,
    pub flags: BTreeSet<RelayFlag>,
    pub guard_probability: Option<f64>,
    pub middle_probability: Option<f64>,
}

impl Relay {
    pub fn has_flag(&self, flag: RelayFlag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Wire form of a relay record. Field names are fixed by the relay-list file
/// format and must not change.
#[derive(Serialize, Deserialize)]
struct RelayRecord {
    id: String,
    address: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    country: Option<String>,
    consensus_weight: u64,
    flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    guard_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    middle_probability: Option<f64>,
}

#[derive(Debug, Error)]
pub enum DirectoryError {
    #[error("malformed relay document: {0}")]
    Malformed(String),
    #[error("relay record {index}: {reason}")]
    Record { index: usize, reason: String },
    #[error("duplicate relay id `{0}`")]
    DuplicateId(String),
    #[error("snapshot invariant violated: {0}")]
    Invariant(String),
    #[error("no relay is eligible for the {0} role")]
    NoEligibleRelay(Role),
}

/// Immutable consensus view over a set of relays.
#[derive(Clone, Debug)]
pub struct RelaySnapshot {
    pub timestamp: crate::time::SimTime,
    relays: Vec<Relay>,
    by_id: BTreeMap<RelayId, usize>,
    total_guard_count: usize,
    total_middle_count: usize,
    has_guard_fields: bool,
    has_middle_fields: bool,
}

impl RelaySnapshot {
    /// Validate relays and build the snapshot. Probability-sum and per-relay
    /// invariants are enforced here; ingestion itself stays lossless.
    pub fn new(relays: Vec<Relay>) -> Result<Self, DirectoryError> {
        let mut by_id = BTreeMap::new();
        let mut guard_sum = 0.0f64;
        let mut middle_sum = 0.0f64;
        for (index, relay) in relays.iter().enumerate() {
            if relay.address.as_str().is_empty() {
                return Err(DirectoryError::Record {
                    index,
                    reason: "empty address".into(),
                });
            }
            if let Some(gp) = relay.guard_probability {
                if gp > 0.0 && !relay.has_flag(RelayFlag::Guard) {
                    return Err(DirectoryError::Record {
                        index,
                        reason: format!(
                            "guard_probability {gp} > 0 without the Guard flag on `{}`",
                            relay.id
                        ),
                    });
                }
                guard_sum += gp;
            }
            if let Some(mp) = relay.middle_probability {
                middle_sum += mp;
            }
            if relay.consensus_weight == 0 {
                let gp = relay.guard_probability.unwrap_or(0.0);
                let mp = relay.middle_probability.unwrap_or(0.0);
                if gp > 0.0 || mp > 0.0 {
                    return Err(DirectoryError::Record {
                        index,
                        reason: format!(
                            "zero consensus_weight with non-zero selection probability on `{}`",
                            relay.id
                        ),
                    });
                }
            }
            if by_id.insert(relay.id.clone(), index).is_some() {
                return Err(DirectoryError::DuplicateId(relay.id.to_string()));
            }
        }
        if guard_sum > 1.0 + 1e-9 {
            return Err(DirectoryError::Invariant(format!(
                "guard_probability sums to {guard_sum}, above 1"
            )));
        }
        if middle_sum > 1.0 + 1e-9 {
            return Err(DirectoryError::Invariant(format!(
                "middle_probability sums to {middle_sum}, above 1"
            )));
        }
        let has_guard_fields = relays.iter().any(|r| r.guard_probability.is_some());
        let has_middle_fields = relays.iter().any(|r| r.middle_probability.is_some());
        let mut snapshot = RelaySnapshot {
            timestamp: crate::time::SimTime::ZERO,
            relays,
            by_id,
            total_guard_count: 0,
            total_middle_count: 0,
            has_guard_fields,
            has_middle_fields,
        };
        snapshot.total_guard_count = snapshot
            .relays
            .iter()
            .filter(|r| snapshot.role_weight(r, Role::Guard) > 0.0)
            .count();
        snapshot.total_middle_count = snapshot
            .relays
            .iter()
            .filter(|r| snapshot.role_weight(r, Role::Middle) > 0.0)
            .count();
        Ok(snapshot)
    }

    pub fn relays(&self) -> &[Relay] {
        &self.relays
    }

    pub fn len(&self) -> usize {
        self.relays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relays.is_empty()
    }

    pub fn get(&self, id: &RelayId) -> Option<&Relay> {
        self.by_id.get(id).map(|&i| &self.relays[i])
    }

    pub fn total_guard_count(&self) -> usize {
        self.total_guard_count
    }

    pub fn total_middle_count(&self) -> usize {
        self.total_middle_count
    }

    /// Unnormalized selection weight of a relay for a role.
    ///
    /// Onionoo-style probability fields win when the snapshot carries them
    /// for the role; otherwise consensus weight among role-eligible relays
    /// (guards need the Guard flag, any weighted relay can be a middle).
    pub fn role_weight(&self, relay: &Relay, role: Role) -> f64 {
        match role {
            Role::Guard => {
                if self.has_guard_fields {
                    relay.guard_probability.unwrap_or(0.0)
                } else if relay.has_flag(RelayFlag::Guard) {
                    relay.consensus_weight as f64
                } else {
                    0.0
                }
            }
            Role::Middle => {
                if self.has_middle_fields {
                    relay.middle_probability.unwrap_or(0.0)
                } else {
                    relay.consensus_weight as f64
                }
            }
        }
    }
}

/// Parse a relay-list document (a top-level array of relay records) into a
/// snapshot. Records missing a country are admitted with country "??";
/// probabilities are clamped to [0,1] and never rescaled here.
pub fn parse_consensus(document: &str) -> Result<RelaySnapshot, DirectoryError> {
    let values: Vec<serde_json::Value> = serde_json::from_str(document)
        .map_err(|e| DirectoryError::Malformed(e.to_string()))?;
    let mut relays = Vec::with_capacity(values.len());
    for (index, value) in values.into_iter().enumerate() {
        let record: RelayRecord = serde_json::from_value(value)
            .map_err(|e| DirectoryError::Record {
                index,
                reason: e.to_string(),
            })?;
        let mut flags = BTreeSet::new();
        for raw in &record.flags {
            let flag = RelayFlag::from_str(raw)
                .map_err(|reason| DirectoryError::Record { index, reason })?;
            flags.insert(flag);
        }
        let country = match record.country {
            Some(c) if c == UNKNOWN_COUNTRY => UNKNOWN_COUNTRY.to_string(),
            Some(c) => {
                if c.len() != 2 || !c.chars().all(|ch| ch.is_ascii_alphabetic()) {
                    return Err(DirectoryError::Record {
                        index,
                        reason: format!("country `{c}` is not a 2-letter code"),
                    });
                }
                c.to_ascii_uppercase()
            }
            None => UNKNOWN_COUNTRY.to_string(),
        };
        relays.push(Relay {
            id: RelayId::new(record.id),
            address: Address::new(record.address),
            country,
            consensus_weight: record.consensus_weight,
            flags,
            guard_probability: record.guard_probability.map(|p| p.clamp(0.0, 1.0)),
            middle_probability: record.middle_probability.map(|p| p.clamp(0.0, 1.0)),
        });
    }
    RelaySnapshot::new(relays)
}

/// Serialize a snapshot back to the relay-list file format. Retains exactly
/// the fields `parse_consensus` reads, so parse ∘ serialize is the identity.
pub fn serialize_consensus(snapshot: &RelaySnapshot) -> String {
    let records: Vec<RelayRecord> = snapshot
        .relays()
        .iter()
        .map(|r| RelayRecord {
            id: r.id.to_string(),
            address: r.address.to_string(),
            country: Some(r.country.clone()),
            consensus_weight: r.consensus_weight,
            flags: r.flags.iter().map(|f| f.to_string()).collect(),
            guard_probability: r.guard_probability,
            middle_probability: r.middle_probability,
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("relay records always serialize")
}

/// Relay ids with strictly positive selection weight for the role.
pub fn eligible_relays(snapshot: &RelaySnapshot, role: Role) -> BTreeSet<RelayId> {
    snapshot
        .relays()
        .iter()
        .filter(|r| snapshot.role_weight(r, role) > 0.0)
        .map(|r| r.id.clone())
        .collect()
}

/// Turn role weights into a sampling distribution over eligible relays.
/// The returned probabilities sum to 1 within 1e-12.
pub fn normalize_selection_distribution(
    snapshot: &RelaySnapshot,
    role: Role,
) -> Result<BTreeMap<RelayId, f64>, DirectoryError> {
    let mut weights: Vec<(RelayId, f64)> = snapshot
        .relays()
        .iter()
        .filter_map(|r| {
            let w = snapshot.role_weight(r, role);
            (w > 0.0).then(|| (r.id.clone(), w))
        })
        .collect();
    if weights.is_empty() {
        return Err(DirectoryError::NoEligibleRelay(role));
    }
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    for (_, w) in &mut weights {
        *w /= total;
    }
    Ok(weights.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn relay_json(
        id: &str,
        weight: u64,
        flags: &[&str],
        gp: Option<f64>,
        mp: Option<f64>,
        country: Option<&str>,
    ) -> serde_json::Value {
        let mut obj = serde_json::json!({
            "id": id,
            "address": format!("addr-{id}"),
            "consensus_weight": weight,
            "flags": flags,
        });
        if let Some(gp) = gp {
            obj["guard_probability"] = serde_json::json!(gp);
        }
        if let Some(mp) = mp {
            obj["middle_probability"] = serde_json::json!(mp);
        }
        if let Some(c) = country {
            obj["country"] = serde_json::json!(c);
        }
        obj
    }

    #[test]
    fn parses_singleton_document() {
        let doc = serde_json::json!([relay_json(
            "A",
            9300,
            &["Running", "Valid", "Guard"],
            Some(0.001),
            Some(0.0007),
            Some("DE")
        )])
        .to_string();
        let snapshot = parse_consensus(&doc).unwrap();
        assert_eq!(snapshot.len(), 1);
        assert_eq!(snapshot.total_guard_count(), 1);
        assert_eq!(snapshot.relays()[0].country, "DE");
    }

    #[test]
    fn parses_empty_list() {
        let snapshot = parse_consensus("[]").unwrap();
        assert_eq!(snapshot.len(), 0);
        assert_eq!(snapshot.total_guard_count(), 0);
        assert_eq!(snapshot.total_middle_count(), 0);
    }

    #[test]
    fn hundred_relay_fixture_counts_by_scan() {
        // 60 of 100 relays carry the Guard flag with gp > 0; the oracle is a
        // direct scan of the generated records.
        let mut records = Vec::new();
        let mut expected_guards = 0usize;
        for i in 0..100 {
            let guard = i < 60;
            let flags: &[&str] = if guard {
                &["Running", "Valid", "Guard"]
            } else {
                &["Running", "Valid"]
            };
            let gp = if guard { Some(0.005) } else { Some(0.0) };
            if guard {
                expected_guards += 1;
            }
            records.push(relay_json(&format!("r{i:03}"), 1000 + i, flags, gp, Some(0.003), None));
        }
        assert_eq!(expected_guards, 60);
        let doc = serde_json::Value::Array(records).to_string();
        let snapshot = parse_consensus(&doc).unwrap();
        assert_eq!(snapshot.total_guard_count(), 60);
        assert_eq!(
            eligible_relays(&snapshot, Role::Guard).len(),
            expected_guards
        );
    }

    #[test]
    fn missing_country_becomes_unknown() {
        let doc = serde_json::json!([relay_json("A", 10, &["Running"], None, None, None)])
            .to_string();
        let snapshot = parse_consensus(&doc).unwrap();
        assert_eq!(snapshot.relays()[0].country, UNKNOWN_COUNTRY);
    }

    #[test]
    fn probabilities_are_clamped() {
        let doc = serde_json::json!([relay_json(
            "A",
            10,
            &["Guard"],
            Some(1.7),
            Some(-0.4),
            None
        )])
        .to_string();
        let snapshot = parse_consensus(&doc).unwrap();
        assert_eq!(snapshot.relays()[0].guard_probability, Some(1.0));
        assert_eq!(snapshot.relays()[0].middle_probability, Some(0.0));
    }

    #[test]
    fn malformed_record_names_index() {
        let doc = r#"[{"id":"A","address":"a","consensus_weight":1,"flags":[]},{"id":"B"}]"#;
        let err = parse_consensus(doc).unwrap_err();
        match err {
            DirectoryError::Record { index, .. } => assert_eq!(index, 1),
            other => panic!("expected record error, got {other}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let doc = serde_json::json!([
            relay_json("A", 1, &["Running"], None, None, None),
            relay_json("A", 2, &["Running"], None, None, None),
        ])
        .to_string();
        assert!(matches!(
            parse_consensus(&doc).unwrap_err(),
            DirectoryError::DuplicateId(id) if id == "A"
        ));
    }

    #[test]
    fn guard_probability_requires_guard_flag() {
        let doc = serde_json::json!([relay_json("A", 5, &["Running"], Some(0.2), None, None)])
            .to_string();
        assert!(matches!(
            parse_consensus(&doc).unwrap_err(),
            DirectoryError::Record { index: 0, .. }
        ));
    }

    #[test]
    fn eligible_excludes_zero_probability() {
        let doc = serde_json::json!([
            relay_json("A", 10, &["Guard"], Some(0.5), None, None),
            relay_json("B", 10, &["Guard"], Some(0.0), None, None),
            relay_json("C", 10, &["Guard"], Some(0.5), None, None),
        ])
        .to_string();
        let snapshot = parse_consensus(&doc).unwrap();
        let eligible = eligible_relays(&snapshot, Role::Guard);
        let ids: Vec<&str> = eligible.iter().map(|r| r.as_str()).collect();
        assert_eq!(ids, vec!["A", "C"]);
    }

    #[test]
    fn eligible_empty_when_all_zero() {
        let doc = serde_json::json!([
            relay_json("A", 10, &["Guard"], Some(0.0), Some(0.0), None),
            relay_json("B", 10, &[], Some(0.0), Some(0.0), None),
        ])
        .to_string();
        let snapshot = parse_consensus(&doc).unwrap();
        assert!(eligible_relays(&snapshot, Role::Guard).is_empty());
        assert!(eligible_relays(&snapshot, Role::Middle).is_empty());
    }

    #[test]
    fn normalize_symmetric_pair() {
        let doc = serde_json::json!([
            relay_json("A", 10, &["Guard"], Some(0.2), None, None),
            relay_json("B", 10, &["Guard"], Some(0.2), None, None),
        ])
        .to_string();
        let snapshot = parse_consensus(&doc).unwrap();
        let dist = normalize_selection_distribution(&snapshot, Role::Guard).unwrap();
        assert!((dist[&RelayId::new("A")] - 0.5).abs() < 1e-12);
        assert!((dist[&RelayId::new("B")] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalize_falls_back_to_weights() {
        // No probability fields at all: weights drive the middle distribution.
        let doc = serde_json::json!([
            relay_json("A", 9300, &["Running", "Fast"], None, None, None),
            relay_json("B", 4000, &["Running", "Fast"], None, None, None),
            relay_json("C", 0, &["Running", "Fast"], None, None, None),
        ])
        .to_string();
        let snapshot = parse_consensus(&doc).unwrap();
        let dist = normalize_selection_distribution(&snapshot, Role::Middle).unwrap();
        assert_eq!(dist.len(), 2);
        assert!((dist[&RelayId::new("A")] - 9300.0 / 13300.0).abs() < 1e-12);
        assert!((dist[&RelayId::new("B")] - 4000.0 / 13300.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_single_relay_is_certain() {
        let doc = serde_json::json!([relay_json("A", 10, &["Guard"], Some(0.3), None, None)])
            .to_string();
        let snapshot = parse_consensus(&doc).unwrap();
        let dist = normalize_selection_distribution(&snapshot, Role::Guard).unwrap();
        assert_eq!(dist[&RelayId::new("A")], 1.0);
    }

    #[test]
    fn normalize_errors_without_eligible_relays() {
        let snapshot = parse_consensus("[]").unwrap();
        assert!(matches!(
            normalize_selection_distribution(&snapshot, Role::Guard),
            Err(DirectoryError::NoEligibleRelay(Role::Guard))
        ));
    }

    prop_compose! {
        fn arb_relay(idx: usize)(
            weight in 1u64..100_000,
            guard in proptest::bool::ANY,
            gp in 0.0f64..0.005,
            mp in 0.0f64..0.005,
            country in proptest::option::of("[A-Z]{2}"),
        ) -> Relay {
            let mut flags = BTreeSet::new();
            flags.insert(RelayFlag::Running);
            flags.insert(RelayFlag::Valid);
            if guard {
                flags.insert(RelayFlag::Guard);
            }
            Relay {
                id: RelayId::new(format!("relay-{idx}")),
                address: Address::new(format!("host-{idx}")),
                country: country.unwrap_or_else(|| UNKNOWN_COUNTRY.to_string()),
                consensus_weight: weight,
                flags: flags.clone(),
                guard_probability: if flags.contains(&RelayFlag::Guard) { Some(gp) } else { Some(0.0) },
                middle_probability: Some(mp),
            }
        }
    }

    fn arb_snapshot() -> impl Strategy<Value = RelaySnapshot> {
        (1usize..40).prop_flat_map(|n| {
            let relays: Vec<_> = (0..n).map(arb_relay).collect();
            relays.prop_map(|relays| RelaySnapshot::new(relays).unwrap())
        })
    }

    proptest! {
        #[test]
        fn distribution_sums_to_one_with_eligible_support(snapshot in arb_snapshot()) {
            for role in [Role::Guard, Role::Middle] {
                let eligible = eligible_relays(&snapshot, role);
                match normalize_selection_distribution(&snapshot, role) {
                    Ok(dist) => {
                        let sum: f64 = dist.values().sum();
                        prop_assert!((sum - 1.0).abs() <= 1e-12);
                        for id in dist.keys() {
                            prop_assert!(eligible.contains(id));
                        }
                    }
                    Err(DirectoryError::NoEligibleRelay(_)) => {
                        prop_assert!(eligible.is_empty());
                    }
                    Err(other) => return Err(TestCaseError::fail(other.to_string())),
                }
            }
        }

        #[test]
        fn parse_serialize_round_trip(snapshot in arb_snapshot()) {
            let text = serialize_consensus(&snapshot);
            let reparsed = parse_consensus(&text).unwrap();
            prop_assert_eq!(snapshot.relays(), reparsed.relays());
        }
    }
}
