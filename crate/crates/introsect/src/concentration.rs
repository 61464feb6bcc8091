//! Jurisdictional relay-concentration analytics: selection-probability mass
//! inside a jurisdiction set and the all-hops exposure estimate for the
//! four-hop introduction circuit.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::directory::{RelaySnapshot, Role, UNKNOWN_COUNTRY};
use crate::pathsel::{build_intro_circuit, CircuitIdGen, PathSelector, INTRO_LIFETIME_RANGE};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum ConcentrationError {
    #[error("probability {value} for {name} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("unknown jurisdiction set `{0}`")]
    UnknownSet(String),
}

/// Named set of ISO alpha-2 country codes treated as jointly observable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JurisdictionSet {
    pub name: String,
    pub countries: BTreeSet<String>,
}

impl JurisdictionSet {
    pub fn new(name: impl Into<String>, countries: impl IntoIterator<Item = &'static str>) -> Self {
        JurisdictionSet {
            name: name.into(),
            countries: countries.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn five_eyes() -> Self {
        Self::new("five_eyes", ["US", "GB", "CA", "AU", "NZ"])
    }

    pub fn nine_eyes() -> Self {
        let mut set = Self::five_eyes();
        set.name = "nine_eyes".into();
        set.countries.extend(["DK", "FR", "NL", "NO"].map(String::from));
        set
    }

    pub fn fourteen_eyes() -> Self {
        let mut set = Self::nine_eyes();
        set.name = "fourteen_eyes".into();
        set.countries
            .extend(["DE", "BE", "IT", "ES", "SE"].map(String::from));
        set
    }

    pub fn builtin(name: &str) -> Result<Self, ConcentrationError> {
        match name {
            "five_eyes" => Ok(Self::five_eyes()),
            "nine_eyes" => Ok(Self::nine_eyes()),
            "fourteen_eyes" => Ok(Self::fourteen_eyes()),
            other => Err(ConcentrationError::UnknownSet(other.to_string())),
        }
    }

    pub fn contains(&self, country: &str) -> bool {
        country != UNKNOWN_COUNTRY && self.countries.contains(country)
    }
}

/// Per-jurisdiction-set concentration summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub set_name: String,
    pub p_guard: f64,
    pub p_middle: f64,
    pub p_all_hops_intro: f64,
    pub relays_inside: usize,
    pub relays_outside: usize,
    pub snapshot_timestamp: SimTime,
}

/// Sum of a role's selection probability over relays geolocated inside the
/// set. Relays with unknown country are excluded.
pub fn jurisdiction_mass(snapshot: &RelaySnapshot, set: &JurisdictionSet, role: Role) -> f64 {
    let normalizer: f64 = snapshot
        .relays()
        .iter()
        .map(|r| snapshot.role_weight(r, role))
        .sum();
    if normalizer <= 0.0 {
        return 0.0;
    }
    snapshot
        .relays()
        .iter()
        .filter(|r| set.contains(&r.country))
        .map(|r| snapshot.role_weight(r, role))
        .sum::<f64>()
        / normalizer
}

/// Probability that all four hops of an introduction circuit fall inside the
/// jurisdiction set, under the independent-with-replacement upper-bound
/// approximation: p_guard x p_middle^3.
pub fn all_hops_intro_probability(p_guard: f64, p_middle: f64) -> Result<f64, ConcentrationError> {
    if !(0.0..=1.0).contains(&p_guard) {
        return Err(ConcentrationError::OutOfRange {
            name: "p_guard",
            value: p_guard,
        });
    }
    if !(0.0..=1.0).contains(&p_middle) {
        return Err(ConcentrationError::OutOfRange {
            name: "p_middle",
            value: p_middle,
        });
    }
    Ok(p_guard * p_middle.powi(3))
}

/// Full concentration report for one jurisdiction set.
pub fn concentration_report(
    snapshot: &RelaySnapshot,
    set: &JurisdictionSet,
) -> ConcentrationReport {
    let p_guard = jurisdiction_mass(snapshot, set, Role::Guard);
    let p_middle = jurisdiction_mass(snapshot, set, Role::Middle);
    let relays_inside = snapshot
        .relays()
        .iter()
        .filter(|r| set.contains(&r.country))
        .count();
    ConcentrationReport {
        set_name: set.name.clone(),
        p_guard,
        p_middle,
        p_all_hops_intro: all_hops_intro_probability(p_guard, p_middle)
            .expect("masses are probabilities"),
        relays_inside,
        relays_outside: snapshot.len() - relays_inside,
        snapshot_timestamp: snapshot.timestamp,
    }
}

/// One row of the per-country distribution table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountryRow {
    pub country: String,
    pub relay_count: usize,
    pub guard_mass: f64,
    pub middle_mass: f64,
    pub in_fourteen_eyes: bool,
}

/// Tabular output of [`emit_distribution_report`]: per-country rows plus one
/// summary per requested jurisdiction set.
#[derive(Clone, Debug, Serialize)]
pub struct DistributionReport {
    pub countries: Vec<CountryRow>,
    pub sets: Vec<ConcentrationReport>,
}

impl DistributionReport {
    /// Render the per-country table as CSV with the fixed header
    /// `country,relay_count,guard_mass,middle_mass,in_fourteen_eyes`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("country,relay_count,guard_mass,middle_mass,in_fourteen_eyes\n");
        for row in &self.countries {
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{}\n",
                row.country, row.relay_count, row.guard_mass, row.middle_mass, row.in_fourteen_eyes
            ));
        }
        out
    }
}

/// Per-country relay counts and probability masses, plus per-set summaries,
/// ready for external plotting.
pub fn emit_distribution_report(
    snapshot: &RelaySnapshot,
    sets: &[JurisdictionSet],
) -> DistributionReport {
    let fourteen = JurisdictionSet::fourteen_eyes();
    let guard_norm: f64 = snapshot
        .relays()
        .iter()
        .map(|r| snapshot.role_weight(r, Role::Guard))
        .sum();
    let middle_norm: f64 = snapshot
        .relays()
        .iter()
        .map(|r| snapshot.role_weight(r, Role::Middle))
        .sum();
    let mut by_country: BTreeMap<String, CountryRow> = BTreeMap::new();
    for relay in snapshot.relays() {
        let row = by_country
            .entry(relay.country.clone())
            .or_insert_with(|| CountryRow {
                country: relay.country.clone(),
                relay_count: 0,
                guard_mass: 0.0,
                middle_mass: 0.0,
                in_fourteen_eyes: fourteen.contains(&relay.country),
            });
        row.relay_count += 1;
        if guard_norm > 0.0 {
            row.guard_mass += snapshot.role_weight(relay, Role::Guard) / guard_norm;
        }
        if middle_norm > 0.0 {
            row.middle_mass += snapshot.role_weight(relay, Role::Middle) / middle_norm;
        }
    }
    DistributionReport {
        countries: by_country.into_values().collect(),
        sets: sets
            .iter()
            .map(|set| concentration_report(snapshot, set))
            .collect(),
    }
}

/// Monte-Carlo estimate of the all-hops-inside probability over actually
/// sampled introduction circuits (selection without replacement), for
/// comparison against the independence upper bound.
pub fn monte_carlo_all_hops<R: Rng>(
    snapshot: &RelaySnapshot,
    set: &JurisdictionSet,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let selector = PathSelector::new(snapshot);
    let mut ids = CircuitIdGen::new();
    let mut inside = 0usize;
    let mut drawn = 0usize;
    for _ in 0..samples {
        let Some(guard) = selector.sample_relay(Role::Guard, rng).cloned() else {
            break;
        };
        let vanguard = loop {
            let Some(v) = selector.sample_relay(Role::Middle, rng).cloned() else {
                break None;
            };
            if v != guard {
                break Some(v);
            }
        };
        let Some(vanguard) = vanguard else { break };
        let Ok(circuit) = build_intro_circuit(
            &selector,
            &guard,
            &vanguard,
            INTRO_LIFETIME_RANGE,
            SimTime::ZERO,
            &mut ids,
            rng,
        ) else {
            continue;
        };
        drawn += 1;
        let all_inside = circuit.hops.iter().all(|hop| {
            snapshot
                .get(hop)
                .map(|r| set.contains(&r.country))
                .unwrap_or(false)
        });
        if all_inside {
            inside += 1;
        }
    }
    if drawn == 0 {
        0.0
    } else {
        inside as f64 / drawn as f64
    }
}
