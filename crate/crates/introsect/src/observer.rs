//! Monitored-relay tap: windowed capture of destination addresses,
//! pseudonymization under an ephemeral per-run key, and anonymity-set
//! construction.
//!
//! Only destination addresses are retained inside a window; no timestamps,
//! counts, or source addresses ever reach the attack path.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::directory::{Address, RelayId};
use crate::simcore::FlowObservation;
use crate::time::SimTime;

/// Ephemeral keyed-digest key, generated per experiment run and never
/// serialized. Dropping the key makes every pseudonym irreversible.
pub struct PseudonymKey([u8; 32]);

impl PseudonymKey {
    /// Derive the run key from the experiment seed. Distinct runs use
    /// distinct seeds and therefore produce unlinkable pseudonyms.
    pub fn from_run_seed(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"introsect pseudonym key v1");
        hasher.update(seed.to_le_bytes());
        PseudonymKey(hasher.finalize().into())
    }
}

impl fmt::Debug for PseudonymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Key material stays out of logs and reports.
        f.write_str("PseudonymKey(..)")
    }
}

/// Fixed-length opaque digest token standing in for one address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pseudonym([u8; 16]);

impl Pseudonym {
    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pseudonym({})", self.to_hex())
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Pseudonym {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

/// Deterministic, irreversible per-run mapping from addresses to tokens.
/// Same address and key give the same token; distinct addresses collide with
/// cryptographically negligible probability.
pub fn pseudonymize(address: &Address, key: &PseudonymKey) -> Pseudonym {
    let mut hasher = Sha256::new();
    hasher.update(key.0);
    hasher.update((address.as_str().len() as u64).to_le_bytes());
    hasher.update(address.as_str().as_bytes());
    let digest = hasher.finalize();
    let mut token = [0u8; 16];
    token.copy_from_slice(&digest[..16]);
    Pseudonym(token)
}

/// Pseudonymized destination set captured in one measurement window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AnonymitySet {
    pub stage: u32,
    pub trial: u32,
    pub window: (SimTime, SimTime),
    pub members: BTreeSet<Pseudonym>,
}

impl AnonymitySet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("a capture window is already open at {relay} (stage {stage}, trial {trial})")]
    WindowAlreadyOpen { relay: RelayId, stage: u32, trial: u32 },
    #[error("no capture window is open")]
    NoOpenWindow,
}

struct OpenWindow {
    relay: RelayId,
    stage: u32,
    trial: u32,
    started: SimTime,
    members: BTreeSet<Pseudonym>,
}

/// The in-simulator packet tap at one monitored relay. At most one window is
/// open at a time; all mutation happens inside the event loop.
pub struct Tap {
    key: PseudonymKey,
    open: Option<OpenWindow>,
}

impl Tap {
    pub fn new(key: PseudonymKey) -> Self {
        Tap { key, open: None }
    }

    pub fn key(&self) -> &PseudonymKey {
        &self.key
    }

    /// Relay currently being monitored, if a window is open.
    pub fn monitored(&self) -> Option<&RelayId> {
        self.open.as_ref().map(|w| &w.relay)
    }

    /// Open a capture window at `relay` for trial `trial` of stage `stage`.
    pub fn start_window(
        &mut self,
        relay: RelayId,
        stage: u32,
        trial: u32,
        now: SimTime,
    ) -> Result<(), ObserverError> {
        if let Some(open) = &self.open {
            return Err(ObserverError::WindowAlreadyOpen {
                relay: open.relay.clone(),
                stage: open.stage,
                trial: open.trial,
            });
        }
        self.open = Some(OpenWindow {
            relay,
            stage,
            trial,
            started: now,
            members: BTreeSet::new(),
        });
        Ok(())
    }

    /// Feed one flow observation through the tap. Only the destination
    /// address survives, pseudonymized, and only while a window is open at
    /// the observing relay.
    pub fn deliver(&mut self, observation: &FlowObservation) {
        let Some(open) = &mut self.open else {
            return;
        };
        if observation.at_relay != open.relay {
            return;
        }
        open.members.insert(pseudonymize(&observation.dst, &self.key));
    }

    /// Close the window and return the finalized trial set.
    pub fn stop_window(&mut self, now: SimTime) -> Result<AnonymitySet, ObserverError> {
        let open = self.open.take().ok_or(ObserverError::NoOpenWindow)?;
        Ok(AnonymitySet {
            stage: open.stage,
            trial: open.trial,
            window: (open.started, now.max(open.started + std::time::Duration::from_nanos(1))),
            members: open.members,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> Address {
        Address::new(s)
    }

    #[test]
    fn pseudonymize_is_deterministic_within_a_run() {
        let key = PseudonymKey::from_run_seed(1);
        let a = addr("10.0.0.1");
        assert_eq!(pseudonymize(&a, &key), pseudonymize(&a, &key));
    }

    #[test]
    fn pseudonyms_never_collide_on_large_fixture() {
        let key = PseudonymKey::from_run_seed(2);
        let mut seen = std::collections::HashSet::with_capacity(100_000);
        for i in 0..100_000u32 {
            let p = pseudonymize(&addr(&format!("10.{}.{}.{}", i >> 16, (i >> 8) & 0xff, i & 0xff)), &key);
            assert!(seen.insert(p), "collision at address index {i}");
        }
    }

    #[test]
    fn different_runs_give_unlinkable_pseudonyms() {
        let a = addr("10.0.0.1");
        let p1 = pseudonymize(&a, &PseudonymKey::from_run_seed(1));
        let p2 = pseudonymize(&a, &PseudonymKey::from_run_seed(2));
        assert_ne!(p1, p2);
    }

    fn observation(at_relay: &str, dst: &str, nanos: u64) -> FlowObservation {
        FlowObservation {
            at_relay: RelayId::new(at_relay),
            src: addr("src-host"),
            dst: addr(dst),
            at: SimTime::from_nanos(nanos),
        }
    }

    #[test]
    fn vacuous_window_yields_empty_set() {
        let mut tap = Tap::new(PseudonymKey::from_run_seed(3));
        tap.start_window(RelayId::new("ip"), 4, 1, SimTime::ZERO).unwrap();
        let set = tap.stop_window(SimTime::from_secs_f64(1.0)).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn window_captures_monitored_destinations_only() {
        let mut tap = Tap::new(PseudonymKey::from_run_seed(3));
        tap.start_window(RelayId::new("ip"), 4, 1, SimTime::ZERO).unwrap();
        tap.deliver(&observation("ip", "m1-host", 10));
        tap.deliver(&observation("other", "unrelated-host", 20));
        let set = tap.stop_window(SimTime::from_secs_f64(1.0)).unwrap();
        assert_eq!(set.len(), 1);
        let expected = pseudonymize(&addr("m1-host"), tap.key());
        assert!(set.members.contains(&expected));
    }

    #[test]
    fn membership_matches_distinct_destination_count() {
        let mut tap = Tap::new(PseudonymKey::from_run_seed(7));
        tap.start_window(RelayId::new("ip"), 4, 1, SimTime::ZERO).unwrap();
        let mut distinct = std::collections::BTreeSet::new();
        for i in 0..50 {
            let dst = format!("bg-{}", i % 17);
            distinct.insert(dst.clone());
            tap.deliver(&observation("ip", &dst, i));
        }
        tap.deliver(&observation("ip", "m1-host", 60));
        distinct.insert("m1-host".into());
        let set = tap.stop_window(SimTime::from_secs_f64(1.0)).unwrap();
        assert_eq!(set.len(), distinct.len());
        assert!(set.len() <= 1 + 17);
    }

    #[test]
    fn nested_window_is_a_usage_error() {
        let mut tap = Tap::new(PseudonymKey::from_run_seed(3));
        tap.start_window(RelayId::new("ip"), 4, 1, SimTime::ZERO).unwrap();
        assert!(matches!(
            tap.start_window(RelayId::new("ip"), 4, 2, SimTime::ZERO),
            Err(ObserverError::WindowAlreadyOpen { .. })
        ));
    }

    #[test]
    fn stop_without_open_window_is_a_usage_error() {
        let mut tap = Tap::new(PseudonymKey::from_run_seed(3));
        tap.start_window(RelayId::new("ip"), 4, 1, SimTime::ZERO).unwrap();
        tap.stop_window(SimTime::from_secs_f64(1.0)).unwrap();
        assert!(matches!(
            tap.stop_window(SimTime::from_secs_f64(2.0)),
            Err(ObserverError::NoOpenWindow)
        ));
    }

    #[test]
    fn serialized_set_carries_only_minimal_schema() {
        let mut tap = Tap::new(PseudonymKey::from_run_seed(5));
        tap.start_window(RelayId::new("ip"), 4, 2, SimTime::ZERO).unwrap();
        tap.deliver(&observation("ip", "m1-host", 5));
        let set = tap.stop_window(SimTime::from_secs_f64(0.9)).unwrap();
        let value = serde_json::to_value(&set).unwrap();
        let object = value.as_object().unwrap();
        let mut keys: Vec<&str> = object.keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, vec!["members", "stage", "trial", "window"]);
        let members = object["members"].as_array().unwrap();
        for member in members {
            let token = member.as_str().unwrap();
            assert_eq!(token.len(), 32);
            assert!(token.chars().all(|c| c.is_ascii_hexdigit()));
        }
        // Neither the raw address nor any key bytes appear in the output.
        let rendered = value.to_string();
        assert!(!rendered.contains("m1-host"));
    }
}
