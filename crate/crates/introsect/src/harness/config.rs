//! Experiment configuration. The config file uses the same structured-text
//! notation as the consensus fixture; every field has a desk-scale default,
//! so `{}` is a valid config.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::attack::AttackConfig;
use crate::simcore::DiurnalProfile;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub attack: AttackParams,
    pub scenario: ScenarioConfig,
    pub out_dir: Option<PathBuf>,
}

/// Desk-scale network parameters: 300 relays and 3,000 concurrent background
/// circuits keep the circuits-per-relay ratio of the live network within an
/// order of magnitude while runs stay under a minute.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub relay_count: usize,
    pub circuit_population: usize,
    /// Background flows per circuit hop per second before the diurnal
    /// multiplier. Free calibration parameter.
    pub intensity_base: f64,
    pub diurnal: DiurnalProfile,
    /// Fraction of background clients that keep a long-lived entry guard.
    pub guard_pin_fraction: f64,
    /// Persistent high-volume clients planted per target-circuit relay.
    pub persistent_clients_per_relay: u32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            relay_count: 300,
            circuit_population: 3000,
            intensity_base: 0.35,
            diurnal: DiurnalProfile::default(),
            guard_pin_fraction: 0.1,
            persistent_clients_per_relay: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    pub inter_trial_delay_secs: f64,
    pub trial_budget: u32,
    pub stages: u32,
    pub mitigation_rebuild_interval_secs: Option<f64>,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            inter_trial_delay_secs: 30.0,
            trial_budget: 500,
            stages: 4,
            mitigation_rebuild_interval_secs: None,
        }
    }
}

impl AttackParams {
    pub fn to_attack_config(&self) -> AttackConfig {
        AttackConfig {
            inter_trial_delay: Duration::from_secs_f64(self.inter_trial_delay_secs),
            trial_budget: self.trial_budget,
            stages: self.stages,
            mitigation_rebuild_interval: self
                .mitigation_rebuild_interval_secs
                .map(Duration::from_secs_f64),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Hour of day (UTC) at which the run starts.
    pub time_of_day_hours: f64,
    /// Relay-list file to load; a synthetic consensus is generated from the
    /// seed when absent.
    pub consensus_fixture: Option<PathBuf>,
    /// Inline relay-list document; takes precedence over the fixture path.
    /// Filled programmatically by sweeps that adjust the consensus.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inline_consensus: Option<String>,
    /// Give middle 1 the vanguard's host address (the co-location
    /// limitation scenario).
    pub co_locate_m1_m0: bool,
    /// Pin the four target-circuit relays instead of sampling them.
    pub planted: Option<PlantedConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedConfig {
    pub entry_guard: String,
    pub vanguard: String,
    pub middle1: String,
    pub intro_point: String,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |field: &'static str, reason: String| {
            Err(HarnessError::InvalidConfig { field, reason })
        };
        if self.network.relay_count < 8 {
            return fail(
                "network.relay_count",
                format!("must be at least 8, got {}", self.network.relay_count),
            );
        }
        if self.network.circuit_population == 0 {
            return fail("network.circuit_population", "must be positive".into());
        }
        if self.network.intensity_base < 0.0 || !self.network.intensity_base.is_finite() {
            return fail(
                "network.intensity_base",
                format!("must be finite and non-negative, got {}", self.network.intensity_base),
            );
        }
        if !self.network.diurnal.is_valid() {
            return fail("network.diurnal", "all multipliers must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.network.guard_pin_fraction) {
            return fail(
                "network.guard_pin_fraction",
                format!("must lie in [0, 1], got {}", self.network.guard_pin_fraction),
            );
        }
        if self.attack.inter_trial_delay_secs <= 0.0 {
            return fail(
                "attack.inter_trial_delay_secs",
                format!("must be positive, got {}", self.attack.inter_trial_delay_secs),
            );
        }
        if self.attack.trial_budget == 0 {
            return fail("attack.trial_budget", "must be at least 1".into());
        }
        if self.attack.stages == 0 || self.attack.stages > 4 {
            return fail(
                "attack.stages",
                format!("must lie in [1, 4], got {}", self.attack.stages),
            );
        }
        if let Some(interval) = self.attack.mitigation_rebuild_interval_secs {
            if interval <= 0.0 {
                return fail(
                    "attack.mitigation_rebuild_interval_secs",
                    format!("must be positive, got {interval}"),
                );
            }
        }
        if !(0.0..24.0).contains(&self.scenario.time_of_day_hours) {
            return fail(
                "scenario.time_of_day_hours",
                format!("must lie in [0, 24), got {}", self.scenario.time_of_day_hours),
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_a_valid_config() {
        let config = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(config.network.relay_count, 300);
        assert_eq!(config.attack.trial_budget, 500);
        assert_eq!(config.attack.stages, 4);
    }

    #[test]
    fn invalid_fields_are_named() {
        let err = ExperimentConfig::from_json(r#"{"network":{"relay_count":3}}"#).unwrap_err();
        match err {
            HarnessError::InvalidConfig { field, .. } => {
                assert_eq!(field, "network.relay_count")
            }
            other => panic!("unexpected error {other}"),
        }
        let err =
            ExperimentConfig::from_json(r#"{"attack":{"inter_trial_delay_secs":0.0}}"#).unwrap_err();
        assert!(matches!(
            err,
            HarnessError::InvalidConfig { field: "attack.inter_trial_delay_secs", .. }
        ));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"bogus":1}"#),
            Err(HarnessError::ConfigParse(_))
        ));
    }

    #[test]
    fn round_trips_through_json() {
        let mut config = ExperimentConfig {
            seed: 42,
            ..ExperimentConfig::default()
        };
        config.attack.mitigation_rebuild_interval_secs = Some(600.0);
        let reparsed = ExperimentConfig::from_json(&config.to_json()).unwrap();
        assert_eq!(reparsed.seed, 42);
        assert_eq!(reparsed.attack.mitigation_rebuild_interval_secs, Some(600.0));
    }
}
