//! Batch sweeps over one experiment axis, with per-group medians and the
//! trials-versus-weight rank correlation.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::run::run_experiment;
use super::stats::{median, spearman};
use super::synth::{override_weight, synthesize_snapshot};
use super::{ExperimentConfig, HarnessError, PlantedConfig};
use crate::attack::StageStatus;
use crate::directory::{serialize_consensus, RelayFlag, RelayId, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TimeOfDay,
    ConsensusWeight,
    Intensity,
    MitigationInterval,
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "time_of_day" => Ok(SweepAxis::TimeOfDay),
            "consensus_weight" => Ok(SweepAxis::ConsensusWeight),
            "intensity" => Ok(SweepAxis::Intensity),
            "mitigation_interval" => Ok(SweepAxis::MitigationInterval),
            other => Err(format!(
                "unknown sweep axis `{other}` (expected time_of_day, consensus_weight, intensity, or mitigation_interval)"
            )),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepAxis::TimeOfDay => "time_of_day",
            SweepAxis::ConsensusWeight => "consensus_weight",
            SweepAxis::Intensity => "intensity",
            SweepAxis::MitigationInterval => "mitigation_interval",
        };
        f.write_str(s)
    }
}

/// One (axis value, seed, stage) measurement.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub node: &'static str,
    pub stage: u32,
    pub trials: u32,
    pub consensus_weight: u64,
    pub status: StageStatus,
    pub reconstructed: bool,
}

/// Per-value aggregate.
#[derive(Clone, Debug, Serialize)]
pub struct SweepGroup {
    pub value: f64,
    pub runs: usize,
    pub reconstructed: usize,
    pub median_trials_per_stage: Vec<(&'static str, f64)>,
}

#[derive(Debug, Serialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub groups: Vec<SweepGroup>,
    /// Pooled Spearman rank correlation between a converged stage's trial
    /// count and its monitored relay's consensus weight.
    pub spearman_trials_vs_weight: f64,
}

impl SweepReport {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "axis,value,seed,node,stage,trials,consensus_weight,status,reconstructed\n",
        );
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{},{},{},{},{},{},{}\n",
                self.axis,
                row.value,
                row.seed,
                row.node,
                row.stage,
                row.trials,
                row.consensus_weight,
                row.status,
                row.reconstructed
            ));
        }
        out
    }

    pub fn groups_csv(&self) -> String {
        let mut out = String::from("axis,value,runs,reconstructed,node,median_trials\n");
        for group in &self.groups {
            for (node, median_trials) in &group.median_trials_per_stage {
                out.push_str(&format!(
                    "{},{:.6},{},{},{},{:.1}\n",
                    self.axis, group.value, group.runs, group.reconstructed, node, median_trials
                ));
            }
        }
        out
    }
}

/// Specialize the base config for one axis value.
fn apply_axis(
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
    seed: u64,
) -> Result<ExperimentConfig, HarnessError> {
    let mut config = base.clone();
    config.seed = seed;
    config.out_dir = None;
    match axis {
        SweepAxis::TimeOfDay => {
            config.scenario.time_of_day_hours = value;
        }
        SweepAxis::Intensity => {
            config.network.intensity_base = value;
        }
        SweepAxis::MitigationInterval => {
            config.attack.mitigation_rebuild_interval_secs = (value > 0.0).then_some(value);
        }
        SweepAxis::ConsensusWeight => {
            // Pin the entry guard to a known relay and override its weight,
            // regenerating the probability fields for coherence. The rest of
            // the circuit stays pinned too so runs differ only in the axis.
            if config.scenario.consensus_fixture.is_some() {
                return Err(HarnessError::InvalidConfig {
                    field: "scenario.consensus_fixture",
                    reason: "consensus_weight sweeps need a synthetic consensus".into(),
                });
            }
            let snapshot = synthesize_snapshot(config.network.relay_count, seed);
            let guard_id = snapshot
                .relays()
                .iter()
                .find(|r| r.has_flag(RelayFlag::Guard))
                .map(|r| r.id.clone())
                .ok_or(HarnessError::InvalidConfig {
                    field: "network.relay_count",
                    reason: "synthetic snapshot has no guard-flagged relay".into(),
                })?;
            let adjusted = override_weight(&snapshot, &guard_id, value.max(1.0) as u64);
            // Pick the remaining circuit relays deterministically: the three
            // heaviest middle-eligible relays other than the guard.
            let mut middles: Vec<(&RelayId, u64)> = adjusted
                .relays()
                .iter()
                .filter(|r| {
                    r.id != guard_id && adjusted.role_weight(r, Role::Middle) > 0.0
                })
                .map(|r| (&r.id, r.consensus_weight))
                .collect();
            middles.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            if middles.len() < 3 {
                return Err(HarnessError::InvalidConfig {
                    field: "network.relay_count",
                    reason: "not enough middle-eligible relays for a pinned circuit".into(),
                });
            }
            config.scenario.planted = Some(PlantedConfig {
                entry_guard: guard_id.to_string(),
                vanguard: middles[0].0.to_string(),
                middle1: middles[1].0.to_string(),
                intro_point: middles[2].0.to_string(),
            });
            // Persist the adjusted snapshot through a fixture-free channel:
            // leave generation to the run by storing it inline.
            config.scenario.inline_consensus = Some(serialize_consensus(&adjusted));
        }
    }
    Ok(config)
}

/// Run `values` x `seeds` experiments and aggregate per-value medians plus
/// the pooled trials-versus-weight rank correlation. Runs execute in
/// parallel; results are ordered by (value, seed) regardless.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
) -> Result<SweepReport, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::InvalidConfig {
            field: "sweep.values",
            reason: "axis values must be non-empty".into(),
        });
    }
    if seeds.is_empty() {
        return Err(HarnessError::InvalidConfig {
            field: "sweep.seeds",
            reason: "seed list must be non-empty".into(),
        });
    }
    let mut cells: Vec<(f64, u64)> = Vec::new();
    for &value in values {
        for &seed in seeds {
            cells.push((value, seed));
        }
    }
    let results: Result<Vec<(f64, u64, super::run::RunReport)>, HarnessError> = cells
        .par_iter()
        .map(|&(value, seed)| {
            let config = apply_axis(base, axis, value, seed)?;
            let report = run_experiment(&config)?;
            Ok((value, seed, report))
        })
        .collect();
    let mut results = results?;
    results.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut rows = Vec::new();
    for (value, seed, report) in &results {
        for stage in &report.stages {
            rows.push(SweepRow {
                value: *value,
                seed: *seed,
                node: stage.node,
                stage: stage.stage,
                trials: stage.trials_done,
                consensus_weight: stage.monitored_weight,
                status: stage.status,
                reconstructed: report.reconstructed,
            });
        }
    }

    let mut groups = Vec::new();
    for &value in values {
        let in_group: Vec<&(f64, u64, super::run::RunReport)> =
            results.iter().filter(|(v, _, _)| *v == value).collect();
        let mut median_trials_per_stage = Vec::new();
        for position in crate::attack::StagePosition::circuit_order() {
            let trials: Vec<f64> = in_group
                .iter()
                .flat_map(|(_, _, r)| r.stages.iter())
                .filter(|s| s.stage == position.stage_index())
                .map(|s| s.trials_done as f64)
                .collect();
            if !trials.is_empty() {
                median_trials_per_stage.push((position.label(), median(&trials)));
            }
        }
        groups.push(SweepGroup {
            value,
            runs: in_group.len(),
            reconstructed: in_group.iter().filter(|(_, _, r)| r.reconstructed).count(),
            median_trials_per_stage,
        });
    }

    let converged: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.status == StageStatus::Converged)
        .map(|r| (r.consensus_weight as f64, r.trials as f64))
        .collect();
    let (weights, trials): (Vec<f64>, Vec<f64>) = converged.into_iter().unzip();
    let rho = spearman(&weights, &trials);

    Ok(SweepReport {
        axis,
        rows,
        groups,
        spearman_trials_vs_weight: rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::desk_config;

    #[test]
    fn time_of_day_sweep_bookkeeping() {
        let mut base = desk_config(0);
        base.network.relay_count = 40;
        base.network.circuit_population = 150;
        let report = run_sweep(&base, SweepAxis::TimeOfDay, &[2.0, 10.0, 18.0], &[1, 2]).unwrap();
        assert_eq!(report.groups.len(), 3);
        for group in &report.groups {
            assert_eq!(group.runs, 2);
            assert!(!group.median_trials_per_stage.is_empty());
        }
        // Three values, two seeds, four stages per run.
        assert_eq!(report.rows.len(), 3 * 2 * 4);
    }

    #[test]
    fn heavier_entry_guard_needs_more_trials() {
        let base = desk_config(0);
        let report = run_sweep(
            &base,
            SweepAxis::ConsensusWeight,
            &[4000.0, 9300.0],
            &[1, 2, 3],
        )
        .unwrap();
        let eg_median = |value: f64| {
            report
                .groups
                .iter()
                .find(|g| g.value == value)
                .unwrap()
                .median_trials_per_stage
                .iter()
                .find(|(node, _)| *node == "EG")
                .unwrap()
                .1
        };
        assert!(
            eg_median(9300.0) > eg_median(4000.0),
            "heavy guard {} vs light guard {}",
            eg_median(9300.0),
            eg_median(4000.0)
        );
    }

    #[test]
    fn intensity_sweep_is_monotone_on_paired_seeds() {
        let base = desk_config(0);
        let report = run_sweep(&base, SweepAxis::Intensity, &[0.0, 0.35, 0.7], &[5, 6, 7]).unwrap();
        let medians: Vec<f64> = report
            .groups
            .iter()
            .map(|g| {
                let all: Vec<f64> = g.median_trials_per_stage.iter().map(|(_, m)| *m).collect();
                all.iter().sum::<f64>() / all.len() as f64
            })
            .collect();
        assert!(medians[0] <= medians[1] + 1e-9);
        assert!(medians[1] <= medians[2] + 1e-9);
        // Noiseless runs converge immediately.
        assert_eq!(medians[0], 1.0);
    }

    #[test]
    fn unknown_axis_is_rejected() {
        assert!("bogus".parse::<SweepAxis>().is_err());
        assert_eq!("intensity".parse::<SweepAxis>().unwrap(), SweepAxis::Intensity);
    }
}
