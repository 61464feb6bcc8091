//! The intersection engine and stage controller: accumulate anonymity sets,
//! intersect, detect convergence, advance hop by hop along the introduction
//! circuit, and evaluate the circuit-rebuild mitigation.
//!
//! Stages are numbered by the monitored relay's circuit position counted
//! from the service: the entry guard is stage 1, the vanguard stage 2,
//! middle 1 stage 3, and the introduction point stage 4. The attack executes
//! them in reverse (4 down to 1), starting at the introduction point (the
//! only relay known at the outset), and each converged stage's identified
//! address joins the excluded set for the stages that follow.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;
use thiserror::Error;

use crate::directory::{Address, Relay, RelayId, RelaySnapshot, Role};
use crate::observer::{pseudonymize, AnonymitySet, ObserverError, Pseudonym, PseudonymKey, Tap};
use crate::pathsel::{
    sample_circuit_pinned, CircuitIdGen, CircuitPopulation, CircuitSpec, PathError, PathSelector,
    INTRO_LIFETIME_RANGE,
};
use crate::protocol::{
    establish_intro, execute_plan, plan_handshake, Fault, HiddenService, IntroRegistry,
    LatencyModel, OnionAddress, ProtocolError, SimEvent,
};
use crate::simcore::{
    diurnal_intensity, emit_background_traffic, DiurnalProfile, EventQueue, FlowObservation,
    SimError,
};
use crate::time::SimTime;

/// Flow-rate multiplier for persistent high-volume clients relative to the
/// base background intensity. High enough that an armed persistent edge
/// appears in effectively every measurement window.
pub const PERSISTENT_CLIENT_RATE_MULTIPLIER: f64 = 150.0;
/// Nominal virtual time per trial (inter-trial delay plus one handshake),
/// used to convert tenure trial counts into durations.
pub const NOMINAL_TRIAL_SPACING: Duration = Duration::from_secs(31);
/// Persistent-client tenure in trials at negligible relay weight.
pub const PERSISTENT_TENURE_BASE_TRIALS: f64 = 26.0;
/// Additional tenure trials at the reference weight share and above.
pub const PERSISTENT_TENURE_WEIGHT_TRIALS: f64 = 55.0;
/// Weight share at which persistent-client tenure saturates.
pub const PERSISTENT_TENURE_REFERENCE_SHARE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("anonymity set is for stage {set_stage}, intersection state is at stage {state_stage}")]
    StageMismatch { set_stage: u32, state_stage: u32 },
    #[error("intersection state already finished as {0:?}")]
    StageFinished(StageStatus),
    #[error("attack exceeded the introduction circuit lifetime at {0}")]
    CircuitLifetimeExceeded(SimTime),
    #[error("invalid attack config: {0}")]
    BadConfig(String),
    #[error("invalid world setup: {0}")]
    BadSetup(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Directory(#[from] crate::directory::DirectoryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Running,
    Converged,
    EmptyFailure,
    BudgetExhausted,
}

impl std::fmt::Display for StageStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StageStatus::Running => "running",
            StageStatus::Converged => "converged",
            StageStatus::EmptyFailure => "empty_failure",
            StageStatus::BudgetExhausted => "budget_exhausted",
        };
        f.write_str(s)
    }
}

/// Circuit position of a monitored relay, counted from the service.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum StagePosition {
    EntryGuard,
    Vanguard,
    Middle1,
    IntroPoint,
}

impl StagePosition {
    pub fn stage_index(self) -> u32 {
        match self {
            StagePosition::EntryGuard => 1,
            StagePosition::Vanguard => 2,
            StagePosition::Middle1 => 3,
            StagePosition::IntroPoint => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StagePosition::EntryGuard => "EG",
            StagePosition::Vanguard => "M0",
            StagePosition::Middle1 => "M1",
            StagePosition::IntroPoint => "IP",
        }
    }

    pub fn hop_index(self) -> usize {
        match self {
            StagePosition::EntryGuard => 0,
            StagePosition::Vanguard => 1,
            StagePosition::Middle1 => 2,
            StagePosition::IntroPoint => 3,
        }
    }

    /// Execution order: the attack starts at the introduction point and
    /// works toward the service.
    pub fn attack_order() -> [StagePosition; 4] {
        [
            StagePosition::IntroPoint,
            StagePosition::Middle1,
            StagePosition::Vanguard,
            StagePosition::EntryGuard,
        ]
    }

    /// Row order used in reports: circuit order from the service outward.
    pub fn circuit_order() -> [StagePosition; 4] {
        [
            StagePosition::EntryGuard,
            StagePosition::Vanguard,
            StagePosition::Middle1,
            StagePosition::IntroPoint,
        ]
    }
}

/// Cumulative intersection for one stage.
#[derive(Clone, Debug)]
pub struct IntersectionState {
    pub stage: u32,
    pub trials_done: u32,
    pub current: BTreeSet<Pseudonym>,
    pub excluded: BTreeSet<Pseudonym>,
    pub status: StageStatus,
}

impl IntersectionState {
    pub fn new(stage: u32, excluded: BTreeSet<Pseudonym>) -> Self {
        IntersectionState {
            stage,
            trials_done: 0,
            current: BTreeSet::new(),
            excluded,
            status: StageStatus::Running,
        }
    }

    /// Fold one trial's anonymity set into the cumulative intersection.
    /// Previously identified members are removed from the set first; the
    /// first trial initializes the intersection.
    pub fn intersect_step(&mut self, set: &AnonymitySet) -> Result<(), AttackError> {
        if set.stage != self.stage {
            return Err(AttackError::StageMismatch {
                set_stage: set.stage,
                state_stage: self.stage,
            });
        }
        if self.status != StageStatus::Running {
            return Err(AttackError::StageFinished(self.status));
        }
        let candidates: BTreeSet<Pseudonym> = set
            .members
            .difference(&self.excluded)
            .copied()
            .collect();
        if self.trials_done == 0 {
            self.current = candidates;
        } else {
            self.current = self.current.intersection(&candidates).copied().collect();
        }
        self.trials_done += 1;
        self.status = match self.current.len() {
            0 => StageStatus::EmptyFailure,
            1 => StageStatus::Converged,
            _ => StageStatus::Running,
        };
        Ok(())
    }

    pub fn identified(&self) -> Option<Pseudonym> {
        if self.status == StageStatus::Converged {
            self.current.iter().next().copied()
        } else {
            None
        }
    }
}

/// Attack-stage controller parameters.
#[derive(Clone, Copy, Debug)]
pub struct AttackConfig {
    pub inter_trial_delay: Duration,
    pub trial_budget: u32,
    pub stages: u32,
    pub mitigation_rebuild_interval: Option<Duration>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            inter_trial_delay: Duration::from_secs(30),
            trial_budget: 500,
            stages: 4,
            mitigation_rebuild_interval: None,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.inter_trial_delay.is_zero() {
            return Err(AttackError::BadConfig(
                "inter_trial_delay must be positive".into(),
            ));
        }
        if self.trial_budget == 0 {
            return Err(AttackError::BadConfig("trial_budget must be at least 1".into()));
        }
        if self.stages == 0 || self.stages > 4 {
            return Err(AttackError::BadConfig("stages must be between 1 and 4".into()));
        }
        Ok(())
    }
}

/// Result of one stage.
#[derive(Clone, Debug, Serialize)]
pub struct StageResult {
    pub stage: u32,
    pub node: &'static str,
    pub monitored: RelayId,
    pub monitored_weight: u64,
    pub trials_to_convergence: Option<u32>,
    pub trials_done: u32,
    pub failed_attempts: u32,
    #[serde(skip)]
    pub identified: Option<Pseudonym>,
    pub status: StageStatus,
    /// Ground-truth check through the validation channel: identified
    /// pseudonym equals the current true successor's. Only for converged
    /// stages; never visible to the attack path.
    pub verified: Option<bool>,
    pub elapsed_virtual_secs: f64,
}

/// One intersected trial, with out-of-band validation flags.
#[derive(Clone, Debug, Serialize)]
pub struct TrialTrace {
    pub stage: u32,
    pub trial: u32,
    pub anonymity_set_size: usize,
    pub intersection_size: usize,
    pub status: StageStatus,
    pub virtual_time_secs: f64,
    #[serde(skip)]
    pub successor_in_set: bool,
    #[serde(skip)]
    pub successor_in_intersection: bool,
}

/// How the four planted relays of the target's introduction circuit are
/// chosen.
#[derive(Clone, Debug)]
pub enum PlantedRelays {
    /// Weighted draws from the consensus, like any other service.
    Sampled,
    /// Deterministically pinned, service-out order [EG, M0, M1, IP].
    Pinned {
        entry_guard: RelayId,
        vanguard: RelayId,
        middle1: RelayId,
        intro_point: RelayId,
    },
}

/// Everything needed to assemble a simulation world.
pub struct WorldSetup {
    pub seed: u64,
    pub snapshot: RelaySnapshot,
    pub circuit_population: usize,
    pub guard_pin_fraction: f64,
    /// Persistent high-volume clients planted per circuit relay; their
    /// tenure grows with the relay's consensus-weight share.
    pub persistent_clients_per_relay: u32,
    pub intensity_base: f64,
    pub diurnal: DiurnalProfile,
    pub start_hour: f64,
    pub latency: LatencyModel,
    pub rebuild_interval: Option<Duration>,
    pub planted: PlantedRelays,
    pub co_locate_m1_m0: bool,
}

impl WorldSetup {
    pub fn new(seed: u64, snapshot: RelaySnapshot) -> Self {
        WorldSetup {
            seed,
            snapshot,
            circuit_population: 3000,
            guard_pin_fraction: 0.1,
            persistent_clients_per_relay: 2,
            intensity_base: 1.0,
            diurnal: DiurnalProfile::default(),
            start_hour: 10.0,
            latency: LatencyModel::default(),
            rebuild_interval: None,
            planted: PlantedRelays::Sampled,
            co_locate_m1_m0: false,
        }
    }
}

/// A long-lived client session pinned to one relay as its guard. While its
/// tenure is armed it produces high-rate flows at that relay whose visible
/// destination is the client's own (non-relay) address, reproducing the
/// stable recurring flows that slow intersection down at busy relays.
#[derive(Clone, Debug)]
pub struct PersistentClientFlow {
    pub relay: RelayId,
    pub client_address: Address,
    pub tenure: Duration,
    active_until: Option<SimTime>,
}

/// The assembled simulation: network, background traffic, target service,
/// and the tap. One attack runs per world.
pub struct World {
    pub queue: EventQueue<SimEvent>,
    pub snapshot: RelaySnapshot,
    pub selector: PathSelector,
    pub population: CircuitPopulation,
    pub persistent_flows: Vec<PersistentClientFlow>,
    pub services: BTreeMap<OnionAddress, HiddenService>,
    pub registry: IntroRegistry,
    pub tap: Tap,
    pub ids: CircuitIdGen,
    pub rng: ChaCha12Rng,
    pub latency: LatencyModel,
    pub intensity_base: f64,
    pub diurnal: DiurnalProfile,
    pub start_hour: f64,
    pub rebuild_interval: Option<Duration>,
    next_rebuild: Option<SimTime>,
    pub rebuild_count: u64,
    pub target: OnionAddress,
    pub fault: Fault,
}

impl World {
    pub fn build(setup: WorldSetup) -> Result<World, AttackError> {
        if setup.snapshot.len() < 8 {
            return Err(AttackError::BadSetup(format!(
                "need at least 8 relays, snapshot has {}",
                setup.snapshot.len()
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(setup.seed);
        let base_selector = PathSelector::new(&setup.snapshot);

        let (entry_guard, vanguard, middle1, intro_point) = match &setup.planted {
            PlantedRelays::Pinned {
                entry_guard,
                vanguard,
                middle1,
                intro_point,
            } => (
                entry_guard.clone(),
                vanguard.clone(),
                middle1.clone(),
                intro_point.clone(),
            ),
            PlantedRelays::Sampled => {
                let eg = base_selector
                    .sample_relay(Role::Guard, &mut rng)
                    .cloned()
                    .ok_or_else(|| AttackError::BadSetup("no guard-eligible relay".into()))?;
                let mut picks: Vec<RelayId> = vec![eg.clone()];
                while picks.len() < 4 {
                    let candidate = base_selector
                        .sample_relay(Role::Middle, &mut rng)
                        .cloned()
                        .ok_or_else(|| AttackError::BadSetup("no middle-eligible relay".into()))?;
                    if !picks.contains(&candidate) {
                        picks.push(candidate);
                    }
                }
                (picks[0].clone(), picks[1].clone(), picks[2].clone(), picks[3].clone())
            }
        };
        for id in [&entry_guard, &vanguard, &middle1, &intro_point] {
            if setup.snapshot.get(id).is_none() {
                return Err(AttackError::BadSetup(format!("planted relay `{id}` not in snapshot")));
            }
        }

        // Co-location scenario: middle 1 shares the vanguard's host address.
        let snapshot = if setup.co_locate_m1_m0 {
            let shared = setup
                .snapshot
                .get(&vanguard)
                .expect("vanguard exists")
                .address
                .clone();
            let relays: Vec<Relay> = setup
                .snapshot
                .relays()
                .iter()
                .cloned()
                .map(|mut r| {
                    if r.id == middle1 {
                        r.address = shared.clone();
                    }
                    r
                })
                .collect();
            RelaySnapshot::new(relays)?
        } else {
            setup.snapshot
        };
        let selector = PathSelector::new(&snapshot);
        let mut ids = CircuitIdGen::new();

        // Plant the service's four-hop introduction circuit.
        let (lo, hi) = INTRO_LIFETIME_RANGE;
        let lifetime = Duration::from_nanos(rng.gen_range(lo.as_nanos() as u64..=hi.as_nanos() as u64));
        let intro_circuit = sample_circuit_pinned(
            &selector,
            &CircuitSpec::intro_service_side(lifetime),
            &[
                (0, entry_guard.clone()),
                (1, vanguard.clone()),
                (2, middle1.clone()),
                (3, intro_point.clone()),
            ],
            SimTime::ZERO,
            &mut ids,
            &mut rng,
        )?;
        let service = HiddenService {
            onion: OnionAddress::new("target.onion"),
            host_address: Address::new("hs-target-host"),
            intro_circuit,
        };
        let mut registry = IntroRegistry::new();
        establish_intro(&mut registry, &service, SimTime::ZERO)?;
        let target = service.onion.clone();
        let mut services = BTreeMap::new();
        services.insert(service.onion.clone(), service);

        let population = CircuitPopulation::new(
            setup.circuit_population,
            setup.guard_pin_fraction,
            &selector,
            &mut ids,
            &mut rng,
        )?;
        // Persistent client sessions pinned to each circuit relay as their
        // guard. Heavier relays attract more durable sessions, so tenure
        // grows with the relay's consensus-weight share.
        let total_weight: u64 = snapshot.relays().iter().map(|r| r.consensus_weight).sum();
        let mut persistent_flows = Vec::new();
        for planted in [&intro_point, &middle1, &vanguard, &entry_guard] {
            let share = if total_weight == 0 {
                0.0
            } else {
                snapshot.get(planted).expect("planted exists").consensus_weight as f64
                    / total_weight as f64
            };
            let tenure_trials = PERSISTENT_TENURE_BASE_TRIALS
                + PERSISTENT_TENURE_WEIGHT_TRIALS
                    * (share / PERSISTENT_TENURE_REFERENCE_SHARE).min(1.0);
            let jitter = rng.gen_range(0.97..1.03);
            let tenure = Duration::from_secs_f64(
                tenure_trials * jitter * NOMINAL_TRIAL_SPACING.as_secs_f64(),
            );
            for session in 0..setup.persistent_clients_per_relay {
                persistent_flows.push(PersistentClientFlow {
                    relay: planted.clone(),
                    client_address: Address::new(format!("client-{planted}-{session}")),
                    tenure,
                    active_until: None,
                });
            }
        }

        let next_rebuild = setup.rebuild_interval.map(|i| SimTime::ZERO + i);
        Ok(World {
            queue: EventQueue::new(),
            snapshot,
            selector,
            population,
            persistent_flows,
            services,
            registry,
            tap: Tap::new(PseudonymKey::from_run_seed(setup.seed)),
            ids,
            rng,
            latency: setup.latency,
            intensity_base: setup.intensity_base,
            diurnal: setup.diurnal,
            start_hour: setup.start_hour,
            rebuild_interval: setup.rebuild_interval,
            next_rebuild,
            rebuild_count: 0,
            target,
            fault: Fault::None,
        })
    }

    pub fn service(&self) -> &HiddenService {
        &self.services[&self.target]
    }

    /// Relay currently occupying a circuit position (the tap grant the
    /// simulator issues once a stage has identified it).
    pub fn monitored_relay(&self, position: StagePosition) -> RelayId {
        self.service().intro_circuit.hops[position.hop_index()].clone()
    }

    /// Validation channel: the true successor address for a stage, as of the
    /// service's current circuit.
    pub fn true_successor_address(&self, position: StagePosition) -> Address {
        let service = self.service();
        match position {
            StagePosition::EntryGuard => service.host_address.clone(),
            other => {
                let hop = &service.intro_circuit.hops[other.hop_index() - 1];
                self.snapshot
                    .get(hop)
                    .expect("circuit hops exist in the snapshot")
                    .address
                    .clone()
            }
        }
    }

    pub fn relay_weight(&self, id: &RelayId) -> u64 {
        self.snapshot.get(id).map(|r| r.consensus_weight).unwrap_or(0)
    }

    fn hour_at(&self, t: SimTime) -> f64 {
        (self.start_hour + t.as_secs_f64() / 3600.0).rem_euclid(24.0)
    }

    /// Advance world state to `now`: run any scheduled intro-circuit
    /// rebuilds and replace expired background circuits.
    pub fn advance_to(&mut self, now: SimTime) -> Result<(), AttackError> {
        self.maybe_rebuild(now)?;
        self.population
            .expire_and_replace(now, &self.selector, &mut self.ids, &mut self.rng)?;
        Ok(())
    }

    /// Restart every persistent client session's tenure clock at `now`.
    pub fn arm_persistent_flows(&mut self, now: SimTime) {
        for flow in &mut self.persistent_flows {
            flow.active_until = Some(now + flow.tenure);
        }
    }

    /// Schedule this window's background observations at the monitored
    /// relay: Poisson flows over the circuit population plus the armed
    /// persistent client sessions.
    pub fn schedule_window_background(
        &mut self,
        monitored: &RelayId,
        window: (SimTime, SimTime),
        now: SimTime,
    ) {
        let intensity = diurnal_intensity(self.intensity_base, self.hour_at(window.0), &self.diurnal);
        if intensity <= 0.0 {
            return;
        }
        let queue = &mut self.queue;
        emit_background_traffic(
            self.population.circuits(),
            &self.snapshot,
            intensity,
            window,
            |relay| relay == monitored,
            &mut self.rng,
            |obs| {
                queue
                    .schedule(obs.at, SimEvent::Background(obs))
                    .expect("window observations are in the future");
            },
        );
        let monitored_address = self
            .snapshot
            .get(monitored)
            .map(|r| r.address.clone())
            .expect("monitored relay exists in the snapshot");
        let span = (window.1 - window.0).as_secs_f64();
        let session_rate = intensity * PERSISTENT_CLIENT_RATE_MULTIPLIER;
        for flow in &self.persistent_flows {
            if flow.relay != *monitored {
                continue;
            }
            let armed = flow.active_until.map(|until| now < until).unwrap_or(false);
            if !armed {
                continue;
            }
            let mean = session_rate * span;
            let count = Poisson::new(mean)
                .map(|p| p.sample(&mut self.rng) as u64)
                .unwrap_or(0);
            for _ in 0..count {
                let offset = self.rng.gen_range(0.0..span);
                let at = window.0 + Duration::from_secs_f64(offset);
                let obs = FlowObservation {
                    at_relay: monitored.clone(),
                    src: monitored_address.clone(),
                    dst: flow.client_address.clone(),
                    at,
                };
                self.queue
                    .schedule(at, SimEvent::Background(obs))
                    .expect("window observations are in the future");
            }
        }
    }

    /// Rebuild the intro circuit's internal hops (M0, M1) on schedule,
    /// keeping the entry guard and the introduction point.
    fn maybe_rebuild(&mut self, now: SimTime) -> Result<(), AttackError> {
        let Some(interval) = self.rebuild_interval else {
            return Ok(());
        };
        while let Some(due) = self.next_rebuild {
            if due > now {
                break;
            }
            let service = self.services.get_mut(&self.target).expect("target exists");
            let old = &service.intro_circuit;
            let guard = old.hops[0].clone();
            let ip = old.hops[3].clone();
            let mut taken = vec![guard.clone(), ip.clone()];
            let fresh_middle = |taken: &mut Vec<RelayId>, rng: &mut ChaCha12Rng| loop {
                let candidate = self
                    .selector
                    .sample_relay(Role::Middle, rng)
                    .cloned()
                    .expect("middle pool is non-empty");
                if !taken.contains(&candidate) {
                    taken.push(candidate.clone());
                    break candidate;
                }
            };
            let new_vanguard = fresh_middle(&mut taken, &mut self.rng);
            let new_middle1 = fresh_middle(&mut taken, &mut self.rng);
            let rebuilt = crate::pathsel::Circuit {
                id: self.ids.next_id(),
                hops: vec![guard, new_vanguard, new_middle1, ip],
                spec: old.spec.clone(),
                created_at: due,
                expires_at: old.expires_at,
            };
            service.intro_circuit = rebuilt;
            establish_intro(&mut self.registry, service, now)?;
            self.rebuild_count += 1;
            self.next_rebuild = Some(due + interval);
        }
        Ok(())
    }
}

/// Outcome of one stage: the result row plus per-trial traces.
pub struct StageOutcome {
    pub result: StageResult,
    pub traces: Vec<TrialTrace>,
}

/// Run one stage: repeated probe trials against the monitored relay until
/// the intersection converges, empties, or the budget runs out. Failed
/// handshakes discard the trial's set without intersecting.
pub fn run_stage(
    world: &mut World,
    position: StagePosition,
    monitored: RelayId,
    excluded: &BTreeSet<Pseudonym>,
    config: &AttackConfig,
) -> Result<StageOutcome, AttackError> {
    config.validate()?;
    let stage = position.stage_index();
    let stage_start = world.queue.now();
    world.arm_persistent_flows(stage_start);
    let mut state = IntersectionState::new(stage, excluded.clone());
    let mut traces = Vec::new();
    let mut failed_attempts: u32 = 0;
    let attempt_cap = config.trial_budget.saturating_mul(2);

    for attempt in 0..attempt_cap {
        let now = if attempt == 0 {
            world.queue.now()
        } else {
            let next = world.queue.now() + config.inter_trial_delay;
            world.queue.advance_idle(next);
            next
        };
        if !world.service().intro_circuit.is_alive(now) {
            return Err(AttackError::CircuitLifetimeExceeded(now));
        }
        world.advance_to(now)?;

        let trial = state.trials_done + 1;
        let service = world.services.get(&world.target).expect("target exists");
        let plan = plan_handshake(
            &world.selector,
            &world.snapshot,
            &world.registry,
            service,
            &world.latency,
            world.fault,
            (stage, trial),
            now,
            &mut world.ids,
            &mut world.rng,
        )?;
        world
            .tap
            .start_window(monitored.clone(), stage, trial, plan.t_introduce1)?;
        world.schedule_window_background(&monitored, plan.window(), now);
        let transcript = execute_plan(&mut world.queue, Some(&mut world.tap), &plan)?;
        let set = world.tap.stop_window(world.queue.now())?;

        if !transcript.success || set.is_empty() {
            // Only successful INTRODUCE1..RENDEZVOUS2 pairs define windows.
            failed_attempts += 1;
            continue;
        }

        let successor = pseudonymize(
            &world.true_successor_address(position),
            world.tap.key(),
        );
        let successor_in_set = set.members.contains(&successor);
        state.intersect_step(&set)?;
        traces.push(TrialTrace {
            stage,
            trial: state.trials_done,
            anonymity_set_size: set.len(),
            intersection_size: state.current.len(),
            status: state.status,
            virtual_time_secs: world.queue.now().as_secs_f64(),
            successor_in_set,
            successor_in_intersection: state.current.contains(&successor),
        });
        if state.status != StageStatus::Running {
            break;
        }
        if state.trials_done >= config.trial_budget {
            state.status = StageStatus::BudgetExhausted;
            break;
        }
    }
    if state.status == StageStatus::Running {
        state.status = StageStatus::BudgetExhausted;
    }

    let identified = state.identified();
    let verified = identified.map(|p| {
        p == pseudonymize(&world.true_successor_address(position), world.tap.key())
    });
    let result = StageResult {
        stage,
        node: position.label(),
        monitored: monitored.clone(),
        monitored_weight: world.relay_weight(&monitored),
        trials_to_convergence: (state.status == StageStatus::Converged)
            .then_some(state.trials_done),
        trials_done: state.trials_done,
        failed_attempts,
        identified,
        status: state.status,
        verified,
        elapsed_virtual_secs: (world.queue.now() - stage_start).as_secs_f64(),
    };
    Ok(StageOutcome { result, traces })
}

/// Full-attack report: stages in execution order (IP toward EG).
#[derive(Debug, Serialize)]
pub struct AttackReport {
    pub stages: Vec<StageResult>,
    #[serde(skip)]
    pub traces: Vec<TrialTrace>,
    pub reconstructed: bool,
    pub virtual_duration_secs: f64,
    pub rebuilds: u64,
}

/// Run all four stages in order IP, M1, M0, EG. Each converged stage's
/// identified pseudonym joins the excluded set; the attack aborts on the
/// first stage that fails to converge.
pub fn run_full_attack(world: &mut World, config: &AttackConfig) -> Result<AttackReport, AttackError> {
    config.validate()?;
    let started = world.queue.now();
    let mut excluded: BTreeSet<Pseudonym> = BTreeSet::new();
    let mut stages = Vec::new();
    let mut traces = Vec::new();
    for (i, position) in StagePosition::attack_order()
        .into_iter()
        .take(config.stages as usize)
        .enumerate()
    {
        if i > 0 {
            let next = world.queue.now() + config.inter_trial_delay;
            world.queue.advance_idle(next);
        }
        let monitored = world.monitored_relay(position);
        let outcome = run_stage(world, position, monitored, &excluded, config)?;
        traces.extend(outcome.traces);
        let converged = outcome.result.status == StageStatus::Converged;
        if let Some(p) = outcome.result.identified {
            excluded.insert(p);
        }
        stages.push(outcome.result);
        if !converged {
            break;
        }
    }
    let reconstructed = stages.len() == config.stages as usize
        && stages
            .iter()
            .all(|s| s.status == StageStatus::Converged && s.verified == Some(true));
    Ok(AttackReport {
        stages,
        traces,
        reconstructed,
        virtual_duration_secs: (world.queue.now() - started).as_secs_f64(),
        rebuilds: world.rebuild_count,
    })
}

/// One seed's matched pair of runs.
#[derive(Debug, Serialize)]
pub struct MitigationPair {
    pub seed: u64,
    pub baseline: AttackReport,
    pub mitigated: AttackReport,
}

/// Matched-pair comparison of mitigated and unmitigated attacks.
#[derive(Debug, Serialize)]
pub struct MitigationComparison {
    pub rebuild_interval_secs: Option<f64>,
    pub pairs: Vec<MitigationPair>,
}

impl MitigationComparison {
    pub fn baseline_reconstruction_rate(&self) -> f64 {
        let hits = self.pairs.iter().filter(|p| p.baseline.reconstructed).count();
        hits as f64 / self.pairs.len().max(1) as f64
    }

    pub fn mitigated_reconstruction_rate(&self) -> f64 {
        let hits = self.pairs.iter().filter(|p| p.mitigated.reconstructed).count();
        hits as f64 / self.pairs.len().max(1) as f64
    }

    /// Converged stages beyond the entry-guard stage across all mitigated
    /// runs (stage index 2 and above).
    pub fn mitigated_convergences_beyond_stage_one(&self) -> usize {
        self.pairs
            .iter()
            .flat_map(|p| p.mitigated.stages.iter())
            .filter(|s| s.stage >= 2 && s.status == StageStatus::Converged)
            .count()
    }

    /// Internal-circuit builds per virtual hour across mitigated runs.
    pub fn rebuild_overhead_per_hour(&self) -> f64 {
        let rebuilds: u64 = self.pairs.iter().map(|p| p.mitigated.rebuilds).sum();
        let hours: f64 = self
            .pairs
            .iter()
            .map(|p| p.mitigated.virtual_duration_secs / 3600.0)
            .sum();
        if hours == 0.0 {
            0.0
        } else {
            rebuilds as f64 / hours
        }
    }
}

/// Run matched attack pairs (mitigated vs unmitigated) on identical seeds.
pub fn evaluate_mitigation<F>(
    build_world: F,
    rebuild_interval: Option<Duration>,
    config: &AttackConfig,
    seeds: &[u64],
) -> Result<MitigationComparison, AttackError>
where
    F: Fn(u64, Option<Duration>) -> Result<World, AttackError>,
{
    let mut pairs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut baseline_world = build_world(seed, None)?;
        let baseline = run_full_attack(&mut baseline_world, config)?;
        let mut mitigated_world = build_world(seed, rebuild_interval)?;
        let mitigated = run_full_attack(&mut mitigated_world, config)?;
        pairs.push(MitigationPair {
            seed,
            baseline,
            mitigated,
        });
    }
    Ok(MitigationComparison {
        rebuild_interval_secs: rebuild_interval.map(|d| d.as_secs_f64()),
        pairs,
    })
}
