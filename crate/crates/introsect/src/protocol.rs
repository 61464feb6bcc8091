//! Onion-service introduction and rendezvous state machines at cell
//! granularity, producing the INTRODUCE1 to RENDEZVOUS2 window the attacker
//! measures.
//!
//! Cryptographic payloads (cookies, handshake values) are opaque tokens
//! compared by equality; the attack consumes only timing and addresses.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::directory::{Address, RelayId, RelaySnapshot};
use crate::pathsel::{
    sample_circuit, sample_circuit_pinned, Circuit, CircuitId, CircuitIdGen, CircuitPurpose,
    CircuitSpec, PathError, PathSelector, STREAM_CIRCUIT_LIFETIME,
};
use crate::simcore::{EventQueue, FlowObservation, SimError};
use crate::observer::Tap;
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    EstablishIntro,
    IntroEstablished,
    EstablishRendezvous,
    RendezvousEstablished,
    Introduce1,
    Introduce2,
    IntroduceAck,
    Rendezvous1,
    Rendezvous2,
    Begin,
}

/// Opaque token standing in for cryptographic material (cookies, g^x, g^y).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token(String);

impl Token {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Token(format!("{:032x}", rng.gen::<u128>()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellPayload {
    pub rendezvous_point: Option<RelayId>,
    pub cookie: Option<Token>,
    pub handshake: Option<Token>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    pub circuit_id: CircuitId,
    pub payload: CellPayload,
}

/// Special-purpose identifier a client uses to reach a hidden service.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OnionAddress(String);

impl OnionAddress {
    pub fn new(s: impl Into<String>) -> Self {
        OnionAddress(s.into())
    }
}

impl fmt::Display for OnionAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A hidden service with its long-lived four-hop introduction circuit,
/// ordered [EG, M0, M1, IP] from the service outward.
#[derive(Clone, Debug)]
pub struct HiddenService {
    pub onion: OnionAddress,
    pub host_address: Address,
    pub intro_circuit: Circuit,
}

impl HiddenService {
    pub fn entry_guard(&self) -> &RelayId {
        &self.intro_circuit.hops[0]
    }

    pub fn vanguard(&self) -> &RelayId {
        &self.intro_circuit.hops[1]
    }

    pub fn middle1(&self) -> &RelayId {
        &self.intro_circuit.hops[2]
    }

    pub fn intro_point(&self) -> &RelayId {
        &self.intro_circuit.hops[3]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisteredIntro {
    pub relay: RelayId,
    pub circuit: CircuitId,
}

/// Descriptor distribution is modeled as a direct lookup: establishing an
/// intro point registers the service here, and clients resolve the onion
/// address against this registry.
#[derive(Debug, Default)]
pub struct IntroRegistry {
    by_onion: BTreeMap<OnionAddress, RegisteredIntro>,
}

impl IntroRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&self, onion: &OnionAddress) -> Option<&RegisteredIntro> {
        self.by_onion.get(onion)
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("circuit {0} is not a service-side introduction circuit")]
    NotIntroCircuit(CircuitId),
    #[error("introduction circuit {0} has expired")]
    CircuitExpired(CircuitId),
    #[error("service `{0}` has no registered introduction point")]
    NoIntroPoint(OnionAddress),
    #[error("unknown onion address `{0}`")]
    UnknownService(OnionAddress),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Register a service's introduction point over its intro circuit.
pub fn establish_intro(
    registry: &mut IntroRegistry,
    service: &HiddenService,
    now: SimTime,
) -> Result<Cell, ProtocolError> {
    let circuit = &service.intro_circuit;
    if circuit.spec.purpose != CircuitPurpose::IntroServiceSide {
        return Err(ProtocolError::NotIntroCircuit(circuit.id));
    }
    if !circuit.is_alive(now) {
        return Err(ProtocolError::CircuitExpired(circuit.id));
    }
    registry.by_onion.insert(
        service.onion.clone(),
        RegisteredIntro {
            relay: service.intro_point().clone(),
            circuit: circuit.id,
        },
    );
    Ok(Cell {
        kind: CellKind::IntroEstablished,
        circuit_id: circuit.id,
        payload: CellPayload::default(),
    })
}

/// Per-hop latency range and the end-to-end INTRODUCE1..RENDEZVOUS2 envelope.
/// Raw per-hop draws are rescaled so each handshake's total lands uniformly
/// inside the envelope.
#[derive(Clone, Copy, Debug)]
pub struct LatencyModel {
    pub per_hop: (Duration, Duration),
    pub dt_envelope: (Duration, Duration),
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            per_hop: (Duration::from_millis(20), Duration::from_millis(150)),
            dt_envelope: (Duration::from_millis(500), Duration::from_millis(1500)),
        }
    }
}

/// Deterministic fault injection for negative-path tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// The RENDEZVOUS1 cookie will not match what the rendezvous point holds.
    CookieMismatch,
}

/// Concrete event payload dispatched through the run's event queue.
#[derive(Clone, Debug)]
pub enum SimEvent {
    CellDelivery {
        cell: Cell,
        observation: Option<FlowObservation>,
    },
    Background(FlowObservation),
    CircuitExpiry(CircuitId),
    TrialStart { stage: u32, trial: u32 },
    TrialTimeout { stage: u32, trial: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HandshakeTranscript {
    pub t_introduce1: SimTime,
    pub t_rendezvous2: SimTime,
    pub intro_circuit_id: CircuitId,
    pub rendezvous_circuit_id: CircuitId,
    pub success: bool,
}

impl HandshakeTranscript {
    pub fn delta_t(&self) -> Duration {
        self.t_rendezvous2 - self.t_introduce1
    }
}

/// Fully planned handshake: every cell event with its dispatch time, plus the
/// window bounds the observer cares about.
pub struct HandshakePlan {
    pub events: Vec<(SimTime, SimEvent)>,
    pub t_introduce1: SimTime,
    pub t_rendezvous2: SimTime,
    pub intro_circuit_id: CircuitId,
    pub rendezvous_circuit_id: CircuitId,
    pub success: bool,
}

impl HandshakePlan {
    pub fn window(&self) -> (SimTime, SimTime) {
        (self.t_introduce1, self.t_rendezvous2)
    }

    pub fn transcript(&self) -> HandshakeTranscript {
        HandshakeTranscript {
            t_introduce1: self.t_introduce1,
            t_rendezvous2: self.t_rendezvous2,
            intro_circuit_id: self.intro_circuit_id,
            rendezvous_circuit_id: self.rendezvous_circuit_id,
            success: self.success,
        }
    }
}

/// The INTRODUCE2 forwarding pass: one observation per hop pair along
/// IP -> M1 -> M0 -> EG -> service, timestamped at the four forwarding
/// instants. Returns the observations that happen before circuit expiry and
/// whether the full pass completed.
pub struct ForwardOutcome {
    pub observations: Vec<FlowObservation>,
    pub completed: bool,
}

pub fn forward_introduce2(
    intro_circuit: &Circuit,
    hs_address: &Address,
    snapshot: &RelaySnapshot,
    times: &[SimTime; 4],
) -> Result<ForwardOutcome, ProtocolError> {
    if intro_circuit.spec.purpose != CircuitPurpose::IntroServiceSide {
        return Err(ProtocolError::NotIntroCircuit(intro_circuit.id));
    }
    if !intro_circuit.is_alive(times[0]) {
        return Err(ProtocolError::CircuitExpired(intro_circuit.id));
    }
    // Forwarding order is the reverse of the service-out hop order.
    let order = [3usize, 2, 1, 0];
    let mut observations = Vec::with_capacity(4);
    let mut completed = true;
    for (step, &pos) in order.iter().enumerate() {
        let at = times[step];
        if !intro_circuit.is_alive(at) {
            completed = false;
            break;
        }
        let relay = &intro_circuit.hops[pos];
        let relay_addr = snapshot
            .get(relay)
            .map(|r| r.address.clone())
            .expect("intro circuit hops exist in the snapshot");
        let src = if pos + 1 < intro_circuit.hops.len() {
            snapshot
                .get(&intro_circuit.hops[pos + 1])
                .map(|r| r.address.clone())
                .expect("intro circuit hops exist in the snapshot")
        } else {
            relay_addr.clone()
        };
        let dst = if pos == 0 {
            hs_address.clone()
        } else {
            snapshot
                .get(&intro_circuit.hops[pos - 1])
                .map(|r| r.address.clone())
                .expect("intro circuit hops exist in the snapshot")
        };
        if src == dst {
            // Degenerate co-located pair on the source side; the forwarded
            // flow is still visible downstream.
            continue;
        }
        observations.push(FlowObservation {
            at_relay: relay.clone(),
            src,
            dst,
            at,
        });
    }
    Ok(ForwardOutcome {
        observations,
        completed,
    })
}

/// Plan one full client connect: rendezvous establishment, INTRODUCE1 to the
/// intro point, INTRODUCE2 along the service's intro circuit, and the
/// RENDEZVOUS1/RENDEZVOUS2 completion, with every leg latency rescaled so the
/// INTRODUCE1..RENDEZVOUS2 interval lands uniformly in the configured
/// envelope.
#[allow(clippy::too_many_arguments)]
pub fn plan_handshake<R: Rng>(
    selector: &PathSelector,
    snapshot: &RelaySnapshot,
    registry: &IntroRegistry,
    service: &HiddenService,
    latency: &LatencyModel,
    fault: Fault,
    meta: (u32, u32),
    now: SimTime,
    ids: &mut CircuitIdGen,
    rng: &mut R,
) -> Result<HandshakePlan, ProtocolError> {
    let registered = registry
        .lookup(&service.onion)
        .ok_or_else(|| ProtocolError::NoIntroPoint(service.onion.clone()))?;
    let intro_relay = registered.relay.clone();

    // Client-side circuits for this trial; both are torn down afterwards.
    let rdv_spec = CircuitSpec::rendezvous(STREAM_CIRCUIT_LIFETIME);
    let client_rdv = sample_circuit(selector, &rdv_spec, now, ids, rng)?;
    let rendezvous_point = client_rdv.hops[2].clone();
    let client_intro = sample_circuit_pinned(
        selector,
        &CircuitSpec::general_stream(STREAM_CIRCUIT_LIFETIME),
        &[(2, intro_relay.clone())],
        now,
        ids,
        rng,
    )?;
    let service_rdv = sample_circuit_pinned(
        selector,
        &rdv_spec,
        &[(2, rendezvous_point.clone())],
        now,
        ids,
        rng,
    )?;

    let cookie = Token::random(rng);
    let gx = Token::random(rng);
    let gy = Token::random(rng);

    // Draw the end-to-end target, then rescale raw per-hop latencies onto it.
    // Legs: 3 client->IP, 4 along the intro circuit, 3 service->RP, 3 RP->client.
    let (env_lo, env_hi) = latency.dt_envelope;
    let target_ns = rng.gen_range(env_lo.as_nanos() as u64..=env_hi.as_nanos() as u64);
    let (hop_lo, hop_hi) = latency.per_hop;
    let raw: Vec<f64> = (0..13)
        .map(|_| rng.gen_range(hop_lo.as_secs_f64()..hop_hi.as_secs_f64()))
        .collect();
    let raw_total: f64 = raw.iter().sum();
    let mut legs_ns: Vec<u64> = raw
        .iter()
        .map(|u| ((u / raw_total) * target_ns as f64) as u64)
        .collect();
    let assigned: u64 = legs_ns.iter().take(12).sum();
    legs_ns[12] = target_ns - assigned;
    let mut cumulative = Vec::with_capacity(13);
    let mut acc = 0u64;
    for leg in &legs_ns {
        acc += leg;
        cumulative.push(acc);
    }
    let t_introduce1 = now;
    let at = |leg: usize| t_introduce1 + Duration::from_nanos(cumulative[leg]);

    let mut events: Vec<(SimTime, SimEvent)> = Vec::new();

    // Rendezvous establishment happens just before the measured interval.
    events.push((
        now,
        SimEvent::CellDelivery {
            cell: Cell {
                kind: CellKind::EstablishRendezvous,
                circuit_id: client_rdv.id,
                payload: CellPayload {
                    rendezvous_point: Some(rendezvous_point.clone()),
                    cookie: Some(cookie.clone()),
                    handshake: None,
                },
            },
            observation: None,
        },
    ));
    events.push((
        now,
        SimEvent::CellDelivery {
            cell: Cell {
                kind: CellKind::RendezvousEstablished,
                circuit_id: client_rdv.id,
                payload: CellPayload::default(),
            },
            observation: None,
        },
    ));
    events.push((
        t_introduce1,
        SimEvent::CellDelivery {
            cell: Cell {
                kind: CellKind::Introduce1,
                circuit_id: client_intro.id,
                payload: CellPayload {
                    rendezvous_point: Some(rendezvous_point.clone()),
                    cookie: Some(cookie.clone()),
                    handshake: Some(gx.clone()),
                },
            },
            observation: None,
        },
    ));

    // INTRODUCE2 forwarding along the intro circuit (legs 3..=6); each hop
    // pair yields the deterministic observation the attack relies on.
    let forward_times = [at(3), at(4), at(5), at(6)];
    let forward = forward_introduce2(
        &service.intro_circuit,
        &service.host_address,
        snapshot,
        &forward_times,
    )?;
    for obs in &forward.observations {
        events.push((
            obs.at,
            SimEvent::CellDelivery {
                cell: Cell {
                    kind: CellKind::Introduce2,
                    circuit_id: service.intro_circuit.id,
                    payload: CellPayload {
                        rendezvous_point: Some(rendezvous_point.clone()),
                        cookie: Some(cookie.clone()),
                        handshake: Some(gx.clone()),
                    },
                },
                observation: Some(obs.clone()),
            },
        ));
    }
    // The intro point acknowledges the client, which then tears down its
    // introduction-point circuit.
    events.push((
        at(3),
        SimEvent::CellDelivery {
            cell: Cell {
                kind: CellKind::IntroduceAck,
                circuit_id: client_intro.id,
                payload: CellPayload::default(),
            },
            observation: None,
        },
    ));

    let mut success = forward.completed;
    let cookie_at_rp = match fault {
        Fault::None => cookie.clone(),
        Fault::CookieMismatch => Token::random(rng),
    };

    let t_rendezvous2;
    if success {
        // Service completes the handshake toward the rendezvous point.
        events.push((
            at(9),
            SimEvent::CellDelivery {
                cell: Cell {
                    kind: CellKind::Rendezvous1,
                    circuit_id: service_rdv.id,
                    payload: CellPayload {
                        cookie: Some(cookie_at_rp.clone()),
                        handshake: Some(gy.clone()),
                        rendezvous_point: None,
                    },
                },
                observation: None,
            },
        ));
        if cookie_at_rp == cookie {
            // The rendezvous point verifies the cookie, removes it, and
            // forwards the remaining payload to the client.
            events.push((
                at(12),
                SimEvent::CellDelivery {
                    cell: Cell {
                        kind: CellKind::Rendezvous2,
                        circuit_id: client_rdv.id,
                        payload: CellPayload {
                            cookie: None,
                            handshake: Some(gy),
                            rendezvous_point: None,
                        },
                    },
                    observation: None,
                },
            ));
            t_rendezvous2 = at(12);
            // Application traffic starts on the rendezvous circuit.
            events.push((
                t_rendezvous2,
                SimEvent::CellDelivery {
                    cell: Cell {
                        kind: CellKind::Begin,
                        circuit_id: client_rdv.id,
                        payload: CellPayload::default(),
                    },
                    observation: None,
                },
            ));
        } else {
            success = false;
            t_rendezvous2 = fail_deadline(t_introduce1, latency);
            events.push((
                t_rendezvous2,
                SimEvent::TrialTimeout {
                    stage: meta.0,
                    trial: meta.1,
                },
            ));
        }
    } else {
        // The intro circuit died mid-forward; surface the expiry and let the
        // client time out waiting for RENDEZVOUS2.
        if service.intro_circuit.expires_at > now {
            events.push((
                service.intro_circuit.expires_at,
                SimEvent::CircuitExpiry(service.intro_circuit.id),
            ));
        }
        t_rendezvous2 = fail_deadline(t_introduce1, latency);
        events.push((
            t_rendezvous2,
            SimEvent::TrialTimeout {
                stage: meta.0,
                trial: meta.1,
            },
        ));
    }

    events.sort_by_key(|(at, _)| *at);
    Ok(HandshakePlan {
        events,
        t_introduce1,
        t_rendezvous2,
        intro_circuit_id: client_intro.id,
        rendezvous_circuit_id: client_rdv.id,
        success,
    })
}

fn fail_deadline(t_introduce1: SimTime, latency: &LatencyModel) -> SimTime {
    t_introduce1 + latency.dt_envelope.1 * 2
}

/// Run a planned handshake through the event queue, feeding every
/// observation-bearing event to the tap when one is attached.
pub fn execute_plan(
    queue: &mut EventQueue<SimEvent>,
    mut tap: Option<&mut Tap>,
    plan: &HandshakePlan,
) -> Result<HandshakeTranscript, ProtocolError> {
    for (at, event) in &plan.events {
        queue.schedule(*at, event.clone())?;
    }
    queue.run_until(plan.t_rendezvous2, |event| {
        let observation = match &event.payload {
            SimEvent::CellDelivery { observation, .. } => observation.as_ref(),
            SimEvent::Background(obs) => Some(obs),
            _ => None,
        };
        if let (Some(obs), Some(tap)) = (observation, tap.as_deref_mut()) {
            tap.deliver(obs);
        }
    });
    Ok(plan.transcript())
}

/// Execute one complete connect to `onion`: plan the handshake and drive it
/// through the event loop. Observations reach `tap` when provided.
#[allow(clippy::too_many_arguments)]
pub fn client_connect<R: Rng>(
    selector: &PathSelector,
    snapshot: &RelaySnapshot,
    registry: &IntroRegistry,
    services: &BTreeMap<OnionAddress, HiddenService>,
    onion: &OnionAddress,
    latency: &LatencyModel,
    fault: Fault,
    queue: &mut EventQueue<SimEvent>,
    tap: Option<&mut Tap>,
    ids: &mut CircuitIdGen,
    rng: &mut R,
) -> Result<HandshakeTranscript, ProtocolError> {
    let service = services
        .get(onion)
        .ok_or_else(|| ProtocolError::UnknownService(onion.clone()))?;
    let plan = plan_handshake(
        selector,
        snapshot,
        registry,
        service,
        latency,
        fault,
        (0, 0),
        queue.now(),
        ids,
        rng,
    )?;
    execute_plan(queue, tap, &plan)
}
