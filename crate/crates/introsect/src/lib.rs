//! Desk-scale simulator of the Tor onion-service introduction protocol, an
//! intersection-attack engine against introduction circuits, and
//! consensus analytics for jurisdictional relay concentration.
//!
//! Everything is deterministic: a configuration plus a 64-bit seed fully
//! determines every sampled circuit, every cell timestamp, and every byte of
//! report output.
//!
//! The crate is organized around the simulation pipeline:
//!
//! - [`directory`]: consensus snapshots, Onionoo-style relay ingestion,
//!   selection distributions.
//! - [`pathsel`]: weighted path selection, circuit lifetimes, the four-hop
//!   Vanguard-Lite introduction circuit.
//! - [`simcore`]: virtual clock, event queue, Poisson background traffic.
//! - [`protocol`]: introduction/rendezvous state machines at cell
//!   granularity.
//! - [`observer`]: the monitored-relay tap for windowed capture,
//!   pseudonymization, and anonymity sets.
//! - [`attack`]: the intersection engine and hop-by-hop stage controller,
//!   plus the circuit-rebuild mitigation evaluation.
//! - [`concentration`]: jurisdictional selection-probability mass and
//!   all-hops exposure estimates.
//! - [`harness`]: experiment configuration, batch runs, report emission,
//!   and the command-line interface.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod attack;
pub mod concentration;
pub mod directory;
pub mod harness;
pub mod observer;
pub mod pathsel;
pub mod protocol;
pub mod simcore;
pub mod time;
