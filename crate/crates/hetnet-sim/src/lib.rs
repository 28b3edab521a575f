//! System-level simulator of a two-tier (macro + micro) cellular downlink with a
//! network-controlled device-to-device underlay.
//!
//! The simulation advances in fixed 1 ms time steps. Each step the active scheduler
//! chooses a set of `(transmitter, receiver, resource block)` grants, per-link rates
//! are derived from SINR under the interference created by the full grant set, and
//! content moves from sources (base stations, or user devices acting as relays)
//! toward the users that requested it. Two schedulers are provided:
//!
//! * [`adp`] — a rollout scheduler that sweeps a small grid of per-tier weight
//!   triplets, greedily maps each triplet to a concrete grant set, and picks the
//!   triplet minimizing immediate-plus-lookahead deadline cost.
//! * [`pf`] — a proportional-fair cellular baseline with cell-range expansion
//!   toward the micro tier and almost-blank subframes on the macro tier; it never
//!   uses device-to-device links.
//!
//! [`engine`] drives whole runs (workload arrival, deadline expiry, transfers,
//! mobility, metrics); [`scenario`] builds the geometry and link budgets;
//! [`radio`] holds the SINR/rate machinery; [`transfer`] tracks per-user download
//! state and turns per-link capacities into delivered bits.

pub mod adp;
pub mod config;
pub mod engine;
pub mod pf;
pub mod radio;
pub mod scenario;
pub mod transfer;
pub mod units;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random-number streams derived from the one scenario seed, so
/// that e.g. changing the workload draw does not perturb node placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    /// Node placement and user drops.
    Scenario,
    /// Request arrivals (content choice and want times).
    Workload,
    /// User random walks.
    Mobility,
}

/// Deterministic generator for one `(seed, stream)` pair.
pub fn seeded_rng(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let salt: u64 = match stream {
        RngStream::Scenario => 0,
        RngStream::Workload => 0x9e37_79b9_7f4a_7c15,
        RngStream::Mobility => 0x6d6f_6269_6c69_7479,
    };
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}
