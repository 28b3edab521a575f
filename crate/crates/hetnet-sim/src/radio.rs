//! Link-level machinery: scheduling grants, interference, SINR, and the
//! SINR-to-bits rate table.
//!
//! All receivers are user devices; transmitters are base stations or user
//! devices relaying content. A step's full grant set is an [`Action`]; the
//! per-grant capacities under the interference that the action creates for
//! itself are computed by [`compute_delta`].

use std::collections::BTreeMap;

use thiserror::Error;

use crate::scenario::LinkBudget;
use crate::units::linear_to_db;

/// Index into the scenario endpoint list.
pub type EndpointId = usize;

/// One scheduling grant: `tx` sends to `rx` on resource block `rb` this step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transmission {
    pub tx: EndpointId,
    pub rx: EndpointId,
    pub rb: usize,
}

/// Violations of the structural rules a grant set must satisfy.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ActionError {
    #[error("endpoint {0} appears as both transmitter and receiver")]
    HalfDuplex(EndpointId),
    #[error("receiver {0} is served by more than one transmitter")]
    MultipleSources(EndpointId),
    #[error("transmitter {tx} uses resource block {rb} twice")]
    DuplicateRb { tx: EndpointId, rb: usize },
    #[error("transmitter {0} serves more than one receiver")]
    MultipleReceivers(EndpointId),
}

/// The full set of grants for one step, in the order they were accepted.
///
/// Structural rules (checked by [`Action::validate`]):
/// * every receiver is served by exactly one transmitter across the step,
/// * no endpoint is both a transmitter and a receiver (half duplex),
/// * a transmitter uses each resource block at most once,
/// * with `strict_transmitter`, a transmitter serves a single receiver
///   across all its resource blocks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Action {
    triplets: Vec<Transmission>,
}

impl Action {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triplets(triplets: Vec<Transmission>) -> Self {
        Self { triplets }
    }

    pub fn push(&mut self, t: Transmission) {
        self.triplets.push(t);
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transmission> {
        self.triplets.iter()
    }

    pub fn triplets(&self) -> &[Transmission] {
        &self.triplets
    }

    /// Checks the structural rules, returning the first violation found.
    pub fn validate(&self, strict_transmitter: bool) -> Result<(), ActionError> {
        let mut rx_source: BTreeMap<EndpointId, EndpointId> = BTreeMap::new();
        let mut tx_rbs: BTreeMap<(EndpointId, usize), ()> = BTreeMap::new();
        let mut tx_rx: BTreeMap<EndpointId, EndpointId> = BTreeMap::new();
        for t in &self.triplets {
            if t.tx == t.rx {
                return Err(ActionError::HalfDuplex(t.tx));
            }
            match rx_source.get(&t.rx) {
                Some(&src) if src != t.tx => return Err(ActionError::MultipleSources(t.rx)),
                _ => {
                    rx_source.insert(t.rx, t.tx);
                }
            }
            if tx_rbs.insert((t.tx, t.rb), ()).is_some() {
                return Err(ActionError::DuplicateRb { tx: t.tx, rb: t.rb });
            }
            if strict_transmitter {
                match tx_rx.get(&t.tx) {
                    Some(&rx) if rx != t.rx => {
                        return Err(ActionError::MultipleReceivers(t.tx));
                    }
                    _ => {
                        tx_rx.insert(t.tx, t.rx);
                    }
                }
            }
        }
        for t in &self.triplets {
            if rx_source.contains_key(&t.tx) {
                return Err(ActionError::HalfDuplex(t.tx));
            }
        }
        Ok(())
    }
}

/// Errors from SINR and capacity evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("no propagation path modeled from {tx} to {rx}")]
    NoPath { tx: EndpointId, rx: EndpointId },
    #[error("receiver {0} is not a user device")]
    ReceiverNotUser(EndpointId),
    #[error("rate table: {0}")]
    Table(String),
}

// Built-in 15-level staircase: SINR switching thresholds (dB) and bits per
// resource block per step, scaled so the top level carries 712 bits.
const DEFAULT_RATE_ROWS: [(f64, u64); 15] = [
    (-6.5, 20),
    (-4.5, 30),
    (-2.5, 48),
    (-0.5, 77),
    (1.5, 112),
    (3.5, 151),
    (5.5, 189),
    (7.5, 245),
    (9.5, 308),
    (11.5, 350),
    (13.5, 426),
    (15.5, 500),
    (17.0, 580),
    (18.5, 656),
    (20.0, 712),
];

/// Monotone SINR-to-bits staircase.
///
/// A row `(threshold_db, bits)` applies to any SINR at or above its threshold
/// (closed lower bound); below the first row the rate is zero. Results are
/// additionally capped at `max_bits_per_rb`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    rows: Vec<(f64, u64)>,
    max_bits_per_rb: u64,
}

impl RateTable {
    /// Builds a table, enforcing strictly increasing thresholds and
    /// non-decreasing bits.
    pub fn new(rows: Vec<(f64, u64)>, max_bits_per_rb: u64) -> Result<Self, RadioError> {
        if rows.is_empty() {
            return Err(RadioError::Table("no rows".into()));
        }
        if max_bits_per_rb == 0 {
            return Err(RadioError::Table("max_bits_per_rb must be >= 1".into()));
        }
        for w in rows.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(RadioError::Table(format!(
                    "thresholds must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(RadioError::Table(format!(
                    "bits must be non-decreasing ({} then {})",
                    w[0].1, w[1].1
                )));
            }
        }
        if !rows[0].0.is_finite() {
            return Err(RadioError::Table("thresholds must be finite".into()));
        }
        Ok(Self { rows, max_bits_per_rb })
    }

    /// The built-in staircase with an optional cap override.
    pub fn default_table(max_bits_per_rb: u64) -> Self {
        Self::new(DEFAULT_RATE_ROWS.to_vec(), max_bits_per_rb).expect("built-in table is valid")
    }

    /// Parses a two-column text table: `threshold_db bits` per line, `#`
    /// comments and blank lines ignored.
    pub fn from_text(text: &str, max_bits_per_rb: u64) -> Result<Self, RadioError> {
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            let (Some(thr), Some(bits), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(RadioError::Table(format!(
                    "line {}: expected `threshold_db bits`",
                    idx + 1
                )));
            };
            let thr: f64 = thr
                .parse()
                .map_err(|e| RadioError::Table(format!("line {}: {e}", idx + 1)))?;
            let bits: u64 = bits
                .parse()
                .map_err(|e| RadioError::Table(format!("line {}: {e}", idx + 1)))?;
            rows.push((thr, bits));
        }
        Self::new(rows, max_bits_per_rb)
    }

    pub fn max_bits_per_rb(&self) -> u64 {
        self.max_bits_per_rb
    }

    pub fn rows(&self) -> &[(f64, u64)] {
        &self.rows
    }

    /// Bits per RB per step for a linear SINR.
    pub fn bits_for_sinr(&self, sinr_linear: f64) -> u64 {
        let sinr_db = linear_to_db(sinr_linear);
        let mut bits = 0;
        for &(thr, b) in &self.rows {
            if sinr_db >= thr {
                bits = b;
            } else {
                break;
            }
        }
        bits.min(self.max_bits_per_rb)
    }
}

/// Per-grant capacities for one action, aligned with the action's grant order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeltaMap {
    entries: Vec<(Transmission, u64)>,
}

impl DeltaMap {
    /// Builds a capacity map directly from `(grant, bits)` pairs, preserving
    /// their order (tests and synthetic setups).
    pub fn from_entries(entries: Vec<(Transmission, u64)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(Transmission, u64)] {
        &self.entries
    }

    /// Capacity of one grant; zero if the grant is not in the map.
    pub fn get(&self, t: &Transmission) -> u64 {
        self.entries.iter().find(|(e, _)| e == t).map(|&(_, d)| d).unwrap_or(0)
    }

    /// Sums capacities per `(tx, rx)` pair across resource blocks.
    pub fn pair_sums(&self) -> BTreeMap<(EndpointId, EndpointId), u64> {
        let mut sums = BTreeMap::new();
        for &(t, d) in &self.entries {
            *sums.entry((t.tx, t.rx)).or_insert(0) += d;
        }
        sums
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, d)| d).sum()
    }
}

/// Interference power (watts) at `victim` on `rb`: the sum over all grants on
/// that resource block, excluding grants in which the victim itself takes
/// part, of transmit power divided by the attenuation toward the victim.
/// Unmodeled (infinitely attenuated) paths contribute nothing.
pub fn interference(action: &Action, lb: &LinkBudget, rb: usize, victim: EndpointId) -> f64 {
    let mut sum = 0.0;
    for t in action.iter() {
        if t.rb != rb || t.tx == victim || t.rx == victim {
            continue;
        }
        let a = lb.attenuation(t.tx, victim);
        if a.is_finite() {
            sum += lb.power(t.tx, t.rx) / a;
        }
    }
    sum
}

/// Signal-to-interference-plus-noise ratio (linear) of the `tx → rx` link:
/// `P(tx, rx) / (A(tx, rx) * (noise_w + interference_w))`.
pub fn sinr(
    lb: &LinkBudget,
    tx: EndpointId,
    rx: EndpointId,
    noise_w: f64,
    interference_w: f64,
) -> Result<f64, RadioError> {
    let a = lb.attenuation(tx, rx);
    if !a.is_finite() || !(a > 0.0) {
        return Err(RadioError::NoPath { tx, rx });
    }
    Ok(lb.power(tx, rx) / (a * (noise_w + interference_w)))
}

/// Per-grant capacities of a whole action under its own interference.
///
/// Two phases, mirroring how each receiver experiences the step: first every
/// grant deposits interference at every user device other than its own two
/// endpoints; then each grant's SINR and rate are read off. Grants whose link
/// is not covered carry zero bits (their transmit power still interferes).
pub fn compute_delta(
    action: &Action,
    lb: &LinkBudget,
    noise_w: f64,
    table: &RateTable,
) -> Result<DeltaMap, RadioError> {
    // Phase 1: accumulate interference per (rb, user device), in grant order.
    let n_users = lb.n_users();
    let mut interf: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for t in action.iter() {
        if !lb.is_user(t.rx) {
            return Err(RadioError::ReceiverNotUser(t.rx));
        }
        let row = interf.entry(t.rb).or_insert_with(|| vec![0.0; n_users]);
        let p = lb.power(t.tx, t.rx);
        for u in 0..n_users {
            let victim = lb.user_endpoint(u);
            if victim == t.tx || victim == t.rx {
                continue;
            }
            let a = lb.attenuation(t.tx, victim);
            if a.is_finite() {
                row[u] += p / a;
            }
        }
    }
    // Phase 2: per-grant SINR and rate.
    let mut entries = Vec::with_capacity(action.len());
    for t in action.iter() {
        let bits = if lb.covered(t.tx, t.rx) {
            let i = interf[&t.rb][lb.user_index(t.rx)];
            let s = sinr(lb, t.tx, t.rx, noise_w, i)?;
            table.bits_for_sinr(s)
        } else {
            0
        };
        entries.push((*t, bits));
    }
    Ok(DeltaMap { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::LinkBudget;

    /// Two base stations (0, 1) and three users (2, 3, 4) with hand-picked
    /// powers and attenuations.
    fn toy_budget() -> LinkBudget {
        let n = 5;
        let ue_start = 2;
        let mut atten = vec![f64::INFINITY; n * 3];
        let mut covered = vec![false; n * 3];
        let idx = |tx: usize, u: usize| tx * 3 + u;
        // BS 0 reaches all users at attenuation 4; BS 1 at 10/20 split.
        for (u, a) in [(0, 4.0), (1, 4.0), (2, 4.0)] {
            atten[idx(0, u)] = a;
            covered[idx(0, u)] = true;
        }
        atten[idx(1, 0)] = 10.0;
        covered[idx(1, 0)] = true;
        atten[idx(1, 1)] = 20.0;
        covered[idx(1, 1)] = true;
        // Users reach each other at attenuation 50 (covered), except 2 -> 4.
        for (u_tx, u_rx, a) in [(2, 1, 50.0), (3, 0, 50.0), (3, 2, 50.0), (4, 0, 50.0)] {
            atten[idx(ue_start + u_tx - 2, u_rx)] = a;
            covered[idx(ue_start + u_tx - 2, u_rx)] = true;
        }
        LinkBudget::from_parts(vec![2.0, 1.0, 0.5, 0.5, 0.5], atten, covered, ue_start)
    }

    #[test]
    fn action_validate_accepts_legal_and_rejects_illegal_sets() {
        let mut a = Action::new();
        a.push(Transmission { tx: 0, rx: 2, rb: 0 });
        a.push(Transmission { tx: 0, rx: 2, rb: 1 });
        a.push(Transmission { tx: 1, rx: 3, rb: 0 });
        a.validate(true).unwrap();

        // Same (tx, rb) twice.
        let mut b = a.clone();
        b.push(Transmission { tx: 0, rx: 2, rb: 1 });
        assert_eq!(b.validate(true), Err(ActionError::DuplicateRb { tx: 0, rb: 1 }));

        // Receiver with two sources.
        let mut b = a.clone();
        b.push(Transmission { tx: 1, rx: 2, rb: 1 });
        assert_eq!(b.validate(true), Err(ActionError::MultipleSources(2)));

        // Transmitter also receiving.
        let mut b = a.clone();
        b.push(Transmission { tx: 3, rx: 4, rb: 2 });
        assert_eq!(b.validate(true), Err(ActionError::HalfDuplex(3)));

        // One transmitter, two receivers: only the strict rule complains.
        let mut b = a.clone();
        b.push(Transmission { tx: 0, rx: 4, rb: 2 });
        assert_eq!(b.validate(true), Err(ActionError::MultipleReceivers(0)));
        b.validate(false).unwrap();

        // Self-link.
        let mut b = Action::new();
        b.push(Transmission { tx: 2, rx: 2, rb: 0 });
        assert_eq!(b.validate(false), Err(ActionError::HalfDuplex(2)));
    }

    #[test]
    fn interference_sums_co_channel_grants_only() {
        let lb = toy_budget();
        let mut a = Action::new();
        a.push(Transmission { tx: 0, rx: 2, rb: 0 });
        // Single interferer at victim 3 (user index 1): P = 2 W, A = 4.
        assert_eq!(interference(&a, &lb, 0, 3), 0.5);
        // Other resource block: nothing.
        assert_eq!(interference(&a, &lb, 1, 3), 0.0);
        // The grant's own endpoints see no interference from it.
        assert_eq!(interference(&a, &lb, 0, 2), 0.0);
        // Second co-channel grant adds 1 W / 20.
        a.push(Transmission { tx: 1, rx: 4, rb: 0 });
        assert_eq!(interference(&a, &lb, 0, 3), 0.5 + 0.05);
    }

    #[test]
    fn sinr_matches_hand_arithmetic_and_flags_missing_paths() {
        let lb = toy_budget();
        // P = 2, A = 4, noise + interference = 0.5 -> SINR = 1.
        assert_eq!(sinr(&lb, 0, 2, 0.25, 0.25).unwrap(), 1.0);
        assert_eq!(
            sinr(&lb, 2, 4, 0.1, 0.0),
            Err(RadioError::NoPath { tx: 2, rx: 4 })
        );
    }

    #[test]
    fn rate_lookup_is_a_closed_lower_bound_with_cap() {
        let t = RateTable::default_table(712);
        // Below the first threshold.
        assert_eq!(t.bits_for_sinr(crate::units::db_to_linear(-7.0)), 0);
        assert_eq!(t.bits_for_sinr(0.0), 0);
        // Exactly on a threshold row.
        assert_eq!(t.bits_for_sinr(crate::units::db_to_linear(-6.5)), 20);
        assert_eq!(t.bits_for_sinr(crate::units::db_to_linear(9.5)), 308);
        // Between rows: the lower row applies.
        assert_eq!(t.bits_for_sinr(crate::units::db_to_linear(10.7)), 308);
        // Far above the top row.
        assert_eq!(t.bits_for_sinr(crate::units::db_to_linear(45.0)), 712);
        assert_eq!(t.bits_for_sinr(f64::INFINITY), 712);
        // Cap below the top row bits.
        let capped = RateTable::default_table(300);
        assert_eq!(capped.bits_for_sinr(crate::units::db_to_linear(45.0)), 300);
        assert_eq!(capped.bits_for_sinr(crate::units::db_to_linear(-6.5)), 20);
    }

    #[test]
    fn rate_table_rejects_malformed_rows() {
        assert!(RateTable::new(vec![], 712).is_err());
        assert!(RateTable::new(vec![(0.0, 10), (0.0, 20)], 712).is_err());
        assert!(RateTable::new(vec![(0.0, 20), (1.0, 10)], 712).is_err());
        assert!(RateTable::new(vec![(0.0, 20)], 0).is_err());
    }

    #[test]
    fn rate_table_parses_two_column_text() {
        let text = "# threshold_db bits\n-6.5 20\n\n0.0 100\n10.0 500\n";
        let t = RateTable::from_text(text, 500).unwrap();
        assert_eq!(t.rows().len(), 3);
        assert_eq!(t.bits_for_sinr(crate::units::db_to_linear(5.0)), 100);
        assert!(RateTable::from_text("1.0\n", 10).is_err());
        assert!(RateTable::from_text("1.0 x\n", 10).is_err());
        assert!(RateTable::from_text("1.0 5 9\n", 10).is_err());
    }

    #[test]
    fn compute_delta_matches_straight_line_two_link_case() {
        let lb = toy_budget();
        let table = RateTable::new(vec![(-10.0, 10), (0.0, 100), (10.0, 1000)], 1000).unwrap();
        let noise = 0.01;
        let mut a = Action::new();
        a.push(Transmission { tx: 0, rx: 2, rb: 0 });
        a.push(Transmission { tx: 1, rx: 3, rb: 0 });
        let delta = compute_delta(&a, &lb, noise, &table).unwrap();

        // Straight-line: link 0 sees BS 1's power through attenuation 10.
        let i0 = 1.0 / 10.0;
        let s0 = 2.0 / (4.0 * (noise + i0));
        // Link 1 sees BS 0's power through attenuation 4 and its own signal
        // through attenuation 20.
        let i1 = 2.0 / 4.0;
        let s1 = 1.0 / (20.0 * (noise + i1));
        assert_eq!(delta.entries()[0].1, table.bits_for_sinr(s0));
        assert_eq!(delta.entries()[1].1, table.bits_for_sinr(s1));
        assert!(delta.entries()[0].1 > 0);

        // Different resource blocks: no mutual interference, higher rates.
        let mut b = Action::new();
        b.push(Transmission { tx: 0, rx: 2, rb: 0 });
        b.push(Transmission { tx: 1, rx: 3, rb: 1 });
        let delta_b = compute_delta(&b, &lb, noise, &table).unwrap();
        assert!(delta_b.entries()[0].1 >= delta.entries()[0].1);
        assert!(delta_b.entries()[1].1 >= delta.entries()[1].1);
    }

    #[test]
    fn compute_delta_zeroes_uncovered_links_but_keeps_their_interference() {
        let mut lb = toy_budget();
        lb.set_covered(0, 2, false);
        let table = RateTable::new(vec![(-30.0, 10)], 10).unwrap();
        let mut a = Action::new();
        a.push(Transmission { tx: 0, rx: 2, rb: 0 });
        a.push(Transmission { tx: 1, rx: 3, rb: 0 });
        let delta = compute_delta(&a, &lb, 0.01, &table).unwrap();
        // Uncovered link carries nothing…
        assert_eq!(delta.entries()[0].1, 0);
        // …but its transmitter still degrades the covered link.
        let isolated = {
            let mut only = Action::new();
            only.push(Transmission { tx: 1, rx: 3, rb: 0 });
            compute_delta(&only, &lb, 0.01, &table).unwrap().entries()[0].1
        };
        assert!(isolated >= delta.entries()[1].1);
    }

    #[test]
    fn delta_map_pair_sums_group_resource_blocks() {
        let lb = toy_budget();
        let table = RateTable::default_table(712);
        let mut a = Action::new();
        a.push(Transmission { tx: 0, rx: 2, rb: 0 });
        a.push(Transmission { tx: 0, rx: 2, rb: 1 });
        let delta = compute_delta(&a, &lb, 1e-12, &table).unwrap();
        let sums = delta.pair_sums();
        assert_eq!(sums[&(0, 2)], delta.total());
        assert_eq!(delta.get(&Transmission { tx: 0, rx: 2, rb: 0 }), delta.entries()[0].1);
        assert_eq!(delta.get(&Transmission { tx: 0, rx: 2, rb: 7 }), 0);
    }
}
