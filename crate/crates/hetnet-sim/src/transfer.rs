//! Download state and content transfer.
//!
//! Every user holds a list of *download requests*: `(content, want step,
//! received bits)`. A request is **active** at step `k` when its want step has
//! arrived (`want <= k`) and it is neither complete nor past its deadline.
//! Base stations hold the full catalog; user devices can relay the prefix of
//! any content they have received themselves (completed downloads persist as
//! a device-side cache).
//!
//! [`compute_chi`] turns a set of per-grant link capacities into delivered
//! bits: each grant fills its receiver's active requests in ascending
//! `(want, content)` order, never exceeding the grant capacity, the remaining
//! size, or the transmitter's own holdings. All bit arithmetic is exact
//! (`u64`), and a working copy of the fill state guarantees that several
//! grants to the same receiver in one step cannot deliver the same bits
//! twice.

use crate::config::WorkloadConfig;
use crate::radio::{DeltaMap, EndpointId, Transmission};

/// Content category, used for workload mixing and per-category metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContentCategory {
    Ebook,
    Video,
    Viral,
}

impl ContentCategory {
    pub const ALL: [ContentCategory; 3] =
        [ContentCategory::Ebook, ContentCategory::Video, ContentCategory::Viral];

    pub fn label(&self) -> &'static str {
        match self {
            ContentCategory::Ebook => "ebook",
            ContentCategory::Video => "video",
            ContentCategory::Viral => "viral",
        }
    }
}

/// One catalog entry. Its id is its index in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentItem {
    pub category: ContentCategory,
    /// Full size `l`, bits.
    pub size_bits: u64,
    /// Steps from the want step to the deadline (`D`).
    pub deadline_steps: u64,
}

/// Builds the catalog in category order: ebooks, then videos, then virals.
pub fn build_catalog(w: &WorkloadConfig) -> Vec<ContentItem> {
    let mut catalog = Vec::new();
    for (cat, c) in [
        (ContentCategory::Ebook, &w.ebook),
        (ContentCategory::Video, &w.video),
        (ContentCategory::Viral, &w.viral),
    ] {
        for _ in 0..c.n_items {
            catalog.push(ContentItem {
                category: cat,
                size_bits: c.size_bits,
                deadline_steps: c.deadline_steps,
            });
        }
    }
    catalog
}

/// One outstanding download request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Duplet {
    /// Catalog index of the wanted content.
    pub content: usize,
    /// Step at which the request becomes active (`w`).
    pub want: u64,
    /// Bits received so far (`h`), a prefix of the content.
    pub received: u64,
}

/// A download that finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub user: usize,
    pub content: usize,
    pub want: u64,
    /// Steps from want to completion, inclusive of the completing step.
    pub elapsed: u64,
}

/// A download whose deadline passed before it finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Failure {
    pub user: usize,
    pub content: usize,
    pub want: u64,
    pub received: u64,
}

/// Per-user download ledgers plus the device-side content caches.
#[derive(Debug, Clone)]
pub struct SystemState {
    catalog: Vec<ContentItem>,
    /// Per user, sorted ascending by `(want, content)`.
    requests: Vec<Vec<Duplet>>,
    /// `cached[user][content]`: the user completed this content earlier and
    /// can serve it over device-to-device links.
    cached: Vec<Vec<bool>>,
}

impl SystemState {
    pub fn new(n_users: usize, catalog: Vec<ContentItem>) -> Self {
        let n_items = catalog.len();
        Self {
            catalog,
            requests: vec![Vec::new(); n_users],
            cached: vec![vec![false; n_items]; n_users],
        }
    }

    pub fn n_users(&self) -> usize {
        self.requests.len()
    }

    pub fn catalog(&self) -> &[ContentItem] {
        &self.catalog
    }

    pub fn item(&self, content: usize) -> &ContentItem {
        &self.catalog[content]
    }

    /// Queues a request; duplicates of an identical `(content, want)` pair for
    /// the same user are merged. Insertion keeps `(want, content)` order.
    pub fn insert_request(&mut self, user: usize, content: usize, want: u64) {
        debug_assert!(content < self.catalog.len());
        let list = &mut self.requests[user];
        let key = (want, content);
        match list.binary_search_by_key(&key, |d| (d.want, d.content)) {
            Ok(_) => {} // identical request already queued
            Err(pos) => list.insert(pos, Duplet { content, want, received: 0 }),
        }
    }

    /// All requests of a user (any want step), `(want, content)` order.
    pub fn requests_of(&self, user: usize) -> &[Duplet] {
        &self.requests[user]
    }

    /// Active requests of a user at step `k`, `(want, content)` order.
    pub fn active_of(&self, user: usize, k: u64) -> impl Iterator<Item = &Duplet> {
        self.requests[user].iter().filter(move |d| d.want <= k)
    }

    /// Total number of queued requests (active or future).
    pub fn n_requests(&self) -> usize {
        self.requests.iter().map(Vec::len).sum()
    }

    pub fn has_cached(&self, user: usize, content: usize) -> bool {
        self.cached[user][content]
    }

    /// Bits of `content` the user currently holds: the full size once cached,
    /// otherwise the longest received prefix among its own requests.
    pub fn holdings(&self, user: usize, content: usize) -> u64 {
        if self.cached[user][content] {
            return self.catalog[content].size_bits;
        }
        self.requests[user]
            .iter()
            .filter(|d| d.content == content)
            .map(|d| d.received)
            .max()
            .unwrap_or(0)
    }

    /// Bits a source could deliver to `rx_user` for `content` at step `k`:
    /// the receiver's remaining need, additionally clipped to the
    /// transmitter's own prefix for device relays. Zero when the receiver has
    /// no active request for the content.
    pub fn avail_bits(&self, source: Source, rx_user: usize, content: usize, k: u64) -> u64 {
        let Some(d) = self
            .requests[rx_user]
            .iter()
            .find(|d| d.content == content && d.want <= k && d.received < self.catalog[content].size_bits)
        else {
            return 0;
        };
        let need = self.catalog[content].size_bits - d.received;
        match source {
            Source::FullLibrary => need,
            Source::User(u) => {
                if u == rx_user {
                    0
                } else {
                    self.holdings(u, content).saturating_sub(d.received)
                }
            }
        }
    }

    /// Bits one request could absorb from a source right now: the remaining
    /// need, clipped to the source's own prefix for device relays.
    pub fn supply_for(&self, source: Source, rx_user: usize, d: &Duplet) -> u64 {
        let need = self.catalog[d.content].size_bits - d.received;
        match source {
            Source::FullLibrary => need,
            Source::User(u) if u == rx_user => 0,
            Source::User(u) => self.holdings(u, d.content).saturating_sub(d.received),
        }
    }

    /// Total bits the source could deliver to `rx_user` at step `k`, summed
    /// over its active unfinished requests. Together with the fill rule this
    /// satisfies: bits a grant set delivers to the pair =
    /// `min(total_avail, total capacity)`.
    pub fn total_avail_bits(&self, source: Source, rx_user: usize, k: u64) -> u64 {
        self.requests[rx_user]
            .iter()
            .filter(|d| d.want <= k && d.received < self.catalog[d.content].size_bits)
            .map(|d| self.supply_for(source, rx_user, d))
            .sum()
    }

    /// Removes requests whose deadline has arrived (`k >= want + deadline`)
    /// without completion. Their received bits are discarded.
    pub fn reap_expired(&mut self, k: u64) -> Vec<Failure> {
        let mut failures = Vec::new();
        for (user, list) in self.requests.iter_mut().enumerate() {
            let catalog = &self.catalog;
            list.retain(|d| {
                let expired = k >= d.want + catalog[d.content].deadline_steps;
                if expired {
                    failures.push(Failure {
                        user,
                        content: d.content,
                        want: d.want,
                        received: d.received,
                    });
                }
                !expired
            });
        }
        failures
    }

    /// Applies delivered bits, removing finished requests and recording them
    /// in the device cache. `k` is the step the bits were delivered in.
    pub fn apply_transfers(&mut self, result: &TransferResult, k: u64) -> Vec<Completion> {
        let mut completions = Vec::new();
        for chunk in &result.chunks {
            let list = &mut self.requests[chunk.rx_user];
            let idx = list
                .iter()
                .position(|d| d.content == chunk.content && d.want == chunk.want)
                .expect("transfer chunk must target a live request");
            let size = self.catalog[chunk.content].size_bits;
            let d = &mut list[idx];
            d.received = d
                .received
                .checked_add(chunk.bits)
                .filter(|&h| h <= size)
                .expect("fills never exceed the content size");
            if d.received == size {
                let want = d.want;
                list.remove(idx);
                self.cached[chunk.rx_user][chunk.content] = true;
                completions.push(Completion {
                    user: chunk.rx_user,
                    content: chunk.content,
                    want,
                    elapsed: k - want + 1,
                });
            }
        }
        completions
    }
}

/// What a transmitter can serve from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// A base station: holds every catalog item in full.
    FullLibrary,
    /// A user device: holds only its own received prefixes / cached items.
    User(usize),
}

/// Classifies a transmitter endpoint given the first user endpoint id.
pub fn source_of(tx: EndpointId, ue_start: usize) -> Source {
    if tx >= ue_start {
        Source::User(tx - ue_start)
    } else {
        Source::FullLibrary
    }
}

/// Bits delivered to one request by one grant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub tx: EndpointId,
    pub rx_user: usize,
    pub content: usize,
    /// Want step of the request that was filled (identifies the request).
    pub want: u64,
    pub rb: usize,
    pub bits: u64,
}

/// Outcome of one step's transfers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransferResult {
    /// Per grant, in action order: bits actually delivered over that grant.
    pub fills: Vec<(Transmission, u64)>,
    /// Per `(grant, request)` deliveries, in processing order.
    pub chunks: Vec<Chunk>,
}

impl TransferResult {
    pub fn total_bits(&self) -> u64 {
        self.fills.iter().map(|&(_, y)| y).sum()
    }
}

/// Distributes per-grant link capacities onto the receivers' active requests.
///
/// Grants are processed in action order. Each grant fills its receiver's
/// active, unfinished requests in ascending `(want, content)` order with
/// `y = min(capacity left, transmitter supply)` bits, where the supply is the
/// receiver's remaining need (clipped to the transmitter's own prefix for
/// device relays). A working copy of all fill levels makes repeated grants to
/// the same receiver see earlier fills, so totals never exceed need. Device
/// transmitters never receive in the same step (half-duplex), so their supply
/// is their step-start prefix.
pub fn compute_chi(
    delta: &DeltaMap,
    state: &SystemState,
    ue_start: usize,
    k: u64,
) -> TransferResult {
    let mut work: Vec<Vec<Duplet>> = state.requests.clone();
    let mut result = TransferResult::default();

    for &(t, cap) in delta.entries() {
        let mut left = cap;
        let rx_user = t.rx - ue_start;
        let source = source_of(t.tx, ue_start);
        if left > 0 {
            for i in 0..work[rx_user].len() {
                if left == 0 {
                    break;
                }
                let d = work[rx_user][i];
                let size = state.catalog[d.content].size_bits;
                if d.want > k || d.received >= size {
                    continue;
                }
                // Relays transmit, hence cannot receive this step: their
                // holdings read from `state` equal their step-start holdings.
                let supply = state.supply_for(source, rx_user, &d);
                let y = left.min(supply);
                if y > 0 {
                    work[rx_user][i].received += y;
                    left -= y;
                    result.chunks.push(Chunk {
                        tx: t.tx,
                        rx_user,
                        content: d.content,
                        want: d.want,
                        rb: t.rb,
                        bits: y,
                    });
                }
            }
        }
        result.fills.push((t, cap - left));
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::Transmission;

    fn catalog() -> Vec<ContentItem> {
        vec![
            ContentItem { category: ContentCategory::Video, size_bits: 3_000_000, deadline_steps: 1000 },
            ContentItem { category: ContentCategory::Video, size_bits: 3_000_000, deadline_steps: 1000 },
            ContentItem { category: ContentCategory::Ebook, size_bits: 2_000, deadline_steps: 4000 },
        ]
    }

    fn t(tx: usize, rx: usize, rb: usize) -> Transmission {
        Transmission { tx, rx, rb }
    }

    fn delta_of(entries: Vec<(Transmission, u64)>) -> DeltaMap {
        DeltaMap::from_entries(entries)
    }

    #[test]
    fn fill_is_capacity_limited_for_fresh_station_downloads() {
        // One grant of 1000 bits toward a 3 Mbit need delivers exactly 1000.
        let mut st = SystemState::new(2, catalog());
        st.insert_request(0, 0, 5);
        let d = delta_of(vec![(t(0, 2, 0), 1000)]); // ue_start = 2
        let r = compute_chi(&d, &st, 2, 5);
        assert_eq!(r.fills, vec![(t(0, 2, 0), 1000)]);
        assert_eq!(r.chunks.len(), 1);
        assert_eq!(r.chunks[0].bits, 1000);
        assert_eq!(r.total_bits(), 1000);
    }

    #[test]
    fn relay_supply_is_clipped_to_its_own_prefix() {
        // The relay holds a 500-bit prefix; a 1000-bit grant delivers 500.
        let mut st = SystemState::new(2, catalog());
        st.insert_request(0, 0, 1); // relay's own request, partially filled
        st.insert_request(1, 0, 1);
        let seed = delta_of(vec![(t(0, 2, 0), 500)]);
        let r = compute_chi(&seed, &st, 2, 1);
        assert_eq!(st.apply_transfers(&r, 1), vec![]);
        assert_eq!(st.holdings(0, 0), 500);

        let d = delta_of(vec![(t(2, 3, 0), 1000)]); // user 0 -> user 1
        let r = compute_chi(&d, &st, 2, 1);
        assert_eq!(r.fills, vec![(t(2, 3, 0), 500)]);
        assert_eq!(st.avail_bits(Source::User(0), 1, 0, 1), 500);
    }

    #[test]
    fn cached_content_serves_in_full() {
        let mut st = SystemState::new(2, catalog());
        st.insert_request(0, 2, 1);
        let d = delta_of(vec![(t(0, 2, 0), 2_000)]);
        let r = compute_chi(&d, &st, 2, 1);
        let done = st.apply_transfers(&r, 1);
        assert_eq!(done.len(), 1);
        assert_eq!(done[0], Completion { user: 0, content: 2, want: 1, elapsed: 1 });
        assert!(st.has_cached(0, 2));
        assert_eq!(st.holdings(0, 2), 2_000);
        // The finished request left the ledger but the cache still serves.
        assert_eq!(st.requests_of(0).len(), 0);
        st.insert_request(1, 2, 3);
        assert_eq!(st.avail_bits(Source::User(0), 1, 2, 3), 2_000);
    }

    #[test]
    fn grants_fill_requests_in_want_then_content_order() {
        let mut st = SystemState::new(2, catalog());
        st.insert_request(0, 1, 7); // later want
        st.insert_request(0, 2, 3); // earliest want
        st.insert_request(0, 0, 7); // same want as content 1, lower id
        let order: Vec<(u64, usize)> =
            st.requests_of(0).iter().map(|d| (d.want, d.content)).collect();
        assert_eq!(order, vec![(3, 2), (7, 0), (7, 1)]);

        // 5000 bits: 2000 finish the ebook, 3000 go to content 0, none to 1.
        let d = delta_of(vec![(t(0, 2, 0), 5_000)]);
        let r = compute_chi(&d, &st, 2, 7);
        let got: Vec<(usize, u64)> = r.chunks.iter().map(|c| (c.content, c.bits)).collect();
        assert_eq!(got, vec![(2, 2_000), (0, 3_000)]);
    }

    #[test]
    fn future_wants_are_not_served() {
        let mut st = SystemState::new(1, catalog());
        st.insert_request(0, 0, 10);
        let d = delta_of(vec![(t(0, 1, 0), 1000)]);
        let r = compute_chi(&d, &st, 1, 9);
        assert_eq!(r.total_bits(), 0);
        assert_eq!(st.avail_bits(Source::FullLibrary, 0, 0, 9), 0);
        assert_eq!(st.avail_bits(Source::FullLibrary, 0, 0, 10), 3_000_000);
    }

    #[test]
    fn repeated_grants_to_one_receiver_never_overfill() {
        // Two grants on different blocks jointly cap at the remaining need.
        let mut st = SystemState::new(1, catalog());
        st.insert_request(0, 2, 1); // 2000 bits wanted
        let d = delta_of(vec![(t(0, 1, 0), 1_500), (t(0, 1, 1), 1_500)]);
        let r = compute_chi(&d, &st, 1, 1);
        assert_eq!(r.fills, vec![(t(0, 1, 0), 1_500), (t(0, 1, 1), 500)]);
        let done = st.apply_transfers(&r, 4);
        assert_eq!(done[0].elapsed, 4); // 4 - 1 + 1
        assert_eq!(st.holdings(0, 2), 2_000);
    }

    #[test]
    fn pair_total_fill_matches_min_of_supply_and_capacity() {
        // Σ fills over a pair == min(Σ avail, Σ δ) when one pair is granted.
        let mut st = SystemState::new(1, catalog());
        st.insert_request(0, 2, 1);
        st.insert_request(0, 0, 1);
        let total_avail = st.total_avail_bits(Source::FullLibrary, 0, 1);
        assert_eq!(total_avail, 3_002_000);
        let d = delta_of(vec![(t(0, 1, 0), 700), (t(0, 1, 3), 900)]);
        let r = compute_chi(&d, &st, 1, 1);
        assert_eq!(r.total_bits(), 1_600.min(total_avail));
    }

    #[test]
    fn reap_removes_expired_requests_and_reports_them() {
        let mut st = SystemState::new(1, catalog());
        st.insert_request(0, 0, 5); // deadline 1000 -> expires at k = 1005
        st.insert_request(0, 2, 5); // deadline 4000
        assert!(st.reap_expired(1004).is_empty());
        let failed = st.reap_expired(1005);
        assert_eq!(failed, vec![Failure { user: 0, content: 0, want: 5, received: 0 }]);
        assert_eq!(st.requests_of(0).len(), 1);
        // Failed downloads leave no cache behind.
        assert!(!st.has_cached(0, 0));
        assert_eq!(st.holdings(0, 0), 0);
    }

    #[test]
    fn duplicate_requests_merge() {
        let mut st = SystemState::new(1, catalog());
        st.insert_request(0, 0, 5);
        st.insert_request(0, 0, 5);
        assert_eq!(st.n_requests(), 1);
        st.insert_request(0, 0, 6);
        assert_eq!(st.n_requests(), 2);
    }

    #[test]
    fn received_bits_advance_by_exactly_the_delivered_chi() {
        let mut st = SystemState::new(2, catalog());
        st.insert_request(0, 0, 1);
        st.insert_request(1, 2, 1);
        let before: Vec<u64> = (0..2).map(|u| st.requests_of(u).iter().map(|d| d.received).sum()).collect();
        let d = delta_of(vec![(t(0, 2, 0), 1234), (t(1, 3, 1), 777)]);
        let r = compute_chi(&d, &st, 2, 1);
        st.apply_transfers(&r, 1);
        for u in 0..2 {
            let after: u64 = st.requests_of(u).iter().map(|d| d.received).sum();
            let chi: u64 = r.chunks.iter().filter(|c| c.rx_user == u).map(|c| c.bits).sum();
            assert_eq!(after, before[u] + chi);
        }
    }
}
