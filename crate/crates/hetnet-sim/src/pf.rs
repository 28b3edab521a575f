//! Proportional-fair cellular baseline with cell-range expansion and
//! almost-blank subframes; never uses device-to-device links.
//!
//! Users associate to the base station with the strongest pilot after adding
//! a bias to micro pilots (cell-range expansion). Macros stay silent on a
//! fixed subframe pattern (almost-blank subframes); during those muted steps
//! each micro serves its *expanded* users (users it owns only thanks to the
//! bias) preferentially, since they are the ones the macro normally drowns
//! out. Within a cell, resource blocks go one at a time to the backlogged
//! user maximizing `instantaneous rate / average rate`, where the tentative
//! instantaneous rate is interference-free; the real capacities are then
//! re-derived for the full grant set by the engine's reference evaluation.

use crate::config::{EndpointKind, PfConfig};
use crate::engine::{SchedContext, Scheduler};
use crate::radio::{self, Action, EndpointId, Transmission};
use crate::scenario::LinkBudget;
use crate::transfer::{Source, TransferResult};
use crate::units::db_to_linear;

/// Association of one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Association {
    pub serving: EndpointId,
    /// The user belongs to a micro only because of the bias (without it a
    /// macro would be strongest).
    pub expanded: bool,
}

/// Strongest-pilot association with a bias on micro pilots: per user the
/// base station maximizing received pilot power (linear) times the bias
/// factor for micros; ties resolve to the lowest base-station id. `None` for
/// users no station has a modeled path to.
pub fn associate_cre(
    lb: &LinkBudget,
    kinds: &[EndpointKind],
    cre_bias_db: f64,
) -> Vec<Option<Association>> {
    let bias = db_to_linear(cre_bias_db);
    let n_bs = lb.ue_start();
    (0..lb.n_users())
        .map(|u| {
            let rx = lb.user_endpoint(u);
            let mut best_raw: Option<(f64, EndpointId)> = None;
            let mut best_biased: Option<(f64, EndpointId)> = None;
            for bs in 0..n_bs {
                let a = lb.attenuation(bs, rx);
                if !a.is_finite() {
                    continue;
                }
                let pilot = lb.power(bs, rx) / a;
                let biased =
                    if kinds[bs] == EndpointKind::MicroBs { pilot * bias } else { pilot };
                if best_raw.map_or(true, |(p, _)| pilot > p) {
                    best_raw = Some((pilot, bs));
                }
                if best_biased.map_or(true, |(p, _)| biased > p) {
                    best_biased = Some((biased, bs));
                }
            }
            best_biased.map(|(_, serving)| Association {
                serving,
                expanded: kinds[serving] == EndpointKind::MicroBs
                    && best_raw.is_some_and(|(_, raw)| kinds[raw] == EndpointKind::MacroBs),
            })
        })
        .collect()
}

/// The proportional-fair + interference-coordination scheduler.
pub struct PfScheduler {
    cfg: PfConfig,
    /// Per-user throughput average, bits per step, floored away from zero.
    avg_rate: Vec<f64>,
}

impl PfScheduler {
    pub fn new(cfg: &PfConfig, n_users: usize) -> Self {
        Self { cfg: *cfg, avg_rate: vec![cfg.ewma_floor_bits; n_users] }
    }

    pub fn avg_rate(&self) -> &[f64] {
        &self.avg_rate
    }

    /// Whether macros are muted at step `k`.
    pub fn macro_muted(&self, k: u64) -> bool {
        self.cfg.abs_period > 0 && k % self.cfg.abs_period == self.cfg.abs_offset
    }
}

struct Candidate {
    user: usize,
    /// Interference-free per-block rate toward this user.
    rate: u64,
    /// Bits the cell could still usefully send this user (demand bound).
    need: u64,
    expanded: bool,
}

impl Scheduler for PfScheduler {
    fn name(&self) -> &'static str {
        "pf"
    }

    fn schedule(&mut self, ctx: &SchedContext<'_>) -> Action {
        let lb = ctx.env.lb;
        let muted = self.macro_muted(ctx.k);
        let assoc = associate_cre(lb, ctx.env.kinds, self.cfg.cre_bias_db);
        let mut action = Action::new();

        for bs in 0..lb.ue_start() {
            if muted && ctx.env.kinds[bs] == EndpointKind::MacroBs {
                continue;
            }
            // Backlogged users of this cell that it can actually reach.
            let mut pool: Vec<Candidate> = Vec::new();
            for u in 0..lb.n_users() {
                let Some(a) = assoc[u] else { continue };
                if a.serving != bs {
                    continue;
                }
                let rx = lb.user_endpoint(u);
                if !lb.covered(bs, rx) {
                    continue;
                }
                let need = ctx.state.total_avail_bits(Source::FullLibrary, u, ctx.k);
                if need == 0 {
                    continue;
                }
                let rate = match radio::sinr(lb, bs, rx, ctx.env.noise_w, 0.0) {
                    Ok(s) => ctx.env.table.bits_for_sinr(s),
                    Err(_) => 0,
                };
                if rate == 0 {
                    continue; // nothing would ever arrive on this link
                }
                pool.push(Candidate { user: u, rate, need, expanded: a.expanded });
            }

            // One block at a time: expanded users first on muted steps, then
            // anyone with remaining demand (work conservation).
            for rb in 0..ctx.env.n_rbs {
                let prefer_expanded =
                    muted && pool.iter().any(|c| c.expanded && c.need > 0);
                let winner = pool
                    .iter_mut()
                    .filter(|c| c.need > 0 && (!prefer_expanded || c.expanded))
                    .max_by(|a, b| {
                        let ma = a.rate as f64 / self.avg_rate[a.user];
                        let mb = b.rate as f64 / self.avg_rate[b.user];
                        // Strictly-greater keeps the earliest (lowest user).
                        ma.partial_cmp(&mb)
                            .unwrap()
                            .then(b.user.cmp(&a.user))
                    });
                match winner {
                    Some(c) => {
                        action.push(Transmission { tx: bs, rx: lb.user_endpoint(c.user), rb });
                        c.need = c.need.saturating_sub(c.rate);
                    }
                    None => break,
                }
            }
        }
        action
    }

    fn after_transfers(&mut self, _k: u64, result: &TransferResult) {
        let w = self.cfg.ewma_window;
        let mut delivered = vec![0u64; self.avg_rate.len()];
        for c in &result.chunks {
            delivered[c.rx_user] += c.bits;
        }
        for (avg, bits) in self.avg_rate.iter_mut().zip(delivered) {
            *avg = ((1.0 - 1.0 / w) * *avg + bits as f64 / w).max(self.cfg.ewma_floor_bits);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PfConfig;
    use crate::engine::RadioEnv;
    use crate::radio::{DeltaMap, RateTable};
    use crate::transfer::{compute_chi, ContentCategory, ContentItem, SystemState};
    use crate::units::dbm_to_watts;

    fn item(bits: u64) -> ContentItem {
        ContentItem { category: ContentCategory::Video, size_bits: bits, deadline_steps: 1000 }
    }

    /// One macro (0), one micro (1), two users (2, 3). Pilot levels at user 0
    /// are chosen per the range-expansion arithmetic: macro −70 dBm, micro
    /// −80 dBm.
    fn cre_budget() -> (LinkBudget, Vec<EndpointKind>) {
        let n = 4;
        let ue_start = 2;
        let mut atten = vec![f64::INFINITY; n * 2];
        let mut covered = vec![false; n * 2];
        let idx = |tx: usize, u: usize| tx * 2 + u;
        // Work in watts with attenuation 1 so pilots equal transmit powers.
        atten[idx(0, 0)] = 1.0;
        covered[idx(0, 0)] = true;
        atten[idx(1, 0)] = 1.0;
        covered[idx(1, 0)] = true;
        // User 1 hears only the macro.
        atten[idx(0, 1)] = 1.0;
        covered[idx(0, 1)] = true;
        let lb = LinkBudget::from_parts(
            vec![dbm_to_watts(-70.0), dbm_to_watts(-80.0), 0.1, 0.1],
            atten,
            covered,
            ue_start,
        );
        (lb, vec![EndpointKind::MacroBs, EndpointKind::MicroBs, EndpointKind::Ue, EndpointKind::Ue])
    }

    #[test]
    fn bias_expands_the_micro_cell() {
        let (lb, kinds) = cre_budget();
        // 15 dB bias: micro −80 + 15 = −65 beats macro −70.
        let assoc = associate_cre(&lb, &kinds, 15.0);
        assert_eq!(assoc[0], Some(Association { serving: 1, expanded: true }));
        // No bias: plain strongest pilot.
        let assoc = associate_cre(&lb, &kinds, 0.0);
        assert_eq!(assoc[0], Some(Association { serving: 0, expanded: false }));
        // User 1 only hears the macro either way.
        assert_eq!(assoc[1], Some(Association { serving: 0, expanded: false }));
    }

    #[test]
    fn tied_pilots_resolve_to_the_lowest_station() {
        let (mut lb, kinds) = cre_budget();
        // Make both pilots at user 0 exactly equal and unbiased.
        lb = {
            let _ = &mut lb;
            let n = 4;
            let mut atten = vec![f64::INFINITY; n * 2];
            let mut covered = vec![false; n * 2];
            atten[0] = 1.0;
            covered[0] = true;
            atten[2] = 1.0;
            covered[2] = true;
            LinkBudget::from_parts(vec![1.0, 1.0, 0.1, 0.1], atten, covered, 2)
        };
        let assoc = associate_cre(&lb, &kinds, 0.0);
        assert_eq!(assoc[0].unwrap().serving, 0);
    }

    fn env<'a>(
        lb: &'a LinkBudget,
        kinds: &'a [EndpointKind],
        table: &'a RateTable,
        n_rbs: usize,
    ) -> RadioEnv<'a> {
        RadioEnv { lb, kinds, table, noise_w: 1e-9, n_rbs }
    }

    #[test]
    fn sole_backlogged_user_takes_every_block_on_clear_steps() {
        let (lb, kinds) = cre_budget();
        let table = RateTable::new(vec![(-40.0, 100)], 100).unwrap();
        let mut state = SystemState::new(2, vec![item(100_000)]);
        state.insert_request(1, 0, 0); // user 1, macro-associated
        let mut pf = PfScheduler::new(&PfConfig::default(), 2);
        let env = env(&lb, &kinds, &table, 4);

        // Step 0 is macro-muted by default (period 2, offset 0).
        let ctx = SchedContext { k: 0, state: &state, env };
        assert!(pf.macro_muted(0));
        assert_eq!(pf.schedule(&ctx).len(), 0);

        // Step 1: the macro serves user 1 on all four blocks.
        let ctx = SchedContext { k: 1, state: &state, env };
        let action = pf.schedule(&ctx);
        assert_eq!(action.len(), 4);
        for (rb, t) in action.iter().enumerate() {
            assert_eq!(*t, Transmission { tx: 0, rx: 3, rb });
        }
    }

    #[test]
    fn demand_bounds_the_number_of_blocks() {
        let (lb, kinds) = cre_budget();
        let table = RateTable::new(vec![(-40.0, 700)], 700).unwrap();
        let mut state = SystemState::new(2, vec![item(1000)]);
        state.insert_request(1, 0, 0);
        let mut pf = PfScheduler::new(&PfConfig::default(), 2);
        let env = env(&lb, &kinds, &table, 5);
        let ctx = SchedContext { k: 1, state: &state, env };
        // 1000 bits of need at 700 bits per block: two blocks suffice.
        assert_eq!(pf.schedule(&ctx).len(), 2);
    }

    #[test]
    fn muted_steps_prefer_expanded_users() {
        let (lb, kinds) = cre_budget();
        let table = RateTable::new(vec![(-40.0, 500)], 500).unwrap();
        let mut state = SystemState::new(2, vec![item(600), item(100_000)]);
        // User 0 is expanded onto the micro (bias default 15); user 1 stays
        // macro-associated, so the micro's only candidate is user 0.
        state.insert_request(0, 0, 1);
        state.insert_request(1, 1, 1);
        let mut pf = PfScheduler::new(&PfConfig::default(), 2);
        let env = env(&lb, &kinds, &table, 3);

        // Muted step: micro serves expanded user 0; demand (600 bits at 500
        // per block) caps it at two blocks; macro silent.
        let ctx = SchedContext { k: 2, state: &state, env };
        let action = pf.schedule(&ctx);
        let grants: Vec<_> = action.iter().copied().collect();
        assert_eq!(
            grants,
            vec![
                Transmission { tx: 1, rx: 2, rb: 0 },
                Transmission { tx: 1, rx: 2, rb: 1 },
            ]
        );

        // Clear step: macro serves user 1 on all blocks, micro still serves
        // its associated user 0.
        let ctx = SchedContext { k: 3, state: &state, env };
        let action = pf.schedule(&ctx);
        assert_eq!(action.len(), 3 + 2);
        assert!(action.iter().any(|t| t.tx == 0 && t.rx == 3));
    }

    #[test]
    fn ewma_tracks_delivered_bits_with_a_floor() {
        let cfg = PfConfig { ewma_window: 100.0, ewma_floor_bits: 1.0, ..PfConfig::default() };
        let mut pf = PfScheduler::new(&cfg, 2);
        assert_eq!(pf.avg_rate(), &[1.0, 1.0]);

        let mut state = SystemState::new(2, vec![item(100_000)]);
        state.insert_request(0, 0, 0);
        let d = DeltaMap::from_entries(vec![(Transmission { tx: 0, rx: 2, rb: 0 }, 2000)]);
        let r = compute_chi(&d, &state, 2, 0);
        pf.after_transfers(0, &r);
        // 0.99 * 1.0 + 2000/100, exactly.
        assert_eq!(pf.avg_rate()[0], 0.99 + 20.0);
        // Starved users decay toward the floor, never below.
        for _ in 0..2000 {
            pf.after_transfers(0, &TransferResult::default());
        }
        assert_eq!(pf.avg_rate()[1], 1.0);
        assert!(pf.avg_rate()[0] >= 1.0);
    }
}
