//! The per-step simulation loop: reveal requests, reap deadlines, invoke a
//! scheduler, realize transfers, advance mobility, and record metrics.
//!
//! Each step is 1 ms. The order of operations within step `k` is fixed:
//!
//! 1. insert requests whose want step is `k`;
//! 2. reap requests whose deadline has arrived (failures);
//! 3. ask the scheduler for an [`Action`] (invalid actions are counted and
//!    replaced by the empty action);
//! 4. evaluate per-grant capacities under the action's own interference;
//! 5. distribute the capacities onto the receivers' requests and apply them;
//! 6. record [`StepMetrics`] including energy;
//! 7. at a configurable cadence, advance user mobility and refresh the link
//!    budget.
//!
//! Everything is deterministic in the configured seed. Scheduler wall-clock
//! time is measured but kept out of the metric files so that identical
//! (config, seed) pairs produce byte-identical outputs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{CategoryConfig, EndpointKind, SimConfig, WorkloadConfig};
use crate::radio::{compute_delta, Action, RadioError, RateTable};
use crate::scenario::{
    build_scenario, compute_link_budget, step_mobility, LinkBudget, Scenario, ScenarioError,
};
use crate::transfer::{
    compute_chi, ContentCategory, ContentItem, SystemState, TransferResult,
};
use crate::units::dbm_to_watts;
use crate::{seeded_rng, RngStream};

/// Everything a scheduler may read about the radio environment at one step.
#[derive(Debug, Clone, Copy)]
pub struct RadioEnv<'a> {
    pub lb: &'a LinkBudget,
    /// Kind of every endpoint, indexed by endpoint id.
    pub kinds: &'a [EndpointKind],
    pub table: &'a RateTable,
    /// Noise floor per resource block, watts.
    pub noise_w: f64,
    /// Resource blocks available this step.
    pub n_rbs: usize,
}

/// Read-only view handed to a scheduler each step.
#[derive(Debug, Clone, Copy)]
pub struct SchedContext<'a> {
    pub k: u64,
    pub state: &'a SystemState,
    pub env: RadioEnv<'a>,
}

/// A per-step resource allocator.
pub trait Scheduler {
    fn name(&self) -> &'static str;

    /// Produces the grant set for step `ctx.k`.
    fn schedule(&mut self, ctx: &SchedContext<'_>) -> Action;

    /// Observes what the action actually delivered (for throughput averages).
    fn after_transfers(&mut self, _k: u64, _result: &TransferResult) {}
}

// ===== Workload =====

/// One future download request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Request {
    /// Step at which the request appears.
    pub want: u64,
    pub user: usize,
    /// Catalog index.
    pub content: usize,
}

/// All requests of a run, sorted by `(want, user, content)` and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Workload {
    pub requests: Vec<Request>,
}

fn category_of(cfg: &WorkloadConfig, cat: ContentCategory) -> &CategoryConfig {
    match cat {
        ContentCategory::Ebook => &cfg.ebook,
        ContentCategory::Video => &cfg.video,
        ContentCategory::Viral => &cfg.viral,
    }
}

/// Draws every user's requests: category by relative mix weight, item uniform
/// within the category, want step uniform within the category's request
/// interval. The result is sorted by `(want, user, content)`; exact repeats
/// of one `(user, content, want)` triple collapse into a single request.
pub fn generate_workload(
    cfg: &WorkloadConfig,
    catalog: &[ContentItem],
    n_users: usize,
    rng: &mut ChaCha8Rng,
) -> Workload {
    // Contiguous catalog ranges per category (the catalog is built in
    // category order).
    let range_of = |cat: ContentCategory| {
        let start = catalog.iter().position(|i| i.category == cat);
        let count = catalog.iter().filter(|i| i.category == cat).count();
        (start.unwrap_or(0), count)
    };
    let ranges: Vec<(ContentCategory, (usize, usize), f64)> = ContentCategory::ALL
        .iter()
        .map(|&cat| (cat, range_of(cat), category_of(cfg, cat).mix_weight))
        .collect();
    let total_weight: f64 = ranges.iter().map(|r| r.2).sum();

    let mut requests = Vec::with_capacity(n_users * cfg.requests_per_user);
    for user in 0..n_users {
        for _ in 0..cfg.requests_per_user {
            let mut x = rng.gen_range(0.0..total_weight);
            let mut chosen = ranges.last().expect("three categories").0;
            for &(cat, _, w) in &ranges {
                if x < w {
                    chosen = cat;
                    break;
                }
                x -= w;
            }
            let (start, count) = ranges.iter().find(|r| r.0 == chosen).unwrap().1;
            let content = start + rng.gen_range(0..count);
            let c = category_of(cfg, chosen);
            let want = rng.gen_range(c.want_min..=c.want_max);
            requests.push(Request { want, user, content });
        }
    }
    requests.sort_unstable();
    requests.dedup();
    Workload { requests }
}

// ===== Metrics =====

/// Tag line heading every per-step metrics stream.
pub const METRICS_SCHEMA: &str = "# hetnet-metrics-v1";
/// Tag line heading every run summary.
pub const SUMMARY_SCHEMA: &str = "hetnet-summary-v1";

/// What happened in one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    /// Requests that became active this step.
    pub inserted: usize,
    /// Requests whose deadline struck this step.
    pub failed: usize,
    /// Requests finished this step.
    pub completed: usize,
    /// Grants in the enacted action.
    pub grants: usize,
    /// Distinct resource-block indices used network-wide.
    pub rbs_used: usize,
    pub bits_macro: u64,
    pub bits_micro: u64,
    pub bits_d2d: u64,
    pub energy_macro_j: f64,
    pub energy_micro_j: f64,
    pub energy_ue_j: f64,
    /// 1 when the scheduler's action was structurally invalid (and replaced
    /// by the empty action).
    pub violation: u8,
}

impl StepMetrics {
    pub fn bits_total(&self) -> u64 {
        self.bits_macro + self.bits_micro + self.bits_d2d
    }

    pub fn energy_total_j(&self) -> f64 {
        self.energy_macro_j + self.energy_micro_j + self.energy_ue_j
    }

    /// Mean delivered bits per used resource block; 0 when none were used.
    pub fn bits_per_rb(&self) -> f64 {
        if self.rbs_used == 0 { 0.0 } else { self.bits_total() as f64 / self.rbs_used as f64 }
    }

    /// Mean number of grants sharing one used resource-block index; ≥ 1
    /// whenever any block is used, exactly 1 without network-wide reuse.
    pub fn rb_reuse(&self) -> f64 {
        if self.rbs_used == 0 { 0.0 } else { self.grants as f64 / self.rbs_used as f64 }
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.4},{:.4},{:.9},{:.9},{:.9},{:.9},{}",
            self.step,
            self.inserted,
            self.completed,
            self.failed,
            self.grants,
            self.rbs_used,
            self.bits_macro,
            self.bits_micro,
            self.bits_d2d,
            self.bits_total(),
            self.bits_per_rb(),
            self.rb_reuse(),
            self.energy_macro_j,
            self.energy_micro_j,
            self.energy_ue_j,
            self.energy_total_j(),
            self.violation,
        )
    }
}

const CSV_HEADER: &str = "step,inserted,completed,failed,grants,rbs_used,bits_macro,bits_micro,\
                          bits_d2d,bits_total,bits_per_rb,rb_reuse,energy_macro_j,energy_micro_j,\
                          energy_ue_j,energy_total_j,violation";

/// Renders a per-step metrics stream: schema tag, column header, one CSV row
/// per step. Deterministic formatting, suitable for byte comparison.
pub fn metrics_csv(steps: &[StepMetrics]) -> String {
    let mut out = String::with_capacity(steps.len() * 96 + 256);
    out.push_str(METRICS_SCHEMA);
    out.push('\n');
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in steps {
        out.push_str(&s.csv_row());
        out.push('\n');
    }
    out
}

/// Aggregates for one content category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategorySummary {
    pub inserted: usize,
    pub completed: usize,
    pub failed: usize,
    pub active_end: usize,
    /// Bits delivered toward requests of this category, total and the
    /// device-to-device share.
    pub bits_total: u64,
    pub bits_d2d: u64,
    /// Completion times (steps from want to completion), sorted.
    pub elapsed: Vec<u64>,
}

impl CategorySummary {
    /// Nearest-rank percentile of the completion times.
    pub fn elapsed_percentile(&self, q: f64) -> Option<u64> {
        percentile_nearest_rank(&self.elapsed, q)
    }
}

/// Nearest-rank percentile of an ascending-sorted sample.
pub fn percentile_nearest_rank(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Whole-run aggregates, written as a `key = value` document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub scheduler: String,
    pub seed: u64,
    pub steps: u64,
    pub n_macro: usize,
    pub n_micro: usize,
    pub n_users: usize,
    pub inserted: usize,
    pub completed: usize,
    pub failed: usize,
    pub active_end: usize,
    /// Steps whose action was invalid and replaced by the empty action.
    pub violations: u64,
    pub grants: u64,
    /// Sum over steps of the distinct resource-block indices used.
    pub rbs_used: u64,
    pub bits_macro: u64,
    pub bits_micro: u64,
    pub bits_d2d: u64,
    pub energy_macro_j: f64,
    pub energy_micro_j: f64,
    pub energy_ue_j: f64,
    /// Mean per-step reuse factor over steps that used any block.
    pub mean_rb_reuse: f64,
    pub ebook: CategorySummary,
    pub video: CategorySummary,
    pub viral: CategorySummary,
}

impl RunSummary {
    pub fn bits_total(&self) -> u64 {
        self.bits_macro + self.bits_micro + self.bits_d2d
    }

    pub fn energy_total_j(&self) -> f64 {
        self.energy_macro_j + self.energy_micro_j + self.energy_ue_j
    }

    /// Joules per delivered bit; `None` when nothing was delivered.
    pub fn energy_per_bit_j(&self) -> Option<f64> {
        if self.bits_total() == 0 {
            None
        } else {
            Some(self.energy_total_j() / self.bits_total() as f64)
        }
    }

    pub fn mean_bits_per_rb(&self) -> f64 {
        if self.rbs_used == 0 { 0.0 } else { self.bits_total() as f64 / self.rbs_used as f64 }
    }

    pub fn category(&self, cat: ContentCategory) -> &CategorySummary {
        match cat {
            ContentCategory::Ebook => &self.ebook,
            ContentCategory::Video => &self.video,
            ContentCategory::Viral => &self.viral,
        }
    }

    /// Renders the summary document: schema tag then `key = value` lines.
    /// Undefined ratios (division by zero bits) render as `undefined`.
    pub fn to_kv_string(&self) -> String {
        fn ratio(energy_j: f64, bits: u64) -> String {
            if bits == 0 {
                "undefined".into()
            } else {
                format!("{:.12e}", energy_j / bits as f64)
            }
        }
        fn opt(v: Option<u64>) -> String {
            v.map_or_else(|| "undefined".into(), |x| x.to_string())
        }
        let mut out = String::new();
        let _ = writeln!(out, "{SUMMARY_SCHEMA}");
        let _ = writeln!(out, "scheduler = {}", self.scheduler);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "steps = {}", self.steps);
        let _ = writeln!(out, "n_macro = {}", self.n_macro);
        let _ = writeln!(out, "n_micro = {}", self.n_micro);
        let _ = writeln!(out, "n_users = {}", self.n_users);
        let _ = writeln!(out, "inserted = {}", self.inserted);
        let _ = writeln!(out, "completed = {}", self.completed);
        let _ = writeln!(out, "failed = {}", self.failed);
        let _ = writeln!(out, "active_end = {}", self.active_end);
        let _ = writeln!(out, "violations = {}", self.violations);
        let _ = writeln!(out, "grants = {}", self.grants);
        let _ = writeln!(out, "rbs_used = {}", self.rbs_used);
        let _ = writeln!(out, "bits_total = {}", self.bits_total());
        let _ = writeln!(out, "bits_macro = {}", self.bits_macro);
        let _ = writeln!(out, "bits_micro = {}", self.bits_micro);
        let _ = writeln!(out, "bits_d2d = {}", self.bits_d2d);
        let _ = writeln!(out, "mean_bits_per_rb = {:.4}", self.mean_bits_per_rb());
        let _ = writeln!(out, "mean_rb_reuse = {:.4}", self.mean_rb_reuse);
        let _ = writeln!(out, "energy_total_j = {:.9}", self.energy_total_j());
        let _ = writeln!(out, "energy_macro_j = {:.9}", self.energy_macro_j);
        let _ = writeln!(out, "energy_micro_j = {:.9}", self.energy_micro_j);
        let _ = writeln!(out, "energy_ue_j = {:.9}", self.energy_ue_j);
        let _ = writeln!(out, "energy_per_bit_j = {}", ratio(self.energy_total_j(), self.bits_total()));
        let _ = writeln!(out, "energy_per_bit_macro_j = {}", ratio(self.energy_macro_j, self.bits_macro));
        let _ = writeln!(out, "energy_per_bit_micro_j = {}", ratio(self.energy_micro_j, self.bits_micro));
        let _ = writeln!(out, "energy_per_bit_d2d_j = {}", ratio(self.energy_ue_j, self.bits_d2d));
        for cat in ContentCategory::ALL {
            let c = self.category(cat);
            let l = cat.label();
            let _ = writeln!(out, "cat.{l}.inserted = {}", c.inserted);
            let _ = writeln!(out, "cat.{l}.completed = {}", c.completed);
            let _ = writeln!(out, "cat.{l}.failed = {}", c.failed);
            let _ = writeln!(out, "cat.{l}.active_end = {}", c.active_end);
            let _ = writeln!(out, "cat.{l}.bits_total = {}", c.bits_total);
            let _ = writeln!(out, "cat.{l}.bits_d2d = {}", c.bits_d2d);
            let _ = writeln!(out, "cat.{l}.elapsed_p50 = {}", opt(c.elapsed_percentile(50.0)));
            let _ = writeln!(out, "cat.{l}.elapsed_p90 = {}", opt(c.elapsed_percentile(90.0)));
        }
        out
    }
}

// ===== Run =====

/// Knobs of one engine invocation (not part of the simulated configuration).
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep the per-step metrics in memory (`RunOutput::steps`).
    pub collect_steps: bool,
    /// Re-verify core bookkeeping each step (bit conservation, holdings
    /// bounds, deadline positivity); violations abort the run with an error.
    pub check_invariants: bool,
}

/// Results of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    /// Per-step metrics, when requested.
    pub steps: Option<Vec<StepMetrics>>,
    /// Total wall-clock time spent inside `Scheduler::schedule`. Measured,
    /// hence nondeterministic; deliberately absent from summary and metrics.
    pub scheduler_nanos: u128,
}

/// Failures that abort a run.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error("rate table file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invariant violated at step {step}: {message}")]
    Invariant { step: u64, message: String },
}

/// Loads the configured rate table (built-in staircase unless a file is set).
pub fn load_rate_table(cfg: &SimConfig) -> Result<RateTable, EngineError> {
    match &cfg.radio.rate_table_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Ok(RateTable::from_text(&text, cfg.radio.max_bits_per_rb)?)
        }
        None => Ok(RateTable::default_table(cfg.radio.max_bits_per_rb)),
    }
}

/// Runs one simulation to completion. Deterministic in (config, seed) except
/// for the measured scheduler time.
pub fn run(
    cfg: &SimConfig,
    scheduler: &mut dyn Scheduler,
    opts: &RunOptions,
) -> Result<RunOutput, EngineError> {
    let scenario = build_scenario(cfg)?;
    let workload = generate_workload(
        &cfg.workload,
        &scenario.catalog,
        scenario.n_users(),
        &mut seeded_rng(cfg.scenario.seed, RngStream::Workload),
    );
    run_prepared(cfg, &scenario, &workload, scheduler, opts)
}

/// Runs one simulation on an already-built scenario and workload. Lets
/// callers share a workload across schedulers (comparisons) or substitute a
/// synthetic one (tests).
pub fn run_prepared(
    cfg: &SimConfig,
    scenario: &Scenario,
    workload: &Workload,
    scheduler: &mut dyn Scheduler,
    opts: &RunOptions,
) -> Result<RunOutput, EngineError> {
    let table = load_rate_table(cfg)?;
    let noise_w = dbm_to_watts(cfg.scenario.noise_dbm_per_rb);
    let n_rbs = cfg.scenario.n_rbs;
    let kinds: Vec<EndpointKind> =
        (0..scenario.n_endpoints()).map(|e| scenario.kind(e)).collect();
    let ue_start = scenario.ue_start();

    let mut positions = scenario.initial_positions();
    let mut lb = compute_link_budget(scenario, &positions, cfg);
    let mut mobility_rng = seeded_rng(cfg.scenario.seed, RngStream::Mobility);

    let mut state = SystemState::new(scenario.n_users(), scenario.catalog.clone());
    let mut summary = RunSummary {
        scheduler: scheduler.name().to_string(),
        seed: cfg.scenario.seed,
        steps: cfg.engine.n_steps,
        n_macro: scenario.n_macro(),
        n_micro: scenario.n_micro(),
        n_users: scenario.n_users(),
        ..RunSummary::default()
    };
    let mut steps_out = if opts.collect_steps {
        Some(Vec::with_capacity(cfg.engine.n_steps as usize))
    } else {
        None
    };
    let mut scheduler_nanos: u128 = 0;
    let mut reuse_sum = 0.0;
    let mut reuse_steps = 0u64;
    let mut next_request = 0usize; // cursor into the sorted workload

    for k in 0..cfg.engine.n_steps {
        let mut m = StepMetrics { step: k, ..StepMetrics::default() };

        // 1. Reveal the requests wanted now.
        while next_request < workload.requests.len()
            && workload.requests[next_request].want == k
        {
            let r = workload.requests[next_request];
            state.insert_request(r.user, r.content, r.want);
            let cat = state.item(r.content).category;
            summary.category_mut(cat).inserted += 1;
            summary.inserted += 1;
            m.inserted += 1;
            next_request += 1;
        }

        // 2. Reap expired requests.
        for f in state.reap_expired(k) {
            let cat = state.item(f.content).category;
            summary.category_mut(cat).failed += 1;
            summary.failed += 1;
            m.failed += 1;
        }

        // 3. Schedule.
        let env = RadioEnv { lb: &lb, kinds: &kinds, table: &table, noise_w, n_rbs };
        let ctx = SchedContext { k, state: &state, env };
        let t0 = Instant::now();
        let mut action = scheduler.schedule(&ctx);
        scheduler_nanos += t0.elapsed().as_nanos();
        if action.validate(false).is_err() {
            summary.violations += 1;
            m.violation = 1;
            action = Action::new();
        }

        // 4.–5. Evaluate capacities, distribute bits, apply.
        let delta = compute_delta(&action, &lb, noise_w, &table)?;
        let result = compute_chi(&delta, &state, ue_start, k);
        if opts.check_invariants {
            check_step_invariants(k, &state, &delta, &result)
                .map_err(|message| EngineError::Invariant { step: k, message })?;
        }
        let completions = state.apply_transfers(&result, k);
        scheduler.after_transfers(k, &result);
        for c in &completions {
            let cat = state.item(c.content).category;
            let catsum = summary.category_mut(cat);
            catsum.completed += 1;
            catsum.elapsed.push(c.elapsed);
            summary.completed += 1;
            m.completed += 1;
        }
        if opts.check_invariants {
            if let Some(msg) = post_transfer_violation(k, &state) {
                return Err(EngineError::Invariant { step: k, message: msg });
            }
        }

        // 6. Account bits and energy.
        for chunk in &result.chunks {
            let cat = state.item(chunk.content).category;
            let catsum = summary.category_mut(cat);
            catsum.bits_total += chunk.bits;
            match kinds[chunk.tx] {
                EndpointKind::MacroBs => m.bits_macro += chunk.bits,
                EndpointKind::MicroBs => m.bits_micro += chunk.bits,
                EndpointKind::Ue => {
                    m.bits_d2d += chunk.bits;
                    catsum.bits_d2d += chunk.bits;
                }
            }
        }
        m.grants = action.len();
        m.rbs_used = action.iter().map(|t| t.rb).collect::<BTreeSet<_>>().len();
        account_energy(&mut m, &action, &lb, &kinds, cfg, n_rbs);

        summary.grants += m.grants as u64;
        summary.rbs_used += m.rbs_used as u64;
        summary.bits_macro += m.bits_macro;
        summary.bits_micro += m.bits_micro;
        summary.bits_d2d += m.bits_d2d;
        summary.energy_macro_j += m.energy_macro_j;
        summary.energy_micro_j += m.energy_micro_j;
        summary.energy_ue_j += m.energy_ue_j;
        if m.rbs_used > 0 {
            reuse_sum += m.rb_reuse();
            reuse_steps += 1;
        }
        if let Some(v) = steps_out.as_mut() {
            v.push(m);
        }

        // 7. Mobility and link-budget refresh.
        if k + 1 < cfg.engine.n_steps && (k + 1) % cfg.engine.refresh_cadence == 0 {
            step_mobility(scenario, &mut positions, cfg.engine.refresh_cadence, cfg, &mut mobility_rng);
            lb = compute_link_budget(scenario, &positions, cfg);
        }
    }

    for u in 0..state.n_users() {
        for d in state.requests_of(u) {
            summary.category_mut(state.item(d.content).category).active_end += 1;
            summary.active_end += 1;
        }
    }
    for cat in ContentCategory::ALL {
        summary.category_mut(cat).elapsed.sort_unstable();
    }
    summary.mean_rb_reuse = if reuse_steps == 0 { 0.0 } else { reuse_sum / reuse_steps as f64 };

    Ok(RunOutput { summary, steps: steps_out, scheduler_nanos })
}

impl RunSummary {
    fn category_mut(&mut self, cat: ContentCategory) -> &mut CategorySummary {
        match cat {
            ContentCategory::Ebook => &mut self.ebook,
            ContentCategory::Video => &mut self.video,
            ContentCategory::Viral => &mut self.viral,
        }
    }
}

/// Per-node radiated power of an action, watts: each grant radiates its
/// configured link power scaled to the one-block share of the band.
fn radiated_w(action: &Action, lb: &LinkBudget, node: usize, n_rbs: usize) -> f64 {
    action
        .iter()
        .filter(|t| t.tx == node)
        .map(|t| lb.power(t.tx, t.rx) / n_rbs as f64)
        .sum()
}

/// Adds this step's consumed energy to the metrics: transmitting nodes draw
/// `p0 + slope × radiated`, idle base stations draw `p0` (configurable), idle
/// user devices draw nothing. One step lasts 1 ms.
fn account_energy(
    m: &mut StepMetrics,
    action: &Action,
    lb: &LinkBudget,
    kinds: &[EndpointKind],
    cfg: &SimConfig,
    n_rbs: usize,
) {
    let transmitting: BTreeSet<usize> = action.iter().map(|t| t.tx).collect();
    for (node, &kind) in kinds.iter().enumerate() {
        let params = match kind {
            EndpointKind::MacroBs => cfg.energy.macro_bs,
            EndpointKind::MicroBs => cfg.energy.micro_bs,
            EndpointKind::Ue => cfg.energy.ue,
        };
        let power_w = if transmitting.contains(&node) {
            params.p0_w + params.slope * radiated_w(action, lb, node, n_rbs)
        } else if kind != EndpointKind::Ue && cfg.energy.idle_bs_draws_p0 {
            params.p0_w
        } else {
            continue;
        };
        let energy_j = power_w * 1e-3;
        match kind {
            EndpointKind::MacroBs => m.energy_macro_j += energy_j,
            EndpointKind::MicroBs => m.energy_micro_j += energy_j,
            EndpointKind::Ue => m.energy_ue_j += energy_j,
        }
    }
}

/// Bookkeeping checks between capacity evaluation and state mutation: grant
/// fills within capacity, per-grant fill equals the sum of its chunks, and
/// every live request is within its deadline with a positive remaining margin.
fn check_step_invariants(
    k: u64,
    state: &SystemState,
    delta: &crate::radio::DeltaMap,
    result: &TransferResult,
) -> Result<(), String> {
    for (i, &(t, fill)) in result.fills.iter().enumerate() {
        let cap = delta.entries()[i].1;
        if fill > cap {
            return Err(format!("grant {t:?} filled {fill} bits over its capacity {cap}"));
        }
        // Conservation per grant: the fill equals the sum of its chunks.
        let chunk_sum: u64 =
            result.chunks.iter().filter(|c| c.tx == t.tx && c.rb == t.rb).map(|c| c.bits).sum();
        if chunk_sum != fill {
            return Err(format!(
                "grant {t:?}: fill {fill} != sum of its request chunks {chunk_sum}"
            ));
        }
    }
    // Deadline positivity for everything still live after the reap.
    for u in 0..state.n_users() {
        for d in state.active_of(u, k) {
            let deadline = d.want + state.item(d.content).deadline_steps;
            if deadline <= k {
                return Err(format!(
                    "user {u} request for content {} is past its deadline but alive",
                    d.content
                ));
            }
        }
    }
    Ok(())
}

/// Post-transfer holdings bounds: received bits never exceed content size
/// (completions leave the ledger, so everything remaining is incomplete).
fn post_transfer_violation(_k: u64, state: &SystemState) -> Option<String> {
    for u in 0..state.n_users() {
        for d in state.requests_of(u) {
            let size = state.item(d.content).size_bits;
            if d.received >= size {
                return Some(format!(
                    "user {u} holds a finished request (content {}, {} of {size} bits) in the ledger",
                    d.content, d.received
                ));
            }
        }
    }
    None
}
