//! Simulation configuration: typed sections, defaults, validation, and a
//! versioned plain-text file format.
//!
//! # File format (`hetnet-config-v1`)
//!
//! A config file is UTF-8 text. The first non-blank line must be the literal
//! schema tag `hetnet-config-v1`. Every following line is blank, a `#` comment,
//! or `key = value` where `key` is one of the dotted names below. Files may set
//! any subset of keys; unset keys keep the value of the base config they are
//! applied on top of (defaults or a preset). Optional keys accept the literal
//! `none`.
//!
//! The full key list is exactly what [`SimConfig::to_kv_string`] emits, in a
//! stable order, so dumping a config (`--print-config`) documents every
//! accepted key; units are given on the field docs in this module.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

/// Schema tag that must head every config file.
pub const CONFIG_SCHEMA: &str = "hetnet-config-v1";

/// Endpoint classes distinguished by geometry, power, and energy models.
///
/// Sectors of a macro site are materialized as co-located omnidirectional
/// `MacroBs` endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EndpointKind {
    MacroBs,
    MicroBs,
    Ue,
}

/// Geometry and population of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Macro sites on a hexagonal grid (center first, then rings).
    pub n_macro_sites: usize,
    /// Sector endpoints per site, co-located at the site position.
    pub sectors_per_site: usize,
    /// Distance between adjacent macro sites, meters.
    pub inter_site_distance_m: f64,
    /// Micro base stations placed uniformly inside each site's hexagonal cell.
    pub n_micro_per_macro: usize,
    /// Minimum pairwise distance between micros of one cell, meters.
    /// `None` derives it as twice the micro pilot-coverage radius
    /// (non-overlapping coverage discs).
    pub micro_min_separation_m: Option<f64>,
    /// Total user endpoints.
    pub n_users: usize,
    /// Users pinned near each micro; the rest are uniform over the area.
    pub users_per_micro_cluster: usize,
    /// Radius of each micro's user cluster, meters.
    pub cluster_radius_m: f64,
    /// Resource blocks available each step.
    pub n_rbs: usize,
    /// Thermal-plus-noise-figure floor per resource block, dBm.
    pub noise_dbm_per_rb: f64,
    /// A link is covered when its received pilot power strictly exceeds this, dBm.
    pub coverage_threshold_dbm: f64,
    /// User walking speed, m/s; displacement per 1 ms step is `speed / 1000`.
    pub user_speed_mps: f64,
    /// System bandwidth, MHz (descriptive; capacity is set by `n_rbs`).
    pub band_mhz: f64,
    /// Carrier frequency, GHz (descriptive; absorbed in path-loss intercepts).
    pub carrier_ghz: f64,
    /// Macro transmit power, dBm.
    pub macro_power_dbm: f64,
    /// Micro transmit power, dBm.
    pub micro_power_dbm: f64,
    /// User-device transmit power (device-to-device links), dBm.
    pub ue_power_dbm: f64,
    /// Macro antenna height, meters (descriptive).
    pub macro_height_m: f64,
    /// Micro antenna height, meters (descriptive).
    pub micro_height_m: f64,
    /// User antenna height, meters (descriptive).
    pub ue_height_m: f64,
    /// Master seed; scenario build, workload, and mobility derive their own
    /// deterministic streams from it.
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_macro_sites: 1,
            sectors_per_site: 3,
            inter_site_distance_m: 500.0,
            n_micro_per_macro: 4,
            micro_min_separation_m: None, // non-overlapping pilot discs
            n_users: 60,
            users_per_micro_cluster: 10,
            cluster_radius_m: 50.0,
            n_rbs: 50,
            noise_dbm_per_rb: -112.4, // -174 dBm/Hz + 10 log10(180 kHz) + 9 dB NF
            coverage_threshold_dbm: -70.0,
            user_speed_mps: 1.0,
            band_mhz: 10.0,
            carrier_ghz: 2.6,
            macro_power_dbm: 43.0,
            micro_power_dbm: 30.0,
            ue_power_dbm: 23.0,
            macro_height_m: 25.0,
            micro_height_m: 10.0,
            ue_height_m: 1.5,
            seed: 1,
        }
    }
}

/// Log-distance path-loss constants for one link class:
/// `L(d) = l0_db + 10 * exponent * log10(max(d, d_min_m) / d0_m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossParams {
    /// Intercept at the reference distance, dB.
    pub l0_db: f64,
    /// Distance exponent.
    pub exponent: f64,
    /// Reference distance, meters.
    pub d0_m: f64,
    /// Distance floor, meters; closer links attenuate as if at `d_min_m`.
    pub d_min_m: f64,
}

/// Per-link-class path-loss constants (receiver is always a user device).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossConfig {
    pub macro_ue: PathLossParams,
    pub micro_ue: PathLossParams,
    pub ue_ue: PathLossParams,
}

impl Default for PathLossConfig {
    fn default() -> Self {
        Self {
            // Macro cells: 128.1 dB intercept at 1 km, exponent 3.76.
            macro_ue: PathLossParams { l0_db: 128.1, exponent: 3.76, d0_m: 1000.0, d_min_m: 10.0 },
            // Micro cells: higher intercept, slightly shallower slope.
            micro_ue: PathLossParams { l0_db: 140.7, exponent: 3.67, d0_m: 1000.0, d_min_m: 10.0 },
            // Device-to-device: street-level propagation, steep slope.
            ue_ue: PathLossParams { l0_db: 148.0, exponent: 4.0, d0_m: 1000.0, d_min_m: 3.0 },
        }
    }
}

/// Device-to-device transmit-power rule.
///
/// With a target receive level configured, a transmitting device uses
/// `min(ue_power_dbm, target_rx_dbm + path_loss_db)` toward each receiver;
/// with `None` it transmits at `ue_power_dbm` flat. Power control is what
/// makes an underlay viable: an uncontrolled device transmitter inside a hot
/// spot tramples the co-channel downlinks of its own neighbors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct D2dConfig {
    pub target_rx_dbm: Option<f64>,
}

impl Default for D2dConfig {
    fn default() -> Self {
        Self { target_rx_dbm: Some(-65.0) }
    }
}

/// Rate-table source and cap.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioConfig {
    /// Hard cap applied on top of the table rows, bits per RB per step.
    pub max_bits_per_rb: u64,
    /// Optional path to a two-column `threshold_db bits` table file replacing
    /// the built-in staircase.
    pub rate_table_path: Option<String>,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self { max_bits_per_rb: 712, rate_table_path: None }
    }
}

/// Rollout-scheduler knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdpConfig {
    /// Weight-grid step `g`; each tier weight ranges over `{g, 2g, …, 1}`,
    /// so the grid holds `(1/g)^3` triplets. `1/g` must be integral.
    pub alpha_granularity: f64,
    /// Lookahead depth of the rollout value estimate, steps.
    pub horizon: u64,
    /// Restrict every transmitter to a single receiver across all its RBs.
    pub strict_transmitter: bool,
    /// After the first sweep grants one RB per downloader, keep sweeping to
    /// grant additional RBs while total delivered bits keep increasing.
    pub multi_rb: bool,
    /// Cap on RBs granted to one downloader per step; `0` means `n_rbs`.
    pub max_rbs_per_downloader: usize,
}

impl Default for AdpConfig {
    fn default() -> Self {
        Self {
            alpha_granularity: 0.1, // 1000-triplet grid
            horizon: 50,
            strict_transmitter: true,
            multi_rb: false, // single RB per downloader per step
            max_rbs_per_downloader: 0,
        }
    }
}

/// Proportional-fair baseline knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfConfig {
    /// Association bias added to micro pilots (cell-range expansion), dB.
    pub cre_bias_db: f64,
    /// Macro transmitters stay silent every `abs_period`-th step…
    pub abs_period: u64,
    /// …namely the steps where `step % abs_period == abs_offset`.
    pub abs_offset: u64,
    /// Averaging window of the throughput EWMA, steps.
    pub ewma_window: f64,
    /// Floor keeping the EWMA away from zero, bits per step.
    pub ewma_floor_bits: f64,
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            cre_bias_db: 15.0,
            abs_period: 2, // macro muted one step out of two
            abs_offset: 0,
            ewma_window: 100.0,
            ewma_floor_bits: 1.0,
        }
    }
}

/// Content catalog and request pattern for one category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryConfig {
    /// Distinct items in the catalog.
    pub n_items: usize,
    /// Size of each item, bits.
    pub size_bits: u64,
    /// Steps between a request and its deadline.
    pub deadline_steps: u64,
    /// Request (want) steps are drawn uniformly from `want_min..=want_max`.
    pub want_min: u64,
    pub want_max: u64,
    /// Relative probability that a request falls in this category.
    pub mix_weight: f64,
}

/// Request workload: three content categories plus the per-user request count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadConfig {
    pub requests_per_user: usize,
    pub ebook: CategoryConfig,
    pub video: CategoryConfig,
    pub viral: CategoryConfig,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            requests_per_user: 1,
            ebook: CategoryConfig {
                n_items: 10,
                size_bits: 12_000_000,
                deadline_steps: 4000,
                want_min: 1,
                want_max: 1000,
                mix_weight: 1.0,
            },
            video: CategoryConfig {
                n_items: 10,
                size_bits: 3_000_000,
                deadline_steps: 1000,
                want_min: 1,
                want_max: 1000,
                mix_weight: 1.0,
            },
            // Single item everyone wants in a narrow window: a flash crowd.
            viral: CategoryConfig {
                n_items: 1,
                size_bits: 3_000_000,
                deadline_steps: 1000,
                want_min: 41,
                want_max: 60,
                mix_weight: 1.0,
            },
        }
    }
}

/// Load-dependent power model for one endpoint kind:
/// draw `p0_w + slope * radiated_w` while transmitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    pub p0_w: f64,
    pub slope: f64,
}

/// Per-kind energy coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConfig {
    pub macro_bs: EnergyParams,
    pub micro_bs: EnergyParams,
    pub ue: EnergyParams,
    /// Whether a base station that transmits nothing still draws `p0_w`.
    /// Idle user devices never draw (receive-side power is out of scope).
    pub idle_bs_draws_p0: bool,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            macro_bs: EnergyParams { p0_w: 130.0, slope: 4.7 },
            micro_bs: EnergyParams { p0_w: 56.0, slope: 2.6 },
            ue: EnergyParams { p0_w: 0.1, slope: 8.0 },
            idle_bs_draws_p0: true,
        }
    }
}

/// Run-level knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Steps simulated per run (1 ms each).
    pub n_steps: u64,
    /// Mobility advances and link budgets refresh every this many steps.
    pub refresh_cadence: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { n_steps: 5000, refresh_cadence: 100 }
    }
}

/// Complete simulation configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub pathloss: PathLossConfig,
    pub d2d: D2dConfig,
    pub radio: RadioConfig,
    pub adp: AdpConfig,
    pub pf: PfConfig,
    pub workload: WorkloadConfig,
    pub energy: EnergyConfig,
    pub engine: EngineConfig,
}

impl SimConfig {
    /// Desk-scale preset: one three-sector macro site, 4 micros, 60 users,
    /// 50 RBs, 5000 steps. Rollout knobs are dialed down (coarse weight grid,
    /// short horizon, capped multi-RB grants) so that a batch of comparison
    /// runs finishes in minutes on a single core.
    pub fn desk_preset() -> Self {
        let mut cfg = Self::default();
        // Wider coverage gate extends device-link reach to ~75 m so nearby
        // cluster mates can trade content directly.
        cfg.scenario.coverage_threshold_dbm = -80.0;
        // Keep the micro placement geometry the default gate would produce.
        cfg.scenario.micro_min_separation_m = Some(155.0);
        cfg.adp.alpha_granularity = 0.5;
        cfg.adp.horizon = 1;
        cfg.adp.strict_transmitter = false; // few cells: let one serve many
        cfg.adp.multi_rb = true;
        cfg.adp.max_rbs_per_downloader = 0; // whole band when useful
        cfg
    }

    /// Full-scale preset: 19 three-sector sites (57 macro endpoints),
    /// 228 micros, 3420 users. Micro separation is relaxed to 100 m so that
    /// twelve micros fit per site cell.
    pub fn paper_scale_preset() -> Self {
        let mut cfg = Self::default();
        cfg.scenario.n_macro_sites = 19;
        cfg.scenario.n_micro_per_macro = 12;
        cfg.scenario.micro_min_separation_m = Some(100.0);
        cfg.scenario.n_users = 3420;
        cfg.adp.multi_rb = true;
        cfg.adp.max_rbs_per_downloader = 0;
        cfg
    }

    /// Checks cross-field consistency. Called by scenario build and the CLI.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if s.n_macro_sites == 0 {
            return fail("scenario.n_macro_sites must be >= 1".into());
        }
        if s.sectors_per_site == 0 {
            return fail("scenario.sectors_per_site must be >= 1".into());
        }
        if s.n_rbs == 0 {
            return fail("scenario.n_rbs must be >= 1".into());
        }
        if !(s.inter_site_distance_m > 0.0) {
            return fail("scenario.inter_site_distance_m must be > 0".into());
        }
        if !(s.cluster_radius_m > 0.0) {
            return fail("scenario.cluster_radius_m must be > 0".into());
        }
        if s.user_speed_mps < 0.0 {
            return fail("scenario.user_speed_mps must be >= 0".into());
        }
        let clustered = s.users_per_micro_cluster * s.n_micro_per_macro * s.n_macro_sites;
        if clustered > s.n_users {
            return fail(format!(
                "scenario.n_users = {} cannot hold {} clustered users",
                s.n_users, clustered
            ));
        }
        for (name, p) in [
            ("pathloss.macro_ue", self.pathloss.macro_ue),
            ("pathloss.micro_ue", self.pathloss.micro_ue),
            ("pathloss.ue_ue", self.pathloss.ue_ue),
        ] {
            if !(p.d0_m > 0.0) || !(p.d_min_m > 0.0) {
                return fail(format!("{name}: reference and floor distances must be > 0"));
            }
            if p.exponent < 0.0 {
                return fail(format!("{name}: exponent must be >= 0"));
            }
        }
        let g = self.adp.alpha_granularity;
        let steps = (1.0 / g).round();
        if !(g > 0.0) || g > 1.0 || steps < 1.0 || (steps * g - 1.0).abs() > 1e-6 {
            return fail(format!("adp.alpha_granularity = {g} must divide 1 evenly"));
        }
        if self.pf.abs_period == 0 {
            return fail("pf.abs_period must be >= 1".into());
        }
        if self.pf.abs_offset >= self.pf.abs_period {
            return fail("pf.abs_offset must be < pf.abs_period".into());
        }
        if !(self.pf.ewma_window >= 1.0) {
            return fail("pf.ewma_window must be >= 1".into());
        }
        if !(self.pf.ewma_floor_bits > 0.0) {
            return fail("pf.ewma_floor_bits must be > 0".into());
        }
        if self.radio.max_bits_per_rb == 0 {
            return fail("radio.max_bits_per_rb must be >= 1".into());
        }
        let w = &self.workload;
        for (name, c) in [("ebook", w.ebook), ("video", w.video), ("viral", w.viral)] {
            if c.size_bits == 0 {
                return fail(format!("workload.{name}.size_bits must be >= 1"));
            }
            if c.deadline_steps == 0 {
                return fail(format!("workload.{name}.deadline_steps must be >= 1"));
            }
            if c.want_min > c.want_max {
                return fail(format!("workload.{name}: want_min must be <= want_max"));
            }
            if c.mix_weight < 0.0 {
                return fail(format!("workload.{name}.mix_weight must be >= 0"));
            }
            if c.mix_weight > 0.0 && c.n_items == 0 {
                return fail(format!("workload.{name}: positive mix weight but no items"));
            }
        }
        if w.ebook.mix_weight + w.video.mix_weight + w.viral.mix_weight <= 0.0 {
            return fail("workload mix weights must not all be zero".into());
        }
        if self.engine.n_steps == 0 {
            return fail("engine.n_steps must be >= 1".into());
        }
        if self.engine.refresh_cadence == 0 {
            return fail("engine.refresh_cadence must be >= 1".into());
        }
        Ok(())
    }
}

/// Errors raised while reading or validating configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line 1: expected schema tag `{CONFIG_SCHEMA}`")]
    MissingSchema,
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: key `{key}` set twice")]
    DuplicateKey { line: usize, key: String },
    #[error("config line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

// ===== Key-value serialization =====

macro_rules! config_keys {
    ($($key:literal => $field:expr, $get:expr;)*) => {
        /// Applies one `key = value` pair onto `cfg`. Returns false for unknown keys.
        fn apply_key(cfg: &mut SimConfig, key: &str, value: &str) -> Result<bool, String> {
            match key {
                $($key => { $field(cfg, value)?; Ok(true) })*
                _ => Ok(false),
            }
        }

        fn emit_keys(cfg: &SimConfig, out: &mut String) {
            $(
                let _ = writeln!(out, "{} = {}", $key, $get(cfg));
            )*
        }
    };
}

fn parse<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_opt_f64(v: &str) -> Result<Option<f64>, String> {
    if v == "none" { Ok(None) } else { parse::<f64>(v).map(Some) }
}

fn parse_opt_string(v: &str) -> Result<Option<String>, String> {
    if v == "none" { Ok(None) } else { Ok(Some(v.to_string())) }
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "none".into(),
    }
}

config_keys! {
    "scenario.n_macro_sites" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.n_macro_sites = x), |c: &SimConfig| c.scenario.n_macro_sites;
    "scenario.sectors_per_site" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.sectors_per_site = x), |c: &SimConfig| c.scenario.sectors_per_site;
    "scenario.inter_site_distance_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.inter_site_distance_m = x), |c: &SimConfig| c.scenario.inter_site_distance_m;
    "scenario.n_micro_per_macro" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.n_micro_per_macro = x), |c: &SimConfig| c.scenario.n_micro_per_macro;
    "scenario.micro_min_separation_m" => |c: &mut SimConfig, v| parse_opt_f64(v).map(|x| c.scenario.micro_min_separation_m = x), |c: &SimConfig| fmt_opt(&c.scenario.micro_min_separation_m);
    "scenario.n_users" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.n_users = x), |c: &SimConfig| c.scenario.n_users;
    "scenario.users_per_micro_cluster" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.users_per_micro_cluster = x), |c: &SimConfig| c.scenario.users_per_micro_cluster;
    "scenario.cluster_radius_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.cluster_radius_m = x), |c: &SimConfig| c.scenario.cluster_radius_m;
    "scenario.n_rbs" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.n_rbs = x), |c: &SimConfig| c.scenario.n_rbs;
    "scenario.noise_dbm_per_rb" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.noise_dbm_per_rb = x), |c: &SimConfig| c.scenario.noise_dbm_per_rb;
    "scenario.coverage_threshold_dbm" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.coverage_threshold_dbm = x), |c: &SimConfig| c.scenario.coverage_threshold_dbm;
    "scenario.user_speed_mps" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.user_speed_mps = x), |c: &SimConfig| c.scenario.user_speed_mps;
    "scenario.band_mhz" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.band_mhz = x), |c: &SimConfig| c.scenario.band_mhz;
    "scenario.carrier_ghz" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.carrier_ghz = x), |c: &SimConfig| c.scenario.carrier_ghz;
    "scenario.macro_power_dbm" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.macro_power_dbm = x), |c: &SimConfig| c.scenario.macro_power_dbm;
    "scenario.micro_power_dbm" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.micro_power_dbm = x), |c: &SimConfig| c.scenario.micro_power_dbm;
    "scenario.ue_power_dbm" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.ue_power_dbm = x), |c: &SimConfig| c.scenario.ue_power_dbm;
    "scenario.macro_height_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.macro_height_m = x), |c: &SimConfig| c.scenario.macro_height_m;
    "scenario.micro_height_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.micro_height_m = x), |c: &SimConfig| c.scenario.micro_height_m;
    "scenario.ue_height_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.ue_height_m = x), |c: &SimConfig| c.scenario.ue_height_m;
    "scenario.seed" => |c: &mut SimConfig, v| parse(v).map(|x| c.scenario.seed = x), |c: &SimConfig| c.scenario.seed;
    "pathloss.macro_ue.l0_db" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.macro_ue.l0_db = x), |c: &SimConfig| c.pathloss.macro_ue.l0_db;
    "pathloss.macro_ue.exponent" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.macro_ue.exponent = x), |c: &SimConfig| c.pathloss.macro_ue.exponent;
    "pathloss.macro_ue.d0_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.macro_ue.d0_m = x), |c: &SimConfig| c.pathloss.macro_ue.d0_m;
    "pathloss.macro_ue.d_min_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.macro_ue.d_min_m = x), |c: &SimConfig| c.pathloss.macro_ue.d_min_m;
    "pathloss.micro_ue.l0_db" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.micro_ue.l0_db = x), |c: &SimConfig| c.pathloss.micro_ue.l0_db;
    "pathloss.micro_ue.exponent" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.micro_ue.exponent = x), |c: &SimConfig| c.pathloss.micro_ue.exponent;
    "pathloss.micro_ue.d0_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.micro_ue.d0_m = x), |c: &SimConfig| c.pathloss.micro_ue.d0_m;
    "pathloss.micro_ue.d_min_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.micro_ue.d_min_m = x), |c: &SimConfig| c.pathloss.micro_ue.d_min_m;
    "pathloss.ue_ue.l0_db" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.ue_ue.l0_db = x), |c: &SimConfig| c.pathloss.ue_ue.l0_db;
    "pathloss.ue_ue.exponent" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.ue_ue.exponent = x), |c: &SimConfig| c.pathloss.ue_ue.exponent;
    "pathloss.ue_ue.d0_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.ue_ue.d0_m = x), |c: &SimConfig| c.pathloss.ue_ue.d0_m;
    "pathloss.ue_ue.d_min_m" => |c: &mut SimConfig, v| parse(v).map(|x| c.pathloss.ue_ue.d_min_m = x), |c: &SimConfig| c.pathloss.ue_ue.d_min_m;
    "d2d.target_rx_dbm" => |c: &mut SimConfig, v| parse_opt_f64(v).map(|x| c.d2d.target_rx_dbm = x), |c: &SimConfig| fmt_opt(&c.d2d.target_rx_dbm);
    "radio.max_bits_per_rb" => |c: &mut SimConfig, v| parse(v).map(|x| c.radio.max_bits_per_rb = x), |c: &SimConfig| c.radio.max_bits_per_rb;
    "radio.rate_table_path" => |c: &mut SimConfig, v| parse_opt_string(v).map(|x| c.radio.rate_table_path = x), |c: &SimConfig| fmt_opt(&c.radio.rate_table_path);
    "adp.alpha_granularity" => |c: &mut SimConfig, v| parse(v).map(|x| c.adp.alpha_granularity = x), |c: &SimConfig| c.adp.alpha_granularity;
    "adp.horizon" => |c: &mut SimConfig, v| parse(v).map(|x| c.adp.horizon = x), |c: &SimConfig| c.adp.horizon;
    "adp.strict_transmitter" => |c: &mut SimConfig, v| parse(v).map(|x| c.adp.strict_transmitter = x), |c: &SimConfig| c.adp.strict_transmitter;
    "adp.multi_rb" => |c: &mut SimConfig, v| parse(v).map(|x| c.adp.multi_rb = x), |c: &SimConfig| c.adp.multi_rb;
    "adp.max_rbs_per_downloader" => |c: &mut SimConfig, v| parse(v).map(|x| c.adp.max_rbs_per_downloader = x), |c: &SimConfig| c.adp.max_rbs_per_downloader;
    "pf.cre_bias_db" => |c: &mut SimConfig, v| parse(v).map(|x| c.pf.cre_bias_db = x), |c: &SimConfig| c.pf.cre_bias_db;
    "pf.abs_period" => |c: &mut SimConfig, v| parse(v).map(|x| c.pf.abs_period = x), |c: &SimConfig| c.pf.abs_period;
    "pf.abs_offset" => |c: &mut SimConfig, v| parse(v).map(|x| c.pf.abs_offset = x), |c: &SimConfig| c.pf.abs_offset;
    "pf.ewma_window" => |c: &mut SimConfig, v| parse(v).map(|x| c.pf.ewma_window = x), |c: &SimConfig| c.pf.ewma_window;
    "pf.ewma_floor_bits" => |c: &mut SimConfig, v| parse(v).map(|x| c.pf.ewma_floor_bits = x), |c: &SimConfig| c.pf.ewma_floor_bits;
    "workload.requests_per_user" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.requests_per_user = x), |c: &SimConfig| c.workload.requests_per_user;
    "workload.ebook.n_items" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.ebook.n_items = x), |c: &SimConfig| c.workload.ebook.n_items;
    "workload.ebook.size_bits" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.ebook.size_bits = x), |c: &SimConfig| c.workload.ebook.size_bits;
    "workload.ebook.deadline_steps" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.ebook.deadline_steps = x), |c: &SimConfig| c.workload.ebook.deadline_steps;
    "workload.ebook.want_min" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.ebook.want_min = x), |c: &SimConfig| c.workload.ebook.want_min;
    "workload.ebook.want_max" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.ebook.want_max = x), |c: &SimConfig| c.workload.ebook.want_max;
    "workload.ebook.mix_weight" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.ebook.mix_weight = x), |c: &SimConfig| c.workload.ebook.mix_weight;
    "workload.video.n_items" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.video.n_items = x), |c: &SimConfig| c.workload.video.n_items;
    "workload.video.size_bits" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.video.size_bits = x), |c: &SimConfig| c.workload.video.size_bits;
    "workload.video.deadline_steps" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.video.deadline_steps = x), |c: &SimConfig| c.workload.video.deadline_steps;
    "workload.video.want_min" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.video.want_min = x), |c: &SimConfig| c.workload.video.want_min;
    "workload.video.want_max" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.video.want_max = x), |c: &SimConfig| c.workload.video.want_max;
    "workload.video.mix_weight" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.video.mix_weight = x), |c: &SimConfig| c.workload.video.mix_weight;
    "workload.viral.n_items" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.viral.n_items = x), |c: &SimConfig| c.workload.viral.n_items;
    "workload.viral.size_bits" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.viral.size_bits = x), |c: &SimConfig| c.workload.viral.size_bits;
    "workload.viral.deadline_steps" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.viral.deadline_steps = x), |c: &SimConfig| c.workload.viral.deadline_steps;
    "workload.viral.want_min" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.viral.want_min = x), |c: &SimConfig| c.workload.viral.want_min;
    "workload.viral.want_max" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.viral.want_max = x), |c: &SimConfig| c.workload.viral.want_max;
    "workload.viral.mix_weight" => |c: &mut SimConfig, v| parse(v).map(|x| c.workload.viral.mix_weight = x), |c: &SimConfig| c.workload.viral.mix_weight;
    "energy.macro.p0_w" => |c: &mut SimConfig, v| parse(v).map(|x| c.energy.macro_bs.p0_w = x), |c: &SimConfig| c.energy.macro_bs.p0_w;
    "energy.macro.slope" => |c: &mut SimConfig, v| parse(v).map(|x| c.energy.macro_bs.slope = x), |c: &SimConfig| c.energy.macro_bs.slope;
    "energy.micro.p0_w" => |c: &mut SimConfig, v| parse(v).map(|x| c.energy.micro_bs.p0_w = x), |c: &SimConfig| c.energy.micro_bs.p0_w;
    "energy.micro.slope" => |c: &mut SimConfig, v| parse(v).map(|x| c.energy.micro_bs.slope = x), |c: &SimConfig| c.energy.micro_bs.slope;
    "energy.ue.p0_w" => |c: &mut SimConfig, v| parse(v).map(|x| c.energy.ue.p0_w = x), |c: &SimConfig| c.energy.ue.p0_w;
    "energy.ue.slope" => |c: &mut SimConfig, v| parse(v).map(|x| c.energy.ue.slope = x), |c: &SimConfig| c.energy.ue.slope;
    "energy.idle_bs_draws_p0" => |c: &mut SimConfig, v| parse(v).map(|x| c.energy.idle_bs_draws_p0 = x), |c: &SimConfig| c.energy.idle_bs_draws_p0;
    "engine.n_steps" => |c: &mut SimConfig, v| parse(v).map(|x| c.engine.n_steps = x), |c: &SimConfig| c.engine.n_steps;
    "engine.refresh_cadence" => |c: &mut SimConfig, v| parse(v).map(|x| c.engine.refresh_cadence = x), |c: &SimConfig| c.engine.refresh_cadence;
}

impl SimConfig {
    /// Renders the complete key set in config-file syntax.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CONFIG_SCHEMA}");
        emit_keys(self, &mut out);
        out
    }

    /// Parses a config file on top of `self` (unset keys keep their values).
    /// The result is validated before being returned.
    pub fn with_kv_str(&self, text: &str) -> Result<SimConfig, ConfigError> {
        let mut cfg = self.clone();
        let mut seen = BTreeSet::new();
        let mut lines = text.lines().enumerate();
        // First non-blank, non-comment line must be the schema tag.
        let mut found_schema = false;
        for (idx, raw) in &mut lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == CONFIG_SCHEMA {
                found_schema = true;
                break;
            }
            let _ = idx;
            return Err(ConfigError::MissingSchema);
        }
        if !found_schema {
            return Err(ConfigError::MissingSchema);
        }
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed { line: line_no, text: line.into() });
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey { line: line_no, key: key.into() });
            }
            match apply_key(&mut cfg, key, value) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(ConfigError::UnknownKey { line: line_no, key: key.into() })
                }
                Err(reason) => {
                    return Err(ConfigError::BadValue { line: line_no, key: key.into(), reason })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
