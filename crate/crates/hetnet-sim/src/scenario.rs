//! Scenario construction: hexagonal macro grid, micro placement, user drops,
//! log-distance path loss, link budgets, and user mobility.
//!
//! Endpoint ordering is stable and index-based: macro sector endpoints first
//! (site by site), then micro base stations, then user devices. All receivers
//! of interest are user devices, so link budgets are materialized as dense
//! `transmitter x user` tables.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, EndpointKind, PathLossParams, SimConfig};
use crate::radio::EndpointId;
use crate::transfer::{build_catalog, ContentItem};
use crate::units::dbm_to_watts;

/// A position in the horizontal plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One radio endpoint. Its id is its index in [`Scenario::endpoints`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoint {
    pub kind: EndpointKind,
    /// Position at scenario build time; user positions evolve separately.
    pub position: Point,
    pub antenna_height_m: f64,
    pub tx_power_dbm: f64,
}

/// Errors raised while building a scenario.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(
        "could not place micro {index} of site {site} with separation {separation_m:.1} m \
         after {attempts} attempts"
    )]
    MicroPlacement { site: usize, index: usize, separation_m: f64, attempts: usize },
}

/// A built scenario: endpoint population, content catalog, and geometry data
/// needed by mobility and link-budget refreshes.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub endpoints: Vec<Endpoint>,
    pub catalog: Vec<ContentItem>,
    /// Macro site centers, grid order (center outward ring by ring).
    pub sites: Vec<Point>,
    /// For each user index, the micro endpoint it is clustered around.
    pub cluster_of: Vec<Option<EndpointId>>,
    n_macro: usize,
    n_micro: usize,
}

impl Scenario {
    pub fn n_endpoints(&self) -> usize {
        self.endpoints.len()
    }

    pub fn n_macro(&self) -> usize {
        self.n_macro
    }

    pub fn n_micro(&self) -> usize {
        self.n_micro
    }

    pub fn n_bs(&self) -> usize {
        self.n_macro + self.n_micro
    }

    pub fn n_users(&self) -> usize {
        self.endpoints.len() - self.n_bs()
    }

    /// Endpoint id of the first user device.
    pub fn ue_start(&self) -> EndpointId {
        self.n_bs()
    }

    pub fn kind(&self, e: EndpointId) -> EndpointKind {
        self.endpoints[e].kind
    }

    /// Current positions at build time (engine owns the evolving copy).
    pub fn initial_positions(&self) -> Vec<Point> {
        self.endpoints.iter().map(|e| e.position).collect()
    }
}

// ===== Hex grid =====

/// Unit vectors of the three hexagon face normals (0°, 60°, 120°).
const HEX_AXES: [(f64, f64); 3] = [
    (1.0, 0.0),
    (0.5, 0.866_025_403_784_438_6),
    (-0.5, 0.866_025_403_784_438_6),
];

/// True when `p` lies in the hexagonal cell of radius `isd/2` (inradius)
/// centered at `c`.
fn point_in_hex(p: Point, c: Point, isd: f64) -> bool {
    let (dx, dy) = (p.x - c.x, p.y - c.y);
    HEX_AXES.iter().all(|&(ux, uy)| (dx * ux + dy * uy).abs() <= isd / 2.0)
}

/// Site centers of a hexagonal grid: the origin, then full rings outward,
/// each ring ordered by angle. Always returns exactly `n` sites.
pub fn hex_grid_sites(n: usize, isd: f64) -> Vec<Point> {
    let mut sites = Vec::with_capacity(n);
    let mut ring = 0i64;
    while sites.len() < n {
        let mut ring_sites = Vec::new();
        for q in -ring..=ring {
            for r in (-ring).max(-q - ring)..=ring.min(-q + ring) {
                if q.abs().max(r.abs()).max((q + r).abs()) != ring {
                    continue;
                }
                let x = isd * (q as f64 + r as f64 / 2.0);
                let y = isd * (r as f64) * 0.866_025_403_784_438_6;
                ring_sites.push(Point::new(x, y));
            }
        }
        ring_sites.sort_by(|a, b| {
            let ang = |p: &Point| {
                let a = p.y.atan2(p.x);
                if a < 0.0 { a + std::f64::consts::TAU } else { a }
            };
            ang(a).partial_cmp(&ang(b)).unwrap()
        });
        for s in ring_sites {
            if sites.len() < n {
                sites.push(s);
            }
        }
        ring += 1;
    }
    sites
}

// ===== Path loss and coverage =====

/// Log-distance path loss in dB:
/// `l0 + 10 * exponent * log10(max(d, d_min) / d0)`.
pub fn path_loss(params: &PathLossParams, distance_m: f64) -> f64 {
    let d = distance_m.max(params.d_min_m);
    params.l0_db + 10.0 * params.exponent * (d / params.d0_m).log10()
}

/// Path-loss constants for a transmitter kind (receivers are user devices).
pub fn pathloss_params(cfg: &SimConfig, tx_kind: EndpointKind) -> PathLossParams {
    match tx_kind {
        EndpointKind::MacroBs => cfg.pathloss.macro_ue,
        EndpointKind::MicroBs => cfg.pathloss.micro_ue,
        EndpointKind::Ue => cfg.pathloss.ue_ue,
    }
}

/// Distance (meters) out to which a transmitter's pilot stays above the
/// coverage threshold. Zero when even the distance floor is too lossy;
/// infinite when the loss never grows with distance (zero exponent).
pub fn coverage_radius(tx_power_dbm: f64, params: &PathLossParams, threshold_dbm: f64) -> f64 {
    let max_pl = tx_power_dbm - threshold_dbm;
    if path_loss(params, params.d_min_m) >= max_pl {
        return 0.0;
    }
    if params.exponent == 0.0 {
        return f64::INFINITY;
    }
    params.d0_m * 10f64.powf((max_pl - params.l0_db) / (10.0 * params.exponent))
}

// ===== Link budget =====

/// Dense per-link radio tables: transmit power, attenuation (linear ratio,
/// `inf` = no modeled path), and pilot coverage, for every
/// `(endpoint, user device)` pair.
#[derive(Debug, Clone)]
pub struct LinkBudget {
    /// Flat per-endpoint transmit power, watts.
    tx_power_w: Vec<f64>,
    /// `attenuation[tx * n_users + user_index]`, linear ratio >= 1 or `inf`.
    attenuation: Vec<f64>,
    /// Pilot coverage per `(tx, user)` pair.
    covered: Vec<bool>,
    ue_start: usize,
    /// Device-to-device closed-loop power: `(cap_w, target_rx_w)`.
    d2d_control: Option<(f64, f64)>,
}

impl LinkBudget {
    /// Builds a budget from explicit tables (tests and synthetic setups).
    /// `attenuation` and `covered` are `n_endpoints x n_users` row-major with
    /// users being endpoints `ue_start..`.
    pub fn from_parts(
        tx_power_w: Vec<f64>,
        attenuation: Vec<f64>,
        covered: Vec<bool>,
        ue_start: usize,
    ) -> Self {
        let n_users = tx_power_w.len() - ue_start;
        assert_eq!(attenuation.len(), tx_power_w.len() * n_users);
        assert_eq!(covered.len(), attenuation.len());
        Self { tx_power_w, attenuation, covered, ue_start, d2d_control: None }
    }

    /// Enables the device-to-device transmit-power rule
    /// `min(cap, target * attenuation)` (the linear form of
    /// "target receive level plus path loss, capped").
    pub fn set_d2d_control(&mut self, cap_w: f64, target_rx_w: f64) {
        self.d2d_control = Some((cap_w, target_rx_w));
    }

    pub fn n_endpoints(&self) -> usize {
        self.tx_power_w.len()
    }

    pub fn n_users(&self) -> usize {
        self.n_endpoints() - self.ue_start
    }

    pub fn ue_start(&self) -> usize {
        self.ue_start
    }

    pub fn is_user(&self, e: EndpointId) -> bool {
        e >= self.ue_start
    }

    /// User-list index of a user endpoint.
    pub fn user_index(&self, e: EndpointId) -> usize {
        debug_assert!(self.is_user(e));
        e - self.ue_start
    }

    /// Endpoint id of the `u`-th user.
    pub fn user_endpoint(&self, u: usize) -> EndpointId {
        self.ue_start + u
    }

    /// Transmit power of `tx` toward `rx`, watts.
    pub fn power(&self, tx: EndpointId, rx: EndpointId) -> f64 {
        let base = self.tx_power_w[tx];
        match self.d2d_control {
            Some((cap_w, target_w)) if self.is_user(tx) => {
                let a = self.attenuation(tx, rx);
                if a.is_finite() { (target_w * a).min(cap_w) } else { cap_w }
            }
            _ => base.min(f64::INFINITY),
        }
    }

    /// Linear attenuation from `tx` to `rx`; `inf` when no path is modeled
    /// (including any receiver that is not a user device).
    pub fn attenuation(&self, tx: EndpointId, rx: EndpointId) -> f64 {
        if !self.is_user(rx) || tx == rx {
            return f64::INFINITY;
        }
        self.attenuation[tx * self.n_users() + self.user_index(rx)]
    }

    /// Whether the received pilot on `tx -> rx` strictly clears the coverage
    /// threshold.
    pub fn covered(&self, tx: EndpointId, rx: EndpointId) -> bool {
        if !self.is_user(rx) || tx == rx {
            return false;
        }
        self.covered[tx * self.n_users() + self.user_index(rx)]
    }

    /// Test helper: force one pair's coverage bit.
    pub fn set_covered(&mut self, tx: EndpointId, rx: EndpointId, value: bool) {
        let n = self.n_users();
        let idx = tx * n + self.user_index(rx);
        self.covered[idx] = value;
    }
}

/// Materializes the link budget for the given user positions.
///
/// Attenuation uses the per-class log-distance model; coverage compares the
/// received pilot level (with the transmitter's own, possibly power-controlled
/// level for device-to-device pairs) strictly against the threshold.
pub fn compute_link_budget(scenario: &Scenario, positions: &[Point], cfg: &SimConfig) -> LinkBudget {
    let n = scenario.n_endpoints();
    let ue_start = scenario.ue_start();
    let n_users = scenario.n_users();
    let threshold = cfg.scenario.coverage_threshold_dbm;
    let cap_dbm = cfg.scenario.ue_power_dbm;

    let tx_power_w: Vec<f64> =
        scenario.endpoints.iter().map(|e| dbm_to_watts(e.tx_power_dbm)).collect();
    let mut attenuation = vec![f64::INFINITY; n * n_users];
    let mut covered = vec![false; n * n_users];

    for tx in 0..n {
        let params = pathloss_params(cfg, scenario.kind(tx));
        let tx_dbm = scenario.endpoints[tx].tx_power_dbm;
        for u in 0..n_users {
            let rx = ue_start + u;
            if rx == tx {
                continue;
            }
            let d = positions[tx].distance(&positions[rx]);
            let pl_db = path_loss(&params, d);
            attenuation[tx * n_users + u] = crate::units::db_to_linear(pl_db);
            let eff_dbm = match cfg.d2d.target_rx_dbm {
                Some(target) if scenario.kind(tx) == EndpointKind::Ue => {
                    (target + pl_db).min(cap_dbm)
                }
                _ => tx_dbm,
            };
            covered[tx * n_users + u] = eff_dbm - pl_db > threshold;
        }
    }

    let mut lb = LinkBudget { tx_power_w, attenuation, covered, ue_start, d2d_control: None };
    if let Some(target_dbm) = cfg.d2d.target_rx_dbm {
        lb.set_d2d_control(dbm_to_watts(cap_dbm), dbm_to_watts(target_dbm));
    }
    lb
}

// ===== Scenario build =====

/// Draws a point uniformly inside the hexagonal cell around `center`.
fn sample_in_hex(rng: &mut ChaCha8Rng, center: Point, isd: f64) -> Point {
    // Rejection from the bounding box; acceptance ratio ~0.65.
    let r_out = isd / 3f64.sqrt(); // circumradius
    loop {
        let x = rng.gen_range(-r_out..=r_out);
        let y = rng.gen_range(-(isd / 2.0)..=(isd / 2.0));
        let p = Point::new(center.x + x, center.y + y);
        if point_in_hex(p, center, isd) {
            return p;
        }
    }
}

/// Draws a point uniformly inside a disc.
fn sample_in_disc(rng: &mut ChaCha8Rng, center: Point, radius: f64) -> Point {
    let r = radius * rng.gen_range(0f64..=1.0).sqrt();
    let theta = rng.gen_range(0f64..std::f64::consts::TAU);
    Point::new(center.x + r * theta.cos(), center.y + r * theta.sin())
}

const MICRO_PLACEMENT_ATTEMPTS: usize = 1000;

/// Builds the scenario for a validated configuration: hexagonal site grid,
/// per-site micro drops with a minimum pairwise separation, clustered and
/// uniform user drops, and the content catalog. Deterministic in
/// `cfg.scenario.seed`.
pub fn build_scenario(cfg: &SimConfig) -> Result<Scenario, ScenarioError> {
    cfg.validate()?;
    let s = &cfg.scenario;
    let mut rng = crate::seeded_rng(s.seed, crate::RngStream::Scenario);
    let isd = s.inter_site_distance_m;
    let sites = hex_grid_sites(s.n_macro_sites, isd);

    let mut endpoints = Vec::new();
    for &site in &sites {
        for _ in 0..s.sectors_per_site {
            endpoints.push(Endpoint {
                kind: EndpointKind::MacroBs,
                position: site,
                antenna_height_m: s.macro_height_m,
                tx_power_dbm: s.macro_power_dbm,
            });
        }
    }
    let n_macro = endpoints.len();

    // Micro drops: uniform in each site cell, pairwise separation within the
    // cell of at least the configured value (default: touching pilot discs).
    let separation = s.micro_min_separation_m.unwrap_or_else(|| {
        2.0 * coverage_radius(s.micro_power_dbm, &cfg.pathloss.micro_ue, s.coverage_threshold_dbm)
    });
    let mut micro_positions: Vec<Point> = Vec::new();
    for (site_idx, &site) in sites.iter().enumerate() {
        let site_micro_start = micro_positions.len();
        for m in 0..s.n_micro_per_macro {
            let mut placed = None;
            for _ in 0..MICRO_PLACEMENT_ATTEMPTS {
                let p = sample_in_hex(&mut rng, site, isd);
                let clear = micro_positions[site_micro_start..]
                    .iter()
                    .all(|q| p.distance(q) >= separation);
                if clear {
                    placed = Some(p);
                    break;
                }
            }
            match placed {
                Some(p) => micro_positions.push(p),
                None => {
                    return Err(ScenarioError::MicroPlacement {
                        site: site_idx,
                        index: m,
                        separation_m: separation,
                        attempts: MICRO_PLACEMENT_ATTEMPTS,
                    })
                }
            }
        }
    }
    let n_micro = micro_positions.len();
    for &p in &micro_positions {
        endpoints.push(Endpoint {
            kind: EndpointKind::MicroBs,
            position: p,
            antenna_height_m: s.micro_height_m,
            tx_power_dbm: s.micro_power_dbm,
        });
    }

    // User drops: fixed-size clusters around each micro, remainder uniform
    // over the union of site cells.
    let mut cluster_of = Vec::with_capacity(s.n_users);
    let mut user_positions = Vec::with_capacity(s.n_users);
    for micro_idx in 0..n_micro {
        let micro_ep = n_macro + micro_idx;
        for _ in 0..s.users_per_micro_cluster {
            user_positions.push(sample_in_disc(&mut rng, micro_positions[micro_idx], s.cluster_radius_m));
            cluster_of.push(Some(micro_ep));
        }
    }
    while user_positions.len() < s.n_users {
        let site = sites[rng.gen_range(0..sites.len())];
        user_positions.push(sample_in_hex(&mut rng, site, isd));
        cluster_of.push(None);
    }
    for &p in &user_positions {
        endpoints.push(Endpoint {
            kind: EndpointKind::Ue,
            position: p,
            antenna_height_m: s.ue_height_m,
            tx_power_dbm: s.ue_power_dbm,
        });
    }

    Ok(Scenario {
        endpoints,
        catalog: build_catalog(&cfg.workload),
        sites,
        cluster_of,
        n_macro,
        n_micro,
    })
}

// ===== Mobility =====

/// Advances every user by `dt_steps` random-walk steps of length
/// `speed * 1 ms` each. Clustered users stay inside their cluster disc
/// (walks are projected back to the boundary); uniform users stay inside the
/// network area (walks leaving it are skipped). Base stations do not move.
pub fn step_mobility(
    scenario: &Scenario,
    positions: &mut [Point],
    dt_steps: u64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) {
    let step_len = cfg.scenario.user_speed_mps * 1e-3;
    let isd = cfg.scenario.inter_site_distance_m;
    let ue_start = scenario.ue_start();
    for _ in 0..dt_steps {
        for u in 0..scenario.n_users() {
            let theta = rng.gen_range(0f64..std::f64::consts::TAU);
            let e = ue_start + u;
            let cand = Point::new(
                positions[e].x + step_len * theta.cos(),
                positions[e].y + step_len * theta.sin(),
            );
            match scenario.cluster_of[u] {
                Some(micro_ep) => {
                    let c = positions[micro_ep];
                    let r = cfg.scenario.cluster_radius_m;
                    let d = cand.distance(&c);
                    positions[e] = if d <= r {
                        cand
                    } else {
                        // Project back onto the disc boundary.
                        Point::new(c.x + (cand.x - c.x) * r / d, c.y + (cand.y - c.y) * r / d)
                    };
                }
                None => {
                    if scenario.sites.iter().any(|&site| point_in_hex(cand, site, isd)) {
                        positions[e] = cand;
                    }
                }
            }
        }
    }
}
