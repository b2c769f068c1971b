//! Synthetic scenario generation: road networks, commuter demand with
//! surge events, Dijkstra route planning with per-hop ETAs, and a
//! mesoscopic slot-level traffic loop driven by the triangular
//! flow–density relationship.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::navlog::{NavigationLog, RouteRecord};
use crate::network::{RoadClass, RoadNetwork, Segment};
use crate::seed;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::rc::Rc;
use std::str::FromStr;

/// Emitted dataset file names (formats defined in [`crate::io`]).
pub const NETWORK_FILE: &str = "network.txt";
pub const TRAVELTIME_FILE: &str = "traveltime.tsv";
pub const NAVLOG_FILE: &str = "navlog.txt";

// ---------------------------------------------------------------------
// Fundamental diagram
// ---------------------------------------------------------------------

/// Density breakpoints of one road class, in vehicles per km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdClassParams {
    /// Critical density: free flow at or below it.
    pub k_c: f64,
    /// Jam density: flow approaches zero as density approaches it.
    pub k_j: f64,
}

/// Triangular flow–density relationship. Below the critical density a
/// segment runs at its free-flow speed; above it, flow decays linearly
/// to zero at the jam density, which makes the speed
/// `q_max (k_j − k) / (k (k_j − k_c))` with `q_max = v_f k_c`. Speeds
/// saturate at `v_min_kmh` so jam density never divides by zero.
///
/// The density constants are declared synthetic-scenario values chosen
/// so congestion emerges at this scenario's demand levels; they are not
/// calibrated to any real network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FundamentalDiagram {
    pub v_min_kmh: f64,
    pub freeway: FdClassParams,
    pub highway: FdClassParams,
    pub expressway: FdClassParams,
    pub major: FdClassParams,
}

impl Default for FundamentalDiagram {
    fn default() -> Self {
        Self {
            v_min_kmh: 5.0,
            freeway: FdClassParams { k_c: 20.0, k_j: 120.0 },
            highway: FdClassParams { k_c: 18.0, k_j: 108.0 },
            expressway: FdClassParams { k_c: 16.0, k_j: 96.0 },
            major: FdClassParams { k_c: 12.0, k_j: 72.0 },
        }
    }
}

impl FundamentalDiagram {
    pub fn params(&self, class: RoadClass) -> FdClassParams {
        match class {
            RoadClass::Freeway => self.freeway,
            RoadClass::Highway => self.highway,
            RoadClass::Expressway => self.expressway,
            RoadClass::Major => self.major,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min_kmh > 0.0) {
            return Err(Error::Sim(format!(
                "saturation speed must be positive, got {}",
                self.v_min_kmh
            )));
        }
        for class in RoadClass::ALL {
            let p = self.params(class);
            if !(p.k_c > 0.0 && p.k_c < p.k_j) {
                return Err(Error::Sim(format!(
                    "{class:?} densities must satisfy 0 < k_c < k_j, got k_c = {}, k_j = {}",
                    p.k_c, p.k_j
                )));
            }
        }
        Ok(())
    }

    /// Speed in km/h at density `k` (veh/km) for a segment of the given
    /// class and free-flow speed.
    pub fn speed_kmh(&self, class: RoadClass, v_f: f64, k: f64) -> f64 {
        let p = self.params(class);
        if k <= p.k_c {
            return v_f;
        }
        let q_max = v_f * p.k_c;
        let v = q_max * (p.k_j - k) / (k * (p.k_j - p.k_c));
        v.max(self.v_min_kmh).min(v_f)
    }
}

// ---------------------------------------------------------------------
// Network generation
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    Grid,
    RingRadial,
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkKind::Grid => "grid",
            NetworkKind::RingRadial => "ring-radial",
        })
    }
}

impl FromStr for NetworkKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(NetworkKind::Grid),
            "ring-radial" => Ok(NetworkKind::RingRadial),
            other => Err(Error::Config(format!(
                "unknown network kind {other:?} (expected grid or ring-radial)"
            ))),
        }
    }
}

fn class_speed(class: RoadClass) -> f64 {
    match class {
        RoadClass::Freeway => 100.0,
        RoadClass::Highway => 80.0,
        RoadClass::Expressway => 60.0,
        RoadClass::Major => 50.0,
    }
}

/// Generate a strongly connected two-way network with mixed road
/// classes. `Grid` builds the smallest g×g lattice with at least
/// `n_target` directed segments (4·g·(g−1) of them); `RingRadial`
/// builds a ring of m nodes plus center spokes (4·m segments). Node
/// positions carry seeded jitter, and segment lengths follow the node
/// geometry.
pub fn generate_network(kind: NetworkKind, n_target: usize, seed: u64) -> Result<RoadNetwork> {
    if n_target < 4 {
        return Err(Error::Sim(format!(
            "n_target = {n_target} is too small for any network kind (need at least 4)"
        )));
    }
    let mut rng = seed::rng(seed, "network-jitter");
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng| rng.gen_range(-0.12..0.12);
    let net = match kind {
        NetworkKind::Grid => {
            let mut g = 2;
            while 4 * g * (g - 1) < n_target {
                g += 1;
            }
            let spacing = 1.6;
            let mut node_xy = Vec::with_capacity(g * g);
            for r in 0..g {
                for c in 0..g {
                    node_xy
                        .push((c as f64 * spacing + jitter(&mut rng), r as f64 * spacing + jitter(&mut rng)));
                }
            }
            let mut builder = NetworkBuilder::new(node_xy);
            for r in 0..g {
                for c in 0..g {
                    let here = r * g + c;
                    if c + 1 < g {
                        let class = if r == 0 || r == g - 1 {
                            RoadClass::Highway
                        } else if r == 1 {
                            RoadClass::Freeway
                        } else {
                            RoadClass::Expressway
                        };
                        builder.two_way(here, here + 1, class);
                    }
                    if r + 1 < g {
                        let class = if c == 0 || c == g - 1 {
                            RoadClass::Expressway
                        } else {
                            RoadClass::Major
                        };
                        builder.two_way(here, here + g, class);
                    }
                }
            }
            builder.build()?
        }
        NetworkKind::RingRadial => {
            let mut m = 3;
            while 4 * m < n_target {
                m += 1;
            }
            let radius = 2.0;
            let mut node_xy = Vec::with_capacity(m + 1);
            for i in 0..m {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                node_xy.push((
                    radius * angle.cos() + jitter(&mut rng),
                    radius * angle.sin() + jitter(&mut rng),
                ));
            }
            node_xy.push((jitter(&mut rng), jitter(&mut rng))); // center
            let center = m;
            let mut builder = NetworkBuilder::new(node_xy);
            for i in 0..m {
                builder.two_way(i, (i + 1) % m, RoadClass::Expressway);
            }
            for i in 0..m {
                let class = if i % 3 == 0 { RoadClass::Highway } else { RoadClass::Major };
                builder.two_way(i, center, class);
            }
            builder.build()?
        }
    };
    if !net.strongly_connected() {
        return Err(Error::Sim("generated network is not strongly connected".into()));
    }
    Ok(net)
}

struct NetworkBuilder {
    node_xy: Vec<(f64, f64)>,
    segments: Vec<Segment>,
}

impl NetworkBuilder {
    fn new(node_xy: Vec<(f64, f64)>) -> Self {
        Self { node_xy, segments: Vec::new() }
    }

    fn two_way(&mut self, a: usize, b: usize, class: RoadClass) {
        let (ax, ay) = self.node_xy[a];
        let (bx, by) = self.node_xy[b];
        let length_m = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt() * 1000.0;
        for (from, to) in [(a, b), (b, a)] {
            self.segments.push(Segment {
                id: self.segments.len(),
                from,
                to,
                length_m,
                class,
                free_flow_kmh: class_speed(class),
            });
        }
    }

    fn build(self) -> Result<RoadNetwork> {
        RoadNetwork::new(self.node_xy, self.segments)
    }
}

// ---------------------------------------------------------------------
// Demand
// ---------------------------------------------------------------------

/// One origin → destination flow, Poisson-distributed per slot with a
/// weekly-periodic commute profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: usize,
    pub dest: usize,
    /// Vehicles per slot when the commute profile is 1.
    pub base_rate: f64,
    /// Inbound pairs peak in the morning, outbound in the evening.
    pub inbound: bool,
}

/// A transient demand spike: extra vehicles per slot from each origin
/// node toward a common destination. Surges are the source of
/// non-recurring congestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surge {
    pub origin_nodes: Vec<usize>,
    pub dest: usize,
    pub start_slot: usize,
    pub duration_slots: usize,
    /// Extra vehicles per slot per origin node while active.
    pub rate: f64,
}

impl Surge {
    pub fn active(&self, slot: usize) -> bool {
        slot >= self.start_slot && slot < self.start_slot + self.duration_slots
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub od_pairs: Vec<OdPair>,
    pub surges: Vec<Surge>,
    /// Fraction of vehicles whose plans enter the navigation log.
    pub p_nav: f64,
    /// Multiplier applied to commute rates on days 5 and 6 of each week.
    pub weekend_factor: f64,
}

/// Upper bound on any single Poisson rate, imposed by the
/// inverse-transform sampler (e^{−λ} must stay representable).
pub const MAX_RATE_PER_SLOT: f64 = 400.0;

/// Day-to-day smoothing factor for the habitual travel times commuters
/// plan against during the habit-formation week.
pub const HABIT_LEARNING_RATE: f64 = 0.5;

/// Commuters adapt their habitual costs for this many days, then the
/// habit is frozen: routines are set, and later anomalies (surges, one
/// lucky free run) no longer reroute the daily commute. A frozen habit
/// keeps weekday loads day-invariant, which is what makes recurring
/// congestion recur.
pub const HABIT_FORMATION_DAYS: usize = 7;

/// Number of cost-perception classes for commuter route choice. Each
/// class plans on an independently jittered copy of the habitual
/// travel times, so flow between near-equal routes splits smoothly
/// instead of herding onto a single argmin that flips day to day.
pub const ROUTE_CHOICE_CLASSES: usize = 4;

/// Multiplicative log-normal spread of per-segment perceived cost
/// across route-choice classes.
pub const ROUTE_CHOICE_SPREAD: f64 = 0.15;

impl DemandModel {
    pub fn validate(&self, n_nodes: usize, total_slots: usize) -> Result<()> {
        if !(self.p_nav > 0.0 && self.p_nav <= 1.0) {
            return Err(Error::Sim(format!(
                "p_nav must lie in (0, 1], got {}",
                self.p_nav
            )));
        }
        if !(self.weekend_factor >= 0.0) {
            return Err(Error::Sim("weekend factor must be non-negative".into()));
        }
        for od in &self.od_pairs {
            if od.origin == od.dest || od.origin >= n_nodes || od.dest >= n_nodes {
                return Err(Error::Sim(format!(
                    "OD pair {} -> {} invalid for {n_nodes} nodes",
                    od.origin, od.dest
                )));
            }
            if !(od.base_rate >= 0.0 && od.base_rate <= MAX_RATE_PER_SLOT) {
                return Err(Error::Sim(format!(
                    "OD rate {} outside [0, {MAX_RATE_PER_SLOT}]",
                    od.base_rate
                )));
            }
        }
        for surge in &self.surges {
            if surge.origin_nodes.is_empty() {
                return Err(Error::Sim("surge has no origin nodes".into()));
            }
            for &o in &surge.origin_nodes {
                if o == surge.dest || o >= n_nodes {
                    return Err(Error::Sim(format!(
                        "surge origin {o} invalid (dest {}, {n_nodes} nodes)",
                        surge.dest
                    )));
                }
            }
            if surge.dest >= n_nodes {
                return Err(Error::Sim(format!("surge destination {} out of range", surge.dest)));
            }
            if !(surge.rate >= 0.0 && surge.rate <= MAX_RATE_PER_SLOT) {
                return Err(Error::Sim(format!(
                    "surge rate {} outside [0, {MAX_RATE_PER_SLOT}]",
                    surge.rate
                )));
            }
            if surge.start_slot + surge.duration_slots > total_slots {
                return Err(Error::Sim(format!(
                    "surge [{}, {}) leaves the simulated span of {total_slots} slots",
                    surge.start_slot,
                    surge.start_slot + surge.duration_slots
                )));
            }
        }
        Ok(())
    }

    /// Poisson rate of one OD pair at an absolute slot.
    pub fn rate(&self, od: &OdPair, slot: usize, grid: &TimeGrid) -> f64 {
        let weekday = grid.day_of(slot) % 7;
        let day_factor = if weekday >= 5 { self.weekend_factor } else { 1.0 };
        od.base_rate * day_factor * commute_profile(grid.minutes_after_midnight(slot), od.inbound)
    }

    /// Commuter demand for a generated network: every outer node
    /// exchanges traffic with the nodes nearest the centroid
    /// (morning-inbound, evening-outbound), plus one seeded surge
    /// event per week spread over the whole simulated span.
    ///
    /// `demand_scale` is a relative multiplier on the calibrated demand
    /// level; at 1.0 the default grid saturates its inbound corridors
    /// through the commute plateau while staying free-flowing off-peak.
    pub fn standard(
        net: &RoadNetwork,
        grid: &TimeGrid,
        demand_scale: f64,
        p_nav: f64,
        seed: u64,
    ) -> Self {
        let n_nodes = net.n_nodes();
        let cx = net.node_xy.iter().map(|p| p.0).sum::<f64>() / n_nodes as f64;
        let cy = net.node_xy.iter().map(|p| p.1).sum::<f64>() / n_nodes as f64;
        let dist2 = |i: usize| {
            let (x, y) = net.node_xy[i];
            (x - cx).powi(2) + (y - cy).powi(2)
        };
        let mut by_center: Vec<usize> = (0..n_nodes).collect();
        by_center.sort_by(|&a, &b| dist2(a).total_cmp(&dist2(b)).then(a.cmp(&b)));
        let n_center = (n_nodes / 4).max(1);
        let centers = &by_center[..n_center];
        let outers = &by_center[n_center..];

        let per_pair = 409.6 * demand_scale / n_center as f64;
        let mut od_pairs = Vec::new();
        for &b in outers {
            for &c in centers {
                od_pairs.push(OdPair { origin: b, dest: c, base_rate: per_pair, inbound: true });
                od_pairs.push(OdPair { origin: c, dest: b, base_rate: per_pair, inbound: false });
            }
        }

        let mut rng = seed::rng(seed, "demand-surges");
        let weeks = grid.weeks_train + grid.weeks_test;
        let spd = grid.slots_per_day;
        let mut surges = Vec::new();
        for week in 0..weeks {
            for _ in 0..1 {
                let day = rng.gen_range(0..7usize);
                let start_min = rng.gen_range(60..=840usize); // 07:00–20:00
                let offset = start_min / grid.slot_minutes;
                let duration = rng.gen_range(6..=12usize).min(spd - offset);
                let epicenter = outers[rng.gen_range(0..outers.len())];
                let (ex, ey) = net.node_xy[epicenter];
                let near2 = |i: usize| {
                    let (x, y) = net.node_xy[i];
                    (x - ex).powi(2) + (y - ey).powi(2)
                };
                let mut by_near: Vec<usize> = (0..n_nodes).collect();
                by_near.sort_by(|&a, &b| near2(a).total_cmp(&near2(b)).then(a.cmp(&b)));
                let origin_nodes: Vec<usize> = by_near[..3.min(n_nodes - 1)].to_vec();
                let dest = *by_near.last().expect("nonempty network");
                let rate = rng.gen_range(12.0..24.0);
                surges.push(Surge {
                    origin_nodes: origin_nodes
                        .into_iter()
                        .filter(|&o| o != dest)
                        .collect(),
                    dest,
                    start_slot: (week * 7 + day) * spd + offset,
                    duration_slots: duration,
                    rate,
                });
            }
        }
        Self { od_pairs, surges, p_nav, weekend_factor: 0.03 }
    }
}

/// Weekly commute profile over minutes after midnight: plateau peaks
/// 07:00–08:45 and 17:00–18:45 with steep (15-minute) cosine flanks on
/// top of a flat background, mirrored for outbound flows. Steep flanks
/// make rush hour start and end at the same slots every day, so the
/// recurring congestion it induces is reliably periodic.
fn commute_profile(minutes: usize, inbound: bool) -> f64 {
    let plateau = |start: f64, end: f64| {
        let ramp = 15.0;
        let m = minutes as f64;
        if m <= start - ramp || m >= end + ramp {
            0.0
        } else if m < start {
            0.5 * (1.0 + (std::f64::consts::PI * (start - m) / ramp).cos())
        } else if m > end {
            0.5 * (1.0 + (std::f64::consts::PI * (m - end) / ramp).cos())
        } else {
            1.0
        }
    };
    let am = plateau(420.0, 525.0);
    let pm = plateau(1020.0, 1125.0);
    if inbound {
        0.01 + 1.0 * am + 0.10 * pm
    } else {
        0.01 + 0.10 * am + 1.0 * pm
    }
}

/// Poisson quantile by inverse transform: smallest k with CDF(k) ≥ u.
/// One uniform per draw keeps paired scenario runs aligned, and the
/// quantile is monotone in λ, so raising a rate never lowers a count.
fn poisson_inverse(lambda: f64, u: f64) -> Result<usize> {
    if lambda == 0.0 {
        return Ok(0);
    }
    if !(lambda > 0.0 && lambda <= MAX_RATE_PER_SLOT) {
        return Err(Error::Sim(format!(
            "arrival rate {lambda} outside (0, {MAX_RATE_PER_SLOT}]"
        )));
    }
    let mut k = 0usize;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        if k > 100_000 {
            return Err(Error::Sim(format!("Poisson sampler failed to converge at rate {lambda}")));
        }
    }
    Ok(k)
}

// ---------------------------------------------------------------------
// Route planning
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    cost_s: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // reversed: BinaryHeap is a max-heap, we want the cheapest first
        other
            .cost_s
            .total_cmp(&self.cost_s)
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

struct PlannedRoute {
    /// Hops with planned arrival slots, as logged.
    hops: Vec<(usize, Option<usize>)>,
    /// Slot in which the vehicle leaves the last hop, when still inside
    /// the launch day.
    final_exit: Option<usize>,
}

/// Plan the minimum-travel-time route under the supplied per-segment
/// travel times (s/m), with per-hop arrival slots floored from the
/// cumulative along-route seconds. Arrivals past the end of the launch
/// day (or the grid) are `None`.
pub fn plan_route(
    net: &RoadNetwork,
    tau: &[f64],
    origin: usize,
    dest: usize,
    launch_slot: usize,
    grid: &TimeGrid,
    route_id: usize,
) -> Result<RouteRecord> {
    let plan = plan_internal(net, tau, origin, dest, launch_slot, grid)?;
    Ok(RouteRecord { route_id, launch_slot, hops: plan.hops })
}

fn plan_internal(
    net: &RoadNetwork,
    tau: &[f64],
    origin: usize,
    dest: usize,
    launch_slot: usize,
    grid: &TimeGrid,
) -> Result<PlannedRoute> {
    let n_nodes = net.n_nodes();
    if origin == dest || origin >= n_nodes || dest >= n_nodes {
        return Err(Error::Sim(format!(
            "invalid route request {origin} -> {dest} on {n_nodes} nodes"
        )));
    }
    if tau.len() != net.n_segments() {
        return Err(Error::Shape(format!(
            "travel-time vector has {} entries for {} segments",
            tau.len(),
            net.n_segments()
        )));
    }
    let mut cost = vec![f64::INFINITY; n_nodes];
    let mut parent_seg: Vec<Option<usize>> = vec![None; n_nodes];
    let mut heap = BinaryHeap::new();
    cost[origin] = 0.0;
    heap.push(HeapEntry { cost_s: 0.0, node: origin });
    while let Some(HeapEntry { cost_s, node }) = heap.pop() {
        if cost_s > cost[node] {
            continue;
        }
        if node == dest {
            break;
        }
        for &seg_id in net.segments_from_node(node) {
            let seg = &net.segments[seg_id];
            let next_cost = cost_s + tau[seg_id] * seg.length_m;
            if next_cost < cost[seg.to] {
                cost[seg.to] = next_cost;
                parent_seg[seg.to] = Some(seg_id);
                heap.push(HeapEntry { cost_s: next_cost, node: seg.to });
            }
        }
    }
    if cost[dest].is_infinite() {
        return Err(Error::Sim(format!(
            "destination node {dest} is unreachable from node {origin}"
        )));
    }
    let mut segs = Vec::new();
    let mut at = dest;
    while at != origin {
        let seg_id = parent_seg[at].expect("finite cost implies a parent");
        segs.push(seg_id);
        at = net.segments[seg_id].from;
    }
    segs.reverse();

    let slot_seconds = (grid.slot_minutes * 60) as f64;
    let to_slot = |cum_s: f64| -> Option<usize> {
        let slot = launch_slot + (cum_s / slot_seconds).floor() as usize;
        (slot < grid.total_slots() && grid.same_day(launch_slot, slot)).then_some(slot)
    };
    let mut cum_s = 0.0;
    let mut hops = Vec::with_capacity(segs.len());
    for &seg_id in &segs {
        hops.push((seg_id, to_slot(cum_s)));
        cum_s += tau[seg_id] * net.segments[seg_id].length_m;
    }
    Ok(PlannedRoute { hops, final_exit: to_slot(cum_s) })
}

// ---------------------------------------------------------------------
// Traffic propagation
// ---------------------------------------------------------------------

/// How vehicles move: `Live` advances them at each slot's realized
/// speeds; `Replay` makes every vehicle follow its plan exactly, hop by
/// hop at the planned arrival slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    Live,
    Replay,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub spawned: usize,
    pub arrived: usize,
    pub dropped_at_day_end: usize,
    pub logged_routes: usize,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Ground-truth travel time, n × S, in s/m.
    pub tau: Tensor,
    /// Realized entry counts (all vehicles), n × S.
    pub volume: Tensor,
    pub log: NavigationLog,
    pub stats: SimStats,
}

struct Vehicle {
    plan: Rc<PlannedRoute>,
    hop: usize,
    pos_m: f64,
}

/// Run the mesoscopic slot loop. Per slot: spawn Poisson arrivals per
/// demand source and plan their routes against the previous slot's
/// travel times (free flow at each day start), derive each segment's
/// speed from its occupancy through the fundamental diagram, then
/// advance vehicles. Vehicles still in flight when the day window
/// closes are dropped. Requires the canonical 5-minute slot length.
pub fn propagate_traffic(
    net: &RoadNetwork,
    demand: &DemandModel,
    fd: &FundamentalDiagram,
    grid: &TimeGrid,
    mode: SimMode,
    seed: u64,
) -> Result<SimOutput> {
    if grid.slot_minutes != 5 {
        return Err(Error::Sim(format!(
            "the traffic loop is defined on 5-minute slots, got {}-minute",
            grid.slot_minutes
        )));
    }
    demand.validate(net.n_nodes(), grid.total_slots())?;
    fd.validate()?;
    let n = net.n_segments();
    let s_total = grid.total_slots();
    let slot_seconds = (grid.slot_minutes * 60) as f64;

    let mut tau = vec![0.0; n * s_total];
    let mut volume = vec![0.0; n * s_total];
    let mut log = NavigationLog::default();
    let mut stats = SimStats::default();
    let mut rng_bg = seed::rng(seed, "sim-background");
    let mut rng_surge = seed::rng(seed, "sim-surge");
    let mut rng_nav = seed::rng(seed, "sim-logged");
    let mut rng_choice = seed::rng(seed, "sim-choice");
    let choice_noise = rand_distr::Normal::new(0.0, ROUTE_CHOICE_SPREAD)
        .map_err(|e| Error::Sim(format!("route-choice noise: {e}")))?;

    let free_tau: Vec<f64> = net.segments.iter().map(Segment::free_flow_tau).collect();
    let mut planning_tau = free_tau.clone();
    let mut speeds = vec![0.0; n];
    let mut occupancy = vec![0usize; n];
    let mut vehicles: Vec<Vehicle> = Vec::new();
    let mut next_route_id = 0usize;

    // Commuters route habitually: against a smoothed day-to-day
    // average of realized travel times per slot-of-day, seeded at free
    // flow. Exponential smoothing damps the oscillation that pure
    // best-response planning produces (everyone avoiding yesterday's
    // jam recreates it elsewhere), so congestion settles into a stable
    // daily pattern. Surge traffic is event-driven and plans against
    // the live (previous-slot) state instead.
    let spd = grid.slots_per_day;
    let mut habit: Vec<f64> = (0..n * spd).map(|idx| free_tau[idx / spd]).collect();

    for t in 0..s_total {
        if grid.slot_of_day(t) == 0 {
            // the network empties overnight
            planning_tau.copy_from_slice(&free_tau);
            if t > 0 && t / spd <= HABIT_FORMATION_DAYS {
                for i in 0..n {
                    for s in 0..spd {
                        let realized = tau[i * s_total + t - spd + s];
                        let h = &mut habit[i * spd + s];
                        *h += HABIT_LEARNING_RATE * (realized - *h);
                    }
                }
            }
        }
        let in_flight_before = vehicles.len();
        let mut slot_spawned = 0usize;
        let mut slot_arrived = 0usize;
        let mut slot_dropped = 0usize;

        let slot_of_day = grid.slot_of_day(t);
        let habit_tau: Vec<f64> =
            (0..n).map(|i| habit[i * spd + slot_of_day]).collect();
        // Cost-perception classes: jittered copies of the habitual
        // costs. Commuters split round-robin over the classes, so flow
        // between near-equal routes divides smoothly instead of the
        // whole slot herding onto one argmin.
        let perceived: Vec<Vec<f64>> = (0..ROUTE_CHOICE_CLASSES)
            .map(|_| {
                habit_tau
                    .iter()
                    .map(|&x| x * (choice_noise.sample(&mut rng_choice) as f64).exp())
                    .collect()
            })
            .collect();
        let perceived_refs: Vec<&[f64]> = perceived.iter().map(Vec::as_slice).collect();
        let live_refs: Vec<&[f64]> = vec![&planning_tau];

        // one shared plan per (origin, dest, perception class) per slot
        let mut cache_bg: HashMap<(usize, usize, usize), Rc<PlannedRoute>> = HashMap::new();
        let mut cache_live: HashMap<(usize, usize, usize), Rc<PlannedRoute>> = HashMap::new();
        let mut spawn_batch = |origin: usize,
                               dest: usize,
                               count: usize,
                               bases: &[&[f64]],
                               cache: &mut HashMap<(usize, usize, usize), Rc<PlannedRoute>>,
                               vehicles: &mut Vec<Vehicle>,
                               rng_nav: &mut rand_chacha::ChaCha8Rng,
                               volume: &mut [f64],
                               occupancy: &mut [usize]|
         -> Result<()> {
            for v in 0..count {
                let class = v % bases.len();
                if !cache.contains_key(&(origin, dest, class)) {
                    let plan = plan_internal(net, bases[class], origin, dest, t, grid)?;
                    cache.insert((origin, dest, class), Rc::new(plan));
                }
                let plan = Rc::clone(&cache[&(origin, dest, class)]);
                let route_id = next_route_id;
                next_route_id += 1;
                if rng_nav.gen::<f64>() < demand.p_nav {
                    log.records.push(RouteRecord {
                        route_id,
                        launch_slot: t,
                        hops: plan.hops.clone(),
                    });
                    stats.logged_routes += 1;
                }
                let first = plan.hops[0].0;
                volume[first * s_total + t] += 1.0;
                occupancy[first] += 1;
                vehicles.push(Vehicle { plan, hop: 0, pos_m: 0.0 });
                stats.spawned += 1;
                slot_spawned += 1;
            }
            Ok(())
        };
        for od in &demand.od_pairs {
            let lambda = demand.rate(od, t, grid);
            let count = poisson_inverse(lambda, rng_bg.gen::<f64>())?;
            spawn_batch(
                od.origin,
                od.dest,
                count,
                &perceived_refs,
                &mut cache_bg,
                &mut vehicles,
                &mut rng_nav,
                &mut volume,
                &mut occupancy,
            )?;
        }
        for surge in &demand.surges {
            if !surge.active(t) {
                continue;
            }
            for &origin in &surge.origin_nodes {
                let count = poisson_inverse(surge.rate, rng_surge.gen::<f64>())?;
                spawn_batch(
                    origin,
                    surge.dest,
                    count,
                    &live_refs,
                    &mut cache_live,
                    &mut vehicles,
                    &mut rng_nav,
                    &mut volume,
                    &mut occupancy,
                )?;
            }
        }
        drop(spawn_batch);

        // occupancy (including this slot's spawns) sets this slot's speeds
        for i in 0..n {
            let seg = &net.segments[i];
            let k = occupancy[i] as f64 / seg.length_km();
            speeds[i] = fd.speed_kmh(seg.class, seg.free_flow_kmh, k);
            tau[i * s_total + t] = 3.6 / speeds[i];
        }

        match mode {
            SimMode::Live => {
                vehicles.retain_mut(|veh| {
                    let hops = &veh.plan.hops;
                    let mut budget_s = slot_seconds;
                    loop {
                        let seg_id = hops[veh.hop].0;
                        let seg = &net.segments[seg_id];
                        let v_ms = speeds[seg_id] / 3.6;
                        let remaining_m = seg.length_m - veh.pos_m;
                        if v_ms * budget_s < remaining_m {
                            veh.pos_m += v_ms * budget_s;
                            return true;
                        }
                        budget_s -= remaining_m / v_ms;
                        occupancy[seg_id] -= 1;
                        veh.hop += 1;
                        if veh.hop == hops.len() {
                            slot_arrived += 1;
                            return false;
                        }
                        let next_seg = hops[veh.hop].0;
                        volume[next_seg * s_total + t] += 1.0;
                        occupancy[next_seg] += 1;
                        veh.pos_m = 0.0;
                    }
                });
            }
            SimMode::Replay => {
                vehicles.retain_mut(|veh| {
                    let hops = &veh.plan.hops;
                    while veh.hop + 1 < hops.len() {
                        match hops[veh.hop + 1].1 {
                            Some(d) if d == t => {
                                occupancy[hops[veh.hop].0] -= 1;
                                veh.hop += 1;
                                occupancy[hops[veh.hop].0] += 1;
                                volume[hops[veh.hop].0 * s_total + t] += 1.0;
                            }
                            _ => break,
                        }
                    }
                    if let Some(exit) = veh.plan.final_exit {
                        if exit == t {
                            occupancy[hops[veh.hop].0] -= 1;
                            slot_arrived += 1;
                            return false;
                        }
                    }
                    true
                });
            }
        }

        for i in 0..n {
            planning_tau[i] = tau[i * s_total + t];
        }

        if grid.slot_of_day(t) + 1 == grid.slots_per_day {
            slot_dropped = vehicles.len();
            stats.dropped_at_day_end += slot_dropped;
            vehicles.clear();
            occupancy.iter_mut().for_each(|o| *o = 0);
        }

        stats.arrived += slot_arrived;
        stats.max_in_flight = stats.max_in_flight.max(vehicles.len() + slot_dropped);
        let balance =
            in_flight_before + slot_spawned - slot_arrived - slot_dropped;
        if balance != vehicles.len() {
            return Err(Error::Sim(format!(
                "vehicle conservation violated at slot {t}: {} in flight, expected {balance}",
                vehicles.len()
            )));
        }
    }

    Ok(SimOutput {
        tau: Tensor::new(vec![n, s_total], tau)?,
        volume: Tensor::new(vec![n, s_total], volume)?,
        log,
        stats,
    })
}

/// Generate network + demand + traffic for one seed: the everything-
/// from-one-number entry point used by the pipeline.
pub fn run_scenario(
    kind: NetworkKind,
    n_target: usize,
    grid: &TimeGrid,
    fd: &FundamentalDiagram,
    demand_scale: f64,
    p_nav: f64,
    mode: SimMode,
    seed: u64,
) -> Result<(RoadNetwork, DemandModel, SimOutput)> {
    let net = generate_network(kind, n_target, seed::derive(seed, "scenario-network"))?;
    let demand =
        DemandModel::standard(&net, grid, demand_scale, p_nav, seed::derive(seed, "scenario-demand"));
    let out = propagate_traffic(&net, &demand, fd, grid, mode, seed::derive(seed, "scenario-traffic"))?;
    Ok((net, demand, out))
}

/// Write the generated dataset (network, travel-time series, navigation
/// log) into `dir` using the canonical file names and formats.
pub fn emit_dataset(net: &RoadNetwork, out: &SimOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    crate::io::write_network(&dir.join(NETWORK_FILE), net)?;
    crate::io::write_series(&dir.join(TRAVELTIME_FILE), &out.tau)?;
    crate::io::write_navlog(&dir.join(NAVLOG_FILE), &out.log)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::aggregate_routes;

    fn five_min_grid(weeks_train: usize, weeks_test: usize) -> TimeGrid {
        TimeGrid::new(5, weeks_train, weeks_test).unwrap()
    }

    #[test]
    fn fd_free_flow_at_or_below_critical() {
        let fd = FundamentalDiagram::default();
        for class in RoadClass::ALL {
            let p = fd.params(class);
            assert_eq!(fd.speed_kmh(class, 60.0, 0.0), 60.0);
            assert_eq!(fd.speed_kmh(class, 60.0, p.k_c), 60.0);
            // just above critical the triangular form is continuous
            let v = fd.speed_kmh(class, 60.0, p.k_c * (1.0 + 1e-9));
            assert!((v - 60.0).abs() < 1e-6, "discontinuity at k_c for {class:?}: {v}");
        }
    }

    #[test]
    fn fd_speed_monotone_in_density() {
        let fd = FundamentalDiagram::default();
        for class in RoadClass::ALL {
            let p = fd.params(class);
            let mut last = f64::INFINITY;
            for step in 0..=100 {
                let k = p.k_c + (p.k_j - p.k_c) * step as f64 / 100.0;
                let v = fd.speed_kmh(class, 80.0, k);
                assert!(v <= last + 1e-12, "speed rose with density for {class:?}");
                last = v;
            }
            assert_eq!(fd.speed_kmh(class, 80.0, p.k_j), fd.v_min_kmh);
            assert_eq!(fd.speed_kmh(class, 80.0, p.k_j * 2.0), fd.v_min_kmh);
        }
    }

    #[test]
    fn fd_validation_rejects_bad_densities() {
        let mut fd = FundamentalDiagram::default();
        fd.major = FdClassParams { k_c: 5.0, k_j: 5.0 };
        assert!(fd.validate().is_err());
        let mut fd = FundamentalDiagram::default();
        fd.v_min_kmh = 0.0;
        assert!(fd.validate().is_err());
    }

    #[test]
    fn grid_network_matches_lattice_arithmetic() {
        let net = generate_network(NetworkKind::Grid, 48, 7).unwrap();
        // 4×4 lattice: 2·4·3 undirected edges, both directions
        assert_eq!(net.n_segments(), 48);
        assert_eq!(net.n_nodes(), 16);
    }

    #[test]
    fn networks_are_deterministic_and_seed_sensitive() {
        let a = generate_network(NetworkKind::Grid, 48, 7).unwrap();
        let b = generate_network(NetworkKind::Grid, 48, 7).unwrap();
        let c = generate_network(NetworkKind::Grid, 48, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn networks_are_strongly_connected_with_mixed_classes() {
        for (kind, n_target) in [(NetworkKind::Grid, 48), (NetworkKind::RingRadial, 48)] {
            let net = generate_network(kind, n_target, 3).unwrap();
            assert!(net.strongly_connected(), "{kind} not strongly connected");
            let mut classes: Vec<RoadClass> = net.segments.iter().map(|s| s.class).collect();
            classes.sort_by_key(|c| *c as usize);
            classes.dedup();
            assert!(classes.len() >= 3, "{kind} has only {} road classes", classes.len());
            for seg in &net.segments {
                assert_eq!(seg.free_flow_kmh, class_speed(seg.class));
            }
        }
    }

    #[test]
    fn tiny_target_is_rejected() {
        assert!(generate_network(NetworkKind::Grid, 3, 1).is_err());
    }

    /// Diamond: node 0 → {1 upper, 2 lower} → 3, equal lengths.
    fn diamond(tau_upper: f64, tau_lower: f64) -> (RoadNetwork, Vec<f64>) {
        let node_xy = vec![(0.0, 0.0), (1.0, 1.0), (1.0, -1.0), (2.0, 0.0)];
        let mk = |id, from, to| Segment {
            id,
            from,
            to,
            length_m: 1000.0,
            class: RoadClass::Major,
            free_flow_kmh: 50.0,
        };
        let net = RoadNetwork::new(
            node_xy,
            vec![mk(0, 0, 1), mk(1, 1, 3), mk(2, 0, 2), mk(3, 2, 3), mk(4, 3, 0)],
        )
        .unwrap();
        let tau = vec![tau_upper, tau_upper, tau_lower, tau_lower, 0.072];
        (net, tau)
    }

    #[test]
    fn planner_picks_the_faster_arm() {
        let grid = five_min_grid(1, 1);
        let (net, tau) = diamond(0.10, 0.06);
        let rec = plan_route(&net, &tau, 0, 3, 10, &grid, 0).unwrap();
        let segs: Vec<usize> = rec.hops.iter().map(|h| h.0).collect();
        assert_eq!(segs, vec![2, 3]);
        let (net, tau) = diamond(0.05, 0.06);
        let rec = plan_route(&net, &tau, 0, 3, 10, &grid, 0).unwrap();
        let segs: Vec<usize> = rec.hops.iter().map(|h| h.0).collect();
        assert_eq!(segs, vec![0, 1]);
    }

    #[test]
    fn planner_etas_match_hand_sums() {
        // chain of three segments: 1000 m at 60 km/h (60 s), 2000 m at
        // 30 km/h (240 s), 1500 m at 40 km/h (135 s); entries at
        // cumulative 0 s, 60 s, 300 s → slots ψ, ψ, ψ+1
        let grid = five_min_grid(1, 1);
        let node_xy = vec![(0.0, 0.0), (1.0, 0.0), (3.0, 0.0), (4.5, 0.0)];
        let mk = |id, from, to, length_m| Segment {
            id,
            from,
            to,
            length_m,
            class: RoadClass::Major,
            free_flow_kmh: 50.0,
        };
        let net = RoadNetwork::new(
            node_xy,
            vec![
                mk(0, 0, 1, 1000.0),
                mk(1, 1, 2, 2000.0),
                mk(2, 2, 3, 1500.0),
                mk(3, 3, 0, 6000.0),
            ],
        )
        .unwrap();
        let tau = vec![3.6 / 60.0, 3.6 / 30.0, 3.6 / 40.0, 0.072];
        let psi = 20;
        let rec = plan_route(&net, &tau, 0, 3, psi, &grid, 9).unwrap();
        assert_eq!(rec.route_id, 9);
        assert_eq!(rec.launch_slot, psi);
        assert_eq!(rec.hops, vec![(0, Some(psi)), (1, Some(psi)), (2, Some(psi + 1))]);
        // δ non-decreasing along hops
        let deltas: Vec<usize> = rec.hops.iter().filter_map(|h| h.1).collect();
        assert!(deltas.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn planner_clips_to_the_launch_day() {
        let grid = five_min_grid(1, 1);
        let (net, tau) = diamond(0.10, 0.30); // lower arm: 300 s per hop
        let last_slot = grid.slots_per_day - 1;
        let rec = plan_route(&net, &tau, 0, 3, last_slot, &grid, 0).unwrap();
        assert_eq!(rec.hops[0], (0, Some(last_slot)));
        // second hop lands 100 s in → same slot; pick the slow arm
        let tau_slow = vec![0.30, 0.30, 0.40, 0.40, 0.072];
        let rec = plan_route(&net, &tau_slow, 0, 3, last_slot, &grid, 0).unwrap();
        assert_eq!(rec.hops[0].1, Some(last_slot));
        assert_eq!(rec.hops[1].1, None, "next-day arrival must leave the window");
    }

    #[test]
    fn planner_rejects_unreachable_destinations() {
        // two disconnected two-node islands
        let node_xy = vec![(0.0, 0.0), (1.0, 0.0), (5.0, 0.0), (6.0, 0.0)];
        let mk = |id, from, to| Segment {
            id,
            from,
            to,
            length_m: 1000.0,
            class: RoadClass::Major,
            free_flow_kmh: 50.0,
        };
        let net =
            RoadNetwork::new(node_xy, vec![mk(0, 0, 1), mk(1, 1, 0), mk(2, 2, 3), mk(3, 3, 2)])
                .unwrap();
        let tau = vec![0.072; 4];
        let grid = five_min_grid(1, 1);
        let err = plan_route(&net, &tau, 0, 2, 0, &grid, 0).unwrap_err();
        assert!(err.to_string().contains("unreachable"), "got: {err}");
    }

    /// Demand over the four nodes of the 2×2 lattice.
    fn tiny_demand(surges: Vec<Surge>, p_nav: f64) -> DemandModel {
        DemandModel {
            od_pairs: vec![
                OdPair { origin: 0, dest: 3, base_rate: 1.2, inbound: true },
                OdPair { origin: 3, dest: 0, base_rate: 1.2, inbound: false },
                OdPair { origin: 1, dest: 2, base_rate: 0.8, inbound: true },
            ],
            surges,
            p_nav,
            weekend_factor: 0.35,
        }
    }

    #[test]
    fn zero_demand_means_free_flow_everywhere() {
        let grid = five_min_grid(1, 1);
        let net = generate_network(NetworkKind::Grid, 8, 5).unwrap();
        let demand =
            DemandModel { od_pairs: vec![], surges: vec![], p_nav: 1.0, weekend_factor: 1.0 };
        let out =
            propagate_traffic(&net, &demand, &FundamentalDiagram::default(), &grid, SimMode::Live, 1)
                .unwrap();
        for (i, seg) in net.segments.iter().enumerate() {
            for t in 0..grid.total_slots() {
                assert_eq!(out.tau.at(&[i, t]), seg.free_flow_tau());
                assert_eq!(out.volume.at(&[i, t]), 0.0);
            }
        }
        assert!(out.log.is_empty());
        assert_eq!(out.stats.spawned, 0);
    }

    #[test]
    fn traffic_loop_is_deterministic() {
        let grid = five_min_grid(1, 1);
        let net = generate_network(NetworkKind::Grid, 8, 5).unwrap();
        let demand = tiny_demand(vec![], 0.7);
        let run = |s| {
            propagate_traffic(&net, &demand, &FundamentalDiagram::default(), &grid, SimMode::Live, s)
                .unwrap()
        };
        let a = run(11);
        let b = run(11);
        assert_eq!(a.tau.data(), b.tau.data());
        assert_eq!(a.volume.data(), b.volume.data());
        assert_eq!(a.log, b.log);
        assert_eq!(a.stats, b.stats);
        let c = run(12);
        assert_ne!(a.log, c.log);
    }

    #[test]
    fn vehicles_are_conserved() {
        let grid = five_min_grid(1, 1);
        let net = generate_network(NetworkKind::Grid, 8, 5).unwrap();
        let demand = tiny_demand(vec![], 1.0);
        let out =
            propagate_traffic(&net, &demand, &FundamentalDiagram::default(), &grid, SimMode::Live, 3)
                .unwrap();
        assert!(out.stats.spawned > 500, "expected some traffic, got {}", out.stats.spawned);
        // every day ends with a drop of all in-flight vehicles
        assert_eq!(out.stats.spawned, out.stats.arrived + out.stats.dropped_at_day_end);
        out.log.validate(net.n_segments()).unwrap();
    }

    #[test]
    fn replay_mode_realizes_planned_entries_exactly() {
        let grid = five_min_grid(1, 1);
        let net = generate_network(NetworkKind::Grid, 8, 5).unwrap();
        let demand = tiny_demand(vec![], 1.0); // p_nav = 1: every plan logged
        let out = propagate_traffic(
            &net,
            &demand,
            &FundamentalDiagram::default(),
            &grid,
            SimMode::Replay,
            21,
        )
        .unwrap();
        let (cube, _) = aggregate_routes(&out.log, &grid, net.n_segments(), 12).unwrap();
        let planned = cube.current_volume();
        for i in 0..net.n_segments() {
            for t in 0..grid.total_slots() {
                assert_eq!(
                    planned.at(&[i, t]),
                    out.volume.at(&[i, t]),
                    "segment {i} slot {t}"
                );
            }
        }
    }

    #[test]
    fn doubling_a_surge_never_speeds_up_its_corridor() {
        // one-way ring: routes are forced, so no diversion can mask the
        // extra load (on networks with route choice, heavier congestion
        // legitimately pushes planned routes onto other arms)
        let grid = five_min_grid(1, 1);
        let node_xy = vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let mk = |id, from, to| Segment {
            id,
            from,
            to,
            length_m: 1000.0,
            class: RoadClass::Major,
            free_flow_kmh: 50.0,
        };
        let net = RoadNetwork::new(
            node_xy,
            vec![mk(0, 0, 1), mk(1, 1, 2), mk(2, 2, 3), mk(3, 3, 0)],
        )
        .unwrap();
        let start = 40;
        let duration = 12;
        let surge = |rate| Surge {
            origin_nodes: vec![0],
            dest: 2,
            start_slot: start,
            duration_slots: duration,
            rate,
        };
        let run = |rate| {
            let demand = tiny_demand(vec![surge(rate)], 1.0);
            propagate_traffic(&net, &demand, &FundamentalDiagram::default(), &grid, SimMode::Live, 9)
                .unwrap()
        };
        let lo = run(8.0);
        let hi = run(16.0);
        // surge path 0 → 2 uses segments 0 and 1
        for seg in [0, 1] {
            for t in start..start + duration + 12 {
                assert!(
                    hi.tau.at(&[seg, t]) >= lo.tau.at(&[seg, t]) - 1e-9,
                    "segment {seg} slot {t}: {} < {}",
                    hi.tau.at(&[seg, t]),
                    lo.tau.at(&[seg, t])
                );
            }
        }
    }

    #[test]
    fn standard_demand_is_valid_and_has_spanning_surges() {
        let grid = five_min_grid(2, 1);
        let net = generate_network(NetworkKind::Grid, 48, 5).unwrap();
        let demand = DemandModel::standard(&net, &grid, 1.0, 0.7, 42);
        demand.validate(net.n_nodes(), grid.total_slots()).unwrap();
        assert_eq!(demand.surges.len(), grid.weeks_train + grid.weeks_test);
        // at least one surge lands in the test span
        let test_start = grid.s_train();
        assert!(demand.surges.iter().any(|s| s.start_slot >= test_start));
        assert!(demand.surges.iter().any(|s| s.start_slot < test_start));
        // same seed reproduces the demand model
        let again = DemandModel::standard(&net, &grid, 1.0, 0.7, 42);
        assert_eq!(demand, again);
    }

    #[test]
    fn emitted_dataset_round_trips_and_is_stable() {
        let grid = five_min_grid(1, 1);
        let net = generate_network(NetworkKind::Grid, 8, 5).unwrap();
        let demand = tiny_demand(vec![], 0.8);
        let out =
            propagate_traffic(&net, &demand, &FundamentalDiagram::default(), &grid, SimMode::Live, 4)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_dataset(&net, &out, dir.path()).unwrap();
        let net_back = crate::io::read_network(&dir.path().join(NETWORK_FILE)).unwrap();
        assert_eq!(net, net_back);
        let tau_back = crate::io::read_series(&dir.path().join(TRAVELTIME_FILE)).unwrap();
        assert_eq!(out.tau.data(), tau_back.data());
        let log_back = crate::io::read_navlog(&dir.path().join(NAVLOG_FILE)).unwrap();
        assert_eq!(out.log, log_back);
        // re-emitting produces byte-identical files
        let first: Vec<Vec<u8>> = [NETWORK_FILE, TRAVELTIME_FILE, NAVLOG_FILE]
            .iter()
            .map(|f| fs::read(dir.path().join(f)).unwrap())
            .collect();
        emit_dataset(&net, &out, dir.path()).unwrap();
        for (name, before) in [NETWORK_FILE, TRAVELTIME_FILE, NAVLOG_FILE].iter().zip(&first) {
            assert_eq!(&fs::read(dir.path().join(name)).unwrap(), before, "{name} changed");
        }
    }

    /// Prints scenario statistics used to calibrate demand and slice
    /// thresholds; run with --ignored --nocapture.
    #[test]
    #[ignore]
    fn default_scenario_statistics() {
        use crate::eval::{classify_slices, SliceKind, SliceSpec};
        use crate::features::{ha_table, HaDivisor};
        let grid = TimeGrid::default_experiment();
        let (net, demand, out) = run_scenario(
            NetworkKind::Grid,
            48,
            &grid,
            &FundamentalDiagram::default(),
            1.0,
            0.7,
            SimMode::Live,
            1,
        )
        .unwrap();
        println!("stats {:?}", out.stats);
        let (cube, _) = aggregate_routes(&out.log, &grid, net.n_segments(), 12).unwrap();
        let vol = cube.current_volume();
        let mut per_seg: Vec<(usize, f64)> = (0..net.n_segments())
            .map(|i| {
                let mean = (0..grid.s_train()).map(|t| vol.at(&[i, t])).sum::<f64>()
                    / grid.s_train() as f64
                    / grid.slot_minutes as f64;
                (i, mean)
            })
            .collect();
        per_seg.sort_by(|a, b| b.1.total_cmp(&a.1));
        let fmt = |s: &[(usize, f64)]| {
            s.iter().map(|(i, v)| format!("{i}:{v:.2}")).collect::<Vec<_>>().join(" ")
        };
        println!("  top veh/min: {}", fmt(&per_seg[..10]));
        println!("  low veh/min: {}", fmt(&per_seg[per_seg.len() - 4..]));
        let ha = ha_table(&out.tau, &grid, HaDivisor::TermCount).unwrap();
        let spec = SliceSpec::default();
        let masks = classify_slices(&out.tau, &ha, &vol, &net, &grid, &spec).unwrap();
        let hv = masks.high_volume.iter().filter(|&&b| b).count();
        let c = masks.count(SliceKind::C);
        let nrc = masks.count(SliceKind::Nrc);
        println!(
            "  {hv}/{} high-volume, C {c}, NRC {nrc} ({:.1}% of C)",
            net.n_segments(),
            100.0 * nrc as f64 / c.max(1) as f64
        );
        // where do NRC slots live?
        let surge_day: Vec<bool> = {
            let mut flags = vec![false; grid.total_days()];
            for s in &demand.surges {
                flags[s.start_slot / grid.slots_per_day] = true;
            }
            flags
        };
        let mut by_weekday = [0usize; 7];
        let mut by_hour = [0usize; 16];
        let mut on_surge_days = 0usize;
        for i in 0..net.n_segments() {
            for t in 0..grid.total_slots() {
                if masks.contains(SliceKind::Nrc, i, t) {
                    by_weekday[grid.day_of(t) % 7] += 1;
                    by_hour[grid.slot_of_day(t) / 12] += 1;
                    if surge_day[grid.day_of(t)] {
                        on_surge_days += 1;
                    }
                }
            }
        }
        println!("  NRC by weekday: {by_weekday:?}");
        println!("  NRC by hour-of-window: {by_hour:?}");
        println!(
            "  NRC on surge days: {on_surge_days}/{nrc} ({} surge days of {})",
            surge_day.iter().filter(|&&b| b).count(),
            grid.total_days()
        );
    }
}
