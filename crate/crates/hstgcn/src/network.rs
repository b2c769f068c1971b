//! Directed road networks: segments with geometry and class, successor
//! connectivity, and shortest-path machinery (segment midpoint distances
//! for the adjacency matrices, node-to-node routing for the simulator).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadClass {
    Freeway,
    Highway,
    Expressway,
    Major,
}

impl RoadClass {
    pub const ALL: [RoadClass; 4] = [
        RoadClass::Freeway,
        RoadClass::Highway,
        RoadClass::Expressway,
        RoadClass::Major,
    ];
}

impl fmt::Display for RoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RoadClass::Freeway => "freeway",
            RoadClass::Highway => "highway",
            RoadClass::Expressway => "expressway",
            RoadClass::Major => "major",
        };
        f.write_str(s)
    }
}

impl FromStr for RoadClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freeway" => Ok(RoadClass::Freeway),
            "highway" => Ok(RoadClass::Highway),
            "expressway" => Ok(RoadClass::Expressway),
            "major" => Ok(RoadClass::Major),
            other => Err(Error::Network(format!("unknown road class {other:?}"))),
        }
    }
}

/// One directed road segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    /// Node the segment departs from.
    pub from: usize,
    /// Node the segment arrives at.
    pub to: usize,
    /// Length in meters.
    pub length_m: f64,
    pub class: RoadClass,
    /// Free-flow speed in km/h.
    pub free_flow_kmh: f64,
}

impl Segment {
    pub fn length_km(&self) -> f64 {
        self.length_m / 1000.0
    }

    /// Free-flow travel time per unit length, in s/m.
    pub fn free_flow_tau(&self) -> f64 {
        3.6 / self.free_flow_kmh
    }
}

/// Directed road network with dense segment ids `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    /// Node coordinates in km (for reports only).
    pub node_xy: Vec<(f64, f64)>,
    pub segments: Vec<Segment>,
    /// `successors[i]` = segments departing the end node of segment `i`.
    successors: Vec<Vec<usize>>,
    /// `node_out[v]` = segments departing node `v`.
    node_out: Vec<Vec<usize>>,
}

impl RoadNetwork {
    pub fn new(node_xy: Vec<(f64, f64)>, segments: Vec<Segment>) -> Result<Self> {
        let n_nodes = node_xy.len();
        for (idx, seg) in segments.iter().enumerate() {
            if seg.id != idx {
                return Err(Error::Network(format!(
                    "segment ids must be dense 0..n; position {idx} has id {}",
                    seg.id
                )));
            }
            if seg.from >= n_nodes || seg.to >= n_nodes {
                return Err(Error::Network(format!(
                    "segment {idx} references node outside 0..{n_nodes}"
                )));
            }
            if !(seg.length_m > 0.0) {
                return Err(Error::Network(format!(
                    "segment {idx} has non-positive length {}",
                    seg.length_m
                )));
            }
            if !(seg.free_flow_kmh > 0.0) {
                return Err(Error::Network(format!(
                    "segment {idx} has non-positive free-flow speed {}",
                    seg.free_flow_kmh
                )));
            }
        }
        let mut node_out = vec![Vec::new(); n_nodes];
        for seg in &segments {
            node_out[seg.from].push(seg.id);
        }
        let successors = segments
            .iter()
            .map(|seg| node_out[seg.to].clone())
            .collect();
        Ok(Self { node_xy, segments, successors, node_out })
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_xy.len()
    }

    pub fn successors(&self, segment: usize) -> &[usize] {
        &self.successors[segment]
    }

    pub fn segments_from_node(&self, node: usize) -> &[usize] {
        &self.node_out[node]
    }

    /// Whether every segment can reach every other segment along
    /// successor edges.
    pub fn strongly_connected(&self) -> bool {
        let n = self.n_segments();
        if n == 0 {
            return false;
        }
        // forward reachability from segment 0, then along reversed edges
        let reach_fwd = self.reachable_from(0, false);
        let reach_bwd = self.reachable_from(0, true);
        reach_fwd.iter().all(|&r| r) && reach_bwd.iter().all(|&r| r)
    }

    fn reachable_from(&self, start: usize, reversed: bool) -> Vec<bool> {
        let n = self.n_segments();
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        if reversed {
            for (i, succ) in self.successors.iter().enumerate() {
                for &j in succ {
                    preds[j].push(i);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let next: &[usize] = if reversed { &preds[i] } else { &self.successors[i] };
            for &j in next {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    /// Midpoint-to-midpoint shortest-path distances in km over the
    /// directed segment graph, symmetrized by taking the cheaper
    /// direction. Diagonal is zero; unreachable pairs are `+inf`.
    pub fn midpoint_distances_km(&self) -> Vec<Vec<f64>> {
        let n = self.n_segments();
        let mut directed = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in directed.iter_mut().enumerate() {
            // cost[j] = min total length (km) of segments traversed after
            // leaving segment i, up to and including j
            let cost = self.successor_costs(i, |seg| seg.length_km());
            let half_i = self.segments[i].length_km() / 2.0;
            for (j, &c) in cost.iter().enumerate() {
                if c.is_finite() {
                    row[j] = half_i + c - self.segments[j].length_km() / 2.0;
                }
            }
        }
        let mut out = vec![vec![f64::INFINITY; n]; n];
        for i in 0..n {
            out[i][i] = 0.0;
            for j in (i + 1)..n {
                let d = directed[i][j].min(directed[j][i]);
                out[i][j] = d;
                out[j][i] = d;
            }
        }
        out
    }

    /// Single-source Dijkstra over segments: cheapest accumulated
    /// `weight` over segments entered after `start`, including the
    /// destination segment itself. `start` gets a finite entry only if
    /// it lies on a cycle.
    fn successor_costs(&self, start: usize, weight: impl Fn(&Segment) -> f64) -> Vec<f64> {
        let n = self.n_segments();
        let mut cost = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        for &s in &self.successors[start] {
            let w = weight(&self.segments[s]);
            if w < cost[s] {
                cost[s] = w;
                heap.push(HeapEntry { cost: w, item: s });
            }
        }
        while let Some(HeapEntry { cost: c, item: j }) = heap.pop() {
            if c > cost[j] {
                continue;
            }
            for &k in &self.successors[j] {
                let w = c + weight(&self.segments[k]);
                if w < cost[k] {
                    cost[k] = w;
                    heap.push(HeapEntry { cost: w, item: k });
                }
            }
        }
        cost
    }

    /// Minimum-cost node-to-node path where entering segment `s` costs
    /// `seg_cost[s]`. Returns the segment sequence and total cost, or
    /// `None` when unreachable.
    pub fn route(
        &self,
        seg_cost: &[f64],
        origin: usize,
        destination: usize,
    ) -> Option<(Vec<usize>, f64)> {
        let n_nodes = self.n_nodes();
        let mut dist = vec![f64::INFINITY; n_nodes];
        let mut via: Vec<Option<usize>> = vec![None; n_nodes];
        let mut heap = BinaryHeap::new();
        dist[origin] = 0.0;
        heap.push(HeapEntry { cost: 0.0, item: origin });
        while let Some(HeapEntry { cost: c, item: v }) = heap.pop() {
            if c > dist[v] {
                continue;
            }
            if v == destination {
                break;
            }
            for &s in &self.node_out[v] {
                let seg = &self.segments[s];
                let w = c + seg_cost[s];
                if w < dist[seg.to] {
                    dist[seg.to] = w;
                    via[seg.to] = Some(s);
                    heap.push(HeapEntry { cost: w, item: seg.to });
                }
            }
        }
        if !dist[destination].is_finite() {
            return None;
        }
        let mut path = Vec::new();
        let mut v = destination;
        while v != origin {
            let s = via[v].expect("finite distance implies predecessor");
            path.push(s);
            v = self.segments[s].from;
        }
        path.reverse();
        Some((path, dist[destination]))
    }
}

/// Min-heap entry ordered by cost; costs are finite, so total ordering
/// via `partial_cmp` is safe.
struct HeapEntry {
    cost: f64,
    item: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cost == other.cost && self.item == other.item
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we want cheapest first
        other
            .cost
            .partial_cmp(&self.cost)
            .expect("non-finite cost in heap")
            .then_with(|| other.item.cmp(&self.item))
    }
}
