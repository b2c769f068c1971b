//! Navigation log: one record per planned route, carrying the launch
//! slot and per-hop (segment, planned-arrival-slot) pairs. Arrival slots
//! that fall outside the observation grid (e.g. planned entries after
//! 22:00) are `None` and are skipped by downstream aggregation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub route_id: usize,
    /// Launch slot ψ.
    pub launch_slot: usize,
    /// Hops in route order: segment id and planned arrival slot δ
    /// (`None` when the planned arrival leaves the observation window).
    pub hops: Vec<(usize, Option<usize>)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavigationLog {
    pub records: Vec<RouteRecord>,
}

impl NavigationLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Check the type invariants: valid segment ids, launch slot at or
    /// before the first in-grid arrival, arrival slots non-decreasing,
    /// and out-of-grid arrivals only as a suffix (a plan that leaves the
    /// observation window never re-enters it).
    pub fn validate(&self, n_segments: usize) -> Result<()> {
        for rec in &self.records {
            if rec.hops.is_empty() {
                return Err(Error::Data(format!("route {} has no hops", rec.route_id)));
            }
            let mut prev: Option<usize> = None;
            let mut left_grid = false;
            for (hop_idx, &(seg, delta)) in rec.hops.iter().enumerate() {
                if seg >= n_segments {
                    return Err(Error::Data(format!(
                        "route {} hop {hop_idx} references segment {seg} (n = {n_segments})",
                        rec.route_id
                    )));
                }
                match delta {
                    Some(d) => {
                        if left_grid {
                            return Err(Error::Data(format!(
                                "route {} re-enters the grid at hop {hop_idx}",
                                rec.route_id
                            )));
                        }
                        if d < rec.launch_slot {
                            return Err(Error::Data(format!(
                                "route {} hop {hop_idx} arrives at slot {d} before launch {}",
                                rec.route_id, rec.launch_slot
                            )));
                        }
                        if let Some(p) = prev {
                            if d < p {
                                return Err(Error::Data(format!(
                                    "route {} arrival slots decrease at hop {hop_idx}",
                                    rec.route_id
                                )));
                            }
                        }
                        prev = Some(d);
                    }
                    None => left_grid = true,
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(launch: usize, hops: Vec<(usize, Option<usize>)>) -> RouteRecord {
        RouteRecord { route_id: 0, launch_slot: launch, hops }
    }

    #[test]
    fn accepts_well_formed_log() {
        let log = NavigationLog {
            records: vec![rec(10, vec![(0, Some(10)), (1, Some(10)), (2, Some(12)), (0, None)])],
        };
        assert!(log.validate(3).is_ok());
    }

    #[test]
    fn rejects_decreasing_arrivals() {
        let log = NavigationLog {
            records: vec![rec(5, vec![(0, Some(8)), (1, Some(7))])],
        };
        assert!(log.validate(3).is_err());
    }

    #[test]
    fn rejects_arrival_before_launch() {
        let log = NavigationLog {
            records: vec![rec(9, vec![(0, Some(8))])],
        };
        assert!(log.validate(3).is_err());
    }

    #[test]
    fn rejects_bad_segment_and_grid_reentry() {
        let bad_seg = NavigationLog {
            records: vec![rec(0, vec![(7, Some(1))])],
        };
        assert!(bad_seg.validate(3).is_err());
        let reentry = NavigationLog {
            records: vec![rec(0, vec![(0, Some(1)), (1, None), (2, Some(5))])],
        };
        assert!(reentry.validate(3).is_err());
    }
}
