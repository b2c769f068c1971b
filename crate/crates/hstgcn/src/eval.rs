//! Evaluation: MAE/MAPE/RMSE over masked samples, congestion (C) and
//! non-recurring-congestion (NRC) slicing of the test span, the
//! historical-average baseline, and report generation (tidy CSV plus an
//! SVG chart of per-horizon error curves).

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::network::{RoadClass, RoadNetwork};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

/// Which subset of test samples a metric row covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceKind {
    Full,
    C,
    Nrc,
}

impl SliceKind {
    pub const ALL: [SliceKind; 3] = [SliceKind::Full, SliceKind::C, SliceKind::Nrc];
}

impl fmt::Display for SliceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SliceKind::Full => "full",
            SliceKind::C => "c",
            SliceKind::Nrc => "nrc",
        })
    }
}

impl FromStr for SliceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SliceKind::Full),
            "c" => Ok(SliceKind::C),
            "nrc" => Ok(SliceKind::Nrc),
            other => Err(Error::Config(format!(
                "unknown slice {other:?} (expected full, c or nrc)"
            ))),
        }
    }
}

/// Slicing rules: which segments count as high-volume, the per-class
/// congestion speed thresholds, the NRC fraction of the historical
/// average, and the lifecycle extension window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SliceSpec {
    /// Segments qualify for C/NRC slicing only when their training-span
    /// average volume reaches this many vehicles per minute.
    pub high_volume_veh_per_min: f64,
    pub freeway_kmh: f64,
    pub highway_kmh: f64,
    pub expressway_kmh: f64,
    pub major_kmh: f64,
    /// NRC requires speed strictly below this fraction of the HA speed.
    pub nrc_fraction: f64,
    /// Congested periods are extended this many slots on both sides.
    pub extension_slots: usize,
    /// Minimum NRC run length in slots.
    pub min_nrc_run: usize,
}

impl Default for SliceSpec {
    fn default() -> Self {
        Self {
            high_volume_veh_per_min: 10.0,
            freeway_kmh: 30.0,
            highway_kmh: 20.0,
            expressway_kmh: 20.0,
            major_kmh: 12.0,
            nrc_fraction: 0.5,
            extension_slots: 12,
            min_nrc_run: 2,
        }
    }
}

impl SliceSpec {
    pub fn speed_threshold_kmh(&self, class: RoadClass) -> f64 {
        match class {
            RoadClass::Freeway => self.freeway_kmh,
            RoadClass::Highway => self.highway_kmh,
            RoadClass::Expressway => self.expressway_kmh,
            RoadClass::Major => self.major_kmh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let thresholds = [
            self.high_volume_veh_per_min,
            self.freeway_kmh,
            self.highway_kmh,
            self.expressway_kmh,
            self.major_kmh,
            self.nrc_fraction,
        ];
        if thresholds.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Config("slice thresholds must all be positive".into()));
        }
        if self.min_nrc_run == 0 {
            return Err(Error::Config("minimum NRC run length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-(segment, slot) labels produced by [`classify_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMasks {
    n: usize,
    slots: usize,
    c: Vec<bool>,
    nrc: Vec<bool>,
    /// Per-segment high-volume qualification.
    pub high_volume: Vec<bool>,
}

impl SliceMasks {
    pub fn contains(&self, kind: SliceKind, segment: usize, slot: usize) -> bool {
        match kind {
            SliceKind::Full => true,
            SliceKind::C => self.c[segment * self.slots + slot],
            SliceKind::Nrc => self.nrc[segment * self.slots + slot],
        }
    }

    pub fn count(&self, kind: SliceKind) -> usize {
        match kind {
            SliceKind::Full => self.n * self.slots,
            SliceKind::C => self.c.iter().filter(|&&b| b).count(),
            SliceKind::Nrc => self.nrc.iter().filter(|&&b| b).count(),
        }
    }
}

/// Travel time (s/m) to speed (km/h). Non-positive travel times map to
/// infinite speed, which never classifies as congested.
pub fn speed_kmh(tau: f64) -> f64 {
    if tau > 0.0 {
        3.6 / tau
    } else {
        f64::INFINITY
    }
}

/// Label every (segment, slot) pair. A slot is congested when its speed
/// is strictly below the segment's class threshold; an NRC slot lies in
/// a run of at least `min_nrc_run` slots whose speed stays strictly
/// below the NRC fraction of the historical-average speed. Both label
/// families are then extended by the lifecycle window on each side,
/// clipped to the day, and unioned with the raw labels. Only
/// high-volume segments (training-span average volume at or above the
/// threshold) receive C/NRC labels.
pub fn classify_slices(
    tau: &Tensor,
    ha_tau: &Tensor,
    volume: &Tensor,
    net: &RoadNetwork,
    grid: &TimeGrid,
    spec: &SliceSpec,
) -> Result<SliceMasks> {
    spec.validate()?;
    let n = net.n_segments();
    let s_total = grid.total_slots();
    for (what, t) in [("travel-time", tau), ("HA", ha_tau), ("volume", volume)] {
        if t.shape() != [n, s_total] {
            return Err(Error::Shape(format!(
                "{what} series is {:?}, expected [{n}, {s_total}]",
                t.shape()
            )));
        }
    }
    let s_train = grid.s_train();
    let mut high_volume = vec![false; n];
    for i in 0..n {
        let mut sum = 0.0;
        for t in 0..s_train {
            sum += volume.at(&[i, t]);
        }
        let veh_per_min = sum / s_train as f64 / grid.slot_minutes as f64;
        high_volume[i] = veh_per_min >= spec.high_volume_veh_per_min;
    }

    let spd = grid.slots_per_day;
    let mut c = vec![false; n * s_total];
    let mut nrc = vec![false; n * s_total];
    for i in 0..n {
        if !high_volume[i] {
            continue;
        }
        let class_kmh = spec.speed_threshold_kmh(net.segments[i].class);
        for day in 0..grid.total_days() {
            let day_start = day * spd;
            let day_end = day_start + spd; // exclusive
            let raw = |t: usize, kind: SliceKind| -> bool {
                let speed = speed_kmh(tau.at(&[i, t]));
                match kind {
                    SliceKind::C => speed < class_kmh,
                    SliceKind::Nrc => {
                        speed < spec.nrc_fraction * speed_kmh(ha_tau.at(&[i, t]))
                    }
                    SliceKind::Full => unreachable!("raw labels are C or NRC"),
                }
            };
            for (kind, min_run, mask) in [
                (SliceKind::C, 1usize, &mut c),
                (SliceKind::Nrc, spec.min_nrc_run, &mut nrc),
            ] {
                let mut t = day_start;
                while t < day_end {
                    if !raw(t, kind) {
                        t += 1;
                        continue;
                    }
                    let run_start = t;
                    while t < day_end && raw(t, kind) {
                        t += 1;
                    }
                    let run_end = t; // exclusive
                    if run_end - run_start < min_run {
                        continue;
                    }
                    let ext_start = run_start.saturating_sub(spec.extension_slots).max(day_start);
                    let ext_end = (run_end + spec.extension_slots).min(day_end);
                    for u in ext_start..ext_end {
                        mask[i * s_total + u] = true;
                    }
                }
            }
        }
    }
    Ok(SliceMasks { n, slots: s_total, c, nrc, high_volume })
}

/// Metric values over one sample set. `count` backs MAE/RMSE;
/// `mape_count` can be smaller because MAPE excludes samples whose truth
/// corresponds to a speed above 120 km/h or a travel time below
/// 1e-4 s/m. When every sample is excluded, `mape_pct` is NaN and
/// `mape_count` is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub mape_pct: f64,
    pub rmse: f64,
    pub count: usize,
    pub mape_count: usize,
}

const MAPE_MAX_SPEED_KMH: f64 = 120.0;
const MAPE_MIN_TAU: f64 = 1e-4;

fn mape_eligible(truth: f64) -> bool {
    truth >= MAPE_MIN_TAU && speed_kmh(truth) <= MAPE_MAX_SPEED_KMH
}

/// Streaming accumulator so evaluation never materializes per-cell
/// sample vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricAccumulator {
    count: usize,
    abs_sum: f64,
    sq_sum: f64,
    mape_sum: f64,
    mape_count: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: f64, truth: f64) {
        let err = pred - truth;
        self.count += 1;
        self.abs_sum += err.abs();
        self.sq_sum += err * err;
        if mape_eligible(truth) {
            self.mape_sum += (err / truth).abs();
            self.mape_count += 1;
        }
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.count += other.count;
        self.abs_sum += other.abs_sum;
        self.sq_sum += other.sq_sum;
        self.mape_sum += other.mape_sum;
        self.mape_count += other.mape_count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(Error::Eval("metrics over an empty sample set".into()));
        }
        let mape_pct = if self.mape_count > 0 {
            self.mape_sum / self.mape_count as f64 * 100.0
        } else {
            f64::NAN
        };
        Ok(Metrics {
            mae: self.abs_sum / self.count as f64,
            mape_pct,
            rmse: (self.sq_sum / self.count as f64).sqrt(),
            count: self.count,
            mape_count: self.mape_count,
        })
    }
}

/// MAE/MAPE/RMSE over the masked entries of equally-shaped prediction
/// and truth slices. Errors when the mask selects nothing.
pub fn compute_metrics(pred: &[f64], truth: &[f64], mask: &[bool]) -> Result<Metrics> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(Error::Shape(format!(
            "metric inputs disagree: {} predictions, {} truths, {} mask entries",
            pred.len(),
            truth.len(),
            mask.len()
        )));
    }
    let mut acc = MetricAccumulator::default();
    for ((&p, &t), &m) in pred.iter().zip(truth).zip(mask) {
        if m {
            acc.add(p, t);
        }
    }
    acc.finish()
}

/// Historical-average baseline: the forecast for slot `t₀+1+f` is the HA
/// value at that slot, independent of recent observations. Returns one
/// n×F tensor per anchor.
pub fn ha_baseline(ha_tau: &Tensor, anchors: &[usize], f_horizon: usize) -> Result<Vec<Tensor>> {
    let &[n, s_total] = ha_tau.shape() else {
        return Err(Error::Shape(format!(
            "HA table must be n×S, got {:?}",
            ha_tau.shape()
        )));
    };
    let mut out = Vec::with_capacity(anchors.len());
    for &t0 in anchors {
        if t0 + f_horizon >= s_total {
            return Err(Error::Eval(format!(
                "anchor {t0} needs horizons beyond the grid ({s_total} slots)"
            )));
        }
        let mut pred = Tensor::zeros(&[n, f_horizon]);
        for i in 0..n {
            for f in 0..f_horizon {
                pred.set(&[i, f], ha_tau.at(&[i, t0 + 1 + f]));
            }
        }
        out.push(pred);
    }
    Ok(out)
}

/// One evaluated model (or baseline): per-anchor n×F predictions aligned
/// with the anchor list handed to [`evaluate_runs`].
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub name: String,
    pub preds: Vec<Tensor>,
}

/// One row of the tidy report: `horizon` None means pooled over all
/// horizons (written as "all").
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub slice: SliceKind,
    pub variant: String,
    pub horizon: Option<usize>,
    pub metric: String,
    pub value: f64,
    pub count: usize,
}

/// Metrics for every slice × run × horizon cell. A sample enters a slice
/// when its *target* (segment, slot) pair is labeled with that slice.
pub fn evaluate_runs(
    runs: &[VariantRun],
    anchors: &[usize],
    tau: &Tensor,
    masks: &SliceMasks,
    f_horizon: usize,
) -> Result<Vec<ReportRow>> {
    let &[n, s_total] = tau.shape() else {
        return Err(Error::Shape(format!("truth must be n×S, got {:?}", tau.shape())));
    };
    if n != masks.n || s_total != masks.slots {
        return Err(Error::Shape(format!(
            "slice masks cover {}×{}, truth is {n}×{s_total}",
            masks.n, masks.slots
        )));
    }
    let mut rows = Vec::new();
    for run in runs {
        if run.preds.len() != anchors.len() {
            return Err(Error::Eval(format!(
                "run {:?} carries {} prediction sets for {} anchors",
                run.name,
                run.preds.len(),
                anchors.len()
            )));
        }
        // acc[slice][f]
        let mut acc =
            vec![vec![MetricAccumulator::default(); f_horizon]; SliceKind::ALL.len()];
        for (pred, &t0) in run.preds.iter().zip(anchors) {
            if pred.shape() != [n, f_horizon] {
                return Err(Error::Shape(format!(
                    "run {:?} prediction is {:?}, expected [{n}, {f_horizon}]",
                    run.name,
                    pred.shape()
                )));
            }
            for i in 0..n {
                for f in 0..f_horizon {
                    let target = t0 + 1 + f;
                    let p = pred.at(&[i, f]);
                    let t = tau.at(&[i, target]);
                    for (si, kind) in SliceKind::ALL.iter().enumerate() {
                        if masks.contains(*kind, i, target) {
                            acc[si][f].add(p, t);
                        }
                    }
                }
            }
        }
        for (si, kind) in SliceKind::ALL.iter().enumerate() {
            let mut pooled = MetricAccumulator::default();
            for f_acc in &acc[si] {
                pooled.merge(f_acc);
            }
            if pooled.count() == 0 {
                return Err(Error::Eval(format!(
                    "slice {kind} selected no samples for run {:?}",
                    run.name
                )));
            }
            push_metric_rows(&mut rows, *kind, &run.name, None, pooled.finish()?);
            for (f, f_acc) in acc[si].iter().enumerate() {
                if f_acc.count() == 0 {
                    continue;
                }
                push_metric_rows(&mut rows, *kind, &run.name, Some(f + 1), f_acc.finish()?);
            }
        }
    }
    Ok(rows)
}

fn push_metric_rows(
    rows: &mut Vec<ReportRow>,
    slice: SliceKind,
    variant: &str,
    horizon: Option<usize>,
    m: Metrics,
) {
    let base = |metric: &str, value: f64, count: usize| ReportRow {
        slice,
        variant: variant.to_string(),
        horizon,
        metric: metric.to_string(),
        value,
        count,
    };
    rows.push(base("mae", m.mae, m.count));
    if m.mape_count > 0 {
        rows.push(base("mape", m.mape_pct, m.mape_count));
    }
    rows.push(base("rmse", m.rmse, m.count));
}

/// Write `report.csv` (tidy long format) and `report.svg` (per-horizon
/// full-slice MAE curves) into `dir`. Verifies the MAE ≤ RMSE invariant
/// on every cell.
pub fn build_report(rows: &[ReportRow], dir: &Path) -> Result<()> {
    verify_mae_rmse(rows)?;
    fs::create_dir_all(dir)?;
    let mut csv = String::from("slice,variant,horizon,metric,value,count\n");
    for row in rows {
        let horizon = match row.horizon {
            None => "all".to_string(),
            Some(f) => f.to_string(),
        };
        csv.push_str(&format!(
            "{},{},{horizon},{},{},{}\n",
            row.slice, row.variant, row.metric, row.value, row.count
        ));
    }
    fs::write(dir.join("report.csv"), csv)?;
    fs::write(dir.join("report.svg"), render_svg(rows))?;
    Ok(())
}

fn verify_mae_rmse(rows: &[ReportRow]) -> Result<()> {
    for row in rows.iter().filter(|r| r.metric == "mae") {
        let rmse = rows.iter().find(|r| {
            r.metric == "rmse"
                && r.slice == row.slice
                && r.variant == row.variant
                && r.horizon == row.horizon
        });
        let Some(rmse) = rmse else {
            return Err(Error::Eval(format!(
                "missing RMSE row for {}/{}",
                row.slice, row.variant
            )));
        };
        // numeric slack only for rounding; mathematically MAE ≤ RMSE
        if row.value > rmse.value * (1.0 + 1e-12) {
            return Err(Error::Eval(format!(
                "MAE {} exceeds RMSE {} for {}/{}",
                row.value, rmse.value, row.slice, row.variant
            )));
        }
    }
    Ok(())
}

/// Minimal static SVG line chart: one polyline per variant, full-slice
/// per-horizon MAE.
fn render_svg(rows: &[ReportRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const ML: f64 = 60.0; // left margin
    const MR: f64 = 150.0;
    const MT: f64 = 30.0;
    const MB: f64 = 50.0;
    const COLORS: [&str; 6] = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#f39c12", "#16a085"];

    let mut variants: Vec<&str> = Vec::new();
    for row in rows {
        if !variants.contains(&row.variant.as_str()) {
            variants.push(&row.variant);
        }
    }
    let mut series: Vec<(&str, Vec<(usize, f64)>)> = Vec::new();
    let mut max_f = 0usize;
    let mut max_v = 0.0f64;
    for v in &variants {
        let mut pts: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| {
                r.slice == SliceKind::Full
                    && r.metric == "mae"
                    && r.variant == *v
                    && r.horizon.is_some()
            })
            .map(|r| (r.horizon.expect("filtered"), r.value))
            .collect();
        pts.sort_by_key(|&(f, _)| f);
        for &(f, val) in &pts {
            max_f = max_f.max(f);
            max_v = max_v.max(val);
        }
        if !pts.is_empty() {
            series.push((v, pts));
        }
    }
    if max_v <= 0.0 {
        max_v = 1.0;
    }
    let max_f = max_f.max(1);

    let x = |f: usize| ML + (f as f64 - 1.0) / ((max_f.max(2) - 1) as f64) * (W - ML - MR);
    let y = |v: f64| H - MB - v / (max_v * 1.05) * (H - MT - MB);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">\
         Forecast error by horizon (full test set)</text>\n",
        ML
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));
    for f in 1..=max_f {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"middle\">{f}</text>\n",
            x(f),
            H - MB + 16.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"middle\">horizon (slots ahead)</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0
    ));
    for tick in 0..=4 {
        let v = max_v * 1.05 * tick as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"end\">{v:.3}</text>\n",
            ML - 6.0,
            y(v) + 3.0
        ));
    }
    for (idx, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(f, v)| format!("{},{}", x(f), y(v))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
        let ly = MT + 18.0 * idx as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n",
            W - MR + 10.0,
            W - MR + 36.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{name}</text>\n",
            W - MR + 42.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Segment;
    use tempfile::tempdir;

    fn net_with_classes(classes: &[RoadClass]) -> RoadNetwork {
        // chain: node i -> node i+1
        let n = classes.len();
        let node_xy = (0..=n).map(|i| (i as f64, 0.0)).collect();
        let segments = classes
            .iter()
            .enumerate()
            .map(|(i, &class)| Segment {
                id: i,
                from: i,
                to: i + 1,
                length_m: 1000.0,
                class,
                free_flow_kmh: 60.0,
            })
            .collect();
        RoadNetwork::new(node_xy, segments).unwrap()
    }

    fn small_grid() -> TimeGrid {
        // 16 slots per day, 1 train week + 1 test week
        TimeGrid::new(60, 1, 1).unwrap()
    }

    /// τ for a given speed in km/h.
    fn tau_of(speed_kmh: f64) -> f64 {
        3.6 / speed_kmh
    }

    #[test]
    fn metrics_hand_case() {
        // pred [2,4] truth [1,4]: MAE 0.5, MAPE 50%, RMSE √0.5
        let m = compute_metrics(&[2.0, 4.0], &[1.0, 4.0], &[true, true]).unwrap();
        assert_eq!(m.mae, 0.5);
        assert_eq!(m.mape_pct, 50.0);
        assert!((m.rmse - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.count, 2);
        assert_eq!(m.mape_count, 2);
    }

    #[test]
    fn metrics_perfect_prediction_is_zero() {
        let m = compute_metrics(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], &[true; 3]).unwrap();
        assert_eq!((m.mae, m.mape_pct, m.rmse), (0.0, 0.0, 0.0));
    }

    #[test]
    fn metrics_empty_mask_errors() {
        assert!(compute_metrics(&[1.0], &[1.0], &[false]).is_err());
        assert!(compute_metrics(&[], &[], &[]).is_err());
    }

    #[test]
    fn mape_excludes_extreme_truths() {
        // truth 0.02 s/m = 180 km/h > 120 → excluded; 1e-5 < 1e-4 → excluded
        let truth = [0.02, 1e-5, 0.1];
        let pred = [0.04, 1.0, 0.2];
        let m = compute_metrics(&pred, &truth, &[true; 3]).unwrap();
        assert_eq!(m.count, 3);
        assert_eq!(m.mape_count, 1);
        assert_eq!(m.mape_pct, 100.0);
        // all excluded → NaN, not an error
        let m2 = compute_metrics(&[0.1], &[0.02], &[true]).unwrap();
        assert!(m2.mape_pct.is_nan());
        assert_eq!(m2.mape_count, 0);
    }

    #[test]
    fn metrics_permutation_invariant() {
        // dyadic values keep every partial sum exact, so the comparison
        // can be bitwise
        let pred = [0.25, 0.5, 1.0, 2.0];
        let truth = [0.5, 0.25, 2.0, 4.0];
        let a = compute_metrics(&pred, &truth, &[true; 4]).unwrap();
        let perm_pred = [2.0, 1.0, 0.5, 0.25];
        let perm_truth = [4.0, 2.0, 0.25, 0.5];
        let b = compute_metrics(&perm_pred, &perm_truth, &[true; 4]).unwrap();
        assert_eq!(a, b);
    }

    /// τ tables for one expressway segment over 2 weeks (16-slot days):
    /// free flow 60 km/h except a dip on test day 0.
    fn dip_scenario(dip_speed: f64, dip_slots: &[usize]) -> (Tensor, Tensor, Tensor) {
        let grid = small_grid();
        let s = grid.total_slots();
        let mut tau = Tensor::full(&[1, s], tau_of(60.0));
        let test_day_start = grid.s_train();
        for &d in dip_slots {
            tau.set(&[0, test_day_start + d], tau_of(dip_speed));
        }
        let ha = Tensor::full(&[1, s], tau_of(60.0));
        // plenty of volume: 120 veh/slot = 2 veh/min at 60-minute slots
        let volume = Tensor::full(&[1, s], 120.0);
        (tau, ha, volume)
    }

    fn spec_2veh() -> SliceSpec {
        SliceSpec { high_volume_veh_per_min: 2.0, extension_slots: 2, ..SliceSpec::default() }
    }

    #[test]
    fn free_flow_segment_has_no_c_slots() {
        let grid = small_grid();
        let (tau, ha, vol) = dip_scenario(60.0, &[]);
        let net = net_with_classes(&[RoadClass::Expressway]);
        let masks = classify_slices(&tau, &ha, &vol, &net, &grid, &spec_2veh()).unwrap();
        assert_eq!(masks.count(SliceKind::C), 0);
        assert_eq!(masks.count(SliceKind::Nrc), 0);
        assert!(masks.high_volume[0]);
    }

    #[test]
    fn expressway_dip_extends_both_sides() {
        let grid = small_grid();
        // dip to 15 km/h (below the 20 km/h expressway threshold) at
        // test-day slots 6,7,8
        let (tau, ha, vol) = dip_scenario(15.0, &[6, 7, 8]);
        let net = net_with_classes(&[RoadClass::Expressway]);
        let spec = spec_2veh(); // extension 2 slots for the 16-slot day
        let masks = classify_slices(&tau, &ha, &vol, &net, &grid, &spec).unwrap();
        let day0 = grid.s_train();
        for d in 0..16 {
            let want = (4..=10).contains(&d);
            assert_eq!(
                masks.contains(SliceKind::C, 0, day0 + d),
                want,
                "slot {d}"
            );
        }
        // 15 < 30 = half of 60 → also NRC (run of 3 ≥ 2), same extension
        for d in 0..16 {
            let want = (4..=10).contains(&d);
            assert_eq!(masks.contains(SliceKind::Nrc, 0, day0 + d), want, "slot {d}");
        }
        // train span untouched
        assert!((0..grid.s_train()).all(|t| !masks.contains(SliceKind::C, 0, t)));
    }

    #[test]
    fn exact_half_ha_speed_is_not_nrc() {
        let grid = small_grid();
        // speed exactly 30 = half of HA 60: strictly-below test fails
        let (tau, ha, vol) = dip_scenario(30.0, &[5, 6, 7]);
        let net = net_with_classes(&[RoadClass::Freeway]);
        let masks = classify_slices(&tau, &ha, &vol, &net, &grid, &spec_2veh()).unwrap();
        assert_eq!(masks.count(SliceKind::Nrc), 0);
        // freeway threshold is 30; speed == 30 is not strictly below either
        assert_eq!(masks.count(SliceKind::C), 0);
    }

    #[test]
    fn single_slot_nrc_run_is_rejected() {
        let grid = small_grid();
        let (tau, ha, vol) = dip_scenario(10.0, &[9]);
        let net = net_with_classes(&[RoadClass::Expressway]);
        let masks = classify_slices(&tau, &ha, &vol, &net, &grid, &spec_2veh()).unwrap();
        assert_eq!(masks.count(SliceKind::Nrc), 0);
        // C has no minimum run: 1 slot + 2-slot extension each side
        assert_eq!(masks.count(SliceKind::C), 5);
    }

    #[test]
    fn extension_clips_at_day_boundary() {
        let grid = small_grid();
        let (tau, ha, vol) = dip_scenario(10.0, &[14, 15]);
        let net = net_with_classes(&[RoadClass::Expressway]);
        let masks = classify_slices(&tau, &ha, &vol, &net, &grid, &spec_2veh()).unwrap();
        let day0 = grid.s_train();
        // extension reaches 12..16 but never the next day
        let c: Vec<usize> = (0..grid.total_slots())
            .filter(|&t| masks.contains(SliceKind::C, 0, t))
            .collect();
        assert_eq!(c, vec![day0 + 12, day0 + 13, day0 + 14, day0 + 15]);
    }

    #[test]
    fn low_volume_segment_is_never_sliced() {
        let grid = small_grid();
        let (tau, ha, _) = dip_scenario(10.0, &[5, 6, 7]);
        let vol = Tensor::full(&[1, grid.total_slots()], 30.0); // 0.5 veh/min
        let net = net_with_classes(&[RoadClass::Expressway]);
        let masks = classify_slices(&tau, &ha, &vol, &net, &grid, &spec_2veh()).unwrap();
        assert!(!masks.high_volume[0]);
        assert_eq!(masks.count(SliceKind::C), 0);
        assert_eq!(masks.count(SliceKind::Nrc), 0);
    }

    #[test]
    fn nrc_subset_of_c_when_half_ha_below_class_threshold() {
        // expressway with HA speed 36: half is 18 < 20 class threshold,
        // so every pre-extension NRC slot must already be C. With equal
        // extensions the final masks then nest too.
        let grid = small_grid();
        let s = grid.total_slots();
        let mut tau = Tensor::full(&[1, s], tau_of(36.0));
        let day0 = grid.s_train();
        for d in [3, 4, 5, 9, 10] {
            tau.set(&[0, day0 + d], tau_of(17.0)); // < 18 → NRC and C
        }
        tau.set(&[0, day0 + 12], tau_of(19.0)); // C only (19 < 20, ≥ 18)
        let ha = Tensor::full(&[1, s], tau_of(36.0));
        let vol = Tensor::full(&[1, s], 120.0);
        let net = net_with_classes(&[RoadClass::Expressway]);
        let masks = classify_slices(&tau, &ha, &vol, &net, &grid, &spec_2veh()).unwrap();
        for t in 0..s {
            if masks.contains(SliceKind::Nrc, 0, t) {
                assert!(masks.contains(SliceKind::C, 0, t), "NRC slot {t} not in C");
            }
        }
        assert!(masks.count(SliceKind::C) > masks.count(SliceKind::Nrc));
    }

    #[test]
    fn classification_is_deterministic() {
        let grid = small_grid();
        let (tau, ha, vol) = dip_scenario(12.0, &[4, 5, 6, 11]);
        let net = net_with_classes(&[RoadClass::Highway]);
        let a = classify_slices(&tau, &ha, &vol, &net, &grid, &spec_2veh()).unwrap();
        let b = classify_slices(&tau, &ha, &vol, &net, &grid, &spec_2veh()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ha_baseline_ignores_recent_observations() {
        let ha = Tensor::new(vec![1, 8], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
        let preds = ha_baseline(&ha, &[2, 3], 2).unwrap();
        assert_eq!(preds.len(), 2);
        // anchor 2 → slots 3,4; anchor 3 → slots 4,5
        assert_eq!(preds[0].data(), &[0.4, 0.5]);
        assert_eq!(preds[1].data(), &[0.5, 0.6]);
        assert!(ha_baseline(&ha, &[7], 2).is_err());
    }

    #[test]
    fn evaluate_runs_and_report_round_trip() {
        let grid = small_grid();
        let s = grid.total_slots();
        let n = 2;
        let net = net_with_classes(&[RoadClass::Expressway, RoadClass::Major]);
        let mut tau = Tensor::full(&[n, s], tau_of(50.0));
        let day0 = grid.s_train();
        for d in 5..=8 {
            tau.set(&[0, day0 + d], tau_of(14.0));
        }
        let ha = Tensor::full(&[n, s], tau_of(50.0));
        let vol = Tensor::full(&[n, s], 120.0);
        let masks =
            classify_slices(&tau, &ha, &vol, &net, &grid, &spec_2veh()).unwrap();

        let f_horizon = 2;
        let anchors: Vec<usize> = (day0 + 1..day0 + 13).collect();
        let ha_run = VariantRun {
            name: "ha".into(),
            preds: ha_baseline(&ha, &anchors, f_horizon).unwrap(),
        };
        // a slightly-off model
        let off = VariantRun {
            name: "model".into(),
            preds: anchors
                .iter()
                .map(|&t0| {
                    let mut p = Tensor::zeros(&[n, f_horizon]);
                    for i in 0..n {
                        for f in 0..f_horizon {
                            p.set(&[i, f], tau.at(&[i, t0 + 1 + f]) + 0.01);
                        }
                    }
                    p
                })
                .collect(),
        };
        let rows =
            evaluate_runs(&[ha_run, off], &anchors, &tau, &masks, f_horizon).unwrap();
        // pooled + per-horizon rows exist for both variants and all slices
        for variant in ["ha", "model"] {
            for slice in SliceKind::ALL {
                assert!(
                    rows.iter().any(|r| r.variant == variant
                        && r.slice == slice
                        && r.horizon.is_none()
                        && r.metric == "mae"),
                    "missing pooled MAE for {variant}/{slice}"
                );
            }
        }
        // the off-by-0.01 model has pooled full MAE exactly 0.01
        let model_mae = rows
            .iter()
            .find(|r| {
                r.variant == "model"
                    && r.slice == SliceKind::Full
                    && r.horizon.is_none()
                    && r.metric == "mae"
            })
            .unwrap();
        assert!((model_mae.value - 0.01).abs() < 1e-12);
        // HA is exact outside the dip but wrong inside: NRC MAE > full MAE
        let ha_full = rows
            .iter()
            .find(|r| {
                r.variant == "ha"
                    && r.slice == SliceKind::Full
                    && r.horizon.is_none()
                    && r.metric == "mae"
            })
            .unwrap();
        let ha_nrc = rows
            .iter()
            .find(|r| {
                r.variant == "ha"
                    && r.slice == SliceKind::Nrc
                    && r.horizon.is_none()
                    && r.metric == "mae"
            })
            .unwrap();
        assert!(ha_nrc.value > ha_full.value);

        let dir = tempdir().unwrap();
        build_report(&rows, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert!(csv.starts_with("slice,variant,horizon,metric,value,count\n"));
        assert!(csv.contains("full,model,all,mae,"));
        assert!(csv.contains("nrc,ha,"));
        let svg = fs::read_to_string(dir.path().join("report.svg")).unwrap();
        assert!(svg.contains("<svg") && svg.contains("polyline"));
        // regeneration is byte-identical
        let first_csv = fs::read(dir.path().join("report.csv")).unwrap();
        let first_svg = fs::read(dir.path().join("report.svg")).unwrap();
        build_report(&rows, dir.path()).unwrap();
        assert_eq!(first_csv, fs::read(dir.path().join("report.csv")).unwrap());
        assert_eq!(first_svg, fs::read(dir.path().join("report.svg")).unwrap());
    }

    #[test]
    fn report_rejects_mae_above_rmse() {
        let rows = vec![
            ReportRow {
                slice: SliceKind::Full,
                variant: "x".into(),
                horizon: None,
                metric: "mae".into(),
                value: 2.0,
                count: 4,
            },
            ReportRow {
                slice: SliceKind::Full,
                variant: "x".into(),
                horizon: None,
                metric: "rmse".into(),
                value: 1.0,
                count: 4,
            },
        ];
        let dir = tempdir().unwrap();
        assert!(build_report(&rows, dir.path()).is_err());
    }

    #[test]
    fn run_anchor_mismatch_is_rejected() {
        let grid = small_grid();
        let s = grid.total_slots();
        let net = net_with_classes(&[RoadClass::Major]);
        let tau = Tensor::full(&[1, s], 0.1);
        let vol = Tensor::full(&[1, s], 120.0);
        let masks = classify_slices(&tau, &tau, &vol, &net, &grid, &spec_2veh()).unwrap();
        let run = VariantRun { name: "x".into(), preds: vec![Tensor::zeros(&[1, 2])] };
        let err = evaluate_runs(&[run], &[5, 6], &tau, &masks, 2).unwrap_err();
        assert!(err.to_string().contains("2 anchors"), "got: {err}");
    }
}
