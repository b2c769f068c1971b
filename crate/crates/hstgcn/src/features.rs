//! Feature pipeline: weekly historical averages, route aggregation into
//! the ideal-future-volume cube, assembly of the V/T input windows with
//! their labels, Gaussian noise augmentation, anchor sampling, and input
//! standardization.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::navlog::NavigationLog;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// How the weekly historical average divides its sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaDivisor {
    /// Divide by the number of terms actually summed (after the r ≠ t
    /// exclusion). Unbiased; the default.
    #[default]
    TermCount,
    /// Divide by the number of training weeks W even when the exclusion
    /// removed a term, reproducing the formula literally.
    LiteralWeeks,
}

/// Weekly historical average of one series at slot `t`: the mean over
/// training slots `r` with `r ≡ t (mod L)` and `r ≠ t`.
pub fn historical_average(
    series: &[f64],
    grid: &TimeGrid,
    t: usize,
    divisor: HaDivisor,
) -> Result<f64> {
    let l = grid.slots_per_week();
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut r = t % l;
    while r < grid.s_train() {
        if r != t {
            sum += series[r];
            count += 1;
        }
        r += l;
    }
    if count == 0 {
        return Err(Error::Data(format!(
            "no qualifying training slots for historical average at slot {t}"
        )));
    }
    let div = match divisor {
        HaDivisor::TermCount => count as f64,
        HaDivisor::LiteralWeeks => grid.weeks_train as f64,
    };
    Ok(sum / div)
}

/// Historical average of every (segment, slot) cell of an n×S series
/// tensor, computed in O(n·S) via per-slot-of-week running sums.
pub fn ha_table(series: &Tensor, grid: &TimeGrid, divisor: HaDivisor) -> Result<Tensor> {
    let [n, s_total] = *series.shape() else {
        return Err(Error::Shape(format!(
            "ha_table expects n×S input, got {:?}",
            series.shape()
        )));
    };
    if s_total != grid.total_slots() {
        return Err(Error::Shape(format!(
            "series has {s_total} slots, grid expects {}",
            grid.total_slots()
        )));
    }
    let l = grid.slots_per_week();
    let s_train = grid.s_train();
    let w = grid.weeks_train;
    let mut out = vec![0.0; n * s_total];
    for i in 0..n {
        let row = &series.data()[i * s_total..(i + 1) * s_total];
        // per slot-of-week training sums
        let mut slot_sum = vec![0.0; l];
        for (r, &v) in row[..s_train].iter().enumerate() {
            slot_sum[r % l] += v;
        }
        for (t, dst) in out[i * s_total..(i + 1) * s_total].iter_mut().enumerate() {
            let in_train = t < s_train;
            let sum = slot_sum[t % l] - if in_train { row[t] } else { 0.0 };
            let count = if in_train { w - 1 } else { w };
            if count == 0 {
                return Err(Error::Data(format!(
                    "no qualifying training slots for historical average at slot {t}"
                )));
            }
            let div = match divisor {
                HaDivisor::TermCount => count as f64,
                HaDivisor::LiteralWeeks => w as f64,
            };
            *dst = sum / div;
        }
    }
    Tensor::new(vec![n, s_total], out)
}

/// Ideal-future-volume cube: `nu[s, t, f]` = vehicles planned to enter
/// segment `s` in slot `t + f` as known at slot `t` (vehicles per slot).
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeCube {
    pub nu: Tensor,
    pub horizons: usize,
}

impl VolumeCube {
    pub fn n(&self) -> usize {
        self.nu.shape()[0]
    }

    pub fn slots(&self) -> usize {
        self.nu.shape()[1]
    }

    pub fn at(&self, s: usize, t: usize, f: usize) -> f64 {
        self.nu.at(&[s, t, f])
    }

    /// The f = 0 plane as an n×S tensor (current-slot planned entries).
    pub fn current_volume(&self) -> Tensor {
        let n = self.n();
        let s = self.slots();
        let fp1 = self.horizons + 1;
        let mut out = vec![0.0; n * s];
        for i in 0..n {
            for t in 0..s {
                out[i * s + t] = self.nu.data()[(i * s + t) * fp1];
            }
        }
        Tensor::new(vec![n, s], out).expect("current volume shape")
    }
}

/// Counters reported by [`aggregate_routes`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AggregateDiagnostics {
    /// Hops whose planned arrival fell outside the observation grid.
    pub skipped_hops: usize,
    /// Hops that contributed at least one count.
    pub counted_hops: usize,
}

/// Route aggregation: every hop `(s, δ)` of every record contributes one
/// count at `(s, δ − f, f)` for `f = 0, 1, …, F`, stopping as soon as
/// the receded slot would precede the launch slot ψ.
pub fn aggregate_routes(
    log: &NavigationLog,
    grid: &TimeGrid,
    n: usize,
    f_horizon: usize,
) -> Result<(VolumeCube, AggregateDiagnostics)> {
    log.validate(n)?;
    let s_total = grid.total_slots();
    let fp1 = f_horizon + 1;
    let mut nu = Tensor::zeros(&[n, s_total, fp1]);
    let mut diag = AggregateDiagnostics::default();
    let data = nu.data_mut();
    for rec in &log.records {
        let psi = rec.launch_slot as isize;
        for &(seg, delta) in &rec.hops {
            let Some(delta) = delta else {
                diag.skipped_hops += 1;
                continue;
            };
            if delta >= s_total {
                diag.skipped_hops += 1;
                continue;
            }
            let mut t = delta as isize;
            let mut contributed = false;
            for f in 0..fp1 {
                if t < psi {
                    break;
                }
                data[(seg * s_total + t as usize) * fp1 + f] += 1.0;
                contributed = true;
                t -= 1;
            }
            if contributed {
                diag.counted_hops += 1;
            }
        }
    }
    Ok((VolumeCube { nu, horizons: f_horizon }, diag))
}

/// One model-ready anchor window: inputs V and T plus the label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensorPair {
    /// n × P × 2(F+1): per slice t, planned volumes ν at horizons 0..F,
    /// then the volume historical average at slots t..t+F.
    pub v: Tensor,
    /// n × P × (F+2): per slice t, observed travel time at t, then the
    /// travel-time historical average at slots t..t+F.
    pub t: Tensor,
    /// Anchor slot t₀ (last input slice).
    pub anchor: usize,
    /// n × F true travel times at slots t₀+1 .. t₀+F.
    pub label: Tensor,
}

/// Assemble the V/T window and label anchored at `t0`. The full span
/// `[t0 − P + 1, t0 + F]` must stay inside one day of the grid.
#[allow(clippy::too_many_arguments)]
pub fn build_feature_window(
    cube: &VolumeCube,
    travel_time: &Tensor,
    ha_volume: &Tensor,
    ha_time: &Tensor,
    grid: &TimeGrid,
    t0: usize,
    p: usize,
    f_horizon: usize,
) -> Result<FeatureTensorPair> {
    let n = cube.n();
    let s_total = grid.total_slots();
    if travel_time.shape() != [n, s_total]
        || ha_volume.shape() != [n, s_total]
        || ha_time.shape() != [n, s_total]
    {
        return Err(Error::Shape(
            "feature window inputs must all be n×S over the same grid".into(),
        ));
    }
    if cube.horizons < f_horizon {
        return Err(Error::Shape(format!(
            "volume cube carries {} horizons, window needs {f_horizon}",
            cube.horizons
        )));
    }
    if t0 + 1 < p || t0 + f_horizon >= s_total {
        return Err(Error::Data(format!(
            "window [{t0}−{p}+1, {t0}+{f_horizon}] leaves the grid"
        )));
    }
    let start = t0 + 1 - p;
    if !grid.same_day(start, t0 + f_horizon) {
        return Err(Error::Data(format!(
            "window anchored at {t0} straddles a day boundary"
        )));
    }
    let fp1 = f_horizon + 1;
    let v_ch = 2 * fp1;
    let t_ch = f_horizon + 2;
    let mut v = vec![0.0; n * p * v_ch];
    let mut tt = vec![0.0; n * p * t_ch];
    for i in 0..n {
        for (slice, t) in (start..=t0).enumerate() {
            let vrow = &mut v[(i * p + slice) * v_ch..(i * p + slice + 1) * v_ch];
            for f in 0..fp1 {
                vrow[f] = cube.at(i, t, f);
                vrow[fp1 + f] = ha_volume.at(&[i, t + f]);
            }
            let trow = &mut tt[(i * p + slice) * t_ch..(i * p + slice + 1) * t_ch];
            trow[0] = travel_time.at(&[i, t]);
            for f in 0..fp1 {
                trow[1 + f] = ha_time.at(&[i, t + f]);
            }
        }
    }
    let mut label = vec![0.0; n * f_horizon];
    for i in 0..n {
        for f in 0..f_horizon {
            label[i * f_horizon + f] = travel_time.at(&[i, t0 + 1 + f]);
        }
    }
    Ok(FeatureTensorPair {
        v: Tensor::new(vec![n, p, v_ch], v)?,
        t: Tensor::new(vec![n, p, t_ch], tt)?,
        anchor: t0,
        label: Tensor::new(vec![n, f_horizon], label)?,
    })
}

/// Training-time augmentation: entries below the threshold ε_n receive
/// additive zero-mean Gaussian noise, clamped at zero from below.
/// Entries at or above the threshold pass through untouched.
pub fn inject_noise(v: &Tensor, threshold: f64, std: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if !(std > 0.0) {
        return Err(Error::Config(format!("noise std must be positive, got {std}")));
    }
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::Config(format!("invalid noise distribution: {e}")))?;
    let data = v
        .data()
        .iter()
        .map(|&x| {
            if x < threshold {
                (x + normal.sample(rng)).max(0.0)
            } else {
                x
            }
        })
        .collect();
    Tensor::new(v.shape().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    Train,
    Test,
}

/// Anchor slots whose full window `[t0 − P + 1, t0 + F]` fits inside a
/// single day of the requested span. Train mode shuffles with the given
/// seed; test mode enumerates in slot order.
pub fn window_sampler(
    grid: &TimeGrid,
    p: usize,
    f_horizon: usize,
    mode: SamplerMode,
    seed: u64,
) -> Vec<usize> {
    let spd = grid.slots_per_day;
    let (first_day, last_day) = match mode {
        SamplerMode::Train => (0, grid.weeks_train * 7),
        SamplerMode::Test => (grid.weeks_train * 7, grid.total_days()),
    };
    let mut anchors = Vec::new();
    if p + f_horizon > spd {
        return anchors;
    }
    for day in first_day..last_day {
        let day_start = day * spd;
        for t0 in (day_start + p - 1)..=(day_start + spd - 1 - f_horizon) {
            anchors.push(t0);
        }
    }
    if mode == SamplerMode::Train {
        let mut rng = crate::seed::rng(seed, "window-sampler");
        anchors.shuffle(&mut rng);
    }
    anchors
}

/// Per-channel z-score statistics for the travel-time input tensor,
/// fitted on training anchors only and stored in the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Streaming accumulator behind [`Normalizer::fit`], for callers that
/// generate windows one at a time instead of holding them all.
#[derive(Debug, Clone, Default)]
pub struct NormalizerFit {
    channels: usize,
    count: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl NormalizerFit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, w: &Tensor) -> Result<()> {
        let c = *w.shape().last().expect("non-empty shape");
        if self.channels == 0 {
            self.channels = c;
            self.sum = vec![0.0; c];
            self.sumsq = vec![0.0; c];
        } else if c != self.channels {
            return Err(Error::Shape(format!(
                "normalizer saw {}- and {c}-channel windows",
                self.channels
            )));
        }
        for chunk in w.data().chunks_exact(c) {
            for (ch, &x) in chunk.iter().enumerate() {
                self.sum[ch] += x;
                self.sumsq[ch] += x * x;
            }
        }
        self.count += w.numel() / c;
        Ok(())
    }

    pub fn finish(self) -> Result<Normalizer> {
        if self.count == 0 {
            return Err(Error::Data("normalizer fitted on zero samples".into()));
        }
        let mean: Vec<f64> = self.sum.iter().map(|s| s / self.count as f64).collect();
        let std: Vec<f64> = self
            .sumsq
            .iter()
            .zip(&mean)
            .map(|(&sq, &m)| {
                let var = (sq / self.count as f64 - m * m).max(0.0);
                let sd = var.sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalizer { mean, std })
    }
}

impl Normalizer {
    /// Fit per-channel statistics over the last axis of n×P×C tensors.
    /// Channels with zero variance get std 1 so they pass through as
    /// zero after centering.
    pub fn fit<'a>(windows: impl Iterator<Item = &'a Tensor>) -> Result<Self> {
        let mut acc = NormalizerFit::new();
        for w in windows {
            acc.add(w)?;
        }
        acc.finish()
    }

    /// Channel count the normalizer was fitted for.
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        let c = *t.shape().last().expect("non-empty shape");
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "normalizer fitted for {} channels, input has {c}",
                self.channels()
            )));
        }
        let mut out = t.clone();
        for chunk in out.data_mut().chunks_exact_mut(c) {
            for (ch, x) in chunk.iter_mut().enumerate() {
                *x = (*x - self.mean[ch]) / self.std[ch];
            }
        }
        Ok(out)
    }
}

/// Everything needed to materialize feature windows on demand: the
/// volume cube, the observed travel times, and the two historical
/// average tables. Windows are built lazily so the full anchor set never
/// has to live in memory at once.
#[derive(Debug, Clone)]
pub struct FeatureSource {
    pub cube: VolumeCube,
    /// Observed travel times, n × S, in seconds per meter.
    pub travel_time: Tensor,
    /// Historical average of the current-slot volume, n × S.
    pub ha_volume: Tensor,
    /// Historical average of the travel time, n × S.
    pub ha_time: Tensor,
    pub grid: TimeGrid,
}

impl FeatureSource {
    /// Derive both historical-average tables and bundle the inputs.
    pub fn assemble(
        cube: VolumeCube,
        travel_time: Tensor,
        grid: TimeGrid,
        divisor: HaDivisor,
    ) -> Result<Self> {
        let n = cube.n();
        if travel_time.shape() != [n, grid.total_slots()] {
            return Err(Error::Shape(format!(
                "travel time table is {:?}, expected [{n}, {}]",
                travel_time.shape(),
                grid.total_slots()
            )));
        }
        if cube.slots() != grid.total_slots() {
            return Err(Error::Shape(format!(
                "volume cube covers {} slots, grid has {}",
                cube.slots(),
                grid.total_slots()
            )));
        }
        let ha_volume = ha_table(&cube.current_volume(), &grid, divisor)?;
        let ha_time = ha_table(&travel_time, &grid, divisor)?;
        Ok(Self { cube, travel_time, ha_volume, ha_time, grid })
    }

    pub fn n(&self) -> usize {
        self.cube.n()
    }

    /// Materialize the window anchored at `t0`.
    pub fn window(&self, t0: usize, p: usize, f_horizon: usize) -> Result<FeatureTensorPair> {
        build_feature_window(
            &self.cube,
            &self.travel_time,
            &self.ha_volume,
            &self.ha_time,
            &self.grid,
            t0,
            p,
            f_horizon,
        )
    }

    /// Fit the travel-time normalizer over the given anchors without
    /// keeping more than one window alive.
    pub fn fit_normalizer(&self, anchors: &[usize], p: usize, f_horizon: usize) -> Result<Normalizer> {
        let mut acc = NormalizerFit::new();
        for &t0 in anchors {
            let w = self.window(t0, p, f_horizon)?;
            acc.add(&w.t)?;
        }
        acc.finish()
    }
}
