//! Stop detection and the stacked stop-count histograms fed to the network.
//!
//! A stop is a maximal run of consecutive samples whose forward-difference
//! speed stays at or below `v_max` with no tracking gap longer than
//! `max_gap`, lasting at least `min_duration` seconds from its first to its
//! last sample. Each stop is counted once, in the grid tile of its mean
//! position and the time interval containing its start.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Slack on the inclusive speed threshold, in cm/s. Forward differences of a
/// motion at exactly `v_max` land a few ulps either side of it.
pub const SPEED_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// Seconds since the start of the recording.
    pub t: f64,
    /// Centimetres from the left wall.
    pub x: f64,
    /// Centimetres from the top wall (row 0 of the grid).
    pub y: f64,
}

impl TrajectorySample {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        TrajectorySample { t, x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    pub t_start: f64,
    pub t_end: f64,
    pub x: f64,
    pub y: f64,
}

impl StopEvent {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizeConfig {
    pub cage_w: f64,
    pub cage_h: f64,
    pub grid_n: usize,
    pub intervals_t: usize,
    /// Seconds per time bin.
    pub interval_len: f64,
    /// Speed threshold in cm/s (inclusive).
    pub v_max: f64,
    /// Minimum stop duration in seconds.
    pub min_duration: f64,
    /// Nominal sampling rate; informational only, stop detection uses the
    /// sample timestamps.
    pub fps: f64,
    /// Largest gap between consecutive samples that a stop may span, seconds.
    pub max_gap: f64,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        FeaturizeConfig {
            cage_w: 50.0,
            cage_h: 50.0,
            grid_n: 30,
            intervals_t: 72,
            interval_len: 3600.0,
            v_max: 5.0,
            min_duration: 1.0,
            fps: 30.0,
            max_gap: 0.5,
        }
    }
}

impl FeaturizeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cage_w", self.cage_w),
            ("cage_h", self.cage_h),
            ("interval_len", self.interval_len),
            ("v_max", self.v_max),
            ("min_duration", self.min_duration),
            ("fps", self.fps),
            ("max_gap", self.max_gap),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("featurize.{name} must be positive, got {value}")));
            }
        }
        if self.grid_n == 0 || self.intervals_t == 0 {
            return Err(Error::Config("featurize.grid_n and featurize.intervals_t must be >= 1".into()));
        }
        Ok(())
    }

    /// Length of a flattened histogram stack, `T * N * N`.
    pub fn flat_len(&self) -> usize {
        self.intervals_t * self.grid_n * self.grid_n
    }
}

/// Checks that timestamps strictly increase.
pub fn validate_samples(samples: &[TrajectorySample]) -> Result<()> {
    for (i, pair) in samples.windows(2).enumerate() {
        let (prev, t) = (pair[0].t, pair[1].t);
        if t == prev {
            return Err(Error::DuplicateTime { index: i + 1, t });
        }
        if !(t > prev) {
            return Err(Error::NonMonotonicTime { index: i + 1, prev, t });
        }
    }
    Ok(())
}

/// Forward-difference speed `|p[i+1] - p[i]| / (t[i+1] - t[i])`, attributed
/// to `t[i]`. Returns one entry fewer than there are samples.
pub fn compute_velocity(samples: &[TrajectorySample]) -> Result<Vec<(f64, f64)>> {
    if samples.len() < 2 {
        return Err(Error::Empty("velocity needs at least two samples"));
    }
    validate_samples(samples)?;
    Ok(samples
        .windows(2)
        .map(|w| {
            let dist = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            (w[0].t, dist / (w[1].t - w[0].t))
        })
        .collect())
}

/// Finds every maximal stop bout.
pub fn detect_stops(samples: &[TrajectorySample], config: &FeaturizeConfig) -> Result<Vec<StopEvent>> {
    if samples.len() < 2 {
        validate_samples(samples)?;
        return Ok(Vec::new());
    }
    let speeds = compute_velocity(samples)?;
    let threshold = config.v_max + SPEED_TOLERANCE;
    let mut stops = Vec::new();
    let mut run_start: Option<usize> = None;

    // Segment i joins samples i and i+1.
    for (i, &(_, v)) in speeds.iter().enumerate() {
        let still = v <= threshold && samples[i + 1].t - samples[i].t <= config.max_gap;
        match (still, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(first)) => {
                push_if_long(&samples[first..=i], config, &mut stops);
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(first) = run_start {
        push_if_long(&samples[first..], config, &mut stops);
    }
    Ok(stops)
}

fn push_if_long(run: &[TrajectorySample], config: &FeaturizeConfig, stops: &mut Vec<StopEvent>) {
    let (first, last) = (run[0], run[run.len() - 1]);
    if last.t - first.t < config.min_duration {
        return;
    }
    let n = run.len() as f64;
    let (sx, sy) = run.iter().fold((0.0, 0.0), |(sx, sy), s| (sx + s.x, sy + s.y));
    stops.push(StopEvent {
        t_start: first.t,
        t_end: last.t,
        x: sx / n,
        y: sy / n,
    });
}

/// Stop counts per `[time bin, row (y), column (x)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramStack {
    pub t_bins: usize,
    pub n: usize,
    pub counts: Tensor,
    /// Stops dropped because they started after the last interval.
    pub discarded: usize,
}

impl HistogramStack {
    pub fn total(&self) -> f64 {
        self.counts.sum()
    }
}

/// Tile index along one axis: `min(floor(v * n / extent), n - 1)`.
///
/// Multiplying before dividing keeps exact tile boundaries exact
/// (`25 * 30 / 50 == 15`, whereas `25 / (50 / 30)` rounds down to 14).
pub fn tile_index(v: f64, extent: f64, n: usize) -> usize {
    ((v * n as f64 / extent).floor() as usize).min(n - 1)
}

pub fn build_histogram_stack(stops: &[StopEvent], config: &FeaturizeConfig) -> Result<HistogramStack> {
    let (t_bins, n) = (config.intervals_t, config.grid_n);
    let mut counts = Tensor::zeros(&[t_bins, n, n]);
    let mut discarded = 0;
    for stop in stops {
        let in_cage = |v: f64, extent: f64| v.is_finite() && (0.0..=extent).contains(&v);
        if !in_cage(stop.x, config.cage_w) || !in_cage(stop.y, config.cage_h) {
            return Err(Error::OutOfBounds {
                x: stop.x,
                y: stop.y,
                width: config.cage_w,
                height: config.cage_h,
            });
        }
        if !(stop.t_start >= 0.0) {
            return Err(Error::Config(format!("stop starts at negative time {}", stop.t_start)));
        }
        let bin = (stop.t_start / config.interval_len).floor();
        if bin >= t_bins as f64 {
            discarded += 1;
            continue;
        }
        let bx = tile_index(stop.x, config.cage_w, n);
        let by = tile_index(stop.y, config.cage_h, n);
        let off = (bin as usize * n + by) * n + bx;
        counts.data_mut()[off] += 1.0;
    }
    if discarded > 0 {
        log::warn!(
            "{discarded} stop(s) start beyond the {t_bins} x {}s horizon and were discarded",
            config.interval_len
        );
    }
    Ok(HistogramStack {
        t_bins,
        n,
        counts,
        discarded,
    })
}

/// Input scaling applied to a histogram stack before it reaches a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    /// Divide by the total count, so the stack sums to one.
    #[default]
    Total,
    /// Divide by the largest tile count.
    Max,
}

/// Scales a stack; an all-zero stack is returned unchanged in every mode.
pub fn normalize_stack(stack: &HistogramStack, mode: Normalization) -> Tensor {
    normalize_tensor(&stack.counts, mode)
}

pub fn normalize_tensor(counts: &Tensor, mode: Normalization) -> Tensor {
    let divisor = match mode {
        Normalization::None => None,
        Normalization::Total => Some(counts.sum()),
        Normalization::Max => counts.max(),
    };
    match divisor {
        Some(d) if d > 0.0 => counts.map(|v| v / d),
        _ => counts.clone(),
    }
}

/// Stops plus histogram for one recording.
pub fn featurize(samples: &[TrajectorySample], config: &FeaturizeConfig) -> Result<HistogramStack> {
    build_histogram_stack(&detect_stops(samples, config)?, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(frames: usize, fps: f64, x: f64, y: f64) -> Vec<TrajectorySample> {
        (0..frames).map(|i| TrajectorySample::new(i as f64 / fps, x, y)).collect()
    }

    #[test]
    fn velocity_examples() {
        let v = compute_velocity(&still(5, 30.0, 3.0, 4.0)).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|&(_, s)| s == 0.0));

        let two = [TrajectorySample::new(0.0, 0.0, 0.0), TrajectorySample::new(1.0 / 30.0, 0.2, 0.0)];
        let v = compute_velocity(&two).unwrap();
        assert!((v[0].1 - 6.0).abs() < 1e-12);

        let ramp: Vec<_> = (0..90)
            .map(|i| {
                let t = i as f64 / 30.0;
                TrajectorySample::new(t, 5.0 * t, 0.0)
            })
            .collect();
        for (_, s) in compute_velocity(&ramp).unwrap() {
            assert!((s - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn velocity_rejects_bad_time() {
        let dup = [TrajectorySample::new(0.0, 0.0, 0.0), TrajectorySample::new(0.0, 1.0, 0.0)];
        assert!(matches!(compute_velocity(&dup), Err(Error::DuplicateTime { index: 1, .. })));
        let back = [
            TrajectorySample::new(0.0, 0.0, 0.0),
            TrajectorySample::new(1.0, 0.0, 0.0),
            TrajectorySample::new(0.5, 0.0, 0.0),
        ];
        assert!(matches!(compute_velocity(&back), Err(Error::NonMonotonicTime { index: 2, .. })));
    }

    #[test]
    fn ninety_still_frames_make_one_stop() {
        let stops = detect_stops(&still(90, 30.0, 10.0, 10.0), &FeaturizeConfig::default()).unwrap();
        assert_eq!(stops.len(), 1);
        assert!((stops[0].duration() - 89.0 / 30.0).abs() < 1e-12);
        assert_eq!((stops[0].x, stops[0].y), (10.0, 10.0));
    }

    #[test]
    fn constant_fast_motion_has_no_stops() {
        let samples: Vec<_> = (0..300)
            .map(|i| {
                let t = i as f64 / 30.0;
                TrajectorySample::new(t, 10.0 * t, 1.0)
            })
            .collect();
        assert!(detect_stops(&samples, &FeaturizeConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn motion_at_exactly_v_max_counts_as_stopped() {
        let samples: Vec<_> = (0..60)
            .map(|i| {
                let t = i as f64 / 30.0;
                TrajectorySample::new(t, 5.0 * t, 0.0)
            })
            .collect();
        let stops = detect_stops(&samples, &FeaturizeConfig::default()).unwrap();
        assert_eq!(stops.len(), 1);
    }

    #[test]
    fn tracking_gap_splits_a_stop() {
        let mut samples = still(45, 30.0, 5.0, 5.0);
        let resume: Vec<_> = (0..45).map(|i| TrajectorySample::new(10.0 + i as f64 / 30.0, 5.0, 5.0)).collect();
        samples.extend(resume);
        let stops = detect_stops(&samples, &FeaturizeConfig::default()).unwrap();
        assert_eq!(stops.len(), 2);
        assert_eq!(stops[1].t_start, 10.0);
    }

    #[test]
    fn short_pause_is_not_a_stop() {
        let stops = detect_stops(&still(30, 30.0, 1.0, 1.0), &FeaturizeConfig::default()).unwrap();
        assert!(stops.is_empty(), "29 frames span 0.967 s");
    }

    #[test]
    fn histogram_binning_examples() {
        let cfg = FeaturizeConfig::default();
        let stop = |x, y, t| StopEvent { t_start: t, t_end: t + 1.0, x, y };
        let h = build_histogram_stack(&[stop(25.0, 25.0, 0.0)], &cfg).unwrap();
        assert_eq!(h.counts.get(&[0, 15, 15]), 1.0);
        assert_eq!(h.total(), 1.0);

        let h = build_histogram_stack(&[stop(50.0, 0.0, 3600.0)], &cfg).unwrap();
        assert_eq!(h.counts.get(&[1, 0, 29]), 1.0);

        assert_eq!(h.counts.len(), 64800);

        let late = build_histogram_stack(&[stop(1.0, 1.0, 72.0 * 3600.0)], &cfg).unwrap();
        assert_eq!(late.total(), 0.0);
        assert_eq!(late.discarded, 1);

        assert!(matches!(
            build_histogram_stack(&[stop(-1.0, 1.0, 0.0)], &cfg),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn normalization_modes() {
        let mut counts = Tensor::zeros(&[2, 3, 3]);
        counts.data_mut()[1] = 3.0;
        counts.data_mut()[10] = 1.0;
        let stack = HistogramStack { t_bins: 2, n: 3, counts: counts.clone(), discarded: 0 };
        assert_eq!(normalize_stack(&stack, Normalization::None), counts);
        assert!((normalize_stack(&stack, Normalization::Total).sum() - 1.0).abs() < 1e-12);
        assert_eq!(normalize_stack(&stack, Normalization::Max).max(), Some(1.0));

        let zero = HistogramStack { t_bins: 2, n: 3, counts: Tensor::zeros(&[2, 3, 3]), discarded: 0 };
        for mode in [Normalization::None, Normalization::Total, Normalization::Max] {
            assert_eq!(normalize_stack(&zero, mode), zero.counts);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FeaturizeConfig::default().validate().is_ok());
        let bad = FeaturizeConfig { grid_n: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = FeaturizeConfig { v_max: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
