//! From emission records to fluorescence periods: binned intensity,
//! threshold classification into dark, single and double periods, duration
//! statistics and the subspace populations behind each period.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::subspace_populations;
use crate::model::ModelParams;
use crate::oracle::two_level_rate;
use crate::stats::standard_error;
use crate::trajectory::{EmissionRecord, TrajectoryEngine};

/// Averaging window for intensity traces, units of `1/A3`.
pub const TRACE_WINDOW: f64 = 190.0;
/// Averaging window for duration statistics, units of `1/A3`.
pub const DURATION_WINDOW: f64 = 250.0;

/// Photon counts in consecutive windows of width `dt` starting at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityTrace {
    pub dt: f64,
    pub counts: Vec<u32>,
}

impl IntensityTrace {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn span(&self) -> f64 {
        self.dt * self.counts.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Photons per unit time in bin `k`.
    pub fn intensity(&self, k: usize) -> f64 {
        f64::from(self.counts[k]) / self.dt
    }

    pub fn intensities(&self) -> impl Iterator<Item = f64> + '_ {
        self.counts.iter().map(|&c| f64::from(c) / self.dt)
    }
}

/// Bins emission times; the trailing partial window is dropped.
pub fn bin_times<I: IntoIterator<Item = f64>>(times: I, duration: f64, dt: f64) -> Result<IntensityTrace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("bin width must be positive, got {dt}")));
    }
    if !(duration >= dt) {
        return Err(Error::domain(format!("duration {duration} shorter than one bin of {dt}")));
    }
    let bins = (duration / dt).floor() as usize;
    let mut counts = vec![0u32; bins];
    for t in times {
        if t >= 0.0 {
            let k = (t / dt).floor() as usize;
            if k < bins {
                counts[k] += 1;
            }
        }
    }
    Ok(IntensityTrace { dt, counts })
}

pub fn bin_intensity(record: &EmissionRecord, dt: f64) -> Result<IntensityTrace> {
    bin_times(record.emission_times(), record.duration, dt)
}

/// Steady emission rate `I1` of one resonantly driven two-level atom on the
/// strong transition.
pub fn reference_intensity(params: &ModelParams) -> Result<f64> {
    two_level_rate(params.a3, params.omega3)
}

/// Thresholds are fractions of `I1`. Segments shorter than `min_bins` are
/// absorbed by a neighbour.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub low: f64,
    pub high: f64,
    pub min_bins: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            low: 0.5,
            high: 1.5,
            min_bins: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub class: u8,
    /// First bin.
    pub start: usize,
    /// One past the last bin.
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Contiguous, alternating segments covering every bin of a trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodSequence {
    pub segments: Vec<Segment>,
    pub i1: f64,
    /// Absolute intensity thresholds `(theta01, theta12)`.
    pub thresholds: (f64, f64),
    pub dt: f64,
}

impl PeriodSequence {
    pub fn bins(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn bin_classes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.bins());
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.class, s.len()));
        }
        out
    }

    /// Fraction of bins in `class`.
    pub fn class_fraction(&self, class: u8) -> f64 {
        let n: usize = self.segments.iter().filter(|s| s.class == class).map(Segment::len).sum();
        n as f64 / self.bins().max(1) as f64
    }

    pub fn count(&self, class: u8) -> usize {
        self.segments.iter().filter(|s| s.class == class).count()
    }
}

pub fn classify_bins(trace: &IntensityTrace, i1: f64, config: &ClassifierConfig) -> Vec<u8> {
    let (lo, hi) = (config.low * i1, config.high * i1);
    trace
        .intensities()
        .map(|x| if x < lo { 0 } else if x < hi { 1 } else { 2 })
        .collect()
}

fn merge_runs(classes: impl IntoIterator<Item = (u8, usize)>) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    let mut pos = 0;
    for (class, len) in classes {
        if len == 0 {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.class == class => last.end += len,
            _ => out.push(Segment {
                class,
                start: pos,
                end: pos + len,
            }),
        }
        pos += len;
    }
    out
}

pub fn classify_periods(trace: &IntensityTrace, i1: f64, config: &ClassifierConfig) -> Result<PeriodSequence> {
    if !(i1 > 0.0 && i1.is_finite()) {
        return Err(Error::domain(format!("reference intensity must be positive, got {i1}")));
    }
    if !(config.low > 0.0 && config.high > config.low) {
        return Err(Error::domain("classifier thresholds must satisfy 0 < low < high"));
    }
    let mut segments = merge_runs(classify_bins(trace, i1, config).into_iter().map(|c| (c, 1)));

    while segments.len() > 1 {
        let Some((k, _)) = segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.len() < config.min_bins)
            .min_by_key(|(k, s)| (s.len(), *k))
        else {
            break;
        };
        let left = k.checked_sub(1).map(|i| segments[i]);
        let right = segments.get(k + 1).copied();
        let class = match (left, right) {
            (Some(l), Some(r)) => {
                if r.len() > l.len() {
                    r.class
                } else {
                    l.class
                }
            }
            (Some(l), None) => l.class,
            (None, Some(r)) => r.class,
            (None, None) => unreachable!("more than one segment"),
        };
        segments[k].class = class;
        segments = merge_runs(segments.iter().map(|s| (s.class, s.len())));
    }

    Ok(PeriodSequence {
        segments,
        i1,
        thresholds: (config.low * i1, config.high * i1),
        dt: trace.dt,
    })
}

/// Durations of the interior segments of one or more sequences.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodDurations {
    pub samples: [Vec<f64>; 3],
    pub double_jumps: usize,
    pub dt: f64,
}

impl PeriodDurations {
    pub fn merge(&mut self, other: &PeriodDurations) {
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            a.extend_from_slice(b);
        }
        self.double_jumps += other.double_jumps;
        if self.dt == 0.0 {
            self.dt = other.dt;
        }
    }

    pub fn stats(&self) -> DurationStats {
        let mut out = DurationStats {
            mean: [f64::NAN; 3],
            se: [f64::NAN; 3],
            count: [0; 3],
            double_jumps: self.double_jumps,
        };
        for (k, s) in self.samples.iter().enumerate() {
            out.count[k] = s.len();
            if !s.is_empty() {
                out.mean[k] = s.iter().sum::<f64>() / s.len() as f64;
            }
            out.se[k] = standard_error(s).unwrap_or(f64::NAN);
        }
        if out.mean.iter().any(|&m| m < 10.0 * self.dt) {
            log::warn!(
                "mean period durations {:?} are below 10 averaging windows ({}): short periods may be missed",
                out.mean,
                self.dt
            );
        }
        out
    }
}

/// Mean durations `T0, T1, T2` (units of `1/A3`) with standard errors.
/// Absent classes have `NaN` means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub mean: [f64; 3],
    pub se: [f64; 3],
    pub count: [usize; 3],
    /// Adjacent dark and double-intensity segments.
    pub double_jumps: usize,
}

/// Drops the edge segments, which the observation window truncates.
pub fn period_durations(seq: &PeriodSequence) -> Result<PeriodDurations> {
    if seq.segments.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} segment(s); duration statistics need at least 3",
            seq.segments.len()
        )));
    }
    let mut out = PeriodDurations {
        dt: seq.dt,
        ..Default::default()
    };
    for s in &seq.segments[1..seq.segments.len() - 1] {
        out.samples[usize::from(s.class)].push(s.len() as f64 * seq.dt);
    }
    out.double_jumps = seq
        .segments
        .windows(2)
        .filter(|w| matches!((w[0].class, w[1].class), (0, 2) | (2, 0)))
        .count();
    Ok(out)
}

pub fn duration_stats(seq: &PeriodSequence) -> Result<DurationStats> {
    Ok(period_durations(seq)?.stats())
}

/// Mean intensity over all class-2 bins.
pub fn period2_intensity(seq: &PeriodSequence, trace: &IntensityTrace) -> Result<f64> {
    if seq.bins() != trace.len() {
        return Err(Error::domain("period sequence and trace cover different bins"));
    }
    let (mut photons, mut bins) = (0u64, 0usize);
    for s in seq.segments.iter().filter(|s| s.class == 2) {
        photons += trace.counts[s.start..s.end].iter().map(|&c| u64::from(c)).sum::<u64>();
        bins += s.len();
    }
    if bins == 0 {
        return Err(Error::AbsentClass(2));
    }
    Ok(photons as f64 / (bins as f64 * trace.dt))
}

/// Histogram of bin intensities in units of `I1`. Bins hold a whole number
/// of photon counts so the discrete count values cannot alias: bin `j`
/// covers counts `[j * per_bin, (j + 1) * per_bin)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelHistogram {
    pub per_bin: u32,
    /// Intensity in units of `I1` of one photon count per window.
    pub unit: f64,
    pub counts: Vec<usize>,
}

impl LevelHistogram {
    /// Actual bin width in units of `I1`.
    pub fn width(&self) -> f64 {
        f64::from(self.per_bin) * self.unit
    }

    /// Mean intensity of the count values in bin `j`.
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 * f64::from(self.per_bin) + 0.5 * f64::from(self.per_bin - 1)) * self.unit
    }

    fn index(&self, count: u32) -> usize {
        (count / self.per_bin) as usize
    }

    /// Height at the bin containing intensity `x`.
    pub fn at(&self, x: f64) -> usize {
        let count = (x / self.unit).round().max(0.0) as u32;
        self.counts.get(self.index(count)).copied().unwrap_or(0)
    }

    /// Largest bin and its center within `[lo, hi)`.
    pub fn peak(&self, lo: f64, hi: f64) -> Option<(f64, usize)> {
        (0..self.counts.len())
            .filter(|&j| self.center(j) >= lo && self.center(j) < hi)
            .max_by_key(|&j| (self.counts[j], std::cmp::Reverse(j)))
            .map(|j| (self.center(j), self.counts[j]))
    }

    /// Smallest bin and its center within `[lo, hi)`.
    pub fn valley(&self, lo: f64, hi: f64) -> Option<(f64, usize)> {
        (0..self.counts.len())
            .filter(|&j| self.center(j) >= lo && self.center(j) < hi)
            .min_by_key(|&j| (self.counts[j], j))
            .map(|j| (self.center(j), self.counts[j]))
    }
}

/// `width` is the requested bin width in units of `I1`, rounded to a whole
/// number of counts.
pub fn level_histogram(trace: &IntensityTrace, i1: f64, width: f64) -> Result<LevelHistogram> {
    if !(i1 > 0.0 && width > 0.0) {
        return Err(Error::domain("level histogram needs positive I1 and width"));
    }
    let unit = 1.0 / (i1 * trace.dt);
    let per_bin = (width / unit).round().max(1.0) as u32;
    let mut h = LevelHistogram { per_bin, unit, counts: Vec::new() };
    for &c in &trace.counts {
        let j = h.index(c);
        if j >= h.counts.len() {
            h.counts.resize(j + 1, 0);
        }
        h.counts[j] += 1;
    }
    Ok(h)
}

/// Normalized sector populations `(P0, P1, P2)` along a replayed trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceTrace {
    pub times: Vec<f64>,
    pub populations: Vec<[f64; 3]>,
}

impl SubspaceTrace {
    /// Mean populations of the samples falling in each window of width `dt`.
    pub fn bin_means(&self, dt: f64, bins: usize) -> Vec<Option<[f64; 3]>> {
        let mut sum = vec![[0.0; 3]; bins];
        let mut n = vec![0usize; bins];
        for (t, p) in self.times.iter().zip(&self.populations) {
            let k = (t / dt).floor() as usize;
            if k < bins {
                for c in 0..3 {
                    sum[k][c] += p[c];
                }
                n[k] += 1;
            }
        }
        sum.into_iter()
            .zip(n)
            .map(|(s, n)| (n > 0).then(|| s.map(|x| x / n as f64)))
            .collect()
    }
}

/// Replays `record` on the grid `t = k * grid_dt, k = 0, 1, ...` up to its
/// duration.
pub fn subspace_trace(record: &EmissionRecord, grid_dt: f64) -> Result<SubspaceTrace> {
    subspace_trace_with(&TrajectoryEngine::new(&record.params)?, record, grid_dt)
}

pub fn subspace_trace_with(engine: &TrajectoryEngine, record: &EmissionRecord, grid_dt: f64) -> Result<SubspaceTrace> {
    if !(grid_dt > 0.0 && grid_dt.is_finite()) {
        return Err(Error::domain(format!("grid spacing must be positive, got {grid_dt}")));
    }
    let n = (record.duration / grid_dt).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * grid_dt).collect();
    let states = record.replay(engine, &times)?;
    let populations = states.iter().map(subspace_populations).collect::<Result<_>>()?;
    Ok(SubspaceTrace { times, populations })
}

/// Mean population of sector `k` over the class-`k` bins, skipping the first
/// and last bin of every segment. `None` for classes with no usable bins.
pub fn subspace_correspondence(seq: &PeriodSequence, trace: &SubspaceTrace) -> [Option<f64>; 3] {
    let means = trace.bin_means(seq.dt, seq.bins());
    let mut sum = [0.0; 3];
    let mut n = [0usize; 3];
    for s in &seq.segments {
        if s.len() < 3 {
            continue;
        }
        let c = usize::from(s.class);
        for m in means[s.start + 1..s.end - 1].iter().flatten() {
            sum[c] += m[c];
            n[c] += 1;
        }
    }
    [0, 1, 2].map(|c| (n[c] > 0).then(|| sum[c] / n[c] as f64))
}

/// `t,intensity,class` rows, `t` at the start of each window.
pub fn write_intensity_csv<W: Write>(trace: &IntensityTrace, seq: &PeriodSequence, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "intensity", "class"])?;
    for (k, class) in seq.bin_classes().into_iter().enumerate() {
        w.serialize((k as f64 * trace.dt, trace.intensity(k), class))?;
    }
    w.flush()?;
    Ok(())
}

/// `t,p0,p1,p2,class` rows; `class` is empty past the last full window.
pub fn write_subspace_csv<W: Write>(trace: &SubspaceTrace, seq: &PeriodSequence, out: W) -> Result<()> {
    let classes = seq.bin_classes();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "p0", "p1", "p2", "class"])?;
    for (t, p) in trace.times.iter().zip(&trace.populations) {
        let class = classes.get((t / seq.dt).floor() as usize).map(|c| c.to_string());
        w.serialize((t, p[0], p[1], p[2], class.unwrap_or_default()))?;
    }
    w.flush()?;
    Ok(())
}
