//! Batch experiments behind the command-line tool: coupling curves, single
//! runs, Omega2 calibration, distance sweeps and oracle validation. Every
//! output file embeds the resolved configuration.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    bin_intensity, classify_periods, period2_intensity, period_durations, reference_intensity,
    subspace_trace_with, write_intensity_csv, write_subspace_csv, ClassifierConfig, DurationStats,
    PeriodDurations, DURATION_WINDOW, TRACE_WINDOW,
};
use crate::error::{Error, Result};
use crate::hilbert::{DickeState, StateVector, DIM};
use crate::model::{coupling_constant, coupling_curve, write_coupling_csv, ModelParams, C64};
use crate::oracle::{
    ensemble_check, ensemble_check_against, evolve_density_grid, independent_atoms_density, DensityMatrix,
    EnsembleReport, IntegratorOptions, Liouvillian,
};
use crate::rng::{rng_from_seed, substream_seed};
use crate::trajectory::{reset_density_pairwise, EmissionRecord, TrajectoryEngine};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Coupling,
    Simulate,
    Sweep,
    Calibrate,
    Validate,
}

/// Grid `start + k * step` for all `k` with the point not beyond `stop`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for KrGrid {
    fn default() -> Self {
        KrGrid {
            start: 2.0,
            stop: 31.4,
            step: 0.25,
        }
    }
}

impl KrGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("grid step must be positive, got {}", self.step)));
        }
        if !(self.start > 0.0 && self.stop >= self.start) {
            return Err(Error::Config(format!(
                "grid needs 0 < start <= stop, got [{}, {}]",
                self.start, self.stop
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.start + k as f64 * self.step).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub target_t0: f64,
    /// Relative tolerance on the measured `T0`.
    pub tolerance: f64,
    pub omega2_lo: f64,
    pub omega2_hi: f64,
    /// Simulated time per trajectory for one `T0` measurement.
    pub duration: f64,
    pub trajectories: usize,
    pub max_evaluations: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            target_t0: 2000.0,
            tolerance: 0.05,
            omega2_lo: 1e-4,
            omega2_hi: 1e-1,
            duration: 2e6,
            trajectories: 4,
            max_evaluations: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub trajectories: usize,
    pub t_max: f64,
    pub points: usize,
    /// Test hook: swap the reset channel weights so validation must fail.
    pub corrupt_reset: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            trajectories: 10_000,
            t_max: 50.0,
            points: 10,
            corrupt_reset: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub out: PathBuf,
    /// Simulated time per trajectory, units of `1/A3`.
    pub duration: f64,
    /// Trajectories per run or per sweep point.
    pub trajectories: usize,
    /// Averaging window; defaults to 190 for `simulate`, 250 otherwise.
    pub delta_t: Option<f64>,
    pub initial: DickeState,
    /// Calibrate `omega2` before a sweep instead of using `model.omega2`.
    pub calibrate_first: bool,
    pub model: ModelParams,
    pub grid: KrGrid,
    pub coupling_grid: KrGrid,
    pub classifier: ClassifierConfig,
    pub calibration: CalibrationConfig,
    pub validation: ValidationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Simulate,
            seed: 1,
            out: PathBuf::from("out"),
            duration: 1e6,
            trajectories: 1,
            delta_t: None,
            initial: DickeState::G,
            calibrate_first: false,
            model: ModelParams::default(),
            grid: KrGrid::default(),
            coupling_grid: KrGrid {
                start: 0.05,
                stop: 35.0,
                step: 0.05,
            },
            classifier: ClassifierConfig::default(),
            calibration: CalibrationConfig::default(),
            validation: ValidationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Fills defaults that depend on the mode.
    pub fn resolve(mut self) -> Self {
        if self.delta_t.is_none() {
            self.delta_t = Some(match self.mode {
                Mode::Simulate => TRACE_WINDOW,
                _ => DURATION_WINDOW,
            });
        }
        self
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t.unwrap_or(match self.mode {
            Mode::Simulate => TRACE_WINDOW,
            _ => DURATION_WINDOW,
        })
    }

    /// Rejects inconsistent settings and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.model.validate()?;
        self.grid.validate()?;
        self.coupling_grid.validate()?;
        let mut warnings = self.model.regime_warnings();
        let dt = self.delta_t();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("delta_t must be positive, got {dt}")));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if self.trajectories == 0 {
            return Err(Error::Config("trajectories must be at least 1".into()));
        }
        if self.mode == Mode::Sweep && self.duration < 100.0 * dt {
            warnings.push(format!(
                "duration {} is shorter than 100 averaging windows ({dt})",
                self.duration
            ));
        }
        let cal = &self.calibration;
        if !(cal.omega2_lo > 0.0 && cal.omega2_hi > cal.omega2_lo) {
            return Err(Error::Config("calibration bracket needs 0 < omega2_lo < omega2_hi".into()));
        }
        if !(cal.target_t0 > 0.0 && cal.tolerance > 0.0 && cal.duration > 0.0 && cal.trajectories > 0) {
            return Err(Error::Config("calibration settings must be positive".into()));
        }
        if self.mode == Mode::Validate && self.validation.trajectories < 1000 {
            return Err(Error::Config(format!(
                "validation needs at least 1000 trajectories, got {}",
                self.validation.trajectories
            )));
        }
        Ok(warnings)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// The resolved configuration as `#`-prefixed lines. The output
    /// directory is left out so identical runs give identical files.
    pub fn header(&self) -> String {
        let mut value = toml::Table::try_from(self).expect("configuration serializes to TOML");
        value.remove("out");
        let mut out = format!("# vshelving {VERSION}\n");
        for line in toml::to_string(&value).expect("table serializes").lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(dir.join(name))
}

/// Whitespace-separated columns for gnuplot.
fn write_dat(dir: &Path, name: &str, cfg: &ExperimentConfig, columns: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf> {
    let mut w = create(dir, name)?;
    w.write_all(cfg.header().as_bytes())?;
    writeln!(w, "# {}", columns.join(" "))?;
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(dir.join(name))
}

fn write_csv_with_header(dir: &Path, name: &str, cfg: &ExperimentConfig, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
    let mut buf = Vec::new();
    body(&mut buf)?;
    let mut w = create(dir, name)?;
    w.write_all(cfg.header().as_bytes())?;
    w.write_all(&buf)?;
    w.flush()?;
    Ok(dir.join(name))
}

/// Coupling curves at `theta3` and at the parallel orientation.
pub fn run_coupling(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let grid = cfg.coupling_grid.points();
    let perp = coupling_curve(&grid, cfg.model.theta3)?;
    let par = coupling_curve(&grid, 0.0)?;
    let mut files = vec![write_csv_with_header(&cfg.out, "coupling.csv", cfg, |b| write_coupling_csv(&perp, b))?];
    let rows: Vec<Vec<f64>> = perp
        .iter()
        .zip(&par)
        .map(|(a, b)| vec![a.kr, a.re_c_over_a, a.im_c_over_a, b.re_c_over_a, b.im_c_over_a])
        .collect();
    files.push(write_dat(
        &cfg.out,
        "coupling_theta.dat",
        cfg,
        &["kr", "re_theta3", "im_theta3", "re_parallel", "im_parallel"],
        &rows,
    )?);
    let re: Vec<Vec<f64>> = perp.iter().map(|r| vec![r.kr, r.re_c_over_a]).collect();
    files.push(write_dat(&cfg.out, "re_c3.dat", cfg, &["kr", "re_c_over_a"], &re)?);
    Ok(files)
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulationSummary {
    pub config: ExperimentConfig,
    pub i1: f64,
    pub emissions: usize,
    pub stats: Option<DurationStats>,
    pub class_fraction: [f64; 3],
    pub i2_over_i1: Option<f64>,
}

/// One trajectory with its record, intensity trace, subspace trace and
/// period statistics.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<(SimulationSummary, Vec<PathBuf>)> {
    let engine = TrajectoryEngine::new(&cfg.model)?;
    let record = engine.run(cfg.initial, cfg.duration, cfg.seed)?;
    let dt = cfg.delta_t();
    let i1 = reference_intensity(&cfg.model)?;
    let trace = bin_intensity(&record, dt)?;
    let seq = classify_periods(&trace, i1, &cfg.classifier)?;
    let sub = subspace_trace_with(&engine, &record, dt / 10.0)?;

    let dir = &cfg.out;
    let mut files = vec![write_csv_with_header(dir, "record.csv", cfg, |b| record.write_csv(b))?];
    files.push(write_csv_with_header(dir, "intensity.csv", cfg, |b| write_intensity_csv(&trace, &seq, b))?);
    files.push(write_csv_with_header(dir, "subspace.csv", cfg, |b| write_subspace_csv(&sub, &seq, b))?);
    let classes = seq.bin_classes();
    let rows: Vec<Vec<f64>> = trace
        .intensities()
        .enumerate()
        .map(|(k, x)| vec![k as f64 * dt, x, f64::from(classes[k])])
        .collect();
    files.push(write_dat(dir, "intensity.dat", cfg, &["t", "intensity", "class"], &rows)?);
    let rows: Vec<Vec<f64>> = sub
        .times
        .iter()
        .zip(&sub.populations)
        .map(|(t, p)| vec![*t, p[0], p[1], p[2]])
        .collect();
    files.push(write_dat(dir, "subspace.dat", cfg, &["t", "p0", "p1", "p2"], &rows)?);

    let summary = SimulationSummary {
        config: cfg.clone(),
        i1,
        emissions: record.events.len(),
        stats: period_durations(&seq).ok().map(|d| d.stats()),
        class_fraction: [0, 1, 2].map(|c| seq.class_fraction(c)),
        i2_over_i1: period2_intensity(&seq, &trace).ok().map(|x| x / i1),
    };
    files.push(write_json(dir, "summary.json", &summary)?);
    Ok((summary, files))
}

/// Merged period durations of `n` trajectories, trajectory `k` seeded with
/// `substream_seed(seed, k)`, plus the pooled class-2 intensity.
#[derive(Clone, Debug)]
pub struct PointMeasurement {
    pub durations: PeriodDurations,
    pub stats: DurationStats,
    pub i1: f64,
    pub class2_intensity: Option<f64>,
    /// Fraction of classified time in each class.
    pub class_fraction: [f64; 3],
}

pub fn measure_point(
    params: &ModelParams,
    initial: DickeState,
    duration: f64,
    trajectories: usize,
    delta_t: f64,
    classifier: &ClassifierConfig,
    seed: u64,
) -> Result<PointMeasurement> {
    let engine = TrajectoryEngine::new(params)?;
    let i1 = reference_intensity(params)?;
    let records = engine.run_ensemble(initial, duration, trajectories, seed)?;
    let mut durations = PeriodDurations {
        dt: delta_t,
        ..Default::default()
    };
    let (mut photons2, mut bins2) = (0u64, 0usize);
    let mut class_bins = [0usize; 3];
    let mut bins = 0;
    for r in &records {
        let trace = bin_intensity(r, delta_t)?;
        let seq = classify_periods(&trace, i1, classifier)?;
        for s in &seq.segments {
            class_bins[usize::from(s.class)] += s.len();
            if s.class == 2 {
                photons2 += trace.counts[s.start..s.end].iter().map(|&c| u64::from(c)).sum::<u64>();
                bins2 += s.len();
            }
        }
        bins += seq.bins();
        match period_durations(&seq) {
            Ok(d) => durations.merge(&d),
            Err(Error::InsufficientData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(PointMeasurement {
        stats: durations.stats(),
        durations,
        i1,
        class2_intensity: (bins2 > 0).then(|| photons2 as f64 / (bins2 as f64 * delta_t)),
        class_fraction: class_bins.map(|b| b as f64 / bins.max(1) as f64),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct T0Sample {
    pub omega2: f64,
    pub t0: f64,
    pub se: f64,
    pub n0: usize,
    /// Too few dark periods to average: `t0` is a bound, not a mean.
    pub censored: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    pub omega2: f64,
    pub t0: f64,
    pub se: f64,
    pub target_t0: f64,
    pub samples: Vec<T0Sample>,
}

/// Dark periods count as resolved when at least this many span more than
/// one window; single-window dips are photon-count noise of light periods.
const MIN_RESOLVED_DARK: usize = 3;

fn measure_t0(params: &ModelParams, cal: &CalibrationConfig, delta_t: f64, classifier: &ClassifierConfig, seed: u64) -> Result<T0Sample> {
    let m = measure_point(params, DickeState::G, cal.duration, cal.trajectories, delta_t, classifier, seed)?;
    let n0 = m.stats.count[0];
    let resolved = m.durations.samples[0].iter().filter(|&&d| d > 1.5 * delta_t).count();
    if resolved >= MIN_RESOLVED_DARK {
        return Ok(T0Sample {
            omega2: params.omega2,
            t0: m.stats.mean[0],
            se: m.stats.se[0],
            n0,
            censored: false,
        });
    }
    // Inside the shelving regime unresolved dark periods are longer than
    // the run; outside it there are no macroscopic dark periods.
    let shelving = params.omega2 <= 0.1 * params.omega3 * params.omega3 / params.a3;
    Ok(T0Sample {
        omega2: params.omega2,
        t0: if shelving { cal.duration } else { 0.0 },
        se: f64::NAN,
        n0,
        censored: true,
    })
}

/// Finds `omega2` for which two noninteracting atoms have mean dark period
/// `target_t0`. Bisection in `ln omega2`, accelerated by secant steps on
/// `ln T0` once both bracket ends are measured means.
pub fn calibrate_omega2(
    base: &ModelParams,
    cal: &CalibrationConfig,
    delta_t: f64,
    classifier: &ClassifierConfig,
    seed: u64,
) -> Result<Calibration> {
    let params = |omega2| ModelParams {
        omega2,
        include_c3: false,
        ..*base
    };
    let target = cal.target_t0;
    let mut samples = Vec::new();
    let eval = |omega2: f64, samples: &mut Vec<T0Sample>| -> Result<T0Sample> {
        let s = measure_t0(&params(omega2), cal, delta_t, classifier, substream_seed(seed, samples.len() as u64))?;
        log::info!("calibration: omega2 = {omega2:.6e} -> T0 = {:.1} (n0 = {})", s.t0, s.n0);
        samples.push(s);
        Ok(s)
    };
    let mut lo = eval(cal.omega2_lo, &mut samples)?;
    let mut hi = eval(cal.omega2_hi, &mut samples)?;
    if !(lo.t0 >= target && hi.t0 <= target) {
        return Err(Error::CalibrationUnreachable {
            target,
            lo: cal.omega2_lo,
            hi: cal.omega2_hi,
            t0_lo: lo.t0,
            t0_hi: hi.t0,
        });
    }
    let accept = |s: &T0Sample| !s.censored && (s.t0 - target).abs() <= cal.tolerance * target;
    for s in [lo, hi] {
        if accept(&s) {
            return Ok(Calibration {
                omega2: s.omega2,
                t0: s.t0,
                se: s.se,
                target_t0: target,
                samples,
            });
        }
    }
    while samples.len() < cal.max_evaluations {
        let (a, b) = (lo.omega2.ln(), hi.omega2.ln());
        let mid = 0.5 * (a + b);
        let x = if !lo.censored && !hi.censored && lo.t0 > hi.t0 {
            let f = (lo.t0.ln() - target.ln()) / (lo.t0.ln() - hi.t0.ln());
            a + (b - a) * f.clamp(0.1, 0.9)
        } else {
            mid
        };
        let s = eval(x.exp(), &mut samples)?;
        if accept(&s) {
            return Ok(Calibration {
                omega2: s.omega2,
                t0: s.t0,
                se: s.se,
                target_t0: target,
                samples,
            });
        }
        if s.t0 > target {
            lo = s;
        } else {
            hi = s;
        }
    }
    Err(Error::Numerical(format!(
        "calibration did not reach T0 = {target} within {} evaluations (bracket [{:e}, {:e}])",
        cal.max_evaluations, lo.omega2, hi.omega2
    )))
}

pub fn run_calibration(cfg: &ExperimentConfig) -> Result<(Calibration, PathBuf)> {
    let cal = calibrate_omega2(&cfg.model, &cfg.calibration, cfg.delta_t(), &cfg.classifier, cfg.seed)?;
    #[derive(Serialize)]
    struct Out<'a> {
        config: &'a ExperimentConfig,
        version: &'static str,
        calibration: &'a Calibration,
    }
    let path = write_json(
        &cfg.out,
        "calibration.json",
        &Out {
            config: cfg,
            version: VERSION,
            calibration: &cal,
        },
    )?;
    Ok((cal, path))
}

/// One row of a distance sweep. Failed points keep `NaN` statistics and
/// the error message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kr: f64,
    pub re_c_over_a: f64,
    pub im_c_over_a: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    #[serde(rename = "T1")]
    pub t1: f64,
    #[serde(rename = "T2")]
    pub t2: f64,
    pub se0: f64,
    pub se1: f64,
    pub se2: f64,
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
    pub double_jumps: usize,
    pub i2_over_i1: f64,
    pub error: String,
}

impl SweepRow {
    pub fn mean(&self, class: usize) -> f64 {
        [self.t0, self.t1, self.t2][class]
    }

    pub fn se(&self, class: usize) -> f64 {
        [self.se0, self.se1, self.se2][class]
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub omega2: f64,
    pub calibration: Option<Calibration>,
    pub rows: Vec<SweepRow>,
}

pub fn sweep_point(cfg: &ExperimentConfig, params: &ModelParams, index: usize) -> SweepRow {
    let c = coupling_constant(params.kr, params.theta3, 1.0).unwrap_or(C64::new(f64::NAN, f64::NAN));
    let mut row = SweepRow {
        kr: params.kr,
        re_c_over_a: c.re,
        im_c_over_a: c.im,
        t0: f64::NAN,
        t1: f64::NAN,
        t2: f64::NAN,
        se0: f64::NAN,
        se1: f64::NAN,
        se2: f64::NAN,
        n0: 0,
        n1: 0,
        n2: 0,
        double_jumps: 0,
        i2_over_i1: f64::NAN,
        error: String::new(),
    };
    let seed = substream_seed(cfg.seed, index as u64);
    match measure_point(params, cfg.initial, cfg.duration, cfg.trajectories, cfg.delta_t(), &cfg.classifier, seed) {
        Ok(m) => {
            let s = m.stats;
            (row.t0, row.t1, row.t2) = (s.mean[0], s.mean[1], s.mean[2]);
            (row.se0, row.se1, row.se2) = (s.se[0], s.se[1], s.se[2]);
            (row.n0, row.n1, row.n2) = (s.count[0], s.count[1], s.count[2]);
            row.double_jumps = s.double_jumps;
            row.i2_over_i1 = m.class2_intensity.map_or(f64::NAN, |x| x / m.i1);
        }
        Err(e) => {
            log::warn!("sweep point kr = {} failed: {e}", params.kr);
            row.error = e.to_string();
        }
    }
    row
}

const SWEEP_FILE: &str = "sweep.csv";

fn read_existing_rows(path: &Path, header: &str) -> Result<Vec<SweepRow>> {
    let file = BufReader::new(File::open(path)?);
    let mut existing_header = String::new();
    let mut body = String::new();
    for line in file.lines() {
        let line = line?;
        if line.starts_with('#') {
            existing_header.push_str(&line);
            existing_header.push('\n');
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    if existing_header != header {
        return Err(Error::Config(format!(
            "{} was written with a different configuration; remove it or change --out",
            path.display()
        )));
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        match r {
            Ok(row) => rows.push(row),
            // A truncated final line from an interrupted run is recomputed.
            Err(e) => log::warn!("ignoring unreadable sweep row: {e}"),
        }
    }
    Ok(rows)
}

/// Runs every grid point not already present in `out/sweep.csv`, appending
/// each row as soon as it completes.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let mut cfg = cfg.clone();
    let mut calibration = None;
    if cfg.calibrate_first {
        let (cal, _) = run_calibration(&cfg)?;
        cfg.model.omega2 = cal.omega2;
        cfg.calibrate_first = false;
        calibration = Some(cal);
    }
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(SWEEP_FILE);
    let header = cfg.header();
    let mut rows = if path.exists() {
        read_existing_rows(&path, &header)?
    } else {
        Vec::new()
    };
    let done: BTreeSet<u64> = rows.iter().map(|r| r.kr.to_bits()).collect();

    let fresh = !path.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
    if fresh {
        file.write_all(header.as_bytes())?;
    }
    let mut wtr = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    let pending: Vec<(usize, f64)> = cfg
        .grid
        .points()
        .into_iter()
        .enumerate()
        .filter(|(_, kr)| !done.contains(&kr.to_bits()))
        .collect();
    // Points run in parallel batches; rows are written in grid order so the
    // file does not depend on the thread count.
    for batch in pending.chunks(rayon::current_num_threads().max(1)) {
        let batch_rows: Vec<SweepRow> = batch
            .par_iter()
            .map(|&(index, kr)| sweep_point(&cfg, &cfg.model.with_kr(kr), index))
            .collect();
        for row in batch_rows {
            log::info!("kr = {}: T = ({:.0}, {:.0}, {:.0})", row.kr, row.t0, row.t1, row.t2);
            wtr.serialize(&row)?;
            rows.push(row);
        }
        wtr.flush()?;
    }
    rows.sort_by(|a, b| a.kr.total_cmp(&b.kr));

    write_csv_with_header(&cfg.out, "durations.csv", &cfg, |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["kr", "T0", "T1", "T2", "se0", "se1", "se2", "n0", "n1", "n2", "double_jumps"])?;
        for r in &rows {
            w.serialize((r.kr, r.t0, r.t1, r.t2, r.se0, r.se1, r.se2, r.n0, r.n1, r.n2, r.double_jumps))?;
        }
        w.flush()?;
        Ok(())
    })?;
    let dat: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.kr, r.t0, r.t1, r.t2, r.se0, r.se1, r.se2, r.re_c_over_a])
        .collect();
    write_dat(&cfg.out, "durations.dat", &cfg, &["kr", "T0", "T1", "T2", "se0", "se1", "se2", "re_c_over_a"], &dat)?;
    Ok(SweepResult {
        omega2: cfg.model.omega2,
        calibration,
        rows,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub config: ExperimentConfig,
    pub version: &'static str,
    pub checks: Vec<Check>,
    pub ensemble: Option<EnsembleReport>,
    pub independent_ensemble: Option<EnsembleReport>,
    pub passed: bool,
}

fn random_density(rng: &mut impl Rng, n: usize) -> DMatrix<C64> {
    let m = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let rho = &m * m.adjoint();
    let tr = rho.trace();
    rho / tr
}

fn random_state(rng: &mut impl Rng, n: usize) -> StateVector {
    let v: Vec<C64> = (0..n)
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    StateVector::from_slice(&v).normalized().expect("nonzero random state")
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    if !passed {
        log::error!("validation check `{name}` failed: {detail}");
    }
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

/// Invariant checks on the engine's generator and reset channels. Each
/// returns the largest violation found.
pub fn invariant_checks(engine: &TrajectoryEngine, seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng_from_seed(seed);
    let l = Liouvillian::from_engine(engine)?;
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = random_density(&mut rng, DIM);
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        worst = worst.max(l.apply(&h).trace().norm());
    }
    out.push(check("trace_preservation", worst <= 1e-10, format!("max |tr L(rho)| = {worst:e}")));

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let rho = random_density(&mut rng, DIM);
        let two = engine.channels().reset_density(&rho);
        let pair = reset_density_pairwise(engine.params(), &rho)?;
        worst = worst.max((two - pair).camax());
    }
    out.push(check(
        "reset_forms_agree",
        worst <= 1e-12,
        format!("max entry difference between pairwise and channel forms = {worst:e}"),
    ));

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let psi = random_state(&mut rng, DIM);
        let slope = engine.generator().emission_rate(psi.amplitudes().as_slice());
        let reset = engine.channels().emission_rate(psi.amplitudes());
        worst = worst.max((slope - reset).abs());
    }
    out.push(check(
        "emission_rate_consistency",
        worst <= 1e-9,
        format!("max |-dP0/dt(0) - tr R(|psi><psi|)| = {worst:e}"),
    ));

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let psi = random_state(&mut rng, DIM);
        let ev = engine.generator().evolution(&psi)?;
        let mut prev = 1.0;
        for k in 1..=40 {
            let p = ev.survival(0.5 * f64::from(k) * f64::from(k));
            worst = worst.max(p - prev);
            prev = p;
        }
    }
    out.push(check(
        "norm_monotonicity",
        worst <= 1e-12,
        format!("largest increase of P0 along a trajectory = {worst:e}"),
    ));
    Ok(out)
}

/// Ensemble against master equation, the same against two independent
/// single atoms without coupling, and the invariant suite.
pub fn run_validation(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    let v = &cfg.validation;
    let mut engine = TrajectoryEngine::new(&cfg.model)?;
    if v.corrupt_reset {
        engine = engine.with_corrupted_reset();
    }
    let times: Vec<f64> = (1..=v.points).map(|k| v.t_max * k as f64 / v.points as f64).collect();
    let mut checks = invariant_checks(&engine, substream_seed(cfg.seed, u64::MAX))?;

    let l = Liouvillian::from_engine(&engine)?;
    let rho0 = DensityMatrix::pure(&cfg.initial.ket())?;
    let ev = evolve_density_grid(&l, &rho0, &times, IntegratorOptions::default());
    match &ev {
        Ok(ev) => checks.push(check(
            "oracle_positivity",
            ev.min_eigenvalue >= -1e-10 && ev.max_trace_error <= 1e-10,
            format!(
                "min eigenvalue {:e}, max trace error {:e} over {} steps",
                ev.min_eigenvalue, ev.max_trace_error, ev.steps
            ),
        )),
        Err(e) => checks.push(check("oracle_positivity", false, e.to_string())),
    }

    let records = engine.run_ensemble(cfg.initial, v.t_max, v.trajectories, cfg.seed)?;
    let ensemble = ensemble_check(&records, &engine, &times)?;
    checks.push(check(
        "ensemble_vs_master_equation",
        ensemble.passed(),
        format!("max z = {:.2} ({:?}), worst {:?}", ensemble.max_z, ensemble.status, ensemble.worst),
    ));

    let free = ModelParams {
        include_c3: false,
        ..cfg.model
    };
    let free_engine = TrajectoryEngine::new(&free)?;
    let reference = independent_atoms_density(&free, &times)?;
    let joint = evolve_density_grid(
        &Liouvillian::two_atom(&free)?,
        &DensityMatrix::pure(&DickeState::G.ket())?,
        &times,
        IntegratorOptions::default(),
    )?;
    let worst = joint
        .states
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a.matrix() - b.matrix()).camax())
        .fold(0.0, f64::max);
    checks.push(check(
        "uncoupled_factorization",
        worst <= 1e-8,
        format!("max |rho_joint - rho_A kron rho_A| = {worst:e}"),
    ));
    let free_records: Vec<EmissionRecord> =
        free_engine.run_ensemble(DickeState::G, v.t_max, v.trajectories, substream_seed(cfg.seed, 1))?;
    let independent = ensemble_check_against(&free_records, &free_engine, &times, &reference)?;
    checks.push(check(
        "uncoupled_ensemble_vs_independent_atoms",
        independent.passed(),
        format!("max z = {:.2} ({:?})", independent.max_z, independent.status),
    ));

    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport {
        config: cfg.clone(),
        version: VERSION,
        checks,
        ensemble: Some(ensemble),
        independent_ensemble: Some(independent),
        passed,
    })
}

pub fn write_validation(cfg: &ExperimentConfig, report: &ValidationReport) -> Result<PathBuf> {
    write_json(&cfg.out, "validation.json", report)
}
