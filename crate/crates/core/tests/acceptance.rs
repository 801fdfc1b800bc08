//! Acceptance criteria 1-9. Each test prints one `ACCEPTANCE` line with its
//! verdict and the measured quantities, then asserts the verdict. Tolerances
//! are pinned as constants next to each test.

mod common;
#[path = "oracles/coupling_values.rs"]
mod coupling_values;

use std::f64::consts::FRAC_PI_2;
use std::fmt::Display;
use std::sync::OnceLock;
use std::time::Instant;

use vshelving::analysis::{
    bin_intensity, classify_periods, level_histogram, reference_intensity, subspace_correspondence,
    subspace_trace_with, ClassifierConfig,
};
use vshelving::experiment::{
    calibrate_omega2, invariant_checks, measure_point, run_sweep, Calibration, CalibrationConfig,
    ExperimentConfig, KrGrid, Mode, SweepRow,
};
use vshelving::hilbert::DickeState;
use vshelving::model::{coupling_constant, coupling_real_zeros};
use vshelving::oracle::{ensemble_check, CheckStatus};
use vshelving::stats::{ks_two_sample, local_maxima, mean, moving_average, nearest_offsets, pearson, sample_std};
use vshelving::trajectory::{single_atom_emission_times, TrajectoryEngine};
use vshelving::ModelParams;

use common::with_threads;

fn verdict(id: &str, pass: bool, detail: impl Display) -> bool {
    println!("ACCEPTANCE criterion {id}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn strong_drive(kr: f64) -> ModelParams {
    ModelParams {
        omega2: 0.01,
        omega3: 0.5,
        kr,
        theta3: FRAC_PI_2,
        ..Default::default()
    }
}

const TRACE_WINDOW: f64 = 190.0;
const DURATION_WINDOW: f64 = 250.0;

// 1. Coupling constant against the 40-digit oracle.
const COUPLING_RTOL: f64 = 1e-10;

#[test]
fn criterion_1_coupling_constant() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &(kr, theta, re, im) in coupling_values::VALUES {
        let c = coupling_constant(kr, theta, 1.0).unwrap();
        let exact = vshelving::C64::new(re, im);
        worst = worst.max((c - exact).norm() / exact.norm());
    }
    let small = coupling_constant(1e-3, FRAC_PI_2, 1.0).unwrap().re;
    let re_zeros = coupling_real_zeros(FRAC_PI_2, 2.0, 35.0, 0.01).unwrap();
    let zero_err = re_zeros
        .iter()
        .zip(coupling_values::RE_ZEROS)
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max);
    // Sign changes of Im C by bisection on the same grid as the oracle.
    let im = |x: f64| coupling_constant(x, FRAC_PI_2, 1.0).unwrap().im;
    let mut im_zeros = Vec::new();
    let mut x = 2.0;
    while x < 35.0 {
        let (mut a, mut b) = (x, x + 0.01);
        if im(a).signum() != im(b).signum() {
            while b - a > 4.0 * f64::EPSILON * b {
                let m = 0.5 * (a + b);
                if im(m).signum() == im(a).signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            im_zeros.push(0.5 * (a + b));
        }
        x += 0.01;
    }
    let im_err = im_zeros
        .iter()
        .zip(coupling_values::IM_ZEROS)
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max);
    let interleaved = re_zeros.len() == im_zeros.len() + 1
        && im_zeros.iter().enumerate().all(|(k, z)| re_zeros[k] < *z && *z < re_zeros[k + 1]);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= COUPLING_RTOL
        && (small - 1.0).abs() <= 1e-6
        && re_zeros.len() == coupling_values::RE_ZEROS.len()
        && im_zeros.len() == coupling_values::IM_ZEROS.len()
        && zero_err <= COUPLING_RTOL
        && im_err <= COUPLING_RTOL
        && interleaved
        && elapsed < 1.0;
    assert!(verdict(
        "1",
        pass,
        format!(
            "max rel err {worst:.2e}, Re C/A(kr=1e-3) = {small:.9}, {} Re / {} Im sign changes (rel err {zero_err:.1e} / {im_err:.1e}), interleaved {interleaved}, {elapsed:.3} s",
            re_zeros.len(),
            im_zeros.len()
        )
    ));
}

// 2. Ensemble average against the master equation.
const ENSEMBLE_SIZE: usize = 10_000;
const ENSEMBLE_T_MAX: f64 = 50.0;

#[test]
fn criterion_2_unravelling_consistency() {
    let start = Instant::now();
    let engine = TrajectoryEngine::new(&strong_drive(10.0)).unwrap();
    let times: Vec<f64> = (1..=10).map(|k| ENSEMBLE_T_MAX * f64::from(k) / 10.0).collect();
    let records = engine.run_ensemble(DickeState::G, ENSEMBLE_T_MAX, ENSEMBLE_SIZE, 20_240_601).unwrap();
    let report = ensemble_check(&records, &engine, &times).unwrap();
    let pass = report.status == CheckStatus::Pass && report.max_z <= 4.0;
    assert!(verdict(
        "2",
        pass,
        format!(
            "n = {}, {} times, max z = {:.2} (limit 4), max |dev| = {:.2e}, worst {:?}, {:.1} s",
            report.trajectories,
            times.len(),
            report.max_z,
            report.max_deviation,
            report.worst.as_ref().map(|w| (w.time, &w.row, &w.col, w.part)),
            start.elapsed().as_secs_f64()
        )
    ));
}

// 3. Noninteracting limit.
const KS_DURATION: f64 = 2e5;
const FLAT_Z: f64 = 3.0;

fn interemission(times: &[f64]) -> Vec<f64> {
    times.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Points within `FLAT_Z` combined standard errors of the grid mean.
fn flatness(rows: &[&SweepRow], class: usize) -> (bool, f64) {
    let values: Vec<f64> = rows.iter().map(|r| r.mean(class)).collect();
    let m = mean(&values).unwrap();
    let se_mean = rows.iter().map(|r| r.se(class).powi(2)).sum::<f64>().sqrt() / rows.len() as f64;
    let worst = rows
        .iter()
        .map(|r| (r.mean(class) - m).abs() / (r.se(class).powi(2) + se_mean * se_mean).sqrt())
        .fold(0.0, f64::max);
    (worst <= FLAT_Z, worst)
}

#[test]
fn criterion_3_noninteracting_limit() {
    // Interemission times: both settings mix quickly, so the marginal
    // distribution is sampled many times within one run.
    let mut ks_pass = true;
    let mut ks_detail = Vec::new();
    for (k, omega2) in [0.0, 0.2].into_iter().enumerate() {
        let p = ModelParams {
            omega2,
            include_c3: false,
            ..strong_drive(10.0)
        };
        let joint = TrajectoryEngine::new(&p).unwrap().run(DickeState::G, KS_DURATION, 31 + k as u64).unwrap();
        let joint_times: Vec<f64> = joint.emission_times().collect();
        let mut merged = single_atom_emission_times(&p, KS_DURATION, 41 + k as u64).unwrap();
        merged.extend(single_atom_emission_times(&p, KS_DURATION, 51 + k as u64).unwrap());
        merged.sort_by(f64::total_cmp);
        let ks = ks_two_sample(&interemission(&joint_times), &interemission(&merged)).unwrap();
        ks_pass &= !ks.rejects_at_1pct();
        ks_detail.push(format!(
            "omega2 = {omega2}: D = {:.4} (crit {:.4}, p = {:.3}, n = {}, m = {})",
            ks.statistic, ks.critical_1pct, ks.p_value, ks.n, ks.m
        ));
    }

    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        mode: Mode::Sweep,
        seed: 303,
        out: dir.path().to_path_buf(),
        duration: 2e6,
        trajectories: 2,
        delta_t: Some(DURATION_WINDOW),
        model: ModelParams {
            omega2: 0.005,
            omega3: 0.3,
            include_c3: false,
            ..Default::default()
        },
        grid: KrGrid {
            start: 2.0,
            stop: 30.0,
            step: 4.0,
        },
        ..Default::default()
    };
    let rows = run_sweep(&cfg).unwrap().rows;
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let flat: Vec<(bool, f64)> = (0..3).map(|c| flatness(&ok, c)).collect();
    let pass = ks_pass && ok.len() == rows.len() && flat.iter().all(|f| f.0);
    assert!(verdict(
        "3",
        pass,
        format!(
            "KS [{}]; {} kr points, max |T - mean|/SE = {:.2}, {:.2}, {:.2} (limit {FLAT_Z})",
            ks_detail.join("; "),
            ok.len(),
            flat[0].1,
            flat[1].1,
            flat[2].1
        )
    ));
}

// 4. Three intensity levels at kr = 2, 5, 10.
const LEVEL_DURATION: f64 = 1e6;
const HIST_WIDTH: f64 = 0.1;
/// A level is "near" k I1 when its histogram peak lies within this distance.
const PEAK_TOL: f64 = 0.25;
/// Histogram height at a threshold relative to the smaller adjacent peak.
const VALLEY_RATIO: f64 = 0.5;

#[test]
fn criterion_4_three_intensity_levels() {
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, kr) in [10.0, 5.0, 2.0].into_iter().enumerate() {
        let p = strong_drive(kr);
        let i1 = reference_intensity(&p).unwrap();
        let record = TrajectoryEngine::new(&p).unwrap().run(DickeState::G, LEVEL_DURATION, 400 + k as u64).unwrap();
        let trace = bin_intensity(&record, TRACE_WINDOW).unwrap();
        let h = level_histogram(&trace, i1, HIST_WIDTH).unwrap();
        let peaks = [(-1.0, 0.5), (0.5, 1.5), (1.5, 3.0)].map(|(lo, hi)| h.peak(lo, hi).unwrap_or((f64::NAN, 0)));
        let near = peaks.iter().enumerate().all(|(k, p)| (p.0 - k as f64).abs() <= PEAK_TOL);
        let valleys = [0.5, 1.5].map(|x| h.at(x));
        let deep = valleys[0] as f64 <= VALLEY_RATIO * peaks[0].1.min(peaks[1].1) as f64
            && valleys[1] as f64 <= VALLEY_RATIO * peaks[1].1.min(peaks[2].1) as f64;
        pass &= near && deep;
        detail.push(format!(
            "kr = {kr}: peaks at {:.2}/{:.2}/{:.2} I1 (heights {}/{}/{}), threshold bins {}/{}",
            peaks[0].0, peaks[1].0, peaks[2].0, peaks[0].1, peaks[1].1, peaks[2].1, valleys[0], valleys[1]
        ));
    }
    assert!(verdict("4", pass, detail.join("; ")));
}

// 5 and 6. Calibrated sweep at Omega3 = 0.3.
const SWEEP_SEED: u64 = 4_000;
const SWEEP_DURATION: f64 = 2e6;
const SWEEP_TRAJECTORIES: usize = 4;
const T2_MIN: f64 = 1200.0;
const T2_MAX: f64 = 2600.0;
const T2_RTOL: f64 = 0.20;
const PHASE_CORRELATION: f64 = 0.5;
const MAXIMA_OFFSET: usize = 2;
const SMOOTHING: usize = 5;

struct Fig4 {
    calibration: Calibration,
    replay_t0: f64,
    replay_se: f64,
    rows: Vec<SweepRow>,
}

fn weak_drive() -> ModelParams {
    ModelParams {
        omega3: 0.3,
        theta3: FRAC_PI_2,
        ..Default::default()
    }
}

fn fig4() -> &'static Fig4 {
    static DATA: OnceLock<Fig4> = OnceLock::new();
    DATA.get_or_init(|| {
        let classifier = ClassifierConfig::default();
        let cal_cfg = CalibrationConfig::default();
        let calibration = calibrate_omega2(&weak_drive(), &cal_cfg, DURATION_WINDOW, &classifier, SWEEP_SEED).unwrap();
        let free = ModelParams {
            omega2: calibration.omega2,
            include_c3: false,
            ..weak_drive()
        };
        let replay = measure_point(
            &free,
            DickeState::G,
            cal_cfg.duration,
            cal_cfg.trajectories,
            DURATION_WINDOW,
            &classifier,
            SWEEP_SEED + 1,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            mode: Mode::Sweep,
            seed: SWEEP_SEED + 2,
            out: dir.path().to_path_buf(),
            duration: SWEEP_DURATION,
            trajectories: SWEEP_TRAJECTORIES,
            delta_t: Some(DURATION_WINDOW),
            model: ModelParams {
                omega2: calibration.omega2,
                ..weak_drive()
            },
            grid: KrGrid::default(),
            ..Default::default()
        };
        let rows = run_sweep(&cfg).unwrap().rows;
        for r in &rows {
            println!(
                "sweep kr = {:5.2}  Re C3 = {:+.3}  T0 = {:6.0} ± {:3.0}  T1 = {:6.0} ± {:3.0}  T2 = {:6.0} ± {:3.0}",
                r.kr, r.re_c_over_a, r.t0, r.se0, r.t1, r.se1, r.t2, r.se2
            );
        }
        Fig4 {
            calibration,
            replay_t0: replay.stats.mean[0],
            replay_se: replay.stats.se[0],
            rows,
        }
    })
}

fn coarse(rows: &[SweepRow]) -> Vec<&SweepRow> {
    rows.iter().filter(|r| (r.kr - 2.0).fract() == 0.0).collect()
}

fn column(rows: &[&SweepRow], f: impl Fn(&SweepRow) -> f64) -> Vec<f64> {
    rows.iter().map(|r| f(r)).collect()
}

fn relative_spread(x: &[f64]) -> f64 {
    sample_std(x).unwrap() / mean(x).unwrap()
}

/// Same phase as T2 and smaller relative variation.
fn t1_follows_t2(rows: &[&SweepRow]) -> (bool, f64, f64, f64) {
    let t1 = column(rows, |r| r.t1);
    let t2 = column(rows, |r| r.t2);
    let r = pearson(&t1, &t2).unwrap();
    let (s1, s2) = (relative_spread(&t1), relative_spread(&t2));
    (r > PHASE_CORRELATION && s1 < s2, r, s1, s2)
}

#[test]
fn criterion_5_calibration() {
    let f = fig4();
    let c = &f.calibration;
    let target = c.target_t0;
    let tol = CalibrationConfig::default().tolerance;
    let monotone = {
        let mut s = c.samples.iter().filter(|s| !s.censored).collect::<Vec<_>>();
        s.sort_by(|a, b| a.omega2.total_cmp(&b.omega2));
        s.windows(2).all(|w| w[1].t0 <= w[0].t0 + 3.0 * (w[0].se.hypot(w[1].se)))
    };
    let pass = (c.t0 - target).abs() <= tol * target && (f.replay_t0 - target).abs() <= 2.0 * tol * target && monotone;
    assert!(verdict(
        "5-calibration",
        pass,
        format!(
            "omega2 = {:.5}, T0 = {:.0} ± {:.0} after {} evaluations, fresh replay T0 = {:.0} ± {:.0} (limit ±{:.0}%), monotone {monotone}",
            c.omega2,
            c.t0,
            c.se,
            c.samples.len(),
            f.replay_t0,
            f.replay_se,
            200.0 * tol
        )
    ));
}

#[test]
fn criterion_5a_dark_periods_flat() {
    let rows = &fig4().rows;
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let (pass, worst) = flatness(&ok, 0);
    let pass = pass && ok.len() == rows.len();
    assert!(verdict(
        "5a",
        pass,
        format!("{} of {} points, max |T0 - mean|/SE = {worst:.2} (limit {FLAT_Z})", ok.len(), rows.len())
    ));
}

#[test]
fn criterion_5b_double_period_range() {
    let rows: Vec<&SweepRow> = fig4().rows.iter().collect();
    let t2 = column(&rows, |r| r.t2);
    let lo = t2.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let within = |x: f64, target: f64| (x - target).abs() <= T2_RTOL * target;
    let pass = within(lo, T2_MIN) && within(hi, T2_MAX);
    assert!(verdict(
        "5b",
        pass,
        format!(
            "T2 min = {lo:.0} (target {T2_MIN} ± {:.0}%), max = {hi:.0} (target {T2_MAX} ± {:.0}%)",
            100.0 * T2_RTOL,
            100.0 * T2_RTOL
        )
    ));
}

#[test]
fn criterion_5c_single_periods_follow_double() {
    let rows: Vec<&SweepRow> = fig4().rows.iter().collect();
    let (pass, r, s1, s2) = t1_follows_t2(&rows);
    assert!(verdict(
        "5c",
        pass,
        format!("corr(T1, T2) = {r:.3} (limit {PHASE_CORRELATION}), relative spread T1 {s1:.3} < T2 {s2:.3}")
    ));
}

#[test]
fn criterion_5_coarse_grid() {
    let rows = coarse(&fig4().rows);
    let (flat, worst) = flatness(&rows, 0);
    let (follows, r, s1, s2) = t1_follows_t2(&rows);
    assert!(verdict(
        "5-coarse",
        flat && follows,
        format!(
            "{} points at step 1.0: max |T0 - mean|/SE = {worst:.2}; corr(T1, T2) = {r:.3}, spread T1 {s1:.3} vs T2 {s2:.3}",
            rows.len()
        )
    ));
}

#[test]
fn criterion_6_double_periods_in_phase_with_re_c3() {
    let rows: Vec<&SweepRow> = fig4().rows.iter().collect();
    let t2 = column(&rows, |r| r.t2);
    let re = column(&rows, |r| r.re_c_over_a);
    let r = pearson(&t2, &re).unwrap();
    let t2_max = local_maxima(&moving_average(&t2, SMOOTHING));
    let re_max = local_maxima(&re);
    let offsets: Vec<usize> = nearest_offsets(&re_max, &t2_max).into_iter().map(|o| o.unwrap_or(usize::MAX)).collect();
    let aligned = !offsets.is_empty() && offsets.iter().all(|&o| o <= MAXIMA_OFFSET);
    let at = |idx: &[usize]| idx.iter().map(|&i| format!("{}", rows[i].kr)).collect::<Vec<_>>().join(",");
    assert!(verdict(
        "6",
        r > PHASE_CORRELATION && aligned,
        format!(
            "corr(T2, Re C3) = {r:.3} (limit > {PHASE_CORRELATION}); Re C3 maxima at kr = [{}], smoothed T2 maxima at kr = [{}], offsets {:?} steps (limit {MAXIMA_OFFSET})",
            at(&re_max),
            at(&t2_max),
            offsets
        )
    ));
}

// 7. Class 2 suppressed at small distance.
const SUPPRESSION_DURATION: f64 = 2e6;
const SUPPRESSION_RATIO: f64 = 0.2;

fn class2_fraction(kr: f64, seed: u64) -> f64 {
    let p = strong_drive(kr);
    let m = measure_point(&p, DickeState::G, SUPPRESSION_DURATION, 1, TRACE_WINDOW, &ClassifierConfig::default(), seed).unwrap();
    m.class_fraction[2]
}

#[test]
fn criterion_7_small_distance_suppression() {
    let near = class2_fraction(1.0, 700);
    let far = class2_fraction(10.0, 701);
    let pass = near == 0.0 || near < SUPPRESSION_RATIO * far;
    assert!(verdict(
        "7",
        pass,
        format!(
            "class-2 time fraction {near:.4} at kr = 1 vs {far:.4} at kr = 10 (ratio {:.3}, limit {SUPPRESSION_RATIO})",
            near / far
        )
    ));
}

// 8. Sector populations during classified periods.
const CORRESPONDENCE_DURATION: f64 = 1e6;
const CORRESPONDENCE_MIN: f64 = 0.9;

#[test]
fn criterion_8_subspace_correspondence() {
    let p = strong_drive(5.0);
    let engine = TrajectoryEngine::new(&p).unwrap();
    let record = engine.run(DickeState::G, CORRESPONDENCE_DURATION, 800).unwrap();
    let trace = bin_intensity(&record, TRACE_WINDOW).unwrap();
    let seq = classify_periods(&trace, reference_intensity(&p).unwrap(), &ClassifierConfig::default()).unwrap();
    let sub = subspace_trace_with(&engine, &record, TRACE_WINDOW / 10.0).unwrap();
    let c = subspace_correspondence(&seq, &sub);
    let pass = c.iter().all(|x| x.is_some_and(|v| v > CORRESPONDENCE_MIN));
    let show = |x: Option<f64>| x.map_or("absent".to_string(), |v| format!("{v:.4}"));
    assert!(verdict(
        "8",
        pass,
        format!(
            "mean P_k during class-k periods: {}, {}, {} (limit {CORRESPONDENCE_MIN})",
            show(c[0]),
            show(c[1]),
            show(c[2])
        )
    ));
}

// 9. Property suite.
#[test]
fn criterion_9_property_suite() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut checks = 0;
    for (k, kr) in [0.5, 1.0, 2.0, 5.0, 10.0, 31.4].into_iter().enumerate() {
        for include_c3 in [true, false] {
            let p = ModelParams {
                include_c3,
                ..strong_drive(kr)
            };
            let engine = TrajectoryEngine::new(&p).unwrap();
            for c in invariant_checks(&engine, 900 + k as u64).unwrap() {
                checks += 1;
                if !c.passed {
                    failures.push(format!("kr = {kr}: {} ({})", c.name, c.detail));
                }
            }
            let one = with_threads(1, || engine.run_ensemble(DickeState::G, 500.0, 16, 9).unwrap());
            let many = with_threads(4, || engine.run_ensemble(DickeState::G, 500.0, 16, 9).unwrap());
            let again = with_threads(4, || engine.run_ensemble(DickeState::G, 500.0, 16, 9).unwrap());
            checks += 1;
            if one != many || many != again {
                failures.push(format!("kr = {kr}: ensemble depends on scheduling"));
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && elapsed < 60.0;
    assert!(verdict(
        "9",
        pass,
        format!("{checks} checks, {} failures {:?}, {elapsed:.1} s", failures.len(), failures)
    ));
}
