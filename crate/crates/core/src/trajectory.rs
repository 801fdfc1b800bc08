//! Quantum-jump trajectories: waiting-time sampling by inversion of the
//! no-photon probability, two-channel resets, and emission records.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    build_h_cond, build_single_atom_h_cond, check_engine_params, ConditionalEvolution,
    ConditionalGenerator, MAX_DIM,
};
use crate::error::{Error, Result};
use crate::hilbert::{sigma_minus, Atom, DickeState, Excited, StateVector};
use crate::model::{ModelParams, C64};
use crate::rng::{open_unit, rng_from_seed, substream_seed};

/// Photon-emission channel of the collective reset: `Plus` leaves the atoms
/// in the image of `R+ = (S13- + S23-)/sqrt2`, `Minus` in that of `R-`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Channel {
    pub fn symbol(self) -> &'static str {
        match self {
            Channel::Plus => "+",
            Channel::Minus => "-",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+" => Ok(Channel::Plus),
            "-" => Ok(Channel::Minus),
            other => Err(Error::domain(format!("unknown channel {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct JumpOperator {
    pub channel: Channel,
    pub op: DMatrix<C64>,
    pub rate: f64,
}

/// The reset map `R(rho) = sum_k rate_k R_k rho R_k^dagger`.
#[derive(Clone, Debug)]
pub struct ResetChannels {
    jumps: Vec<JumpOperator>,
}

#[derive(Clone, Debug)]
pub struct ResetOutcome {
    pub channel: Channel,
    /// Normalized post-emission state.
    pub state: StateVector,
    /// Selection probability of each channel, aligned with
    /// [`ResetChannels::jumps`].
    pub probabilities: Vec<f64>,
}

impl ResetChannels {
    /// `R+- = (S13- +- S23-)/sqrt2` weighted by `A3 +- Re C3`.
    pub fn two_atom(params: &ModelParams) -> Result<Self> {
        let c3 = check_engine_params(params)?;
        let s1 = sigma_minus(Atom::First, Excited::Three);
        let s2 = sigma_minus(Atom::Second, Excited::Three);
        let norm = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Ok(ResetChannels {
            jumps: vec![
                JumpOperator {
                    channel: Channel::Plus,
                    op: (&s1 + &s2) * norm,
                    rate: params.a3 + c3.re,
                },
                JumpOperator {
                    channel: Channel::Minus,
                    op: (s1 - s2) * norm,
                    rate: params.a3 - c3.re,
                },
            ],
        })
    }

    /// Single V atom: `|1><3|` at rate `A3`.
    pub fn single_atom(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let mut op = DMatrix::zeros(3, 3);
        op[(0, 2)] = C64::new(1.0, 0.0);
        Ok(ResetChannels {
            jumps: vec![JumpOperator {
                channel: Channel::Plus,
                op,
                rate: params.a3,
            }],
        })
    }

    pub fn from_jumps(jumps: Vec<JumpOperator>) -> Result<Self> {
        if jumps.is_empty() || jumps.iter().any(|j| !(j.rate >= 0.0)) {
            return Err(Error::domain("reset channels need at least one non-negative rate"));
        }
        Ok(ResetChannels { jumps })
    }

    pub fn jumps(&self) -> &[JumpOperator] {
        &self.jumps
    }

    pub fn jump(&self, channel: Channel) -> Option<&JumpOperator> {
        self.jumps.iter().find(|j| j.channel == channel)
    }

    /// Swaps the channel rates. Used only to check that validation detects a
    /// broken reset.
    #[doc(hidden)]
    pub fn corrupted(mut self) -> Self {
        let rates: Vec<f64> = self.jumps.iter().rev().map(|j| j.rate).collect();
        for (j, r) in self.jumps.iter_mut().zip(rates) {
            j.rate = r;
        }
        self
    }

    /// Total emission rate `tr R(|psi><psi|)`.
    pub fn emission_rate(&self, psi: &DVector<C64>) -> f64 {
        self.jumps
            .iter()
            .map(|j| j.rate * (&j.op * psi).norm_squared())
            .sum()
    }

    pub fn reset_density(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let n = rho.nrows();
        self.jumps.iter().fold(DMatrix::zeros(n, n), |acc, j| {
            acc + (&j.op * rho * j.op.adjoint()) * C64::new(j.rate, 0.0)
        })
    }

    /// Chooses a channel with probability proportional to
    /// `rate_k ||R_k psi||^2` using the uniform draw `u`, and returns the
    /// normalized post-emission state.
    pub fn apply_reset(&self, psi: &StateVector, u: f64) -> Result<ResetOutcome> {
        let images: Vec<DVector<C64>> = self.jumps.iter().map(|j| &j.op * psi.amplitudes()).collect();
        let weights: Vec<f64> = self
            .jumps
            .iter()
            .zip(&images)
            .map(|(j, v)| j.rate * v.norm_squared())
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 1e-14 * psi.norm_sqr()) || !total.is_finite() {
            return Err(Error::NonEmittingState);
        }
        let probabilities: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut pick = self.jumps.len() - 1;
        let mut acc = 0.0;
        for (k, p) in probabilities.iter().enumerate() {
            acc += p;
            if u < acc && *p > 0.0 {
                pick = k;
                break;
            }
        }
        while probabilities[pick] == 0.0 {
            pick -= 1;
        }
        let state = StateVector::new(images[pick].clone()).normalized()?;
        Ok(ResetOutcome {
            channel: self.jumps[pick].channel,
            state,
            probabilities,
        })
    }
}

/// `A3 (S13- rho S13+ + S23- rho S23+) + Re C3 (S13- rho S23+ + S23- rho S13+)`,
/// the pairwise form of the two-atom reset map.
pub fn reset_density_pairwise(params: &ModelParams, rho: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let c3 = check_engine_params(params)?;
    let s1 = sigma_minus(Atom::First, Excited::Three);
    let s2 = sigma_minus(Atom::Second, Excited::Three);
    let (s1d, s2d) = (s1.adjoint(), s2.adjoint());
    let direct = &s1 * rho * &s1d + &s2 * rho * &s2d;
    let cross = &s1 * rho * &s2d + &s2 * rho * &s1d;
    Ok(direct * C64::new(params.a3, 0.0) + cross * C64::new(c3.re, 0.0))
}

/// Root-finding controls for inverting `P0(t) = u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaitingTimeSampler {
    /// First bracket end; doubled until `P0` falls below `u`.
    pub start: f64,
    pub cap: f64,
    pub rtol: f64,
}

impl Default for WaitingTimeSampler {
    fn default() -> Self {
        WaitingTimeSampler {
            start: 1.0,
            cap: 1e8,
            rtol: 1e-9,
        }
    }
}

impl WaitingTimeSampler {
    pub fn for_params(params: &ModelParams) -> Self {
        WaitingTimeSampler {
            start: 1.0 / params.a3,
            cap: 1e8 / params.a3,
            rtol: 1e-9,
        }
    }

    /// First time with `P0(t) = u`, or `None` if `P0` stays above `u` up to
    /// `horizon`.
    pub fn first_passage(
        &self,
        ev: &ConditionalEvolution<'_>,
        u: f64,
        horizon: f64,
    ) -> Result<Option<f64>> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::domain(format!("uniform draw must lie in (0, 1), got {u}")));
        }
        let ln_u = u.ln();
        let (mut lo, mut ln_lo) = (0.0, 0.0);
        let mut hi = self.start.min(horizon);
        let mut ln_hi;
        loop {
            let p = ev.survival(hi);
            ln_hi = p.ln();
            if p <= u {
                break;
            }
            if hi >= horizon {
                return Ok(None);
            }
            lo = hi;
            ln_lo = ln_hi;
            hi = (2.0 * hi).min(horizon);
        }

        let mut t = if ln_hi.is_finite() && ln_lo > ln_hi {
            lo + (hi - lo) * (ln_lo - ln_u) / (ln_lo - ln_hi)
        } else {
            0.5 * (lo + hi)
        };
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
        }
        for _ in 0..300 {
            let (p, w) = ev.survival_and_density(t);
            let g = p.ln() - ln_u;
            if g == 0.0 {
                return Ok(Some(t));
            }
            if g > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            // Newton on ln P0, whose derivative is -w1/P0.
            let newton = t + g * p / w;
            let next = if w > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - t).abs() <= self.rtol * next || hi - lo <= self.rtol * hi {
                return Ok(Some(next));
            }
            t = next;
        }
        Err(Error::Numerical(format!(
            "waiting-time inversion did not converge for u = {u} in [{lo}, {hi}]"
        )))
    }
}

/// Waiting time `t*` with `P0(t*) = u` for a normalized state.
pub fn sample_waiting_time(gen: &ConditionalGenerator, psi: &StateVector, u: f64) -> Result<f64> {
    let sampler = WaitingTimeSampler::default();
    let ev = gen.evolution(psi)?;
    sampler
        .first_passage(&ev, u, sampler.cap)?
        .ok_or(Error::EffectivelyDark { cap: sampler.cap })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Emission time since the start of the trajectory, units of `1/A3`.
    pub time: f64,
    pub channel: Channel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub params: ModelParams,
    pub seed: u64,
    pub initial: DickeState,
    pub duration: f64,
    pub events: Vec<Event>,
}

impl EmissionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.events.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::CorruptedRecord("event times not strictly increasing".into()));
        }
        if let Some(last) = self.events.last() {
            if !(last.time >= 0.0 && last.time <= self.duration) {
                return Err(Error::CorruptedRecord(format!(
                    "last event at {} outside [0, {}]",
                    last.time, self.duration
                )));
            }
        }
        Ok(())
    }

    pub fn emission_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.time)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "# initial={}", self.initial)?;
        writeln!(out, "# duration={}", self.duration)?;
        for (k, v) in self.params.metadata() {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "time,channel")?;
        for e in &self.events {
            writeln!(out, "{},{}", e.time, e.channel)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut params = ModelParams::default();
        let (mut seed, mut initial, mut duration) = (None, None, None);
        let mut events = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::CorruptedRecord(format!("line {}: {msg}", lineno + 1));
            if let Some(meta) = line.strip_prefix('#') {
                let Some((k, v)) = meta.trim().split_once('=') else {
                    continue;
                };
                let (k, v) = (k.trim(), v.trim());
                match k {
                    "seed" => seed = Some(v.parse().map_err(|e| bad(format!("{e}")))?),
                    "initial" => initial = Some(v.parse()?),
                    "duration" => duration = Some(v.parse().map_err(|e| bad(format!("{e}")))?),
                    _ => {
                        params.set_metadata(k, v)?;
                    }
                }
                continue;
            }
            if !header_seen {
                if line != "time,channel" {
                    return Err(bad(format!("expected header `time,channel`, got {line:?}")));
                }
                header_seen = true;
                continue;
            }
            let (t, c) = line
                .split_once(',')
                .ok_or_else(|| bad("expected `time,channel`".into()))?;
            events.push(Event {
                time: t.trim().parse().map_err(|e| bad(format!("{e}")))?,
                channel: c.parse()?,
            });
        }
        let missing = |k: &str| Error::CorruptedRecord(format!("missing `{k}` metadata"));
        let record = EmissionRecord {
            params,
            seed: seed.ok_or_else(|| missing("seed"))?,
            initial: initial.ok_or_else(|| missing("initial"))?,
            duration: duration.ok_or_else(|| missing("duration"))?,
            events,
        };
        record.validate()?;
        Ok(record)
    }

    /// Normalized conditional states at the sorted `times`, reconstructed by
    /// propagating between the recorded emissions and applying the recorded
    /// channel at each one. States at an emission time are post-reset.
    pub fn replay(&self, engine: &TrajectoryEngine, times: &[f64]) -> Result<Vec<StateVector>> {
        if engine.params() != &self.params {
            return Err(Error::RecordMismatch("engine parameters differ from record".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("replay times must be sorted"));
        }
        let gen = engine.generator();
        let mut psi = self.initial.ket();
        let mut t0 = 0.0;
        let mut ev = gen.evolution(&psi)?;
        let mut next = 0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            while next < self.events.len() && self.events[next].time <= t {
                let e = self.events[next];
                let phi = ev.state_at(e.time - t0)?;
                psi = engine.replay_reset(&phi, e)?;
                t0 = e.time;
                ev = gen.evolution(&psi)?;
                next += 1;
            }
            out.push(ev.state_at(t - t0)?.normalized()?);
        }
        Ok(out)
    }
}

/// Minimum selection probability of a recorded channel accepted by replay.
pub const REPLAY_TOLERANCE: f64 = 1e-6;

/// Simulates trajectories of one fixed model.
#[derive(Clone, Debug)]
pub struct TrajectoryEngine {
    params: ModelParams,
    gen: ConditionalGenerator,
    channels: ResetChannels,
    sampler: WaitingTimeSampler,
}

impl TrajectoryEngine {
    pub fn new(params: &ModelParams) -> Result<Self> {
        Ok(TrajectoryEngine {
            params: *params,
            gen: build_h_cond(params)?,
            channels: ResetChannels::two_atom(params)?,
            sampler: WaitingTimeSampler::for_params(params),
        })
    }

    /// One V atom on its own, levels `(1, 2, 3)`.
    pub fn single_atom(params: &ModelParams) -> Result<Self> {
        Ok(TrajectoryEngine {
            params: *params,
            gen: build_single_atom_h_cond(params)?,
            channels: ResetChannels::single_atom(params)?,
            sampler: WaitingTimeSampler::for_params(params),
        })
    }

    #[doc(hidden)]
    pub fn with_corrupted_reset(mut self) -> Self {
        self.channels = self.channels.corrupted();
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn generator(&self) -> &ConditionalGenerator {
        &self.gen
    }

    pub fn channels(&self) -> &ResetChannels {
        &self.channels
    }

    pub fn sampler(&self) -> &WaitingTimeSampler {
        &self.sampler
    }

    /// Runs `(sample waiting time, propagate, reset)` from `initial` until
    /// `duration`, appending emissions to `events`. On error the events
    /// collected so far are kept.
    pub fn simulate<R: Rng>(
        &self,
        initial: &StateVector,
        duration: f64,
        rng: &mut R,
        events: &mut Vec<Event>,
    ) -> Result<()> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::domain(format!("duration must be positive, got {duration}")));
        }
        let mut psi = initial.normalized()?;
        let mut now = 0.0;
        let mut buf = [C64::new(0.0, 0.0); MAX_DIM];
        let n = self.gen.dim();
        loop {
            let ev = self.gen.evolution(&psi)?;
            let u = open_unit(rng);
            let horizon = (duration - now).min(self.sampler.cap);
            let Some(wait) = self.sampler.first_passage(&ev, u, horizon)? else {
                if duration - now > self.sampler.cap {
                    return Err(Error::EffectivelyDark { cap: self.sampler.cap });
                }
                return Ok(());
            };
            let mut t = now + wait;
            if t > duration {
                return Ok(());
            }
            if let Some(last) = events.last() {
                if t <= last.time {
                    t = last.time.next_up();
                }
            }
            ev.amplitudes_into(wait, &mut buf);
            let phi = StateVector::from_slice(&buf[..n]);
            let outcome = self.channels.apply_reset(&phi, rng.random())?;
            events.push(Event {
                time: t,
                channel: outcome.channel,
            });
            psi = outcome.state;
            now = t;
        }
    }

    pub fn run(&self, initial: DickeState, duration: f64, seed: u64) -> Result<EmissionRecord> {
        let mut rng = rng_from_seed(seed);
        let mut events = Vec::new();
        let status = self.simulate(&initial.ket(), duration, &mut rng, &mut events);
        let record = EmissionRecord {
            params: self.params,
            seed,
            initial,
            duration,
            events,
        };
        match status {
            Ok(()) => Ok(record),
            Err(e) => Err(Error::TrajectoryAborted {
                record: Box::new(record),
                source: Box::new(e),
            }),
        }
    }

    /// Applies a recorded emission to the propagated state `phi`.
    fn replay_reset(&self, phi: &StateVector, e: Event) -> Result<StateVector> {
        let corrupted = |msg: String| Error::CorruptedRecord(format!("emission at t = {}: {msg}", e.time));
        let rate = self.channels.emission_rate(phi.amplitudes());
        if !(rate > 0.0) {
            return Err(corrupted("state cannot emit".into()));
        }
        let jump = self
            .channels
            .jump(e.channel)
            .ok_or_else(|| corrupted(format!("unknown channel {}", e.channel)))?;
        let image = &jump.op * phi.amplitudes();
        let p = jump.rate * image.norm_squared() / rate;
        if p < REPLAY_TOLERANCE {
            return Err(corrupted(format!("channel {} has probability {p:e}", e.channel)));
        }
        StateVector::new(image).normalized()
    }
}

pub fn run_trajectory(
    params: &ModelParams,
    initial: DickeState,
    duration: f64,
    seed: u64,
) -> Result<EmissionRecord> {
    TrajectoryEngine::new(params)?.run(initial, duration, seed)
}

/// `n` independent trajectories; trajectory `k` uses substream
/// `substream_seed(seed, k)` so results do not depend on scheduling.
pub fn run_ensemble(
    params: &ModelParams,
    initial: DickeState,
    duration: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<EmissionRecord>> {
    let engine = TrajectoryEngine::new(params)?;
    engine.run_ensemble(initial, duration, n, seed)
}

impl TrajectoryEngine {
    pub fn run_ensemble(
        &self,
        initial: DickeState,
        duration: f64,
        n: usize,
        seed: u64,
    ) -> Result<Vec<EmissionRecord>> {
        if n == 0 {
            return Err(Error::domain("ensemble needs at least one trajectory"));
        }
        (0..n as u64)
            .into_par_iter()
            .map(|k| self.run(initial, duration, substream_seed(seed, k)))
            .collect()
    }
}

/// Emission times of a single V atom started in its ground state.
pub fn single_atom_emission_times(params: &ModelParams, duration: f64, seed: u64) -> Result<Vec<f64>> {
    let engine = TrajectoryEngine::single_atom(params)?;
    let mut rng = rng_from_seed(seed);
    let mut events = Vec::new();
    let ground = StateVector::from_slice(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
    engine.simulate(&ground, duration, &mut rng, &mut events)?;
    Ok(events.into_iter().map(|e| e.time).collect())
}
