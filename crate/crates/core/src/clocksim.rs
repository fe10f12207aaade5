//! Clock-domain simulation: PTP master/slave discipline over a camera array
//! and word-clock sampling drift across audio devices.
//!
//! Time is `f64` seconds of true (simulator) time. A clock's *error* at true
//! time `t` is what it would read without jitter, minus `t`.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClockSimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("timestamp spread needs at least 2 clocks, got {0}")]
    TooFewClocks(usize),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Scenario(#[from] toml::de::Error),
}

fn config_err(msg: impl Into<String>) -> ClockSimError {
    ClockSimError::Config(msg.into())
}

/// Simulated oscillator. Reads `t + error(t) + noise` where the error is
/// piecewise linear in `t` and changes only when the clock is disciplined.
#[derive(Debug, Clone)]
pub struct SimClock {
    pub id: u32,
    anchor: f64,
    anchor_error: f64,
    /// Fractional frequency error (`drift_ppm * 1e-6` until adjusted).
    freq: f64,
    jitter_std: f64,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl SimClock {
    pub fn new(id: u32, offset: f64, drift_ppm: f64, jitter_std: f64, seed: u64) -> Result<Self, ClockSimError> {
        if !offset.is_finite() || !drift_ppm.is_finite() {
            return Err(config_err(format!("clock {id}: offset and drift must be finite")));
        }
        if !(jitter_std.is_finite() && jitter_std >= 0.0) {
            return Err(config_err(format!("clock {id}: jitter_std must be finite and >= 0")));
        }
        let noise = if jitter_std > 0.0 {
            Some(Normal::new(0.0, jitter_std).map_err(|e| config_err(e.to_string()))?)
        } else {
            None
        };
        Ok(SimClock {
            id,
            anchor: 0.0,
            anchor_error: offset,
            freq: drift_ppm * 1e-6,
            jitter_std,
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Ideal clock: no offset, drift or jitter.
    pub fn perfect(id: u32) -> Self {
        SimClock::new(id, 0.0, 0.0, 0.0, 0).expect("valid")
    }

    pub fn jitter_std(&self) -> f64 {
        self.jitter_std
    }

    /// Current fractional frequency error.
    pub fn frequency_error(&self) -> f64 {
        self.freq
    }

    /// Noise-free offset from true time at `t`.
    pub fn error(&self, t: f64) -> f64 {
        self.anchor_error + self.freq * (t - self.anchor)
    }

    /// Timestamp taken at true time `t`, jitter included.
    pub fn read(&mut self, t: f64) -> f64 {
        let n = match &self.noise {
            Some(d) => d.sample(&mut self.rng),
            None => 0.0,
        };
        t + self.error(t) + n
    }

    fn rebase(&mut self, t: f64) {
        self.anchor_error = self.error(t);
        self.anchor = t;
    }

    /// Moves the clock back by `delta` seconds at `t`.
    pub fn step(&mut self, t: f64, delta: f64) {
        self.rebase(t);
        self.anchor_error -= delta;
    }

    /// Adds `delta` to the fractional frequency from `t` onwards.
    pub fn adjust_frequency(&mut self, t: f64, delta: f64) {
        self.rebase(t);
        self.freq += delta;
    }
}

/// One Sync / Delay_Req round trip. `t1`, `t4` are master timestamps, `t2`,
/// `t3` slave timestamps. The path delays are the true values and are not
/// used by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PtpExchange {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub path_delay_forward: f64,
    pub path_delay_reverse: f64,
}

impl PtpExchange {
    /// Runs the exchange starting at true time `t`. The slave answers
    /// `turnaround` seconds after receiving Sync.
    pub fn perform(
        master: &mut SimClock,
        slave: &mut SimClock,
        t: f64,
        delay_forward: f64,
        delay_reverse: f64,
        turnaround: f64,
    ) -> PtpExchange {
        let t1 = master.read(t);
        let rx = t + delay_forward;
        let t2 = slave.read(rx);
        let tx = rx + turnaround;
        let t3 = slave.read(tx);
        let t4 = master.read(tx + delay_reverse);
        PtpExchange {
            t1,
            t2,
            t3,
            t4,
            path_delay_forward: delay_forward,
            path_delay_reverse: delay_reverse,
        }
    }
}

/// Returns `(offset, delay)` from the four timestamps.
pub fn estimate_offset(x: &PtpExchange) -> (f64, f64) {
    let fwd = x.t2 - x.t1;
    let rev = x.t4 - x.t3;
    ((fwd - rev) / 2.0, (fwd + rev) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoConfig {
    #[serde(default = "default_kp")]
    pub kp: f64,
    #[serde(default = "default_ki")]
    pub ki: f64,
}

fn default_kp() -> f64 {
    0.7
}
fn default_ki() -> f64 {
    0.3
}

impl Default for ServoConfig {
    fn default() -> Self {
        ServoConfig {
            kp: default_kp(),
            ki: default_ki(),
        }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<(), ClockSimError> {
        for (name, g) in [("kp", self.kp), ("ki", self.ki)] {
            if !(g.is_finite() && g > 0.0) {
                return Err(config_err(format!("servo gain {name} = {g} must be finite and > 0")));
            }
        }
        Ok(())
    }
}

/// Correction to apply to a slave clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correction {
    pub phase_step: f64,
    pub frequency_delta: f64,
}

/// PI servo. The first sample is stepped out entirely; afterwards each
/// estimate steps the phase by `kp * offset` and trims the frequency by
/// `ki * offset / interval`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServoState {
    pub proportional_gain: f64,
    pub integral_gain: f64,
    /// Sum of offset estimates since lock, seconds.
    pub accumulated_integral: f64,
    pub last_offset_estimate: f64,
    locked: bool,
}

impl ServoState {
    pub fn new(config: &ServoConfig) -> Result<Self, ClockSimError> {
        config.validate()?;
        Ok(ServoState {
            proportional_gain: config.kp,
            integral_gain: config.ki,
            accumulated_integral: 0.0,
            last_offset_estimate: 0.0,
            locked: false,
        })
    }

    pub fn update(&mut self, offset: f64, interval: f64) -> Correction {
        self.last_offset_estimate = offset;
        if !self.locked {
            self.locked = true;
            return Correction {
                phase_step: offset,
                frequency_delta: 0.0,
            };
        }
        self.accumulated_integral += offset;
        Correction {
            phase_step: self.proportional_gain * offset,
            frequency_delta: -self.integral_gain * offset / interval,
        }
    }
}

/// Network path between the master and one slave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathDelay {
    pub forward: f64,
    pub reverse: f64,
}

impl PathDelay {
    pub fn symmetric(d: f64) -> Self {
        PathDelay { forward: d, reverse: d }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtpSessionConfig {
    pub servo: ServoConfig,
    pub rounds: usize,
    pub round_interval: f64,
    /// Slave residence time between receiving Sync and sending Delay_Req.
    pub turnaround: f64,
}

impl PtpSessionConfig {
    pub fn new(rounds: usize, round_interval: f64) -> Self {
        PtpSessionConfig {
            servo: ServoConfig::default(),
            rounds,
            round_interval,
            turnaround: 1e-5,
        }
    }

    fn validate(&self) -> Result<(), ClockSimError> {
        self.servo.validate()?;
        if self.rounds == 0 {
            return Err(config_err("rounds must be >= 1"));
        }
        if !(self.round_interval.is_finite() && self.round_interval > 0.0) {
            return Err(config_err("round_interval must be > 0"));
        }
        if !(self.turnaround.is_finite() && self.turnaround >= 0.0) {
            return Err(config_err("turnaround must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    /// 1-based.
    pub round: usize,
    pub slave_id: u32,
    pub residual_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PtpTrace {
    pub rows: Vec<TraceRow>,
}

impl PtpTrace {
    /// Residuals of one slave in round order.
    pub fn residuals(&self, slave_id: u32) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.slave_id == slave_id)
            .map(|r| r.residual_seconds)
            .collect()
    }

    pub fn round(&self, round: usize) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.round == round)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,slave_id,residual_seconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:e}", r.round, r.slave_id, r.residual_seconds);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct PtpOutcome {
    pub trace: PtpTrace,
    pub master: SimClock,
    pub slaves: Vec<SimClock>,
    /// True time at which round `n` (1-based) ends, index `n - 1`.
    pub round_ends: Vec<f64>,
}

/// Disciplines every slave against `master` for `config.rounds` rounds.
///
/// Round `n` starts at `(n - 1) * round_interval`. The correction is applied
/// when Delay_Resp reaches the slave, and the recorded residual is the true
/// slave-minus-master offset at that instant.
pub fn run_ptp_session(
    master: SimClock,
    slaves: Vec<(SimClock, PathDelay)>,
    config: &PtpSessionConfig,
) -> Result<PtpOutcome, ClockSimError> {
    run_ptp_session_observed(master, slaves, config, |_, _, _| {})
}

/// As [`run_ptp_session`], calling `observe(round, master, slaves)` after
/// every round's corrections.
pub fn run_ptp_session_observed(
    mut master: SimClock,
    slaves: Vec<(SimClock, PathDelay)>,
    config: &PtpSessionConfig,
    mut observe: impl FnMut(usize, &SimClock, &[SimClock]),
) -> Result<PtpOutcome, ClockSimError> {
    config.validate()?;
    for (s, d) in &slaves {
        if !(d.forward > 0.0 && d.reverse > 0.0 && d.forward.is_finite() && d.reverse.is_finite()) {
            return Err(config_err(format!("slave {}: path delays must be > 0", s.id)));
        }
    }
    let (mut clocks, delays): (Vec<SimClock>, Vec<PathDelay>) = slaves.into_iter().unzip();
    let mut servos = vec![ServoState::new(&config.servo)?; clocks.len()];
    let mut trace = PtpTrace::default();
    let mut round_ends = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let t = round as f64 * config.round_interval;
        let mut end = t;
        for ((slave, d), servo) in clocks.iter_mut().zip(&delays).zip(&mut servos) {
            let x = PtpExchange::perform(&mut master, slave, t, d.forward, d.reverse, config.turnaround);
            let (theta, _) = estimate_offset(&x);
            let c = servo.update(theta, config.round_interval);
            let apply = t + d.forward + config.turnaround + d.reverse + d.forward;
            slave.step(apply, c.phase_step);
            slave.adjust_frequency(apply, c.frequency_delta);
            trace.rows.push(TraceRow {
                round: round + 1,
                slave_id: slave.id,
                residual_seconds: slave.error(apply) - master.error(apply),
            });
            end = end.max(apply);
        }
        round_ends.push(end);
        observe(round + 1, &master, &clocks);
    }
    Ok(PtpOutcome {
        trace,
        master,
        slaves: clocks,
        round_ends,
    })
}

/// Largest pairwise difference between the clocks' readings at `t`.
pub fn timestamp_spread(clocks: &mut [&mut SimClock], t: f64) -> Result<f64, ClockSimError> {
    if clocks.len() < 2 {
        return Err(ClockSimError::TooFewClocks(clocks.len()));
    }
    let reads: Vec<f64> = clocks.iter_mut().map(|c| c.read(t)).collect();
    let hi = reads.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = reads.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(hi - lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockParams {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub drift_ppm: f64,
    #[serde(default)]
    pub jitter_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaveParams {
    #[serde(flatten)]
    pub clock: ClockParams,
    pub delay_forward: f64,
    pub delay_reverse: f64,
}

/// Draws `count` slaves with uniform offsets in `±max_offset`, drifts in
/// `±max_drift_ppm` and a common symmetric path delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSlaves {
    pub count: usize,
    pub max_offset: f64,
    pub max_drift_ppm: f64,
    pub jitter_std: f64,
    pub delay: f64,
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtpScenario {
    pub seed: u64,
    pub rounds: usize,
    pub round_interval: f64,
    #[serde(default = "default_turnaround")]
    pub turnaround: f64,
    /// Rounds at the end over which spread and steady-state figures are taken.
    #[serde(default = "default_window")]
    pub steady_state_rounds: usize,
    #[serde(default)]
    pub servo: ServoConfig,
    pub master: ClockParams,
    #[serde(default)]
    pub slaves: Vec<SlaveParams>,
    pub random_slaves: Option<RandomSlaves>,
}

fn default_turnaround() -> f64 {
    1e-5
}
fn default_window() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PtpSummary {
    pub rounds: usize,
    pub slaves: usize,
    pub steady_state_rounds: usize,
    /// Max |residual| over all slaves in the steady-state window.
    pub max_abs_residual: f64,
    /// RMS residual over all slaves in the steady-state window.
    pub rms_residual: f64,
    /// Max timestamp spread (master and slaves) sampled mid-round in the window.
    pub max_spread: f64,
    /// Max |residual| over all slaves after round 1.
    pub first_round_max_abs_residual: f64,
}

impl PtpScenario {
    pub fn from_toml(text: &str) -> Result<Self, ClockSimError> {
        let s: PtpScenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClockSimError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|source| ClockSimError::Io {
            path: p.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ClockSimError> {
        self.session_config().validate()?;
        if self.slaves.is_empty() && self.random_slaves.as_ref().is_none_or(|r| r.count == 0) {
            return Err(config_err("scenario has no slaves"));
        }
        if self.steady_state_rounds == 0 || self.steady_state_rounds > self.rounds {
            return Err(config_err("steady_state_rounds must be in 1..=rounds"));
        }
        if let Some(r) = &self.random_slaves {
            for (name, v) in [
                ("max_offset", r.max_offset),
                ("max_drift_ppm", r.max_drift_ppm),
                ("jitter_std", r.jitter_std),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(config_err(format!("random_slaves.{name} must be finite and >= 0")));
                }
            }
        }
        Ok(())
    }

    fn session_config(&self) -> PtpSessionConfig {
        PtpSessionConfig {
            servo: self.servo,
            rounds: self.rounds,
            round_interval: self.round_interval,
            turnaround: self.turnaround,
        }
    }

    /// Builds the clocks. Clock `i` (master is 0) is seeded from
    /// `seed` and `i`, so adding slaves does not perturb existing ones.
    pub fn build(&self) -> Result<(SimClock, Vec<(SimClock, PathDelay)>), ClockSimError> {
        let seed_for = |i: u64| self.seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let m = &self.master;
        let master = SimClock::new(0, m.offset, m.drift_ppm, m.jitter_std, seed_for(0))?;
        let mut slaves = Vec::new();
        for s in &self.slaves {
            let id = slaves.len() as u32 + 1;
            let c = &s.clock;
            slaves.push((
                SimClock::new(id, c.offset, c.drift_ppm, c.jitter_std, seed_for(u64::from(id)))?,
                PathDelay {
                    forward: s.delay_forward,
                    reverse: s.delay_reverse,
                },
            ));
        }
        if let Some(r) = &self.random_slaves {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for _ in 0..r.count {
                let id = slaves.len() as u32 + 1;
                let offset = r.max_offset * rng.random_range(-1.0..=1.0);
                let drift = r.max_drift_ppm * rng.random_range(-1.0..=1.0);
                slaves.push((
                    SimClock::new(id, offset, drift, r.jitter_std, seed_for(u64::from(id)))?,
                    PathDelay::symmetric(r.delay),
                ));
            }
        }
        Ok((master, slaves))
    }

    pub fn run(&self) -> Result<(PtpOutcome, PtpSummary), ClockSimError> {
        self.validate()?;
        let (master, slaves) = self.build()?;
        let n_slaves = slaves.len();
        let first = self.rounds - self.steady_state_rounds + 1;
        let interval = self.round_interval;
        let mut spread_err = None;
        let mut max_spread = 0.0f64;
        // spread is read mid-round on copies, leaving the session's noise
        // streams untouched
        let out = run_ptp_session_observed(master, slaves, &self.session_config(), |round, m, s| {
            if round < first {
                return;
            }
            let t = (round as f64 - 0.5) * interval;
            let mut m = m.clone();
            let mut s = s.to_vec();
            let mut all: Vec<&mut SimClock> = std::iter::once(&mut m).chain(s.iter_mut()).collect();
            match timestamp_spread(&mut all, t) {
                Ok(v) => max_spread = max_spread.max(v),
                Err(e) => spread_err = Some(e),
            }
        })?;
        if let Some(e) = spread_err {
            return Err(e);
        }
        let window: Vec<f64> = out
            .trace
            .rows
            .iter()
            .filter(|r| r.round >= first)
            .map(|r| r.residual_seconds)
            .collect();
        let max_abs = window.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let rms = (window.iter().map(|r| r * r).sum::<f64>() / window.len() as f64).sqrt();
        let first_round = out.trace.round(1).fold(0.0f64, |m, r| m.max(r.residual_seconds.abs()));
        Ok((
            out,
            PtpSummary {
                rounds: self.rounds,
                slaves: n_slaves,
                steady_state_rounds: self.steady_state_rounds,
                max_abs_residual: max_abs,
                rms_residual: rms,
                max_spread,
                first_round_max_abs_residual: first_round,
            },
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WordClockMode {
    /// Each device runs from its own oscillator.
    Internal,
    /// Every device slaves to one source with the given drift.
    External { source_ppm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordClockConfig {
    pub mode: WordClockMode,
    pub nominal_rate: u32,
    /// Free-running drift of each device's own oscillator.
    pub drift_ppm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceSampling {
    pub device: usize,
    /// Drift of the clock actually driving the device.
    pub effective_ppm: f64,
    /// True instants of samples `0..first_k`, seconds.
    pub first_instants: Vec<f64>,
    /// True instant at which the device reaches nominal sample `duration * rate`.
    pub terminal_instant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingResult {
    pub devices: Vec<DeviceSampling>,
    /// Largest pairwise difference of terminal instants, seconds.
    pub max_pairwise_drift: f64,
}

/// Sample `n` of a device clocked at `rate * (1 + ppm * 1e-6)` occurs at
/// `n / (rate * (1 + ppm * 1e-6))`.
pub fn simulate_sampling(config: &WordClockConfig, duration: f64, first_k: usize) -> Result<SamplingResult, ClockSimError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(config_err("duration must be > 0"));
    }
    if config.nominal_rate == 0 {
        return Err(config_err("nominal_rate must be > 0"));
    }
    if config.drift_ppm.is_empty() {
        return Err(config_err("no devices"));
    }
    if config.drift_ppm.iter().any(|p| !p.is_finite() || *p <= -1e6) {
        return Err(config_err("drift_ppm entries must be finite and > -1e6"));
    }
    let rate = f64::from(config.nominal_rate);
    let n_end = duration * rate;
    let devices: Vec<DeviceSampling> = config
        .drift_ppm
        .iter()
        .enumerate()
        .map(|(device, &own)| {
            let ppm = match config.mode {
                WordClockMode::Internal => own,
                WordClockMode::External { source_ppm } => source_ppm,
            };
            let actual = rate * (1.0 + ppm * 1e-6);
            DeviceSampling {
                device,
                effective_ppm: ppm,
                first_instants: (0..first_k).map(|n| n as f64 / actual).collect(),
                terminal_instant: n_end / actual,
            }
        })
        .collect();
    let hi = devices.iter().map(|d| d.terminal_instant).fold(f64::NEG_INFINITY, f64::max);
    let lo = devices.iter().map(|d| d.terminal_instant).fold(f64::INFINITY, f64::min);
    Ok(SamplingResult {
        devices,
        max_pairwise_drift: hi - lo,
    })
}
