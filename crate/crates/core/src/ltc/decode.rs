use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use crate::pcm_io::PcmBuffer;
use crate::timecode::{FrameRate, Timecode};

use super::frame::{LtcFrame, FRAME_BITS, SYNC_WORD};
use super::LtcError;

/// Samples collected before the DC estimate that seeds the high-pass filter.
const PRIMER_LEN: usize = 4096;
/// Schmitt trigger half-width relative to the running envelope.
const HYSTERESIS: f64 = 0.25;
/// Trigger floor: anything quieter (-80 dBFS) counts as silence.
const MIN_LEVEL: f64 = 1e-4;
const ENVELOPE_SECONDS: f64 = 0.002;
/// Intervals shorter than this fraction of a bit are glitches.
const MIN_INTERVAL: f64 = 0.25;
/// Half/full discrimination threshold.
const HALF_FULL_SPLIT: f64 = 0.75;
/// Intervals longer than this fraction of a bit are dropouts.
const MAX_INTERVAL: f64 = 1.5;
const TRACKER_GAIN: f64 = 0.02;
const TRACKER_RANGE: f64 = 0.15;
pub const MIN_ESTIMATE_TRANSITIONS: usize = 160;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOptions {
    /// Drop frames whose zero count is odd.
    pub require_parity: bool,
    /// Corner of the DC-blocking pre-filter.
    pub highpass_hz: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            require_parity: true,
            highpass_hz: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DecodedFrame {
    #[serde(serialize_with = "ser_tc")]
    pub timecode: Timecode,
    /// Sample where the frame's first bit cell begins.
    pub first_sample_index: u64,
    pub user_bits: u32,
}

fn ser_tc<S: serde::Serializer>(tc: &Timecode, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(tc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeDiagnostics {
    pub transitions: u64,
    /// Bit period the clock tracker ended on, in samples.
    pub bit_period_samples: f64,
    pub bit_errors: u64,
    pub sync_words: u64,
}

impl fmt::Display for DecodeDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} transitions, bit period {:.3} samples, {} bit errors, {} sync words",
            self.transitions, self.bit_period_samples, self.bit_errors, self.sync_words
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtcDecodeResult {
    pub rate: FrameRate,
    pub sample_rate: u32,
    /// Strictly increasing in timecode and sample index.
    pub frames: Vec<DecodedFrame>,
    /// Frames located by their sync word but rejected.
    pub discarded: usize,
    pub start_timecode: Timecode,
    pub diagnostics: DecodeDiagnostics,
}

/// DC blocker, envelope follower and Schmitt trigger. Emits the sub-sample
/// position of each zero crossing that the trigger confirms, plus an onset
/// edge when the signal first leaves a silent lead-in.
struct EdgeDetector {
    hp_coeff: f64,
    env_coeff: f64,
    primer: Vec<f32>,
    primed: bool,
    x_prev: f64,
    y_prev: f64,
    env: f64,
    state: i8,
    last_up: f64,
    last_down: f64,
    /// Some sample has passed without the trigger deciding a level.
    silent_lead_in: bool,
    n: u64,
}

impl EdgeDetector {
    fn new(sample_rate: u32, highpass_hz: f64) -> Self {
        let sr = f64::from(sample_rate);
        EdgeDetector {
            hp_coeff: 1.0 / (1.0 + 2.0 * std::f64::consts::PI * highpass_hz / sr),
            env_coeff: 1.0 / (ENVELOPE_SECONDS * sr).max(1.0),
            primer: Vec::with_capacity(PRIMER_LEN),
            primed: false,
            x_prev: 0.0,
            y_prev: 0.0,
            env: 0.0,
            state: 0,
            last_up: 0.0,
            last_down: 0.0,
            silent_lead_in: false,
            n: 0,
        }
    }

    fn push(&mut self, mut samples: &[f32], emit: &mut impl FnMut(f64, bool)) {
        if !self.primed {
            let take = (PRIMER_LEN - self.primer.len()).min(samples.len());
            self.primer.extend_from_slice(&samples[..take]);
            samples = &samples[take..];
            if self.primer.len() < PRIMER_LEN {
                return;
            }
            self.prime(emit);
        }
        for &x in samples {
            self.step(f64::from(x), emit);
        }
    }

    fn flush(&mut self, emit: &mut impl FnMut(f64, bool)) {
        if !self.primed && !self.primer.is_empty() {
            self.prime(emit);
        }
    }

    fn prime(&mut self, emit: &mut impl FnMut(f64, bool)) {
        let primer = std::mem::take(&mut self.primer);
        // midrange, not mean: a few unbalanced cells or a silent lead-in
        // would bias the mean
        let (lo, hi) = primer
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(f64::from(x)), hi.max(f64::from(x))));
        let dc = (lo + hi) / 2.0;
        self.x_prev = f64::from(primer[0]);
        self.y_prev = self.x_prev - dc;
        self.env = primer.iter().map(|&x| (f64::from(x) - dc).abs()).sum::<f64>() / primer.len() as f64;
        self.primed = true;
        for &x in &primer {
            self.step(f64::from(x), emit);
        }
    }

    #[inline]
    fn step(&mut self, x: f64, emit: &mut impl FnMut(f64, bool)) {
        let y = self.hp_coeff * (self.y_prev + x - self.x_prev);
        self.x_prev = x;
        let at = self.n as f64 - 1.0;
        if self.y_prev <= 0.0 && y > 0.0 {
            self.last_up = at + self.y_prev / (self.y_prev - y);
        } else if self.y_prev >= 0.0 && y < 0.0 {
            self.last_down = at + self.y_prev / (self.y_prev - y);
        }
        self.env += self.env_coeff * (y.abs() - self.env);
        let h = (HYSTERESIS * self.env).max(MIN_LEVEL);
        let onset = self.n as f64 - 0.5;
        if self.state <= 0 && y > h {
            if self.state < 0 {
                emit(self.last_up, false);
            } else if self.silent_lead_in {
                emit(onset, true);
            }
            self.state = 1;
        } else if self.state >= 0 && y < -h {
            if self.state > 0 {
                emit(self.last_down, false);
            } else if self.silent_lead_in {
                emit(onset, true);
            }
            self.state = -1;
        }
        if self.state == 0 {
            self.silent_lead_in = true;
        }
        self.y_prev = y;
        self.n += 1;
    }
}

/// Turns edge times into bits. Half-bit intervals are buffered until a
/// full-bit interval (which always starts on a cell boundary) fixes how they
/// pair up.
struct BitSlicer {
    period: f64,
    nominal: f64,
    last_edge: Option<f64>,
    run: Vec<f64>,
    anchored: bool,
}

impl BitSlicer {
    fn new(nominal: f64) -> Self {
        BitSlicer {
            period: nominal,
            nominal,
            // the stream start counts as a cell boundary
            last_edge: Some(-0.5),
            run: Vec::new(),
            anchored: true,
        }
    }

    fn track(&mut self, observed: f64) {
        self.period += TRACKER_GAIN * (observed - self.period);
        let lo = self.nominal * (1.0 - TRACKER_RANGE);
        let hi = self.nominal * (1.0 + TRACKER_RANGE);
        self.period = self.period.clamp(lo, hi);
    }

    /// Signal leaving silence: a cell boundary that replaces the assumed one
    /// at the stream start.
    fn onset(&mut self, t: f64) {
        self.last_edge = Some(t);
        self.run.clear();
        self.anchored = true;
    }

    fn edge(&mut self, t: f64, framer: &mut Framer) {
        if let Some(prev) = self.last_edge {
            let iv = t - prev;
            let p = self.period;
            if iv < MIN_INTERVAL * p || iv > MAX_INTERVAL * p {
                self.break_run(framer);
            } else if iv <= HALF_FULL_SPLIT * p {
                self.run.push(prev);
                self.track(2.0 * iv);
            } else {
                self.close_run(framer);
                framer.bit(false, prev);
                self.anchored = true;
                self.track(iv);
            }
        }
        self.last_edge = Some(t);
    }

    fn close_run(&mut self, framer: &mut Framer) {
        let mut skip = 0;
        if self.run.len() % 2 == 1 {
            framer.error();
            skip = 1;
        }
        for pair in self.run[skip..].chunks_exact(2) {
            framer.bit(true, pair[0]);
        }
        self.run.clear();
    }

    fn break_run(&mut self, framer: &mut Framer) {
        if self.anchored {
            for pair in self.run.chunks_exact(2) {
                framer.bit(true, pair[0]);
            }
        }
        framer.error();
        self.run.clear();
        self.anchored = false;
    }

    /// Treats the end of the signal as one more edge if it sits a clean half
    /// or full cell after the last real one.
    fn finish(&mut self, end: f64, framer: &mut Framer) {
        if let Some(prev) = self.last_edge {
            let iv = (end - prev) / self.period;
            if (0.3..=0.7).contains(&iv) {
                self.run.push(prev);
            } else if (0.8..=1.2).contains(&iv) {
                self.close_run(framer);
                framer.bit(false, prev);
                self.anchored = true;
            }
        }
        if self.anchored || self.run.len().is_multiple_of(2) {
            for pair in self.run.chunks_exact(2) {
                framer.bit(true, pair[0]);
            }
        } else {
            for pair in self.run[1..].chunks_exact(2) {
                framer.bit(true, pair[0]);
            }
        }
        self.run.clear();
    }
}

struct Framer {
    rate: FrameRate,
    require_parity: bool,
    ring: VecDeque<(bool, f64)>,
    shift: u16,
    sync: u16,
    valid_run: usize,
    seen_sync: bool,
    error_since_sync: bool,
    frames: Vec<DecodedFrame>,
    discarded: usize,
    sync_words: u64,
    bit_errors: u64,
}

impl Framer {
    fn new(rate: FrameRate, require_parity: bool) -> Self {
        Framer {
            rate,
            require_parity,
            ring: VecDeque::with_capacity(FRAME_BITS + 1),
            shift: 0,
            sync: SYNC_WORD.iter().fold(0u16, |acc, &b| acc << 1 | u16::from(b)),
            valid_run: 0,
            seen_sync: false,
            error_since_sync: false,
            frames: Vec::new(),
            discarded: 0,
            sync_words: 0,
            bit_errors: 0,
        }
    }

    fn error(&mut self) {
        self.valid_run = 0;
        self.error_since_sync = true;
        self.bit_errors += 1;
    }

    fn bit(&mut self, b: bool, start: f64) {
        self.ring.push_back((b, start));
        if self.ring.len() > FRAME_BITS {
            self.ring.pop_front();
        }
        self.shift = self.shift << 1 | u16::from(b);
        self.valid_run += 1;
        if self.shift != self.sync || self.valid_run < SYNC_WORD.len() {
            return;
        }
        self.sync_words += 1;
        if self.valid_run >= FRAME_BITS {
            self.accept_frame();
        } else if self.seen_sync && self.error_since_sync {
            self.discarded += 1;
        }
        self.seen_sync = true;
        self.error_since_sync = false;
    }

    fn accept_frame(&mut self) {
        let bits: Vec<bool> = self.ring.iter().map(|&(b, _)| b).collect();
        let frame = LtcFrame::from_bits(&bits);
        let start = (self.ring[0].1 + 0.5).round().max(0.0) as u64;
        let Ok(timecode) = frame.decode(self.rate, self.require_parity) else {
            self.discarded += 1;
            return;
        };
        if let Some(last) = self.frames.last() {
            if timecode.total_frames() <= last.timecode.total_frames() || start <= last.first_sample_index {
                self.discarded += 1;
                return;
            }
        }
        self.frames.push(DecodedFrame {
            timecode,
            first_sample_index: start,
            user_bits: frame.user_bits(),
        });
    }
}

/// Incremental LTC decoder for a known frame rate.
///
/// Feed samples with [`push`](Self::push) in any block sizes; the result does
/// not depend on the blocking.
pub struct LtcDecoder {
    sample_rate: u32,
    edges: EdgeDetector,
    slicer: BitSlicer,
    framer: Framer,
    transitions: u64,
    samples: u64,
}

impl LtcDecoder {
    pub fn new(sample_rate: u32, rate: FrameRate, options: &DecodeOptions) -> Self {
        let nominal = f64::from(sample_rate) / (FRAME_BITS as f64 * f64::from(rate.fps()));
        LtcDecoder {
            sample_rate,
            edges: EdgeDetector::new(sample_rate, options.highpass_hz),
            slicer: BitSlicer::new(nominal),
            framer: Framer::new(rate, options.require_parity),
            transitions: 0,
            samples: 0,
        }
    }

    pub fn push(&mut self, samples: &[f32]) {
        self.samples += samples.len() as u64;
        let LtcDecoder {
            edges,
            slicer,
            framer,
            transitions,
            ..
        } = self;
        edges.push(samples, &mut |t, onset| {
            *transitions += 1;
            if onset {
                slicer.onset(t);
            } else {
                slicer.edge(t, framer);
            }
        });
    }

    /// Frames decoded so far.
    pub fn frames(&self) -> &[DecodedFrame] {
        &self.framer.frames
    }

    pub fn finish(mut self) -> Result<LtcDecodeResult, LtcError> {
        let LtcDecoder {
            edges,
            slicer,
            framer,
            transitions,
            samples,
            ..
        } = &mut self;
        edges.flush(&mut |t, onset| {
            *transitions += 1;
            if onset {
                slicer.onset(t);
            } else {
                slicer.edge(t, framer);
            }
        });
        slicer.finish(*samples as f64 - 0.5, framer);

        let diagnostics = DecodeDiagnostics {
            transitions: self.transitions,
            bit_period_samples: self.slicer.period,
            bit_errors: self.framer.bit_errors,
            sync_words: self.framer.sync_words,
        };
        let Some(first) = self.framer.frames.first() else {
            return Err(LtcError::NoLtcFound {
                transitions: diagnostics.transitions,
                bit_rate: Some(f64::from(self.sample_rate) / diagnostics.bit_period_samples),
            });
        };
        Ok(LtcDecodeResult {
            rate: self.framer.rate,
            sample_rate: self.sample_rate,
            start_timecode: first.timecode,
            frames: self.framer.frames,
            discarded: self.framer.discarded,
            diagnostics,
        })
    }
}

fn edge_times(samples: &[f32], sample_rate: u32, highpass_hz: f64) -> Vec<f64> {
    let mut det = EdgeDetector::new(sample_rate, highpass_hz);
    let mut out = Vec::new();
    det.push(samples, &mut |t, _| out.push(t));
    det.flush(&mut |t, _| out.push(t));
    out
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn mono_samples(signal: &PcmBuffer) -> Result<&[f32], LtcError> {
    if signal.channel_count() != 1 {
        return Err(LtcError::NotMono(signal.channel_count()));
    }
    if signal.is_empty() {
        return Err(LtcError::EmptySignal);
    }
    Ok(signal.channel(0).expect("mono buffer has channel 0"))
}

/// Dominant bit rate of a biphase-mark signal, in bits per second.
///
/// Starts from the 90th-percentile edge interval (a full cell, since every
/// LTC frame carries zeros) and refines by folding half-cell intervals onto
/// full cells and taking the median.
pub fn bit_period_estimate(signal: &PcmBuffer) -> Result<f64, LtcError> {
    let samples = mono_samples(signal)?;
    let edges = edge_times(samples, signal.sample_rate(), DecodeOptions::default().highpass_hz);
    if edges.len() < MIN_ESTIMATE_TRANSITIONS {
        return Err(LtcError::InsufficientTransitions {
            found: edges.len(),
            required: MIN_ESTIMATE_TRANSITIONS,
        });
    }
    let mut intervals: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    intervals.sort_by(f64::total_cmp);
    let mut period = intervals[intervals.len() * 9 / 10];
    for _ in 0..3 {
        let mut folded: Vec<f64> = intervals
            .iter()
            .filter_map(|&iv| {
                if iv > MIN_INTERVAL * period && iv <= HALF_FULL_SPLIT * period {
                    Some(2.0 * iv)
                } else if iv > HALF_FULL_SPLIT * period && iv <= MAX_INTERVAL * period {
                    Some(iv)
                } else {
                    None
                }
            })
            .collect();
        if folded.is_empty() {
            break;
        }
        period = median(&mut folded);
    }
    Ok(f64::from(signal.sample_rate()) / period)
}

/// Nearest supported frame rate to a measured bit rate, if within 3%.
pub fn rate_from_bit_rate(bits_per_second: f64) -> Option<FrameRate> {
    let fps = bits_per_second / FRAME_BITS as f64;
    FrameRate::all()
        .min_by(|a, b| {
            (f64::from(a.fps()) - fps)
                .abs()
                .total_cmp(&(f64::from(b.fps()) - fps).abs())
        })
        .filter(|r| (f64::from(r.fps()) - fps).abs() <= 0.03 * f64::from(r.fps()))
}

pub fn decode_ltc(signal: &PcmBuffer, rate_hint: Option<FrameRate>) -> Result<LtcDecodeResult, LtcError> {
    decode_ltc_with(signal, rate_hint, &DecodeOptions::default())
}

pub fn decode_ltc_with(
    signal: &PcmBuffer,
    rate_hint: Option<FrameRate>,
    options: &DecodeOptions,
) -> Result<LtcDecodeResult, LtcError> {
    let samples = mono_samples(signal)?;
    let rate = match rate_hint {
        Some(r) => r,
        None => {
            let bit_rate = match bit_period_estimate(signal) {
                Ok(b) => b,
                Err(LtcError::InsufficientTransitions { found, .. }) => {
                    return Err(LtcError::NoLtcFound {
                        transitions: found as u64,
                        bit_rate: None,
                    })
                }
                Err(e) => return Err(e),
            };
            rate_from_bit_rate(bit_rate).ok_or(LtcError::NoLtcFound {
                transitions: edge_times(samples, signal.sample_rate(), options.highpass_hz).len() as u64,
                bit_rate: Some(bit_rate),
            })?
        }
    };
    let mut dec = LtcDecoder::new(signal.sample_rate(), rate, options);
    dec.push(samples);
    dec.finish()
}
