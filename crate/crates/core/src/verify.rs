//! End-to-end sync check: find an acoustic onset and compare it with the
//! annotated video frame of the same event.
//!
//! Offsets are `onset_time - visual_time`; negative means the audio leads.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{synthesize_session, AlignError, GroundTruth, SyntheticSession, SyntheticSessionSpec};
use crate::pcm_io::{BitDepth, PcmBuffer, PcmError};
use crate::timecode::{FrameRate, Timecode};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("onset detection needs a mono signal, got {0} channels")]
    NotMono(usize),
    #[error("audio is empty")]
    Empty,
    #[error("search window {start}..{end} outside audio of {len} samples")]
    Window { start: u64, end: u64, len: u64 },
    #[error("no onset found (noise floor {noise_floor:.3e}, threshold {threshold:.3e})")]
    NoOnset { noise_floor: f64, threshold: f64 },
    #[error("invalid annotation: {0}")]
    Annotation(String),
    #[error("invalid threshold: {0}")]
    Threshold(String),
    #[error(transparent)]
    Pcm(#[from] PcmError),
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// Energy-rise onset detector settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetConfig {
    /// Threshold as a multiple of the median block energy.
    pub factor: f64,
    /// Block length for the noise floor estimate.
    pub block: usize,
    /// Trailing window of the short-time energy.
    pub short_window: usize,
    /// How long the energy must stay above threshold, seconds.
    pub hold: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        OnsetConfig {
            factor: 10.0,
            block: 32,
            short_window: 8,
            hold: 0.002,
        }
    }
}

/// Floor under the threshold so digital silence still needs real energy.
const MIN_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Onset {
    pub sample: u64,
    pub noise_floor: f64,
    pub threshold: f64,
}

pub fn detect_onset(audio: &PcmBuffer, search_window: Option<Range<u64>>) -> Result<u64, VerifyError> {
    detect_onset_with(audio, search_window, &OnsetConfig::default()).map(|o| o.sample)
}

/// First sample `n` in the window where the mean of `x^2` over the trailing
/// `short_window` samples exceeds the threshold and the mean over the
/// following `hold` seconds does too. The noise floor is the median energy
/// of the window's non-overlapping blocks.
pub fn detect_onset_with(
    audio: &PcmBuffer,
    search_window: Option<Range<u64>>,
    config: &OnsetConfig,
) -> Result<Onset, VerifyError> {
    if audio.channel_count() != 1 {
        return Err(VerifyError::NotMono(audio.channel_count()));
    }
    if audio.is_empty() {
        return Err(VerifyError::Empty);
    }
    let x = audio.channel(0).expect("mono");
    let len = x.len() as u64;
    let w = search_window.unwrap_or(0..len);
    if w.start >= w.end || w.end > len {
        return Err(VerifyError::Window {
            start: w.start,
            end: w.end,
            len,
        });
    }
    let x = &x[w.start as usize..w.end as usize];

    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0f64);
    let mut acc = 0.0;
    for &s in x {
        acc += f64::from(s) * f64::from(s);
        prefix.push(acc);
    }
    let mean = |a: usize, b: usize| (prefix[b] - prefix[a]) / (b - a) as f64;

    let block = config.block.max(1);
    let mut energies: Vec<f64> = (0..x.len() / block).map(|k| mean(k * block, (k + 1) * block)).collect();
    if energies.is_empty() {
        energies.push(mean(0, x.len()));
    }
    energies.sort_by(f64::total_cmp);
    let noise_floor = energies[energies.len() / 2];
    let threshold = (config.factor * noise_floor).max(MIN_THRESHOLD);

    let hold = ((config.hold * f64::from(audio.sample_rate())).round() as usize).max(1);
    let sw = config.short_window.max(1);
    for n in 0..x.len().saturating_sub(hold - 1) {
        let short = mean((n + 1).saturating_sub(sw), n + 1);
        if short > threshold && mean(n, n + hold) > threshold {
            return Ok(Onset {
                sample: w.start + n as u64,
                noise_floor,
                threshold,
            });
        }
    }
    Err(VerifyError::NoOnset { noise_floor, threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvEventAnnotation {
    #[serde(default = "one")]
    pub schema_version: u32,
    /// Video frame (counted from the first frame of the video) of the event.
    pub visual_event_frame: u64,
    pub fps: FrameRate,
    #[serde(default)]
    pub description: String,
}

fn one() -> u32 {
    1
}

impl AvEventAnnotation {
    pub fn new(visual_event_frame: u64, fps: FrameRate, description: impl Into<String>) -> Self {
        AvEventAnnotation {
            schema_version: 1,
            visual_event_frame,
            fps,
            description: description.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, VerifyError> {
        let a: AvEventAnnotation = serde_json::from_str(text).map_err(|e| VerifyError::Annotation(e.to_string()))?;
        if a.schema_version != 1 {
            return Err(VerifyError::Annotation(format!("schema_version {} not supported", a.schema_version)));
        }
        Ok(a)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VerifyError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| VerifyError::Annotation(format!("{}: {e}", p.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes") + "\n"
    }
}

/// Pass/fail bound on `|offset|`. Frame and sample bounds compare exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Frames(u64),
    Samples(u64),
    Seconds(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Frames(1)
    }
}

impl Threshold {
    pub fn seconds(&self, fps: FrameRate, sample_rate: u32) -> f64 {
        match *self {
            Threshold::Frames(n) => n as f64 / f64::from(fps.fps()),
            Threshold::Samples(n) => n as f64 / f64::from(sample_rate),
            Threshold::Seconds(s) => s,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Frames(n) => write!(f, "{n} frame(s)"),
            Threshold::Samples(n) => write!(f, "{n} sample(s)"),
            Threshold::Seconds(s) => write!(f, "{:.3} ms", s * 1000.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncReport {
    pub schema_version: u32,
    pub sample_rate: u32,
    pub fps: FrameRate,
    pub onset_sample: u64,
    pub onset_time: f64,
    pub visual_event_frame: u64,
    pub visual_time: f64,
    /// `onset_time - visual_time`, seconds; negative means audio leads.
    pub offset: f64,
    pub offset_ms: f64,
    pub offset_frames: f64,
    pub threshold: f64,
    pub threshold_label: String,
    /// `|offset| < threshold`.
    pub pass: bool,
    pub noise_floor: f64,
    pub description: String,
}

impl SyncReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

impl fmt::Display for SyncReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lead = if self.offset < 0.0 {
            "audio leads"
        } else if self.offset > 0.0 {
            "audio lags"
        } else {
            "in sync"
        };
        writeln!(
            f,
            "onset: sample {} ({:.3} ms)",
            self.onset_sample,
            self.onset_time * 1000.0
        )?;
        writeln!(
            f,
            "visual event: frame {} @ {} fps ({:.3} ms)",
            self.visual_event_frame,
            self.fps,
            self.visual_time * 1000.0
        )?;
        writeln!(f, "offset: {:+.3} ms ({:+.3} frames, {lead})", self.offset_ms, self.offset_frames)?;
        write!(
            f,
            "threshold: |offset| < {} -> {}",
            self.threshold_label,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Onset offset of `audio` (aligned so sample 0 is the video's first frame)
/// against the annotated event.
pub fn measure_av_offset(
    audio: &PcmBuffer,
    annotation: &AvEventAnnotation,
    threshold: Threshold,
) -> Result<SyncReport, VerifyError> {
    measure_av_offset_with(audio, annotation, threshold, None, &OnsetConfig::default())
}

pub fn measure_av_offset_with(
    audio: &PcmBuffer,
    annotation: &AvEventAnnotation,
    threshold: Threshold,
    search_window: Option<Range<u64>>,
    config: &OnsetConfig,
) -> Result<SyncReport, VerifyError> {
    if let Threshold::Seconds(s) = threshold {
        if !(s.is_finite() && s > 0.0) {
            return Err(VerifyError::Threshold(format!("{s} s")));
        }
    }
    let onset = detect_onset_with(audio, search_window, config)?;
    let sr = audio.sample_rate();
    let fps = annotation.fps;
    // offset in units of 1 / (fps * sr) seconds
    let num = i128::from(onset.sample) * i128::from(fps.fps())
        - i128::from(annotation.visual_event_frame) * i128::from(sr);
    let unit = f64::from(fps.fps()) * f64::from(sr);
    let offset = num as f64 / unit;
    let pass = match threshold {
        Threshold::Frames(n) => num.unsigned_abs() < u128::from(n) * u128::from(sr),
        Threshold::Samples(n) => num.unsigned_abs() < u128::from(n) * u128::from(fps.fps()),
        Threshold::Seconds(s) => offset.abs() < s,
    };
    Ok(SyncReport {
        schema_version: 1,
        sample_rate: sr,
        fps,
        onset_sample: onset.sample,
        onset_time: onset.sample as f64 / f64::from(sr),
        visual_event_frame: annotation.visual_event_frame,
        visual_time: annotation.visual_event_frame as f64 / f64::from(fps.fps()),
        offset,
        offset_ms: offset * 1000.0,
        offset_frames: num as f64 / f64::from(sr),
        threshold: threshold.seconds(fps, sr),
        threshold_label: threshold.to_string(),
        pass,
        noise_floor: onset.noise_floor,
        description: annotation.description.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusSpec {
    pub fps: FrameRate,
    pub ltc_rate: FrameRate,
    pub sample_rate: u32,
    pub video_start: Timecode,
    pub video_frames: u64,
    /// Video frame of the visual event.
    pub event_frame: u64,
    /// Audio displacement of the click relative to the visual event, seconds.
    pub injected_av_offset: f64,
    /// Audio recorded before the video starts, seconds.
    pub lead: f64,
    pub tail: f64,
    /// Background noise standard deviation on the click channel.
    pub noise_std: f64,
    pub seed: u64,
}

impl StimulusSpec {
    pub fn new(fps: FrameRate, event_frame: u64, injected_av_offset: f64) -> Self {
        StimulusSpec {
            fps,
            ltc_rate: FrameRate::FPS_30,
            sample_rate: 48_000,
            video_start: Timecode::new(12, 0, 0, 0, fps).expect("valid"),
            video_frames: u64::from(fps.fps()) * 3,
            event_frame,
            injected_av_offset,
            lead: 1.5,
            tail: 1.0,
            noise_std: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StimulusTruth {
    pub session: GroundTruth,
    /// Click position in the generated recording.
    pub click_sample: u64,
    /// Injected displacement after rounding to whole samples.
    pub injected_offset_samples: i64,
}

#[derive(Debug, Clone)]
pub struct Stimulus {
    /// Channel 0 is the click track, channel 1 the LTC.
    pub session: SyntheticSession,
    pub annotation: AvEventAnnotation,
    pub truth: StimulusTruth,
}

/// Recording of a dropped-ball style event: a noise burst on channel 0,
/// displaced by the injected offset from the annotated frame, plus LTC.
pub fn generate_test_stimulus(spec: &StimulusSpec) -> Result<Stimulus, VerifyError> {
    let sr = spec.sample_rate;
    let mut sess_spec = SyntheticSessionSpec::new(spec.video_start, spec.video_frames, spec.lead, spec.tail);
    sess_spec.sample_rate = sr;
    sess_spec.video_fps = spec.fps;
    sess_spec.lead_samples = (spec.lead * f64::from(sr)).round() as i64;
    sess_spec.tail_samples = (spec.tail * f64::from(sr)).round() as i64;
    sess_spec.ltc_rate = spec.ltc_rate;
    sess_spec.content_channels = 0;
    sess_spec.seed = spec.seed;
    let mut session = synthesize_session(&sess_spec)?;

    let event = crate::timecode::frames_to_samples(spec.event_frame as i64, spec.fps, sr);
    let injected = (spec.injected_av_offset * f64::from(sr)).round() as i64;
    let click = session.truth.video_start_sample + event + injected;
    let len = session.audio.len();
    if click < 0 || click as usize >= len {
        return Err(VerifyError::Annotation(format!("click at sample {click} falls outside the {len}-sample recording")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xC11C);
    let mut track = vec![0.0f32; len];
    if spec.noise_std > 0.0 {
        let bg = Normal::new(0.0, spec.noise_std).map_err(|e| VerifyError::Annotation(e.to_string()))?;
        for s in &mut track {
            *s = bg.sample(&mut rng) as f32;
        }
    }
    let burst = Normal::new(0.0, 0.4).expect("valid");
    let decay = 0.005 * f64::from(sr);
    for (k, s) in track[click as usize..].iter_mut().take((decay * 8.0) as usize).enumerate() {
        *s += (burst.sample(&mut rng) * (-(k as f64) / decay).exp()).clamp(-0.95, 0.95) as f32;
    }
    let truth = session.truth;
    let click_buf = PcmBuffer::mono(sr, BitDepth::TwentyFour, track)?;
    let mut audio = PcmBuffer::merge_channels(&[click_buf, session.audio])?;
    audio.quantize();
    session.audio = audio;
    session.manifest.audio.ltc_channel_index = 1;

    Ok(Stimulus {
        session,
        annotation: AvEventAnnotation::new(spec.event_frame, spec.fps, "synthetic impact"),
        truth: StimulusTruth {
            session: truth,
            click_sample: click as u64,
            injected_offset_samples: injected,
        },
    })
}
