//! LTC-driven placement of a multi-channel recording on the video timeline.
//!
//! The LTC track is decoded, each video's start timecode is located on the
//! audio sample axis, and the audio is trimmed (never resampled) so that
//! sample 0 of the output coincides with the earliest video start and the
//! output lasts exactly until the latest video end.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ltc::{encode_ltc, DecodeOptions, DecodedFrame, LtcDecoder, LtcEncodeConfig, LtcError};
use crate::pcm_io::{write_wav, BitDepth, PcmBuffer, PcmError, WavError, WavReader};
use crate::timecode::{
    div_round_half_away, frames_to_samples, FrameRate, SampleTime, Timecode, TimecodeError,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("cannot read manifest {path}: {source}")]
    ManifestIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: WavError,
    },
    #[error("LTC channel {index}: {source}")]
    Ltc {
        index: usize,
        #[source]
        source: LtcError,
    },
    #[error("audio does not cover the video interval: {lead_ms:.3} ms missing before the start, {tail_ms:.3} ms missing after the end")]
    PaddingViolation { lead_ms: f64, tail_ms: f64 },
    #[error("LTC dropout at the {edge} trim point (video timecode {timecode}): no decoded frame covers it")]
    Dropout { edge: &'static str, timecode: String },
    #[error(transparent)]
    Timecode(#[from] TimecodeError),
    #[error(transparent)]
    Pcm(#[from] PcmError),
}

fn manifest_err(msg: impl Into<String>) -> AlignError {
    AlignError::Manifest(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSource {
    pub path: PathBuf,
    /// Further files recorded on the same clock; their channels follow the
    /// main file's in the combined layout.
    pub extra_paths: Vec<PathBuf>,
    /// Index into the combined channel layout.
    pub ltc_channel_index: usize,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoEntry {
    pub id: String,
    pub start_timecode: Timecode,
    pub duration_frames: u64,
    pub fps: FrameRate,
}

impl VideoEntry {
    /// Exclusive end timecode, which may be exactly midnight.
    pub fn end_frames(&self) -> u64 {
        self.start_timecode.total_frames() + self.duration_frames
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionManifest {
    pub audio: AudioSource,
    pub videos: Vec<VideoEntry>,
    pub ltc_rate: FrameRate,
    /// Directory relative paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    schema_version: u32,
    audio: AudioFile,
    ltc_rate: FrameRate,
    videos: Vec<VideoFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AudioFile {
    path: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extra_paths: Vec<String>,
    ltc_channel_index: usize,
    sample_rate: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoFile {
    id: String,
    start_timecode: String,
    duration_frames: u64,
    fps: FrameRate,
}

impl SessionManifest {
    pub fn from_json(text: &str) -> Result<Self, AlignError> {
        let raw: ManifestFile = serde_json::from_str(text).map_err(|e| manifest_err(e.to_string()))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(manifest_err(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                raw.schema_version
            )));
        }
        let videos = raw
            .videos
            .into_iter()
            .map(|v| {
                let start_timecode = Timecode::parse(&v.start_timecode, v.fps)
                    .map_err(|e| manifest_err(format!("video {:?}: {e}", v.id)))?;
                Ok(VideoEntry {
                    id: v.id,
                    start_timecode,
                    duration_frames: v.duration_frames,
                    fps: v.fps,
                })
            })
            .collect::<Result<Vec<_>, AlignError>>()?;
        let m = SessionManifest {
            audio: AudioSource {
                path: raw.audio.path.into(),
                extra_paths: raw.audio.extra_paths.into_iter().map(PathBuf::from).collect(),
                ltc_channel_index: raw.audio.ltc_channel_index,
                sample_rate: raw.audio.sample_rate,
            },
            videos,
            ltc_rate: raw.ltc_rate,
            base_dir: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AlignError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|source| AlignError::ManifestIo {
            path: p.display().to_string(),
            source,
        })?;
        let mut m = Self::from_json(&text)?;
        m.base_dir = p.parent().map(Path::to_path_buf);
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let path_str = |p: &PathBuf| p.to_string_lossy().into_owned();
        let raw = ManifestFile {
            schema_version: SCHEMA_VERSION,
            audio: AudioFile {
                path: path_str(&self.audio.path),
                extra_paths: self.audio.extra_paths.iter().map(path_str).collect(),
                ltc_channel_index: self.audio.ltc_channel_index,
                sample_rate: self.audio.sample_rate,
            },
            ltc_rate: self.ltc_rate,
            videos: self
                .videos
                .iter()
                .map(|v| VideoFile {
                    id: v.id.clone(),
                    start_timecode: v.start_timecode.to_string(),
                    duration_frames: v.duration_frames,
                    fps: v.fps,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("manifest serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        let Some(first) = self.videos.first() else {
            return Err(manifest_err("no videos listed"));
        };
        if self.audio.sample_rate == 0 {
            return Err(manifest_err("audio.sample_rate must be positive"));
        }
        for v in &self.videos {
            if v.fps != first.fps {
                return Err(manifest_err(format!(
                    "video {:?} runs at {} fps but {:?} at {} fps; all videos must share one rate",
                    v.id, v.fps, first.id, first.fps
                )));
            }
            if v.duration_frames == 0 {
                return Err(manifest_err(format!("video {:?} has zero duration", v.id)));
            }
            if v.end_frames() > v.fps.frames_per_day() {
                return Err(manifest_err(format!("video {:?} runs past midnight", v.id)));
            }
        }
        Ok(())
    }

    pub fn video_fps(&self) -> FrameRate {
        self.videos[0].fps
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Audio files in channel-layout order, resolved against `base_dir`.
    pub fn audio_paths(&self) -> Vec<PathBuf> {
        std::iter::once(&self.audio.path)
            .chain(&self.audio.extra_paths)
            .map(|p| self.resolve(p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignOptions {
    /// Interpolate within the LTC frame instead of snapping to whole frames.
    pub subframe: bool,
    /// Return a result with `padding_ok = false` instead of failing.
    pub allow_padding_violation: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            subframe: true,
            allow_padding_violation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoPlacement {
    pub id: String,
    /// Audio sample at which the video starts; negative if before the audio.
    pub start_sample: i64,
    pub end_sample: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LtcSummary {
    pub frames: usize,
    pub discarded: usize,
    #[serde(serialize_with = "ser_tc")]
    pub first_timecode: Timecode,
    pub first_sample_index: u64,
    #[serde(serialize_with = "ser_tc")]
    pub last_timecode: Timecode,
}

fn ser_tc<S: serde::Serializer>(tc: &Timecode, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(tc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentResult {
    pub trim_start: SampleTime,
    pub trim_end: SampleTime,
    /// LTC timecode at audio sample 0, to the nearest frame.
    #[serde(serialize_with = "ser_tc")]
    pub audio_start_timecode: Timecode,
    /// Earliest video start.
    #[serde(serialize_with = "ser_tc")]
    pub video_start_timecode: Timecode,
    pub ltc_rate: FrameRate,
    pub video_fps: FrameRate,
    /// Half an LTC frame period, seconds.
    pub residual_bound: f64,
    pub padding_ok: bool,
    pub subframe: bool,
    pub audio_length_samples: u64,
    /// Signed output interval on the audio axis.
    pub start_sample: i64,
    pub end_sample: i64,
    pub lead_deficit_samples: u64,
    pub tail_deficit_samples: u64,
    pub videos: Vec<VideoPlacement>,
    pub ltc: LtcSummary,
}

impl AlignmentResult {
    pub fn output_length(&self) -> u64 {
        (self.end_sample - self.start_sample) as u64
    }

    fn ms(&self, samples: u64) -> f64 {
        samples as f64 * 1000.0 / f64::from(self.trim_start.sample_rate)
    }
}

struct AudioLayout {
    sample_rate: u32,
    bit_depth: BitDepth,
    frames: u64,
    /// (path, channel count) per file.
    files: Vec<(PathBuf, usize)>,
}

impl AudioLayout {
    fn probe(manifest: &SessionManifest) -> Result<Self, AlignError> {
        let mut files = Vec::new();
        let mut first: Option<(u32, BitDepth, u64)> = None;
        for path in manifest.audio_paths() {
            let r = WavReader::open(&path).map_err(|source| AlignError::Wav {
                path: path.display().to_string(),
                source,
            })?;
            let s = r.spec();
            match first {
                None => first = Some((s.sample_rate, s.bit_depth, s.frames)),
                Some(f) if f != (s.sample_rate, s.bit_depth, s.frames) => {
                    return Err(manifest_err(format!(
                        "{} differs from the main audio file in rate, depth or length",
                        path.display()
                    )))
                }
                Some(_) => {}
            }
            files.push((path, usize::from(s.channels)));
        }
        let (sample_rate, bit_depth, frames) = first.expect("at least the main file");
        if sample_rate != manifest.audio.sample_rate {
            return Err(manifest_err(format!(
                "manifest declares {} Hz but the audio is {sample_rate} Hz",
                manifest.audio.sample_rate
            )));
        }
        let layout = AudioLayout {
            sample_rate,
            bit_depth,
            frames,
            files,
        };
        let total = layout.channels();
        if manifest.audio.ltc_channel_index >= total {
            return Err(manifest_err(format!(
                "ltc_channel_index {} out of range for {total} audio channels",
                manifest.audio.ltc_channel_index
            )));
        }
        Ok(layout)
    }

    fn channels(&self) -> usize {
        self.files.iter().map(|f| f.1).sum()
    }

    fn locate_channel(&self, mut index: usize) -> (&Path, usize) {
        for (p, n) in &self.files {
            if index < *n {
                return (p, index);
            }
            index -= n;
        }
        unreachable!("channel index validated")
    }

    fn read_all(&self) -> Result<PcmBuffer, AlignError> {
        let mut parts = Vec::new();
        for (p, _) in &self.files {
            parts.push(crate::pcm_io::read_wav(p).map_err(|source| AlignError::Wav {
                path: p.display().to_string(),
                source,
            })?);
        }
        Ok(PcmBuffer::merge_channels(&parts)?)
    }
}

fn decode_track(manifest: &SessionManifest, layout: &AudioLayout) -> Result<(Vec<DecodedFrame>, usize), AlignError> {
    let index = manifest.audio.ltc_channel_index;
    let (path, ch) = layout.locate_channel(index);
    let mut reader = WavReader::open(path).map_err(|source| AlignError::Wav {
        path: path.display().to_string(),
        source,
    })?;
    let mut dec = LtcDecoder::new(layout.sample_rate, manifest.ltc_rate, &DecodeOptions::default());
    reader
        .stream_channel(ch, 1 << 16, |block| dec.push(block))
        .map_err(|source| AlignError::Wav {
            path: path.display().to_string(),
            source,
        })?;
    let res = dec.finish().map_err(|source| AlignError::Ltc { index, source })?;
    Ok((res.frames, res.discarded))
}

/// Samples the LTC frame (or the exclusive end) `t` may be extrapolated over
/// before a missing frame counts as a dropout.
fn extrapolation_limit(ltc_rate: FrameRate, sample_rate: u32) -> i64 {
    2 * frames_to_samples(1, ltc_rate, sample_rate) + 2
}

/// Decoded frame used as the reference for `t`. Errors when `t` lands in a
/// gap between decoded frames.
fn anchor_for<'a>(
    frames: &'a [DecodedFrame],
    ltc_rate: FrameRate,
    t_frames: u64,
    t_fps: FrameRate,
    edge: &'static str,
    label: &dyn Fn() -> String,
) -> Result<&'a DecodedFrame, AlignError> {
    let j = (u128::from(t_frames) * u128::from(ltc_rate.fps()) / u128::from(t_fps.fps())) as u64;
    match frames.binary_search_by_key(&j, |f| f.timecode.total_frames()) {
        Ok(i) => Ok(&frames[i]),
        Err(0) => Ok(&frames[0]),
        Err(i) if i == frames.len() => Ok(&frames[i - 1]),
        Err(_) => Err(AlignError::Dropout { edge, timecode: label() }),
    }
}

/// Signed distance in samples from `from` to the instant `to_frames / to_fps`.
fn samples_to_instant(from: &Timecode, to_frames: u64, to_fps: FrameRate, sample_rate: u32) -> i64 {
    let fa = i128::from(from.rate().fps());
    let fb = i128::from(to_fps.fps());
    let num = (i128::from(to_frames) * fa - i128::from(from.total_frames()) * fb) * i128::from(sample_rate);
    div_round_half_away(num, fa * fb) as i64
}

pub fn align_session(manifest: &SessionManifest, options: &AlignOptions) -> Result<AlignmentResult, AlignError> {
    manifest.validate()?;
    let layout = AudioLayout::probe(manifest)?;
    let (frames, discarded) = decode_track(manifest, &layout)?;
    let mut r = align_with_frames(manifest, &frames, layout.frames, layout.sample_rate, options)?;
    r.ltc.discarded = discarded;
    Ok(r)
}

/// Alignment from an already decoded LTC track of an `audio_len`-sample
/// recording.
pub fn align_with_frames(
    manifest: &SessionManifest,
    frames: &[DecodedFrame],
    audio_len: u64,
    sample_rate: u32,
    options: &AlignOptions,
) -> Result<AlignmentResult, AlignError> {
    manifest.validate()?;
    let ltc_rate = manifest.ltc_rate;
    let fps = manifest.video_fps();
    let first = frames.first().ok_or(AlignError::Ltc {
        index: manifest.audio.ltc_channel_index,
        source: LtcError::NoLtcFound {
            transitions: 0,
            bit_rate: None,
        },
    })?;
    let last = frames.last().expect("nonempty");

    let back = div_round_half_away(
        i128::from(first.first_sample_index) * i128::from(ltc_rate.fps()),
        i128::from(sample_rate),
    ) as i64;
    let audio_start_timecode = first.timecode.add_frames(-back)?;

    let limit = extrapolation_limit(ltc_rate, sample_rate);
    let len = audio_len as i64;
    let place = |t_frames: u64, edge: &'static str| -> Result<i64, AlignError> {
        let label = || {
            Timecode::from_total_frames(t_frames, fps)
                .map(|t| t.to_string())
                .unwrap_or_else(|_| "24:00:00:00".into())
        };
        let anchor = anchor_for(frames, ltc_rate, t_frames, fps, edge, &label)?;
        let pos = anchor.first_sample_index as i64 + samples_to_instant(&anchor.timecode, t_frames, fps, sample_rate);
        let inside = (0..=len).contains(&pos);
        if inside && (pos - anchor.first_sample_index as i64).abs() > limit {
            return Err(AlignError::Dropout { edge, timecode: label() });
        }
        if options.subframe {
            Ok(pos)
        } else {
            Ok(samples_to_instant(&audio_start_timecode, t_frames, fps, sample_rate))
        }
    };

    let mut videos = Vec::with_capacity(manifest.videos.len());
    for v in &manifest.videos {
        let start = place(v.start_timecode.total_frames(), "start")?;
        place(v.end_frames(), "end")?;
        let end = start + frames_to_samples(v.duration_frames as i64, fps, sample_rate);
        videos.push(VideoPlacement {
            id: v.id.clone(),
            start_sample: start,
            end_sample: end,
        });
    }
    let start_sample = videos.iter().map(|v| v.start_sample).min().expect("validated nonempty");
    let end_sample = videos.iter().map(|v| v.end_sample).max().expect("validated nonempty");
    let video_start_timecode = manifest
        .videos
        .iter()
        .map(|v| v.start_timecode)
        .min_by_key(|t| t.total_frames())
        .expect("validated nonempty");

    let lead = (-start_sample).max(0) as u64;
    let tail = (end_sample - len).max(0) as u64;
    let padding_ok = lead == 0 && tail == 0;
    let ms = |n: u64| n as f64 * 1000.0 / f64::from(sample_rate);
    if !padding_ok && !options.allow_padding_violation {
        return Err(AlignError::PaddingViolation {
            lead_ms: ms(lead),
            tail_ms: ms(tail),
        });
    }
    let clamp = |s: i64| s.clamp(0, len) as u64;
    Ok(AlignmentResult {
        trim_start: SampleTime::new(clamp(start_sample), sample_rate)?,
        trim_end: SampleTime::new(clamp(end_sample), sample_rate)?,
        audio_start_timecode,
        video_start_timecode,
        ltc_rate,
        video_fps: fps,
        residual_bound: 1.0 / (2.0 * f64::from(ltc_rate.fps())),
        padding_ok,
        subframe: options.subframe,
        audio_length_samples: audio_len,
        start_sample,
        end_sample,
        lead_deficit_samples: lead,
        tail_deficit_samples: tail,
        videos,
        ltc: LtcSummary {
            frames: frames.len(),
            discarded: 0,
            first_timecode: first.timecode,
            first_sample_index: first.first_sample_index,
            last_timecode: last.timecode,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EmitOptions {
    pub drop_ltc: bool,
    /// Fill any padding deficit with digital silence instead of failing.
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmitSummary {
    pub channels: usize,
    pub samples: u64,
    pub zero_filled_lead: u64,
    pub zero_filled_tail: u64,
}

/// Cuts `[start_sample, end_sample)` out of `source`, zero-filling whatever
/// lies outside the recording when forced.
pub fn render_aligned(
    source: &PcmBuffer,
    result: &AlignmentResult,
    ltc_channel: usize,
    options: &EmitOptions,
) -> Result<(PcmBuffer, EmitSummary), AlignError> {
    if !result.padding_ok && !options.force {
        return Err(AlignError::PaddingViolation {
            lead_ms: result.ms(result.lead_deficit_samples),
            tail_ms: result.ms(result.tail_deficit_samples),
        });
    }
    let source = if options.drop_ltc {
        source.without_channel(ltc_channel)?
    } else {
        source.clone()
    };
    let sr = source.sample_rate();
    let body = source.trim(result.trim_start, result.trim_end)?;
    let out_len = result.output_length() as usize;
    let lead = (result.trim_start.sample_index as i64 - result.start_sample).clamp(0, out_len as i64) as usize;
    let mid = body.len();
    let tail = out_len - lead - mid;
    let channels = body
        .into_channels()
        .into_iter()
        .map(|c| {
            let mut v = Vec::with_capacity(out_len);
            v.resize(lead, 0.0);
            v.extend_from_slice(&c);
            v.resize(out_len, 0.0);
            v
        })
        .collect();
    let out = PcmBuffer::new(sr, source.bit_depth(), channels)?;
    let summary = EmitSummary {
        channels: out.channel_count(),
        samples: out_len as u64,
        zero_filled_lead: lead as u64,
        zero_filled_tail: tail as u64,
    };
    Ok((out, summary))
}

pub fn emit_aligned_audio(
    manifest: &SessionManifest,
    result: &AlignmentResult,
    out_path: impl AsRef<Path>,
    options: &EmitOptions,
) -> Result<EmitSummary, AlignError> {
    if !result.padding_ok && !options.force {
        return Err(AlignError::PaddingViolation {
            lead_ms: result.ms(result.lead_deficit_samples),
            tail_ms: result.ms(result.tail_deficit_samples),
        });
    }
    let layout = AudioLayout::probe(manifest)?;
    let source = layout.read_all()?;
    let (out, summary) = render_aligned(&source, result, manifest.audio.ltc_channel_index, options)?;
    let p = out_path.as_ref();
    write_wav(p, &out, layout.bit_depth).map_err(|source| AlignError::Wav {
        path: p.display().to_string(),
        source,
    })?;
    Ok(summary)
}

/// Machine-readable alignment report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub schema_version: u32,
    pub sample_rate: u32,
    pub ltc_rate: FrameRate,
    pub video_fps: FrameRate,
    pub subframe: bool,
    pub trim_start_samples: u64,
    pub trim_end_samples: u64,
    pub trim_start_ms: f64,
    pub trim_end_ms: f64,
    /// Trim start as an elapsed timecode at the LTC rate, nearest frame.
    pub trim_start_timecode: String,
    pub audio_start_timecode: String,
    pub video_start_timecode: String,
    pub output_length_samples: u64,
    /// Always `"exact_video_length"`: output ends at the latest video end.
    pub length_policy: &'static str,
    pub residual_bound_ms: f64,
    pub padding_ok: bool,
    pub lead_deficit_ms: f64,
    pub tail_deficit_ms: f64,
    pub videos: Vec<VideoPlacement>,
    pub ltc: LtcSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emitted: Option<EmitSummary>,
}

impl AlignmentReport {
    pub fn new(result: &AlignmentResult, emitted: Option<EmitSummary>) -> Self {
        let sr = result.trim_start.sample_rate;
        let ts = result.trim_start.sample_index;
        let elapsed = div_round_half_away(i128::from(ts) * i128::from(result.ltc_rate.fps()), i128::from(sr));
        let trim_start_timecode = Timecode::from_total_frames(elapsed as u64, result.ltc_rate)
            .map(|t| t.to_string())
            .unwrap_or_else(|_| "--:--:--:--".into());
        AlignmentReport {
            schema_version: SCHEMA_VERSION,
            sample_rate: sr,
            ltc_rate: result.ltc_rate,
            video_fps: result.video_fps,
            subframe: result.subframe,
            trim_start_samples: ts,
            trim_end_samples: result.trim_end.sample_index,
            trim_start_ms: result.ms(ts),
            trim_end_ms: result.ms(result.trim_end.sample_index),
            trim_start_timecode,
            audio_start_timecode: result.audio_start_timecode.to_string(),
            video_start_timecode: result.video_start_timecode.to_string(),
            output_length_samples: result.output_length(),
            length_policy: "exact_video_length",
            residual_bound_ms: result.residual_bound * 1000.0,
            padding_ok: result.padding_ok,
            lead_deficit_ms: result.ms(result.lead_deficit_samples),
            tail_deficit_ms: result.ms(result.tail_deficit_samples),
            videos: result.videos.clone(),
            ltc: result.ltc.clone(),
            emitted,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

impl fmt::Display for AlignmentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "LTC: {} frames at {} fps, {} .. {}",
            self.ltc.frames, self.ltc_rate, self.ltc.first_timecode, self.ltc.last_timecode
        )?;
        writeln!(f, "audio start timecode: {}", self.audio_start_timecode)?;
        writeln!(f, "video start timecode: {} @ {} fps", self.video_start_timecode, self.video_fps)?;
        writeln!(
            f,
            "trim start: {} samples ({:.3} ms, {})",
            self.trim_start_samples, self.trim_start_ms, self.trim_start_timecode
        )?;
        writeln!(f, "trim end:   {} samples ({:.3} ms)", self.trim_end_samples, self.trim_end_ms)?;
        writeln!(
            f,
            "output: {} samples, exact video length, {} refinement",
            self.output_length_samples,
            if self.subframe { "sub-frame" } else { "frame-level" }
        )?;
        writeln!(f, "residual bound: {:.3} ms", self.residual_bound_ms)?;
        if self.padding_ok {
            write!(f, "padding: ok")?;
        } else {
            write!(
                f,
                "padding: VIOLATED ({:.3} ms short at start, {:.3} ms short at end)",
                self.lead_deficit_ms, self.tail_deficit_ms
            )?;
        }
        if let Some(e) = &self.emitted {
            write!(
                f,
                "\nwrote {} channels x {} samples ({} + {} zero-filled)",
                e.channels, e.samples, e.zero_filled_lead, e.zero_filled_tail
            )?;
        }
        Ok(())
    }
}

/// Parameters of a generated test session.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSessionSpec {
    pub sample_rate: u32,
    pub ltc_rate: FrameRate,
    pub video_fps: FrameRate,
    pub video_start: Timecode,
    pub video_frames: u64,
    /// Audio recorded before the video start, in samples. Negative means the
    /// recording starts after the video.
    pub lead_samples: i64,
    /// Audio recorded after the video end, in samples.
    pub tail_samples: i64,
    pub content_channels: usize,
    pub bit_depth: BitDepth,
    pub ltc_amplitude: f32,
    pub seed: u64,
}

impl SyntheticSessionSpec {
    pub fn new(video_start: Timecode, video_frames: u64, lead_seconds: f64, tail_seconds: f64) -> Self {
        let sr = 48_000;
        SyntheticSessionSpec {
            sample_rate: sr,
            ltc_rate: FrameRate::FPS_30,
            video_fps: video_start.rate(),
            video_start,
            video_frames,
            lead_samples: (lead_seconds * f64::from(sr)).round() as i64,
            tail_samples: (tail_seconds * f64::from(sr)).round() as i64,
            content_channels: 2,
            bit_depth: BitDepth::TwentyFour,
            ltc_amplitude: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruth {
    /// Audio sample where the video starts (equals `lead_samples`).
    pub video_start_sample: i64,
    pub video_end_sample: i64,
    /// LTC sample grid phase: samples of the first LTC frame cut off before
    /// audio sample 0.
    pub ltc_phase_samples: u64,
    pub audio_length_samples: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub audio: PcmBuffer,
    pub manifest: SessionManifest,
    pub truth: GroundTruth,
}

/// Builds a recording whose last channel is LTC and whose other channels
/// carry seeded tones and clicks, together with a manifest describing one
/// video and the true placement of that video.
pub fn synthesize_session(spec: &SyntheticSessionSpec) -> Result<SyntheticSession, AlignError> {
    if spec.video_start.rate() != spec.video_fps {
        return Err(manifest_err("video_start must be at video_fps"));
    }
    let sr = spec.sample_rate;
    let video_len = frames_to_samples(spec.video_frames as i64, spec.video_fps, sr);
    let total = spec.lead_samples + video_len + spec.tail_samples;
    if total <= 0 {
        return Err(manifest_err("session would contain no audio"));
    }
    let (vf, lf, sr_i) = (
        i128::from(spec.video_fps.fps()),
        i128::from(spec.ltc_rate.fps()),
        i128::from(sr),
    );
    // audio sample 0 sits at LTC time V/vf - lead/sr; in LTC frames that is
    // (V*lf*sr - lead*vf*lf) / (vf*sr)
    let v = i128::from(spec.video_start.total_frames());
    let num = v * lf * sr_i - i128::from(spec.lead_samples) * vf * lf;
    let den = vf * sr_i;
    if num < 0 {
        return Err(manifest_err("audio would start before 00:00:00:00"));
    }
    let j0 = num / den;
    let phase = div_round_half_away(num - j0 * den, vf * lf) as u64;

    let start = Timecode::from_total_frames(j0 as u64, spec.ltc_rate)?;
    let cfg = LtcEncodeConfig::new(spec.ltc_rate, sr, spec.ltc_amplitude, start)
        .map_err(|e| manifest_err(e.to_string()))?
        .with_bit_depth(spec.bit_depth);
    let spf = frames_to_samples(1, spec.ltc_rate, sr) as u64;
    let n_frames = ((phase + total as u64) / spf + 2) as usize;
    let ltc = encode_ltc(&cfg, n_frames).map_err(|e| manifest_err(e.to_string()))?;
    let ltc = ltc.trim(SampleTime::new(phase, sr)?, SampleTime::new(phase + total as u64, sr)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut channels: Vec<Vec<f32>> = (0..spec.content_channels)
        .map(|_| {
            let freq = rng.random_range(80.0..2000.0f64);
            let amp = rng.random_range(0.01..0.2f64);
            let ph = rng.random_range(0.0..std::f64::consts::TAU);
            let w = std::f64::consts::TAU * freq / f64::from(sr);
            let mut c: Vec<f32> = (0..total).map(|n| (amp * (w * n as f64 + ph).sin()) as f32).collect();
            for _ in 0..4 {
                let at = rng.random_range(0..total as usize);
                for (k, s) in c.iter_mut().skip(at).take(64).enumerate() {
                    *s += (0.5 * (-(k as f64) / 8.0).exp()) as f32;
                }
            }
            c
        })
        .collect();
    channels.push(ltc.into_channels().remove(0));
    let mut audio = PcmBuffer::new(sr, spec.bit_depth, channels)?;
    audio.quantize();

    let manifest = SessionManifest {
        audio: AudioSource {
            path: PathBuf::from("session.wav"),
            extra_paths: Vec::new(),
            ltc_channel_index: spec.content_channels,
            sample_rate: sr,
        },
        videos: vec![VideoEntry {
            id: "cam01".into(),
            start_timecode: spec.video_start,
            duration_frames: spec.video_frames,
            fps: spec.video_fps,
        }],
        ltc_rate: spec.ltc_rate,
        base_dir: None,
    };
    Ok(SyntheticSession {
        audio,
        manifest,
        truth: GroundTruth {
            video_start_sample: spec.lead_samples,
            video_end_sample: spec.lead_samples + video_len,
            ltc_phase_samples: phase,
            audio_length_samples: total as u64,
        },
    })
}

impl SyntheticSession {
    /// Writes `<stem>.wav` and `<stem>.json` into `dir` and returns the
    /// manifest path. The manifest refers to the WAV by file name.
    pub fn write(&mut self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf, AlignError> {
        let dir = dir.as_ref();
        let wav = dir.join(format!("{stem}.wav"));
        write_wav(&wav, &self.audio, self.audio.bit_depth()).map_err(|source| AlignError::Wav {
            path: wav.display().to_string(),
            source,
        })?;
        self.manifest.audio.path = PathBuf::from(format!("{stem}.wav"));
        self.manifest.base_dir = Some(dir.to_path_buf());
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.manifest.to_json()).map_err(|source| AlignError::ManifestIo {
            path: json.display().to_string(),
            source,
        })?;
        Ok(json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tc(s: &str, fps: u32) -> Timecode {
        Timecode::parse(s, FrameRate::new(fps).unwrap()).unwrap()
    }

    fn manifest(video: Timecode, frames: u64) -> SessionManifest {
        SessionManifest {
            audio: AudioSource {
                path: "a.wav".into(),
                extra_paths: vec![],
                ltc_channel_index: 0,
                sample_rate: 48_000,
            },
            videos: vec![VideoEntry {
                id: "v".into(),
                start_timecode: video,
                duration_frames: frames,
                fps: video.rate(),
            }],
            ltc_rate: FrameRate::FPS_30,
            base_dir: None,
        }
    }

    /// Clean decoded track: frame k at sample k*1600.
    fn track(start: Timecode, n: u64) -> Vec<DecodedFrame> {
        (0..n)
            .map(|k| DecodedFrame {
                timecode: start.add_frames(k as i64).unwrap(),
                first_sample_index: k * 1600,
                user_bits: 0,
            })
            .collect()
    }

    #[test]
    fn ten_and_a_half_seconds() {
        let frames = track(tc("14:03:00:00", 30), 30 * 60);
        let m = manifest(tc("14:03:10:30", 60), 600);
        for subframe in [true, false] {
            let opts = AlignOptions {
                subframe,
                ..Default::default()
            };
            let r = align_with_frames(&m, &frames, 30 * 60 * 1600, 48_000, &opts).unwrap();
            assert_eq!(r.trim_start.sample_index, 504_000);
            assert_eq!(r.trim_end.sample_index, 504_000 + 480_000);
            assert_eq!(r.audio_start_timecode, tc("14:03:00:00", 30));
            assert_eq!(r.residual_bound, 1.0 / 60.0);
            assert!(r.padding_ok);
        }
    }

    #[test]
    fn identity_when_starts_match() {
        let frames = track(tc("01:00:00:00", 30), 300);
        let m = manifest(tc("01:00:00:00", 60), 60);
        let r = align_with_frames(&m, &frames, 300 * 1600, 48_000, &AlignOptions::default()).unwrap();
        assert_eq!(r.trim_start.sample_index, 0);
    }

    #[test]
    fn subframe_uses_frame_position() {
        // LTC frames sit 400 samples late relative to a whole-frame grid
        let mut frames = track(tc("01:00:00:01", 30), 300);
        for f in &mut frames {
            f.first_sample_index += 400;
        }
        let m = manifest(tc("01:00:01:00", 30), 30);
        let sub = align_with_frames(&m, &frames, 400 * 1600, 48_000, &AlignOptions::default()).unwrap();
        assert_eq!(sub.trim_start.sample_index, 29 * 1600 + 400);
        let frame_level = AlignOptions {
            subframe: false,
            ..Default::default()
        };
        let coarse = align_with_frames(&m, &frames, 400 * 1600, 48_000, &frame_level).unwrap();
        // sample 0 is a quarter frame before 01:00:00:01, which it snaps to
        assert_eq!(coarse.audio_start_timecode, tc("01:00:00:01", 30));
        assert_eq!(coarse.trim_start.sample_index, 29 * 1600);
    }

    #[test]
    fn padding_violation_reports_ms() {
        let frames = track(tc("01:00:00:00", 30), 300);
        let m = manifest(tc("00:59:59:54", 60), 120);
        match align_with_frames(&m, &frames, 300 * 1600, 48_000, &AlignOptions::default()) {
            Err(AlignError::PaddingViolation { lead_ms, tail_ms }) => {
                assert!((lead_ms - 100.0).abs() < 1e-9);
                assert_eq!(tail_ms, 0.0);
            }
            other => panic!("{other:?}"),
        }
        let allow = AlignOptions {
            allow_padding_violation: true,
            ..Default::default()
        };
        let r = align_with_frames(&m, &frames, 300 * 1600, 48_000, &allow).unwrap();
        assert!(!r.padding_ok);
        assert_eq!(r.lead_deficit_samples, 4800);
        assert_eq!(r.start_sample, -4800);
        assert_eq!(r.trim_start.sample_index, 0);
        assert_eq!(r.output_length(), 96_000);
    }

    #[test]
    fn dropout_at_trim_point() {
        let mut frames = track(tc("01:00:00:00", 30), 300);
        frames.retain(|f| !(100..110).contains(&(f.timecode.total_frames() - 108_000)));
        let m = manifest(tc("01:00:03:30", 60), 60);
        assert!(matches!(
            align_with_frames(&m, &frames, 300 * 1600, 48_000, &AlignOptions::default()),
            Err(AlignError::Dropout { edge: "start", .. })
        ));
        // the same gap away from either trim point is fine
        let m = manifest(tc("01:00:01:00", 60), 60 * 6);
        assert!(align_with_frames(&m, &frames, 300 * 1600, 48_000, &AlignOptions::default()).is_ok());
    }

    #[test]
    fn manifest_json_roundtrip_and_checks() {
        let m = manifest(tc("14:03:10:30", 60), 600);
        let back = SessionManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let mut mixed = m.clone();
        mixed.videos.push(VideoEntry {
            id: "w".into(),
            start_timecode: tc("14:03:10:00", 30),
            duration_frames: 10,
            fps: FrameRate::FPS_30,
        });
        assert!(matches!(mixed.validate(), Err(AlignError::Manifest(_))));
        let bumped = m.to_json().replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(SessionManifest::from_json(&bumped).is_err());
        let bad_tc = m.to_json().replace("14:03:10:30", "14:03:10:60");
        assert!(SessionManifest::from_json(&bad_tc).is_err());
    }

    #[test]
    fn render_zero_fills_when_forced() {
        let src = PcmBuffer::new(48_000, BitDepth::Sixteen, vec![vec![0.5; 100], vec![0.25; 100]]).unwrap();
        let mut frames = track(tc("01:00:00:00", 30), 1);
        frames[0].first_sample_index = 0;
        let mut m = manifest(tc("01:00:00:00", 30), 1);
        m.audio.ltc_channel_index = 1;
        let allow = AlignOptions {
            allow_padding_violation: true,
            ..Default::default()
        };
        let r = align_with_frames(&m, &frames, 100, 48_000, &allow).unwrap();
        assert_eq!(r.tail_deficit_samples, 1500);
        assert!(render_aligned(&src, &r, 1, &EmitOptions::default()).is_err());
        let forced = EmitOptions {
            drop_ltc: true,
            force: true,
        };
        let (out, sum) = render_aligned(&src, &r, 1, &forced).unwrap();
        assert_eq!(out.channel_count(), 1);
        assert_eq!(out.len(), 1600);
        assert_eq!(sum.zero_filled_tail, 1500);
        assert!(out.channel(0).unwrap()[..100].iter().all(|&s| s == 0.5));
        assert!(out.channel(0).unwrap()[100..].iter().all(|&s| s == 0.0));
    }
}
