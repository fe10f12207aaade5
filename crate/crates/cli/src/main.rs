use std::fmt::Write as _;
use std::io::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use avsync_core::align::{
    align_session, emit_aligned_audio, synthesize_session, AlignOptions, AlignmentReport, EmitOptions, SessionManifest,
    SyntheticSessionSpec,
};
use avsync_core::clocksim::{simulate_sampling, PtpScenario, WordClockConfig, WordClockMode};
use avsync_core::ltc::{decode_ltc_with, encode_ltc, DecodeOptions, LtcEncodeConfig};
use avsync_core::pcm_io::{read_wav_channel, write_wav};
use avsync_core::verify::{generate_test_stimulus, measure_av_offset_with, AvEventAnnotation, OnsetConfig, StimulusSpec};
use avsync_core::{BitDepth, FrameRate, Timecode};

mod units;

use units::Quantity;

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExitStatus {
    Success = 0,
    VerificationFailed = 1,
    InputError = 2,
    InternalError = 3,
}

#[derive(Debug)]
struct Failure {
    status: ExitStatus,
    message: String,
}

impl Failure {
    fn input(message: impl std::fmt::Display) -> Self {
        Failure {
            status: ExitStatus::InputError,
            message: message.to_string(),
        }
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Failure {
            status: ExitStatus::InternalError,
            message: message.to_string(),
        }
    }
}

/// What a command prints: a human summary and the JSON document.
struct Output {
    text: String,
    json: serde_json::Value,
    status: ExitStatus,
}

impl Output {
    fn ok(text: impl Into<String>, json: impl Serialize) -> Result<Self, Failure> {
        Ok(Output {
            text: text.into(),
            json: serde_json::to_value(json).map_err(Failure::internal)?,
            status: ExitStatus::Success,
        })
    }
}

#[derive(Parser)]
#[command(name = "avsync", version, about = "LTC timecode, clock simulation and audio-video alignment tools")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a mono LTC signal to a WAV file.
    LtcEncode(LtcEncodeArgs),
    /// Decode LTC from one channel of a WAV file.
    LtcDecode(LtcDecodeArgs),
    /// Trim a multichannel recording to the videos listed in a session manifest.
    Align(AlignArgs),
    /// Measure the offset between an audio onset and an annotated video frame.
    Verify(VerifyArgs),
    /// Run a PTP servo scenario and write the residual trace.
    PtpSim(PtpSimArgs),
    /// Compare sample clocks of devices on internal or shared word clock.
    Wordclock(WordclockArgs),
    /// Generate a test session with an LTC track and manifest.
    SynthSession(SynthSessionArgs),
    /// Generate an impact stimulus with a known audio-video offset.
    Stimulus(StimulusArgs),
}

fn parse_rate(s: &str) -> Result<FrameRate, String> {
    let n: u32 = s.parse().map_err(|_| format!("{s:?} is not a frame rate"))?;
    FrameRate::new(n).map_err(|e| e.to_string())
}

fn parse_depth(s: &str) -> Result<BitDepth, String> {
    s.parse()
        .ok()
        .and_then(BitDepth::from_bits)
        .ok_or_else(|| format!("unsupported bit depth {s:?} (16 or 24)"))
}

fn parse_hex(s: &str) -> Result<u32, String> {
    u32::from_str_radix(s.trim_start_matches("0x"), 16).map_err(|e| format!("{s:?}: {e}"))
}

#[derive(Args)]
struct LtcEncodeArgs {
    /// Start timecode, HH:MM:SS:FF.
    #[arg(long)]
    start: String,
    #[arg(long, value_parser = parse_rate)]
    fps: FrameRate,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 48_000)]
    sr: u32,
    /// Number of LTC frames.
    #[arg(long, conflicts_with = "duration", required_unless_present = "duration")]
    frames: Option<u64>,
    /// Length with unit (e.g. 10s, 300f, 00:00:10:00); partial frames round up.
    #[arg(long, allow_hyphen_values = true)]
    duration: Option<Quantity>,
    /// Peak level as a fraction of full scale.
    #[arg(long, default_value_t = 0.5)]
    amplitude: f32,
    #[arg(long, default_value = "16", value_parser = parse_depth)]
    bit_depth: BitDepth,
    /// 32 user bits, hexadecimal.
    #[arg(long, default_value = "0", value_parser = parse_hex)]
    user_bits: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct LtcDecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Channel carrying LTC, 0-based.
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Expected frame rate; detected from the bit rate when omitted.
    #[arg(long, value_parser = parse_rate)]
    fps: Option<FrameRate>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Include every decoded frame in the output.
    #[arg(long)]
    list_frames: bool,
    /// Accept frames whose parity bit does not match.
    #[arg(long)]
    ignore_parity: bool,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Aligned WAV to write; without it only the report is produced.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the JSON report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Zero-fill when the recording does not cover the video.
    #[arg(long)]
    force_pad: bool,
    /// Align to the nearest LTC frame only.
    #[arg(long)]
    no_subframe: bool,
    /// Leave the LTC channel out of the aligned WAV.
    #[arg(long)]
    drop_ltc: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Aligned audio whose first sample is the video's first frame.
    #[arg(long)]
    audio: PathBuf,
    /// JSON annotation with visual_event_frame and fps.
    #[arg(long)]
    annotation: PathBuf,
    /// Channel to search for the onset, 0-based.
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Pass when |offset| is strictly below this (e.g. 1f, 10ms, 480smp).
    #[arg(long, default_value = "1f")]
    threshold: Quantity,
    /// Start of the onset search window.
    #[arg(long)]
    search_from: Option<Quantity>,
    /// End of the onset search window.
    #[arg(long)]
    search_to: Option<Quantity>,
    /// Also write the JSON report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PtpSimArgs {
    /// TOML scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// CSV residual trace to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockMode {
    Internal,
    External,
}

#[derive(Args)]
struct WordclockArgs {
    #[arg(long, value_enum)]
    mode: ClockMode,
    /// Nominal sample rate in Hz.
    #[arg(long, default_value_t = 48_000)]
    sr: u32,
    /// Free-running drift of each device, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    ppm: Vec<f64>,
    /// Drift of the shared source in external mode.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    source_ppm: f64,
    /// Recording length (e.g. 60s, 2880000smp).
    #[arg(long)]
    duration: Quantity,
    /// Number of leading sample instants to list per device.
    #[arg(long, default_value_t = 0)]
    first: usize,
}

#[derive(Args)]
struct SynthSessionArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "session")]
    stem: String,
    /// Video start timecode at the video rate.
    #[arg(long)]
    start: String,
    #[arg(long, value_parser = parse_rate, default_value = "60")]
    fps: FrameRate,
    #[arg(long, value_parser = parse_rate, default_value = "30")]
    ltc_fps: FrameRate,
    #[arg(long, default_value_t = 48_000)]
    sr: u32,
    /// Video length in frames.
    #[arg(long)]
    frames: u64,
    /// Audio before the video starts; negative cuts into the video.
    #[arg(long, default_value = "1s", allow_hyphen_values = true)]
    lead: Quantity,
    /// Audio after the video ends; negative cuts into the video.
    #[arg(long, default_value = "1s", allow_hyphen_values = true)]
    tail: Quantity,
    /// Content channels in addition to the LTC channel.
    #[arg(long, default_value_t = 2)]
    channels: usize,
    #[arg(long, default_value = "24", value_parser = parse_depth)]
    bit_depth: BitDepth,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StimulusArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "stimulus")]
    stem: String,
    #[arg(long, value_parser = parse_rate, default_value = "60")]
    fps: FrameRate,
    #[arg(long, value_parser = parse_rate, default_value = "30")]
    ltc_fps: FrameRate,
    #[arg(long, default_value_t = 48_000)]
    sr: u32,
    /// Video frame of the visual event; defaults to one second in.
    #[arg(long)]
    event_frame: Option<u64>,
    /// Audio displacement from the visual event; negative means audio leads.
    #[arg(long, default_value = "0s", allow_hyphen_values = true)]
    offset: Quantity,
    /// Video length in frames; defaults to three seconds.
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long, default_value = "1.5s")]
    lead: Quantity,
    #[arg(long, default_value = "1s")]
    tail: Quantity,
    /// Background noise standard deviation on the click channel.
    #[arg(long, default_value_t = 1e-3)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn ltc_encode(a: &LtcEncodeArgs) -> Result<Output, Failure> {
    let start = Timecode::parse(&a.start, a.fps).map_err(Failure::input)?;
    let frames = match (&a.frames, &a.duration) {
        (Some(n), _) => *n,
        (None, Some(q)) => {
            let n = q.to_frames_ceil(a.sr, a.fps).map_err(Failure::input)?;
            u64::try_from(n).map_err(|_| Failure::input("duration must be positive"))?
        }
        (None, None) => unreachable!("clap requires one of --frames, --duration"),
    };
    let cfg = LtcEncodeConfig::new(a.fps, a.sr, a.amplitude, start)
        .map_err(Failure::input)?
        .with_user_bits(a.user_bits)
        .with_bit_depth(a.bit_depth);
    let buf = encode_ltc(&cfg, frames as usize).map_err(Failure::input)?;
    write_wav(&a.out, &buf, a.bit_depth).map_err(|e| Failure::input(format!("{}: {e}", a.out.display())))?;
    let last = start.add_frames(frames as i64 - 1).map_err(Failure::input)?;
    let text = format!(
        "wrote {} LTC frames at {} fps ({} .. {}), {} samples at {} Hz to {}",
        frames,
        a.fps,
        start,
        last,
        buf.len(),
        a.sr,
        a.out.display()
    );
    Output::ok(
        text,
        json!({
            "schema_version": SCHEMA_VERSION,
            "fps": a.fps,
            "sample_rate": a.sr,
            "frames": frames,
            "samples": buf.len(),
            "start_timecode": start.to_string(),
            "last_timecode": last.to_string(),
            "bit_depth": a.bit_depth.bits(),
        }),
    )
}

fn ltc_decode(a: &LtcDecodeArgs) -> Result<Output, Failure> {
    let signal = read_wav_channel(&a.input, a.channel).map_err(|e| Failure::input(format!("{}: {e}", a.input.display())))?;
    let opts = DecodeOptions {
        require_parity: !a.ignore_parity,
        ..DecodeOptions::default()
    };
    let r = decode_ltc_with(&signal, a.fps, &opts).map_err(Failure::input)?;
    let first = r.frames.first().expect("decoder returns at least one frame");
    let last = r.frames.last().expect("decoder returns at least one frame");
    let mut text = format!(
        "{} frames at {} fps ({} Hz), {} discarded\nfirst: {} @ sample {}\nlast:  {} @ sample {}\n{}",
        r.frames.len(),
        r.rate,
        r.sample_rate,
        r.discarded,
        first.timecode,
        first.first_sample_index,
        last.timecode,
        last.first_sample_index,
        r.diagnostics
    );
    if a.list_frames {
        for f in &r.frames {
            let _ = write!(text, "\n{} {} {:08x}", f.first_sample_index, f.timecode, f.user_bits);
        }
    }
    let mut doc = json!({
        "schema_version": SCHEMA_VERSION,
        "fps": r.rate,
        "sample_rate": r.sample_rate,
        "frame_count": r.frames.len(),
        "discarded": r.discarded,
        "first_timecode": first.timecode.to_string(),
        "first_sample_index": first.first_sample_index,
        "last_timecode": last.timecode.to_string(),
        "last_sample_index": last.first_sample_index,
        "diagnostics": r.diagnostics,
    });
    if a.list_frames {
        doc["frames"] = serde_json::to_value(&r.frames).map_err(Failure::internal)?;
    }
    Output::ok(text, doc)
}

fn align(a: &AlignArgs) -> Result<Output, Failure> {
    let manifest = SessionManifest::load(&a.manifest).map_err(Failure::input)?;
    let opts = AlignOptions {
        subframe: !a.no_subframe,
        allow_padding_violation: a.force_pad,
    };
    let result = align_session(&manifest, &opts).map_err(Failure::input)?;
    let emitted = match &a.out {
        Some(out) => {
            let e = EmitOptions {
                drop_ltc: a.drop_ltc,
                force: a.force_pad,
            };
            Some(emit_aligned_audio(&manifest, &result, out, &e).map_err(Failure::input)?)
        }
        None => None,
    };
    let report = AlignmentReport::new(&result, emitted);
    if let Some(p) = &a.report {
        write_file(p, &report.to_json())?;
    }
    Output::ok(report.to_string(), &report)
}

fn verify(a: &VerifyArgs) -> Result<Output, Failure> {
    let annotation = AvEventAnnotation::load(&a.annotation).map_err(Failure::input)?;
    let audio = read_wav_channel(&a.audio, a.channel).map_err(|e| Failure::input(format!("{}: {e}", a.audio.display())))?;
    let sr = audio.sample_rate();
    let fps = Some(annotation.fps);
    let bound = |q: &Option<Quantity>, default: u64| -> Result<u64, Failure> {
        match q {
            None => Ok(default),
            Some(q) => {
                let n = q.to_samples(sr, fps).map_err(Failure::input)?;
                u64::try_from(n).map_err(|_| Failure::input(format!("{q}: search bound must not be negative")))
            }
        }
    };
    let len = audio.len() as u64;
    let window = match (&a.search_from, &a.search_to) {
        (None, None) => None,
        (from, to) => Some(bound(from, 0)?..bound(to, len)?),
    };
    let threshold = a.threshold.to_threshold(annotation.fps).map_err(Failure::input)?;
    let report = measure_av_offset_with(&audio, &annotation, threshold, window, &OnsetConfig::default())
        .map_err(Failure::input)?;
    if let Some(p) = &a.report {
        write_file(p, &report.to_json())?;
    }
    let mut out = Output::ok(report.to_string(), &report)?;
    if !report.pass {
        out.status = ExitStatus::VerificationFailed;
    }
    Ok(out)
}

fn ptp_sim(a: &PtpSimArgs) -> Result<Output, Failure> {
    let mut scenario = PtpScenario::load(&a.scenario).map_err(Failure::input)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let (outcome, summary) = scenario.run().map_err(Failure::input)?;
    if let Some(p) = &a.out {
        write_file(p, &outcome.trace.to_csv())?;
    }
    let text = format!(
        "{} slaves, {} rounds (steady state: last {})\nmax |residual|: {:.3} ns\nrms residual:   {:.3} ns\nmax spread:     {:.3} ns\nafter round 1:  {:.3} ns",
        summary.slaves,
        summary.rounds,
        summary.steady_state_rounds,
        summary.max_abs_residual * 1e9,
        summary.rms_residual * 1e9,
        summary.max_spread * 1e9,
        summary.first_round_max_abs_residual * 1e9
    );
    let mut doc = serde_json::to_value(&summary).map_err(Failure::internal)?;
    doc["schema_version"] = json!(SCHEMA_VERSION);
    doc["seed"] = json!(scenario.seed);
    Output::ok(text, doc)
}

fn wordclock(a: &WordclockArgs) -> Result<Output, Failure> {
    let duration = a.duration.to_seconds(a.sr, None).map_err(Failure::input)?;
    let cfg = WordClockConfig {
        mode: match a.mode {
            ClockMode::Internal => WordClockMode::Internal,
            ClockMode::External => WordClockMode::External {
                source_ppm: a.source_ppm,
            },
        },
        nominal_rate: a.sr,
        drift_ppm: a.ppm.clone(),
    };
    let r = simulate_sampling(&cfg, duration, a.first).map_err(Failure::input)?;
    let mut text = format!(
        "{} devices over {duration} s at {} Hz: max pairwise drift {:.3} us ({:.2} samples)",
        r.devices.len(),
        a.sr,
        r.max_pairwise_drift * 1e6,
        r.max_pairwise_drift * f64::from(a.sr)
    );
    for d in &r.devices {
        let _ = write!(
            text,
            "\ndevice {}: {:+} ppm, ends at {:.9} s",
            d.device, d.effective_ppm, d.terminal_instant
        );
    }
    let mut doc = serde_json::to_value(&r).map_err(Failure::internal)?;
    doc["schema_version"] = json!(SCHEMA_VERSION);
    doc["config"] = serde_json::to_value(&cfg).map_err(Failure::internal)?;
    doc["duration_seconds"] = json!(duration);
    Output::ok(text, doc)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))
}

fn synth_session(a: &SynthSessionArgs) -> Result<Output, Failure> {
    let start = Timecode::parse(&a.start, a.fps).map_err(Failure::input)?;
    let fps = Some(a.fps);
    let mut spec = SyntheticSessionSpec::new(start, a.frames, 0.0, 0.0);
    spec.sample_rate = a.sr;
    spec.ltc_rate = a.ltc_fps;
    spec.lead_samples = a.lead.to_samples(a.sr, fps).map_err(Failure::input)?;
    spec.tail_samples = a.tail.to_samples(a.sr, fps).map_err(Failure::input)?;
    spec.content_channels = a.channels;
    spec.bit_depth = a.bit_depth;
    spec.seed = a.seed;
    let mut session = synthesize_session(&spec).map_err(Failure::input)?;
    create_dir(&a.out_dir)?;
    let manifest = session.write(&a.out_dir, &a.stem).map_err(Failure::input)?;
    let t = session.truth;
    let text = format!(
        "wrote {}.wav ({} channels, LTC on channel {}) and {}\nvideo starts at sample {} and ends at sample {} of {}",
        a.stem,
        session.audio.channel_count(),
        session.manifest.audio.ltc_channel_index,
        manifest.display(),
        t.video_start_sample,
        t.video_end_sample,
        t.audio_length_samples
    );
    Output::ok(
        text,
        json!({
            "schema_version": SCHEMA_VERSION,
            "audio": format!("{}.wav", a.stem),
            "manifest": format!("{}.json", a.stem),
            "channels": session.audio.channel_count(),
            "ltc_channel_index": session.manifest.audio.ltc_channel_index,
            "truth": t,
        }),
    )
}

fn stimulus(a: &StimulusArgs) -> Result<Output, Failure> {
    let fps = Some(a.fps);
    let secs = |q: &Quantity| q.to_seconds(a.sr, fps).map_err(Failure::input);
    let mut spec = StimulusSpec::new(a.fps, a.event_frame.unwrap_or(u64::from(a.fps.fps())), secs(&a.offset)?);
    spec.ltc_rate = a.ltc_fps;
    spec.sample_rate = a.sr;
    if let Some(n) = a.frames {
        spec.video_frames = n;
    }
    spec.lead = secs(&a.lead)?;
    spec.tail = secs(&a.tail)?;
    spec.noise_std = a.noise;
    spec.seed = a.seed;
    let mut s = generate_test_stimulus(&spec).map_err(Failure::input)?;
    create_dir(&a.out_dir)?;
    s.session.write(&a.out_dir, &a.stem).map_err(Failure::input)?;
    let ann = format!("{}.annotation.json", a.stem);
    write_file(&a.out_dir.join(&ann), &s.annotation.to_json())?;
    let t = s.truth;
    let text = format!(
        "wrote {0}.wav (click on channel 0, LTC on channel 1), {0}.json and {ann}\nevent frame {1}, click at sample {2}, injected offset {3} samples ({4:.3} ms)",
        a.stem,
        s.annotation.visual_event_frame,
        t.click_sample,
        t.injected_offset_samples,
        t.injected_offset_samples as f64 * 1000.0 / f64::from(a.sr)
    );
    Output::ok(
        text,
        json!({
            "schema_version": SCHEMA_VERSION,
            "audio": format!("{}.wav", a.stem),
            "manifest": format!("{}.json", a.stem),
            "annotation": ann,
            "truth": t,
        }),
    )
}

fn run(cli: &Cli) -> Result<Output, Failure> {
    match &cli.command {
        Command::LtcEncode(a) => ltc_encode(a),
        Command::LtcDecode(a) => ltc_decode(a),
        Command::Align(a) => align(a),
        Command::Verify(a) => verify(a),
        Command::PtpSim(a) => ptp_sim(a),
        Command::Wordclock(a) => wordclock(a),
        Command::SynthSession(a) => synth_session(a),
        Command::Stimulus(a) => stimulus(a),
    }
}

// a closed stdout (e.g. piped into `head`) is not an error
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|_| out.flush());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_out = cli.json || matches!(&cli.command, Command::LtcDecode(a) if matches!(a.format, Some(Format::Json)));
    let result = std::panic::catch_unwind(|| run(&cli)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Failure::internal(msg))
    });
    let status = match result {
        Ok(out) => {
            if json_out {
                emit(&serde_json::to_string_pretty(&out.json).expect("json value serializes"));
            } else {
                emit(&out.text);
            }
            out.status
        }
        Err(f) => {
            if json_out {
                let doc = json!({
                    "schema_version": SCHEMA_VERSION,
                    "error": f.message,
                    "exit_code": f.status as u8,
                });
                emit(&serde_json::to_string_pretty(&doc).expect("json value serializes"));
            }
            eprintln!("error: {}", f.message);
            f.status
        }
    };
    ExitCode::from(status as u8)
}
