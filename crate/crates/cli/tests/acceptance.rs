//! Acceptance suite. Each criterion runs in full and reports one line; the
//! test fails if any criterion fails or exceeds its time budget.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use avsync_core::align::{
    align_session, emit_aligned_audio, synthesize_session, AlignOptions, EmitOptions, SessionManifest,
    SyntheticSessionSpec,
};
use avsync_core::clocksim::{simulate_sampling, PtpScenario, WordClockConfig, WordClockMode};
use avsync_core::ltc::{decode_ltc, encode_ltc, LtcEncodeConfig};
use avsync_core::pcm_io::{read_wav, write_wav, WavReader};
use avsync_core::{BitDepth, FrameRate, PcmBuffer, Timecode};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn avsync(dir: &Path, args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_avsync"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn avsync_json(dir: &Path, args: &[&str]) -> Result<(i32, Value), String> {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let (code, out) = avsync(dir, &full);
    let v = serde_json::from_slice(&out).map_err(|e| format!("{args:?}: {e}"))?;
    Ok((code, v))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Stimulus, align and verify through the CLI; returns the verify exit code
/// and the measured offset in ms.
fn stimulus_roundtrip(dir: &Path, stem: &str, offset: &str) -> Result<(i32, f64), String> {
    let (c, _) = avsync_json(dir, &["stimulus", "--out-dir", ".", "--stem", stem, "--offset", offset, "--seed", "3"])?;
    check!(c == 0, "stimulus {offset} exited {c}");
    let al = format!("{stem}_al.wav");
    let (c, _) = avsync_json(dir, &["align", "--manifest", &format!("{stem}.json"), "--out", &al])?;
    check!(c == 0, "align {offset} exited {c}");
    let ann = format!("{stem}.annotation.json");
    let (c, v) = avsync_json(dir, &["verify", "--audio", &al, "--annotation", &ann])?;
    let ms = v["offset_ms"].as_f64().ok_or_else(|| format!("verify {offset}: {v}"))?;
    Ok((c, ms))
}

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut pts = Vec::new();
    for ms in (-50i32..=50).step_by(5) {
        let (code, got) = stimulus_roundtrip(dir.path(), &format!("s{}", ms + 50), &format!("{ms}ms"))?;
        let err = (got - f64::from(ms)).abs();
        check!(err <= 1.0, "injected {ms} ms, measured {got:.3} ms");
        check!((code == 0) == (ms.abs() < 17), "injected {ms} ms: exit {code}");
        worst = worst.max(err);
        pts.push((f64::from(ms), got));
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();

    let (code, one) = stimulus_roundtrip(dir.path(), "one_frame", "-1f")?;
    check!((one + 1000.0 / 60.0).abs() <= 1.0, "one frame early measured {one:.3} ms");
    check!(code == 1, "one frame early: |offset| = 1 frame must fail, exit {code}");
    let (code, under) = stimulus_roundtrip(dir.path(), "under", "-16ms")?;
    check!(code == 0, "under one frame ({under:.3} ms) must pass, exit {code}");
    let (code, over) = stimulus_roundtrip(dir.path(), "over", "-17ms")?;
    check!(code == 1, "over one frame ({over:.3} ms) must fail, exit {code}");
    Ok(format!(
        "21 offsets -50..+50 ms, worst error {worst:.3} ms, slope {slope:.4}; one frame early -> {one:.3} ms FAIL, -16 ms PASS, -17 ms FAIL"
    ))
}

fn criterion_2() -> Outcome {
    let dir = scenarios();
    let s = PtpScenario::load(dir.join("twelve_cameras.toml")).map_err(|e| e.to_string())?;
    let (_, sum) = s.run().map_err(|e| e.to_string())?;
    check!(sum.slaves + 1 == 12, "{} clocks", sum.slaves + 1);
    check!(sum.max_spread <= 6e-9, "spread {:.3} ns", sum.max_spread * 1e9);
    let z = PtpScenario::load(dir.join("zero_jitter.toml")).map_err(|e| e.to_string())?;
    let (out, _) = z.run().map_err(|e| e.to_string())?;
    let worst = out.trace.rows.iter().fold(0.0f64, |m, r| m.max(r.residual_seconds.abs()));
    check!(worst <= 1e-12, "zero-jitter residual {worst:e} s");
    Ok(format!(
        "12 clocks, 0.5 ns jitter: spread {:.3} ns after convergence; zero jitter: max residual {worst:.1e} s from round 1",
        sum.max_spread * 1e9
    ))
}

fn encode(rate: FrameRate, sr: u32, amp: f32, start: Timecode, n: usize) -> PcmBuffer {
    encode_ltc(&LtcEncodeConfig::new(rate, sr, amp, start).unwrap(), n).unwrap()
}

fn frames_exact(buf: &PcmBuffer, rate: FrameRate, start: Timecode, n: usize) -> Result<(), String> {
    let r = decode_ltc(buf, Some(rate)).map_err(|e| e.to_string())?;
    check!(r.discarded == 0, "{} discarded", r.discarded);
    check!(r.frames.len() == n, "{} of {n} frames", r.frames.len());
    for (k, f) in r.frames.iter().enumerate() {
        let want = start.add_frames(k as i64).unwrap();
        check!(f.timecode == want, "frame {k}: {} != {want}", f.timecode);
    }
    Ok(())
}

fn criterion_3() -> Outcome {
    let mut grid = 0;
    for rate in FrameRate::all() {
        for sr in [44_100, 48_000, 96_000] {
            for amp in [0.1f32, 0.5, 1.0] {
                let start = Timecode::new(23, 59, 56, 0, rate).unwrap();
                let n = rate.fps() as usize * 3;
                frames_exact(&encode(rate, sr, amp, start, n), rate, start, n)
                    .map_err(|e| format!("{rate} fps {sr} Hz amp {amp}: {e}"))?;
                grid += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x17C);
    let (mut noisy_frames, mut inv, mut phase) = (0, 0, 0);
    while noisy_frames < 1200 {
        let rate = FrameRate::all().nth((rng.next_u32() % 5) as usize).unwrap();
        let sr = [44_100, 48_000, 96_000][(rng.next_u32() % 3) as usize];
        let amp = 0.2 + (rng.next_u32() % 80) as f32 / 100.0;
        let n = 100;
        let start = Timecode::from_total_frames(u64::from(rng.next_u32()) % (rate.frames_per_day() - n as u64), rate).unwrap();
        let clean = encode(rate, sr, amp, start, n);
        // square wave: RMS equals the amplitude, so sigma = amp / 10 is 20 dB
        let noise = Normal::new(0.0, f64::from(amp) / 10.0).unwrap();
        let x: Vec<f32> = clean.channel(0).unwrap().iter().map(|s| s + noise.sample(&mut rng) as f32).collect();
        let noisy = PcmBuffer::mono(sr, BitDepth::TwentyFour, x).unwrap();
        frames_exact(&noisy, rate, start, n).map_err(|e| format!("20 dB {rate} fps {sr} Hz start {start}: {e}"))?;
        noisy_frames += n;

        let neg: Vec<f32> = clean.channel(0).unwrap().iter().map(|s| -s).collect();
        frames_exact(&PcmBuffer::mono(sr, BitDepth::TwentyFour, neg).unwrap(), rate, start, n)
            .map_err(|e| format!("inverted {rate} fps {sr} Hz: {e}"))?;
        inv += 1;

        let pad = (rng.next_u32() % 4000) as usize;
        let mut shifted = vec![0.0f32; pad];
        shifted.extend_from_slice(clean.channel(0).unwrap());
        let a = decode_ltc(&clean, Some(rate)).map_err(|e| e.to_string())?;
        let b = decode_ltc(&PcmBuffer::mono(sr, BitDepth::TwentyFour, shifted).unwrap(), Some(rate))
            .map_err(|e| e.to_string())?;
        check!(a.frames.len() == b.frames.len(), "phase {pad}: frame count changed");
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            check!(fa.timecode == fb.timecode, "phase {pad}: timecode changed");
            check!(
                fb.first_sample_index.abs_diff(fa.first_sample_index + pad as u64) <= 1,
                "phase {pad}: position {} vs {}",
                fb.first_sample_index,
                fa.first_sample_index
            );
        }
        phase += 1;
    }
    Ok(format!(
        "{grid} clean configurations frame-exact, {noisy_frames} frames at 20 dB SNR without error, {inv} polarity and {phase} phase cases"
    ))
}

fn criterion_4() -> Outcome {
    let internal = WordClockConfig {
        mode: WordClockMode::Internal,
        nominal_rate: 48_000,
        drift_ppm: vec![0.0, 10.0],
    };
    let d = simulate_sampling(&internal, 60.0, 4).map_err(|e| e.to_string())?.max_pairwise_drift;
    check!((d - 600e-6).abs() <= 6e-6, "internal drift {:.3} us", d * 1e6);
    let lists: [&[f64]; 4] = [&[0.0, 10.0], &[-25.0, 0.0, 40.0, 3.3], &[100.0], &[5.0; 12]];
    for ppm in lists {
        for source_ppm in [0.0, 7.5, -20.0] {
            let cfg = WordClockConfig {
                mode: WordClockMode::External { source_ppm },
                nominal_rate: 48_000,
                drift_ppm: ppm.to_vec(),
            };
            let e = simulate_sampling(&cfg, 60.0, 4).map_err(|e| e.to_string())?.max_pairwise_drift;
            check!(e == 0.0, "external {ppm:?} source {source_ppm}: {e:e}");
        }
    }
    Ok(format!("internal 10 ppm over 60 s: {:.3} us; external: exactly 0 for 12 configurations", d * 1e6))
}

fn data_bytes(path: &Path) -> (Vec<u8>, usize) {
    let r = WavReader::open(path).unwrap();
    let spec = r.spec();
    let frame = usize::from(spec.channels) * spec.bit_depth.bytes();
    let off = r.data_offset() as usize;
    let bytes = std::fs::read(path).unwrap();
    (bytes[off..off + spec.frames as usize * frame].to_vec(), frame)
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    let mut checked = 0;
    for (i, (lead, start)) in [(0.73, "01:00:00:00"), (2.25, "13:12:11:10"), (0.5, "23:00:00:59")].into_iter().enumerate() {
        let tc = Timecode::parse(start, FrameRate::FPS_60).unwrap();
        let mut spec = SyntheticSessionSpec::new(tc, 90, lead, 0.4);
        spec.content_channels = 31;
        spec.seed = i as u64;
        let mut s = synthesize_session(&spec).map_err(|e| e.to_string())?;
        let stem = format!("f{i}");
        let m = SessionManifest::load(s.write(p, &stem).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let r = align_session(&m, &AlignOptions::default()).map_err(|e| e.to_string())?;
        let out = p.join(format!("{stem}_al.wav"));
        emit_aligned_audio(&m, &r, &out, &EmitOptions::default()).map_err(|e| e.to_string())?;
        let (src, w) = data_bytes(&p.join(format!("{stem}.wav")));
        let (dst, w2) = data_bytes(&out);
        check!(w == 32 * 3 && w2 == w, "frame width {w} / {w2}");
        let (a, b) = (r.trim_start.sample_index as usize, r.trim_end.sample_index as usize);
        check!(dst.len() == 90 * 800 * w, "length {} frames", dst.len() / w);
        check!(dst == src[a * w..b * w], "{stem}: samples differ");
        checked += dst.len();
    }
    for depth in [BitDepth::Sixteen, BitDepth::TwentyFour] {
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from(depth.bits()));
        let scale = depth.scale();
        let channels = (0..8)
            .map(|_| {
                (0..4_000)
                    .map(|_| ((rng.next_u32() as i32 >> (32 - depth.bits())) as f64 / scale) as f32)
                    .collect()
            })
            .collect();
        let buf = PcmBuffer::new(48_000, depth, channels).unwrap();
        let a = p.join(format!("rt{}.wav", depth.bits()));
        let b = p.join(format!("rt{}b.wav", depth.bits()));
        write_wav(&a, &buf, depth).map_err(|e| e.to_string())?;
        let back = read_wav(&a).map_err(|e| e.to_string())?;
        check!(back == buf, "{}-bit read back differs", depth.bits());
        write_wav(&b, &back, depth).map_err(|e| e.to_string())?;
        check!(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(), "{}-bit rewrite differs", depth.bits());
    }
    Ok(format!("3 sessions, 24-bit x 32 channels, {checked} bytes identical; 16/24-bit WAV roundtrip bit-exact"))
}

/// Runs `args` in a fresh directory and returns stdout, exit code and every
/// file the command wrote.
fn snapshot(setup: &dyn Fn(&Path), args: &[&str]) -> (i32, Vec<u8>, BTreeMap<String, Vec<u8>>) {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let before: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    let (code, out) = avsync(dir.path(), args);
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir.path()).unwrap() {
        let e = e.unwrap();
        if !before.contains(&e.file_name()) {
            files.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap());
        }
    }
    (code, out, files)
}

type Case<'a> = (&'a str, &'a dyn Fn(&Path), Vec<&'a str>);

fn criterion_6() -> Outcome {
    let scen = scenarios();
    let twelve = scen.join("twelve_cameras.toml").to_string_lossy().into_owned();
    let none = |_: &Path| {};
    let session = |p: &Path| {
        avsync(p, &["synth-session", "--out-dir", ".", "--stem", "s", "--start", "10:00:00:00", "--frames", "60", "--lead", "0.3s", "--tail", "0.2s"]);
    };
    let stim = |p: &Path| {
        avsync(p, &["stimulus", "--out-dir", ".", "--stem", "v", "--offset", "-5ms"]);
        avsync(p, &["align", "--manifest", "v.json", "--out", "al.wav"]);
    };
    let encoded = |p: &Path| {
        avsync(p, &["ltc-encode", "--start", "01:02:03:04", "--fps", "25", "--frames", "50", "--out", "a.wav"]);
    };
    let cases: Vec<Case> = vec![
        ("ltc-encode", &none, vec!["ltc-encode", "--start", "01:02:03:04", "--fps", "25", "--duration", "2s", "--out", "a.wav"]),
        ("ltc-decode", &encoded, vec!["ltc-decode", "--in", "a.wav", "--list-frames"]),
        ("synth-session", &none, vec!["synth-session", "--out-dir", ".", "--start", "02:00:00:00", "--frames", "30", "--seed", "4"]),
        ("align", &session, vec!["align", "--manifest", "s.json", "--out", "o.wav", "--report", "r.json"]),
        ("stimulus", &none, vec!["stimulus", "--out-dir", ".", "--offset", "12ms", "--seed", "9"]),
        ("verify", &stim, vec!["verify", "--audio", "al.wav", "--annotation", "v.annotation.json", "--report", "r.json"]),
        ("ptp-sim", &none, vec!["ptp-sim", "--scenario", &twelve, "--out", "t.csv"]),
        ("wordclock", &none, vec!["wordclock", "--mode", "internal", "--ppm", "0,10,-3", "--duration", "60s", "--first", "3"]),
    ];
    let mut runs = 0;
    for (name, setup, args) in &cases {
        for json in [false, true] {
            let mut a = Vec::new();
            if json {
                a.push("--json");
            }
            a.extend_from_slice(args);
            let first = snapshot(*setup, &a);
            let second = snapshot(*setup, &a);
            check!(first.0 == 0, "{name}: exit {}", first.0);
            check!(first == second, "{name} (json: {json}): outputs differ between runs");
            check!(
                !first.2.is_empty() || matches!(*name, "ltc-decode" | "wordclock"),
                "{name}: wrote no files"
            );
            runs += 2;
        }
    }
    Ok(format!("{} commands, {runs} runs, stdout and written files byte-identical", cases.len()))
}

#[test]
fn acceptance() {
    type Criterion = (u32, &'static str, fn() -> Outcome, Option<u64>);
    let criteria: [Criterion; 6] = [
        (1, "sub-frame AV alignment", criterion_1, Some(30)),
        (2, "inter-camera spread", criterion_2, Some(10)),
        (3, "LTC codec robustness", criterion_3, Some(60)),
        (4, "word-clock drift", criterion_4, Some(5)),
        (5, "lossless trim", criterion_5, Some(10)),
        (6, "determinism", criterion_6, None),
    ];
    let mut failed = Vec::new();
    for (id, name, f, limit) in criteria {
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = t.elapsed();
        let res = match (res, limit) {
            (Ok(_), Some(l)) if took > Duration::from_secs(l) => {
                Err(format!("took {:.1} s, limit {l} s", took.as_secs_f64()))
            }
            (r, _) => r,
        };
        match &res {
            Ok(detail) => println!("PASS [{id}] {name}: {detail} ({:.2} s)", took.as_secs_f64()),
            Err(why) => {
                println!("FAIL [{id}] {name}: {why} ({:.2} s)", took.as_secs_f64());
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
