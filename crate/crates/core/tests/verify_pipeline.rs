use avsync_core::align::{align_with_frames, render_aligned, AlignOptions, EmitOptions};
use avsync_core::ltc::decode_ltc;
use avsync_core::verify::{
    detect_onset, detect_onset_with, generate_test_stimulus, measure_av_offset, OnsetConfig, StimulusSpec, SyncReport,
    Threshold, VerifyError,
};
use avsync_core::{BitDepth, FrameRate, PcmBuffer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn run(spec: &StimulusSpec) -> SyncReport {
    let s = generate_test_stimulus(spec).unwrap();
    let m = &s.session.manifest;
    let ltc = s.session.audio.extract_channel(m.audio.ltc_channel_index).unwrap();
    let decoded = decode_ltc(&ltc, Some(m.ltc_rate)).unwrap();
    let r = align_with_frames(
        m,
        &decoded.frames,
        s.session.audio.len() as u64,
        spec.sample_rate,
        &AlignOptions::default(),
    )
    .unwrap();
    assert_eq!(r.start_sample, s.truth.session.video_start_sample);
    let (aligned, _) = render_aligned(&s.session.audio, &r, 1, &EmitOptions::default()).unwrap();
    measure_av_offset(&aligned.extract_channel(0).unwrap(), &s.annotation, Threshold::default()).unwrap()
}

#[test]
fn offset_sweep_is_linear() {
    let fps = FrameRate::FPS_60;
    let mut pts = Vec::new();
    for ms in (-50..=50).step_by(5) {
        let mut spec = StimulusSpec::new(fps, 90, f64::from(ms) / 1000.0);
        spec.seed = ms as u64;
        let r = run(&spec);
        assert!((r.offset_ms - f64::from(ms)).abs() <= 1.0, "{ms} ms -> {}", r.offset_ms);
        pts.push((f64::from(ms), r.offset_ms));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    assert!((slope - 1.0).abs() <= 0.01, "slope {slope}");
    assert!(intercept.abs() <= 1.0, "intercept {intercept}");
}

#[test]
fn audio_leading_by_a_frame() {
    let r = run(&StimulusSpec::new(FrameRate::FPS_60, 60, -0.0167));
    assert!((r.offset_ms + 16.7).abs() <= 1.0, "{}", r.offset_ms);
    assert!(r.offset < 0.0);

    // exactly one frame early is on the boundary and fails
    let r = run(&StimulusSpec::new(FrameRate::FPS_60, 60, -1.0 / 60.0));
    assert!(!r.pass, "{}", r.offset_ms);
    let mut spec = StimulusSpec::new(FrameRate::FPS_60, 60, -1.0 / 60.0);
    spec.noise_std = 0.0;
    let r = run(&spec);
    assert_eq!(r.onset_sample, 60 * 800 - 800);
    assert!(!r.pass);

    let r = run(&StimulusSpec::new(FrameRate::FPS_60, 60, -0.016));
    assert!(r.pass, "{}", r.offset_ms);
}

#[test]
fn other_frame_rates() {
    for fps in FrameRate::all() {
        let mut spec = StimulusSpec::new(fps, u64::from(fps.fps()), 0.012);
        spec.ltc_rate = fps;
        let r = run(&spec);
        assert!((r.offset_ms - 12.0).abs() <= 1.0, "{fps}: {}", r.offset_ms);
    }
}

#[test]
fn click_in_noise_at_20_db() {
    let sr = 48_000;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let noise = Normal::new(0.0, 0.04).unwrap();
    let click = Normal::new(0.0, 0.4).unwrap();
    for at in [10_000usize, 33_333, 70_001] {
        let mut x: Vec<f32> = (0..96_000).map(|_| noise.sample(&mut rng) as f32).collect();
        for (k, s) in x[at..].iter_mut().take(2_400).enumerate() {
            *s += (click.sample(&mut rng) * (-(k as f64) / 240.0).exp()) as f32;
        }
        let n = detect_onset(&PcmBuffer::mono(sr, BitDepth::TwentyFour, x).unwrap(), None).unwrap();
        assert!(n.abs_diff(at as u64) <= 48, "{at}: {n}");
    }
}

#[test]
fn silence_reports_floor() {
    let x: Vec<f32> = vec![0.001; 48_000];
    let err = detect_onset(&PcmBuffer::mono(48_000, BitDepth::Sixteen, x).unwrap(), None).unwrap_err();
    match err {
        VerifyError::NoOnset { noise_floor, threshold } => {
            assert!((noise_floor - 1e-6).abs() < 1e-9);
            assert!((threshold - 1e-5).abs() < 1e-8);
        }
        other => panic!("{other:?}"),
    }
}

fn burst(len: usize, at: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, 0.3).unwrap();
    let mut x = vec![0.0f32; len];
    for (k, s) in x[at..].iter_mut().take(1_000).enumerate() {
        *s = (d.sample(&mut rng) * (-(k as f64) / 200.0).exp()) as f32;
    }
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn onset_translates_with_signal(at in 500usize..5_000, shift in 0usize..3_000, seed in 0u64..1000) {
        let base = burst(12_000, at, seed);
        let mut shifted = vec![0.0f32; shift];
        shifted.extend_from_slice(&base[..12_000 - shift]);
        let a = detect_onset(&PcmBuffer::mono(48_000, BitDepth::TwentyFour, base).unwrap(), None).unwrap();
        let b = detect_onset(&PcmBuffer::mono(48_000, BitDepth::TwentyFour, shifted).unwrap(), None).unwrap();
        prop_assert_eq!(b, a + shift as u64);
    }

    #[test]
    fn windowed_onset_is_equivariant_in_noise(at in 2_000usize..6_000, pad in 1usize..4_000, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.01).unwrap();
        let mut x = burst(10_000, at, seed);
        for s in &mut x {
            *s += n.sample(&mut rng) as f32;
        }
        let mut padded: Vec<f32> = (0..pad).map(|_| n.sample(&mut rng) as f32 * 5.0).collect();
        padded.extend_from_slice(&x);
        let cfg = OnsetConfig::default();
        let a = detect_onset_with(&PcmBuffer::mono(48_000, BitDepth::TwentyFour, x).unwrap(), None, &cfg).unwrap();
        let len = padded.len() as u64;
        let b = detect_onset_with(
            &PcmBuffer::mono(48_000, BitDepth::TwentyFour, padded).unwrap(),
            Some(pad as u64..len),
            &cfg,
        )
        .unwrap();
        prop_assert_eq!(b.sample, a.sample + pad as u64);
        prop_assert_eq!(b.noise_floor, a.noise_floor);
    }
}
