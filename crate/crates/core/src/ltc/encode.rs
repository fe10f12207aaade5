use crate::pcm_io::{BitDepth, PcmBuffer};
use crate::timecode::{div_round_half_away, FrameRate, Timecode};

use super::frame::{LtcFrame, FRAME_BITS};
use super::LtcError;

/// Minimum samples per half-bit the encoder will produce.
pub const MIN_SAMPLES_PER_HALF_BIT: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LtcEncodeConfig {
    pub rate: FrameRate,
    pub sample_rate: u32,
    /// Peak level as a fraction of full scale, in `(0, 1]`.
    pub amplitude: f32,
    pub start: Timecode,
    pub user_bits: u32,
    pub bit_depth: BitDepth,
}

impl LtcEncodeConfig {
    pub fn new(
        rate: FrameRate,
        sample_rate: u32,
        amplitude: f32,
        start: Timecode,
    ) -> Result<Self, LtcError> {
        let cfg = LtcEncodeConfig {
            rate,
            sample_rate,
            amplitude,
            start,
            user_bits: 0,
            bit_depth: BitDepth::TwentyFour,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_user_bits(mut self, user_bits: u32) -> Self {
        self.user_bits = user_bits;
        self
    }

    pub fn with_bit_depth(mut self, depth: BitDepth) -> Self {
        self.bit_depth = depth;
        self
    }

    pub fn validate(&self) -> Result<(), LtcError> {
        let min = (MIN_SAMPLES_PER_HALF_BIT * 2.0 * FRAME_BITS as f64 * f64::from(self.rate.fps())).ceil() as u32;
        if self.sample_rate < min {
            return Err(LtcError::SampleRateTooLow {
                sample_rate: self.sample_rate,
                min,
            });
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(LtcError::Amplitude(self.amplitude));
        }
        if self.start.rate() != self.rate {
            return Err(LtcError::RateMismatch {
                expected: self.rate,
                found: self.start.rate(),
            });
        }
        Ok(())
    }

    /// Sample index where frame `k` (counted from `start`) begins.
    pub fn frame_start(&self, k: u64) -> u64 {
        self.half_bit_start(k * 2 * FRAME_BITS as u64)
    }

    fn half_bit_start(&self, m: u64) -> u64 {
        div_round_half_away(
            i128::from(m) * i128::from(self.sample_rate),
            2 * FRAME_BITS as i128 * i128::from(self.rate.fps()),
        ) as u64
    }
}

/// Renders `n_frames` consecutive frames starting at `config.start` as a
/// biphase-mark square wave.
///
/// Every bit cell starts with a polarity flip and a `1` flips again at mid
/// cell. Half-bit boundaries land at `round(m * sample_rate / (160 * fps))`,
/// so frame `k` starts at `round(k * sample_rate / fps)` with no accumulated
/// drift. The signal sits at `-amplitude` before the first flip, hence
/// sample 0 is positive.
pub fn encode_ltc(config: &LtcEncodeConfig, n_frames: usize) -> Result<PcmBuffer, LtcError> {
    config.validate()?;
    if n_frames == 0 {
        return Err(LtcError::NoFrames);
    }
    let last = config.start.add_frames(n_frames as i64 - 1)?;
    debug_assert!(last.total_frames() >= config.start.total_frames());

    let total = config.frame_start(n_frames as u64) as usize;
    let mut out = Vec::with_capacity(total);
    let depth = config.bit_depth;
    let hi = depth.dequantize(depth.quantize(config.amplitude));
    let lo = depth.dequantize(depth.quantize(-config.amplitude));
    let mut level = false;

    let mut m = 0u64;
    for k in 0..n_frames {
        let tc = config.start.add_frames(k as i64)?;
        let frame = LtcFrame::encode(&tc, config.user_bits);
        for bit in frame.iter_bits() {
            for half in 0..2 {
                if half == 0 || bit {
                    level = !level;
                }
                let end = config.half_bit_start(m + 1) as usize;
                out.resize(end, if level { hi } else { lo });
                m += 1;
            }
        }
    }
    debug_assert_eq!(out.len(), total);
    Ok(PcmBuffer::mono(config.sample_rate, depth, out)?)
}
