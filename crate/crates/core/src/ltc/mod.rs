//! Linear timecode: frame words, biphase-mark encoding and decoding.

pub mod decode;
pub mod encode;
pub mod frame;

use thiserror::Error;

use crate::pcm_io::PcmError;
use crate::timecode::{FrameRate, TimecodeError};

pub use decode::{
    bit_period_estimate, decode_ltc, decode_ltc_with, rate_from_bit_rate, DecodeDiagnostics, DecodeOptions,
    DecodedFrame, LtcDecodeResult, LtcDecoder,
};
pub use encode::{encode_ltc, LtcEncodeConfig};
pub use frame::{FrameFault, LtcFrame};

#[derive(Debug, Error)]
pub enum LtcError {
    #[error("sample rate {sample_rate} Hz too low for this frame rate (need at least {min} Hz)")]
    SampleRateTooLow { sample_rate: u32, min: u32 },
    #[error("amplitude {0} outside (0, 1]")]
    Amplitude(f32),
    #[error("start timecode is at {found} fps but the encoder runs at {expected} fps")]
    RateMismatch { expected: FrameRate, found: FrameRate },
    #[error("frame count must be positive")]
    NoFrames,
    #[error("LTC decoding needs a mono signal, got {0} channels")]
    NotMono(usize),
    #[error("signal is empty")]
    EmptySignal,
    #[error("only {found} transitions found, need {required} to estimate the bit rate")]
    InsufficientTransitions { found: usize, required: usize },
    #[error("no LTC found: no valid frames ({transitions} transitions{})", fmt_bit_rate(*.bit_rate))]
    NoLtcFound { transitions: u64, bit_rate: Option<f64> },
    #[error(transparent)]
    Timecode(#[from] TimecodeError),
    #[error(transparent)]
    Pcm(#[from] PcmError),
}

fn fmt_bit_rate(b: Option<f64>) -> String {
    match b {
        Some(b) => format!(", dominant bit rate {b:.1} bit/s"),
        None => String::new(),
    }
}
