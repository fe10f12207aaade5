//! Software side of a synchronized audio-visual capture rig.
//!
//! - [`timecode`]: `HH:MM:SS:FF` values and frame/sample arithmetic.
//! - [`pcm_io`]: bit-exact multi-channel WAV I/O, channel extraction, trim.
//! - [`ltc`]: SMPTE linear timecode encoder and biphase-mark decoder.
//! - [`clocksim`]: PTP master/slave and word-clock simulations.
//! - [`align`]: LTC-driven audio trimming onto the video timeline.
//! - [`verify`]: onset-based end-to-end offset measurement.

pub mod align;
pub mod clocksim;
pub mod ltc;
pub mod pcm_io;
pub mod timecode;
pub mod verify;

pub use pcm_io::{BitDepth, PcmBuffer};
pub use timecode::{FrameRate, SampleTime, Timecode};
