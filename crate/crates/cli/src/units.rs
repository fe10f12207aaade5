//! Durations and offsets on the command line. Every value carries its unit:
//! `480smp`, `0.5s`, `16.7ms`, `3f`, or an elapsed timecode `00:00:01:12`.
//! A leading `-` makes any of them negative.

use std::fmt;
use std::str::FromStr;

use avsync_core::timecode::frames_to_samples;
use avsync_core::verify::Threshold;
use avsync_core::{FrameRate, Timecode};

#[derive(Debug, Clone, PartialEq)]
pub enum Quantity {
    Samples(i64),
    Seconds(f64),
    Frames(i64),
    /// Elapsed timecode, parsed once the frame rate is known.
    Timecode { negative: bool, text: String },
}

const HINT: &str = "use a unit suffix: smp, s, ms, f, or HH:MM:SS:FF";

impl FromStr for Quantity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        let (negative, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        if body.contains(':') {
            return Ok(Quantity::Timecode {
                negative,
                text: body.to_owned(),
            });
        }
        let sign = if negative { -1 } else { 1 };
        let int = |n: &str| {
            n.parse::<i64>()
                .map(|v| v * sign)
                .map_err(|_| format!("{s:?}: expected a whole number before the unit"))
        };
        let float = |n: &str| match n.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v * sign as f64),
            _ => Err(format!("{s:?}: expected a number before the unit")),
        };
        if let Some(n) = body.strip_suffix("smp") {
            Ok(Quantity::Samples(int(n)?))
        } else if let Some(n) = body.strip_suffix("ms") {
            Ok(Quantity::Seconds(float(n)? / 1000.0))
        } else if let Some(n) = body.strip_suffix('s') {
            Ok(Quantity::Seconds(float(n)?))
        } else if let Some(n) = body.strip_suffix('f') {
            Ok(Quantity::Frames(int(n)?))
        } else {
            Err(format!("{s:?}: missing unit ({HINT})"))
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Samples(n) => write!(f, "{n}smp"),
            Quantity::Seconds(s) => write!(f, "{s}s"),
            Quantity::Frames(n) => write!(f, "{n}f"),
            Quantity::Timecode { negative, text } => write!(f, "{}{text}", if *negative { "-" } else { "" }),
        }
    }
}

impl Quantity {
    fn need_fps(&self, fps: Option<FrameRate>) -> Result<FrameRate, String> {
        fps.ok_or_else(|| format!("{self}: frame-based value needs a frame rate here"))
    }

    fn timecode_frames(&self, negative: bool, text: &str, fps: Option<FrameRate>) -> Result<i64, String> {
        let rate = self.need_fps(fps)?;
        let tc = Timecode::parse(text, rate).map_err(|e| e.to_string())?;
        let n = tc.total_frames() as i64;
        Ok(if negative { -n } else { n })
    }

    /// Value in samples, rounding seconds to the nearest sample.
    pub fn to_samples(&self, sample_rate: u32, fps: Option<FrameRate>) -> Result<i64, String> {
        match self {
            Quantity::Samples(n) => Ok(*n),
            Quantity::Seconds(s) => Ok((s * f64::from(sample_rate)).round() as i64),
            Quantity::Frames(n) => Ok(frames_to_samples(*n, self.need_fps(fps)?, sample_rate)),
            Quantity::Timecode { negative, text } => {
                let n = self.timecode_frames(*negative, text, fps)?;
                Ok(frames_to_samples(n, self.need_fps(fps)?, sample_rate))
            }
        }
    }

    pub fn to_seconds(&self, sample_rate: u32, fps: Option<FrameRate>) -> Result<f64, String> {
        match self {
            Quantity::Seconds(s) => Ok(*s),
            Quantity::Samples(n) => Ok(*n as f64 / f64::from(sample_rate)),
            _ => Ok(self.to_samples(sample_rate, fps)? as f64 / f64::from(sample_rate)),
        }
    }

    /// Whole frames covering the value, rounding partial frames up.
    pub fn to_frames_ceil(&self, sample_rate: u32, fps: FrameRate) -> Result<i64, String> {
        let f = i128::from(fps.fps());
        let sr = i128::from(sample_rate);
        match self {
            Quantity::Frames(n) => Ok(*n),
            Quantity::Timecode { negative, text } => self.timecode_frames(*negative, text, Some(fps)),
            Quantity::Samples(n) => {
                let num = i128::from(*n) * f;
                Ok((num + sr - 1).div_euclid(sr) as i64)
            }
            Quantity::Seconds(s) => {
                let frames = s * fps.fps() as f64;
                let nearest = frames.round();
                // absorb decimal noise such as 0.1s * 30
                Ok(if (frames - nearest).abs() < 1e-9 { nearest } else { frames.ceil() } as i64)
            }
        }
    }

    pub fn to_threshold(&self, fps: FrameRate) -> Result<Threshold, String> {
        let t = match self {
            Quantity::Frames(n) => Threshold::Frames(u64::try_from(*n).map_err(|_| "threshold must be positive")?),
            Quantity::Samples(n) => Threshold::Samples(u64::try_from(*n).map_err(|_| "threshold must be positive")?),
            Quantity::Seconds(s) => Threshold::Seconds(*s),
            Quantity::Timecode { negative, text } => {
                let n = self.timecode_frames(*negative, text, Some(fps))?;
                Threshold::Frames(u64::try_from(n).map_err(|_| "threshold must be positive")?)
            }
        };
        let zero = match t {
            Threshold::Frames(n) | Threshold::Samples(n) => n == 0,
            Threshold::Seconds(s) => s <= 0.0,
        };
        if zero {
            return Err(format!("{self}: threshold must be positive"));
        }
        Ok(t)
    }
}
