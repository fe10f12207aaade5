//! Frame-accurate SMPTE-style timecode at integer frame rates.
//!
//! A [`Timecode`] is an `HH:MM:SS:FF` instant within one day. Arithmetic that
//! would leave the `00:00:00:00 ..= 23:59:59:FF` range is an error rather than
//! a silent wrap. Drop-frame rates are not represented.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const SECONDS_PER_DAY: u64 = 24 * 3600;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimecodeError {
    #[error("unsupported frame rate {0} fps (supported: 24, 25, 30, 50, 60)")]
    UnsupportedRate(u32),
    #[error("{field} value {value} out of range (max {max})")]
    FieldRange {
        field: &'static str,
        value: u32,
        max: u32,
    },
    #[error("frame count {frames} outside the day at {fps} fps")]
    OutOfDay { frames: i128, fps: u32 },
    #[error("invalid timecode {input:?} at position {position}: {reason}")]
    Parse {
        input: String,
        position: usize,
        reason: &'static str,
    },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
}

/// Integer video frame rate from the supported set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameRate(u32);

impl FrameRate {
    pub const SUPPORTED: [u32; 5] = [24, 25, 30, 50, 60];

    pub const FPS_24: FrameRate = FrameRate(24);
    pub const FPS_25: FrameRate = FrameRate(25);
    pub const FPS_30: FrameRate = FrameRate(30);
    pub const FPS_50: FrameRate = FrameRate(50);
    pub const FPS_60: FrameRate = FrameRate(60);

    pub fn new(frames_per_second: u32) -> Result<Self, TimecodeError> {
        if Self::SUPPORTED.contains(&frames_per_second) {
            Ok(FrameRate(frames_per_second))
        } else {
            Err(TimecodeError::UnsupportedRate(frames_per_second))
        }
    }

    pub fn all() -> impl Iterator<Item = FrameRate> {
        Self::SUPPORTED.iter().map(|&f| FrameRate(f))
    }

    #[inline]
    pub fn fps(self) -> u32 {
        self.0
    }

    /// Number of frames in one day at this rate.
    pub fn frames_per_day(self) -> u64 {
        SECONDS_PER_DAY * u64::from(self.0)
    }

    pub fn frame_duration(self) -> f64 {
        1.0 / f64::from(self.0)
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for FrameRate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(self.0)
    }
}

impl<'de> Deserialize<'de> for FrameRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let fps = u32::deserialize(d)?;
        FrameRate::new(fps).map_err(serde::de::Error::custom)
    }
}

/// A sample position on an audio timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleTime {
    pub sample_index: u64,
    pub sample_rate: u32,
}

impl SampleTime {
    pub fn new(sample_index: u64, sample_rate: u32) -> Result<Self, TimecodeError> {
        if sample_rate == 0 {
            return Err(TimecodeError::ZeroSampleRate);
        }
        Ok(SampleTime {
            sample_index,
            sample_rate,
        })
    }

    pub fn seconds(self) -> f64 {
        self.sample_index as f64 / f64::from(self.sample_rate)
    }
}

/// `HH:MM:SS:FF` at a fixed [`FrameRate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Timecode {
    hours: u8,
    minutes: u8,
    seconds: u8,
    frames: u8,
    rate: FrameRate,
}

impl Timecode {
    pub fn new(
        hours: u32,
        minutes: u32,
        seconds: u32,
        frames: u32,
        rate: FrameRate,
    ) -> Result<Self, TimecodeError> {
        check_field("hours", hours, 23)?;
        check_field("minutes", minutes, 59)?;
        check_field("seconds", seconds, 59)?;
        check_field("frames", frames, rate.fps() - 1)?;
        Ok(Timecode {
            hours: hours as u8,
            minutes: minutes as u8,
            seconds: seconds as u8,
            frames: frames as u8,
            rate,
        })
    }

    pub fn zero(rate: FrameRate) -> Self {
        Timecode {
            hours: 0,
            minutes: 0,
            seconds: 0,
            frames: 0,
            rate,
        }
    }

    pub fn hours(&self) -> u32 {
        u32::from(self.hours)
    }
    pub fn minutes(&self) -> u32 {
        u32::from(self.minutes)
    }
    pub fn seconds(&self) -> u32 {
        u32::from(self.seconds)
    }
    pub fn frames(&self) -> u32 {
        u32::from(self.frames)
    }
    pub fn rate(&self) -> FrameRate {
        self.rate
    }

    /// Frames elapsed since `00:00:00:00`.
    pub fn total_frames(&self) -> u64 {
        let secs = (u64::from(self.hours) * 60 + u64::from(self.minutes)) * 60
            + u64::from(self.seconds);
        secs * u64::from(self.rate.fps()) + u64::from(self.frames)
    }

    pub fn from_total_frames(n: u64, rate: FrameRate) -> Result<Self, TimecodeError> {
        if n >= rate.frames_per_day() {
            return Err(TimecodeError::OutOfDay {
                frames: i128::from(n),
                fps: rate.fps(),
            });
        }
        let fps = u64::from(rate.fps());
        let frames = n % fps;
        let secs = n / fps;
        Ok(Timecode {
            hours: (secs / 3600) as u8,
            minutes: (secs / 60 % 60) as u8,
            seconds: (secs % 60) as u8,
            frames: frames as u8,
            rate,
        })
    }

    pub fn add_frames(&self, delta: i64) -> Result<Self, TimecodeError> {
        let n = i128::from(self.total_frames()) + i128::from(delta);
        if n < 0 || n >= i128::from(self.rate.frames_per_day()) {
            return Err(TimecodeError::OutOfDay {
                frames: n,
                fps: self.rate.fps(),
            });
        }
        Timecode::from_total_frames(n as u64, self.rate)
    }

    /// Seconds since midnight.
    pub fn as_seconds(&self) -> f64 {
        self.total_frames() as f64 / f64::from(self.rate.fps())
    }

    /// Sample index of this instant on a timeline starting at `00:00:00:00`.
    ///
    /// `total_frames * sample_rate / fps`, rounded half away from zero.
    pub fn to_sample_time(&self, sample_rate: u32) -> Result<SampleTime, TimecodeError> {
        if sample_rate == 0 {
            return Err(TimecodeError::ZeroSampleRate);
        }
        let idx = div_round_half_away(
            i128::from(self.total_frames()) * i128::from(sample_rate),
            i128::from(self.rate.fps()),
        );
        Ok(SampleTime {
            sample_index: idx as u64,
            sample_rate,
        })
    }
}

fn check_field(field: &'static str, value: u32, max: u32) -> Result<(), TimecodeError> {
    if value > max {
        Err(TimecodeError::FieldRange { field, value, max })
    } else {
        Ok(())
    }
}

/// Integer division rounding half away from zero. `den` must be positive.
pub fn div_round_half_away(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    let q = (2 * num.abs() + den) / (2 * den);
    if num < 0 {
        -q
    } else {
        q
    }
}

/// Signed sample distance from timecode `from` to timecode `to`, which may
/// run at different rates. Exact rational arithmetic, rounded half away from
/// zero.
pub fn samples_between(from: &Timecode, to: &Timecode, sample_rate: u32) -> i64 {
    let fa = i128::from(from.rate().fps());
    let fb = i128::from(to.rate().fps());
    let num = (i128::from(to.total_frames()) * fa - i128::from(from.total_frames()) * fb)
        * i128::from(sample_rate);
    div_round_half_away(num, fa * fb) as i64
}

/// Sample count covering `frames` video frames at `rate`, rounded half away
/// from zero.
pub fn frames_to_samples(frames: i64, rate: FrameRate, sample_rate: u32) -> i64 {
    div_round_half_away(
        i128::from(frames) * i128::from(sample_rate),
        i128::from(rate.fps()),
    ) as i64
}

impl PartialOrd for Timecode {
    /// Only timecodes at the same rate are ordered.
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        if self.rate != other.rate {
            return None;
        }
        Some(self.total_frames().cmp(&other.total_frames()))
    }
}

impl fmt::Display for Timecode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:02}:{:02}:{:02}:{:02}",
            self.hours, self.minutes, self.seconds, self.frames
        )
    }
}

impl Timecode {
    /// Parses exactly `HH:MM:SS:FF` (two digits per field) at `rate`.
    pub fn parse(input: &str, rate: FrameRate) -> Result<Self, TimecodeError> {
        let err = |position, reason| TimecodeError::Parse {
            input: input.to_owned(),
            position,
            reason,
        };
        let bytes = input.as_bytes();
        if bytes.len() != 11 {
            return Err(err(bytes.len().min(11), "expected HH:MM:SS:FF"));
        }
        let mut fields = [0u32; 4];
        for (i, field) in fields.iter_mut().enumerate() {
            let at = i * 3;
            if let Some(k) = (at..at + 2).find(|&k| !bytes[k].is_ascii_digit()) {
                return Err(err(k, "expected digit"));
            }
            *field = u32::from(bytes[at] - b'0') * 10 + u32::from(bytes[at + 1] - b'0');
            if i < 3 && bytes[at + 2] != b':' {
                return Err(err(at + 2, "expected ':'"));
            }
        }
        let limits = [(23, 0usize), (59, 3), (59, 6), (rate.fps() - 1, 9)];
        for (value, (max, pos)) in fields.iter().zip(limits) {
            if *value > max {
                return Err(err(pos, "field out of range"));
            }
        }
        Timecode::new(fields[0], fields[1], fields[2], fields[3], rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tc(s: &str, fps: u32) -> Timecode {
        Timecode::parse(s, FrameRate::new(fps).unwrap()).unwrap()
    }

    #[test]
    fn rate_membership() {
        for f in [24, 25, 30, 50, 60] {
            assert_eq!(FrameRate::new(f).unwrap().fps(), f);
        }
        for f in [0, 1, 29, 48, 120] {
            assert_eq!(FrameRate::new(f), Err(TimecodeError::UnsupportedRate(f)));
        }
    }

    #[test]
    fn total_frames_examples() {
        assert_eq!(tc("00:00:00:00", 60).total_frames(), 0);
        assert_eq!(tc("01:00:00:00", 60).total_frames(), 216_000);
        assert_eq!(tc("00:00:05:30", 60).total_frames(), 330);
    }

    #[test]
    fn from_total_frames_examples() {
        let r = FrameRate::FPS_60;
        assert_eq!(Timecode::from_total_frames(0, r).unwrap(), tc("00:00:00:00", 60));
        assert_eq!(Timecode::from_total_frames(330, r).unwrap(), tc("00:00:05:30", 60));
        assert_eq!(
            Timecode::from_total_frames(216_000, r).unwrap(),
            tc("01:00:00:00", 60)
        );
        assert!(Timecode::from_total_frames(r.frames_per_day(), r).is_err());
        assert_eq!(
            Timecode::from_total_frames(r.frames_per_day() - 1, r)
                .unwrap()
                .to_string(),
            "23:59:59:59"
        );
    }

    #[test]
    fn add_frames_carry_and_borrow() {
        assert_eq!(tc("00:00:00:00", 30).add_frames(1).unwrap(), tc("00:00:00:01", 30));
        assert_eq!(tc("00:00:00:29", 30).add_frames(1).unwrap(), tc("00:00:01:00", 30));
        assert_eq!(tc("00:00:01:00", 30).add_frames(-1).unwrap(), tc("00:00:00:29", 30));
    }

    #[test]
    fn add_frames_range_errors() {
        assert!(matches!(
            tc("00:00:00:00", 30).add_frames(-1),
            Err(TimecodeError::OutOfDay { frames: -1, .. })
        ));
        assert!(tc("23:59:59:29", 30).add_frames(1).is_err());
    }

    #[test]
    fn to_sample_time_examples() {
        assert_eq!(tc("00:00:01:00", 60).to_sample_time(48_000).unwrap().sample_index, 48_000);
        assert_eq!(tc("00:00:00:30", 60).to_sample_time(48_000).unwrap().sample_index, 24_000);
        assert_eq!(tc("00:00:00:01", 60).to_sample_time(44_100).unwrap().sample_index, 735);
        // 1837.5 samples per frame at 24 fps / 44.1 kHz rounds away from zero
        assert_eq!(tc("00:00:00:01", 24).to_sample_time(44_100).unwrap().sample_index, 1838);
        assert_eq!(tc("00:00:00:01", 24).to_sample_time(0), Err(TimecodeError::ZeroSampleRate));
    }

    #[test]
    fn rounding_helper() {
        assert_eq!(div_round_half_away(3, 2), 2);
        assert_eq!(div_round_half_away(-3, 2), -2);
        assert_eq!(div_round_half_away(5, 4), 1);
        assert_eq!(div_round_half_away(-5, 4), -1);
        assert_eq!(div_round_half_away(0, 7), 0);
    }

    #[test]
    fn samples_between_mixed_rates() {
        let a = tc("14:03:00:00", 30);
        let v = tc("14:03:10:30", 60);
        assert_eq!(samples_between(&a, &v, 48_000), 504_000);
        assert_eq!(samples_between(&v, &a, 48_000), -504_000);
    }

    #[test]
    fn parse_and_display() {
        let t = tc("14:03:10:30", 60);
        assert_eq!(t.to_string(), "14:03:10:30");
        assert_eq!((t.hours(), t.minutes(), t.seconds(), t.frames()), (14, 3, 10, 30));
    }

    #[test]
    fn parse_reports_position() {
        let r = FrameRate::FPS_30;
        let pos = |s: &str| match Timecode::parse(s, r) {
            Err(TimecodeError::Parse { position, .. }) => position,
            other => panic!("expected parse error for {s:?}, got {other:?}"),
        };
        assert_eq!(pos("00:0x:00:00"), 4);
        assert_eq!(pos("00-00:00:00"), 2);
        assert_eq!(pos("24:00:00:00"), 0);
        assert_eq!(pos("00:00:00:30"), 9);
        assert_eq!(pos("0:00:00:00"), 10);
        assert_eq!(pos("00:00:00:000"), 11);
    }

    fn any_timecode() -> impl Strategy<Value = Timecode> {
        (0usize..5).prop_flat_map(|ri| {
            let rate = FrameRate::new(FrameRate::SUPPORTED[ri]).unwrap();
            (0u32..24, 0u32..60, 0u32..60, 0..rate.fps())
                .prop_map(move |(h, m, s, f)| Timecode::new(h, m, s, f, rate).unwrap())
        })
    }

    proptest! {
        #[test]
        fn roundtrip_total_frames(t in any_timecode()) {
            prop_assert_eq!(Timecode::from_total_frames(t.total_frames(), t.rate()).unwrap(), t);
        }

        #[test]
        fn roundtrip_text(t in any_timecode()) {
            prop_assert_eq!(Timecode::parse(&t.to_string(), t.rate()).unwrap(), t);
        }

        #[test]
        fn additivity(t in any_timecode(), a in -100_000i64..100_000, b in -100_000i64..100_000) {
            if let (Ok(ab), Ok(sum)) = (t.add_frames(a).and_then(|x| x.add_frames(b)), t.add_frames(a + b)) {
                prop_assert_eq!(ab, sum);
            }
            if let Ok(x) = t.add_frames(a) {
                prop_assert_eq!(x.total_frames() as i64, t.total_frames() as i64 + a);
            }
        }

        #[test]
        fn monotone_under_lexicographic_order(a in any_timecode(), b in any_timecode()) {
            let b = Timecode::new(b.hours(), b.minutes(), b.seconds(), b.frames().min(a.rate().fps() - 1), a.rate()).unwrap();
            let ka = (a.hours(), a.minutes(), a.seconds(), a.frames());
            let kb = (b.hours(), b.minutes(), b.seconds(), b.frames());
            prop_assert_eq!(ka.cmp(&kb), a.total_frames().cmp(&b.total_frames()));
        }
    }
}
