//! The 80-bit LTC frame word.
//!
//! Bit numbering follows transmission order. Timecode digits are BCD with the
//! least significant bit first:
//!
//! | bits    | field              | bits    | field             |
//! |---------|--------------------|---------|-------------------|
//! | 0-3     | frame units        | 32-35   | minute units      |
//! | 8-9     | frame tens         | 40-42   | minute tens       |
//! | 10      | drop-frame flag    | 48-51   | hour units        |
//! | 11      | color-frame flag   | 56-57   | hour tens         |
//! | 16-19   | second units       | 64-79   | sync word         |
//! | 24-26   | second tens        |         |                   |
//!
//! User-bit nibbles sit at 4, 12, 20, 28, 36, 44, 52 and 60. Bits 27, 43, 58
//! and 59 are flags; the polarity (parity) bit is 27 at 24/30/60 fps and 59 at
//! 25/50 fps.
//!
//! The two frame-tens bits only reach 39, so at 50 and 60 fps the frame
//! digits carry the frame *pair* number (`frame / 2`) and bit 11 marks the
//! second frame of the pair.

use crate::timecode::{FrameRate, Timecode};

pub const FRAME_BITS: usize = 80;

/// Bits 64..=79 in transmission order.
pub const SYNC_WORD: [bool; 16] = [
    false, false, true, true, true, true, true, true, true, true, true, true, true, true, false,
    true,
];

const USER_NIBBLES: [usize; 8] = [4, 12, 20, 28, 36, 44, 52, 60];
const PAIR_FLAG_BIT: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFault {
    SyncWord,
    Bcd { bit: usize },
    Range,
    Parity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LtcFrame {
    bits: [u8; 10],
}

/// Whether frames at `rate` use the pair-number encoding.
pub fn uses_frame_pairs(rate: FrameRate) -> bool {
    rate.fps() > 30
}

pub fn parity_bit(rate: FrameRate) -> usize {
    match rate.fps() {
        25 | 50 => 59,
        _ => 27,
    }
}

impl LtcFrame {
    pub fn from_bits(bits: &[bool]) -> LtcFrame {
        assert_eq!(bits.len(), FRAME_BITS);
        let mut f = LtcFrame { bits: [0; 10] };
        for (i, &b) in bits.iter().enumerate() {
            f.set_bit(i, b);
        }
        f
    }

    /// Builds the frame for `tc` with the given user bits, sync word and
    /// polarity bit.
    pub fn encode(tc: &Timecode, user_bits: u32) -> LtcFrame {
        let mut f = LtcFrame { bits: [0; 10] };
        let rate = tc.rate();
        let (frame_digits, pair) = if uses_frame_pairs(rate) {
            (tc.frames() / 2, tc.frames() % 2 == 1)
        } else {
            (tc.frames(), false)
        };
        f.put_bcd(0, 4, 8, 2, frame_digits);
        f.set_bit(PAIR_FLAG_BIT, pair);
        f.put_bcd(16, 4, 24, 3, tc.seconds());
        f.put_bcd(32, 4, 40, 3, tc.minutes());
        f.put_bcd(48, 4, 56, 2, tc.hours());
        for (k, &pos) in USER_NIBBLES.iter().enumerate() {
            f.put_field(pos, 4, (user_bits >> (4 * k)) & 0xF);
        }
        for (i, &b) in SYNC_WORD.iter().enumerate() {
            f.set_bit(64 + i, b);
        }
        if f.zero_count() % 2 == 1 {
            f.set_bit(parity_bit(rate), true);
        }
        f
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i / 8] >> (i % 8) & 1 == 1
    }

    fn set_bit(&mut self, i: usize, v: bool) {
        if v {
            self.bits[i / 8] |= 1 << (i % 8);
        } else {
            self.bits[i / 8] &= !(1 << (i % 8));
        }
    }

    pub fn iter_bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..FRAME_BITS).map(move |i| self.bit(i))
    }

    pub fn zero_count(&self) -> usize {
        self.iter_bits().filter(|b| !b).count()
    }

    pub fn sync_ok(&self) -> bool {
        SYNC_WORD.iter().enumerate().all(|(i, &b)| self.bit(64 + i) == b)
    }

    /// Raw user bits, nibble `k` in bits `4k..4k+4`.
    pub fn user_bits(&self) -> u32 {
        USER_NIBBLES
            .iter()
            .enumerate()
            .fold(0, |acc, (k, &pos)| acc | self.field(pos, 4) << (4 * k))
    }

    fn field(&self, pos: usize, width: usize) -> u32 {
        (0..width).fold(0, |acc, i| acc | u32::from(self.bit(pos + i)) << i)
    }

    fn put_field(&mut self, pos: usize, width: usize, value: u32) {
        for i in 0..width {
            self.set_bit(pos + i, value >> i & 1 == 1);
        }
    }

    fn put_bcd(&mut self, units_at: usize, units_w: usize, tens_at: usize, tens_w: usize, v: u32) {
        self.put_field(units_at, units_w, v % 10);
        self.put_field(tens_at, tens_w, v / 10);
    }

    fn bcd(&self, units_at: usize, tens_at: usize, tens_w: usize) -> Result<u32, FrameFault> {
        let units = self.field(units_at, 4);
        if units > 9 {
            return Err(FrameFault::Bcd { bit: units_at });
        }
        Ok(self.field(tens_at, tens_w) * 10 + units)
    }

    /// Validates sync word and digit fields and returns the timecode at
    /// `rate`. The parity bit is checked only when `check_parity` is set.
    pub fn decode(&self, rate: FrameRate, check_parity: bool) -> Result<Timecode, FrameFault> {
        if !self.sync_ok() {
            return Err(FrameFault::SyncWord);
        }
        if check_parity && self.zero_count() % 2 == 1 {
            return Err(FrameFault::Parity);
        }
        let mut frames = self.bcd(0, 8, 2)?;
        if uses_frame_pairs(rate) {
            frames = frames * 2 + u32::from(self.bit(PAIR_FLAG_BIT));
        }
        let seconds = self.bcd(16, 24, 3)?;
        let minutes = self.bcd(32, 40, 3)?;
        let hours = self.bcd(48, 56, 2)?;
        Timecode::new(hours, minutes, seconds, frames, rate).map_err(|_| FrameFault::Range)
    }
}
