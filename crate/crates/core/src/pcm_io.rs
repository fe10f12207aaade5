//! Multi-channel integer PCM in RIFF/WAVE containers.
//!
//! Samples are held per channel as `f32` normalized by `2^(bits-1)`. For 16-
//! and 24-bit sources that representation is exact, so reading, trimming and
//! writing back at the source depth reproduces the original integer codes.
//!
//! The reader accepts plain `WAVE_FORMAT_PCM` and `WAVE_FORMAT_EXTENSIBLE`
//! headers and skips unknown chunks. The writer always emits one canonical
//! layout (see [`write_wav_to`]).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use thiserror::Error;

use crate::timecode::SampleTime;

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;
const MAX_CHANNELS: u16 = 64;

/// KSDATAFORMAT_SUBTYPE_PCM without its leading format-code word.
const PCM_SUBFORMAT_TAIL: [u8; 14] = [
    0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80, 0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71,
];

#[derive(Debug, Error)]
pub enum WavError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed WAV at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },
    #[error("unsupported WAV at byte {offset}: {reason}")]
    Unsupported { offset: u64, reason: String },
    #[error("truncated data chunk at byte {offset}: header claims {claimed} bytes, {available} present")]
    Truncated {
        offset: u64,
        claimed: u64,
        available: u64,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PcmError {
    #[error("channel {index} out of range for {channels}-channel buffer")]
    ChannelOutOfRange { index: usize, channels: usize },
    #[error("trim range {start}..{end} invalid for buffer of {len} samples")]
    TrimRange { start: u64, end: u64, len: u64 },
    #[error("sample rate mismatch: buffer {buffer} Hz, requested {requested} Hz")]
    RateMismatch { buffer: u32, requested: u32 },
    #[error("channels have unequal lengths")]
    RaggedChannels,
    #[error("a buffer needs at least one channel and a positive sample rate")]
    EmptyLayout,
    #[error("cannot join buffers with different layouts")]
    LayoutMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BitDepth {
    Sixteen,
    TwentyFour,
}

impl BitDepth {
    pub fn from_bits(bits: u16) -> Option<BitDepth> {
        match bits {
            16 => Some(BitDepth::Sixteen),
            24 => Some(BitDepth::TwentyFour),
            _ => None,
        }
    }

    pub fn bits(self) -> u16 {
        match self {
            BitDepth::Sixteen => 16,
            BitDepth::TwentyFour => 24,
        }
    }

    pub fn bytes(self) -> usize {
        usize::from(self.bits() / 8)
    }

    /// `2^(bits-1)`: the integer code of full scale.
    pub fn scale(self) -> f64 {
        f64::from(1u32 << (self.bits() - 1))
    }

    fn max_code(self) -> i32 {
        (1i32 << (self.bits() - 1)) - 1
    }

    /// Nearest integer code for a normalized sample, clamped to the range.
    pub fn quantize(self, x: f32) -> i32 {
        let max = self.max_code();
        let code = (f64::from(x) * self.scale()).round();
        code.clamp(f64::from(-max - 1), f64::from(max)) as i32
    }

    pub fn dequantize(self, code: i32) -> f32 {
        (f64::from(code) / self.scale()) as f32
    }
}

/// Non-interleaved multi-channel audio.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmBuffer {
    sample_rate: u32,
    bit_depth: BitDepth,
    channels: Vec<Vec<f32>>,
}

impl PcmBuffer {
    pub fn new(
        sample_rate: u32,
        bit_depth: BitDepth,
        channels: Vec<Vec<f32>>,
    ) -> Result<Self, PcmError> {
        if channels.is_empty() || sample_rate == 0 {
            return Err(PcmError::EmptyLayout);
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(PcmError::RaggedChannels);
        }
        Ok(PcmBuffer {
            sample_rate,
            bit_depth,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, bit_depth: BitDepth, samples: Vec<f32>) -> Result<Self, PcmError> {
        PcmBuffer::new(sample_rate, bit_depth, vec![samples])
    }

    /// All-zero buffer.
    pub fn silence(
        sample_rate: u32,
        bit_depth: BitDepth,
        channels: usize,
        len: usize,
    ) -> Result<Self, PcmError> {
        PcmBuffer::new(sample_rate, bit_depth, vec![vec![0.0; len]; channels])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Length in sample frames.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, index: usize) -> Option<&[f32]> {
        self.channels.get(index).map(Vec::as_slice)
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f32>> {
        self.channels
    }

    /// Snaps every sample onto the integer grid of the declared bit depth.
    pub fn quantize(&mut self) {
        let depth = self.bit_depth;
        for ch in &mut self.channels {
            for x in ch.iter_mut() {
                *x = depth.dequantize(depth.quantize(*x));
            }
        }
    }

    pub fn extract_channel(&self, index: usize) -> Result<PcmBuffer, PcmError> {
        let ch = self.channels.get(index).ok_or(PcmError::ChannelOutOfRange {
            index,
            channels: self.channels.len(),
        })?;
        Ok(PcmBuffer {
            sample_rate: self.sample_rate,
            bit_depth: self.bit_depth,
            channels: vec![ch.clone()],
        })
    }

    /// Samples `[start, end)` on every channel, unchanged.
    pub fn trim(&self, start: SampleTime, end: SampleTime) -> Result<PcmBuffer, PcmError> {
        for t in [start, end] {
            if t.sample_rate != self.sample_rate {
                return Err(PcmError::RateMismatch {
                    buffer: self.sample_rate,
                    requested: t.sample_rate,
                });
            }
        }
        let (s, e) = (start.sample_index, end.sample_index);
        let len = self.len() as u64;
        if s > e || e > len {
            return Err(PcmError::TrimRange {
                start: s,
                end: e,
                len,
            });
        }
        let range = s as usize..e as usize;
        Ok(PcmBuffer {
            sample_rate: self.sample_rate,
            bit_depth: self.bit_depth,
            channels: self.channels.iter().map(|c| c[range.clone()].to_vec()).collect(),
        })
    }

    /// Appends `other` in time. Layouts must match.
    pub fn concat(&self, other: &PcmBuffer) -> Result<PcmBuffer, PcmError> {
        if self.sample_rate != other.sample_rate
            || self.bit_depth != other.bit_depth
            || self.channel_count() != other.channel_count()
        {
            return Err(PcmError::LayoutMismatch);
        }
        let channels = self
            .channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        Ok(PcmBuffer {
            channels,
            ..*self
        })
    }

    /// Stacks the channels of several equal-length buffers, in order.
    pub fn merge_channels(parts: &[PcmBuffer]) -> Result<PcmBuffer, PcmError> {
        let first = parts.first().ok_or(PcmError::EmptyLayout)?;
        let mut channels = Vec::new();
        for p in parts {
            if p.sample_rate != first.sample_rate
                || p.bit_depth != first.bit_depth
                || p.len() != first.len()
            {
                return Err(PcmError::LayoutMismatch);
            }
            channels.extend(p.channels.iter().cloned());
        }
        PcmBuffer::new(first.sample_rate, first.bit_depth, channels)
    }

    pub fn without_channel(&self, index: usize) -> Result<PcmBuffer, PcmError> {
        if index >= self.channel_count() {
            return Err(PcmError::ChannelOutOfRange {
                index,
                channels: self.channel_count(),
            });
        }
        if self.channel_count() == 1 {
            return Err(PcmError::EmptyLayout);
        }
        let mut channels = self.channels.clone();
        channels.remove(index);
        Ok(PcmBuffer { channels, ..*self })
    }
}

/// Header facts of a WAV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavSpec {
    pub channels: u16,
    pub sample_rate: u32,
    pub bit_depth: BitDepth,
    /// Sample frames in the data chunk.
    pub frames: u64,
}

/// Header-parsed WAV source positioned at the start of sample data.
pub struct WavReader<R> {
    inner: R,
    spec: WavSpec,
    data_offset: u64,
}

impl WavReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, WavError> {
        WavReader::new(BufReader::new(File::open(path)?))
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<(), WavError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WavError::Malformed {
            offset,
            reason: format!("unexpected end of file reading {what}"),
        },
        _ => WavError::Io(e),
    })
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

impl<R: Read + Seek> WavReader<R> {
    pub fn new(mut inner: R) -> Result<Self, WavError> {
        let file_len = inner.seek(SeekFrom::End(0))?;
        inner.seek(SeekFrom::Start(0))?;

        let mut riff = [0u8; 12];
        read_exact_at(&mut inner, &mut riff, 0, "RIFF header")?;
        if &riff[0..4] != b"RIFF" {
            return Err(WavError::Malformed {
                offset: 0,
                reason: "missing RIFF tag".into(),
            });
        }
        if &riff[8..12] != b"WAVE" {
            return Err(WavError::Malformed {
                offset: 8,
                reason: "missing WAVE form type".into(),
            });
        }

        let mut pos = 12u64;
        let mut fmt: Option<(u16, u32, BitDepth)> = None;
        loop {
            if pos + 8 > file_len {
                return Err(WavError::Malformed {
                    offset: pos,
                    reason: if fmt.is_none() {
                        "no fmt chunk".into()
                    } else {
                        "no data chunk".into()
                    },
                });
            }
            let mut hdr = [0u8; 8];
            read_exact_at(&mut inner, &mut hdr, pos, "chunk header")?;
            let size = u64::from(u32_at(&hdr, 4));
            let body = pos + 8;
            match &hdr[0..4] {
                b"fmt " => {
                    fmt = Some(parse_fmt(&mut inner, body, size)?);
                }
                b"data" => {
                    let (channels, sample_rate, bit_depth) = fmt.ok_or(WavError::Malformed {
                        offset: pos,
                        reason: "data chunk before fmt chunk".into(),
                    })?;
                    let available = file_len - body;
                    if size > available {
                        return Err(WavError::Truncated {
                            offset: body,
                            claimed: size,
                            available,
                        });
                    }
                    let block = u64::from(channels) * bit_depth.bytes() as u64;
                    inner.seek(SeekFrom::Start(body))?;
                    return Ok(WavReader {
                        inner,
                        spec: WavSpec {
                            channels,
                            sample_rate,
                            bit_depth,
                            frames: size / block,
                        },
                        data_offset: body,
                    });
                }
                _ => {}
            }
            // chunks are word aligned
            pos = body + size + (size & 1);
            inner.seek(SeekFrom::Start(pos))?;
        }
    }

    pub fn spec(&self) -> WavSpec {
        self.spec
    }

    /// Byte offset of the first sample.
    pub fn data_offset(&self) -> u64 {
        self.data_offset
    }

    fn block_align(&self) -> usize {
        usize::from(self.spec.channels) * self.spec.bit_depth.bytes()
    }

    /// Streams sample frames in blocks of up to `block_frames`, decoding each
    /// block into per-channel integer codes.
    fn for_each_block(
        &mut self,
        block_frames: usize,
        mut f: impl FnMut(&[u8], usize),
    ) -> Result<(), WavError> {
        self.inner.seek(SeekFrom::Start(self.data_offset))?;
        let align = self.block_align();
        let mut remaining = self.spec.frames as usize;
        let mut buf = vec![0u8; block_frames.max(1) * align];
        let mut pos = self.data_offset;
        while remaining > 0 {
            let n = remaining.min(block_frames.max(1));
            read_exact_at(&mut self.inner, &mut buf[..n * align], pos, "sample data")?;
            f(&buf[..n * align], n);
            remaining -= n;
            pos += (n * align) as u64;
        }
        Ok(())
    }

    pub fn read_all(mut self) -> Result<PcmBuffer, WavError> {
        let spec = self.spec;
        let nch = usize::from(spec.channels);
        let width = spec.bit_depth.bytes();
        let mut channels = vec![Vec::with_capacity(spec.frames as usize); nch];
        self.for_each_block(8192, |bytes, _| {
            for frame in bytes.chunks_exact(nch * width) {
                for (ch, s) in channels.iter_mut().zip(frame.chunks_exact(width)) {
                    ch.push(spec.bit_depth.dequantize(decode_code(s)));
                }
            }
        })?;
        Ok(PcmBuffer {
            sample_rate: spec.sample_rate,
            bit_depth: spec.bit_depth,
            channels,
        })
    }

    /// Streams one channel to `sink` in blocks without holding the rest of
    /// the file in memory.
    pub fn stream_channel(
        &mut self,
        index: usize,
        block_frames: usize,
        mut sink: impl FnMut(&[f32]),
    ) -> Result<(), WavError> {
        let spec = self.spec;
        if index >= usize::from(spec.channels) {
            return Err(WavError::Unsupported {
                offset: self.data_offset,
                reason: format!("channel {index} requested from {}-channel file", spec.channels),
            });
        }
        let nch = usize::from(spec.channels);
        let width = spec.bit_depth.bytes();
        let mut out = Vec::with_capacity(block_frames);
        self.for_each_block(block_frames, |bytes, _| {
            out.clear();
            out.extend(bytes.chunks_exact(nch * width).map(|frame| {
                let s = &frame[index * width..(index + 1) * width];
                spec.bit_depth.dequantize(decode_code(s))
            }));
            sink(&out);
        })
    }

    pub fn read_channel(mut self, index: usize) -> Result<PcmBuffer, WavError> {
        let spec = self.spec;
        let mut samples = Vec::with_capacity(spec.frames as usize);
        self.stream_channel(index, 8192, |block| samples.extend_from_slice(block))?;
        Ok(PcmBuffer {
            sample_rate: spec.sample_rate,
            bit_depth: spec.bit_depth,
            channels: vec![samples],
        })
    }
}

fn parse_fmt<R: Read>(r: &mut R, body: u64, size: u64) -> Result<(u16, u32, BitDepth), WavError> {
    if size < 16 {
        return Err(WavError::Malformed {
            offset: body,
            reason: format!("fmt chunk of {size} bytes is too short"),
        });
    }
    let mut b = vec![0u8; size.min(64) as usize];
    read_exact_at(r, &mut b, body, "fmt chunk")?;
    let mut tag = u16_at(&b, 0);
    let channels = u16_at(&b, 2);
    let sample_rate = u32_at(&b, 4);
    let block_align = u16_at(&b, 12);
    let bits = u16_at(&b, 14);

    if tag == WAVE_FORMAT_EXTENSIBLE {
        if b.len() < 40 {
            return Err(WavError::Malformed {
                offset: body,
                reason: "extensible fmt chunk shorter than 40 bytes".into(),
            });
        }
        let valid_bits = u16_at(&b, 18);
        if valid_bits != 0 && valid_bits != bits {
            return Err(WavError::Unsupported {
                offset: body + 18,
                reason: format!("{valid_bits} valid bits in {bits}-bit containers"),
            });
        }
        if b[26..40] != PCM_SUBFORMAT_TAIL {
            return Err(WavError::Unsupported {
                offset: body + 24,
                reason: "extensible sub-format is not a known GUID".into(),
            });
        }
        tag = u16_at(&b, 24);
    }
    if tag != WAVE_FORMAT_PCM {
        return Err(WavError::Unsupported {
            offset: body,
            reason: format!("format code {tag:#06x} is not integer PCM"),
        });
    }
    if channels == 0 || channels > MAX_CHANNELS {
        return Err(WavError::Unsupported {
            offset: body + 2,
            reason: format!("{channels} channels (supported 1..={MAX_CHANNELS})"),
        });
    }
    if sample_rate == 0 {
        return Err(WavError::Malformed {
            offset: body + 4,
            reason: "zero sample rate".into(),
        });
    }
    let depth = BitDepth::from_bits(bits).ok_or(WavError::Unsupported {
        offset: body + 14,
        reason: format!("{bits}-bit samples (supported 16, 24)"),
    })?;
    if usize::from(block_align) != usize::from(channels) * depth.bytes() {
        return Err(WavError::Malformed {
            offset: body + 12,
            reason: format!("block align {block_align} inconsistent with {channels}x{bits}-bit"),
        });
    }
    Ok((channels, sample_rate, depth))
}

fn decode_code(s: &[u8]) -> i32 {
    match s.len() {
        2 => i32::from(i16::from_le_bytes([s[0], s[1]])),
        // sign-extend the 24-bit little-endian word
        3 => i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8,
        _ => unreachable!("only 16- and 24-bit samples are decoded"),
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<PcmBuffer, WavError> {
    WavReader::open(path)?.read_all()
}

/// Streams a single channel out of a (possibly very large) file.
pub fn read_wav_channel(path: impl AsRef<Path>, index: usize) -> Result<PcmBuffer, WavError> {
    WavReader::open(path)?.read_channel(index)
}

pub fn write_wav(path: impl AsRef<Path>, buffer: &PcmBuffer, depth: BitDepth) -> Result<(), WavError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_wav_to(&mut w, buffer, depth)?;
    w.flush()?;
    Ok(())
}

/// Writes a canonical little-endian RIFF/WAVE stream.
///
/// Mono/stereo 16-bit uses the 16-byte `WAVE_FORMAT_PCM` header; anything
/// wider or with more channels uses `WAVE_FORMAT_EXTENSIBLE` with a zero
/// channel mask. Samples are quantized to `depth` (round to nearest, clamp).
pub fn write_wav_to<W: Write>(w: &mut W, buffer: &PcmBuffer, depth: BitDepth) -> Result<(), WavError> {
    let nch = buffer.channel_count();
    if nch > usize::from(MAX_CHANNELS) {
        return Err(WavError::Unsupported {
            offset: 22,
            reason: format!("{nch} channels (supported 1..={MAX_CHANNELS})"),
        });
    }
    let width = depth.bytes();
    let block = nch * width;
    let data_len = buffer.len() as u64 * block as u64;
    let extensible = nch > 2 || depth != BitDepth::Sixteen;
    let fmt_len: u32 = if extensible { 40 } else { 16 };
    let riff_len = 4 + (8 + u64::from(fmt_len)) + 8 + data_len + (data_len & 1);
    if riff_len > u64::from(u32::MAX) {
        return Err(WavError::Unsupported {
            offset: 4,
            reason: format!("{data_len} data bytes exceed the RIFF size limit"),
        });
    }

    let mut hdr = Vec::with_capacity(68);
    hdr.extend_from_slice(b"RIFF");
    hdr.extend_from_slice(&(riff_len as u32).to_le_bytes());
    hdr.extend_from_slice(b"WAVE");
    hdr.extend_from_slice(b"fmt ");
    hdr.extend_from_slice(&fmt_len.to_le_bytes());
    let tag = if extensible { WAVE_FORMAT_EXTENSIBLE } else { WAVE_FORMAT_PCM };
    hdr.extend_from_slice(&tag.to_le_bytes());
    hdr.extend_from_slice(&(nch as u16).to_le_bytes());
    hdr.extend_from_slice(&buffer.sample_rate().to_le_bytes());
    hdr.extend_from_slice(&(buffer.sample_rate() * block as u32).to_le_bytes());
    hdr.extend_from_slice(&(block as u16).to_le_bytes());
    hdr.extend_from_slice(&depth.bits().to_le_bytes());
    if extensible {
        hdr.extend_from_slice(&22u16.to_le_bytes());
        hdr.extend_from_slice(&depth.bits().to_le_bytes());
        hdr.extend_from_slice(&0u32.to_le_bytes());
        hdr.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
        hdr.extend_from_slice(&PCM_SUBFORMAT_TAIL);
    }
    hdr.extend_from_slice(b"data");
    hdr.extend_from_slice(&(data_len as u32).to_le_bytes());
    w.write_all(&hdr)?;

    let mut frame = vec![0u8; block];
    for i in 0..buffer.len() {
        for (c, ch) in buffer.channels().iter().enumerate() {
            let code = depth.quantize(ch[i]).to_le_bytes();
            frame[c * width..(c + 1) * width].copy_from_slice(&code[..width]);
        }
        w.write_all(&frame)?;
    }
    if data_len & 1 == 1 {
        w.write_all(&[0])?;
    }
    Ok(())
}
