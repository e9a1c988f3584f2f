//! WAV and spectrogram file persistence.
//!
//! Spectrogram files are little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "PHFLOW01"
//! 8       4     frame length N
//! 12      4     hop H
//! 16      4     bins K
//! 20      4     frames L
//! 24      4     sample rate
//! 28      4     window kind (0 hann, 1 rectangular, 2 custom)
//! 32      4     payload kind (0 magnitude, 1 complex)
//! 36      ...   K*L f64 magnitudes, or K*L interleaved (re, im) f64 pairs,
//!               row-major over (k, l)
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stft::{MagnitudeSpectrogram, Spectrogram, StftConfig, WindowKind};

pub const SPEC_MAGIC: &[u8; 8] = b"PHFLOW01";
pub const SPEC_HEADER_LEN: usize = 36;

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Mono audio at the file boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn from_real<T: Real>(samples: &[T], sample_rate: u32) -> Result<Self> {
        Self::new(samples.iter().map(|s| s.to_f64_lossy() as f32).collect(), sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn to_real<T: Real>(&self) -> Vec<T> {
        self.samples.iter().map(|&s| T::from_f64_lossy(f64::from(s))).collect()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(offset: usize, reason: impl Into<String>) -> Error {
    Error::Malformed {
        what: "wav",
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

struct WavFormat {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_wav(&bytes)
}

/// Parses a mono RIFF/WAVE image holding 16-bit PCM or 32-bit float samples.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 {
        return Err(malformed(bytes.len(), "file ends inside the RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed(0, "missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut format: Option<WavFormat> = None;
    loop {
        if pos + 8 > bytes.len() {
            return Err(malformed(bytes.len(), "no data chunk before end of file"));
        }
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + size > bytes.len() {
                    return Err(malformed(body, format!("fmt chunk of {size} bytes is truncated or too short")));
                }
                let mut tag = u16_at(bytes, body);
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(malformed(body, "extensible fmt chunk shorter than 40 bytes"));
                    }
                    tag = u16_at(bytes, body + 24);
                }
                format = Some(WavFormat {
                    tag,
                    channels: u16_at(bytes, body + 2),
                    sample_rate: u32_at(bytes, body + 4),
                    bits: u16_at(bytes, body + 14),
                });
            }
            b"data" => {
                let fmt = format.ok_or_else(|| malformed(pos, "data chunk precedes fmt chunk"))?;
                let available = bytes.len() - body;
                if size > available {
                    return Err(malformed(
                        bytes.len(),
                        format!("data chunk declares {size} bytes but only {available} remain after offset {body}"),
                    ));
                }
                return decode_samples(&fmt, &bytes[body..body + size], body);
            }
            _ => {
                if body + size > bytes.len() {
                    return Err(malformed(bytes.len(), format!("chunk at offset {pos} is truncated")));
                }
            }
        }
        pos = body + size + (size & 1);
    }
}

fn decode_samples(fmt: &WavFormat, data: &[u8], offset: usize) -> Result<AudioBuffer> {
    if fmt.channels != 1 {
        return Err(Error::Unsupported {
            what: "wav layout",
            reason: format!("{} channels; only mono is supported", fmt.channels),
        });
    }
    let samples = match (fmt.tag, fmt.bits) {
        (WAVE_FORMAT_PCM, 16) => {
            if !data.len().is_multiple_of(2) {
                return Err(malformed(offset + data.len() - 1, "odd byte count in 16-bit data"));
            }
            data.chunks_exact(2)
                .map(|b| f32::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
                .collect()
        }
        (WAVE_FORMAT_IEEE_FLOAT, 32) => {
            if !data.len().is_multiple_of(4) {
                return Err(malformed(offset + data.len() - data.len() % 4, "partial sample in float data"));
            }
            data.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        }
        (tag, bits) => {
            return Err(Error::Unsupported {
                what: "wav codec",
                reason: format!("format tag {tag} with {bits} bits per sample"),
            })
        }
    };
    AudioBuffer::new(samples, fmt.sample_rate)
}

/// Writes 32-bit float samples; [`read_wav`] returns them bit for bit.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    write_wav_as(path, audio, SampleFormat::Float32)
}

pub fn write_wav_as(path: impl AsRef<Path>, audio: &AudioBuffer, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(audio, format)).map_err(|e| io_err(path, e))
}

/// 16-bit output clamps to [-1, 1).
pub fn encode_wav(audio: &AudioBuffer, format: SampleFormat) -> Vec<u8> {
    let (tag, bits) = match format {
        SampleFormat::Pcm16 => (WAVE_FORMAT_PCM, 16u16),
        SampleFormat::Float32 => (WAVE_FORMAT_IEEE_FLOAT, 32u16),
    };
    let block = u32::from(bits / 8);
    let data_len = audio.samples.len() as u32 * block;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * block).to_le_bytes());
    out.extend_from_slice(&(block as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &audio.samples {
        match format {
            SampleFormat::Pcm16 => {
                let v = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            SampleFormat::Float32 => out.extend_from_slice(&s.to_le_bytes()),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Magnitude,
    Complex,
}

impl PayloadKind {
    pub fn code(self) -> u32 {
        match self {
            PayloadKind::Magnitude => 0,
            PayloadKind::Complex => 1,
        }
    }

    fn values_per_bin(self) -> usize {
        match self {
            PayloadKind::Magnitude => 1,
            PayloadKind::Complex => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecHeader {
    pub frame_len: u32,
    pub hop: u32,
    pub bins: u32,
    pub frames: u32,
    pub sample_rate: u32,
    pub window: WindowKind,
    pub payload: PayloadKind,
}

impl SpecHeader {
    pub fn for_config<T: Real>(config: &StftConfig<T>, frames: usize, payload: PayloadKind) -> Result<Self> {
        let narrow = |name: &str, v: usize| {
            u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{name} {v} does not fit in 32 bits")))
        };
        Ok(Self {
            frame_len: narrow("frame length", config.frame_len())?,
            hop: narrow("hop", config.hop())?,
            bins: narrow("bins", config.bins())?,
            frames: narrow("frames", frames)?,
            sample_rate: config.sample_rate(),
            window: config.window_kind(),
            payload,
        })
    }

    /// Rebuilds the STFT configuration; custom windows are not recoverable.
    pub fn stft_config<T: Real>(&self) -> Result<StftConfig<T>> {
        if self.window == WindowKind::Custom {
            return Err(Error::Unsupported {
                what: "spectrogram file",
                reason: "custom window coefficients are not stored".into(),
            });
        }
        StftConfig::new(self.frame_len as usize, self.hop as usize, self.window, self.sample_rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpecPayload {
    Magnitude(MagnitudeSpectrogram<f64>),
    Complex(Spectrogram<f64>),
}

impl SpecPayload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            SpecPayload::Magnitude(_) => PayloadKind::Magnitude,
            SpecPayload::Complex(_) => PayloadKind::Complex,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            SpecPayload::Magnitude(m) => m.dims(),
            SpecPayload::Complex(c) => c.dims(),
        }
    }

    /// Magnitudes, taking `|X|` of complex payloads.
    pub fn magnitude(&self) -> MagnitudeSpectrogram<f64> {
        match self {
            SpecPayload::Magnitude(m) => m.clone(),
            SpecPayload::Complex(c) => c.magnitude(),
        }
    }
}

fn spec_malformed(offset: usize, reason: impl Into<String>) -> Error {
    Error::Malformed {
        what: "spectrogram file",
        offset: offset as u64,
        reason: reason.into(),
    }
}

pub fn encode_specfile(header: &SpecHeader, payload: &SpecPayload) -> Result<Vec<u8>> {
    let (k, l) = payload.dims();
    if (header.bins as usize, header.frames as usize) != (k, l) || header.payload != payload.kind() {
        return Err(Error::dims((header.bins as usize, header.frames as usize), (k, l)));
    }
    if header.window == WindowKind::Custom {
        return Err(Error::Unsupported {
            what: "spectrogram file",
            reason: "custom windows cannot be recorded in the header".into(),
        });
    }
    let mut out = Vec::with_capacity(SPEC_HEADER_LEN + 8 * k * l * header.payload.values_per_bin());
    out.extend_from_slice(SPEC_MAGIC);
    for v in [
        header.frame_len,
        header.hop,
        header.bins,
        header.frames,
        header.sample_rate,
        header.window.code(),
        header.payload.code(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match payload {
        SpecPayload::Magnitude(m) => {
            for &v in m.data().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        SpecPayload::Complex(c) => {
            for v in c.data().iter() {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_specfile(bytes: &[u8]) -> Result<(SpecHeader, SpecPayload)> {
    if bytes.len() < SPEC_HEADER_LEN {
        return Err(spec_malformed(bytes.len(), "file ends inside the 36-byte header"));
    }
    if &bytes[..8] != SPEC_MAGIC {
        return Err(spec_malformed(0, "bad magic; expected PHFLOW01"));
    }
    let field = |i: usize| u32_at(bytes, 8 + 4 * i);
    let window = WindowKind::from_code(field(5))
        .ok_or_else(|| spec_malformed(28, format!("unknown window kind {}", field(5))))?;
    let payload = match field(6) {
        0 => PayloadKind::Magnitude,
        1 => PayloadKind::Complex,
        other => return Err(spec_malformed(32, format!("unknown payload kind {other}"))),
    };
    let header = SpecHeader {
        frame_len: field(0),
        hop: field(1),
        bins: field(2),
        frames: field(3),
        sample_rate: field(4),
        window,
        payload,
    };
    if header.frame_len < 2 || header.bins != header.frame_len / 2 + 1 {
        return Err(spec_malformed(
            16,
            format!("bins {} inconsistent with frame length {}", header.bins, header.frame_len),
        ));
    }
    let (k, l) = (header.bins as usize, header.frames as usize);
    let expected = k
        .checked_mul(l)
        .and_then(|n| n.checked_mul(8 * payload.values_per_bin()))
        .ok_or_else(|| spec_malformed(16, "payload size overflows"))?;
    let available = bytes.len() - SPEC_HEADER_LEN;
    if available < expected {
        return Err(spec_malformed(
            bytes.len(),
            format!("truncated payload: header implies {expected} bytes, {available} present"),
        ));
    }
    if available > expected {
        return Err(spec_malformed(
            SPEC_HEADER_LEN + expected,
            format!("{} trailing bytes after payload", available - expected),
        ));
    }
    let values = bytes[SPEC_HEADER_LEN..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
    let payload = match payload {
        PayloadKind::Magnitude => {
            let data = Array2::from_shape_vec((k, l), values.collect()).expect("length checked");
            SpecPayload::Magnitude(MagnitudeSpectrogram::new(data)?)
        }
        PayloadKind::Complex => {
            let vals: Vec<f64> = values.collect();
            let pairs = vals.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect();
            let data = Array2::from_shape_vec((k, l), pairs).expect("length checked");
            SpecPayload::Complex(Spectrogram::new(data)?)
        }
    };
    Ok((header, payload))
}

pub fn write_specfile(path: impl AsRef<Path>, header: &SpecHeader, payload: &SpecPayload) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_specfile(header, payload)?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_specfile(path: impl AsRef<Path>) -> Result<(SpecHeader, SpecPayload)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_specfile(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pcm16_scaling() {
        let audio = AudioBuffer::new(vec![0.5, -1.0, 0.0], 16000).unwrap();
        let bytes = encode_wav(&audio, SampleFormat::Pcm16);
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 16384);
        let back = parse_wav(&bytes).unwrap();
        assert_eq!(back.samples(), &[0.5, -1.0, 0.0]);
        assert_eq!(back.sample_rate(), 16000);
    }

    #[test]
    fn truncated_data_names_offset() {
        let audio = AudioBuffer::new(vec![0.25; 10], 8000).unwrap();
        let mut bytes = encode_wav(&audio, SampleFormat::Float32);
        bytes.truncate(44 + 17);
        match parse_wav(&bytes) {
            Err(Error::Malformed { offset, reason, .. }) => {
                assert_eq!(offset, 61);
                assert!(reason.contains("40 bytes"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_multichannel_and_codecs() {
        let audio = AudioBuffer::new(vec![0.0; 4], 8000).unwrap();
        let mut stereo = encode_wav(&audio, SampleFormat::Pcm16);
        stereo[22] = 2;
        assert!(matches!(parse_wav(&stereo), Err(Error::Unsupported { what: "wav layout", .. })));
        let mut alaw = encode_wav(&audio, SampleFormat::Pcm16);
        alaw[20] = 6;
        assert!(matches!(parse_wav(&alaw), Err(Error::Unsupported { what: "wav codec", .. })));
        assert!(matches!(parse_wav(b"RIFX0000WAVE"), Err(Error::Malformed { .. })));
        assert!(matches!(parse_wav(b"RIFF"), Err(Error::Malformed { .. })));
    }

    #[test]
    fn skips_unknown_chunks() {
        let audio = AudioBuffer::new(vec![0.125, -0.5], 22050).unwrap();
        let plain = encode_wav(&audio, SampleFormat::Float32);
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&plain[36..]);
        assert_eq!(parse_wav(&bytes).unwrap(), audio);
    }

    #[test]
    fn audio_validation() {
        assert!(AudioBuffer::new(vec![f32::NAN], 8000).is_err());
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
    }

    fn header(k: u32, l: u32, payload: PayloadKind) -> SpecHeader {
        SpecHeader {
            frame_len: (k - 1) * 2,
            hop: 2,
            bins: k,
            frames: l,
            sample_rate: 8000,
            window: WindowKind::Hann,
            payload,
        }
    }

    #[test]
    fn magnitude_layout_is_row_major() {
        let mag = MagnitudeSpectrogram::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let bytes = encode_specfile(&header(3, 2, PayloadKind::Magnitude), &SpecPayload::Magnitude(mag)).unwrap();
        assert_eq!(&bytes[..8], b"PHFLOW01");
        assert_eq!(u32_at(&bytes, 8), 4);
        assert_eq!(u32_at(&bytes, 16), 3);
        assert_eq!(u32_at(&bytes, 20), 2);
        assert_eq!(u32_at(&bytes, 32), 0);
        let second = f64::from_le_bytes(bytes[44..52].try_into().unwrap());
        assert_eq!(second, 2.0);
        assert_eq!(bytes.len(), 36 + 6 * 8);
    }

    #[test]
    fn negative_magnitude_fails_on_read() {
        let mag = MagnitudeSpectrogram::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let mut bytes = encode_specfile(&header(3, 2, PayloadKind::Magnitude), &SpecPayload::Magnitude(mag)).unwrap();
        bytes[36 + 8 * 3..36 + 8 * 4].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(matches!(decode_specfile(&bytes), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn header_overclaims_payload() {
        let mag = MagnitudeSpectrogram::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let mut bytes = encode_specfile(&header(3, 2, PayloadKind::Magnitude), &SpecPayload::Magnitude(mag)).unwrap();
        bytes[20..24].copy_from_slice(&3u32.to_le_bytes());
        match decode_specfile(&bytes) {
            Err(Error::Malformed { reason, offset, .. }) => {
                assert!(reason.contains("truncated"));
                assert_eq!(offset, bytes.len() as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut extra = bytes.clone();
        extra[20..24].copy_from_slice(&1u32.to_le_bytes());
        assert!(matches!(decode_specfile(&extra), Err(Error::Malformed { .. })));
    }

    #[test]
    fn bad_magic_and_codes() {
        let mag = MagnitudeSpectrogram::new(array![[1.0], [2.0], [3.0]]).unwrap();
        let good = encode_specfile(&header(3, 1, PayloadKind::Magnitude), &SpecPayload::Magnitude(mag)).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_specfile(&bad), Err(Error::Malformed { offset: 0, .. })));
        let mut bad = good.clone();
        bad[28] = 9;
        assert!(matches!(decode_specfile(&bad), Err(Error::Malformed { offset: 28, .. })));
        let mut bad = good.clone();
        bad[32] = 7;
        assert!(matches!(decode_specfile(&bad), Err(Error::Malformed { offset: 32, .. })));
        let mut bad = good;
        bad[16] = 4;
        assert!(matches!(decode_specfile(&bad), Err(Error::Malformed { .. })));
        assert!(decode_specfile(b"PHFLOW01").is_err());
    }

    #[test]
    fn header_to_config() {
        let cfg = StftConfig::<f64>::speech_default(16000).unwrap();
        let h = SpecHeader::for_config(&cfg, 10, PayloadKind::Magnitude).unwrap();
        assert_eq!((h.frame_len, h.hop, h.bins), (512, 128, 257));
        assert_eq!(h.stft_config::<f64>().unwrap(), cfg);
    }
}
