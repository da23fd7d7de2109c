//! SEG-Y rev1 subset: fixed-length traces, sample formats 1 (IBM float) and
//! 5 (IEEE float), no extended textual headers on write.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seismic::{from_traces, trace, TraceSection};

pub const TEXT_HEADER_LEN: usize = 3200;
pub const BINARY_HEADER_LEN: usize = 400;
pub const TRACE_HEADER_LEN: usize = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    Ibm32,
    Ieee32,
}

impl SampleFormat {
    pub fn code(self) -> u16 {
        match self {
            SampleFormat::Ibm32 => 1,
            SampleFormat::Ieee32 => 5,
        }
    }

    pub fn from_code(code: u16) -> Result<Self> {
        match code {
            1 => Ok(SampleFormat::Ibm32),
            5 => Ok(SampleFormat::Ieee32),
            c => Err(Error::Format(format!("unsupported SEG-Y sample format code {c}"))),
        }
    }
}

/// Fields pulled from the 400-byte binary file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryHeader {
    pub sample_interval_us: u16,
    pub samples_per_trace: u16,
    pub format: SampleFormat,
    pub revision: u16,
    pub extended_headers: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegyTraceRecord {
    /// Raw 240-byte trace header, passed through untouched.
    pub header: Vec<u8>,
    pub inline: i32,
    pub crossline: i32,
    pub sample_count: u16,
    pub sample_interval_us: u16,
    pub samples: Vec<f64>,
}

fn be_u16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be_i32(b: &[u8], at: usize) -> i32 {
    i32::from_be_bytes(b[at..at + 4].try_into().unwrap())
}

/// IBM System/360 single: sign bit, 7-bit excess-64 base-16 exponent,
/// 24-bit fraction. Every bit pattern decodes.
pub fn ibm32_to_real(word: u32) -> f64 {
    let sign = if word >> 31 == 1 { -1.0 } else { 1.0 };
    let exponent = ((word >> 24) & 0x7f) as i32 - 64;
    let fraction = (word & 0x00ff_ffff) as f64 / 16_777_216.0;
    sign * fraction * 16f64.powi(exponent)
}

/// Nearest IBM single to `x`. Values beyond the IBM range saturate; values
/// below the smallest normalized magnitude flush to zero.
pub fn real_to_ibm32(x: f64) -> Result<u32> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("cannot encode {x} as an IBM float")));
    }
    if x == 0.0 {
        return Ok(0);
    }
    let sign = if x < 0.0 { 0x8000_0000u32 } else { 0 };
    let mut a = x.abs();
    let mut exp = 64i32;
    while a >= 1.0 {
        a /= 16.0;
        exp += 1;
    }
    while a < 1.0 / 16.0 {
        a *= 16.0;
        exp -= 1;
    }
    let mut frac = (a * 16_777_216.0).round() as u64;
    if frac == 1 << 24 {
        frac >>= 4;
        exp += 1;
    }
    if exp > 127 {
        return Ok(sign | 0x7fff_ffff);
    }
    if exp < 0 {
        return Ok(0);
    }
    Ok(sign | (exp as u32) << 24 | frac as u32)
}

pub fn read_segy(bytes: &[u8]) -> Result<(BinaryHeader, Vec<SegyTraceRecord>)> {
    let head = TEXT_HEADER_LEN + BINARY_HEADER_LEN;
    if bytes.len() < head {
        return Err(Error::Format(format!("SEG-Y file is {} bytes, need at least {head} for the headers", bytes.len())));
    }
    let bin = &bytes[TEXT_HEADER_LEN..head];
    let header = BinaryHeader {
        sample_interval_us: be_u16(bin, 16),
        samples_per_trace: be_u16(bin, 20),
        format: SampleFormat::from_code(be_u16(bin, 24))?,
        revision: be_u16(bin, 300),
        extended_headers: be_u16(bin, 304),
    };
    let mut at = head + TEXT_HEADER_LEN * header.extended_headers as usize;
    if at > bytes.len() {
        return Err(Error::Format(format!("extended textual headers run past the end of the file at byte {}", bytes.len())));
    }
    let mut traces = Vec::new();
    while at < bytes.len() {
        if bytes.len() - at < TRACE_HEADER_LEN {
            return Err(Error::Format(format!("truncated trace header at byte offset {at}")));
        }
        let th = &bytes[at..at + TRACE_HEADER_LEN];
        let count = match be_u16(th, 114) {
            0 => header.samples_per_trace,
            n => n,
        };
        if count != header.samples_per_trace {
            return Err(Error::Format(format!(
                "trace at byte offset {at} has {count} samples; only fixed-length traces of {} are supported",
                header.samples_per_trace
            )));
        }
        let body = at + TRACE_HEADER_LEN;
        let end = body + 4 * count as usize;
        if end > bytes.len() {
            return Err(Error::Format(format!("truncated trace data at byte offset {body}: need {} bytes, have {}", end - body, bytes.len() - body)));
        }
        let samples = bytes[body..end]
            .chunks_exact(4)
            .map(|c| {
                let w = u32::from_be_bytes(c.try_into().unwrap());
                match header.format {
                    SampleFormat::Ibm32 => ibm32_to_real(w),
                    SampleFormat::Ieee32 => f32::from_bits(w) as f64,
                }
            })
            .collect();
        traces.push(SegyTraceRecord {
            header: th.to_vec(),
            inline: be_i32(th, 188),
            crossline: be_i32(th, 192),
            sample_count: count,
            sample_interval_us: match be_u16(th, 116) {
                0 => header.sample_interval_us,
                v => v,
            },
            samples,
        });
        at = end;
    }
    Ok((header, traces))
}

/// Encodes a `(time, trace, 1)` section; trace `x` gets inline 1 and
/// crossline `x + 1`.
pub fn write_segy(section: &TraceSection, format: SampleFormat) -> Result<Vec<u8>> {
    let g = &section.grid;
    if g.rank() != 3 || g.channels() != 1 {
        return invalid(format!("SEG-Y sections are (time, trace, 1), got {:?}", g.dims()));
    }
    let (h, w) = (g.height(), g.width());
    let ns = u16::try_from(h).map_err(|_| Error::InvalidArgument(format!("{h} samples per trace exceed the SEG-Y limit")))?;
    let us = (section.dt * 1e6).round();
    if !(us >= 1.0 && us <= u16::MAX as f64) {
        return invalid(format!("sampling interval {} s does not fit the SEG-Y header", section.dt));
    }
    let us = us as u16;

    let mut out = Vec::with_capacity(TEXT_HEADER_LEN + BINARY_HEADER_LEN + w * (TRACE_HEADER_LEN + 4 * h));
    let mut text = format!("C 1 SYNTHETIC SECTION {w} TRACES {h} SAMPLES {us} US").into_bytes();
    text.resize(TEXT_HEADER_LEN, b' ');
    out.extend_from_slice(&text);

    let mut bin = [0u8; BINARY_HEADER_LEN];
    bin[12..14].copy_from_slice(&1u16.to_be_bytes());
    bin[16..18].copy_from_slice(&us.to_be_bytes());
    bin[20..22].copy_from_slice(&ns.to_be_bytes());
    bin[24..26].copy_from_slice(&format.code().to_be_bytes());
    bin[300..302].copy_from_slice(&0x0100u16.to_be_bytes());
    bin[302..304].copy_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&bin);

    for x in 0..w {
        let mut th = [0u8; TRACE_HEADER_LEN];
        let seq = (x as i32 + 1).to_be_bytes();
        th[0..4].copy_from_slice(&seq);
        th[4..8].copy_from_slice(&seq);
        th[114..116].copy_from_slice(&ns.to_be_bytes());
        th[116..118].copy_from_slice(&us.to_be_bytes());
        th[188..192].copy_from_slice(&1i32.to_be_bytes());
        th[192..196].copy_from_slice(&seq);
        out.extend_from_slice(&th);
        for v in trace(g, x) {
            let word = match format {
                SampleFormat::Ibm32 => real_to_ibm32(v)?,
                SampleFormat::Ieee32 => (v as f32).to_bits(),
            };
            out.extend_from_slice(&word.to_be_bytes());
        }
    }
    Ok(out)
}

/// Assembles parsed traces into a `(time, trace, 1)` section.
pub fn section_from_segy(header: &BinaryHeader, traces: &[SegyTraceRecord]) -> Result<TraceSection> {
    if traces.is_empty() {
        return invalid("SEG-Y file has no traces");
    }
    if header.sample_interval_us == 0 {
        return Err(Error::Format("binary header sample interval is zero".into()));
    }
    let cols: Vec<Vec<f64>> = traces.iter().map(|t| t.samples.clone()).collect();
    Ok(TraceSection {
        grid: from_traces(&cols)?,
        dt: header.sample_interval_us as f64 * 1e-6,
        snr_db: None,
    })
}
