//! RIFF/WAVE reader for 16-bit mono PCM, plus a matching writer.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    /// Samples scaled into `[-1, 1)`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Input("sample_rate must be positive".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    parse_wav(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::Format("bad magic: expected RIFF".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("bad magic: expected WAVE form type".into()));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(Error::Format("truncated fmt chunk".into()));
                }
                let audio_format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let sample_rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if audio_format != 1 {
                    return Err(Error::Format(format!("audio_format={audio_format} unsupported (PCM only)")));
                }
                if channels != 1 {
                    return Err(Error::Format(format!("channels={channels} unsupported")));
                }
                if bits != 16 {
                    return Err(Error::Format(format!("bits_per_sample={bits} unsupported")));
                }
                if sample_rate == 0 {
                    return Err(Error::Format("sample_rate=0 unsupported".into()));
                }
                fmt = Some((audio_format, channels, sample_rate, bits));
            }
            b"data" => {
                let Some((_, _, sample_rate, _)) = fmt else {
                    return Err(Error::Format("data chunk before fmt chunk".into()));
                };
                if body + size > bytes.len() {
                    return Err(Error::Format(format!(
                        "truncated data chunk: header says {size} bytes, {} present",
                        bytes.len() - body
                    )));
                }
                let samples: Vec<f64> = bytes[body..body + size - size % 2]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Waveform::new(samples, sample_rate).map_err(|_| Error::Format("data chunk is empty".into()));
            }
            _ => {}
        }
        pos = body + size + size % 2;
    }
    Err(Error::Format(if fmt.is_none() { "missing fmt chunk".into() } else { "missing data chunk".into() }))
}

/// Encodes samples as 16-bit mono PCM, clamping to the representable range.
pub fn encode_wav(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    fs::write(path, encode_wav(samples, sample_rate))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(channels: u16, bits: u16, format: u16, data: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&format.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&16000u32.to_le_bytes());
        b.extend_from_slice(&(16000u32 * channels as u32 * bits as u32 / 8).to_le_bytes());
        b.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(data);
        b
    }

    #[test]
    fn parses_minimal_file() {
        let data: Vec<u8> = [0i16, 16384, -16384, 32767].iter().flat_map(|v| v.to_le_bytes()).collect();
        let w = parse_wav(&header(1, 16, 1, &data)).unwrap();
        assert_eq!(w.sample_rate, 16000);
        assert_eq!(&w.samples[..3], &[0.0, 0.5, -0.5]);
        assert!((w.samples[3] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = [0u8; 8];
        let good = header(1, 16, 1, &data);
        assert!(matches!(parse_wav(&good[..10]), Err(Error::Format(_))));
        let err = parse_wav(&header(2, 16, 1, &data)).unwrap_err().to_string();
        assert!(err.contains("channels=2 unsupported"), "{err}");
        assert!(parse_wav(&header(1, 8, 1, &data)).unwrap_err().to_string().contains("bits_per_sample=8"));
        assert!(parse_wav(&header(1, 16, 3, &data)).unwrap_err().to_string().contains("audio_format=3"));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(parse_wav(&bad).unwrap_err().to_string().contains("magic"));
        // data chunk shorter than declared
        assert!(parse_wav(&good[..good.len() - 2]).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn skips_unknown_chunks() {
        let data: Vec<u8> = [100i16, -100].iter().flat_map(|v| v.to_le_bytes()).collect();
        let plain = header(1, 16, 1, &data);
        let mut with_list = plain[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&plain[36..]);
        assert_eq!(parse_wav(&with_list).unwrap(), parse_wav(&plain).unwrap());
    }

    #[test]
    fn encode_then_parse() {
        let samples = vec![0.0, 0.25, -1.0, 0.5];
        let w = parse_wav(&encode_wav(&samples, 8000)).unwrap();
        assert_eq!(w.samples, samples);
        assert_eq!(w.sample_rate, 8000);
    }
}
