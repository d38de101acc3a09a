//! Front end: WAV ingestion, log-mel features, normalization, cropping,
//! masking, the FEAT file format, and a synthetic speaker corpus.

mod mel;
mod synth;
mod wav;

use std::fs;
use std::path::Path;

use rand::Rng;

pub use mel::{
    frame_count, hamming, hz_to_mel, logmel, mel_centers_hz, mel_filterbank, mel_points_hz, mel_to_hz, power_frames,
    MelConfig,
};
pub use synth::{synth_dataset, synth_speakers, synth_wave, utterances, LabeledFeatures, SpeakerModel, SynthConfig};
pub use wav::{encode_wav, parse_wav, read_wav, write_wav, Waveform};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `n_mels × frames` feature matrix with an optional source identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor,
    pub source: String,
}

impl FeatureMatrix {
    pub fn new(values: Tensor) -> Self {
        FeatureMatrix { values, source: String::new() }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn n_mels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    fn rebuild(&self, data: Vec<f64>, frames: usize) -> Result<FeatureMatrix> {
        Ok(FeatureMatrix { values: Tensor::from_vec(&[self.n_mels(), frames], data)?, source: self.source.clone() })
    }
}

pub const MVN_VAR_FLOOR: f64 = 1e-8;

/// Per-mel-bin mean and variance normalization over time.
pub fn mvn(fm: &FeatureMatrix) -> Result<FeatureMatrix> {
    let t = fm.frames();
    if t < 2 {
        return Err(Error::dim(format!("MVN needs at least 2 frames, got {t}")));
    }
    let mut out = Vec::with_capacity(fm.values.len());
    for row in fm.values.data().chunks(t) {
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let inv = 1.0 / var.max(MVN_VAR_FLOOR).sqrt();
        out.extend(row.iter().map(|v| (v - mean) * inv));
    }
    fm.rebuild(out, t)
}

/// Frames covered by `seconds` at a given frame shift.
pub fn crop_frames(seconds: f64, frame_shift_ms: f64) -> usize {
    (seconds * 1000.0 / frame_shift_ms).round().max(1.0) as usize
}

/// Random `frames`-long window; shorter inputs are wrap-padded from frame 0.
pub fn crop<R: Rng + ?Sized>(fm: &FeatureMatrix, frames: usize, rng: &mut R) -> Result<FeatureMatrix> {
    let t = fm.frames();
    let start = if t > frames { rng.random_range(0..=t - frames) } else { 0 };
    let mut out = Vec::with_capacity(fm.n_mels() * frames);
    for row in fm.values.data().chunks(t) {
        out.extend((0..frames).map(|j| row[(start + j) % t]));
    }
    fm.rebuild(out, frames)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub max_f_mask: usize,
    pub max_t_mask: usize,
    pub n_masks: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { max_f_mask: 8, max_t_mask: 20, n_masks: 2 }
    }
}

/// Sets `n_masks` random frequency bands and `n_masks` random time bands to
/// the utterance mean.
pub fn spec_mask<R: Rng + ?Sized>(fm: &FeatureMatrix, cfg: &MaskConfig, rng: &mut R) -> Result<FeatureMatrix> {
    if cfg.n_masks == 0 {
        return Ok(fm.clone());
    }
    let (m, t) = (fm.n_mels(), fm.frames());
    let fill = fm.values.sum() / fm.values.len() as f64;
    let mut data = fm.values.data().to_vec();
    for _ in 0..cfg.n_masks {
        let w = rng.random_range(0..=cfg.max_f_mask.min(m));
        let start = rng.random_range(0..=m - w);
        for row in start..start + w {
            data[row * t..(row + 1) * t].iter_mut().for_each(|v| *v = fill);
        }
    }
    for _ in 0..cfg.n_masks {
        let w = rng.random_range(0..=cfg.max_t_mask.min(t));
        let start = rng.random_range(0..=t - w);
        for row in data.chunks_mut(t) {
            row[start..start + w].iter_mut().for_each(|v| *v = fill);
        }
    }
    fm.rebuild(data, t)
}

const FEAT_MAGIC: &[u8; 4] = b"FEAT";
const FEAT_VERSION: u32 = 1;

/// `FEAT`, version, rank, dims (all u32 LE), then row-major f64 LE values.
pub fn encode_feat(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(FEAT_MAGIC);
    out.extend_from_slice(&FEAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_feat(bytes: &[u8]) -> Result<Tensor> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != FEAT_MAGIC {
        return Err(Error::Format("bad magic: expected FEAT".into()));
    }
    let version = r.u32()?;
    if version != FEAT_VERSION {
        return Err(Error::Format(format!("FEAT version={version} unsupported")));
    }
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("FEAT rank={rank} unsupported")));
    }
    let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = dims.iter().product();
    if r.remaining() != n * 8 {
        return Err(Error::Format(format!("FEAT payload has {} bytes, expected {}", r.remaining(), n * 8)));
    }
    let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Tensor::from_vec(&dims, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_feat(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_feat(t))?;
    Ok(())
}

pub fn read_feat(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let t = decode_feat(&fs::read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if t.rank() != 2 {
        return Err(Error::Format(format!("{}: feature matrix must be rank 2, got {:?}", path.display(), t.shape())));
    }
    Ok(FeatureMatrix::new(t).with_source(path.display().to_string()))
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!("unexpected end of data at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(m: usize, t: usize) -> FeatureMatrix {
        FeatureMatrix::new(Tensor::from_vec(&[m, t], (0..m * t).map(|v| v as f64).collect()).unwrap())
    }

    #[test]
    fn mvn_row_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut fm = FeatureMatrix::new(Tensor::randn(&[8, 50], &mut rng));
        let mut d = fm.values.clone().into_vec();
        d[150..200].iter_mut().for_each(|v| *v = 4.0);
        fm.values = Tensor::from_vec(&[8, 50], d).unwrap();
        let out = mvn(&fm).unwrap();
        for (r, row) in out.values.data().chunks(50).enumerate() {
            let mean = row.iter().sum::<f64>() / 50.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() <= 1e-12);
            if r == 3 {
                assert!(row.iter().all(|&v| v == 0.0));
            } else {
                assert!((var - 1.0).abs() <= 1e-9);
            }
        }
        assert!(mvn(&ramp(4, 1)).is_err());
    }

    #[test]
    fn crop_rules() {
        let long = ramp(2, 500);
        let a = crop(&long, 200, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = crop(&long, 200, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames(), 200);
        let start = a.values.data()[0] as usize;
        assert_eq!(a.values.data()[199] as usize, start + 199);

        let exact = ramp(2, 200);
        assert_eq!(crop(&exact, 200, &mut ChaCha8Rng::seed_from_u64(4)).unwrap(), exact);

        let short = ramp(1, 90);
        let c = crop(&short, 200, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let expected: Vec<f64> = (0..90).chain(0..90).chain(0..20).map(|v| v as f64).collect();
        assert_eq!(c.values.data(), &expected[..]);
        assert_eq!(crop_frames(2.0, 10.0), 200);
    }

    #[test]
    fn spec_mask_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fm = FeatureMatrix::new(Tensor::randn(&[64, 200], &mut rng));
        let none = MaskConfig { n_masks: 0, ..Default::default() };
        assert_eq!(spec_mask(&fm, &none, &mut rng).unwrap(), fm);
        let cfg = MaskConfig::default();
        let a = spec_mask(&fm, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = spec_mask(&fm, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        for seed in 0..50 {
            let m = spec_mask(&fm, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let changed = m.values.data().iter().zip(fm.values.data()).filter(|(x, y)| x != y).count();
            assert!(changed <= cfg.n_masks * (cfg.max_f_mask * 200 + cfg.max_t_mask * 64));
        }
    }

    #[test]
    fn feat_file_format() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 0.5, 3.25, 0.0, 1e-300]).unwrap();
        let bytes = encode_feat(&t);
        assert_eq!(&bytes[..4], b"FEAT");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(&bytes[20..28], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 6 * 8);
        assert_eq!(decode_feat(&bytes).unwrap(), t);
        assert!(decode_feat(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(decode_feat(&bad).unwrap_err().to_string().contains("version"));
    }
}
