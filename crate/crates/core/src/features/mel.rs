use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureMatrix, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub n_mels: usize,
    pub frame_len_ms: f64,
    pub frame_shift_ms: f64,
    pub n_fft: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            n_mels: 64,
            frame_len_ms: 25.0,
            frame_shift_ms: 10.0,
            n_fft: 512,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (self.frame_len_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn shift_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn fmax_for(&self, sample_rate: u32) -> f64 {
        self.fmax.unwrap_or(sample_rate as f64 / 2.0)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        if self.frame_len_ms < self.frame_shift_ms || self.frame_shift_ms <= 0.0 {
            return Err(Error::Config(format!(
                "frame length {} ms must be >= frame shift {} ms > 0",
                self.frame_len_ms, self.frame_shift_ms
            )));
        }
        let frame = self.frame_samples(sample_rate);
        if frame == 0 || self.shift_samples(sample_rate) == 0 {
            return Err(Error::Config("frame or shift rounds to zero samples".into()));
        }
        if self.n_fft < frame {
            return Err(Error::Config(format!("n_fft {} is shorter than a {frame}-sample frame", self.n_fft)));
        }
        let fmax = self.fmax_for(sample_rate);
        if !(self.fmin >= 0.0 && fmax > self.fmin && fmax <= sample_rate as f64 / 2.0) {
            return Err(Error::Config(format!("mel range [{}, {fmax}] Hz is invalid", self.fmin)));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return Err(Error::Config("log floor must be positive".into()));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `floor((n - frame) / shift) + 1`, or `None` when not even one frame fits.
pub fn frame_count(n: usize, frame: usize, shift: usize) -> Option<usize> {
    if n < frame || shift == 0 {
        return None;
    }
    Some((n - frame) / shift + 1)
}

/// Edge and center frequencies (`n_mels + 2` points) evenly spaced in mel.
pub fn mel_points_hz(cfg: &MelConfig, sample_rate: u32) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax_for(sample_rate));
    (0..cfg.n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64)).collect()
}

/// Center frequency of each mel filter.
pub fn mel_centers_hz(cfg: &MelConfig, sample_rate: u32) -> Vec<f64> {
    mel_points_hz(cfg, sample_rate)[1..=cfg.n_mels].to_vec()
}

/// Triangular filter weights, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate: u32) -> Vec<Vec<f64>> {
    let pts = mel_points_hz(cfg, sample_rate);
    let bins = cfg.n_fft / 2 + 1;
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, center, hi) = (pts[m], pts[m + 1], pts[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / cfg.n_fft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()).collect()
}

/// Power spectra `|X_k|²`, `k = 0..=n_fft/2`, of every Hamming-windowed frame.
pub fn power_frames(wave: &Waveform, cfg: &MelConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate(wave.sample_rate)?;
    let frame = cfg.frame_samples(wave.sample_rate);
    let shift = cfg.shift_samples(wave.sample_rate);
    let n_frames = frame_count(wave.samples.len(), frame, shift).ok_or_else(|| {
        Error::dim(format!("{} samples is shorter than one {frame}-sample frame", wave.samples.len()))
    })?;
    let window = hamming(frame);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let bins = cfg.n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut out = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let start = i * shift;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (n, (s, w)) in wave.samples[start..start + frame].iter().zip(&window).enumerate() {
            buf[n].re = s * w;
        }
        fft.process(&mut buf);
        out.push(buf[..bins].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(out)
}

/// Log mel filterbank energies, `n_mels × frames`.
pub fn logmel(wave: &Waveform, cfg: &MelConfig) -> Result<FeatureMatrix> {
    let frames = power_frames(wave, cfg)?;
    let bank = mel_filterbank(cfg, wave.sample_rate);
    let t = frames.len();
    let mut data = vec![0.0; cfg.n_mels * t];
    for (j, spec) in frames.iter().enumerate() {
        for (m, weights) in bank.iter().enumerate() {
            let e: f64 = weights.iter().zip(spec).map(|(w, p)| w * p).sum();
            data[m * t + j] = e.max(cfg.log_floor).ln();
        }
    }
    Ok(FeatureMatrix::new(Tensor::from_vec(&[cfg.n_mels, t], data)?))
}
