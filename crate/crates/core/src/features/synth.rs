//! Synthetic speakers for desk-scale experiments.
//!
//! A speaker is a smooth spectral template plus two smooth modulation shapes,
//! each oscillating at a speaker-specific slow rate. An utterance draws fresh
//! phases and a global level offset and adds white noise at about 10 dB below
//! the modulation power. MVN removes the template and level, so identity
//! survives normalization only through the modulation structure.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{FeatureMatrix, MelConfig, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SYNTH_SNR_DB: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub frames: usize,
    pub n_mels: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { num_speakers: 20, utts_per_speaker: 20, frames: 240, n_mels: 64, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub id: usize,
    pub template: Vec<f64>,
    pub shapes: [Vec<f64>; 2],
    /// Radians per frame.
    pub rates: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub label: usize,
    pub utt: String,
    pub features: FeatureMatrix,
}

fn smooth_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n + 4).map(|_| StandardNormal.sample(rng)).collect();
    let v: Vec<f64> = (0..n).map(|i| raw[i..i + 5].iter().sum::<f64>() / 5.0).collect();
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt().max(1e-12);
    v.into_iter().map(|x| x / rms).collect()
}

pub fn synth_speakers(num_speakers: usize, n_mels: usize, seed: u64) -> Result<Vec<SpeakerModel>> {
    if num_speakers < 2 {
        return Err(Error::Input(format!("need at least 2 speakers, got {num_speakers}")));
    }
    if n_mels == 0 {
        return Err(Error::Input("n_mels must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..num_speakers)
        .map(|id| {
            let template = smooth_unit(n_mels, &mut rng).into_iter().map(|v| 2.0 * v).collect();
            let shapes = [smooth_unit(n_mels, &mut rng), smooth_unit(n_mels, &mut rng)];
            let rates = [
                2.0 * PI / rng.random_range(12.0..40.0),
                2.0 * PI / rng.random_range(40.0..120.0),
            ];
            SpeakerModel { id, template, shapes, rates }
        })
        .collect())
}

impl SpeakerModel {
    /// One `n_mels × frames` log-energy-like matrix.
    pub fn utterance<R: Rng + ?Sized>(&self, frames: usize, rng: &mut R) -> Result<FeatureMatrix> {
        if frames == 0 {
            return Err(Error::Input("utterance needs at least one frame".into()));
        }
        let n_mels = self.template.len();
        let phases = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
        let level: f64 = Normal::new(0.0, 0.5).expect("valid normal").sample(rng);
        // unit-RMS shapes with sinusoidal drive: modulation power = 2 · 1/2
        let noise_std = (1.0 / 10f64.powf(SYNTH_SNR_DB / 10.0)).sqrt();
        let noise = Normal::new(0.0, noise_std).expect("valid normal");
        let mut data = Vec::with_capacity(n_mels * frames);
        for m in 0..n_mels {
            for t in 0..frames {
                let mut v = self.template[m] + level;
                for ((shape, rate), phase) in self.shapes.iter().zip(&self.rates).zip(&phases) {
                    v += shape[m] * (rate * t as f64 + phase).sin();
                }
                data.push(v + noise.sample(rng));
            }
        }
        Ok(FeatureMatrix::new(Tensor::from_vec(&[n_mels, frames], data)?))
    }
}

/// `num_speakers · utts_per_speaker` labeled matrices, speaker-major order.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<LabeledFeatures>> {
    let speakers = synth_speakers(cfg.num_speakers, cfg.n_mels, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    utterances(&speakers, cfg.utts_per_speaker, cfg.frames, 0, &mut rng)
}

/// Utterances `first_utt..first_utt + count` of every speaker.
pub fn utterances<R: Rng + ?Sized>(
    speakers: &[SpeakerModel],
    count: usize,
    frames: usize,
    first_utt: usize,
    rng: &mut R,
) -> Result<Vec<LabeledFeatures>> {
    let mut out = Vec::with_capacity(speakers.len() * count);
    for spk in speakers {
        for u in first_utt..first_utt + count {
            let utt = format!("spk{:03}_utt{:03}", spk.id, u);
            let features = spk.utterance(frames, rng)?.with_source(utt.clone());
            out.push(LabeledFeatures { label: spk.id, utt, features });
        }
    }
    Ok(out)
}

/// Audio rendering of a speaker: a harmonic source whose mel-domain envelope
/// follows the template and modulation shapes, plus white noise.
pub fn synth_wave<R: Rng + ?Sized>(
    spk: &SpeakerModel,
    seconds: f64,
    sample_rate: u32,
    mel: &MelConfig,
    rng: &mut R,
) -> Result<Waveform> {
    let n = (seconds * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let f0 = 90.0 + 15.0 * (spk.id % 10) as f64 + rng.random_range(-5.0..5.0);
    let centers = super::mel_centers_hz(mel, sample_rate);
    let n_mels = spk.template.len().min(centers.len());
    let band = |hz: f64| (0..n_mels).min_by(|&a, &b| (centers[a] - hz).abs().total_cmp(&(centers[b] - hz).abs())).unwrap_or(0);
    let harmonics: Vec<(f64, usize)> =
        (1..).map(|h| h as f64 * f0).take_while(|&f| f < 0.45 * sr).map(|f| (f, band(f))).collect();
    let phases = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
    let shift = mel.frame_shift_ms / 1000.0 * sr;
    let mut samples = vec![0.0; n];
    for (i, s) in samples.iter_mut().enumerate() {
        let frame = i as f64 / shift;
        let drive = [(spk.rates[0] * frame + phases[0]).sin(), (spk.rates[1] * frame + phases[1]).sin()];
        let time = i as f64 / sr;
        *s = harmonics
            .iter()
            .map(|&(f, m)| {
                let log_amp = 0.5 * (spk.template[m] + spk.shapes[0][m] * drive[0] + spk.shapes[1][m] * drive[1]);
                log_amp.exp() * (2.0 * PI * f * time).sin()
            })
            .sum();
    }
    let peak = samples.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-12);
    let power = samples.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64 / (peak * peak);
    let noise = Normal::new(0.0, (0.25 * power / 10f64.powf(SYNTH_SNR_DB / 10.0)).sqrt()).expect("valid normal");
    for s in &mut samples {
        *s = (*s / peak * 0.5 + noise.sample(rng)).clamp(-1.0, 1.0);
    }
    Waveform::new(samples, sample_rate)
}
