//! Tiny convolutional speaker-embedding network.
//!
//! Each stage is `conv → relu → attention`. After the last stage the frequency
//! axis is averaged away and per-channel mean and standard deviation over time
//! are concatenated and projected to the embedding.

mod aam;
mod adam;
pub mod checkpoint;
mod train;

pub use aam::{aam_loss, AamHead, AamOutput};
pub use adam::Adam;
pub use train::{train_epoch, EpochMetrics, TrainConfig, TrainExample, Trainer};

use rand::Rng;

use crate::attention::{AttentionBlock, AttentionCache, Variant, Aggregation};
use crate::dct::{select_frequency_indices, FrequencyIndex, SelectionStrategy};
use crate::error::{Error, Result};
use crate::tensor::{self, conv_out_len, Parameter, Tensor};

/// Variance floor inside the pooled standard deviation.
pub const POOL_STD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Frequency components for SFSC / MFSC at this stage.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    /// Nominal input size used to pick frequency indices per stage.
    pub input_mels: usize,
    pub input_frames: usize,
    pub stages: Vec<StageConfig>,
    pub variant: Variant,
    pub aggregation: Aggregation,
    pub reduction: usize,
    pub embedding_dim: usize,
    pub num_speakers: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let stage = |out_channels, k| StageConfig { out_channels, kernel: 3, stride: 2, k };
        NetworkConfig {
            in_channels: 1,
            input_mels: 64,
            input_frames: 200,
            stages: vec![stage(16, 4), stage(32, 8), stage(64, 16)],
            variant: Variant::Mfsc,
            aggregation: Aggregation::AvgMax,
            reduction: 8,
            embedding_dim: 64,
            num_speakers: 20,
        }
    }
}

impl NetworkConfig {
    /// `(C, F', T')` after every stage for a `(F, T)` input.
    pub fn stage_shapes(&self, mels: usize, frames: usize) -> Result<Vec<(usize, usize, usize)>> {
        let (mut f, mut t) = (mels, frames);
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            let pad = s.kernel / 2;
            let (Some(nf), Some(nt)) = (conv_out_len(f, s.kernel, s.stride, pad), conv_out_len(t, s.kernel, s.stride, pad))
            else {
                return Err(Error::dim(format!("stage {i}: input {f}x{t} too small for kernel {}", s.kernel)));
            };
            f = nf;
            t = nt;
            out.push((s.out_channels, f, t));
        }
        Ok(out)
    }

    /// Frequency indices per stage, chosen on the nominal feature-map grid.
    pub fn stage_indices(&self) -> Result<Vec<Vec<FrequencyIndex>>> {
        let shapes = self.stage_shapes(self.input_mels, self.input_frames)?;
        self.stages
            .iter()
            .zip(shapes)
            .map(|(s, (_, f, t))| match self.variant {
                Variant::Se => Ok(Vec::new()),
                _ => select_frequency_indices(f, t, s.k, SelectionStrategy::ZigzagLowFirst),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("network needs at least one stage".into()));
        }
        if self.in_channels == 0 || self.embedding_dim == 0 || self.reduction == 0 {
            return Err(Error::Config("in_channels, embedding_dim and reduction must be positive".into()));
        }
        if self.num_speakers < 2 {
            return Err(Error::Config(format!("need at least 2 speakers, got {}", self.num_speakers)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.out_channels == 0 || s.kernel == 0 || s.stride == 0 {
                return Err(Error::Config(format!("stage {i}: channels, kernel and stride must be positive")));
            }
            if self.variant != Variant::Se && s.k == 0 {
                return Err(Error::Config(format!("stage {i}: k must be >= 1 for {}", self.variant)));
            }
            if self.variant == Variant::Sfsc && s.out_channels % s.k != 0 {
                return Err(Error::Config(format!(
                    "stage {i}: SFSC needs channels divisible by k, got C={} k={}",
                    s.out_channels, s.k
                )));
            }
        }
        self.stage_indices()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerNet {
    config: NetworkConfig,
    pub convs: Vec<ConvLayer>,
    pub attention: Vec<AttentionBlock>,
    pub embed_weight: Parameter,
    pub embed_bias: Parameter,
}

struct StageCache {
    input: Tensor,
    pre_relu: Tensor,
    attention: AttentionCache,
}

/// Forward intermediates for [`SpeakerNet::backward`].
pub struct NetCache {
    stages: Vec<StageCache>,
    freq_mean: Tensor,
    mean: Vec<f64>,
    std: Vec<f64>,
    pooled: Tensor,
    last_shape: (usize, usize, usize),
}

impl SpeakerNet {
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let indices = config.stage_indices()?;
        let mut convs = Vec::new();
        let mut attention = Vec::new();
        let mut c_in = config.in_channels;
        for (i, (s, idx)) in config.stages.iter().zip(indices).enumerate() {
            let fan_in = c_in * s.kernel * s.kernel;
            let w = Tensor::uniform(&[s.out_channels, c_in, s.kernel, s.kernel], 1.0 / (fan_in as f64).sqrt(), rng);
            convs.push(ConvLayer {
                weight: Parameter::new(format!("conv{i}.weight"), w),
                bias: Parameter::new(format!("conv{i}.bias"), Tensor::zeros(&[s.out_channels])),
                stride: s.stride,
                pad: s.kernel / 2,
            });
            attention.push(AttentionBlock::new(
                &format!("att{i}"),
                config.variant,
                s.out_channels,
                config.reduction,
                idx,
                config.aggregation,
                rng,
            )?);
            c_in = s.out_channels;
        }
        let pooled = 2 * c_in;
        let embed_weight = Parameter::new(
            "embed.weight",
            Tensor::uniform(&[config.embedding_dim, pooled], 1.0 / (pooled as f64).sqrt(), rng),
        );
        let embed_bias = Parameter::new("embed.bias", Tensor::zeros(&[config.embedding_dim]));
        Ok(SpeakerNet { config, convs, attention, embed_weight, embed_bias })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// Parameters in declaration order.
    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for (conv, att) in self.convs.iter().zip(&self.attention) {
            out.push(&conv.weight);
            out.push(&conv.bias);
            out.extend(att.parameters());
        }
        out.push(&self.embed_weight);
        out.push(&self.embed_bias);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for (conv, att) in self.convs.iter_mut().zip(self.attention.iter_mut()) {
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
            out.extend(att.parameters_mut());
        }
        out.push(&mut self.embed_weight);
        out.push(&mut self.embed_bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    pub fn attention_param_count(&self) -> usize {
        self.attention.iter().map(|a| a.param_count()).sum()
    }

    fn as_input(&self, x: &Tensor) -> Result<Tensor> {
        match x.rank() {
            2 if self.config.in_channels == 1 => x.reshape(&[1, x.shape()[0], x.shape()[1]]),
            3 if x.shape()[0] == self.config.in_channels => Ok(x.clone()),
            _ => Err(Error::dim(format!(
                "network expects [{}, F, T] input (or [F, T] for one channel), got {:?}",
                self.config.in_channels,
                x.shape()
            ))),
        }
    }

    fn check_length(&self, x: &Tensor) -> Result<()> {
        let shapes = self.config.stage_shapes(x.shape()[1], x.shape()[2])?;
        for (i, ((_, f, t), att)) in shapes.iter().zip(&self.attention).enumerate() {
            if let Some(idx) = att.indices().iter().find(|idx| idx.f >= *f || idx.t >= *t) {
                return Err(Error::dim(format!(
                    "input {:?} too short: stage {i} map is {f}x{t} but needs frequency index {idx}",
                    x.shape()
                )));
            }
        }
        Ok(())
    }

    /// Embedding for a `[C_in, F, T]` (or `[F, T]`) input.
    pub fn forward_embed(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, NetCache)> {
        let x = self.as_input(x)?;
        self.check_length(&x)?;
        let mut h = x;
        let mut stages = Vec::with_capacity(self.convs.len());
        for (conv, att) in self.convs.iter().zip(&self.attention) {
            let mut pre = tensor::conv2d(&h, &conv.weight.value, conv.stride, conv.pad)?;
            let plane = pre.shape()[1] * pre.shape()[2];
            for (chunk, b) in pre.data_mut().chunks_mut(plane).zip(conv.bias.value.data()) {
                chunk.iter_mut().for_each(|v| *v += b);
            }
            let act = tensor::relu(&pre);
            let out = att.forward(&act)?;
            stages.push(StageCache { input: h, pre_relu: pre, attention: out.cache });
            h = out.y;
        }

        let (c, f, t) = h.dims3()?;
        let mut freq_mean = vec![0.0; c * t];
        for ch in 0..c {
            for i in 0..f {
                let row = &h.data()[(ch * f + i) * t..(ch * f + i + 1) * t];
                for (acc, v) in freq_mean[ch * t..(ch + 1) * t].iter_mut().zip(row) {
                    *acc += v / f as f64;
                }
            }
        }
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let row = &freq_mean[ch * t..(ch + 1) * t];
            mean[ch] = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>() / t as f64;
            std[ch] = (var + POOL_STD_EPS).sqrt();
        }
        let pooled = Tensor::from_vec(&[2 * c, 1], mean.iter().chain(&std).copied().collect())?;
        let mut emb = tensor::matmul(&self.embed_weight.value, &pooled)?.into_vec();
        emb.iter_mut().zip(self.embed_bias.value.data()).for_each(|(e, b)| *e += b);
        let emb = Tensor::from_vec(&[self.config.embedding_dim], emb)?;
        let cache = NetCache {
            stages,
            freq_mean: Tensor::from_vec(&[c, t], freq_mean)?,
            mean,
            std,
            pooled,
            last_shape: (c, f, t),
        };
        Ok((emb, cache))
    }

    /// Accumulates parameter gradients for `d_emb` and returns the input
    /// gradient.
    pub fn backward(&mut self, cache: &NetCache, d_emb: &Tensor) -> Result<Tensor> {
        if d_emb.len() != self.config.embedding_dim || cache.stages.len() != self.convs.len() {
            return Err(Error::State("network cache or embedding gradient does not match this network".into()));
        }
        let de = d_emb.reshape(&[self.config.embedding_dim, 1])?;
        let (dw, dpooled) = tensor::matmul_backward(&self.embed_weight.value, &cache.pooled, &de)?;
        self.embed_weight.accumulate(&dw)?;
        self.embed_bias.accumulate(&d_emb.reshape(&[self.config.embedding_dim])?)?;

        let (c, f, t) = cache.last_shape;
        let dp = dpooled.data();
        let mut dy = vec![0.0; c * f * t];
        for ch in 0..c {
            let row = &cache.freq_mean.data()[ch * t..(ch + 1) * t];
            let (dmu, dsd) = (dp[ch], dp[c + ch]);
            for (j, m) in row.iter().enumerate() {
                let dm = dmu / t as f64 + dsd * (m - cache.mean[ch]) / (t as f64 * cache.std[ch]);
                for i in 0..f {
                    dy[(ch * f + i) * t + j] = dm / f as f64;
                }
            }
        }
        let mut grad = Tensor::from_vec(&[c, f, t], dy)?;

        for (i, st) in cache.stages.iter().enumerate().rev() {
            let ag = self.attention[i].backward(&st.attention, &grad)?;
            self.attention[i].w1.accumulate(&ag.dw1)?;
            self.attention[i].w2.accumulate(&ag.dw2)?;
            let dpre = tensor::relu_backward(&st.pre_relu, &ag.dx)?;
            let conv = &mut self.convs[i];
            let plane = dpre.shape()[1] * dpre.shape()[2];
            let db: Vec<f64> = dpre.data().chunks(plane).map(|ch| ch.iter().sum()).collect();
            conv.bias.accumulate(&Tensor::from_vec(&[db.len()], db)?)?;
            let (dx, dw) = tensor::conv2d_backward(&st.input, &conv.weight.value, conv.stride, conv.pad, &dpre)?;
            conv.weight.accumulate(&dw)?;
            grad = dx;
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }

    /// Replaces parameter values, checking names and shapes against the
    /// declaration order.
    pub fn load_parameters(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(Error::Format(format!("expected {} network parameters, got {}", params.len(), values.len())));
        }
        for (p, (name, v)) in params.iter_mut().zip(values) {
            if &p.name != name || p.value.shape() != v.shape() {
                return Err(Error::Format(format!(
                    "parameter mismatch: expected {} {:?}, found {name} {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}
