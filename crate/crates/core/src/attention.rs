//! Channel attention blocks: SE, SFSC, and MFSC.
//!
//! All three share the same excitation, `s = σ(W2·relu(W1·z))` without bias
//! terms, and differ only in how the channel descriptor `z` is pooled from the
//! feature map:
//!
//! * **SE** takes the per-channel mean (GAP).
//! * **SFSC** splits the channels into `k` contiguous groups and reduces
//!   group `n` with the `n`-th normalized DCT basis plane.
//! * **MFSC** reduces every channel with all `k` planes and aggregates the
//!   `k` responses per channel by mean, max, or both. With both, the two
//!   descriptors go through the shared bottleneck and the pre-sigmoid outputs
//!   are summed.
//!
//! DCT planes are normalized by `F·T`, so the `(0,0)` plane is exactly GAP.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::dct::{gap, DctBasis, FrequencyIndex};
use crate::error::{Error, Result};
use crate::tensor::{self, sigmoid_scalar, Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Se,
    Sfsc,
    Mfsc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregation {
    Avg,
    Max,
    AvgMax,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Se => "se",
            Variant::Sfsc => "sfsc",
            Variant::Mfsc => "mfsc",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se" => Ok(Variant::Se),
            "sfsc" => Ok(Variant::Sfsc),
            "mfsc" => Ok(Variant::Mfsc),
            other => Err(Error::Config(format!("unknown attention variant '{other}' (expected se|sfsc|mfsc)"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Avg => "avg",
            Aggregation::Max => "max",
            Aggregation::AvgMax => "avg_max",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avg" => Ok(Aggregation::Avg),
            "max" => Ok(Aggregation::Max),
            "avg_max" | "avg+max" => Ok(Aggregation::AvgMax),
            other => Err(Error::Config(format!("unknown aggregation '{other}' (expected avg|max|avg_max)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    variant: Variant,
    channels: usize,
    reduction: usize,
    pub w1: Parameter,
    pub w2: Parameter,
    indices: Vec<FrequencyIndex>,
    aggregation: Aggregation,
}

/// Width of the excitation bottleneck for `channels` and reduction `r`.
pub fn bottleneck_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

impl AttentionBlock {
    /// Builds a block with weights drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        variant: Variant,
        channels: usize,
        reduction: usize,
        indices: Vec<FrequencyIndex>,
        aggregation: Aggregation,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = bottleneck_width(channels, reduction);
        let w1 = Tensor::uniform(&[hidden, channels.max(1)], 1.0 / (channels.max(1) as f64).sqrt(), rng);
        let w2 = Tensor::uniform(&[channels.max(1), hidden], 1.0 / (hidden as f64).sqrt(), rng);
        Self::with_weights(name, variant, channels, reduction, indices, aggregation, w1, w2)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_weights(
        name: &str,
        variant: Variant,
        channels: usize,
        reduction: usize,
        indices: Vec<FrequencyIndex>,
        aggregation: Aggregation,
        w1: Tensor,
        w2: Tensor,
    ) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(Error::Config("attention block needs channels >= 1 and reduction >= 1".into()));
        }
        match variant {
            Variant::Se if !indices.is_empty() => {
                return Err(Error::Config("SE block takes no frequency indices".into()));
            }
            Variant::Sfsc if indices.is_empty() => {
                return Err(Error::Config("SFSC block needs at least one frequency index".into()));
            }
            Variant::Sfsc if !channels.is_multiple_of(indices.len()) => {
                return Err(Error::Config(format!(
                    "SFSC splits {channels} channels into {} equal groups: not divisible",
                    indices.len()
                )));
            }
            Variant::Mfsc if indices.is_empty() => {
                return Err(Error::Config("MFSC block needs at least one frequency index".into()));
            }
            _ => {}
        }
        let hidden = bottleneck_width(channels, reduction);
        if w1.shape() != [hidden, channels] || w2.shape() != [channels, hidden] {
            return Err(Error::dim(format!(
                "attention weights {:?} / {:?} do not match C={channels}, hidden={hidden}",
                w1.shape(),
                w2.shape()
            )));
        }
        Ok(AttentionBlock {
            variant,
            channels,
            reduction,
            w1: Parameter::new(format!("{name}.w1"), w1),
            w2: Parameter::new(format!("{name}.w2"), w2),
            indices,
            aggregation,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn indices(&self) -> &[FrequencyIndex] {
        &self.indices
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn param_count(&self) -> usize {
        self.w1.numel() + self.w2.numel()
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.w1, &mut self.w2]
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        [&self.w1, &self.w2]
    }

    pub fn se_forward(&self, x: &Tensor) -> Result<AttentionOutput> {
        self.expect_variant(Variant::Se)?;
        self.forward(x)
    }

    pub fn sfsc_forward(&self, x: &Tensor) -> Result<AttentionOutput> {
        self.expect_variant(Variant::Sfsc)?;
        self.forward(x)
    }

    pub fn mfsc_forward(&self, x: &Tensor) -> Result<AttentionOutput> {
        self.expect_variant(Variant::Mfsc)?;
        self.forward(x)
    }

    fn expect_variant(&self, v: Variant) -> Result<()> {
        if self.variant != v {
            return Err(Error::Config(format!("{v} forward called on a {} block", self.variant)));
        }
        Ok(())
    }

    fn basis(&self, rows: usize, cols: usize) -> Result<Option<Arc<DctBasis>>> {
        match self.variant {
            Variant::Se => Ok(None),
            _ => DctBasis::cached(rows, cols, &self.indices, true).map(Some),
        }
    }

    /// Forward pass for whichever variant this block is.
    pub fn forward(&self, x: &Tensor) -> Result<AttentionOutput> {
        let (c, f, t) = x.dims3()?;
        if c != self.channels {
            return Err(Error::dim(format!(
                "{} block expects {} channels, input has shape {:?}",
                self.variant,
                self.channels,
                x.shape()
            )));
        }
        let plane = f * t;
        let basis = self.basis(f, t)?;
        let mut argmax = Vec::new();
        let descriptors: Vec<Vec<f64>> = match self.variant {
            Variant::Se => vec![gap(x)?.into_vec()],
            Variant::Sfsc => {
                let basis = basis.as_ref().expect("sfsc basis");
                let group = c / basis.k();
                let z = x.data().chunks(plane).enumerate().map(|(ch, xc)| basis.project(ch / group, xc)).collect();
                vec![z]
            }
            Variant::Mfsc => {
                let basis = basis.as_ref().expect("mfsc basis");
                let k = basis.k();
                // responses[n * C + ch]
                let mut responses = vec![0.0; k * c];
                for (ch, xc) in x.data().chunks(plane).enumerate() {
                    for n in 0..k {
                        responses[n * c + ch] = basis.project(n, xc);
                    }
                }
                let avg: Vec<f64> =
                    (0..c).map(|ch| (0..k).map(|n| responses[n * c + ch]).sum::<f64>() / k as f64).collect();
                argmax = (0..c)
                    .map(|ch| {
                        let mut best = 0;
                        for n in 1..k {
                            if responses[n * c + ch] > responses[best * c + ch] {
                                best = n;
                            }
                        }
                        best
                    })
                    .collect();
                let max: Vec<f64> = argmax.iter().enumerate().map(|(ch, &n)| responses[n * c + ch]).collect();
                match self.aggregation {
                    Aggregation::Avg => vec![avg],
                    Aggregation::Max => vec![max],
                    Aggregation::AvgMax => vec![avg, max],
                }
            }
        };

        let hidden = self.w1.value.shape()[0];
        let mut pre = vec![0.0; c];
        let mut branches = Vec::with_capacity(descriptors.len());
        for z in descriptors {
            let mut u = vec![0.0; hidden];
            tensor::gemm(hidden, c, 1, self.w1.value.data(), &z, &mut u);
            let h: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
            let mut a = vec![0.0; c];
            tensor::gemm(c, hidden, 1, self.w2.value.data(), &h, &mut a);
            pre.iter_mut().zip(&a).for_each(|(p, v)| *p += v);
            branches.push(Branch { z, u, h });
        }
        let s = Tensor::from_vec(&[c], pre.iter().map(|&v| sigmoid_scalar(v)).collect())?;
        let y = tensor::channel_scale(x, &s)?;
        Ok(AttentionOutput {
            s: s.clone(),
            y,
            cache: AttentionCache { variant: self.variant, x: x.clone(), basis, branches, s, argmax },
        })
    }

    /// Exact gradients of the forward pass recorded in `cache`.
    pub fn backward(&self, cache: &AttentionCache, dy: &Tensor) -> Result<AttentionGrads> {
        if cache.variant != self.variant || cache.x.shape()[0] != self.channels {
            return Err(Error::State(format!(
                "cached {} state for {} channels does not belong to this {} block",
                cache.variant,
                cache.x.shape()[0],
                self.variant
            )));
        }
        if dy.shape() != cache.x.shape() {
            return Err(Error::State(format!(
                "upstream gradient {:?} does not match cached input {:?}",
                dy.shape(),
                cache.x.shape()
            )));
        }
        let (c, f, t) = cache.x.dims3()?;
        let plane = f * t;
        let hidden = self.w1.value.shape()[0];

        let (mut dx, ds) = tensor::channel_scale_backward(&cache.x, &cache.s, dy)?;
        let da: Vec<f64> = ds.data().iter().zip(cache.s.data()).map(|(g, s)| g * s * (1.0 - s)).collect();

        let mut dw1 = vec![0.0; hidden * c];
        let mut dw2 = vec![0.0; c * hidden];
        let mut dzs = Vec::with_capacity(cache.branches.len());
        for br in &cache.branches {
            // dW2 += da ⊗ h, dh = W2ᵀ·da
            for i in 0..c {
                for j in 0..hidden {
                    dw2[i * hidden + j] += da[i] * br.h[j];
                }
            }
            let mut dh = vec![0.0; hidden];
            tensor::gemm_at_b(hidden, c, 1, self.w2.value.data(), &da, &mut dh);
            let du: Vec<f64> = dh.iter().zip(&br.u).map(|(g, &u)| if u > 0.0 { *g } else { 0.0 }).collect();
            for i in 0..hidden {
                for j in 0..c {
                    dw1[i * c + j] += du[i] * br.z[j];
                }
            }
            let mut dz = vec![0.0; c];
            tensor::gemm_at_b(c, hidden, 1, self.w1.value.data(), &du, &mut dz);
            dzs.push(dz);
        }

        let dxd = dx.data_mut();
        match self.variant {
            Variant::Se => {
                let inv = 1.0 / plane as f64;
                for (ch, g) in dxd.chunks_mut(plane).enumerate() {
                    g.iter_mut().for_each(|v| *v += dzs[0][ch] * inv);
                }
            }
            Variant::Sfsc => {
                let basis = cache.basis.as_ref().ok_or_else(|| Error::State("missing SFSC basis".into()))?;
                let group = c / basis.k();
                for (ch, g) in dxd.chunks_mut(plane).enumerate() {
                    let d = basis.planes()[ch / group].data();
                    g.iter_mut().zip(d).for_each(|(v, p)| *v += dzs[0][ch] * p);
                }
            }
            Variant::Mfsc => {
                let basis = cache.basis.as_ref().ok_or_else(|| Error::State("missing MFSC basis".into()))?;
                let k = basis.k();
                // dresp[n * C + ch]
                let mut dresp = vec![0.0; k * c];
                let (avg, max) = match self.aggregation {
                    Aggregation::Avg => (Some(&dzs[0]), None),
                    Aggregation::Max => (None, Some(&dzs[0])),
                    Aggregation::AvgMax => (Some(&dzs[0]), Some(&dzs[1])),
                };
                if let Some(dz) = avg {
                    for n in 0..k {
                        for ch in 0..c {
                            dresp[n * c + ch] += dz[ch] / k as f64;
                        }
                    }
                }
                if let Some(dz) = max {
                    for (ch, &n) in cache.argmax.iter().enumerate() {
                        dresp[n * c + ch] += dz[ch];
                    }
                }
                for (ch, g) in dxd.chunks_mut(plane).enumerate() {
                    for n in 0..k {
                        let coeff = dresp[n * c + ch];
                        if coeff != 0.0 {
                            g.iter_mut().zip(basis.planes()[n].data()).for_each(|(v, p)| *v += coeff * p);
                        }
                    }
                }
            }
        }
        Ok(AttentionGrads {
            dx,
            dw1: Tensor::from_vec(&[hidden, c], dw1)?,
            dw2: Tensor::from_vec(&[c, hidden], dw2)?,
        })
    }
}

#[derive(Debug, Clone)]
struct Branch {
    z: Vec<f64>,
    u: Vec<f64>,
    h: Vec<f64>,
}

/// Forward state needed by [`AttentionBlock::backward`].
#[derive(Debug, Clone)]
pub struct AttentionCache {
    variant: Variant,
    x: Tensor,
    basis: Option<Arc<DctBasis>>,
    branches: Vec<Branch>,
    s: Tensor,
    argmax: Vec<usize>,
}

impl AttentionCache {
    /// Pooled channel descriptor(s) fed to the bottleneck; two for avg+max.
    pub fn descriptors(&self) -> Vec<&[f64]> {
        self.branches.iter().map(|b| b.z.as_slice()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub s: Tensor,
    pub y: Tensor,
    pub cache: AttentionCache,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub dx: Tensor,
    pub dw1: Tensor,
    pub dw2: Tensor,
}
