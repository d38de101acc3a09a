//! Additive angular margin softmax.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AamHead {
    /// `[num_speakers, embedding_dim]`, rows normalized on use.
    pub weight: Parameter,
    pub margin: f64,
    pub scale: f64,
}

impl AamHead {
    pub fn new<R: Rng + ?Sized>(num_speakers: usize, embedding_dim: usize, margin: f64, scale: f64, rng: &mut R) -> Result<Self> {
        if num_speakers < 2 || embedding_dim == 0 {
            return Err(Error::Config(format!(
                "AAM head needs >= 2 classes and a positive embedding size, got {num_speakers}x{embedding_dim}"
            )));
        }
        let w = Tensor::uniform(&[num_speakers, embedding_dim], 1.0 / (embedding_dim as f64).sqrt(), rng);
        Self::with_weight(w, margin, scale)
    }

    pub fn with_weight(weight: Tensor, margin: f64, scale: f64) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::dim(format!("AAM weight must be rank 2, got {:?}", weight.shape())));
        }
        if !(margin.is_finite() && margin >= 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("AAM needs margin >= 0 and scale > 0, got m={margin} s={scale}")));
        }
        Ok(AamHead { weight: Parameter::new("aam.weight", weight), margin, scale })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn embedding_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AamOutput {
    pub loss: f64,
    /// Margin-adjusted, scaled logits.
    pub logits: Vec<f64>,
    /// Cosine to every class row.
    pub cosines: Vec<f64>,
    pub d_emb: Tensor,
    pub d_weight: Tensor,
}

impl AamOutput {
    /// Class with the highest plain cosine.
    pub fn predicted(&self) -> usize {
        (0..self.cosines.len()).fold(0, |best, j| if self.cosines[j] > self.cosines[best] { j } else { best })
    }
}

fn unit(v: &[f64], what: &str) -> Result<(Vec<f64>, f64)> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 0.0 || !norm.is_finite() {
        return Err(Error::Numeric(format!("{what} has zero or non-finite norm")));
    }
    Ok((v.iter().map(|x| x / norm).collect(), norm))
}

/// Gradient through `v / |v|`.
fn unit_backward(u: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let proj: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
    u.iter().zip(g).map(|(a, b)| (b - a * proj) / norm).collect()
}

/// Target-class logit before scaling and its derivative in the cosine.
///
/// Past `θ = π - m` the margin would wrap around, so the penalty switches to
/// the linear `cos θ - m·sin m`.
fn margin_cos(c: f64, m: f64) -> (f64, f64) {
    if m == 0.0 {
        return (c, 1.0);
    }
    if c > (std::f64::consts::PI - m).cos() {
        let sin = (1.0 - c * c).max(0.0).sqrt();
        let value = c * m.cos() - sin * m.sin();
        let deriv = m.cos() + c * m.sin() / sin.max(1e-12);
        (value, deriv)
    } else {
        (c - m * m.sin(), 1.0)
    }
}

pub fn aam_loss(head: &AamHead, emb: &Tensor, label: usize) -> Result<AamOutput> {
    let (n, d) = (head.num_classes(), head.embedding_dim());
    if emb.len() != d {
        return Err(Error::dim(format!("embedding has {} values, head expects {d}", emb.len())));
    }
    if label >= n {
        return Err(Error::Index(format!("label {label} out of range for {n} classes")));
    }
    let (e_hat, e_norm) = unit(emb.data(), "embedding")?;
    let rows = head
        .weight
        .value
        .data()
        .chunks(d)
        .enumerate()
        .map(|(j, r)| unit(r, &format!("class row {j}")))
        .collect::<Result<Vec<_>>>()?;
    let cosines: Vec<f64> = rows.iter().map(|(w, _)| w.iter().zip(&e_hat).map(|(a, b)| a * b).sum()).collect();
    let (phi, dphi) = margin_cos(cosines[label], head.margin);
    let logits: Vec<f64> = cosines
        .iter()
        .enumerate()
        .map(|(j, &c)| head.scale * if j == label { phi } else { c })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    // ln_1p keeps precision when the target dominates
    let loss = if logits[label] == max {
        logits.iter().enumerate().filter(|&(j, _)| j != label).map(|(_, l)| (l - max).exp()).sum::<f64>().ln_1p()
    } else {
        max + sum.ln() - logits[label]
    };

    let mut d_ehat = vec![0.0; d];
    let mut d_weight = Vec::with_capacity(n * d);
    for (j, (w_hat, w_norm)) in rows.iter().enumerate() {
        let p = (logits[j] - max).exp() / sum;
        let g = p - if j == label { 1.0 } else { 0.0 };
        let dc = head.scale * g * if j == label { dphi } else { 1.0 };
        d_ehat.iter_mut().zip(w_hat).for_each(|(a, w)| *a += dc * w);
        let dw_hat: Vec<f64> = e_hat.iter().map(|e| dc * e).collect();
        d_weight.extend(unit_backward(w_hat, *w_norm, &dw_hat));
    }
    let d_emb = Tensor::from_vec(emb.shape(), unit_backward(&e_hat, e_norm, &d_ehat))?;
    Ok(AamOutput {
        loss,
        logits,
        cosines,
        d_emb,
        d_weight: Tensor::from_vec(&[n, d], d_weight)?,
    })
}
