use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{aam_loss, Adam, AamHead, SpeakerNet};
use crate::error::{Error, Result};
use crate::features::{crop, spec_mask, FeatureMatrix, MaskConfig};
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Random crop length in frames.
    pub crop_frames: usize,
    /// Spectral masking, if any.
    pub mask: Option<MaskConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 8, crop_frames: 200, mask: None }
    }
}

/// A normalized utterance and its speaker index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub features: FeatureMatrix,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub steps: usize,
}

/// One shuffled pass over `data`. Gradients are averaged over each batch.
pub fn train_epoch<R: Rng + ?Sized>(
    net: &mut SpeakerNet,
    head: &mut AamHead,
    opt: &mut Adam,
    data: &[TrainExample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.crop_frames == 0 {
        return Err(Error::Config("batch_size and crop_frames must be positive".into()));
    }
    if let Some(ex) = data.iter().find(|ex| ex.label >= head.num_classes()) {
        return Err(Error::Input(format!("label {} exceeds the {} head classes", ex.label, head.num_classes())));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);

    let (mut total_loss, mut correct, mut steps) = (0.0, 0usize, 0usize);
    for batch in order.chunks(cfg.batch_size) {
        net.zero_grad();
        head.weight.zero_grad();
        let weight = 1.0 / batch.len() as f64;
        for &i in batch {
            let ex = &data[i];
            let mut x = crop(&ex.features, cfg.crop_frames, rng)?;
            if let Some(mask) = &cfg.mask {
                x = spec_mask(&x, mask, rng)?;
            }
            let (emb, cache) = net.forward_train(&x.values)?;
            let out = aam_loss(head, &emb, ex.label).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("non-finite loss at step {steps} (example {i}): {m}")),
                other => other,
            })?;
            if !out.loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {steps} (example {i})")));
            }
            total_loss += out.loss;
            correct += usize::from(out.predicted() == ex.label);
            head.weight.accumulate(&scaled(&out.d_weight, weight))?;
            net.backward(&cache, &scaled(&out.d_emb, weight))?;
        }
        let mut params: Vec<&mut Parameter> = net.parameters_mut();
        params.push(&mut head.weight);
        if params.iter().any(|p| !p.grad.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at step {steps}")));
        }
        opt.step(&mut params)?;
        steps += 1;
    }
    Ok(EpochMetrics { mean_loss: total_loss / data.len() as f64, accuracy: correct as f64 / data.len() as f64, steps })
}

fn scaled(t: &Tensor, factor: f64) -> Tensor {
    crate::tensor::scale(t, factor)
}

/// Network, head, optimizer and RNG bundled for multi-epoch runs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: SpeakerNet,
    pub head: AamHead,
    pub opt: Adam,
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(net: SpeakerNet, head: AamHead, opt: Adam, cfg: TrainConfig, seed: u64) -> Result<Self> {
        if net.embedding_dim() != head.embedding_dim() {
            return Err(Error::Config(format!(
                "network embeds to {} dims but the head expects {}",
                net.embedding_dim(),
                head.embedding_dim()
            )));
        }
        opt.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Ok(Trainer { net, head, opt, cfg, rng, epochs_done: 0 })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn epoch(&mut self, data: &[TrainExample]) -> Result<EpochMetrics> {
        let m = train_epoch(&mut self.net, &mut self.head, &mut self.opt, data, &self.cfg, &mut self.rng)?;
        self.epochs_done += 1;
        Ok(m)
    }

    /// Runs `epochs` passes, calling `log(epoch, metrics)` after each.
    pub fn fit(
        &mut self,
        data: &[TrainExample],
        epochs: usize,
        mut log: impl FnMut(usize, &EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let m = self.epoch(data)?;
            log(self.epochs_done, &m);
            history.push(m);
        }
        Ok(history)
    }
}
