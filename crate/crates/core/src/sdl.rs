//! Supervised baseline: the CNN trained with binary cross-entropy.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Graph};
use crate::error::{Error, Result};
use crate::model::{decide, NetworkConfig, SdlNetwork};
use crate::phantom::{Dataset, LabeledVolume};
use crate::stats::{Evaluation, Prediction};
use crate::util::{derive_seed, write_string};

const PREDICT_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdlTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Set from the run seed, not the config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SdlTrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch: 24, lr: 1e-4, seed: 0 }
    }
}

impl SdlTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::invalid("epochs and batch must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean per-image BCE over the epoch.
    pub loss: f64,
    /// Fraction of training images classified correctly during the epoch.
    pub train_accuracy: f64,
}

pub const EPOCH_HEADER: &str = "epoch,loss,train_accuracy";

pub fn epochs_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from(EPOCH_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.loss, r.train_accuracy);
    }
    out
}

pub fn write_epochs_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    write_string(path, &epochs_csv(rows))
}

pub struct SdlOutcome {
    pub net: SdlNetwork<f32>,
    pub epochs: Vec<EpochRow>,
}

pub fn train_sdl(dataset: &Dataset, config: &SdlTrainConfig) -> Result<SdlOutcome> {
    let dims = dataset.dims().ok_or_else(|| Error::invalid("dataset is empty"))?;
    train_sdl_with(dataset, config, &NetworkConfig::standard(dims), |_| {})
}

/// Mini-batch training on the train split only. The order is reshuffled
/// every epoch and the last, partial batch is kept.
pub fn train_sdl_with(
    dataset: &Dataset,
    config: &SdlTrainConfig,
    net_config: &NetworkConfig,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<SdlOutcome> {
    config.validate()?;
    let train = &dataset.train;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut net = SdlNetwork::<f32>::new(net_config.clone(), derive_seed(config.seed, "sdl-init"))?;
    let mut adam = AdamState::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "sdl-shuffle"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rows = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch) {
            let vols: Vec<_> = chunk.iter().map(|&i| &train[i].volume).collect();
            let labels: Vec<f32> = chunk.iter().map(|&i| train[i].label.as_index() as f32).collect();
            let (loss, grads) = {
                let mut g = Graph::new(net.params());
                let x = g.input(net.input_batch(&vols)?);
                let p = net.build(&mut g, x)?;
                correct += g
                    .value(p)
                    .data()
                    .iter()
                    .zip(chunk)
                    .filter(|(&p, &i)| decide(p) == train[i].label)
                    .count();
                let loss = g.bce(p, &labels)?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        layer: "loss".into(),
                        detail: format!("BCE {value} in epoch {epoch}"),
                    });
                }
                (value, g.backward(loss)?.into_params())
            };
            loss_sum += loss as f64 * chunk.len() as f64;
            let params = net.params_mut();
            params.zero_grads();
            params.accumulate(&grads);
            adam.step(params)?;
        }
        let row = EpochRow {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
        };
        on_epoch(&row);
        rows.push(row);
    }
    Ok(SdlOutcome { net, epochs: rows })
}

/// Threshold-0.5 decisions for `volumes`; an exact 0.5 is tumor.
pub fn predict_sdl(net: &SdlNetwork<f32>, volumes: &[LabeledVolume]) -> Result<Evaluation> {
    if volumes.is_empty() {
        return Err(Error::invalid("split is empty"));
    }
    let mut predictions = Vec::with_capacity(volumes.len());
    for chunk in volumes.chunks(PREDICT_CHUNK) {
        let vols: Vec<_> = chunk.iter().map(|v| &v.volume).collect();
        for (v, p) in chunk.iter().zip(net.probabilities(&vols)?) {
            predictions.push(Prediction { id: v.id.clone(), label: v.label, prediction: decide(p) });
        }
    }
    Ok(Evaluation::new(predictions))
}
