use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ImpressionPair, LabeledImpression};
use crate::autodiff::{glorot_init, AdamState, ParamId, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::model::{load_groups, read_checkpoint_groups, write_checkpoint, ENCODER_MAGIC};
use crate::util::{derive_seed, fnv1a};

pub const HASH_BUCKETS: usize = 512;
pub const ENCODER_DIM: usize = 64;
const HASH_SEED: u64 = 0x7a3c_91d2_0b5e_4f18;

/// Maps text to a fixed-length unit vector.
pub trait SentenceEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

/// Lowercased runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token hashing into buckets, mean pooling, one dense layer with identity
/// activation, then L2 normalisation.
#[derive(Clone, Debug)]
pub struct HashingEncoder<T: Scalar = f32> {
    buckets: usize,
    dim: usize,
    params: ParamSet<T>,
    weight: ParamId,
    bias: ParamId,
}

/// Sparse pooled bag of buckets: `(bucket, weight)` sorted by bucket.
type Pooled = Vec<(usize, f64)>;

/// Encoding with the intermediates needed for backpropagation.
struct Encoded {
    pooled: Pooled,
    unit: Vec<f64>,
    norm: f64,
}

impl<T: Scalar> HashingEncoder<T> {
    pub fn new(seed: u64) -> Result<Self> {
        Self::with_dims(HASH_BUCKETS, ENCODER_DIM, seed)
    }

    pub fn with_dims(buckets: usize, dim: usize, seed: u64) -> Result<Self> {
        if buckets == 0 || dim == 0 {
            return Err(Error::invalid("encoder buckets and dimension must be positive"));
        }
        let mut params = ParamSet::new();
        let weight = params.add("proj.weight", glorot_init(buckets, dim, seed)?);
        let bias = params.add("proj.bias", Tensor::zeros(vec![dim]));
        Ok(Self { buckets, dim, params, weight, bias })
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(HASH_SEED, token.as_bytes()) % self.buckets as u64) as usize
    }

    fn pool(&self, text: &str) -> Result<Pooled> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::invalid(format!("text {text:?} has no tokens")));
        }
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for t in &tokens {
            *counts.entry(self.bucket(t)).or_default() += 1;
        }
        let n = tokens.len() as f64;
        let mut pooled: Pooled = counts.into_iter().map(|(b, c)| (b, c as f64 / n)).collect();
        pooled.sort_unstable_by_key(|&(b, _)| b);
        Ok(pooled)
    }

    fn project(&self, pooled: &Pooled) -> Result<Encoded> {
        let w = self.params.get(self.weight).data();
        let mut z: Vec<f64> = self.params.get(self.bias).data().iter().map(|b| b.as_f64()).collect();
        for (i, zi) in z.iter_mut().enumerate() {
            let row = &w[i * self.buckets..(i + 1) * self.buckets];
            *zi += pooled.iter().map(|&(j, h)| row[j].as_f64() * h).sum::<f64>();
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Divergence { layer: "proj".into(), detail: format!("embedding norm {norm}") });
        }
        let unit = z.into_iter().map(|v| v / norm).collect();
        Ok(Encoded { pooled: pooled.clone(), unit, norm })
    }

    /// Adds `∂L/∂params` for an embedding given `g = ∂L/∂unit`.
    ///
    /// With `e = z/|z|`, `∂e/∂z = (I − e eᵀ)/|z|`.
    fn backprop(&self, enc: &Encoded, g: &[f64], scale: f64, gw: &mut [f64], gb: &mut [f64]) {
        let eg: f64 = enc.unit.iter().zip(g).map(|(e, g)| e * g).sum();
        for i in 0..self.dim {
            let dz = scale * (g[i] - enc.unit[i] * eg) / enc.norm;
            gb[i] += dz;
            let row = &mut gw[i * self.buckets..(i + 1) * self.buckets];
            for &(j, h) in &enc.pooled {
                row[j] += dz * h;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, ENCODER_MAGIC, &self.params)
    }

    /// Loads a checkpoint; bucket count and dimension come from its shapes.
    pub fn load(path: &Path) -> Result<Self> {
        let groups = read_checkpoint_groups(path, ENCODER_MAGIC)?;
        let shape = groups
            .first()
            .filter(|g| g.shape.len() == 2)
            .map(|g| g.shape.clone())
            .ok_or_else(|| Error::invalid(format!("{} is not an encoder checkpoint", path.display())))?;
        let mut enc = Self::with_dims(shape[1], shape[0], 0)?;
        load_groups(groups, &mut enc.params)?;
        Ok(enc)
    }
}

impl<T: Scalar> SentenceEncoder for HashingEncoder<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.project(&self.pool(text)?)?.unit)
    }
}

/// `(1 − cos)²` for same-class pairs, `max(0, cos − margin)²` otherwise.
/// Returns the loss and its derivative in `cos`.
pub fn contrastive_loss(cos: f64, same_class: bool, margin: f64) -> (f64, f64) {
    if same_class {
        ((1.0 - cos).powi(2), -2.0 * (1.0 - cos))
    } else {
        let d = (cos - margin).max(0.0);
        (d * d, 2.0 * d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub margin: f64,
    /// Set from the run seed, not the config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch: 64, lr: 1e-2, margin: 0.5, seed: 0 }
    }
}

impl<T: Scalar> HashingEncoder<T> {
    /// Mean contrastive loss over `pairs` and, if `grads` is given, its
    /// gradient added into `(weight, bias)` buffers.
    fn pair_batch(
        &self,
        pooled: &HashMap<&str, Pooled>,
        pairs: &[&ImpressionPair],
        margin: f64,
        mut grads: Option<(&mut [f64], &mut [f64])>,
    ) -> Result<f64> {
        let scale = 1.0 / pairs.len() as f64;
        let mut total = 0.0;
        for p in pairs {
            let a = self.project(&pooled[p.id_a.as_str()])?;
            let b = self.project(&pooled[p.id_b.as_str()])?;
            let cos: f64 = a.unit.iter().zip(&b.unit).map(|(x, y)| x * y).sum();
            let (loss, dcos) = contrastive_loss(cos, p.same_class, margin);
            total += loss;
            if let Some((gw, gb)) = grads.as_mut() {
                if dcos != 0.0 {
                    let ga: Vec<f64> = b.unit.iter().map(|v| dcos * v).collect();
                    let gb_: Vec<f64> = a.unit.iter().map(|v| dcos * v).collect();
                    self.backprop(&a, &ga, scale, gw, gb);
                    self.backprop(&b, &gb_, scale, gw, gb);
                }
            }
        }
        Ok(total * scale)
    }

    fn pooled_by_id<'a>(&self, impressions: &'a [LabeledImpression]) -> Result<HashMap<&'a str, Pooled>> {
        impressions.iter().map(|imp| Ok((imp.id.as_str(), self.pool(&imp.text)?))).collect()
    }
}

/// Trains on shuffled mini-batches of pairs with Adam; returns the mean
/// loss of every epoch.
pub fn train_encoder<T: Scalar>(
    encoder: &mut HashingEncoder<T>,
    impressions: &[LabeledImpression],
    pairs: &[ImpressionPair],
    config: &EncoderTrainConfig,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to train on"));
    }
    if config.batch == 0 || !(config.lr > 0.0) {
        return Err(Error::invalid("encoder batch and learning rate must be positive"));
    }
    let pooled = encoder.pooled_by_id(impressions)?;
    if let Some(p) = pairs.iter().find(|p| !pooled.contains_key(p.id_a.as_str()) || !pooled.contains_key(p.id_b.as_str())) {
        return Err(Error::Lookup(format!("pair ({}, {}) references an unknown impression", p.id_a, p.id_b)));
    }
    let mut adam = AdamState::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "encoder-shuffle"));
    let mut order: Vec<&ImpressionPair> = pairs.iter().collect();
    let (wn, bn) = (encoder.dim * encoder.buckets, encoder.dim);
    let mut losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch) {
            let mut gw = vec![0.0; wn];
            let mut gb = vec![0.0; bn];
            let loss = encoder.pair_batch(&pooled, chunk, config.margin, Some((&mut gw, &mut gb)))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { layer: "encoder".into(), detail: format!("loss {loss} in epoch {epoch}") });
            }
            epoch_loss += loss * chunk.len() as f64;
            let (w, b) = (encoder.weight, encoder.bias);
            for (dst, src) in encoder.params.get_mut(w).grad_mut().iter_mut().zip(&gw) {
                *dst = T::lit(*src);
            }
            for (dst, src) in encoder.params.get_mut(b).grad_mut().iter_mut().zip(&gb) {
                *dst = T::lit(*src);
            }
            adam.step(&mut encoder.params)?;
        }
        losses.push(epoch_loss / pairs.len() as f64);
    }
    Ok(losses)
}
