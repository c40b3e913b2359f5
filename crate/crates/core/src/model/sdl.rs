use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{read_checkpoint, write_checkpoint, SDL_MAGIC};
use super::shapes::ConvShapes;
use super::trunk::{volume_batch, Layer, NetworkConfig, Trunk};
use crate::autodiff::{Activation, Graph, ParamSet, Scalar, Tensor, Var};
use crate::error::Result;
use crate::phantom::{Label, Volume};

/// Supervised CNN: the same trunk with ELU activations and a single
/// sigmoid output giving P(tumor).
#[derive(Clone, Debug)]
pub struct SdlNetwork<T: Scalar = f32> {
    config: NetworkConfig,
    shapes: ConvShapes,
    params: ParamSet<T>,
    trunk: Trunk,
    out: Layer,
}

impl<T: Scalar> SdlNetwork<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let shapes = config.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let trunk = Trunk::build(&mut params, &config, &shapes, Activation::Elu, &mut rng)?;
        let out = Layer::dense(&mut params, "out", config.feature_width(), 1, &mut rng)?;
        Ok(Self { config, shapes, params, trunk, out })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn shapes(&self) -> &ConvShapes {
        &self.shapes
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn input_batch(&self, volumes: &[&Volume]) -> Result<Tensor<T>> {
        volume_batch(volumes, self.config.input_dims)
    }

    /// Probabilities `[N, 1]`.
    pub fn build(&self, g: &mut Graph<'_, T>, volumes: Var) -> Result<Var> {
        let f = self.trunk.forward(g, volumes)?;
        self.out.apply_dense(g, f, Activation::Sigmoid)
    }

    pub fn probabilities(&self, volumes: &[&Volume]) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.params);
        let x = g.input(self.input_batch(volumes)?);
        let p = self.build(&mut g, x)?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn forward(&self, volume: &Volume) -> Result<T> {
        Ok(self.probabilities(&[volume])?[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, SDL_MAGIC, &self.params)
    }

    pub fn load(path: &Path, config: NetworkConfig) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        read_checkpoint(path, SDL_MAGIC, &mut net.params)?;
        Ok(net)
    }
}

/// `p >= 0.5` is tumor; an exact 0.5 resolves to tumor.
pub fn decide<T: Scalar>(p: T) -> Label {
    if p >= T::lit(0.5) {
        Label::Tumor
    } else {
        Label::Normal
    }
}

pub fn sdl_forward<T: Scalar>(net: &SdlNetwork<T>, volume: &Volume) -> Result<T> {
    net.forward(volume)
}
