use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{read_checkpoint, write_checkpoint, DQN_MAGIC};
use super::shapes::ConvShapes;
use super::trunk::{volume_batch, Layer, NetworkConfig, Trunk};
use crate::autodiff::{Activation, Graph, ParamSet, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::phantom::Volume;

pub const NUM_ACTIONS: usize = 2;

/// Two-input action-value network.
///
/// The volume passes through the convolutional trunk and dense chain; the
/// scalar `pred_corr` flag passes through its own dense layer. Both 64-wide
/// outputs are concatenated and mapped to `Q(s, 0)` and `Q(s, 1)` by a
/// linear head.
#[derive(Clone, Debug)]
pub struct DqnNetwork<T: Scalar = f32> {
    config: NetworkConfig,
    shapes: ConvShapes,
    params: ParamSet<T>,
    trunk: Trunk,
    branch: Layer,
    head: Layer,
}

impl<T: Scalar> DqnNetwork<T> {
    /// Glorot-initialised weights, zero biases.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let shapes = config.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let trunk = Trunk::build(&mut params, &config, &shapes, Activation::Relu, &mut rng)?;
        let branch = Layer::dense(&mut params, "predcorr", 1, config.branch_width, &mut rng)?;
        let joined = config.feature_width() + config.branch_width;
        let head = Layer::dense(&mut params, "head", joined, NUM_ACTIONS, &mut rng)?;
        Ok(Self { config, shapes, params, trunk, branch, head })
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

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn input_batch(&self, volumes: &[&Volume]) -> Result<Tensor<T>> {
        volume_batch(volumes, self.config.input_dims)
    }

    /// Image features `[N, 64]`; independent of `pred_corr`.
    pub fn features(&self, g: &mut Graph<'_, T>, volumes: Var) -> Result<Var> {
        self.trunk.forward(g, volumes)
    }

    /// Q-values `[N, 2]` from features and one `pred_corr` flag per row.
    pub fn head(&self, g: &mut Graph<'_, T>, features: Var, pred_corr: &[u8]) -> Result<Var> {
        if let Some(&bad) = pred_corr.iter().find(|&&p| p > 1) {
            return Err(Error::invalid(format!("pred_corr {bad} is not 0 or 1")));
        }
        let flags = Tensor::new(vec![pred_corr.len(), 1], pred_corr.iter().map(|&p| T::lit(p as f64)).collect())?;
        let flags = g.input(flags);
        let b = self.branch.apply_dense(g, flags, Activation::Relu)?;
        let joined = g.concat(features, b)?;
        self.head.apply_dense(g, joined, Activation::Identity)
    }

    /// `(Q(s, 0), Q(s, 1))` for state `(volume, pred_corr)`.
    pub fn forward(&self, volume: &Volume, pred_corr: u8) -> Result<[T; 2]> {
        Ok(self.forward_batch(&[volume], &[pred_corr])?[0])
    }

    pub fn forward_batch(&self, volumes: &[&Volume], pred_corr: &[u8]) -> Result<Vec<[T; 2]>> {
        if volumes.len() != pred_corr.len() {
            return Err(Error::invalid("one pred_corr flag per volume is required"));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(self.input_batch(volumes)?);
        let f = self.features(&mut g, x)?;
        let q = self.head(&mut g, f, pred_corr)?;
        Ok(g.value(q).data().chunks(NUM_ACTIONS).map(|c| [c[0], c[1]]).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, DQN_MAGIC, &self.params)
    }

    /// Loads weights saved by [`save`](Self::save) into a network built from `config`.
    pub fn load(path: &Path, config: NetworkConfig) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        read_checkpoint(path, DQN_MAGIC, &mut net.params)?;
        Ok(net)
    }
}

/// `dqn_forward` under its operation name.
pub fn dqn_forward<T: Scalar>(net: &DqnNetwork<T>, volume: &Volume, pred_corr: u8) -> Result<[T; 2]> {
    net.forward(volume, pred_corr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Conv3dSpec;

    pub(crate) fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            input_dims: [8, 8, 6],
            conv: vec![
                Conv3dSpec::new(1, 3).with_geometry([3; 3], [2; 3], [1; 3]),
                Conv3dSpec::new(3, 4).with_geometry([3; 3], [2; 3], [1; 3]),
            ],
            hidden: vec![10, 8, 6],
            branch_width: 6,
        }
    }

    fn noisy_volume(dims: [usize; 3], seed: u32) -> Volume {
        let n = dims.iter().product::<usize>();
        let vox = (0..n).map(|i| (((i as u32).wrapping_mul(2654435761).wrapping_add(seed)) % 1000) as f32 / 1000.0).collect();
        Volume::new(dims, vox).unwrap()
    }

    #[test]
    fn parameter_layout() {
        let net = DqnNetwork::<f32>::new(NetworkConfig::standard([32, 32, 16]), 1).unwrap();
        let names: Vec<&str> = net.params().iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "fc1.weight", "fc1.bias", "fc2.weight",
                "fc2.bias", "fc3.weight", "fc3.bias", "predcorr.weight", "predcorr.bias", "head.weight", "head.bias"
            ]
        );
        let fc1 = net.params().get(net.params().find("fc1.weight").unwrap());
        assert_eq!(fc1.shape(), &[512, 9408]);
        let head = net.params().get(net.params().find("head.weight").unwrap());
        assert_eq!(head.shape(), &[2, 128]);
    }

    #[test]
    fn forward_is_pure_and_uses_pred_corr() {
        let net = DqnNetwork::<f64>::new(tiny_config(), 4).unwrap();
        let v = noisy_volume([8, 8, 6], 1);
        let a = net.forward(&v, 1).unwrap();
        assert_eq!(a, net.forward(&v, 1).unwrap());
        assert_ne!(a, net.forward(&v, 0).unwrap());
    }

    #[test]
    fn wrong_dims_rejected() {
        let net = DqnNetwork::<f32>::new(tiny_config(), 4).unwrap();
        assert!(net.forward(&Volume::zeros([8, 8, 5]), 0).is_err());
        assert!(net.forward(&Volume::zeros([8, 8, 6]), 2).is_err());
    }

    #[test]
    fn batch_equals_single() {
        let net = DqnNetwork::<f64>::new(tiny_config(), 9).unwrap();
        let v1 = noisy_volume([8, 8, 6], 3);
        let v2 = noisy_volume([8, 8, 6], 7);
        let batch = net.forward_batch(&[&v1, &v2], &[0, 1]).unwrap();
        assert_eq!(batch[0], net.forward(&v1, 0).unwrap());
        let single = net.forward(&v2, 1).unwrap();
        assert!((batch[1][0] - single[0]).abs() < 1e-12 && (batch[1][1] - single[1]).abs() < 1e-12);
    }

    #[test]
    fn every_parameter_group_matches_finite_differences() {
        let mut net = DqnNetwork::<f64>::new(tiny_config(), 11).unwrap();
        // Zero biases put ReLU units exactly on their kink; shift them off it.
        let ids: Vec<_> = net.params().ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if net.params().name(id).ends_with(".bias") {
                for (i, b) in net.params_mut().get_mut(id).data_mut().iter_mut().enumerate() {
                    *b = 0.05 + 0.01 * ((i + k) % 7) as f64;
                }
            }
        }
        let net = net;
        let v1 = noisy_volume([8, 8, 6], 5);
        let v2 = noisy_volume([8, 8, 6], 8);
        let input = net.input_batch(&[&v1, &v2]).unwrap();
        let fragment = |g: &mut Graph<'_, f64>, x: Var| {
            let f = net.features(g, x)?;
            net.head(g, f, &[0, 1])
        };

        let mut g = Graph::new(net.params());
        let x = g.input(input.clone());
        let q = fragment(&mut g, x).unwrap();
        let loss = g.weighted_sum(q, &[1.0, -0.5, 0.25, 2.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        for id in net.params().ids() {
            let name = net.params().name(id);
            let grad = grads.params().get(id).unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(grad.iter().any(|&v| v != 0.0), "{name} gradient is all zero");
        }

        let mut params = net.params().clone();
        let report = crate::autodiff::grad_check(&mut params, &input, 1e-5, fragment).unwrap();
        assert!(report.passed(), "{} at {}", report.max_rel_error, report.worst);
        assert_eq!(report.checked, net.num_params() + input.len());
    }
}
