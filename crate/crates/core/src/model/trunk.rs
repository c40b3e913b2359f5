use rand::Rng;
use serde::{Deserialize, Serialize};

use super::shapes::{derive_conv_shapes, ConvShapes};
use crate::autodiff::{glorot_uniform, Activation, Conv3dSpec, Graph, ParamId, ParamSet, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::phantom::Volume;

/// Layer sizes shared by the Q network and the supervised CNN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Volume dims `(x, y, z)`.
    pub input_dims: [usize; 3],
    pub conv: Vec<Conv3dSpec>,
    pub hidden: Vec<usize>,
    /// Width of the dense layer fed by the scalar `pred_corr` input.
    pub branch_width: usize,
}

impl NetworkConfig {
    /// Two 5×5×5 convolutions (32 then 64 channels), dense 512 → 256 → 64,
    /// and a 64-wide `pred_corr` branch.
    pub fn standard(input_dims: [usize; 3]) -> Self {
        Self {
            input_dims,
            conv: vec![Conv3dSpec::new(1, 32), Conv3dSpec::new(32, 64)],
            hidden: vec![512, 256, 64],
            branch_width: 64,
        }
    }

    pub fn shapes(&self) -> Result<ConvShapes> {
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.branch_width == 0 {
            return Err(Error::invalid("hidden layer sizes must be non-empty and positive"));
        }
        derive_conv_shapes(self.input_dims, &self.conv)
    }

    pub fn feature_width(&self) -> usize {
        *self.hidden.last().expect("validated non-empty")
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Layer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Layer {
    pub fn dense<T: Scalar, R: Rng>(params: &mut ParamSet<T>, name: &str, n_in: usize, n_out: usize, rng: &mut R) -> Result<Layer> {
        let weight = params.add(format!("{name}.weight"), glorot_uniform(vec![n_out, n_in], n_in, n_out, rng)?);
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![n_out]));
        Ok(Layer { weight, bias })
    }

    pub fn apply_dense<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, act: Activation) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let y = g.dense(x, w, b)?;
        Ok(g.activation(y, act))
    }
}

/// Convolutions followed by the dense chain.
#[derive(Clone, Debug)]
pub(crate) struct Trunk {
    conv: Vec<(Layer, Conv3dSpec)>,
    dense: Vec<Layer>,
    activation: Activation,
}

impl Trunk {
    pub fn build<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        config: &NetworkConfig,
        shapes: &ConvShapes,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Trunk> {
        let mut conv = Vec::new();
        for (i, spec) in config.conv.iter().enumerate() {
            let (fan_in, fan_out) = spec.fans();
            let weight = params.add(format!("conv{}.weight", i + 1), glorot_uniform(spec.weight_shape(), fan_in, fan_out, rng)?);
            let bias = params.add(format!("conv{}.bias", i + 1), Tensor::zeros(vec![spec.out_channels]));
            conv.push((Layer { weight, bias }, *spec));
        }
        let mut dense = Vec::new();
        let mut width = shapes.flatten;
        for (i, &h) in config.hidden.iter().enumerate() {
            dense.push(Layer::dense(params, &format!("fc{}", i + 1), width, h, rng)?);
            width = h;
        }
        Ok(Trunk { conv, dense, activation })
    }

    /// `[N, 1, z, y, x]` → `[N, feature_width]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (layer, spec) in &self.conv {
            let (w, b) = (g.param(layer.weight), g.param(layer.bias));
            let c = g.conv3d(h, w, b, *spec)?;
            h = g.activation(c, self.activation);
        }
        h = g.flatten(h);
        for layer in &self.dense {
            h = layer.apply_dense(g, h, self.activation)?;
        }
        Ok(h)
    }
}

/// Stacks volumes into a `[N, 1, z, y, x]` tensor, checking their dims.
pub fn volume_batch<T: Scalar>(volumes: &[&Volume], dims: [usize; 3]) -> Result<Tensor<T>> {
    if volumes.is_empty() {
        return Err(Error::invalid("empty volume batch"));
    }
    let per = dims.iter().product::<usize>();
    let mut data = Vec::with_capacity(per * volumes.len());
    for v in volumes {
        if v.dims() != dims {
            return Err(Error::invalid(format!(
                "volume dims {:?} do not match network input {dims:?}",
                v.dims()
            )));
        }
        data.extend(v.voxels().iter().map(|&x| T::from_f32(x)));
    }
    Tensor::new(vec![volumes.len(), 1, dims[2], dims[1], dims[0]], data)
}
