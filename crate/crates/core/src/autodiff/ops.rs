//! Single-sample convenience wrappers over [`Graph`] operations.

use super::{Activation, Conv3dSpec, Graph, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// A scalar loss together with its gradient w.r.t. the loss input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWithGrad<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

/// Convolves `[C, D, H, W]` (or batched `[N, C, D, H, W]`) input.
pub fn conv3d_forward<T: Scalar>(
    input: &Tensor<T>,
    spec: &Conv3dSpec,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let unbatched = input.rank() == 4;
    let x = if unbatched {
        let mut shape = vec![1];
        shape.extend_from_slice(input.shape());
        input.clone().reshape(shape)?
    } else {
        input.clone()
    };
    let params = ParamSet::new();
    let mut g = Graph::new(&params);
    let xv = g.input(x);
    let w = g.input(weights.clone());
    let b = g.input(bias.clone());
    let y = g.conv3d(xv, w, b, *spec)?;
    let out = g.value(y).clone();
    if unbatched {
        let shape = out.shape()[1..].to_vec();
        out.reshape(shape)
    } else {
        Ok(out)
    }
}

/// `act(W·x + b)` for a vector `[n]` or a batch `[N, n]`.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    let unbatched = input.rank() == 1;
    let x = if unbatched {
        input.clone().reshape(vec![1, input.len()])?
    } else {
        input.clone()
    };
    let params = ParamSet::new();
    let mut g = Graph::new(&params);
    let xv = g.input(x);
    let w = g.input(weights.clone());
    let b = g.input(bias.clone());
    let pre = g.dense(xv, w, b)?;
    let y = g.activation(pre, activation);
    let out = g.value(y).clone();
    if unbatched {
        let len = out.len();
        out.reshape(vec![len])
    } else {
        Ok(out)
    }
}

/// `(q[action] - target)²` with gradient only on the selected output.
pub fn masked_mse_loss<T: Scalar>(q_pred: &Tensor<T>, action: usize, target: T) -> Result<LossWithGrad<T>> {
    if action >= q_pred.len() {
        return Err(Error::invalid(format!(
            "action {action} out of range for {} outputs",
            q_pred.len()
        )));
    }
    let params = ParamSet::new();
    let mut g = Graph::new(&params);
    let q = g.input_with_grad(q_pred.clone().reshape(vec![1, q_pred.len()])?);
    let loss = g.masked_mse(q, &[action], &[target])?;
    let grads = g.backward(loss)?;
    Ok(LossWithGrad {
        loss: g.value(loss).data()[0],
        grad: grads.of(q).expect("input requires grad").to_vec(),
    })
}

/// Binary cross-entropy of a single probability; `p` is clamped to
/// `[1e-7, 1 - 1e-7]` first.
pub fn bce_loss<T: Scalar>(p: T, label: u8) -> Result<LossWithGrad<T>> {
    if label > 1 {
        return Err(Error::invalid(format!("label {label} is not 0 or 1")));
    }
    let params = ParamSet::new();
    let mut g = Graph::new(&params);
    let pv = g.input_with_grad(Tensor::scalar(p));
    let loss = g.bce(pv, &[T::lit(label as f64)])?;
    let grads = g.backward(loss)?;
    Ok(LossWithGrad {
        loss: g.value(loss).data()[0],
        grad: grads.of(pv).expect("input requires grad").to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_zero_bias_conv_is_zero() {
        let spec = Conv3dSpec::new(1, 2);
        let x = Tensor::<f64>::zeros(vec![1, 6, 6, 6]);
        let w = Tensor::filled(spec.weight_shape(), 0.3);
        let b = Tensor::zeros(vec![2]);
        let y = conv3d_forward(&x, &spec, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_conv_is_affine() {
        let spec = Conv3dSpec::new(1, 1).with_geometry([1; 3], [1; 3], [0; 3]);
        let x = Tensor::new(vec![1, 1, 1, 1], vec![1.5]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1, 1], vec![-2.0]).unwrap();
        let b = Tensor::from_vec(vec![0.25]);
        let y = conv3d_forward(&x, &spec, &w, &b).unwrap();
        assert_eq!(y.data(), &[-2.0 * 1.5 + 0.25]);
    }

    #[test]
    fn conv_weight_shape_mismatch_is_rejected() {
        let spec = Conv3dSpec::new(1, 2);
        let x = Tensor::<f64>::zeros(vec![1, 6, 6, 6]);
        let w = Tensor::zeros(vec![2, 1, 3, 3, 3]);
        let b = Tensor::zeros(vec![2]);
        assert!(matches!(conv3d_forward(&x, &spec, &w, &b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let spec = Conv3dSpec::new(2, 3).with_geometry([3, 2, 2], [2, 1, 2], [1, 1, 0]);
        let dims = [4, 3, 5];
        let x: Vec<f64> = (0..2 * 60).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let w: Vec<f64> = (0..3 * 2 * 12).map(|i| ((i * 5 % 7) as f64) * 0.1 - 0.3).collect();
        let b = vec![0.1, -0.2, 0.3];
        let xt = Tensor::new(vec![2, 4, 3, 5], x.clone()).unwrap();
        let wt = Tensor::new(spec.weight_shape(), w.clone()).unwrap();
        let y = conv3d_forward(&xt, &spec, &wt, &Tensor::from_vec(b.clone())).unwrap();
        let out = spec.output_dims(dims).unwrap();
        assert_eq!(&y.shape()[1..], &out);
        for co in 0..3 {
            for oz in 0..out[0] {
                for oy in 0..out[1] {
                    for ox in 0..out[2] {
                        let mut acc = b[co];
                        for ci in 0..2 {
                            for kz in 0..3 {
                                for ky in 0..2 {
                                    for kx in 0..2 {
                                        let iz = (oz * 2 + kz) as isize - 1;
                                        let iy = (oy + ky) as isize - 1;
                                        let ix = (ox * 2 + kx) as isize;
                                        if iz < 0 || iy < 0 || iz >= 4 || iy >= 3 || ix >= 5 {
                                            continue;
                                        }
                                        let xi = ((ci * 4 + iz as usize) * 3 + iy as usize) * 5 + ix as usize;
                                        let wi = (((co * 2 + ci) * 3 + kz) * 2 + ky) * 2 + kx;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        let yi = ((co * out[0] + oz) * out[1] + oy) * out[2] + ox;
                        assert!((y.data()[yi] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn dense_activations() {
        let w = Tensor::<f64>::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(vec![2]);
        let x = Tensor::from_vec(vec![-1.0, 2.0]);
        let relu = dense_forward(&x, &w, &b, Activation::Relu).unwrap();
        assert_eq!(relu.data(), &[0.0, 2.0]);
        let elu = dense_forward(&x, &w, &b, Activation::Elu).unwrap();
        assert!((elu.data()[0] - (-0.632_120_558_828_557_7)).abs() < 1e-12);
        let zero = Tensor::zeros(vec![2]);
        let sig = dense_forward(&zero, &w, &b, Activation::Sigmoid).unwrap();
        assert_eq!(sig.data(), &[0.5, 0.5]);
        let bad = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(dense_forward(&bad, &w, &b, Activation::Identity).is_err());
    }

    #[test]
    fn masked_mse_examples() {
        let q = Tensor::<f64>::from_vec(vec![0.3, 0.7]);
        assert_eq!(masked_mse_loss(&q, 1, 0.7).unwrap().loss, 0.0);

        let q = Tensor::<f64>::from_vec(vec![0.0, 0.0]);
        let r = masked_mse_loss(&q, 0, 1.0).unwrap();
        assert_eq!(r.loss, 1.0);
        assert_eq!(r.grad, vec![-2.0, 0.0]);

        let q = Tensor::<f64>::from_vec(vec![0.5, -0.2]);
        let r = masked_mse_loss(&q, 1, 0.8).unwrap();
        assert!((r.loss - 1.0).abs() < 1e-12);
        assert_eq!(r.grad[0], 0.0);
        assert!(masked_mse_loss(&q, 2, 0.0).is_err());
    }

    #[test]
    fn bce_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(0.5f64, 1).unwrap().loss - ln2).abs() < 1e-12);
        assert!((bce_loss(0.5f64, 0).unwrap().loss - ln2).abs() < 1e-12);
        // -ln(0.9)
        assert!((bce_loss(0.9f64, 1).unwrap().loss - 0.105_360_515_657_826_3).abs() < 1e-12);
        let hard = bce_loss(0.0f64, 1).unwrap();
        assert!(hard.loss.is_finite());
        assert!(bce_loss(0.5f64, 2).is_err());
    }
}
