use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// 3D convolution hyperparameters. Per-axis arrays are in tensor order
/// (depth, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dSpec {
    /// 5×5×5 kernel, stride 2, padding 1.
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: [5; 3],
            stride: [2; 3],
            padding: [1; 3],
        }
    }

    pub fn with_geometry(mut self, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        self.kernel = kernel;
        self.stride = stride;
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("conv3d channel counts must be positive"));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::invalid(format!(
                "conv3d kernel {:?} and stride {:?} must be >= 1",
                self.kernel, self.stride
            )));
        }
        Ok(())
    }

    /// `floor((n + 2p - k) / s) + 1` per axis; fails if any axis would be empty.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for axis in 0..3 {
            let padded = input[axis] + 2 * self.padding[axis];
            if input[axis] == 0 || padded < self.kernel[axis] {
                return Err(Error::invalid(format!(
                    "conv3d axis {axis}: input {} with padding {} is smaller than kernel {}",
                    input[axis], self.padding[axis], self.kernel[axis]
                )));
            }
            out[axis] = (padded - self.kernel[axis]) / self.stride[axis] + 1;
        }
        Ok(out)
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let [kd, kh, kw] = self.kernel;
        vec![self.out_channels, self.in_channels, kd, kh, kw]
    }

    /// Rows of the unfolded input matrix (`in_channels · kd · kh · kw`).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    /// Glorot fan sizes (receptive field times channels).
    pub fn fans(&self) -> (usize, usize) {
        let field: usize = self.kernel.iter().product();
        (self.in_channels * field, self.out_channels * field)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub spec: Conv3dSpec,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeometry {
    pub fn new(spec: Conv3dSpec, input: [usize; 3]) -> Result<Self> {
        let output = spec.output_dims(input)?;
        Ok(Self { spec, input, output })
    }

    pub fn positions(&self) -> usize {
        self.output.iter().product()
    }

    pub fn input_len(&self) -> usize {
        self.spec.in_channels * self.input.iter().product::<usize>()
    }

    /// Unfolds one sample `[C, D, H, W]` into `cols[K, P]`.
    pub fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let [d, h, w] = self.input;
        let [od, oh, ow] = self.output;
        let [kd, kh, kw] = self.spec.kernel;
        let [sd, sh, sw] = self.spec.stride;
        let [pd, ph, pw] = self.spec.padding;
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.spec.in_channels {
            let chan = &x[c * d * h * w..(c + 1) * d * h * w];
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let out_row = &mut cols[row * p..(row + 1) * p];
                        let mut col = 0;
                        for oz in 0..od {
                            let iz = (oz * sd + kz) as isize - pd as isize;
                            let z_ok = iz >= 0 && (iz as usize) < d;
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let y_ok = z_ok && iy >= 0 && (iy as usize) < h;
                                if !y_ok {
                                    out_row[col..col + ow].iter_mut().for_each(|v| *v = T::zero());
                                    col += ow;
                                    continue;
                                }
                                let base = (iz as usize * h + iy as usize) * w;
                                for ox in 0..ow {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    out_row[col] = if ix >= 0 && (ix as usize) < w {
                                        chan[base + ix as usize]
                                    } else {
                                        T::zero()
                                    };
                                    col += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters `cols[K, P]` back into `dx`.
    pub fn col2im_add<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let [d, h, w] = self.input;
        let [od, oh, ow] = self.output;
        let [kd, kh, kw] = self.spec.kernel;
        let [sd, sh, sw] = self.spec.stride;
        let [pd, ph, pw] = self.spec.padding;
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.spec.in_channels {
            let chan = &mut dx[c * d * h * w..(c + 1) * d * h * w];
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let src = &cols[row * p..(row + 1) * p];
                        let mut col = 0;
                        for oz in 0..od {
                            let iz = (oz * sd + kz) as isize - pd as isize;
                            let z_ok = iz >= 0 && (iz as usize) < d;
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                if !(z_ok && iy >= 0 && (iy as usize) < h) {
                                    col += ow;
                                    continue;
                                }
                                let base = (iz as usize * h + iy as usize) * w;
                                for ox in 0..ow {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if ix >= 0 && (ix as usize) < w {
                                        chan[base + ix as usize] += src[col];
                                    }
                                    col += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_on_full_size_volume() {
        let spec = Conv3dSpec::new(1, 32);
        // tensor order (z, y, x)
        assert_eq!(spec.output_dims([36, 64, 64]).unwrap(), [17, 31, 31]);
        assert_eq!(Conv3dSpec::new(32, 64).output_dims([17, 31, 31]).unwrap(), [8, 15, 15]);
    }

    #[test]
    fn collapsing_axis_is_rejected() {
        let spec = Conv3dSpec::new(1, 1);
        assert!(spec.output_dims([2, 8, 8]).is_err());
        let bad = Conv3dSpec::new(1, 1).with_geometry([5; 3], [0, 1, 1], [0; 3]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let spec = Conv3dSpec::new(2, 1).with_geometry([3, 2, 3], [2, 1, 2], [1, 0, 1]);
        let geom = ConvGeometry::new(spec, [4, 3, 5]).unwrap();
        let x: Vec<f64> = (0..geom.input_len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let k = spec.patch_len();
        let p = geom.positions();
        let y: Vec<f64> = (0..k * p).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut cols = vec![0.0; k * p];
        geom.im2col(&x, &mut cols);
        let mut back = vec![0.0; x.len()];
        geom.col2im_add(&y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
