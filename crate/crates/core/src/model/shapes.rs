use crate::autodiff::Conv3dSpec;
use crate::error::{Error, Result};

/// Spatial dims after each convolution, in `(x, y, z)` order, and the size
/// of the flattened output of the last layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvShapes {
    pub input: [usize; 3],
    pub layers: Vec<[usize; 3]>,
    pub flatten: usize,
}

/// Applies `floor((n + 2p - k) / s) + 1` per axis through every layer.
///
/// Volume dims are `(x, y, z)`; spec arrays are in tensor order `(z, y, x)`.
pub fn derive_conv_shapes(input_dims: [usize; 3], specs: &[Conv3dSpec]) -> Result<ConvShapes> {
    if input_dims.contains(&0) {
        return Err(Error::invalid(format!("input dims {input_dims:?} must be positive")));
    }
    let mut layers = Vec::with_capacity(specs.len());
    let mut dims = input_dims;
    let mut channels = 1;
    for (i, spec) in specs.iter().enumerate() {
        if spec.in_channels != channels {
            return Err(Error::invalid(format!(
                "layer {} expects {} input channels but receives {channels}",
                i + 1,
                spec.in_channels
            )));
        }
        let [z, y, x] = spec
            .output_dims([dims[2], dims[1], dims[0]])
            .map_err(|e| Error::invalid(format!("layer {}: {e}", i + 1)))?;
        dims = [x, y, z];
        channels = spec.out_channels;
        layers.push(dims);
    }
    Ok(ConvShapes { input: input_dims, layers, flatten: dims.iter().product::<usize>() * channels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_specs() -> [Conv3dSpec; 2] {
        [Conv3dSpec::new(1, 32), Conv3dSpec::new(32, 64)]
    }

    #[test]
    fn full_size_chain() {
        let s = derive_conv_shapes([64, 64, 36], &default_specs()).unwrap();
        assert_eq!(s.layers, vec![[31, 31, 17], [15, 15, 8]]);
        assert_eq!(s.flatten, 115_200);
    }

    #[test]
    fn desk_size_chain() {
        let s = derive_conv_shapes([32, 32, 16], &default_specs()).unwrap();
        assert_eq!(s.layers, vec![[15, 15, 7], [7, 7, 3]]);
        assert_eq!(s.flatten, 7 * 7 * 3 * 64);
    }

    #[test]
    fn identity_geometry_keeps_dims() {
        let spec = Conv3dSpec::new(1, 4).with_geometry([1; 3], [1; 3], [0; 3]);
        let s = derive_conv_shapes([9, 7, 5], &[spec]).unwrap();
        assert_eq!(s.layers, vec![[9, 7, 5]]);
        assert_eq!(s.flatten, 9 * 7 * 5 * 4);
    }

    #[test]
    fn collapse_is_an_error() {
        assert!(derive_conv_shapes([8, 8, 4], &default_specs()).is_err());
        assert!(derive_conv_shapes([64, 64, 36], &[Conv3dSpec::new(2, 4)]).is_err());
    }
}
