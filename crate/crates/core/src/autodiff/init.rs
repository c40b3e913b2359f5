use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Half-width `sqrt(6 / (fan_in + fan_out))` of the Glorot uniform range.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `[fan_out, fan_in]` matrix drawn from Glorot uniform with its own seed.
pub fn glorot_init<T: Scalar>(fan_in: usize, fan_out: usize, rng_seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    glorot_uniform(vec![fan_out, fan_in], fan_in, fan_out, &mut rng)
}

/// Glorot uniform tensor of arbitrary shape, drawing from a shared stream.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::invalid(format!(
            "glorot fans must be positive (fan_in={fan_in}, fan_out={fan_out})"
        )));
    }
    let limit = glorot_limit(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-limit, limit).map_err(|e| Error::invalid(e.to_string()))?;
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_and_determinism() {
        let l = glorot_limit(128, 2);
        assert!((l - 0.214_834_462_211_830_9).abs() < 1e-12);
        let t: Tensor<f64> = glorot_init(128, 2, 9).unwrap();
        assert_eq!(t.shape(), &[2, 128]);
        assert!(t.data().iter().all(|v| v.abs() <= l));
        let u: Tensor<f64> = glorot_init(128, 2, 9).unwrap();
        assert_eq!(t, u);
        assert_eq!(glorot_limit(3, 3), 1.0);
    }

    #[test]
    fn zero_fan_rejected() {
        assert!(glorot_init::<f32>(0, 4, 1).is_err());
        assert!(glorot_init::<f32>(4, 0, 1).is_err());
    }
}
