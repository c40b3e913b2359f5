use super::{ParamSet, Scalar};
use crate::error::{Error, Result};

/// Bias-corrected Adam.
///
/// Moment buffers are allocated on the first step, so a network that is
/// only ever evaluated pays nothing for them.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step_count: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update using the gradients stored on each parameter.
    ///
    /// Parameters without a gradient buffer are left untouched. Any
    /// non-finite gradient aborts the step before anything is modified.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        for p in params.iter() {
            if let Some(g) = p.tensor.grad() {
                if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Divergence {
                        layer: p.name.clone(),
                        detail: format!("non-finite gradient {} at index {pos}", g[pos]),
                    });
                }
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::invalid("adam state does not match parameter set"));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        let one = T::one();

        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let (data, grad) = p.tensor.data_and_grad_mut();
            let Some(grad) = grad else { continue };
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
