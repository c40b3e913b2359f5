use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::{Graph, ParamSet, Tensor, Var};
use crate::error::Result;

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Which scalar produced `max_rel_error`, e.g. `"param dense.weight[3]"`.
    pub worst: String,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients of a network fragment against central
/// finite differences, for every parameter scalar and every input scalar.
///
/// `fragment` maps the input node to an output node. Non-scalar outputs are
/// reduced with a fixed pseudo-random weighting so that every output
/// element contributes to the checked loss.
pub fn grad_check<F>(
    params: &mut ParamSet<f64>,
    input: &Tensor<f64>,
    tolerance: f64,
    fragment: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    // Output size decides the reduction weights.
    let n_out = {
        let mut g = Graph::new(params);
        let x = g.input(input.clone());
        let out = fragment(&mut g, x)?;
        g.value(out).len()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let dist = Uniform::new(0.5, 1.5).expect("valid range");
    let weights: Vec<f64> = (0..n_out).map(|_| dist.sample(&mut rng)).collect();

    let scalar_loss = |g: &mut Graph<'_, f64>, x: Var| -> Result<Var> {
        let out = fragment(g, x)?;
        if n_out > 1 {
            g.weighted_sum(out, &weights)
        } else {
            Ok(out)
        }
    };
    let loss_at = |params: &ParamSet<f64>, input: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new(params);
        let x = g.input(input.clone());
        let loss = scalar_loss(&mut g, x)?;
        Ok(g.value(loss).data()[0])
    };

    let (input_grad, param_grads) = {
        let mut g = Graph::new(params);
        let x = g.input_with_grad(input.clone());
        let loss = scalar_loss(&mut g, x)?;
        let grads = g.backward(loss)?;
        let input_grad = grads.of(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
        let param_grads: Vec<Vec<f64>> = params
            .ids()
            .map(|id| {
                grads
                    .params()
                    .get(id)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; params.get(id).len()])
            })
            .collect();
        (input_grad, param_grads)
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0, tolerance };
    let mut record = |label: String, analytic: f64, numeric: f64| {
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if report.worst.is_empty() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = label;
        }
    };

    let ids: Vec<_> = params.ids().collect();
    for (id, analytic) in ids.into_iter().zip(&param_grads) {
        for (i, &a) in analytic.iter().enumerate() {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = loss_at(params, input)?;
            params.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = loss_at(params, input)?;
            params.get_mut(id).data_mut()[i] = orig;
            record(format!("param {}[{i}]", params.name(id)), a, (up - down) / (2.0 * FD_STEP));
        }
    }

    let mut probe = input.clone();
    for (i, &a) in input_grad.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = loss_at(params, &probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let down = loss_at(params, &probe)?;
        probe.data_mut()[i] = orig;
        record(format!("input[{i}]"), a, (up - down) / (2.0 * FD_STEP));
    }
    Ok(report)
}
