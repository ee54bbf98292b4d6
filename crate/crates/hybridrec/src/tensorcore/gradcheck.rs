//! Central finite-difference gradient checking.
//!
//! The numeric side never touches any backward pass: it re-evaluates the loss
//! on perturbed clones of the model, so it stays independent of the analytic
//! gradients it validates.

use super::tensor::ParamVisitor;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor so that near-zero gradient pairs compare
/// stably.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Runs `step` once on a clone of `proto` (the closure must run forward and
/// backward, returning the scalar loss) and collects the accumulated
/// parameter gradients in visit order.
pub fn analytic_grads<T, F>(proto: &T, step: &mut F) -> Vec<f64>
where
    T: ParamVisitor + Clone,
    F: FnMut(&mut T) -> f64,
{
    let mut model = proto.clone();
    let _ = step(&mut model);
    let mut grads = Vec::new();
    model.visit_params(&mut |p| grads.extend(p.grad.data.iter().copied()));
    grads
}

fn param_scalar_count<T: ParamVisitor + Clone>(proto: &T) -> usize {
    let mut model = proto.clone();
    let mut n = 0;
    model.visit_params(&mut |p| n += p.value.data.len());
    n
}

fn perturb<T: ParamVisitor>(model: &mut T, scalar_index: usize, delta: f64) {
    let mut seen = 0usize;
    model.visit_params(&mut |p| {
        let len = p.value.data.len();
        if scalar_index >= seen && scalar_index < seen + len {
            p.value.data[scalar_index - seen] += delta;
        }
        seen += len;
    });
}

/// Central finite differences over every parameter scalar. Each evaluation
/// clones `proto`, so stateful layers (dropout RNG, batchnorm running stats)
/// see identical streams on both sides of the difference.
pub fn numeric_grads<T, F>(proto: &T, loss: &mut F, h: f64) -> Vec<f64>
where
    T: ParamVisitor + Clone,
    F: FnMut(&mut T) -> f64,
{
    let n = param_scalar_count(proto);
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let mut plus = proto.clone();
        perturb(&mut plus, i, h);
        let lp = loss(&mut plus);
        let mut minus = proto.clone();
        perturb(&mut minus, i, -h);
        let lm = loss(&mut minus);
        grads.push((lp - lm) / (2.0 * h));
    }
    grads
}

/// Max relative error between analytic gradients and central finite
/// differences over all parameters of `proto`. `step` must run a full
/// forward + backward on the model it is handed and return the loss.
pub fn max_param_rel_error<T, F>(proto: &T, mut step: F, h: f64) -> f64
where
    T: ParamVisitor + Clone,
    F: FnMut(&mut T) -> f64,
{
    let analytic = analytic_grads(proto, &mut step);
    let numeric = numeric_grads(proto, &mut step, h);
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}
