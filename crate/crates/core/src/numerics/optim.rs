use crate::error::{Error, Result};
use crate::numerics::tensor::ParamStore;

/// Classic momentum SGD: `buf = momentum * buf + grad; value -= lr * buf`.
///
/// Gradients are zeroed afterwards. Nothing is updated if any gradient is
/// non-finite.
pub fn sgd_step(params: &mut ParamStore, lr: f64, momentum: f64) -> Result<()> {
    if let Some(id) = params.ids().find(|&id| !params.get(id).grad.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite gradient in parameter '{}'",
            params.name(id)
        )));
    }
    for p in params.iter_mut() {
        let buf = p.momentum_buf.data_mut();
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for ((v, b), g) in value.iter_mut().zip(buf.iter_mut()).zip(grad) {
            *b = momentum * *b + g;
            *v -= lr * *b;
        }
        p.zero_grad();
    }
    Ok(())
}

/// Global L2 norm over all gradients.
pub fn grad_norm(params: &ParamStore) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}
