//! Adam update with bias correction.

use super::train::TrainError;
use super::{Gradients, NetworkParams, Scalar, TrainConfig};

/// One Adam step over all parameter tensors; increments the step counter.
pub fn adam_step<S: Scalar>(
    params: &mut NetworkParams<S>,
    grads: &Gradients<S>,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    params.step += 1;
    let t = params.step as i32;
    let lr = S::from_f64(config.lr);
    let beta1 = S::from_f64(config.beta1);
    let beta2 = S::from_f64(config.beta2);
    let eps = S::from_f64(config.eps);
    let one = S::ONE;
    let bias1 = S::from_f64(1.0 - config.beta1.powi(t));
    let bias2 = S::from_f64(1.0 - config.beta2.powi(t));

    for ((layer, g), (m, v)) in params
        .layers
        .iter_mut()
        .zip(grads)
        .zip(params.moment1.iter_mut().zip(params.moment2.iter_mut()))
    {
        let mut non_finite = false;
        let mut update = |w: &mut [S], gw: &[S], mw: &mut [S], vw: &mut [S]| {
            for i in 0..w.len() {
                mw[i] = beta1 * mw[i] + (one - beta1) * gw[i];
                vw[i] = beta2 * vw[i] + (one - beta2) * gw[i] * gw[i];
                let m_hat = mw[i] / bias1;
                let v_hat = vw[i] / bias2;
                w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
                if !w[i].is_finite() {
                    non_finite = true;
                }
            }
        };
        update(&mut layer.w, &g.w, &mut m.w, &mut v.w);
        update(&mut layer.b, &g.b, &mut m.b, &mut v.b);
        if non_finite {
            return Err(TrainError::NonFinite {
                context: "adam update",
            });
        }
    }
    Ok(())
}
