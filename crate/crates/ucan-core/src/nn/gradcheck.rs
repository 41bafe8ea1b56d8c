//! Finite-difference verification of the analytic gradients.
//!
//! Runs the reduced network in double precision on a fixed batch, probes
//! randomly chosen parameters with central differences, and compares
//! against the backward pass. Probes that land on a ReLU kink or flip a
//! pool argmax between the two perturbed evaluations are redrawn, since
//! the loss is not differentiable there.

use rand::Rng;

use super::engine::{backward, forward, LossHead};
use super::{NetworkParams, NetworkSpec, Plan, Scalar};
use crate::rng::{stream, StreamDomain};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// Probes redrawn because a perturbation crossed a kink.
    pub redraws: usize,
    pub step: f64,
}

/// Gradient check with the softmax cross-entropy head.
pub fn gradient_check(spec: &NetworkSpec, probes: usize, h: f64, seed: u64) -> GradCheckReport {
    gradient_check_with(spec, LossHead::SoftmaxCrossEntropy, probes, h, seed)
}

pub fn gradient_check_with(
    spec: &NetworkSpec,
    head: LossHead,
    probes: usize,
    h: f64,
    seed: u64,
) -> GradCheckReport {
    let plan = Plan::compile(spec);
    let mut params = NetworkParams::<f64>::init(&plan, seed);
    let mut rng = stream(seed, StreamDomain::Probe, 1);

    let batch = 4usize;
    let x: Vec<f64> = (0..batch * plan.input_len())
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let labels: Vec<u8> = (0..batch).map(|_| rng.gen_range(0..10u8)).collect();

    // The reduced spec carries zero-rate dropout, so training-mode forward
    // consumes no randomness and the cached pass is reproducible.
    let mut fwd_rng = stream(seed, StreamDomain::Dropout, 0);
    let pass = forward(&plan, &params, &x, batch, true, &mut fwd_rng, head)
        .expect("gradcheck forward pass");
    let analytic = backward(&plan, &params, &pass, &labels);

    // Addressable parameters: (layer, is_bias, index).
    let layout: Vec<(usize, bool, usize)> = params
        .layers
        .iter()
        .enumerate()
        .flat_map(|(l, t)| {
            let w = (0..t.w.len()).map(move |i| (l, false, i));
            let b = (0..t.b.len()).map(move |i| (l, true, i));
            w.chain(b)
        })
        .collect();

    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0f64;
    let mut redraws = 0usize;
    let mut done = 0usize;
    while done < probes {
        let (layer, is_bias, idx) = layout[rng.gen_range(0..layout.len())];
        let original = if is_bias {
            params.layers[layer].b[idx]
        } else {
            params.layers[layer].w[idx]
        };

        let eval = |value: f64, params: &mut NetworkParams<f64>| {
            if is_bias {
                params.layers[layer].b[idx] = value;
            } else {
                params.layers[layer].w[idx] = value;
            }
            let mut r = stream(seed, StreamDomain::Dropout, 0);
            let pass =
                forward(&plan, params, &x, batch, true, &mut r, head).expect("probe forward");
            let loss = probe_loss(&plan, params, &pass.probs, &labels, head);
            (loss, pattern(&pass))
        };

        let (loss_plus, pat_plus) = eval(original + h, &mut params);
        let (loss_minus, pat_minus) = eval(original - h, &mut params);
        // Deep units can cross a kink and return inside the probe interval
        // while matching at the endpoints, so the guard also samples the
        // center and half-steps.
        let (_, pat_zero) = eval(original, &mut params);
        let (_, pat_half_plus) = eval(original + 0.5 * h, &mut params);
        let (_, pat_half_minus) = eval(original - 0.5 * h, &mut params);
        if is_bias {
            params.layers[layer].b[idx] = original;
        } else {
            params.layers[layer].w[idx] = original;
        }

        if [&pat_minus, &pat_zero, &pat_half_plus, &pat_half_minus]
            .iter()
            .any(|p| **p != pat_plus)
        {
            redraws += 1;
            continue;
        }

        let numeric = (loss_plus - loss_minus) / (2.0 * h);
        let a = if is_bias {
            analytic[layer].b[idx]
        } else {
            analytic[layer].w[idx]
        };
        // Central differences carry an eps*|loss|/h roundoff floor (~2e-11
        // here), so gradients far below typical scale are compared against
        // a floored denominator: a wrong term still shows up orders of
        // magnitude above the threshold, while a vanishing gradient is
        // required to match within 1e-10 absolute.
        let denom = a.abs().max(numeric.abs()).max(1e-4);
        let rel = (a - numeric).abs() / denom;
        max_rel = max_rel.max(rel);
        sum_rel += rel;
        done += 1;
    }

    GradCheckReport {
        probes: done,
        max_rel_err: max_rel,
        mean_rel_err: sum_rel / done as f64,
        redraws,
        step: h,
    }
}

fn probe_loss(
    plan: &Plan,
    params: &NetworkParams<f64>,
    outputs: &[f64],
    labels: &[u8],
    head: LossHead,
) -> f64 {
    match head {
        LossHead::SoftmaxCrossEntropy => super::engine::loss(plan, params, outputs, labels),
        LossHead::IdentitySquaredError => {
            let batch = labels.len();
            let mut sq = 0.0f64;
            for (i, row) in outputs.chunks_exact(plan.classes).enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let target = if j == labels[i] as usize { 1.0 } else { 0.0 };
                    sq += (v - target) * (v - target);
                }
            }
            0.5 * sq / batch as f64 + l2_term(plan, params)
        }
    }
}

fn l2_term(plan: &Plan, params: &NetworkParams<f64>) -> f64 {
    match plan.conv1_param {
        Some(slot) if plan.l2_conv1 > 0.0 => {
            plan.l2_conv1
                * params.layers[slot]
                    .w
                    .iter()
                    .map(|w| w * w)
                    .sum::<f64>()
        }
        _ => 0.0,
    }
}

fn pattern<S: Scalar>(pass: &super::engine::ForwardPass<S>) -> Vec<u32> {
    pass.activation_signs()
}

#[cfg(test)]
mod tests {
    use super::super::{reduced_network, LayerSpec, NetworkSpec};
    use super::*;

    #[test]
    fn reduced_network_gradients_match_finite_differences() {
        let report = gradient_check(&reduced_network(), 200, 1e-5, 42);
        assert!(report.probes >= 200);
        assert!(
            report.max_rel_err <= 1e-6,
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn linear_network_is_exact_to_roundoff() {
        // No ReLU, identity head, squared loss: exactly quadratic in each
        // coordinate, so central differences are exact up to roundoff.
        let spec = NetworkSpec {
            input: (6, 6, 1),
            layers: vec![
                LayerSpec::Conv {
                    filters: 2,
                    kernel: 3,
                    relu: false,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 8,
                    relu: false,
                },
                LayerSpec::Dense {
                    units: 10,
                    relu: false,
                },
            ],
            l2_conv1: 0.0005,
        };
        // Zero truncation error means a large step only reduces roundoff.
        let report = gradient_check_with(&spec, LossHead::IdentitySquaredError, 150, 1e-3, 7);
        assert!(
            report.max_rel_err <= 1e-9,
            "quadratic loss should check to roundoff, got {}",
            report.max_rel_err
        );
        assert_eq!(report.redraws, 0);
    }
}
