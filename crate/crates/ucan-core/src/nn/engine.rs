//! Forward and backward passes over a compiled plan.
//!
//! Activation buffers are channels-last `[batch, h, w, c]`. Convolutions
//! lower to im2col plus one GEMM; the im2col buffer is cached for the
//! backward pass. Batch work splits into fixed-size chunks that run in
//! parallel and reduce in deterministic order, so results are identical
//! regardless of thread scheduling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::train::TrainError;
use super::{Gradients, LayerSpec, NetworkParams, Plan, Scalar, TensorPair};
use crate::dataset::LabeledPanel;
use crate::rng::{stream, StreamDomain};

/// Examples per parallel chunk inside one batch or evaluation sweep.
const TRAIN_CHUNK: usize = 16;
const EVAL_CHUNK: usize = 256;

/// Output head: the experiment network ends in softmax cross-entropy; the
/// identity/squared-error head exists for exactly-quadratic gradient
/// checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossHead {
    SoftmaxCrossEntropy,
    IdentitySquaredError,
}

/// A flat batch of training examples: `n` rows of `dim` features.
#[derive(Debug, Clone)]
pub struct Examples {
    pub x: Vec<f32>,
    pub labels: Vec<u8>,
    pub dim: usize,
}

impl Examples {
    pub fn from_panels(panels: &[LabeledPanel]) -> Examples {
        let dim = crate::panel::PANEL_PIXELS;
        let mut x = Vec::with_capacity(panels.len() * dim);
        let mut labels = Vec::with_capacity(panels.len());
        for p in panels {
            x.extend(p.panel.pixels().iter().map(|&v| v as f32));
            labels.push(p.label);
        }
        Examples { x, labels, dim }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Examples {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(&self.x[i * self.dim..(i + 1) * self.dim]);
            labels.push(self.labels[i]);
        }
        Examples {
            x,
            labels,
            dim: self.dim,
        }
    }

    fn rows(&self, start: usize, count: usize) -> &[f32] {
        &self.x[start * self.dim..(start + count) * self.dim]
    }
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardPass<S> {
    /// Softmax probabilities (or raw outputs under the identity head),
    /// batch x classes.
    pub probs: Vec<S>,
    pub batch: usize,
    activations: Vec<Vec<S>>,
    im2col: Vec<Option<Vec<S>>>,
    pool_argmax: Vec<Option<Vec<u32>>>,
    dropout_mask: Vec<Option<Vec<S>>>,
    /// Which stages applied a ReLU, for the kink fingerprint.
    relu_stage: Vec<bool>,
}

impl<S: Scalar> ForwardPass<S> {
    /// Fingerprint of the pass's piecewise-linear region: hashes of each
    /// ReLU sign pattern and each pool argmax choice. Two perturbed passes
    /// with equal fingerprints saw the same active set, so finite
    /// differences across them never straddle a kink.
    pub fn activation_signs(&self) -> Vec<u32> {
        const FNV_OFFSET: u32 = 2_166_136_261;
        const FNV_PRIME: u32 = 16_777_619;
        let mut out = Vec::new();
        for (si, &relu) in self.relu_stage.iter().enumerate() {
            if relu {
                let mut h = FNV_OFFSET;
                for &v in &self.activations[si + 1] {
                    h = h.wrapping_mul(FNV_PRIME) ^ (v > S::ZERO) as u32;
                }
                out.push(h);
            }
            if let Some(am) = &self.pool_argmax[si] {
                let mut h = FNV_OFFSET;
                for &i in am {
                    h = h.wrapping_mul(FNV_PRIME) ^ i;
                }
                out.push(h);
            }
        }
        out
    }
}

/// Run the network over a batch.
///
/// Dropout draws from `rng` only when `training` is true and a stage has a
/// nonzero rate, so evaluation output never depends on the stream.
pub fn forward<S: Scalar>(
    plan: &Plan,
    params: &NetworkParams<S>,
    input: &[S],
    batch: usize,
    training: bool,
    rng: &mut ChaCha8Rng,
    head: LossHead,
) -> Result<ForwardPass<S>, TrainError> {
    assert_eq!(input.len(), batch * plan.input_len(), "batch shape mismatch");
    let stages = plan.stages.len();
    let mut activations: Vec<Vec<S>> = Vec::with_capacity(stages + 1);
    activations.push(input.to_vec());
    let mut im2col: Vec<Option<Vec<S>>> = vec![None; stages];
    let mut pool_argmax: Vec<Option<Vec<u32>>> = vec![None; stages];
    let mut dropout_mask: Vec<Option<Vec<S>>> = vec![None; stages];
    let relu_stage: Vec<bool> = plan
        .stages
        .iter()
        .map(|s| match s.layer {
            LayerSpec::Conv { relu, .. } | LayerSpec::Dense { relu, .. } => relu,
            _ => false,
        })
        .collect();

    for (si, stage) in plan.stages.iter().enumerate() {
        let x = activations.last().expect("input pushed above");
        let out = match stage.layer {
            LayerSpec::Conv { kernel, relu, .. } => {
                let t = &params.layers[stage.param.expect("conv has params")];
                let (cols, mut out) = conv_forward(stage, kernel, x, batch, t);
                if relu {
                    for v in &mut out {
                        if *v < S::ZERO {
                            *v = S::ZERO;
                        }
                    }
                }
                im2col[si] = Some(cols);
                out
            }
            LayerSpec::MaxPool { size } => {
                let (out, argmax) = maxpool_forward(stage, size, x, batch);
                pool_argmax[si] = Some(argmax);
                out
            }
            LayerSpec::Dropout { rate } => {
                if training && rate > 0.0 {
                    let keep = 1.0 - rate;
                    let inv_keep = S::from_f64(1.0 / keep);
                    let mut mask = Vec::with_capacity(x.len());
                    let out = x
                        .iter()
                        .map(|&v| {
                            let m = if rng.gen::<f64>() < keep {
                                inv_keep
                            } else {
                                S::ZERO
                            };
                            mask.push(m);
                            v * m
                        })
                        .collect();
                    dropout_mask[si] = Some(mask);
                    out
                } else {
                    x.clone()
                }
            }
            LayerSpec::Flatten => x.clone(),
            LayerSpec::Dense { relu, .. } => {
                let t = &params.layers[stage.param.expect("dense has params")];
                let mut out = dense_forward(stage, x, batch, t);
                if relu {
                    for v in &mut out {
                        if *v < S::ZERO {
                            *v = S::ZERO;
                        }
                    }
                }
                out
            }
        };
        activations.push(out);
    }

    let logits = activations.last().expect("head output");
    let probs = match head {
        LossHead::SoftmaxCrossEntropy => softmax_rows(logits, batch, plan.classes),
        LossHead::IdentitySquaredError => logits.clone(),
    };
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite {
            context: "forward output",
        });
    }
    Ok(ForwardPass {
        probs,
        batch,
        activations,
        im2col,
        pool_argmax,
        dropout_mask,
        relu_stage,
    })
}

fn softmax_rows<S: Scalar>(logits: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(cols).take(rows) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

fn conv_forward<S: Scalar>(
    stage: &super::Stage,
    kernel: usize,
    x: &[S],
    batch: usize,
    t: &TensorPair<S>,
) -> (Vec<S>, Vec<S>) {
    let (ih, iw, ic) = stage.in_shape;
    let (oh, ow, filters) = stage.out_shape;
    let rows = batch * oh * ow;
    let patch = kernel * kernel * ic;

    let mut cols = vec![S::ZERO; rows * patch];
    let in_stride = ih * iw * ic;
    for b in 0..batch {
        let x_b = &x[b * in_stride..(b + 1) * in_stride];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh) + oy) * ow + ox;
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..kernel {
                    let src_start = ((oy + ky) * iw + ox) * ic;
                    let len = kernel * ic;
                    dst[ky * len..(ky + 1) * len]
                        .copy_from_slice(&x_b[src_start..src_start + len]);
                }
            }
        }
    }

    let mut out = vec![S::ZERO; rows * filters];
    unsafe {
        S::gemm(
            rows,
            patch,
            filters,
            S::ONE,
            cols.as_ptr(),
            patch as isize,
            1,
            t.w.as_ptr(),
            filters as isize,
            1,
            S::ZERO,
            out.as_mut_ptr(),
            filters as isize,
            1,
        );
    }
    for row in out.chunks_exact_mut(filters) {
        for (v, &b) in row.iter_mut().zip(&t.b) {
            *v = *v + b;
        }
    }
    (cols, out)
}

fn maxpool_forward<S: Scalar>(
    stage: &super::Stage,
    size: usize,
    x: &[S],
    batch: usize,
) -> (Vec<S>, Vec<u32>) {
    let (ih, iw, c) = stage.in_shape;
    let (oh, ow, _) = stage.out_shape;
    let in_stride = ih * iw * c;
    let mut out = vec![S::ZERO; batch * oh * ow * c];
    let mut argmax = vec![0u32; batch * oh * ow * c];
    for b in 0..batch {
        let base = b * in_stride;
        for oy in 0..oh {
            for ox in 0..ow {
                let o_base = (((b * oh) + oy) * ow + ox) * c;
                for sy in 0..size {
                    for sx in 0..size {
                        let i_base = base + ((oy * size + sy) * iw + (ox * size + sx)) * c;
                        if sy == 0 && sx == 0 {
                            for ch in 0..c {
                                out[o_base + ch] = x[i_base + ch];
                                argmax[o_base + ch] = (i_base + ch) as u32;
                            }
                        } else {
                            for ch in 0..c {
                                let v = x[i_base + ch];
                                if v > out[o_base + ch] {
                                    out[o_base + ch] = v;
                                    argmax[o_base + ch] = (i_base + ch) as u32;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, argmax)
}

fn dense_forward<S: Scalar>(
    stage: &super::Stage,
    x: &[S],
    batch: usize,
    t: &TensorPair<S>,
) -> Vec<S> {
    let (rows_w, units) = stage.w_shape;
    let mut out = vec![S::ZERO; batch * units];
    unsafe {
        S::gemm(
            batch,
            rows_w,
            units,
            S::ONE,
            x.as_ptr(),
            rows_w as isize,
            1,
            t.w.as_ptr(),
            units as isize,
            1,
            S::ZERO,
            out.as_mut_ptr(),
            units as isize,
            1,
        );
    }
    for row in out.chunks_exact_mut(units) {
        for (v, &b) in row.iter_mut().zip(&t.b) {
            *v = *v + b;
        }
    }
    out
}

/// Mean data loss of a forward pass: cross-entropy against the labels
/// (with a 1e-12 floor inside the log) plus the L2 penalty on the first
/// convolution's weights.
pub fn loss<S: Scalar>(
    plan: &Plan,
    params: &NetworkParams<S>,
    probs: &[S],
    labels: &[u8],
) -> f64 {
    let batch = labels.len();
    let mut ce = 0.0f64;
    for (row, &label) in probs.chunks_exact(plan.classes).zip(labels) {
        let p = row[label as usize].into_f64().max(1e-12);
        ce -= p.ln();
    }
    ce / batch as f64 + l2_penalty(plan, params)
}

fn l2_penalty<S: Scalar>(plan: &Plan, params: &NetworkParams<S>) -> f64 {
    match plan.conv1_param {
        Some(slot) if plan.l2_conv1 > 0.0 => {
            let sq: f64 = params.layers[slot]
                .w
                .iter()
                .map(|w| w.into_f64() * w.into_f64())
                .sum();
            plan.l2_conv1 * sq
        }
        _ => 0.0,
    }
}

/// Backward pass over cached activations; gradients are means over the
/// batch and include the 2 alpha W term on the first convolution.
///
/// Both heads share the (output - onehot) logit gradient: softmax composed
/// with cross-entropy and identity composed with half-squared error give
/// the same delta, which is what makes the identity head usable for
/// exactly-quadratic gradient checks.
pub fn backward<S: Scalar>(
    plan: &Plan,
    params: &NetworkParams<S>,
    pass: &ForwardPass<S>,
    labels: &[u8],
) -> Gradients<S> {
    let inv_total = S::from_f64(1.0 / pass.batch as f64);
    let mut grads = backward_scaled(plan, params, pass, labels, inv_total);
    add_l2_gradient(plan, params, &mut grads);
    grads
}

fn add_l2_gradient<S: Scalar>(plan: &Plan, params: &NetworkParams<S>, grads: &mut Gradients<S>) {
    if let Some(slot) = plan.conv1_param {
        if plan.l2_conv1 > 0.0 {
            let two_alpha = S::from_f64(2.0 * plan.l2_conv1);
            for (g, &w) in grads[slot].w.iter_mut().zip(&params.layers[slot].w) {
                *g = *g + two_alpha * w;
            }
        }
    }
}

/// Backward with an explicit loss scale (sum-of-examples gradients times
/// `inv_total`), so chunked batches concatenate into exact full-batch
/// means. Excludes the L2 term.
fn backward_scaled<S: Scalar>(
    plan: &Plan,
    params: &NetworkParams<S>,
    pass: &ForwardPass<S>,
    labels: &[u8],
    inv_total: S,
) -> Gradients<S> {
    let batch = pass.batch;
    let classes = plan.classes;

    let mut delta: Vec<S> = pass.probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let j = i * classes + label as usize;
        delta[j] = delta[j] - S::ONE;
    }
    for v in &mut delta {
        *v = *v * inv_total;
    }

    let mut grads: Gradients<S> = params
        .layers
        .iter()
        .map(|t| TensorPair {
            w: vec![S::ZERO; t.w.len()],
            b: vec![S::ZERO; t.b.len()],
        })
        .collect();

    let mut d_out = delta;
    for (si, stage) in plan.stages.iter().enumerate().rev() {
        let x = &pass.activations[si];
        let y = &pass.activations[si + 1];
        d_out = match stage.layer {
            LayerSpec::Dense { relu, .. } => {
                if relu {
                    relu_mask(&mut d_out, y);
                }
                let slot = stage.param.expect("dense has params");
                dense_backward(stage, x, batch, &params.layers[slot], &d_out, &mut grads[slot])
            }
            LayerSpec::Conv { kernel, relu, .. } => {
                if relu {
                    relu_mask(&mut d_out, y);
                }
                let slot = stage.param.expect("conv has params");
                let cols = pass.im2col[si].as_ref().expect("conv caches im2col");
                conv_backward(
                    stage,
                    kernel,
                    cols,
                    batch,
                    &params.layers[slot],
                    &d_out,
                    &mut grads[slot],
                )
            }
            LayerSpec::MaxPool { .. } => {
                let argmax = pass.pool_argmax[si].as_ref().expect("pool caches argmax");
                let mut d_in = vec![S::ZERO; x.len()];
                for (&idx, &g) in argmax.iter().zip(d_out.iter()) {
                    d_in[idx as usize] = d_in[idx as usize] + g;
                }
                d_in
            }
            LayerSpec::Dropout { .. } => match &pass.dropout_mask[si] {
                Some(mask) => d_out
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| g * m)
                    .collect(),
                None => d_out,
            },
            LayerSpec::Flatten => d_out,
        };
    }
    grads
}

fn relu_mask<S: Scalar>(d: &mut [S], post_activation: &[S]) {
    for (g, &a) in d.iter_mut().zip(post_activation) {
        if a <= S::ZERO {
            *g = S::ZERO;
        }
    }
}

fn dense_backward<S: Scalar>(
    stage: &super::Stage,
    x: &[S],
    batch: usize,
    t: &TensorPair<S>,
    d_out: &[S],
    grad: &mut TensorPair<S>,
) -> Vec<S> {
    let (inputs, units) = stage.w_shape;
    // dW += x^T d_out.
    unsafe {
        S::gemm(
            inputs,
            batch,
            units,
            S::ONE,
            x.as_ptr(),
            1,
            inputs as isize,
            d_out.as_ptr(),
            units as isize,
            1,
            S::ONE,
            grad.w.as_mut_ptr(),
            units as isize,
            1,
        );
    }
    for row in d_out.chunks_exact(units) {
        for (g, &v) in grad.b.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
    // dX = d_out W^T.
    let mut d_in = vec![S::ZERO; batch * inputs];
    unsafe {
        S::gemm(
            batch,
            units,
            inputs,
            S::ONE,
            d_out.as_ptr(),
            units as isize,
            1,
            t.w.as_ptr(),
            1,
            units as isize,
            S::ZERO,
            d_in.as_mut_ptr(),
            inputs as isize,
            1,
        );
    }
    d_in
}

fn conv_backward<S: Scalar>(
    stage: &super::Stage,
    kernel: usize,
    cols: &[S],
    batch: usize,
    t: &TensorPair<S>,
    d_out: &[S],
    grad: &mut TensorPair<S>,
) -> Vec<S> {
    let (ih, iw, ic) = stage.in_shape;
    let (oh, ow, filters) = stage.out_shape;
    let rows = batch * oh * ow;
    let patch = kernel * kernel * ic;

    // dW += cols^T d_out.
    unsafe {
        S::gemm(
            patch,
            rows,
            filters,
            S::ONE,
            cols.as_ptr(),
            1,
            patch as isize,
            d_out.as_ptr(),
            filters as isize,
            1,
            S::ONE,
            grad.w.as_mut_ptr(),
            filters as isize,
            1,
        );
    }
    for row in d_out.chunks_exact(filters) {
        for (g, &v) in grad.b.iter_mut().zip(row) {
            *g = *g + v;
        }
    }

    // dCols = d_out W^T, then scatter back to the input layout.
    let mut d_cols = vec![S::ZERO; rows * patch];
    unsafe {
        S::gemm(
            rows,
            filters,
            patch,
            S::ONE,
            d_out.as_ptr(),
            filters as isize,
            1,
            t.w.as_ptr(),
            1,
            filters as isize,
            S::ZERO,
            d_cols.as_mut_ptr(),
            patch as isize,
            1,
        );
    }
    let in_stride = ih * iw * ic;
    let mut d_in = vec![S::ZERO; batch * in_stride];
    for b in 0..batch {
        let d_b = &mut d_in[b * in_stride..(b + 1) * in_stride];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh) + oy) * ow + ox;
                let src = &d_cols[row * patch..(row + 1) * patch];
                for ky in 0..kernel {
                    let dst_start = ((oy + ky) * iw + ox) * ic;
                    let len = kernel * ic;
                    for (d, &s) in d_b[dst_start..dst_start + len]
                        .iter_mut()
                        .zip(&src[ky * len..(ky + 1) * len])
                    {
                        *d = *d + s;
                    }
                }
            }
        }
    }
    d_in
}

/// One optimization step's worth of work: forward + backward over a batch,
/// split into fixed chunks that run in parallel and reduce in order.
///
/// Returns (summed data loss, correct predictions, mean gradients with the
/// L2 term applied once).
pub fn train_step<S: Scalar>(
    plan: &Plan,
    params: &NetworkParams<S>,
    x: &[S],
    labels: &[u8],
    dropout_seed: u64,
    step: u64,
) -> Result<(f64, usize, Gradients<S>), TrainError> {
    let batch = labels.len();
    let dim = plan.input_len();
    let inv_total = S::from_f64(1.0 / batch as f64);
    let starts: Vec<usize> = (0..batch).step_by(TRAIN_CHUNK).collect();

    type ChunkOut<S> = Result<(f64, usize, Gradients<S>), TrainError>;
    let chunks: Vec<ChunkOut<S>> = starts
        .par_iter()
        .map(|&start| {
            let count = TRAIN_CHUNK.min(batch - start);
            let xs = &x[start * dim..(start + count) * dim];
            let ys = &labels[start..start + count];
            let mut rng = stream(
                dropout_seed,
                StreamDomain::Dropout,
                step * 256 + (start / TRAIN_CHUNK) as u64,
            );
            let pass = forward(
                plan,
                params,
                xs,
                count,
                true,
                &mut rng,
                LossHead::SoftmaxCrossEntropy,
            )?;
            let mut ce = 0.0f64;
            let mut correct = 0usize;
            for (i, row) in pass.probs.chunks_exact(plan.classes).enumerate() {
                let label = ys[i] as usize;
                ce -= row[label].into_f64().max(1e-12).ln();
                if argmax(row) == label {
                    correct += 1;
                }
            }
            let grads = backward_scaled(plan, params, &pass, ys, inv_total);
            Ok((ce, correct, grads))
        })
        .collect();

    let mut total = (0.0f64, 0usize, params.zeroed_like());
    for item in chunks {
        let (ce, correct, grads) = item?;
        total.0 += ce;
        total.1 += correct;
        for (acc, g) in total.2.iter_mut().zip(grads) {
            for (a, v) in acc.w.iter_mut().zip(g.w) {
                *a = *a + v;
            }
            for (a, v) in acc.b.iter_mut().zip(g.b) {
                *a = *a + v;
            }
        }
    }
    add_l2_gradient(plan, params, &mut total.2);
    Ok(total)
}

pub(super) fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of argmax-correct predictions; dropout disabled.
pub fn evaluate<S: Scalar>(
    plan: &Plan,
    params: &NetworkParams<S>,
    data: &Examples,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    assert_eq!(data.dim, plan.input_len());
    let starts: Vec<usize> = (0..data.len()).step_by(EVAL_CHUNK).collect();
    let correct: usize = starts
        .par_iter()
        .map(|&start| {
            let count = EVAL_CHUNK.min(data.len() - start);
            let xs: Vec<S> = data
                .rows(start, count)
                .iter()
                .map(|&v| S::from_f64(v as f64))
                .collect();
            let mut rng = stream(0, StreamDomain::Dropout, 0);
            let pass = forward(
                plan,
                params,
                &xs,
                count,
                false,
                &mut rng,
                LossHead::SoftmaxCrossEntropy,
            )
            .expect("evaluation forward pass");
            pass.probs
                .chunks_exact(plan.classes)
                .enumerate()
                .filter(|(i, row)| argmax(row) == data.labels[start + i] as usize)
                .count()
        })
        .sum();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::super::{reduced_network, ucan_network, NetworkParams, Plan};
    use super::*;

    fn rng_for(i: u64) -> ChaCha8Rng {
        stream(100, StreamDomain::Probe, i)
    }

    #[test]
    fn zero_network_predicts_uniformly() {
        let plan = Plan::compile(&ucan_network());
        let mut params = NetworkParams::<f32>::init(&plan, 1);
        for t in &mut params.layers {
            t.w.iter_mut().for_each(|w| *w = 0.0);
        }
        let x = vec![0.0f32; 2 * plan.input_len()];
        let pass = forward(
            &plan,
            &params,
            &x,
            2,
            false,
            &mut rng_for(0),
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        for row in pass.probs.chunks_exact(10) {
            for &p in row {
                assert!((p - 0.1).abs() < 1e-6);
            }
        }
        // Uniform prediction: cross-entropy is ln 10, plus zero L2.
        let l = loss(&plan, &params, &pass.probs, &[3, 7]);
        assert!((l - 10f64.ln()).abs() < 1e-5, "loss {l}");
    }

    #[test]
    fn probabilities_normalize_on_random_input() {
        let plan = Plan::compile(&reduced_network());
        let params = NetworkParams::<f32>::init(&plan, 5);
        let mut rng = rng_for(1);
        let x: Vec<f32> = (0..8 * plan.input_len())
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let pass = forward(
            &plan,
            &params,
            &x,
            8,
            false,
            &mut rng_for(2),
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        for row in pass.probs.chunks_exact(10) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn evaluation_ignores_rng_state() {
        let plan = Plan::compile(&reduced_network());
        let params = NetworkParams::<f32>::init(&plan, 5);
        let x = vec![0.3f32; 4 * plan.input_len()];
        let a = forward(
            &plan,
            &params,
            &x,
            4,
            false,
            &mut rng_for(3),
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        let b = forward(
            &plan,
            &params,
            &x,
            4,
            false,
            &mut rng_for(99),
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn perfect_prediction_with_zero_conv1_gives_zero_loss() {
        let plan = Plan::compile(&reduced_network());
        let mut params = NetworkParams::<f64>::init(&plan, 2);
        for t in &mut params.layers {
            t.w.iter_mut().for_each(|w| *w = 0.0);
            t.b.iter_mut().for_each(|b| *b = 0.0);
        }
        // Force a one-hot output through the final bias: softmax of a huge
        // logit is numerically 1.
        let last = params.layers.len() - 1;
        params.layers[last].b[4] = 60.0;
        let x = vec![0.0f64; plan.input_len()];
        let pass = forward(
            &plan,
            &params,
            &x,
            1,
            false,
            &mut rng_for(4),
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        let l = loss(&plan, &params, &pass.probs, &[4]);
        assert!(l.abs() < 1e-9, "loss {l}");

        // Nonzero conv1 weights add exactly alpha * sum w^2.
        params.layers[0].w.iter_mut().for_each(|w| *w = 0.5);
        let sq: f64 = params.layers[0].w.iter().map(|w| w * w).sum();
        let pass = forward(
            &plan,
            &params,
            &x,
            1,
            false,
            &mut rng_for(4),
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        let l = loss(&plan, &params, &pass.probs, &[4]);
        assert!((l - 0.0005 * sq).abs() < 1e-9, "loss {l} vs {}", 0.0005 * sq);
    }

    #[test]
    fn zero_weight_backward_hits_only_dense_bias() {
        let plan = Plan::compile(&reduced_network());
        let mut params = NetworkParams::<f64>::init(&plan, 3);
        for t in &mut params.layers {
            t.w.iter_mut().for_each(|w| *w = 0.0);
            t.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let x = vec![0.0f64; 4 * plan.input_len()];
        let labels = [0u8, 1, 2, 3];
        let pass = forward(
            &plan,
            &params,
            &x,
            4,
            true,
            &mut rng_for(5),
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        let grads = backward(&plan, &params, &pass, &labels);
        // Zero activations kill every weight gradient.
        for t in &grads {
            assert!(t.w.iter().all(|&g| g == 0.0));
        }
        // The head bias gradient is the mean of (p - onehot) rows.
        let head = grads.last().unwrap();
        for (j, &g) in head.b.iter().enumerate() {
            let mut expected = 0.0;
            for &label in &labels {
                let p = 0.1 - if label as usize == j { 1.0 } else { 0.0 };
                expected += p / 4.0;
            }
            assert!((g - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradients() {
        let plan = Plan::compile(&reduced_network());
        let params = NetworkParams::<f64>::init(&plan, 7);
        let mut rng = rng_for(6);
        let x: Vec<f64> = (0..2 * plan.input_len())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let labels = [1u8, 8];
        let single = {
            let pass = forward(
                &plan,
                &params,
                &x,
                2,
                false,
                &mut rng_for(7),
                LossHead::SoftmaxCrossEntropy,
            )
            .unwrap();
            backward(&plan, &params, &pass, &labels)
        };
        let mut xx = x.clone();
        xx.extend_from_slice(&x);
        let doubled = {
            let pass = forward(
                &plan,
                &params,
                &xx,
                4,
                false,
                &mut rng_for(7),
                LossHead::SoftmaxCrossEntropy,
            )
            .unwrap();
            backward(&plan, &params, &pass, &[1, 8, 1, 8])
        };
        for (a, b) in single.iter().zip(&doubled) {
            for (x, y) in a.w.iter().zip(&b.w) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn train_step_matches_full_batch_backward() {
        let plan = Plan::compile(&reduced_network());
        let params = NetworkParams::<f64>::init(&plan, 9);
        let mut rng = rng_for(8);
        let batch = 37; // forces uneven chunking
        let x: Vec<f64> = (0..batch * plan.input_len())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let labels: Vec<u8> = (0..batch).map(|i| (i % 10) as u8).collect();
        let (loss_sum, _correct, grads) =
            train_step(&plan, &params, &x, &labels, 55, 0).unwrap();
        // Reference: single full-batch pass (dropout rates are zero in the
        // reduced network, so stream divergence cannot matter).
        let pass = forward(
            &plan,
            &params,
            &x,
            batch,
            true,
            &mut rng_for(9),
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        let reference = backward(&plan, &params, &pass, &labels);
        let ref_loss = loss(&plan, &params, &pass.probs, &labels);
        assert!((loss_sum / batch as f64 + l2_penalty(&plan, &params) - ref_loss).abs() < 1e-9);
        for (a, b) in grads.iter().zip(&reference) {
            for (x, y) in a.w.iter().zip(&b.w) {
                assert!((x - y).abs() < 1e-10);
            }
            for (x, y) in a.b.iter().zip(&b.b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dropout_expectation_matches_eval_activation() {
        // A single unit through inverted dropout keeps its expectation.
        let rate = 0.4;
        let keep = 1.0 - rate;
        let mut rng = rng_for(10);
        let n = 100_000;
        let mut sum = 0.0f64;
        let value = 0.73;
        for _ in 0..n {
            if rng.gen::<f64>() < keep {
                sum += value / keep;
            }
        }
        let mean = sum / n as f64;
        assert!(
            (mean - value).abs() / value < 0.01,
            "dropout expectation {mean} vs {value}"
        );
    }

    #[test]
    fn untrained_network_scores_at_chance_on_balanced_data() {
        let plan = Plan::compile(&reduced_network());
        let params = NetworkParams::<f32>::init(&plan, 21);
        let mut rng = rng_for(12);
        let n = 2000;
        let data = Examples {
            x: (0..n * plan.input_len())
                .map(|_| rng.gen_range(0.0..1.0))
                .collect(),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
            dim: plan.input_len(),
        };
        let acc = evaluate(&plan, &params, &data).unwrap();
        assert!(
            (acc - 0.10).abs() <= 0.02,
            "untrained accuracy {acc} should sit at chance"
        );
    }

    #[test]
    fn evaluation_is_permutation_invariant() {
        let plan = Plan::compile(&reduced_network());
        let params = NetworkParams::<f32>::init(&plan, 13);
        let mut rng = rng_for(11);
        let n = 64;
        let x: Vec<f32> = (0..n * plan.input_len())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let data = Examples {
            x,
            labels,
            dim: plan.input_len(),
        };
        let forward_acc = evaluate(&plan, &params, &data).unwrap();
        let perm: Vec<usize> = (0..n).rev().collect();
        let reversed = data.subset(&perm);
        let reversed_acc = evaluate(&plan, &params, &reversed).unwrap();
        assert_eq!(forward_acc, reversed_acc);
        assert!(evaluate(
            &plan,
            &params,
            &Examples {
                x: vec![],
                labels: vec![],
                dim: plan.input_len()
            }
        )
        .is_err());
    }
}
