//! From-scratch CNN: valid 3x3 convolutions with ReLU, 2x2 max pooling,
//! inverted dropout, dense layers, softmax cross-entropy with an L2 penalty
//! on the first convolution, Adam, and early stopping on validation
//! accuracy.
//!
//! Activations are stored channels-last `[batch, h, w, c]`; convolutions
//! run as im2col plus one GEMM so the same code path serves f32 training
//! and f64 gradient verification.

mod adam;
mod checkpoint;
mod engine;
mod gradcheck;
mod train;

pub use adam::adam_step;
pub use checkpoint::{load_checkpoint, save_checkpoint, write_history_csv, CheckpointError};
pub use engine::{evaluate, forward, loss, train_step, Examples, ForwardPass, LossHead};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use train::{train, EarlyStopper, EpochStats, TrainError, TrainOutcome};

use rand::Rng;

use crate::rng::{mix, stream, StreamDomain};

/// Number of output classes.
pub const CLASSES: usize = 10;

/// One architectural element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// Valid convolution, stride 1, optional ReLU.
    Conv {
        filters: usize,
        kernel: usize,
        relu: bool,
    },
    /// Square max pool with stride = size; odd trailing rows/cols drop.
    MaxPool { size: usize },
    /// Inverted dropout: keep with probability 1-rate, scale kept units by
    /// 1/(1-rate) at training time.
    Dropout { rate: f64 },
    Flatten,
    /// Fully connected, optional ReLU.
    Dense { units: usize, relu: bool },
}

/// An architecture: input shape, layer stack, and the L2 coefficient
/// applied to the first convolution's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// (height, width, channels).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub l2_conv1: f64,
}

/// The experiment network on 40x40x1 panels.
///
/// Three 3x3 convolutions (32, 64, 128 filters), two 2x2 max pools,
/// dropout 0.25/0.25/0.4/0.3, dense 128 and dense 10, ReLU everywhere but
/// the softmax head, L2 alpha 0.0005 on the first convolution. The shape
/// trace is 40 -> 38x38x32 -> 19x19x32 -> 17x17x64 -> 8x8x64 -> 6x6x128 ->
/// flatten 4608 -> 128 -> 10.
pub fn ucan_network() -> NetworkSpec {
    NetworkSpec {
        input: (40, 40, 1),
        layers: vec![
            LayerSpec::Conv {
                filters: 32,
                kernel: 3,
                relu: true,
            },
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Conv {
                filters: 64,
                kernel: 3,
                relu: true,
            },
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Conv {
                filters: 128,
                kernel: 3,
                relu: true,
            },
            LayerSpec::Dropout { rate: 0.4 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 128,
                relu: true,
            },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense {
                units: CLASSES,
                relu: false,
            },
        ],
        l2_conv1: 0.0005,
    }
}

/// Down-scaled network for finite-difference gradient checks: same layer
/// types on a 12x12 input with dropout disabled (rate 0).
pub fn reduced_network() -> NetworkSpec {
    NetworkSpec {
        input: (12, 12, 1),
        layers: vec![
            LayerSpec::Conv {
                filters: 2,
                kernel: 3,
                relu: true,
            },
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Dropout { rate: 0.0 },
            LayerSpec::Conv {
                filters: 2,
                kernel: 3,
                relu: true,
            },
            LayerSpec::Dropout { rate: 0.0 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 8,
                relu: true,
            },
            LayerSpec::Dense {
                units: CLASSES,
                relu: false,
            },
        ],
        l2_conv1: 0.0005,
    }
}

/// A compiled stage: layer kind plus resolved shapes and parameter slot.
#[derive(Debug, Clone)]
pub struct Stage {
    pub layer: LayerSpec,
    /// (h, w, c) feeding this stage.
    pub in_shape: (usize, usize, usize),
    pub out_shape: (usize, usize, usize),
    /// Index into the parameter list for Conv/Dense stages.
    pub param: Option<usize>,
    /// (rows, cols) of the weight matrix: (k*k*in_c, filters) for Conv,
    /// (inputs, units) for Dense.
    pub w_shape: (usize, usize),
}

/// Shape-resolved network ready to run.
#[derive(Debug, Clone)]
pub struct Plan {
    pub input: (usize, usize, usize),
    pub stages: Vec<Stage>,
    pub l2_conv1: f64,
    /// Parameter slot of the first convolution (L2 target), if any.
    pub conv1_param: Option<usize>,
    pub classes: usize,
}

impl Plan {
    /// Resolve all stage shapes. Panics on a malformed spec (zero-size
    /// feature maps, missing flatten, non-softmax head).
    pub fn compile(spec: &NetworkSpec) -> Plan {
        let mut shape = spec.input;
        let mut stages = Vec::with_capacity(spec.layers.len());
        let mut param_count = 0usize;
        let mut conv1_param = None;
        for &layer in &spec.layers {
            let (h, w, c) = shape;
            let (out_shape, param, w_shape) = match layer {
                LayerSpec::Conv { filters, kernel, .. } => {
                    assert!(h >= kernel && w >= kernel, "feature map under kernel size");
                    let out = (h - kernel + 1, w - kernel + 1, filters);
                    let slot = param_count;
                    param_count += 1;
                    if conv1_param.is_none() {
                        conv1_param = Some(slot);
                    }
                    (out, Some(slot), (kernel * kernel * c, filters))
                }
                LayerSpec::MaxPool { size } => {
                    assert!(size >= 1);
                    let out = (h / size, w / size, c);
                    assert!(out.0 >= 1 && out.1 >= 1, "pool erased the feature map");
                    (out, None, (0, 0))
                }
                LayerSpec::Dropout { rate } => {
                    assert!((0.0..1.0).contains(&rate), "dropout rate in [0,1)");
                    (shape, None, (0, 0))
                }
                LayerSpec::Flatten => ((1, 1, h * w * c), None, (0, 0)),
                LayerSpec::Dense { units, .. } => {
                    assert_eq!((h, w), (1, 1), "dense layers need flattened input");
                    let slot = param_count;
                    param_count += 1;
                    ((1, 1, units), Some(slot), (c, units))
                }
            };
            stages.push(Stage {
                layer,
                in_shape: shape,
                out_shape,
                param,
                w_shape,
            });
            shape = out_shape;
        }
        assert_eq!(
            shape,
            (1, 1, CLASSES),
            "network must end in a {CLASSES}-way head"
        );
        if let Some(Stage {
            layer: LayerSpec::Dense { relu, .. },
            ..
        }) = stages.last()
        {
            assert!(!relu, "softmax head takes raw logits");
        }
        Plan {
            input: spec.input,
            stages,
            l2_conv1: spec.l2_conv1,
            conv1_param,
            classes: CLASSES,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    /// Parametric stages in order: (stage index, param slot).
    pub fn param_stages(&self) -> Vec<(usize, usize)> {
        self.stages
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.param.map(|p| (i, p)))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_stages()
            .iter()
            .map(|&(i, _)| {
                let s = &self.stages[i];
                s.w_shape.0 * s.w_shape.1 + s.out_shape.2
            })
            .sum()
    }

    /// Stable hash of the topology, embedded in checkpoints.
    pub fn spec_hash(&self) -> u64 {
        let mut parts = vec![
            self.input.0 as u64,
            self.input.1 as u64,
            self.input.2 as u64,
            (self.l2_conv1 * 1e9) as u64,
        ];
        for s in &self.stages {
            let (code, a, b) = match s.layer {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    relu,
                } => (1u64, (filters * 100 + kernel) as u64, relu as u64),
                LayerSpec::MaxPool { size } => (2, size as u64, 0),
                LayerSpec::Dropout { rate } => (3, (rate * 1e9) as u64, 0),
                LayerSpec::Flatten => (4, 0, 0),
                LayerSpec::Dense { units, relu } => (5, units as u64, relu as u64),
            };
            parts.extend([code, a, b]);
        }
        mix(0x5543_414e, &parts)
    }
}

/// Weights and biases of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorPair<S> {
    pub w: Vec<S>,
    pub b: Vec<S>,
}

/// All trainable state: parameters plus Adam moments and the step counter.
#[derive(Debug, Clone)]
pub struct NetworkParams<S> {
    pub layers: Vec<TensorPair<S>>,
    pub moment1: Vec<TensorPair<S>>,
    pub moment2: Vec<TensorPair<S>>,
    pub step: u64,
}

/// Per-layer parameter gradients, parallel to `NetworkParams::layers`.
pub type Gradients<S> = Vec<TensorPair<S>>;

impl<S: Scalar> NetworkParams<S> {
    /// Glorot-uniform weights, zero biases, zero moments.
    ///
    /// Fan counts follow the receptive-field convention: convolutions use
    /// k^2 * channels on both sides, dense layers their unit counts.
    pub fn init(plan: &Plan, seed: u64) -> Self {
        let mut rng = stream(seed, StreamDomain::NetInit, 0);
        let mut layers = Vec::new();
        for &(stage_idx, _) in &plan.param_stages() {
            let stage = &plan.stages[stage_idx];
            let (rows, cols) = stage.w_shape;
            let (fan_in, fan_out) = match stage.layer {
                LayerSpec::Conv { filters, kernel, .. } => (
                    kernel * kernel * stage.in_shape.2,
                    kernel * kernel * filters,
                ),
                LayerSpec::Dense { units, .. } => (rows, units),
                _ => unreachable!("only conv/dense carry parameters"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..rows * cols)
                .map(|_| S::from_f64(rng.gen_range(-limit..limit)))
                .collect();
            let b = vec![S::ZERO; stage.out_shape.2];
            layers.push(TensorPair { w, b });
        }
        let zeros: Vec<TensorPair<S>> = layers
            .iter()
            .map(|t| TensorPair {
                w: vec![S::ZERO; t.w.len()],
                b: vec![S::ZERO; t.b.len()],
            })
            .collect();
        NetworkParams {
            moment1: zeros.clone(),
            moment2: zeros,
            layers,
            step: 0,
        }
    }

    pub fn zeroed_like(&self) -> Gradients<S> {
        self.layers
            .iter()
            .map(|t| TensorPair {
                w: vec![S::ZERO; t.w.len()],
                b: vec![S::ZERO; t.b.len()],
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|t| t.w.iter().all(|v| v.is_finite()) && t.b.iter().all(|v| v.is_finite()))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|t| t.w.len() + t.b.len()).sum()
    }
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Independent training repetitions (consumed by the experiment grid).
    pub repetitions: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            repetitions: 1,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Float abstraction so the same engine trains in f32 and gradient-checks
/// in f64. GEMM dispatches to the matching matrixmultiply kernel.
pub trait Scalar: num_traits::Float + Send + Sync + std::fmt::Debug + 'static {
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;

    /// C <- alpha * A B + beta * C over raw row/col strides.
    ///
    /// # Safety
    /// Pointers must address m x k, k x n, and m x n buffers consistent
    /// with the given strides for the duration of the call.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn into_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn into_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ucan_network_shape_trace() {
        let plan = Plan::compile(&ucan_network());
        let shapes: Vec<(usize, usize, usize)> =
            plan.stages.iter().map(|s| s.out_shape).collect();
        assert_eq!(shapes[0], (38, 38, 32));
        assert_eq!(shapes[1], (19, 19, 32));
        assert_eq!(shapes[3], (17, 17, 64));
        assert_eq!(shapes[4], (8, 8, 64));
        assert_eq!(shapes[6], (6, 6, 128));
        assert_eq!(shapes[8], (1, 1, 4608));
        assert_eq!(shapes[9], (1, 1, 128));
        assert_eq!(*shapes.last().unwrap(), (1, 1, 10));
    }

    #[test]
    fn table_parameter_counts() {
        let plan = Plan::compile(&ucan_network());
        let params = NetworkParams::<f32>::init(&plan, 1);
        let counts: Vec<usize> = params
            .layers
            .iter()
            .map(|t| t.w.len() + t.b.len())
            .collect();
        assert_eq!(counts[0], 320); // 3*3*1*32 + 32
        assert_eq!(counts[1], 18_496); // 3*3*32*64 + 64
        assert_eq!(counts[2], 73_856); // 3*3*64*128 + 128
        assert_eq!(counts[3], 4608 * 128 + 128);
        assert_eq!(counts[4], 1290);
    }

    #[test]
    fn glorot_bounds_hold_per_layer() {
        let plan = Plan::compile(&ucan_network());
        let params = NetworkParams::<f32>::init(&plan, 3);
        let fans: [(f64, f64); 5] = [
            (9.0, 9.0 * 32.0),
            (9.0 * 32.0, 9.0 * 64.0),
            (9.0 * 64.0, 9.0 * 128.0),
            (4608.0, 128.0),
            (128.0, 10.0),
        ];
        for (t, (fan_in, fan_out)) in params.layers.iter().zip(fans) {
            let limit = (6.0 / (fan_in + fan_out)).sqrt() as f32;
            assert!(t.w.iter().all(|w| w.abs() <= limit));
            assert!(t.b.iter().all(|&b| b == 0.0));
            // The draw actually uses the range, not a sliver of it.
            let max = t.w.iter().fold(0f32, |m, w| m.max(w.abs()));
            assert!(max > 0.5 * limit);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let plan = Plan::compile(&reduced_network());
        let a = NetworkParams::<f64>::init(&plan, 11);
        let b = NetworkParams::<f64>::init(&plan, 11);
        assert_eq!(a.layers, b.layers);
        let c = NetworkParams::<f64>::init(&plan, 12);
        assert_ne!(a.layers, c.layers);
    }

    #[test]
    fn spec_hash_tracks_topology() {
        let a = Plan::compile(&ucan_network()).spec_hash();
        let b = Plan::compile(&ucan_network()).spec_hash();
        let c = Plan::compile(&reduced_network()).spec_hash();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
