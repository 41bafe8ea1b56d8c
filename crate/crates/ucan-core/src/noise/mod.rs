//! Correlated-noise synthesis.
//!
//! Noise panels are random linear combinations of `N = M^2` basis panels.
//! The sine basis holds products of Fourier sine modes evaluated on the
//! 40x40 integer grid; the white basis holds fixed panels of i.i.d.
//! standard-normal pixels. Mode coefficients are zero-mean Gaussians with a
//! per-mode standard deviation, and finished panels are scaled by a
//! calibrated global amplitude and clipped to [-0.5, 0.5].

mod kg;

pub use kg::{verify_kg_statistics, KgFieldSpec, KgModeStat, KgReport, TwoPointStat};

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::panel::{Panel, PANEL_PIXELS, PANEL_SIDE};
use crate::rng::{stream, StreamDomain};

/// Default side length for the sine basis; slightly larger than the 40-pixel
/// grid so no grid point sits on a node line of every mode.
pub const DEFAULT_SIDE_LENGTH: f64 = 44.0;

/// Panels drawn for amplitude calibration when a basis is built.
pub const CALIBRATION_PANELS: usize = 10_000;

/// Quantile of |pixel| pinned to 0.5 by the calibrated amplitude scale.
pub const CALIBRATION_QUANTILE: f64 = 0.995;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseError {
    /// Sine basis requires L > 40 so the grid stays inside the open box.
    SideLengthTooSmall { l: f64 },
    ZeroCutoff,
    InvalidMode { n1: u32, n2: u32 },
    TooFewSamples { n: usize },
    CoefficientCount { expected: usize, got: usize },
}

impl fmt::Display for NoiseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseError::SideLengthTooSmall { l } => {
                write!(f, "sine basis side length must exceed 40, got {l}")
            }
            NoiseError::ZeroCutoff => write!(f, "basis cutoff M must be at least 1"),
            NoiseError::InvalidMode { n1, n2 } => {
                write!(f, "mode indices must be positive, got ({n1}, {n2})")
            }
            NoiseError::TooFewSamples { n } => {
                write!(f, "statistics need at least 2 samples, got {n}")
            }
            NoiseError::CoefficientCount { expected, got } => {
                write!(f, "expected {expected} coefficients, got {got}")
            }
        }
    }
}

impl std::error::Error for NoiseError {}

/// Basis family: low-complexity sine modes or high-complexity white panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Sine,
    White,
}

impl BasisKind {
    pub fn code(self) -> u8 {
        match self {
            BasisKind::Sine => 0,
            BasisKind::White => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(BasisKind::Sine),
            1 => Some(BasisKind::White),
            _ => None,
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisKind::Sine => write!(f, "sine"),
            BasisKind::White => write!(f, "white"),
        }
    }
}

/// A pair of positive mode integers (n1, n2), each in 1..=M.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeIndex {
    n1: u32,
    n2: u32,
}

impl ModeIndex {
    pub fn new(n1: u32, n2: u32) -> Result<Self, NoiseError> {
        if n1 == 0 || n2 == 0 {
            return Err(NoiseError::InvalidMode { n1, n2 });
        }
        Ok(ModeIndex { n1, n2 })
    }

    pub fn n1(self) -> u32 {
        self.n1
    }

    pub fn n2(self) -> u32 {
        self.n2
    }

    /// sqrt(n1^2 + n2^2), the Euclidean mode norm.
    pub fn norm(self) -> f64 {
        ((self.n1 as f64).powi(2) + (self.n2 as f64).powi(2)).sqrt()
    }
}

/// Whether synthesized panels are clipped to [-0.5, 0.5].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clip {
    Apply,
    Disabled,
}

/// A synthesized noise panel plus how many pixels the clip touched.
#[derive(Debug, Clone)]
pub struct NoisePanel {
    pub panel: Panel,
    pub clipped_pixels: usize,
}

impl NoisePanel {
    pub fn was_clipped(&self) -> bool {
        self.clipped_pixels > 0
    }
}

/// An ordered set of N = M^2 basis panels with per-mode coefficient widths
/// and a calibrated global amplitude scale. Immutable once built.
#[derive(Debug, Clone)]
pub struct NoiseBasis {
    kind: BasisKind,
    cutoff: usize,
    side_length: f64,
    seed: u64,
    panels: Vec<Panel>,
    coeff_std: Vec<f64>,
    amplitude_scale: f64,
    clip_fraction: f64,
}

/// Sine basis panel for one mode: pixel (m1, m2) = (2/L) sin(n1 pi m1 / L)
/// sin(n2 pi m2 / L) on the integer grid m1, m2 in 1..=40. m1 indexes rows.
pub fn sine_basis_panel(mode: ModeIndex, side_length: f64) -> Result<Panel, NoiseError> {
    if side_length <= PANEL_SIDE as f64 {
        return Err(NoiseError::SideLengthTooSmall { l: side_length });
    }
    let row = sine_profile(mode.n1, side_length);
    let col = sine_profile(mode.n2, side_length);
    let scale = 2.0 / side_length;
    let mut pixels = Vec::with_capacity(PANEL_PIXELS);
    for r in &row {
        for c in &col {
            // scale * (r*c) keeps the panel bitwise symmetric when n1 == n2.
            pixels.push(scale * (r * c));
        }
    }
    Ok(Panel::from_pixels(pixels))
}

fn sine_profile(n: u32, side_length: f64) -> [f64; PANEL_SIDE] {
    let mut out = [0.0; PANEL_SIDE];
    for (i, slot) in out.iter_mut().enumerate() {
        let m = (i + 1) as f64;
        *slot = (n as f64 * std::f64::consts::PI * m / side_length).sin();
    }
    out
}

/// White basis panel: 1600 i.i.d. standard-normal pixels from the stream.
pub fn white_basis_panel(rng: &mut ChaCha8Rng) -> Panel {
    let pixels = (0..PANEL_PIXELS)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Panel::from_pixels(pixels)
}

impl NoiseBasis {
    /// Build a basis and calibrate its amplitude scale.
    ///
    /// Sine coefficient variances follow the pink-spectrum profile
    /// 1/sqrt(n1^2 + n2^2); white coefficients are i.i.d. N(0, 1/N). The
    /// amplitude scale pins the 99.5th percentile of |pixel| over a seeded
    /// 10^4-panel calibration batch to 0.5, so the expected clip fraction
    /// stays near 0.5%.
    pub fn build(
        kind: BasisKind,
        cutoff: usize,
        side_length: f64,
        seed: u64,
    ) -> Result<Self, NoiseError> {
        if cutoff == 0 {
            return Err(NoiseError::ZeroCutoff);
        }
        let dimension = cutoff * cutoff;
        let mut panels = Vec::with_capacity(dimension);
        let mut coeff_std = Vec::with_capacity(dimension);
        for n1 in 1..=cutoff as u32 {
            for n2 in 1..=cutoff as u32 {
                let mode = ModeIndex::new(n1, n2)?;
                let panel = match kind {
                    BasisKind::Sine => sine_basis_panel(mode, side_length)?,
                    BasisKind::White => {
                        let idx = ((n1 as u64 - 1) * cutoff as u64) + (n2 as u64 - 1);
                        let mut rng = stream(seed, StreamDomain::BasisPanel, idx);
                        white_basis_panel(&mut rng)
                    }
                };
                let variance = match kind {
                    BasisKind::Sine => 1.0 / mode.norm(),
                    BasisKind::White => 1.0 / dimension as f64,
                };
                panels.push(panel);
                coeff_std.push(variance.sqrt());
            }
        }

        let mut basis = NoiseBasis {
            kind,
            cutoff,
            side_length,
            seed,
            panels,
            coeff_std,
            amplitude_scale: 1.0,
            clip_fraction: 0.0,
        };
        basis.calibrate();
        Ok(basis)
    }

    /// Calibrate `amplitude_scale` and measure the resulting clip fraction
    /// on the dedicated calibration streams. Runs once per build; frozen
    /// afterwards.
    fn calibrate(&mut self) {
        let coeffs: Vec<f64> = (0..CALIBRATION_PANELS)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut rng = stream(self.seed, StreamDomain::Calibration, i as u64);
                self.draw_coefficients(&mut rng)
            })
            .collect();
        let raw = self.synthesize_rows(&coeffs, CALIBRATION_PANELS);

        let mut magnitudes: Vec<f64> = raw.iter().map(|v| v.abs()).collect();
        let k = ((magnitudes.len() - 1) as f64 * CALIBRATION_QUANTILE).round() as usize;
        let (_, quantile, _) =
            magnitudes.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).unwrap());
        let quantile = *quantile;
        debug_assert!(quantile > 0.0);

        self.amplitude_scale = 0.5 / quantile;
        let clipped = raw.iter().filter(|v| v.abs() > quantile).count();
        self.clip_fraction = clipped as f64 / raw.len() as f64;
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Noise-space dimension N = M^2.
    pub fn dimension(&self) -> usize {
        self.panels.len()
    }

    pub fn side_length(&self) -> f64 {
        self.side_length
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn amplitude_scale(&self) -> f64 {
        self.amplitude_scale
    }

    /// Fraction of calibration-batch pixels the calibrated scale clips.
    pub fn clip_fraction(&self) -> f64 {
        self.clip_fraction
    }

    pub fn panels(&self) -> &[Panel] {
        &self.panels
    }

    /// Basis panels in row-major (n1, n2) order: index = (n1-1) M + (n2-1).
    pub fn index_of(&self, mode: ModeIndex) -> usize {
        debug_assert!(mode.n1 as usize <= self.cutoff && mode.n2 as usize <= self.cutoff);
        (mode.n1 as usize - 1) * self.cutoff + (mode.n2 as usize - 1)
    }

    pub fn mode_at(&self, index: usize) -> ModeIndex {
        ModeIndex {
            n1: (index / self.cutoff + 1) as u32,
            n2: (index % self.cutoff + 1) as u32,
        }
    }

    pub fn panel(&self, mode: ModeIndex) -> &Panel {
        &self.panels[self.index_of(mode)]
    }

    pub fn coeff_std(&self, mode: ModeIndex) -> f64 {
        self.coeff_std[self.index_of(mode)]
    }

    pub fn coeff_stds(&self) -> &[f64] {
        &self.coeff_std
    }

    /// Draw one coefficient vector g with g_n ~ N(0, coeff_std(n)^2).
    pub fn draw_coefficients(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.coeff_std
            .iter()
            .map(|std| std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Coefficients for the panel at `panel_index`, from its own stream.
    pub fn coefficients_for_panel(&self, panel_index: u64) -> Vec<f64> {
        let mut rng = stream(self.seed, StreamDomain::Coefficients, panel_index);
        self.draw_coefficients(&mut rng)
    }

    /// amplitude_scale * sum_n g_n P_n, clipped to [-0.5, 0.5] when asked.
    pub fn synthesize(&self, coefficients: &[f64], clip: Clip) -> Result<NoisePanel, NoiseError> {
        if coefficients.len() != self.dimension() {
            return Err(NoiseError::CoefficientCount {
                expected: self.dimension(),
                got: coefficients.len(),
            });
        }
        let raw = self.synthesize_rows(coefficients, 1);
        let mut clipped_pixels = 0usize;
        let pixels = raw
            .into_iter()
            .map(|v| {
                let scaled = self.amplitude_scale * v;
                match clip {
                    Clip::Disabled => scaled,
                    Clip::Apply => {
                        if scaled.abs() > 0.5 {
                            clipped_pixels += 1;
                            scaled.clamp(-0.5, 0.5)
                        } else {
                            scaled
                        }
                    }
                }
            })
            .collect();
        Ok(NoisePanel {
            panel: Panel::from_pixels(pixels),
            clipped_pixels,
        })
    }

    /// One noise panel from the stream belonging to `panel_index`.
    pub fn sample_panel(&self, panel_index: u64, clip: Clip) -> NoisePanel {
        let coeffs = self.coefficients_for_panel(panel_index);
        self.synthesize(&coeffs, clip).expect("coefficient count matches basis")
    }

    /// Batch-sample panels for explicit indices, in parallel.
    ///
    /// Each index draws from its own stream, so the output is independent
    /// of chunking and thread scheduling.
    pub fn sample_panels(&self, indices: &[u64], clip: Clip) -> Vec<NoisePanel> {
        const CHUNK: usize = 512;
        indices
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| {
                let coeffs: Vec<f64> = chunk
                    .iter()
                    .flat_map(|&i| self.coefficients_for_panel(i))
                    .collect();
                let raw = self.synthesize_rows(&coeffs, chunk.len());
                raw.chunks_exact(PANEL_PIXELS)
                    .map(|row| {
                        let mut clipped_pixels = 0usize;
                        let pixels = row
                            .iter()
                            .map(|&v| {
                                let scaled = self.amplitude_scale * v;
                                match clip {
                                    Clip::Disabled => scaled,
                                    Clip::Apply => {
                                        if scaled.abs() > 0.5 {
                                            clipped_pixels += 1;
                                            scaled.clamp(-0.5, 0.5)
                                        } else {
                                            scaled
                                        }
                                    }
                                }
                            })
                            .collect();
                        NoisePanel {
                            panel: Panel::from_pixels(pixels),
                            clipped_pixels,
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Unscaled synthesis of `rows` coefficient vectors (concatenated in
    /// `coefficients`) into rows x 1600 pixels: one dgemm against the basis
    /// matrix.
    fn synthesize_rows(&self, coefficients: &[f64], rows: usize) -> Vec<f64> {
        let n = self.dimension();
        debug_assert_eq!(coefficients.len(), rows * n);
        let basis_flat = self.basis_matrix();
        let mut out = vec![0.0f64; rows * PANEL_PIXELS];
        unsafe {
            matrixmultiply::dgemm(
                rows,
                n,
                PANEL_PIXELS,
                1.0,
                coefficients.as_ptr(),
                n as isize,
                1,
                basis_flat.as_ptr(),
                PANEL_PIXELS as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                PANEL_PIXELS as isize,
                1,
            );
        }
        out
    }

    /// Basis panels flattened to an N x 1600 row-major matrix.
    fn basis_matrix(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.dimension() * PANEL_PIXELS);
        for p in &self.panels {
            flat.extend_from_slice(p.pixels());
        }
        flat
    }

    /// Largest |G_ij| / sqrt(G_ii G_jj) over distinct basis-panel pairs.
    pub fn gram_normalized_offdiag_max(&self) -> f64 {
        let n = self.dimension();
        let flat = self.basis_matrix();
        let mut gram = vec![0.0f64; n * n];
        unsafe {
            matrixmultiply::dgemm(
                n,
                PANEL_PIXELS,
                n,
                1.0,
                flat.as_ptr(),
                PANEL_PIXELS as isize,
                1,
                flat.as_ptr(),
                1,
                PANEL_PIXELS as isize,
                0.0,
                gram.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        let mut max = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = gram[i * n + j].abs() / (gram[i * n + i] * gram[j * n + j]).sqrt();
                max = max.max(v);
            }
        }
        max
    }
}
