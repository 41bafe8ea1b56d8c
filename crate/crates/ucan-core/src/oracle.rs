//! Linear inference of the full noise panel from bezel pixels alone.
//!
//! Variant-C bezels carry `p/2 + p * noise`, so the noise values at the 816
//! bezel pixels follow from an affine inversion. When the basis panels
//! restricted to the bezel form a full-rank system, least squares over all
//! bezel pixels recovers the generating coefficients and hence the noise
//! everywhere; subtracting it yields an upper bound on any learned
//! denoiser.
//!
//! Full rank is not guaranteed by N <= 816. Sine bases with cutoff M >= 13
//! are exactly rank-deficient on this geometry: the 1D sine family hits
//! only 12 distinct bezel rows, so combinations vanishing there exist for
//! M > 12, and their products vanish on the whole frame while remaining
//! nonzero inside. Such systems are reported as rank-deficient; the
//! minimum-norm solution stays available for diagnostics.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{LabeledPanel, Variant};
use crate::noise::NoiseBasis;
use crate::panel::{bezel_indices, Panel, BEZEL_PIXELS, PANEL_PIXELS};

/// Relative singular-value threshold below which the system counts as
/// numerically rank-deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug)]
pub enum OracleError {
    WrongVariant { found: Variant },
    ZeroNoiseFraction,
    Underdetermined { dimension: usize },
    RankDeficient { condition_estimate: f64, deficiency: usize },
    ResidualLength { expected: usize, got: usize },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::WrongVariant { found } => {
                write!(f, "bezel residuals exist only for variant C, got {found}")
            }
            OracleError::ZeroNoiseFraction => {
                write!(f, "noise fraction must be positive to invert the bezel")
            }
            OracleError::Underdetermined { dimension } => write!(
                f,
                "noise space dimension {dimension} exceeds the {BEZEL_PIXELS} bezel pixels"
            ),
            OracleError::RankDeficient {
                condition_estimate,
                deficiency,
            } => write!(
                f,
                "bezel system is numerically rank-deficient ({deficiency} null directions, \
                 condition estimate {condition_estimate:.3e})"
            ),
            OracleError::ResidualLength { expected, got } => {
                write!(f, "expected {expected} residuals, got {got}")
            }
        }
    }
}

impl std::error::Error for OracleError {}

/// Invert the variant-C bezel affine map: r[i] = (pixel_i - p/2) / p over
/// the bezel pixels in fixed raster order.
pub fn extract_bezel_residual(panel: &LabeledPanel, p: f64) -> Result<Vec<f64>, OracleError> {
    if panel.variant != Variant::C {
        return Err(OracleError::WrongVariant {
            found: panel.variant,
        });
    }
    if p <= 0.0 {
        return Err(OracleError::ZeroNoiseFraction);
    }
    let pixels = panel.panel.pixels();
    Ok(bezel_indices()
        .iter()
        .map(|&i| (pixels[i] - p / 2.0) / p)
        .collect())
}

/// Cached least-squares system mapping bezel residuals to basis
/// coefficients, with the basis amplitude scale folded into the columns so
/// the recovered coefficients live in the sampler's convention.
pub struct BezelSystem {
    dimension: usize,
    /// 1600 x N scaled basis matrix for full-grid reconstruction.
    full: DMatrix<f64>,
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    condition_estimate: f64,
    rank_deficiency: usize,
}

impl BezelSystem {
    pub fn new(basis: &NoiseBasis) -> Result<Self, OracleError> {
        let n = basis.dimension();
        if n > BEZEL_PIXELS {
            return Err(OracleError::Underdetermined { dimension: n });
        }
        let scale = basis.amplitude_scale();
        let bezel = bezel_indices();

        let mut full = DMatrix::zeros(PANEL_PIXELS, n);
        let mut a = DMatrix::zeros(BEZEL_PIXELS, n);
        for (j, panel) in basis.panels().iter().enumerate() {
            for (i, &v) in panel.pixels().iter().enumerate() {
                full[(i, j)] = scale * v;
            }
            for (i, &px) in bezel.iter().enumerate() {
                a[(i, j)] = scale * panel.pixels()[px];
            }
        }

        let svd = a.svd(true, true);
        let s_max = svd.singular_values.max();
        let s_min = svd.singular_values.min();
        let condition_estimate = if s_min > 0.0 {
            s_max / s_min
        } else {
            f64::INFINITY
        };
        let rank_deficiency = svd
            .singular_values
            .iter()
            .filter(|&&s| s <= RANK_TOLERANCE * s_max)
            .count();

        Ok(BezelSystem {
            dimension: n,
            full,
            svd,
            condition_estimate,
            rank_deficiency,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// sigma_max / sigma_min of the bezel matrix.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    pub fn rank_deficiency(&self) -> usize {
        self.rank_deficiency
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank_deficiency > 0
    }

    /// Least-squares coefficients for a bezel residual vector.
    ///
    /// Rank-deficient systems are refused: the residual does not determine
    /// the coefficients, so exact inference is impossible by construction.
    pub fn infer_coefficients(&self, r_bezel: &[f64]) -> Result<Vec<f64>, OracleError> {
        if self.is_rank_deficient() {
            return Err(OracleError::RankDeficient {
                condition_estimate: self.condition_estimate,
                deficiency: self.rank_deficiency,
            });
        }
        self.solve_min_norm(r_bezel)
    }

    /// Minimum-norm least-squares solve, also usable on rank-deficient
    /// systems for diagnostics. Singular directions below the rank
    /// tolerance are truncated.
    pub fn solve_min_norm(&self, r_bezel: &[f64]) -> Result<Vec<f64>, OracleError> {
        if r_bezel.len() != BEZEL_PIXELS {
            return Err(OracleError::ResidualLength {
                expected: BEZEL_PIXELS,
                got: r_bezel.len(),
            });
        }
        let b = DVector::from_column_slice(r_bezel);
        let eps = RANK_TOLERANCE * self.svd.singular_values.max();
        let x = self
            .svd
            .solve(&b, eps)
            .expect("svd computed with both factor sets");
        Ok(x.iter().copied().collect())
    }

    /// Full-grid noise panel for a coefficient vector (amplitude scale
    /// already folded in, no clipping).
    pub fn reconstruct_noise(&self, coefficients: &[f64]) -> Panel {
        assert_eq!(coefficients.len(), self.dimension);
        let g = DVector::from_column_slice(coefficients);
        let noise = &self.full * g;
        Panel::from_pixels(noise.iter().copied().collect())
    }

    /// Infer the full noise panel from a variant-C panel's bezel.
    pub fn infer_noise(&self, panel: &LabeledPanel, p: f64) -> Result<Panel, OracleError> {
        let residual = extract_bezel_residual(panel, p)?;
        let coeffs = self.infer_coefficients(&residual)?;
        Ok(self.reconstruct_noise(&coeffs))
    }

    /// Subtract the inferred noise from a variant-C panel, clamped to [0,1].
    ///
    /// Clipped noise pixels make the inversion inexact, so unlike the
    /// composition path the clamp here is a repair, not an assertion.
    pub fn denoise(&self, panel: &LabeledPanel, p: f64) -> Result<LabeledPanel, OracleError> {
        let noise = self.infer_noise(panel, p)?;
        let pixels = panel
            .panel
            .pixels()
            .iter()
            .zip(noise.pixels())
            .map(|(&v, &n)| (v - p * n).clamp(0.0, 1.0))
            .collect();
        Ok(LabeledPanel {
            panel: Panel::from_pixels(pixels),
            label: panel.label,
            variant: Variant::CDenoised,
            noise_fraction: panel.noise_fraction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compose_panel, LabeledImage};
    use crate::noise::{BasisKind, Clip};
    use crate::panel::IMAGE_PIXELS;

    fn test_image() -> LabeledImage {
        LabeledImage {
            pixels: (0..IMAGE_PIXELS).map(|i| (i % 7) as f32 / 7.0).collect(),
            label: 4,
        }
    }

    #[test]
    fn residual_inverts_composition_exactly() {
        let basis = NoiseBasis::build(BasisKind::Sine, 5, 44.0, 8).unwrap();
        let clipped = basis.sample_panel(0, Clip::Apply);
        let p = 0.5;
        let composed = compose_panel(&test_image(), Some(&clipped.panel), p, Variant::C).unwrap();
        let residual = extract_bezel_residual(&composed, p).unwrap();
        let bezel = bezel_indices();
        for (r, &idx) in residual.iter().zip(&bezel) {
            assert!((r - clipped.panel.pixels()[idx]).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_of_noiseless_bezel_is_zero() {
        let noise = Panel::zeros();
        let p = 0.4;
        let composed = compose_panel(&test_image(), Some(&noise), p, Variant::C).unwrap();
        let residual = extract_bezel_residual(&composed, p).unwrap();
        assert!(residual.iter().all(|&r| r.abs() < 1e-12));
    }

    #[test]
    fn residual_arithmetic_at_half() {
        // p = 0.5 and a bezel pixel of 0.5 means noise (0.5-0.25)/0.5 = 0.5.
        let mut noise = Panel::zeros();
        for v in noise.pixels_mut() {
            *v = 0.5;
        }
        let image = LabeledImage {
            pixels: vec![0.0; IMAGE_PIXELS],
            label: 0,
        };
        let composed = compose_panel(&image, Some(&noise), 0.5, Variant::C).unwrap();
        let residual = extract_bezel_residual(&composed, 0.5).unwrap();
        assert!(residual.iter().all(|&r| (r - 0.5).abs() < 1e-12));
    }

    #[test]
    fn residual_preconditions() {
        let composed = compose_panel(&test_image(), None, 0.0, Variant::A).unwrap();
        assert!(matches!(
            extract_bezel_residual(&composed, 0.5),
            Err(OracleError::WrongVariant { found: Variant::A })
        ));
        let c = compose_panel(&test_image(), Some(&Panel::zeros()), 0.5, Variant::C).unwrap();
        assert!(matches!(
            extract_bezel_residual(&c, 0.0),
            Err(OracleError::ZeroNoiseFraction)
        ));
    }

    #[test]
    fn zero_residual_gives_zero_coefficients() {
        let basis = NoiseBasis::build(BasisKind::Sine, 5, 44.0, 8).unwrap();
        let system = BezelSystem::new(&basis).unwrap();
        let coeffs = system.infer_coefficients(&vec![0.0; BEZEL_PIXELS]).unwrap();
        assert!(coeffs.iter().all(|&g| g.abs() < 1e-14));
    }

    #[test]
    fn sine_m5_recovers_coefficients_exactly() {
        let basis = NoiseBasis::build(BasisKind::Sine, 5, 44.0, 8).unwrap();
        let system = BezelSystem::new(&basis).unwrap();
        assert!(!system.is_rank_deficient());
        for i in 0..20 {
            let g = basis.coefficients_for_panel(i);
            let sample = basis.synthesize(&g, Clip::Disabled).unwrap();
            let bezel = bezel_indices();
            let residual: Vec<f64> = bezel.iter().map(|&k| sample.panel.pixels()[k]).collect();
            let ghat = system.infer_coefficients(&residual).unwrap();
            for (a, b) in ghat.iter().zip(&g) {
                let denom = b.abs().max(1e-6);
                assert!(
                    (a - b).abs() / denom < 1e-8,
                    "coefficient error {} vs {}",
                    a,
                    b
                );
            }
        }
    }

    #[test]
    fn underdetermined_dimension_is_rejected() {
        // 29^2 = 841 > 816 bezel pixels.
        let basis = NoiseBasis::build(BasisKind::Sine, 29, 44.0, 8).unwrap();
        assert!(matches!(
            BezelSystem::new(&basis),
            Err(OracleError::Underdetermined { dimension: 841 })
        ));
    }

    #[test]
    fn sine_m13_and_above_report_rank_deficiency() {
        // The 1D sine family sees only 12 bezel rows, so cutoffs above 12
        // carry exact null fields and the bezel no longer determines the
        // noise space.
        let basis = NoiseBasis::build(BasisKind::Sine, 13, 44.0, 8).unwrap();
        let system = BezelSystem::new(&basis).unwrap();
        assert!(system.is_rank_deficient());
        assert_eq!(system.rank_deficiency(), 1);
        assert!(system.condition_estimate() > 1e12);
        assert!(matches!(
            system.infer_coefficients(&vec![0.0; BEZEL_PIXELS]),
            Err(OracleError::RankDeficient { .. })
        ));
        // The min-norm path still answers for diagnostics.
        assert!(system.solve_min_norm(&vec![0.0; BEZEL_PIXELS]).is_ok());
    }

    #[test]
    fn denoise_recovers_rescaled_clean_image() {
        let basis = NoiseBasis::build(BasisKind::Sine, 5, 44.0, 8).unwrap();
        let system = BezelSystem::new(&basis).unwrap();
        let image = test_image();
        let p = 0.7;
        for i in 0..10 {
            let noise = basis.sample_panel(i, Clip::Apply);
            if noise.was_clipped() {
                continue;
            }
            let composed = compose_panel(&image, Some(&noise.panel), p, Variant::C).unwrap();
            let denoised = system.denoise(&composed, p).unwrap();
            assert_eq!(denoised.variant, Variant::CDenoised);
            let clean = compose_panel(&image, None, 0.0, Variant::A).unwrap();
            for (d, c) in denoised.panel.pixels().iter().zip(clean.panel.pixels()) {
                let expected = p / 2.0 + (1.0 - p) * c;
                assert!((d - expected).abs() < 1e-6, "{d} vs {expected}");
            }
        }
    }

    #[test]
    fn denoising_zero_noise_changes_nothing() {
        let basis = NoiseBasis::build(BasisKind::Sine, 5, 44.0, 8).unwrap();
        let system = BezelSystem::new(&basis).unwrap();
        let composed =
            compose_panel(&test_image(), Some(&Panel::zeros()), 0.6, Variant::C).unwrap();
        let denoised = system.denoise(&composed, 0.6).unwrap();
        for (d, c) in denoised
            .panel
            .pixels()
            .iter()
            .zip(composed.panel.pixels())
        {
            assert!((d - c).abs() < 1e-9);
        }
    }
}
