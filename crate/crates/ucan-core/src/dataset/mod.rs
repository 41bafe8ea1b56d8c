//! Dataset pipeline: Fashion-MNIST ingestion, brightness rescaling, bezel
//! padding, noise composition, and the A/B/C variants with fixed splits.
//!
//! Variant A keeps the clean panel. Variants B and C compress image
//! brightness into [p/2, 1-p/2] and add `p * noise`; B masks the noise to
//! the image window while C also writes it onto the bezel, which is what
//! gives a network trained on C access to correlated auxiliary noise.

mod idx;

pub use idx::{load_fashion_mnist, load_idx_images, load_idx_labels, IdxError};

use std::fmt;

use rayon::prelude::*;

use crate::panel::{is_bezel, Panel, IMAGE_PIXELS, IMAGE_SIDE, PANEL_SIDE};
use crate::rng::{stream, StreamDomain};

/// Paper split: 60k training pool splits into 50k train + 10k validation.
pub const VAL_COUNT: usize = 10_000;
/// Slack for the no-op output clamp; violations beyond this are bugs.
const CLAMP_EPS: f64 = 1e-9;

/// A 28x28 image in [0,1] with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// Row-major 784 pixels, raw byte / 255.
    pub pixels: Vec<f32>,
    pub label: u8,
}

/// Dataset variants: clean, image-noise-only, image-plus-bezel-noise, and
/// the oracle-denoised tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    A,
    B,
    C,
    CDenoised,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Some(Variant::A),
            "b" => Some(Variant::B),
            "c" => Some(Variant::C),
            "c-denoised" | "cdenoised" => Some(Variant::CDenoised),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::A => write!(f, "A"),
            Variant::B => write!(f, "B"),
            Variant::C => write!(f, "C"),
            Variant::CDenoised => write!(f, "C-denoised"),
        }
    }
}

/// A composed 40x40 panel with label and provenance.
#[derive(Debug, Clone)]
pub struct LabeledPanel {
    pub panel: Panel,
    pub label: u8,
    pub variant: Variant,
    pub noise_fraction: f64,
}

/// Train/validation/test collections of composed panels.
#[derive(Debug)]
pub struct DatasetSplit {
    pub train: Vec<LabeledPanel>,
    pub val: Vec<LabeledPanel>,
    pub test: Vec<LabeledPanel>,
}

#[derive(Debug, PartialEq)]
pub enum DatasetError {
    InvalidNoiseFraction { p: f64 },
    NoiseOutOfRange { value: f64 },
    WrongImageShape { len: usize },
    InsufficientNoisePanels { have: usize, need: usize },
    PoolTooSmall { pool: usize },
    WrongVariant { found: Variant },
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::InvalidNoiseFraction { p } => {
                write!(f, "noise fraction must lie in [0,1), got {p}")
            }
            DatasetError::NoiseOutOfRange { value } => {
                write!(f, "noise pixel {value} outside [-0.5, 0.5]")
            }
            DatasetError::WrongImageShape { len } => {
                write!(f, "expected a 28x28 image (784 pixels), got {len}")
            }
            DatasetError::InsufficientNoisePanels { have, need } => {
                write!(f, "need {need} noise panels, cache holds {have}")
            }
            DatasetError::PoolTooSmall { pool } => {
                write!(f, "training pool of {pool} cannot host a validation split")
            }
            DatasetError::WrongVariant { found } => {
                write!(f, "operation requires variant C, got {found}")
            }
        }
    }
}

impl std::error::Error for DatasetError {}

/// Affine brightness map v -> p/2 + (1-p) v, compressing [0,1] into
/// [p/2, 1-p/2] to leave headroom for noise of amplitude p/2.
pub fn rescale_value(v: f64, p: f64) -> Result<f64, DatasetError> {
    check_fraction(p)?;
    Ok(p / 2.0 + (1.0 - p) * v)
}

/// Inverse of `rescale_value` for p < 1.
pub fn unrescale_value(v: f64, p: f64) -> Result<f64, DatasetError> {
    check_fraction(p)?;
    Ok((v - p / 2.0) / (1.0 - p))
}

pub fn rescale_panel(panel: &Panel, p: f64) -> Result<Panel, DatasetError> {
    check_fraction(p)?;
    let pixels = panel
        .pixels()
        .iter()
        .map(|&v| p / 2.0 + (1.0 - p) * v)
        .collect();
    Ok(Panel::from_pixels(pixels))
}

fn check_fraction(p: f64) -> Result<(), DatasetError> {
    if !(0.0..1.0).contains(&p) {
        return Err(DatasetError::InvalidNoiseFraction { p });
    }
    Ok(())
}

/// Center a 28x28 image in a 40x40 panel, zero-filling the 6-pixel bezel.
pub fn pad_bezel(image: &[f32]) -> Result<Panel, DatasetError> {
    if image.len() != IMAGE_PIXELS {
        return Err(DatasetError::WrongImageShape { len: image.len() });
    }
    let mut panel = Panel::zeros();
    for r in 0..IMAGE_SIDE {
        for c in 0..IMAGE_SIDE {
            panel.set(r + 6, c + 6, image[r * IMAGE_SIDE + c] as f64);
        }
    }
    Ok(panel)
}

/// Compose one labeled panel.
///
/// The output clamp is an assertion: valid inputs always land in [0,1], so
/// a violation beyond float-rounding slack panics instead of being repaired.
pub fn compose_panel(
    image: &LabeledImage,
    noise: Option<&Panel>,
    p: f64,
    variant: Variant,
) -> Result<LabeledPanel, DatasetError> {
    let padded = pad_bezel(&image.pixels)?;
    let panel = match variant {
        Variant::A => padded,
        Variant::B | Variant::C => {
            check_fraction(p)?;
            let noise = noise.expect("variants B and C require a noise panel");
            let mut out = Vec::with_capacity(padded.pixels().len());
            for (idx, (&clean, &n)) in padded.pixels().iter().zip(noise.pixels()).enumerate() {
                if !(-0.5..=0.5).contains(&n) {
                    return Err(DatasetError::NoiseOutOfRange { value: n });
                }
                let row = idx / PANEL_SIDE;
                let col = idx % PANEL_SIDE;
                let masked = variant == Variant::B && is_bezel(row, col);
                let rescaled = p / 2.0 + (1.0 - p) * clean;
                let v = if masked { rescaled } else { rescaled + p * n };
                assert!(
                    (-CLAMP_EPS..=1.0 + CLAMP_EPS).contains(&v),
                    "composed pixel {v} escaped [0,1]: pipeline bug"
                );
                out.push(v.clamp(0.0, 1.0));
            }
            Panel::from_pixels(out)
        }
        Variant::CDenoised => panic!("denoised panels come from the oracle, not composition"),
    };
    Ok(LabeledPanel {
        panel,
        label: image.label,
        variant,
        noise_fraction: p,
    })
}

/// Shuffle the training-pool indices under the split seed. Training takes
/// the head of the order, validation the tail.
pub fn split_indices(pool_len: usize, split_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool_len).collect();
    let mut rng = stream(split_seed, StreamDomain::Split, 0);
    // Fisher-Yates with a bounded draw per step.
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Build a full A/B/C dataset with the paper split (50k/10k/10k).
///
/// Noise panel `i` pairs with pooled example `i`; test example `k` pairs
/// with panel `pool.len() + k`. Variant A ignores the noise entirely.
pub fn build_dataset(
    pool: &[LabeledImage],
    test: &[LabeledImage],
    noise: &[Panel],
    p: f64,
    variant: Variant,
    split_seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    build_dataset_with_val(pool, test, noise, p, variant, split_seed, VAL_COUNT)
}

/// `build_dataset` with an explicit validation-set size, for reduced-scale
/// runs. `val_count = VAL_COUNT` reproduces the paper split.
pub fn build_dataset_with_val(
    pool: &[LabeledImage],
    test: &[LabeledImage],
    noise: &[Panel],
    p: f64,
    variant: Variant,
    split_seed: u64,
    val_count: usize,
) -> Result<DatasetSplit, DatasetError> {
    if variant != Variant::A {
        let need = pool.len() + test.len();
        if noise.len() < need {
            return Err(DatasetError::InsufficientNoisePanels {
                have: noise.len(),
                need,
            });
        }
    }
    if val_count >= pool.len() {
        return Err(DatasetError::PoolTooSmall { pool: pool.len() });
    }

    let order = split_indices(pool.len(), split_seed);
    let train_count = pool.len() - val_count;

    let compose_pool = |&example: &usize| -> Result<LabeledPanel, DatasetError> {
        let n = (variant != Variant::A).then(|| &noise[example]);
        compose_panel(&pool[example], n, p, variant)
    };
    let train = order[..train_count]
        .par_iter()
        .map(compose_pool)
        .collect::<Result<Vec<_>, _>>()?;
    let val = order[train_count..]
        .par_iter()
        .map(compose_pool)
        .collect::<Result<Vec<_>, _>>()?;
    let test = test
        .par_iter()
        .enumerate()
        .map(|(k, image)| {
            let n = (variant != Variant::A).then(|| &noise[pool.len() + k]);
            compose_panel(image, n, p, variant)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(DatasetSplit { train, val, test })
}

/// Noise-to-signal ratio p/(1-p); a reporting convention only, never used
/// in data generation.
pub fn nsr(p: f64) -> Result<f64, DatasetError> {
    check_fraction(p)?;
    Ok(p / (1.0 - p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_of(value: f32, label: u8) -> LabeledImage {
        LabeledImage {
            pixels: vec![value; IMAGE_PIXELS],
            label,
        }
    }

    #[test]
    fn rescale_hits_documented_endpoints() {
        // 50% noise: [0,1] -> [0.25, 0.75]; 70% noise: [0.35, 0.65]. Exact.
        assert_eq!(rescale_value(0.0, 0.5).unwrap(), 0.25);
        assert_eq!(rescale_value(1.0, 0.5).unwrap(), 0.75);
        assert_eq!(rescale_value(0.0, 0.7).unwrap(), 0.35);
        assert_eq!(rescale_value(1.0, 0.7).unwrap(), 0.65);
        for v in [0.0, 0.3, 1.0] {
            assert_eq!(rescale_value(v, 0.0).unwrap(), v);
        }
        assert!(rescale_value(0.5, 1.0).is_err());
        assert!(rescale_value(0.5, -0.1).is_err());
    }

    #[test]
    fn rescale_is_invertible_below_one() {
        for p in [0.3, 0.5, 0.7, 0.85, 0.95] {
            for v in [0.0, 0.123456, 0.5, 0.999, 1.0] {
                let w = unrescale_value(rescale_value(v, p).unwrap(), p).unwrap();
                assert!((w - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pad_bezel_counts_and_offsets() {
        let ones = pad_bezel(&vec![1.0f32; IMAGE_PIXELS]).unwrap();
        let ones_count = ones.pixels().iter().filter(|&&v| v == 1.0).count();
        let zero_count = ones.pixels().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(ones_count, 784);
        assert_eq!(zero_count, 816);

        let zeros = pad_bezel(&vec![0.0f32; IMAGE_PIXELS]).unwrap();
        assert!(zeros.pixels().iter().all(|&v| v == 0.0));

        // Image corner (1,1) lands at panel (7,7) in 1-indexed coordinates.
        let mut img = vec![0.0f32; IMAGE_PIXELS];
        img[0] = 0.5;
        let p = pad_bezel(&img).unwrap();
        assert_eq!(p.get(6, 6), 0.5);

        assert!(matches!(
            pad_bezel(&[0.0; 10]),
            Err(DatasetError::WrongImageShape { len: 10 })
        ));
    }

    #[test]
    fn compose_variant_arithmetic() {
        let image = image_of(0.0, 1);
        let mut noise = Panel::zeros();
        for v in noise.pixels_mut() {
            *v = 0.5;
        }
        // Variant C at p = 0.5: clean bezel pixel 0 -> 0.25 + 0.25 = 0.5.
        let c = compose_panel(&image, Some(&noise), 0.5, Variant::C).unwrap();
        assert_eq!(c.panel.get(0, 0), 0.5);
        // Variant B: bezel pixels stay exactly p/2.
        let b = compose_panel(&image, Some(&noise), 0.5, Variant::B).unwrap();
        assert_eq!(b.panel.get(0, 0), 0.25);
        assert_eq!(b.panel.get(39, 39), 0.25);
        // Variant A passes the original [0,1] image through with black bezel.
        let a = compose_panel(&image_of(1.0, 1), None, 0.0, Variant::A).unwrap();
        assert_eq!(a.panel.get(0, 0), 0.0);
        assert_eq!(a.panel.get(20, 20), 1.0);
    }

    #[test]
    fn compose_rejects_bad_inputs() {
        let image = image_of(0.5, 0);
        let mut noise = Panel::zeros();
        noise.set(0, 0, 0.7);
        assert!(matches!(
            compose_panel(&image, Some(&noise), 0.5, Variant::C),
            Err(DatasetError::NoiseOutOfRange { .. })
        ));
        let ok_noise = Panel::zeros();
        assert!(matches!(
            compose_panel(&image, Some(&ok_noise), 1.0, Variant::C),
            Err(DatasetError::InvalidNoiseFraction { .. })
        ));
    }

    #[test]
    fn variant_b_bezel_is_exactly_half_p() {
        let image = image_of(0.37, 2);
        let mut noise = Panel::zeros();
        for (i, v) in noise.pixels_mut().iter_mut().enumerate() {
            *v = ((i % 11) as f64 - 5.0) / 10.0;
        }
        for p in [0.3, 0.7, 0.9] {
            let b = compose_panel(&image, Some(&noise), p, Variant::B).unwrap();
            for r in 0..PANEL_SIDE {
                for c in 0..PANEL_SIDE {
                    if is_bezel(r, c) {
                        assert_eq!(b.panel.get(r, c), p / 2.0);
                    }
                }
            }
        }
    }

    #[test]
    fn variant_c_bezel_inverts_exactly() {
        let image = image_of(0.0, 3);
        let mut noise = Panel::zeros();
        for (i, v) in noise.pixels_mut().iter_mut().enumerate() {
            *v = ((i % 101) as f64 - 50.0) / 100.0;
        }
        let p = 0.85;
        let c = compose_panel(&image, Some(&noise), p, Variant::C).unwrap();
        for r in 0..PANEL_SIDE {
            for col in 0..PANEL_SIDE {
                if is_bezel(r, col) {
                    let recovered = (c.panel.get(r, col) - p / 2.0) / p;
                    assert!((recovered - noise.get(r, col)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn composed_pixels_stay_in_unit_interval() {
        use rand::Rng;
        let mut rng = stream(33, StreamDomain::Probe, 0);
        for &p in &[0.3, 0.5, 0.7, 0.85, 0.95] {
            for _ in 0..20 {
                let image = LabeledImage {
                    pixels: (0..IMAGE_PIXELS).map(|_| rng.gen_range(0.0..=1.0)).collect(),
                    label: 0,
                };
                let mut noise = Panel::zeros();
                for v in noise.pixels_mut() {
                    *v = rng.gen_range(-0.5..=0.5);
                }
                for variant in [Variant::B, Variant::C] {
                    let done = compose_panel(&image, Some(&noise), p, variant).unwrap();
                    for &v in done.panel.pixels() {
                        assert!((0.0..=1.0).contains(&v));
                    }
                }
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let a = split_indices(1000, 5);
        let b = split_indices(1000, 5);
        let c = split_indices(1000, 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn toy_dataset_builds_and_ignores_noise_for_a() {
        let pool: Vec<LabeledImage> = (0..60).map(|i| image_of(0.1, (i % 10) as u8)).collect();
        let test: Vec<LabeledImage> = (0..10).map(|i| image_of(0.2, (i % 10) as u8)).collect();
        let noise1: Vec<Panel> = (0..70).map(|_| Panel::zeros()).collect();
        let noise2: Vec<Panel> = (0..70)
            .map(|_| {
                let mut p = Panel::zeros();
                p.set(0, 0, 0.25);
                p
            })
            .collect();
        let a1 = build_dataset_with_val(&pool, &test, &noise1, 0.0, Variant::A, 9, 10).unwrap();
        let a2 = build_dataset_with_val(&pool, &test, &noise2, 0.0, Variant::A, 9, 10).unwrap();
        assert_eq!(a1.train.len(), 50);
        assert_eq!(a1.val.len(), 10);
        assert_eq!(a1.test.len(), 10);
        for (x, y) in a1.train.iter().zip(&a2.train) {
            assert_eq!(x.panel, y.panel);
        }

        // B requires enough noise panels.
        assert!(matches!(
            build_dataset_with_val(&pool, &test, &noise1[..50], 0.5, Variant::B, 9, 10),
            Err(DatasetError::InsufficientNoisePanels { have: 50, need: 70 })
        ));

        // Same inputs build identical datasets.
        let b1 = build_dataset_with_val(&pool, &test, &noise2, 0.5, Variant::B, 9, 10).unwrap();
        let b2 = build_dataset_with_val(&pool, &test, &noise2, 0.5, Variant::B, 9, 10).unwrap();
        for (x, y) in b1.train.iter().zip(&b2.train) {
            assert_eq!(x.panel, y.panel);
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn nsr_reporting_convention() {
        assert_eq!(nsr(0.5).unwrap(), 1.0);
        assert!((nsr(0.95).unwrap() - 19.0).abs() < 1e-12);
        assert_eq!(nsr(0.0).unwrap(), 0.0);
        assert!(nsr(1.0).is_err());
    }
}
