//! The 40x40 panel: a 28x28 image region surrounded by a 6-pixel bezel.

/// Panel side length in pixels.
pub const PANEL_SIDE: usize = 40;
/// Pixels per panel.
pub const PANEL_PIXELS: usize = PANEL_SIDE * PANEL_SIDE;
/// Image side length in pixels.
pub const IMAGE_SIDE: usize = 28;
/// Pixels per image.
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Bezel width on each side of the image.
pub const BEZEL_WIDTH: usize = 6;
/// Number of bezel pixels: 40^2 - 28^2.
pub const BEZEL_PIXELS: usize = PANEL_PIXELS - IMAGE_PIXELS;

/// A 40x40 grid of real-valued pixels, row-major.
///
/// Pixels are stored and processed in `f64`; the on-disk cache format
/// quantizes to little-endian `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pixels: Vec<f64>,
}

impl Panel {
    pub fn zeros() -> Self {
        Panel {
            pixels: vec![0.0; PANEL_PIXELS],
        }
    }

    /// Wrap a row-major pixel buffer. Panics if the length is not 1600.
    pub fn from_pixels(pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), PANEL_PIXELS, "panel must hold 40x40 pixels");
        Panel { pixels }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    /// Pixel at 0-indexed (row, col).
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * PANEL_SIDE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * PANEL_SIDE + col] = value;
    }

    pub fn min(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.pixels
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Whether 0-indexed (row, col) lies in the bezel (outside the centered
/// 28x28 window).
pub fn is_bezel(row: usize, col: usize) -> bool {
    let window = BEZEL_WIDTH..BEZEL_WIDTH + IMAGE_SIDE;
    !window.contains(&row) || !window.contains(&col)
}

/// Flat indices of the bezel pixels in fixed raster (row-major) order.
pub fn bezel_indices() -> Vec<usize> {
    let mut idx = Vec::with_capacity(BEZEL_PIXELS);
    for row in 0..PANEL_SIDE {
        for col in 0..PANEL_SIDE {
            if is_bezel(row, col) {
                idx.push(row * PANEL_SIDE + col);
            }
        }
    }
    idx
}

/// Flat indices of the image-window pixels in raster order.
pub fn image_indices() -> Vec<usize> {
    let mut idx = Vec::with_capacity(IMAGE_PIXELS);
    for row in 0..PANEL_SIDE {
        for col in 0..PANEL_SIDE {
            if !is_bezel(row, col) {
                idx.push(row * PANEL_SIDE + col);
            }
        }
    }
    idx
}
