//! Image containers and the low-level pixel operations shared by every
//! pipeline stage: grayscale conversion, Sobel gradients, patch extraction
//! and range normalization.
//!
//! All intensities live in `[0, 1]`. Border handling is reflect-101
//! everywhere (mirror without repeating the border pixel), so gradients,
//! patches and tensor windows all see the same extension of the image.

use std::path::Path;

use crate::{Error, Result};

/// Reflect-101 index: mirrors out-of-range coordinates back into `[0, len)`
/// without duplicating the border sample.
pub fn reflect101(idx: isize, len: usize) -> usize {
    debug_assert!(len >= 2);
    let n = len as isize;
    let mut i = idx;
    // at most a few bounces for any realistic kernel radius
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

/// Dense RGB image, three planes of intensity in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct RgbImage {
    width: usize,
    height: usize,
    channels: [Vec<f64>; 3],
}

impl RgbImage {
    pub fn new(width: usize, height: usize, channels: [Vec<f64>; 3]) -> Self {
        assert!(width >= 1 && height >= 1);
        for plane in &channels {
            assert_eq!(plane.len(), width * height);
            debug_assert!(plane.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
        Self { width, height, channels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.channels[c][y * self.width + x]
    }

    /// One channel viewed as a grayscale plane (used by the joint-color
    /// structure tensor, which differentiates each channel separately).
    pub fn channel_as_gray(&self, c: usize) -> GrayImage {
        GrayImage::new(self.width, self.height, self.channels[c].clone())
    }

    /// Loads an 8-bit PNG or PPM image; intensities are divided by 255.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut channels = [
            Vec::with_capacity(w * h),
            Vec::with_capacity(w * h),
            Vec::with_capacity(w * h),
        ];
        for px in img.pixels() {
            for c in 0..3 {
                channels[c].push(px.0[c] as f64 / 255.0);
            }
        }
        Ok(Self::new(w, h, channels))
    }

    /// Writes the image as 8-bit PNG (round-half-up quantization).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = [
                    (self.get(0, x, y) * 255.0).round() as u8,
                    (self.get(1, x, y) * 255.0).round() as u8,
                    (self.get(2, x, y) * 255.0).round() as u8,
                ];
                out.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        out.save(path)?;
        Ok(())
    }
}

/// Single-plane image, intensities in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert!(width >= 1 && height >= 1);
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sample with reflect-101 extension for out-of-range coordinates.
    pub fn get_reflect(&self, x: isize, y: isize) -> f64 {
        let xi = reflect101(x, self.width);
        let yi = reflect101(y, self.height);
        self.data[yi * self.width + xi]
    }
}

/// Per-pixel partial derivatives and gradient magnitude.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

/// Odd-sided square window of intensities read row-major around a pixel.
#[derive(Debug, Clone)]
pub struct Patch {
    pub side: usize,
    pub values: Vec<f64>,
}

impl Patch {
    pub fn center(&self) -> f64 {
        self.values[(self.side * self.side - 1) / 2]
    }
}

/// BT.601 luminance: `0.299 R + 0.587 G + 0.114 B`, clamped to `[0, 1]`.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = (0..img.height * img.width)
        .map(|i| {
            let v = 0.299 * img.channels[0][i] + 0.587 * img.channels[1][i] + 0.114 * img.channels[2][i];
            v.clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::new(img.width, img.height, data)
}

/// 3x3 Sobel gradients with reflect-101 borders.
pub fn gradient(img: &GrayImage) -> Result<GradientField> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::ImageTooSmall { width: img.width, height: img.height, min: 3 });
    }
    let (w, h) = (img.width, img.height);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let s = |dx: isize, dy: isize| img.get_reflect(x as isize + dx, y as isize + dy);
            gx[y * w + x] = (s(1, -1) + 2.0 * s(1, 0) + s(1, 1)) - (s(-1, -1) + 2.0 * s(-1, 0) + s(-1, 1));
            gy[y * w + x] = (s(-1, 1) + 2.0 * s(0, 1) + s(1, 1)) - (s(-1, -1) + 2.0 * s(0, -1) + s(1, -1));
        }
    }
    let magnitude = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    Ok(GradientField { width: w, height: h, gx, gy, magnitude })
}

/// Extracts the `side`x`side` window centered at `(cx, cy)`, reflect-101
/// at the image borders.
pub fn extract_patch(img: &GrayImage, cx: usize, cy: usize, side: usize) -> Result<Patch> {
    if side.is_multiple_of(2) || side < 3 {
        return Err(Error::BadPatchSize(side));
    }
    let r = (side / 2) as isize;
    let mut values = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            values.push(img.get_reflect(cx as isize + dx, cy as isize + dy));
        }
    }
    Ok(Patch { side, values })
}

/// Min-max normalization to `[0, 1]`; a constant field maps to all zeros.
pub fn normalize01(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; values.len()]);
    }
    let range = max - min;
    Ok(values.iter().map(|v| (v - min) / range).collect())
}
