//! Joint-color structure tensor analysis: per-pixel 2x2 second-moment
//! matrices accumulated over all color channels, eigen features
//! (orientation, strength, coherence) and their quantization into the
//! bucket index that selects a filter from the bank.

use crate::imagecore::{gradient, reflect101, RgbImage};
use crate::{Error, Result};

const DEGENERATE_EPS: f64 = 1e-12;
/// Relative floor below which lambda_2 is numerically indistinguishable
/// from 0 (a few hundred ulps of lambda_1).
const RANK_ONE_REL_EPS: f64 = 1e-13;

/// Symmetric 2x2 second-moment matrix of spatially weighted gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct StructureTensor {
    pub txx: f64,
    pub txy: f64,
    pub tyy: f64,
}

/// Eigen features of a structure tensor.
///
/// `orientation` is the dominant-eigenvector angle reduced to `[0, pi)`
/// (the tensor is axial, so the sign of the eigenvector carries no
/// information). `strength` is `sqrt(lambda_1)`, `coherence` is
/// `(sqrt(l1) - sqrt(l2)) / (sqrt(l1) + sqrt(l2))`.
#[derive(Debug, Clone, Copy)]
pub struct TensorFeatures {
    pub orientation: f64,
    pub strength: f64,
    pub coherence: f64,
}

/// Quantization grid for the three tensor features.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerConfig {
    pub orientation_bins: usize,
    pub strength_bins: usize,
    pub coherence_bins: usize,
    /// Ascending boundaries, length `strength_bins - 1`.
    pub strength_edges: Vec<f64>,
    /// Ascending boundaries, length `coherence_bins - 1`.
    pub coherence_edges: Vec<f64>,
}

impl QuantizerConfig {
    pub fn bucket_count(&self) -> usize {
        self.orientation_bins * self.strength_bins * self.coherence_bins
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.orientation_bins >= 1
            && self.strength_bins >= 1
            && self.coherence_bins >= 1
            && self.strength_edges.len() == self.strength_bins - 1
            && self.coherence_edges.len() == self.coherence_bins - 1
            && self.strength_edges.windows(2).all(|w| w[0] < w[1])
            && self.coherence_edges.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(Error::BadConfig("invalid quantizer bins/edges".into()))
        }
    }
}

impl Default for QuantizerConfig {
    /// 16 orientation, 6 strength and 3 coherence bins (288 buckets), with
    /// finer strength resolution at low gradient magnitudes.
    fn default() -> Self {
        Self {
            orientation_bins: 16,
            strength_bins: 6,
            coherence_bins: 3,
            strength_edges: vec![0.02, 0.05, 0.1, 0.2, 0.4],
            coherence_edges: vec![1.0 / 3.0, 2.0 / 3.0],
        }
    }
}

/// Flat filter-bank index combining the three quantized features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketIndex(pub usize);

/// Per-pixel tensors over a whole image.
#[derive(Debug, Clone)]
pub struct TensorField {
    pub width: usize,
    pub height: usize,
    pub tensors: Vec<StructureTensor>,
}

impl TensorField {
    pub fn get(&self, x: usize, y: usize) -> StructureTensor {
        self.tensors[y * self.width + x]
    }

    pub fn features(&self) -> Vec<TensorFeatures> {
        self.tensors.iter().map(|t| eigen_features(*t)).collect()
    }
}

/// Spatially weighted joint-color structure tensor at every pixel.
///
/// Per pixel `i`: `T_i = sum_c sum_{j in window(i)} w_j g_j^c (g_j^c)^T`
/// with Gaussian weights normalized to sum 1 and per-channel Sobel
/// gradients. The Gaussian window is separable, so the accumulation runs
/// as two 1-D passes over the per-channel gradient product planes.
pub fn tensor_field(img: &RgbImage, window: usize, weight_sigma: f64) -> Result<TensorField> {
    assert!(window >= 3 && window % 2 == 1, "window must be odd >= 3");
    assert!(weight_sigma > 0.0);
    let (w, h) = (img.width(), img.height());

    // gradient product planes summed over channels
    let mut pxx = vec![0.0; w * h];
    let mut pxy = vec![0.0; w * h];
    let mut pyy = vec![0.0; w * h];
    for c in 0..3 {
        let g = gradient(&img.channel_as_gray(c))?;
        for i in 0..w * h {
            pxx[i] += g.gx[i] * g.gx[i];
            pxy[i] += g.gx[i] * g.gy[i];
            pyy[i] += g.gy[i] * g.gy[i];
        }
    }

    let radius = (window / 2) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * weight_sigma * weight_sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let smooth = |plane: &[f64]| -> Vec<f64> {
        let mut horiz = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, coeff) in kernel.iter().enumerate() {
                    let xi = reflect101(x as isize + k as isize - radius, w);
                    acc += coeff * plane[y * w + xi];
                }
                horiz[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, coeff) in kernel.iter().enumerate() {
                    let yi = reflect101(y as isize + k as isize - radius, h);
                    acc += coeff * horiz[yi * w + x];
                }
                out[y * w + x] = acc;
            }
        }
        out
    };

    let sxx = smooth(&pxx);
    let sxy = smooth(&pxy);
    let syy = smooth(&pyy);
    let tensors = (0..w * h)
        .map(|i| StructureTensor { txx: sxx[i], txy: sxy[i], tyy: syy[i] })
        .collect();
    Ok(TensorField { width: w, height: h, tensors })
}

/// Closed-form eigen analysis of a symmetric 2x2 tensor.
///
/// Degenerate tensors (zero or isotropic) get orientation 0 and coherence 0
/// so downstream code never sees NaN.
pub fn eigen_features(t: StructureTensor) -> TensorFeatures {
    let mean = 0.5 * (t.txx + t.tyy);
    let half_diff = 0.5 * (t.txx - t.tyy);
    let r = (half_diff * half_diff + t.txy * t.txy).sqrt();
    let l1 = (mean + r).max(0.0);
    let mut l2 = (mean - r).max(0.0);
    // `mean - r` cancels catastrophically for (near-)rank-1 tensors,
    // leaving lambda_2 at roundoff scale instead of 0; below the noise
    // floor of lambda_1 it carries no information, so snap it to 0
    if l2 < l1 * RANK_ONE_REL_EPS {
        l2 = 0.0;
    }
    let s1 = l1.sqrt();
    let s2 = l2.sqrt();

    let coherence = if s1 + s2 < DEGENERATE_EPS { 0.0 } else { (s1 - s2) / (s1 + s2) };

    let orientation = if r < DEGENERATE_EPS || l1 < DEGENERATE_EPS {
        0.0
    } else {
        // dominant eigenvector of [[txx, txy], [txy, tyy]] for eigenvalue l1
        let (vx, vy) = if t.txy.abs() > DEGENERATE_EPS {
            (l1 - t.tyy, t.txy)
        } else if t.txx >= t.tyy {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let mut a = vy.atan2(vx).rem_euclid(std::f64::consts::PI);
        if a >= std::f64::consts::PI {
            a = 0.0;
        }
        a
    };

    TensorFeatures { orientation, strength: s1, coherence }
}

/// Maps features to the flat bucket index:
/// `((orient_bin * strength_bins) + strength_bin) * coherence_bins + coherence_bin`.
pub fn quantize(f: &TensorFeatures, q: &QuantizerConfig) -> BucketIndex {
    let ob = ((f.orientation / std::f64::consts::PI * q.orientation_bins as f64).floor() as usize)
        .min(q.orientation_bins - 1);
    let sb = q.strength_edges.partition_point(|&e| e <= f.strength);
    let cb = q.coherence_edges.partition_point(|&e| e <= f.coherence);
    BucketIndex((ob * q.strength_bins + sb) * q.coherence_bins + cb)
}
