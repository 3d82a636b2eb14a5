//! Filter-bank learning and spatially varying inference.
//!
//! Training streams (patch, target) pairs into per-bucket Gram matrices and
//! solves one regularized least-squares system per bucket. Inference picks a
//! filter per edge pixel from its quantized structure-tensor features and
//! applies it as a dot product with the grayscale patch around the pixel.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{PipelineConfig, ScoreNormalization};
use crate::edges::{canny, EdgeMap};
use crate::imagecore::{extract_patch, normalize01, to_grayscale, GrayImage, Patch, RgbImage};
use crate::tensor::{eigen_features, quantize, tensor_field, BucketIndex, QuantizerConfig, TensorFeatures};
use crate::{Error, Result};

const BANK_MAGIC: &[u8; 4] = b"RDGL";
const BANK_VERSION: u16 = 1;

/// One training example: a grayscale patch, its binary target intensity and
/// the filter bucket it belongs to.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub patch: Patch,
    pub target: f64,
    pub bucket: BucketIndex,
}

/// Output of [`collect_samples`]; `negatives_taken < negatives_requested`
/// signals an exhausted negative pool (reported, not fatal).
#[derive(Debug)]
pub struct SampleSet {
    pub samples: Vec<TrainingSample>,
    pub positives: usize,
    pub negatives_requested: usize,
    pub negatives_taken: usize,
}

/// One positive sample per column along the ground-truth skyline plus an
/// equal number of seeded random negatives from edge pixels at least
/// `margin` rows away from the skyline in their column.
pub fn collect_samples(
    img: &RgbImage,
    gt_rows: &[usize],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<SampleSet> {
    assert_eq!(gt_rows.len(), img.width(), "ground truth must cover every column");
    let gray = to_grayscale(img);
    let edges = canny(&gray, cfg.canny.sigma, cfg.canny.low, cfg.canny.high)?;
    let field = tensor_field(img, cfg.tensor.window, cfg.tensor.weight_sigma)?;
    let q = &cfg.tensor.quantizer;
    let side = cfg.blade.side;

    let mut samples = Vec::new();
    for (col, &row) in gt_rows.iter().enumerate() {
        let f = eigen_features(field.get(col, row));
        samples.push(TrainingSample {
            patch: extract_patch(&gray, col, row, side)?,
            target: cfg.blade.positive_target,
            bucket: quantize(&f, q),
        });
    }
    let positives = samples.len();

    let mut pool = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if edges.get(x, y) && y.abs_diff(gt_rows[x]) > cfg.blade.margin {
                pool.push((x, y));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = positives.min(pool.len());
    let chosen = rand::seq::index::sample(&mut rng, pool.len(), take);
    for idx in chosen.iter() {
        let (x, y) = pool[idx];
        let f = eigen_features(field.get(x, y));
        samples.push(TrainingSample {
            patch: extract_patch(&gray, x, y, side)?,
            target: cfg.blade.negative_target,
            bucket: quantize(&f, q),
        });
    }

    Ok(SampleSet { samples, positives, negatives_requested: positives, negatives_taken: take })
}

/// Per-bucket `(n^2+1) x (n^2+1)` Gram matrices accumulated from augmented
/// sample vectors `(patch || target)`.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    side: usize,
    dim: usize,
    buckets: usize,
    grams: Vec<Vec<f64>>,
    counts: Vec<u64>,
}

impl GramAccumulator {
    pub fn new(side: usize, buckets: usize) -> Self {
        let dim = side * side + 1;
        Self {
            side,
            dim,
            buckets,
            grams: vec![vec![0.0; dim * dim]; buckets],
            counts: vec![0; buckets],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn count(&self, bucket: usize) -> u64 {
        self.counts[bucket]
    }

    pub fn gram(&self, bucket: usize) -> &[f64] {
        &self.grams[bucket]
    }

    /// Adds the outer product of `(patch || target)` into the sample's
    /// bucket.
    pub fn accumulate(&mut self, s: &TrainingSample) -> Result<()> {
        let taps = self.dim - 1;
        if s.patch.values.len() != taps {
            return Err(Error::DimensionMismatch { expected: taps, got: s.patch.values.len() });
        }
        let BucketIndex(b) = s.bucket;
        assert!(b < self.buckets, "bucket out of range");
        let g = &mut self.grams[b];
        let d = self.dim;
        let mut aug = Vec::with_capacity(d);
        aug.extend_from_slice(&s.patch.values);
        aug.push(s.target);
        for r in 0..d {
            let vr = aug[r];
            for c in 0..d {
                g[r * d + c] += vr * aug[c];
            }
        }
        self.counts[b] += 1;
        Ok(())
    }

    /// Element-wise sum of two accumulators with identical shape; enables
    /// sharded training.
    pub fn merge(mut self, other: &GramAccumulator) -> Result<GramAccumulator> {
        if self.side != other.side || self.buckets != other.buckets {
            return Err(Error::ConfigMismatch(format!(
                "side {}x{} vs {}x{}, {} vs {} buckets",
                self.side, self.side, other.side, other.side, self.buckets, other.buckets
            )));
        }
        for (mine, theirs) in self.grams.iter_mut().zip(&other.grams) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(self)
    }
}

/// Quadratic regularizer `Q = smoothness * count * L^T L + ridge * count * I`
/// over the filter taps, with `L` the 2-D discrete Laplacian on the tap
/// grid. Scaling by the bucket sample count keeps the effective
/// regularization strength sample-size invariant.
#[derive(Debug, Clone, Copy)]
pub struct Regularizer {
    pub smoothness: f64,
    pub ridge: f64,
}

impl Regularizer {
    /// Dense `n^2 x n^2` regularization matrix for a bucket with `count`
    /// samples.
    pub fn matrix(&self, side: usize, count: u64) -> Vec<f64> {
        let n = side * side;
        let lap = laplacian(side);
        let ls = self.smoothness * count as f64;
        let lr = self.ridge * count as f64;
        // L is symmetric, so L^T L = L * L
        let mut q = vec![0.0; n * n];
        if ls > 0.0 {
            for r in 0..n {
                for k in 0..n {
                    let v = lap[r * n + k];
                    if v == 0.0 {
                        continue;
                    }
                    for c in 0..n {
                        q[r * n + c] += ls * v * lap[k * n + c];
                    }
                }
            }
        }
        for i in 0..n {
            q[i * n + i] += lr;
        }
        q
    }
}

/// Graph Laplacian of the 4-neighborhood over an `side x side` tap grid.
fn laplacian(side: usize) -> Vec<f64> {
    let n = side * side;
    let mut l = vec![0.0; n * n];
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            let mut neighbors = 0.0;
            let mut link = |rr: isize, cc: isize, l: &mut Vec<f64>| {
                if rr >= 0 && cc >= 0 && rr < side as isize && cc < side as isize {
                    let j = rr as usize * side + cc as usize;
                    l[i * n + j] = -1.0;
                    neighbors += 1.0;
                }
            };
            link(r as isize - 1, c as isize, &mut l);
            link(r as isize + 1, c as isize, &mut l);
            link(r as isize, c as isize - 1, &mut l);
            link(r as isize, c as isize + 1, &mut l);
            l[i * n + i] = neighbors;
        }
    }
    l
}

/// Learned bank of `K` linear filters plus the quantizer that indexes them.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub side: usize,
    pub quantizer: QuantizerConfig,
    /// `K` filters of `side^2` coefficients in bucket order. Held in f64
    /// for solver fidelity; the file format stores f32, so loaded banks
    /// hold exact f32 promotions and re-save bit-identically.
    pub filters: Vec<Vec<f64>>,
    /// Whether each bucket had enough samples to be solved.
    pub trained_mask: Vec<bool>,
}

/// Solves the per-bucket regularized normal equations
/// `(Q + A^T A) h = A^T b` via Cholesky. Buckets with fewer than
/// `min_samples` samples get the fallback filter: the average of all
/// trained filters, or the center-tap delta if none trained.
pub fn solve_bank(
    acc: &GramAccumulator,
    reg: &Regularizer,
    min_samples: usize,
    quantizer: &QuantizerConfig,
) -> Result<FilterBank> {
    if quantizer.bucket_count() != acc.buckets {
        return Err(Error::ConfigMismatch(format!(
            "quantizer has {} buckets, accumulator {}",
            quantizer.bucket_count(),
            acc.buckets
        )));
    }
    assert!(reg.ridge > 0.0, "ridge weight must be positive for invertibility");
    let side = acc.side;
    let n = side * side;
    let d = acc.dim;

    let mut filters: Vec<Option<Vec<f64>>> = vec![None; acc.buckets];
    for b in 0..acc.buckets {
        if (acc.counts[b] as usize) < min_samples || acc.counts[b] == 0 {
            continue;
        }
        let g = &acc.grams[b];
        let mut system = reg.matrix(side, acc.counts[b]);
        for r in 0..n {
            for c in 0..n {
                system[r * n + c] += g[r * d + c];
            }
        }
        let rhs: Vec<f64> = (0..n).map(|r| g[r * d + n]).collect();
        let h = cholesky_solve(&mut system, &rhs, n).ok_or(Error::SolveFailure { bucket: b })?;
        filters[b] = Some(h);
    }

    let trained: Vec<&Vec<f64>> = filters.iter().flatten().collect();
    let fallback: Vec<f64> = if trained.is_empty() {
        let mut delta = vec![0.0; n];
        delta[(n - 1) / 2] = 1.0;
        delta
    } else {
        let mut avg = vec![0.0; n];
        for f in &trained {
            for (a, v) in avg.iter_mut().zip(f.iter()) {
                *a += v;
            }
        }
        for a in &mut avg {
            *a /= trained.len() as f64;
        }
        avg
    };

    let trained_mask: Vec<bool> = filters.iter().map(|f| f.is_some()).collect();
    let filters = filters
        .into_iter()
        .map(|f| f.unwrap_or_else(|| fallback.clone()))
        .collect();
    Ok(FilterBank { side, quantizer: quantizer.clone(), filters, trained_mask })
}

/// Cholesky factorization and solve for a dense symmetric positive-definite
/// system; returns `None` if a pivot is not strictly positive.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    // in-place lower factor
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let diag = diag.sqrt();
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / diag;
        }
    }
    // forward then backward substitution
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * n + k] * y[k];
        }
        y[i] = v / a[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in i + 1..n {
            v -= a[k * n + i] * x[k];
        }
        x[i] = v / a[i * n + i];
    }
    Some(x)
}

/// Per-pixel confidence scores; present only at edge pixels.
#[derive(Debug, Clone)]
pub struct ScoreMap {
    pub width: usize,
    pub height: usize,
    pub scores: Vec<Option<f64>>,
}

impl ScoreMap {
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.scores[y * self.width + x]
    }
}

/// Applies the bank at every edge pixel: select the filter from the pixel's
/// quantized tensor features, dot it with the grayscale patch, then map the
/// raw response into `[0, 1]` per the normalization mode.
pub fn predict(
    bank: &FilterBank,
    gray: &GrayImage,
    features: &[TensorFeatures],
    edges: &EdgeMap,
    mode: ScoreNormalization,
) -> Result<ScoreMap> {
    let (w, h) = (gray.width(), gray.height());
    assert_eq!(features.len(), w * h);
    assert_eq!(edges.width, w);
    assert_eq!(edges.height, h);

    let mut raw = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            if !edges.get(x, y) {
                continue;
            }
            let BucketIndex(b) = quantize(&features[y * w + x], &bank.quantizer);
            let filter = &bank.filters[b];
            let patch = extract_patch(gray, x, y, bank.side)?;
            let score: f64 = patch
                .values
                .iter()
                .zip(filter.iter())
                .map(|(p, f)| p * f)
                .sum();
            raw[y * w + x] = Some(score);
        }
    }

    match mode {
        ScoreNormalization::Clamp => {
            for s in raw.iter_mut().flatten() {
                *s = s.clamp(0.0, 1.0);
            }
        }
        ScoreNormalization::MinMax => {
            let present: Vec<f64> = raw.iter().flatten().cloned().collect();
            if !present.is_empty() {
                let normed = normalize01(&present)?;
                let mut it = normed.into_iter();
                for s in raw.iter_mut().flatten() {
                    *s = it.next().unwrap();
                }
            }
        }
    }
    Ok(ScoreMap { width: w, height: h, scores: raw })
}

impl FilterBank {
    pub fn bucket_count(&self) -> usize {
        self.quantizer.bucket_count()
    }

    /// Serializes the bank in the little-endian binary format:
    /// magic `RDGL`, version, side, the three bin counts, each edge list
    /// prefixed by its u16 length, `K * n^2` f32 coefficients in bucket
    /// order, then `K` trained-mask bytes.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(BANK_MAGIC)?;
        w.write_all(&BANK_VERSION.to_le_bytes())?;
        w.write_all(&(self.side as u16).to_le_bytes())?;
        let q = &self.quantizer;
        w.write_all(&(q.orientation_bins as u16).to_le_bytes())?;
        w.write_all(&(q.strength_bins as u16).to_le_bytes())?;
        w.write_all(&(q.coherence_bins as u16).to_le_bytes())?;
        for edges in [&q.strength_edges, &q.coherence_edges] {
            w.write_all(&(edges.len() as u16).to_le_bytes())?;
            for &e in edges.iter() {
                w.write_all(&(e as f32).to_le_bytes())?;
            }
        }
        for filter in &self.filters {
            for &c in filter {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
        let mask: Vec<u8> = self.trained_mask.iter().map(|&b| b as u8).collect();
        w.write_all(&mask)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
            let mut buf = [0u8; 2];
            r.read_exact(&mut buf)?;
            Ok(u16::from_le_bytes(buf))
        }
        fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            Ok(f32::from_le_bytes(buf))
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BANK_MAGIC {
            return Err(Error::BankFormat("bad magic".into()));
        }
        let version = read_u16(r)?;
        if version != BANK_VERSION {
            return Err(Error::BankVersionMismatch(version));
        }
        let side = read_u16(r)? as usize;
        if side < 3 || side.is_multiple_of(2) {
            return Err(Error::BankFormat(format!("bad filter side {side}")));
        }
        let orientation_bins = read_u16(r)? as usize;
        let strength_bins = read_u16(r)? as usize;
        let coherence_bins = read_u16(r)? as usize;
        let mut edge_lists = Vec::new();
        for _ in 0..2 {
            let len = read_u16(r)? as usize;
            let mut edges = Vec::with_capacity(len);
            for _ in 0..len {
                edges.push(read_f32(r)? as f64);
            }
            edge_lists.push(edges);
        }
        let quantizer = QuantizerConfig {
            orientation_bins,
            strength_bins,
            coherence_bins,
            strength_edges: edge_lists.remove(0),
            coherence_edges: edge_lists.remove(0),
        };
        quantizer
            .validate()
            .map_err(|_| Error::BankFormat("inconsistent quantizer".into()))?;
        let k = quantizer.bucket_count();
        let taps = side * side;
        let mut filters = Vec::with_capacity(k);
        for _ in 0..k {
            let mut f = Vec::with_capacity(taps);
            for _ in 0..taps {
                let c = read_f32(r)?;
                if !c.is_finite() {
                    return Err(Error::BankFormat("non-finite coefficient".into()));
                }
                f.push(c as f64);
            }
            filters.push(f);
        }
        let mut mask = vec![0u8; k];
        r.read_exact(&mut mask)?;
        let trained_mask = mask.iter().map(|&b| b != 0).collect();
        Ok(Self { side, quantizer, filters, trained_mask })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
