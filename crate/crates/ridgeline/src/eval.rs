//! Evaluation metrics, dataset ingestion and the synthetic dataset
//! generator used for desk-scale runs.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dp::SkylinePath;
use crate::imagecore::RgbImage;
use crate::{Error, Result};

/// One ground-truth skyline row per image column.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rows: Vec<usize>,
}

impl GroundTruth {
    /// Parses the annotation format: one line of comma-separated integer
    /// row indices, one per column.
    pub fn from_csv(path: &Path, width: usize, height: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let malformed = |reason: String| Error::MalformedGroundTruth {
            path: path.to_path_buf(),
            reason,
        };
        let rows: Vec<usize> = text
            .trim()
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|_| malformed(format!("bad row value {tok:?}")))
            })
            .collect::<Result<_>>()?;
        if rows.len() != width {
            return Err(malformed(format!("expected {} columns, found {}", width, rows.len())));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= height) {
            return Err(malformed(format!("row {bad} out of bounds for height {height}")));
        }
        Ok(Self { rows })
    }

    pub fn to_csv(&self) -> String {
        let cells: Vec<String> = self.rows.iter().map(|r| r.to_string()).collect();
        cells.join(",")
    }
}

/// Mean per-column absolute row distance in pixels.
pub fn average_absolute_error(pred: &SkylinePath, gt: &GroundTruth) -> Result<f64> {
    if pred.rows.len() != gt.rows.len() {
        return Err(Error::LengthMismatch { a: pred.rows.len(), b: gt.rows.len() });
    }
    if pred.rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = pred
        .rows
        .iter()
        .zip(&gt.rows)
        .map(|(&p, &g)| p.abs_diff(g) as f64)
        .sum();
    Ok(sum / pred.rows.len() as f64)
}

/// Fraction of pixels whose sky/non-sky label matches the ground truth.
/// Pixels strictly above the skyline row are sky; the skyline pixel itself
/// is non-sky. Per column the mislabeled pixels are exactly the rows
/// between the two boundaries, so this reduces to `1 - A_err / height`.
pub fn segmentation_accuracy(pred: &SkylinePath, gt: &GroundTruth, height: usize) -> Result<f64> {
    if let Some(&r) = pred.rows.iter().chain(&gt.rows).find(|&&r| r >= height) {
        return Err(Error::MalformedGroundTruth {
            path: PathBuf::new(),
            reason: format!("row {r} out of bounds for height {height}"),
        });
    }
    let a_err = average_absolute_error(pred, gt)?;
    Ok(1.0 - a_err / height as f64)
}

/// Aggregate statistics over per-image errors, Table-style: mean,
/// population standard deviation, min, max, and a normalized histogram.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub per_image: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Right-open bins of `bin_width` pixels with a final overflow bin;
    /// normalized to sum 1.
    pub histogram: Vec<f64>,
    pub bin_width: f64,
}

/// Default histogram geometry: 0.5-px bins with the overflow bin at 10 px.
pub const HIST_BIN_WIDTH: f64 = 0.5;
pub const HIST_OVERFLOW: f64 = 10.0;

pub fn aggregate(errors: &[f64], bin_width: f64) -> Result<EvalReport> {
    if errors.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let min = errors.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = errors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = (HIST_OVERFLOW / bin_width).round() as usize + 1;
    let mut histogram = vec![0.0; bins];
    for &e in errors {
        let idx = ((e / bin_width).floor() as usize).min(bins - 1);
        histogram[idx] += 1.0;
    }
    for b in &mut histogram {
        *b /= n;
    }
    Ok(EvalReport { per_image: errors.to_vec(), mean, std: var.sqrt(), min, max, histogram, bin_width })
}

/// One image paired with its ground truth.
pub struct DatasetEntry {
    pub stem: String,
    pub image: RgbImage,
    pub gt: GroundTruth,
}

/// Loaded dataset plus the stems skipped for lack of a ground-truth file.
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub skipped: Vec<String>,
}

/// Pairs images in `root` with same-stem `.csv` ground-truth files.
/// Images without a ground truth are skipped and reported; malformed
/// ground truth is an error naming the file.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::MissingDirectory(root.to_path_buf()));
    }
    let mut stems: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if matches!(ext.to_ascii_lowercase().as_str(), "png" | "ppm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push((stem.to_string(), path.clone()));
            }
        }
    }
    stems.sort();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (stem, img_path) in stems {
        let gt_path = img_path.with_extension("csv");
        if !gt_path.is_file() {
            skipped.push(stem);
            continue;
        }
        let image = RgbImage::load(&img_path)?;
        let gt = GroundTruth::from_csv(&gt_path, image.width(), image.height())?;
        entries.push(DatasetEntry { stem, image, gt });
    }
    Ok(Dataset { entries, skipped })
}

/// Knobs of the synthetic generator; defaults are tuned so the skyline is
/// a strong but not unique edge structure.
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub ridge_count: usize,
    /// Base luminance step across a terrain ridge boundary.
    pub ridge_contrast: f64,
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { ridge_count: 3, ridge_contrast: 0.085, noise: 0.015 }
    }
}

/// One synthetic image with a piecewise-linear skyline, a bright gradient
/// sky and darker textured terrain with distractor ridge edges below the
/// skyline. Deterministic for a given (seed, index).
pub fn synth_image(
    width: usize,
    height: usize,
    seed: u64,
    index: u64,
    params: &SynthParams,
) -> (RgbImage, GroundTruth) {
    assert!(width >= 32 && height >= 32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)));

    let skyline = piecewise_path(&mut rng, width, 0.25 * height as f64, 0.55 * height as f64, 6);

    // ridge paths at increasing depth below the skyline
    let mut ridges: Vec<Vec<f64>> = Vec::new();
    for k in 0..params.ridge_count {
        let wobble = piecewise_path(&mut rng, width, -10.0, 10.0, 5);
        let offset = 18.0 + 24.0 * k as f64 + rng.gen_range(0.0..10.0);
        // ridges flatten out relative to the skyline so a lazy shortest
        // path is tempted to follow them
        let flat = rng.gen_range(0.3..0.7);
        let mean_sky: f64 = skyline.iter().sum::<f64>() / width as f64;
        let ridge: Vec<f64> = (0..width)
            .map(|x| {
                let anchored = mean_sky + flat * (skyline[x] - mean_sky);
                (anchored + offset + wobble[x]).min(height as f64 - 2.0)
            })
            .collect();
        ridges.push(ridge);
    }

    let sky_top = 0.86;
    let sky_bottom = 0.68;
    let terrain_top = 0.34;

    let mut channels = [
        vec![0.0; width * height],
        vec![0.0; width * height],
        vec![0.0; width * height],
    ];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let n = rng.gen_range(-params.noise..params.noise);
            let sky_row = skyline[x];
            if (y as f64) < sky_row {
                let t = y as f64 / sky_row.max(1.0);
                let base = sky_top + (sky_bottom - sky_top) * t + n;
                channels[0][i] = (base * 0.90).clamp(0.0, 1.0);
                channels[1][i] = (base * 0.95).clamp(0.0, 1.0);
                channels[2][i] = base.clamp(0.0, 1.0);
            } else {
                let below = ridges.iter().filter(|r| (y as f64) >= r[x]).count();
                let base = terrain_top - params.ridge_contrast * below as f64 + n;
                channels[0][i] = (base * 1.05).clamp(0.0, 1.0);
                channels[1][i] = base.clamp(0.0, 1.0);
                channels[2][i] = (base * 0.92).clamp(0.0, 1.0);
            }
        }
    }
    let gt_rows = skyline
        .iter()
        .map(|&r| (r as usize).min(height - 1))
        .collect();
    (RgbImage::new(width, height, channels), GroundTruth { rows: gt_rows })
}

fn piecewise_path(rng: &mut ChaCha8Rng, width: usize, lo: f64, hi: f64, knots: usize) -> Vec<f64> {
    let knots = knots.max(2);
    let ys: Vec<f64> = (0..knots).map(|_| rng.gen_range(lo..hi)).collect();
    (0..width)
        .map(|x| {
            let t = x as f64 / (width - 1) as f64 * (knots - 1) as f64;
            let k = (t.floor() as usize).min(knots - 2);
            let frac = t - k as f64;
            ys[k] * (1.0 - frac) + ys[k + 1] * frac
        })
        .collect()
}

/// Writes `count` synthetic images plus ground-truth CSVs into `out_dir`.
/// Returns the stems written. Fully deterministic per seed.
pub fn synth_generate(
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir)?;
    let params = SynthParams::default();
    let mut stems = Vec::with_capacity(count);
    for i in 0..count {
        let (img, gt) = synth_image(width, height, seed, i as u64, &params);
        let stem = format!("synth_{i:04}");
        img.save_png(&out_dir.join(format!("{stem}.png")))?;
        std::fs::write(out_dir.join(format!("{stem}.csv")), gt.to_csv())?;
        stems.push(stem);
    }
    Ok(stems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edges::canny;
    use crate::imagecore::to_grayscale;
    use rand::Rng;

    fn path(rows: Vec<usize>) -> SkylinePath {
        SkylinePath { rows }
    }

    #[test]
    fn a_err_basics() {
        let gt = GroundTruth { rows: vec![3, 6, 5] };
        assert_eq!(average_absolute_error(&path(vec![3, 6, 5]), &gt).unwrap(), 0.0);
        assert!((average_absolute_error(&path(vec![3, 4, 5]), &gt).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // constant offset k gives exactly k
        let gt = GroundTruth { rows: vec![10, 12, 14, 11] };
        let pred = path(gt.rows.iter().map(|r| r + 3).collect());
        assert_eq!(average_absolute_error(&pred, &gt).unwrap(), 3.0);
    }

    #[test]
    fn a_err_rejects_length_mismatch() {
        let gt = GroundTruth { rows: vec![1, 2] };
        assert!(matches!(
            average_absolute_error(&path(vec![1]), &gt),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn segmentation_identities() {
        let gt = GroundTruth { rows: vec![4, 5, 6] };
        assert_eq!(segmentation_accuracy(&path(vec![4, 5, 6]), &gt, 10).unwrap(), 1.0);
        // offset by one mislabels one pixel per column
        let pred = path(vec![5, 6, 7]);
        assert!((segmentation_accuracy(&pred, &gt, 10).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn segmentation_matches_pixel_loop_oracle() {
        let mut rng = rand::thread_rng();
        let (height, cols) = (20usize, 15usize);
        for _ in 0..100 {
            let gt = GroundTruth { rows: (0..cols).map(|_| rng.gen_range(0..height)).collect() };
            let pred = path((0..cols).map(|_| rng.gen_range(0..height)).collect());
            let acc = segmentation_accuracy(&pred, &gt, height).unwrap();
            // oracle: label every pixel sky/non-sky for both paths
            let mut mismatch = 0usize;
            for c in 0..cols {
                for r in 0..height {
                    let sky_pred = r < pred.rows[c];
                    let sky_gt = r < gt.rows[c];
                    if sky_pred != sky_gt {
                        mismatch += 1;
                    }
                }
            }
            let a_err = average_absolute_error(&pred, &gt).unwrap();
            assert_eq!(mismatch as f64 / cols as f64, a_err, "mislabel count is the row distance");
            assert_eq!(acc, 1.0 - a_err / height as f64);
        }
    }

    #[test]
    fn aggregate_basics() {
        let r = aggregate(&[2.0], HIST_BIN_WIDTH).unwrap();
        assert_eq!((r.mean, r.std, r.min, r.max), (2.0, 0.0, 2.0, 2.0));
        let r = aggregate(&[1.0, 3.0], HIST_BIN_WIDTH).unwrap();
        assert_eq!((r.mean, r.std), (2.0, 1.0));
        assert!(matches!(aggregate(&[], HIST_BIN_WIDTH), Err(Error::EmptyInput)));
    }

    #[test]
    fn aggregate_matches_independent_recomputation() {
        let mut rng = rand::thread_rng();
        let errors: Vec<f64> = (0..36).map(|_| rng.gen_range(0.0..12.0)).collect();
        let r = aggregate(&errors, HIST_BIN_WIDTH).unwrap();
        // spreadsheet-style oracle
        let mean = errors.iter().sum::<f64>() / 36.0;
        let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 36.0).sqrt();
        assert!((r.mean - mean).abs() < 1e-12);
        assert!((r.std - std).abs() < 1e-12);
        assert!((r.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // overflow bin holds everything >= 10
        let over = errors.iter().filter(|&&e| e >= 10.0).count() as f64 / 36.0;
        assert!((r.histogram.last().unwrap() - over).abs() < 1e-12);
    }

    #[test]
    fn load_dataset_pairs_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(&dir.path().join("missing")).is_err());
        // empty dir
        let ds = load_dataset(dir.path()).unwrap();
        assert!(ds.entries.is_empty() && ds.skipped.is_empty());

        synth_generate(3, 32, 32, 1, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("synth_0002.csv")).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.entries.len(), 2);
        assert_eq!(ds.skipped, vec!["synth_0002".to_string()]);
    }

    #[test]
    fn load_dataset_rejects_out_of_bounds_gt() {
        let dir = tempfile::tempdir().unwrap();
        synth_generate(1, 32, 32, 2, dir.path()).unwrap();
        std::fs::write(dir.path().join("synth_0000.csv"), vec!["99"; 32].join(",")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::MalformedGroundTruth { path, .. }) => {
                assert!(path.ends_with("synth_0000.csv"));
            }
            other => panic!("expected MalformedGroundTruth, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn synth_deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth_generate(2, 48, 48, 7, a.path()).unwrap();
        synth_generate(2, 48, 48, 7, b.path()).unwrap();
        for stem in ["synth_0000", "synth_0001"] {
            for ext in ["png", "csv"] {
                let x = std::fs::read(a.path().join(format!("{stem}.{ext}"))).unwrap();
                let y = std::fs::read(b.path().join(format!("{stem}.{ext}"))).unwrap();
                assert_eq!(x, y, "{stem}.{ext} differs across runs");
            }
        }
    }

    #[test]
    fn synth_ground_truth_valid_and_edges_cover_skyline() {
        let params = SynthParams::default();
        let mut total = 0usize;
        let mut covered = 0usize;
        for i in 0..4 {
            let (img, gt) = synth_image(128, 128, 7, i, &params);
            assert_eq!(gt.rows.len(), 128);
            assert!(gt.rows.iter().all(|&r| r < 128));
            let gray = to_grayscale(&img);
            let edges = canny(&gray, 1.4, 0.1, 0.2).unwrap();
            for (x, &r) in gt.rows.iter().enumerate() {
                total += 1;
                // a skyline pixel counts as covered if an edge lies within
                // 1 row of it (NMS can shift the maximum by one pixel)
                let lo = r.saturating_sub(1);
                let hi = (r + 1).min(127);
                if (lo..=hi).any(|y| edges.get(x, y)) {
                    covered += 1;
                }
            }
        }
        let frac = covered as f64 / total as f64;
        assert!(frac >= 0.9, "canny covers only {frac:.3} of skyline pixels");
    }
}
