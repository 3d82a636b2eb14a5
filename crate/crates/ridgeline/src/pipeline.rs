//! End-to-end orchestration: training over a dataset (sharded Gram
//! accumulation), detection with the proposed fused cost, and the two
//! non-learning baselines.

use std::path::Path;
use std::time::Instant;

use crate::blade::{collect_samples, predict, solve_bank, FilterBank, GramAccumulator, Regularizer};
use crate::config::PipelineConfig;
use crate::dp::{cost_edges_only, cost_gradient, cost_proposed, gap_fill, gap_flags, shortest_path, CostGrid, DpParams, SkylinePath};
use crate::edges::canny;
use crate::eval::DatasetEntry;
use crate::imagecore::{normalize01, to_grayscale, RgbImage};
use crate::tensor::tensor_field;
use crate::{Error, Result};

/// Per-stage wall time in milliseconds.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub edges_ms: f64,
    pub tensor_ms: f64,
    pub predict_ms: f64,
    pub dp_ms: f64,
    /// Wall clock of the whole detection body.
    pub total_ms: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.edges_ms + self.tensor_ms + self.predict_ms + self.dp_ms
    }
}

#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub path: SkylinePath,
    /// Nodal cost of the chosen node in each column.
    pub column_costs: Vec<f64>,
    /// Columns whose node came from gap filling, not the cost grid.
    pub gap_flags: Vec<bool>,
    pub total_cost: f64,
    pub timing: StageTimings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    EdgesOnly,
    Gradient,
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edges" => Ok(Self::EdgesOnly),
            "gradient" => Ok(Self::Gradient),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

fn dp_params(cfg: &PipelineConfig, rows: usize) -> DpParams {
    DpParams {
        delta: cfg.dp.delta,
        tog: cfg.dp.tog,
        link_weight: cfg.dp.link_weight_for(rows),
        dummy_cost: cfg.dp.dummy_cost,
    }
}

fn solve_grid(grid: CostGrid, cfg: &PipelineConfig, params: &DpParams) -> Result<(SkylinePath, Vec<bool>, f64, Vec<f64>)> {
    let filled = if cfg.dp.gap_fill { gap_fill(&grid, params) } else { grid.clone() };
    let (path, total) = shortest_path(&filled, params)?;
    let flags = gap_flags(&grid, &path);
    let costs = path
        .rows
        .iter()
        .enumerate()
        .map(|(col, &row)| filled.get(row, col).unwrap_or(params.dummy_cost))
        .collect();
    Ok((path, flags, total, costs))
}

/// Full proposed pipeline: Canny, structure tensor, filter-bank scoring,
/// fused cost, gap fill, shortest path.
pub fn detect(img: &RgbImage, bank: &FilterBank, cfg: &PipelineConfig) -> Result<DetectionResult> {
    let t_start = Instant::now();

    let t0 = Instant::now();
    let gray = to_grayscale(img);
    let edges = canny(&gray, cfg.canny.sigma, cfg.canny.low, cfg.canny.high)?;
    let edges_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t0 = Instant::now();
    let field = tensor_field(img, cfg.tensor.window, cfg.tensor.weight_sigma)?;
    let features = field.features();
    let strength_raw: Vec<f64> = features.iter().map(|f| f.strength).collect();
    let strength = normalize01(&strength_raw)?;
    let tensor_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t0 = Instant::now();
    let scores = predict(bank, &gray, &features, &edges, cfg.blade.normalization)?;
    let predict_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t0 = Instant::now();
    let grid = cost_proposed(&scores, &strength, &edges, cfg.dp.v)?;
    let params = dp_params(cfg, img.height());
    let (path, flags, total, costs) = solve_grid(grid, cfg, &params)?;
    let dp_ms = t0.elapsed().as_secs_f64() * 1e3;

    Ok(DetectionResult {
        path,
        column_costs: costs,
        gap_flags: flags,
        total_cost: total,
        timing: StageTimings {
            edges_ms,
            tensor_ms,
            predict_ms,
            dp_ms,
            total_ms: t_start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Non-learning baselines: binary edge costs or the weighted gradient cost.
pub fn baseline(img: &RgbImage, method: BaselineMethod, cfg: &PipelineConfig) -> Result<DetectionResult> {
    let t_start = Instant::now();
    let gray = to_grayscale(img);

    let t0 = Instant::now();
    let (grid, edges_ms) = match method {
        BaselineMethod::EdgesOnly => {
            let edges = canny(&gray, cfg.canny.sigma, cfg.canny.low, cfg.canny.high)?;
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            (cost_edges_only(&edges, cfg.dp.l), ms)
        }
        BaselineMethod::Gradient => (cost_gradient(&gray, cfg.dp.w1)?, t0.elapsed().as_secs_f64() * 1e3),
    };

    let t0 = Instant::now();
    let params = dp_params(cfg, img.height());
    let (path, flags, total, costs) = solve_grid(grid, cfg, &params)?;
    let dp_ms = t0.elapsed().as_secs_f64() * 1e3;

    Ok(DetectionResult {
        path,
        column_costs: costs,
        gap_flags: flags,
        total_cost: total,
        timing: StageTimings {
            edges_ms,
            tensor_ms: 0.0,
            predict_ms: 0.0,
            dp_ms,
            total_ms: t_start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Training summary: per-bucket sample counts and how many buckets were
/// left to the fallback filter.
#[derive(Debug)]
pub struct TrainSummary {
    pub images: usize,
    pub samples: usize,
    pub bucket_counts: Vec<u64>,
    pub untrained_buckets: usize,
    /// Images whose negative pool could not match the positive count.
    pub negative_shortfalls: Vec<(String, usize)>,
}

/// Learns a filter bank from a dataset. Accumulators are sharded across
/// `workers` threads and merged in deterministic shard order; per-image
/// sample seeds depend only on the global image index, so the learned bank
/// does not depend on the worker count beyond float summation order.
pub fn train(entries: &[DatasetEntry], cfg: &PipelineConfig, workers: usize) -> Result<(FilterBank, TrainSummary)> {
    if entries.is_empty() {
        return Err(Error::NoTrainingPairs);
    }
    cfg.validate()?;
    let workers = workers.max(1).min(entries.len());
    let buckets = cfg.tensor.quantizer.bucket_count();
    let side = cfg.blade.side;

    let indexed: Vec<(usize, &DatasetEntry)> = entries.iter().enumerate().collect();
    let chunk = indexed.len().div_ceil(workers);
    let shards: Vec<&[(usize, &DatasetEntry)]> = indexed.chunks(chunk).collect();

    // accumulator, sample count, and per-image negative shortfalls
    type ShardResult = (GramAccumulator, usize, Vec<(String, usize)>);
    let results: Vec<Result<ShardResult>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = shards
                .iter()
                .map(|shard| {
                    scope.spawn(move || {
                        let mut acc = GramAccumulator::new(side, buckets);
                        let mut samples = 0usize;
                        let mut shortfalls = Vec::new();
                        for (index, entry) in shard.iter() {
                            let seed = cfg.seed.wrapping_add(*index as u64);
                            let set = collect_samples(&entry.image, &entry.gt.rows, cfg, seed)?;
                            if set.negatives_taken < set.negatives_requested {
                                shortfalls.push((
                                    entry.stem.clone(),
                                    set.negatives_requested - set.negatives_taken,
                                ));
                            }
                            for s in &set.samples {
                                acc.accumulate(s)?;
                            }
                            samples += set.samples.len();
                        }
                        Ok((acc, samples, shortfalls))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training shard panicked")).collect()
        });

    let mut merged = GramAccumulator::new(side, buckets);
    let mut samples = 0usize;
    let mut negative_shortfalls = Vec::new();
    for r in results {
        let (acc, n, mut shortfalls) = r?;
        merged = merged.merge(&acc)?;
        samples += n;
        negative_shortfalls.append(&mut shortfalls);
    }

    let reg = Regularizer { smoothness: cfg.blade.smoothness, ridge: cfg.blade.ridge };
    let bank = solve_bank(&merged, &reg, cfg.blade.min_samples(), &cfg.tensor.quantizer)?;
    let bucket_counts: Vec<u64> = (0..buckets).map(|b| merged.count(b)).collect();
    let untrained_buckets = bank.trained_mask.iter().filter(|&&t| !t).count();
    Ok((
        bank,
        TrainSummary {
            images: entries.len(),
            samples,
            bucket_counts,
            untrained_buckets,
            negative_shortfalls,
        },
    ))
}

/// Renders the image with one pure-red pixel per column at the path row.
pub fn render_overlay(img: &RgbImage, path: &SkylinePath) -> RgbImage {
    assert_eq!(path.rows.len(), img.width());
    let (w, h) = (img.width(), img.height());
    let mut channels = [
        img.channel(0).to_vec(),
        img.channel(1).to_vec(),
        img.channel(2).to_vec(),
    ];
    for (x, &row) in path.rows.iter().enumerate() {
        let i = row.min(h - 1) * w + x;
        channels[0][i] = 1.0;
        channels[1][i] = 0.0;
        channels[2][i] = 0.0;
    }
    RgbImage::new(w, h, channels)
}

pub fn write_path_csv(path: &Path, skyline: &SkylinePath) -> Result<()> {
    let cells: Vec<String> = skyline.rows.iter().map(|r| r.to_string()).collect();
    std::fs::write(path, cells.join(","))?;
    Ok(())
}
