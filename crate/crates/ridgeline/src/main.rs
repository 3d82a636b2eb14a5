//! Command-line interface: train a filter bank, detect skylines, run
//! baselines, evaluate predictions, and generate synthetic data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ridgeline::blade::FilterBank;
use ridgeline::config::PipelineConfig;
use ridgeline::dp::SkylinePath;
use ridgeline::eval::{aggregate, average_absolute_error, load_dataset, synth_generate, GroundTruth, HIST_BIN_WIDTH};
use ridgeline::imagecore::RgbImage;
use ridgeline::pipeline::{baseline, detect, render_overlay, train, write_path_csv, BaselineMethod, DetectionResult};
use ridgeline::{Error, Result};

#[derive(Parser)]
#[command(name = "ridgeline", about = "Mountain skyline extraction with a learned filter bank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration file (flat `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Learns a filter bank from a directory of image/ground-truth pairs.
    Train {
        /// Directory of images (.png/.ppm) with same-stem .csv ground truth.
        data: PathBuf,
        /// Output bank file.
        #[arg(long)]
        out: PathBuf,
        /// Accumulator shards run in parallel.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Extracts a skyline from one image with a trained bank.
    Detect {
        image: PathBuf,
        /// Trained bank file.
        #[arg(long)]
        bank: PathBuf,
        /// Output path CSV (one integer row per column).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional PNG with the path drawn in red.
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Extracts a skyline with a non-learning baseline cost.
    Baseline {
        image: PathBuf,
        /// `edges` or `gradient`.
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Scores predicted paths against ground truth.
    Eval {
        /// Directory of predicted path CSVs.
        pred: PathBuf,
        /// Directory of ground-truth CSVs with matching stems.
        gt: PathBuf,
        /// Writes the report as JSON in addition to the table.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generates a deterministic synthetic dataset.
    Synth {
        /// Output directory.
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        // Usage: bad flags or parameter combinations.
        Error::UnknownMethod(_) | Error::BadConfig(_) | Error::BadThresholds { .. } | Error::WeightOutOfRange(_) | Error::BadPatchSize(_) => 2,
        // Data: unreadable or malformed inputs.
        Error::Io(_)
        | Error::Image(_)
        | Error::MissingDirectory(_)
        | Error::MalformedGroundTruth { .. }
        | Error::NoTrainingPairs
        | Error::NoMatchedPairs
        | Error::BankVersionMismatch(_)
        | Error::BankFormat(_)
        | Error::ImageTooSmall { .. }
        | Error::NonFiniteInput => 3,
        // Internal invariant failures.
        _ => 4,
    }
}

fn write_outputs(img: &RgbImage, result: &DetectionResult, out: Option<&Path>, overlay: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        write_path_csv(path, &result.path)?;
    }
    if let Some(path) = overlay {
        render_overlay(img, &result.path).save_png(path)?;
    }
    Ok(())
}

fn print_detection(result: &DetectionResult) {
    let gaps = result.gap_flags.iter().filter(|&&g| g).count();
    println!(
        "path: {} columns, total cost {:.4}, {} gap-filled column(s)",
        result.path.rows.len(),
        result.total_cost,
        gaps
    );
    let t = &result.timing;
    println!(
        "timing: edges {:.1} ms, tensor {:.1} ms, predict {:.1} ms, dp {:.1} ms, total {:.1} ms",
        t.edges_ms, t.tensor_ms, t.predict_ms, t.dp_ms, t.total_ms
    );
}

fn cmd_train(data: &Path, out: &Path, workers: usize, config: &ConfigArgs) -> Result<()> {
    let cfg = config.load()?;
    let dataset = load_dataset(data)?;
    for stem in &dataset.skipped {
        eprintln!("warning: skipping {stem}: no matching image/ground-truth pair");
    }
    let (bank, summary) = train(&dataset.entries, &cfg, workers)?;
    for (stem, missing) in &summary.negative_shortfalls {
        eprintln!("warning: {stem}: negative pool short by {missing} sample(s)");
    }
    bank.save(out)?;

    let buckets = summary.bucket_counts.len();
    let occupied = summary.bucket_counts.iter().filter(|&&c| c > 0).count();
    println!(
        "trained on {} image(s), {} sample(s); {}/{} buckets occupied, {} using fallback filter",
        summary.images, summary.samples, occupied, buckets, summary.untrained_buckets
    );
    let mut counts: Vec<u64> = summary.bucket_counts.clone();
    counts.sort_unstable();
    println!(
        "bucket samples: min {}, median {}, max {}",
        counts.first().unwrap(),
        counts[counts.len() / 2],
        counts.last().unwrap()
    );
    println!("bank written to {}", out.display());
    Ok(())
}

/// Surfaces the offending path alongside I/O errors.
fn check_readable(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("cannot read {}", path.display()),
        )))
    }
}

fn cmd_detect(image: &Path, bank: &Path, out: Option<&Path>, overlay: Option<&Path>, config: &ConfigArgs) -> Result<()> {
    let cfg = config.load()?;
    check_readable(bank)?;
    let bank = FilterBank::load(bank)?;
    check_readable(image)?;
    let img = RgbImage::load(image)?;
    let result = detect(&img, &bank, &cfg)?;
    write_outputs(&img, &result, out, overlay)?;
    print_detection(&result);
    Ok(())
}

fn cmd_baseline(image: &Path, method: &str, out: Option<&Path>, overlay: Option<&Path>, config: &ConfigArgs) -> Result<()> {
    let cfg = config.load()?;
    let method: BaselineMethod = method.parse()?;
    check_readable(image)?;
    let img = RgbImage::load(image)?;
    let result = baseline(&img, method, &cfg)?;
    write_outputs(&img, &result, out, overlay)?;
    print_detection(&result);
    Ok(())
}

fn csv_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                map.insert(stem.to_string(), path);
            }
        }
    }
    Ok(map)
}

fn parse_row_csv(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    text.trim()
        .split(',')
        .map(|tok| {
            tok.trim().parse::<usize>().map_err(|_| Error::MalformedGroundTruth {
                path: path.to_path_buf(),
                reason: format!("bad row value {tok:?}"),
            })
        })
        .collect()
}

fn cmd_eval(pred: &Path, gt: &Path, json: Option<&Path>) -> Result<()> {
    let preds = csv_stems(pred)?;
    let gts = csv_stems(gt)?;

    let mut names = Vec::new();
    let mut errors = Vec::new();
    for (stem, pred_path) in &preds {
        let Some(gt_path) = gts.get(stem) else {
            eprintln!("warning: {stem}: no matching ground truth, skipped");
            continue;
        };
        let p = SkylinePath { rows: parse_row_csv(pred_path)? };
        let g = GroundTruth { rows: parse_row_csv(gt_path)? };
        errors.push(average_absolute_error(&p, &g)?);
        names.push(stem.clone());
    }
    if errors.is_empty() {
        return Err(Error::NoMatchedPairs);
    }

    let report = aggregate(&errors, HIST_BIN_WIDTH)?;
    for (stem, err) in names.iter().zip(&errors) {
        println!("{stem}: {err:.3}");
    }
    println!(
        "images {}  mean {:.3}  std {:.3}  min {:.3}  max {:.3}",
        errors.len(),
        report.mean,
        report.std,
        report.min,
        report.max
    );

    if let Some(path) = json {
        let per_image: serde_json::Map<String, serde_json::Value> = names
            .iter()
            .zip(&errors)
            .map(|(s, &e)| (s.clone(), serde_json::json!(e)))
            .collect();
        let doc = serde_json::json!({
            "per_image": per_image,
            "mean": report.mean,
            "std": report.std,
            "min": report.min,
            "max": report.max,
            "histogram": report.histogram,
        });
        std::fs::write(path, serde_json::to_string_pretty(&doc).expect("report serializes"))?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_synth(out: &Path, count: usize, width: usize, height: usize, seed: u64) -> Result<()> {
    synth_generate(count, width, height, seed, out)?;
    println!("wrote {count} image/ground-truth pair(s) to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { data, out, workers, config } => cmd_train(data, out, *workers, config),
        Command::Detect { image, bank, out, overlay, config } => {
            cmd_detect(image, bank, out.as_deref(), overlay.as_deref(), config)
        }
        Command::Baseline { image, method, out, overlay, config } => {
            cmd_baseline(image, method, out.as_deref(), overlay.as_deref(), config)
        }
        Command::Eval { pred, gt, json } => cmd_eval(pred, gt, json.as_deref()),
        Command::Synth { out, count, width, height, seed } => {
            cmd_synth(out, *count, *width, *height, *seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
