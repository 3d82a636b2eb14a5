//! Pipeline configuration: one flat `key = value` file, with every free
//! parameter of the pipeline exposed. CLI flags override file values.

use std::path::Path;

use crate::tensor::QuantizerConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CannyConfig {
    pub sigma: f64,
    /// Fraction of the max gradient magnitude.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self { sigma: 1.4, low: 0.1, high: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorConfig {
    pub window: usize,
    pub weight_sigma: f64,
    pub quantizer: QuantizerConfig,
}

impl Default for TensorConfig {
    fn default() -> Self {
        Self { window: 7, weight_sigma: 1.5, quantizer: QuantizerConfig::default() }
    }
}

/// How raw filter responses are mapped into `[0, 1]` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreNormalization {
    /// Clamp to `[0, 1]`; scores stay comparable across images.
    Clamp,
    /// Per-image min-max over the edge-pixel responses.
    MinMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BladeConfig {
    pub side: usize,
    /// Per-sample smoothness weight; scaled by the bucket sample count.
    pub smoothness: f64,
    /// Per-sample ridge weight; scaled by the bucket sample count.
    pub ridge: f64,
    /// Buckets with fewer samples fall back to the average filter.
    /// `None` means `2 * side^2`.
    pub min_samples: Option<usize>,
    pub positive_target: f64,
    pub negative_target: f64,
    /// Vertical exclusion margin (pixels) for negative sampling.
    pub margin: usize,
    pub normalization: ScoreNormalization,
}

impl BladeConfig {
    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(2 * self.side * self.side)
    }
}

impl Default for BladeConfig {
    fn default() -> Self {
        Self {
            side: 7,
            smoothness: 1e-2,
            ridge: 1e-4,
            min_samples: None,
            positive_target: 1.0,
            negative_target: 0.0,
            margin: 10,
            normalization: ScoreNormalization::Clamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    pub delta: usize,
    pub tog: usize,
    /// `None`: use `1 / image_height`, normalizing link costs against
    /// nodal costs in `[0, 1]`.
    pub link_weight: Option<f64>,
    pub dummy_cost: f64,
    /// Fusion weight between prediction score and gradient strength.
    pub v: f64,
    /// Gradient-baseline weight between d-grad and (1 - grad).
    pub w1: f64,
    /// Edges-only baseline low cost.
    pub l: f64,
    pub gap_fill: bool,
}

impl DpConfig {
    pub fn link_weight_for(&self, rows: usize) -> f64 {
        self.link_weight.unwrap_or(1.0 / rows as f64)
    }
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            delta: 4,
            tog: 5,
            link_weight: None,
            dummy_cost: 2.0,
            v: 0.5,
            w1: 0.5,
            l: 0.1,
            gap_fill: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct PipelineConfig {
    pub canny: CannyConfig,
    pub tensor: TensorConfig,
    pub blade: BladeConfig,
    pub dp: DpConfig,
    pub seed: u64,
}


impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.into()));
        if !(self.canny.low > 0.0 && self.canny.low < self.canny.high && self.canny.high <= 1.0) {
            return bad("canny thresholds must satisfy 0 < low < high <= 1");
        }
        if self.canny.sigma <= 0.0 {
            return bad("canny.sigma must be > 0");
        }
        if self.tensor.window < 3 || self.tensor.window.is_multiple_of(2) {
            return bad("tensor.window must be odd >= 3");
        }
        if self.tensor.weight_sigma <= 0.0 {
            return bad("tensor.weight_sigma must be > 0");
        }
        self.tensor.quantizer.validate()?;
        if self.blade.side < 3 || self.blade.side.is_multiple_of(2) {
            return bad("blade.side must be odd >= 3");
        }
        if self.blade.ridge <= 0.0 {
            return bad("blade.ridge must be > 0");
        }
        if self.blade.smoothness < 0.0 {
            return bad("blade.smoothness must be >= 0");
        }
        if self.dp.delta < 1 || self.dp.tog < 1 {
            return bad("dp.delta and dp.tog must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.dp.v) || !(0.0..=1.0).contains(&self.dp.w1) {
            return bad("dp.v and dp.w1 must be in [0,1]");
        }
        if self.dp.l < 0.0 || self.dp.dummy_cost <= 0.0 {
            return bad("dp.l must be >= 0 and dp.dummy_cost > 0");
        }
        Ok(())
    }

    /// Parses a flat `key = value` file. Unknown keys are an error; `#`
    /// starts a comment line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::BadConfig(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::BadConfig(format!("bad value {v:?} for {key}")))
        }
        fn edge_list(key: &str, v: &str) -> Result<Vec<f64>> {
            v.split(',').map(|p| num(key, p.trim())).collect()
        }
        match key {
            "canny.sigma" => self.canny.sigma = num(key, value)?,
            "canny.low" => self.canny.low = num(key, value)?,
            "canny.high" => self.canny.high = num(key, value)?,
            "tensor.window" => self.tensor.window = num(key, value)?,
            "tensor.weight_sigma" => self.tensor.weight_sigma = num(key, value)?,
            "tensor.orientation_bins" => self.tensor.quantizer.orientation_bins = num(key, value)?,
            "tensor.strength_bins" => self.tensor.quantizer.strength_bins = num(key, value)?,
            "tensor.coherence_bins" => self.tensor.quantizer.coherence_bins = num(key, value)?,
            "tensor.strength_edges" => self.tensor.quantizer.strength_edges = edge_list(key, value)?,
            "tensor.coherence_edges" => self.tensor.quantizer.coherence_edges = edge_list(key, value)?,
            "blade.side" => self.blade.side = num(key, value)?,
            "blade.smoothness" => self.blade.smoothness = num(key, value)?,
            "blade.ridge" => self.blade.ridge = num(key, value)?,
            "blade.min_samples" => {
                self.blade.min_samples =
                    if value == "auto" { None } else { Some(num(key, value)?) };
            }
            "blade.positive_target" => self.blade.positive_target = num(key, value)?,
            "blade.negative_target" => self.blade.negative_target = num(key, value)?,
            "blade.margin" => self.blade.margin = num(key, value)?,
            "blade.normalization" => {
                self.blade.normalization = match value {
                    "clamp" => ScoreNormalization::Clamp,
                    "minmax" => ScoreNormalization::MinMax,
                    _ => return Err(Error::BadConfig(format!("bad normalization {value:?}"))),
                };
            }
            "dp.delta" => self.dp.delta = num(key, value)?,
            "dp.tog" => self.dp.tog = num(key, value)?,
            "dp.link_weight" => {
                self.dp.link_weight =
                    if value == "auto" { None } else { Some(num(key, value)?) };
            }
            "dp.dummy_cost" => self.dp.dummy_cost = num(key, value)?,
            "dp.v" => self.dp.v = num(key, value)?,
            "dp.w1" => self.dp.w1 = num(key, value)?,
            "dp.l" => self.dp.l = num(key, value)?,
            "dp.gap_fill" => self.dp.gap_fill = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::BadConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }
}
