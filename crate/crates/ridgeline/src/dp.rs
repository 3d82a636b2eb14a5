//! Multistage-graph costs and the dynamic-programming shortest path.
//!
//! Columns are stages; each pixel is a vertex with a nodal cost, links join
//! vertices of adjacent columns whose rows differ by at most `delta` with
//! cost `link_weight * |row step|`. Blocked vertices are a sentinel, not a
//! large float, so infeasibility is detectable and relaxation never sees
//! them.

use crate::blade::ScoreMap;
use crate::edges::EdgeMap;
use crate::imagecore::{gradient, normalize01, GrayImage};
use crate::{Error, Result};

/// M x N grid of nodal costs; `None` is the blocked ("infinite") sentinel.
#[derive(Debug, Clone)]
pub struct CostGrid {
    pub rows: usize,
    pub cols: usize,
    pub nodal: Vec<Option<f64>>,
}

impl CostGrid {
    pub fn new(rows: usize, cols: usize, nodal: Vec<Option<f64>>) -> Self {
        assert_eq!(nodal.len(), rows * cols);
        debug_assert!(nodal.iter().flatten().all(|c| c.is_finite() && *c >= 0.0));
        Self { rows, cols, nodal }
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.nodal[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, cost: Option<f64>) {
        self.nodal[row * self.cols + col] = cost;
    }
}

/// Graph-search parameters.
#[derive(Debug, Clone, Copy)]
pub struct DpParams {
    /// Max vertical step between adjacent columns.
    pub delta: usize,
    /// Tolerance-of-gap: how many columns ahead a gap may be bridged.
    pub tog: usize,
    /// Multiplier on `|row step|` link costs.
    pub link_weight: f64,
    /// Nodal cost of inserted dummy nodes; must exceed any real nodal cost.
    pub dummy_cost: f64,
}

/// Skyline as one row index per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SkylinePath {
    pub rows: Vec<usize>,
}

/// Marks which path columns sit on nodes the original (pre-gap-fill) grid
/// had blocked, i.e. positions reached only through inserted dummy nodes.
pub fn gap_flags(original: &CostGrid, path: &SkylinePath) -> Vec<bool> {
    path.rows
        .iter()
        .enumerate()
        .map(|(col, &row)| original.get(row, col).is_none())
        .collect()
}

impl SkylinePath {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Binary edge-map cost: low cost `l` at edge pixels, blocked elsewhere.
pub fn cost_edges_only(edges: &EdgeMap, l: f64) -> CostGrid {
    assert!(l >= 0.0);
    let mut nodal = vec![None; edges.width * edges.height];
    for y in 0..edges.height {
        for x in 0..edges.width {
            if edges.get(x, y) {
                nodal[y * edges.width + x] = Some(l);
            }
        }
    }
    CostGrid::new(edges.height, edges.width, nodal)
}

/// Gradient-based cost `G_r = w1 * d_grad + (1 - w1) * (1 - grad)` with the
/// normalized gradient magnitude and its column difference
/// `d_grad(i, j) = |grad(i, j) - grad(i, j+1)|` (zero in the last column).
/// No pixel is blocked.
pub fn cost_gradient(img: &GrayImage, w1: f64) -> Result<CostGrid> {
    if !(0.0..=1.0).contains(&w1) {
        return Err(Error::WeightOutOfRange(w1));
    }
    if img.width() < 2 {
        return Err(Error::ImageTooSmall { width: img.width(), height: img.height(), min: 2 });
    }
    let (w, h) = (img.width(), img.height());
    let grad = gradient(img)?;
    let norm = normalize01(&grad.magnitude)?;
    let mut nodal = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let g = norm[y * w + x];
            let dg = if x + 1 < w { (g - norm[y * w + x + 1]).abs() } else { 0.0 };
            nodal.push(Some(w1 * dg + (1.0 - w1) * (1.0 - g)));
        }
    }
    Ok(CostGrid::new(h, w, nodal))
}

/// Proposed fused cost at edge pixels:
/// `v * (1 - score) + (1 - v) * (1 - strength)`, blocked elsewhere.
/// `strength` must already be normalized to `[0, 1]` over the whole image.
pub fn cost_proposed(
    scores: &ScoreMap,
    strength: &[f64],
    edges: &EdgeMap,
    v: f64,
) -> Result<CostGrid> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::WeightOutOfRange(v));
    }
    let (w, h) = (edges.width, edges.height);
    assert_eq!(scores.width, w);
    assert_eq!(scores.height, h);
    assert_eq!(strength.len(), w * h);
    let mut nodal = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some(score) = scores.get(x, y) {
                debug_assert!(edges.get(x, y), "score present off the edge map");
                let s = strength[y * w + x];
                nodal[y * w + x] = Some(v * (1.0 - score) + (1.0 - v) * (1.0 - s));
            }
        }
    }
    Ok(CostGrid::new(h, w, nodal))
}

/// Bridges edge gaps with high-cost dummy nodes.
///
/// For an unblocked node `(i, j)` with no unblocked node within
/// `[i - delta, i + delta]` of column `j+1` but one reachable in some column
/// `j' <= j + tog`, dummy nodes at row `i` fill columns `j+1 .. j'-1`.
/// Any column still fully blocked afterwards is filled with dummy rows so
/// the solver always has a feasible path.
pub fn gap_fill(grid: &CostGrid, params: &DpParams) -> CostGrid {
    let mut out = grid.clone();
    let (m, n) = (grid.rows, grid.cols);
    let delta = params.delta as isize;
    let reachable = |grid: &CostGrid, row: usize, col: usize| -> bool {
        let lo = (row as isize - delta).max(0) as usize;
        let hi = ((row as isize + delta) as usize).min(m - 1);
        (lo..=hi).any(|r| grid.get(r, col).is_some())
    };
    for j in 0..n.saturating_sub(1) {
        for i in 0..m {
            if grid.get(i, j).is_none() || reachable(grid, i, j + 1) {
                continue;
            }
            // look ahead up to tog columns for a reachable node
            let limit = (j + params.tog).min(n - 1);
            let target = ((j + 2)..=limit).find(|&jp| reachable(grid, i, jp));
            if let Some(jp) = target {
                for col in j + 1..jp {
                    if out.get(i, col).is_none() {
                        out.set(i, col, Some(params.dummy_cost));
                    }
                }
            }
        }
    }
    for j in 0..n {
        if (0..m).all(|i| out.get(i, j).is_none()) {
            for i in 0..m {
                out.set(i, j, Some(params.dummy_cost));
            }
        }
    }
    // Forward reachability repair: bridging within tog and filling empty
    // columns still leaves grids where no node of column j+1 lies within
    // delta of any reachable node of column j. Extend stranded rows with a
    // dummy so a feasible path always exists.
    let mut alive: Vec<usize> = (0..m).filter(|&i| out.get(i, 0).is_some()).collect();
    for j in 1..n {
        let step_ok = |i: usize, alive: &[usize]| {
            alive.iter().any(|&k| i.abs_diff(k) <= params.delta)
        };
        let mut next: Vec<usize> = (0..m)
            .filter(|&i| out.get(i, j).is_some() && step_ok(i, &alive))
            .collect();
        if next.is_empty() {
            for &i in &alive {
                if out.get(i, j).is_none() {
                    out.set(i, j, Some(params.dummy_cost));
                }
            }
            next = (0..m)
                .filter(|&i| out.get(i, j).is_some() && step_ok(i, &alive))
                .collect();
        }
        alive = next;
    }
    out
}

/// Forward DP over columns: minimizes the sum of nodal costs plus
/// `link_weight * |row step|` over all paths whose per-column step is at
/// most `delta`. Ties break toward the smaller row, then the smaller
/// predecessor row, so results are bit-reproducible.
pub fn shortest_path(grid: &CostGrid, params: &DpParams) -> Result<(SkylinePath, f64)> {
    let (m, n) = (grid.rows, grid.cols);
    assert!(n >= 1 && m >= 1);
    let delta = params.delta as isize;

    let mut cost = vec![f64::INFINITY; m * n];
    let mut back = vec![usize::MAX; m * n];
    for i in 0..m {
        if let Some(c) = grid.get(i, 0) {
            cost[i * n] = c;
        }
    }
    if (0..m).all(|i| cost[i * n].is_infinite()) {
        return Err(Error::Infeasible(0));
    }
    for j in 1..n {
        let mut any = false;
        for i in 0..m {
            let Some(nodal) = grid.get(i, j) else { continue };
            let lo = (i as isize - delta).max(0) as usize;
            let hi = ((i as isize + delta) as usize).min(m - 1);
            let mut best = f64::INFINITY;
            let mut best_k = usize::MAX;
            for k in lo..=hi {
                let prev = cost[k * n + (j - 1)];
                if prev.is_infinite() {
                    continue;
                }
                let step = i.abs_diff(k) as f64;
                let candidate = prev + params.link_weight * step + nodal;
                // strict improvement keeps the smallest predecessor on ties
                if candidate < best {
                    best = candidate;
                    best_k = k;
                }
            }
            if best_k != usize::MAX {
                cost[i * n + j] = best;
                back[i * n + j] = best_k;
                any = true;
            }
        }
        if !any {
            return Err(Error::Infeasible(j));
        }
    }

    // smallest total, ties toward the smaller final row
    let mut end = usize::MAX;
    let mut total = f64::INFINITY;
    for i in 0..m {
        let c = cost[i * n + (n - 1)];
        if c < total {
            total = c;
            end = i;
        }
    }
    if end == usize::MAX {
        return Err(Error::Infeasible(n - 1));
    }
    let mut rows = vec![0usize; n];
    rows[n - 1] = end;
    for j in (1..n).rev() {
        rows[j - 1] = back[rows[j] * n + j];
    }
    Ok((SkylinePath { rows }, total))
}
