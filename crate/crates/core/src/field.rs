//! Monte Carlo evaluation of the intrinsic Hopf-Lax value
//!
//! ```text
//! u(x, t) = E[ min_z E_t L((f(x) - a(x, z)) / E_t) + g(z) ]
//! ```
//!
//! on a (base point x time) lattice, where `a(x, z)` is the point of the
//! fiber of `z` nearest to `f(x)`. Each path draws one `D_1` and reuses it at
//! every time node (`E_t = (t / D_1)^beta`), so fields at different times and
//! points share their random numbers.
//!
//! Paths are processed in fixed-size chunks whose statistics are merged in
//! chunk order, so results do not depend on the number of worker threads.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duality::{DualityError, GridFunction, LagrangianPair};
use crate::geometry::{GeometryError, QuotientModel, SECTION_TOLERANCE};
use crate::stable::{inverse_time, FractionalOrder, PathEnsemble, StableError};

/// Paths per deterministic accumulation chunk.
pub const CHUNK: usize = 2048;
const WAVE: usize = 16;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("n_paths must be at least 100, got {0}")]
    TooFewPaths(usize),
    #[error("time grid must be non-empty, finite, positive and strictly increasing (index {0})")]
    BadTimeGrid(usize),
    #[error("x index {index} is out of range for {len} base points")]
    BadIndex { index: usize, len: usize },
    #[error("Lagrangian takes {lagrangian}-dimensional input but the ambient space has dimension {ambient}")]
    DimensionMismatch { lagrangian: usize, ambient: usize },
    #[error("every path has E_t < 1 at t = {0}; the conditioned expectation is undefined")]
    AllRejected(f64),
    #[error("no fiber candidate has a finite value at x index {0}")]
    NoFiniteCandidate(usize),
    #[error("x index {0} is on the boundary of the base grid")]
    BoundaryPoint(usize),
    #[error("base point {0} has no grid neighbours evaluated in the field")]
    MissingNeighbour(usize),
    #[error("the model has no tensor base grid; finite differences are unavailable")]
    NoBaseGrid,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Duality(#[from] DualityError),
    #[error(transparent)]
    Stable(#[from] StableError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Strictly increasing positive times; `t = 0` is the exact row `u = g`.
    pub time_grid: Vec<f64>,
    /// Average only over paths with `E_t >= 1`.
    #[serde(default)]
    pub condition_et_ge_1: bool,
    /// Base points to evaluate (all when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_indices: Option<Vec<usize>>,
}

impl EvaluationConfig {
    pub fn new(n_paths: usize, seed: u64, time_grid: Vec<f64>) -> Self {
        Self {
            n_paths,
            seed,
            time_grid,
            condition_et_ge_1: false,
            x_indices: None,
        }
    }

    /// `n` evenly spaced times `t_end / n, ..., t_end`.
    pub fn uniform_times(t_end: f64, n: usize) -> Vec<f64> {
        (1..=n).map(|k| t_end * k as f64 / n as f64).collect()
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.n_paths < 100 {
            return Err(FieldError::TooFewPaths(self.n_paths));
        }
        if self.time_grid.is_empty() {
            return Err(FieldError::BadTimeGrid(0));
        }
        let mut prev = 0.0;
        for (k, &t) in self.time_grid.iter().enumerate() {
            if !(t > prev && t.is_finite()) {
                return Err(FieldError::BadTimeGrid(k));
            }
            prev = t;
        }
        Ok(())
    }
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    /// Standard error of the mean; infinite with fewer than two samples.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// Merges per-chunk moment arrays in chunk order.
pub(crate) fn accumulate_chunks<T, F>(n_paths: usize, state: T, eval: F) -> T
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync,
    T: Mergeable,
{
    let chunks: Vec<std::ops::Range<usize>> = (0..n_paths)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(n_paths))
        .collect();
    let mut total = state;
    for wave in chunks.chunks(WAVE) {
        let parts: Vec<T> = wave.par_iter().cloned().map(&eval).collect();
        for p in &parts {
            total.merge_from(p);
        }
    }
    total
}

pub(crate) trait Mergeable {
    fn merge_from(&mut self, other: &Self);
}

impl Mergeable for Vec<Moments> {
    fn merge_from(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

/// Path-level inner minimisation `V(x; E) = min_z E L(w(x, z) / E) + g(z)`.
#[derive(Debug, Clone)]
pub struct HopfLaxKernel {
    pair: LagrangianPair,
    rows: Vec<usize>,
    n_z: usize,
    dim: usize,
    g: Vec<f64>,
    /// Squared fiber distances, rows x n_z.
    sq: Vec<f64>,
    /// Per row, candidate indices by increasing fiber distance.
    order: Vec<u32>,
    g_min: f64,
    /// Fiber displacements, rows x n_z x dim (general Lagrangians only).
    disp: Vec<f64>,
}

impl HopfLaxKernel {
    pub fn new(model: &QuotientModel, pair: &LagrangianPair, rows: &[usize]) -> Result<Self, FieldError> {
        Self::with_obstacle(model, pair, rows, model.g_values().to_vec())
    }

    fn with_obstacle(
        model: &QuotientModel,
        pair: &LagrangianPair,
        rows: &[usize],
        g: Vec<f64>,
    ) -> Result<Self, FieldError> {
        let dim = model.ambient_dim();
        if let Some(ld) = pair.input_dim() {
            if ld != dim {
                return Err(FieldError::DimensionMismatch {
                    lagrangian: ld,
                    ambient: dim,
                });
            }
        }
        let n_z = model.len();
        for &x in rows {
            if x >= n_z {
                return Err(FieldError::BadIndex { index: x, len: n_z });
            }
        }
        let mut sq = Vec::with_capacity(rows.len() * n_z);
        let mut disp = Vec::new();
        for &x in rows {
            for z in 0..n_z {
                let (w, d) = model.displacement(x, z)?;
                sq.push(if d <= SECTION_TOLERANCE { 0.0 } else { d * d });
                if !pair.is_quadratic() {
                    disp.extend(w);
                }
            }
        }
        let mut order = Vec::with_capacity(rows.len() * n_z);
        for r in 0..rows.len() {
            let row = &sq[r * n_z..(r + 1) * n_z];
            let mut idx: Vec<u32> = (0..n_z as u32).collect();
            idx.sort_by(|&a, &b| row[a as usize].total_cmp(&row[b as usize]).then(a.cmp(&b)));
            order.extend(idx);
        }
        let g_min = g.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            pair: pair.clone(),
            rows: rows.to_vec(),
            n_z,
            dim,
            g,
            sq,
            order,
            g_min,
            disp,
        })
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn pair(&self) -> &LagrangianPair {
        &self.pair
    }

    /// Fills `values[r]` and `argmin[r]` for every row at inverse time `e`.
    pub fn evaluate(&self, e: f64, values: &mut [f64], argmin: &mut [usize]) {
        for r in 0..self.rows.len() {
            let sq = &self.sq[r * self.n_z..(r + 1) * self.n_z];
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            if e > 0.0 {
                if self.pair.is_quadratic() {
                    // Candidates come by increasing distance; once the
                    // distance term alone exceeds the best value, none of
                    // the remaining ones can win.
                    let inv = 0.5 / e;
                    for &z in &self.order[r * self.n_z..(r + 1) * self.n_z] {
                        let z = z as usize;
                        let cost = sq[z] * inv;
                        if cost + self.g_min > best {
                            break;
                        }
                        let v = cost + self.g[z];
                        if v < best || (v == best && z < arg) {
                            best = v;
                            arg = z;
                        }
                    }
                } else {
                    for z in 0..self.n_z {
                        let o = (r * self.n_z + z) * self.dim;
                        let v = self.pair.perspective(&self.disp[o..o + self.dim], e) + self.g[z];
                        if v < best {
                            best = v;
                            arg = z;
                        }
                    }
                }
            } else {
                // E L(w / E) -> 0 for w = 0 and +inf otherwise.
                for (z, (&d2, &g)) in sq.iter().zip(&self.g).enumerate() {
                    if d2 == 0.0 && g < best {
                        best = g;
                        arg = z;
                    }
                }
            }
            values[r] = best;
            argmin[r] = arg;
        }
    }
}

/// Estimated `u` with standard errors on rows x times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub config: EvaluationConfig,
    pub beta: FractionalOrder,
    /// Base point index of each row.
    pub rows: Vec<usize>,
    pub times: Vec<f64>,
    /// Row-major `u[row * times + k]`.
    pub u: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Most frequent per-path minimiser (ties to the smallest index).
    pub argmin: Vec<usize>,
    /// `g` at each row, the exact value at `t = 0`.
    pub g: Vec<f64>,
    /// Paths entering the average at each time.
    pub accepted: Vec<u64>,
    /// Paths whose inner minimum increased between consecutive times.
    pub path_monotonicity_violations: u64,
}

impl ValueField {
    #[inline]
    pub fn idx(&self, row: usize, k: usize) -> usize {
        row * self.times.len() + k
    }

    pub fn value(&self, row: usize, k: usize) -> f64 {
        self.u[self.idx(row, k)]
    }

    pub fn error(&self, row: usize, k: usize) -> f64 {
        self.stderr[self.idx(row, k)]
    }

    pub fn row_of(&self, x: usize) -> Option<usize> {
        self.rows.iter().position(|&r| r == x)
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.accepted
            .iter()
            .map(|&a| a as f64 / self.config.n_paths as f64)
            .collect()
    }

    /// Series `u(x, 0), u(x, t_1), ...` with the exact `t = 0` value first.
    pub fn series_with_origin(&self, row: usize) -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![self.g[row]];
        let mut se = vec![0.0];
        for k in 0..self.times.len() {
            v.push(self.value(row, k));
            se.push(self.error(row, k));
        }
        (v, se)
    }

    /// CSV with columns `x.., t, u, stderr, argmin_index`.
    pub fn to_csv(&self, model: &QuotientModel) -> String {
        let m = model.base_dim();
        let mut out = String::new();
        if m == 1 {
            out.push_str("x,");
        } else {
            for j in 1..=m {
                let _ = write!(out, "x{j},");
            }
        }
        out.push_str("t,u,stderr,argmin_index\n");
        for (r, &x) in self.rows.iter().enumerate() {
            for (k, t) in self.times.iter().enumerate() {
                for c in &model.base_points()[x] {
                    let _ = write!(out, "{c},");
                }
                let i = self.idx(r, k);
                let _ = writeln!(out, "{t},{},{},{}", self.u[i], self.stderr[i], self.argmin[i]);
            }
        }
        out
    }
}

#[derive(Clone)]
struct ChunkState {
    moments: Vec<Moments>,
    counts: Vec<u32>,
    accepted: Vec<u64>,
    violations: u64,
}

impl Mergeable for ChunkState {
    fn merge_from(&mut self, other: &Self) {
        self.moments.merge_from(&other.moments);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.accepted.iter_mut().zip(&other.accepted) {
            *a += b;
        }
        self.violations += other.violations;
    }
}

/// Evaluates `u` for `model` under `pair` and order `beta`.
pub fn evaluate_u(
    model: &QuotientModel,
    pair: &LagrangianPair,
    beta: FractionalOrder,
    cfg: &EvaluationConfig,
) -> Result<ValueField, FieldError> {
    cfg.validate()?;
    let rows = match &cfg.x_indices {
        Some(ix) => ix.clone(),
        None => (0..model.len()).collect(),
    };
    let kernel = HopfLaxKernel::new(model, pair, &rows)?;
    let g = rows.iter().map(|&x| model.g_values()[x]).collect();
    evaluate_with_kernel(&kernel, model.len(), g, beta, cfg)
}

/// Classical Hopf-Lax baseline `v(x, t) = E[min_y E_t L((x - y) / E_t) + g(y)]`
/// on the grid carrying `g`.
pub fn evaluate_classical_v(
    g: &GridFunction,
    pair: &LagrangianPair,
    beta: FractionalOrder,
    cfg: &EvaluationConfig,
) -> Result<ValueField, FieldError> {
    cfg.validate()?;
    let model = QuotientModel::identity_grid(g.grid().axes().to_vec())?;
    let rows = match &cfg.x_indices {
        Some(ix) => ix.clone(),
        None => (0..model.len()).collect(),
    };
    let kernel = HopfLaxKernel::with_obstacle(&model, pair, &rows, g.values().to_vec())?;
    let g_rows = rows.iter().map(|&x| g.values()[x]).collect();
    evaluate_with_kernel(&kernel, model.len(), g_rows, beta, cfg)
}

fn evaluate_with_kernel(
    kernel: &HopfLaxKernel,
    n_z: usize,
    g_rows: Vec<f64>,
    beta: FractionalOrder,
    cfg: &EvaluationConfig,
) -> Result<ValueField, FieldError> {
    let ensemble = PathEnsemble::new(beta, cfg.n_paths, cfg.seed)?;
    let rows = kernel.rows().len();
    let nt = cfg.time_grid.len();
    let b = beta.value();
    let initial = ChunkState {
        moments: vec![Moments::default(); rows * nt],
        counts: vec![0; rows * nt * n_z],
        accepted: vec![0; nt],
        violations: 0,
    };
    let state = accumulate_chunks(cfg.n_paths, initial.clone(), |range| {
        let mut st = initial.clone();
        let mut vals = vec![0.0; rows];
        let mut args = vec![0; rows];
        let mut prev = vec![f64::INFINITY; rows];
        for i in range {
            let d1 = ensemble.stable_draws()[i];
            prev.fill(f64::INFINITY);
            let mut path_violation = false;
            for (k, &t) in cfg.time_grid.iter().enumerate() {
                let e = inverse_time(b, t, d1);
                if cfg.condition_et_ge_1 && e < 1.0 {
                    continue;
                }
                kernel.evaluate(e, &mut vals, &mut args);
                st.accepted[k] += 1;
                for r in 0..rows {
                    let c = r * nt + k;
                    st.moments[c].push(vals[r]);
                    if args[r] < n_z {
                        st.counts[c * n_z + args[r]] += 1;
                    }
                    if vals[r] > prev[r] + 1e-12 * prev[r].abs().max(1.0) {
                        path_violation = true;
                    }
                    prev[r] = vals[r];
                }
            }
            st.violations += u64::from(path_violation);
        }
        st
    });
    for (k, &a) in state.accepted.iter().enumerate() {
        if a == 0 {
            return Err(FieldError::AllRejected(cfg.time_grid[k]));
        }
    }
    for (c, m) in state.moments.iter().enumerate() {
        if !m.mean.is_finite() {
            return Err(FieldError::NoFiniteCandidate(kernel.rows()[c / nt]));
        }
    }
    let argmin = (0..rows * nt)
        .map(|c| {
            let counts = &state.counts[c * n_z..(c + 1) * n_z];
            let mut best = (0, 0);
            for (z, &n) in counts.iter().enumerate() {
                if n > best.0 {
                    best = (n, z);
                }
            }
            best.1
        })
        .collect();
    Ok(ValueField {
        config: cfg.clone(),
        beta,
        rows: kernel.rows().to_vec(),
        times: cfg.time_grid.clone(),
        u: state.moments.iter().map(|m| m.mean).collect(),
        stderr: state.moments.iter().map(Moments::stderr).collect(),
        argmin,
        g: g_rows,
        accepted: state.accepted,
        path_monotonicity_violations: state.violations,
    })
}

/// Central finite-difference gradient of `u(., t_k)` at base point `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gradient {
    pub value: Vec<f64>,
    /// False when one-sided slopes disagree by more than 5 combined stderr.
    pub valid: bool,
    /// Standard error of each central difference (independent-noise bound).
    pub stderr: Vec<f64>,
    /// `|D+ u - D- u|` per axis.
    pub one_sided_gap: Vec<f64>,
    pub spacing: Vec<f64>,
}

/// Neighbour base indices of `x` along every axis of the base grid.
pub(crate) fn grid_neighbours(model: &QuotientModel, x: usize) -> Result<Vec<(usize, usize, f64, f64)>, FieldError> {
    let axes = model.base_axes().ok_or(FieldError::NoBaseGrid)?;
    let grid = crate::duality::Grid::new(axes.to_vec())?;
    let idx = grid.multi_index(x);
    let mut out = Vec::with_capacity(axes.len());
    for (k, axis) in axes.iter().enumerate() {
        if idx[k] == 0 || idx[k] + 1 >= axis.len() {
            return Err(FieldError::BoundaryPoint(x));
        }
        let mut lo = idx.clone();
        lo[k] -= 1;
        let mut hi = idx.clone();
        hi[k] += 1;
        out.push((
            grid.flat_index(&lo),
            grid.flat_index(&hi),
            axis[idx[k]] - axis[idx[k] - 1],
            axis[idx[k] + 1] - axis[idx[k]],
        ));
    }
    Ok(out)
}

pub fn gradient_du(field: &ValueField, model: &QuotientModel, x: usize, k: usize) -> Result<Gradient, FieldError> {
    let r = field.row_of(x).ok_or(FieldError::MissingNeighbour(x))?;
    let mut g = Gradient {
        value: Vec::new(),
        valid: true,
        stderr: Vec::new(),
        one_sided_gap: Vec::new(),
        spacing: Vec::new(),
    };
    for (lo, hi, hl, hh) in grid_neighbours(model, x)? {
        let rl = field.row_of(lo).ok_or(FieldError::MissingNeighbour(x))?;
        let rh = field.row_of(hi).ok_or(FieldError::MissingNeighbour(x))?;
        let (ul, u0, uh) = (field.value(rl, k), field.value(r, k), field.value(rh, k));
        let (sl, s0, sh) = (field.error(rl, k), field.error(r, k), field.error(rh, k));
        let minus = (u0 - ul) / hl;
        let plus = (uh - u0) / hh;
        let h = 0.5 * (hl + hh);
        let noise = (sh * sh + 4.0 * s0 * s0 + sl * sl).sqrt() / h;
        let gap = (plus - minus).abs();
        if gap > 5.0 * noise {
            g.valid = false;
        }
        g.value.push((uh - ul) / (hl + hh));
        g.stderr.push((sh * sh + sl * sl).sqrt() / (hl + hh));
        g.one_sided_gap.push(gap);
        g.spacing.push(h);
    }
    Ok(g)
}
