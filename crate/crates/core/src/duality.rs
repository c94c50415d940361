//! Tabulated convex functions and their discrete Legendre-Fenchel conjugates.
//!
//! Values live on tensor-product grids and may be `+inf`, following
//! sup-convolution conventions (`x + inf = inf`, `sup` ignores `-inf` terms).
//! The conjugate is computed by exhaustive maximisation over the primal
//! tabulation, so it is exact for the tabulated data; wherever the maximiser
//! sits on the primal boundary, the truncated grid may be cutting off the true
//! supremum, and such dual points are flagged.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualityError {
    #[error("grid needs at least one axis")]
    NoAxes,
    #[error("axis {axis} is empty")]
    EmptyAxis { axis: usize },
    #[error("axis {axis} must be finite and strictly ascending")]
    UnsortedAxis { axis: usize },
    #[error("expected {expected} values for the grid, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("value at index {index} is {value}; only finite values and +inf are allowed")]
    InvalidValue { index: usize, value: f64 },
    #[error("axis {axis} has {points} points; at least 2 are required")]
    TooFewPoints { axis: usize, points: usize },
    #[error("dual grid dimension {dual} does not match primal dimension {primal}")]
    DimensionMismatch { primal: usize, dual: usize },
    #[error("function is +inf everywhere; its conjugate is -inf")]
    EmptyDomain,
    #[error("L({value}) is negative at v = {point:?}; the square root is undefined")]
    NegativeLagrangian { point: Vec<f64>, value: f64 },
    #[error("constant C must be positive and finite, got {0}")]
    InvalidConstant(f64),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Tensor-product grid, row-major with the last axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self, DualityError> {
        if axes.is_empty() {
            return Err(DualityError::NoAxes);
        }
        for (axis, pts) in axes.iter().enumerate() {
            if pts.is_empty() {
                return Err(DualityError::EmptyAxis { axis });
            }
            if pts.iter().any(|p| !p.is_finite()) || pts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(DualityError::UnsortedAxis { axis });
            }
        }
        Ok(Self { axes })
    }

    /// `n` evenly spaced points on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self, DualityError> {
        Self::new(vec![linspace(lo, hi, n)])
    }

    /// `[lo, hi]^dim` with `n` points per axis.
    pub fn uniform_cube(dim: usize, lo: f64, hi: f64, n: usize) -> Result<Self, DualityError> {
        Self::new(vec![linspace(lo, hi, n); dim])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Per-axis indices of the flat index `flat`.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            idx[k] = flat % axis.len();
            flat /= axis.len();
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.len() + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis[i])
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// True when `flat` lies on the outer boundary along some axis of length > 1.
    pub fn on_boundary(&self, flat: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .any(|(&i, axis)| axis.len() > 1 && (i == 0 || i + 1 == axis.len()))
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        self.axes
            .iter()
            .flat_map(|a| a.windows(2).map(|w| w[1] - w[0]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        self.axes
            .iter()
            .flat_map(|a| a.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let h = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i + 1 == n { hi } else { lo + h * i as f64 })
                .collect()
        }
    }
}

/// Extended-real function tabulated on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, DualityError> {
        if values.len() != grid.len() {
            return Err(DualityError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || **v == f64::NEG_INFINITY)
        {
            return Err(DualityError::InvalidValue { index, value });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self, DualityError> {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Multilinear interpolation; `+inf` outside the grid or next to an
    /// infinite node carrying positive weight.
    pub fn eval(&self, v: &[f64]) -> f64 {
        if v.len() != self.dim() {
            return f64::NAN;
        }
        let mut lower = Vec::with_capacity(v.len());
        let mut frac = Vec::with_capacity(v.len());
        for (&x, axis) in v.iter().zip(self.grid.axes()) {
            let (first, last) = (axis[0], axis[axis.len() - 1]);
            if !(x >= first && x <= last) {
                return f64::INFINITY;
            }
            if axis.len() == 1 {
                lower.push(0);
                frac.push(0.0);
                continue;
            }
            let j = axis.partition_point(|&a| a <= x).clamp(1, axis.len() - 1) - 1;
            lower.push(j);
            frac.push((x - axis[j]) / (axis[j + 1] - axis[j]));
        }
        let mut total = 0.0;
        let mut idx = vec![0; v.len()];
        for corner in 0..(1usize << v.len()) {
            let mut weight = 1.0;
            for k in 0..v.len() {
                let up = (corner >> k) & 1 == 1;
                let w = if up { frac[k] } else { 1.0 - frac[k] };
                if up && self.grid.axes[k].len() == 1 {
                    weight = 0.0;
                }
                weight *= w;
                idx[k] = lower[k] + usize::from(up);
            }
            if weight == 0.0 {
                continue;
            }
            let value = self.values[self.grid.flat_index(&idx)];
            if value == f64::INFINITY {
                return f64::INFINITY;
            }
            total += weight * value;
        }
        total
    }

    /// CSV with one coordinate column per axis followed by `value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.dim() == 1 {
            out.push_str("p,value\n");
        } else {
            let cols: Vec<String> = (1..=self.dim()).map(|k| format!("p{k}")).collect();
            let _ = writeln!(out, "{},value", cols.join(","));
        }
        for (i, v) in self.values.iter().enumerate() {
            for x in self.grid.point(i) {
                let _ = write!(out, "{x},");
            }
            let _ = writeln!(out, "{v}");
        }
        out
    }

    /// Parses the format written by [`GridFunction::to_csv`]. Rows must cover
    /// a full tensor grid in row-major order.
    pub fn from_csv(text: &str) -> Result<Self, DualityError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(DualityError::Csv {
            line: 1,
            message: "missing header".into(),
        })?;
        let ncols = header.split(',').count();
        if ncols < 2 {
            return Err(DualityError::Csv {
                line: 1,
                message: "need at least one coordinate column and a value column".into(),
            });
        }
        let dim = ncols - 1;
        let mut coords: Vec<Vec<f64>> = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != ncols {
                return Err(DualityError::Csv {
                    line: lineno + 1,
                    message: format!("expected {ncols} fields, got {}", fields.len()),
                });
            }
            let mut row = Vec::with_capacity(ncols);
            for f in fields {
                row.push(parse_extended(f).ok_or_else(|| DualityError::Csv {
                    line: lineno + 1,
                    message: format!("cannot parse '{f}' as a number"),
                })?);
            }
            values.push(row[dim]);
            row.truncate(dim);
            coords.push(row);
        }
        let mut axes = vec![Vec::new(); dim];
        for (k, axis) in axes.iter_mut().enumerate() {
            let mut vals: Vec<f64> = coords.iter().map(|c| c[k]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            *axis = vals;
        }
        let grid = Grid::new(axes)?;
        if grid.len() != coords.len() {
            return Err(DualityError::Csv {
                line: 0,
                message: format!("{} rows do not form a full tensor grid", coords.len()),
            });
        }
        for (i, c) in coords.iter().enumerate() {
            if grid.point(i) != *c {
                return Err(DualityError::Csv {
                    line: i + 2,
                    message: "rows are not in row-major grid order".into(),
                });
            }
        }
        Self::new(grid, values)
    }
}

fn parse_extended(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        _ => s.parse().ok(),
    }
}

/// Result of [`legendre_transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct Conjugate {
    pub function: GridFunction,
    /// Flat primal index of the maximiser for each dual point.
    pub maximizer: Vec<usize>,
    /// Maximiser on the primal boundary: the value may be truncated.
    pub on_boundary: Vec<bool>,
}

impl Conjugate {
    pub fn boundary_count(&self) -> usize {
        self.on_boundary.iter().filter(|&&b| b).count()
    }
}

/// `g(q) = max_p (p . q - f(p))` over the primal grid points.
pub fn legendre_transform(f: &GridFunction, dual: &Grid) -> Result<Conjugate, DualityError> {
    for (axis, pts) in f.grid().axes().iter().enumerate() {
        if pts.len() < 2 {
            return Err(DualityError::TooFewPoints {
                axis,
                points: pts.len(),
            });
        }
    }
    if dual.dim() != f.dim() {
        return Err(DualityError::DimensionMismatch {
            primal: f.dim(),
            dual: dual.dim(),
        });
    }
    let primal: Vec<(Vec<f64>, f64)> = (0..f.grid().len())
        .filter(|&i| f.values[i].is_finite())
        .map(|i| (f.grid().point(i), f.values[i]))
        .collect();
    if primal.is_empty() {
        return Err(DualityError::EmptyDomain);
    }
    let finite_index: Vec<usize> = (0..f.grid().len()).filter(|&i| f.values[i].is_finite()).collect();
    let mut values = Vec::with_capacity(dual.len());
    let mut maximizer = Vec::with_capacity(dual.len());
    let mut on_boundary = Vec::with_capacity(dual.len());
    for j in 0..dual.len() {
        let q = dual.point(j);
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (k, (p, fp)) in primal.iter().enumerate() {
            let val = p.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() - fp;
            if val > best {
                best = val;
                arg = k;
            }
        }
        let flat = finite_index[arg];
        values.push(best);
        maximizer.push(flat);
        on_boundary.push(f.grid().on_boundary(flat));
    }
    Ok(Conjugate {
        function: GridFunction::new(dual.clone(), values)?,
        maximizer,
        on_boundary,
    })
}

/// Discrete convexity and growth diagnostics along every axis-aligned line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub convex: bool,
    pub superlinear: bool,
    /// Most negative change between consecutive slopes (0 when convex).
    pub worst_slope_drop: f64,
    /// Smallest outward increase of the end slopes over the mid-range slopes.
    pub boundary_growth: f64,
    pub lines_checked: usize,
}

pub fn check_convex_superlinear(h: &GridFunction) -> ConvexityReport {
    let grid = h.grid();
    let mut worst_drop: f64 = 0.0;
    let mut growth = f64::INFINITY;
    let mut ends_checked = 0;
    let mut lines = 0;
    for axis in 0..grid.dim() {
        let pts = &grid.axes()[axis];
        if pts.len() < 3 {
            continue;
        }
        for start in 0..grid.len() {
            if grid.multi_index(start)[axis] != 0 {
                continue;
            }
            lines += 1;
            let mut idx = grid.multi_index(start);
            let vals: Vec<f64> = (0..pts.len())
                .map(|i| {
                    idx[axis] = i;
                    h.values[grid.flat_index(&idx)]
                })
                .collect();
            let slopes: Vec<Option<f64>> = (0..pts.len() - 1)
                .map(|i| {
                    (vals[i].is_finite() && vals[i + 1].is_finite())
                        .then(|| (vals[i + 1] - vals[i]) / (pts[i + 1] - pts[i]))
                })
                .collect();
            for w in slopes.windows(2) {
                if let (Some(a), Some(b)) = (w[0], w[1]) {
                    let tol = 1e-10 * a.abs().max(b.abs()).max(1.0);
                    if b - a < -tol {
                        worst_drop = worst_drop.min(b - a);
                    }
                }
            }
            let segment_at = |x: f64| pts.partition_point(|&p| p <= x).clamp(1, pts.len() - 1) - 1;
            let (lo, hi) = (pts[0], pts[pts.len() - 1]);
            if hi > 0.0 {
                if let (Some(end), Some(mid)) = (slopes[slopes.len() - 1], slopes[segment_at(0.5 * hi)]) {
                    ends_checked += 1;
                    growth = growth.min(end - mid);
                }
            }
            if lo < 0.0 {
                if let (Some(end), Some(mid)) = (slopes[0], slopes[segment_at(0.5 * lo)]) {
                    ends_checked += 1;
                    growth = growth.min(mid - end);
                }
            }
        }
    }
    let growth = if ends_checked == 0 { 0.0 } else { growth };
    ConvexityReport {
        convex: worst_drop == 0.0,
        superlinear: ends_checked > 0 && growth > 1e-10,
        worst_slope_drop: worst_drop,
        boundary_growth: growth,
        lines_checked: lines,
    }
}

/// Lagrangian `L` and Hamiltonian `H` linked by the discrete conjugate, plus
/// the constant `C` bounding differences of `E L(./E)` by `C sqrt(L)`.
///
/// The quadratic pair `L(v) = |v|^2 / 2` evaluates in closed form in any
/// dimension; its tables hold the separable one-dimensional factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianPair {
    lagrangian: GridFunction,
    hamiltonian: GridFunction,
    c: f64,
    quadratic: bool,
    /// Dual points whose conjugate value hit the primal boundary.
    truncated: usize,
}

impl LagrangianPair {
    /// `L(v) = |v|^2 / 2` tabulated on `[-half_width, half_width]` with
    /// `points` nodes; `H = L*` on the same nodes.
    pub fn quadratic(half_width: f64, points: usize, c: f64) -> Result<Self, DualityError> {
        let grid = Grid::uniform(-half_width, half_width, points)?;
        let l = GridFunction::from_fn(grid.clone(), |v| 0.5 * v[0] * v[0])?;
        let conj = legendre_transform(&l, &grid)?;
        let mut pair = Self {
            truncated: conj.boundary_count(),
            lagrangian: l,
            hamiltonian: conj.function,
            c: 1.0,
            quadratic: true,
        };
        pair.set_constant(c)?;
        Ok(pair)
    }

    /// Tabulated `L`, with `H = L*` computed on `dual`.
    pub fn from_lagrangian(l: GridFunction, dual: &Grid, c: f64) -> Result<Self, DualityError> {
        let conj = legendre_transform(&l, dual)?;
        let mut pair = Self {
            truncated: conj.boundary_count(),
            lagrangian: l,
            hamiltonian: conj.function,
            c: 1.0,
            quadratic: false,
        };
        pair.set_constant(c)?;
        Ok(pair)
    }

    /// Tabulated `H`, with `L = H*` computed on `primal`.
    pub fn from_hamiltonian(h: GridFunction, primal: &Grid, c: f64) -> Result<Self, DualityError> {
        let conj = legendre_transform(&h, primal)?;
        let mut pair = Self {
            truncated: conj.boundary_count(),
            lagrangian: conj.function,
            hamiltonian: h,
            c: 1.0,
            quadratic: false,
        };
        pair.set_constant(c)?;
        Ok(pair)
    }

    pub fn set_constant(&mut self, c: f64) -> Result<(), DualityError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(DualityError::InvalidConstant(c));
        }
        self.c = c;
        Ok(())
    }

    pub fn with_constant(mut self, c: f64) -> Result<Self, DualityError> {
        self.set_constant(c)?;
        Ok(self)
    }

    pub fn lagrangian(&self) -> &GridFunction {
        &self.lagrangian
    }

    pub fn hamiltonian(&self) -> &GridFunction {
        &self.hamiltonian
    }

    pub fn constant(&self) -> f64 {
        self.c
    }

    pub fn is_quadratic(&self) -> bool {
        self.quadratic
    }

    pub fn truncated_points(&self) -> usize {
        self.truncated
    }

    /// Dimension the Lagrangian accepts, `None` for the quadratic (any).
    pub fn input_dim(&self) -> Option<usize> {
        (!self.quadratic).then(|| self.lagrangian.dim())
    }

    /// `L(v)`.
    #[inline]
    pub fn eval(&self, v: &[f64]) -> f64 {
        if self.quadratic {
            0.5 * v.iter().map(|x| x * x).sum::<f64>()
        } else {
            self.lagrangian.eval(v)
        }
    }

    /// `e L(w / e)`, extended to `e = 0` by its limit: `0` when `w = 0` and
    /// `+inf` otherwise (superlinear growth).
    pub fn perspective(&self, w: &[f64], e: f64) -> f64 {
        if e > 0.0 {
            if self.quadratic {
                return 0.5 * w.iter().map(|x| x * x).sum::<f64>() / e;
            }
            let scaled: Vec<f64> = w.iter().map(|x| x / e).collect();
            return e * self.eval(&scaled);
        }
        if w.iter().all(|&x| x == 0.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// `e sqrt(L(w / e))`. For the quadratic this is `|w| / sqrt 2` for every
    /// `e`, including the `e -> 0` limit.
    pub fn sqrt_perspective(&self, w: &[f64], e: f64) -> Result<f64, DualityError> {
        if self.quadratic {
            return Ok(norm(w) / std::f64::consts::SQRT_2);
        }
        if e > 0.0 {
            let scaled: Vec<f64> = w.iter().map(|x| x / e).collect();
            return Ok(e * sqrt_l(self, &scaled)?);
        }
        Ok(if w.iter().all(|&x| x == 0.0) { 0.0 } else { f64::INFINITY })
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sqrt(L(v))`; negative `L(v)` is an error rather than a guessed convention.
pub fn sqrt_l(pair: &LagrangianPair, v: &[f64]) -> Result<f64, DualityError> {
    if pair.quadratic {
        return Ok(norm(v) / std::f64::consts::SQRT_2);
    }
    let l = pair.eval(v);
    if l < 0.0 {
        return Err(DualityError::NegativeLagrangian {
            point: v.to_vec(),
            value: l,
        });
    }
    Ok(l.sqrt())
}
