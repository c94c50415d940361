//! Quotient maps over a finite base grid `Y`, their fibers and sections, and
//! the geometric constants `K`, `ell` and `C`.
//!
//! A base point `z` indexes a fiber `pi^{-1}(z)` in the ambient space. The
//! section `f` lifts each base point into its own fiber, and the obstacle is
//! `g(y) = max_j f_j(y)`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duality::{linspace, sqrt_l, DualityError, LagrangianPair};
use crate::rng::path_stream;

/// Largest fiber distance from `f(y)` to the fiber of `y` accepted as zero.
pub const SECTION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quotient needs at least one base point")]
    NoBasePoints,
    #[error("hyperplane quotient needs at least 3 grid points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate base interval [{0}, {1}]")]
    DegenerateInterval(f64, f64),
    #[error("ambient dimension must be even and positive, got {0}")]
    OddDimension(usize),
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("section leaves the fiber of base point {index}: distance {distance:e}")]
    SectionProperty { index: usize, distance: f64 },
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("fiber oracle failed: {0}")]
    Oracle(String),
    #[error("C is only derivable for the quadratic Lagrangian; supply it in the configuration")]
    NonQuadratic,
    #[error("K must be finite and non-negative, got {0}")]
    InvalidK(f64),
    #[error("a custom fiber oracle cannot be serialized")]
    NotSerializable,
    #[error(transparent)]
    Duality(#[from] DualityError),
}

/// Nearest point of a fiber and its distance.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberPoint {
    pub point: Vec<f64>,
    pub distance: f64,
}

/// User-supplied nearest-point map onto fibers. `nearest(p, z)` returns the
/// point of `pi^{-1}(z)` closest to `p`; ties must resolve to the
/// lexicographically smallest candidate.
pub trait FiberOracle: Send + Sync {
    fn nearest(&self, p: &[f64], z: &[f64]) -> Result<FiberPoint, String>;

    fn name(&self) -> &str {
        "custom"
    }
}

#[derive(Clone)]
pub enum Projection {
    /// Fiber of `z` is the single point `f(z)`.
    Section,
    /// Fiber of scalar `z` is the hyperplane `{x : sum_i x_i = z}`.
    Hyperplane,
    Custom(Arc<dyn FiberOracle>),
}

impl fmt::Debug for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Section => f.write_str("Section"),
            Self::Hyperplane => f.write_str("Hyperplane"),
            Self::Custom(o) => write!(f, "Custom({})", o.name()),
        }
    }
}

/// Section used by [`QuotientModel::hyperplane`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperplaneSection {
    /// `f(y) = (y, 0, ..., 0)`.
    Canonical,
    /// `f(y) = (y + a sin y, -a sin y, b y, -b y, b y, -b y, ...)`.
    Paired { sine: f64, linear: f64 },
}

impl HyperplaneSection {
    fn lift(&self, y: f64, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        match *self {
            Self::Canonical => v[0] = y,
            Self::Paired { sine, linear } => {
                let s = sine * y.sin();
                v[0] = y + s;
                v[1] = -s;
                for pair in v[2..].chunks_mut(2) {
                    pair[0] = linear * y;
                    pair[1] = -linear * y;
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct QuotientModel {
    projection: Projection,
    base_points: Vec<Vec<f64>>,
    /// Tensor layout of the base points, when they form a grid.
    base_axes: Option<Vec<Vec<f64>>>,
    section: Vec<Vec<f64>>,
    g_values: Vec<f64>,
}

fn obstacle(section: &[Vec<f64>]) -> Vec<f64> {
    section
        .iter()
        .map(|f| f.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

fn check_points(points: &[Vec<f64>], what: &'static str) -> Result<usize, GeometryError> {
    let dim = points.first().ok_or(GeometryError::NoBasePoints)?.len();
    for p in points {
        if p.len() != dim {
            return Err(GeometryError::DimensionMismatch {
                what,
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite(what));
        }
    }
    Ok(dim)
}

impl QuotientModel {
    /// `pi = id`, `f = id`: every fiber is a single base point.
    pub fn identity(points: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        check_points(&points, "base points")?;
        let section = points.clone();
        Self::assemble(Projection::Section, points, None, section)
    }

    /// Identity quotient on the tensor grid spanned by `axes`.
    pub fn identity_grid(axes: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        let grid = crate::duality::Grid::new(axes)?;
        let mut model = Self::identity(grid.points())?;
        model.base_axes = Some(grid.axes().to_vec());
        Ok(model)
    }

    /// Uniform one-dimensional identity quotient on `[lo, hi]`.
    pub fn identity_interval(lo: f64, hi: f64, n: usize) -> Result<Self, GeometryError> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(GeometryError::DegenerateInterval(lo, hi));
        }
        Self::identity_grid(vec![linspace(lo, hi, n)])
    }

    /// Singleton fibers `{f(z)}` for an arbitrary embedding `f`.
    pub fn embedded(points: Vec<Vec<f64>>, section: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        check_points(&points, "base points")?;
        Self::assemble(Projection::Section, points, None, section)
    }

    /// Hyperplane fibers `{sum_i x_i = z}` over a uniform grid on `interval`.
    pub fn hyperplane(
        ambient_dim: usize,
        interval: (f64, f64),
        n: usize,
        section: HyperplaneSection,
    ) -> Result<Self, GeometryError> {
        let (lo, hi) = interval;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(GeometryError::DegenerateInterval(lo, hi));
        }
        if ambient_dim == 0 || !ambient_dim.is_multiple_of(2) {
            return Err(GeometryError::OddDimension(ambient_dim));
        }
        if n < 3 {
            return Err(GeometryError::TooFewPoints(n));
        }
        let axis = linspace(lo, hi, n);
        let points: Vec<Vec<f64>> = axis.iter().map(|&y| vec![y]).collect();
        let lifted = axis.iter().map(|&y| section.lift(y, ambient_dim)).collect();
        let mut model = Self::assemble(Projection::Hyperplane, points, None, lifted)?;
        model.base_axes = Some(vec![axis]);
        Ok(model)
    }

    /// Fibers supplied by `oracle`; the section property is checked through it.
    pub fn custom(
        points: Vec<Vec<f64>>,
        section: Vec<Vec<f64>>,
        oracle: Arc<dyn FiberOracle>,
    ) -> Result<Self, GeometryError> {
        check_points(&points, "base points")?;
        Self::assemble(Projection::Custom(oracle), points, None, section)
    }

    /// Records the tensor layout used for finite-difference gradients.
    pub fn with_base_axes(mut self, axes: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        let grid = crate::duality::Grid::new(axes)?;
        if grid.points() != self.base_points {
            return Err(GeometryError::DimensionMismatch {
                what: "base axes",
                expected: self.base_points.len(),
                got: grid.len(),
            });
        }
        self.base_axes = Some(grid.axes().to_vec());
        Ok(self)
    }

    fn assemble(
        projection: Projection,
        base_points: Vec<Vec<f64>>,
        base_axes: Option<Vec<Vec<f64>>>,
        section: Vec<Vec<f64>>,
    ) -> Result<Self, GeometryError> {
        if section.len() != base_points.len() {
            return Err(GeometryError::DimensionMismatch {
                what: "section values",
                expected: base_points.len(),
                got: section.len(),
            });
        }
        check_points(&section, "section values")?;
        if matches!(projection, Projection::Hyperplane) && base_points[0].len() != 1 {
            return Err(GeometryError::DimensionMismatch {
                what: "hyperplane base points",
                expected: 1,
                got: base_points[0].len(),
            });
        }
        let g_values = obstacle(&section);
        let model = Self {
            projection,
            base_points,
            base_axes,
            section,
            g_values,
        };
        for i in 0..model.len() {
            let d = model.fiber_point(&model.section[i], i)?.distance;
            if !(d <= SECTION_TOLERANCE) {
                return Err(GeometryError::SectionProperty { index: i, distance: d });
            }
        }
        Ok(model)
    }

    pub fn len(&self) -> usize {
        self.base_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_points.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.section[0].len()
    }

    pub fn base_dim(&self) -> usize {
        self.base_points[0].len()
    }

    pub fn base_points(&self) -> &[Vec<f64>] {
        &self.base_points
    }

    pub fn base_axes(&self) -> Option<&[Vec<f64>]> {
        self.base_axes.as_deref()
    }

    pub fn section(&self) -> &[Vec<f64>] {
        &self.section
    }

    pub fn g_values(&self) -> &[f64] {
        &self.g_values
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn kind(&self) -> &str {
        match &self.projection {
            Projection::Section => "identity",
            Projection::Hyperplane => "hyperplane",
            Projection::Custom(o) => o.name(),
        }
    }

    /// Nearest point to `p` on the fiber of base point `z`.
    pub fn fiber_point(&self, p: &[f64], z: usize) -> Result<FiberPoint, GeometryError> {
        if p.len() != self.ambient_dim() {
            return Err(GeometryError::DimensionMismatch {
                what: "ambient point",
                expected: self.ambient_dim(),
                got: p.len(),
            });
        }
        match &self.projection {
            Projection::Section => {
                let a = self.section[z].clone();
                let distance = dist(p, &a);
                Ok(FiberPoint { point: a, distance })
            }
            Projection::Hyperplane => {
                let n = p.len() as f64;
                let gap = self.base_points[z][0] - p.iter().sum::<f64>();
                let point = p.iter().map(|x| x + gap / n).collect();
                Ok(FiberPoint {
                    point,
                    distance: gap.abs() / n.sqrt(),
                })
            }
            Projection::Custom(oracle) => {
                let fp = oracle
                    .nearest(p, &self.base_points[z])
                    .map_err(GeometryError::Oracle)?;
                if fp.point.len() != p.len() || !fp.distance.is_finite() || fp.distance < 0.0 {
                    return Err(GeometryError::Oracle(format!(
                        "invalid answer for base point {z}: {fp:?}"
                    )));
                }
                Ok(fp)
            }
        }
    }

    /// Displacement `f(x) - a(x, z)` and its length for section point `x`.
    pub fn displacement(&self, x: usize, z: usize) -> Result<(Vec<f64>, f64), GeometryError> {
        let fp = self.fiber_point(&self.section[x], z)?;
        let w = self.section[x].iter().zip(&fp.point).map(|(a, b)| a - b).collect();
        Ok((w, fp.distance))
    }

    /// Index of the base point nearest to `y` (ties to the smallest index).
    pub fn nearest_base_point(&self, y: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, b) in self.base_points.iter().enumerate() {
            let d = dist(b, y);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn to_json(&self) -> Result<String, GeometryError> {
        let record = QuotientRecord::from_model(self)?;
        Ok(serde_json::to_string_pretty(&record).expect("quotient record serializes"))
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let record: QuotientRecord =
            serde_json::from_str(text).map_err(|e| GeometryError::Oracle(e.to_string()))?;
        record.into_model()
    }
}

/// JSON form of a built-in quotient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuotientRecord {
    pub kind: String,
    pub ambient_dim: usize,
    pub base_dim: usize,
    pub base_points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_axes: Option<Vec<Vec<f64>>>,
    pub section: Vec<Vec<f64>>,
    pub g_values: Vec<f64>,
}

impl QuotientRecord {
    pub fn from_model(model: &QuotientModel) -> Result<Self, GeometryError> {
        if matches!(model.projection, Projection::Custom(_)) {
            return Err(GeometryError::NotSerializable);
        }
        Ok(Self {
            kind: model.kind().to_string(),
            ambient_dim: model.ambient_dim(),
            base_dim: model.base_dim(),
            base_points: model.base_points.clone(),
            base_axes: model.base_axes.clone(),
            section: model.section.clone(),
            g_values: model.g_values.clone(),
        })
    }

    pub fn into_model(self) -> Result<QuotientModel, GeometryError> {
        let projection = match self.kind.as_str() {
            "identity" => Projection::Section,
            "hyperplane" => Projection::Hyperplane,
            _ => return Err(GeometryError::NotSerializable),
        };
        let mut model = QuotientModel::assemble(projection, self.base_points, None, self.section)?;
        if let Some(axes) = self.base_axes {
            model = model.with_base_axes(axes)?;
        }
        if model.g_values != self.g_values {
            return Err(GeometryError::Oracle("stored g values differ from max_j f_j".into()));
        }
        Ok(model)
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `K = max_{y1, y2} d(f(y1), pi^{-1}(y2))`.
pub fn estimate_k(model: &QuotientModel) -> Result<f64, GeometryError> {
    let mut k: f64 = 0.0;
    for x in 0..model.len() {
        for z in 0..model.len() {
            k = k.max(model.fiber_point(&model.section[x], z)?.distance);
        }
    }
    Ok(k)
}

/// Smallest `ell` with `d(f(y1), f(y2)) <= ell d(f(y1), pi^{-1}(y2))` over all
/// base pairs, floored at 1. Infinite when a pair has zero fiber distance but
/// distinct section points.
pub fn estimate_intrinsic_lipschitz(model: &QuotientModel) -> Result<f64, GeometryError> {
    let mut ell: f64 = 1.0;
    for x in 0..model.len() {
        for y in 0..model.len() {
            if x == y {
                continue;
            }
            let num = dist(&model.section[x], &model.section[y]);
            let den = model.fiber_point(&model.section[x], y)?.distance;
            if den > 0.0 {
                ell = ell.max(num / den);
            } else if num > 0.0 {
                return Ok(f64::INFINITY);
            }
        }
    }
    Ok(ell)
}

/// `C` together with a flag for the degenerate `K = 0` geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstant {
    pub value: f64,
    pub degenerate: bool,
}

/// `C = sqrt(2) K`, valid for the quadratic Lagrangian only.
pub fn derive_c(k: f64, pair: &LagrangianPair) -> Result<DerivedConstant, GeometryError> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(GeometryError::InvalidK(k));
    }
    if !pair.is_quadratic() {
        return Err(GeometryError::NonQuadratic);
    }
    Ok(DerivedConstant {
        value: std::f64::consts::SQRT_2 * k,
        degenerate: k == 0.0,
    })
}

/// `K`, `ell`, `C` of a model under a Lagrangian pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicConstants {
    pub k: f64,
    pub ell: f64,
    pub c: f64,
    /// False when `C` was supplied rather than derived.
    pub c_derived: bool,
}

/// Measured sublinearity `sqrt L((f(x) - f(y)) / lambda) <= sqrt L(f(q))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SublinearityReport {
    pub trials: usize,
    /// Smallest `sqrt L(f(q)) - sqrt L((f(x) - f(y)) / lambda)`.
    pub worst_margin: f64,
    /// Largest left/right ratio over trials with a positive right side.
    pub max_ratio: f64,
    pub violations: usize,
}

/// Samples `x, q` from the base grid and `lambda` from `(0, 1]`, snapping
/// `y = x - lambda q` to the nearest base point.
pub fn check_sublinearity(
    model: &QuotientModel,
    pair: &LagrangianPair,
    trials: usize,
    seed: u64,
) -> Result<SublinearityReport, GeometryError> {
    let mut rng = path_stream(seed, 0);
    let n = model.len();
    let mut report = SublinearityReport {
        trials,
        worst_margin: f64::INFINITY,
        max_ratio: 0.0,
        violations: 0,
    };
    for _ in 0..trials {
        let x = rng.random_range(0..n);
        let q = rng.random_range(0..n);
        let lambda = 1.0 - rng.random::<f64>();
        let target: Vec<f64> = model.base_points[x]
            .iter()
            .zip(&model.base_points[q])
            .map(|(a, b)| a - lambda * b)
            .collect();
        let y = model.nearest_base_point(&target);
        let w: Vec<f64> = model.section[x]
            .iter()
            .zip(&model.section[y])
            .map(|(a, b)| (a - b) / lambda)
            .collect();
        let lhs = sqrt_l(pair, &w)?;
        let rhs = sqrt_l(pair, &model.section[q])?;
        let margin = rhs - lhs;
        report.worst_margin = report.worst_margin.min(margin);
        if rhs > 0.0 {
            report.max_ratio = report.max_ratio.max(lhs / rhs);
        }
        if margin < -SECTION_TOLERANCE * rhs.max(1.0) {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Largest violation of `d^2(f(x), fib_z) - d^2(f(y), fib_z) <= 2 K d(f(x), f(y))`
/// over all base triples (non-positive when the chain holds).
pub fn triangle_chain_excess(model: &QuotientModel, k: f64) -> Result<f64, GeometryError> {
    let n = model.len();
    let mut d2 = vec![0.0; n * n];
    for x in 0..n {
        for z in 0..n {
            let d = model.fiber_point(&model.section[x], z)?.distance;
            d2[x * n + z] = d * d;
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for x in 0..n {
        for y in 0..n {
            let sep = 2.0 * k * dist(&model.section[x], &model.section[y]);
            for z in 0..n {
                worst = worst.max(d2[x * n + z] - d2[y * n + z] - sep);
            }
        }
    }
    Ok(worst)
}
