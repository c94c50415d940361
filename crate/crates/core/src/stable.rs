//! One-sided stable subordinator `D` and its inverse `E`.
//!
//! `D_1` has Laplace transform `exp(-s^beta)` and is drawn with Kanter's
//! representation `D_1 = (A(U) / W)^((1 - beta) / beta)`, `U ~ U(0, pi)`,
//! `W ~ Exp(1)`. Self-similarity `D_tau = tau^(1/beta) D_1` gives the
//! marginal law of the inverse process as `E_t = (t / D_1)^beta`.
//!
//! Densities use Zolotarev's integral over the same function `A`:
//!
//! ```text
//! p_D(x) = beta / ((1 - beta) pi x) * int_0^pi y(phi) exp(-y(phi)) dphi,
//! y(phi) = A(phi) x^(-beta / (1 - beta)).
//! ```

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};
use thiserror::Error;

use crate::quadrature::{self, QuadratureError, Tolerance};
use crate::rng::{open_uniform, path_stream, unit_exponential};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StableError {
    #[error("fractional order must lie strictly inside (0, 1), got {0}")]
    InvalidOrder(f64),
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("time must be finite and non-negative, got {0}")]
    NegativeTime(f64),
    #[error("{name} must be {requirement}, got {value}")]
    InvalidArgument {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("density quadrature failed: {0}")]
    Quadrature(#[from] QuadratureError),
}

/// Order `beta` of the Caputo derivative, validated to lie in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FractionalOrder {
    beta: f64,
    gamma_one_minus: f64,
    gamma_two_minus: f64,
    gamma_one_plus: f64,
}

impl FractionalOrder {
    pub fn new(beta: f64) -> Result<Self, StableError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(StableError::InvalidOrder(beta));
        }
        Ok(Self {
            beta,
            gamma_one_minus: gamma(1.0 - beta),
            gamma_two_minus: gamma(2.0 - beta),
            gamma_one_plus: gamma(1.0 + beta),
        })
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.beta
    }

    /// `1 - beta`.
    #[inline]
    pub fn complement(&self) -> f64 {
        1.0 - self.beta
    }

    /// `Gamma(1 - beta)`.
    pub fn gamma_one_minus(&self) -> f64 {
        self.gamma_one_minus
    }

    /// `Gamma(2 - beta)`, the normalisation of the L1 Caputo weights.
    pub fn gamma_two_minus(&self) -> f64 {
        self.gamma_two_minus
    }

    /// `Gamma(1 + beta)`.
    pub fn gamma_one_plus(&self) -> f64 {
        self.gamma_one_plus
    }
}

impl TryFrom<f64> for FractionalOrder {
    type Error = StableError;
    fn try_from(beta: f64) -> Result<Self, Self::Error> {
        Self::new(beta)
    }
}

impl From<FractionalOrder> for f64 {
    fn from(order: FractionalOrder) -> f64 {
        order.beta
    }
}

/// I.i.d. draws of `D_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StableSample {
    pub values: Vec<f64>,
    pub seed: u64,
    pub beta: FractionalOrder,
}

/// I.i.d. draws of `E_t` at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseSample {
    pub values: Vec<f64>,
    pub t: f64,
    pub beta: FractionalOrder,
}

/// `ln A(phi)` for Kanter's function
/// `A(phi) = (sin(b phi) / sin phi)^(1/(1-b)) * sin((1-b) phi) / sin(b phi)`.
fn kanter_ln_a(beta: f64, phi: f64) -> f64 {
    let one_minus = 1.0 - beta;
    if phi <= 0.0 {
        return (beta / one_minus) * beta.ln() + one_minus.ln();
    }
    if phi >= PI {
        return f64::INFINITY;
    }
    let ln_sin_b = (beta * phi).sin().ln();
    (ln_sin_b - phi.sin().ln()) / one_minus + (one_minus * phi).sin().ln() - ln_sin_b
}

/// One draw of `D_1` from two independent uniforms.
pub(crate) fn draw_stable<R: rand::Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    let phi = PI * open_uniform(rng);
    let w = unit_exponential(rng);
    let ln_d = (1.0 - beta) / beta * (kanter_ln_a(beta, phi) - w.ln());
    ln_d.exp()
}

/// Draws `n` copies of `D_1`; path `i` uses the stream `(seed, i)`.
pub fn sample_stable(beta: FractionalOrder, n: usize, seed: u64) -> Result<StableSample, StableError> {
    if n == 0 {
        return Err(StableError::EmptySample);
    }
    let b = beta.value();
    let values = (0..n as u64)
        .into_par_iter()
        .map(|i| draw_stable(b, &mut path_stream(seed, i)))
        .collect();
    Ok(StableSample { values, seed, beta })
}

fn check_time(t: f64) -> Result<(), StableError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(StableError::NegativeTime(t))
    }
}

/// `E_t = (t / D_1)^beta` for one path.
#[inline]
pub fn inverse_time(beta: f64, t: f64, d1: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        (t / d1).powf(beta)
    }
}

/// Draws `n` copies of `E_t` through the same `D_1` streams as [`sample_stable`].
pub fn sample_inverse(
    beta: FractionalOrder,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<InverseSample, StableError> {
    check_time(t)?;
    let stable = sample_stable(beta, n, seed)?;
    Ok(inverse_from_stable(&stable, t).expect("time already validated"))
}

/// Maps existing `D_1` draws to `E_t`, keeping the per-path coupling.
pub fn inverse_from_stable(sample: &StableSample, t: f64) -> Result<InverseSample, StableError> {
    check_time(t)?;
    let b = sample.beta.value();
    Ok(InverseSample {
        values: sample.values.iter().map(|&d| inverse_time(b, t, d)).collect(),
        t,
        beta: sample.beta,
    })
}

/// `E[E_t^lambda] = Gamma(lambda + 1) / Gamma(lambda beta + 1) t^(lambda beta)`.
pub fn inverse_moment(beta: FractionalOrder, lambda: f64, t: f64) -> Result<f64, StableError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(StableError::InvalidArgument {
            name: "lambda",
            requirement: "finite and positive",
            value: lambda,
        });
    }
    check_time(t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let b = beta.value();
    let ln_c = ln_gamma(lambda + 1.0) - ln_gamma(lambda * b + 1.0);
    Ok((ln_c + lambda * b * t.ln()).exp())
}

/// Smallest `phi` in [0, pi] with `ln A(phi) >= level`.
fn kanter_level(beta: f64, level: f64) -> f64 {
    if kanter_ln_a(beta, 0.0) >= level {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0_f64, PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kanter_ln_a(beta, mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Breakpoints in `phi` where `y(phi)` crosses a ladder of levels, so each
/// piece of the Zolotarev integrand varies by a bounded factor.
fn zolotarev_breakpoints(beta: f64, ln_scale: f64) -> Vec<f64> {
    let ln_y0 = kanter_ln_a(beta, 0.0) + ln_scale;
    let mut levels = Vec::new();
    if ln_y0 < 0.0 {
        let mut k = 60;
        while k >= 1 {
            let lvl = -(k as f64) * std::f64::consts::LN_2;
            if lvl > ln_y0 {
                levels.push(lvl);
            }
            k -= 1;
        }
    }
    let peak = ln_y0.exp().max(1.0);
    for k in -1..=7 {
        levels.push((peak + 2f64.powi(k)).ln());
    }
    let mut points = vec![0.0];
    for lvl in levels {
        let phi = kanter_level(beta, lvl - ln_scale);
        if phi > *points.last().unwrap() && phi < PI {
            points.push(phi);
        }
    }
    points.push(PI);
    points
}

fn zolotarev_tolerance() -> Tolerance {
    Tolerance {
        abs: 1e-300,
        rel: 1e-11,
        max_intervals: 400,
    }
}

/// Density of `D_1` at `s > 0`.
pub fn stable_pdf(beta: FractionalOrder, s: f64) -> Result<f64, StableError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(StableError::InvalidArgument {
            name: "s",
            requirement: "finite and positive",
            value: s,
        });
    }
    let b = beta.value();
    let ln_scale = -(b / (1.0 - b)) * s.ln();
    if kanter_ln_a(b, 0.0) + ln_scale > 700f64.ln() {
        // exp(-y) underflows on the whole range: far left tail.
        return Ok(0.0);
    }
    let breaks = zolotarev_breakpoints(b, ln_scale);
    let integrand = |phi: f64| {
        let ln_y = kanter_ln_a(b, phi) + ln_scale;
        if ln_y > 700f64.ln() {
            0.0
        } else {
            let y = ln_y.exp();
            y * (-y).exp()
        }
    };
    let integral = quadrature::integrate_pieces(integrand, &breaks, zolotarev_tolerance())?;
    Ok(b / ((1.0 - b) * PI * s) * integral.value)
}

/// Distribution function of `D_1`, `P(D_1 <= s) = (1/pi) int_0^pi exp(-y(phi)) dphi`.
pub fn stable_cdf(beta: FractionalOrder, s: f64) -> Result<f64, StableError> {
    if s.is_nan() {
        return Err(StableError::InvalidArgument {
            name: "s",
            requirement: "a number",
            value: s,
        });
    }
    if s <= 0.0 {
        return Ok(0.0);
    }
    if s == f64::INFINITY {
        return Ok(1.0);
    }
    let b = beta.value();
    let ln_scale = -(b / (1.0 - b)) * s.ln();
    if kanter_ln_a(b, 0.0) + ln_scale > 700f64.ln() {
        return Ok(0.0);
    }
    let breaks = zolotarev_breakpoints(b, ln_scale);
    let integrand = |phi: f64| {
        let ln_y = kanter_ln_a(b, phi) + ln_scale;
        if ln_y > 700f64.ln() {
            0.0
        } else {
            (-ln_y.exp()).exp()
        }
    };
    let integral = quadrature::integrate_pieces(integrand, &breaks, zolotarev_tolerance())?;
    Ok((integral.value / PI).clamp(0.0, 1.0))
}

/// Density of `E_t` at `s`: `(t / beta) s^(-1 - 1/beta) p_D(t s^(-1/beta))`.
pub fn inverse_pdf(beta: FractionalOrder, s: f64, t: f64) -> Result<f64, StableError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(StableError::InvalidArgument {
            name: "s",
            requirement: "finite and positive",
            value: s,
        });
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(StableError::InvalidArgument {
            name: "t",
            requirement: "finite and positive",
            value: t,
        });
    }
    let b = beta.value();
    let x = t * s.powf(-1.0 / b);
    if x == f64::INFINITY {
        // s^(-1/beta) overflowed; the density is bounded near s = 0.
        return Ok(t.powf(-b) / beta.gamma_one_minus());
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let pd = stable_pdf(beta, x)?;
    Ok(t / b * (-(1.0 + 1.0 / b) * s.ln()).exp() * pd)
}

/// Distribution function of `E_t` at ascending points, accumulated by
/// integrating [`inverse_pdf`] between consecutive points.
pub fn inverse_cdf_at(beta: FractionalOrder, t: f64, points: &[f64]) -> Result<Vec<f64>, StableError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(StableError::InvalidArgument {
            name: "t",
            requirement: "finite and positive",
            value: t,
        });
    }
    let tol = Tolerance {
        abs: 1e-13,
        rel: 1e-10,
        max_intervals: 400,
    };
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    let failure = std::cell::RefCell::new(None);
    for &p in points {
        if !(p >= prev && p.is_finite()) {
            return Err(StableError::InvalidArgument {
                name: "points",
                requirement: "finite, non-negative and ascending",
                value: p,
            });
        }
        let piece = quadrature::integrate(
            |s| match inverse_pdf(beta, s, t) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            },
            prev,
            p,
            tol,
        )?;
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        acc += piece.value;
        out.push(acc.min(1.0));
        prev = p;
    }
    Ok(out)
}

/// Upper bound on the Kolmogorov-Smirnov distance between a sample and a
/// continuous distribution function, evaluated only at `checkpoints` order
/// statistics. Monotonicity of both functions bounds the gaps in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsBound {
    pub statistic: f64,
    pub checkpoints: usize,
    pub n: usize,
}

pub fn ks_bound<F>(sample: &[f64], checkpoints: usize, cdf_at: F) -> Result<KsBound, StableError>
where
    F: FnOnce(&[f64]) -> Result<Vec<f64>, StableError>,
{
    if sample.is_empty() {
        return Err(StableError::EmptySample);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = checkpoints.clamp(2, n.max(2));
    // 1-based ranks of the checkpoints, always including the extremes.
    let mut ranks: Vec<usize> = (0..k).map(|j| 1 + j * (n - 1) / (k - 1).max(1)).collect();
    ranks.dedup();
    let xs: Vec<f64> = ranks.iter().map(|&r| sorted[r - 1]).collect();
    let fs = cdf_at(&xs)?;
    let nf = n as f64;
    let mut d: f64 = fs[0].max((ranks[0] - 1) as f64 / nf);
    for (j, (&r, &f)) in ranks.iter().zip(&fs).enumerate() {
        d = d.max((r as f64 / nf - f).abs()).max(((r - 1) as f64 / nf - f).abs());
        if let (Some(&r1), Some(&f1)) = (ranks.get(j + 1), fs.get(j + 1)) {
            d = d.max((r1 - 1) as f64 / nf - f).max(f1 - r as f64 / nf);
        }
    }
    let last = *ranks.last().unwrap();
    d = d.max(1.0 - fs[fs.len() - 1]).max(1.0 - last as f64 / nf);
    Ok(KsBound {
        statistic: d,
        checkpoints: ranks.len(),
        n,
    })
}

/// Monte Carlo paths sharing one `D_1` draw each across all times.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub beta: FractionalOrder,
    pub seed: u64,
    d1: Vec<f64>,
}

impl PathEnsemble {
    pub fn new(beta: FractionalOrder, n: usize, seed: u64) -> Result<Self, StableError> {
        let sample = sample_stable(beta, n, seed)?;
        Ok(Self {
            beta,
            seed,
            d1: sample.values,
        })
    }

    pub fn len(&self) -> usize {
        self.d1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d1.is_empty()
    }

    pub fn stable_draws(&self) -> &[f64] {
        &self.d1
    }

    /// `E_t` on path `i`.
    #[inline]
    pub fn inverse_time(&self, i: usize, t: f64) -> f64 {
        inverse_time(self.beta.value(), t, self.d1[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(b: f64) -> FractionalOrder {
        FractionalOrder::new(b).unwrap()
    }

    fn levy_pdf(s: f64) -> f64 {
        (-1.0 / (4.0 * s)).exp() / (2.0 * PI.sqrt() * s.powf(1.5))
    }

    #[test]
    fn order_rejects_endpoints() {
        for b in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(FractionalOrder::new(b).is_err(), "{b}");
        }
        let o = order(0.5);
        assert!((o.gamma_one_minus() - PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn order_deserializes_with_validation() {
        let o: FractionalOrder = serde_json::from_str("0.25").unwrap();
        assert_eq!(o.value(), 0.25);
        assert!(serde_json::from_str::<FractionalOrder>("1.0").is_err());
    }

    #[test]
    fn sample_rejects_zero_count() {
        assert_eq!(sample_stable(order(0.5), 0, 1), Err(StableError::EmptySample));
    }

    #[test]
    fn inverse_rejects_negative_time() {
        assert!(matches!(
            sample_inverse(order(0.5), -1.0, 10, 1),
            Err(StableError::NegativeTime(_))
        ));
    }

    #[test]
    fn inverse_at_zero_time_is_zero() {
        let s = sample_inverse(order(0.4), 0.0, 1000, 9).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn draws_are_positive_and_reproducible() {
        let a = sample_stable(order(0.3), 5000, 11).unwrap();
        let b = sample_stable(order(0.3), 5000, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|&v| v > 0.0 && v.is_finite()));
    }

    #[test]
    fn near_unit_order_concentrates_at_one() {
        let mut s = sample_stable(order(0.999), 10_000, 5).unwrap().values;
        s.sort_by(f64::total_cmp);
        let median = s[s.len() / 2];
        assert!((0.8..=1.25).contains(&median), "median {median}");
    }

    #[test]
    fn moment_formula_values() {
        let o = order(0.5);
        assert!((inverse_moment(o, 1.0, 1.0).unwrap() - 2.0 / PI.sqrt()).abs() < 1e-13);
        assert!((inverse_moment(o, 2.0, 4.0).unwrap() - 8.0).abs() < 1e-12);
        assert_eq!(inverse_moment(order(0.3), 1.7, 0.0).unwrap(), 0.0);
        assert!(inverse_moment(o, 0.0, 1.0).is_err());
        assert!(inverse_moment(o, 1.0, -1.0).is_err());
    }

    #[test]
    fn stable_pdf_matches_levy_closed_form() {
        let o = order(0.5);
        assert!((stable_pdf(o, 1.0).unwrap() - 0.219_695_644_733_861_3).abs() < 1e-9);
        assert!((stable_pdf(o, 0.25).unwrap() - 0.830_214_994_841_189_5).abs() < 1e-8);
        for s in [0.01, 0.05, 0.3, 2.0, 17.0, 1e3, 1e6, 1e10] {
            let got = stable_pdf(o, s).unwrap();
            let want = levy_pdf(s);
            assert!((got - want).abs() <= 1e-8 * want, "s={s}: {got} vs {want}");
        }
    }

    #[test]
    fn stable_cdf_matches_levy_closed_form() {
        // P(D <= s) = erfc(1 / (2 sqrt(s))) for the Levy law.
        let o = order(0.5);
        for s in [0.05f64, 0.5, 1.0, 10.0, 1e4] {
            let want = statrs::function::erf::erfc(1.0 / (2.0 * s.sqrt()));
            let got = stable_cdf(o, s).unwrap();
            assert!((got - want).abs() < 1e-10, "s={s}: {got} vs {want}");
        }
    }

    #[test]
    fn inverse_pdf_half_gaussian() {
        let o = order(0.5);
        let want = (-0.25f64).exp() / PI.sqrt();
        assert!((inverse_pdf(o, 1.0, 1.0).unwrap() - want).abs() < 1e-9);
        let want = (-0.25f64).exp() / (2.0 * PI.sqrt());
        assert!((inverse_pdf(o, 2.0, 4.0).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn pdf_rejects_non_positive_arguments() {
        let o = order(0.5);
        assert!(stable_pdf(o, 0.0).is_err());
        assert!(inverse_pdf(o, 1.0, 0.0).is_err());
        assert!(inverse_pdf(o, -1.0, 1.0).is_err());
    }

    #[test]
    fn inverse_pdf_near_origin_is_bounded() {
        // E_t has density t^(-beta) / Gamma(1 - beta) at s = 0+.
        for b in [0.3, 0.5, 0.8] {
            let o = order(b);
            let got = inverse_pdf(o, 1e-6, 1.0).unwrap();
            let want = 1.0 / o.gamma_one_minus();
            assert!((got - want).abs() < 1e-3 * want, "beta={b}: {got} vs {want}");
        }
    }

    #[test]
    fn ks_bound_detects_shift() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let uniform = |xs: &[f64]| Ok(xs.to_vec());
        let good = ks_bound(&s, 100, uniform).unwrap();
        assert!(good.statistic < 0.02, "{}", good.statistic);
        let shifted = |xs: &[f64]| Ok(xs.iter().map(|x| (x * 0.8).min(1.0)).collect());
        let bad = ks_bound(&s, 100, shifted).unwrap();
        assert!(bad.statistic > 0.15);
    }
}
