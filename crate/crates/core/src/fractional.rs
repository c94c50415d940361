//! Caputo and Riemann-Liouville derivatives and the fractional integral on
//! uniform time grids.
//!
//! Every operator is a lower-triangular linear map on the node values. The
//! `*_noisy` variants also push per-node standard errors through the same
//! coefficients (root of the kernel-weighted sum of squares), treating node
//! errors as independent.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::stable::FractionalOrder;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FractionalError {
    #[error("series needs at least 2 values, got {0}")]
    TooShort(usize),
    #[error("time step must be finite and positive, got {0}")]
    InvalidStep(f64),
    #[error("series must start at t = 0, starts at {0}")]
    NonZeroStart(f64),
    #[error("time grid is not uniform at index {0}")]
    NonUniform(usize),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Values on the uniform grid `t0 + k dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self, FractionalError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FractionalError::InvalidStep(dt));
        }
        if values.len() < 2 {
            return Err(FractionalError::TooShort(values.len()));
        }
        Ok(Self { t0, dt, values })
    }

    /// Samples `f` at `0, dt, ..., (n - 1) dt`.
    pub fn from_fn(dt: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, FractionalError> {
        Self::new(0.0, dt, (0..n).map(|k| f(k as f64 * dt)).collect())
    }

    /// Builds a series from explicit times, which must be evenly spaced.
    pub fn from_samples(times: &[f64], values: Vec<f64>) -> Result<Self, FractionalError> {
        if times.len() != values.len() {
            return Err(FractionalError::LengthMismatch {
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.len() < 2 {
            return Err(FractionalError::TooShort(times.len()));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        for (k, &t) in times.iter().enumerate() {
            if (t - (times[0] + k as f64 * dt)).abs() > 1e-9 * dt.max(t.abs()) {
                return Err(FractionalError::NonUniform(k));
            }
        }
        Self::new(times[0], dt, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    /// Two-column CSV `t,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{v}", self.time(k));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, FractionalError> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let mut next = || -> Result<f64, FractionalError> {
                fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| FractionalError::Csv {
                        line: i + 1,
                        message: "expected two numeric fields".into(),
                    })
            };
            times.push(next()?);
            values.push(next()?);
        }
        Self::from_samples(&times, values)
    }

    fn require_origin(&self) -> Result<(), FractionalError> {
        if self.t0 != 0.0 {
            return Err(FractionalError::NonZeroStart(self.t0));
        }
        Ok(())
    }
}

/// `(k + 1)^(1 - b) - k^(1 - b)` for `k = 0..n`.
fn l1_weights(b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| ((k + 1) as f64).powf(1.0 - b) - (k as f64).powf(1.0 - b))
        .collect()
}

/// Coefficient of `values[m]` in the L1 sum at node `n`.
fn l1_coefficient(w: &[f64], n: usize, m: usize) -> f64 {
    let up = if m >= 1 { w[n - m] } else { 0.0 };
    let down = if m < n { w[n - m - 1] } else { 0.0 };
    up - down
}

fn rss(coeffs: impl Iterator<Item = f64>, stderr: &[f64]) -> f64 {
    coeffs
        .zip(stderr)
        .map(|(c, s)| (c * s) * (c * s))
        .sum::<f64>()
        .sqrt()
}

fn check_noise(series: &TimeSeries, stderr: &[f64]) -> Result<(), FractionalError> {
    if stderr.len() != series.len() {
        return Err(FractionalError::LengthMismatch {
            expected: series.len(),
            got: stderr.len(),
        });
    }
    Ok(())
}

/// L1 Caputo derivative at `t_1, ..., t_{N-1}`.
pub fn caputo_l1(series: &TimeSeries, beta: FractionalOrder) -> Result<TimeSeries, FractionalError> {
    series.require_origin()?;
    let b = beta.value();
    let v = &series.values;
    let w = l1_weights(b, v.len());
    let scale = series.dt.powf(-b) / beta.gamma_two_minus();
    let out = (1..v.len())
        .map(|n| scale * (0..n).map(|k| w[k] * (v[n - k] - v[n - k - 1])).sum::<f64>())
        .collect();
    // A two-node input yields a single output node, so no length check here.
    Ok(TimeSeries {
        t0: series.dt,
        dt: series.dt,
        values: out,
    })
}

/// [`caputo_l1`] plus propagated standard errors.
pub fn caputo_l1_noisy(
    series: &TimeSeries,
    stderr: &[f64],
    beta: FractionalOrder,
) -> Result<(TimeSeries, Vec<f64>), FractionalError> {
    check_noise(series, stderr)?;
    let out = caputo_l1(series, beta)?;
    let w = l1_weights(beta.value(), series.len());
    let scale = series.dt.powf(-beta.value()) / beta.gamma_two_minus();
    let noise = (1..series.len())
        .map(|n| scale * rss((0..=n).map(|m| l1_coefficient(&w, n, m)), stderr))
        .collect();
    Ok((out, noise))
}

/// Riemann-Liouville derivative of order `alpha` at `t_1, ..., t_{N-1}`:
/// the L1 Caputo sum plus the exact `phi(0) t^(-alpha) / Gamma(1 - alpha)` term.
pub fn rl_derivative(series: &TimeSeries, alpha: FractionalOrder) -> Result<TimeSeries, FractionalError> {
    let mut out = caputo_l1(series, alpha)?;
    let phi0 = series.values[0];
    if phi0 != 0.0 {
        let g = alpha.gamma_one_minus();
        for (k, v) in out.values.iter_mut().enumerate() {
            let t = (k + 1) as f64 * series.dt;
            *v += phi0 * t.powf(-alpha.value()) / g;
        }
    }
    Ok(out)
}

/// [`rl_derivative`] plus propagated standard errors.
pub fn rl_derivative_noisy(
    series: &TimeSeries,
    stderr: &[f64],
    alpha: FractionalOrder,
) -> Result<(TimeSeries, Vec<f64>), FractionalError> {
    check_noise(series, stderr)?;
    let out = rl_derivative(series, alpha)?;
    let a = alpha.value();
    let w = l1_weights(a, series.len());
    let scale = series.dt.powf(-a) / alpha.gamma_two_minus();
    let g = alpha.gamma_one_minus();
    let noise = (1..series.len())
        .map(|n| {
            let t = n as f64 * series.dt;
            let coeffs = (0..=n).map(|m| {
                let c = scale * l1_coefficient(&w, n, m);
                if m == 0 {
                    c + t.powf(-a) / g
                } else {
                    c
                }
            });
            rss(coeffs, stderr)
        })
        .collect();
    Ok((out, noise))
}

/// Product-trapezoid weights of the fractional integral at node `n`, before
/// the common factor `dt^alpha / Gamma(alpha + 2)`.
fn integral_weights(a: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return vec![0.0];
    }
    let p = a + 1.0;
    let nf = n as f64;
    let mut w = Vec::with_capacity(n + 1);
    w.push((nf - 1.0).powf(p) - (nf - a - 1.0) * nf.powf(a));
    for j in 1..n {
        let d = (n - j) as f64;
        w.push((d + 1.0).powf(p) - 2.0 * d.powf(p) + (d - 1.0).powf(p));
    }
    w.push(1.0);
    w
}

/// Fractional integral of order `alpha` at every node, `I(t_0) = 0`.
pub fn fractional_integral(series: &TimeSeries, alpha: FractionalOrder) -> Result<TimeSeries, FractionalError> {
    series.require_origin()?;
    let a = alpha.value();
    let scale = series.dt.powf(a) / gamma(a + 2.0);
    let v = &series.values;
    let out = (0..v.len())
        .map(|n| scale * integral_weights(a, n).iter().zip(v).map(|(w, x)| w * x).sum::<f64>())
        .collect();
    TimeSeries::new(0.0, series.dt, out)
}

/// [`fractional_integral`] plus propagated standard errors.
pub fn fractional_integral_noisy(
    series: &TimeSeries,
    stderr: &[f64],
    alpha: FractionalOrder,
) -> Result<(TimeSeries, Vec<f64>), FractionalError> {
    check_noise(series, stderr)?;
    let out = fractional_integral(series, alpha)?;
    let a = alpha.value();
    let scale = series.dt.powf(a) / gamma(a + 2.0);
    let noise = (0..series.len())
        .map(|n| scale * rss(integral_weights(a, n).into_iter(), stderr))
        .collect();
    Ok((out, noise))
}

/// `Gamma(p + 1) / Gamma(p + 1 - beta) t^(p - beta)`, the Caputo derivative of `t^p`.
pub fn caputo_power_rule(p: f64, beta: f64, t: f64) -> f64 {
    gamma(p + 1.0) / gamma(p + 1.0 - beta) * t.powf(p - beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn order(b: f64) -> FractionalOrder {
        FractionalOrder::new(b).unwrap()
    }

    fn max_rel_error(got: &TimeSeries, exact: impl Fn(f64) -> f64) -> f64 {
        got.values
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let e = exact(got.time(k));
                ((v - e) / e).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_series_has_zero_derivative() {
        let s = TimeSeries::from_fn(0.1, 11, |_| 3.5).unwrap();
        let d = caputo_l1(&s, order(0.4)).unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d.t0, 0.1);
        assert!(d.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_series_matches_power_rule() {
        // The L1 scheme is exact for piecewise-linear data.
        let s = TimeSeries::from_fn(1e-2, 101, |t| t).unwrap();
        let d = caputo_l1(&s, order(0.5)).unwrap();
        let err = max_rel_error(&d, |t| 2.0 * (t / std::f64::consts::PI).sqrt());
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn power_beta_gives_constant() {
        for b in [0.3, 0.5, 0.8] {
            let s = TimeSeries::from_fn(1e-3, 1001, |t| t.powf(b)).unwrap();
            let d = caputo_l1(&s, order(b)).unwrap();
            let want = gamma(b + 1.0);
            let last = *d.values.last().unwrap();
            assert!(((last - want) / want).abs() < 1e-2, "beta={b}: {last} vs {want}");
        }
    }

    #[test]
    fn rl_examples() {
        let a = order(0.5);
        let s = TimeSeries::from_fn(1e-2, 101, |t| t).unwrap();
        let d = rl_derivative(&s, a).unwrap();
        assert!(max_rel_error(&d, |t| 2.0 * (t / std::f64::consts::PI).sqrt()) < 1e-12);
        let zero = TimeSeries::from_fn(1e-2, 11, |_| 0.0).unwrap();
        assert!(rl_derivative(&zero, a).unwrap().values.iter().all(|&v| v == 0.0));
        let s = TimeSeries::from_fn(1e-3, 1001, |t| t.sqrt()).unwrap();
        let d = rl_derivative(&s, a).unwrap();
        let want = gamma(1.5);
        assert!((d.values.last().unwrap() - want).abs() < 1e-2 * want);
        // A constant has RL derivative phi(0) t^(-alpha) / Gamma(1 - alpha).
        let one = TimeSeries::from_fn(0.1, 11, |_| 1.0).unwrap();
        let d = rl_derivative(&one, a).unwrap();
        assert!((d.values[9] - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn integral_examples() {
        let a = order(0.5);
        let one = TimeSeries::from_fn(1e-2, 101, |_| 1.0).unwrap();
        let i = fractional_integral(&one, a).unwrap();
        assert_eq!(i.values[0], 0.0);
        for k in 1..i.len() {
            let t = i.time(k);
            let want = t.sqrt() / gamma(1.5);
            assert!((i.values[k] - want).abs() < 1e-12 * want.max(1.0), "t={t}");
        }
        let zero = TimeSeries::from_fn(1e-2, 11, |_| 0.0).unwrap();
        assert!(fractional_integral(&zero, a).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn integral_of_derivative_round_trips() {
        // Observed error shrinks when dt halves; phi(0) = 0 so no correction.
        let a = order(0.5);
        let mut errors = Vec::new();
        for n in [101usize, 201, 401] {
            let dt = 1.0 / (n - 1) as f64;
            let s = TimeSeries::from_fn(dt, n, |t| t * t).unwrap();
            let d = rl_derivative(&s, a).unwrap();
            let mut full = vec![0.0];
            full.extend(d.values);
            let back = fractional_integral(&TimeSeries::new(0.0, dt, full).unwrap(), a).unwrap();
            let err = back
                .values
                .iter()
                .zip(&s.values)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            errors.push(err);
        }
        assert!(errors[0] < 1e-2);
        assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
    }

    #[test]
    fn convergence_order_on_square() {
        for b in [0.3, 0.5, 0.8] {
            let err = |n: usize| {
                let dt = 1.0 / n as f64;
                let s = TimeSeries::from_fn(dt, n + 1, |t| t * t).unwrap();
                let d = caputo_l1(&s, order(b)).unwrap();
                d.values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (v - caputo_power_rule(2.0, b, d.time(k))).abs())
                    .fold(0.0, f64::max)
            };
            let rate = (err(200) / err(400)).log2();
            assert!((rate - (2.0 - b)).abs() < 0.15, "beta={b}: rate {rate}");
        }
    }

    #[test]
    fn non_increasing_series_has_non_positive_derivative() {
        let s = TimeSeries::from_fn(0.05, 21, |t| 3.0 - t.sqrt() - (t - 0.5).max(0.0)).unwrap();
        assert!(caputo_l1(&s, order(0.6)).unwrap().values.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn rejects_invalid_series() {
        assert_eq!(TimeSeries::new(0.0, 0.1, vec![1.0]).unwrap_err(), FractionalError::TooShort(1));
        assert!(TimeSeries::new(0.0, 0.0, vec![1.0, 2.0]).is_err());
        assert_eq!(
            TimeSeries::from_samples(&[0.0, 0.1, 0.3], vec![0.0; 3]).unwrap_err(),
            FractionalError::NonUniform(1)
        );
        let shifted = TimeSeries::new(0.5, 0.1, vec![1.0, 2.0]).unwrap();
        assert_eq!(
            caputo_l1(&shifted, order(0.5)).unwrap_err(),
            FractionalError::NonZeroStart(0.5)
        );
    }

    #[test]
    fn noise_propagation_matches_explicit_coefficients() {
        // With a single noisy node the propagated error is |coefficient| * se.
        let b = order(0.5);
        let s = TimeSeries::from_fn(0.1, 6, |t| t).unwrap();
        let mut se = vec![0.0; 6];
        se[2] = 1.0;
        let (_, noise) = caputo_l1_noisy(&s, &se, b).unwrap();
        // Perturbing node 2 by one unit moves each output by the coefficient.
        let mut bumped = s.clone();
        bumped.values[2] += 1.0;
        let base = caputo_l1(&s, b).unwrap();
        let moved = caputo_l1(&bumped, b).unwrap();
        for k in 0..noise.len() {
            let c = moved.values[k] - base.values[k];
            assert!((noise[k] - c.abs()).abs() < 1e-12);
        }
        let (_, inoise) = fractional_integral_noisy(&s, &se, b).unwrap();
        let ib = fractional_integral(&bumped, b).unwrap();
        let i0 = fractional_integral(&s, b).unwrap();
        for k in 0..inoise.len() {
            assert!((inoise[k] - (ib.values[k] - i0.values[k]).abs()).abs() < 1e-12);
        }
        let mut se0 = vec![0.0; 6];
        se0[0] = 1.0;
        let (_, rnoise) = rl_derivative_noisy(&s, &se0, b).unwrap();
        let mut bumped0 = s.clone();
        bumped0.values[0] += 1.0;
        let r0 = rl_derivative(&s, b).unwrap();
        let r1 = rl_derivative(&bumped0, b).unwrap();
        for k in 0..rnoise.len() {
            assert!((rnoise[k] - (r1.values[k] - r0.values[k]).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let s = TimeSeries::from_fn(0.25, 5, |t| t * t - 1.0).unwrap();
        let back = TimeSeries::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back.values, s.values);
        assert!((back.dt - s.dt).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn operators_are_linear(
            u in prop::collection::vec(-5.0f64..5.0, 12),
            v in prop::collection::vec(-5.0f64..5.0, 12),
            a in -3.0f64..3.0,
            c in -3.0f64..3.0,
            b in 0.05f64..0.95,
        ) {
            let o = order(b);
            let su = TimeSeries::new(0.0, 0.1, u.clone()).unwrap();
            let sv = TimeSeries::new(0.0, 0.1, v.clone()).unwrap();
            let mix = TimeSeries::new(0.0, 0.1, u.iter().zip(&v).map(|(x, y)| a * x + c * y).collect()).unwrap();
            type Op = fn(&TimeSeries, FractionalOrder) -> Result<TimeSeries, FractionalError>;
            let ops: [Op; 3] = [caputo_l1, rl_derivative, fractional_integral];
            for op in ops {
                let (ou, ov, om) = (op(&su, o).unwrap(), op(&sv, o).unwrap(), op(&mix, o).unwrap());
                for k in 0..om.len() {
                    let want = a * ou.values[k] + c * ov.values[k];
                    let scale = ou.values[k].abs().max(ov.values[k].abs()).max(1.0) * 10.0;
                    prop_assert!((om.values[k] - want).abs() <= 1e-12 * scale);
                }
            }
        }
    }
}
