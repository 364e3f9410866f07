//! Least-squares fit of the saturation law `Δτ = a (1 − e^{−N/c}) + b`.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 500;
const STEP_TOL: f64 = 1e-10;
const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    /// Saturation constant, written `c` in the model above.
    pub c_sat: f64,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    /// Large-N limit `a + b`.
    pub fn asymptote(&self) -> f64 {
        self.a + self.b
    }

    pub fn predict(&self, n: f64) -> f64 {
        saturation_model(self.a, self.b, self.c_sat, n)
    }
}

pub fn saturation_model(a: f64, b: f64, c_sat: f64, n: f64) -> f64 {
    a * (1.0 - (-n / c_sat).exp()) + b
}

fn residuals(p: &Vector3<f64>, xs: &[f64], ys: &[f64]) -> Vec<f64> {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| saturation_model(p[0], p[1], p[2], x) - y)
        .collect()
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Fits from the default start: `a₀ = max − min`, `b₀ = min`, `c₀ = median N`.
pub fn fit_saturation(data: &BTreeMap<usize, f64>) -> Result<FitResult> {
    if data.len() < MIN_POINTS {
        return Err(Error::InvalidArgument(format!(
            "saturation fit needs at least {MIN_POINTS} points, got {}",
            data.len()
        )));
    }
    let ys: Vec<f64> = data.values().copied().collect();
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keys: Vec<f64> = data.keys().map(|&k| k as f64).collect();
    let mid = keys.len() / 2;
    let median = if keys.len().is_multiple_of(2) { 0.5 * (keys[mid - 1] + keys[mid]) } else { keys[mid] };
    fit_saturation_from(data, (hi - lo, lo, median))
}

/// Damped Gauss–Newton with a Marquardt diagonal scaling; stops when the
/// relative step falls below 1e-10 or the gradient vanishes.
pub fn fit_saturation_from(data: &BTreeMap<usize, f64>, start: (f64, f64, f64)) -> Result<FitResult> {
    if data.len() < MIN_POINTS {
        return Err(Error::InvalidArgument(format!(
            "saturation fit needs at least {MIN_POINTS} points, got {}",
            data.len()
        )));
    }
    if !(start.2 > 0.0) {
        return Err(Error::InvalidArgument("initial saturation constant must be positive".into()));
    }
    let xs: Vec<f64> = data.keys().map(|&k| k as f64).collect();
    let ys: Vec<f64> = data.values().copied().collect();
    let y_scale = ys.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);

    let mut p = Vector3::new(start.0, start.1, start.2);
    let mut r = residuals(&p, &xs, &ys);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (&x, &ri) in xs.iter().zip(&r) {
            let e = (-x / p[2]).exp();
            let row = Vector3::new(1.0 - e, 1.0, -p[0] * e * x / (p[2] * p[2]));
            jtj += row * row.transpose();
            jtr += row * ri;
        }
        if c == 0.0 || jtr.amax() <= 1e-15 * y_scale * y_scale {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(mut step) = damped.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            // the saturation constant may at most halve or double per step
            let shrink = (0.5 * p[2] / step[2].abs()).min(1.0);
            step *= shrink;
            let trial = p + step;
            if trial[2] > 0.0 {
                let rt = residuals(&trial, &xs, &ys);
                let ct = cost(&rt);
                if ct <= c {
                    let rel = step.norm() / (p.norm() + 1e-300);
                    p = trial;
                    r = rt;
                    c = ct;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel < STEP_TOL {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // no descent direction left at any damping: stationary to working precision
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        a: p[0],
        b: p[1],
        c_sat: p[2],
        residual_norm: c.sqrt(),
        converged: converged && p[2] > 0.0,
        iterations,
    })
}
