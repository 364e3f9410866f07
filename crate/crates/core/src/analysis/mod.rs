//! Post-processing of sampled trajectories: rescaled time, occupancy maxima,
//! level crossings and plateau lags.

mod fit;
mod physical;

pub use self::fit::{fit_saturation, fit_saturation_from, saturation_model, FitResult, MAX_ITERATIONS};
pub use self::physical::{physical_time, tunneling_rate, PhysicalParams, TunnelingEstimate};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::observables::ObservableVector;
use crate::operators::ModelParams;

/// `τ = t · ħc²/U`.
pub fn rescale_time(t: f64, params: &ModelParams) -> f64 {
    t * params.c_eff()
}

/// Inverse of [`rescale_time`].
pub fn simulation_time(tau: f64, params: &ModelParams) -> f64 {
    tau / params.c_eff()
}

/// One trajectory's samples, ordered in rescaled time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub params: ModelParams,
    pub series: Vec<ObservableVector>,
}

impl RunRecord {
    pub fn new(params: ModelParams, series: Vec<ObservableVector>) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::InvalidArgument("run has no samples".into()));
        }
        if series.windows(2).any(|w| !(w[0].tau < w[1].tau)) {
            return Err(Error::InvalidArgument("samples must be strictly increasing in tau".into()));
        }
        Ok(Self { params, series })
    }

    pub fn taus(&self) -> Vec<f64> {
        self.series.iter().map(|o| o.tau).collect()
    }

    pub fn n_sf(&self) -> Vec<f64> {
        self.series.iter().map(|o| o.n_sf).collect()
    }
}

/// Maximum of `y(x)`, refined by the parabola through the discrete maximum
/// and its two neighbours.
pub fn refined_max(x: &[f64], y: &[f64]) -> f64 {
    let (i, &ymax) = y
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    if i == 0 || i + 1 >= y.len() {
        return ymax;
    }
    let (x0, x1, x2) = (x[i - 1], x[i], x[i + 1]);
    let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
    // Newton form: y = y0 + d1 (x − x0) + d2 (x − x0)(x − x1)
    let d1 = (y1 - y0) / (x1 - x0);
    let d2 = ((y2 - y1) / (x2 - x1) - d1) / (x2 - x0);
    if !(d2 < 0.0) {
        return ymax;
    }
    let xv = 0.5 * (x0 + x1) - d1 / (2.0 * d2);
    if !(x0..=x2).contains(&xv) {
        return ymax;
    }
    let yv = y0 + d1 * (xv - x0) + d2 * (xv - x0) * (xv - x1);
    yv.max(ymax)
}

/// Largest chain occupancy `n_SF^max` of a run.
pub fn max_occupancy(run: &RunRecord) -> f64 {
    refined_max(&run.taus(), &run.n_sf())
}

/// `τ` of the last downward crossing of `y` through `level`, by linear
/// interpolation between the bracketing samples.
pub fn last_downward_crossing(x: &[f64], y: &[f64], level: f64) -> Result<f64> {
    (0..y.len().saturating_sub(1))
        .rev()
        .find(|&i| y[i] >= level && y[i + 1] < level)
        .map(|i| x[i] + (y[i] - level) * (x[i + 1] - x[i]) / (y[i] - y[i + 1]))
        .ok_or(Error::NoCrossing { level })
}

/// Rescaled time at which the chain occupancy last falls through `level`.
pub fn crossing_time(run: &RunRecord, level: f64) -> Result<f64> {
    last_downward_crossing(&run.taus(), &run.n_sf(), level)
}

/// Forward differences `Δτ(N) = τ*(N) − τ*(N − 1)`.
pub fn lag_increments(tau_star: &BTreeMap<usize, f64>) -> Result<BTreeMap<usize, f64>> {
    let keys: Vec<usize> = tau_star.keys().copied().collect();
    if let Some(w) = keys.windows(2).find(|w| w[1] != w[0] + 1) {
        return Err(Error::InvalidArgument(format!(
            "N_tot values must be consecutive; gap between {} and {}",
            w[0], w[1]
        )));
    }
    Ok(keys
        .windows(2)
        .map(|w| (w[1], tau_star[&w[1]] - tau_star[&w[0]]))
        .collect())
}

/// Piecewise-linear interpolation of `(x, y)` at `at`; `None` outside the
/// range (ends are matched to a relative 1e-12 so that grids built from the
/// same τ values in different units still line up).
pub fn interpolate(x: &[f64], y: &[f64], at: f64) -> Option<f64> {
    let (&lo, &hi) = (x.first()?, x.last()?);
    let slack = 1e-12 * lo.abs().max(hi.abs());
    if at < lo - slack || at > hi + slack {
        return None;
    }
    let at = at.clamp(lo, hi);
    let i = x.partition_point(|&v| v <= at);
    if i == x.len() {
        return Some(*y.last().unwrap());
    }
    if i == 0 {
        return Some(y[0]);
    }
    let (x0, x1) = (x[i - 1], x[i]);
    Some(y[i - 1] + (y[i] - y[i - 1]) * (at - x0) / (x1 - x0))
}

/// Sup-norm distance between the `n_SF(τ)` curves of two runs, taken over
/// the samples of `a` that fall inside the τ range of `b`.
pub fn sup_distance(a: &RunRecord, b: &RunRecord) -> Result<f64> {
    let (xb, yb) = (b.taus(), b.n_sf());
    let mut d: f64 = 0.0;
    let mut compared = 0;
    for o in &a.series {
        if let Some(v) = interpolate(&xb, &yb, o.tau) {
            d = d.max((o.n_sf - v).abs());
            compared += 1;
        }
    }
    if compared == 0 {
        return Err(Error::InvalidArgument("runs share no tau range".into()));
    }
    Ok(d)
}

/// True when the values (in key order) are strictly increasing with
/// non-increasing increments.
pub fn increasing_and_concave(values: &BTreeMap<usize, f64>) -> bool {
    let v: Vec<f64> = values.values().copied().collect();
    let increasing = v.windows(2).all(|w| w[1] > w[0]);
    let concave = v.windows(3).all(|w| w[2] - w[1] <= w[1] - w[0]);
    increasing && concave
}
