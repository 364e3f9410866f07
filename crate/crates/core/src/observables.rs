//! Mode populations and state diagnostics.

use crate::analysis::rescale_time;
use crate::error::{Error, Result};
use crate::evolution::DensityMatrix;
use crate::operators::{ModelParams, Mode};

/// Largest tolerated imaginary part of a population.
pub const IMAG_TOL: f64 = 1e-10;

/// Populations and diagnostics at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableVector {
    pub t: f64,
    pub tau: f64,
    /// `⟨n⟩` for source, sites 1..=N, drain, in that order.
    pub populations: Vec<f64>,
    /// Total chain occupancy.
    pub n_sf: f64,
    /// `|Tr ρ − 1|`.
    pub trace_residual: f64,
    /// Largest `|ρ_ab − conj(ρ_ba)|`.
    pub hermiticity_residual: f64,
    /// Smallest eigenvalue of ρ, when it was computed for this sample.
    pub min_eigenvalue: Option<f64>,
}

impl ObservableVector {
    pub fn n_source(&self) -> f64 {
        self.populations[0]
    }

    pub fn n_drain(&self) -> f64 {
        *self.populations.last().unwrap()
    }

    /// Population of chain site `j` (1-based).
    pub fn site(&self, j: usize) -> f64 {
        self.populations[j]
    }

    pub fn n_sites(&self) -> usize {
        self.populations.len() - 2
    }

    pub fn total(&self) -> f64 {
        self.n_source() + self.n_sf + self.n_drain()
    }

    pub fn population(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Source => self.n_source(),
            Mode::Site(j) => self.site(j),
            Mode::Drain => self.n_drain(),
        }
    }
}

/// Evaluates `Tr(ρ n_mode)` for every mode at time `t`. The smallest
/// eigenvalue is included when `with_spectrum` is set.
pub fn measure_at(
    rho: &DensityMatrix,
    params: &ModelParams,
    t: f64,
    with_spectrum: bool,
) -> Result<ObservableVector> {
    let basis = rho.basis();
    let modes = Mode::all(basis.n_sites());
    let mut populations = Vec::with_capacity(modes.len());
    for mode in &modes {
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, s) in basis.states().iter().enumerate() {
            let n = mode.occupancy(s) as f64;
            if n != 0.0 {
                let v = rho.entries()[(i, i)];
                re += n * v.re;
                im += n * v.im;
            }
        }
        if im.abs() > IMAG_TOL {
            return Err(Error::Integrity(format!(
                "population of {mode} has imaginary part {im:e}"
            )));
        }
        populations.push(re);
    }
    let n_sf = populations[1..=basis.n_sites()].iter().sum();
    Ok(ObservableVector {
        t,
        tau: rescale_time(t, params),
        populations,
        n_sf,
        trace_residual: (rho.trace().re - 1.0).abs(),
        hermiticity_residual: rho.hermiticity_residual(),
        min_eigenvalue: with_spectrum.then(|| rho.min_eigenvalue()),
    })
}

pub fn measure(rho: &DensityMatrix, params: &ModelParams) -> Result<ObservableVector> {
    measure_at(rho, params, 0.0, true)
}
