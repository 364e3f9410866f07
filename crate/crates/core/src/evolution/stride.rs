//! Cached dense propagators `exp(G δ 2^{-k})` for covering long intervals in
//! small coordinate spaces. The finest level comes from a scaling-and-squaring
//! exponential, the coarser ones by repeated squaring.

use nalgebra::{DMatrix, DVector};

use super::coords::RealGenerator;

/// Finest stride, in units of `1 / ‖G‖∞`.
const FINEST_SCALED_STEP: f64 = 4.0;
const MAX_LEVELS: usize = 20;

pub struct StrideLadder {
    /// `(dt, exp(G dt))`, coarsest first.
    levels: Vec<(f64, DMatrix<f64>)>,
    pub applications: usize,
}

/// Restores `wᵀ E = wᵀ`, which the exact propagator satisfies because the
/// generator is trace preserving. Without it rounding in the squarings grows
/// by a factor two per level and shows up as trace drift.
fn preserve_trace(e: &mut DMatrix<f64>, w: &DVector<f64>) {
    let ww = w.dot(w);
    if ww == 0.0 {
        return;
    }
    let defect = w.transpose() - w.transpose() * &*e;
    e.ger(1.0 / ww, w, &defect.transpose(), 1.0);
}

impl StrideLadder {
    /// Levels from `coarsest` down to about `4 / ‖G‖∞`.
    pub fn build(gen: &RealGenerator, coarsest: f64) -> Self {
        let norm = gen.norm_inf().max(f64::MIN_POSITIVE);
        let ratio = (coarsest * norm / FINEST_SCALED_STEP).max(1.0);
        let depth = (ratio.log2().ceil() as usize).min(MAX_LEVELS - 1);
        let finest = coarsest / 2f64.powi(depth as i32);
        let dense = gen.to_dense();
        let w = DVector::from_vec(gen.coords.trace_functional());
        let mut levels = Vec::with_capacity(depth + 1);
        let mut e = (&dense * finest).exp();
        preserve_trace(&mut e, &w);
        let mut dt = finest;
        for _ in 0..depth {
            let mut next = &e * &e;
            preserve_trace(&mut next, &w);
            levels.push((dt, e));
            e = next;
            dt *= 2.0;
        }
        levels.push((dt, e));
        levels.reverse();
        Self { levels, applications: 0 }
    }

    /// Smallest cached step.
    pub fn finest(&self) -> f64 {
        self.levels.last().map_or(0.0, |l| l.0)
    }

    /// Bytes held by the cached matrices for a space of `n` coordinates and
    /// the given ladder span.
    pub fn footprint(n: usize, coarsest: f64, norm: f64) -> usize {
        let ratio = (coarsest * norm / FINEST_SCALED_STEP).max(1.0);
        let depth = (ratio.log2().ceil() as usize).min(MAX_LEVELS - 1);
        (depth + 1) * n * n * std::mem::size_of::<f64>()
    }

    /// Applies cached strides to `x` while they fit in `span`; returns the
    /// time covered, which falls short of `span` by less than [`Self::finest`].
    pub fn cover(&mut self, x: &mut [f64], span: f64) -> f64 {
        let mut covered = 0.0;
        for (dt, e) in &self.levels {
            while covered + dt <= span {
                let y = e * DVector::from_column_slice(x);
                x.copy_from_slice(y.as_slice());
                covered += dt;
                self.applications += 1;
            }
        }
        covered
    }
}
