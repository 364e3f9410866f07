//! Integration of the Lindblad master equation
//!
//! ```text
//! dρ/dt = −(i/ħ)[H, ρ] + Γ_s(−{L_s†L_s, ρ} + 2 L_s ρ L_s†) + Γ_d(−{L_d†L_d, ρ} + 2 L_d ρ L_d†)
//! ```
//!
//! The generator is time independent. It is assembled once as a sparse real
//! matrix over Hermitian coordinates (see [`coords`]) and handed to one of
//! three backends: Krylov action of the exponential, adaptive Dormand–Prince,
//! or a dense matrix exponential for small problems. For long runs in a
//! modest coordinate space the Krylov backend first covers each interval with
//! cached dense propagators (see [`stride`]) and only integrates the remainder.
//!
//! Starting from an occupation eigenstate the state stays block diagonal in
//! the reservoir occupancies `(n_source, n_drain)`: `H` does not touch the
//! reservoirs and each jump shifts bra and ket labels together. When the
//! initial state has this form only the diagonal blocks are propagated.

pub mod checkpoint;
pub mod coords;
pub mod krylov;
pub mod rk;
pub mod stride;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fockspace::SectorBasis;
use crate::observables::{measure_at, ObservableVector};
use crate::operators::ModelOperators;

use self::coords::{HermitianCoordinates, RealGenerator, UnitAction};
use self::krylov::KrylovPropagator;
use self::rk::DormandPrince;
use self::stride::StrideLadder;

/// Tolerances a valid density matrix must meet.
pub const TRACE_TOL: f64 = 1e-8;
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Deviations beyond this multiple of the tolerances abort a propagation.
pub const FAILURE_FACTOR: f64 = 10.0;

/// Default cap on the sector dimension for dense superoperators.
pub const DEFAULT_DENSE_CAP: usize = 64;
/// Largest coordinate count for which the Krylov backend may cache dense strides.
/// Step budget of the explicit integrator.
pub const DEFAULT_MAX_STEPS: usize = 50_000_000;
pub const DEFAULT_STRIDE_LIMIT: usize = 2048;
/// Memory ceiling for the stride cache.
const STRIDE_BUDGET_BYTES: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    basis: Arc<SectorBasis>,
    entries: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn new(basis: Arc<SectorBasis>, entries: DMatrix<C64>) -> Result<Self> {
        let n = basis.dim();
        if entries.shape() != (n, n) {
            return Err(Error::InvalidArgument(format!(
                "matrix is {:?}, sector dimension is {n}",
                entries.shape()
            )));
        }
        Ok(Self { basis, entries })
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn purity(&self) -> f64 {
        // Tr ρ² = Σ |ρ_ab|² for Hermitian ρ
        self.entries.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.entries.nrows();
        let mut r: f64 = 0.0;
        for b in 0..n {
            for a in 0..=b {
                r = r.max((self.entries[(a, b)] - self.entries[(b, a)].conj()).norm());
            }
        }
        r
    }

    /// Smallest eigenvalue of the Hermitian part, diagonalising each
    /// connected block of the sparsity pattern separately.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.entries.nrows();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for b in 0..n {
            for a in 0..b {
                if self.entries[(a, b)].norm() != 0.0 || self.entries[(b, a)].norm() != 0.0 {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[ra] = rb;
                    }
                }
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups
            .values()
            .map(|idx| {
                let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| {
                    let (a, b) = (idx[i], idx[j]);
                    (self.entries[(a, b)] + self.entries[(b, a)].conj()) * 0.5
                });
                sub.symmetric_eigenvalues().min()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// `Tr(ρ A)`.
    pub fn expectation(&self, op: &crate::operators::SectorOperator) -> C64 {
        op.mul_dense(&self.entries).trace()
    }
}

/// Pure state with the source holding every particle.
pub fn initial_state(basis: &Arc<SectorBasis>) -> DensityMatrix {
    let n = basis.dim();
    let mut m = DMatrix::zeros(n, n);
    m[(0, 0)] = C64::new(1.0, 0.0);
    DensityMatrix { basis: basis.clone(), entries: m }
}

/// Right-hand side of the master equation evaluated with operator products.
pub fn lindblad_rhs(rho: &DensityMatrix, ops: &ModelOperators) -> Result<DMatrix<C64>> {
    if rho.basis.as_ref() != ops.basis.as_ref() {
        return Err(Error::InvalidArgument("density matrix and operators live on different sectors".into()));
    }
    let p = &ops.params;
    let r = &rho.entries;
    let h = &ops.hamiltonian;
    let mut out = (h.mul_dense(r) - h.dense_mul(r)) * C64::new(0.0, -1.0 / p.hbar);
    for (gamma, l) in [(p.gamma_s, &ops.jump_source), (p.gamma_d, &ops.jump_drain)] {
        if gamma == 0.0 {
            continue;
        }
        let k = l.adjoint().compose(l);
        let anti = k.mul_dense(r) + k.dense_mul(r);
        // L ρ L† = (L (L ρ)†)†
        let sandwich = l.mul_dense(&l.mul_dense(r).adjoint()).adjoint();
        out += (sandwich * C64::new(2.0, 0.0) - anti) * C64::new(gamma, 0.0);
    }
    Ok(out)
}

/// Full superoperator on column-major `vec(ρ)` (entry `ρ_ab` at `a + b·dim`).
pub fn dense_liouvillian(ops: &ModelOperators, cap: usize) -> Result<DMatrix<C64>> {
    let n = ops.basis.dim();
    if n > cap {
        return Err(Error::DimensionCap { dim: n, cap });
    }
    let action = UnitAction::new(ops);
    let mut l = DMatrix::zeros(n * n, n * n);
    let mut image = HashMap::new();
    for b in 0..n {
        for a in 0..n {
            image.clear();
            action.add_unit(a, b, C64::new(1.0, 0.0), &mut image);
            for (&(c, d), &v) in image.iter() {
                l[(c + d * n, a + b * n)] += v;
            }
        }
    }
    Ok(l)
}

/// Integration backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Propagator {
    AdaptiveExplicit,
    #[default]
    KrylovExponential,
    DenseExponential,
}

impl Propagator {
    pub const ALL: [Propagator; 3] = [
        Propagator::AdaptiveExplicit,
        Propagator::KrylovExponential,
        Propagator::DenseExponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Propagator::AdaptiveExplicit => "adaptive-explicit",
            Propagator::KrylovExponential => "krylov-exponential",
            Propagator::DenseExponential => "dense-exponential",
        }
    }
}

impl fmt::Display for Propagator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Propagator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Propagator::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown propagator {s:?}; expected one of adaptive-explicit, krylov-exponential, dense-exponential"
                ))
            })
    }
}

/// `n` logarithmically spaced points from `t_min` to `t_max` inclusive.
pub fn log_grid(t_min: f64, t_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![t_max],
        _ => {
            let (l0, l1) = (t_min.ln(), t_max.ln());
            let mut g: Vec<f64> = (0..n)
                .map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp())
                .collect();
            g[0] = t_min;
            g[n - 1] = t_max;
            g
        }
    }
}

pub const DEFAULT_GRID_POINTS: usize = 200;
/// The default grid starts this many decades below `t_max`.
pub const DEFAULT_GRID_DECADES: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionConfig {
    pub propagator: Propagator,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub t_max: f64,
    /// Sample times, sorted, within `[0, t_max]`.
    pub output_grid: Vec<f64>,
    pub krylov_dim: usize,
    /// Compute the smallest eigenvalue at every k-th sample (and the last).
    pub eigen_every: usize,
    /// Largest sector dimension for dense superoperators; the dense backend
    /// accepts up to `dense_cap²` coordinates.
    pub dense_cap: usize,
    /// Keep ρ at each sample rather than only its observables.
    pub keep_states: bool,
    /// Propagate only the reservoir-label blocks when the initial state allows it.
    pub reduce_blocks: bool,
    /// Step budget for the explicit backend.
    pub max_steps: usize,
    /// Coordinate count up to which the Krylov backend may cache dense
    /// strides when that is estimated to be cheaper; 0 disables them.
    pub stride_limit: usize,
}

impl EvolutionConfig {
    pub fn new(t_max: f64) -> Self {
        Self {
            propagator: Propagator::default(),
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            t_max,
            output_grid: log_grid(
                t_max * 10f64.powf(-DEFAULT_GRID_DECADES),
                t_max,
                DEFAULT_GRID_POINTS,
            ),
            krylov_dim: 30,
            eigen_every: 10,
            dense_cap: DEFAULT_DENSE_CAP,
            keep_states: false,
            reduce_blocks: true,
            max_steps: DEFAULT_MAX_STEPS,
            stride_limit: DEFAULT_STRIDE_LIMIT,
        }
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.output_grid = grid;
        self
    }

    pub fn with_propagator(mut self, p: Propagator) -> Self {
        self.propagator = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.krylov_dim == 0 || self.eigen_every == 0 {
            return Err(Error::InvalidArgument("krylov_dim and eigen_every must be positive".into()));
        }
        if self.output_grid.is_empty() {
            return Err(Error::InvalidArgument("output grid is empty".into()));
        }
        if self.output_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("output grid must be strictly increasing".into()));
        }
        let (lo, hi) = (self.output_grid[0], *self.output_grid.last().unwrap());
        if lo < 0.0 || hi > self.t_max * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "output grid [{lo}, {hi}] leaves [0, {}]",
                self.t_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PropagationStats {
    pub coordinate_dim: usize,
    pub steps: usize,
    pub rejected: usize,
    pub matvecs: usize,
}

#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub propagator: Propagator,
    pub samples: Vec<ObservableVector>,
    /// ρ at each sample; empty in observable-only mode.
    pub states: Vec<DensityMatrix>,
    /// ρ at the last sample reached.
    pub final_state: Option<DensityMatrix>,
    pub stats: PropagationStats,
}

enum Backend<'g> {
    Krylov(KrylovPropagator<'g>, Option<StrideLadder>),
    Explicit(DormandPrince<'g>),
    Dense {
        generator: DMatrix<f64>,
        cache: HashMap<u64, DMatrix<f64>>,
    },
}

impl Backend<'_> {
    fn advance(&mut self, x: &mut [f64], t0: f64, t1: f64) -> Result<()> {
        match self {
            Backend::Krylov(k, None) => k.advance(x, t0, t1 - t0),
            Backend::Krylov(k, Some(ladder)) => {
                let covered = ladder.cover(x, t1 - t0);
                k.advance(x, t0 + covered, t1 - t0 - covered)
            }
            Backend::Explicit(rk) => rk.advance(x, t0, t1),
            Backend::Dense { generator, cache } => {
                let dt = t1 - t0;
                if dt <= 0.0 {
                    return Ok(());
                }
                let e = cache
                    .entry(dt.to_bits())
                    .or_insert_with(|| (&*generator * dt).exp());
                let y = &*e * DVector::from_column_slice(x);
                x.copy_from_slice(y.as_slice());
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Breakdown {
                        t_reached: t0,
                        reason: "non-finite dense exponential".into(),
                    });
                }
                Ok(())
            }
        }
    }

    fn stats(&self) -> (usize, usize, usize) {
        match self {
            Backend::Krylov(k, ladder) => (
                k.stats.steps + ladder.as_ref().map_or(0, |l| l.applications),
                k.stats.rejected,
                k.stats.matvecs,
            ),
            Backend::Explicit(rk) => (rk.stats.steps, rk.stats.rejected, rk.stats.rhs_evals),
            Backend::Dense { cache, .. } => (cache.len(), 0, 0),
        }
    }
}

/// Chooses the coordinate layout for `rho0`: reservoir blocks when they
/// contain it, otherwise the whole sector.
pub fn coordinates_for(rho0: &DensityMatrix, reduce: bool) -> HermitianCoordinates {
    let dim = rho0.basis.dim();
    if reduce {
        let blocks = HermitianCoordinates::new(dim, rho0.basis.reservoir_blocks());
        if blocks.covers(&rho0.entries, 0.0) {
            return blocks;
        }
    }
    HermitianCoordinates::full(dim)
}

/// Integrates from `rho0` and samples on the output grid.
pub fn propagate(
    rho0: &DensityMatrix,
    ops: &ModelOperators,
    config: &EvolutionConfig,
) -> Result<TimeSeries> {
    match propagate_partial(rho0, ops, config)? {
        (series, None) => Ok(series),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`propagate`], but a failure part-way returns the samples collected
/// so far together with the error.
pub fn propagate_partial(
    rho0: &DensityMatrix,
    ops: &ModelOperators,
    config: &EvolutionConfig,
) -> Result<(TimeSeries, Option<Error>)> {
    config.validate()?;
    if rho0.basis.as_ref() != ops.basis.as_ref() {
        return Err(Error::InvalidArgument("initial state and operators live on different sectors".into()));
    }
    let herm = rho0.hermiticity_residual();
    if herm > HERMITICITY_TOL {
        return Err(Error::InvalidArgument(format!("initial state is not Hermitian (residual {herm:e})")));
    }

    let coords = coordinates_for(rho0, config.reduce_blocks);
    let generator = RealGenerator::assemble(ops, coords)?;
    let n = generator.len();
    let mut x = generator.coords.encode(&rho0.entries);
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut backend = match config.propagator {
        Propagator::KrylovExponential => {
            let tol = (config.abs_tol + config.rel_tol * x_norm) / config.t_max.max(1.0);
            let ladder = stride_ladder(&generator, config);
            Backend::Krylov(KrylovPropagator::new(&generator, config.krylov_dim, tol), ladder)
        }
        Propagator::AdaptiveExplicit => Backend::Explicit(DormandPrince::new(
            &generator,
            config.rel_tol,
            config.abs_tol,
            config.max_steps,
        )),
        Propagator::DenseExponential => {
            let cap = config.dense_cap * config.dense_cap;
            if n > cap {
                return Err(Error::DimensionCap { dim: n, cap });
            }
            Backend::Dense { generator: generator.to_dense(), cache: HashMap::new() }
        }
    };
    log::debug!(
        "propagating {} coordinates with {} (sector dim {})",
        n,
        config.propagator,
        ops.basis.dim()
    );

    let mut series = TimeSeries {
        propagator: config.propagator,
        samples: Vec::with_capacity(config.output_grid.len()),
        states: Vec::new(),
        final_state: None,
        stats: PropagationStats { coordinate_dim: n, ..Default::default() },
    };
    let mut t_now = 0.0;
    let last = config.output_grid.len() - 1;
    let mut failure = None;
    for (i, &t) in config.output_grid.iter().enumerate() {
        if let Err(e) = backend.advance(&mut x, t_now, t) {
            failure = Some(e);
            break;
        }
        t_now = t;
        let rho = DensityMatrix { basis: ops.basis.clone(), entries: generator.coords.decode(&x) };
        let obs = measure_at(&rho, &ops.params, t, i % config.eigen_every == 0 || i == last)?;
        if let Some(reason) = violation(&obs, ops.params.n_tot) {
            failure = Some(Error::IntegrationFailure { t_reached: t, reason });
            series.samples.push(obs);
            break;
        }
        series.samples.push(obs);
        if config.keep_states {
            series.states.push(rho.clone());
        }
        series.final_state = Some(rho);
    }
    let (steps, rejected, matvecs) = backend.stats();
    series.stats.steps = steps;
    series.stats.rejected = rejected;
    series.stats.matvecs = matvecs;
    Ok((series, failure))
}

/// Builds a stride cache when its estimated cost undercuts plain Krylov
/// stepping over the whole run.
fn stride_ladder(gen: &RealGenerator, config: &EvolutionConfig) -> Option<StrideLadder> {
    let n = gen.len();
    if n > config.stride_limit {
        return None;
    }
    let coarsest = std::iter::once(0.0)
        .chain(config.output_grid.iter().copied())
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    let norm = gen.norm_inf();
    if StrideLadder::footprint(n, coarsest, norm) > STRIDE_BUDGET_BYTES {
        return None;
    }
    let nf = n as f64;
    let levels = (StrideLadder::footprint(n, coarsest, norm) / (n * n * 8)) as f64;
    // roughly one Krylov vector per unit of ‖G‖ t, each costing a product and
    // an orthogonalisation; a dense product costs 2 n³ flops
    let krylov = norm * config.t_max * (2.0 * gen.nnz() as f64 + 4.0 * config.krylov_dim as f64 * nf);
    let dense = 2.0 * nf.powi(3) * (levels + 30.0) + 2.0 * nf * nf * levels * config.output_grid.len() as f64;
    if dense >= krylov {
        return None;
    }
    log::debug!("caching {levels} dense strides over {n} coordinates");
    Some(StrideLadder::build(gen, coarsest))
}

fn violation(obs: &ObservableVector, n_tot: usize) -> Option<String> {
    if obs.trace_residual > FAILURE_FACTOR * TRACE_TOL {
        return Some(format!("trace drifted by {:e}", obs.trace_residual));
    }
    if obs.hermiticity_residual > FAILURE_FACTOR * HERMITICITY_TOL {
        return Some(format!("Hermiticity residual {:e}", obs.hermiticity_residual));
    }
    if let Some(ev) = obs.min_eigenvalue {
        if ev < -FAILURE_FACTOR * POSITIVITY_TOL {
            return Some(format!("negative eigenvalue {ev:e}"));
        }
    }
    let dn = (obs.total() - n_tot as f64).abs();
    if dn > FAILURE_FACTOR * TRACE_TOL * n_tot as f64 {
        return Some(format!("particle number drifted by {dn:e}"));
    }
    None
}
