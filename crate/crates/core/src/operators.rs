//! Hamiltonian, jump and number operators as matrices over a sector.
//!
//! The chain Hamiltonian is
//!
//! ```text
//! H = −ħc Σ_{j=1}^{N−1} (σ_j† σ_{j+1} + σ_{j+1}† σ_j) + Σ_{j<j'} U / (j' − j) n_j n_j'
//! ```
//!
//! and the reservoirs couple through `L_s = σ_1† σ_0` (source → site 1) and
//! `L_d = σ_{N+1}† σ_N` (site N → drain). Bare ladder operators change the
//! particle number, so they are kept as rectangular maps between adjacent
//! sectors; everything exposed as a [`SectorOperator`] conserves number.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fockspace::{OccupationState, SectorBasis};

/// Above this sector dimension operators are stored as compressed rows.
pub const DENSE_CROSSOVER: usize = 64;

/// Physical parameters of one simulation, in units where the hopping energy
/// scale is `hbar * c_hop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub n_sites: usize,
    pub n_tot: usize,
    pub hbar: f64,
    pub c_hop: f64,
    /// Coulomb strength.
    pub u: f64,
    /// Source supply rate.
    pub gamma_s: f64,
    /// Drain leak rate.
    pub gamma_d: f64,
}

impl ModelParams {
    /// ħ = c = 1 and both reservoir rates equal to the effective hopping
    /// (rescaled rates of one).
    pub fn matched_rates(n_sites: usize, n_tot: usize, u: f64) -> Result<Self> {
        let mut p = Self {
            n_sites,
            n_tot,
            hbar: 1.0,
            c_hop: 1.0,
            u,
            gamma_s: 0.0,
            gamma_d: 0.0,
        };
        p.validate_scales()?;
        let c_eff = p.c_eff();
        p.gamma_s = c_eff;
        p.gamma_d = c_eff;
        p.validate()?;
        Ok(p)
    }

    /// Effective hopping `ħ c² / U`.
    pub fn c_eff(&self) -> f64 {
        self.hbar * self.c_hop * self.c_hop / self.u
    }

    fn validate_scales(&self) -> Result<()> {
        if self.n_sites == 0 || self.n_sites > crate::fockspace::MAX_SITES {
            return Err(Error::InvalidArgument(format!(
                "n_sites must be in 1..={}, got {}",
                crate::fockspace::MAX_SITES,
                self.n_sites
            )));
        }
        if self.n_tot == 0 {
            return Err(Error::InvalidArgument("n_tot must be at least 1".into()));
        }
        if !(self.u > 0.0 && self.u.is_finite()) {
            return Err(Error::InvalidArgument(format!("U must be positive, got {}", self.u)));
        }
        if !(self.c_hop > 0.0 && self.c_hop.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "c_hop must be positive, got {}",
                self.c_hop
            )));
        }
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(Error::InvalidArgument(format!("hbar must be positive, got {}", self.hbar)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_scales()?;
        if !(self.gamma_s >= 0.0 && self.gamma_s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma_s must be non-negative, got {}",
                self.gamma_s
            )));
        }
        if !(self.gamma_d >= 0.0 && self.gamma_d.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma_d must be non-negative, got {}",
                self.gamma_d
            )));
        }
        if !(self.c_eff() > 0.0) {
            return Err(Error::InvalidArgument("effective hopping underflows to zero".into()));
        }
        Ok(())
    }

    fn check_basis(&self, basis: &SectorBasis) -> Result<()> {
        if basis.n_sites() != self.n_sites || basis.n_tot() != self.n_tot {
            return Err(Error::InvalidArgument(format!(
                "basis is ({}, {}) but parameters are ({}, {})",
                basis.n_sites(),
                basis.n_tot(),
                self.n_sites,
                self.n_tot
            )));
        }
        Ok(())
    }
}

/// A single mode of the occupation space. Sites are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Source,
    Site(usize),
    Drain,
}

impl Mode {
    pub fn all(n_sites: usize) -> Vec<Mode> {
        let mut modes = vec![Mode::Source];
        modes.extend((1..=n_sites).map(Mode::Site));
        modes.push(Mode::Drain);
        modes
    }

    fn check(self, n_sites: usize) -> Result<Self> {
        match self {
            Mode::Site(j) if j == 0 || j > n_sites => Err(Error::InvalidArgument(format!(
                "site {j} outside 1..={n_sites}"
            ))),
            m => Ok(m),
        }
    }

    pub fn occupancy(self, state: &OccupationState) -> usize {
        match self {
            Mode::Source => state.n_source,
            Mode::Site(j) => state.sites[j - 1] as usize,
            Mode::Drain => state.n_drain,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Source => write!(f, "source"),
            Mode::Site(j) => write!(f, "site{j}"),
            Mode::Drain => write!(f, "drain"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Mode::Source),
            "drain" => Ok(Mode::Drain),
            _ => s
                .strip_prefix("site")
                .and_then(|j| j.parse::<usize>().ok())
                .filter(|&j| j > 0)
                .map(Mode::Site)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown mode label {s:?}"))),
        }
    }
}

/// Exchange statistics of the chain sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SiteStatistics {
    /// Two-level raising/lowering with no sign strings.
    #[default]
    HardCore,
    /// Fermionic sites with a Jordan–Wigner string over the preceding sites.
    JordanWigner,
}

fn string_sign(state: &OccupationState, mode: Mode, stats: SiteStatistics) -> f64 {
    match (mode, stats) {
        (Mode::Site(j), SiteStatistics::JordanWigner) => {
            let parity: usize = state.sites[..j - 1].iter().map(|&s| s as usize).sum();
            if parity.is_multiple_of(2) {
                1.0
            } else {
                -1.0
            }
        }
        _ => 1.0,
    }
}

pub(crate) fn annihilate(
    state: &OccupationState,
    mode: Mode,
    stats: SiteStatistics,
) -> Option<(OccupationState, f64)> {
    let sign = string_sign(state, mode, stats);
    let mut out = state.clone();
    let amp = match mode {
        Mode::Source if state.n_source > 0 => {
            out.n_source -= 1;
            (state.n_source as f64).sqrt()
        }
        Mode::Site(j) if state.sites[j - 1] == 1 => {
            out.sites[j - 1] = 0;
            1.0
        }
        Mode::Drain if state.n_drain > 0 => {
            out.n_drain -= 1;
            (state.n_drain as f64).sqrt()
        }
        _ => return None,
    };
    Some((out, sign * amp))
}

pub(crate) fn create(
    state: &OccupationState,
    mode: Mode,
    stats: SiteStatistics,
) -> Option<(OccupationState, f64)> {
    let sign = string_sign(state, mode, stats);
    let mut out = state.clone();
    let amp = match mode {
        Mode::Source => {
            out.n_source += 1;
            (out.n_source as f64).sqrt()
        }
        Mode::Site(j) if state.sites[j - 1] == 0 => {
            out.sites[j - 1] = 1;
            1.0
        }
        Mode::Site(_) => return None,
        Mode::Drain => {
            out.n_drain += 1;
            (out.n_drain as f64).sqrt()
        }
    };
    Some((out, sign * amp))
}

/// `a_to† a_from` applied to one basis state.
fn transfer(
    state: &OccupationState,
    from: Mode,
    to: Mode,
    stats: SiteStatistics,
) -> Option<(OccupationState, f64)> {
    let (mid, a1) = annihilate(state, from, stats)?;
    let (out, a2) = create(&mid, to, stats)?;
    Some((out, a1 * a2))
}

#[derive(Debug, Clone)]
enum Storage {
    Dense(DMatrix<C64>),
    Sparse(CsrMatrix<C64>),
}

/// A number-conserving operator on one sector.
#[derive(Debug, Clone)]
pub struct SectorOperator {
    basis: Arc<SectorBasis>,
    storage: Storage,
}

impl SectorOperator {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(basis: Arc<SectorBasis>, triplets: &[(usize, usize, C64)]) -> Self {
        Self::from_triplets_with_crossover(basis, triplets, DENSE_CROSSOVER)
    }

    pub fn from_triplets_with_crossover(
        basis: Arc<SectorBasis>,
        triplets: &[(usize, usize, C64)],
        crossover: usize,
    ) -> Self {
        let n = basis.dim();
        let storage = if n > crossover {
            let mut coo = CooMatrix::new(n, n);
            for &(r, c, v) in triplets {
                coo.push(r, c, v);
            }
            Storage::Sparse(CsrMatrix::from(&coo))
        } else {
            let mut m = DMatrix::zeros(n, n);
            for &(r, c, v) in triplets {
                m[(r, c)] += v;
            }
            Storage::Dense(m)
        };
        Self { basis, storage }
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    /// Non-zero entries in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, C64)> {
        match &self.storage {
            Storage::Dense(m) => {
                let mut out = Vec::new();
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        let v = m[(r, c)];
                        if v != C64::new(0.0, 0.0) {
                            out.push((r, c, v));
                        }
                    }
                }
                out
            }
            Storage::Sparse(m) => m
                .triplet_iter()
                .filter(|(_, _, v)| **v != C64::new(0.0, 0.0))
                .map(|(r, c, v)| (r, c, *v))
                .collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse(_) => {
                let n = self.dim();
                let mut m = DMatrix::zeros(n, n);
                for (r, c, v) in self.triplets() {
                    m[(r, c)] += v;
                }
                m
            }
        }
    }

    pub fn adjoint(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (c, r, v.conj())).collect();
        Self::from_triplets(self.basis.clone(), &t)
    }

    /// Operator product `self · other`.
    pub fn compose(&self, other: &SectorOperator) -> Self {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); other.dim()];
        for (r, c, v) in other.triplets() {
            rows[r].push((c, v));
        }
        let mut acc: BTreeMap<(usize, usize), C64> = BTreeMap::new();
        for (i, k, a) in self.triplets() {
            for &(j, b) in &rows[k] {
                *acc.entry((i, j)).or_default() += a * b;
            }
        }
        let t: Vec<_> = acc.into_iter().map(|((r, c), v)| (r, c, v)).collect();
        Self::from_triplets(self.basis.clone(), &t)
    }

    /// `self · m` for a dense matrix of matching size.
    pub fn mul_dense(&self, m: &DMatrix<C64>) -> DMatrix<C64> {
        match &self.storage {
            Storage::Dense(a) => a * m,
            Storage::Sparse(a) => a * m,
        }
    }

    /// `m · self` for a dense matrix of matching size.
    pub fn dense_mul(&self, m: &DMatrix<C64>) -> DMatrix<C64> {
        match &self.storage {
            Storage::Dense(a) => m * a,
            Storage::Sparse(_) => self.adjoint().mul_dense(&m.adjoint()).adjoint(),
        }
    }

    /// Largest elementwise modulus of `self − self†`.
    pub fn hermiticity_residual(&self) -> f64 {
        let d = self.to_dense();
        (&d - d.adjoint()).iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// A bare annihilation operator, mapping sector `N_tot` into `N_tot − 1`.
#[derive(Debug, Clone)]
pub struct LadderOperator {
    pub mode: Mode,
    pub from: Arc<SectorBasis>,
    pub to: Arc<SectorBasis>,
    /// `(row in to, column in from, amplitude)`.
    pub entries: Vec<(usize, usize, f64)>,
}

impl LadderOperator {
    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.to.dim(), self.from.dim());
        for &(r, c, v) in &self.entries {
            m[(r, c)] += C64::new(v, 0.0);
        }
        m
    }
}

pub fn ladder_down(basis: &Arc<SectorBasis>, mode: Mode) -> Result<LadderOperator> {
    ladder_down_with(basis, mode, SiteStatistics::HardCore)
}

pub fn ladder_down_with(
    basis: &Arc<SectorBasis>,
    mode: Mode,
    stats: SiteStatistics,
) -> Result<LadderOperator> {
    let mode = mode.check(basis.n_sites())?;
    let to = Arc::new(SectorBasis::build(basis.n_sites(), basis.n_tot() - 1));
    let entries = basis
        .states()
        .iter()
        .enumerate()
        .filter_map(|(col, s)| {
            let (img, amp) = annihilate(s, mode, stats)?;
            let row = to.lookup(&img).expect("lowered state lies in the next sector");
            Some((row, col, amp))
        })
        .collect();
    Ok(LadderOperator { mode, from: basis.clone(), to, entries })
}

fn transfer_operator(basis: &Arc<SectorBasis>, from: Mode, to: Mode, stats: SiteStatistics) -> SectorOperator {
    let t: Vec<_> = basis
        .states()
        .iter()
        .enumerate()
        .filter_map(|(col, s)| {
            let (img, amp) = transfer(s, from, to, stats)?;
            let row = basis.lookup(&img).expect("transfer conserves number");
            Some((row, col, C64::new(amp, 0.0)))
        })
        .collect();
    SectorOperator::from_triplets(basis.clone(), &t)
}

/// Diagonal Coulomb energy `Σ_{j<j'} U / (j' − j) n_j n_j'` of one configuration.
pub fn coulomb_energy(sites: &[u8], u: f64) -> f64 {
    let occupied: Vec<usize> = sites
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 1)
        .map(|(j, _)| j)
        .collect();
    let mut e = 0.0;
    for (a, &i) in occupied.iter().enumerate() {
        for &j in &occupied[a + 1..] {
            e += u / (j - i) as f64;
        }
    }
    e
}

pub fn build_hamiltonian(params: &ModelParams, basis: &Arc<SectorBasis>) -> Result<SectorOperator> {
    build_hamiltonian_with(params, basis, SiteStatistics::HardCore)
}

pub fn build_hamiltonian_with(
    params: &ModelParams,
    basis: &Arc<SectorBasis>,
    stats: SiteStatistics,
) -> Result<SectorOperator> {
    params.check_basis(basis)?;
    let hop = -params.hbar * params.c_hop;
    let mut t = Vec::new();
    for (col, s) in basis.states().iter().enumerate() {
        let e = coulomb_energy(&s.sites, params.u);
        if e != 0.0 {
            t.push((col, col, C64::new(e, 0.0)));
        }
        // σ_j† σ_{j+1} and its adjoint, written symmetrically
        for j in 1..params.n_sites {
            if let Some((img, amp)) = transfer(s, Mode::Site(j + 1), Mode::Site(j), stats) {
                let row = basis.lookup(&img).expect("hop conserves number");
                let v = C64::new(hop * amp, 0.0);
                t.push((row, col, v));
                t.push((col, row, v.conj()));
            }
        }
    }
    Ok(SectorOperator::from_triplets(basis.clone(), &t))
}

/// `L_s = σ_1† σ_0`.
pub fn build_jump_source(basis: &Arc<SectorBasis>) -> SectorOperator {
    build_jump_source_with(basis, SiteStatistics::HardCore)
}

pub fn build_jump_source_with(basis: &Arc<SectorBasis>, stats: SiteStatistics) -> SectorOperator {
    transfer_operator(basis, Mode::Source, Mode::Site(1), stats)
}

/// `L_d = σ_{N+1}† σ_N`.
pub fn build_jump_drain(basis: &Arc<SectorBasis>) -> SectorOperator {
    build_jump_drain_with(basis, SiteStatistics::HardCore)
}

pub fn build_jump_drain_with(basis: &Arc<SectorBasis>, stats: SiteStatistics) -> SectorOperator {
    transfer_operator(basis, Mode::Site(basis.n_sites()), Mode::Drain, stats)
}

pub fn number_operator(basis: &Arc<SectorBasis>, mode: Mode) -> Result<SectorOperator> {
    let mode = mode.check(basis.n_sites())?;
    let t: Vec<_> = basis
        .states()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let n = mode.occupancy(s);
            (n > 0).then(|| (i, i, C64::new(n as f64, 0.0)))
        })
        .collect();
    Ok(SectorOperator::from_triplets(basis.clone(), &t))
}

/// Everything the master equation needs for one parameter set.
#[derive(Debug, Clone)]
pub struct ModelOperators {
    pub params: ModelParams,
    pub basis: Arc<SectorBasis>,
    pub statistics: SiteStatistics,
    pub hamiltonian: SectorOperator,
    pub jump_source: SectorOperator,
    pub jump_drain: SectorOperator,
}

impl ModelOperators {
    pub fn build(params: &ModelParams) -> Result<Self> {
        Self::build_with(params, SiteStatistics::HardCore)
    }

    pub fn build_with(params: &ModelParams, statistics: SiteStatistics) -> Result<Self> {
        params.validate()?;
        let basis = Arc::new(SectorBasis::build(params.n_sites, params.n_tot));
        Self::for_basis(params, basis, statistics)
    }

    pub fn for_basis(
        params: &ModelParams,
        basis: Arc<SectorBasis>,
        statistics: SiteStatistics,
    ) -> Result<Self> {
        params.validate()?;
        let hamiltonian = build_hamiltonian_with(params, &basis, statistics)?;
        Ok(Self {
            params: *params,
            jump_source: build_jump_source_with(&basis, statistics),
            jump_drain: build_jump_drain_with(&basis, statistics),
            hamiltonian,
            basis,
            statistics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::enumerate_sector;

    fn basis(n: usize, m: usize) -> Arc<SectorBasis> {
        Arc::new(enumerate_sector(n, m).unwrap())
    }

    fn max_abs(m: &DMatrix<C64>) -> f64 {
        m.iter().fold(0.0, |a, v| a.max(v.norm()))
    }

    fn total_number(b: &Arc<SectorBasis>) -> DMatrix<C64> {
        Mode::all(b.n_sites())
            .into_iter()
            .map(|m| number_operator(b, m).unwrap().to_dense())
            .fold(DMatrix::zeros(b.dim(), b.dim()), |a, n| a + n)
    }

    #[test]
    fn mode_labels_parse() {
        assert_eq!("site3".parse::<Mode>().unwrap(), Mode::Site(3));
        assert_eq!("drain".parse::<Mode>().unwrap(), Mode::Drain);
        assert!("site0".parse::<Mode>().is_err());
        assert!("sink".parse::<Mode>().is_err());
        let b = basis(5, 2);
        assert!(matches!(number_operator(&b, Mode::Site(6)), Err(Error::InvalidArgument(_))));
        assert!(matches!(ladder_down(&b, Mode::Site(0)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn source_ladder_amplitudes() {
        let b = basis(1, 1);
        let a = ladder_down(&b, Mode::Source).unwrap();
        assert_eq!(a.to.n_tot(), 0);
        assert_eq!(a.entries, vec![(0, 0, 1.0)]);

        let b2 = basis(2, 2);
        let a2 = ladder_down(&b2, Mode::Source).unwrap();
        let a1 = ladder_down(&a2.to, Mode::Source).unwrap();
        let twice = a1.to_dense() * a2.to_dense();
        // (2|0,0|0) is index 0 of the 2-particle sector, (0|0,0|0) the only 0-particle state
        assert!((twice[(0, 0)].re - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn site_ladder_is_hard_core() {
        let b = basis(3, 2);
        let empty = b.index_of(&OccupationState::new(2, vec![0, 0, 0], 0)).unwrap();
        let a = ladder_down(&b, Mode::Site(2)).unwrap();
        assert!(a.entries.iter().all(|&(_, c, _)| c != empty));
        // σ² = 0 through the intermediate sector
        let a_next = ladder_down(&a.to, Mode::Site(2)).unwrap();
        let sq = a_next.to_dense() * a.to_dense();
        assert_eq!(max_abs(&sq), 0.0);
    }

    #[test]
    fn two_site_single_hop() {
        let b = basis(2, 1);
        let p = ModelParams::matched_rates(2, 1, 10.0).unwrap();
        let h = build_hamiltonian(&p, &b).unwrap().to_dense();
        let i1 = b.index_of(&OccupationState::new(0, vec![1, 0], 0)).unwrap();
        let i2 = b.index_of(&OccupationState::new(0, vec![0, 1], 0)).unwrap();
        assert_eq!(h[(i1, i1)], C64::new(0.0, 0.0));
        assert_eq!(h[(i2, i2)], C64::new(0.0, 0.0));
        assert_eq!(h[(i1, i2)], C64::new(-1.0, 0.0));
        assert_eq!(h[(i2, i1)], C64::new(-1.0, 0.0));
    }

    #[test]
    fn coulomb_diagonal() {
        let u = 7.0;
        let b = basis(5, 2);
        let p = ModelParams::matched_rates(5, 2, u).unwrap();
        let h = build_hamiltonian(&p, &b).unwrap().to_dense();
        let s13 = b.index_of(&OccupationState::new(0, vec![1, 0, 1, 0, 0], 0)).unwrap();
        let s23 = b.index_of(&OccupationState::new(0, vec![0, 1, 1, 0, 0], 0)).unwrap();
        assert_eq!(h[(s13, s13)].re, u / 2.0);
        assert_eq!(h[(s23, s23)].re, u);
        assert!((coulomb_energy(&[1, 1, 1, 1, 1], 1.0) - (4.0 + 1.5 + 2.0 / 3.0 + 0.25)).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_mismatch_is_rejected() {
        let p = ModelParams::matched_rates(5, 3, 10.0).unwrap();
        assert!(matches!(build_hamiltonian(&p, &basis(5, 2)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hamiltonian_is_exactly_hermitian_and_conserving() {
        for &(n, m) in &[(5, 2), (5, 4), (4, 6), (5, 9)] {
            let b = basis(n, m);
            let p = ModelParams::matched_rates(n, m, 10.0).unwrap();
            let h = build_hamiltonian(&p, &b).unwrap();
            assert_eq!(h.hermiticity_residual(), 0.0);
            assert_eq!(h.is_sparse(), b.dim() > DENSE_CROSSOVER);
            let hd = h.to_dense();
            let nt = total_number(&b);
            assert!(max_abs(&(&hd * &nt - &nt * &hd)) < 1e-12);
        }
    }

    #[test]
    fn coulomb_is_diagonal() {
        let b = basis(5, 3);
        let mut p = ModelParams::matched_rates(5, 3, 10.0).unwrap();
        p.c_hop = 1e-300;
        p.hbar = 1e-300;
        let h = build_hamiltonian(&p, &b).unwrap().to_dense();
        for r in 0..b.dim() {
            for c in 0..b.dim() {
                if r != c {
                    assert!(h[(r, c)].norm() < 1e-200);
                }
            }
        }
    }

    #[test]
    fn source_jump_amplitudes() {
        let n_tot = 4;
        let b = basis(5, n_tot);
        let ls = build_jump_source(&b).to_dense();
        let init = 0;
        let img = b.index_of(&OccupationState::new(3, vec![1, 0, 0, 0, 0], 0)).unwrap();
        assert!((ls[(img, init)].re - (n_tot as f64).sqrt()).abs() < 1e-15);
        let blocked = b.index_of(&OccupationState::new(3, vec![1, 0, 0, 0, 0], 0)).unwrap();
        assert!((0..b.dim()).all(|r| ls[(r, blocked)].norm() == 0.0));
    }

    #[test]
    fn drain_jump_amplitudes() {
        let b = basis(5, 4);
        let ld = build_jump_drain(&b).to_dense();
        let k = 3;
        let from = b.index_of(&OccupationState::new(0, vec![0, 0, 0, 0, 1], k)).unwrap();
        let to = b.index_of(&OccupationState::new(0, vec![0, 0, 0, 0, 0], k + 1)).unwrap();
        assert!((ld[(to, from)].re - ((k + 1) as f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn jumps_are_compositions_of_ladders() {
        let b = basis(5, 3);
        let src = ladder_down(&b, Mode::Source).unwrap().to_dense();
        let s1 = ladder_down(&b, Mode::Site(1)).unwrap().to_dense();
        let ls = build_jump_source(&b).to_dense();
        assert!(max_abs(&(s1.adjoint() * &src - &ls)) < 1e-14);

        let s5 = ladder_down(&b, Mode::Site(5)).unwrap().to_dense();
        let dr = ladder_down(&b, Mode::Drain).unwrap().to_dense();
        let ld = build_jump_drain(&b).to_dense();
        assert!(max_abs(&(dr.adjoint() * &s5 - &ld)) < 1e-14);
    }

    #[test]
    fn number_operators() {
        let b = basis(5, 3);
        let nt = total_number(&b);
        assert!(max_abs(&(nt - DMatrix::identity(b.dim(), b.dim()).map(|v: C64| v * 3.0))) == 0.0);
        for j in 1..=5 {
            let n = number_operator(&b, Mode::Site(j)).unwrap().to_dense();
            assert_eq!(&n * &n, n);
        }
        let b11 = basis(1, 1);
        assert_eq!(number_operator(&b11, Mode::Source).unwrap().to_dense().trace().re, 1.0);
    }

    #[test]
    fn dissipator_kernels_conserve_number() {
        let b = basis(5, 4);
        let nt = total_number(&b);
        for l in [build_jump_source(&b), build_jump_drain(&b)] {
            let k = l.adjoint().compose(&l).to_dense();
            assert!(max_abs(&(&k * &nt - &nt * &k)) < 1e-12);
        }
    }

    #[test]
    fn jordan_wigner_only_signs_the_drain_jump() {
        let b = basis(5, 3);
        let p = ModelParams::matched_rates(5, 3, 10.0).unwrap();
        let hc = build_hamiltonian(&p, &b).unwrap().to_dense();
        let jw = build_hamiltonian_with(&p, &b, SiteStatistics::JordanWigner).unwrap().to_dense();
        assert_eq!(hc, jw);
        let ld = build_jump_drain(&b).to_dense();
        let ld_jw = build_jump_drain_with(&b, SiteStatistics::JordanWigner).to_dense();
        assert_ne!(ld, ld_jw);
        assert_eq!(ld.map(|v| v.norm()), ld_jw.map(|v| v.norm()));
    }

    #[test]
    fn optimal_rates_equal_effective_hopping() {
        let p = ModelParams::matched_rates(5, 2, 100.0).unwrap();
        assert_eq!(p.c_eff(), 0.01);
        assert_eq!(p.gamma_s, 0.01);
        assert_eq!(p.gamma_d, 0.01);
        assert!(ModelParams::matched_rates(5, 2, -1.0).is_err());
        let mut bad = p;
        bad.gamma_d = -0.1;
        assert!(bad.validate().is_err());
    }
}
