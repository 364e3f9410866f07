//! Real coordinates for Hermitian operators and the Liouvillian assembled
//! in them.
//!
//! A Hermitian `ρ` restricted to a set of diagonal blocks is stored as a real
//! vector: `ρ_aa` for each diagonal entry and `√2 Re ρ_ab`, `√2 Im ρ_ab` for
//! each `a < b` in the same block. The coordinates are orthonormal for the
//! Frobenius inner product, so the vector 2-norm equals `‖ρ‖_F`. The
//! generator maps Hermitian operators to Hermitian operators, so in these
//! coordinates it is a real matrix.

use std::collections::HashMap;

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operators::{ModelOperators, SectorOperator};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Coordinate layout over a set of disjoint diagonal blocks.
#[derive(Debug, Clone)]
pub struct HermitianCoordinates {
    dim: usize,
    blocks: Vec<Vec<usize>>,
    /// `(a, b)` with `a <= b` for each coordinate; off-diagonal pairs appear
    /// twice (real part, then imaginary part).
    pairs: Vec<(usize, usize)>,
    first: HashMap<(usize, usize), usize>,
}

impl HermitianCoordinates {
    pub fn new(dim: usize, blocks: Vec<Vec<usize>>) -> Self {
        let mut pairs = Vec::new();
        let mut first = HashMap::new();
        for block in &blocks {
            let mut idx = block.clone();
            idx.sort_unstable();
            for (i, &a) in idx.iter().enumerate() {
                first.insert((a, a), pairs.len());
                pairs.push((a, a));
                for &b in &idx[i + 1..] {
                    first.insert((a, b), pairs.len());
                    pairs.push((a, b));
                    pairs.push((a, b));
                }
            }
        }
        Self { dim, blocks, pairs, first }
    }

    /// Single block covering the whole sector.
    pub fn full(dim: usize) -> Self {
        Self::new(dim, vec![(0..dim).collect()])
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sector_dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// True when every non-zero entry of `m` lies inside a block.
    pub fn covers(&self, m: &DMatrix<C64>, tol: f64) -> bool {
        for b in 0..self.dim {
            for a in 0..=b {
                if (m[(a, b)].norm() > tol || m[(b, a)].norm() > tol)
                    && !self.first.contains_key(&(a, b)) {
                        return false;
                    }
            }
        }
        true
    }

    /// Coordinates of the Hermitian part of `m` inside the blocks.
    pub fn encode(&self, m: &DMatrix<C64>) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        let mut k = 0;
        while k < self.pairs.len() {
            let (a, b) = self.pairs[k];
            if a == b {
                x[k] = m[(a, a)].re;
                k += 1;
            } else {
                let v = (m[(a, b)] + m[(b, a)].conj()) * 0.5;
                x[k] = SQRT2 * v.re;
                x[k + 1] = SQRT2 * v.im;
                k += 2;
            }
        }
        x
    }

    pub fn decode(&self, x: &[f64]) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let mut k = 0;
        while k < self.pairs.len() {
            let (a, b) = self.pairs[k];
            if a == b {
                m[(a, a)] = C64::new(x[k], 0.0);
                k += 1;
            } else {
                let v = C64::new(x[k], x[k + 1]) / SQRT2;
                m[(a, b)] = v;
                m[(b, a)] = v.conj();
                k += 2;
            }
        }
        m
    }

    /// Trace of the encoded operator.
    pub fn trace(&self, x: &[f64]) -> f64 {
        self.pairs
            .iter()
            .zip(x)
            .filter(|((a, b), _)| a == b)
            .map(|(_, v)| v)
            .sum()
    }

    /// Indicator of the diagonal coordinates: `trace(x) = w · x`.
    pub fn trace_functional(&self) -> Vec<f64> {
        self.pairs.iter().map(|(a, b)| if a == b { 1.0 } else { 0.0 }).collect()
    }

    /// Diagonal entries `ρ_aa` (zero outside the blocks).
    pub fn diagonal(&self, x: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for ((a, b), v) in self.pairs.iter().zip(x) {
            if a == b {
                d[*a] = *v;
            }
        }
        d
    }

    /// Smallest eigenvalue over all blocks.
    pub fn min_eigenvalue(&self, x: &[f64]) -> f64 {
        let m = self.decode(x);
        self.blocks
            .iter()
            .map(|block| {
                let sub = DMatrix::from_fn(block.len(), block.len(), |i, j| m[(block[i], block[j])]);
                sub.symmetric_eigenvalues().min()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Column lists of a sector operator: `cols[a] = [(c, A_ca)]`.
fn columns(op: &SectorOperator) -> Vec<Vec<(usize, C64)>> {
    let mut cols = vec![Vec::new(); op.dim()];
    for (r, c, v) in op.triplets() {
        cols[c].push((r, v));
    }
    cols
}

/// Sparse description of the Lindblad generator, evaluated on matrix units.
///
/// With `A = −(i/ħ) H − Γ_s L_s†L_s − Γ_d L_d†L_d` the generator reads
/// `ρ ↦ A ρ + ρ A† + Σ 2Γ L ρ L†`.
pub(crate) struct UnitAction {
    a_cols: Vec<Vec<(usize, C64)>>,
    jumps: Vec<(f64, Vec<Vec<(usize, C64)>>)>,
}

impl UnitAction {
    pub(crate) fn new(ops: &ModelOperators) -> Self {
        let p = &ops.params;
        let n = ops.basis.dim();
        let mut a: HashMap<(usize, usize), C64> = HashMap::new();
        for (r, c, v) in ops.hamiltonian.triplets() {
            *a.entry((r, c)).or_default() += C64::new(0.0, -1.0 / p.hbar) * v;
        }
        let mut jumps = Vec::new();
        for (gamma, l) in [(p.gamma_s, &ops.jump_source), (p.gamma_d, &ops.jump_drain)] {
            if gamma == 0.0 {
                continue;
            }
            let k = l.adjoint().compose(l);
            for (r, c, v) in k.triplets() {
                *a.entry((r, c)).or_default() -= v * gamma;
            }
            jumps.push((2.0 * gamma, columns(l)));
        }
        let mut a_cols = vec![Vec::new(); n];
        let mut entries: Vec<_> = a.into_iter().filter(|(_, v)| *v != C64::new(0.0, 0.0)).collect();
        entries.sort_by_key(|((r, c), _)| (*c, *r));
        for ((r, c), v) in entries {
            a_cols[c].push((r, v));
        }
        Self { a_cols, jumps }
    }

    /// Adds `w · L(|a⟩⟨b|)` into `out`.
    pub(crate) fn add_unit(&self, a: usize, b: usize, w: C64, out: &mut HashMap<(usize, usize), C64>) {
        for &(c, v) in &self.a_cols[a] {
            *out.entry((c, b)).or_default() += w * v;
        }
        for &(d, v) in &self.a_cols[b] {
            *out.entry((a, d)).or_default() += w * v.conj();
        }
        for (g, cols) in &self.jumps {
            for &(c, lc) in &cols[a] {
                for &(d, ld) in &cols[b] {
                    *out.entry((c, d)).or_default() += w * lc * ld.conj() * *g;
                }
            }
        }
    }
}

/// The Liouvillian as a sparse real matrix over [`HermitianCoordinates`].
#[derive(Debug, Clone)]
pub struct RealGenerator {
    pub coords: HermitianCoordinates,
    pub matrix: CsrMatrix<f64>,
}

impl RealGenerator {
    /// Assembles the generator; fails if the blocks are not invariant.
    pub fn assemble(ops: &ModelOperators, coords: HermitianCoordinates) -> Result<Self> {
        let action = UnitAction::new(ops);
        let n = coords.len();
        let mut coo = CooMatrix::new(n, n);
        let mut image = HashMap::new();
        let mut k = 0;
        while k < n {
            let (a, b) = coords.pairs[k];
            let units: Vec<(usize, Vec<(usize, usize, C64)>)> = if a == b {
                vec![(k, vec![(a, a, C64::new(1.0, 0.0))])]
            } else {
                let s = 1.0 / SQRT2;
                vec![
                    (k, vec![(a, b, C64::new(s, 0.0)), (b, a, C64::new(s, 0.0))]),
                    (k + 1, vec![(a, b, C64::new(0.0, s)), (b, a, C64::new(0.0, -s))]),
                ]
            };
            for (col, terms) in units {
                image.clear();
                for (r, c, w) in terms {
                    action.add_unit(r, c, w, &mut image);
                }
                for (&(r, c), &v) in image.iter() {
                    if r > c || v.norm() == 0.0 {
                        continue;
                    }
                    let Some(&row) = coords.first.get(&(r, c)) else {
                        if v.norm() > 1e-13 {
                            return Err(Error::InvalidArgument(format!(
                                "coordinate blocks are not invariant: generator couples into ({r}, {c})"
                            )));
                        }
                        continue;
                    };
                    if r == c {
                        coo.push(row, col, v.re);
                    } else {
                        coo.push(row, col, SQRT2 * v.re);
                        coo.push(row + 1, col, SQRT2 * v.im);
                    }
                }
            }
            k += if a == b { 1 } else { 2 };
        }
        let matrix = CsrMatrix::from(&coo).filter(|_, _, v| *v != 0.0);
        Ok(Self { coords, matrix })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// `y = G x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let offsets = self.matrix.row_offsets();
        let cols = self.matrix.col_indices();
        let vals = self.matrix.values();
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in offsets[r]..offsets[r + 1] {
                acc += vals[k] * x[cols[k]];
            }
            *out = acc;
        }
    }

    /// Infinity norm (largest absolute row sum).
    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn norm_inf(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|row| row.values().iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (r, c, v) in self.matrix.triplet_iter() {
            m[(r, c)] += *v;
        }
        m
    }
}
