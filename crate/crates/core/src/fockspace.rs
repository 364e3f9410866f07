//! Fixed-particle-number sectors of the source ⊗ chain ⊗ drain occupation space.
//!
//! The source and drain are bosonic reservoirs (any occupancy), the chain
//! sites are hard-core (occupancy 0 or 1). States are stored in descending
//! lexicographic order of the tuple `(n_source, sites..., n_drain)`, so the
//! fully loaded source `(N_tot | 0...0 | 0)` is always index 0.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Occupation numbers of every mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OccupationState {
    pub n_source: usize,
    pub sites: Vec<u8>,
    pub n_drain: usize,
}

impl OccupationState {
    pub fn new(n_source: usize, sites: Vec<u8>, n_drain: usize) -> Self {
        Self { n_source, sites, n_drain }
    }

    /// Number of particles on the chain.
    pub fn chain_count(&self) -> usize {
        self.sites.iter().map(|&s| s as usize).sum()
    }

    pub fn total(&self) -> usize {
        self.n_source + self.chain_count() + self.n_drain
    }

    /// Reservoir occupancies `(n_source, n_drain)`; the dynamics never
    /// creates coherences between states with different labels.
    pub fn reservoir_label(&self) -> (usize, usize) {
        (self.n_source, self.n_drain)
    }

    fn sort_key(&self) -> (usize, &[u8], usize) {
        (self.n_source, &self.sites, self.n_drain)
    }
}

impl fmt::Display for OccupationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}|", self.n_source)?;
        for (j, s) in self.sites.iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, "|{})", self.n_drain)
    }
}

/// All occupation states with `n_tot` particles over `n_sites` chain sites.
#[derive(Debug, Clone)]
pub struct SectorBasis {
    n_sites: usize,
    n_tot: usize,
    states: Vec<OccupationState>,
    index: HashMap<OccupationState, usize>,
}

impl PartialEq for SectorBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n_sites == other.n_sites && self.n_tot == other.n_tot && self.states == other.states
    }
}

/// Builds the sector for `(n_sites, n_tot)`, both of which must be positive.
/// Upper bound on the chain length accepted by [`enumerate_sector`].
pub const MAX_SITES: usize = 20;

pub fn enumerate_sector(n_sites: usize, n_tot: usize) -> Result<SectorBasis> {
    if n_sites == 0 || n_sites > MAX_SITES {
        return Err(Error::InvalidArgument(format!("n_sites must be in 1..={MAX_SITES}, got {n_sites}")));
    }
    if n_tot == 0 {
        return Err(Error::InvalidArgument("n_tot must be at least 1".into()));
    }
    Ok(SectorBasis::build(n_sites, n_tot))
}

/// Closed-form sector dimension `Σ_k C(n_sites, k) (n_tot − k + 1)`.
pub fn sector_dimension(n_sites: usize, n_tot: usize) -> usize {
    (0..=n_sites.min(n_tot))
        .map(|k| binomial(n_sites, k) * (n_tot - k + 1))
        .sum()
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

impl SectorBasis {
    /// Unchecked constructor; `n_tot = 0` is allowed here because bare
    /// ladder operators map into the next-lower sector.
    pub(crate) fn build(n_sites: usize, n_tot: usize) -> Self {
        assert!((1..32).contains(&n_sites), "unsupported chain length {n_sites}");
        let mut states = Vec::with_capacity(sector_dimension(n_sites, n_tot));
        for n_source in (0..=n_tot).rev() {
            let remaining = n_tot - n_source;
            for mask in (0u32..(1 << n_sites)).rev() {
                let k = mask.count_ones() as usize;
                if k > remaining {
                    continue;
                }
                let sites = (0..n_sites)
                    .map(|j| ((mask >> (n_sites - 1 - j)) & 1) as u8)
                    .collect();
                states.push(OccupationState::new(n_source, sites, remaining - k));
            }
        }
        debug_assert!(states.windows(2).all(|w| w[0].sort_key() > w[1].sort_key()));
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self { n_sites, n_tot, states, index }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_tot(&self) -> usize {
        self.n_tot
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[OccupationState] {
        &self.states
    }

    pub fn state_of(&self, position: usize) -> Option<&OccupationState> {
        self.states.get(position)
    }

    pub fn index_of(&self, state: &OccupationState) -> Result<usize> {
        self.index
            .get(state)
            .copied()
            .ok_or_else(|| Error::NotFound(state.to_string()))
    }

    pub(crate) fn lookup(&self, state: &OccupationState) -> Option<usize> {
        self.index.get(state).copied()
    }

    /// Basis indices grouped by reservoir label, in order of first appearance.
    pub fn reservoir_blocks(&self) -> Vec<Vec<usize>> {
        let mut order: Vec<(usize, usize)> = Vec::new();
        let mut groups: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (i, s) in self.states.iter().enumerate() {
            let label = s.reservoir_label();
            groups
                .entry(label)
                .or_insert_with(|| {
                    order.push(label);
                    Vec::new()
                })
                .push(i);
        }
        order.into_iter().map(|l| groups.remove(&l).unwrap()).collect()
    }
}
