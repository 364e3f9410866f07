//! Dissipative transport of hard-core particles through a short chain of
//! binding sites fed by a bosonic source and emptied into a bosonic drain.
//!
//! The crate builds the particle-number sector ([`fockspace`]), the chain
//! Hamiltonian with all-pairs Coulomb repulsion and the reservoir jump
//! operators ([`operators`]), integrates the Lindblad master equation
//! ([`evolution`]), extracts occupancies ([`observables`]) and post-processes
//! trajectories ([`analysis`]).
//!
//! ```
//! use std::sync::Arc;
//! use klsim_core::prelude::*;
//!
//! let params = ModelParams::matched_rates(5, 2, 10.0).unwrap();
//! let ops = ModelOperators::build(&params).unwrap();
//! let rho0 = initial_state(&ops.basis);
//! let t_max = simulation_time(20.0, &params);
//! let series = propagate(&rho0, &ops, &EvolutionConfig::new(t_max)).unwrap();
//! assert!(series.samples.iter().all(|o| o.n_sf < 2.0));
//! ```

pub mod analysis;
pub mod error;
pub mod evolution;
pub mod fockspace;
pub mod observables;
pub mod operators;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::analysis::{
        crossing_time, fit_saturation, lag_increments, max_occupancy, physical_time, rescale_time,
        simulation_time, tunneling_rate, FitResult, PhysicalParams, RunRecord,
    };
    pub use crate::error::{Error, Result};
    pub use crate::evolution::{
        dense_liouvillian, initial_state, lindblad_rhs, log_grid, propagate, DensityMatrix,
        EvolutionConfig, Propagator, TimeSeries,
    };
    pub use crate::fockspace::{enumerate_sector, OccupationState, SectorBasis};
    pub use crate::observables::{measure, ObservableVector};
    pub use crate::operators::{ModelOperators, ModelParams, Mode, SectorOperator, SiteStatistics};
}
