//! Benchmark fixtures shared by the criterion targets.

use klsim_core::prelude::*;

/// Operators and initial state for a five-site chain.
pub fn chain(n_tot: usize, u: f64) -> (ModelOperators, DensityMatrix) {
    let params = ModelParams::matched_rates(5, n_tot, u).expect("valid parameters");
    let ops = ModelOperators::build(&params).expect("operators build");
    let rho0 = initial_state(&ops.basis);
    (ops, rho0)
}
