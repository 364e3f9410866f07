//! Conversions between rescaled simulation time and physical units, and the
//! rectangular-barrier tunneling estimate of the hopping rate.

/// Planck constant (J s).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = PLANCK / (2.0 * std::f64::consts::PI);
/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Atomic mass unit (kg).
pub const DALTON: f64 = 1.660_539_066_60e-27;
/// Mass of a potassium ion (standard atomic weight 39.0983).
pub const POTASSIUM_MASS: f64 = 39.0983 * DALTON;

/// `t = 𝒰 τ / c`, with `c` the physical hopping rate in s⁻¹.
pub fn physical_time(tau: f64, u_dimensionless: f64, c_phys: f64) -> f64 {
    debug_assert!(c_phys > 0.0);
    u_dimensionless * tau / c_phys
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    /// Barrier height in units of k_B T.
    pub barrier_height: f64,
    /// Ion kinetic energy in units of k_B T.
    pub kinetic_energy: f64,
    /// Barrier width in nm.
    pub barrier_width: f64,
    /// Ion mass in kg.
    pub mass: f64,
    /// Temperature in K.
    pub temperature: f64,
    /// Use ħ instead of h in the tunneling exponent.
    pub use_hbar: bool,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            barrier_height: 1.7,
            kinetic_energy: 1.7,
            barrier_width: 0.24,
            mass: POTASSIUM_MASS,
            temperature: 310.0,
            use_hbar: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunnelingEstimate {
    /// Trapping frequency `K / h` (s⁻¹).
    pub nu: f64,
    /// Barrier transmission `exp(−Δ √(2 m ΔE) / h)`, clamped to 1 for ΔE ≤ 0.
    pub p_tun: f64,
    /// `ν p_tun` (s⁻¹).
    pub rate: f64,
}

pub fn tunneling_rate(p: &PhysicalParams) -> TunnelingEstimate {
    let kt = BOLTZMANN * p.temperature;
    let k = p.kinetic_energy * kt;
    let de = (p.barrier_height - p.kinetic_energy) * kt;
    let planck = if p.use_hbar { HBAR } else { PLANCK };
    let nu = k / PLANCK;
    let p_tun = if de <= 0.0 || p.barrier_width == 0.0 {
        1.0
    } else {
        let width = p.barrier_width * 1e-9;
        (-(width * (2.0 * p.mass * de).sqrt() / planck)).exp()
    };
    TunnelingEstimate { nu, p_tun, rate: nu * p_tun }
}
