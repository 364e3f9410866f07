//! Experiment configuration: a flat TOML file with optional `[sweep]`,
//! `[physical]` and `[fixture]` sections, plus command-line overrides.
//!
//! ```toml
//! preset = "single-run"
//! n_tot = 2
//! u = 100
//!
//! [sweep]
//! u = [10, 100]
//! n_tot = [2, 3, 4]
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use klsim_core::analysis::{saturation_model, PhysicalParams};
use klsim_core::evolution::{log_grid, EvolutionConfig, Propagator, DEFAULT_DENSE_CAP, DEFAULT_MAX_STEPS, DEFAULT_STRIDE_LIMIT};
use klsim_core::fockspace::MAX_SITES;
use klsim_core::operators::{ModelParams, SiteStatistics};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    SingleRun,
    RescalingCollapse,
    OccupancySaturation,
    LagAnalysis,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::SingleRun,
        Preset::RescalingCollapse,
        Preset::OccupancySaturation,
        Preset::LagAnalysis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SingleRun => "single-run",
            Preset::RescalingCollapse => "rescaling-collapse",
            Preset::OccupancySaturation => "occupancy-saturation",
            Preset::LagAnalysis => "lag-analysis",
        }
    }

    fn defaults(self) -> PresetDefaults {
        match self {
            Preset::SingleRun => PresetDefaults {
                u: vec![10.0],
                n_tot: vec![2],
                tau_max: 50.0,
                grid_points: 200,
                grid_decades: 4.0,
            },
            Preset::RescalingCollapse => PresetDefaults {
                u: vec![10.0, 100.0, 1000.0],
                n_tot: vec![2],
                tau_max: 50.0,
                grid_points: 200,
                grid_decades: 4.0,
            },
            // large U moves the occupancy maximum to late times
            Preset::OccupancySaturation => PresetDefaults {
                u: vec![10.0, 100.0],
                n_tot: (2..=9).collect(),
                tau_max: 5000.0,
                grid_points: 200,
                grid_decades: 4.0,
            },
            // crossings sit between τ ≈ 400 and 800; a denser grid keeps the
            // interpolated crossing times well inside the lag increments
            Preset::LagAnalysis => PresetDefaults {
                u: vec![10.0],
                n_tot: (9..=14).collect(),
                tau_max: 1500.0,
                grid_points: 400,
                grid_decades: 3.0,
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            CliError::usage("preset", format!("unknown preset {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

struct PresetDefaults {
    u: Vec<f64>,
    n_tot: Vec<usize>,
    tau_max: f64,
    grid_points: usize,
    grid_decades: f64,
}

fn statistics_name(s: SiteStatistics) -> &'static str {
    match s {
        SiteStatistics::HardCore => "hard-core",
        SiteStatistics::JordanWigner => "jordan-wigner",
    }
}

fn parse_statistics(s: &str) -> CliResult<SiteStatistics> {
    match s {
        "hard-core" => Ok(SiteStatistics::HardCore),
        "jordan-wigner" => Ok(SiteStatistics::JordanWigner),
        _ => Err(CliError::usage(
            "statistics",
            format!("unknown statistics {s:?}; expected hard-core or jordan-wigner"),
        )),
    }
}

pub fn parse_backend(s: &str) -> CliResult<Propagator> {
    s.parse().map_err(|e: klsim_core::Error| CliError::usage("backend", e.to_string()))
}

/// On-disk layout. Every field is optional; missing ones take preset or
/// global defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<String>,
    n_sites: Option<usize>,
    n_tot: Option<usize>,
    u: Option<f64>,
    hbar: Option<f64>,
    c_hop: Option<f64>,
    gamma_s: Option<f64>,
    gamma_d: Option<f64>,
    statistics: Option<String>,
    backend: Option<String>,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    tau_max: Option<f64>,
    grid_points: Option<usize>,
    grid_decades: Option<f64>,
    krylov_dim: Option<usize>,
    eigen_every: Option<usize>,
    dense_cap: Option<usize>,
    stride_limit: Option<usize>,
    max_steps: Option<usize>,
    reduce_blocks: Option<bool>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    sweep: Option<SweepSection>,
    physical: Option<PhysicalSection>,
    fixture: Option<FixtureSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    u: Option<Vec<f64>>,
    n_tot: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhysicalSection {
    c_phys: Option<f64>,
    u_scale: Option<f64>,
    barrier_height: Option<f64>,
    kinetic_energy: Option<f64>,
    barrier_width: Option<f64>,
    temperature: Option<f64>,
    use_hbar: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureSection {
    n_tot: Option<Vec<usize>>,
    delta_tau: Option<Vec<f64>>,
    a: Option<f64>,
    b: Option<f64>,
    c_sat: Option<f64>,
    noise: Option<f64>,
}

/// Unit conversion and barrier settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConfig {
    /// Physical hopping rate in s⁻¹.
    pub c_phys: f64,
    /// Dimensionless repulsion used when converting lags to seconds.
    pub u_scale: f64,
    pub barrier: PhysicalParams,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        Self { c_phys: 1e13, u_scale: 1e3, barrier: PhysicalParams::default() }
    }
}

/// Lag data injected in place of simulations.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub n_tot: Vec<usize>,
    pub delta_tau: Vec<f64>,
    /// Relative amplitude of uniform multiplicative noise, drawn from `seed`.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub n_sites: usize,
    pub u: Vec<f64>,
    pub n_tot: Vec<usize>,
    pub hbar: f64,
    pub c_hop: f64,
    /// `None` selects the effective hopping `ħc²/U`.
    pub gamma_s: Option<f64>,
    pub gamma_d: Option<f64>,
    pub statistics: SiteStatistics,
    pub backend: Propagator,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub tau_max: f64,
    pub grid_points: usize,
    pub grid_decades: f64,
    pub krylov_dim: usize,
    pub eigen_every: usize,
    pub dense_cap: usize,
    pub stride_limit: usize,
    /// Step budget of the adaptive-explicit backend.
    pub max_steps: usize,
    pub reduce_blocks: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub physical: PhysicalConfig,
    pub fixture: Option<Fixture>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub u: Option<Vec<f64>>,
    pub n_tot: Option<Vec<usize>>,
    pub backend: Option<Propagator>,
    /// Sets `rel_tol` to the value and `abs_tol` to a hundredth of it.
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn parse_file(text: &str) -> CliResult<FileConfig> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        CliError::Parse { line, column, message: e.message().trim().to_string() }
    })
}

/// Parses and validates a configuration file with no overrides.
pub fn validate_config(text: &str) -> CliResult<ExperimentConfig> {
    load(text, &Overrides::default())
}

pub fn load(text: &str, overrides: &Overrides) -> CliResult<ExperimentConfig> {
    let file = parse_file(text)?;
    resolve(file, overrides)
}

fn positive(field: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::usage(field, format!("{field} must be positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> CliResult<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::usage(field, format!("{field} must be non-negative, got {v}")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> CliResult<usize> {
    if v >= min {
        Ok(v)
    } else {
        Err(CliError::usage(field, format!("{field} must be at least {min}, got {v}")))
    }
}

fn resolve(file: FileConfig, o: &Overrides) -> CliResult<ExperimentConfig> {
    let preset = match (o.preset, &file.preset) {
        (Some(p), _) => p,
        (None, Some(name)) => name.parse()?,
        (None, None) => Preset::SingleRun,
    };
    let d = preset.defaults();
    let sweep = file.sweep.clone().unwrap_or_default();

    if file.u.is_some() && sweep.u.is_some() {
        return Err(CliError::usage("u", "u is given both at top level and in [sweep]"));
    }
    if file.n_tot.is_some() && sweep.n_tot.is_some() {
        return Err(CliError::usage("n_tot", "n_tot is given both at top level and in [sweep]"));
    }
    let u = o
        .u
        .clone()
        .or(sweep.u)
        .or(file.u.map(|v| vec![v]))
        .unwrap_or(d.u);
    let n_tot = o
        .n_tot
        .clone()
        .or(sweep.n_tot)
        .or(file.n_tot.map(|v| vec![v]))
        .unwrap_or(d.n_tot);
    if u.is_empty() {
        return Err(CliError::usage("u", "sweep axis u is empty"));
    }
    if n_tot.is_empty() {
        return Err(CliError::usage("n_tot", "sweep axis n_tot is empty"));
    }
    for &v in &u {
        positive("u", v)?;
    }
    for &n in &n_tot {
        at_least("n_tot", n, 1)?;
    }
    if let Some(w) = find_duplicate(&u) {
        return Err(CliError::usage("u", format!("u value {w} appears twice")));
    }
    if let Some(w) = find_duplicate(&n_tot.iter().map(|&n| n as f64).collect::<Vec<_>>()) {
        return Err(CliError::usage("n_tot", format!("n_tot value {w} appears twice")));
    }

    let n_sites = at_least("n_sites", file.n_sites.unwrap_or(5), 1)?;
    if n_sites > MAX_SITES {
        return Err(CliError::usage("n_sites", format!("n_sites must be at most {MAX_SITES}, got {n_sites}")));
    }
    let (mut rel_tol, mut abs_tol) = (file.rel_tol.unwrap_or(1e-10), file.abs_tol.unwrap_or(1e-12));
    if let Some(t) = o.tol {
        positive("tol", t)?;
        rel_tol = t;
        abs_tol = t * 1e-2;
    }
    for (field, v) in [("rel_tol", rel_tol), ("abs_tol", abs_tol)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(CliError::usage(field, format!("{field} must lie in (0, 1), got {v}")));
        }
    }
    let backend = match (o.backend, &file.backend) {
        (Some(b), _) => b,
        (None, Some(name)) => parse_backend(name)?,
        (None, None) => Propagator::default(),
    };
    let statistics = match &file.statistics {
        Some(s) => parse_statistics(s)?,
        None => SiteStatistics::default(),
    };

    let phys = file.physical.clone().unwrap_or_default();
    let defaults = PhysicalConfig::default();
    let physical = PhysicalConfig {
        c_phys: positive("physical.c_phys", phys.c_phys.unwrap_or(defaults.c_phys))?,
        u_scale: positive("physical.u_scale", phys.u_scale.unwrap_or(defaults.u_scale))?,
        barrier: PhysicalParams {
            barrier_height: non_negative(
                "physical.barrier_height",
                phys.barrier_height.unwrap_or(defaults.barrier.barrier_height),
            )?,
            kinetic_energy: positive(
                "physical.kinetic_energy",
                phys.kinetic_energy.unwrap_or(defaults.barrier.kinetic_energy),
            )?,
            barrier_width: non_negative(
                "physical.barrier_width",
                phys.barrier_width.unwrap_or(defaults.barrier.barrier_width),
            )?,
            temperature: positive(
                "physical.temperature",
                phys.temperature.unwrap_or(defaults.barrier.temperature),
            )?,
            use_hbar: phys.use_hbar.unwrap_or(false),
            ..defaults.barrier
        },
    };

    let fixture = match file.fixture {
        None => None,
        Some(f) => Some(resolve_fixture(f)?),
    };
    if fixture.is_some() && preset != Preset::LagAnalysis {
        return Err(CliError::usage("fixture", "a [fixture] section needs preset = \"lag-analysis\""));
    }

    let cfg = ExperimentConfig {
        preset,
        n_sites,
        u,
        n_tot,
        hbar: positive("hbar", file.hbar.unwrap_or(1.0))?,
        c_hop: positive("c_hop", file.c_hop.unwrap_or(1.0))?,
        gamma_s: file.gamma_s.map(|v| non_negative("gamma_s", v)).transpose()?,
        gamma_d: file.gamma_d.map(|v| non_negative("gamma_d", v)).transpose()?,
        statistics,
        backend,
        rel_tol,
        abs_tol,
        tau_max: positive("tau_max", file.tau_max.unwrap_or(d.tau_max))?,
        grid_points: at_least("grid_points", file.grid_points.unwrap_or(d.grid_points), 2)?,
        grid_decades: positive("grid_decades", file.grid_decades.unwrap_or(d.grid_decades))?,
        krylov_dim: at_least("krylov_dim", file.krylov_dim.unwrap_or(30), 2)?,
        eigen_every: at_least("eigen_every", file.eigen_every.unwrap_or(10), 1)?,
        dense_cap: at_least("dense_cap", file.dense_cap.unwrap_or(DEFAULT_DENSE_CAP), 1)?,
        stride_limit: file.stride_limit.unwrap_or(DEFAULT_STRIDE_LIMIT),
        max_steps: at_least("max_steps", file.max_steps.unwrap_or(DEFAULT_MAX_STEPS), 1)?,
        reduce_blocks: file.reduce_blocks.unwrap_or(true),
        seed: file.seed.unwrap_or(0),
        out: o.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("klsim-out")),
        physical,
        fixture,
    };
    if preset == Preset::SingleRun && cfg.cells().len() != 1 {
        return Err(CliError::usage(
            "u",
            format!("single-run takes one (u, n_tot) pair, got {} cells", cfg.cells().len()),
        ));
    }
    // the chain parameters are checked once more by the model itself
    for (u, n) in cfg.cells() {
        cfg.model_params(u, n).map_err(|e| CliError::usage("model", e.to_string()))?;
    }
    Ok(cfg)
}

fn find_duplicate(values: &[f64]) -> Option<f64> {
    values
        .iter()
        .enumerate()
        .find(|(i, v)| values[..*i].contains(v))
        .map(|(_, &v)| v)
}

fn resolve_fixture(f: FixtureSection) -> CliResult<Fixture> {
    let n_tot = f.n_tot.ok_or_else(|| CliError::usage("fixture.n_tot", "fixture needs n_tot"))?;
    let delta_tau = match (f.delta_tau, f.a, f.b, f.c_sat) {
        (Some(d), None, None, None) => d,
        (None, Some(a), Some(b), Some(c)) => {
            positive("fixture.c_sat", c)?;
            n_tot.iter().map(|&n| saturation_model(a, b, c, n as f64)).collect()
        }
        _ => {
            return Err(CliError::usage(
                "fixture.delta_tau",
                "fixture needs either delta_tau or all of a, b, c_sat",
            ))
        }
    };
    if delta_tau.len() != n_tot.len() {
        return Err(CliError::usage(
            "fixture.delta_tau",
            format!("fixture has {} n_tot values but {} delta_tau values", n_tot.len(), delta_tau.len()),
        ));
    }
    if n_tot.len() < 4 {
        return Err(CliError::usage("fixture.n_tot", "fixture needs at least 4 points"));
    }
    if n_tot.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::usage("fixture.n_tot", "fixture n_tot must be strictly increasing"));
    }
    let noise = non_negative("fixture.noise", f.noise.unwrap_or(0.0))?;
    if noise >= 1.0 {
        return Err(CliError::usage("fixture.noise", format!("fixture.noise must be below 1, got {noise}")));
    }
    Ok(Fixture { n_tot, delta_tau, noise })
}

impl ExperimentConfig {
    /// `(u, n_tot)` cells, `u` major.
    pub fn cells(&self) -> Vec<(f64, usize)> {
        if self.fixture.is_some() {
            return Vec::new();
        }
        self.u
            .iter()
            .flat_map(|&u| self.n_tot.iter().map(move |&n| (u, n)))
            .collect()
    }

    pub fn model_params(&self, u: f64, n_tot: usize) -> klsim_core::Result<ModelParams> {
        let mut p = ModelParams::matched_rates(self.n_sites, n_tot, u)?;
        p.hbar = self.hbar;
        p.c_hop = self.c_hop;
        let c_eff = p.c_eff();
        p.gamma_s = self.gamma_s.unwrap_or(c_eff);
        p.gamma_d = self.gamma_d.unwrap_or(c_eff);
        p.validate()?;
        Ok(p)
    }

    /// Output grid in rescaled time.
    pub fn tau_grid(&self) -> Vec<f64> {
        log_grid(
            self.tau_max * 10f64.powf(-self.grid_decades),
            self.tau_max,
            self.grid_points,
        )
    }

    pub fn evolution_config(&self, params: &ModelParams) -> EvolutionConfig {
        let c_eff = params.c_eff();
        let grid: Vec<f64> = self.tau_grid().into_iter().map(|tau| tau / c_eff).collect();
        let t_max = *grid.last().expect("grid has at least two points");
        EvolutionConfig {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            krylov_dim: self.krylov_dim,
            eigen_every: self.eigen_every,
            dense_cap: self.dense_cap,
            stride_limit: self.stride_limit,
            max_steps: self.max_steps,
            reduce_blocks: self.reduce_blocks,
            ..EvolutionConfig::new(t_max).with_propagator(self.backend).with_grid(grid)
        }
    }

    /// The fully defaulted configuration in the file format; loading it back
    /// gives the same configuration.
    pub fn to_toml(&self) -> String {
        let b = &self.physical.barrier;
        let file = FileConfig {
            preset: Some(self.preset.name().into()),
            n_sites: Some(self.n_sites),
            n_tot: None,
            u: None,
            hbar: Some(self.hbar),
            c_hop: Some(self.c_hop),
            gamma_s: self.gamma_s,
            gamma_d: self.gamma_d,
            statistics: Some(statistics_name(self.statistics).into()),
            backend: Some(self.backend.name().into()),
            rel_tol: Some(self.rel_tol),
            abs_tol: Some(self.abs_tol),
            tau_max: Some(self.tau_max),
            grid_points: Some(self.grid_points),
            grid_decades: Some(self.grid_decades),
            krylov_dim: Some(self.krylov_dim),
            eigen_every: Some(self.eigen_every),
            dense_cap: Some(self.dense_cap),
            stride_limit: Some(self.stride_limit),
            max_steps: Some(self.max_steps),
            reduce_blocks: Some(self.reduce_blocks),
            seed: Some(self.seed),
            out: None,
            sweep: Some(SweepSection { u: Some(self.u.clone()), n_tot: Some(self.n_tot.clone()) }),
            physical: Some(PhysicalSection {
                c_phys: Some(self.physical.c_phys),
                u_scale: Some(self.physical.u_scale),
                barrier_height: Some(b.barrier_height),
                kinetic_energy: Some(b.kinetic_energy),
                barrier_width: Some(b.barrier_width),
                temperature: Some(b.temperature),
                use_hbar: Some(b.use_hbar),
            }),
            fixture: self.fixture.as_ref().map(|f| FixtureSection {
                n_tot: Some(f.n_tot.clone()),
                delta_tau: Some(f.delta_tau.clone()),
                noise: Some(f.noise),
                ..Default::default()
            }),
        };
        toml::to_string(&file).expect("configuration serializes")
    }
}

/// Parses `--u` style lists: comma separated values.
pub fn parse_f64_list(field: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CliError::usage(field, format!("{field}: {t:?} is not a number"))))
        .collect()
}

/// Parses `--ntot` style lists: comma separated integers or inclusive
/// ranges `a..b`.
pub fn parse_usize_list(field: &str, s: &str) -> CliResult<Vec<usize>> {
    let bad = |t: &str| CliError::usage(field, format!("{field}: {t:?} is not an integer or a..b range"));
    let mut out = Vec::new();
    for t in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some((a, b)) = t.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| bad(t))?;
            let b: usize = b.trim().parse().map_err(|_| bad(t))?;
            if a > b {
                return Err(bad(t));
            }
            out.extend(a..=b);
        } else {
            out.push(t.parse().map_err(|_| bad(t))?);
        }
    }
    Ok(out)
}
