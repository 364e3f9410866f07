//! The `klsim-summary/1` document. Every value in it is computed from the
//! run CSVs (and `fixture.csv`) of an output directory, so `analyze` on the
//! directory reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use klsim_core::analysis::{
    crossing_time, fit_saturation, increasing_and_concave, lag_increments, max_occupancy,
    physical_time, sup_distance, tunneling_rate, FitResult, RunRecord,
};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{cell_path, partial_path, read_csv, RunStatus, RunTable};

pub const SUMMARY_SCHEMA: &str = "klsim-summary/1";
pub const FIXTURE_FILE: &str = "fixture.csv";
pub const SATURATION_FILE: &str = "saturation.csv";
pub const LAGS_FILE: &str = "lags.csv";

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Summary {
    pub schema: &'static str,
    pub preset: String,
    /// `complete`, or `partial` when some cell failed or is missing.
    pub status: String,
    pub runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturation: Option<Saturation>,
    pub collapse: Vec<Collapse>,
    pub lags: Vec<LagSeries>,
    pub physical: Physical,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunSummary {
    pub file: String,
    pub u: f64,
    pub n_tot: usize,
    pub status: String,
    pub samples: usize,
    pub n_sf_max: Option<f64>,
    /// Last downward crossing of `n_SF = 1`.
    pub tau_star: Option<f64>,
    pub max_trace_residual: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    /// Largest `|Σ populations − N_tot|` over the samples.
    pub max_number_deviation: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Saturation {
    pub nondecreasing_in_n_tot: bool,
    pub nonincreasing_in_u: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Collapse {
    pub n_tot: usize,
    pub u_a: f64,
    pub u_b: f64,
    pub sup_distance: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LagPoint {
    pub n_tot: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FitSummary {
    pub a: f64,
    pub b: f64,
    pub c_sat: f64,
    pub asymptote: f64,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl From<FitResult> for FitSummary {
    fn from(f: FitResult) -> Self {
        Self {
            a: f.a,
            b: f.b,
            c_sat: f.c_sat,
            asymptote: f.asymptote(),
            residual_norm: f.residual_norm,
            converged: f.converged,
            iterations: f.iterations,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LagSeries {
    /// `null` for injected fixture data.
    pub u: Option<f64>,
    pub tau_star: Vec<LagPoint>,
    pub delta_tau: Vec<LagPoint>,
    pub increasing_and_concave: bool,
    pub fit: Option<FitSummary>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Conversion {
    pub label: String,
    pub tau: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Physical {
    pub c_phys: f64,
    pub u_scale: f64,
    pub conversions: Vec<Conversion>,
    pub tunneling: Tunneling,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Tunneling {
    pub barrier_height: f64,
    pub kinetic_energy: f64,
    pub barrier_width_nm: f64,
    pub temperature: f64,
    pub use_hbar: bool,
    pub nu: f64,
    pub p_tun: f64,
    pub rate: f64,
}

/// Loads the table for a cell: the complete file if present, otherwise the
/// partial one.
pub fn load_cell(dir: &Path, u: f64, n_tot: usize) -> CliResult<Option<(String, RunTable)>> {
    for path in [cell_path(dir, u, n_tot), partial_path(dir, u, n_tot)] {
        if path.exists() {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            return Ok(Some((name, read_csv(&path)?)));
        }
    }
    Ok(None)
}

fn record(table: &RunTable) -> Option<RunRecord> {
    RunRecord::new(table.params, table.samples.clone()).ok()
}

fn run_summary(file: String, u: f64, n_tot: usize, table: &RunTable) -> RunSummary {
    let status = match &table.status {
        RunStatus::Complete => "complete".to_string(),
        RunStatus::Failed(r) => format!("failed: {r}"),
    };
    let rec = record(table);
    let s = &table.samples;
    let fold = |f: &dyn Fn(&klsim_core::observables::ObservableVector) -> Option<f64>, max: bool| {
        s.iter().filter_map(f).reduce(|a, b| if max { a.max(b) } else { a.min(b) })
    };
    RunSummary {
        file,
        u,
        n_tot,
        status,
        samples: s.len(),
        n_sf_max: rec.as_ref().map(max_occupancy),
        tau_star: rec.as_ref().and_then(|r| crossing_time(r, 1.0).ok()),
        max_trace_residual: fold(&|o| Some(o.trace_residual), true),
        min_eigenvalue: fold(&|o| o.min_eigenvalue, false),
        max_number_deviation: fold(&|o| Some((o.total() - n_tot as f64).abs()), true),
    }
}

/// Reads the fixture lags written by the runner.
pub fn read_fixture(dir: &Path) -> CliResult<BTreeMap<usize, f64>> {
    let path = dir.join(FIXTURE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let bad = |i: usize| CliError::Core(klsim_core::Error::Format(format!("{}:{}: malformed row", path.display(), i + 1)));
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line == "n_tot,delta_tau" {
            continue;
        }
        let (n, v) = line.split_once(',').ok_or_else(|| bad(i))?;
        out.insert(n.parse().map_err(|_| bad(i))?, v.parse().map_err(|_| bad(i))?);
    }
    Ok(out)
}

pub fn render_fixture(data: &BTreeMap<usize, f64>) -> String {
    let mut s = String::from("# klsim-fixture/1 injected plateau lags\nn_tot,delta_tau\n");
    for (n, v) in data {
        writeln!(s, "{n},{v:e}").unwrap();
    }
    s
}

fn lag_series(u: Option<f64>, tau_star: &BTreeMap<usize, f64>, delta: BTreeMap<usize, f64>) -> LagSeries {
    let fit = fit_saturation(&delta).ok().map(FitSummary::from);
    let points = |m: &BTreeMap<usize, f64>| m.iter().map(|(&n, &value)| LagPoint { n_tot: n, value }).collect();
    LagSeries {
        u,
        tau_star: points(tau_star),
        delta_tau: points(&delta),
        increasing_and_concave: delta.len() >= 2 && increasing_and_concave(&delta),
        fit,
    }
}

/// Longest run of consecutive `N_tot` keys.
fn consecutive_run(m: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    let keys: Vec<usize> = m.keys().copied().collect();
    let mut best: &[usize] = &[];
    let mut start = 0;
    for i in 1..=keys.len() {
        if i == keys.len() || keys[i] != keys[i - 1] + 1 {
            if i - start > best.len() {
                best = &keys[start..i];
            }
            start = i;
        }
    }
    best.iter().map(|k| (*k, m[k])).collect()
}

/// Builds the summary of an output directory.
pub fn summarize(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Summary> {
    let mut runs = Vec::new();
    let mut tables: BTreeMap<(usize, usize), RunTable> = BTreeMap::new();
    let mut complete = true;
    for (iu, &u) in cfg.u.iter().enumerate() {
        for (jn, &n) in cfg.n_tot.iter().enumerate() {
            if cfg.fixture.is_some() {
                continue;
            }
            match load_cell(dir, u, n)? {
                Some((file, table)) => {
                    complete &= table.status == RunStatus::Complete;
                    runs.push(run_summary(file, u, n, &table));
                    tables.insert((iu, jn), table);
                }
                None => complete = false,
            }
        }
    }

    let saturation = (cfg.u.len() * cfg.n_tot.len() > 1 && cfg.fixture.is_none()).then(|| {
        let max = |iu: usize, jn: usize| runs.iter().find(|r| r.u == cfg.u[iu] && r.n_tot == cfg.n_tot[jn]).and_then(|r| r.n_sf_max);
        let mut by_n: Vec<usize> = (0..cfg.n_tot.len()).collect();
        by_n.sort_by_key(|&j| cfg.n_tot[j]);
        let mut by_u: Vec<usize> = (0..cfg.u.len()).collect();
        by_u.sort_by(|&a, &b| cfg.u[a].total_cmp(&cfg.u[b]));
        let nondecreasing_in_n_tot = (0..cfg.u.len()).all(|iu| {
            by_n.windows(2).all(|w| matches!((max(iu, w[0]), max(iu, w[1])), (Some(a), Some(b)) if b >= a))
        });
        let nonincreasing_in_u = (0..cfg.n_tot.len()).all(|jn| {
            by_u.windows(2).all(|w| matches!((max(w[0], jn), max(w[1], jn)), (Some(a), Some(b)) if b <= a))
        });
        Saturation { nondecreasing_in_n_tot, nonincreasing_in_u }
    });

    let mut collapse = Vec::new();
    let mut by_u: Vec<usize> = (0..cfg.u.len()).collect();
    by_u.sort_by(|&a, &b| cfg.u[a].total_cmp(&cfg.u[b]));
    for (jn, &n) in cfg.n_tot.iter().enumerate() {
        for w in by_u.windows(2) {
            let (Some(a), Some(b)) = (tables.get(&(w[0], jn)), tables.get(&(w[1], jn))) else { continue };
            if let (Some(ra), Some(rb)) = (record(a), record(b)) {
                if let Ok(d) = sup_distance(&ra, &rb) {
                    collapse.push(Collapse { n_tot: n, u_a: cfg.u[w[0]], u_b: cfg.u[w[1]], sup_distance: d });
                }
            }
        }
    }

    let mut lags = Vec::new();
    if cfg.fixture.is_some() {
        lags.push(lag_series(None, &BTreeMap::new(), read_fixture(dir)?));
    } else {
        for &u in &cfg.u {
            let stars: BTreeMap<usize, f64> = runs
                .iter()
                .filter(|r| r.u == u)
                .filter_map(|r| r.tau_star.map(|t| (r.n_tot, t)))
                .collect();
            let stars = consecutive_run(&stars);
            if stars.len() < 2 {
                continue;
            }
            let delta = lag_increments(&stars)?;
            lags.push(lag_series(Some(u), &stars, delta));
        }
    }

    let p = &cfg.physical;
    let mut conversions = Vec::new();
    for series in &lags {
        let tag = series.u.map_or("fixture".to_string(), |u| format!("u={u}"));
        if let Some(last) = series.delta_tau.last() {
            conversions.push(Conversion {
                label: format!("delta_tau {tag} n_tot={}", last.n_tot),
                tau: last.value,
                seconds: physical_time(last.value, p.u_scale, p.c_phys),
            });
        }
        if let Some(fit) = &series.fit {
            conversions.push(Conversion {
                label: format!("asymptote {tag}"),
                tau: fit.asymptote,
                seconds: physical_time(fit.asymptote, p.u_scale, p.c_phys),
            });
        }
    }
    let t = tunneling_rate(&p.barrier);
    let physical = Physical {
        c_phys: p.c_phys,
        u_scale: p.u_scale,
        conversions,
        tunneling: Tunneling {
            barrier_height: p.barrier.barrier_height,
            kinetic_energy: p.barrier.kinetic_energy,
            barrier_width_nm: p.barrier.barrier_width,
            temperature: p.barrier.temperature,
            use_hbar: p.barrier.use_hbar,
            nu: t.nu,
            p_tun: t.p_tun,
            rate: t.rate,
        },
    };

    Ok(Summary {
        schema: SUMMARY_SCHEMA,
        preset: cfg.preset.name().to_string(),
        status: if complete { "complete" } else { "partial" }.to_string(),
        runs,
        saturation,
        collapse,
        lags,
        physical,
    })
}

pub fn render_summary(s: &Summary) -> String {
    let mut text = serde_json::to_string_pretty(s).expect("summary serializes");
    text.push('\n');
    text
}

/// `n_tot,u,n_sf_max` rows for plotting.
pub fn render_saturation(s: &Summary) -> String {
    let mut out = String::from("n_tot,u,n_sf_max\n");
    for r in &s.runs {
        if let Some(m) = r.n_sf_max {
            writeln!(out, "{},{:e},{m:e}", r.n_tot, r.u).unwrap();
        }
    }
    out
}

/// `n_tot,delta_tau,fit` rows for plotting, one block per series.
pub fn render_lags(s: &Summary) -> String {
    let mut out = String::from("n_tot,delta_tau,fit\n");
    for series in &s.lags {
        for p in &series.delta_tau {
            let fit = series
                .fit
                .as_ref()
                .map(|f| klsim_core::analysis::saturation_model(f.a, f.b, f.c_sat, p.n_tot as f64));
            match fit {
                Some(v) => writeln!(out, "{},{:e},{v:e}", p.n_tot, p.value).unwrap(),
                None => writeln!(out, "{},{:e},", p.n_tot, p.value).unwrap(),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longest_consecutive_block() {
        let m: BTreeMap<usize, f64> = [(2, 1.0), (4, 1.0), (5, 2.0), (6, 3.0), (9, 0.0)].into();
        assert_eq!(consecutive_run(&m).keys().copied().collect::<Vec<_>>(), vec![4, 5, 6]);
        assert!(consecutive_run(&BTreeMap::new()).is_empty());
    }

    #[test]
    fn fixture_file_round_trip() {
        let m: BTreeMap<usize, f64> = [(9, 53.5), (10, 61.0 + 1e-13)].into();
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(FIXTURE_FILE), render_fixture(&m)).unwrap();
        assert_eq!(read_fixture(dir.path()).unwrap(), m);
    }
}
