//! Executes the cells of an experiment and writes the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use klsim_core::analysis::rescale_time;
use klsim_core::evolution::checkpoint::{read_checkpoint, write_checkpoint};
use klsim_core::evolution::{initial_state, propagate_partial, DensityMatrix};
use klsim_core::fockspace::enumerate_sector;
use klsim_core::operators::ModelOperators;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{
    cell_path, cell_stem, partial_path, plot_script, render_csv, settings_line, write_atomic, RunStatus,
};
use crate::summary::{
    render_fixture, render_lags, render_saturation, render_summary, summarize, Summary, FIXTURE_FILE,
    LAGS_FILE, SATURATION_FILE,
};

pub const THREADS_ENV: &str = "KLSIM_THREADS";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const PLOT_FILE: &str = "plot.gp";
pub const ERROR_FILE: &str = "error.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write the final state of each cell as `<cell>.klsim`.
    pub checkpoint: bool,
    /// Start from a saved state instead of the filled source.
    pub from: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Reused,
    Written,
    Failed(PathBuf),
}

/// Worker count from `KLSIM_THREADS`, if set.
pub fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::usage(THREADS_ENV, format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn load_start(path: &Path, ops: &ModelOperators) -> CliResult<(f64, DensityMatrix)> {
    let f = fs::File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    let ck = read_checkpoint(BufReader::new(f))?;
    if ck.state.basis().as_ref() != ops.basis.as_ref() {
        return Err(CliError::usage(
            "from",
            format!(
                "checkpoint holds n_sites={} n_tot={}, the run needs n_sites={} n_tot={}",
                ck.state.basis().n_sites(),
                ck.state.basis().n_tot(),
                ops.params.n_sites,
                ops.params.n_tot
            ),
        ));
    }
    // re-home the state on the operators' basis so the two share identity
    let rho = DensityMatrix::new(ops.basis.clone(), ck.state.into_entries())?;
    Ok((ck.t, rho))
}

/// Runs one cell unless a complete file with identical settings exists.
pub fn run_cell(cfg: &ExperimentConfig, dir: &Path, u: f64, n_tot: usize, opts: &RunOptions) -> CliResult<CellOutcome> {
    let params = cfg.model_params(u, n_tot)?;
    let settings = settings_line(cfg, &params);
    let path = cell_path(dir, u, n_tot);
    if opts.from.is_none() && path.exists() {
        if let Ok(text) = fs::read_to_string(&path) {
            if text.lines().nth(1) == Some(settings.as_str()) && text.lines().nth(2) == Some("# status complete") {
                log::info!("{}: reusing existing output", path.display());
                return Ok(CellOutcome::Reused);
            }
        }
        log::warn!("{}: settings changed, recomputing", path.display());
    }

    let basis = Arc::new(enumerate_sector(params.n_sites, params.n_tot)?);
    let ops = ModelOperators::for_basis(&params, basis, cfg.statistics)?;
    let evo = cfg.evolution_config(&params);
    let (t0, rho0) = match &opts.from {
        Some(p) => load_start(p, &ops)?,
        None => (0.0, initial_state(&ops.basis)),
    };
    // a restart keeps the absolute time axis and samples the grid points after t0
    let grid: Vec<f64> = evo.output_grid.iter().filter(|&&t| t > t0).map(|t| t - t0).collect();
    if grid.is_empty() {
        return Err(CliError::usage("from", format!("checkpoint time {t0} is past the end of the grid")));
    }
    let evo = klsim_core::evolution::EvolutionConfig { t_max: *grid.last().unwrap(), ..evo.with_grid(grid) };
    log::info!("{}: sector dimension {}", cell_stem(u, n_tot), ops.basis.dim());

    let (mut series, failure) = propagate_partial(&rho0, &ops, &evo)?;
    if t0 > 0.0 {
        for o in &mut series.samples {
            o.t += t0;
            o.tau = rescale_time(o.t, &params);
        }
    }
    let status = match &failure {
        None => RunStatus::Complete,
        Some(e) => RunStatus::Failed(e.to_string()),
    };
    let text = render_csv(&settings, &status, params.n_sites, &series.samples);
    if opts.checkpoint {
        if let (Some(rho), Some(last)) = (&series.final_state, series.samples.last()) {
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, last.t, rho).map_err(|e| CliError::io("encoding checkpoint", e))?;
            write_atomic(&dir.join(format!("{}.klsim", cell_stem(u, n_tot))), &buf)?;
        }
    }
    match failure {
        None => {
            write_atomic(&path, text.as_bytes())?;
            let stale = partial_path(dir, u, n_tot);
            if stale.exists() {
                fs::remove_file(&stale).map_err(|e| CliError::io(format!("removing {}", stale.display()), e))?;
            }
            Ok(CellOutcome::Written)
        }
        Some(e) => {
            log::error!("{}: {e}", cell_stem(u, n_tot));
            let partial = partial_path(dir, u, n_tot);
            write_atomic(&partial, text.as_bytes())?;
            Ok(CellOutcome::Failed(partial))
        }
    }
}

/// Applies seeded multiplicative noise to the fixture lags.
pub fn fixture_data(cfg: &ExperimentConfig) -> Option<BTreeMap<usize, f64>> {
    let f = cfg.fixture.as_ref()?;
    let mut rng = rand::rngs::StdRng::seed_from_u64(cfg.seed);
    Some(
        f.n_tot
            .iter()
            .zip(&f.delta_tau)
            .map(|(&n, &v)| {
                let scale = if f.noise > 0.0 { 1.0 + f.noise * rng.gen_range(-1.0..=1.0) } else { 1.0 };
                (n, v * scale)
            })
            .collect(),
    )
}

/// Writes the summary, the derived tables and the plot script for `dir`.
pub fn write_reports(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Summary> {
    let summary = summarize(cfg, dir)?;
    write_atomic(&dir.join(SUMMARY_FILE), render_summary(&summary).as_bytes())?;
    let saturation = summary.saturation.is_some().then_some(SATURATION_FILE);
    if saturation.is_some() {
        write_atomic(&dir.join(SATURATION_FILE), render_saturation(&summary).as_bytes())?;
    }
    let lags = (!summary.lags.is_empty()).then_some(LAGS_FILE);
    if lags.is_some() {
        write_atomic(&dir.join(LAGS_FILE), render_lags(&summary).as_bytes())?;
    }
    let runs: Vec<(String, f64, usize)> = summary.runs.iter().map(|r| (r.file.clone(), r.u, r.n_tot)).collect();
    write_atomic(&dir.join(PLOT_FILE), plot_script(&runs, saturation, lags).as_bytes())?;
    Ok(summary)
}

/// Runs every cell of the experiment (in parallel) and writes the reports.
/// Failed cells leave `.partial.csv` files and turn into an integration error
/// after the reports are written.
pub fn run_preset(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<Summary> {
    let dir = &cfg.out;
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    if let Some(data) = fixture_data(cfg) {
        write_atomic(&dir.join(FIXTURE_FILE), render_fixture(&data).as_bytes())?;
    }

    let cells = cfg.cells();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::io("starting worker pool", std::io::Error::other(e.to_string())))?;
    let outcomes: Vec<CliResult<CellOutcome>> =
        pool.install(|| cells.par_iter().map(|&(u, n)| run_cell(cfg, dir, u, n, opts)).collect());

    let mut failed = Vec::new();
    for o in outcomes {
        if let CellOutcome::Failed(p) = o? {
            failed.push(p);
        }
    }
    let summary = write_reports(cfg, dir)?;
    if !failed.is_empty() {
        let summary_text = failed.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ");
        return Err(CliError::Integration { failed, summary: summary_text });
    }
    Ok(summary)
}
