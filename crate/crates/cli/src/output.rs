//! Per-run CSV files, atomic writes and the gnuplot script.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use klsim_core::observables::ObservableVector;
use klsim_core::operators::ModelParams;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const CSV_SCHEMA: &str = "klsim-run/1";

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::usage("out", format!("{} is not a file path", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let ctx = |what: &str| format!("{what} {}", tmp.display());
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(ctx("creating"), e))?;
    f.write_all(bytes).map_err(|e| CliError::io(ctx("writing"), e))?;
    f.sync_all().map_err(|e| CliError::io(ctx("syncing"), e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(format!("renaming into {}", path.display()), e))
}

/// File stem of a cell, e.g. `u100_n2`.
pub fn cell_stem(u: f64, n_tot: usize) -> String {
    format!("u{u}_n{n_tot}")
}

pub fn cell_path(dir: &Path, u: f64, n_tot: usize) -> PathBuf {
    dir.join(format!("{}.csv", cell_stem(u, n_tot)))
}

/// Where a failed cell leaves its samples.
pub fn partial_path(dir: &Path, u: f64, n_tot: usize) -> PathBuf {
    dir.join(format!("{}.partial.csv", cell_stem(u, n_tot)))
}

pub fn columns(n_sites: usize) -> Vec<String> {
    let mut c = vec!["t".to_string(), "tau".into(), "n_source".into()];
    c.extend((1..=n_sites).map(|j| format!("n_site_{j}")));
    c.extend(["n_SF", "n_drain", "trace_residual", "min_eigenvalue"].map(String::from));
    c
}

/// Everything besides the chain parameters that shapes a trajectory; a
/// cell is reused on resume only when this line matches.
pub fn settings_line(cfg: &ExperimentConfig, p: &ModelParams) -> String {
    format!(
        "# params n_sites={} n_tot={} u={:e} hbar={:e} c_hop={:e} gamma_s={:e} gamma_d={:e} statistics={:?} backend={} rel_tol={:e} abs_tol={:e} tau_max={:e} grid_points={} grid_decades={:e} krylov_dim={} eigen_every={} max_steps={} reduce_blocks={}",
        p.n_sites,
        p.n_tot,
        p.u,
        p.hbar,
        p.c_hop,
        p.gamma_s,
        p.gamma_d,
        cfg.statistics,
        cfg.backend,
        cfg.rel_tol,
        cfg.abs_tol,
        cfg.tau_max,
        cfg.grid_points,
        cfg.grid_decades,
        cfg.krylov_dim,
        cfg.eigen_every,
        cfg.max_steps,
        cfg.reduce_blocks,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Complete,
    Failed(String),
}

/// Parsed form of a run CSV.
#[derive(Debug, Clone)]
pub struct RunTable {
    pub settings: String,
    pub params: ModelParams,
    pub status: RunStatus,
    pub samples: Vec<ObservableVector>,
}

pub fn render_csv(settings: &str, status: &RunStatus, n_sites: usize, samples: &[ObservableVector]) -> String {
    let cols = columns(n_sites);
    let mut s = String::new();
    writeln!(s, "# {CSV_SCHEMA} {}", cols.join(",")).unwrap();
    writeln!(s, "{settings}").unwrap();
    match status {
        RunStatus::Complete => writeln!(s, "# status complete").unwrap(),
        RunStatus::Failed(reason) => writeln!(s, "# status failed: {}", reason.replace('\n', " ")).unwrap(),
    }
    writeln!(s, "{}", cols.join(",")).unwrap();
    for o in samples {
        write!(s, "{:e},{:e}", o.t, o.tau).unwrap();
        for v in &o.populations[..n_sites + 1] {
            write!(s, ",{v:e}").unwrap();
        }
        write!(s, ",{:e},{:e},{:e},", o.n_sf, o.n_drain(), o.trace_residual).unwrap();
        if let Some(ev) = o.min_eigenvalue {
            write!(s, "{ev:e}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn parse_params(line: &str) -> Option<ModelParams> {
    let body = line.strip_prefix("# params ")?;
    let get = |key: &str| {
        body.split(' ')
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    };
    Some(ModelParams {
        n_sites: get("n_sites")?.parse().ok()?,
        n_tot: get("n_tot")?.parse().ok()?,
        u: get("u")?.parse().ok()?,
        hbar: get("hbar")?.parse().ok()?,
        c_hop: get("c_hop")?.parse().ok()?,
        gamma_s: get("gamma_s")?.parse().ok()?,
        gamma_d: get("gamma_d")?.parse().ok()?,
    })
}

pub fn parse_csv(text: &str, origin: &Path) -> CliResult<RunTable> {
    let bad = |line: usize, what: &str| {
        CliError::Core(klsim_core::Error::Format(format!("{}:{line}: {what}", origin.display())))
    };
    let mut lines = text.lines().enumerate();
    let (_, schema) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    if !schema.starts_with(&format!("# {CSV_SCHEMA} ")) {
        return Err(bad(1, &format!("expected schema {CSV_SCHEMA}")));
    }
    let (_, settings) = lines.next().ok_or_else(|| bad(2, "missing parameter line"))?;
    let params = parse_params(settings).ok_or_else(|| bad(2, "malformed parameter line"))?;
    let (_, status) = lines.next().ok_or_else(|| bad(3, "missing status line"))?;
    let status = match status.strip_prefix("# status ") {
        Some("complete") => RunStatus::Complete,
        Some(s) => RunStatus::Failed(s.strip_prefix("failed: ").unwrap_or(s).to_string()),
        None => return Err(bad(3, "malformed status line")),
    };
    let cols = columns(params.n_sites);
    let (_, header) = lines.next().ok_or_else(|| bad(4, "missing header"))?;
    if header != cols.join(",") {
        return Err(bad(4, "column header does not match the schema"));
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(bad(i + 1, &format!("expected {} fields, got {}", cols.len(), fields.len())));
        }
        let num = |k: usize| fields[k].parse::<f64>().map_err(|_| bad(i + 1, &format!("bad number in column {}", cols[k])));
        let n = params.n_sites;
        let mut populations = Vec::with_capacity(n + 2);
        for k in 2..n + 3 {
            populations.push(num(k)?);
        }
        populations.push(num(n + 4)?);
        let last = cols.len() - 1;
        samples.push(ObservableVector {
            t: num(0)?,
            tau: num(1)?,
            populations,
            n_sf: num(n + 3)?,
            trace_residual: num(last - 1)?,
            hermiticity_residual: 0.0,
            min_eigenvalue: if fields[last].is_empty() { None } else { Some(num(last)?) },
        });
    }
    Ok(RunTable { settings: settings.to_string(), params, status, samples })
}

pub fn read_csv(path: &Path) -> CliResult<RunTable> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    parse_csv(&text, path)
}

/// Gnuplot commands over the emitted data files.
pub fn plot_script(runs: &[(String, f64, usize)], saturation: Option<&str>, lags: Option<&str>) -> String {
    let mut s = String::new();
    writeln!(s, "# gnuplot script; run with `gnuplot plot.gp` inside this directory").unwrap();
    writeln!(s, "set terminal svg size 900,600").unwrap();
    writeln!(s, "set datafile separator \",\"").unwrap();
    writeln!(s, "set datafile commentschars \"#\"").unwrap();
    writeln!(s, "set key autotitle columnhead").unwrap();
    if !runs.is_empty() {
        writeln!(s, "\nset output \"n_sf.svg\"").unwrap();
        writeln!(s, "set logscale x").unwrap();
        writeln!(s, "set xlabel \"tau\"").unwrap();
        writeln!(s, "set ylabel \"n_SF\"").unwrap();
        let plots: Vec<String> = runs
            .iter()
            .map(|(file, u, n)| format!("\"{file}\" using \"tau\":\"n_SF\" with lines title \"U={u}, N_tot={n}\""))
            .collect();
        writeln!(s, "plot {}", plots.join(", \\\n     ")).unwrap();
        writeln!(s, "unset logscale x").unwrap();
    }
    if let Some(file) = saturation {
        writeln!(s, "\nset output \"saturation.svg\"").unwrap();
        writeln!(s, "set xlabel \"N_tot\"").unwrap();
        writeln!(s, "set ylabel \"n_SF^max\"").unwrap();
        writeln!(s, "plot \"{file}\" using \"n_tot\":\"n_sf_max\" with linespoints title \"n_SF^max\"").unwrap();
    }
    if let Some(file) = lags {
        writeln!(s, "\nset output \"lags.svg\"").unwrap();
        writeln!(s, "set xlabel \"N_tot\"").unwrap();
        writeln!(s, "set ylabel \"Delta tau\"").unwrap();
        writeln!(
            s,
            "plot \"{file}\" using \"n_tot\":\"delta_tau\" with points title \"lag\", \\\n     \"{file}\" using \"n_tot\":\"fit\" with lines title \"a(1-exp(-N/c))+b\""
        )
        .unwrap();
    }
    s
}
