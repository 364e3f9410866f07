use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use klsim_cli::config::{load, parse_backend, parse_f64_list, parse_usize_list, Overrides, Preset};
use klsim_cli::error::{CliError, CliResult};
use klsim_cli::output::write_atomic;
use klsim_cli::runner::{run_preset, write_reports, RunOptions, CONFIG_FILE, ERROR_FILE};
use klsim_cli::{ExperimentConfig, EXIT_USAGE};
use klsim_core::analysis::{physical_time, tunneling_rate, PhysicalParams};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "klsim", version, about = "Open-system transport through a chain of binding sites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a single (U, N_tot) cell.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Also save the final state of the run as `<cell>.klsim`.
        #[arg(long)]
        checkpoint: bool,
        /// Continue from a saved state.
        #[arg(long, value_name = "PATH")]
        from: Option<PathBuf>,
    },
    /// Simulate every (U, N_tot) cell of the configuration in parallel.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Recompute the summary of an output directory from its CSV files.
    Analyze {
        /// Output directory of an earlier run or sweep.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Configuration to use instead of the directory's config.toml.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
    },
    /// Print the tunneling rate estimate and lag time conversions as JSON.
    EstimateRates(RateArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Comma separated repulsion values.
    #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
    u: Option<String>,
    /// Comma separated particle numbers or ranges like `2..9`.
    #[arg(long, value_name = "LIST")]
    ntot: Option<String>,
    /// adaptive-explicit, krylov-exponential or dense-exponential.
    #[arg(long, value_name = "NAME")]
    backend: Option<String>,
    /// Relative tolerance; the absolute tolerance is a hundredth of it.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    tol: Option<f64>,
}

#[derive(Args)]
struct RateArgs {
    /// Barrier height in units of k_B T.
    #[arg(long, default_value_t = 1.7)]
    barrier: f64,
    /// Kinetic energy in units of k_B T.
    #[arg(long, default_value_t = 1.7)]
    kinetic: f64,
    /// Barrier width in nm.
    #[arg(long, default_value_t = 0.24)]
    width: f64,
    /// Temperature in K.
    #[arg(long, default_value_t = 310.0)]
    temperature: f64,
    /// Use ħ instead of h in the transmission exponent.
    #[arg(long)]
    hbar: bool,
    /// Rescaled times to convert, comma separated.
    #[arg(long, value_name = "LIST", default_value = "121")]
    tau: String,
    /// Dimensionless repulsion of the conversion.
    #[arg(long, default_value_t = 1e3)]
    u: f64,
    /// Physical hopping rate in s⁻¹.
    #[arg(long, default_value_t = 1e13)]
    c_phys: f64,
}

#[derive(Serialize)]
struct RateReport {
    barrier_height: f64,
    kinetic_energy: f64,
    barrier_width_nm: f64,
    temperature: f64,
    use_hbar: bool,
    nu: f64,
    p_tun: f64,
    rate: f64,
    u: f64,
    c_phys: f64,
    conversions: Vec<(f64, f64)>,
}

impl ExperimentArgs {
    fn overrides(&self) -> CliResult<Overrides> {
        Ok(Overrides {
            preset: self.preset.as_deref().map(str::parse::<Preset>).transpose()?,
            u: self.u.as_deref().map(|s| parse_f64_list("u", s)).transpose()?,
            n_tot: self.ntot.as_deref().map(|s| parse_usize_list("n_tot", s)).transpose()?,
            backend: self.backend.as_deref().map(parse_backend).transpose()?,
            tol: self.tol,
            out: self.out.clone(),
        })
    }

    fn resolve(&self, default_preset: Preset) -> CliResult<ExperimentConfig> {
        let mut ov = self.overrides()?;
        let text = match &self.config {
            Some(p) => read(p)?,
            None => {
                ov.preset.get_or_insert(default_preset);
                String::new()
            }
        };
        load(&text, &ov)
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))
}

fn print_json<T: Serialize>(v: &T) {
    let text = serde_json::to_string_pretty(v).expect("report serializes");
    // a closed pipe on stdout is not a failure; the files are already written
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn rates(a: &RateArgs) -> CliResult<()> {
    let p = PhysicalParams {
        barrier_height: a.barrier,
        kinetic_energy: a.kinetic,
        barrier_width: a.width,
        temperature: a.temperature,
        use_hbar: a.hbar,
        ..PhysicalParams::default()
    };
    for (field, v, strict) in [
        ("barrier", a.barrier, false),
        ("kinetic", a.kinetic, true),
        ("width", a.width, false),
        ("temperature", a.temperature, true),
        ("u", a.u, true),
        ("c_phys", a.c_phys, true),
    ] {
        let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
        if !ok {
            let bound = if strict { "positive" } else { "non-negative" };
            return Err(CliError::usage(field, format!("{field} must be {bound}, got {v}")));
        }
    }
    let taus = parse_f64_list("tau", &a.tau)?;
    let e = tunneling_rate(&p);
    print_json(&RateReport {
        barrier_height: a.barrier,
        kinetic_energy: a.kinetic,
        barrier_width_nm: a.width,
        temperature: a.temperature,
        use_hbar: a.hbar,
        nu: e.nu,
        p_tun: e.p_tun,
        rate: e.rate,
        u: a.u,
        c_phys: a.c_phys,
        conversions: taus.iter().map(|&t| (t, physical_time(t, a.u, a.c_phys))).collect(),
    });
    Ok(())
}

/// Runs the command; the second value is the directory that should receive
/// `error.json` on failure, once known.
fn execute(cli: Cli) -> (CliResult<()>, Option<PathBuf>) {
    match cli.command {
        Command::Run { exp, checkpoint, from } => {
            let cfg = match exp.resolve(Preset::SingleRun) {
                Ok(c) => c,
                Err(e) => return (Err(e), exp.out.clone()),
            };
            let out = Some(cfg.out.clone());
            if cfg.cells().len() > 1 {
                let field = if cfg.u.len() > 1 { "u" } else { "n_tot" };
                let msg = format!("run takes a single (u, n_tot) cell, got {}; use sweep", cfg.cells().len());
                return (Err(CliError::usage(field, msg)), out);
            }
            let opts = RunOptions { checkpoint, from };
            (run_preset(&cfg, &opts).map(|s| print_json(&s)), out)
        }
        Command::Sweep { exp } => {
            let cfg = match exp.resolve(Preset::RescalingCollapse) {
                Ok(c) => c,
                Err(e) => return (Err(e), exp.out.clone()),
            };
            let out = Some(cfg.out.clone());
            (run_preset(&cfg, &RunOptions::default()).map(|s| print_json(&s)), out)
        }
        Command::Analyze { out, config } => {
            let path = config.unwrap_or_else(|| out.join(CONFIG_FILE));
            let result = read(&path)
                .and_then(|text| load(&text, &Overrides { out: Some(out.clone()), ..Overrides::default() }))
                .and_then(|cfg| write_reports(&cfg, &out))
                .map(|s| print_json(&s));
            (result, Some(out))
        }
        Command::EstimateRates(a) => (rates(&a), None),
    }
}

fn report(err: &CliError, dir: Option<&Path>) {
    let text = serde_json::to_string_pretty(&err.report()).expect("report serializes") + "\n";
    eprint!("{text}");
    if let Some(dir) = dir.filter(|d| d.is_dir()) {
        if let Err(e) = write_atomic(&dir.join(ERROR_FILE), text.as_bytes()) {
            log::warn!("could not write {}: {e}", ERROR_FILE);
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage { field: None, message: e.to_string().trim().to_string() };
            report(&err, None);
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    let (result, dir) = execute(cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e, dir.as_deref());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
