use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use tiltrotor::decoupler::DecouplerKind;
use tiltrotor::gait::{
    invertibility_margin, invertibility_margin_with, min_margin_along, tilt_angles_from_rho,
    trot_margin_closed_form, GaitPlan, MarginCoefficients, RHO_LIMIT,
};
use tiltrotor::io::{load_config, write_run_artifacts};
use tiltrotor::sim::{
    default_sup_window, run_experiment, ExperimentConfig, RunOutput, SETPOINT_CASES,
};
use tiltrotor::{Error, VehicleParams};

/// Overrides `--out` when set.
const OUT_ENV: &str = "TILTROTOR_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "tiltrotor",
    version,
    about = "Tilt-rotor gait tracking simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its trajectory, metrics and config echo.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write an SVG of e_x, e_y against t.
        #[arg(long)]
        plot: bool,
    },
    /// Rerun a trot-gait config for each period under both decouplers.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        periods: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: bool,
    },
    /// Print the invertibility margin for one tilt, or scan the admissible range.
    Gaitcheck {
        #[arg(
            long,
            conflicts_with = "scan",
            required_unless_present = "scan",
            allow_hyphen_values = true
        )]
        rho: Option<f64>,
        #[arg(long)]
        scan: bool,
    },
    /// Run the ten fixed-tilt setpoint cases and tabulate steady-state errors.
    Figure4 {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: bool,
    },
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_runtime() {
            Failure::Runtime(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate { config, out, plot } => simulate(&config, out, plot),
        Command::Sweep {
            config,
            periods,
            out,
            plot,
        } => sweep(&config, &periods, out, plot),
        Command::Gaitcheck { rho, scan } => gaitcheck(rho, scan),
        Command::Figure4 { out, plot } => figure4(out, plot),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn out_dir(flag: Option<PathBuf>) -> Result<PathBuf, Failure> {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or(flag)
        .ok_or_else(|| Failure::Usage(format!("--out is required (or set {OUT_ENV})")))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

fn simulate(config: &Path, out: Option<PathBuf>, plot: bool) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let dir = out_dir(out)?;
    let run = run_experiment(&cfg)?;
    let art = write_run_artifacts(&dir, "run", &run.trajectory, &run.metrics, &cfg, plot)?;
    println!("trajectory: {}", art.trajectory.display());
    println!("metrics:    {}", art.metrics.display());
    if let Some(p) = &art.plot {
        println!("plot:       {}", p.display());
    }
    let m = &run.metrics;
    if m.diverged {
        return Err(Failure::Runtime(format!(
            "run diverged: {}",
            m.failure.as_deref().unwrap_or("unknown")
        )));
    }
    println!(
        "steady-state error: ({}, {})  sup error norm: {}  saturation: {}",
        fmt_opt(m.steady_state.map(|s| s.x)),
        fmt_opt(m.steady_state.map(|s| s.y)),
        fmt_opt(m.sup.map(|s| s.norm)),
        m.saturation_count
    );
    Ok(())
}

fn with_period(
    base: &ExperimentConfig,
    period: f64,
    decoupler: DecouplerKind,
) -> Result<ExperimentConfig, Failure> {
    let gait = match base.gait {
        GaitPlan::TrotInstant { rho_max, .. } => GaitPlan::TrotInstant { period, rho_max },
        GaitPlan::TrotContinuous { rho_max, .. } => GaitPlan::TrotContinuous { period, rho_max },
        GaitPlan::Fixed { .. } => {
            return Err(Failure::Usage(
                "sweep needs a trot gait in the config".into(),
            ))
        }
    };
    let mut cfg = base.clone();
    cfg.gait = gait;
    cfg.decoupler = decoupler;
    // A sup window left at its default follows the period.
    if base.sup_window == default_sup_window(base.duration, &base.gait) {
        cfg.sup_window = default_sup_window(cfg.duration, &gait);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn decoupler_name(d: DecouplerKind) -> &'static str {
    match d {
        DecouplerKind::Conventional => "conventional",
        DecouplerKind::Modified => "modified",
    }
}

fn sweep(config: &Path, periods: &[f64], out: Option<PathBuf>, plot: bool) -> Result<(), Failure> {
    let base = load_config(config)?;
    let dir = out_dir(out)?;
    let mut jobs = Vec::new();
    for &period in periods {
        for dec in [DecouplerKind::Conventional, DecouplerKind::Modified] {
            jobs.push((period, dec, with_period(&base, period, dec)?));
        }
    }
    let runs: Vec<Result<RunOutput, Error>> = jobs
        .par_iter()
        .map(|(_, _, cfg)| run_experiment(cfg))
        .collect();

    fs::create_dir_all(&dir)?;
    let mut csv = String::from(
        "period,decoupler,sup_error_x,sup_error_y,sup_error_norm,steady_state_error_x,steady_state_error_y,diverged,saturation_count\n",
    );
    let mut diverged = 0;
    for ((period, dec, cfg), run) in jobs.iter().zip(runs) {
        let run = run?;
        let stem = format!("T{period}_{}", decoupler_name(*dec));
        write_run_artifacts(&dir, &stem, &run.trajectory, &run.metrics, cfg, plot)?;
        let m = &run.metrics;
        diverged += usize::from(m.diverged);
        let num = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.16e}"));
        writeln!(
            csv,
            "{period},{},{},{},{},{},{},{},{}",
            decoupler_name(*dec),
            num(m.sup.map(|s| s.x)),
            num(m.sup.map(|s| s.y)),
            num(m.sup.map(|s| s.norm)),
            num(m.steady_state.map(|s| s.x)),
            num(m.steady_state.map(|s| s.y)),
            m.diverged,
            m.saturation_count
        )
        .unwrap();
        println!(
            "T = {period:<5} {:<12} sup |e| = {}",
            decoupler_name(*dec),
            fmt_opt(m.sup.map(|s| s.norm))
        );
    }
    let summary = dir.join("sweep_summary.csv");
    fs::write(&summary, csv)?;
    println!("summary: {}", summary.display());
    if diverged > 0 {
        return Err(Failure::Runtime(format!("{diverged} run(s) diverged")));
    }
    Ok(())
}

fn gaitcheck(rho: Option<f64>, scan: bool) -> Result<(), Failure> {
    let params = VehicleParams::default();
    let exact = MarginCoefficients::from_params(&params);
    if let Some(rho) = rho {
        let alpha = tilt_angles_from_rho(rho)?;
        println!("rho = {rho}");
        println!("margin           {:.6}", invertibility_margin(&alpha));
        println!(
            "margin (exact)   {:.6}",
            invertibility_margin_with(&alpha, &exact)
        );
        println!("4 cos^2(rho)     {:.6}", trot_margin_closed_form(rho));
        return Ok(());
    }
    debug_assert!(scan);
    println!("rho,margin,closed_form");
    let n = 26;
    for i in 0..=n {
        let rho = (-RHO_LIMIT + 2.0 * RHO_LIMIT * i as f64 / n as f64).clamp(-RHO_LIMIT, RHO_LIMIT);
        let alpha = tilt_angles_from_rho(rho)?;
        println!(
            "{rho:.4},{:.6},{:.6}",
            invertibility_margin(&alpha),
            trot_margin_closed_form(rho)
        );
    }
    for plan in [GaitPlan::trot_instant(1.0), GaitPlan::trot_continuous(1.0)] {
        let (min, t) = min_margin_along(&plan, 1e-3)?;
        let name = match plan {
            GaitPlan::TrotInstant { .. } => "trot_instant",
            _ => "trot_continuous",
        };
        println!("minimum along {name}: {min:.6} at t/T = {t:.3}");
    }
    Ok(())
}

fn figure4(out: Option<PathBuf>, plot: bool) -> Result<(), Failure> {
    let dir = out_dir(out)?;
    let runs: Vec<Result<(ExperimentConfig, RunOutput), Error>> = SETPOINT_CASES
        .par_iter()
        .map(|c| {
            let cfg = c.config();
            run_experiment(&cfg).map(|r| (cfg, r))
        })
        .collect();
    fs::create_dir_all(&dir)?;
    let mut csv = String::from(
        "label,decoupler,rho,steady_state_error_x,steady_state_error_y,expected_x,expected_y\n",
    );
    println!(
        "{:<5}{:<14}{:>8}{:>12}{:>12}{:>10}{:>10}",
        "case", "decoupler", "rho", "e_x", "e_y", "exp e_x", "exp e_y"
    );
    let mut diverged = 0;
    for (case, run) in SETPOINT_CASES.iter().zip(runs) {
        let (cfg, run) = run?;
        write_run_artifacts(&dir, case.label, &run.trajectory, &run.metrics, &cfg, plot)?;
        let ss = run.metrics.steady_state;
        diverged += usize::from(run.metrics.diverged);
        let (x, y) = ss.map_or((f64::NAN, f64::NAN), |s| (s.x, s.y));
        writeln!(
            csv,
            "{},{},{},{x:.16e},{y:.16e},{},{}",
            case.label,
            decoupler_name(case.decoupler),
            case.rho,
            case.expected.0,
            case.expected.1
        )
        .unwrap();
        println!(
            "{:<5}{:<14}{:>8}{x:>12.4}{y:>12.4}{:>10}{:>10}",
            case.label,
            decoupler_name(case.decoupler),
            case.rho,
            case.expected.0,
            case.expected.1
        );
    }
    let table = dir.join("figure4.csv");
    fs::write(&table, csv)?;
    println!("table: {}", table.display());
    if diverged > 0 {
        return Err(Failure::Runtime(format!("{diverged} run(s) diverged")));
    }
    Ok(())
}
