use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vshelving::experiment::{
    run_calibration, run_coupling, run_simulation, run_sweep, run_validation, write_validation, ExperimentConfig,
    Mode,
};
use vshelving::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "vshelving", version, about = "Light and dark periods of two interacting V-system atoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate the dipole coupling constant against distance.
    Coupling(Overrides),
    /// Run one trajectory and write its record, intensity and sector traces.
    Simulate(Overrides),
    /// Mean period durations over a grid of distances.
    Sweep(Overrides),
    /// Find the weak Rabi frequency giving a target mean dark period.
    Calibrate(Overrides),
    /// Check trajectories and invariants against the master equation.
    Validate(Overrides),
}

#[derive(Args, Debug, Default)]
#[command(allow_negative_numbers = true)]
struct Overrides {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    kr: Option<f64>,
    #[arg(long)]
    omega2: Option<f64>,
    #[arg(long)]
    omega3: Option<f64>,
    #[arg(long)]
    theta3: Option<f64>,
    #[arg(long = "delta-t")]
    delta_t: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    trajectories: Option<usize>,
    /// Treat the atoms as noninteracting.
    #[arg(long = "no-coupling")]
    no_coupling: bool,
}

impl Overrides {
    fn resolve(&self, mode: Mode) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.mode = mode;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.kr {
            cfg.model.kr = v;
        }
        if let Some(v) = self.omega2 {
            cfg.model.omega2 = v;
        }
        if let Some(v) = self.omega3 {
            cfg.model.omega3 = v;
        }
        if let Some(v) = self.theta3 {
            cfg.model.theta3 = v;
        }
        if self.delta_t.is_some() {
            cfg.delta_t = self.delta_t;
        }
        if let Some(v) = self.duration {
            cfg.duration = v;
        }
        if let Some(v) = self.trajectories {
            if mode == Mode::Validate {
                cfg.validation.trajectories = v;
            } else {
                cfg.trajectories = v;
            }
        }
        if self.no_coupling {
            cfg.model.include_c3 = false;
        }
        let cfg = cfg.resolve();
        for w in cfg.validate()? {
            log::warn!("{w}");
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParams(_) | Error::Domain(_) => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let (mode, overrides) = match &cli.command {
        Command::Coupling(o) => (Mode::Coupling, o),
        Command::Simulate(o) => (Mode::Simulate, o),
        Command::Sweep(o) => (Mode::Sweep, o),
        Command::Calibrate(o) => (Mode::Calibrate, o),
        Command::Validate(o) => (Mode::Validate, o),
    };
    let cfg = overrides.resolve(mode)?;
    match mode {
        Mode::Coupling => {
            for f in run_coupling(&cfg)? {
                println!("{}", f.display());
            }
        }
        Mode::Simulate => {
            let (summary, files) = run_simulation(&cfg)?;
            for f in files {
                println!("{}", f.display());
            }
            println!("emissions: {}", summary.emissions);
            if let Some(s) = summary.stats {
                println!("T0 = {:.1} ± {:.1}, T1 = {:.1} ± {:.1}, T2 = {:.1} ± {:.1}", s.mean[0], s.se[0], s.mean[1], s.se[1], s.mean[2], s.se[2]);
            }
        }
        Mode::Sweep => {
            let result = run_sweep(&cfg)?;
            let failed = result.rows.iter().filter(|r| !r.is_ok()).count();
            println!("{}", cfg.out.join("sweep.csv").display());
            println!("{} points, {failed} failed, omega2 = {}", result.rows.len(), result.omega2);
            if failed > 0 {
                return Ok(EXIT_NUMERICAL);
            }
        }
        Mode::Calibrate => {
            let (cal, path) = run_calibration(&cfg)?;
            println!("{}", path.display());
            println!("omega2 = {:.6e}, T0 = {:.1} ± {:.1}", cal.omega2, cal.t0, cal.se);
        }
        Mode::Validate => {
            let report = run_validation(&cfg)?;
            let path = write_validation(&cfg, &report)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("{}", path.display());
            if !report.passed {
                return Ok(EXIT_VALIDATION);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
