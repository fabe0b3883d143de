use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use env_logger::Env;

use maxshape::bfgs::OptimizeStatus;
use maxshape::config::RunConfig;
use maxshape::runner::{self, RunError, GRADIENT_CHECK_TOL};

#[derive(Parser)]
#[command(name = "maxshape", version, about = "Maxwell eigenvalue shape optimization in 2D")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization and write iterations.csv, summary.txt and VTK files.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the adjoint gradient with central finite differences.
    CheckGradient {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        dirs: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        /// Check at a smooth random deformation of this amplitude instead of q = 0.
        #[arg(long, default_value_t = 0.0)]
        q_amp: f64,
    },
    /// Print the lowest finite eigenvalues of the undeformed mesh.
    Eigs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 6)]
        nev: usize,
    },
}

fn execute(cmd: Command) -> Result<u8, RunError> {
    match cmd {
        Command::Run { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let outcome = runner::run(&cfg)?;
            print!("{}", outcome.summary.to_text());
            Ok(if outcome.summary.status == OptimizeStatus::Converged { 0 } else { 1 })
        }
        Command::CheckGradient { config, dirs, h, q_amp } => {
            let cfg = RunConfig::from_file(&config)?;
            let checks = runner::check_gradient(&cfg, dirs, h, q_amp)?;
            println!("direction,h,analytic,finite_difference,rel_error");
            for c in &checks {
                println!("{},{:e},{:e},{:e},{:e}", c.direction, c.h, c.analytic, c.finite_difference, c.rel_error);
            }
            Ok(if checks.iter().all(|c| c.rel_error <= GRADIENT_CHECK_TOL) { 0 } else { 1 })
        }
        Command::Eigs { config, nev } => {
            let cfg = RunConfig::from_file(&config)?;
            println!("index,lambda,residual,divergence");
            for (i, (p, cert)) in runner::eigs(&cfg, nev)?.iter().enumerate() {
                println!("{i},{:.12e},{:e},{:e}", p.lambda, p.residual, cert);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(Env::new().filter("MAXSHAPE_LOG")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
