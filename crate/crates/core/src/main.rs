use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dgrelax::harness::{run_config, self_checks, RunConfig};

#[derive(Parser)]
#[command(name = "dgrelax", version, about = "Discontinuous Galerkin minimization of nonlinear elastic energies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the gradient and operator self-tests.
    Check,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, output } => {
            let mut cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            println!("eps_pen = {:e}, continuation = {:?}", cfg.energy.eps_pen, cfg.continuation);
            match run_config(&cfg) {
                Ok(report) => {
                    for r in report.records() {
                        println!(
                            "{:<48} total {:.10} W11 {:.3e} L2 {:.3e} {} ({} it, {:.1} s)",
                            r.run, r.total, r.w11_error, r.l2_error, r.termination, r.iterations, r.wall_time
                        );
                    }
                    for (run, msg) in &report.failures {
                        eprintln!("{run}: failed: {msg}");
                    }
                    println!("wrote {}", cfg.output_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Check => match self_checks() {
            Ok(checks) => {
                let mut ok = true;
                for c in &checks {
                    println!("{} {:<32} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                    ok &= c.passed;
                }
                if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
