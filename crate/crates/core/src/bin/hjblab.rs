use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hjblab::harness::{self, calibrate, plotdata};

#[derive(Parser)]
#[command(name = "hjblab", version, about = "HJB Dirichlet problem laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override a config value, e.g. `--set domain.n=[100]`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Reshape branch, census and eigenfunction outputs into long CSV.
    Plotdata { manifest: PathBuf },
    /// Calibrate the a-priori constant and verify it on a disjoint suite.
    Calibrate { suite: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, set } => match harness::run_path(&config, &set) {
            Ok((m, dir)) => {
                for e in &m.experiments {
                    println!(
                        "{:<17} {}  ({:.2} s)",
                        e.kind.name(),
                        if e.passed { "pass" } else { "FAIL" },
                        e.seconds
                    );
                }
                for f in m.failures() {
                    eprintln!("failed: {f}");
                }
                println!("manifest: {}", dir.join("manifest.json").display());
                m.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                harness::exit_code(&e)
            }
        },
        Command::Plotdata { manifest } => match plotdata::emit_plotdata(&manifest) {
            Ok(files) => {
                for f in files {
                    println!("{}", f.display());
                }
                harness::EXIT_PASS
            }
            Err(e) => {
                eprintln!("error: {e}");
                harness::EXIT_CONFIG
            }
        },
        Command::Calibrate { suite } => match calibrate::calibrate_path(&suite) {
            Ok((r, out)) => {
                println!("c0 = {}", r.c0);
                println!("max calibration ratio = {}", r.max_calibration_ratio);
                println!("max verification ratio = {}", r.max_verification_ratio);
                println!("verification {}", if r.passed { "pass" } else { "FAIL" });
                println!("report: {}", out.display());
                if r.passed {
                    harness::EXIT_PASS
                } else {
                    harness::EXIT_FAIL
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                harness::exit_code(&e)
            }
        },
    };
    ExitCode::from(code as u8)
}
