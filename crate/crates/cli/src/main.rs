use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afba::problem_file::{FileError, ProblemFile};
use afba::session::{self, Outcome};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "afba", version, about = "Asymmetric forward-backward-adjoint splitting solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configured variant and print its validity certificate.
    Validate {
        path: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the configured variant.
    Solve {
        path: PathBuf,
        /// Per-iteration CSV trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// JSON run report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run several variants with their default parameters.
    Compare {
        path: PathBuf,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',', required = true)]
        variants: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit(o: Outcome) -> ExitCode {
    ExitCode::from(o.code() as u8)
}

fn fail(e: &FileError) -> ExitCode {
    eprintln!("error: {e}");
    if let Some(r) = e.margin_report() {
        println!("{}", serde_json::to_string_pretty(r).expect("report serializes"));
    }
    exit(Outcome::of_error(e))
}

fn load(path: &Path) -> Result<ProblemFile, FileError> {
    let text = fs::read_to_string(path).map_err(|e| FileError::Schema { path: path.display().to_string(), message: e.to_string() })?;
    ProblemFile::from_json_str(&text)
}

fn write(path: &Path, contents: &str) -> Result<(), ExitCode> {
    fs::write(path, contents).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        exit(Outcome::BadInput)
    })
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("value serializes")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { path, seed } => {
            let cert = match load(&path).and_then(|f| session::validate(&f, seed)) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            println!("{}", pretty(&cert));
            exit(Outcome::Converged)
        }
        Command::Solve { path, trace, report, seed } => {
            let out = match load(&path).and_then(|f| session::solve(&f, seed)) {
                Ok(o) => o,
                Err(e) => return fail(&e),
            };
            if let Some(p) = trace {
                if let Err(c) = write(&p, &out.csv) {
                    return c;
                }
            }
            if let Some(p) = report {
                if let Err(c) = write(&p, &pretty(&out.json)) {
                    return c;
                }
            }
            let last = out.report.final_row();
            println!(
                "{}: {:?} after {} iterations, res_P = {:e}",
                out.json["variant"].as_str().unwrap_or("?"),
                out.report.termination,
                out.report.iterations,
                last.map_or(f64::NAN, |r| r.res_p)
            );
            exit(out.outcome)
        }
        Command::Compare { path, variants, out, seed } => {
            let rows = match load(&path).and_then(|f| session::compare(&f, &variants, seed)) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            let table = pretty(&json!({ "seed": seed, "rows": rows }));
            match out {
                Some(p) => {
                    if let Err(c) = write(&p, &table) {
                        return c;
                    }
                }
                None => println!("{table}"),
            }
            for r in &rows {
                eprintln!("{:<14} {:<40} {}", r.variant, r.status, r.iterations.map_or("-".into(), |n| n.to_string()));
            }
            exit(Outcome::Converged)
        }
    }
}
