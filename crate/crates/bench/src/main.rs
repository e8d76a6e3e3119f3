use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use layergreen::gta::TestRule;
use layergreen_bench::report::{compare, report_path, Report, ScenarioMismatch};
use layergreen_bench::run::{run, Mode, Numerical, RunOptions};
use layergreen_bench::scenario::{self, Overrides};
use layergreen_bench::slice;

#[derive(Parser)]
#[command(name = "lgbench", version, about = "Layered-soil Green's functions: full-order and reduced-order runs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file or bundled scenario name.
    Run {
        scenario: String,
        #[arg(long, default_value = "both", value_parser = ["fom", "rom", "both"])]
        mode: String,
        #[arg(long)]
        max_modes: Option<usize>,
        /// ALS tolerance.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the scenario's full-size grid.
        #[arg(long)]
        paper_grid: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = ["galerkin", "petrov-galerkin", "pg"])]
        test_rule: Option<String>,
        /// Subspace refinement sweeps after each mode.
        #[arg(long)]
        refine: Option<usize>,
    },
    /// Compare two reports (run directories or report.csv files).
    Compare { a: PathBuf, b: PathBuf },
    /// Print a slice of a .tns or .tkr file as CSV.
    Slice {
        tensor: PathBuf,
        /// `dim=index`, repeatable; dim is p, z, f, mu or a position.
        #[arg(long = "fix")]
        fix: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const USAGE: u8 = 1;
const NUMERICAL: u8 = 2;
const REGRESSION: u8 = 3;

fn classify(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Numerical>().is_some() || e.downcast_ref::<layergreen::Error>().is_some() {
        NUMERICAL
    } else {
        USAGE
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.cmd {
        Cmd::Run { scenario: spec, mode, max_modes, tol, seed, paper_grid, workers, out, test_rule, refine } => {
            let ov = Overrides {
                max_modes,
                als_tol: tol,
                seed,
                test_rule: test_rule.as_deref().and_then(TestRule::parse),
                refine_sweeps: refine,
                paper_grid,
            };
            let s = match scenario::load(&spec, &ov) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(USAGE);
                }
            };
            let out = out.or_else(|| s.out_dir.clone()).unwrap_or_else(|| PathBuf::from("runs").join(&s.name));
            let opts = RunOptions { mode: Mode::parse(&mode).expect("validated by clap"), workers: workers.max(1), out };
            match run(&s, &opts) {
                Ok(o) => {
                    for (k, v) in &o.report.rows {
                        println!("{k:<26} {v}");
                    }
                    println!("artifacts in {}", opts.out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(classify(&e))
                }
            }
        }
        Cmd::Compare { a, b } => {
            let res = Report::read(&report_path(&a)).and_then(|ra| Report::read(&report_path(&b)).and_then(|rb| compare(&ra, &rb)));
            match res {
                Ok(c) => {
                    println!("scenario {}", c.scenario);
                    for d in &c.deltas {
                        println!("{:<26} {:>14.6e} {:>14.6e} {:>+10.3}%", d.metric, d.a, d.b, 100.0 * d.relative);
                    }
                    match c.final_error {
                        Some((x, y)) if c.regression => {
                            println!("regression: final error {y:.4e} exceeds {x:.4e} by more than 10%");
                            ExitCode::from(REGRESSION)
                        }
                        Some((x, y)) => {
                            println!("pass: final error {y:.4e} vs {x:.4e}");
                            ExitCode::SUCCESS
                        }
                        None => {
                            println!("no error tables to compare");
                            ExitCode::SUCCESS
                        }
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    if e.downcast_ref::<ScenarioMismatch>().is_some() {
                        ExitCode::from(USAGE)
                    } else {
                        ExitCode::from(classify(&e))
                    }
                }
            }
        }
        Cmd::Slice { tensor, fix, out } => {
            let res = slice::slice_file(&tensor, &fix).and_then(|(keep, block)| {
                let labels = layergreen::tensor::default_labels(block.ndim());
                match &out {
                    Some(p) => slice::write_csv(&mut std::fs::File::create(p)?, &labels, &keep, &block),
                    None => slice::write_csv(&mut std::io::stdout().lock(), &labels, &keep, &block),
                }
            });
            match res {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(USAGE)
                }
            }
        }
    }
}
