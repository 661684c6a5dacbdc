//! `ltfair` — train, evaluate, sweep, select, verify and export
//! environments from the command line.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 missing or
//! unreadable environment table or checkpoint, 4 training failure,
//! 5 verification failure, 6 I/O error.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ltfair_core::envs::builtin;
use ltfair_core::harness::{
    self, evaluate_run, read_sweep, run, select, sweep, write_sweep, Evaluation, RunConfig,
    SweepSpec,
};
use ltfair_core::oracle::verify_seeded;
use ltfair_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ltfair",
    version,
    about = "Long-term fairness under selective labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its run directory.
    Train { config: PathBuf },
    /// Deploy a trained policy on fresh pools and report disparity and reward.
    Evaluate {
        /// Run directory (containing manifest.toml and policy.ckpt).
        run_dir: PathBuf,
        #[arg(long, default_value_t = harness::DEFAULT_EVAL_SEEDS)]
        seeds: usize,
        /// First evaluation seed; seeds are consecutive.
        #[arg(long, default_value_t = 1)]
        first_seed: u64,
        #[arg(long, default_value_t = harness::DEFAULT_HORIZON)]
        horizon: usize,
        /// Write the per-step trace to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train and score every point of a hyperparameter grid.
    Sweep {
        grid: PathBuf,
        /// Results table (defaults to `<base.out_dir>/results.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select one configuration per algorithm from a results table.
    Select {
        results: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        omega: f64,
    },
    /// Run the exact-enumeration theorem suites.
    Verify {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a built-in environment table as JSON.
    ExportEnv {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_evaluation(ev: &Evaluation) {
    println!("seed,reward,mean_abs_delta,abs_mean_delta,mean_abs_delta_observed,mean_abs_delta_accepted,acceptance_rate");
    for s in &ev.seeds {
        println!(
            "{},{},{},{},{},{},{}",
            s.seed,
            s.reward,
            s.mean_abs_delta,
            s.abs_mean_delta,
            s.mean_abs_delta_observed,
            s.mean_abs_delta_accepted,
            s.acceptance_rate
        );
    }
    let (r, rs) = ev.reward();
    let (d, ds) = ev.mean_abs_delta();
    let (a, as_) = ev.abs_mean_delta();
    println!("# reward {r:.2} (± {rs:.2}); mean |Δ_t| {d:.4} (± {ds:.4}); |mean Δ_t| {a:.4} (± {as_:.4})");
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let art = run(&cfg)?;
            println!(
                "{}: {} iterations, final resource {}, {:.1} s -> {}",
                art.manifest.run_id,
                art.manifest.iterations,
                art.manifest.final_resource,
                art.manifest.wall_clock_seconds,
                art.dir.display()
            );
        }
        Command::Evaluate {
            run_dir,
            seeds,
            first_seed,
            horizon,
            trace,
        } => {
            let seeds: Vec<u64> = (first_seed..first_seed + seeds as u64).collect();
            let ev = match trace {
                Some(path) => {
                    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
                    let ev = evaluate_run(&run_dir, &seeds, horizon, Some(&mut f))?;
                    f.flush()?;
                    ev
                }
                None => evaluate_run(&run_dir, &seeds, horizon, None)?,
            };
            print_evaluation(&ev);
        }
        Command::Sweep { grid, out } => {
            let spec = SweepSpec::load(&grid)?;
            let results = sweep(&spec)?;
            let out = out.unwrap_or_else(|| spec.base.out_dir.join("results.csv"));
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&out, write_sweep(&results)?)?;
            println!("{} runs -> {}", results.len(), out.display());
        }
        Command::Select { results, omega } => {
            let text = fs::read_to_string(&results)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", results.display())))?;
            for r in select(&read_sweep(&text)?, omega)? {
                println!(
                    "{}: beta1={} beta2={} disparity={} reward={} ({})",
                    r.algorithm.name(),
                    r.beta1,
                    r.beta2,
                    r.selection_disparity,
                    r.reward,
                    r.run_dir
                );
            }
        }
        Command::Verify { instances, seed } => {
            let mut ok = true;
            for s in verify_seeded(seed, instances)? {
                let verdict = if s.passed() { "PASS" } else { "FAIL" };
                ok &= s.passed();
                println!(
                    "{verdict} {}: {} checked, {} failures, max error {:e}",
                    s.name, s.checked, s.failures, s.max_error
                );
            }
            return Ok(ok);
        }
        Command::ExportEnv { name, out } => {
            let json = builtin(&name)?.export_json()?;
            match out {
                Some(p) => fs::write(p, json)?,
                None => println!("{json}"),
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(5),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
