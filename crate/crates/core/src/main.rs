use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Parser, Subcommand};

use nussbaum_consensus::cli::{self, exit_code, Overrides, Scenario};
use nussbaum_consensus::control::NussbaumKind;

#[derive(Parser)]
#[command(version, about = "Nussbaum-gain output consensus simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one or more scenarios and write trajectory, summary and plot files.
    Run {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Integration step (s).
        #[arg(long)]
        dt: Option<f64>,
        /// Simulated horizon (s).
        #[arg(long)]
        duration: Option<f64>,
        /// Nussbaum function: k2sin, k2cos or expk2cos.
        #[arg(long)]
        nussbaum: Option<NussbaumKind>,
        /// Output directory. Defaults to `runs/<scenario name>`; with several
        /// scenarios each one goes to `<output-dir>/<scenario name>`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Number of scenarios to run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Validate a scenario and report which topology conditions it satisfies.
    Check { file: PathBuf },
    /// List the agent models accepted in scenario files.
    ListModels,
}

fn load(path: &Path) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    cli::parse_scenario(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run_one(path: &Path, overrides: &Overrides, out_dir: Option<&Path>, nested: bool) -> i32 {
    let mut scenario = match load(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code::INVALID_INPUT;
        }
    };
    if let Err(e) = scenario.apply_overrides(overrides) {
        eprintln!("error: {e}");
        return exit_code::INVALID_INPUT;
    }
    let dir = match (out_dir, nested) {
        (Some(d), false) => d.to_path_buf(),
        (Some(d), true) => d.join(&scenario.name),
        (None, _) => Path::new("runs").join(&scenario.name),
    };
    let started = Instant::now();
    match cli::run(&scenario, &dir) {
        Ok(outcome) => {
            for w in &outcome.assumptions.warnings {
                eprintln!("[{}] warning: {w}", scenario.name);
            }
            let r = &outcome.report;
            println!(
                "[{}] consensus={} bounded={} tracking={} max_spread={:.3e} ({:.2?}) -> {}",
                scenario.name,
                r.consensus,
                r.bounded,
                r.tracking.map_or("n/a".to_string(), |t| t.to_string()),
                r.max_spread_in_window,
                started.elapsed(),
                dir.display()
            );
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("[{}] error: {e}", scenario.name);
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match args.command {
        Command::ListModels => {
            print!("{}", cli::list_models());
            exit_code::SUCCESS
        }
        Command::Check { file } => match load(&file) {
            Ok(s) => {
                print!("{}", cli::check_assumptions(&s).render());
                exit_code::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code::INVALID_INPUT
            }
        },
        Command::Run {
            files,
            dt,
            duration,
            nussbaum,
            output_dir,
            jobs,
        } => {
            let overrides = Overrides {
                dt,
                duration,
                nussbaum,
            };
            let nested = files.len() > 1;
            let next = AtomicUsize::new(0);
            let worst = Mutex::new(exit_code::SUCCESS);
            std::thread::scope(|scope| {
                for _ in 0..jobs.clamp(1, files.len()) {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(file) = files.get(i) else { break };
                        let code = run_one(file, &overrides, output_dir.as_deref(), nested);
                        let mut w = worst.lock().unwrap();
                        *w = (*w).max(code);
                    });
                }
            });
            worst.into_inner().unwrap()
        }
    };
    ExitCode::from(code as u8)
}
