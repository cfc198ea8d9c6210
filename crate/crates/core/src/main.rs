use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hyperfast::harness::{self, RunConfig};
use hyperfast::oracle::Point;
use hyperfast::problems::{make_logreg, synth_logreg};

#[derive(Parser)]
#[command(
    name = "hyperfast",
    version,
    about = "Accelerated second-order convex optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method on one problem, writing a trace and a summary.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        problem: Option<String>,
        /// hyperfast, natmi-exact, sliding or gd.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute a reference optimal value for synthetic logistic regression
    /// and print it as a fixture line.
    Fstar {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        m: usize,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value = "1e-3")]
        ridge: String,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Solve {
            config,
            problem,
            method,
            eps,
            max_iters,
            trace,
            summary,
            seed,
        } => {
            let overrides = [
                ("problem", problem),
                ("method", method),
                ("eps", eps.map(|v| v.to_string())),
                ("max_iters", max_iters.map(|v| v.to_string())),
                ("trace", trace.map(|p| p.display().to_string())),
                ("summary", summary.map(|p| p.display().to_string())),
                ("seed", seed.map(|v| v.to_string())),
            ];
            solve(config, &overrides)
        }
        Command::Fstar { seed, m, n, ridge } => fstar(seed, m, n, &ridge),
    }
}

fn solve(config: PathBuf, overrides: &[(&str, Option<String>)]) -> ExitCode {
    let cfg = (|| {
        let mut entries =
            harness::parse_entries(&std::fs::read_to_string(&config).map_err(|e| {
                hyperfast::error::Error::Config(format!("cannot read {}: {e}", config.display()))
            })?)?;
        for (key, value) in overrides {
            if let Some(v) = value {
                entries.retain(|(k, _)| k != key);
                entries.push((key.to_string(), v.clone()));
            }
        }
        RunConfig::from_entries(&entries)
    })();
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match harness::run(&cfg) {
        Ok(outcome) => {
            print!("{}", outcome.summary.to_text());
            match &outcome.error {
                None => ExitCode::SUCCESS,
                Some(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_SOLVER)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn fstar(seed: u64, m: usize, n: usize, ridge_text: &str) -> ExitCode {
    let Ok(ridge) = ridge_text.parse::<f64>() else {
        eprintln!("error: invalid ridge '{ridge_text}'");
        return ExitCode::from(EXIT_CONFIG);
    };
    let f = match synth_logreg(seed, m, n).and_then(|d| make_logreg(d, ridge)) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match harness::reference_fstar(&f, &Point::zeros(n), harness::REFERENCE_BUDGET) {
        Ok(sol) => {
            println!(
                "logreg seed={seed} m={m} n={n} ridge={ridge_text} fstar={:.17e}",
                sol.f
            );
            eprintln!(
                "# {} Newton steps, gradient norm {:e}",
                sol.iters, sol.grad_norm
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}
