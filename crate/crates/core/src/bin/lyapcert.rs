use clap::{Parser, Subcommand};
use lyapcert::cli;
use std::path::PathBuf;
use std::process::ExitCode;

/// Certified Lyapunov exponents of 2x2 Markovian matrix products, with
/// Taylor coefficients along analytic parameter families.
#[derive(Parser)]
#[command(name = "lyapcert", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pretty-print the JSON output.
    #[arg(long, global = true)]
    human: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the multicone and report the branch structure.
    Check { file: PathBuf },
    /// Compute the exponent with a certified error bound.
    Lyapunov {
        file: PathBuf,
        /// Target accuracy, e.g. 1e-30.
        #[arg(long)]
        epsilon: Option<String>,
        /// Working precision in bits.
        #[arg(long)]
        precision: Option<u32>,
        /// float (default) or interval.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Certified Taylor coefficients of the exponent along the family.
    Taylor {
        file: PathBuf,
        /// Highest coefficient order.
        #[arg(long)]
        order: Option<usize>,
        /// Per-coefficient accuracy target.
        #[arg(long)]
        epsilon: Option<String>,
        /// Disk radius around t0.
        #[arg(long)]
        radius: Option<String>,
        /// Complex contraction level in (rho, 1).
        #[arg(long)]
        rho_bar: Option<String>,
        /// Estimate disk constants by boundary sampling when the file
        /// does not supply them.
        #[arg(long)]
        estimate: bool,
        #[arg(long)]
        precision: Option<u32>,
    },
    /// Monte-Carlo sanity estimate of the exponent.
    Simulate {
        file: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        steps: u64,
        #[arg(long, default_value_t = 32)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Rewrite the system as its d-step block reduction.
    ReduceBase {
        file: PathBuf,
        /// Write the reduced file here (otherwise stdout only).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check { file } => cli::cmd_check(file),
        Command::Lyapunov {
            file,
            epsilon,
            precision,
            mode,
        } => cli::cmd_lyapunov(file, epsilon.as_deref(), *precision, mode.as_deref()),
        Command::Taylor {
            file,
            order,
            epsilon,
            radius,
            rho_bar,
            estimate,
            precision,
        } => cli::cmd_taylor(
            file,
            *order,
            epsilon.as_deref(),
            radius.as_deref(),
            rho_bar.as_deref(),
            *estimate,
            *precision,
        ),
        Command::Simulate {
            file,
            steps,
            trials,
            seed,
        } => cli::cmd_simulate(file, *steps, *trials, *seed),
        Command::ReduceBase { file, output } => cli::cmd_reduce_base(file, output.as_deref()),
    };
    match result {
        Ok(value) => {
            let text = if cli.human {
                serde_json::to_string_pretty(&value).expect("serializable")
            } else {
                serde_json::to_string(&value).expect("serializable")
            };
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
