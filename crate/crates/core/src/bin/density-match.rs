use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use density_match::cli::{self, CliError, Overrides};

/// Density matching of uncertain model outputs.
#[derive(Parser)]
#[command(name = "density-match", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derived pdf (plus optional kernel estimate and sensitivities) at the configured design.
    Pdf(Common),
    /// Optimize the design towards the target density.
    Match(Common),
    /// Run the finite-difference and Monte-Carlo checks.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn run(command: Command) -> Result<(), CliError> {
    let (which, common) = match command {
        Command::Pdf(c) => ("pdf", c),
        Command::Match(c) => ("match", c),
        Command::Verify(c) => ("verify", c),
    };
    let overrides = Overrides {
        out: common.out,
        seed: common.seed,
    };
    let (cfg, out) = cli::load(&common.config, &overrides)?;
    match which {
        "pdf" => {
            let s = cli::cmd_pdf(&cfg, &out)?;
            println!(
                "derived pdf integral {:.6}, a = {}, b = {}",
                s.derived_integral, s.surrogate.a, s.surrogate.b
            );
            if let Some(k) = s.kde {
                println!(
                    "kde relative L2 to derived pdf {:.4e} (h = {:.4e})",
                    k.relative_l2_to_derived, k.bandwidth
                );
            }
        }
        "match" => {
            let (s, _) = cli::cmd_match(&cfg, &out)?;
            println!(
                "{} calls, {}, normalized distance {:.6e}, variance {:.6e} -> {:.6e}",
                s.function_calls, s.termination, s.final_normalized_distance, s.initial_variance, s.final_variance
            );
        }
        _ => {
            let result = cli::cmd_verify(&cfg, &out);
            if let Ok(r) = &result {
                for c in &r.checks {
                    println!("PASS {} {:.3e} <= {:.1e}", c.name, c.value, c.threshold);
                }
            }
            result?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
