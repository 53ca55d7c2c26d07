use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use distilforge_cli::runner::{ablate, run};
use distilforge_cli::verify::{corrupted_huber, verify, VerifyOptions};
use distilforge_cli::{exit_code, one_line, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "distilforge",
    version,
    about = "Collaborative two-peer distillation training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train both stages for every seed repetition.
    Run {
        config: PathBuf,
        /// Replace existing run outputs.
        #[arg(long)]
        overwrite: bool,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run variants A-D over every seed and tabulate final accuracy.
    Ablate {
        config: PathBuf,
        #[arg(long)]
        overwrite: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    /// Shift the linear branch of the reference Huber loss.
    Huber,
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            overwrite,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let s = run(&cfg, &out, overwrite)?;
            println!(
                "final test top-1 over {} seed(s): net1 {:.4} ± {:.4}, net2 {:.4} ± {:.4}",
                s.seeds.len(),
                s.net1.mean,
                s.net1.std,
                s.net2.mean,
                s.net2.std
            );
        }
        Command::Ablate {
            config,
            overwrite,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let report = ablate(&cfg, &out, overwrite)?;
            println!("variant  net  top-1 mean ± std");
            for r in &report.rows {
                println!(
                    "{:<7}  {:<3}  {:.4} ± {:.4}",
                    r.variant.name(),
                    r.net,
                    r.top1.mean,
                    r.top1.std
                );
            }
            let o = &report.ordering;
            println!(
                "ordering {}: variant B has the largest drop = {}, A >= B = {}",
                o.status(),
                o.b_largest_drop,
                o.a_at_least_b
            );
        }
        Command::Verify { inject_fault } => {
            let opts = match inject_fault {
                Some(Fault::Huber) => VerifyOptions {
                    huber: corrupted_huber,
                },
                None => VerifyOptions::default(),
            };
            verify(&opts, &mut std::io::stdout())?;
            println!("all properties hold");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", line.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", one_line(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
