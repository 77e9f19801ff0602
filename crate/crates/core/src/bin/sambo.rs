use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sambo::harness::{
    plot, run_experiment, ExperimentConfig, ExperimentKind, RunSummary, OUTPUT_DIR_ENV,
};
use sambo::Error;

const EXIT_PARSE: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

/// Tabular shifts-aware model-based offline RL laboratory.
#[derive(Parser)]
#[command(name = "sambo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
        /// Worker threads; overrides the config.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the verification suites.
    Verify {
        /// Optional config whose `[verify]` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render curve CSVs as an SVG line chart.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value = "true_env_return")]
        column: String,
    },
    /// Print the full default config for an experiment kind.
    PrintDefaults {
        #[arg(long, default_value = "toy-model-bias")]
        kind: String,
    },
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Schema(_) => EXIT_PARSE,
        _ => EXIT_RUNTIME,
    }
}

fn report(summary: &RunSummary) {
    if let Some(opt) = summary.optimal_return {
        println!("optimal return {opt:.6}");
    }
    for (mode, m) in &summary.modes {
        println!(
            "{mode:<20} final return {:.4} ± {:.4}  mean kl {:.4}  updates to 95% {:.1}",
            m.final_true_return.mean, m.final_true_return.std, m.mean_kl.mean, m.updates_to_95.mean
        );
    }
    for r in &summary.verification {
        println!(
            "{:<24} {} worst margin {:.3e} (tol {:.1e}, {} instances)",
            r.check_name,
            if r.passed { "PASS" } else { "FAIL" },
            r.worst_margin,
            r.tolerance,
            r.instances_run
        );
        if let Some(inst) = &r.failing_instance {
            println!("  failing instance: {inst}");
        }
    }
}

fn execute(mut cfg: ExperimentConfig, out: Option<PathBuf>, threads: Option<usize>) -> ExitCode {
    if let Some(t) = threads {
        cfg.experiment.threads = t;
    }
    let dir = cfg.output_dir(out.as_deref());
    match run_experiment(&cfg, &dir) {
        Ok(summary) => {
            report(&summary);
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFY)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            output_dir,
            threads,
        } => match ExperimentConfig::load(&config) {
            Ok(cfg) => execute(cfg, output_dir, threads),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_for(&e))
            }
        },
        Command::Verify {
            config,
            output_dir,
            threads,
        } => {
            let mut cfg = ExperimentConfig::defaults_for(ExperimentKind::Verify);
            if let Some(path) = config {
                match ExperimentConfig::load(&path) {
                    Ok(c) => cfg.verify = c.verify,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(exit_for(&e));
                    }
                }
            }
            execute(cfg, output_dir, threads)
        }
        Command::Plot { csv, out, column } => {
            let paths: Vec<&std::path::Path> = csv.iter().map(PathBuf::as_path).collect();
            match plot(&paths, &out, &column) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    let code = match e {
                        Error::InvalidInput(_) | Error::Schema(_) => EXIT_PARSE,
                        other => exit_for(&other),
                    };
                    ExitCode::from(code)
                }
            }
        }
        Command::PrintDefaults { kind } => {
            let text = kind
                .parse::<ExperimentKind>()
                .and_then(|k| ExperimentConfig::defaults_for(k).to_toml());
            match text {
                Ok(t) => {
                    print!("{t}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_PARSE)
                }
            }
        }
    }
}
