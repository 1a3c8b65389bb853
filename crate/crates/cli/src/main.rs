use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ura_cli::{run, RunManifest};

/// Monte-Carlo simulator for unsourced random access with feedback.
#[derive(Debug, Parser)]
#[command(name = "ura-sim", version)]
struct Args {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named parameter set: system-a, system-b or iv-a-hamming.
    #[arg(long)]
    preset: Option<String>,
    /// Override one key; a comma list sweeps it. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Score feedback with error-free reception.
    #[arg(long)]
    genie_feedback: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let manifest = RunManifest {
        config_path: args.config,
        preset: args.preset,
        overrides: args.set,
        out_dir: args.out,
        seed: args.seed,
        jobs: args.jobs,
        genie_feedback: args.genie_feedback,
    };
    match run(&manifest) {
        Ok(report) => {
            for g in &report.groups {
                match &g.summary {
                    Some(s) => println!(
                        "{}: variant {} ff {:.2} dB equiv {:.2} dB pupe {:.4} k_bar {:.1}",
                        g.group, s.variant, s.ff_ebn0_db, s.equiv_ebn0_db, s.overall_pupe, s.k_bar
                    ),
                    None => println!("{}: target not reached within the sweep range", g.group),
                }
            }
            println!("wrote {}", manifest.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
