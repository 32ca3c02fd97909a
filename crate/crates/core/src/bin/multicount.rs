use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use multicount::data::write_dataset;
use multicount::train::{
    ablation_sweep, ablation_table, evaluate_checkpoint, export_density, load_data, train, RunConfig,
};
use multicount::{Error, Result};

/// Multi-class object counting with density maps and category attention.
#[derive(Parser)]
#[command(name = "multicount", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes logs and a checkpoint under the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a manifest and print the metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the metrics to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write predicted density and attention maps for one image.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and compare the four module configurations.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the config's synthetic train and validation sets to disk.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config } => {
            let cfg = load_config(&config)?;
            let (train_set, val_set) = load_data(&cfg)?;
            let out = cfg.resolved_output_dir();
            let outcome = train(&cfg, &train_set, &val_set, Some(&out))?;
            let last = outcome.log.last().expect("at least one step");
            println!("steps = {}", last.step);
            println!("final_loss = {}", last.loss.total);
            if let Some((_, r)) = outcome.evals.last() {
                println!("mae_mean = {:.6}", r.mae_mean);
                println!("mse_mean = {:.6}", r.mse_mean);
            }
            println!("output_dir = {}", out.display());
        }
        Command::Eval { checkpoint, manifest, out } => {
            let report = evaluate_checkpoint(&checkpoint, &manifest)?;
            let text = report.to_text();
            if let Some(p) = out {
                std::fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
            }
            print!("{text}");
        }
        Command::Export { checkpoint, image, out } => {
            let s = export_density(&checkpoint, &image, &out)?;
            for (k, c) in s.counts.iter().enumerate() {
                println!("count_class_{k} = {c}");
            }
            println!("summary = {}", s.summary.display());
        }
        Command::Ablate { config } => {
            let cfg = load_config(&config)?;
            let (train_set, val_set) = load_data(&cfg)?;
            let out = cfg.resolved_output_dir();
            let runs = ablation_sweep(&cfg, &train_set, &val_set, Some(&out))?;
            print!("{}", ablation_table(&runs));
        }
        Command::Synth { config, out } => {
            let cfg = load_config(&config)?;
            let (train_set, val_set) = load_data(&cfg)?;
            println!("train_manifest = {}", write_dataset(&out.join("train"), &train_set)?.display());
            if !val_set.is_empty() {
                println!("val_manifest = {}", write_dataset(&out.join("val"), &val_set)?.display());
            }
        }
    }
    Ok(())
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let head = msg.split("Usage:").next().unwrap_or_default();
            eprintln!("error[usage]: {}", one_line(head.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
