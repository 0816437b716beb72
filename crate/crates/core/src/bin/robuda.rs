use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robuda::attacks::AttackKind;
use robuda::data::save_dataset;
use robuda::experiment::{build_data, compare_schemes, comparison_text, run_experiment, summary_text, RunConfig};
use robuda::Error;

/// Adversarially robust domain adaptation experiments on synthetic shifts.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scheme for every seed and write metrics, summary and metadata.
    Run(Common),
    /// Train all five schemes on identical data and write a comparison table.
    Compare(Common),
    /// Write the generated dataset for one seed to a CSV file.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Destination CSV file.
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// uda, source-at, at-uda, uda-at or srouda.
    #[arg(long)]
    scheme: Option<String>,
    /// Seed, or a comma-separated list of seeds.
    #[arg(long)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluation attacks: fgsm, pgd10, pgd20, cwinf.
    #[arg(long, value_delimiter = ',')]
    attack: Vec<String>,
    /// Extra `key=value` overrides, applied after the file and before the flags above.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> robuda::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::from_text(&text)?
            }
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = &self.scheme {
            cfg.set("scheme", s)?;
        }
        if let Some(s) = &self.seed {
            cfg.set("seeds", s)?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if !self.attack.is_empty() {
            cfg.attacks = self
                .attack
                .iter()
                .map(|a| a.trim().parse())
                .collect::<robuda::Result<Vec<AttackKind>>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> robuda::Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.resolve()?;
            let result = run_experiment(&cfg)?;
            print!("{}", summary_text(&result, &cfg.attacks));
            eprintln!("wrote {}", cfg.out.join(cfg.scheme.name()).display());
        }
        Command::Compare(common) => {
            let cfg = common.resolve()?;
            let results = compare_schemes(&cfg)?;
            print!("{}", comparison_text(&results, &cfg.attacks));
            eprintln!("wrote {}", cfg.out.join("comparison.csv").display());
        }
        Command::GenData { common, file } => {
            let cfg = common.resolve()?;
            let pair = build_data(&cfg, cfg.seeds[0])?;
            save_dataset(&pair, &file)?;
            eprintln!("wrote {}", file.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Validation(_) | Error::Schema(_) => 2,
                Error::Divergence { .. } => 3,
                _ => 1,
            })
        }
    }
}
