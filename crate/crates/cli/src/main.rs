use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gplvm_uq::harness::{
    self, read_results_csv, read_results_json, read_summary_csv, render_boxplots, summarize_rows,
    write_summary_csv, ExperimentConfig,
};
use gplvm_uq::numkit::RngStream;
use gplvm_uq::synthgen;

#[derive(Parser)]
#[command(
    name = "gplvm-uq",
    version,
    about = "Uncertainty decomposition for an RFF-based GPLVM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Args)]
struct Common {
    /// `key = value` config file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    workers: Option<usize>,
    /// Starting configuration before the config file is applied.
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
}

impl Common {
    fn experiment_config(&self) -> Result<ExperimentConfig> {
        let base = match self.preset {
            Preset::Full => ExperimentConfig::default(),
            Preset::Desk => ExperimentConfig::desk(),
        };
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_path(path, base)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => base,
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write one synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Include the true latent coordinates.
        #[arg(long)]
        with_truth: bool,
    },
    /// Run the full experiment and write the results table.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Results table to boxplot summary CSV.
    Summarize {
        #[command(flatten)]
        common: Common,
        /// Results file (csv or json, per --format).
        input: PathBuf,
    },
    /// Boxplot summary CSV to one SVG per uncertainty type.
    Plot {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
    },
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { common, with_truth } => {
            let c = common.experiment_config()?;
            let data = synthgen::generate(
                c.n,
                c.sigma_x,
                c.sigma_w,
                c.sigma_eps,
                &RngStream::new(c.seed).derive("trial", 0).derive("data", 0),
            )?;
            match common.format {
                Format::Csv => data.write_csv(create(&common.out, "dataset.csv")?, with_truth)?,
                Format::Json => {
                    if !with_truth {
                        bail!("json output always contains the true latents; pass --with-truth");
                    }
                    serde_json::to_writer_pretty(create(&common.out, "dataset.json")?, &data)?
                }
            }
        }
        Command::Run { common } => {
            let c = common.experiment_config()?;
            let results = harness::run_experiment(&c, common.workers())?;
            match common.format {
                Format::Csv => {
                    harness::write_results_csv(&results, create(&common.out, "results.csv")?)?
                }
                Format::Json => {
                    harness::write_results_json(&results, create(&common.out, "results.json")?)?
                }
            }
            fs::write(common.out.join("config.txt"), c.to_config_string())?;
        }
        Command::Summarize { common, input } => {
            let file =
                File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let rows = match common.format {
                Format::Csv => read_results_csv(file)?,
                Format::Json => read_results_json(file)?,
            };
            let summaries = summarize_rows(&rows)?;
            write_summary_csv(&summaries, create(&common.out, "summary.csv")?)?;
        }
        Command::Plot { common, input } => {
            let file =
                File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let summaries = read_summary_csv(file)?;
            for path in render_boxplots(&summaries, &common.out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
