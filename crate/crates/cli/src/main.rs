#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gfbeam::greens::{write_gf_binary, write_gf_csv};
use gfbeam::steering::Preset;

mod compare;
mod config;
mod run;

use config::{FrequencySpec, RunConfig, SteeringSection};

#[derive(Parser)]
#[command(name = "gfbeam", version, about = "Beamforming with tailored Green's functions")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, env = "GFBEAM_THREADS", default_value_t = 0, global = true)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by a TOML config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Report criteria deltas (b − a) between two run directories.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Directory for compare.json and compare.csv; the aggregate table
        /// goes to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the config's [gf] section and write the tensor to a GFT1
    /// file, or CSV when the name ends in .csv.
    ExportGf { config: PathBuf, output: PathBuf },
}

/// Command-line overrides for individual config fields.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Steering preset I, II, III or IV.
    #[arg(long, conflicts_with_all = ["alpha", "beta"])]
    preset: Option<Preset>,
    #[arg(long, requires = "beta", allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, requires = "alpha", allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Comma-separated frequencies in Hz.
    #[arg(long, value_delimiter = ',')]
    frequencies: Option<Vec<f64>>,
    #[arg(long)]
    diagonal_removal: bool,
    #[arg(long)]
    step_db: Option<f64>,
}

impl Overrides {
    fn apply(self, cfg: &mut RunConfig) {
        if let Some(o) = self.out {
            cfg.output_dir = o;
        }
        if let Some(p) = self.preset {
            cfg.steering = SteeringSection {
                preset: Some(p),
                alpha: None,
                beta: None,
            };
        }
        if let (Some(a), Some(b)) = (self.alpha, self.beta) {
            cfg.steering = SteeringSection {
                preset: None,
                alpha: Some(a),
                beta: Some(b),
            };
        }
        if let Some(f) = self.frequencies {
            cfg.frequencies = FrequencySpec {
                list: Some(f),
                range: None,
            };
        }
        cfg.diagonal_removal |= self.diagonal_removal;
        if let Some(s) = self.step_db {
            cfg.step_db = s;
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg);
            let s = run::run(&cfg)?;
            println!(
                "wrote {} maps ({} frequencies, {} sources) to {}",
                s.n_maps,
                s.n_frequencies,
                s.n_sources,
                s.output_dir.display()
            );
        }
        Command::Compare { run_a, run_b, out } => {
            let report = compare::compare(&run_a, &run_b)?;
            println!("# a: {}\n# b: {}", report.label_a, report.label_b);
            print!("{}", compare::to_csv(&report.aggregate));
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("compare.json"), serde_json::to_string_pretty(&report)?)?;
                std::fs::write(dir.join("compare.csv"), compare::to_csv(&report.per_map))?;
            }
        }
        Command::ExportGf { config, output } => {
            let cfg = RunConfig::load(&config)?;
            let scene = cfg.build_scene()?;
            let freqs = cfg.frequencies.resolve()?;
            let gf = run::build_gf(&cfg.gf.choice("gf")?, &scene, &freqs)?;
            let file = std::fs::File::create(&output).with_context(|| format!("creating {}", output.display()))?;
            if output.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                write_gf_csv(&gf, file)
            } else {
                write_gf_binary(&gf, file)
            }
            .context("greens")?;
            println!("wrote {} x {} x {} tensor to {}", gf.n_freq(), gf.n_focus, gf.n_mic, output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::FAILURE;
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
