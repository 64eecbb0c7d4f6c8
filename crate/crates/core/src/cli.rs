//! Command-line front end. `main.rs` only forwards to [`run_from`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::batch::select_batch_with_fallback;
use crate::criteria::{argmax_over_candidates, scores_to_csv};
use crate::design::{
    latin_hypercube, md_optimized_design_with, mixture_discrepancy, DesignMatrix, ExchangeOptions,
};
use crate::error::{Error, Result};
use crate::kriging::fit_with;
use crate::sequential::{derive_seed, run_campaign, CampaignConfig, Observer};
use crate::testbed::{run_comparison, ComparisonPlan};

#[derive(Debug, Parser)]
#[command(
    name = "seqkrig",
    version,
    about = "Sequential design for Kriging surrogates"
)]
pub struct Cli {
    /// Worker threads for candidate scoring and table cells.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory receiving all output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMethod {
    Lhs,
    Md,
}

/// Overrides shared by the config-driven commands.
#[derive(Debug, clap::Args)]
pub struct Overrides {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_matrix_size: Option<usize>,
    /// Candidate grid size.
    #[arg(long)]
    pub n_all: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Latin hypercube or discrepancy-optimized design.
    Design {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, value_enum, default_value_t = DesignMethod::Md)]
        method: DesignMethod,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exchange budget for `md`.
        #[arg(long, default_value_t = 5000)]
        budget: usize,
    },
    /// Run one campaign from a campaign config.
    Run(Overrides),
    /// Run a comparison table from a comparison config.
    Bench(Overrides),
    /// Score the candidate grid on a campaign's initial (or given) design
    /// and export the scores and the selected batch.
    Score {
        #[command(flatten)]
        overrides: Overrides,
        /// Design CSV to score against instead of the initial design.
        #[arg(long)]
        design: Option<PathBuf>,
    },
}

/// Run manifest written next to the outputs. Only `files` is meant for
/// comparison between runs; `wall_clock_seconds` naturally varies.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileDigest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
        });
        Ok(())
    }

    fn finish(
        self,
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        started: Instant,
    ) -> Result<()> {
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            files: self.files,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// Process exit status for an error: 2 usage or config, 3 numerical,
/// 4 input/output.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Io(_) => 4,
        Error::Numerical(_) | Error::Objective { .. } => 3,
        _ => 2,
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn load_campaign(o: &Overrides) -> Result<CampaignConfig> {
    let mut config = CampaignConfig::from_json(&read_config(&o.config)?)?;
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(size) = o.test_matrix_size {
        config.test_matrix_size = size;
    }
    if let Some(n) = o.n_all {
        config.candidate_grid.size = n;
    }
    config.validate()?;
    Ok(config)
}

fn load_plan(o: &Overrides) -> Result<ComparisonPlan> {
    let mut plan: ComparisonPlan = serde_json::from_str(&read_config(&o.config)?)
        .map_err(|e| Error::Parse(format!("comparison config: {e}")))?;
    if let Some(seed) = o.seed {
        plan.seed = seed;
    }
    if let Some(size) = o.test_matrix_size {
        plan.test_matrix_size = size;
    }
    if let Some(n) = o.n_all {
        plan.candidate_grid.size = n;
    }
    plan.validate()?;
    Ok(plan)
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let mut out = Outputs::new(&cli.out_dir)?;
    match &cli.command {
        Command::Design {
            n,
            m,
            method,
            seed,
            budget,
        } => {
            let design = match method {
                DesignMethod::Lhs => latin_hypercube(*n, *m, *seed)?,
                DesignMethod::Md => {
                    let opts = ExchangeOptions {
                        budget: *budget,
                        ..ExchangeOptions::default()
                    };
                    md_optimized_design_with(*n, *m, *seed, opts)?.design
                }
            };
            let md = mixture_discrepancy(&design).md_squared;
            match cli.format {
                Format::Csv => out.write("design.csv", &design.to_csv())?,
                Format::Json => out.write("design.json", &design.to_json())?,
            }
            let meta = serde_json::json!({
                "n": n, "m": m, "method": method, "seed": seed,
                "budget": budget, "md_squared": md,
            });
            out.write(
                "design_meta.json",
                &serde_json::to_string_pretty(&meta).unwrap(),
            )?;
            println!("MD^2 = {md}");
            out.finish("design", meta, Some(*seed), started)
        }
        Command::Run(o) => {
            let config = load_campaign(o)?;
            let result = run_campaign(&config)?;
            out.write("trace.json", &result.to_json())?;
            out.write("rounds.csv", &result.to_csv())?;
            if let Some(r) = result.final_metrics {
                println!("final RMSE = {}, MAE = {}", r.rmse, r.mae);
            }
            out.finish("run", to_value(&config), Some(config.seed), started)
        }
        Command::Bench(o) => {
            let plan = load_plan(o)?;
            let table = run_comparison(&plan)?;
            match cli.format {
                Format::Csv => {
                    out.write("table.csv", &table.to_matrix_csv())?;
                    out.write("cells.csv", &table.to_cells_csv())?;
                }
                Format::Json => {
                    out.write("table.json", &serde_json::to_string_pretty(&table).unwrap())?;
                }
            }
            out.write("curves.dat", &table.to_curves_dat())?;
            out.finish("bench", to_value(&plan), Some(plan.seed), started)
        }
        Command::Score { overrides, design } => {
            let config = load_campaign(overrides)?;
            let m = config.dim();
            let current = match design {
                Some(path) => DesignMatrix::from_csv(&read_config(path)?)?,
                None => crate::design::md_optimized_design(
                    config.n0,
                    m,
                    derive_seed(config.seed, 1),
                    config.design_budget,
                )?,
            };
            let mut observer = Observer::new(&config.objective);
            let y = observer.observe(&current)?;
            let model = if config.criterion.uses_observations() {
                Some(fit_with(
                    current.clone(),
                    y,
                    config.kernel,
                    config.seed,
                    &config.fit,
                )?)
            } else {
                None
            };
            let grid = config
                .candidate_grid
                .generate(m, derive_seed(config.seed, 2))?
                .without(&current)
                .ok_or(Error::EmptyCandidates)?;
            let scored =
                argmax_over_candidates(config.criterion, model.as_ref(), &current, &grid, true)?;
            let min_distance = (grid.n() as f64).powf(-1.0 / m as f64);
            let partition =
                select_batch_with_fallback(&grid, &scored.scores, &config.batch, min_distance)?;
            match cli.format {
                Format::Csv => out.write("scores.csv", &scores_to_csv(&grid, &scored.scores))?,
                Format::Json => {
                    let doc = serde_json::json!({ "candidates": grid, "scores": scored.scores });
                    out.write("scores.json", &serde_json::to_string_pretty(&doc).unwrap())?;
                }
            }
            let partition_doc = crate::batch::partition_to_json(&grid, &scored.scores, &partition);
            out.write(
                "partition.json",
                &serde_json::to_string_pretty(&partition_doc).unwrap(),
            )?;
            out.finish("score", to_value(&config), Some(config.seed), started)
        }
    }
}

/// Parses arguments, runs, and returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(jobs) = cli.jobs {
        // A global pool can only be installed once per process.
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            log::debug!("thread pool already initialized: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
