//! `skillcot`: the skill-CoT pipeline as composable subcommands.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skillcot_core::{ErrorCategory, SplitRatio};

#[derive(Parser, Debug)]
#[command(
    name = "skillcot",
    version,
    about = "Skill taxonomy, skill-conditioned CoT annotation and expert routing"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cluster count: skills for build-taxonomy, experts elsewhere.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Skills selected per question.
    #[arg(long, global = true)]
    pub skills: Option<usize>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Append-only LLM response cache file.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Replay LLM responses from a script instead of calling the remote endpoint.
    #[arg(long = "mock-script", global = true)]
    pub mock_script: Option<PathBuf>,
    #[arg(long = "max-inflight", global = true)]
    pub max_inflight: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Seeded train/test split.
    Split {
        dataset: PathBuf,
        #[arg(long)]
        ratio: Option<SplitRatio>,
    },
    /// One skill phrase per example.
    ExtractSkills { dataset: PathBuf },
    /// Cluster skill phrases into the shared taxonomy.
    BuildTaxonomy { descriptions: PathBuf },
    /// Skill selection, sub-QA generation, merging and verification.
    Annotate { dataset: PathBuf, taxonomy: PathBuf },
    /// Cluster verified questions into experts and back-fill expert ids.
    PartitionExperts { annotations: PathBuf },
    /// Expert (and optionally top skills) for one question.
    Route {
        partition: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Train the toy multi-adapter model.
    TrainToy { config: PathBuf },
    /// Routed experts versus one equal-budget adapter on synthetic data.
    EvalSpecialization {
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
        /// Also run the four-cell skill-CoT x experts ablation.
        #[arg(long)]
        ablation: bool,
    },
    /// 2-D PCA of taxonomy or partition centroids, or of labelled embeddings.
    ExportProjection {
        embeddings: PathBuf,
        #[arg(long, default_value = "pca")]
        method: String,
    },
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Validation => 1,
        ErrorCategory::Transport => 2,
        ErrorCategory::Internal => 3,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error[validation]: {}", one_line(&e.to_string()));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {}", category.as_str(), one_line(&e.to_string()));
            ExitCode::from(exit_code(category))
        }
    }
}
