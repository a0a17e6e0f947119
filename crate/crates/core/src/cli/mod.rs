//! Command-line front end.

mod commands;
mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use pipeline::{run_pipeline, PipelineConfig};

use crate::autodiff::TensorError;
use crate::refine::RefineError;
use crate::retrieval::{Category, RetrievalError};
use crate::rgan::RganError;
use crate::scan::{ScanError, DESK_IMAGE_SIZE, RIG_RADIUS, RIG_VIEWS};
use crate::voxel::VoxelError;

pub const SEED_ENV: &str = "VOXFORGE_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Domain(_) => EXIT_DOMAIN,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<VoxelError> for CliError {
    fn from(e: VoxelError) -> Self {
        match e {
            VoxelError::Io { .. } | VoxelError::Format(_) => CliError::Io(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<ScanError> for CliError {
    fn from(e: ScanError) -> Self {
        match e {
            ScanError::Voxel(v) => v.into(),
            ScanError::Io { .. } | ScanError::Format(_) => CliError::Io(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Io { .. } | TensorError::Format(_) => CliError::Io(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<RganError> for CliError {
    fn from(e: RganError) -> Self {
        match e {
            RganError::Voxel(v) => v.into(),
            RganError::Scan(s) => s.into(),
            RganError::Tensor(t) => t.into(),
            RganError::Io { .. } | RganError::Json { .. } | RganError::Checkpoint(_) => CliError::Io(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Voxel(v) => v.into(),
            RetrievalError::UnknownCategory(_) => CliError::Usage(e.to_string()),
            RetrievalError::Io { .. }
            | RetrievalError::Manifest { .. }
            | RetrievalError::Entry { .. }
            | RetrievalError::BadQuaternion { .. }
            | RetrievalError::DuplicateId(_) => CliError::Io(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Voxel(v) => v.into(),
            RefineError::Tensor(t) => t.into(),
            RefineError::Csv { .. } => CliError::Io(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "voxforge", version, about = "Volumetric reconstruction, grasp retrieval and refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render depth images of a mesh from hemisphere viewpoints.
    Render {
        mesh: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = RIG_VIEWS)]
        views: usize,
        #[arg(long, default_value_t = RIG_RADIUS)]
        radius: f64,
        #[arg(long, default_value_t = DESK_IMAGE_SIZE)]
        size: usize,
    },
    /// Build a training set of partial views and solid truths.
    Dataset {
        out_dir: PathBuf,
        /// Mesh files; the toy shapes are used when none are given.
        #[arg(long = "mesh")]
        meshes: Vec<PathBuf>,
        #[arg(long, default_value_t = 32)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        views: usize,
        #[arg(long, default_value_t = DESK_IMAGE_SIZE)]
        size: usize,
        /// Jitter the toy shapes with this seed.
        #[arg(long)]
        perturb: Option<u64>,
    },
    /// Train the reconstruction network.
    Train {
        dataset: PathBuf,
        out_dir: PathBuf,
        /// JSON training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruct every object of a dataset from its leading views.
    Reconstruct {
        checkpoint: PathBuf,
        dataset: PathBuf,
        out_dir: PathBuf,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Score reconstructions against dataset truths.
    Evaluate {
        recon_dir: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Object-to-category assignment, `object=category`.
        #[arg(long = "category", value_parser = parse_assignment)]
        categories: Vec<(String, String)>,
    },
    /// Find the closest knowledge-base entry of a task category.
    Retrieve {
        recon: PathBuf,
        #[arg(long, value_parser = parse_category)]
        category: Category,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refine a retrieved grasp on a reconstructed object.
    Refine {
        /// Reconstructed grid (VXG).
        recon: PathBuf,
        /// Output of `retrieve`.
        retrieval: PathBuf,
        #[arg(long, value_parser = parse_category)]
        category: Category,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every stage from one configuration file.
    Pipeline { config: PathBuf },
}

fn parse_category(s: &str) -> Result<Category, String> {
    s.parse().map_err(|e: RetrievalError| e.to_string())
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| format!("expected object=category, got {s:?}"))
}

/// Seed from the environment, if set.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Usage(format!("{SEED_ENV}: {e}"))),
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Render {
            mesh,
            out_dir,
            views,
            radius,
            size,
        } => commands::render(&mesh, &out_dir, views, radius, size),
        Command::Dataset {
            out_dir,
            meshes,
            m,
            views,
            size,
            perturb,
        } => commands::dataset(&out_dir, &meshes, m, views, size, perturb),
        Command::Train {
            dataset,
            out_dir,
            config,
            epochs,
            seed,
        } => commands::train(&dataset, &out_dir, config.as_deref(), epochs, seed),
        Command::Reconstruct {
            checkpoint,
            dataset,
            out_dir,
            views,
        } => commands::reconstruct(&checkpoint, &dataset, &out_dir, views),
        Command::Evaluate {
            recon_dir,
            dataset,
            out,
            categories,
        } => commands::evaluate(&recon_dir, &dataset, &out, &categories),
        Command::Retrieve {
            recon,
            category,
            kb,
            out,
        } => commands::retrieve(&recon, category, &kb, out.as_deref()),
        Command::Refine {
            recon,
            retrieval,
            category,
            config,
            out,
            seed,
        } => commands::refine(&recon, &retrieval, category, config.as_deref(), &out, seed),
        Command::Pipeline { config } => run_pipeline(&config).map(|_| ()),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
