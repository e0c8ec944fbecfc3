//! Command-line front end. `run` parses arguments, executes one command and
//! returns the process exit code: 0 on success, 2 on a user or input error,
//! 1 on an internal failure.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::ccl::{Binning, Connectivity};
use crate::harness::{HarnessError, Scheme};
use crate::metrics::Metric;
use crate::morphology::ContrastMode;
use crate::nifti::NiftiError;
use crate::phantom::PhantomError;
use crate::report::ReportError;
use crate::stats::{FdrFamily, StatsError};
use crate::volume::{VolumeError, VolumeUnits};

pub const THREADS_ENV: &str = "PVSEVAL_THREADS";

/// The only supported handling of undefined metric values.
pub const DEGENERATE_POLICY: &str = "exclude";

/// Fully resolved settings, embedded in every JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub connectivity: Connectivity,
    pub units: VolumeUnits,
    pub degenerate_policy: String,
    pub fdr_q: f64,
    pub fdr_family: FdrFamily,
    pub output_dir: PathBuf,
    pub threads: usize,
}

/// Optional settings read from `--config`; explicit flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub connectivity: Option<Connectivity>,
    pub units: Option<VolumeUnits>,
    pub degenerate_policy: Option<String>,
    pub fdr_q: Option<f64>,
    pub fdr_family: Option<FdrFamily>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON file with default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Neighbourhood used for clusters and shells: 6, 18 or 26.
    #[arg(long, global = true)]
    pub connectivity: Option<Connectivity>,
    /// Units of reported volumes: voxels or mm3.
    #[arg(long, global = true)]
    pub units: Option<VolumeUnits>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to $PVSEVAL_THREADS, then the CPU count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(name = "pvseval", version, about = "Evaluate 3D segmentations of small tubular structures")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Voxel- and cluster-level metrics for one prediction/reference pair.
    Metrics(MetricsArgs),
    /// Evaluate a manifest and summarize per region and site.
    Aggregate(AggregateArgs),
    /// Paired Wilcoxon comparison of two per-subject reports.
    Compare(CompareArgs),
    /// Intensity contrast between masks and their one-voxel shell.
    Contrast(ContrastArgs),
    /// Cluster sizes and their normalized histogram.
    Clusters(ClustersArgs),
    /// Generate a synthetic volume with tubular structures.
    Phantom(PhantomArgs),
    /// Write deterministic cross-validation folds for a manifest.
    Folds(FoldsArgs),
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub roi_wm: Option<PathBuf>,
    #[arg(long)]
    pub roi_bg: Option<PathBuf>,
    /// Image for contrast of both masks against their surroundings.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value = "subject")]
    pub subject_id: String,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// JSON list of leave-one-site-out folds with per-subject CSVs.
    #[arg(long)]
    pub loso_folds: Option<PathBuf>,
    /// Label recorded in the report's scheme column.
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Per-subject CSV of model A.
    #[arg(long)]
    pub a: PathBuf,
    /// Per-subject CSV of model B.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub fdr_q: Option<f64>,
    /// Rows adjusted together: per-region or all.
    #[arg(long)]
    pub fdr_family: Option<FdrFamily>,
    /// Comma-separated metric names; all six by default.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Args)]
pub struct ContrastArgs {
    #[arg(long, required_unless_present = "manifest")]
    pub image: Option<PathBuf>,
    /// Mask file; repeat for several masks.
    #[arg(long = "mask", requires = "image")]
    pub masks: Vec<PathBuf>,
    /// Use each subject's image_path with its reference and predicted masks.
    #[arg(long, conflicts_with_all = ["image", "masks"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "global")]
    pub mode: ContrastMode,
    #[arg(long, default_value = "image")]
    pub modality: String,
    #[arg(long, default_value = "subject")]
    pub subject_id: String,
}

#[derive(Debug, Args)]
pub struct ClustersArgs {
    /// Mask file; repeat for several masks.
    #[arg(long = "mask", required_unless_present = "manifest")]
    pub masks: Vec<PathBuf>,
    #[arg(long, conflicts_with = "masks")]
    pub manifest: Option<PathBuf>,
    /// Which manifest masks to label: ref or pred.
    #[arg(long, default_value = "ref")]
    pub source: String,
    #[arg(long, default_value = "linear")]
    pub binning: Binning,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// JSON phantom specification; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Grid size as X,Y,Z.
    #[arg(long, value_parser = triple::<usize>)]
    pub dims: Option<[usize; 3]>,
    /// Voxel size in mm as X,Y,Z.
    #[arg(long, value_parser = triple::<f64>)]
    pub spacing: Option<[f64; 3]>,
    #[arg(long)]
    pub n_tubes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Also write a perturbed prediction: delete:F, dilate, drop:K or translate:X,Y,Z.
    #[arg(long)]
    pub perturb: Option<String>,
    /// Seed of the perturbation; defaults to the phantom seed.
    #[arg(long)]
    pub perturb_seed: Option<u64>,
    /// Write .nii.gz instead of .nii.
    #[arg(long)]
    pub gzip: bool,
}

fn triple<T: std::str::FromStr + Copy + Default>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("cannot parse '{s}'"))?;
    parts
        .try_into()
        .map_err(|_| format!("expected three comma-separated values, got '{s}'"))
}

#[derive(Debug, Args)]
pub struct FoldsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// 5fcv or losocv.
    #[arg(long, default_value = "5fcv")]
    pub scheme: Scheme,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<NiftiError> for CliError {
    fn from(e: NiftiError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<VolumeError> for CliError {
    fn from(e: VolumeError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Pool(_) => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        CliError::Input(e.to_string())
    }
}

/// Wraps failures while writing outputs, which are not caused by the inputs.
pub(crate) fn internal<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Merges defaults, `$PVSEVAL_THREADS`, the config file and explicit flags,
/// later sources winning.
pub fn resolve_config(
    common: &CommonArgs,
    fdr_q: Option<f64>,
    fdr_family: Option<FdrFamily>,
    env_threads: Option<&str>,
) -> Result<RunConfig, CliError> {
    let file: ConfigFile = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    if let Some(policy) = &file.degenerate_policy {
        if policy != DEGENERATE_POLICY {
            return Err(CliError::Input(format!(
                "degenerate_policy '{policy}' is not supported; undefined values are always excluded"
            )));
        }
    }
    let env_threads = match env_threads {
        Some(s) => Some(s.trim().parse::<usize>().map_err(|_| {
            CliError::Input(format!("{THREADS_ENV}='{s}' is not a thread count"))
        })?),
        None => None,
    };
    let threads = common
        .threads
        .or(file.threads)
        .or(env_threads)
        .unwrap_or_else(default_threads);
    if threads == 0 {
        return Err(CliError::Input("thread count must be at least 1".into()));
    }
    let fdr_q = fdr_q.or(file.fdr_q).unwrap_or(0.05);
    if !(fdr_q > 0.0 && fdr_q < 1.0) {
        return Err(CliError::Input(format!("FDR q must be in (0, 1), got {fdr_q}")));
    }
    Ok(RunConfig {
        connectivity: common
            .connectivity
            .or(file.connectivity)
            .unwrap_or_default(),
        units: common.units.or(file.units).unwrap_or_default(),
        degenerate_policy: DEGENERATE_POLICY.into(),
        fdr_q,
        fdr_family: fdr_family.or(file.fdr_family).unwrap_or_default(),
        output_dir: common
            .out
            .clone()
            .or(file.output_dir)
            .unwrap_or_else(|| PathBuf::from(".")),
        threads,
    })
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let env = std::env::var(THREADS_ENV).ok();
    let (q, family) = match &cli.command {
        Command::Compare(c) => (c.fdr_q, c.fdr_family),
        _ => (None, None),
    };
    let config = resolve_config(&cli.common, q, family, env.as_deref())?;
    ensure_dir(&config.output_dir)?;
    match cli.command {
        Command::Metrics(a) => commands::metrics(&config, a),
        Command::Aggregate(a) => commands::aggregate(&config, a),
        Command::Compare(a) => commands::compare(&config, a),
        Command::Contrast(a) => commands::contrast(&config, a),
        Command::Clusters(a) => commands::clusters(&config, a),
        Command::Phantom(a) => commands::phantom(&config, a),
        Command::Folds(a) => commands::folds(&config, a),
    }
}

/// Runs the command line in `args` (including the program name) and returns
/// the exit code. Errors are reported as one line on stderr.
pub fn run<I, T>(args: I) -> i32
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
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pvseval: error: {}", e.message().replace('\n', " "));
            e.exit_code()
        }
    }
}
