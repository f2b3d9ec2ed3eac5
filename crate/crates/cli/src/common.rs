use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use lpkm_core::io::{load_mlp, RunConfig};
use lpkm_core::retarget::{
    EyesRetargetWeights, LipRetargetWeights, RetargetFlags, RetargetModels, StitchingWeights,
};
use lpkm_core::Error;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "LPKM_SEED";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::NumericFailure(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(Error::Format(format!("csv: {e}")))
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// The config at `path` (defaults when absent) with the seed override applied.
pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.train.seed = v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
    }
    Ok(cfg)
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open_file(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| {
        CliError::Core(Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        )))
    })
}

/// Weight file paths given on the command line; each overrides the config.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct WeightPaths {
    /// Stitching network weights.
    #[arg(long, value_name = "FILE")]
    pub stitching_weights: Option<PathBuf>,
    /// Eyes retargeting network weights.
    #[arg(long, value_name = "FILE")]
    pub eyes_weights: Option<PathBuf>,
    /// Lip retargeting network weights.
    #[arg(long, value_name = "FILE")]
    pub lip_weights: Option<PathBuf>,
}

fn pick(flag: bool, cli: &Option<PathBuf>, cfg: &Option<PathBuf>, what: &str, opt: &str) -> CliResult<Option<PathBuf>> {
    if !flag {
        return Ok(None);
    }
    cli.clone()
        .or_else(|| cfg.clone())
        .map(Some)
        .ok_or_else(|| usage(format!("{what} enabled but no weights given: pass --{opt} or set it in [model]")))
}

/// Loads the networks the enabled flags need.
pub fn load_models(cfg: &RunConfig, flags: RetargetFlags, paths: &WeightPaths) -> CliResult<RetargetModels> {
    let m = &cfg.model;
    let mut models = RetargetModels::default();
    if let Some(p) = pick(flags.stitch, &paths.stitching_weights, &m.stitching, "stitching", "stitching-weights")? {
        models.stitching = Some(StitchingWeights::from_mlp(load_mlp(p)?)?);
    }
    if let Some(p) = pick(flags.eyes, &paths.eyes_weights, &m.eyes, "eyes retargeting", "eyes-weights")? {
        models.eyes = Some(EyesRetargetWeights::from_mlp(load_mlp(p)?)?);
    }
    if let Some(p) = pick(flags.lip, &paths.lip_weights, &m.lip, "lip retargeting", "lip-weights")? {
        models.lip = Some(LipRetargetWeights::from_mlp(load_mlp(p)?)?);
    }
    Ok(models)
}
