//! Pipeline commands behind the `voxcorr` binary.
//!
//! Each subcommand runs one stage against a workspace directory, appends a
//! JSON line to `<workspace>/run_log.jsonl`, and maps failures to exit codes:
//! 2 for invalid input or missing artifacts, 1 for anything that fails at
//! run time.

pub mod commands;
pub mod config;
pub mod runlog;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_baseline, cmd_evaluate, cmd_generate, cmd_info, cmd_preprocess, cmd_register, cmd_train, EvaluateTarget,
    GeneratedSample, Selection,
};
pub use config::{sample_id, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: expected {what}, not found")]
    MissingInput { what: String, path: PathBuf },
    #[error(transparent)]
    Core(#[from] voxcorr::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use voxcorr::Error as E;
        match self {
            CliError::Validation(_) | CliError::MissingInput { .. } => 2,
            CliError::Core(e) => {
                let mut e = e;
                while let E::Sample { source, .. } = e {
                    e = source;
                }
                match e {
                    E::InvalidArgument(_) | E::DimMismatch(_) | E::TensorShape { .. } => 2,
                    _ => 1,
                }
            }
            CliError::Io { .. } | CliError::Json(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "voxcorr", version, about = "CAD-to-XCT volume registration pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Run configuration JSON; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Workspace directory (default: voxcorr_work)
    #[arg(long, value_name = "DIR")]
    pub workspace: Option<PathBuf>,
    /// Worker threads (default: all available cores)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Master seed replacing the deformation, degradation and training seeds (default: per-component seeds from the config)
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SelectArgs {
    /// Dataset manifest (default: <workspace>/dataset/manifest.json)
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Process only this sample id (default: every test-split sample)
    #[arg(long)]
    pub sample: Option<String>,
    /// Process every sample in the manifest (default: off)
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Learned,
    Baseline,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize CAD/XCT pairs with ground-truth fields, one per C value
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated level-set values (default: 0,-0.1,-0.2,-0.3,-0.4,-0.5,-0.6)
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        c_values: Option<Vec<f64>>,
        /// Cubic grid edge in voxels (default: 128)
        #[arg(long)]
        grid: Option<usize>,
        /// Voxel pitch in micrometers (default: 40)
        #[arg(long)]
        voxel_size_um: Option<f64>,
    },
    /// Clean, align and normalize raw pairs into a dataset with a manifest
    Preprocess {
        #[command(flatten)]
        common: CommonArgs,
        /// Output manifest path (default: <workspace>/dataset/manifest.json)
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Target grid as nx,ny,nz (default: the raw grid)
        #[arg(long, value_delimiter = ',', num_args = 3)]
        target_dims: Option<Vec<usize>>,
    },
    /// Train the registration network on the train/val splits
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset manifest (default: <workspace>/dataset/manifest.json)
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Output checkpoint (default: <workspace>/model/model.vmck)
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Epochs (default: 80)
        #[arg(long)]
        epochs: Option<usize>,
        /// Optimizer steps per epoch (default: 5)
        #[arg(long)]
        steps_per_epoch: Option<usize>,
        /// Patches per step (default: 2)
        #[arg(long)]
        batch_size: Option<usize>,
        /// Learning rate (default: 0.001)
        #[arg(long)]
        lr: Option<f64>,
        /// Training patch edge (default: 32)
        #[arg(long)]
        patch_size: Option<usize>,
    },
    /// Register samples with a trained checkpoint
    Register {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        select: SelectArgs,
        /// Trained checkpoint (required unless set in the config)
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Sliding-window stride (default: 16)
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Register samples with the node-based correlation baseline
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        select: SelectArgs,
        /// Node spacing in voxels (default: 16)
        #[arg(long)]
        node_spacing: Option<usize>,
        /// Correlation window half-size (default: 10)
        #[arg(long)]
        window_halfsize: Option<usize>,
        /// Search radius per pyramid level (default: 4)
        #[arg(long)]
        search_radius: Option<usize>,
        /// Pyramid levels (default: 2)
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Score registrations: Dice, difference maps, endpoint error, slice images
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        select: SelectArgs,
        /// Which registration to score (default: both)
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Fixed (CAD) volume; with --moving, --moved and --disp scores files directly
        #[arg(long, value_name = "FILE", requires_all = ["moving", "moved", "disp"])]
        fixed: Option<PathBuf>,
        /// Moving (XCT) volume before registration (default: unset)
        #[arg(long, value_name = "FILE")]
        moving: Option<PathBuf>,
        /// Registered volume (default: unset)
        #[arg(long, value_name = "FILE")]
        moved: Option<PathBuf>,
        /// Displacement field (default: unset)
        #[arg(long, value_name = "FILE")]
        disp: Option<PathBuf>,
        /// Ground-truth field for endpoint error (default: unset)
        #[arg(long, value_name = "FILE")]
        gt: Option<PathBuf>,
        /// Report path in direct mode (default: <workspace>/reports/report.json)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Skip slice image export (default: off)
        #[arg(long)]
        no_images: bool,
    },
    /// Describe a VVOL volume, checkpoint, manifest or report
    Info {
        /// File to inspect
        path: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = &common.workspace {
        cfg.paths.workspace = w.clone();
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    cfg.apply_seed();
    Ok(cfg)
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError>
where
    T: Send,
{
    match threads {
        Some(0) => Err(CliError::Validation("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    if let Command::Info { path } = &command {
        return cmd_info(path).map(|text| print!("{text}"));
    }
    let (stage, common) = match &command {
        Command::Generate { common, .. } => ("generate", common),
        Command::Preprocess { common, .. } => ("preprocess", common),
        Command::Train { common, .. } => ("train", common),
        Command::Register { common, .. } => ("register", common),
        Command::Baseline { common, .. } => ("baseline", common),
        Command::Evaluate { common, .. } => ("evaluate", common),
        Command::Info { .. } => unreachable!(),
    };
    let mut cfg = load_config(common)?;
    let threads = common.threads;
    let start = Instant::now();
    let outcome = apply_flags(&command, &mut cfg).and_then(|()| {
        cfg.validate()?;
        with_threads(threads, || run_stage(&command, &cfg))?
    });
    let log = runlog::RunLogEntry::new(stage, &cfg, start.elapsed().as_secs_f64(), &outcome);
    if let Err(e) = runlog::append(&cfg.paths.workspace, &log) {
        eprintln!("warning: run log not written: {e}");
    }
    outcome.map(|_| ())
}

fn apply_flags(command: &Command, cfg: &mut RunConfig) -> Result<(), CliError> {
    match command {
        Command::Generate {
            c_values,
            grid,
            voxel_size_um,
            ..
        } => {
            if let Some(c) = c_values {
                cfg.c_values = c.clone();
            }
            if let Some(g) = grid {
                cfg.phantom.grid = *g;
            }
            if let Some(v) = voxel_size_um {
                cfg.phantom.voxel_size_um = *v;
            }
        }
        Command::Preprocess {
            manifest, target_dims, ..
        } => {
            if manifest.is_some() {
                cfg.paths.manifest = manifest.clone();
            }
            if let Some(t) = target_dims {
                cfg.target_dims = Some(voxcorr::Dims::new(t[0], t[1], t[2]));
            }
        }
        Command::Train {
            manifest,
            checkpoint,
            epochs,
            steps_per_epoch,
            batch_size,
            lr,
            patch_size,
            ..
        } => {
            if manifest.is_some() {
                cfg.paths.manifest = manifest.clone();
            }
            if checkpoint.is_some() {
                cfg.paths.checkpoint = checkpoint.clone();
            }
            if let Some(v) = epochs {
                cfg.train.epochs = *v;
            }
            if let Some(v) = steps_per_epoch {
                cfg.train.steps_per_epoch = *v;
            }
            if let Some(v) = batch_size {
                cfg.train.batch_size = *v;
            }
            if let Some(v) = lr {
                cfg.train.lr = *v;
            }
            if let Some(v) = patch_size {
                cfg.model.patch_size = *v;
            }
        }
        Command::Register {
            select,
            checkpoint,
            stride,
            ..
        } => {
            if select.manifest.is_some() {
                cfg.paths.manifest = select.manifest.clone();
            }
            if checkpoint.is_some() {
                cfg.paths.checkpoint = checkpoint.clone();
            }
            if cfg.paths.checkpoint.is_none() {
                return Err(CliError::Validation(
                    "register needs a trained model: pass --checkpoint <FILE> or set paths.checkpoint in the config"
                        .into(),
                ));
            }
            if let Some(s) = stride {
                cfg.infer.stride = *s;
            }
        }
        Command::Baseline {
            select,
            node_spacing,
            window_halfsize,
            search_radius,
            levels,
            ..
        } => {
            if select.manifest.is_some() {
                cfg.paths.manifest = select.manifest.clone();
            }
            if let Some(v) = node_spacing {
                cfg.dvc.node_spacing = *v;
            }
            if let Some(v) = window_halfsize {
                cfg.dvc.window_halfsize = *v;
            }
            if let Some(v) = search_radius {
                cfg.dvc.search_radius = *v;
            }
            if let Some(v) = levels {
                cfg.dvc.pyramid_levels = *v;
            }
        }
        Command::Evaluate { select, .. } => {
            if select.manifest.is_some() {
                cfg.paths.manifest = select.manifest.clone();
            }
        }
        Command::Info { .. } => {}
    }
    Ok(())
}

fn selection(select: &SelectArgs) -> Selection {
    match (&select.sample, select.all) {
        (Some(id), _) => Selection::One(id.clone()),
        (None, true) => Selection::All,
        (None, false) => Selection::TestSplit,
    }
}

fn run_stage(command: &Command, cfg: &RunConfig) -> Result<(), CliError> {
    match command {
        Command::Generate { .. } => {
            for s in cmd_generate(cfg)? {
                println!("{}", s.summary());
            }
        }
        Command::Preprocess { .. } => {
            let m = cmd_preprocess(cfg)?;
            println!(
                "{} samples ({} train, {} val, {} test) at {} -> {}",
                m.samples.len(),
                m.count(voxcorr::preprocess::Split::Train),
                m.count(voxcorr::preprocess::Split::Val),
                m.count(voxcorr::preprocess::Split::Test),
                m.target_dims,
                cfg.manifest_path().display()
            );
        }
        Command::Train { .. } => {
            let history = cmd_train(cfg, |log| {
                println!(
                    "epoch {:>4}  train {:+.5}  val {:+.5}  lr {:.2e}  {:.1}s",
                    log.epoch + 1,
                    log.train_loss,
                    log.val_loss,
                    log.lr,
                    log.wall_time
                );
            })?;
            println!(
                "trained {} epochs, final val loss {:+.5} -> {}",
                history.epochs(),
                history.val_loss.last().copied().unwrap_or(history.initial_val_loss),
                cfg.checkpoint_path().display()
            );
        }
        Command::Register { select, .. } => {
            for (id, secs) in cmd_register(cfg, &selection(select))? {
                println!("{id}: registered in {secs:.2}s");
            }
        }
        Command::Baseline { select, .. } => {
            for (id, secs, valid, total) in cmd_baseline(cfg, &selection(select))? {
                println!("{id}: baseline in {secs:.2}s, {valid}/{total} nodes valid");
            }
        }
        Command::Evaluate {
            select,
            method,
            fixed,
            moving,
            moved,
            disp,
            gt,
            out,
            no_images,
            ..
        } => {
            let target = match fixed {
                Some(f) => EvaluateTarget::Files {
                    fixed: f.clone(),
                    moving: moving.clone().unwrap_or_default(),
                    moved: moved.clone().unwrap_or_default(),
                    disp: disp.clone().unwrap_or_default(),
                    gt: gt.clone(),
                    out: out.clone(),
                    method: match method {
                        Some(MethodArg::Baseline) => voxcorr::metrics::Method::Baseline,
                        _ => voxcorr::metrics::Method::Learned,
                    },
                },
                None => EvaluateTarget::Workspace {
                    selection: selection(select),
                    learned: !matches!(method, Some(MethodArg::Baseline)),
                    baseline: !matches!(method, Some(MethodArg::Learned)),
                },
            };
            let reports = cmd_evaluate(cfg, &target, !no_images)?;
            print!("{}", voxcorr::metrics::render_table(&reports));
        }
        Command::Info { .. } => unreachable!(),
    }
    Ok(())
}
