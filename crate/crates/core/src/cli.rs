//! Command-line front end.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::ablation::{run_ablation, BaselineSettings};
use crate::bench::metrics::PelvisMode;
use crate::bench::report::evaluation_report;
use crate::bench::synth::{
    generate_samples, read_samples_jsonl, write_samples_jsonl, GenerateConfig, PerturbConfig,
    SyntheticSample,
};
use crate::error::{KitroError, Result};
use crate::refiner::{
    refine_batch, BatchSummary, IterationCurves, RefineConfig, RefineJob, RefinementTrace,
    SelectionMode,
};
use crate::skeleton::{BodyState, SkeletonModel, StateRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "kitro",
    version,
    about = "Refine 3D body pose, shape and camera translation from 2D keypoints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic sample set as JSON Lines.
    Generate(GenerateArgs),
    /// Refine every sample's initialization.
    Refine(RefineArgs),
    /// Score refined states against ground truth.
    Eval(EvalArgs),
    /// Run the stage and selection ablation grid.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Skeleton definition (JSON); the built-in canonical skeleton otherwise.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(short = 'n', long = "count")]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of the 2D keypoint noise, pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise2d: f64,
    #[arg(long, default_value_t = 10.0)]
    pub rot_sigma_deg: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta_sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub trans_sigma_m: f64,
    #[arg(long, default_value_t = 60.0)]
    pub joint_limit_deg: f64,
    /// Image height and width in pixels.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [1080.0, 1920.0])]
    pub image_size: Vec<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Refinement settings. Flags override the config file, which overrides
/// the defaults.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// JSON file with refinement settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub shape_steps: Option<usize>,
    #[arg(long)]
    pub shape_lr: Option<f64>,
    #[arg(long)]
    pub no_camera: bool,
    #[arg(long)]
    pub no_shape: bool,
    #[arg(long)]
    pub no_pose: bool,
    /// Move every bone fully onto its selected candidate.
    #[arg(long)]
    pub hard_update: bool,
    /// Choose each bone's branch from its local weight.
    #[arg(long)]
    pub greedy: bool,
    /// Keep shape optimizer moments across iterations.
    #[arg(long)]
    pub adam_carry: bool,
    #[arg(long)]
    pub focal_override: Option<f64>,
    /// Include per-tree weights and selections in the trace.
    #[arg(long)]
    pub dump_trees: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RefineConfig> {
        let mut cfg = match &self.config {
            Some(path) => serde_json::from_str(&read_text(path)?)
                .map_err(|e| KitroError::Format(format!("{}: {e}", path.display())))?,
            None => RefineConfig::default(),
        };
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.shape_steps {
            cfg.shape_steps = v;
        }
        if let Some(v) = self.shape_lr {
            cfg.shape_lr = v;
        }
        if self.no_camera {
            cfg.enable_camera = false;
        }
        if self.no_shape {
            cfg.enable_shape = false;
        }
        if self.no_pose {
            cfg.enable_pose = false;
        }
        if self.hard_update {
            cfg.soft_update = false;
        }
        if self.greedy {
            cfg.selection_mode = SelectionMode::Greedy;
        }
        if self.adam_carry {
            cfg.adam_carry = true;
        }
        if self.focal_override.is_some() {
            cfg.focal_override = self.focal_override;
        }
        if self.dump_trees {
            cfg.dump_trees = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Sample file (JSON Lines).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Refined states (JSON Lines, one per sample).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Configuration, batch summary and per-sample traces (JSON).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Output of `refine`.
    #[arg(long)]
    pub results: PathBuf,
    /// Trace file of the same run, for per-iteration curves.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = PelvisMode::Joint0)]
    pub pelvis_mode: PelvisMode,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = PelvisMode::Joint0)]
    pub pelvis_mode: PelvisMode,
    /// Steps of the reprojection-descent baseline row (0 skips it).
    #[arg(long, default_value_t = 100)]
    pub baseline_steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub baseline_lr: f64,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub index: usize,
    pub seed: u64,
    pub state: StateRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub config: RefineConfig,
    pub summary: BatchSummary,
    pub traces: Vec<RefinementTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub report: crate::bench::report::EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curves: Option<IterationCurves>,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> KitroError {
    KitroError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write_text(path: &Path, text: &str, force: bool) -> Result<()> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true);
    if force {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    let mut f = opts.open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AlreadyExists {
            io_error(path, "already exists (use --force to overwrite)")
        } else {
            io_error(path, e)
        }
    })?;
    f.write_all(text.as_bytes()).map_err(|e| io_error(path, e))
}

fn check_writable(paths: &[&Path], force: bool) -> Result<()> {
    for p in paths {
        if !force && p.exists() {
            return Err(io_error(p, "already exists (use --force to overwrite)"));
        }
    }
    Ok(())
}

fn load_model(common: &CommonArgs) -> Result<SkeletonModel> {
    match &common.skeleton {
        Some(p) => SkeletonModel::load(p),
        None => Ok(SkeletonModel::canonical()),
    }
}

fn load_samples(path: &Path) -> Result<Vec<SyntheticSample>> {
    read_samples_jsonl(&read_text(path)?).map_err(|e| match e {
        KitroError::Format(m) => KitroError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| KitroError::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

fn cmd_generate(args: &GenerateArgs) -> Result<i32> {
    if args.n == 0 {
        return Err(KitroError::InvalidInput("-n must be positive".into()));
    }
    check_writable(&[&args.output], args.common.force)?;
    let model = load_model(&args.common)?;
    let cfg = GenerateConfig {
        n: args.n,
        perturb: PerturbConfig {
            rot_sigma_deg: args.rot_sigma_deg,
            beta_sigma: args.beta_sigma,
            trans_sigma_m: args.trans_sigma_m,
        },
        noise2d_px: args.noise2d,
        seed: args.seed,
        joint_limit_deg: args.joint_limit_deg,
        image_height: args.image_size[0],
        image_width: args.image_size[1],
        ..GenerateConfig::default()
    };
    let samples = generate_samples(&model, &cfg)?;
    write_text(
        &args.output,
        &write_samples_jsonl(&samples),
        args.common.force,
    )?;
    println!(
        "wrote {} samples (seed {}) to {}",
        samples.len(),
        args.seed,
        args.output.display()
    );
    Ok(EXIT_OK)
}

fn cmd_refine(args: &RefineArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    let mut outputs = vec![args.output.as_path()];
    if let Some(t) = &args.trace {
        outputs.push(t.as_path());
    }
    check_writable(&outputs, args.common.force)?;
    let model = load_model(&args.common)?;
    let samples = load_samples(&args.input)?;
    let jobs: Vec<RefineJob> = samples.iter().map(RefineJob::from_sample).collect();
    let out = refine_batch(&model, &jobs, &cfg, args.config.threads)?;

    let mut text = String::new();
    for (i, (s, r)) in samples.iter().zip(&out.results).enumerate() {
        let rec = ResultRecord {
            index: i,
            seed: s.seed,
            state: StateRecord::from_state(&r.state),
            error: r.error.as_ref().map(ToString::to_string),
        };
        text.push_str(&serde_json::to_string(&rec).expect("records serialize"));
        text.push('\n');
    }
    write_text(&args.output, &text, args.common.force)?;
    if let Some(t) = &args.trace {
        let file = TraceFile {
            config: cfg.clone(),
            summary: out.summary.clone(),
            traces: out.results.iter().map(|r| r.trace.clone()).collect(),
        };
        write_text(t, &to_json(&file), args.common.force)?;
    }
    let s = &out.summary;
    println!("refined {} samples, {} failed", s.samples, s.failures);
    if let (Some(first), Some(last)) = (s.curves.median_mpjpe.first(), s.curves.median_mpjpe.last())
    {
        println!("median MPJPE {first:.2} mm -> {last:.2} mm");
    }
    for (i, e) in &s.errors {
        eprintln!("sample {i}: {e}");
    }
    Ok(if s.failures == 0 {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    })
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    check_writable(&[&args.output], args.common.force)?;
    let model = load_model(&args.common)?;
    let samples = load_samples(&args.samples)?;
    let results = read_results(&args.results)?;
    if results.len() != samples.len() {
        return Err(KitroError::InvalidInput(format!(
            "{} samples but {} results",
            samples.len(),
            results.len()
        )));
    }
    let states: Vec<BodyState> = results
        .iter()
        .map(|r| r.state.to_state())
        .collect::<Result<_>>()?;
    let trace: Option<TraceFile> = match &args.trace {
        Some(p) => Some(
            serde_json::from_str(&read_text(p)?)
                .map_err(|e| KitroError::Format(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    let rect = trace.as_ref().and_then(|t| t.summary.rectification_rate);
    let report = evaluation_report(&model, &samples, &states, args.pelvis_mode, rect)?;
    println!(
        "{:<12} {:>10} {:>10} {:>10}",
        "joint", "init mm", "refined", "gain"
    );
    for row in &report.per_joint {
        println!(
            "{:<12} {:>10.2} {:>10.2} {:>10.2}",
            row.joint, row.init_mm, row.refined_mm, row.improvement_mm
        );
    }
    println!(
        "MPJPE {:.2} -> {:.2} mm, PA-MPJPE {:.2} -> {:.2} mm, improved {:.1}%",
        report.init.mpjpe,
        report.refined.mpjpe,
        report.init.pa_mpjpe,
        report.refined.pa_mpjpe,
        100.0 * report.refined.improvement_fraction
    );
    let output = EvalOutput {
        report,
        curves: trace.map(|t| t.summary.curves),
    };
    write_text(&args.output, &to_json(&output), args.common.force)?;
    Ok(EXIT_OK)
}

fn cmd_ablate(args: &AblateArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    check_writable(&[&args.output], args.common.force)?;
    let model = load_model(&args.common)?;
    let samples = load_samples(&args.samples)?;
    let baseline = (args.baseline_steps > 0).then_some(BaselineSettings {
        steps: args.baseline_steps,
        lr: args.baseline_lr,
    });
    let table = run_ablation(
        &model,
        &samples,
        &cfg,
        args.config.threads,
        args.pelvis_mode,
        baseline,
    )?;
    println!(
        "{:<22} {:>10} {:>10} {:>10} {:>10}",
        "configuration", "MPJPE", "median", "PA-MPJPE", "reproj px"
    );
    for r in &table.rows {
        println!(
            "{:<22} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
            r.name, r.mpjpe, r.median_mpjpe, r.pa_mpjpe, r.reproj_px
        );
    }
    write_text(&args.output, &to_json(&table), args.common.force)?;
    let failures: usize = table.rows.iter().map(|r| r.failures).sum();
    Ok(if failures == 0 { EXIT_OK } else { EXIT_PARTIAL })
}

fn exit_code_for(e: &KitroError) -> i32 {
    match e {
        KitroError::Io { .. } | KitroError::Format(_) => EXIT_IO,
        KitroError::InvalidInput(_) => EXIT_USAGE,
        _ => EXIT_PARTIAL,
    }
}

pub fn execute(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Parse `args`, set up logging from `KITRO_LOG` and run.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("KITRO_LOG", "warn"))
        .try_init();
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            }
        }
    }
}
