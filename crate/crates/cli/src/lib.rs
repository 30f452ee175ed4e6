//! `shipdet` command-line front-end. Every subcommand builds a [`Report`]
//! that is printed either as aligned tables or as JSON lines.
//!
//! Exit codes: 0 on success, 1 on bad input (flags, files, values), 2 when a
//! result violates an internal invariant.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shipdet::metrics::RegionSpec;

mod commands;
pub mod gradcheck;
mod report;

pub use report::{Report, Table};

#[derive(Debug, Parser)]
#[command(name = "shipdet", version, about = "Oriented-box geometry, fusion and evaluation for SAR ship detection")]
struct Cli {
    /// Report style on stdout.
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Jsonl,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pairwise rotated IoU per image.
    Iou(IouArgs),
    /// Suppress or fuse overlapping predictions.
    Fuse(FuseArgs),
    /// Rasterize the rotated Gaussian mask of one or more boxes.
    Gaussmask(GaussArgs),
    /// Extract oriented boxes from a probability grid.
    Mask2obb(Mask2ObbArgs),
    /// Precision, recall, F1 and AP of predictions against ground truth.
    Eval(EvalArgs),
    /// ENL and EPD-ROA of a denoised image over regions.
    DespeckleEval(DespeckleArgs),
    /// Multiply a clean scene by seeded gamma speckle.
    SpeckleSim(SpeckleArgs),
    /// Loss values and analytic vs finite-difference gradients.
    LossCheck(LossArgs),
}

#[derive(Debug, Args)]
struct IouArgs {
    /// Detection records.
    file: PathBuf,
    /// Second record file; pairs every box of `file` with every box here.
    #[arg(long)]
    against: Option<PathBuf>,
    /// Records are ground truth (no `score` field).
    #[arg(long)]
    ground_truth: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Nms,
    Softnms,
    Wrbf,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Detection-branch predictions.
    #[arg(long)]
    det: PathBuf,
    /// Segmentation-branch predictions.
    #[arg(long)]
    seg: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Wrbf)]
    method: Method,
    #[arg(long, default_value_t = 0.5)]
    iou_thr: f64,
    /// Soft-NMS drops boxes whose decayed score falls below this.
    #[arg(long, default_value_t = 0.001)]
    score_floor: f64,
    /// Write the output records here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Pairing {
    /// `w` scales the long-axis direction.
    Literal,
    /// `h` scales the long-axis direction.
    LongAxis,
}

#[derive(Debug, Args)]
struct GaussArgs {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, allow_hyphen_values = true)]
    cx: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    cy: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta_deg: Option<f64>,
    /// Ground-truth records; the masks of one image are combined by maximum.
    #[arg(long, conflicts_with_all = ["cx", "cy", "h", "w", "theta_deg"], requires = "image_id")]
    boxes: Option<PathBuf>,
    #[arg(long)]
    image_id: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    lambda_w: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_h: f64,
    #[arg(long, value_enum, default_value_t = Pairing::Literal)]
    pairing: Pairing,
    /// Output grid (F32GRID).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Mask2ObbArgs {
    /// Probability grid (F32GRID or 8-bit PGM).
    grid: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Components with fewer pixels are dropped.
    #[arg(long, default_value_t = 0.0)]
    min_area: f64,
    #[arg(long, default_value = "image")]
    image_id: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = shipdet::metrics::IOU_THR)]
    iou_thr: f64,
    #[arg(long, default_value_t = shipdet::metrics::IOU_THR_HIGH)]
    iou_thr_high: f64,
    /// Also emit every precision-recall point as a record.
    #[arg(long)]
    pr_points: bool,
}

#[derive(Debug, Args)]
struct DespeckleArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    denoised: PathBuf,
    /// Half-open window `x0,y0,x1,y1`; repeatable. Defaults to the whole image.
    #[arg(long, value_parser = parse_region)]
    region: Vec<RegionSpec>,
}

#[derive(Debug, Args)]
struct SpeckleArgs {
    /// Clean scene; without it a constant scene is generated.
    #[arg(long, conflicts_with_all = ["width", "height", "value"])]
    clean: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 1.0)]
    value: f64,
    #[arg(long, default_value_t = 4)]
    looks: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Speckled grid (F32GRID).
    #[arg(long)]
    out: PathBuf,
    /// Also write the clean scene, giving a (clean, speckled) pair.
    #[arg(long)]
    clean_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.5)]
    r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample points per loss term.
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// Allowed relative gradient error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn parse_region(s: &str) -> std::result::Result<RegionSpec, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [x0, y0, x1, y1] if x0 < x1 && y0 < y1 => Ok(RegionSpec::new(x0, y0, x1, y1)),
        [_, _, _, _] => Err(format!("region `{s}` is empty")),
        _ => Err(format!("region `{s}` needs four comma-separated values")),
    }
}

/// Why a subcommand failed.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable files or invalid values.
    Input(anyhow::Error),
    /// A computed result broke an invariant the toolkit guarantees.
    Invariant(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 1,
            Failure::Invariant(_) => 2,
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and writes its
/// report to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let sink: &mut dyn Write = if informational { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return if informational { 0 } else { 1 };
        }
    };
    let result = match cli.command {
        Command::Iou(a) => commands::iou(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Gaussmask(a) => commands::gaussmask(a),
        Command::Mask2obb(a) => commands::mask2obb(a),
        Command::Eval(a) => commands::eval(a),
        Command::DespeckleEval(a) => commands::despeckle_eval(a),
        Command::SpeckleSim(a) => commands::speckle_sim(a),
        Command::LossCheck(a) => commands::loss_check(a),
    };
    let (report, failure) = match result {
        Ok(report) => (Some(report), None),
        Err(commands::Outcome { report, failure }) => (report, Some(failure)),
    };
    if let Some(report) = report {
        let written = match cli.format {
            Format::Table => report.write_tables(out),
            Format::Jsonl => report.write_records(out),
        };
        if let Err(e) = written {
            let _ = writeln!(err, "error: writing report: {e}");
            return 1;
        }
    }
    match failure {
        None => 0,
        Some(f) => {
            let _ = match &f {
                Failure::Input(e) => writeln!(err, "error: {e:#}"),
                Failure::Invariant(msg) => writeln!(err, "internal invariant violated: {msg}"),
            };
            f.exit_code()
        }
    }
}
