use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ingest::Format;
use crate::io::parse_dims;

#[derive(Debug, Parser)]
#[command(name = "corrfuse", version, about = "Fused SD/DINO feature correspondence")]
pub struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true, value_parser = parse_jobs)]
    pub jobs: Option<usize>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ensemble SD layers, align DINO maps and write fused FMAPs per pair.
    Fuse(FuseArgs),
    /// Sparse keypoint transfer (MatchSet JSON) or dense flow (SFLW).
    Match(MatchArgs),
    /// Evaluation reports as JSON on stdout.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// k-means part clusters, optionally matched across a pair.
    Cluster(ClusterArgs),
    /// Pixel-level instance swap.
    Swap(SwapArgs),
    /// PNG renderings.
    #[command(subcommand)]
    Viz(VizCmd),
    /// Normalize dataset annotations into PairAnnotation JSON.
    Ingest(IngestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Exact,
    Randomized,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Bbox,
    Image,
}

fn parse_alpha(s: &str) -> Result<f32, String> {
    let a: f32 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if (0.0..=1.0).contains(&a) {
        Ok(a)
    } else {
        Err(format!("alpha must be in [0, 1], got {a}"))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

fn parse_jobs(s: &str) -> Result<usize, String> {
    parse_positive(s)
}

fn parse_kappa(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(k) if k > 0.0 && k.is_finite() => Ok(k),
        _ => Err(format!("kappa must be a positive number, got {s:?}")),
    }
}

/// Comma-separated correctness flags.
#[derive(Debug, Clone)]
pub struct Flags(pub Vec<bool>);

fn parse_flags(s: &str) -> Result<Flags, String> {
    s.split(',')
        .map(|t| match t.trim() {
            "1" | "T" | "t" | "true" => Ok(true),
            "0" | "F" | "f" | "false" => Ok(false),
            other => Err(format!("expected 1/0 or T/F, got {other:?}")),
        })
        .collect::<Result<_, _>>()
        .map(Flags)
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; gets `<pair_id>.{src,tgt}.fused.fmap`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = parse_alpha)]
    pub alpha: f32,
    #[arg(long, default_value_t = 256, value_parser = parse_positive)]
    pub pca_dim: usize,
    /// Common grid, HxW.
    #[arg(long, default_value = "60x60", value_parser = parse_dims)]
    pub target: (usize, usize),
    #[arg(long, value_enum, default_value_t = MethodArg::Randomized)]
    pub method: MethodArg,
    #[arg(long, default_value_t = corrfuse::pca::DEFAULT_OVERSAMPLE)]
    pub oversample: usize,
    #[arg(long, default_value_t = corrfuse::pca::DEFAULT_POWER_ITERS)]
    pub power_iters: usize,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long, required_unless_present = "manifest", requires = "tgt")]
    pub src: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest", requires = "src")]
    pub tgt: Option<PathBuf>,
    /// Match every pair of a manifest; masks and annotations come from it.
    #[arg(long, requires = "features", conflicts_with_all = ["src", "tgt", "annotation", "pair_id", "src_mask", "tgt_mask"])]
    pub manifest: Option<PathBuf>,
    /// Directory holding `<pair_id>.{src,tgt}.fused.fmap` (manifest mode).
    #[arg(long, requires = "manifest")]
    pub features: Option<PathBuf>,
    /// Dense flow instead of keypoint transfer.
    #[arg(long, conflicts_with_all = ["annotation", "pair_id"])]
    pub dense: bool,
    /// Annotation file whose source keypoints are transferred.
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    /// Which record to use when the annotation file holds several.
    #[arg(long)]
    pub pair_id: Option<String>,
    /// MatchSet JSON (stdout when omitted) or SFLW file with --dense; a
    /// directory in manifest mode.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub src_mask: Option<PathBuf>,
    #[arg(long)]
    pub tgt_mask: Option<PathBuf>,
    /// Flow grid, HxW (default: the source grid).
    #[arg(long, value_parser = parse_dims, requires = "dense")]
    pub out_dims: Option<(usize, usize)>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// PCK over one or more match sets.
    Pck(PckArgs),
    /// Mean L1 forward difference of a flow field.
    Smoothness(SmoothnessArgs),
    /// Joint correct/incorrect distribution of two feature types.
    Outcomes(OutcomesArgs),
}

#[derive(Debug, Args)]
pub struct PckArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub matches: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub annotations: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.10, 0.15], value_parser = parse_kappa)]
    pub kappa: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Bbox)]
    pub mode: ModeArg,
    /// Also write per-category PCK as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SmoothnessArgs {
    #[arg(long)]
    pub flow: PathBuf,
}

#[derive(Debug, Args)]
pub struct OutcomesArgs {
    /// Match sets of feature type A.
    #[arg(long, num_args = 1..)]
    pub a: Vec<PathBuf>,
    /// Match sets of feature type B.
    #[arg(long, num_args = 1..)]
    pub b: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub annotations: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.10, value_parser = parse_kappa)]
    pub kappa: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Bbox)]
    pub mode: ModeArg,
    /// Precomputed correctness flags for A, e.g. `1,1,0,0`.
    #[arg(long, value_parser = parse_flags, conflicts_with_all = ["a", "b", "annotations"])]
    pub flags_a: Option<Flags>,
    #[arg(long, value_parser = parse_flags, conflicts_with_all = ["a", "b", "annotations"])]
    pub flags_b: Option<Flags>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub fmap: PathBuf,
    /// Second map; its clusters are matched to the first.
    #[arg(long)]
    pub tgt_fmap: Option<PathBuf>,
    #[arg(short, long, value_parser = parse_positive)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SwapArgs {
    #[arg(long)]
    pub src_img: PathBuf,
    #[arg(long)]
    pub tgt_img: PathBuf,
    #[arg(long)]
    pub src_fmap: PathBuf,
    #[arg(long)]
    pub tgt_fmap: PathBuf,
    #[arg(long)]
    pub src_mask: PathBuf,
    #[arg(long)]
    pub tgt_mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum VizCmd {
    /// Joint PCA-RGB rendering of a feature pair.
    Pca(VizPcaArgs),
    /// Flow field coloring.
    Flow(VizFlowArgs),
}

#[derive(Debug, Args)]
pub struct VizPcaArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub src_mask: Option<PathBuf>,
    #[arg(long)]
    pub tgt_mask: Option<PathBuf>,
    #[arg(long)]
    pub out_src: PathBuf,
    #[arg(long)]
    pub out_tgt: PathBuf,
    /// Output size, HxW (default: one pixel per cell).
    #[arg(long, value_parser = parse_dims)]
    pub out_dims: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct VizFlowArgs {
    #[arg(long)]
    pub flow: PathBuf,
    /// Background region to tint.
    #[arg(long)]
    pub bg_mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_dims)]
    pub out_dims: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_parser = clap::value_parser!(Format))]
    pub format: Format,
    /// A JSON file or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
