use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "resincarve", version, about = "Segment resin regions in wood cross-sections and compile them to CNC G-code")]
pub struct Cli {
    /// Print machine-readable JSON on stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    /// Pipeline config file (TOML, or JSON when the extension is .json).
    /// Flags override values from the file.
    #[arg(long, short = 'c', global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Remove the background, place prompts and segment; writes the binarized mask.
    Segment(SegmentCmd),
    /// Normalize a mask image to exact black/white (white = retained).
    Binarize(BinarizeCmd),
    /// Plan a raster toolpath for a binary image and write G-code.
    Gcode(GcodeCmd),
    /// Replay G-code and report which cells it removes.
    Simulate(SimulateCmd),
    /// Parse G-code and print its canonical form.
    Parse(ParseCmd),
    /// Score predicted masks against a dataset manifest.
    Evaluate(EvaluateCmd),
    /// Grade a resin region by colour.
    Grade(GradeCmd),
    /// Run every stage: mask.png, binary.png, out.gcode and report.json.
    Pipeline(PipelineCmd),
    /// Start the HTTP session service.
    Serve(ServeCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Threshold,
    RegionGrow,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConnectivityArg {
    Four,
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DedupArg {
    Greedy,
    Centroid,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SegmentFlags {
    /// Chroma-key background colour as R,G,B.
    #[arg(long, value_name = "R,G,B", value_parser = parse_rgb, conflicts_with = "corner_sample", help_heading = "Background")]
    pub chroma_key: Option<[u8; 3]>,
    /// Use the mean of the four corner pixels as the background colour.
    #[arg(long, help_heading = "Background")]
    pub corner_sample: bool,
    /// RGB distance at or below which a pixel is background.
    #[arg(long, value_name = "DIST", help_heading = "Background")]
    pub tolerance: Option<f64>,

    #[arg(long, help_heading = "Prompts")]
    pub grid_rows: Option<u32>,
    #[arg(long, help_heading = "Prompts")]
    pub grid_cols: Option<u32>,
    /// Odd patch size for prompt descriptors.
    #[arg(long, help_heading = "Prompts")]
    pub patch_size: Option<u32>,
    /// Descriptor distance at or below which a grid prompt is a duplicate.
    #[arg(long, help_heading = "Prompts")]
    pub dedup_threshold: Option<f64>,
    #[arg(long, value_enum, help_heading = "Prompts")]
    pub dedup_mode: Option<DedupArg>,
    /// Operator prompts: JSON list of {"x","y","label":"fg"|"bg"}.
    #[arg(long, value_name = "FILE", help_heading = "Prompts")]
    pub prompts: Option<PathBuf>,

    #[arg(long, value_enum, help_heading = "Segmentation")]
    pub backend: Option<BackendKind>,
    /// Luma threshold for the threshold backend: `otsu` or 0..=255.
    #[arg(long, value_name = "otsu|T", value_parser = parse_threshold, help_heading = "Segmentation")]
    pub threshold: Option<ThresholdArg>,
    /// Colour tolerance for the region-grow backend.
    #[arg(long, help_heading = "Segmentation")]
    pub color_tol: Option<f64>,
    #[arg(long, value_enum, help_heading = "Segmentation")]
    pub connectivity: Option<ConnectivityArg>,
    /// Worker executable for the external backend.
    #[arg(long, value_name = "CMD", help_heading = "Segmentation")]
    pub worker: Option<PathBuf>,
    #[arg(long, value_name = "DIR", help_heading = "Segmentation")]
    pub exchange_dir: Option<PathBuf>,
    /// External worker timeout in seconds.
    #[arg(long, help_heading = "Segmentation")]
    pub timeout: Option<f64>,
    /// Minimum proposal confidence merged into the final mask.
    #[arg(long, help_heading = "Segmentation")]
    pub accept_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdArg {
    Otsu,
    Fixed(u8),
}

#[derive(Debug, Clone, Default, Args)]
pub struct MachineFlags {
    /// Millimetres per pixel (required unless set in the config file).
    #[arg(long, help_heading = "Machine")]
    pub mm_per_pixel: Option<f64>,
    #[arg(long, help_heading = "Machine")]
    pub safe_z: Option<f64>,
    #[arg(long, allow_hyphen_values = true, help_heading = "Machine")]
    pub cut_z: Option<f64>,
    #[arg(long, help_heading = "Machine")]
    pub feed_rate: Option<f64>,
    #[arg(long, help_heading = "Machine")]
    pub plunge_rate: Option<f64>,
    #[arg(long, help_heading = "Machine")]
    pub spindle_rpm: Option<u32>,
    /// Defaults to mm-per-pixel.
    #[arg(long, help_heading = "Machine")]
    pub tool_diameter: Option<f64>,
    /// Reorder cut runs to shorten rapid travel.
    #[arg(long, conflicts_with = "no_optimize", help_heading = "Machine")]
    pub optimize: bool,
    /// Keep the plain zig-zag order.
    #[arg(long, help_heading = "Machine")]
    pub no_optimize: bool,
}

#[derive(Debug, Args)]
pub struct SegmentCmd {
    #[arg(long, short)]
    pub image: PathBuf,
    /// Output path for the binarized mask PNG.
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seg: SegmentFlags,
}

#[derive(Debug, Args)]
pub struct BinarizeCmd {
    /// Mask image; pixels with luma >= 128 are retained.
    #[arg(long, short)]
    pub mask: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GcodeCmd {
    /// Binary image: black pixels are removed.
    #[arg(long, short)]
    pub binary: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub machine: MachineFlags,
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    #[arg(long, short)]
    pub gcode: PathBuf,
    /// Binary image whose black pixels the program must remove exactly.
    /// Also supplies the grid size.
    #[arg(long, short, required_unless_present_all = ["width", "height"])]
    pub reference: Option<PathBuf>,
    #[arg(long, conflicts_with = "reference", requires = "height")]
    pub width: Option<u32>,
    #[arg(long, conflicts_with = "reference", requires = "width")]
    pub height: Option<u32>,
    /// Write the removal map as a PNG (removed cells black).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub machine: MachineFlags,
}

#[derive(Debug, Args)]
pub struct ParseCmd {
    #[arg(long, short)]
    pub gcode: PathBuf,
    /// Write the canonical text here instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// Directory holding one `<id>.png` prediction per manifest entry.
    #[arg(long, short)]
    pub predictions: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradeCmd {
    #[arg(long, short)]
    pub image: PathBuf,
    /// Region mask; pixels with luma >= 128 belong to the region.
    #[arg(long, short)]
    pub mask: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineCmd {
    #[arg(long, short, required_unless_present = "batch", conflicts_with = "batch")]
    pub image: Option<PathBuf>,
    /// Run every entry of a dataset manifest; outputs go to `<out-dir>/<id>/`
    /// and ground-truth scores to `<out-dir>/evaluation.json`.
    #[arg(long, value_name = "MANIFEST")]
    pub batch: Option<PathBuf>,
    #[arg(long, short)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub seg: SegmentFlags,
    #[command(flatten)]
    pub machine: MachineFlags,
}

#[derive(Debug, Args)]
pub struct ServeCmd {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Persist sessions here and reload them on start.
    #[arg(long, value_name = "DIR")]
    pub sessions_dir: Option<PathBuf>,
    /// Serve static files (the web UI) from this directory.
    #[arg(long, value_name = "DIR")]
    pub static_dir: Option<PathBuf>,
    #[command(flatten)]
    pub seg: SegmentFlags,
}

fn parse_rgb(s: &str) -> Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected R,G,B, got `{s}`"));
    }
    let mut out = [0u8; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| format!("`{p}` is not a value in 0..=255"))?;
    }
    Ok(out)
}

fn parse_threshold(s: &str) -> Result<ThresholdArg, String> {
    if s.eq_ignore_ascii_case("otsu") {
        return Ok(ThresholdArg::Otsu);
    }
    s.parse().map(ThresholdArg::Fixed).map_err(|_| format!("expected `otsu` or 0..=255, got `{s}`"))
}
