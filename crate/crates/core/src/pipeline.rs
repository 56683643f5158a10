//! End-to-end flow: background removal, prompts, segmentation, binarization,
//! toolpath planning, G-code emission and simulated verification.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{grade_region, Grade};
use crate::gcode::{
    black_pixels, emit_gcode, optimize_travel, parse_gcode, plan_toolpath, simulate_toolpath, GcodeProgram,
    MachineConfig, SimulationReport, Toolpath,
};
use crate::imaging::{remove_background, BackgroundModel, BinaryMask, RasterImage};
use crate::prompts::{build_prompt_set, merge_custom_prompts, PromptGridConfig, PromptPoint, PromptSet, PromptSpec};
use crate::segmentation::{
    binarize, segment, BackendConfig, SegmentationResult, ThresholdInfo, DEFAULT_ACCEPT_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub background: BackgroundModel,
    pub grid: PromptGridConfig,
    pub backend: BackendConfig,
    pub accept_threshold: f64,
    /// Required for G-code output; there is no default scale.
    pub machine: Option<MachineConfig>,
    pub optimize_travel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            background: BackgroundModel::default(),
            grid: PromptGridConfig::default(),
            backend: BackendConfig::default(),
            accept_threshold: DEFAULT_ACCEPT_THRESHOLD,
            machine: None,
            optimize_travel: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.background.validate()?;
        self.grid.validate()?;
        self.backend.validate()?;
        if !(0.0..=1.0).contains(&self.accept_threshold) {
            return Err(Error::InvalidConfig(format!(
                "accept threshold {} outside [0, 1]",
                self.accept_threshold
            )));
        }
        if let Some(m) = &self.machine {
            m.validate()?;
        }
        Ok(())
    }

    pub fn machine(&self) -> Result<&MachineConfig> {
        self.machine
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("machine.mm_per_pixel is required to generate G-code".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Background,
    Prompts,
    Segment,
    Binarize,
    Plan,
    Emit,
    Parse,
    Simulate,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub fn custom_points(img: &RasterImage, specs: &[PromptSpec], patch_size: u32) -> Result<Vec<PromptPoint>> {
    specs.iter().map(|s| PromptPoint::sample(img, s.x, s.y, s.label, patch_size)).collect()
}

#[derive(Debug, Clone)]
pub struct SegmentStage {
    pub fg_mask: BinaryMask,
    pub prompts: PromptSet,
    pub result: SegmentationResult,
}

impl SegmentStage {
    /// Pixels the machine must leave alone: the retained region plus the
    /// background, which is work surface rather than wood. Only foreground
    /// pixels outside the final mask are carved.
    pub fn uncut_mask(&self) -> BinaryMask {
        let mut keep = self.result.final_mask.clone();
        let background = BinaryMask::from_fn(keep.width(), keep.height(), |x, y| !self.fg_mask.get(x, y));
        keep.union_with(&background);
        keep
    }
}

/// Background removal, prompt grid (+ operator prompts) and segmentation.
pub fn segment_image(
    img: &RasterImage,
    cfg: &PipelineConfig,
    custom: &[PromptSpec],
) -> std::result::Result<SegmentStage, StageError> {
    cfg.validate().stage(Stage::Config)?;
    let fg_mask = remove_background(img, &cfg.background).stage(Stage::Background)?;
    let base = build_prompt_set(img, &cfg.grid, &fg_mask).stage(Stage::Prompts)?;
    let points = custom_points(img, custom, cfg.grid.patch_size).stage(Stage::Prompts)?;
    let prompts = merge_custom_prompts(&base, &points, img.width(), img.height()).stage(Stage::Prompts)?;
    let result = segment(img, &fg_mask, &prompts, &cfg.backend, cfg.accept_threshold).stage(Stage::Segment)?;
    Ok(SegmentStage { fg_mask, prompts, result })
}

#[derive(Debug, Clone)]
pub struct CompiledProgram {
    pub binary: RasterImage,
    pub toolpath: Toolpath,
    pub program: GcodeProgram,
    pub text: String,
    pub simulation: SimulationReport,
    /// Black pixels of the binary image, i.e. the cells that should be removed.
    pub expected_removal: BinaryMask,
    pub verified: bool,
}

/// Binarize, plan, emit, then re-parse the emitted text and simulate it.
pub fn compile_mask(
    mask: &BinaryMask,
    machine: &MachineConfig,
    optimize: bool,
) -> std::result::Result<CompiledProgram, StageError> {
    let binary = binarize(mask);
    let expected_removal = black_pixels(&binary).stage(Stage::Binarize)?;
    let planned = plan_toolpath(&binary, machine).stage(Stage::Plan)?;
    let toolpath = if optimize { optimize_travel(&planned) } else { planned };
    let program = emit_gcode(&toolpath);
    let text = program.to_text();
    let reparsed = parse_gcode(&text).map_err(Error::from).stage(Stage::Emit)?;
    let simulation = simulate_toolpath(&reparsed, machine, binary.width(), binary.height())
        .map_err(Error::from)
        .stage(Stage::Simulate)?;
    let verified = simulation.removal.matches(&expected_removal);
    Ok(CompiledProgram { binary, toolpath, program, text, simulation, expected_removal, verified })
}

/// Machine-readable run summary (`report.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub width: u32,
    pub height: u32,
    pub backend: String,
    pub foreground_pixels: usize,
    pub prompts_generated: usize,
    pub prompts_kept: usize,
    pub custom_prompts: usize,
    pub proposal_scores: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdInfo>,
    pub retained_pixels: usize,
    pub cut_segments: usize,
    pub cut_length_mm: f64,
    pub rapid_length_mm: f64,
    pub removed_cells: usize,
    pub verified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grade: Option<Grade>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub segmentation: SegmentStage,
    pub compiled: CompiledProgram,
    pub summary: PipelineSummary,
}

impl PipelineOutput {
    pub fn final_mask(&self) -> &BinaryMask {
        &self.segmentation.result.final_mask
    }
}

pub fn run_pipeline(
    img: &RasterImage,
    cfg: &PipelineConfig,
    custom: &[PromptSpec],
) -> std::result::Result<PipelineOutput, StageError> {
    let machine = *cfg.machine().stage(Stage::Config)?;
    let seg = segment_image(img, cfg, custom)?;
    let compiled = compile_mask(&seg.uncut_mask(), &machine, cfg.optimize_travel)?;
    let mut warnings = seg.result.warnings.clone();
    warnings.extend(compiled.simulation.warnings.iter().cloned());
    let final_mask = &seg.result.final_mask;
    let summary = PipelineSummary {
        width: img.width(),
        height: img.height(),
        backend: cfg.backend.id().to_string(),
        foreground_pixels: seg.fg_mask.count(),
        prompts_generated: seg.prompts.generated_count(),
        prompts_kept: seg.prompts.kept().len(),
        custom_prompts: seg.prompts.custom().len(),
        proposal_scores: seg.result.scores(),
        threshold: seg.result.threshold,
        retained_pixels: final_mask.count(),
        cut_segments: compiled.toolpath.cut_count(),
        cut_length_mm: compiled.toolpath.cut_length(),
        rapid_length_mm: compiled.toolpath.rapid_length(),
        removed_cells: compiled.simulation.removal.count(),
        verified: compiled.verified,
        grade: grade_region(img, final_mask).ok(),
        warnings,
    };
    Ok(PipelineOutput { segmentation: seg, compiled, summary })
}
