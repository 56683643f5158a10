use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use resincarve_core::evaluation::{evaluate_items, grade_region, region_color_stats, run_evaluation, EvalItem};
use resincarve_core::gcode::{black_pixels, parse_gcode, simulate_toolpath};
use resincarve_core::imaging::{encode_png, load_image, load_manifest, load_mask, BinaryMask};
use resincarve_core::pipeline::{compile_mask, run_pipeline, segment_image, PipelineConfig, PipelineSummary, Stage};
use resincarve_core::prompts::PromptSpec;
use resincarve_core::segmentation::binarize;
use resincarve_core::{Error, RasterImage};
use resincarve_service::{AppState, ServiceConfig, SessionStore};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::config::{self, require_machine};
use crate::report::{CliError, CoreContext, Output};

type CmdResult = Result<Output, CliError>;

/// Happens when the tool is wider than a pixel and sweeps neighbouring cells.
const UNVERIFIED: &str = "simulated removal differs from the black pixels of the binary image";

pub fn run(cli: Cli) -> CmdResult {
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::Segment(c) => segment(c, cfg_path),
        Command::Binarize(c) => binarize_cmd(c),
        Command::Gcode(c) => gcode(c, cfg_path),
        Command::Simulate(c) => simulate(c, cfg_path),
        Command::Parse(c) => parse(c),
        Command::Evaluate(c) => evaluate(c),
        Command::Grade(c) => grade(c),
        Command::Pipeline(c) => pipeline(c, cfg_path),
        Command::Serve(c) => serve(c, cfg_path),
    }
}

fn read_image(path: &Path) -> Result<RasterImage, CliError> {
    load_image(path).at(Stage::Load)
}

fn read_mask(path: &Path) -> Result<BinaryMask, CliError> {
    load_mask(path).at(Stage::Load)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::usage(Stage::Write, format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::usage(Stage::Write, format!("cannot write {}: {e}", path.display())))
}

fn write_png(path: &Path, img: &RasterImage) -> Result<(), CliError> {
    let bytes = encode_png(img).at(Stage::Write)?;
    write_bytes(path, &bytes)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report is serializable");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn segment_config(cfg_path: Option<&Path>, seg: &SegmentFlags) -> Result<PipelineConfig, CliError> {
    let mut cfg = config::base_config(cfg_path)?;
    config::apply_segment_flags(&mut cfg, seg)?;
    config::validate(&cfg)?;
    Ok(cfg)
}

fn full_config(cfg_path: Option<&Path>, seg: &SegmentFlags, machine: &MachineFlags) -> Result<PipelineConfig, CliError> {
    let mut cfg = config::base_config(cfg_path)?;
    config::apply_segment_flags(&mut cfg, seg)?;
    config::apply_machine_flags(&mut cfg, machine)?;
    require_machine(&cfg)?;
    config::validate(&cfg)?;
    Ok(cfg)
}

fn machine_config(cfg_path: Option<&Path>, machine: &MachineFlags) -> Result<PipelineConfig, CliError> {
    let mut cfg = config::base_config(cfg_path)?;
    config::apply_machine_flags(&mut cfg, machine)?;
    require_machine(&cfg)?;
    Ok(cfg)
}

fn segment(c: SegmentCmd, cfg_path: Option<&Path>) -> CmdResult {
    let cfg = segment_config(cfg_path, &c.seg)?;
    let prompts = config::load_prompts(c.seg.prompts.as_ref())?;
    let img = read_image(&c.image)?;
    let stage = segment_image(&img, &cfg, &prompts)?;
    let mask = &stage.result.final_mask;
    write_png(&c.out, &binarize(mask))?;

    let report = json!({
        "ok": true,
        "width": img.width(),
        "height": img.height(),
        "backend": cfg.backend.id(),
        "foreground_pixels": stage.fg_mask.count(),
        "prompts_generated": stage.prompts.generated_count(),
        "prompts_kept": stage.prompts.kept().len(),
        "custom_prompts": stage.prompts.custom().len(),
        "proposal_scores": stage.result.scores(),
        "threshold": stage.result.threshold,
        "retained_pixels": mask.count(),
        "warnings": stage.result.warnings,
        "mask": c.out,
    });
    let mut text = format!(
        "{}x{} image, {} foreground pixels\n{} of {} grid prompts kept, {} operator prompts\n",
        img.width(),
        img.height(),
        stage.fg_mask.count(),
        stage.prompts.kept().len(),
        stage.prompts.generated_count(),
        stage.prompts.custom().len()
    );
    if let Some(t) = stage.result.threshold {
        let _ = writeln!(text, "luma threshold {}{}", t.value, if t.otsu_fallback { " (fallback)" } else { "" });
    }
    let _ = writeln!(text, "{} proposals, {} pixels retained", stage.result.proposals.len(), mask.count());
    push_warnings(&mut text, &stage.result.warnings);
    let _ = writeln!(text, "wrote {}", c.out.display());
    Ok(Output::new(text, report))
}

fn binarize_cmd(c: BinarizeCmd) -> CmdResult {
    let mask = read_mask(&c.mask)?;
    write_png(&c.out, &binarize(&mask))?;
    let (w, h) = mask.dimensions();
    let text = format!("{w}x{h} mask, {} retained, {} removed\nwrote {}\n", mask.count(), mask.bits().len() - mask.count(), c.out.display());
    Ok(Output::new(
        text,
        json!({"ok": true, "width": w, "height": h, "retained_pixels": mask.count(), "out": c.out}),
    ))
}

#[derive(Serialize)]
struct GcodeReport {
    ok: bool,
    lines: usize,
    cut_segments: usize,
    cut_length_mm: f64,
    rapid_length_mm: f64,
    removed_cells: usize,
    expected_cells: usize,
    verified: bool,
    warnings: Vec<String>,
}

fn gcode(c: GcodeCmd, cfg_path: Option<&Path>) -> CmdResult {
    let cfg = machine_config(cfg_path, &c.machine)?;
    let machine = require_machine(&cfg)?;
    let binary = read_image(&c.binary)?;
    let black = black_pixels(&binary).at(Stage::Binarize)?;
    let retained = BinaryMask::from_fn(black.width(), black.height(), |x, y| !black.get(x, y));
    let compiled = compile_mask(&retained, &machine, cfg.optimize_travel)?;
    write_bytes(&c.out, compiled.text.as_bytes())?;
    let mut warnings = compiled.simulation.warnings.clone();
    if !compiled.verified {
        warnings.push(UNVERIFIED.into());
    }
    let report = GcodeReport {
        ok: true,
        lines: compiled.program.lines.len(),
        cut_segments: compiled.toolpath.cut_count(),
        cut_length_mm: compiled.toolpath.cut_length(),
        rapid_length_mm: compiled.toolpath.rapid_length(),
        removed_cells: compiled.simulation.removal.count(),
        expected_cells: compiled.expected_removal.count(),
        verified: compiled.verified,
        warnings,
    };
    let mut text = format!(
        "{} lines, {} cuts, cut {:.3} mm, rapid {:.3} mm\n{} cells removed{}\n",
        report.lines,
        report.cut_segments,
        report.cut_length_mm,
        report.rapid_length_mm,
        report.removed_cells,
        if report.verified { ", verified" } else { "" }
    );
    push_warnings(&mut text, &report.warnings);
    let _ = writeln!(text, "wrote {}", c.out.display());
    Ok(Output::new(text, report))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::usage(Stage::Load, format!("cannot read {}: {e}", path.display())))
}

fn simulate(c: SimulateCmd, cfg_path: Option<&Path>) -> CmdResult {
    let cfg = machine_config(cfg_path, &c.machine)?;
    let machine = require_machine(&cfg)?;
    let text = read_text(&c.gcode)?;
    let reference = match &c.reference {
        Some(p) => Some(black_pixels(&read_image(p)?).at(Stage::Binarize)?),
        None => None,
    };
    let (w, h) = match (&reference, c.width, c.height) {
        (Some(r), _, _) => r.dimensions(),
        (None, Some(w), Some(h)) => (w, h),
        _ => return Err(CliError::usage(Stage::Config, "give --reference or both --width and --height")),
    };
    let program = parse_gcode(&text).at(Stage::Parse)?;
    let sim = simulate_toolpath(&program, &machine, w, h).at(Stage::Simulate)?;
    if let Some(out) = &c.out {
        let removed = sim.removal.to_mask();
        write_png(out, &binarize(&BinaryMask::from_fn(w, h, |x, y| !removed.get(x, y))))?;
    }

    let mut report = json!({
        "ok": true,
        "width": w,
        "height": h,
        "removed_cells": sim.removal.count(),
        "cut_length_mm": sim.cut_length_mm,
        "rapid_length_mm": sim.rapid_length_mm,
        "warnings": sim.warnings,
    });
    let mut text = format!(
        "{w}x{h} grid, {} cells removed, cut {:.3} mm, rapid {:.3} mm\n",
        sim.removal.count(),
        sim.cut_length_mm,
        sim.rapid_length_mm
    );
    push_warnings(&mut text, &sim.warnings);
    if let Some(expected) = &reference {
        let removed = sim.removal.to_mask();
        let missing = expected.bits().iter().zip(removed.bits()).filter(|(e, r)| **e && !**r).count();
        let extra = expected.bits().iter().zip(removed.bits()).filter(|(e, r)| !**e && **r).count();
        if missing + extra > 0 {
            return Err(CliError::stage(
                Stage::Simulate,
                format!("removal differs from reference: {missing} cells missed, {extra} cells over-cut"),
            ));
        }
        report["matches_reference"] = json!(true);
        text.push_str("matches reference\n");
    }
    Ok(Output::new(text, report))
}

fn parse(c: ParseCmd) -> CmdResult {
    let text = read_text(&c.gcode)?;
    let program = parse_gcode(&text).at(Stage::Parse)?;
    let canonical = program.to_text();
    let report = json!({"ok": true, "lines": program.lines.len(), "canonical": canonical});
    match &c.out {
        Some(out) => {
            write_bytes(out, canonical.as_bytes())?;
            Ok(Output::new(format!("{} lines\nwrote {}\n", program.lines.len(), out.display()), report))
        }
        None => Ok(Output::new(canonical, report)),
    }
}

fn evaluate(c: EvaluateCmd) -> CmdResult {
    let manifest = load_manifest(&c.manifest).at(Stage::Load)?;
    for id in manifest.ids() {
        if !prediction_path(&c.predictions, id).is_file() {
            return Err(CliError::from_core(Stage::Load, Error::MissingPrediction(id.to_string())));
        }
    }
    let predictions = manifest
        .entries
        .par_iter()
        .map(|e| Ok((e.id.clone(), read_mask(&prediction_path(&c.predictions, &e.id))?)))
        .collect::<Result<BTreeMap<_, _>, CliError>>()?;
    let report = run_evaluation(&manifest, &predictions).at(Stage::Evaluate)?;
    if let Some(path) = &c.report {
        write_json(path, &report)?;
    }
    Ok(Output::new(report.to_table(), &report))
}

fn prediction_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.png"))
}

fn grade(c: GradeCmd) -> CmdResult {
    let img = read_image(&c.image)?;
    let mask = read_mask(&c.mask)?;
    let stats = region_color_stats(&img, &mask).at(Stage::Evaluate)?;
    let grade = grade_region(&img, &mask).at(Stage::Evaluate)?;
    let [r, g, b] = stats.mean_rgb;
    let text = format!(
        "grade {grade}\n{} pixels, mean luma {:.1}, mean RGB ({r:.1}, {g:.1}, {b:.1})\n",
        stats.pixels, stats.mean_luma
    );
    Ok(Output::new(text, json!({"ok": true, "grade": grade, "stats": stats})))
}

struct Artifacts {
    summary: PipelineSummary,
    final_mask: BinaryMask,
}

/// Runs every stage on one image and writes its four artifacts into `out_dir`.
fn run_one(image: &Path, out_dir: &Path, cfg: &PipelineConfig, prompts: &[PromptSpec]) -> Result<Artifacts, CliError> {
    let img = read_image(image)?;
    let mut out = run_pipeline(&img, cfg, prompts)?;
    if !out.compiled.verified {
        out.summary.warnings.push(UNVERIFIED.into());
    }
    write_png(&out_dir.join("mask.png"), &binarize(out.final_mask()))?;
    write_png(&out_dir.join("binary.png"), &out.compiled.binary)?;
    write_bytes(&out_dir.join("out.gcode"), out.compiled.text.as_bytes())?;
    write_json(&out_dir.join("report.json"), &out.summary)?;
    Ok(Artifacts { final_mask: out.final_mask().clone(), summary: out.summary })
}

fn summary_text(s: &PipelineSummary, out_dir: &Path) -> String {
    let mut text = format!(
        "{}x{} image, backend {}, {} of {} grid prompts kept\n{} pixels retained, {} cuts ({:.3} mm cut, {:.3} mm rapid), {} cells removed{}\n",
        s.width,
        s.height,
        s.backend,
        s.prompts_kept,
        s.prompts_generated,
        s.retained_pixels,
        s.cut_segments,
        s.cut_length_mm,
        s.rapid_length_mm,
        s.removed_cells,
        if s.verified { ", verified" } else { "" }
    );
    if let Some(g) = s.grade {
        let _ = writeln!(text, "grade {g}");
    }
    push_warnings(&mut text, &s.warnings);
    let _ = writeln!(text, "wrote {}/{{mask.png,binary.png,out.gcode,report.json}}", out_dir.display());
    text
}

fn pipeline(c: PipelineCmd, cfg_path: Option<&Path>) -> CmdResult {
    let cfg = full_config(cfg_path, &c.seg, &c.machine)?;
    let prompts = config::load_prompts(c.seg.prompts.as_ref())?;
    match (&c.image, &c.batch) {
        (Some(image), None) => {
            let a = run_one(image, &c.out_dir, &cfg, &prompts)?;
            Ok(Output::new(summary_text(&a.summary, &c.out_dir), json!({"ok": true, "summary": a.summary})))
        }
        (None, Some(manifest)) => {
            if !prompts.is_empty() {
                return Err(CliError::usage(Stage::Config, "--prompts cannot be combined with --batch"));
            }
            batch(manifest, &c.out_dir, &cfg)
        }
        _ => Err(CliError::usage(Stage::Config, "give exactly one of --image or --batch")),
    }
}

fn batch(manifest_path: &Path, out_dir: &Path, cfg: &PipelineConfig) -> CmdResult {
    let manifest = load_manifest(manifest_path).at(Stage::Load)?;
    let mut runs = manifest
        .entries
        .par_iter()
        .map(|e| {
            let dir = out_dir.join(&e.id);
            let run = run_one(&e.image_path, &dir, cfg, &[]).and_then(|a| Ok((a, read_mask(&e.mask_path)?)));
            (e.id.clone(), run)
        })
        .collect::<Vec<_>>();
    runs.sort_by(|a, b| a.0.cmp(&b.0));

    let mut items = Vec::with_capacity(runs.len());
    let mut summaries = BTreeMap::new();
    for (id, run) in runs {
        let (artifacts, truth) = run.map_err(|e| e.with_context(&format!("entry `{id}`")))?;
        items.push(EvalItem { id: id.clone(), prediction: artifacts.final_mask, truth });
        summaries.insert(id, artifacts.summary);
    }
    let report = evaluate_items(&items).at(Stage::Evaluate)?;
    write_json(&out_dir.join("evaluation.json"), &report)?;

    let mut text = String::new();
    for (id, s) in &summaries {
        let _ = writeln!(
            text,
            "{id}: {} retained, {} cuts, {} cells removed",
            s.retained_pixels, s.cut_segments, s.removed_cells
        );
    }
    text.push('\n');
    text.push_str(&report.to_table());
    let _ = writeln!(text, "wrote {}", out_dir.join("evaluation.json").display());
    Ok(Output::new(text, json!({"ok": true, "summaries": summaries, "evaluation": report})))
}

fn serve(c: ServeCmd, cfg_path: Option<&Path>) -> CmdResult {
    let defaults = segment_config(cfg_path, &c.seg)?;
    let store = match &c.sessions_dir {
        Some(dir) => {
            let (store, skipped) = SessionStore::open(dir)
                .map_err(|e| CliError::usage(Stage::Load, format!("cannot open {}: {e}", dir.display())))?;
            for (path, reason) in skipped {
                eprintln!("skipped session {}: {reason}", path.display());
            }
            store
        }
        None => SessionStore::in_memory(),
    };
    let state = Arc::new(AppState { store, config: ServiceConfig { defaults, static_dir: c.static_dir.clone() } });
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::usage(Stage::Config, format!("cannot start runtime: {e}")))?;
    eprintln!("listening on http://{}", c.addr);
    runtime
        .block_on(resincarve_service::serve(c.addr, state))
        .map_err(|e| CliError::usage(Stage::Config, format!("server on {} failed: {e}", c.addr)))?;
    Ok(Output::new("", json!({"ok": true})))
}

fn push_warnings(text: &mut String, warnings: &[String]) {
    for w in warnings {
        let _ = writeln!(text, "warning: {w}");
    }
}
