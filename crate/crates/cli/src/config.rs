//! Config resolution: defaults, then the config file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use resincarve_core::gcode::MachineConfig;
use resincarve_core::imaging::BackgroundModel;
use resincarve_core::pipeline::{PipelineConfig, Stage};
use resincarve_core::prompts::{DedupMode, PromptSpec};
use resincarve_core::segmentation::{BackendConfig, Connectivity, ExternalConfig, ThresholdMode};

use crate::args::{BackendKind, ConnectivityArg, DedupArg, MachineFlags, SegmentFlags, ThresholdArg};
use crate::report::CliError;

/// Region-grow colour tolerance when neither file nor flags give one.
pub const DEFAULT_COLOR_TOL: f64 = 30.0;

pub fn load_file(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(Stage::Config, format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, path)
}

/// JSON when the extension is `.json`, TOML otherwise.
pub fn parse_config(text: &str, path: &Path) -> Result<PipelineConfig, CliError> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::usage(Stage::Config, format!("invalid config {}: {e}", path.display())))
}

pub fn base_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => load_file(p),
        None => Ok(PipelineConfig::default()),
    }
}

pub fn apply_segment_flags(cfg: &mut PipelineConfig, f: &SegmentFlags) -> Result<(), CliError> {
    if let Some(key) = f.chroma_key {
        cfg.background = BackgroundModel::chroma_key(key, cfg.background.tolerance);
    } else if f.corner_sample {
        cfg.background = BackgroundModel::corner_sample(cfg.background.tolerance);
    }
    if let Some(t) = f.tolerance {
        cfg.background.tolerance = t;
    }

    let grid = &mut cfg.grid;
    if let Some(v) = f.grid_rows {
        grid.rows = v;
    }
    if let Some(v) = f.grid_cols {
        grid.cols = v;
    }
    if let Some(v) = f.patch_size {
        grid.patch_size = v;
    }
    if let Some(v) = f.dedup_threshold {
        grid.dedup_threshold = v;
    }
    if let Some(m) = f.dedup_mode {
        grid.mode = match m {
            DedupArg::Greedy => DedupMode::Greedy,
            DedupArg::Centroid => DedupMode::Centroid,
        };
    }

    // A backend-specific flag without --backend selects that backend.
    let kind = f.backend.or_else(|| {
        if f.threshold.is_some() {
            Some(BackendKind::Threshold)
        } else if f.color_tol.is_some() || f.connectivity.is_some() {
            Some(BackendKind::RegionGrow)
        } else if f.worker.is_some() || f.exchange_dir.is_some() {
            Some(BackendKind::External)
        } else {
            None
        }
    });
    if let Some(kind) = kind {
        cfg.backend = switch_backend(&cfg.backend, kind, f)?;
    } else if let (Some(t), BackendConfig::External(ext)) = (f.timeout, &mut cfg.backend) {
        ext.timeout_secs = t;
    }

    if let Some(a) = f.accept_threshold {
        cfg.accept_threshold = a;
    }
    Ok(())
}

fn switch_backend(current: &BackendConfig, kind: BackendKind, f: &SegmentFlags) -> Result<BackendConfig, CliError> {
    Ok(match kind {
        BackendKind::Threshold => {
            let file_mode = match current {
                BackendConfig::Threshold { mode } => *mode,
                _ => ThresholdMode::default(),
            };
            let mode = match f.threshold {
                Some(ThresholdArg::Otsu) => ThresholdMode::Otsu,
                Some(ThresholdArg::Fixed(t)) => ThresholdMode::Fixed(t),
                None => file_mode,
            };
            BackendConfig::Threshold { mode }
        }
        BackendKind::RegionGrow => {
            let (tol, conn) = match current {
                BackendConfig::RegionGrow { color_tol, connectivity } => (*color_tol, *connectivity),
                _ => (DEFAULT_COLOR_TOL, Connectivity::default()),
            };
            let connectivity = match f.connectivity {
                Some(ConnectivityArg::Four) => Connectivity::Four,
                Some(ConnectivityArg::Eight) => Connectivity::Eight,
                None => conn,
            };
            BackendConfig::RegionGrow { color_tol: f.color_tol.unwrap_or(tol), connectivity }
        }
        BackendKind::External => {
            let file = match current {
                BackendConfig::External(e) => Some(e),
                _ => None,
            };
            let command = f.worker.clone().or_else(|| file.map(|e| e.command.clone()));
            let exchange_dir = f.exchange_dir.clone().or_else(|| file.map(|e| e.exchange_dir.clone()));
            let (Some(command), Some(exchange_dir)) = (command, exchange_dir) else {
                return Err(CliError::usage(
                    Stage::Config,
                    "the external backend needs --worker and --exchange-dir (or a config file entry)",
                ));
            };
            let timeout_secs = f.timeout.or(file.map(|e| e.timeout_secs)).unwrap_or(120.0);
            BackendConfig::External(ExternalConfig { exchange_dir, command, timeout_secs })
        }
    })
}

pub fn apply_machine_flags(cfg: &mut PipelineConfig, f: &MachineFlags) -> Result<(), CliError> {
    let any = f.safe_z.is_some()
        || f.cut_z.is_some()
        || f.feed_rate.is_some()
        || f.plunge_rate.is_some()
        || f.spindle_rpm.is_some()
        || f.tool_diameter.is_some();
    let mut machine = match (cfg.machine, f.mm_per_pixel) {
        (Some(mut m), Some(mm)) => {
            m.mm_per_pixel = mm;
            Some(m)
        }
        (Some(m), None) => Some(m),
        (None, Some(mm)) => Some(MachineConfig::new(mm)),
        (None, None) if any => {
            return Err(CliError::usage(Stage::Config, "machine settings given without --mm-per-pixel"));
        }
        (None, None) => None,
    };
    if let Some(m) = &mut machine {
        if let Some(v) = f.safe_z {
            m.safe_z = v;
        }
        if let Some(v) = f.cut_z {
            m.cut_z = v;
        }
        if let Some(v) = f.feed_rate {
            m.feed_rate = v;
        }
        if let Some(v) = f.plunge_rate {
            m.plunge_rate = v;
        }
        if let Some(v) = f.spindle_rpm {
            m.spindle_rpm = v;
        }
        if f.tool_diameter.is_some() {
            m.tool_diameter = f.tool_diameter;
        }
    }
    cfg.machine = machine;
    if f.optimize {
        cfg.optimize_travel = true;
    } else if f.no_optimize {
        cfg.optimize_travel = false;
    }
    Ok(())
}

/// The machine config, or a usage error naming the missing flag.
pub fn require_machine(cfg: &PipelineConfig) -> Result<MachineConfig, CliError> {
    let m = cfg.machine.ok_or_else(|| {
        CliError::usage(Stage::Config, "--mm-per-pixel is required (or set machine.mm_per_pixel in the config file)")
    })?;
    m.validate().map_err(|e| CliError::usage(Stage::Config, e.to_string()))?;
    Ok(m)
}

pub fn validate(cfg: &PipelineConfig) -> Result<(), CliError> {
    cfg.validate().map_err(|e| CliError::usage(Stage::Config, e.to_string()))
}

pub fn load_prompts(path: Option<&PathBuf>) -> Result<Vec<PromptSpec>, CliError> {
    let Some(path) = path else {
        return Ok(Vec::new());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(Stage::Load, format!("cannot read prompts {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::usage(Stage::Config, format!("invalid prompts file {}: {e}", path.display())))
}
