//! Binary image to G-code compilation and verification.
//!
//! The dialect is deliberately small: `G0`, `G1`, `G21`, `G90`, `M3`, `M5`
//! with `X Y Z F S` parameters. A binary image is planned into a raster
//! toolpath (one cut per horizontal run of black pixels), emitted as
//! canonical text, and can be parsed back and replayed by the simulator to
//! check which cells the program actually removes.

mod emit;
mod parse;
mod plan;
mod simulate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emit::{emit_gcode, format_coord, format_feed, GcodeProgram, Line, Word};
pub use parse::parse_gcode;
pub use plan::{black_pixels, optimize_travel, plan_toolpath, Point3, Run, SegmentKind, Toolpath, ToolpathSegment};
pub use simulate::{simulate_toolpath, RemovalMap, SimulationReport};

/// Smallest pixel pitch for which 3-decimal coordinates still land every
/// cut within half a pixel of its cell center.
pub const MIN_MM_PER_PIXEL: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub mm_per_pixel: f64,
    #[serde(default = "defaults::safe_z")]
    pub safe_z: f64,
    #[serde(default = "defaults::cut_z")]
    pub cut_z: f64,
    #[serde(default = "defaults::feed_rate")]
    pub feed_rate: f64,
    #[serde(default = "defaults::plunge_rate")]
    pub plunge_rate: f64,
    #[serde(default = "defaults::spindle_rpm")]
    pub spindle_rpm: u32,
    /// Defaults to `mm_per_pixel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_diameter: Option<f64>,
}

mod defaults {
    pub fn safe_z() -> f64 {
        5.0
    }
    pub fn cut_z() -> f64 {
        -1.0
    }
    pub fn feed_rate() -> f64 {
        300.0
    }
    pub fn plunge_rate() -> f64 {
        100.0
    }
    pub fn spindle_rpm() -> u32 {
        10_000
    }
}

impl MachineConfig {
    pub fn new(mm_per_pixel: f64) -> Self {
        Self {
            mm_per_pixel,
            safe_z: defaults::safe_z(),
            cut_z: defaults::cut_z(),
            feed_rate: defaults::feed_rate(),
            plunge_rate: defaults::plunge_rate(),
            spindle_rpm: defaults::spindle_rpm(),
            tool_diameter: None,
        }
    }

    pub fn tool_diameter(&self) -> f64 {
        self.tool_diameter.unwrap_or(self.mm_per_pixel)
    }

    pub fn validate(&self) -> Result<(), GcodeError> {
        let bad = |msg: String| Err(GcodeError::InvalidConfig(msg));
        if !(self.mm_per_pixel >= MIN_MM_PER_PIXEL) || !self.mm_per_pixel.is_finite() {
            return bad(format!("mm_per_pixel must be at least {MIN_MM_PER_PIXEL}, got {}", self.mm_per_pixel));
        }
        if !(self.cut_z < 0.0 && 0.0 < self.safe_z) || !self.safe_z.is_finite() || !self.cut_z.is_finite() {
            return bad(format!("need cut_z < 0 < safe_z, got cut_z={} safe_z={}", self.cut_z, self.safe_z));
        }
        if !(self.feed_rate > 0.0 && self.feed_rate.is_finite()) {
            return bad(format!("feed_rate must be positive, got {}", self.feed_rate));
        }
        if !(self.plunge_rate > 0.0 && self.plunge_rate.is_finite()) {
            return bad(format!("plunge_rate must be positive, got {}", self.plunge_rate));
        }
        if self.spindle_rpm == 0 {
            return bad("spindle_rpm must be positive".into());
        }
        let d = self.tool_diameter();
        if !(d > 0.0 && d.is_finite()) {
            return bad(format!("tool_diameter must be positive, got {d}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnsupportedCommand(String),
    MalformedNumber(String),
    MissingSpindleSpeed,
    UnclosedComment,
    DuplicateWord(char),
    ConflictingMotion,
    MissingMotionMode,
    InvalidValue(String),
}

impl std::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseErrorKind::UnsupportedCommand(w) => write!(f, "unsupported command `{w}`"),
            ParseErrorKind::MalformedNumber(t) => write!(f, "malformed number `{t}`"),
            ParseErrorKind::MissingSpindleSpeed => f.write_str("M3 requires an S word"),
            ParseErrorKind::UnclosedComment => f.write_str("unclosed `(` comment"),
            ParseErrorKind::DuplicateWord(c) => write!(f, "duplicate `{c}` word"),
            ParseErrorKind::ConflictingMotion => f.write_str("more than one motion command on the line"),
            ParseErrorKind::MissingMotionMode => f.write_str("coordinates given before any G0/G1"),
            ParseErrorKind::InvalidValue(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GcodeError {
    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },

    #[error("invalid machine config: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Simulation { line: usize, message: String },
}

impl GcodeError {
    pub fn line(&self) -> Option<usize> {
        match self {
            GcodeError::Parse { line, .. } | GcodeError::Simulation { line, .. } => Some(*line),
            GcodeError::InvalidConfig(_) => None,
        }
    }
}
