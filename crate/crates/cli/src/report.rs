//! Errors, exit codes and stdout rendering.

use std::fmt;

use resincarve_core::pipeline::{Stage, StageError};
use resincarve_core::{Error, GcodeError};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_STAGE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    #[serde(skip)]
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl CliError {
    /// Usage, IO or config problem: exit 2.
    pub fn usage(stage: Stage, message: impl Into<String>) -> Self {
        Self { exit_code: EXIT_USAGE, stage: Some(stage), message: message.into(), line: None }
    }

    /// A pipeline stage rejected its input: exit 1.
    pub fn stage(stage: Stage, message: impl Into<String>) -> Self {
        Self { exit_code: EXIT_STAGE, stage: Some(stage), message: message.into(), line: None }
    }

    /// Maps a core error raised while running `stage`.
    pub fn from_core(stage: Stage, e: Error) -> Self {
        let line = match &e {
            Error::Gcode(g) => g.line(),
            _ => None,
        };
        let exit_code = match (&e, stage) {
            (_, Stage::Config | Stage::Load | Stage::Write) => EXIT_USAGE,
            (Error::InvalidConfig(_) | Error::Gcode(GcodeError::InvalidConfig(_)), _) => EXIT_USAGE,
            (Error::FileNotFound(_) | Error::Io { .. } | Error::MissingPrediction(_), _) => EXIT_USAGE,
            (Error::ManifestParse(_) | Error::ManifestEntry { .. }, _) => EXIT_USAGE,
            _ => EXIT_STAGE,
        };
        let stage = match e {
            Error::InvalidConfig(_) | Error::Gcode(GcodeError::InvalidConfig(_)) => Stage::Config,
            _ => stage,
        };
        Self { exit_code, stage: Some(stage), message: e.to_string(), line }
    }

    pub fn with_context(mut self, context: &str) -> Self {
        self.message = format!("{context}: {}", self.message);
        self
    }
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        CliError::from_core(e.stage, e.source)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(s) => write!(f, "error [{s}]: {}", self.message),
            None => write!(f, "error: {}", self.message),
        }
    }
}

pub trait CoreContext<T> {
    fn at(self, stage: Stage) -> Result<T, CliError>;
}

impl<T> CoreContext<T> for Result<T, Error> {
    fn at(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_core(stage, e))
    }
}

impl<T> CoreContext<T> for Result<T, GcodeError> {
    fn at(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_core(stage, e.into()))
    }
}

/// What a successful command prints: text for people, a JSON value for `--json`.
pub struct Output {
    pub text: String,
    pub json: serde_json::Value,
    pub exit_code: i32,
}

impl Output {
    pub fn new(text: impl Into<String>, json: impl Serialize) -> Self {
        let json = serde_json::to_value(json).expect("output is serializable");
        Self { text: text.into(), json, exit_code: EXIT_OK }
    }
}

pub fn render_error(e: &CliError, json: bool) {
    if json {
        let body = serde_json::json!({ "ok": false, "error": e });
        println!("{}", serde_json::to_string_pretty(&body).expect("error is serializable"));
    } else {
        eprintln!("{e}");
    }
}

pub fn render_output(out: &Output, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(&out.json).expect("output is serializable"));
    } else if !out.text.is_empty() {
        print!("{}", out.text);
        if !out.text.ends_with('\n') {
            println!();
        }
    }
}
