//! Segment the resinous region of a wood cross-section image and compile the
//! resulting binary mask into a verified CNC G-code program.
//!
//! The stages are independent modules:
//!
//! - [`imaging`]: PNG I/O, grayscale, background removal, dataset manifests
//! - [`prompts`]: prompt grid, patch descriptors and deduplication
//! - [`segmentation`]: threshold, region-grow and external backends
//! - [`evaluation`]: IoU, quality classes, summary statistics, grading
//! - [`gcode`]: toolpath planning, G-code emit/parse, removal simulation
//! - [`pipeline`]: the end-to-end flow tying them together

pub mod error;
pub mod evaluation;
pub mod gcode;
pub mod imaging;
pub mod pipeline;
pub mod prompts;
pub mod segmentation;

pub use error::{Error, Result};
pub use evaluation::{EvalReport, Grade, IoUScore, QualityClass, SummaryStats};
pub use gcode::{GcodeError, GcodeProgram, MachineConfig, RemovalMap, Toolpath};
pub use imaging::{BackgroundModel, BinaryMask, DatasetManifest, RasterImage};
pub use prompts::{PromptGridConfig, PromptLabel, PromptPoint, PromptSet, PromptSpec};
pub use segmentation::{BackendConfig, RegionProposal, SegmentationResult};
