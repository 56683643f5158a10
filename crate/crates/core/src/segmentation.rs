//! Region proposals from pluggable backends and final mask selection.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::imaging::{self, luma, mask_to_image, rgb_distance, BinaryMask, RasterImage};
use crate::prompts::{PromptLabel, PromptPoint, PromptSet, PromptSpec};

pub const DEFAULT_ACCEPT_THRESHOLD: f64 = 0.5;
/// Threshold used when Otsu has nothing to split.
pub const OTSU_FALLBACK_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    pub mask: BinaryMask,
    pub confidence: f64,
    pub backend_id: String,
    /// Indices into the prompt set of the prompts supporting this region.
    pub seed_prompts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdInfo {
    pub value: u8,
    pub otsu_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    /// Sorted by confidence, highest first.
    pub proposals: Vec<RegionProposal>,
    pub final_mask: BinaryMask,
    pub threshold: Option<ThresholdInfo>,
    pub warnings: Vec<String>,
}

impl SegmentationResult {
    pub fn scores(&self) -> Vec<f64> {
        self.proposals.iter().map(|p| p.confidence).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Fixed(u8),
    #[default]
    Otsu,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub exchange_dir: PathBuf,
    /// Worker executable; invoked with the exchange directory as its only argument.
    pub command: PathBuf,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    Threshold {
        #[serde(default)]
        mode: ThresholdMode,
    },
    RegionGrow {
        color_tol: f64,
        #[serde(default)]
        connectivity: Connectivity,
    },
    External(ExternalConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Threshold { mode: ThresholdMode::Otsu }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            BackendConfig::Threshold { .. } => Ok(()),
            BackendConfig::RegionGrow { color_tol, .. } if !(*color_tol >= 0.0) => {
                Err(Error::InvalidConfig(format!("color_tol must be non-negative, got {color_tol}")))
            }
            BackendConfig::RegionGrow { .. } => Ok(()),
            BackendConfig::External(cfg) if !(cfg.timeout_secs > 0.0) => {
                Err(Error::InvalidConfig(format!("timeout must be positive, got {}", cfg.timeout_secs)))
            }
            BackendConfig::External(_) => Ok(()),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            BackendConfig::Threshold { .. } => "threshold",
            BackendConfig::RegionGrow { .. } => "region-grow",
            BackendConfig::External(_) => "external",
        }
    }
}

/// Stable sort by confidence, descending. Equal scores keep backend order.
fn sort_proposals(proposals: &mut [RegionProposal]) {
    proposals.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
}

/// Union of every proposal scoring at least `accept_threshold`.
pub fn select_final_mask(result: &SegmentationResult, accept_threshold: f64) -> BinaryMask {
    let (w, h) = result.final_mask.dimensions();
    let mut out = BinaryMask::empty(w, h);
    for p in result.proposals.iter().filter(|p| p.confidence >= accept_threshold) {
        out.union_with(&p.mask);
    }
    out
}

/// Retained pixels become white, removed pixels black.
pub fn binarize(mask: &BinaryMask) -> RasterImage {
    mask_to_image(mask)
}

fn result_with_selection(
    width: u32,
    height: u32,
    mut proposals: Vec<RegionProposal>,
    fg: &BinaryMask,
    threshold: Option<ThresholdInfo>,
    warnings: Vec<String>,
) -> SegmentationResult {
    sort_proposals(&mut proposals);
    let mut result = SegmentationResult { proposals, final_mask: BinaryMask::empty(width, height), threshold, warnings };
    let mut mask = select_final_mask(&result, DEFAULT_ACCEPT_THRESHOLD);
    mask.intersect_with(fg);
    result.final_mask = mask;
    result
}

/// Otsu threshold over a luma histogram: the `t` in `1..=255` maximizing the
/// between-class variance of `{luma < t}` vs `{luma >= t}`, first maximum
/// winning. `None` when fewer than two levels are populated.
///
/// The variance is compared as the exact ratio `(s0·n - S·n0)² / (n0·n1)`,
/// which is proportional to `n0·n1·(mu0 - mu1)²`.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total = hist.iter().map(|&n| n as u128).sum::<u128>();
    let total_sum: u128 = hist.iter().enumerate().map(|(v, &n)| v as u128 * n as u128).sum();
    let (mut n0, mut s0) = (0u128, 0u128);
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 1..=255usize {
        n0 += hist[t - 1] as u128;
        s0 += (t as u128 - 1) * hist[t - 1] as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (s0 * total).abs_diff(total_sum * n0);
        let Some(num) = d.checked_mul(d) else {
            return otsu_threshold_f64(hist);
        };
        let den = n0 * n1;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => match (num.checked_mul(bd), bn.checked_mul(den)) {
                (Some(a), Some(b)) => a > b,
                _ => return otsu_threshold_f64(hist),
            },
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|(t, _, _)| t)
}

/// Floating-point fallback for histograms too large for exact comparison.
fn otsu_threshold_f64(hist: &[u64; 256]) -> Option<u8> {
    let total: f64 = hist.iter().map(|&n| n as f64).sum();
    let total_sum: f64 = hist.iter().enumerate().map(|(v, &n)| v as f64 * n as f64).sum();
    let (mut n0, mut s0) = (0.0f64, 0.0f64);
    let mut best: Option<(u8, f64)> = None;
    for t in 1..=255usize {
        n0 += hist[t - 1] as f64;
        s0 += (t - 1) as f64 * hist[t - 1] as f64;
        let n1 = total - n0;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let diff = s0 / n0 - (total_sum - s0) / n1;
        let var = n0 * n1 * diff * diff;
        if best.map_or(true, |(_, v)| var > v) {
            best = Some((t as u8, var));
        }
    }
    best.map(|(t, _)| t)
}

pub fn luma_histogram(img: &RasterImage, fg: &BinaryMask) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for (p, &keep) in img.pixels().iter().zip(fg.bits()) {
        if keep {
            hist[luma(*p) as usize] += 1;
        }
    }
    hist
}

/// Pixels darker than the threshold inside the foreground form one proposal.
pub fn segment_threshold(img: &RasterImage, fg: &BinaryMask, mode: ThresholdMode) -> Result<SegmentationResult> {
    fg.ensure_dimensions(img.width(), img.height())?;
    let mut warnings = Vec::new();
    let info = match mode {
        ThresholdMode::Fixed(t) => ThresholdInfo { value: t, otsu_fallback: false },
        ThresholdMode::Otsu => match otsu_threshold(&luma_histogram(img, fg)) {
            Some(t) => ThresholdInfo { value: t, otsu_fallback: false },
            None => {
                warnings.push(format!(
                    "otsu: foreground histogram has fewer than two levels, using T={OTSU_FALLBACK_THRESHOLD}"
                ));
                ThresholdInfo { value: OTSU_FALLBACK_THRESHOLD, otsu_fallback: true }
            }
        },
    };
    let bits = img
        .pixels()
        .iter()
        .zip(fg.bits())
        .map(|(&p, &keep)| keep && luma(p) < info.value)
        .collect();
    let mask = BinaryMask::new(img.width(), img.height(), bits)?;
    let proposal = RegionProposal { mask, confidence: 1.0, backend_id: "threshold".into(), seed_prompts: Vec::new() };
    Ok(result_with_selection(img.width(), img.height(), vec![proposal], fg, Some(info), warnings))
}

/// Pixel indices reachable from the seed through pixels within `color_tol`
/// of `reference`, restricted to `fg`. The seed itself is always included.
fn flood_fill(
    img: &RasterImage,
    fg: &BinaryMask,
    seed: (u32, u32),
    reference: [f64; 3],
    color_tol: f64,
    connectivity: Connectivity,
) -> Vec<u32> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut visited = vec![false; (w * h) as usize];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let start = seed.1 as usize * w as usize + seed.0 as usize;
    visited[start] = true;
    queue.push_back((seed.0 as i64, seed.1 as i64));
    const N4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    const N8: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    let neighbors: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &N4,
        Connectivity::Eight => &N8,
    };
    while let Some((x, y)) = queue.pop_front() {
        out.push((y * w + x) as u32);
        for &(dx, dy) in neighbors {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            let idx = (ny * w + nx) as usize;
            if visited[idx] {
                continue;
            }
            visited[idx] = true;
            if fg.bits()[idx] && rgb_distance(img.pixels()[idx], reference) <= color_tol {
                queue.push_back((nx, ny));
            }
        }
    }
    out.sort_unstable();
    out
}

fn grow_from(
    img: &RasterImage,
    fg: &BinaryMask,
    prompt: &PromptPoint,
    color_tol: f64,
    connectivity: Connectivity,
) -> Option<Vec<u32>> {
    if !img.in_bounds(prompt.x, prompt.y) || !fg.get(prompt.x, prompt.y) {
        return None;
    }
    Some(flood_fill(img, fg, (prompt.x, prompt.y), prompt.descriptor, color_tol, connectivity))
}

fn find_root(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Flood-fill proposals seeded by foreground prompts. Overlapping fills merge;
/// a region's confidence is the fraction of foreground prompts it contains.
/// Regions grown from background prompts are subtracted from every proposal.
pub fn segment_region_grow(
    img: &RasterImage,
    fg: &BinaryMask,
    prompts: &PromptSet,
    color_tol: f64,
    connectivity: Connectivity,
) -> Result<SegmentationResult> {
    fg.ensure_dimensions(img.width(), img.height())?;
    let (w, h) = img.dimensions();
    let all = prompts.prompts();
    let fills: Vec<Option<Vec<u32>>> =
        all.par_iter().map(|p| grow_from(img, fg, p, color_tol, connectivity)).collect();

    let mut warnings = Vec::new();
    for (i, (p, fill)) in all.iter().zip(&fills).enumerate() {
        if fill.is_none() {
            warnings.push(format!("prompt {i} at ({}, {}) lies outside the foreground; ignored", p.x, p.y));
        }
    }

    let mut background = BinaryMask::empty(w, h);
    for (p, fill) in all.iter().zip(&fills) {
        if let (PromptLabel::Background, Some(fill)) = (p.label, fill) {
            for &idx in fill {
                background.set(idx % w, idx / w, true);
            }
        }
    }

    let fg_prompts: Vec<usize> = (0..all.len()).filter(|&i| all[i].label == PromptLabel::Foreground).collect();
    let total_fg = fg_prompts.len();
    let mut parent: Vec<usize> = (0..all.len()).collect();
    let mut owner = vec![usize::MAX; (w * h) as usize];
    for &i in &fg_prompts {
        let Some(fill) = &fills[i] else { continue };
        for &idx in fill {
            let o = owner[idx as usize];
            if o == usize::MAX {
                owner[idx as usize] = i;
            } else {
                let (a, b) = (find_root(&mut parent, o), find_root(&mut parent, i));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }

    // groups in order of their lowest prompt index
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in &fg_prompts {
        if fills[i].is_none() {
            continue;
        }
        let root = find_root(&mut parent, i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, members)) => members.push(i),
            None => groups.push((root, vec![i])),
        }
    }

    let mut proposals = Vec::new();
    for (_, members) in groups {
        let mut mask = BinaryMask::empty(w, h);
        for &m in &members {
            for &idx in fills[m].as_ref().into_iter().flatten() {
                mask.set(idx % w, idx / w, true);
            }
        }
        mask.subtract(&background);
        if mask.is_empty() {
            continue;
        }
        proposals.push(RegionProposal {
            mask,
            confidence: members.len() as f64 / total_fg as f64,
            backend_id: "region-grow".into(),
            seed_prompts: members,
        });
    }
    Ok(result_with_selection(w, h, proposals, fg, None, warnings))
}

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("external backend i/o on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to start worker {}: {source}", command.display())]
    Spawn {
        command: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("worker timed out after {secs:.1} s")]
    Timeout { secs: f64 },
    #[error("worker exited with {status}")]
    WorkerFailed { status: String },
    #[error("malformed worker response: {0}")]
    MalformedResponse(String),
    #[error("proposal mask {mask} is {actual_w}x{actual_h}, image is {expected_w}x{expected_h}")]
    DimensionMismatch {
        mask: String,
        expected_w: u32,
        expected_h: u32,
        actual_w: u32,
        actual_h: u32,
    },
}

#[derive(Debug, Deserialize)]
struct WorkerResponse {
    proposals: Vec<WorkerProposal>,
}

#[derive(Debug, Deserialize)]
struct WorkerProposal {
    mask: String,
    score: f64,
}

fn exchange_io(path: &Path) -> impl FnOnce(std::io::Error) -> ExternalError + '_ {
    move |source| ExternalError::Io { path: path.to_path_buf(), source }
}

fn run_worker(cfg: &ExternalConfig) -> Result<(), ExternalError> {
    let mut child = Command::new(&cfg.command)
        .arg(&cfg.exchange_dir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|source| ExternalError::Spawn { command: cfg.command.clone(), source })?;
    let deadline = Instant::now() + Duration::from_secs_f64(cfg.timeout_secs);
    loop {
        match child.try_wait().map_err(exchange_io(&cfg.command))? {
            Some(status) if status.success() => return Ok(()),
            Some(status) => return Err(ExternalError::WorkerFailed { status: status.to_string() }),
            None if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ExternalError::Timeout { secs: cfg.timeout_secs });
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    }
}

/// Runs an out-of-process segmenter through the exchange directory:
/// writes `input.png` and `prompts.json`, invokes the worker, and reads
/// `proposals.json` back.
pub fn segment_external(
    img: &RasterImage,
    fg: &BinaryMask,
    prompts: &PromptSet,
    cfg: &ExternalConfig,
) -> Result<SegmentationResult> {
    fg.ensure_dimensions(img.width(), img.height())?;
    let dir = &cfg.exchange_dir;
    fs::create_dir_all(dir).map_err(exchange_io(dir))?;
    let response_path = dir.join("proposals.json");
    match fs::remove_file(&response_path) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(exchange_io(&response_path)(e).into()),
    }

    let input_path = dir.join("input.png");
    fs::write(&input_path, imaging::encode_png(img)?).map_err(exchange_io(&input_path))?;
    let specs: Vec<PromptSpec> = prompts.prompts().iter().map(PromptPoint::spec).collect();
    let prompts_path = dir.join("prompts.json");
    let json = serde_json::to_vec(&specs).map_err(|e| ExternalError::MalformedResponse(e.to_string()))?;
    fs::write(&prompts_path, json).map_err(exchange_io(&prompts_path))?;

    run_worker(cfg)?;

    let text = fs::read_to_string(&response_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ExternalError::MalformedResponse("worker wrote no proposals.json".into())
        } else {
            exchange_io(&response_path)(e)
        }
    })?;
    let response: WorkerResponse =
        serde_json::from_str(&text).map_err(|e| ExternalError::MalformedResponse(e.to_string()))?;

    let mut proposals = Vec::with_capacity(response.proposals.len());
    for wp in response.proposals {
        if !wp.score.is_finite() {
            return Err(ExternalError::MalformedResponse(format!("score for {} is not finite", wp.mask)).into());
        }
        let mask_path = dir.join(&wp.mask);
        let mask_img = match imaging::load_image(&mask_path) {
            Ok(m) => m,
            Err(e) => return Err(ExternalError::MalformedResponse(format!("mask {}: {e}", wp.mask)).into()),
        };
        if mask_img.dimensions() != img.dimensions() {
            return Err(ExternalError::DimensionMismatch {
                mask: wp.mask,
                expected_w: img.width(),
                expected_h: img.height(),
                actual_w: mask_img.width(),
                actual_h: mask_img.height(),
            }
            .into());
        }
        proposals.push(RegionProposal {
            mask: imaging::mask_from_image(&mask_img),
            confidence: wp.score.clamp(0.0, 1.0),
            backend_id: "external".into(),
            seed_prompts: Vec::new(),
        });
    }
    Ok(result_with_selection(img.width(), img.height(), proposals, fg, None, Vec::new()))
}

/// Runs the configured backend and selects the final mask.
///
/// Proposals at or above `accept_threshold` are merged. Proposals seeded by an
/// operator foreground prompt are always merged, and the result is clipped to
/// the foreground.
pub fn segment(
    img: &RasterImage,
    fg: &BinaryMask,
    prompts: &PromptSet,
    backend: &BackendConfig,
    accept_threshold: f64,
) -> Result<SegmentationResult> {
    backend.validate()?;
    if !(0.0..=1.0).contains(&accept_threshold) {
        return Err(Error::InvalidConfig(format!("accept threshold {accept_threshold} outside [0, 1]")));
    }
    let mut result = match backend {
        BackendConfig::Threshold { mode } => segment_threshold(img, fg, *mode)?,
        BackendConfig::RegionGrow { color_tol, connectivity } => {
            segment_region_grow(img, fg, prompts, *color_tol, *connectivity)?
        }
        BackendConfig::External(cfg) => segment_external(img, fg, prompts, cfg)?,
    };
    let mut mask = select_final_mask(&result, accept_threshold);
    let all = prompts.prompts();
    for p in &result.proposals {
        let operator_seeded = p
            .seed_prompts
            .iter()
            .any(|&i| prompts.is_custom(i) && all.get(i).is_some_and(|pp| pp.label == PromptLabel::Foreground));
        if operator_seeded {
            mask.union_with(&p.mask);
        }
    }
    mask.intersect_with(fg);
    result.final_mask = mask;
    Ok(result)
}
