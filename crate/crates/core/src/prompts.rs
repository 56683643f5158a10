//! Regular prompt grid, patch descriptors and prompt deduplication.
//!
//! Grid prompts are placed at cell centers, dropped when they land on removed
//! background, and then thinned by visual similarity: a greedy scan keeps a
//! prompt only when its descriptor is farther than `dedup_threshold` from
//! every prompt kept so far. A clustering mode that keeps one representative
//! per single-linkage cluster is available as an alternative.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptLabel {
    #[serde(rename = "fg")]
    Foreground,
    #[serde(rename = "bg")]
    Background,
}

/// Mean RGB over a square patch.
pub type Descriptor = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptPoint {
    pub x: u32,
    pub y: u32,
    pub label: PromptLabel,
    pub descriptor: Descriptor,
}

impl PromptPoint {
    /// Builds a prompt at `(x, y)` with its descriptor sampled from `img`.
    pub fn sample(img: &RasterImage, x: u32, y: u32, label: PromptLabel, patch_size: u32) -> Result<Self> {
        if !img.in_bounds(x, y) {
            return Err(Error::OutOfBounds { x, y, width: img.width(), height: img.height() });
        }
        Ok(Self { x, y, label, descriptor: compute_descriptor(img, x, y, patch_size) })
    }

    pub fn spec(&self) -> PromptSpec {
        PromptSpec { x: self.x, y: self.y, label: self.label }
    }
}

/// Wire form of a prompt: `{"x":int,"y":int,"label":"fg"|"bg"}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptSpec {
    pub x: u32,
    pub y: u32,
    pub label: PromptLabel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DedupMode {
    /// Keep the first prompt of every similar run (scan order).
    #[default]
    Greedy,
    /// Keep the prompt nearest each single-linkage cluster's mean descriptor.
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptGridConfig {
    pub rows: u32,
    pub cols: u32,
    pub patch_size: u32,
    pub dedup_threshold: f64,
    pub mode: DedupMode,
}

impl Default for PromptGridConfig {
    fn default() -> Self {
        Self { rows: 16, cols: 16, patch_size: 7, dedup_threshold: 12.0, mode: DedupMode::Greedy }
    }
}

impl PromptGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidConfig("prompt grid needs at least one row and column".into()));
        }
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!("patch size must be odd, got {}", self.patch_size)));
        }
        if !(self.dedup_threshold >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dedup threshold must be non-negative, got {}",
                self.dedup_threshold
            )));
        }
        Ok(())
    }
}

/// Grid prompts surviving dedup, followed by operator prompts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    prompts: Vec<PromptPoint>,
    /// Position of each kept grid prompt in the generated order.
    sources: Vec<usize>,
    generated_count: usize,
}

impl PromptSet {
    /// All prompts: kept grid prompts first, then custom ones.
    pub fn prompts(&self) -> &[PromptPoint] {
        &self.prompts
    }

    pub fn kept(&self) -> &[PromptPoint] {
        &self.prompts[..self.sources.len()]
    }

    pub fn custom(&self) -> &[PromptPoint] {
        &self.prompts[self.sources.len()..]
    }

    /// Index of the first custom prompt in [`prompts`](Self::prompts).
    pub fn custom_start(&self) -> usize {
        self.sources.len()
    }

    pub fn kept_sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn generated_count(&self) -> usize {
        self.generated_count
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn is_custom(&self, index: usize) -> bool {
        index >= self.sources.len()
    }
}

/// Per-channel mean over the `k`×`k` window centered at `(x, y)`, clipped to
/// the image.
pub fn compute_descriptor(img: &RasterImage, x: u32, y: u32, k: u32) -> Descriptor {
    let half = k / 2;
    let x0 = x.saturating_sub(half);
    let y0 = y.saturating_sub(half);
    let x1 = (x + half).min(img.width() - 1);
    let y1 = (y + half).min(img.height() - 1);
    let mut sum = [0u64; 3];
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            let p = img.get(xx, yy);
            for c in 0..3 {
                sum[c] += p[c] as u64;
            }
        }
    }
    let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    [sum[0] as f64 / n, sum[1] as f64 / n, sum[2] as f64 / n]
}

pub fn descriptor_distance(a: &Descriptor, b: &Descriptor) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
}

/// Cell center along one axis: `floor((i + 0.5) * extent / cells)`.
#[inline]
fn cell_center(i: u32, extent: u32, cells: u32) -> u32 {
    ((2 * i as u64 + 1) * extent as u64 / (2 * cells as u64)) as u32
}

/// Row-major foreground prompts at grid cell centers that fall inside `fg_mask`.
pub fn generate_grid(img: &RasterImage, cfg: &PromptGridConfig, fg_mask: &BinaryMask) -> Result<Vec<PromptPoint>> {
    cfg.validate()?;
    fg_mask.ensure_dimensions(img.width(), img.height())?;
    let centers: Vec<(u32, u32)> = (0..cfg.rows)
        .flat_map(|i| (0..cfg.cols).map(move |j| (j, i)))
        .map(|(j, i)| (cell_center(j, img.width(), cfg.cols), cell_center(i, img.height(), cfg.rows)))
        .filter(|&(x, y)| fg_mask.get(x, y))
        .collect();
    Ok(centers
        .par_iter()
        .map(|&(x, y)| PromptPoint {
            x,
            y,
            label: PromptLabel::Foreground,
            descriptor: compute_descriptor(img, x, y, cfg.patch_size),
        })
        .collect())
}

/// Greedy scan: the first prompt seeds the kept set, and each later prompt is
/// kept iff its distance to the nearest kept descriptor exceeds `thresh`.
pub fn dedup_prompts(prompts: &[PromptPoint], thresh: f64) -> PromptSet {
    let mut kept: Vec<PromptPoint> = Vec::new();
    let mut sources = Vec::new();
    for (i, p) in prompts.iter().enumerate() {
        let nearest = kept
            .iter()
            .map(|k| descriptor_distance(&k.descriptor, &p.descriptor))
            .fold(f64::INFINITY, f64::min);
        if kept.is_empty() || nearest > thresh {
            kept.push(*p);
            sources.push(i);
        }
    }
    PromptSet { prompts: kept, sources, generated_count: prompts.len() }
}

/// Single-linkage clustering at `thresh` (prompts closer than or equal to
/// `thresh` are linked). Each cluster keeps the member nearest its mean
/// descriptor; representatives are returned in generated order.
pub fn dedup_prompts_clustered(prompts: &[PromptPoint], thresh: f64) -> PromptSet {
    let n = prompts.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if descriptor_distance(&prompts[i].descriptor, &prompts[j].descriptor) <= thresh {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[root]].push(i);
    }
    let mut sources: Vec<usize> = clusters
        .iter()
        .map(|members| {
            let mut mean = [0.0; 3];
            for &m in members {
                for c in 0..3 {
                    mean[c] += prompts[m].descriptor[c] / members.len() as f64;
                }
            }
            // strict `<` keeps the lowest index on ties
            let mut best = members[0];
            let mut best_d = descriptor_distance(&prompts[best].descriptor, &mean);
            for &m in &members[1..] {
                let d = descriptor_distance(&prompts[m].descriptor, &mean);
                if d < best_d {
                    best = m;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    sources.sort_unstable();
    PromptSet { prompts: sources.iter().map(|&i| prompts[i]).collect(), sources, generated_count: n }
}

pub fn dedup_with_mode(prompts: &[PromptPoint], thresh: f64, mode: DedupMode) -> PromptSet {
    match mode {
        DedupMode::Greedy => dedup_prompts(prompts, thresh),
        DedupMode::Centroid => dedup_prompts_clustered(prompts, thresh),
    }
}

/// Appends operator prompts after the kept grid prompts. Custom prompts are
/// never deduplicated.
pub fn merge_custom_prompts(base: &PromptSet, custom: &[PromptPoint], width: u32, height: u32) -> Result<PromptSet> {
    if let Some(p) = custom.iter().find(|p| p.x >= width || p.y >= height) {
        return Err(Error::OutOfBounds { x: p.x, y: p.y, width, height });
    }
    let mut merged = base.clone();
    merged.prompts.extend_from_slice(custom);
    Ok(merged)
}

/// Full grid stage: generate, then deduplicate with the configured mode.
pub fn build_prompt_set(img: &RasterImage, cfg: &PromptGridConfig, fg_mask: &BinaryMask) -> Result<PromptSet> {
    let grid = generate_grid(img, cfg, fg_mask)?;
    Ok(dedup_with_mode(&grid, cfg.dedup_threshold, cfg.mode))
}
