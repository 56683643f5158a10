use serde::{Deserialize, Serialize};

use super::MachineConfig;
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn xy_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn same_xy(&self, x: f64, y: f64) -> bool {
        self.x == x && self.y == y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Rapid,
    Cut,
    Plunge,
    Retract,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolpathSegment {
    pub kind: SegmentKind,
    pub from: Point3,
    pub to: Point3,
}

/// One straight cut at depth, in machine millimetres. `start == end` for a
/// single-pixel run (plunge and retract only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub start: (f64, f64),
    pub end: (f64, f64),
}

impl Run {
    fn reversed(self) -> Self {
        Run { start: self.end, end: self.start }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toolpath {
    pub segments: Vec<ToolpathSegment>,
    pub config: MachineConfig,
}

impl Toolpath {
    /// Builds the chained motion for the given runs, starting and ending at
    /// `(0, 0, safe_z)`.
    pub fn from_runs(runs: &[Run], config: MachineConfig) -> Self {
        let mut segments = Vec::with_capacity(runs.len() * 4 + 1);
        let mut pos = Point3::new(0.0, 0.0, config.safe_z);
        let mut push = |kind, to: Point3, pos: &mut Point3| {
            segments.push(ToolpathSegment { kind, from: *pos, to });
            *pos = to;
        };
        for run in runs {
            let (sx, sy) = run.start;
            let (ex, ey) = run.end;
            if !pos.same_xy(sx, sy) {
                push(SegmentKind::Rapid, Point3::new(sx, sy, config.safe_z), &mut pos);
            }
            push(SegmentKind::Plunge, Point3::new(sx, sy, config.cut_z), &mut pos);
            if (sx, sy) != (ex, ey) {
                push(SegmentKind::Cut, Point3::new(ex, ey, config.cut_z), &mut pos);
            }
            push(SegmentKind::Retract, Point3::new(ex, ey, config.safe_z), &mut pos);
        }
        if !pos.same_xy(0.0, 0.0) {
            push(SegmentKind::Rapid, Point3::new(0.0, 0.0, config.safe_z), &mut pos);
        }
        Toolpath { segments, config }
    }

    /// Recovers the cut runs in execution order.
    pub fn runs(&self) -> Vec<Run> {
        let mut runs = Vec::new();
        let mut start = None;
        for seg in &self.segments {
            match seg.kind {
                SegmentKind::Plunge => start = Some((seg.to.x, seg.to.y)),
                SegmentKind::Retract => {
                    if let Some(s) = start.take() {
                        runs.push(Run { start: s, end: (seg.from.x, seg.from.y) });
                    }
                }
                SegmentKind::Rapid | SegmentKind::Cut => {}
            }
        }
        runs
    }

    pub fn rapid_length(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Rapid)
            .map(|s| s.from.xy_distance(&s.to))
            .sum()
    }

    pub fn cut_length(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Cut)
            .map(|s| s.from.xy_distance(&s.to))
            .sum()
    }

    pub fn cut_count(&self) -> usize {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Cut).count()
    }

    /// Checks chaining, the origin start/end, and that cuts stay at depth.
    pub fn check_continuity(&self) -> bool {
        let home = Point3::new(0.0, 0.0, self.config.safe_z);
        let mut pos = home;
        for seg in &self.segments {
            if seg.from != pos {
                return false;
            }
            let ok = match seg.kind {
                SegmentKind::Cut => seg.from.z == self.config.cut_z && seg.to.z == self.config.cut_z,
                SegmentKind::Rapid => seg.from.z == self.config.safe_z && seg.to.z == self.config.safe_z,
                SegmentKind::Plunge | SegmentKind::Retract => seg.from.x == seg.to.x && seg.from.y == seg.to.y,
            };
            if !ok {
                return false;
            }
            pos = seg.to;
        }
        pos == home
    }
}

/// Black pixels of a strictly two-color image.
pub fn black_pixels(binary: &RasterImage) -> Result<BinaryMask> {
    let mut bits = Vec::with_capacity(binary.pixels().len());
    for (i, &p) in binary.pixels().iter().enumerate() {
        match p {
            [0, 0, 0] => bits.push(true),
            [255, 255, 255] => bits.push(false),
            value => {
                let w = binary.width() as usize;
                return Err(Error::NonBinaryPixel { x: (i % w) as u32, y: (i / w) as u32, value });
            }
        }
    }
    BinaryMask::new(binary.width(), binary.height(), bits)
}

/// Raster plan: each maximal horizontal run of black pixels becomes one cut
/// along the row's center line. Rows go top to bottom; even rows run left to
/// right, odd rows right to left.
pub fn plan_toolpath(binary: &RasterImage, cfg: &MachineConfig) -> Result<Toolpath> {
    cfg.validate()?;
    let black = black_pixels(binary)?;
    let (w, h) = black.dimensions();
    let mm = cfg.mm_per_pixel;
    let mut runs = Vec::new();
    for row in 0..h {
        let y = (h - 1 - row) as f64 * mm;
        let mut row_runs = Vec::new();
        let mut col = 0;
        while col < w {
            if !black.get(col, row) {
                col += 1;
                continue;
            }
            let first = col;
            while col < w && black.get(col, row) {
                col += 1;
            }
            row_runs.push(Run { start: (first as f64 * mm, y), end: ((col - 1) as f64 * mm, y) });
        }
        if row % 2 == 1 {
            row_runs.reverse();
            row_runs.iter_mut().for_each(|r| *r = r.reversed());
        }
        runs.extend(row_runs);
    }
    Ok(Toolpath::from_runs(&runs, *cfg))
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Greedy nearest-neighbour reordering of runs from the origin, flipping a
/// run when its far end is the closer one. Falls back to the input order
/// when the greedy order would lengthen rapid travel.
pub fn optimize_travel(toolpath: &Toolpath) -> Toolpath {
    let runs = toolpath.runs();
    if runs.len() < 2 {
        return toolpath.clone();
    }
    let mut remaining: Vec<Option<Run>> = runs.into_iter().map(Some).collect();
    let mut ordered = Vec::with_capacity(remaining.len());
    let mut pos = (0.0, 0.0);
    for _ in 0..remaining.len() {
        let mut best: Option<(usize, bool, f64)> = None;
        for (i, run) in remaining.iter().enumerate() {
            let Some(run) = run else { continue };
            for (flip, d) in [(false, dist(pos, run.start)), (true, dist(pos, run.end))] {
                if best.map_or(true, |(_, _, bd)| d < bd) {
                    best = Some((i, flip, d));
                }
            }
        }
        let Some((i, flip, _)) = best else { break };
        let run = remaining[i].take().expect("selected run is unvisited");
        let run = if flip { run.reversed() } else { run };
        pos = run.end;
        ordered.push(run);
    }
    let candidate = Toolpath::from_runs(&ordered, toolpath.config);
    if candidate.rapid_length() <= toolpath.rapid_length() {
        candidate
    } else {
        toolpath.clone()
    }
}
