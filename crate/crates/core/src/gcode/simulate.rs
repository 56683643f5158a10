use serde::{Deserialize, Serialize};

use super::emit::GcodeProgram;
use super::{GcodeError, MachineConfig};
use crate::imaging::BinaryMask;

/// Depth tolerance in millimetres.
const Z_TOLERANCE: f64 = 1e-6;
/// Slack on the tool radius so cells exactly on the boundary count.
const RADIUS_SLACK: f64 = 1e-9;

/// Cells the simulated tool passed over at cutting depth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalMap {
    pub width: u32,
    pub height: u32,
    pub removed: Vec<bool>,
}

impl RemovalMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, removed: vec![false; width as usize * height as usize] }
    }

    pub fn count(&self) -> usize {
        self.removed.iter().filter(|&&r| r).count()
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.removed[row as usize * self.width as usize + col as usize]
    }

    pub fn to_mask(&self) -> BinaryMask {
        BinaryMask::new(self.width, self.height, self.removed.clone()).expect("dimensions are consistent")
    }

    pub fn matches(&self, mask: &BinaryMask) -> bool {
        mask.dimensions() == (self.width, self.height) && mask.bits() == self.removed.as_slice()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub removal: RemovalMap,
    pub warnings: Vec<String>,
    /// XY distance travelled at cutting depth.
    pub cut_length_mm: f64,
    /// XY distance travelled by `G0` moves.
    pub rapid_length_mm: f64,
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0) };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - cx).hypot(p.1 - cy)
}

struct Sweeper<'a> {
    map: &'a mut RemovalMap,
    mm: f64,
    radius: f64,
}

impl Sweeper<'_> {
    /// Marks every cell whose center lies within the tool radius of `a..b`.
    fn sweep(&mut self, a: (f64, f64), b: (f64, f64)) {
        let (w, h) = (self.map.width as i64, self.map.height as i64);
        let r = self.radius + RADIUS_SLACK;
        let col_lo = (((a.0.min(b.0) - r) / self.mm).ceil() as i64).max(0);
        let col_hi = (((a.0.max(b.0) + r) / self.mm).floor() as i64).min(w - 1);
        // y = (h - 1 - row) * mm
        let row_lo = ((h - 1) as f64 - (a.1.max(b.1) + r) / self.mm).ceil() as i64;
        let row_hi = ((h - 1) as f64 - (a.1.min(b.1) - r) / self.mm).floor() as i64;
        for row in row_lo.max(0)..=row_hi.min(h - 1) {
            let cy = (h - 1 - row) as f64 * self.mm;
            for col in col_lo..=col_hi {
                let cx = col as f64 * self.mm;
                if point_segment_distance((cx, cy), a, b) <= r {
                    self.map.removed[(row * w + col) as usize] = true;
                }
            }
        }
    }
}

/// Replays `program` from `(0, 0, 0)` and records every cell swept while
/// the tool is at or below `cut_z`.
pub fn simulate_toolpath(
    program: &GcodeProgram,
    cfg: &MachineConfig,
    width: u32,
    height: u32,
) -> Result<SimulationReport, GcodeError> {
    cfg.validate()?;
    let mut map = RemovalMap::new(width, height);
    let mut sweeper = Sweeper { map: &mut map, mm: cfg.mm_per_pixel, radius: cfg.tool_diameter() / 2.0 };
    let mut warnings = Vec::new();
    let (mut cut_len, mut rapid_len) = (0.0, 0.0);
    let mut pos = (0.0f64, 0.0f64, 0.0f64);
    let mut motion: Option<u8> = None;
    let mut spindle = false;
    let cut_level = cfg.cut_z + Z_TOLERANCE;

    for line in &program.lines {
        for w in &line.words {
            match (w.letter, w.value) {
                ('G', v) if v == 0.0 || v == 1.0 => motion = Some(v as u8),
                ('M', v) if v == 3.0 => spindle = true,
                ('M', v) if v == 5.0 => spindle = false,
                _ => {}
            }
        }
        let (x, y, z) = (line.get('X'), line.get('Y'), line.get('Z'));
        if x.is_none() && y.is_none() && z.is_none() {
            continue;
        }
        let Some(mode) = motion else {
            return Err(GcodeError::Simulation { line: line.line_no, message: "motion without G0/G1".into() });
        };
        let target = (x.unwrap_or(pos.0), y.unwrap_or(pos.1), z.unwrap_or(pos.2));
        if target.2 < cfg.cut_z - Z_TOLERANCE {
            return Err(GcodeError::Simulation {
                line: line.line_no,
                message: format!("Z{:.3} is below cut depth {:.3}", target.2, cfg.cut_z),
            });
        }

        let xy_len = (target.0 - pos.0).hypot(target.1 - pos.1);
        let moves_xy = xy_len > 0.0;
        if mode == 0 {
            rapid_len += xy_len;
        }
        let (z_lo, z_hi) = (pos.2.min(target.2), pos.2.max(target.2));
        if moves_xy && z_lo < -Z_TOLERANCE && z_hi > cut_level {
            warnings.push(format!("line {}: XY move between surface and cut depth (gouge)", line.line_no));
        }
        if z_lo <= cut_level {
            // portion of the move at or below the cut plane
            let (t0, t1) = if pos.2 == target.2 {
                (0.0, 1.0)
            } else {
                let t_cross = ((cut_level - pos.2) / (target.2 - pos.2)).clamp(0.0, 1.0);
                if pos.2 <= cut_level { (0.0, t_cross) } else { (t_cross, 1.0) }
            };
            let at = |t: f64| (pos.0 + t * (target.0 - pos.0), pos.1 + t * (target.1 - pos.1));
            let (a, b) = (at(t0), at(t1));
            sweeper.sweep(a, b);
            cut_len += (b.0 - a.0).hypot(b.1 - a.1);
            if mode == 0 && moves_xy {
                warnings.push(format!("line {}: rapid move at cutting depth", line.line_no));
            }
            if !spindle {
                warnings.push(format!("line {}: cutting with spindle stopped", line.line_no));
            }
        }
        pos = target;
    }

    Ok(SimulationReport { removal: map, warnings, cut_length_mm: cut_len, rapid_length_mm: rapid_len })
}
