use std::fmt;

use super::plan::{SegmentKind, Toolpath};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Word {
    /// Always uppercase.
    pub letter: char,
    pub value: f64,
}

impl Word {
    pub fn new(letter: char, value: f64) -> Self {
        Self { letter, value }
    }
}

/// Three decimals, with negative zero printed as `0.000`.
pub fn format_coord(value: f64) -> String {
    let s = format!("{value:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

/// Up to three decimals with trailing zeros removed (`300`, `150.5`).
pub fn format_feed(value: f64) -> String {
    let s = format_coord(value);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.letter {
            'X' | 'Y' | 'Z' => write!(f, "{}{}", self.letter, format_coord(self.value)),
            'F' => write!(f, "F{}", format_feed(self.value)),
            _ => write!(f, "{}{}", self.letter, self.value as i64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    /// 1-based line number in the source text.
    pub line_no: usize,
    pub words: Vec<Word>,
}

impl Line {
    pub fn get(&self, letter: char) -> Option<f64> {
        self.words.iter().find(|w| w.letter == letter).map(|w| w.value)
    }

    pub fn has(&self, letter: char, value: f64) -> bool {
        self.words.iter().any(|w| w.letter == letter && w.value == value)
    }
}

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, w) in self.words.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{w}")?;
        }
        Ok(())
    }
}

/// Canonical text: one line per command, single spaces, LF endings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GcodeProgram {
    pub lines: Vec<Line>,
}

impl GcodeProgram {
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    fn push(&mut self, words: Vec<Word>) {
        let line_no = self.lines.len() + 1;
        self.lines.push(Line { line_no, words });
    }
}

impl fmt::Display for GcodeProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

pub fn emit_gcode(toolpath: &Toolpath) -> GcodeProgram {
    let cfg = &toolpath.config;
    let mut prog = GcodeProgram::default();
    prog.push(vec![Word::new('G', 21.0)]);
    prog.push(vec![Word::new('G', 90.0)]);
    prog.push(vec![Word::new('M', 3.0), Word::new('S', cfg.spindle_rpm as f64)]);
    prog.push(vec![Word::new('G', 0.0), Word::new('Z', cfg.safe_z)]);

    // the footer's return to origin replaces a trailing homing rapid
    let mut segments = toolpath.segments.as_slice();
    if let Some((last, rest)) = segments.split_last() {
        if last.kind == SegmentKind::Rapid && last.to.x == 0.0 && last.to.y == 0.0 {
            segments = rest;
        }
    }

    let mut feed: Option<f64> = None;
    let mut with_feed = |mut words: Vec<Word>, rate: f64| {
        if feed != Some(rate) {
            words.push(Word::new('F', rate));
            feed = Some(rate);
        }
        words
    };
    for seg in segments {
        let words = match seg.kind {
            SegmentKind::Rapid => vec![Word::new('G', 0.0), Word::new('X', seg.to.x), Word::new('Y', seg.to.y)],
            SegmentKind::Plunge => with_feed(vec![Word::new('G', 1.0), Word::new('Z', seg.to.z)], cfg.plunge_rate),
            SegmentKind::Cut => with_feed(
                vec![Word::new('G', 1.0), Word::new('X', seg.to.x), Word::new('Y', seg.to.y)],
                cfg.feed_rate,
            ),
            SegmentKind::Retract => vec![Word::new('G', 0.0), Word::new('Z', seg.to.z)],
        };
        prog.push(words);
    }

    prog.push(vec![Word::new('G', 0.0), Word::new('X', 0.0), Word::new('Y', 0.0)]);
    prog.push(vec![Word::new('M', 5.0)]);
    prog
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcode::{plan_toolpath, MachineConfig};
    use crate::imaging::RasterImage;

    const HEADER: &str = "G21\nG90\nM3 S10000\nG0 Z5.000\n";
    const FOOTER: &str = "G0 X0.000 Y0.000\nM5\n";

    #[test]
    fn empty_toolpath_is_header_and_footer() {
        let tp = plan_toolpath(&RasterImage::filled(4, 4, [255; 3]), &MachineConfig::new(1.0)).unwrap();
        let prog = emit_gcode(&tp);
        assert_eq!(prog.lines.len(), 6);
        assert_eq!(prog.to_text(), format!("{HEADER}{FOOTER}"));
    }

    #[test]
    fn three_pixel_run_text() {
        let tp = plan_toolpath(&RasterImage::filled(3, 1, [0; 3]), &MachineConfig::new(1.0)).unwrap();
        let text = emit_gcode(&tp).to_text();
        assert_eq!(
            text,
            format!("{HEADER}G1 Z-1.000 F100\nG1 X2.000 Y0.000 F300\nG0 Z5.000\n{FOOTER}")
        );
        assert!(text.lines().any(|l| l == "G1 X2.000 Y0.000 F300"));
    }

    #[test]
    fn feed_word_elided_when_unchanged() {
        // two isolated pixels: both plunges use the plunge rate, second F elided
        let img = RasterImage::from_fn(3, 1, |x, _| if x == 1 { [255; 3] } else { [0; 3] });
        let text = emit_gcode(&plan_toolpath(&img, &MachineConfig::new(1.0)).unwrap()).to_text();
        let plunges: Vec<_> = text.lines().filter(|l| l.starts_with("G1 Z")).collect();
        assert_eq!(plunges, vec!["G1 Z-1.000 F100", "G1 Z-1.000"]);
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_coord(-0.0), "0.000");
        assert_eq!(format_coord(-0.0001), "0.000");
        assert_eq!(format_coord(1.23456), "1.235");
        assert_eq!(format_feed(300.0), "300");
        assert_eq!(format_feed(150.5), "150.5");
        assert_eq!(format_feed(0.125), "0.125");
        assert_eq!(Word::new('S', 12000.0).to_string(), "S12000");
    }

    #[test]
    fn canonical_text_has_no_trailing_whitespace() {
        let img = RasterImage::from_fn(5, 4, |x, y| if (x * y) % 3 == 0 { [0; 3] } else { [255; 3] });
        let text = emit_gcode(&plan_toolpath(&img, &MachineConfig::new(0.25)).unwrap()).to_text();
        assert!(text.ends_with('\n'));
        assert!(!text.contains('\r'));
        for line in text.lines() {
            assert_eq!(line, line.trim_end());
            assert!(!line.contains("  "));
        }
    }
}
