//! IoU scoring, quality banding, summary statistics and resin grading.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, luma, BinaryMask, DatasetManifest, RasterImage};

/// Rounds to one decimal place, half away from zero. Values within 1e-6 of a
/// tenth boundary are snapped first so that sums like `(11.8 + 16.7) / 2`
/// round as their decimal value would.
pub fn round_1dp(value: f64) -> f64 {
    let scaled = ((value * 10.0) * 1e6).round() / 1e6;
    scaled.round() / 10.0
}

fn tenths(value: f64) -> i64 {
    (round_1dp(value) * 10.0).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoUScore {
    pub ratio: f64,
    pub intersection: u64,
    pub union: u64,
}

impl IoUScore {
    pub fn percent_1dp(&self) -> f64 {
        round_1dp(self.ratio * 100.0)
    }
}

/// `|pred ∧ truth| / |pred ∨ truth|`; two empty masks score 1.0.
pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<IoUScore> {
    truth.ensure_dimensions(pred.width(), pred.height())?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&a, &b) in pred.bits().iter().zip(truth.bits()) {
        inter += (a && b) as u64;
        union += (a || b) as u64;
    }
    let ratio = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok(IoUScore { ratio, intersection: inter, union })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QualityClass {
    Good,
    Moderate,
    Poor,
}

impl QualityClass {
    pub const ALL: [QualityClass; 3] = [QualityClass::Good, QualityClass::Moderate, QualityClass::Poor];

    /// Poor below 40.0 %, Good above 60.0 %, Moderate in between (inclusive),
    /// compared on the one-decimal percent.
    pub fn from_percent(percent: f64) -> Self {
        match tenths(percent) {
            t if t < 400 => QualityClass::Poor,
            t if t > 600 => QualityClass::Good,
            _ => QualityClass::Moderate,
        }
    }
}

impl fmt::Display for QualityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QualityClass::Good => "Good",
            QualityClass::Moderate => "Moderate",
            QualityClass::Poor => "Poor",
        })
    }
}

pub fn classify_quality(score: &IoUScore) -> QualityClass {
    QualityClass::from_percent(score.percent_1dp())
}

/// Per-class min / median / average / max of IoU percents. Fields hold the
/// unrounded values; the `*_1dp` accessors give the reported figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub class: QualityClass,
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub average: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn min_1dp(&self) -> f64 {
        round_1dp(self.min)
    }

    pub fn median_1dp(&self) -> f64 {
        round_1dp(self.median)
    }

    pub fn average_1dp(&self) -> f64 {
        round_1dp(self.average)
    }

    pub fn max_1dp(&self) -> f64 {
        round_1dp(self.max)
    }

    pub fn rounded(&self) -> [f64; 4] {
        [self.min_1dp(), self.median_1dp(), self.average_1dp(), self.max_1dp()]
    }
}

pub fn summarize(scores: &[f64], class: QualityClass) -> Result<SummaryStats> {
    if scores.is_empty() {
        return Err(Error::EmptyInput(format!("no scores to summarize for class {class}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
    Ok(SummaryStats {
        class,
        count: n,
        min: sorted[0],
        median,
        average: sorted.iter().sum::<f64>() / n as f64,
        max: sorted[n - 1],
    })
}

/// Groups percents by quality class and summarizes each non-empty class,
/// in Good, Moderate, Poor order.
pub fn summarize_by_class(percents: &[f64]) -> Vec<SummaryStats> {
    QualityClass::ALL
        .iter()
        .filter_map(|&class| {
            let members: Vec<f64> =
                percents.iter().copied().filter(|&p| QualityClass::from_percent(p) == class).collect();
            summarize(&members, class).ok()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grade {
    SuperA,
    A,
    B,
    C,
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::SuperA => "Super A",
            Grade::A => "A",
            Grade::B => "B",
            Grade::C => "C",
        })
    }
}

/// Operating points for the color-based grade rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradeConfig {
    /// Mean luma below this grades A (black).
    pub black_luma_max: f64,
    /// Mean luma at or above this, with a yellow-leaning hue, grades C.
    pub light_luma_min: f64,
    /// Mean per-channel standard deviation above this grades Super A.
    pub variety_std_min: f64,
}

impl Default for GradeConfig {
    fn default() -> Self {
        Self { black_luma_max: 60.0, light_luma_min: 170.0, variety_std_min: 55.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    pub pixels: usize,
    pub mean_luma: f64,
    pub mean_rgb: [f64; 3],
    pub std_rgb: [f64; 3],
}

pub fn region_color_stats(img: &RasterImage, region: &BinaryMask) -> Result<ColorStats> {
    region.ensure_dimensions(img.width(), img.height())?;
    let mut n = 0usize;
    let mut luma_sum = 0u64;
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    for (&p, _) in img.pixels().iter().zip(region.bits()).filter(|(_, &b)| b) {
        n += 1;
        luma_sum += luma(p) as u64;
        for c in 0..3 {
            sum[c] += p[c] as f64;
            sq[c] += p[c] as f64 * p[c] as f64;
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput("cannot grade an empty region".into()));
    }
    let nf = n as f64;
    let mean_rgb = [sum[0] / nf, sum[1] / nf, sum[2] / nf];
    let std_rgb = [0, 1, 2].map(|c| (sq[c] / nf - mean_rgb[c] * mean_rgb[c]).max(0.0).sqrt());
    Ok(ColorStats { pixels: n, mean_luma: luma_sum as f64 / nf, mean_rgb, std_rgb })
}

pub fn grade_region(img: &RasterImage, region: &BinaryMask) -> Result<Grade> {
    grade_region_with(img, region, &GradeConfig::default())
}

pub fn grade_region_with(img: &RasterImage, region: &BinaryMask, cfg: &GradeConfig) -> Result<Grade> {
    let s = region_color_stats(img, region)?;
    let [r, g, b] = s.mean_rgb;
    let variety = s.std_rgb.iter().sum::<f64>() / 3.0;
    Ok(if s.mean_luma < cfg.black_luma_max {
        Grade::A
    } else if s.mean_luma >= cfg.light_luma_min && r >= g && g > b {
        Grade::C
    } else if variety > cfg.variety_std_min {
        Grade::SuperA
    } else {
        Grade::B
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub iou: IoUScore,
    pub iou_percent: f64,
    pub class: QualityClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summaries: Vec<SummaryStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grade: Option<Grade>,
}

impl EvalReport {
    pub fn class_counts(&self) -> BTreeMap<QualityClass, usize> {
        let mut counts = BTreeMap::new();
        for row in &self.rows {
            *counts.entry(row.class).or_insert(0) += 1;
        }
        counts
    }

    pub fn summary(&self, class: QualityClass) -> Option<&SummaryStats> {
        self.summaries.iter().find(|s| s.class == class)
    }

    /// Plain-text tables: one row per image, then one row per quality class.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:<20} {:>8}  {}", "Image", "Resolution (w x h)", "IoU (%)", "Quality");
        for row in &self.rows {
            let res = format!("{} x {}", row.width, row.height);
            let _ = writeln!(out, "{:<8} {:<20} {:>8.1}  {}", row.id, res, row.iou_percent, row.class);
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>12} {:>8}",
            "Quality", "Min (%)", "Med (%)", "Average (%)", "Max (%)"
        );
        for s in &self.summaries {
            let [min, med, avg, max] = s.rounded();
            let _ = writeln!(out, "{:<10} {:>8.1} {:>8.1} {:>12.1} {:>8.1}", s.class.to_string(), min, med, avg, max);
        }
        if let Some(grade) = self.grade {
            let _ = writeln!(out, "\nGrade: {grade}");
        }
        out
    }
}

/// A labelled prediction / ground-truth pair.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub prediction: BinaryMask,
    pub truth: BinaryMask,
}

/// Scores every item and assembles the report, ordered by id.
pub fn evaluate_items(items: &[EvalItem]) -> Result<EvalReport> {
    let mut rows = items
        .par_iter()
        .map(|item| {
            let score = iou(&item.prediction, &item.truth).map_err(|e| Error::ManifestEntry {
                id: item.id.clone(),
                reason: e.to_string(),
            })?;
            Ok(EvalRow {
                id: item.id.clone(),
                width: item.truth.width(),
                height: item.truth.height(),
                iou: score,
                iou_percent: score.percent_1dp(),
                class: classify_quality(&score),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let percents: Vec<f64> = rows.iter().map(|r| r.iou_percent).collect();
    Ok(EvalReport { summaries: summarize_by_class(&percents), rows, grade: None })
}

pub fn run_evaluation(manifest: &DatasetManifest, predictions: &BTreeMap<String, BinaryMask>) -> Result<EvalReport> {
    if let Some(missing) = manifest.ids().find(|id| !predictions.contains_key(*id)) {
        return Err(Error::MissingPrediction(missing.to_string()));
    }
    let items = manifest
        .entries
        .par_iter()
        .map(|entry| {
            Ok(EvalItem {
                id: entry.id.clone(),
                prediction: predictions[&entry.id].clone(),
                truth: imaging::load_mask(&entry.mask_path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_items(&items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: u32, h: u32, on: &[(u32, u32)]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| on.contains(&(x, y)))
    }

    #[test]
    fn iou_examples() {
        let a = mask(3, 3, &[(0, 0), (1, 1)]);
        assert_eq!(iou(&a, &a).unwrap().ratio, 1.0);
        let b = mask(3, 3, &[(2, 2)]);
        assert_eq!(iou(&a, &b).unwrap().ratio, 0.0);
        // pred {(0,0),(0,1)}, truth {(0,1),(1,1)}: 1 shared of 3
        let pred = mask(2, 2, &[(0, 0), (0, 1)]);
        let truth = mask(2, 2, &[(0, 1), (1, 1)]);
        let s = iou(&pred, &truth).unwrap();
        assert_eq!((s.intersection, s.union), (1, 3));
        assert!((s.ratio - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.percent_1dp(), 33.3);
    }

    #[test]
    fn iou_empty_masks_agree() {
        let e = BinaryMask::empty(4, 4);
        assert_eq!(iou(&e, &e).unwrap().ratio, 1.0);
    }

    #[test]
    fn iou_dimension_mismatch() {
        assert!(matches!(
            iou(&BinaryMask::empty(2, 2), &BinaryMask::empty(3, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn quality_examples_and_boundaries() {
        assert_eq!(QualityClass::from_percent(54.1), QualityClass::Moderate);
        assert_eq!(QualityClass::from_percent(97.5), QualityClass::Good);
        assert_eq!(QualityClass::from_percent(37.4), QualityClass::Poor);
        assert_eq!(QualityClass::from_percent(39.9), QualityClass::Poor);
        assert_eq!(QualityClass::from_percent(40.0), QualityClass::Moderate);
        assert_eq!(QualityClass::from_percent(60.0), QualityClass::Moderate);
        assert_eq!(QualityClass::from_percent(60.1), QualityClass::Good);
        // 39.96 reports as 40.0, so it is Moderate
        assert_eq!(QualityClass::from_percent(39.96), QualityClass::Moderate);
    }

    #[test]
    fn classify_uses_rounded_percent() {
        let s = IoUScore { ratio: 0.59996, intersection: 0, union: 0 };
        assert_eq!(s.percent_1dp(), 60.0);
        assert_eq!(classify_quality(&s), QualityClass::Moderate);
    }

    #[test]
    fn rounding_half_away_from_zero() {
        assert_eq!(round_1dp(14.25), 14.3);
        assert_eq!(round_1dp((11.8 + 16.7) / 2.0), 14.3);
        assert_eq!(round_1dp(17.825), 17.8);
        assert_eq!(round_1dp(-0.25), -0.3);
        assert_eq!(round_1dp(0.05), 0.1);
    }

    #[test]
    fn summarize_reference_rows() {
        let good = summarize(&[97.2, 97.4, 97.5, 98.1, 98.5, 99.3], QualityClass::Good).unwrap();
        assert_eq!(good.rounded(), [97.2, 97.8, 98.0, 99.3]);
        let moderate = summarize(&[53.3, 54.1], QualityClass::Moderate).unwrap();
        assert_eq!(moderate.rounded(), [53.3, 53.7, 53.7, 54.1]);
        let poor = summarize(&[5.4, 11.8, 16.7, 37.4], QualityClass::Poor).unwrap();
        assert_eq!(poor.rounded(), [5.4, 14.3, 17.8, 37.4]);
    }

    #[test]
    fn summarize_singleton_and_empty() {
        let s = summarize(&[42.0], QualityClass::Moderate).unwrap();
        assert_eq!(s.rounded(), [42.0; 4]);
        assert!(matches!(summarize(&[], QualityClass::Good), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn grade_examples() {
        let full = BinaryMask::full(4, 4);
        let g = |c| grade_region(&RasterImage::filled(4, 4, c), &full).unwrap();
        assert_eq!(g([10, 10, 10]), Grade::A);
        assert_eq!(g([230, 220, 160]), Grade::C);
        assert_eq!(g([120, 75, 40]), Grade::B);
        // light but blue-leaning is not "yellowish"
        assert_eq!(g([180, 200, 230]), Grade::B);
    }

    #[test]
    fn grade_varied_region_is_super_a() {
        let img = RasterImage::from_fn(4, 4, |x, y| if (x + y) % 2 == 0 { [0, 0, 0] } else { [255, 255, 255] });
        assert_eq!(grade_region(&img, &BinaryMask::full(4, 4)).unwrap(), Grade::SuperA);
    }

    #[test]
    fn grade_empty_region_errors() {
        let img = RasterImage::filled(2, 2, [1, 1, 1]);
        assert!(matches!(grade_region(&img, &BinaryMask::empty(2, 2)), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn grade_ignores_position() {
        let img = RasterImage::from_fn(6, 1, |x, _| if x < 3 { [90, 60, 30] } else { [200, 200, 200] });
        let left = BinaryMask::from_fn(6, 1, |x, _| x < 3);
        let shifted = RasterImage::from_fn(6, 1, |x, _| if x >= 3 { [90, 60, 30] } else { [200, 200, 200] });
        let right = BinaryMask::from_fn(6, 1, |x, _| x >= 3);
        assert_eq!(
            region_color_stats(&img, &left).unwrap(),
            region_color_stats(&shifted, &right).unwrap()
        );
    }

    #[test]
    fn report_single_perfect_row() {
        let m = BinaryMask::from_fn(5, 5, |x, _| x < 2);
        let report = evaluate_items(&[EvalItem { id: "a".into(), prediction: m.clone(), truth: m }]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].iou_percent, 100.0);
        assert_eq!(report.rows[0].class, QualityClass::Good);
        assert_eq!(report.summaries.len(), 1);
        let table = report.to_table();
        assert!(table.contains("5 x 5"), "{table}");
        assert!(table.contains("100.0"), "{table}");
    }

    #[test]
    fn run_evaluation_missing_prediction() {
        let manifest = DatasetManifest {
            entries: ["a", "c"]
                .iter()
                .map(|id| imaging::ManifestEntry {
                    id: id.to_string(),
                    image_path: "x.png".into(),
                    mask_path: "x.png".into(),
                })
                .collect(),
        };
        let mut preds = BTreeMap::new();
        preds.insert("a".to_string(), BinaryMask::empty(1, 1));
        match run_evaluation(&manifest, &preds) {
            Err(Error::MissingPrediction(id)) => assert_eq!(id, "c"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
