use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use resincarve_core::evaluation::{classify_quality, iou, run_evaluation, summarize, QualityClass};
use resincarve_core::imaging::{load_manifest, save_image, save_mask, BinaryMask, RasterImage};
use resincarve_core::Error;

const REFERENCE_IOU: [(&str, u32, u32, f64); 12] = [
    ("a", 288, 302, 54.1),
    ("b", 268, 342, 97.5),
    ("c", 266, 308, 37.4),
    ("d", 306, 290, 11.8),
    ("e", 402, 424, 99.3),
    ("f", 274, 288, 98.5),
    ("g", 232, 264, 53.3),
    ("h", 250, 264, 97.2),
    ("i", 292, 308, 5.4),
    ("j", 230, 242, 16.7),
    ("k", 334, 326, 98.1),
    ("l", 254, 374, 97.4),
];

fn brute_force(a: &BinaryMask, b: &BinaryMask) -> (u64, u64) {
    let (mut inter, mut union) = (0, 0);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(x, y), b.get(x, y));
            if p && q {
                inter += 1;
            }
            if p || q {
                union += 1;
            }
        }
    }
    (inter, union)
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1u32..=64, 1u32..=64, 0.0f64..=1.0).prop_flat_map(|(w, h, density)| {
        let n = (w * h) as usize;
        let bits = prop::collection::vec(prop::bool::weighted(density.clamp(0.0, 1.0)), n);
        (bits.clone(), bits).prop_map(move |(a, b)| {
            (BinaryMask::new(w, h, a).unwrap(), BinaryMask::new(w, h, b).unwrap())
        })
    })
}

proptest! {
    #[test]
    fn iou_matches_pixel_counting((a, b) in mask_pair()) {
        let s = iou(&a, &b).unwrap();
        let (inter, union) = brute_force(&a, &b);
        prop_assert_eq!((s.intersection, s.union), (inter, union));
        let expected = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        prop_assert_eq!(s.ratio, expected);
    }

    #[test]
    fn iou_is_symmetric_and_reflexive((a, b) in mask_pair()) {
        prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        prop_assert_eq!(iou(&a, &a).unwrap().ratio, 1.0);
    }

    #[test]
    fn summary_is_ordered(scores in prop::collection::vec(0.0f64..=100.0, 1..20)) {
        let s = summarize(&scores, QualityClass::Good).unwrap();
        prop_assert!(s.min <= s.median && s.median <= s.max);
        prop_assert!(s.min <= s.average + 1e-9 && s.average <= s.max + 1e-9);
    }

    #[test]
    fn classification_is_total_with_exact_boundaries(tenths in 0i64..=1000) {
        let p = tenths as f64 / 10.0;
        let class = QualityClass::from_percent(p);
        let expected = if tenths < 400 { QualityClass::Poor } else if tenths > 600 { QualityClass::Good } else { QualityClass::Moderate };
        prop_assert_eq!(class, expected);
    }
}

#[test]
fn summarize_singleton_is_constant() {
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..100 {
        let v = (rng.gen_range(0..=1000) as f64) / 10.0;
        let s = summarize(&[v], QualityClass::Poor).unwrap();
        assert_eq!(s.rounded(), [v, v, v, v]);
    }
}

/// Ground truth covers the first 1000 pixels in row order; the prediction
/// covers the first `round(10 p)` of those, so IoU is exactly p percent.
fn write_entry(dir: &Path, id: &str, w: u32, h: u32, percent: f64) -> BinaryMask {
    let overlap = (percent * 10.0).round() as u32;
    let truth = BinaryMask::from_fn(w, h, |x, y| y * w + x < 1000);
    let pred = BinaryMask::from_fn(w, h, |x, y| y * w + x < overlap);
    let img = RasterImage::from_fn(w, h, |x, y| if truth.get(x, y) { [60, 40, 20] } else { [200, 180, 140] });
    save_image(&img, dir.join(format!("{id}.png"))).unwrap();
    save_mask(&truth, dir.join(format!("{id}_mask.png"))).unwrap();
    pred
}

fn reference_dataset(dir: &Path) -> BTreeMap<String, BinaryMask> {
    let mut preds = BTreeMap::new();
    let mut entries = Vec::new();
    for (id, w, h, p) in REFERENCE_IOU {
        preds.insert(id.to_string(), write_entry(dir, id, w, h, p));
        entries.push(serde_json::json!({"id": id, "image": format!("{id}.png"), "mask": format!("{id}_mask.png")}));
    }
    fs::write(dir.join("manifest.json"), serde_json::json!({ "entries": entries }).to_string()).unwrap();
    preds
}

#[test]
fn reference_dataset_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let preds = reference_dataset(dir.path());
    let manifest = load_manifest(dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.ids().collect::<Vec<_>>(), REFERENCE_IOU.iter().map(|t| t.0).collect::<Vec<_>>());
    let report = run_evaluation(&manifest, &preds).unwrap();

    for (row, (id, w, h, p)) in report.rows.iter().zip(REFERENCE_IOU) {
        assert_eq!((row.id.as_str(), row.width, row.height), (id, w, h));
        assert_eq!(row.iou_percent, p, "{id}");
        assert_eq!(row.class, classify_quality(&row.iou));
    }
    let counts = report.class_counts();
    assert_eq!(counts[&QualityClass::Good], 6);
    assert_eq!(counts[&QualityClass::Moderate], 2);
    assert_eq!(counts[&QualityClass::Poor], 4);

    assert_eq!(report.summary(QualityClass::Good).unwrap().rounded(), [97.2, 97.8, 98.0, 99.3]);
    assert_eq!(report.summary(QualityClass::Moderate).unwrap().rounded(), [53.3, 53.7, 53.7, 54.1]);
    assert_eq!(report.summary(QualityClass::Poor).unwrap().rounded(), [5.4, 14.3, 17.8, 37.4]);

    let table = report.to_table();
    assert!(table.contains("288 x 302"), "{table}");
    assert!(table.contains("99.3"));
}

#[test]
fn missing_prediction_names_the_id() {
    let dir = tempfile::tempdir().unwrap();
    let mut preds = reference_dataset(dir.path());
    preds.remove("c");
    let manifest = load_manifest(dir.path().join("manifest.json")).unwrap();
    match run_evaluation(&manifest, &preds) {
        Err(Error::MissingPrediction(id)) => assert_eq!(id, "c"),
        other => panic!("expected missing prediction, got {other:?}"),
    }
}

#[test]
fn perfect_prediction_is_single_good_row() {
    let dir = tempfile::tempdir().unwrap();
    let pred = write_entry(dir.path(), "x", 40, 30, 100.0);
    fs::write(dir.path().join("m.json"), r#"{"entries":[{"id":"x","image":"x.png","mask":"x_mask.png"}]}"#).unwrap();
    let manifest = load_manifest(dir.path().join("m.json")).unwrap();
    let report = run_evaluation(&manifest, &BTreeMap::from([("x".to_string(), pred)])).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!((report.rows[0].iou_percent, report.rows[0].class), (100.0, QualityClass::Good));
}
