#![cfg(unix)]

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use resincarve_core::imaging::{load_image, save_mask, BinaryMask, RasterImage};
use resincarve_core::prompts::{dedup_prompts, PromptLabel, PromptPoint, PromptSet, PromptSpec};
use resincarve_core::segmentation::{segment, segment_external, BackendConfig, ExternalConfig, ExternalError};
use resincarve_core::Error;

struct Stub {
    _dir: tempfile::TempDir,
    cfg: ExternalConfig,
    fixtures: PathBuf,
}

/// A worker script that copies prepared masks into the exchange directory
/// and runs `body` there.
fn stub(body: &str, timeout_secs: f64) -> Stub {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fixtures");
    fs::create_dir(&fixtures).unwrap();
    let script = dir.path().join("worker.sh");
    fs::write(
        &script,
        format!("#!/bin/sh\nset -e\ncd \"$1\"\ncp {}/*.png . 2>/dev/null || true\n{body}\n", fixtures.display()),
    )
    .unwrap();
    fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
    let cfg = ExternalConfig { exchange_dir: dir.path().join("exchange"), command: script, timeout_secs };
    Stub { _dir: dir, cfg, fixtures }
}

fn image() -> RasterImage {
    RasterImage::from_fn(20, 20, |x, y| if x < 10 && y < 10 { [40, 30, 20] } else { [200, 180, 150] })
}

fn prompts(img: &RasterImage) -> PromptSet {
    dedup_prompts(&[PromptPoint::sample(img, 3, 3, PromptLabel::Foreground, 3).unwrap()], 0.0)
}

fn write_mask(dir: &Path, name: &str, mask: &BinaryMask) {
    save_mask(mask, dir.join(name)).unwrap();
}

#[test]
fn passthrough_single_proposal() {
    let s = stub(r#"echo '{"proposals":[{"mask":"all.png","score":0.9}]}' > proposals.json"#, 10.0);
    write_mask(&s.fixtures, "all.png", &BinaryMask::full(20, 20));
    let img = image();
    let r = segment_external(&img, &BinaryMask::full(20, 20), &prompts(&img), &s.cfg).unwrap();
    assert_eq!(r.proposals.len(), 1);
    assert_eq!(r.proposals[0].confidence, 0.9);
    assert_eq!(r.proposals[0].backend_id, "external");
    assert_eq!(r.final_mask.count(), 400);

    // the worker saw the input image and the prompt list
    let ex = &s.cfg.exchange_dir;
    assert_eq!(load_image(ex.join("input.png")).unwrap(), img);
    let sent: Vec<PromptSpec> = serde_json::from_str(&fs::read_to_string(ex.join("prompts.json")).unwrap()).unwrap();
    assert_eq!(sent, vec![PromptSpec { x: 3, y: 3, label: PromptLabel::Foreground }]);
    let raw = fs::read_to_string(ex.join("prompts.json")).unwrap();
    assert!(raw.contains(r#""label":"fg""#), "{raw}");
}

#[test]
fn proposals_are_resorted_by_score() {
    let s = stub(
        r#"echo '{"proposals":[{"mask":"low.png","score":0.2},{"mask":"high.png","score":0.8}]}' > proposals.json"#,
        10.0,
    );
    let low = BinaryMask::from_fn(20, 20, |x, _| x >= 15);
    let high = BinaryMask::from_fn(20, 20, |x, y| x < 10 && y < 10);
    write_mask(&s.fixtures, "low.png", &low);
    write_mask(&s.fixtures, "high.png", &high);
    let img = image();
    let r = segment_external(&img, &BinaryMask::full(20, 20), &prompts(&img), &s.cfg).unwrap();
    assert_eq!(r.scores(), vec![0.8, 0.2]);
    assert_eq!(r.proposals[0].mask, high);
    // default acceptance keeps only the 0.8 proposal
    assert_eq!(r.final_mask, high);
}

#[test]
fn scores_are_clamped() {
    let s = stub(
        r#"echo '{"proposals":[{"mask":"a.png","score":1.7},{"mask":"a.png","score":-3}]}' > proposals.json"#,
        10.0,
    );
    write_mask(&s.fixtures, "a.png", &BinaryMask::full(20, 20));
    let img = image();
    let r = segment_external(&img, &BinaryMask::full(20, 20), &prompts(&img), &s.cfg).unwrap();
    assert_eq!(r.scores(), vec![1.0, 0.0]);
}

#[test]
fn dimension_mismatch_is_reported() {
    let s = stub(r#"echo '{"proposals":[{"mask":"small.png","score":0.9}]}' > proposals.json"#, 10.0);
    write_mask(&s.fixtures, "small.png", &BinaryMask::full(10, 10));
    let img = image();
    let err = segment_external(&img, &BinaryMask::full(20, 20), &prompts(&img), &s.cfg).unwrap_err();
    match err {
        Error::External(ExternalError::DimensionMismatch { mask, actual_w, actual_h, expected_w, .. }) => {
            assert_eq!((mask.as_str(), actual_w, actual_h, expected_w), ("small.png", 10, 10, 20));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn timeout_is_reported() {
    let s = stub("sleep 5", 0.3);
    let img = image();
    let err = segment_external(&img, &BinaryMask::full(20, 20), &prompts(&img), &s.cfg).unwrap_err();
    assert!(matches!(err, Error::External(ExternalError::Timeout { .. })), "{err:?}");
}

#[test]
fn malformed_response_is_reported() {
    for body in [
        "echo 'not json' > proposals.json",
        r#"echo '{"proposals":[{"mask":"nope.png","score":0.5}]}' > proposals.json"#,
        r#"echo '{"items":[]}' > proposals.json"#,
        "true",
    ] {
        let s = stub(body, 10.0);
        let img = image();
        let err = segment_external(&img, &BinaryMask::full(20, 20), &prompts(&img), &s.cfg).unwrap_err();
        assert!(matches!(err, Error::External(ExternalError::MalformedResponse(_))), "{body}: {err:?}");
    }
}

#[test]
fn failing_worker_is_reported() {
    let s = stub("exit 3", 10.0);
    let img = image();
    let err = segment_external(&img, &BinaryMask::full(20, 20), &prompts(&img), &s.cfg).unwrap_err();
    assert!(matches!(err, Error::External(ExternalError::WorkerFailed { .. })), "{err:?}");
}

#[test]
fn final_mask_is_clipped_to_foreground() {
    let s = stub(r#"echo '{"proposals":[{"mask":"all.png","score":0.9}]}' > proposals.json"#, 10.0);
    write_mask(&s.fixtures, "all.png", &BinaryMask::full(20, 20));
    let img = image();
    let fg = BinaryMask::from_fn(20, 20, |x, _| x < 12);
    let backend = BackendConfig::External(s.cfg.clone());
    let r = segment(&img, &fg, &prompts(&img), &backend, 0.5).unwrap();
    assert_eq!(r.final_mask, fg);
}
