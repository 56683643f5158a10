//! Deterministic fixtures shared by the benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use resincarve_core::imaging::{BinaryMask, RasterImage};
use resincarve_core::prompts::{PromptLabel, PromptPoint};

pub fn random_mask(seed: u64, w: u32, h: u32, density: f64) -> BinaryMask {
    let mut rng = StdRng::seed_from_u64(seed);
    BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(density))
}

/// Binary image: white ellipses (retained resin) on black, roughly the shape
/// real masks take.
pub fn blob_binary(seed: u64, w: u32, h: u32) -> RasterImage {
    let mut rng = StdRng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(4.0..w as f64 / 4.0),
                rng.gen_range(4.0..h as f64 / 4.0),
            )
        })
        .collect();
    RasterImage::from_fn(w, h, |x, y| {
        let inside = blobs.iter().any(|&(cx, cy, rx, ry)| {
            let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
            dx * dx + dy * dy <= 1.0
        });
        if inside {
            [255; 3]
        } else {
            [0; 3]
        }
    })
}

/// Round wood slice on a green screen, dark resin where `blob_binary` is white.
pub fn cross_section(seed: u64, w: u32, h: u32) -> RasterImage {
    let mask = blob_binary(seed, w, h);
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5EED);
    let (cx, cy, r) = (w as f64 / 2.0, h as f64 / 2.0, w.min(h) as f64 * 0.45);
    RasterImage::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let n: u8 = rng.gen_range(0..12);
        if dx * dx + dy * dy > r * r {
            [0, 177, 64]
        } else if mask.get(x, y) == [255; 3] {
            [40 + n, 28, 18]
        } else {
            [200 + n, 175 + n, 130]
        }
    })
}

pub fn random_prompts(seed: u64, n: usize, levels: u32) -> Vec<PromptPoint> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|i| PromptPoint {
            x: i as u32,
            y: 0,
            label: PromptLabel::Foreground,
            descriptor: [0, 1, 2].map(|_| (rng.gen_range(0..levels) * 255 / (levels - 1)) as f64),
        })
        .collect()
}
