//! Raster images, binary masks, background removal and dataset manifests.

use std::collections::HashSet;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ColorType, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb8 = [u8; 3];

/// Largest possible Euclidean distance between two RGB8 colors (`255 * sqrt(3)`).
pub const MAX_RGB_DISTANCE: f64 = 441.672_955_930_063_7;

/// Row-major RGB8 pixel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<Rgb8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<Rgb8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidConfig(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// Panics if either dimension is zero.
    pub fn filled(width: u32, height: u32, color: Rgb8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        Self { width, height, pixels: vec![color; width as usize * height as usize] }
    }

    /// Panics if either dimension is zero.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb8] {
        &self.pixels
    }

    pub fn in_bounds(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, color: Rgb8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = color;
    }
}

/// Row-major boolean grid; `true` marks foreground / retained pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidConfig(format!(
                "mask bit count {} does not match {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![true; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dimensions(&self, other: &BinaryMask) -> bool {
        self.dimensions() == other.dimensions()
    }

    pub fn ensure_dimensions(&self, width: u32, height: u32) -> Result<()> {
        if self.dimensions() != (width, height) {
            return Err(Error::DimensionMismatch {
                expected_w: width,
                expected_h: height,
                actual_w: self.width,
                actual_h: self.height,
            });
        }
        Ok(())
    }

    /// In-place union. Panics on dimension mismatch.
    pub fn union_with(&mut self, other: &BinaryMask) {
        assert!(self.same_dimensions(other), "mask dimensions differ");
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    /// In-place intersection. Panics on dimension mismatch.
    pub fn intersect_with(&mut self, other: &BinaryMask) {
        assert!(self.same_dimensions(other), "mask dimensions differ");
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= b;
        }
    }

    /// Clears every bit set in `other`. Panics on dimension mismatch.
    pub fn subtract(&mut self, other: &BinaryMask) {
        assert!(self.same_dimensions(other), "mask dimensions differ");
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !b;
        }
    }

    pub fn intersects(&self, other: &BinaryMask) -> bool {
        self.same_dimensions(other) && self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_dimensions(other) && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// One byte of luma per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u8>,
}

impl GrayImage {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.values[y as usize * self.width as usize + x as usize]
    }
}

/// ITU-R BT.601 luma, rounded half up.
#[inline]
pub fn luma([r, g, b]: Rgb8) -> u8 {
    // integer form of round(0.299 R + 0.587 G + 0.114 B); max is 255
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

pub fn to_grayscale(img: &RasterImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        values: img.pixels.iter().map(|&p| luma(p)).collect(),
    }
}

pub fn rgb_distance(a: Rgb8, b: [f64; 3]) -> f64 {
    let dr = a[0] as f64 - b[0];
    let dg = a[1] as f64 - b[1];
    let db = a[2] as f64 - b[2];
    (dr * dr + dg * dg + db * db).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum BackgroundMode {
    ChromaKey { key_color: Rgb8 },
    CornerSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    #[serde(flatten)]
    pub mode: BackgroundMode,
    pub tolerance: f64,
}

impl BackgroundModel {
    pub fn chroma_key(key_color: Rgb8, tolerance: f64) -> Self {
        Self { mode: BackgroundMode::ChromaKey { key_color }, tolerance }
    }

    pub fn corner_sample(tolerance: f64) -> Self {
        Self { mode: BackgroundMode::CornerSample, tolerance }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_RGB_DISTANCE).contains(&self.tolerance) {
            return Err(Error::InvalidConfig(format!(
                "background tolerance {} outside [0, {MAX_RGB_DISTANCE:.2}]",
                self.tolerance
            )));
        }
        Ok(())
    }

    /// Reference color the image is compared against.
    pub fn reference_color(&self, img: &RasterImage) -> Result<[f64; 3]> {
        match self.mode {
            BackgroundMode::ChromaKey { key_color } => {
                Ok([key_color[0] as f64, key_color[1] as f64, key_color[2] as f64])
            }
            BackgroundMode::CornerSample => {
                if img.width < 2 || img.height < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "corner-sample background needs at least a 2x2 image, got {}x{}",
                        img.width, img.height
                    )));
                }
                let (w, h) = (img.width - 1, img.height - 1);
                let corners = [img.get(0, 0), img.get(w, 0), img.get(0, h), img.get(w, h)];
                let mut mean = [0.0; 3];
                for c in corners {
                    for (m, v) in mean.iter_mut().zip(c) {
                        *m += v as f64 / 4.0;
                    }
                }
                Ok(mean)
            }
        }
    }
}

impl Default for BackgroundModel {
    fn default() -> Self {
        Self::corner_sample(30.0)
    }
}

/// Foreground mask: a pixel is background iff its RGB distance to the model
/// color is at most the tolerance.
pub fn remove_background(img: &RasterImage, model: &BackgroundModel) -> Result<BinaryMask> {
    model.validate()?;
    let reference = model.reference_color(img)?;
    let tol_sq = model.tolerance * model.tolerance;
    let bits = img
        .pixels
        .iter()
        .map(|&p| {
            let d = [p[0] as f64 - reference[0], p[1] as f64 - reference[1], p[2] as f64 - reference[2]];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] > tol_sq
        })
        .collect();
    Ok(BinaryMask { width: img.width, height: img.height, bits })
}

/// Decodes PNG bytes; alpha is dropped and 8-bit grayscale is expanded to RGB.
pub fn decode_png(bytes: &[u8]) -> Result<RasterImage> {
    let format = image::guess_format(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    if format != ImageFormat::Png {
        return Err(Error::Decode(format!("expected PNG data, found {format:?}")));
    }
    let decoded = image::load(Cursor::new(bytes), ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    match decoded.color() {
        ColorType::Rgb8 | ColorType::Rgba8 | ColorType::L8 | ColorType::La8 => {}
        other => return Err(Error::UnsupportedFormat(format!("{other:?} (only 8-bit channels are supported)"))),
    }
    let rgb = decoded.into_rgb8();
    let (width, height) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    RasterImage::new(width, height, pixels)
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(img.pixels.len() * 3);
    for p in &img.pixels {
        raw.extend_from_slice(p);
    }
    let buffer = image::RgbImage::from_raw(img.width, img.height, raw)
        .ok_or_else(|| Error::Encode("pixel buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    buffer
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Interprets an image as a mask: luma >= 128 is `true`.
pub fn mask_from_image(img: &RasterImage) -> BinaryMask {
    BinaryMask {
        width: img.width,
        height: img.height,
        bits: img.pixels.iter().map(|&p| luma(p) >= 128).collect(),
    }
}

/// White for `true`, black for `false`.
pub fn mask_to_image(mask: &BinaryMask) -> RasterImage {
    RasterImage {
        width: mask.width,
        height: mask.height,
        pixels: mask.bits.iter().map(|&b| if b { [255; 3] } else { [0; 3] }).collect(),
    }
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    load_image(path).map(|img| mask_from_image(&img))
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_image(&mask_to_image(mask), path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(rename = "image")]
    pub image_path: PathBuf,
    #[serde(rename = "mask")]
    pub mask_path: PathBuf,
}

/// Dataset of image / ground-truth pairs. Paths are resolved against the
/// manifest's directory on load.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }
}

/// Reads a PNG header's dimensions without decoding pixel data.
fn png_dimensions(path: &Path) -> Result<(u32, u32)> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .into_dimensions()
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest> {
    let mut manifest: DatasetManifest =
        serde_json::from_str(text).map_err(|e| Error::ManifestParse(e.to_string()))?;
    let mut seen = HashSet::new();
    for entry in &mut manifest.entries {
        if !seen.insert(entry.id.clone()) {
            return Err(Error::ManifestEntry { id: entry.id.clone(), reason: "duplicate id".into() });
        }
        entry.image_path = base_dir.join(&entry.image_path);
        entry.mask_path = base_dir.join(&entry.mask_path);
        let entry_err = |reason: String| Error::ManifestEntry { id: entry.id.clone(), reason };
        for p in [&entry.image_path, &entry.mask_path] {
            if !p.is_file() {
                return Err(entry_err(format!("missing file {}", p.display())));
            }
        }
        let image_dims = png_dimensions(&entry.image_path).map_err(|e| entry_err(e.to_string()))?;
        let mask_dims = png_dimensions(&entry.mask_path).map_err(|e| entry_err(e.to_string()))?;
        if image_dims != mask_dims {
            return Err(entry_err(format!(
                "dimension mismatch: image is {}x{}, mask is {}x{}",
                image_dims.0, image_dims.1, mask_dims.0, mask_dims.1
            )));
        }
    }
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}
