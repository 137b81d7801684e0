//! Person masks: decoding, bounding boxes, head/feet points and the
//! torso/leg split used to cut background-free color patches.
//!
//! Pixel `(col, row)` covers `[col, col+1) × [row, row+1)`. Head and feet
//! points use the column index centroid; the head sits on the top edge of the
//! topmost row and the feet on the bottom edge of the bottommost row.

use std::fmt::Write as _;
use std::io::Cursor;

use image::{GrayImage, ImageFormat, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;
use crate::geometry::ImagePoint;

/// Gray levels at or above this value are person pixels.
pub const PNG_THRESHOLD: u8 = 128;
/// Minimum vertical mask extent for torso/leg extraction.
pub const MIN_REGION_HEIGHT: u32 = 10;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask has no person pixels")]
    Empty,
    #[error("mask payload has {got} pixels, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("malformed RLE: {0}")]
    MalformedRle(String),
    #[error("PNG decode failed: {0}")]
    Png(#[from] image::ImageError),
    #[error("mask is {0} px tall, need at least {MIN_REGION_HEIGHT} for body regions")]
    RegionTooSmall(u32),
    #[error("region has no person pixels")]
    EmptyPatch,
    #[error("region pixel ({0}, {1}) lies outside the frame")]
    OutsideFrame(u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    /// Row-major occupancy, `true` = person.
    pub bits: Vec<bool>,
    pub frame_id: u64,
    pub detection_id: String,
}

/// Serialized form of a mask before decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MaskPayload {
    Png(Vec<u8>),
    Rle { width: u32, height: u32, runs: String },
}

impl Mask {
    pub fn new(
        width: u32,
        height: u32,
        bits: Vec<bool>,
        frame_id: u64,
        detection_id: impl Into<String>,
    ) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::SizeMismatch {
                expected,
                got: bits.len(),
            });
        }
        if !bits.iter().any(|&b| b) {
            return Err(MaskError::Empty);
        }
        Ok(Self {
            width,
            height,
            bits,
            frame_id,
            detection_id: detection_id.into(),
        })
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        col < self.width && row < self.height && self.bits[(row * self.width + col) as usize]
    }

    pub fn pixel_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn row(&self, row: u32) -> &[bool] {
        let w = self.width as usize;
        let start = row as usize * w;
        &self.bits[start..start + w]
    }

    fn occupied_columns(&self, row: u32) -> impl Iterator<Item = u32> + '_ {
        self.row(row)
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(c, _)| c as u32)
    }

    /// Topmost and bottommost occupied rows (inclusive).
    pub fn row_extent(&self) -> (u32, u32) {
        let occupied = |r: &u32| self.row(*r).iter().any(|&b| b);
        let top = (0..self.height).find(occupied).unwrap_or(0);
        let bottom = (0..self.height).rev().find(occupied).unwrap_or(0);
        (top, bottom)
    }

    pub fn to_png(&self) -> Vec<u8> {
        let img = GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        });
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("in-memory PNG encoding cannot fail");
        out.into_inner()
    }
}

pub fn decode_mask(payload: &MaskPayload, frame_id: u64, detection_id: &str) -> Result<Mask, MaskError> {
    match payload {
        MaskPayload::Png(bytes) => {
            let gray = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
            let bits = gray.pixels().map(|p| p.0[0] >= PNG_THRESHOLD).collect();
            Mask::new(gray.width(), gray.height(), bits, frame_id, detection_id)
        }
        MaskPayload::Rle { width, height, runs } => {
            let bits = decode_runs(runs)?;
            Mask::new(*width, *height, bits, frame_id, detection_id)
        }
    }
}

/// Expands `"value:length,..."` runs in row-major order.
pub fn decode_runs(runs: &str) -> Result<Vec<bool>, MaskError> {
    let mut bits = Vec::new();
    for token in runs.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (value, len) = token
            .split_once(':')
            .ok_or_else(|| MaskError::MalformedRle(format!("'{token}' is not value:length")))?;
        let value = match value.trim() {
            "0" => false,
            "1" => true,
            other => return Err(MaskError::MalformedRle(format!("run value '{other}' is not 0 or 1"))),
        };
        let len: usize = len
            .trim()
            .parse()
            .map_err(|_| MaskError::MalformedRle(format!("bad run length in '{token}'")))?;
        bits.extend(std::iter::repeat_n(value, len));
    }
    Ok(bits)
}

/// Canonical run-length encoding: maximal runs, zero-length runs never emitted.
pub fn encode_runs(bits: &[bool]) -> String {
    let mut out = String::new();
    let mut iter = bits.iter().peekable();
    while let Some(&value) = iter.next() {
        let mut len = 1usize;
        while iter.next_if(|&&b| b == value).is_some() {
            len += 1;
        }
        if !out.is_empty() {
            out.push(',');
        }
        let _ = write!(out, "{}:{}", u8::from(value), len);
    }
    out
}

pub fn encode_rle(mask: &Mask) -> MaskPayload {
    MaskPayload::Rle {
        width: mask.width,
        height: mask.height,
        runs: encode_runs(&mask.bits),
    }
}

/// Tightest half-open box around the set pixels.
pub fn mask_bbox(m: &Mask) -> BBox {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for row in 0..m.height {
        for col in m.occupied_columns(row) {
            x0 = x0.min(col);
            x1 = x1.max(col + 1);
            y0 = y0.min(row);
            y1 = y1.max(row + 1);
        }
    }
    BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64)
}

fn column_centroid(m: &Mask, row: u32) -> f64 {
    let (sum, n) = m
        .occupied_columns(row)
        .fold((0u64, 0u64), |(s, n), c| (s + c as u64, n + 1));
    sum as f64 / n as f64
}

pub fn head_point(m: &Mask) -> ImagePoint {
    let (top, _) = m.row_extent();
    ImagePoint::distorted(column_centroid(m, top), top as f64)
}

pub fn feet_point(m: &Mask) -> ImagePoint {
    let (_, bottom) = m.row_extent();
    ImagePoint::distorted(column_centroid(m, bottom), (bottom + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Torso,
    Legs,
}

impl RegionKind {
    /// Fractions of the person's height from the top, as exact ratios.
    fn fractions(self) -> ((u32, u32), (u32, u32)) {
        match self {
            RegionKind::Torso => ((1, 5), (1, 2)),
            RegionKind::Legs => ((1, 2), (1, 1)),
        }
    }
}

/// `round_half_up(h * num / den)` in integer arithmetic.
fn scaled_half_up(h: u32, (num, den): (u32, u32)) -> u32 {
    ((2 * h as u64 * num as u64 + den as u64) / (2 * den as u64)) as u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyRegion {
    pub kind: RegionKind,
    /// Half-open `[top, bottom)` row span.
    pub row_span: (u32, u32),
    /// `(col, row)` mask pixels inside the span.
    pub pixels: Vec<(u32, u32)>,
}

/// Torso rows span 20–50% of the mask's own height, legs 50–100%.
pub fn body_region(m: &Mask, kind: RegionKind) -> Result<BodyRegion, MaskError> {
    let (top, bottom) = m.row_extent();
    let h = bottom + 1 - top;
    if h < MIN_REGION_HEIGHT {
        return Err(MaskError::RegionTooSmall(h));
    }
    let (start, end) = kind.fractions();
    let row_span = (top + scaled_half_up(h, start), top + scaled_half_up(h, end));
    let pixels = (row_span.0..row_span.1)
        .flat_map(|row| m.occupied_columns(row).map(move |col| (col, row)))
        .collect();
    Ok(BodyRegion { kind, row_span, pixels })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorPatch {
    pub pixels: Vec<[u8; 3]>,
    pub source_region: RegionKind,
}

/// Samples the frame at exactly the region's mask pixels.
pub fn extract_patch(frame: &RgbImage, region: &BodyRegion) -> Result<ColorPatch, MaskError> {
    if region.pixels.is_empty() {
        return Err(MaskError::EmptyPatch);
    }
    let pixels = region
        .pixels
        .iter()
        .map(|&(col, row)| {
            frame
                .get_pixel_checked(col, row)
                .map(|p| p.0)
                .ok_or(MaskError::OutsideFrame(col, row))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ColorPatch {
        pixels,
        source_region: region.kind,
    })
}
