use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use super::font::{bitmap, is_set, GLYPH_H, GLYPH_W};
use super::{write_atomic, WriteError};
use crate::cascade::ResultRecord;
use crate::BBox;

const SURVIVOR: Rgb<u8> = Rgb([0, 255, 0]);
const AMBIGUOUS: Rgb<u8> = Rgb([255, 200, 0]);
const GROUND_TRUTH: Rgb<u8> = Rgb([255, 0, 255]);
const LABEL_FG: Rgb<u8> = Rgb([255, 255, 255]);
const LABEL_BG: Rgb<u8> = Rgb([0, 0, 0]);
const DASH: u32 = 4;

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn outline(img: &mut RgbImage, b: &BBox, color: Rgb<u8>, dashed: bool) {
    let x0 = b.x0.floor() as i64;
    let y0 = b.y0.floor() as i64;
    let x1 = b.x1.ceil() as i64 - 1;
    let y1 = b.y1.ceil() as i64 - 1;
    let on = |i: i64| !dashed || (i as u32 / DASH).is_multiple_of(2);
    for x in x0..=x1 {
        if on(x - x0) {
            put(img, x, y0, color);
            put(img, x, y1, color);
        }
    }
    for y in y0..=y1 {
        if on(y - y0) {
            put(img, x0, y, color);
            put(img, x1, y, color);
        }
    }
}

fn label(img: &mut RgbImage, text: &str, scale: u32) {
    let advance = (GLYPH_W + 1) * scale;
    let w = advance * text.chars().count() as u32 + scale;
    let h = (GLYPH_H + 2) * scale;
    for y in 0..h.min(img.height()) {
        for x in 0..w.min(img.width()) {
            img.put_pixel(x, y, LABEL_BG);
        }
    }
    for (i, c) in text.chars().enumerate() {
        let bits = bitmap(c);
        for row in 0..GLYPH_H {
            for col in 0..GLYPH_W {
                if !is_set(bits, col, row) {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let x = scale + i as u32 * advance + col * scale + dx;
                        let y = scale + row * scale + dy;
                        put(img, x as i64, y as i64, LABEL_FG);
                    }
                }
            }
        }
    }
}

/// Returns a copy of `frame` with survivor boxes (solid), the ground-truth
/// box (dashed) and the decision stage written in the top-left corner.
pub fn draw_overlay(frame: &RgbImage, result: &ResultRecord, gt: Option<&BBox>) -> RgbImage {
    let mut img = frame.clone();
    if let Some(gt) = gt {
        outline(&mut img, gt, GROUND_TRUTH, true);
    }
    let color = if result.unique { SURVIVOR } else { AMBIGUOUS };
    for s in &result.survivors {
        outline(&mut img, &s.bbox, color, false);
    }
    let text = if result.survivors.is_empty() {
        "NO MATCH".to_string()
    } else {
        result.decision_stage.label().to_string()
    };
    let scale = (frame.height() / 240).max(1);
    label(&mut img, &text, scale);
    img
}

pub fn write_overlay(
    frame: &RgbImage,
    result: &ResultRecord,
    gt: Option<&BBox>,
    path: &Path,
) -> Result<(), WriteError> {
    let img = draw_overlay(frame, result, gt);
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|source| WriteError::Image {
            path: path.display().to_string(),
            source,
        })?;
    write_atomic(path, &buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{Stage, SurvivorRecord};

    fn record(boxes: &[BBox]) -> ResultRecord {
        ResultRecord {
            frame_id: 0,
            survivors: boxes
                .iter()
                .enumerate()
                .map(|(i, b)| SurvivorRecord {
                    detection_id: format!("d{i}"),
                    height_cm: 170.0,
                    bbox: *b,
                    top_color: None,
                    gender: None,
                })
                .collect(),
            decision_stage: Stage::TorsoColor,
            unique: boxes.len() == 1,
        }
    }

    fn count(img: &RgbImage, c: Rgb<u8>) -> usize {
        img.pixels().filter(|p| **p == c).count()
    }

    #[test]
    fn unique_survivor_draws_one_box() {
        let frame = RgbImage::new(100, 80);
        let img = draw_overlay(&frame, &record(&[BBox::new(20.0, 20.0, 40.0, 60.0)]), None);
        // 20x40 outline
        assert_eq!(count(&img, SURVIVOR), 2 * 20 + 2 * 38);
        assert_eq!(count(&img, GROUND_TRUTH), 0);
    }

    #[test]
    fn no_match_label_on_copied_frame() {
        let frame = RgbImage::from_pixel(100, 80, Rgb([10, 20, 30]));
        let img = draw_overlay(&frame, &record(&[]), None);
        assert_eq!(count(&img, SURVIVOR), 0);
        assert!(count(&img, LABEL_FG) > 0);
        assert_eq!(img.get_pixel(99, 79), &Rgb([10, 20, 30]));
    }

    #[test]
    fn ground_truth_box_is_second_style() {
        let frame = RgbImage::new(100, 80);
        let img = draw_overlay(
            &frame,
            &record(&[BBox::new(20.0, 20.0, 40.0, 60.0)]),
            Some(&BBox::new(50.0, 10.0, 90.0, 70.0)),
        );
        assert!(count(&img, SURVIVOR) > 0);
        let gt = count(&img, GROUND_TRUTH);
        assert!(gt > 0 && gt < 2 * 40 + 2 * 58, "dashed outline expected");
    }

    #[test]
    fn written_file_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.png");
        let frame = RgbImage::new(32, 32);
        write_overlay(&frame, &record(&[]), None, &path).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (32, 32));
    }
}
