//! Synthetic scenes with exactly known ground truth.
//!
//! Each person is a flat rectangle standing on the ground plane, facing the
//! camera: its horizontal edge runs along the camera's right vector, so in a
//! roll-free view its top and bottom project to image rows. Pixels are
//! filled when their center lands on the rectangle; colors switch at 20% and
//! 50% of the person's world height, with no anti-aliasing.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{CultureColorPalette, ExternalScores, Gender};
use crate::dataio::{
    write_atomic, DetectionRecord, FrameRecord, MaskRef, WriteError, CAMERAS_DIR, MANIFEST_FILE, MARKERS_FILE,
    PALETTE_FILE,
};
use crate::geometry::{
    build_projection, distort, look_from, project, undistort, CalibrationRecord, CameraCalibration, GeometryError,
    ImagePoint, ProjectionMatrix, WorldPoint,
};
use crate::maskops::{body_region, Mask, RegionKind};
use crate::metrics::{gt_bbox, write_markers_csv, MarkerName, MarkerSet};
use crate::BBox;

pub const TRUTH_FILE: &str = "truth.json";
pub const DEFAULT_BODY_WIDTH_CM: f64 = 45.0;
const HEAD_COLOR: [u8; 3] = [224, 172, 105];
const DEFAULT_BACKGROUND: [u8; 3] = [90, 110, 70];
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("person {subject} is outside the camera frustum in frame {frame}")]
    OutOfFrustum { subject: String, frame: u64 },
    #[error("could not place person {0} inside the view")]
    Placement(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Write(#[from] WriteError),
}

/// Ranges for randomly drawn cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEnvelope {
    pub height_cm: [f64; 2],
    pub tilt_deg: [f64; 2],
    pub focal_px: [f64; 2],
}

impl Default for CameraEnvelope {
    fn default() -> Self {
        Self {
            height_cm: [250.0, 600.0],
            tilt_deg: [0.0, 45.0],
            focal_px: [400.0, 1200.0],
        }
    }
}

fn draw(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// A camera at (0, 0, h) looking along +X, drawn from `envelope`.
pub fn random_camera(
    camera_id: &str,
    envelope: &CameraEnvelope,
    image_size: (u32, u32),
    rng: &mut impl Rng,
) -> CameraCalibration {
    let h = draw(rng, envelope.height_cm);
    let tilt = draw(rng, envelope.tilt_deg).to_radians();
    let focal = draw(rng, envelope.focal_px);
    look_from(
        camera_id,
        Vector3::new(0.0, 0.0, h),
        0.0,
        tilt,
        focal,
        (image_size.0 as f64 / 2.0, image_size.1 as f64 / 2.0),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonSpec {
    #[serde(default)]
    pub subject_id: Option<String>,
    pub height_cm: f64,
    /// Ground position in the first frame; drawn inside the view when absent.
    #[serde(default)]
    pub position: Option<[f64; 2]>,
    /// Ground displacement per frame, cm.
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default = "default_width")]
    pub width_cm: f64,
    pub torso_color: String,
    pub leg_color: String,
    pub gender: Gender,
}

fn default_width() -> f64 {
    DEFAULT_BODY_WIDTH_CM
}

fn default_frames() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Explicit camera; drawn from `envelope` when absent.
    #[serde(default)]
    pub camera: Option<CalibrationRecord>,
    #[serde(default)]
    pub envelope: Option<CameraEnvelope>,
    pub image_width: u32,
    pub image_height: u32,
    #[serde(default)]
    pub persons: Vec<PersonSpec>,
    /// Gaussian σ, in pixels, added to the recorded head/feet points.
    #[serde(default)]
    pub noise_px: f64,
    #[serde(default = "default_frames")]
    pub frames: u32,
    #[serde(default)]
    pub background: Option<[u8; 3]>,
    #[serde(default)]
    pub color_bands: ColorBands,
}

/// Where the head/torso/leg color boundaries fall.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorBands {
    /// At 20% and 50% of the person's world height, as a real garment would be.
    /// Under a tilted camera the image rows of these lines drift from the
    /// mask's own 20%/50% rows.
    #[default]
    World,
    /// At the torso/leg rows the mask split itself selects, so those regions
    /// sample exactly one color each.
    MaskRows,
}

impl SceneSpec {
    pub fn from_json(json: &str) -> Result<Self, SynthError> {
        serde_json::from_str(json).map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }

    pub fn validate(&self, palette: &CultureColorPalette) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive".into());
        }
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        if !(self.noise_px.is_finite() && self.noise_px >= 0.0) {
            return bad(format!("noise_px must be ≥ 0, got {}", self.noise_px));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, p) in self.persons.iter().enumerate() {
            let id = subject_id(p, i);
            if !ids.insert(id.clone()) {
                return bad(format!("duplicate subject_id {id}"));
            }
            if !(140.0..=200.0).contains(&p.height_cm) {
                return bad(format!("{id}: height_cm {} outside [140, 200]", p.height_cm));
            }
            if !(p.width_cm.is_finite() && p.width_cm > 0.0) {
                return bad(format!("{id}: width_cm must be positive"));
            }
            for c in [&p.torso_color, &p.leg_color] {
                if !palette.contains(c) {
                    return bad(format!("{id}: unknown color '{c}'"));
                }
            }
        }
        Ok(())
    }
}

fn subject_id(p: &PersonSpec, index: usize) -> String {
    p.subject_id.clone().unwrap_or_else(|| format!("p{index}"))
}

/// A camera-facing rectangle standing at a ground point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Billboard {
    pub ground: [f64; 2],
    pub height_cm: f64,
    pub width_cm: f64,
    /// Unit horizontal direction of the rectangle's width.
    pub across: [f64; 2],
}

impl Billboard {
    /// Faces `calib`: the width runs along the camera's horizontal right axis.
    pub fn facing(calib: &CameraCalibration, ground: [f64; 2], height_cm: f64, width_cm: f64) -> Self {
        let right = calib.rotation.row(0);
        let n = right[0].hypot(right[1]);
        Self {
            ground,
            height_cm,
            width_cm,
            across: [right[0] / n, right[1] / n],
        }
    }

    /// World point at offset `s` across the width and height `z`.
    pub fn point(&self, s: f64, z: f64) -> WorldPoint {
        WorldPoint::new(
            self.ground[0] + s * self.across[0],
            self.ground[1] + s * self.across[1],
            z,
        )
    }

    pub fn corners(&self) -> [WorldPoint; 4] {
        let w = self.width_cm / 2.0;
        [
            self.point(-w, 0.0),
            self.point(w, 0.0),
            self.point(w, self.height_cm),
            self.point(-w, self.height_cm),
        ]
    }

    /// Homography from (s, z, 1) on the rectangle to undistorted pixels.
    fn homography(&self, c: &ProjectionMatrix) -> Matrix3<f64> {
        let m = &c.entries;
        let across = m * Vector4::new(self.across[0], self.across[1], 0.0, 0.0);
        let up = m * Vector4::new(0.0, 0.0, 1.0, 0.0);
        let origin = m * Vector4::new(self.ground[0], self.ground[1], 0.0, 1.0);
        Matrix3::from_columns(&[across, up, origin])
    }
}

fn in_image(p: &ImagePoint, size: (u32, u32)) -> bool {
    p.u >= 0.0 && p.v >= 0.0 && p.u < size.0 as f64 && p.v < size.1 as f64
}

/// True when every corner is in front of the camera and inside the frame.
pub fn billboard_visible(calib: &CameraCalibration, c: &ProjectionMatrix, b: &Billboard, size: (u32, u32)) -> bool {
    b.corners().iter().all(|w| {
        crate::geometry::camera_depth(w, calib) > 0.0
            && project(w, c)
                .and_then(|p| distort(p, calib))
                .is_ok_and(|p| in_image(&p, size))
    })
}

/// Projected height of the billboard in pixels per world centimeter.
pub fn pixels_per_cm(c: &ProjectionMatrix, b: &Billboard) -> f64 {
    let top = project(&b.point(0.0, b.height_cm), c);
    let bottom = project(&b.point(0.0, 0.0), c);
    match (top, bottom) {
        (Ok(t), Ok(f)) => (f.v - t.v).abs() / b.height_cm,
        _ => 0.0,
    }
}

/// Draws a ground point at which a `height_cm × width_cm` person is fully
/// visible with at least `min_px_per_cm` vertical resolution.
pub fn place_in_view(
    calib: &CameraCalibration,
    size: (u32, u32),
    height_cm: f64,
    width_cm: f64,
    min_px_per_cm: f64,
    rng: &mut impl Rng,
) -> Option<[f64; 2]> {
    let c = build_projection(calib).ok()?;
    let f = calib.focal_x.max(calib.focal_y);
    let max_range = (f / min_px_per_cm.max(1e-3)).min(5000.0);
    let forward = calib.rotation.row(2);
    let yaw = forward[1].atan2(forward[0]);
    let cam = calib.center();
    let fov = (size.0 as f64 / (2.0 * calib.focal_x)).atan();
    for _ in 0..PLACEMENT_ATTEMPTS {
        let r = rng.random_range(50.0..max_range);
        let a = yaw + rng.random_range(-fov..fov);
        let ground = [cam.x + r * a.cos(), cam.y + r * a.sin()];
        let b = Billboard::facing(calib, ground, height_cm, width_cm);
        if billboard_visible(calib, &c, &b, size) && pixels_per_cm(&c, &b) >= min_px_per_cm {
            return Some(ground);
        }
    }
    None
}

/// Rasterized coverage of a billboard. Also returns the world height of each
/// covered pixel so callers can color it.
pub fn rasterize(
    calib: &CameraCalibration,
    c: &ProjectionMatrix,
    b: &Billboard,
    size: (u32, u32),
) -> Result<Vec<Option<f64>>, SynthError> {
    let h = b.homography(c);
    let inv = h
        .try_inverse()
        .ok_or(SynthError::Geometry(GeometryError::DegenerateGroundView(
            h.determinant(),
        )))?;
    let half = b.width_cm / 2.0;

    // Row/column window from the distorted corner projections, padded.
    let corners: Vec<ImagePoint> = b
        .corners()
        .iter()
        .map(|w| project(w, c).and_then(|p| distort(p, calib)))
        .collect::<Result<_, _>>()?;
    let pad = 2.0;
    let lo_u = (corners.iter().map(|p| p.u).fold(f64::INFINITY, f64::min) - pad)
        .floor()
        .max(0.0) as u32;
    let hi_u = (corners.iter().map(|p| p.u).fold(f64::NEG_INFINITY, f64::max) + pad)
        .ceil()
        .min(size.0 as f64) as u32;
    let lo_v = (corners.iter().map(|p| p.v).fold(f64::INFINITY, f64::min) - pad)
        .floor()
        .max(0.0) as u32;
    let hi_v = (corners.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max) + pad)
        .ceil()
        .min(size.1 as f64) as u32;

    let mut cover = vec![None; size.0 as usize * size.1 as usize];
    for row in lo_v..hi_v {
        for col in lo_u..hi_u {
            let p = undistort(ImagePoint::distorted(col as f64 + 0.5, row as f64 + 0.5), calib);
            let q = inv * Vector3::new(p.u, p.v, 1.0);
            if q.z.abs() < 1e-15 {
                continue;
            }
            let (s, z) = (q.x / q.z, q.y / q.z);
            if s.abs() <= half && (0.0..=b.height_cm).contains(&z) {
                cover[(row * size.0 + col) as usize] = Some(z);
            }
        }
    }
    Ok(cover)
}

/// World-height color bands: head above 80%, torso 50–80%, legs below 50%.
pub fn band_color(z: f64, height_cm: f64, torso: [u8; 3], legs: [u8; 3]) -> [u8; 3] {
    let from_top = (height_cm - z) / height_cm;
    if from_top < 0.2 {
        HEAD_COLOR
    } else if from_top < 0.5 {
        torso
    } else {
        legs
    }
}

/// First torso row and first leg row of a person's unoccluded coverage, or
/// `None` when it is too short to split.
fn mask_row_bands(bits: &[bool], size: (u32, u32)) -> Option<(u32, u32)> {
    let m = Mask::new(size.0, size.1, bits.to_vec(), 0, "").ok()?;
    let torso = body_region(&m, RegionKind::Torso).ok()?;
    let legs = body_region(&m, RegionKind::Legs).ok()?;
    Some((torso.row_span.0, legs.row_span.0))
}

/// Adds seeded N(0, σ²) noise to both coordinates of every point.
pub fn perturb(points: &[ImagePoint], sigma: f64, seed: u64) -> Vec<ImagePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perturb_with(points, sigma, &mut rng)
}

fn perturb_with(points: &[ImagePoint], sigma: f64, rng: &mut impl Rng) -> Vec<ImagePoint> {
    if sigma == 0.0 {
        return points.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("σ is finite and non-negative");
    points
        .iter()
        .map(|p| ImagePoint {
            u: p.u + normal.sample(rng),
            v: p.v + normal.sample(rng),
            distorted: p.distorted,
        })
        .collect()
}

fn marker_points(
    calib: &CameraCalibration,
    c: &ProjectionMatrix,
    b: &Billboard,
) -> Result<[ImagePoint; 9], GeometryError> {
    let (w, h) = (b.width_cm / 2.0, b.height_cm);
    let world = |name: MarkerName| match name {
        MarkerName::HeadTop => b.point(0.0, h),
        MarkerName::NeckLeft => b.point(-w / 2.0, 0.9 * h),
        MarkerName::NeckRight => b.point(w / 2.0, 0.9 * h),
        MarkerName::ShoulderLeft => b.point(-w, h),
        MarkerName::ShoulderRight => b.point(w, h),
        MarkerName::WaistLeft => b.point(-w, 0.5 * h),
        MarkerName::WaistRight => b.point(w, 0.5 * h),
        MarkerName::ToeLeft => b.point(-w, 0.0),
        MarkerName::ToeRight => b.point(w, 0.0),
    };
    let mut out = [ImagePoint::distorted(0.0, 0.0); 9];
    for (slot, name) in out.iter_mut().zip(MarkerName::ALL) {
        *slot = distort(project(&world(name), c)?, calib)?;
    }
    Ok(out)
}

/// Ground truth for one person in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonTruth {
    pub frame_id: u64,
    pub subject_id: String,
    pub detection_id: String,
    pub height_cm: f64,
    pub ground: [f64; 2],
    pub gt_bbox: BBox,
    pub torso_color: String,
    pub leg_color: String,
    pub gender: Gender,
    /// Projected head top and feet center, distorted pixels, no noise.
    pub head: ImagePoint,
    pub feet: ImagePoint,
    /// The same points with the scene's pixel noise applied.
    pub noisy_head: ImagePoint,
    pub noisy_feet: ImagePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub seed: u64,
    pub camera_id: String,
    pub persons: Vec<PersonTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub frame_id: u64,
    pub image: RgbImage,
    pub masks: Vec<Mask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub calibration: CameraCalibration,
    pub palette: CultureColorPalette,
    pub frames: Vec<RenderedFrame>,
    pub manifest: Vec<FrameRecord>,
    pub truth: SyntheticTruth,
    pub markers: Vec<MarkerSet>,
}

fn frame_path(frame_id: u64) -> String {
    format!("frames/{frame_id:06}.png")
}

fn mask_path(frame_id: u64, detection_id: &str) -> String {
    format!("masks/{frame_id:06}_{detection_id}.png")
}

fn gender_scores(g: Gender) -> ExternalScores {
    let (m, f) = match g {
        Gender::Male => (1.0, 0.0),
        Gender::Female => (0.0, 1.0),
    };
    ExternalScores {
        gender: Some([("male".to_string(), m), ("female".to_string(), f)].into()),
        ..Default::default()
    }
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, SynthError> {
    generate_scene_with_palette(spec, seed, &CultureColorPalette::default())
}

pub fn generate_scene_with_palette(
    spec: &SceneSpec,
    seed: u64,
    palette: &CultureColorPalette,
) -> Result<Scene, SynthError> {
    spec.validate(palette)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = (spec.image_width, spec.image_height);
    let calibration = match &spec.camera {
        Some(rec) => rec.clone().into_validated()?,
        None => random_camera("cam0", &spec.envelope.unwrap_or_default(), size, &mut rng),
    };
    let c = build_projection(&calibration)?;

    let mut starts = Vec::with_capacity(spec.persons.len());
    for (i, p) in spec.persons.iter().enumerate() {
        let start = match p.position {
            Some(pos) => pos,
            None => place_in_view(&calibration, size, p.height_cm, p.width_cm, 0.0, &mut rng)
                .ok_or_else(|| SynthError::Placement(subject_id(p, i)))?,
        };
        starts.push(start);
    }

    let background = spec.background.unwrap_or(DEFAULT_BACKGROUND);
    let mut frames = Vec::new();
    let mut manifest = Vec::new();
    let mut persons = Vec::new();
    let mut markers = Vec::new();
    for f in 0..spec.frames as u64 {
        let mut image = RgbImage::from_pixel(size.0, size.1, Rgb(background));
        let mut placed: Vec<(f64, usize, Billboard)> = Vec::new();
        for (i, p) in spec.persons.iter().enumerate() {
            let ground = [
                starts[i][0] + p.velocity[0] * f as f64,
                starts[i][1] + p.velocity[1] * f as f64,
            ];
            let b = Billboard::facing(&calibration, ground, p.height_cm, p.width_cm);
            if !billboard_visible(&calibration, &c, &b, size) {
                return Err(SynthError::OutOfFrustum {
                    subject: subject_id(p, i),
                    frame: f,
                });
            }
            let depth = crate::geometry::camera_depth(&b.point(0.0, 0.0), &calibration);
            placed.push((depth, i, b));
        }
        // Far to near, so nearer people occlude farther ones.
        placed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut masks = Vec::new();
        let mut detections = Vec::new();
        for &(_, i, b) in &placed {
            let p = &spec.persons[i];
            let sid = subject_id(p, i);
            let cover = rasterize(&calibration, &c, &b, size)?;
            let torso = palette.srgb(&p.torso_color).expect("validated");
            let legs = palette.srgb(&p.leg_color).expect("validated");
            let bits: Vec<bool> = cover.iter().map(Option::is_some).collect();
            let rows = match spec.color_bands {
                ColorBands::World => None,
                ColorBands::MaskRows => mask_row_bands(&bits, size),
            };
            for (idx, z) in cover.iter().enumerate() {
                if let Some(z) = z {
                    let (x, y) = (idx as u32 % size.0, idx as u32 / size.0);
                    let color = match rows {
                        Some((_, legs_start)) if y >= legs_start => legs,
                        Some((torso_start, _)) if y >= torso_start => torso,
                        Some(_) => HEAD_COLOR,
                        None => band_color(*z, p.height_cm, torso, legs),
                    };
                    image.put_pixel(x, y, Rgb(color));
                }
            }
            // Remove pixels now owned by this person from farther masks.
            for m in masks.iter_mut() {
                let m: &mut Vec<bool> = m;
                for (dst, &src) in m.iter_mut().zip(&bits) {
                    *dst &= !src;
                }
            }
            masks.push(bits);

            let points = marker_points(&calibration, &c, &b)?;
            let set = MarkerSet::new(f, sid.clone(), points).expect("projected points are finite");
            let head = distort(project(&b.point(0.0, b.height_cm), &c)?, &calibration)?;
            let feet = distort(project(&b.point(0.0, 0.0), &c)?, &calibration)?;
            let noisy = perturb_with(&[head, feet], spec.noise_px, &mut rng);
            persons.push(PersonTruth {
                frame_id: f,
                subject_id: sid.clone(),
                detection_id: sid.clone(),
                height_cm: p.height_cm,
                ground: b.ground,
                gt_bbox: gt_bbox(&set).expect("billboard markers span an area"),
                torso_color: p.torso_color.clone(),
                leg_color: p.leg_color.clone(),
                gender: p.gender,
                head,
                feet,
                noisy_head: noisy[0],
                noisy_feet: noisy[1],
            });
            markers.push(set);
            detections.push((i, sid));
        }

        let mut rendered = Vec::new();
        let mut records = Vec::new();
        for (bits, (i, sid)) in masks.into_iter().zip(detections) {
            let mask = Mask::new(size.0, size.1, bits, f, sid.clone())
                .map_err(|_| SynthError::InvalidSpec(format!("{sid} is fully occluded in frame {f}")))?;
            records.push(DetectionRecord {
                detection_id: sid.clone(),
                mask: MaskRef::Path(mask_path(f, &sid)),
                scores: Some(gender_scores(spec.persons[i].gender)),
            });
            rendered.push(mask);
        }
        // Detection order in the manifest follows the spec's person order.
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by_key(|&k| placed[k].1);
        let records = order.iter().map(|&k| records[k].clone()).collect();
        let rendered = order.iter().map(|&k| rendered[k].clone()).collect();

        manifest.push(FrameRecord {
            frame_id: f,
            camera_id: calibration.camera_id.clone(),
            frame_image_path: frame_path(f),
            detections: records,
            seed: Some(seed),
        });
        frames.push(RenderedFrame {
            frame_id: f,
            image,
            masks: rendered,
        });
    }
    persons.sort_by(|a, b| (a.frame_id, &a.subject_id).cmp(&(b.frame_id, &b.subject_id)));
    markers.sort_by(|a, b| (a.frame_id, &a.subject_id).cmp(&(b.frame_id, &b.subject_id)));

    Ok(Scene {
        truth: SyntheticTruth {
            seed,
            camera_id: calibration.camera_id.clone(),
            persons,
        },
        calibration,
        palette: palette.clone(),
        frames,
        manifest,
        markers,
    })
}

fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    buf.into_inner()
}

/// Writes the scene in the standard bundle layout plus `truth.json`.
pub fn write_scene(scene: &Scene, root: &Path) -> Result<(), SynthError> {
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|e| WriteError::Io {
            path: p.display().to_string(),
            source: e,
        })
    };
    for sub in [CAMERAS_DIR, "frames", "masks"] {
        mkdir(&root.join(sub))?;
    }
    let calib = serde_json::to_string_pretty(&CalibrationRecord::from(&scene.calibration)).expect("serializable");
    write_atomic(
        &root
            .join(CAMERAS_DIR)
            .join(format!("{}.json", scene.calibration.camera_id)),
        calib.as_bytes(),
    )?;
    for frame in &scene.frames {
        write_atomic(&root.join(frame_path(frame.frame_id)), &png_bytes(&frame.image))?;
        for m in &frame.masks {
            write_atomic(&root.join(mask_path(frame.frame_id, &m.detection_id)), &m.to_png())?;
        }
    }
    let mut manifest = String::new();
    for rec in &scene.manifest {
        manifest.push_str(&serde_json::to_string(rec).expect("serializable"));
        manifest.push('\n');
    }
    write_atomic(&root.join(MANIFEST_FILE), manifest.as_bytes())?;
    write_atomic(&root.join(PALETTE_FILE), scene.palette.to_json().as_bytes())?;
    let mut csv = Vec::new();
    write_markers_csv(&mut csv, &scene.markers).expect("in-memory CSV");
    write_atomic(&root.join(MARKERS_FILE), &csv)?;
    let truth = serde_json::to_string_pretty(&scene.truth).expect("serializable");
    write_atomic(&root.join(TRUTH_FILE), truth.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{estimate_height, HeightBias};
    use crate::maskops::{body_region, feet_point, head_point, mask_bbox, RegionKind};
    use proptest::prelude::*;

    fn person(h: f64, pos: [f64; 2], torso: &str, legs: &str, g: Gender) -> PersonSpec {
        PersonSpec {
            subject_id: None,
            height_cm: h,
            position: Some(pos),
            velocity: [0.0, 0.0],
            width_cm: DEFAULT_BODY_WIDTH_CM,
            torso_color: torso.into(),
            leg_color: legs.into(),
            gender: g,
        }
    }

    fn camera(tilt_deg: f64) -> CalibrationRecord {
        let c = look_from(
            "cam0",
            Vector3::new(0.0, 0.0, 400.0),
            0.0,
            tilt_deg.to_radians(),
            1000.0,
            (480.0, 270.0),
        );
        CalibrationRecord::from(&c)
    }

    fn spec(tilt_deg: f64, persons: Vec<PersonSpec>) -> SceneSpec {
        SceneSpec {
            camera: Some(camera(tilt_deg)),
            envelope: None,
            image_width: 960,
            image_height: 540,
            persons,
            noise_px: 0.0,
            frames: 1,
            background: None,
            color_bands: ColorBands::World,
        }
    }

    #[test]
    fn single_person_height_recovered() {
        let s = spec(20.0, vec![person(170.0, [600.0, 30.0], "red", "blue", Gender::Male)]);
        let scene = generate_scene(&s, 1).unwrap();
        let mask = &scene.frames[0].masks[0];
        let est = estimate_height(
            &scene.calibration,
            head_point(mask),
            feet_point(mask),
            &HeightBias::zero(),
        )
        .unwrap();
        assert!((est.height_cm - 170.0).abs() <= 1.0, "{}", est.height_cm);
        let t = &scene.truth.persons[0];
        assert!(head_point(mask).distance(&t.head) <= 1.0);
        assert!(feet_point(mask).distance(&t.feet) <= 1.0);
    }

    #[test]
    fn empty_scene_is_background_only() {
        let scene = generate_scene(&spec(10.0, vec![]), 3).unwrap();
        assert!(scene.manifest[0].detections.is_empty());
        assert!(scene.frames[0].image.pixels().all(|p| p.0 == DEFAULT_BACKGROUND));
        assert!(scene.markers.is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let mut s = spec(
            15.0,
            vec![person(165.0, [700.0, -40.0], "green", "black", Gender::Female)],
        );
        s.camera = None;
        s.persons[0].position = None;
        s.noise_px = 1.0;
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_scene(&generate_scene(&s, 42).unwrap(), a.path()).unwrap();
        write_scene(&generate_scene(&s, 42).unwrap(), b.path()).unwrap();
        for rel in [
            "manifest.jsonl",
            "markers.csv",
            "truth.json",
            "cameras/cam0.json",
            "frames/000000.png",
            "masks/000000_p0.png",
        ] {
            assert_eq!(
                fs::read(a.path().join(rel)).unwrap(),
                fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
        let c = generate_scene(&s, 43).unwrap();
        assert_ne!(c.truth, generate_scene(&s, 42).unwrap().truth);
    }

    #[test]
    fn out_of_frustum_is_an_error() {
        let s = spec(10.0, vec![person(170.0, [-500.0, 0.0], "red", "red", Gender::Male)]);
        assert!(matches!(generate_scene(&s, 0), Err(SynthError::OutOfFrustum { .. })));
    }

    #[test]
    fn invalid_specs() {
        let s = spec(10.0, vec![person(230.0, [600.0, 0.0], "red", "red", Gender::Male)]);
        assert!(matches!(generate_scene(&s, 0), Err(SynthError::InvalidSpec(_))));
        let s = spec(10.0, vec![person(170.0, [600.0, 0.0], "teal", "red", Gender::Male)]);
        assert!(matches!(generate_scene(&s, 0), Err(SynthError::InvalidSpec(_))));
        assert!(SceneSpec::from_json(r#"{"image_width": 10}"#).is_err());
    }

    #[test]
    fn level_camera_bands_match_mask_regions_exactly() {
        let s = spec(
            0.0,
            vec![person(180.0, [2000.0, 0.0], "yellow", "purple", Gender::Male)],
        );
        let scene = generate_scene(&s, 0).unwrap();
        let img = &scene.frames[0].image;
        let mask = &scene.frames[0].masks[0];
        let torso = body_region(mask, RegionKind::Torso).unwrap();
        let legs = body_region(mask, RegionKind::Legs).unwrap();
        assert!(torso
            .pixels
            .iter()
            .all(|&(x, y)| img.get_pixel(x, y).0 == [255, 255, 0]));
        assert!(legs.pixels.iter().all(|&(x, y)| img.get_pixel(x, y).0 == [128, 0, 128]));
    }

    #[test]
    fn occlusion_removes_pixels_from_farther_masks() {
        let s = spec(
            20.0,
            vec![
                person(170.0, [1200.0, 0.0], "red", "red", Gender::Male),
                person(170.0, [800.0, 0.0], "blue", "blue", Gender::Female),
            ],
        );
        let scene = generate_scene(&s, 0).unwrap();
        let [far, near] = [&scene.frames[0].masks[0], &scene.frames[0].masks[1]];
        assert_eq!(far.detection_id, "p0");
        assert!((0..far.bits.len()).all(|i| !(far.bits[i] && near.bits[i])));
    }

    #[test]
    fn perturb_examples() {
        let pts = vec![ImagePoint::distorted(10.0, 20.0); 3];
        assert_eq!(perturb(&pts, 0.0, 9), pts);
        assert_eq!(perturb(&pts, 1.0, 9), perturb(&pts, 1.0, 9));
        let many = vec![ImagePoint::distorted(0.0, 0.0); 5000];
        let out = perturb(&many, 1.0, 7);
        let xs: Vec<f64> = out.iter().flat_map(|p| [p.u, p.v]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!((sd - 1.0).abs() < 0.05, "{sd}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rendered_mask_agrees_with_truth(seed in any::<u64>(), h in 140.0..200.0f64) {
            let mut s = spec(0.0, vec![person(h, [0.0, 0.0], "red", "blue", Gender::Male)]);
            s.camera = None;
            s.persons[0].position = None;
            // Some steep, narrow cameras cannot show a whole person anywhere.
            let scene = generate_scene(&s, seed);
            prop_assume!(!matches!(scene, Err(SynthError::Placement(_))));
            let scene = scene.unwrap();
            let mask = &scene.frames[0].masks[0];
            let t = &scene.truth.persons[0];
            prop_assert!((head_point(mask).v - t.head.v).abs() <= 1.0);
            prop_assert!((feet_point(mask).v - t.feet.v).abs() <= 1.0);
            prop_assert!(t.gt_bbox.contains_box(&mask_bbox(mask), 1.0));
        }
    }
}
