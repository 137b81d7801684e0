//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export renders an RGB frame in memory and returns it as RGBA bytes
//! together with a JSON report. Nothing touches the filesystem.

use image::RgbImage;
use nalgebra::Vector3;
use pedsearch::attributes::{delta_e76, srgb_to_lab, CultureColorPalette};
use pedsearch::cascade::{parse_query, retrieve_observed, CascadeConfig, ResultRecord};
use pedsearch::dataio::draw_overlay;
use pedsearch::geometry::{estimate_height, look_from, CalibrationRecord, HeightBias};
use pedsearch::maskops::{feet_point, head_point};
use pedsearch::pipeline::{build_candidate, CameraContext};
use pedsearch::synth::{generate_scene, ColorBands, PersonSpec, SceneSpec, DEFAULT_BODY_WIDTH_CM};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DEMO_SEED: u64 = 3;

/// An RGBA image plus a JSON report describing it.
#[wasm_bindgen]
pub struct Rendered {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
    report: String,
}

#[wasm_bindgen]
impl Rendered {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn report(&self) -> String {
        self.report.clone()
    }
}

impl Rendered {
    fn new(img: &RgbImage, report: &impl Serialize) -> Self {
        let rgba = img.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect();
        Self {
            width: img.width(),
            height: img.height(),
            rgba,
            report: serde_json::to_string(report).expect("report serializes"),
        }
    }
}

#[derive(Serialize)]
struct ColorMatch {
    name: String,
    srgb: [u8; 3],
    delta_e: f64,
}

/// Palette colors ranked by CIELAB distance to one sRGB color, as JSON.
#[wasm_bindgen]
pub fn classify_rgb(r: u8, g: u8, b: u8) -> String {
    let lab = srgb_to_lab([r, g, b]);
    let mut out: Vec<ColorMatch> = CultureColorPalette::default()
        .entries()
        .iter()
        .map(|e| ColorMatch {
            name: e.name.clone(),
            srgb: e.srgb,
            delta_e: delta_e76(&lab, &e.lab),
        })
        .collect();
    out.sort_by(|a, b| a.delta_e.total_cmp(&b.delta_e));
    serde_json::to_string(&out).expect("matches serialize")
}

#[derive(Serialize)]
struct HeightReport {
    true_height_cm: f64,
    estimated_height_cm: f64,
    error_cm: f64,
    plausible: bool,
    head_px: [f64; 2],
    feet_px: [f64; 2],
    mask_pixels: usize,
}

fn person(id: &str, height_cm: f64, position: [f64; 2], torso: &str, legs: &str, gender: &str) -> PersonSpec {
    PersonSpec {
        subject_id: Some(id.into()),
        height_cm,
        position: Some(position),
        velocity: [0.0, 0.0],
        width_cm: DEFAULT_BODY_WIDTH_CM,
        torso_color: torso.into(),
        leg_color: legs.into(),
        gender: gender.parse().expect("known gender"),
    }
}

/// Renders one person in front of a camera at the origin looking along +X and
/// measures their height back from the mask alone.
#[wasm_bindgen]
pub fn measure_height(
    camera_height_cm: f64,
    tilt_deg: f64,
    focal_px: f64,
    person_height_cm: f64,
    distance_cm: f64,
    lateral_cm: f64,
) -> Result<Rendered, String> {
    let size = (640, 480);
    let calib = look_from(
        "demo",
        Vector3::new(0.0, 0.0, camera_height_cm),
        0.0,
        tilt_deg.to_radians(),
        focal_px,
        (size.0 as f64 / 2.0, size.1 as f64 / 2.0),
    );
    let spec = SceneSpec {
        camera: Some(CalibrationRecord::from(&calib)),
        envelope: None,
        image_width: size.0,
        image_height: size.1,
        persons: vec![person(
            "subject",
            person_height_cm,
            [distance_cm, lateral_cm],
            "blue",
            "black",
            "male",
        )],
        noise_px: 0.0,
        frames: 1,
        background: None,
        color_bands: ColorBands::World,
    };
    let scene = generate_scene(&spec, DEMO_SEED).map_err(|e| e.to_string())?;
    let frame = &scene.frames[0];
    let mask = &frame.masks[0];
    let (head, feet) = (head_point(mask), feet_point(mask));
    let est = estimate_height(&scene.calibration, head, feet, &HeightBias::zero()).map_err(|e| e.to_string())?;
    let report = HeightReport {
        true_height_cm: person_height_cm,
        estimated_height_cm: est.height_cm,
        error_cm: est.height_cm - person_height_cm,
        plausible: est.is_plausible(),
        head_px: [head.u, head.v],
        feet_px: [feet.u, feet.v],
        mask_pixels: mask.pixel_count(),
    };
    Ok(Rendered::new(&frame.image, &report))
}

pub const DEMO_FRAMES: u32 = 10;

fn demo_scene() -> SceneSpec {
    let calib = look_from(
        "cam0",
        Vector3::new(0.0, 0.0, 400.0),
        0.0,
        20f64.to_radians(),
        1000.0,
        (480.0, 270.0),
    );
    SceneSpec {
        camera: Some(CalibrationRecord::from(&calib)),
        envelope: None,
        image_width: 960,
        image_height: 540,
        persons: vec![
            PersonSpec {
                velocity: [0.0, 15.0],
                ..person("alice", 166.0, [1300.0, -150.0], "red", "blue", "female")
            },
            PersonSpec {
                velocity: [-10.0, 0.0],
                ..person("bob", 184.0, [1500.0, 100.0], "red", "black", "male")
            },
            PersonSpec {
                velocity: [5.0, -5.0],
                ..person("carol", 168.0, [1100.0, 250.0], "green", "grey", "female")
            },
        ],
        noise_px: 0.0,
        frames: DEMO_FRAMES,
        background: None,
        color_bands: ColorBands::World,
    }
}

#[derive(Serialize)]
struct StageStep {
    stage: &'static str,
    before: usize,
    after: usize,
}

#[derive(Serialize)]
struct SearchReport {
    result: ResultRecord,
    trace: Vec<StageStep>,
}

/// Runs the cascade on one frame of a fixed three-person scene and draws the
/// survivors over it.
#[wasm_bindgen]
pub fn search_scene(frame: u32, query_json: &str) -> Result<Rendered, String> {
    let scene = generate_scene(&demo_scene(), DEMO_SEED).map_err(|e| e.to_string())?;
    let query = parse_query(query_json, &scene.palette).map_err(|e| e.to_string())?;
    let rendered = scene
        .frames
        .get(frame as usize)
        .ok_or_else(|| format!("frame {frame} out of range 0..{DEMO_FRAMES}"))?;
    let record = &scene.manifest[frame as usize];
    let bias = HeightBias::zero();
    let ctx = CameraContext::new(&scene.calibration, &bias, &scene.palette);
    let candidates = record
        .detections
        .iter()
        .map(|det| {
            let mask = rendered
                .masks
                .iter()
                .find(|m| m.detection_id == det.detection_id)
                .expect("every detection has a mask");
            build_candidate(&ctx, &rendered.image, mask, det.scores.as_ref()).map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut trace = Vec::new();
    let result = retrieve_observed(
        record.frame_id,
        candidates,
        &query,
        &CascadeConfig::default(),
        &mut |s, a, b| {
            trace.push(StageStep {
                stage: s.label(),
                before: a,
                after: b,
            })
        },
    );
    let result = ResultRecord::from(&result);
    let img = draw_overlay(&rendered.image, &result, None);
    Ok(Rendered::new(&img, &SearchReport { result, trace }))
}
