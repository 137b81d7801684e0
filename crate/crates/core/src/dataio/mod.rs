//! Bundle ingestion and result persistence.
//!
//! A bundle is a directory:
//!
//! ```text
//! root/cameras/<camera_id>.json   calibration, one per camera
//! root/manifest.jsonl             one frame record per line, ascending frame_id
//! root/masks/*.png                person masks (or inline RLE in the manifest)
//! root/frames/*                   PNG or binary PPM frames
//! root/markers.csv                optional ground truth
//! root/palette.json               optional color palette
//! root/bias.json                  optional camera_id -> bias_cm map ("*" = global)
//! ```
//!
//! Everything is cross-checked by [`load_bundle`] before any frame is processed.

mod font;
mod overlay;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{CultureColorPalette, ExternalScores};
use crate::cascade::ResultRecord;
use crate::geometry::{CalibrationRecord, CameraCalibration, HeightBias};
use crate::maskops::{decode_mask, decode_runs, Mask, MaskError, MaskPayload};
use crate::metrics::{read_markers_csv, write_markers_csv, MarkerSet};

pub use overlay::{draw_overlay, write_overlay};

pub const CAMERAS_DIR: &str = "cameras";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MARKERS_FILE: &str = "markers.csv";
pub const PALETTE_FILE: &str = "palette.json";
pub const BIAS_FILE: &str = "bias.json";
const GLOBAL_BIAS_KEY: &str = "*";

/// Load failure naming the offending file and, when known, the record.
#[derive(Debug, Error)]
#[error("{}{}: {message}", file.display(), record.as_ref().map(|r| format!(" [{r}]")).unwrap_or_default())]
pub struct LoadError {
    pub file: PathBuf,
    pub record: Option<String>,
    pub message: String,
}

impl LoadError {
    fn new(file: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self {
            file: file.into(),
            record: None,
            message: message.to_string(),
        }
    }

    fn at(file: impl Into<PathBuf>, record: impl Into<String>, message: impl ToString) -> Self {
        Self {
            file: file.into(),
            record: Some(record.into()),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum WriteError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: String, source: image::ImageError },
}

impl WriteError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        WriteError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Where a detection's mask lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskRef {
    Path(String),
    Rle { width: u32, height: u32, runs: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub detection_id: String,
    pub mask: MaskRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ExternalScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub camera_id: String,
    pub frame_image_path: String,
    pub detections: Vec<DetectionRecord>,
    /// Generator seed, present on synthetic bundles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBundle {
    pub root: PathBuf,
    pub manifest: Vec<FrameRecord>,
    pub calibrations: BTreeMap<String, CameraCalibration>,
    pub bias: HeightBias,
    pub palette: CultureColorPalette,
    pub markers: Option<Vec<MarkerSet>>,
}

impl SequenceBundle {
    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn load_frame(&self, record: &FrameRecord) -> Result<RgbImage, LoadError> {
        let path = self.resolve(&record.frame_image_path);
        image::open(&path)
            .map(|img| img.to_rgb8())
            .map_err(|e| LoadError::at(&path, format!("frame {}", record.frame_id), e))
    }

    pub fn load_mask(&self, frame: &FrameRecord, det: &DetectionRecord) -> Result<Mask, LoadError> {
        let (payload, file) = match &det.mask {
            MaskRef::Path(p) => {
                let path = self.resolve(p);
                let bytes = fs::read(&path).map_err(|e| LoadError::new(&path, e))?;
                (MaskPayload::Png(bytes), path)
            }
            MaskRef::Rle { width, height, runs } => (
                MaskPayload::Rle {
                    width: *width,
                    height: *height,
                    runs: runs.clone(),
                },
                self.root.join(MANIFEST_FILE),
            ),
        };
        decode_mask(&payload, frame.frame_id, &det.detection_id).map_err(|e| {
            LoadError::at(
                file,
                format!("frame {} detection {}", frame.frame_id, det.detection_id),
                e,
            )
        })
    }

    pub fn markers_for_frame(&self, frame_id: u64) -> Vec<&MarkerSet> {
        self.markers
            .iter()
            .flatten()
            .filter(|m| m.frame_id == frame_id)
            .collect()
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, LoadError> {
    let text = fs::read_to_string(path).map_err(|e| LoadError::new(path, e))?;
    serde_json::from_str(&text).map_err(|e| LoadError::new(path, e))
}

/// Parses `cameras/*.json` without validating; the file stem must equal `camera_id`.
pub fn read_calibration_records(root: &Path) -> Result<Vec<(PathBuf, CalibrationRecord)>, LoadError> {
    let dir = root.join(CAMERAS_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| LoadError::new(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let rec: CalibrationRecord = read_json(&path)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if stem != rec.camera_id {
                return Err(LoadError::new(
                    &path,
                    format!("camera_id '{}' does not match file name", rec.camera_id),
                ));
            }
            Ok((path, rec))
        })
        .collect()
}

pub fn load_calibrations(root: &Path) -> Result<BTreeMap<String, CameraCalibration>, LoadError> {
    read_calibration_records(root)?
        .into_iter()
        .map(|(path, rec)| {
            let id = rec.camera_id.clone();
            rec.into_validated()
                .map(|c| (id, c))
                .map_err(|e| LoadError::new(&path, e))
        })
        .collect()
}

pub fn load_bias(path: &Path) -> Result<HeightBias, LoadError> {
    let map: BTreeMap<String, f64> = read_json(path)?;
    if let Some((cam, _)) = map.iter().find(|(_, b)| !b.is_finite()) {
        return Err(LoadError::at(path, cam.clone(), "bias must be finite"));
    }
    let mut bias = HeightBias::zero();
    for (cam, b) in map {
        if cam == GLOBAL_BIAS_KEY {
            bias.global = b;
        } else {
            bias.per_camera.insert(cam, b);
        }
    }
    Ok(bias)
}

fn bias_json(bias: &HeightBias) -> String {
    let mut map: BTreeMap<String, f64> = bias.per_camera.clone();
    if bias.global != 0.0 {
        map.insert(GLOBAL_BIAS_KEY.into(), bias.global);
    }
    serde_json::to_string_pretty(&map).expect("bias serializes")
}

pub fn read_manifest(path: &Path) -> Result<Vec<FrameRecord>, LoadError> {
    let file = fs::File::open(path).map_err(|e| LoadError::new(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LoadError::new(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord =
            serde_json::from_str(&line).map_err(|e| LoadError::at(path, format!("line {}", i + 1), e))?;
        records.push(rec);
    }
    Ok(records)
}

fn validate_manifest(
    root: &Path,
    manifest: &[FrameRecord],
    calibrations: &BTreeMap<String, CameraCalibration>,
    palette: &CultureColorPalette,
) -> Result<(), LoadError> {
    let manifest_path = root.join(MANIFEST_FILE);
    let mut previous: Option<u64> = None;
    for rec in manifest {
        let here = format!("frame {}", rec.frame_id);
        if previous.is_some_and(|p| rec.frame_id <= p) {
            return Err(LoadError::at(
                &manifest_path,
                here,
                format!("frame_id not strictly increasing (after {})", previous.unwrap()),
            ));
        }
        previous = Some(rec.frame_id);
        if !calibrations.contains_key(&rec.camera_id) {
            return Err(LoadError::at(
                root.join(CAMERAS_DIR).join(format!("{}.json", rec.camera_id)),
                here,
                format!("no calibration for camera '{}'", rec.camera_id),
            ));
        }
        let frame_path = root.join(&rec.frame_image_path);
        if !frame_path.is_file() {
            return Err(LoadError::at(frame_path, here, "frame image not found"));
        }
        let mut seen = BTreeSet::new();
        for det in &rec.detections {
            let at = format!("frame {} detection {}", rec.frame_id, det.detection_id);
            if !seen.insert(&det.detection_id) {
                return Err(LoadError::at(&manifest_path, at, "duplicate detection_id"));
            }
            match &det.mask {
                MaskRef::Path(p) => {
                    let mask_path = root.join(p);
                    if !mask_path.is_file() {
                        return Err(LoadError::at(mask_path, at, "mask file not found"));
                    }
                }
                MaskRef::Rle { width, height, runs } => {
                    let bits = decode_runs(runs).map_err(|e| LoadError::at(&manifest_path, at.clone(), e))?;
                    Mask::new(*width, *height, bits, rec.frame_id, det.detection_id.clone())
                        .map_err(|e: MaskError| LoadError::at(&manifest_path, at.clone(), e))?;
                }
            }
            if let Some(scores) = &det.scores {
                scores
                    .validate(palette)
                    .map_err(|e| LoadError::at(&manifest_path, at, e))?;
            }
        }
    }
    Ok(())
}

pub fn load_bundle(root: &Path) -> Result<SequenceBundle, LoadError> {
    let calibrations = load_calibrations(root)?;
    let palette_path = root.join(PALETTE_FILE);
    let palette = if palette_path.is_file() {
        CultureColorPalette::load(&palette_path).map_err(|e| LoadError::new(&palette_path, e))?
    } else {
        CultureColorPalette::default()
    };
    let bias_path = root.join(BIAS_FILE);
    let bias = if bias_path.is_file() {
        load_bias(&bias_path)?
    } else {
        HeightBias::zero()
    };
    let manifest = read_manifest(&root.join(MANIFEST_FILE))?;
    validate_manifest(root, &manifest, &calibrations, &palette)?;
    let markers_path = root.join(MARKERS_FILE);
    let markers = if markers_path.is_file() {
        let file = fs::File::open(&markers_path).map_err(|e| LoadError::new(&markers_path, e))?;
        Some(read_markers_csv(file).map_err(|e| LoadError::new(&markers_path, e))?)
    } else {
        None
    };
    Ok(SequenceBundle {
        root: root.to_path_buf(),
        manifest,
        calibrations,
        bias,
        palette,
        markers,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), WriteError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| WriteError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| WriteError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| WriteError::io(path, e))?;
    tmp.persist(path).map_err(|e| WriteError::io(path, e.error))?;
    Ok(())
}

pub fn results_jsonl(results: &[ResultRecord]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r).expect("result serializes"));
        out.push('\n');
    }
    out
}

pub fn write_results(results: &[ResultRecord], path: &Path) -> Result<(), WriteError> {
    write_atomic(path, results_jsonl(results).as_bytes())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>, LoadError> {
    let text = fs::read_to_string(path).map_err(|e| LoadError::new(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| LoadError::at(path, format!("line {}", i + 1), e)))
        .collect()
}

fn create_dir(path: &Path) -> Result<(), WriteError> {
    fs::create_dir_all(path).map_err(|e| WriteError::io(path, e))
}

/// Writes the bundle's metadata under `dest`. Frame and mask files referenced
/// by the manifest are copied when `dest` differs from the bundle root.
pub fn write_bundle(bundle: &SequenceBundle, dest: &Path) -> Result<(), WriteError> {
    create_dir(&dest.join(CAMERAS_DIR))?;
    for (id, calib) in &bundle.calibrations {
        let json = serde_json::to_string_pretty(&CalibrationRecord::from(calib)).expect("calibration serializes");
        write_atomic(&dest.join(CAMERAS_DIR).join(format!("{id}.json")), json.as_bytes())?;
    }
    let mut manifest = String::new();
    for rec in &bundle.manifest {
        manifest.push_str(&serde_json::to_string(rec).expect("frame record serializes"));
        manifest.push('\n');
    }
    write_atomic(&dest.join(MANIFEST_FILE), manifest.as_bytes())?;
    write_atomic(&dest.join(PALETTE_FILE), bundle.palette.to_json().as_bytes())?;
    write_atomic(&dest.join(BIAS_FILE), bias_json(&bundle.bias).as_bytes())?;
    if let Some(markers) = &bundle.markers {
        let mut buf = Vec::new();
        write_markers_csv(&mut buf, markers)
            .map_err(|e| WriteError::io(&dest.join(MARKERS_FILE), std::io::Error::other(e)))?;
        write_atomic(&dest.join(MARKERS_FILE), &buf)?;
    }
    if fs::canonicalize(dest).ok() != fs::canonicalize(&bundle.root).ok() {
        let referenced = bundle.manifest.iter().flat_map(|r| {
            std::iter::once(r.frame_image_path.clone()).chain(r.detections.iter().filter_map(|d| match &d.mask {
                MaskRef::Path(p) => Some(p.clone()),
                MaskRef::Rle { .. } => None,
            }))
        });
        for rel in referenced {
            let target = dest.join(&rel);
            if let Some(parent) = target.parent() {
                create_dir(parent)?;
            }
            fs::copy(bundle.resolve(&rel), &target).map_err(|e| WriteError::io(&target, e))?;
        }
    }
    Ok(())
}
