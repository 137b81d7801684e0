//! Detection → candidate → cascade, one frame at a time.

use image::RgbImage;
use thiserror::Error;

use crate::attributes::{
    classify_color, merge_scores, AttributeError, ColorScore, CultureColorPalette, ExternalScores,
};
use crate::cascade::{retrieve, Candidate, CascadeConfig, RetrievalResult, SemanticQuery};
use crate::dataio::{LoadError, SequenceBundle};
use crate::geometry::{
    build_projection, estimate_height_with, CameraCalibration, HeightBias, HeightStatus, ProjectionMatrix,
};
use crate::maskops::{body_region, extract_patch, feet_point, head_point, mask_bbox, Mask, RegionKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("frame {frame_id} detection {detection_id}: {source}")]
    Attributes {
        frame_id: u64,
        detection_id: String,
        source: AttributeError,
    },
}

/// Per-camera state shared by every detection of a frame.
pub struct CameraContext<'a> {
    pub calib: &'a CameraCalibration,
    pub projection: ProjectionMatrix,
    pub bias: &'a HeightBias,
    pub palette: &'a CultureColorPalette,
}

impl<'a> CameraContext<'a> {
    pub fn new(calib: &'a CameraCalibration, bias: &'a HeightBias, palette: &'a CultureColorPalette) -> Self {
        let projection = build_projection(calib).expect("calibration validated on load");
        Self {
            calib,
            projection,
            bias,
            palette,
        }
    }
}

fn region_colors(
    frame: &RgbImage,
    mask: &Mask,
    kind: RegionKind,
    palette: &CultureColorPalette,
) -> Option<Vec<ColorScore>> {
    let patch = body_region(mask, kind)
        .and_then(|r| extract_patch(frame, &r))
        .map_err(|e| log::debug!("detection {}: no {kind:?} patch: {e}", mask.detection_id))
        .ok()?;
    classify_color(&patch, palette).ok()
}

/// Builds the cascade's view of one detection. Height failures yield an
/// implausible candidate so the height filter drops it.
pub fn build_candidate(
    ctx: &CameraContext,
    frame: &RgbImage,
    mask: &Mask,
    external: Option<&ExternalScores>,
) -> Result<Candidate, AttributeError> {
    let (height_cm, height_status) =
        match estimate_height_with(ctx.calib, &ctx.projection, head_point(mask), feet_point(mask), ctx.bias) {
            Ok(est) => (est.height_cm, est.status),
            Err(e) => {
                log::warn!(
                    "frame {} detection {}: height failed: {e}",
                    mask.frame_id,
                    mask.detection_id
                );
                (f64::NAN, HeightStatus::Implausible)
            }
        };
    let torso = region_colors(frame, mask, RegionKind::Torso, ctx.palette);
    let legs = region_colors(frame, mask, RegionKind::Legs, ctx.palette);
    let attribute_scores = merge_scores(torso, legs, external, ctx.palette)?;
    Ok(Candidate {
        detection_id: mask.detection_id.clone(),
        estimated_height_cm: height_cm,
        height_status,
        attribute_scores,
        bbox: mask_bbox(mask),
    })
}

/// Loads one manifest frame, builds its candidates and runs the cascade.
pub fn process_frame(
    bundle: &SequenceBundle,
    index: usize,
    query: &SemanticQuery,
    config: &CascadeConfig,
) -> Result<RetrievalResult, PipelineError> {
    let record = &bundle.manifest[index];
    let calib = &bundle.calibrations[&record.camera_id];
    let ctx = CameraContext::new(calib, &bundle.bias, &bundle.palette);
    let frame = bundle.load_frame(record)?;
    let mut cands = Vec::with_capacity(record.detections.len());
    for det in &record.detections {
        let mask = bundle.load_mask(record, det)?;
        let cand =
            build_candidate(&ctx, &frame, &mask, det.scores.as_ref()).map_err(|source| PipelineError::Attributes {
                frame_id: record.frame_id,
                detection_id: det.detection_id.clone(),
                source,
            })?;
        cands.push(cand);
    }
    Ok(retrieve(record.frame_id, cands, query, config))
}
