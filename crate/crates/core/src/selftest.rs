//! Numerical self-test of the geometry chain for a single camera.

use serde::Serialize;

use crate::geometry::{
    backproject_ground, build_projection, camera_depth, distort, estimate_height_with, project, undistort,
    CameraCalibration, HeightBias, ImagePoint, WorldPoint,
};

pub const ROUNDTRIP_TOL_PX: f64 = 1e-6;
pub const HEIGHT_REL_TOL: f64 = 1e-6;
const MAX_GROUND_RANGE_CM: f64 = 2000.0;
const GRID: u32 = 16;
const TEST_HEIGHTS_CM: [f64; 4] = [140.0, 160.0, 180.0, 200.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraCheck {
    pub camera_id: String,
    /// Set when the calibration itself is rejected.
    pub invalid: Option<String>,
    /// True when κ = 0, so undistortion is the identity.
    pub undistort_identity: bool,
    pub roundtrip_samples: usize,
    pub roundtrip_max_px: f64,
    pub distortion_max_px: f64,
    pub height_samples: usize,
    pub height_max_rel: f64,
}

impl CameraCheck {
    pub fn passed(&self) -> bool {
        self.invalid.is_none()
            && self.roundtrip_samples > 0
            && self.height_samples > 0
            && self.roundtrip_max_px <= ROUNDTRIP_TOL_PX
            && self.distortion_max_px <= ROUNDTRIP_TOL_PX
            && self.height_max_rel <= HEIGHT_REL_TOL
    }
}

/// Probes a pixel grid spanning `2 × principal point`: ground round-trips
/// through every pixel whose ray hits the ground within 20 m, and exact
/// synthetic persons standing on those ground points.
pub fn check_camera(calib: &CameraCalibration) -> CameraCheck {
    let mut out = CameraCheck {
        camera_id: calib.camera_id.clone(),
        invalid: None,
        undistort_identity: !calib.has_distortion(),
        roundtrip_samples: 0,
        roundtrip_max_px: 0.0,
        distortion_max_px: 0.0,
        height_samples: 0,
        height_max_rel: 0.0,
    };
    let c = match build_projection(calib) {
        Ok(c) => c,
        Err(e) => {
            out.invalid = Some(e.to_string());
            return out;
        }
    };
    let (w, h) = (2.0 * calib.principal_x, 2.0 * calib.principal_y);
    let cam = calib.center();
    for i in 0..=GRID {
        for j in 0..=GRID {
            let p = ImagePoint::distorted(w * i as f64 / GRID as f64, h * j as f64 / GRID as f64);
            let und = undistort(p, calib);
            if out.undistort_identity && (und.u != p.u || und.v != p.v) {
                out.undistort_identity = false;
            }
            if let Ok(back) = distort(und, calib) {
                out.distortion_max_px = out.distortion_max_px.max(back.distance(&p));
            } else {
                out.distortion_max_px = f64::INFINITY;
            }
            let Ok(g) = backproject_ground(und, &c) else { continue };
            if camera_depth(&g, calib) <= 0.0 || (g.x - cam.x).hypot(g.y - cam.y) > MAX_GROUND_RANGE_CM {
                continue;
            }
            let again = project(&g, &c).map(|q| q.distance(&und)).unwrap_or(f64::INFINITY);
            out.roundtrip_samples += 1;
            out.roundtrip_max_px = out.roundtrip_max_px.max(again);

            for &height in &TEST_HEIGHTS_CM {
                let top = WorldPoint::new(g.x, g.y, height);
                if camera_depth(&top, calib) <= 0.0 {
                    continue;
                }
                let points = project(&top, &c)
                    .and_then(|hd| distort(hd, calib))
                    .and_then(|hd| Ok((hd, distort(project(&g, &c)?, calib)?)));
                let Ok((head, feet)) = points else { continue };
                let rel = match estimate_height_with(calib, &c, head, feet, &HeightBias::zero()) {
                    Ok(est) => (est.height_cm - height).abs() / height,
                    Err(_) => f64::INFINITY,
                };
                out.height_samples += 1;
                out.height_max_rel = out.height_max_rel.max(rel);
            }
        }
    }
    out
}
