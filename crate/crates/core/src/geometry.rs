//! Single-view camera geometry for height estimation.
//!
//! A calibrated camera is described by intrinsics `k`, a world-to-camera
//! rotation `R` and translation `t`, plus Tsai-style radial distortion. The
//! projection matrix is `C = k [R | t]`. Height estimation works on a single
//! person:
//!
//! 1. undistort the head and feet pixels,
//! 2. backproject the feet onto the ground plane `Z = 0` through the
//!    homography formed by columns 1, 2 and 4 of `C`,
//! 3. hold the recovered `(X, Y)` fixed and solve the projection equations of
//!    the head pixel for `Z`, which is the height,
//! 4. subtract the per-camera bias learned from annotated training frames.
//!
//! All world lengths are centimeters.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Heights outside this range are flagged as implausible (not dropped).
pub const PLAUSIBLE_HEIGHT_CM: std::ops::RangeInclusive<f64> = 50.0..=250.0;

const ORTHONORMAL_TOL: f64 = 1e-9;
const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid calibration for camera '{camera}': {reason}")]
    InvalidCalibration { camera: String, reason: String },
    #[error("degenerate projection: homogeneous weight {0:e} is too small")]
    DegenerateProjection(f64),
    #[error("degenerate ground view: |det H| = {0:e}")]
    DegenerateGroundView(f64),
    #[error("image point maps to the ground plane's line at infinity")]
    PointAtHorizon,
    #[error("height is unobservable from this head pixel")]
    UnobservableHeight,
    #[error("radial distortion could not be inverted at normalized radius {0}")]
    DistortionNotInvertible(f64),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Intrinsic and extrinsic parameters of one calibrated camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    pub camera_id: String,
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub skew: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation, centimeters.
    pub translation: Vector3<f64>,
    /// Radial coefficients `[k1]` or `[k1, k2]` on normalized coordinates.
    pub radial_coeffs: Vec<f64>,
}

impl CameraCalibration {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let invalid = |reason: String| GeometryError::InvalidCalibration {
            camera: self.camera_id.clone(),
            reason,
        };
        if !(self.focal_x > 0.0 && self.focal_y > 0.0) {
            return Err(invalid(format!(
                "focal lengths must be positive, got ({}, {})",
                self.focal_x, self.focal_y
            )));
        }
        if !(1..=2).contains(&self.radial_coeffs.len()) {
            return Err(invalid(format!(
                "expected 1 or 2 radial coefficients, got {}",
                self.radial_coeffs.len()
            )));
        }
        let scalars = [self.principal_x, self.principal_y, self.skew];
        if scalars
            .iter()
            .chain(self.rotation.iter())
            .chain(self.translation.iter())
            .chain(self.radial_coeffs.iter())
            .any(|x| !x.is_finite())
        {
            return Err(invalid("non-finite parameter".into()));
        }
        let deviation = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if deviation > ORTHONORMAL_TOL {
            return Err(invalid(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {deviation:e})"
            )));
        }
        let det = self.rotation.determinant();
        if det < 0.0 {
            return Err(invalid(format!("rotation is a reflection (det = {det})")));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal_x,
            self.skew,
            self.principal_x,
            0.0,
            self.focal_y,
            self.principal_y,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    fn k1(&self) -> f64 {
        self.radial_coeffs.first().copied().unwrap_or(0.0)
    }

    fn k2(&self) -> f64 {
        self.radial_coeffs.get(1).copied().unwrap_or(0.0)
    }

    pub fn has_distortion(&self) -> bool {
        self.radial_coeffs.iter().any(|&k| k != 0.0)
    }

    fn normalize(&self, u: f64, v: f64) -> (f64, f64) {
        let y = (v - self.principal_y) / self.focal_y;
        let x = (u - self.principal_x - self.skew * y) / self.focal_x;
        (x, y)
    }

    fn denormalize(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.focal_x * x + self.skew * y + self.principal_x,
            self.focal_y * y + self.principal_y,
        )
    }

    fn radial_factor(&self, r2: f64) -> f64 {
        1.0 + self.k1() * r2 + self.k2() * r2 * r2
    }
}

/// On-disk calibration record (`cameras/<camera_id>.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub camera_id: String,
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    #[serde(default)]
    pub skew: f64,
    /// Row-major world-to-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub radial: Vec<f64>,
}

impl CalibrationRecord {
    /// Converts without validating; call [`CameraCalibration::validate`] next.
    pub fn to_calibration(&self) -> CameraCalibration {
        CameraCalibration {
            camera_id: self.camera_id.clone(),
            focal_x: self.focal[0],
            focal_y: self.focal[1],
            principal_x: self.principal[0],
            principal_y: self.principal[1],
            skew: self.skew,
            rotation: Matrix3::from_row_slice(&self.rotation),
            translation: Vector3::from_column_slice(&self.translation),
            radial_coeffs: self.radial.clone(),
        }
    }

    pub fn into_validated(self) -> Result<CameraCalibration, GeometryError> {
        let calib = self.to_calibration();
        calib.validate()?;
        Ok(calib)
    }
}

impl From<&CameraCalibration> for CalibrationRecord {
    fn from(c: &CameraCalibration) -> Self {
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for col in 0..3 {
                rotation[r * 3 + col] = c.rotation[(r, col)];
            }
        }
        Self {
            camera_id: c.camera_id.clone(),
            focal: [c.focal_x, c.focal_y],
            principal: [c.principal_x, c.principal_y],
            skew: c.skew,
            rotation,
            translation: [c.translation.x, c.translation.y, c.translation.z],
            radial: c.radial_coeffs.clone(),
        }
    }
}

/// The 3×4 perspective transformation `C = k [R | t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub entries: Matrix3x4<f64>,
    pub source_camera: String,
}

impl ProjectionMatrix {
    /// Ground-plane homography `[c1 c2 c4]` mapping `(X, Y, 1)` on `Z = 0` to pixels.
    pub fn ground_homography(&self) -> Matrix3<f64> {
        let c = &self.entries;
        Matrix3::from_columns(&[
            c.column(0).into_owned(),
            c.column(1).into_owned(),
            c.column(3).into_owned(),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
    pub distorted: bool,
}

impl ImagePoint {
    pub fn distorted(u: f64, v: f64) -> Self {
        Self { u, v, distorted: true }
    }

    pub fn undistorted(u: f64, v: f64) -> Self {
        Self { u, v, distorted: false }
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    fn homogeneous(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.z, 1.0)
    }
}

/// Per-camera height correction with a global fallback, in centimeters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeightBias {
    pub per_camera: BTreeMap<String, f64>,
    pub global: f64,
}

impl HeightBias {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn uniform(bias_cm: f64) -> Self {
        Self {
            per_camera: BTreeMap::new(),
            global: bias_cm,
        }
    }

    pub fn bias_for(&self, camera_id: &str) -> f64 {
        self.per_camera.get(camera_id).copied().unwrap_or(self.global)
    }
}

pub fn build_projection(calib: &CameraCalibration) -> Result<ProjectionMatrix, GeometryError> {
    calib.validate()?;
    let mut extrinsic = Matrix3x4::zeros();
    extrinsic.fixed_view_mut::<3, 3>(0, 0).copy_from(&calib.rotation);
    extrinsic.set_column(3, &calib.translation);
    Ok(ProjectionMatrix {
        entries: calib.intrinsics() * extrinsic,
        source_camera: calib.camera_id.clone(),
    })
}

/// Removes radial distortion: `x_u = x_d (1 + k1 r² + k2 r⁴)` in normalized
/// coordinates. Points already flagged undistorted pass through unchanged.
pub fn undistort(p: ImagePoint, calib: &CameraCalibration) -> ImagePoint {
    if !p.distorted {
        return p;
    }
    if !calib.has_distortion() {
        return ImagePoint::undistorted(p.u, p.v);
    }
    let (x, y) = calib.normalize(p.u, p.v);
    let f = calib.radial_factor(x * x + y * y);
    let (u, v) = calib.denormalize(x * f, y * f);
    ImagePoint::undistorted(u, v)
}

/// Inverse of [`undistort`]: maps an ideal pinhole pixel to where the lens
/// actually images it. Solved for the distorted radius with Newton's method.
pub fn distort(p: ImagePoint, calib: &CameraCalibration) -> Result<ImagePoint, GeometryError> {
    if p.distorted {
        return Ok(p);
    }
    if !calib.has_distortion() {
        return Ok(ImagePoint::distorted(p.u, p.v));
    }
    let (x, y) = calib.normalize(p.u, p.v);
    let r_u = x.hypot(y);
    if r_u == 0.0 {
        return Ok(ImagePoint::distorted(p.u, p.v));
    }
    let (k1, k2) = (calib.k1(), calib.k2());
    // g(r) = r (1 + k1 r² + k2 r⁴) - r_u
    let mut r = r_u;
    let mut converged = false;
    for _ in 0..50 {
        let r2 = r * r;
        let g = r * (1.0 + k1 * r2 + k2 * r2 * r2) - r_u;
        let dg = 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2;
        if dg.abs() < 1e-12 {
            break;
        }
        let step = g / dg;
        r -= step;
        if step.abs() <= 1e-15 * r_u.max(1.0) {
            converged = true;
            break;
        }
    }
    let residual = r * calib.radial_factor(r * r) - r_u;
    if !r.is_finite() || r <= 0.0 || !(converged || residual.abs() <= 1e-12) {
        return Err(GeometryError::DistortionNotInvertible(r_u));
    }
    let scale = r / r_u;
    let (u, v) = calib.denormalize(x * scale, y * scale);
    Ok(ImagePoint::distorted(u, v))
}

pub fn project(w: &WorldPoint, c: &ProjectionMatrix) -> Result<ImagePoint, GeometryError> {
    let h = c.entries * w.homogeneous();
    if h.z.abs() <= DEGENERATE_TOL {
        return Err(GeometryError::DegenerateProjection(h.z));
    }
    let p = ImagePoint::undistorted(h.x / h.z, h.y / h.z);
    if !(p.u.is_finite() && p.v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    Ok(p)
}

/// Depth of a world point along the camera's optical axis (positive in front).
pub fn camera_depth(w: &WorldPoint, calib: &CameraCalibration) -> f64 {
    (calib.rotation.row(2) * Vector3::new(w.x, w.y, w.z))[0] + calib.translation.z
}

/// Intersects the viewing ray of `p` with the ground plane `Z = 0`.
pub fn backproject_ground(p: ImagePoint, c: &ProjectionMatrix) -> Result<WorldPoint, GeometryError> {
    let h = c.ground_homography();
    let det = h.determinant();
    if det.is_nan() || det.abs() <= DEGENERATE_TOL {
        return Err(GeometryError::DegenerateGroundView(det));
    }
    let rhs = Vector3::new(p.u, p.v, 1.0);
    let lu = h.lu();
    let mut sol = lu.solve(&rhs).ok_or(GeometryError::DegenerateGroundView(det))?;
    // One step of iterative refinement; pixels far off-frame are ill-conditioned.
    if let Some(fix) = lu.solve(&(rhs - h * sol)) {
        sol += fix;
    }
    if sol.z.abs() <= DEGENERATE_TOL * sol.xy().norm().max(1.0) {
        return Err(GeometryError::PointAtHorizon);
    }
    let w = WorldPoint::ground(sol.x / sol.z, sol.y / sol.z);
    if !(w.x.is_finite() && w.y.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    Ok(w)
}

/// Linear coefficients `(a, b)` of the cross-multiplied projection equation
/// `a Z + b = 0` for one image coordinate at fixed ground position.
fn head_row(c: &Matrix3x4<f64>, row: usize, coord: f64, x: f64, y: f64) -> (f64, f64) {
    let a = c[(row, 2)] - coord * c[(2, 2)];
    let b = c[(row, 0)] * x + c[(row, 1)] * y + c[(row, 3)] - coord * (c[(2, 0)] * x + c[(2, 1)] * y + c[(2, 3)]);
    (a, b)
}

/// Solves for the height `Z` of a point imaged at `head` directly above the
/// ground position `ground_xy`, least squares over both image equations.
pub fn solve_head_height(ground_xy: &WorldPoint, head: ImagePoint, c: &ProjectionMatrix) -> Result<f64, GeometryError> {
    let (au, bu) = head_row(&c.entries, 0, head.u, ground_xy.x, ground_xy.y);
    let (av, bv) = head_row(&c.entries, 1, head.v, ground_xy.x, ground_xy.y);
    let norm2 = au * au + av * av;
    if norm2.sqrt() <= DEGENERATE_TOL {
        return Err(GeometryError::UnobservableHeight);
    }
    let z = -(au * bu + av * bv) / norm2;
    if !z.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    Ok(z)
}

/// Sum of squared algebraic residuals minimized by [`solve_head_height`].
pub fn head_height_residual(ground_xy: &WorldPoint, head: ImagePoint, c: &ProjectionMatrix, z: f64) -> f64 {
    let (au, bu) = head_row(&c.entries, 0, head.u, ground_xy.x, ground_xy.y);
    let (av, bv) = head_row(&c.entries, 1, head.v, ground_xy.x, ground_xy.y);
    (au * z + bu).powi(2) + (av * z + bv).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightStatus {
    Plausible,
    Implausible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightEstimate {
    /// Bias-corrected height.
    pub height_cm: f64,
    pub uncorrected_cm: f64,
    pub ground: WorldPoint,
    pub status: HeightStatus,
}

impl HeightEstimate {
    pub fn is_plausible(&self) -> bool {
        self.status == HeightStatus::Plausible
    }
}

pub fn estimate_height(
    calib: &CameraCalibration,
    head_raw: ImagePoint,
    feet_raw: ImagePoint,
    bias: &HeightBias,
) -> Result<HeightEstimate, GeometryError> {
    let c = build_projection(calib)?;
    estimate_height_with(calib, &c, head_raw, feet_raw, bias)
}

/// [`estimate_height`] with a projection matrix already built for `calib`.
pub fn estimate_height_with(
    calib: &CameraCalibration,
    c: &ProjectionMatrix,
    head_raw: ImagePoint,
    feet_raw: ImagePoint,
    bias: &HeightBias,
) -> Result<HeightEstimate, GeometryError> {
    let head = undistort(head_raw, calib);
    let feet = undistort(feet_raw, calib);
    let ground = backproject_ground(feet, c)?;
    let raw = solve_head_height(&ground, head, c)?;
    let height_cm = raw - bias.bias_for(&calib.camera_id);
    let status = if PLAUSIBLE_HEIGHT_CM.contains(&height_cm) {
        HeightStatus::Plausible
    } else {
        log::debug!(
            "camera {}: implausible height {height_cm:.1} cm flagged",
            calib.camera_id
        );
        HeightStatus::Implausible
    };
    Ok(HeightEstimate {
        height_cm,
        uncorrected_cm: raw,
        ground,
        status,
    })
}

/// One training observation: height from automatic head/feet points versus
/// the height from annotated points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightPair {
    pub camera_id: String,
    pub estimated_cm: f64,
    pub annotated_cm: f64,
}

/// Per-camera `mean(estimated) - mean(annotated)`; global fallback stays 0.
pub fn compute_bias(pairs: &[HeightPair]) -> HeightBias {
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for p in pairs {
        let e = sums.entry(p.camera_id.clone()).or_insert((0.0, 0.0, 0));
        e.0 += p.estimated_cm;
        e.1 += p.annotated_cm;
        e.2 += 1;
    }
    let per_camera = sums
        .into_iter()
        .map(|(cam, (est, ann, n))| (cam, est / n as f64 - ann / n as f64))
        .collect();
    HeightBias {
        per_camera,
        global: 0.0,
    }
}

/// Single correction pooled over all cameras, stored as the global fallback.
pub fn compute_global_bias(pairs: &[HeightPair]) -> HeightBias {
    if pairs.is_empty() {
        return HeightBias::zero();
    }
    let n = pairs.len() as f64;
    let est: f64 = pairs.iter().map(|p| p.estimated_cm).sum();
    let ann: f64 = pairs.iter().map(|p| p.annotated_cm).sum();
    HeightBias::uniform(est / n - ann / n)
}

/// Builds a roll-free camera at `position` looking along compass angle `yaw`
/// (radians from +X towards +Y), pitched down by `tilt` radians.
pub fn look_from(
    camera_id: &str,
    position: Vector3<f64>,
    yaw: f64,
    tilt: f64,
    focal: f64,
    principal: (f64, f64),
) -> CameraCalibration {
    let forward = Vector3::new(yaw.cos() * tilt.cos(), yaw.sin() * tilt.cos(), -tilt.sin());
    let right = Vector3::new(yaw.sin(), -yaw.cos(), 0.0);
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -(rotation * position);
    CameraCalibration {
        camera_id: camera_id.to_string(),
        focal_x: focal,
        focal_y: focal,
        principal_x: principal.0,
        principal_y: principal.1,
        skew: 0.0,
        rotation,
        translation,
        radial_coeffs: vec![0.0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn simple_camera() -> CameraCalibration {
        CameraCalibration {
            camera_id: "cam0".into(),
            focal_x: 800.0,
            focal_y: 800.0,
            principal_x: 320.0,
            principal_y: 240.0,
            skew: 0.0,
            rotation: Matrix3::identity(),
            translation: Vector3::new(0.0, 0.0, 500.0),
            radial_coeffs: vec![0.0],
        }
    }

    fn street_camera() -> CameraCalibration {
        look_from(
            "street",
            Vector3::new(0.0, 0.0, 400.0),
            0.3,
            25f64.to_radians(),
            900.0,
            (640.0, 360.0),
        )
    }

    #[test]
    fn identity_projection() {
        let calib = CameraCalibration {
            camera_id: "id".into(),
            focal_x: 1.0,
            focal_y: 1.0,
            principal_x: 0.0,
            principal_y: 0.0,
            translation: Vector3::zeros(),
            ..simple_camera()
        };
        let c = build_projection(&calib).unwrap();
        let mut expected = Matrix3x4::zeros();
        expected.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        assert_eq!(c.entries, expected);
    }

    #[test]
    fn projection_row_one_matches_hand_product() {
        let c = build_projection(&simple_camera()).unwrap();
        let row: Vec<f64> = c.entries.row(0).iter().copied().collect();
        assert_eq!(row, vec![800.0, 0.0, 320.0, 160000.0]);
    }

    #[test]
    fn reflected_rotation_is_rejected() {
        let mut calib = simple_camera();
        calib.rotation = Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            build_projection(&calib),
            Err(GeometryError::InvalidCalibration { .. })
        ));
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let mut calib = simple_camera();
        calib.rotation[(0, 0)] = 1.0 + 1e-6;
        assert!(calib.validate().is_err());
    }

    #[test]
    fn radial_coefficient_count_is_checked() {
        let mut calib = simple_camera();
        calib.radial_coeffs = vec![];
        assert!(calib.validate().is_err());
        calib.radial_coeffs = vec![0.1, 0.2, 0.3];
        assert!(calib.validate().is_err());
        calib.radial_coeffs = vec![0.1, 0.2];
        assert!(calib.validate().is_ok());
    }

    #[test]
    fn zero_distortion_is_identity() {
        let calib = simple_camera();
        let p = ImagePoint::distorted(123.456_789, 987.654_321);
        let q = undistort(p, &calib);
        assert_eq!((q.u, q.v), (p.u, p.v));
        assert!(!q.distorted);
    }

    #[test]
    fn principal_point_is_fixed_by_distortion() {
        let mut calib = simple_camera();
        calib.radial_coeffs = vec![0.37, -0.2];
        let q = undistort(ImagePoint::distorted(320.0, 240.0), &calib);
        assert_eq!((q.u, q.v), (320.0, 240.0));
    }

    #[test]
    fn radial_factor_on_normalized_point() {
        let mut calib = simple_camera();
        calib.radial_coeffs = vec![0.1];
        // normalized (0.5, 0) is pixel (320 + 400, 240)
        let q = undistort(ImagePoint::distorted(720.0, 240.0), &calib);
        let (x, y) = calib.normalize(q.u, q.v);
        assert!((x - 0.5125).abs() < 1e-12);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn distort_inverts_undistort() {
        let mut calib = street_camera();
        calib.radial_coeffs = vec![-0.12, 0.03];
        for &(u, v) in &[(100.0, 80.0), (640.0, 360.0), (1200.0, 700.0), (700.5, 20.25)] {
            let ideal = ImagePoint::undistorted(u, v);
            let raw = distort(ideal, &calib).unwrap();
            let back = undistort(raw, &calib);
            assert!(back.distance(&ideal) < 1e-9, "{u},{v}: {back:?}");
        }
    }

    #[test]
    fn optical_axis_projects_to_origin() {
        let calib = CameraCalibration {
            focal_x: 1.0,
            focal_y: 1.0,
            principal_x: 0.0,
            principal_y: 0.0,
            translation: Vector3::zeros(),
            ..simple_camera()
        };
        let c = build_projection(&calib).unwrap();
        let p = project(&WorldPoint::new(0.0, 0.0, 1.0), &c).unwrap();
        assert_eq!((p.u, p.v), (0.0, 0.0));
    }

    #[test]
    fn pinhole_hand_evaluation() {
        let c = build_projection(&simple_camera()).unwrap();
        let p = project(&WorldPoint::new(100.0, 0.0, 0.0), &c).unwrap();
        assert_eq!((p.u, p.v), (480.0, 240.0));
    }

    #[test]
    fn zero_depth_is_degenerate() {
        let c = build_projection(&simple_camera()).unwrap();
        // camera-frame depth = z + 500
        let err = project(&WorldPoint::new(10.0, 10.0, -500.0), &c).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateProjection(_)));
    }

    #[test]
    fn backproject_hand_example() {
        // world Z = 0 is the plane facing this camera at depth 500
        let c = build_projection(&simple_camera()).unwrap();
        let w = backproject_ground(ImagePoint::undistorted(480.0, 240.0), &c).unwrap();
        assert!((w.x - 100.0).abs() < 1e-9 && w.y.abs() < 1e-9 && w.z == 0.0);
    }

    #[test]
    fn degenerate_ground_view() {
        // camera center on the ground plane looking along it
        let calib = look_from("flat", Vector3::zeros(), 0.0, 0.0, 800.0, (320.0, 240.0));
        let c = build_projection(&calib).unwrap();
        let err = backproject_ground(ImagePoint::undistorted(300.0, 300.0), &c).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateGroundView(_)));
    }

    #[test]
    fn head_on_feet_gives_zero_height() {
        let calib = street_camera();
        let c = build_projection(&calib).unwrap();
        let feet = project(&WorldPoint::ground(800.0, 150.0), &c).unwrap();
        let ground = backproject_ground(feet, &c).unwrap();
        let z = solve_head_height(&ground, feet, &c).unwrap();
        assert!(z.abs() < 1e-9);
    }

    #[test]
    fn synthetic_person_height_is_recovered() {
        let calib = street_camera();
        let c = build_projection(&calib).unwrap();
        let head = project(&WorldPoint::new(800.0, 150.0, 170.0), &c).unwrap();
        let feet = project(&WorldPoint::ground(800.0, 150.0), &c).unwrap();
        let est = estimate_height(&calib, head, feet, &HeightBias::zero()).unwrap();
        assert!((est.height_cm - 170.0).abs() < 1e-6);
        assert!(est.is_plausible());
    }

    #[test]
    fn synthetic_person_through_lens_distortion() {
        let mut calib = street_camera();
        calib.radial_coeffs = vec![-0.08, 0.01];
        let c = build_projection(&calib).unwrap();
        let head = distort(project(&WorldPoint::new(700.0, -90.0, 182.5), &c).unwrap(), &calib).unwrap();
        let feet = distort(project(&WorldPoint::ground(700.0, -90.0), &c).unwrap(), &calib).unwrap();
        let est = estimate_height(&calib, head, feet, &HeightBias::zero()).unwrap();
        assert!((est.height_cm - 182.5).abs() < 1e-6, "{}", est.height_cm);
    }

    #[test]
    fn head_sensitivity_matches_linearization() {
        // A +1 px vertical head error moves the least-squares height by
        // g_v / |g|², where g is the image velocity of the head per cm of Z,
        // measured here by central differences of the forward projection.
        let calib = street_camera();
        let c = build_projection(&calib).unwrap();
        for &(x, y, h) in &[(800.0, 150.0, 170.0), (600.0, -200.0, 150.0), (1100.0, 300.0, 195.0)] {
            let head = project(&WorldPoint::new(x, y, h), &c).unwrap();
            let ground = WorldPoint::ground(x, y);
            let eps = 1e-3;
            let hi = project(&WorldPoint::new(x, y, h + eps), &c).unwrap();
            let lo = project(&WorldPoint::new(x, y, h - eps), &c).unwrap();
            let (gu, gv) = ((hi.u - lo.u) / (2.0 * eps), (hi.v - lo.v) / (2.0 * eps));
            let predicted = gv / (gu * gu + gv * gv);
            let shifted = ImagePoint::undistorted(head.u, head.v + 1.0);
            let observed = solve_head_height(&ground, shifted, &c).unwrap() - h;
            assert!(
                (observed - predicted).abs() <= 0.05 * predicted.abs(),
                "observed {observed} predicted {predicted}"
            );
        }
    }

    #[test]
    fn residual_is_minimal_at_solution() {
        let calib = street_camera();
        let c = build_projection(&calib).unwrap();
        let ground = WorldPoint::ground(900.0, 40.0);
        let head = ImagePoint::undistorted(700.3, 120.9);
        let z = solve_head_height(&ground, head, &c).unwrap();
        let r0 = head_height_residual(&ground, head, &c, z);
        assert!(head_height_residual(&ground, head, &c, z + 1e-4) >= r0);
        assert!(head_height_residual(&ground, head, &c, z - 1e-4) >= r0);
    }

    #[test]
    fn bias_is_subtracted() {
        let calib = street_camera();
        let c = build_projection(&calib).unwrap();
        let head = project(&WorldPoint::new(800.0, 150.0, 173.2), &c).unwrap();
        let feet = project(&WorldPoint::ground(800.0, 150.0), &c).unwrap();
        let mut bias = HeightBias::zero();
        bias.per_camera.insert("street".into(), 3.2);
        let est = estimate_height(&calib, head, feet, &bias).unwrap();
        assert!((est.height_cm - 170.0).abs() < 1e-6);
        assert_eq!(est.height_cm, est.uncorrected_cm - 3.2);
    }

    #[test]
    fn implausible_heights_are_flagged_not_dropped() {
        let calib = street_camera();
        let c = build_projection(&calib).unwrap();
        let head = project(&WorldPoint::new(800.0, 150.0, 30.0), &c).unwrap();
        let feet = project(&WorldPoint::ground(800.0, 150.0), &c).unwrap();
        let est = estimate_height(&calib, head, feet, &HeightBias::zero()).unwrap();
        assert_eq!(est.status, HeightStatus::Implausible);
        assert!((est.height_cm - 30.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_feet_propagates() {
        let calib = look_from("flat", Vector3::zeros(), 0.0, 0.0, 800.0, (320.0, 240.0));
        let p = ImagePoint::distorted(300.0, 300.0);
        assert!(estimate_height(&calib, p, p, &HeightBias::zero()).is_err());
    }

    fn pair(cam: &str, e: f64, a: f64) -> HeightPair {
        HeightPair {
            camera_id: cam.into(),
            estimated_cm: e,
            annotated_cm: a,
        }
    }

    #[test]
    fn bias_from_pairs() {
        let b = compute_bias(&[pair("a", 173.2, 170.0)]);
        assert!((b.bias_for("a") - 3.2).abs() < 1e-12);
        let b = compute_bias(&[pair("a", 180.0, 180.0), pair("a", 160.0, 160.0)]);
        assert_eq!(b.bias_for("a"), 0.0);
        let b = compute_bias(&[pair("a", 175.0, 170.0), pair("a", 165.0, 168.0), pair("b", 1.0, 0.0)]);
        assert_eq!(b.bias_for("a"), 1.0);
        assert_eq!(b.bias_for("b"), 1.0);
        assert_eq!(b.bias_for("unseen"), 0.0);
        assert_eq!(compute_bias(&[]), HeightBias::zero());
        assert_eq!(
            compute_global_bias(&[pair("a", 175.0, 170.0), pair("b", 165.0, 168.0)]).bias_for("z"),
            1.0
        );
    }

    #[test]
    fn calibration_record_round_trip() {
        let calib = street_camera();
        let rec = CalibrationRecord::from(&calib);
        let json = serde_json::to_string(&rec).unwrap();
        let back: CalibrationRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_validated().unwrap(), calib);
    }

    #[test]
    fn skew_defaults_to_zero() {
        let json = r#"{"camera_id":"c","focal":[800,800],"principal":[320,240],
            "rotation":[1,0,0,0,1,0,0,0,1],"translation":[0,0,500],"radial":[0.0]}"#;
        let rec: CalibrationRecord = serde_json::from_str(json).unwrap();
        assert_eq!(rec.skew, 0.0);
        assert!(rec.into_validated().is_ok());
    }

    proptest! {
        #[test]
        fn ground_round_trip(
            yaw in -3.1f64..3.1,
            tilt in 0.05f64..0.8,
            cam_h in 250.0f64..600.0,
            focal in 400.0f64..1200.0,
            dist in 100.0f64..2000.0,
            bearing in -0.6f64..0.6,
        ) {
            let calib = look_from("p", Vector3::new(10.0, -20.0, cam_h), yaw, tilt, focal, (640.0, 360.0));
            let c = build_projection(&calib).unwrap();
            let g = WorldPoint::ground(10.0 + dist * (yaw + bearing).cos(), -20.0 + dist * (yaw + bearing).sin());
            let p = project(&g, &c).unwrap();
            let back = backproject_ground(p, &c).unwrap();
            let q = project(&back, &c).unwrap();
            prop_assert!(q.distance(&p) <= 1e-6);
        }

        #[test]
        fn bias_linearity(b in -20.0f64..20.0, h in 140.0f64..200.0) {
            let calib = street_camera();
            let c = build_projection(&calib).unwrap();
            let head = project(&WorldPoint::new(800.0, 150.0, h), &c).unwrap();
            let feet = project(&WorldPoint::ground(800.0, 150.0), &c).unwrap();
            let zero = estimate_height(&calib, head, feet, &HeightBias::zero()).unwrap();
            let biased = estimate_height(&calib, head, feet, &HeightBias::uniform(b)).unwrap();
            prop_assert_eq!(biased.height_cm, zero.height_cm - b);
        }
    }
}
