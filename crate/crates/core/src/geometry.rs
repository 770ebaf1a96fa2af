//! Planar poses, rigid transforms, mat frames and avatar calibration.
//!
//! Lengths are centimetres and angles are degrees throughout. Trigonometry
//! converts to radians internally.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Anchors further than this from the mat origin are rejected (10 m).
pub const MAX_ANCHOR_DISTANCE_CM: f64 = 1000.0;

/// Default side length of one tracking mat.
pub const DEFAULT_MAT_SIDE_CM: f64 = 55.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("anchor is {distance:.1} cm from the mat origin (limit {MAX_ANCHOR_DISTANCE_CM} cm)")]
    AnchorTooFar { distance: f64 },
    #[error("calibration was recorded for mat {expected:?}, anchor is on mat {found:?}")]
    MatMismatch { expected: String, found: String },
    #[error("invalid mat {id:?}: {reason}")]
    InvalidMat { id: String, reason: String },
}

/// Normalizes an angle into `[0, 360)`.
pub fn normalize_deg(angle: f64) -> f64 {
    let a = angle.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Signed shortest angular difference `to - from`, in `(-180, 180]`.
pub fn angle_diff_deg(to: f64, from: f64) -> f64 {
    let d = normalize_deg(to - from);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// Planar pose. `theta` is kept in `[0, 360)` by every constructor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_deg(theta),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn with_position(&self, p: Point) -> Self {
        Self::new(p.x, p.y, self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// The rigid transform placing this pose's frame in its parent frame.
    pub fn as_transform(&self) -> Transform2D {
        Transform2D::new(self.theta, self.x, self.y)
    }
}

/// Similarity transform: `p -> scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    pub rotation: f64,
    pub dx: f64,
    pub dy: f64,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for Transform2D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform2D {
    pub const IDENTITY: Transform2D = Transform2D {
        rotation: 0.0,
        dx: 0.0,
        dy: 0.0,
        scale: 1.0,
    };

    pub fn new(rotation: f64, dx: f64, dy: f64) -> Self {
        Self {
            rotation: normalize_deg(rotation),
            dx,
            dy,
            scale: 1.0,
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self::new(0.0, dx, dy)
    }

    pub fn rotation(deg: f64) -> Self {
        Self::new(deg, 0.0, 0.0)
    }

    /// Uniform scale about the origin.
    ///
    /// Panics if `scale` is not strictly positive.
    pub fn scaling(scale: f64) -> Self {
        assert!(scale > 0.0, "transform scale must be positive");
        Self {
            scale,
            ..Self::IDENTITY
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.to_radians().sin_cos();
        Point::new(
            self.scale * (c * p.x - s * p.y) + self.dx,
            self.scale * (s * p.x + c * p.y) + self.dy,
        )
    }

    /// Rotates a direction vector and scales it, without translating.
    pub fn apply_vector(&self, v: Point) -> Point {
        let (s, c) = self.rotation.to_radians().sin_cos();
        Point::new(self.scale * (c * v.x - s * v.y), self.scale * (s * v.x + c * v.y))
    }

    pub fn apply_pose(&self, pose: &Pose2D) -> Pose2D {
        let p = self.apply(pose.position());
        Pose2D::new(p.x, p.y, pose.theta + self.rotation)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Transform2D) -> Transform2D {
        let t = self.apply(Point::new(other.dx, other.dy));
        Transform2D {
            rotation: normalize_deg(self.rotation + other.rotation),
            dx: t.x,
            dy: t.y,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Transform2D {
        let inv_scale = 1.0 / self.scale;
        let rot = Transform2D {
            rotation: normalize_deg(-self.rotation),
            dx: 0.0,
            dy: 0.0,
            scale: inv_scale,
        };
        let t = rot.apply(Point::new(self.dx, self.dy));
        Transform2D {
            dx: -t.x,
            dy: -t.y,
            ..rot
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.is_finite() && self.dx.is_finite() && self.dy.is_finite() && self.scale.is_finite()
    }

    /// Component-wise comparison; rotation compared on the circle.
    pub fn approx_eq(&self, other: &Transform2D, eps: f64) -> bool {
        angle_diff_deg(self.rotation, other.rotation).abs() < eps
            && (self.dx - other.dx).abs() < eps
            && (self.dy - other.dy).abs() < eps
            && (self.scale - other.scale).abs() < eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    Horizontal,
    Vertical,
}

/// One tracking mat. Mat-local coordinates span `[0, width] x [0, height]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatFrame {
    pub id: String,
    #[serde(default = "default_extent")]
    pub extent: (f64, f64),
    #[serde(default)]
    pub origin_in_world: Transform2D,
    #[serde(default)]
    pub orientation_mode: Orientation,
    #[serde(default)]
    pub tiling_offset: Option<(i32, i32)>,
}

fn default_extent() -> (f64, f64) {
    (DEFAULT_MAT_SIDE_CM, DEFAULT_MAT_SIDE_CM)
}

impl MatFrame {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            extent: default_extent(),
            origin_in_world: Transform2D::IDENTITY,
            orientation_mode: Orientation::Horizontal,
            tiling_offset: None,
        }
    }

    /// A mat placed at grid cell `(col, row)` of an array anchored at `base`.
    pub fn tiled(id: impl Into<String>, base: Transform2D, col: i32, row: i32) -> Self {
        let mut mat = Self::new(id);
        let (w, h) = mat.extent;
        mat.origin_in_world = base.compose(&Transform2D::translation(col as f64 * w, row as f64 * h));
        mat.tiling_offset = Some((col, row));
        mat
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let (w, h) = self.extent;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::InvalidMat {
                id: self.id.clone(),
                reason: format!("extent ({w}, {h}) must be positive"),
            });
        }
        if !self.origin_in_world.is_finite() || self.origin_in_world.scale != 1.0 {
            return Err(GeometryError::InvalidMat {
                id: self.id.clone(),
                reason: "origin must be a finite rigid transform".into(),
            });
        }
        Ok(())
    }

    pub fn to_local(&self, world: Point) -> Point {
        self.origin_in_world.inverse().apply(world)
    }

    pub fn to_world(&self, local: Point) -> Point {
        self.origin_in_world.apply(local)
    }

    pub fn contains(&self, world: Point) -> bool {
        let p = self.to_local(world);
        let eps = 1e-9;
        p.x >= -eps && p.y >= -eps && p.x <= self.extent.0 + eps && p.y <= self.extent.1 + eps
    }

    /// Nearest point of the mat rectangle to `world`.
    pub fn clamp(&self, world: Point) -> Point {
        let p = self.to_local(world);
        self.to_world(Point::new(p.x.clamp(0.0, self.extent.0), p.y.clamp(0.0, self.extent.1)))
    }

    pub fn center(&self) -> Point {
        self.to_world(Point::new(self.extent.0 / 2.0, self.extent.1 / 2.0))
    }
}

/// Checks that tiled mats occupy distinct grid cells (and so have disjoint interiors).
pub fn validate_tiling(mats: &[MatFrame]) -> Result<(), GeometryError> {
    let mut seen = std::collections::BTreeMap::new();
    for mat in mats {
        mat.validate()?;
        if let Some(cell) = mat.tiling_offset {
            if let Some(other) = seen.insert(cell, mat.id.clone()) {
                return Err(GeometryError::InvalidMat {
                    id: mat.id.clone(),
                    reason: format!("tile {cell:?} already used by {other:?}"),
                });
            }
        }
    }
    Ok(())
}

/// Maps the remote avatar frame into a local mat frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub avatar_to_mat: Transform2D,
    pub created_at: f64,
    pub mat_id: String,
}

impl CalibrationRecord {
    pub fn identity(mat_id: impl Into<String>) -> Self {
        Self {
            avatar_to_mat: Transform2D::IDENTITY,
            created_at: 0.0,
            mat_id: mat_id.into(),
        }
    }

    /// Avatar placement in the world once the mat origin sits at `mat_origin`.
    fn placement(&self, mat_origin: &Transform2D) -> Transform2D {
        mat_origin.compose(&self.avatar_to_mat)
    }
}

/// Records where the avatar was aligned relative to `mat`.
///
/// The result maps avatar-frame coordinates to mat-local coordinates, so the
/// avatar anchor itself lands at its pose as seen from the mat.
pub fn calibrate_manual(
    avatar_anchor_in_world: Pose2D,
    mat: &MatFrame,
    created_at: f64,
) -> Result<CalibrationRecord, GeometryError> {
    if !avatar_anchor_in_world.is_finite() {
        return Err(GeometryError::NonFiniteInput("avatar anchor"));
    }
    if !mat.origin_in_world.is_finite() {
        return Err(GeometryError::NonFiniteInput("mat origin"));
    }
    let origin = Point::new(mat.origin_in_world.dx, mat.origin_in_world.dy);
    let distance = avatar_anchor_in_world.position().distance(origin);
    if distance > MAX_ANCHOR_DISTANCE_CM {
        return Err(GeometryError::AnchorTooFar { distance });
    }
    let avatar_to_mat = mat
        .origin_in_world
        .inverse()
        .compose(&avatar_anchor_in_world.as_transform());
    Ok(CalibrationRecord {
        avatar_to_mat,
        created_at,
        mat_id: mat.id.clone(),
    })
}

/// Re-places the avatar from a fresh observation of the mat's anchor code.
///
/// `anchor_pose` is the world pose of the anchor printed at the mat origin.
/// The returned transform is the avatar's world placement.
pub fn relocalize_from_anchor(
    anchor_mat_id: &str,
    anchor_pose: Pose2D,
    record: &CalibrationRecord,
) -> Result<Transform2D, GeometryError> {
    if anchor_mat_id != record.mat_id {
        return Err(GeometryError::MatMismatch {
            expected: record.mat_id.clone(),
            found: anchor_mat_id.to_string(),
        });
    }
    if !anchor_pose.is_finite() {
        return Err(GeometryError::NonFiniteInput("anchor pose"));
    }
    Ok(record.placement(&anchor_pose.as_transform()))
}

/// Calibration records keyed by mat id, persisted as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStore {
    pub records: std::collections::BTreeMap<String, CalibrationRecord>,
}

impl CalibrationStore {
    pub fn insert(&mut self, record: CalibrationRecord) {
        self.records.insert(record.mat_id.clone(), record);
    }

    pub fn get(&self, mat_id: &str) -> Option<&CalibrationRecord> {
        self.records.get(mat_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
