//! Points, clouds, planar poses and triangle meshes.
//!
//! Frames are z-up. The Sensor frame has the LiDAR at its origin. The
//! Canonical frame centers a vehicle on the xy-centroid of its bounding box,
//! with its lowest point at z=0 and its nose along +x. A [`PlanarPose`] maps
//! Canonical coordinates into the Sensor frame.

mod io;
mod mesh;

pub use io::{read_obj, read_ply, write_obj, write_ply};
pub use mesh::{closest_point_on_triangle, Aabb, TriMesh};

use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("triangle {triangle} references vertex {index} but the mesh has {len} vertices")]
    IndexOutOfRange { triangle: usize, index: usize, len: usize },
    #[error("expected an n×3 tensor, got shape {0:?}")]
    BadTensorShape(Vec<usize>),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Point3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Point3<U> {
        Point3::new(U::of(self.x.as_f64()), U::of(self.y.as_f64()), U::of(self.z.as_f64()))
    }

    pub fn min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl<T: Real> Add for Point3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Point3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Point3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Point3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    Sensor,
    Canonical,
}

impl Frame {
    pub fn as_str(self) -> &'static str {
        match self {
            Frame::Sensor => "sensor",
            Frame::Canonical => "canonical",
        }
    }
}

/// Ordered 3D points tagged with the frame they are expressed in.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<Point3<T>>,
    frame: Frame,
}

impl<T: Real> PointCloud<T> {
    /// Rejects non-finite points. Empty clouds are allowed here (a scan can
    /// legitimately miss); consumers that need points check for themselves.
    pub fn new(points: Vec<Point3<T>>, frame: Frame) -> Result<Self, GeometryError> {
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite { index });
        }
        Ok(Self { points, frame })
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3<T>> {
        self.points
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ensure_non_empty(&self) -> Result<(), GeometryError> {
        if self.points.is_empty() {
            Err(GeometryError::EmptyCloud)
        } else {
            Ok(())
        }
    }

    /// Row-major n×3 tensor in a possibly different scalar type.
    pub fn to_tensor<U: Real>(&self) -> Tensor<U> {
        let data = self
            .points
            .iter()
            .flat_map(|p| [U::of(p.x.as_f64()), U::of(p.y.as_f64()), U::of(p.z.as_f64())])
            .collect();
        Tensor::matrix(self.points.len(), 3, data).expect("n×3 by construction")
    }

    pub fn from_tensor<U: Real>(t: &Tensor<U>, frame: Frame) -> Result<Self, GeometryError> {
        match t.shape() {
            [_, 3] => {}
            s => return Err(GeometryError::BadTensorShape(s.to_vec())),
        }
        let points = t
            .data()
            .chunks(3)
            .map(|c| Point3::new(T::of(c[0].as_f64()), T::of(c[1].as_f64()), T::of(c[2].as_f64())))
            .collect();
        Self::new(points, frame)
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            points: self.points.iter().map(|p| p.cast()).collect(),
            frame: self.frame,
        }
    }
}

/// Yaw-only rotation plus translation. Pitch and roll are zero; `tz` is a
/// known constant that estimators never predict.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarPose<T> {
    yaw: T,
    pub tx: T,
    pub ty: T,
    pub tz: T,
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle<T: Real>(angle: T) -> T {
    let two_pi = T::of(std::f64::consts::TAU);
    let mut r = angle % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    if r >= two_pi {
        r = T::zero();
    }
    r
}

impl<T: Real> PlanarPose<T> {
    pub fn new(yaw: T, tx: T, ty: T, tz: T) -> Self {
        Self {
            yaw: normalize_angle(yaw),
            tx,
            ty,
            tz,
        }
    }

    pub fn planar(yaw: T, tx: T, ty: T) -> Self {
        Self::new(yaw, tx, ty, T::zero())
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), T::zero(), T::zero(), T::zero())
    }

    pub fn yaw(&self) -> T {
        self.yaw
    }

    pub fn translation(&self) -> Point3<T> {
        Point3::new(self.tx, self.ty, self.tz)
    }

    pub fn is_finite(&self) -> bool {
        self.yaw.is_finite() && self.translation().is_finite()
    }

    pub fn rotate(&self, p: Point3<T>) -> Point3<T> {
        let (s, c) = self.yaw.sin_cos();
        Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
    }

    /// `R·p + t`.
    pub fn apply(&self, p: Point3<T>) -> Point3<T> {
        self.rotate(p) + self.translation()
    }

    pub fn inverse(&self) -> Self {
        let back = Self::new(-self.yaw, T::zero(), T::zero(), T::zero());
        let t = -back.rotate(self.translation());
        Self::new(-self.yaw, t.x, t.y, t.z)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        let t = self.rotate(other.translation()) + self.translation();
        Self::new(self.yaw + other.yaw, t.x, t.y, t.z)
    }

    pub fn cast<U: Real>(&self) -> PlanarPose<U> {
        PlanarPose::new(
            U::of(self.yaw.as_f64()),
            U::of(self.tx.as_f64()),
            U::of(self.ty.as_f64()),
            U::of(self.tz.as_f64()),
        )
    }
}

/// Applies `pose` to every point, preserving order. The frame tag is kept.
pub fn transform_cloud<T: Real>(cloud: &PointCloud<T>, pose: &PlanarPose<T>) -> Result<PointCloud<T>, GeometryError> {
    cloud.ensure_non_empty()?;
    PointCloud::new(cloud.points.iter().map(|&p| pose.apply(p)).collect(), cloud.frame)
}

pub fn inverse_pose<T: Real>(pose: &PlanarPose<T>) -> PlanarPose<T> {
    pose.inverse()
}

pub fn compose_pose<T: Real>(a: &PlanarPose<T>, b: &PlanarPose<T>) -> PlanarPose<T> {
    a.compose(b)
}

/// Smallest absolute angle between two headings, in degrees within `[0, 180]`.
pub fn heading_error<T: Real>(est: T, gt: T) -> T {
    let delta = normalize_angle(est - gt);
    let two_pi = T::of(std::f64::consts::TAU);
    delta.min(two_pi - delta).to_degrees()
}

/// Planar distance between two translations; z and yaw are ignored.
pub fn translation_error<T: Real>(est: &PlanarPose<T>, gt: &PlanarPose<T>) -> T {
    (est.tx - gt.tx).hypot(est.ty - gt.ty)
}
