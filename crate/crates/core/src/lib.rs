//! Joint planar pose and shape estimation of vehicles from partial LiDAR
//! scans: a ray-casting scan simulator, a dataset pipeline, a small
//! reverse-mode autodiff engine, point-cloud networks with shared or separate
//! encoders, staged training and evaluation.
//!
//! Numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the precision for common uses. Training runs in `f32`,
//! gradient checks and data generation in `f64`.

pub mod autodiff;
pub mod dataset;
pub mod eval;
pub mod fsutil;
pub mod geometry;
pub mod kv;
pub mod losses;
pub mod networks;
pub mod scalar;
pub mod simulator;
pub mod training;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Point3f = geometry::Point3<f32>;
pub type Point3d = geometry::Point3<f64>;
pub type Cloud32 = geometry::PointCloud<f32>;
pub type Cloud64 = geometry::PointCloud<f64>;
pub type Pose32 = geometry::PlanarPose<f32>;
pub type Pose64 = geometry::PlanarPose<f64>;
pub type Mesh64 = geometry::TriMesh<f64>;
pub type Model32 = networks::ModelParams<f32>;
pub type Model64 = networks::ModelParams<f64>;
pub type Checkpoint32 = training::Checkpoint<f32>;
