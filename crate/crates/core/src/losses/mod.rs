//! Chamfer distance, point-transport pose loss and the uncertainty-weighted
//! joint loss, each as a plain value and as a differentiable tape graph.

mod nn;

pub use nn::{nearest_brute, nearest_grid, GridIndex};

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::geometry::{PlanarPose, Point3, PointCloud};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("expected an n×3 point matrix, got shape {0:?}")]
    BadPoints(Vec<usize>),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Which nearest-neighbor search backs a chamfer evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NnSearch {
    Brute,
    #[default]
    Grid,
}

impl NnSearch {
    pub fn nearest<T: Real>(self, queries: &[Point3<T>], targets: &[Point3<T>]) -> Vec<usize> {
        match self {
            NnSearch::Brute => nearest_brute(queries, targets),
            NnSearch::Grid => nearest_grid(queries, targets),
        }
    }
}

fn mean_nn_distance<T: Real>(from: &[Point3<T>], to: &[Point3<T>], search: NnSearch) -> T {
    let idx = search.nearest(from, to);
    let total: T = from.iter().zip(&idx).map(|(&p, &j)| (p - to[j]).norm()).sum();
    total / T::of(from.len() as f64)
}

/// Symmetric chamfer distance with unsquared Euclidean distances.
pub fn chamfer_with<T: Real>(est: &PointCloud<T>, gt: &PointCloud<T>, search: NnSearch) -> Result<T, LossError> {
    if est.is_empty() || gt.is_empty() {
        return Err(LossError::EmptyCloud);
    }
    let a = mean_nn_distance(est.points(), gt.points(), search);
    let b = mean_nn_distance(gt.points(), est.points(), search);
    Ok(a + b)
}

pub fn chamfer<T: Real>(est: &PointCloud<T>, gt: &PointCloud<T>) -> Result<T, LossError> {
    chamfer_with(est, gt, NnSearch::Grid)
}

fn points_of<T: Real>(t: &Tensor<T>) -> Result<Vec<Point3<T>>, LossError> {
    match t.dims2() {
        Some((n, 3)) if n > 0 => Ok(t.data().chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect()),
        Some((0, 3)) => Err(LossError::EmptyCloud),
        _ => Err(LossError::BadPoints(t.shape().to_vec())),
    }
}

/// Chamfer distance between a recorded n×3 estimate and a constant m×3
/// target. Correspondences are fixed at the forward values; the gradient at
/// a coincident pair is zero.
pub fn chamfer_tape<T: Real>(tape: &Tape<T>, est: Var, gt: &Tensor<T>) -> Result<Var, LossError> {
    let gt_pts = points_of(gt)?;
    let est_pts = points_of(&tape.value(est))?;
    let to_gt = nearest_grid(&est_pts, &gt_pts);
    let to_est = nearest_grid(&gt_pts, &est_pts);

    let gt_var = tape.constant(gt.clone())?;
    let matched = tape.gather_rows(gt_var, &to_gt)?;
    let d = tape.sub(est, matched)?;
    let forward = tape.mean(tape.row_norms(d)?)?;

    let matched = tape.gather_rows(est, &to_est)?;
    let d = tape.sub(gt_var, matched)?;
    let backward = tape.mean(tape.row_norms(d)?)?;
    Ok(tape.add(forward, backward)?)
}

/// `(1/|X|) Σ ‖(R x + t) − (R̃ x + t̃)‖²` over the reference cloud `x`.
pub fn pose_loss<T: Real>(gt: &PlanarPose<T>, est: &PlanarPose<T>, x: &PointCloud<T>) -> Result<T, LossError> {
    if x.is_empty() {
        return Err(LossError::EmptyCloud);
    }
    let total: T = x.points().iter().map(|&p| (gt.apply(p) - est.apply(p)).norm_squared()).sum();
    Ok(total / T::of(x.len() as f64))
}

/// Pose loss for a recorded raw `(yaw, tx, ty)` estimate. The estimate uses
/// the ground truth's known `tz`.
pub fn pose_loss_tape<T: Real>(tape: &Tape<T>, est: Var, gt: &PlanarPose<T>, x: &Tensor<T>) -> Result<Var, LossError> {
    let pts = points_of(x)?;
    let target: Vec<T> = pts
        .iter()
        .flat_map(|&p| {
            let q = gt.apply(p);
            [q.x, q.y, q.z]
        })
        .collect();
    let target = tape.constant(Tensor::matrix(pts.len(), 3, target)?)?;
    let moved = tape.planar_transform(est, x, gt.tz)?;
    let d = tape.sub(moved, target)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.scale(tape.sum(sq)?, T::one() / T::of(pts.len() as f64))?)
}

/// Learned log-variances `s = log σ²` of the two tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UncertaintyParams<T> {
    pub s_cd: T,
    pub s_p: T,
}

/// `exp(−s_cd)/2·cd + exp(−s_p)/2·pl + (s_cd + s_p)/2`.
pub fn joint_loss<T: Real>(cd: T, pl: T, u: &UncertaintyParams<T>) -> T {
    let half = T::of(0.5);
    half * (-u.s_cd).exp() * cd + half * (-u.s_p).exp() * pl + half * (u.s_cd + u.s_p)
}

/// Joint loss over recorded scalars `cd`, `pl`, `s_cd` and `s_p`.
pub fn joint_loss_tape<T: Real>(tape: &Tape<T>, cd: Var, pl: Var, s_cd: Var, s_p: Var) -> Result<Var, LossError> {
    let weighted = |s: Var, loss: Var| -> Result<Var, AutodiffError> {
        let w = tape.exp(tape.scale(s, -T::one())?)?;
        tape.scale(tape.mul(w, loss)?, T::of(0.5))
    };
    let a = weighted(s_cd, cd)?;
    let b = weighted(s_p, pl)?;
    let reg = tape.scale(tape.add(s_cd, s_p)?, T::of(0.5))?;
    Ok(tape.add(tape.add(a, b)?, reg)?)
}
