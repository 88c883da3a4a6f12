//! Point-cloud encoder, folding shape decoder, pose decoder and the two
//! end-to-end architectures built from them.

mod params;

pub use params::{
    layout, Arch, Bound, ModelParams, NetConfig, CODE_SIZE, POSE_DECODER, POSE_ENCODER, SHAPE_DECODER, SHAPE_ENCODER,
    SHARED_ENCODER, S_CD, S_P,
};

use std::cell::Cell;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::geometry::{transform_cloud, Frame, GeometryError, PlanarPose, PointCloud};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("model is {got:?}, expected {expected:?}")]
    WrongArch { expected: Arch, got: Arch },
    #[error("missing parameter '{0}'")]
    MissingParam(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

thread_local! {
    static ENCODER_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Encoder evaluations made on the current thread so far.
pub fn encoder_calls() -> u64 {
    ENCODER_CALLS.with(Cell::get)
}

fn linear<T: Real>(tape: &Tape<T>, p: &Bound, x: Var, layer: &str) -> Result<Var, NetError> {
    let h = tape.matmul(x, p.get(&format!("{layer}.w"))?)?;
    Ok(tape.add_bias(h, p.get(&format!("{layer}.b"))?)?)
}

/// First layer of an MLP whose input is `[per_row | shared]`, with the
/// shared part multiplied once and added to every row.
fn split_linear<T: Real>(tape: &Tape<T>, p: &Bound, per_row: Var, shared: Var, layer: &str) -> Result<Var, NetError> {
    let w = p.get(&format!("{layer}.w"))?;
    let b = p.get(&format!("{layer}.b"))?;
    let rows_in = tape.value(w).dims2().expect("weight matrix").0;
    let k = tape.value(per_row).dims2().ok_or(NetError::Layout(layer.to_string()))?.1;
    let w_rows = tape.slice_rows(w, 0, k)?;
    let w_shared = tape.slice_rows(w, k, rows_in)?;
    let shared_term = tape.matmul(shared, w_shared)?;
    let width = tape.value(b).len();
    let bias_row = tape.add(shared_term, tape.reshape(b, &[1, width])?)?;
    Ok(tape.add_bias(tape.matmul(per_row, w_rows)?, bias_row)?)
}

/// Global code `[1×1024]` of an n×3 point matrix: shared per-point MLP,
/// max-pool, concatenation of the pooled feature to every point, a second
/// per-point MLP and a final max-pool.
pub fn encode_tape<T: Real>(tape: &Tape<T>, p: &Bound, prefix: &str, points: Var) -> Result<Var, NetError> {
    if tape.value(points).dims2().is_none_or(|(n, _)| n == 0) {
        return Err(NetError::EmptyCloud);
    }
    ENCODER_CALLS.with(|c| c.set(c.get() + 1));
    let h = tape.relu(linear(tape, p, points, &format!("{prefix}.mlp1.0"))?)?;
    let f = linear(tape, p, h, &format!("{prefix}.mlp1.1"))?;
    let g = tape.reduce_max_rows(f)?;
    let width = tape.value(g).len();
    let g = tape.reshape(g, &[1, width])?;
    let h = tape.relu(split_linear(tape, p, f, g, &format!("{prefix}.mlp2.0"))?)?;
    let h = linear(tape, p, h, &format!("{prefix}.mlp2.1"))?;
    let code = tape.reduce_max_rows(h)?;
    Ok(tape.reshape(code, &[1, CODE_SIZE])?)
}

/// Folding grid offsets for every fine point, `n_fine×2`.
pub fn folding_grid<T: Real>(cfg: &NetConfig) -> Tensor<T> {
    let u = cfg.grid;
    let coord = |k: usize| {
        if u == 1 {
            0.0
        } else {
            -cfg.grid_scale + 2.0 * cfg.grid_scale * k as f64 / (u - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(cfg.n_fine() * 2);
    for _ in 0..cfg.n_coarse {
        for i in 0..u {
            for j in 0..u {
                data.push(T::of(coord(i)));
                data.push(T::of(coord(j)));
            }
        }
    }
    Tensor::matrix(cfg.n_fine(), 2, data).expect("n_fine×2")
}

pub struct ShapeVars {
    /// `n_coarse×3`.
    pub coarse: Var,
    /// `n_fine×3`.
    pub fine: Var,
}

/// Coarse points from an MLP on the code, then a folding MLP on each
/// (code, coarse point, grid offset) whose output displaces the coarse point.
pub fn decode_shape_tape<T: Real>(tape: &Tape<T>, p: &Bound, cfg: &NetConfig, code: Var) -> Result<ShapeVars, NetError> {
    let c = format!("{SHAPE_DECODER}.coarse");
    let h = tape.relu(linear(tape, p, code, &format!("{c}.0"))?)?;
    let h = tape.relu(linear(tape, p, h, &format!("{c}.1"))?)?;
    let h = linear(tape, p, h, &format!("{c}.2"))?;
    let coarse = tape.reshape(h, &[cfg.n_coarse, 3])?;

    let f = format!("{SHAPE_DECODER}.fold");
    let centers = tape.repeat_rows(coarse, cfg.grid * cfg.grid)?;
    let grid = tape.constant(folding_grid(cfg))?;
    let local = tape.concat_cols(centers, grid)?;
    // folding input is [code | point | grid]; the code part is shared by all rows
    let w = p.get(&format!("{f}.0.w"))?;
    let b = p.get(&format!("{f}.0.b"))?;
    let w_code = tape.slice_rows(w, 0, CODE_SIZE)?;
    let w_local = tape.slice_rows(w, CODE_SIZE, CODE_SIZE + 5)?;
    let width = tape.value(b).len();
    let code_row = tape.add(tape.matmul(code, w_code)?, tape.reshape(b, &[1, width])?)?;
    let h = tape.relu(tape.add_bias(tape.matmul(local, w_local)?, code_row)?)?;
    let h = tape.relu(linear(tape, p, h, &format!("{f}.1"))?)?;
    let offsets = linear(tape, p, h, &format!("{f}.2"))?;
    let fine = tape.add(centers, offsets)?;
    Ok(ShapeVars { coarse, fine })
}

/// Raw `(yaw, tx, ty)` as a length-3 vector.
pub fn decode_pose_tape<T: Real>(tape: &Tape<T>, p: &Bound, code: Var) -> Result<Var, NetError> {
    let m = format!("{POSE_DECODER}.mlp");
    let h = tape.relu(linear(tape, p, code, &format!("{m}.0"))?)?;
    let h = tape.relu(linear(tape, p, h, &format!("{m}.1"))?)?;
    let out = linear(tape, p, h, &format!("{m}.2"))?;
    Ok(tape.reshape(out, &[3])?)
}

/// Pose with normalized yaw and the configured known height.
pub fn pose_from_raw<T: Real>(raw: &Tensor<T>, known_tz: f64) -> PlanarPose<T> {
    let d = raw.data();
    PlanarPose::new(d[0], d[1], d[2], T::of(known_tz))
}

fn check_arch<T>(m: &ModelParams<T>, expected: Arch) -> Result<(), NetError> {
    if m.arch != expected {
        return Err(NetError::WrongArch { expected, got: m.arch });
    }
    Ok(())
}

fn input_var<T: Real>(tape: &Tape<T>, cloud: &PointCloud<T>) -> Result<Var, NetError> {
    if cloud.is_empty() {
        return Err(NetError::EmptyCloud);
    }
    Ok(tape.constant(cloud.to_tensor())?)
}

fn cloud_of<T: Real>(tape: &Tape<T>, v: Var, frame: Frame) -> Result<PointCloud<T>, NetError> {
    Ok(PointCloud::from_tensor(&tape.value(v), frame)?)
}

/// Global code of `cloud` under the encoder named by `prefix`.
pub fn encode<T: Real>(m: &ModelParams<T>, prefix: &str, cloud: &PointCloud<T>) -> Result<Tensor<T>, NetError> {
    let tape = Tape::no_grad();
    let p = m.bind(&tape, |_| false)?;
    let code = encode_tape(&tape, &p, prefix, input_var(&tape, cloud)?)?;
    let value = tape.value(code).clone();
    Ok(value.reshaped(vec![CODE_SIZE])?)
}

fn code_var<T: Real>(tape: &Tape<T>, code: &Tensor<T>) -> Result<Var, NetError> {
    if code.len() != CODE_SIZE {
        return Err(NetError::Layout(format!(
            "code has {} values, expected {CODE_SIZE}",
            code.len()
        )));
    }
    Ok(tape.constant(code.clone().reshaped(vec![1, CODE_SIZE])?)?)
}

/// Coarse and fine completions decoded from a code, tagged with `frame`.
pub fn decode_shape<T: Real>(
    m: &ModelParams<T>,
    code: &Tensor<T>,
    frame: Frame,
) -> Result<(PointCloud<T>, PointCloud<T>), NetError> {
    let tape = Tape::no_grad();
    let p = m.bind(&tape, |_| false)?;
    let s = decode_shape_tape(&tape, &p, &m.config, code_var(&tape, code)?)?;
    Ok((cloud_of(&tape, s.coarse, frame)?, cloud_of(&tape, s.fine, frame)?))
}

pub fn decode_pose<T: Real>(m: &ModelParams<T>, code: &Tensor<T>) -> Result<PlanarPose<T>, NetError> {
    let tape = Tape::no_grad();
    let p = m.bind(&tape, |_| false)?;
    let raw = decode_pose_tape(&tape, &p, code_var(&tape, code)?)?;
    let pose = pose_from_raw(&tape.value(raw), m.config.known_tz);
    Ok(pose)
}

/// One encoding feeds both decoders; the completion is expressed in the
/// input's frame.
pub fn shared_forward<T: Real>(partial: &PointCloud<T>, m: &ModelParams<T>) -> Result<(PlanarPose<T>, PointCloud<T>), NetError> {
    check_arch(m, Arch::SharedEncoder)?;
    let tape = Tape::no_grad();
    let p = m.bind(&tape, |_| false)?;
    let code = encode_tape(&tape, &p, SHARED_ENCODER, input_var(&tape, partial)?)?;
    let raw = decode_pose_tape(&tape, &p, code)?;
    let shape = decode_shape_tape(&tape, &p, &m.config, code)?;
    let pose = pose_from_raw(&tape.value(raw), m.config.known_tz);
    Ok((pose, cloud_of(&tape, shape.fine, partial.frame())?))
}

/// Estimated pose from the baseline's pose branch.
pub fn baseline_pose<T: Real>(partial: &PointCloud<T>, m: &ModelParams<T>) -> Result<PlanarPose<T>, NetError> {
    check_arch(m, Arch::Baseline)?;
    let tape = Tape::no_grad();
    let p = m.bind(&tape, |_| false)?;
    let code = encode_tape(&tape, &p, POSE_ENCODER, input_var(&tape, partial)?)?;
    let raw = decode_pose_tape(&tape, &p, code)?;
    let pose = pose_from_raw(&tape.value(raw), m.config.known_tz);
    Ok(pose)
}

/// Completion branch of the baseline given a pose: canonicalize with the
/// pose, complete in the Canonical frame, then re-pose into the input frame.
pub fn baseline_forward_with_pose<T: Real>(
    partial: &PointCloud<T>,
    m: &ModelParams<T>,
    pose: &PlanarPose<T>,
) -> Result<PointCloud<T>, NetError> {
    check_arch(m, Arch::Baseline)?;
    let canonical = transform_cloud(partial, &pose.inverse())?.with_frame(Frame::Canonical);
    let tape = Tape::no_grad();
    let p = m.bind(&tape, |_| false)?;
    let code = encode_tape(&tape, &p, SHAPE_ENCODER, input_var(&tape, &canonical)?)?;
    let shape = decode_shape_tape(&tape, &p, &m.config, code)?;
    let completion = cloud_of(&tape, shape.fine, Frame::Canonical)?;
    Ok(transform_cloud(&completion, pose)?.with_frame(partial.frame()))
}

/// Pose branch, then the completion branch on the canonicalized input.
/// Encodes twice.
pub fn baseline_forward<T: Real>(
    partial: &PointCloud<T>,
    m: &ModelParams<T>,
) -> Result<(PlanarPose<T>, PointCloud<T>), NetError> {
    let pose = baseline_pose(partial, m)?;
    let completion = baseline_forward_with_pose(partial, m, &pose)?;
    Ok((pose, completion))
}

/// Architecture-appropriate forward pass.
pub fn forward<T: Real>(partial: &PointCloud<T>, m: &ModelParams<T>) -> Result<(PlanarPose<T>, PointCloud<T>), NetError> {
    match m.arch {
        Arch::SharedEncoder => shared_forward(partial, m),
        Arch::Baseline => baseline_forward(partial, m),
    }
}

#[cfg(test)]
mod tests;
