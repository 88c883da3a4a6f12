use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::max_rel_error_at;
use crate::geometry::Point3;
use crate::losses::{chamfer_tape, joint_loss_tape, pose_loss_tape};

fn cloud<T: Real>(rng: &mut ChaCha8Rng, n: usize, frame: Frame) -> PointCloud<T> {
    let pts = (0..n)
        .map(|_| {
            Point3::new(
                T::of(rng.random_range(-3.0..3.0)),
                T::of(rng.random_range(-3.0..3.0)),
                T::of(rng.random_range(-1.0..1.0)),
            )
        })
        .collect();
    PointCloud::new(pts, frame).unwrap()
}

fn small_cfg() -> NetConfig {
    NetConfig {
        n_coarse: 4,
        grid: 2,
        ..NetConfig::default()
    }
}

fn zero_prefix<T: Real>(m: &mut ModelParams<T>, prefix: &str) {
    let names: Vec<String> = m.names().iter().filter(|n| n.starts_with(prefix)).cloned().collect();
    for n in names {
        m.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| *v = T::zero());
    }
}

#[test]
fn layout_matches_stated_widths() {
    let m = ModelParams::<f32>::init(Arch::SharedEncoder, NetConfig::default(), 0);
    let shape = |n: &str| m.get(n).unwrap().shape().to_vec();
    assert_eq!(shape("enc.mlp1.0.w"), vec![3, 128]);
    assert_eq!(shape("enc.mlp1.1.w"), vec![128, 256]);
    assert_eq!(shape("enc.mlp2.0.w"), vec![512, 512]);
    assert_eq!(shape("enc.mlp2.1.w"), vec![512, 1024]);
    assert_eq!(shape("shape.coarse.2.w"), vec![1024, 192]);
    assert_eq!(shape("shape.fold.0.w"), vec![1029, 512]);
    assert_eq!(shape("shape.fold.2.w"), vec![512, 3]);
    assert_eq!(shape("pose.mlp.0.w"), vec![1024, 512]);
    assert_eq!(shape("pose.mlp.2.w"), vec![512, 3]);
    assert_eq!(m.uncertainty(), (0.0, 0.0));
    assert_eq!(NetConfig::default().n_fine(), 1024);
}

#[test]
fn init_is_bounded_and_deterministic() {
    let a = ModelParams::<f64>::init(Arch::Baseline, small_cfg(), 3);
    assert_eq!(a, ModelParams::init(Arch::Baseline, small_cfg(), 3));
    assert_ne!(a, ModelParams::init(Arch::Baseline, small_cfg(), 4));
    let w = a.get("shape.fold.0.w").unwrap();
    let bound = 1.0 / 1029f64.sqrt();
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    let b = a.get("shape.fold.0.b").unwrap();
    assert!(b.data().iter().all(|v| v.abs() <= bound));
}

#[test]
fn shared_has_fewer_parameters_than_baseline() {
    let shared = ModelParams::<f32>::init(Arch::SharedEncoder, NetConfig::default(), 0);
    let base = ModelParams::<f32>::init(Arch::Baseline, NetConfig::default(), 0);
    let encoder = shared.count_with_prefix("enc.");
    assert_eq!(base.param_count() - shared.param_count(), encoder);
    assert!(shared.param_count() < base.param_count());
}

#[test]
fn encode_is_permutation_invariant_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = ModelParams::<f32>::init(Arch::SharedEncoder, small_cfg(), 1);
    let c: PointCloud<f32> = cloud(&mut rng, 50, Frame::Sensor);
    let base = encode(&m, SHARED_ENCODER, &c).unwrap();
    for _ in 0..10 {
        let mut pts = c.points().to_vec();
        pts.shuffle(&mut rng);
        let shuffled = encode(&m, SHARED_ENCODER, &PointCloud::new(pts, Frame::Sensor).unwrap()).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&base), bits(&shuffled));
    }
}

#[test]
fn duplicated_point_code_independent_of_count() {
    let m = ModelParams::<f64>::init(Arch::SharedEncoder, small_cfg(), 2);
    let p = Point3::new(1.0, -2.0, 0.5);
    let one = encode(&m, SHARED_ENCODER, &PointCloud::new(vec![p], Frame::Sensor).unwrap()).unwrap();
    for k in [2, 7] {
        let many = encode(&m, SHARED_ENCODER, &PointCloud::new(vec![p; k], Frame::Sensor).unwrap()).unwrap();
        assert_eq!(many, one);
    }
}

#[test]
fn zero_weights_give_zero_code_and_pose() {
    let mut m = ModelParams::<f64>::init(Arch::SharedEncoder, small_cfg(), 2);
    zero_prefix(&mut m, "enc.");
    zero_prefix(&mut m, "pose.");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let code = encode(&m, SHARED_ENCODER, &cloud(&mut rng, 9, Frame::Sensor)).unwrap();
    assert!(code.data().iter().all(|&v| v == 0.0));
    assert_eq!(code.len(), CODE_SIZE);
    let pose = decode_pose(&m, &code).unwrap();
    assert_eq!((pose.yaw(), pose.tx, pose.ty, pose.tz), (0.0, 0.0, 0.0, -2.0));
}

#[test]
fn empty_input_rejected() {
    let m = ModelParams::<f64>::init(Arch::SharedEncoder, small_cfg(), 2);
    let empty = PointCloud::new(vec![], Frame::Sensor).unwrap();
    assert!(matches!(encode(&m, SHARED_ENCODER, &empty), Err(NetError::EmptyCloud)));
    assert!(matches!(shared_forward(&empty, &m), Err(NetError::EmptyCloud)));
}

#[test]
fn decoder_output_sizes_and_zero_folding_collapse() {
    let mut m = ModelParams::<f64>::init(Arch::SharedEncoder, NetConfig::default(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let code = encode(&m, SHARED_ENCODER, &cloud(&mut rng, 20, Frame::Sensor)).unwrap();
    let (coarse, fine) = decode_shape(&m, &code, Frame::Sensor).unwrap();
    assert_eq!((coarse.len(), fine.len()), (64, 1024));

    zero_prefix(&mut m, "shape.fold.");
    let (coarse, fine) = decode_shape(&m, &code, Frame::Sensor).unwrap();
    for (i, p) in fine.points().iter().enumerate() {
        assert_eq!(*p, coarse.points()[i / 16]);
    }
}

#[test]
fn pose_is_deterministic_function_of_code() {
    let m = ModelParams::<f64>::init(Arch::SharedEncoder, small_cfg(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let code = encode(&m, SHARED_ENCODER, &cloud(&mut rng, 12, Frame::Sensor)).unwrap();
    assert_eq!(decode_pose(&m, &code).unwrap(), decode_pose(&m, &code).unwrap());
    assert!(decode_pose(&m, &Tensor::zeros(&[5])).is_err());
}

#[test]
fn encoder_call_counts_per_architecture() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let input: PointCloud<f32> = cloud(&mut rng, 30, Frame::Sensor);
    let shared = ModelParams::<f32>::init(Arch::SharedEncoder, NetConfig::default(), 7);
    let base = ModelParams::<f32>::init(Arch::Baseline, NetConfig::default(), 7);

    let before = encoder_calls();
    let (pose, completion) = shared_forward(&input, &shared).unwrap();
    assert_eq!(encoder_calls() - before, 1);
    assert_eq!(completion.len(), 1024);
    assert_eq!(completion.frame(), Frame::Sensor);
    assert!(pose.is_finite() && completion.points().iter().all(|p| p.is_finite()));

    let before = encoder_calls();
    let (pose, completion) = baseline_forward(&input, &base).unwrap();
    assert_eq!(encoder_calls() - before, 2);
    assert_eq!(completion.len(), 1024);
    assert!(pose.is_finite() && completion.points().iter().all(|p| p.is_finite()));

    assert!(matches!(shared_forward(&input, &base), Err(NetError::WrongArch { .. })));
    assert!(matches!(baseline_forward(&input, &shared), Err(NetError::WrongArch { .. })));
}

#[test]
fn baseline_with_oracle_pose_reposes_canonical_completion() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = ModelParams::<f64>::init(Arch::Baseline, small_cfg(), 8);
    let canonical: PointCloud<f64> = cloud(&mut rng, 25, Frame::Canonical);
    let gt = PlanarPose::new(1.3, 12.0, -4.0, -2.0);
    let partial = transform_cloud(&canonical, &gt).unwrap().with_frame(Frame::Sensor);

    let before = encoder_calls();
    let out = baseline_forward_with_pose(&partial, &m, &gt).unwrap();
    assert_eq!(encoder_calls() - before, 1);

    let recovered = transform_cloud(&partial, &gt.inverse()).unwrap().with_frame(Frame::Canonical);
    let code = encode(&m, SHAPE_ENCODER, &recovered).unwrap();
    let (_, fine) = decode_shape(&m, &code, Frame::Canonical).unwrap();
    let expected = transform_cloud(&fine, &gt).unwrap();
    assert_eq!(out.points(), expected.points());
    assert_eq!(out.frame(), Frame::Sensor);
}

/// Coordinates spread over every parameter tensor: first, last and one
/// random element of each.
fn sample_coords(m: &ModelParams<f64>, rng: &mut ChaCha8Rng, skip: impl Fn(&str) -> bool) -> Vec<(usize, usize)> {
    let mut coords = Vec::new();
    for (k, (name, t)) in m.names().iter().zip(m.tensors()).enumerate() {
        if skip(name) {
            continue;
        }
        coords.push((k, 0));
        coords.push((k, t.len() - 1));
        coords.push((k, rng.random_range(0..t.len())));
    }
    coords
}

#[test]
fn decoder_weights_gradcheck_through_chamfer() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = ModelParams::<f64>::init(Arch::SharedEncoder, small_cfg(), 9);
    let code = encode(&m, SHARED_ENCODER, &cloud(&mut rng, 16, Frame::Sensor))
        .unwrap()
        .reshaped(vec![1, CODE_SIZE])
        .unwrap();
    let gt = cloud::<f64>(&mut rng, 20, Frame::Sensor).to_tensor();
    let names = m.names().to_vec();
    let cfg = m.config.clone();
    let f = |t: &Tape<f64>, v: &[Var]| -> Result<Var, NetError> {
        let p = Bound::from_vars(&names, v.to_vec());
        let c = t.constant(code.clone())?;
        let s = decode_shape_tape(t, &p, &cfg, c)?;
        chamfer_tape(t, s.fine, &gt).map_err(|e| NetError::Layout(e.to_string()))
    };
    let coords = sample_coords(&m, &mut rng, |n| !n.starts_with("shape."));
    let err = max_rel_error_at(f, m.tensors(), &coords);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn pose_decoder_gradcheck_through_pose_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = ModelParams::<f64>::init(Arch::SharedEncoder, small_cfg(), 10);
    let code = encode(&m, SHARED_ENCODER, &cloud(&mut rng, 16, Frame::Sensor))
        .unwrap()
        .reshaped(vec![1, CODE_SIZE])
        .unwrap();
    let x = cloud::<f64>(&mut rng, 32, Frame::Canonical).to_tensor();
    let gt = PlanarPose::new(2.0, 10.0, 5.0, -2.0);
    let names = m.names().to_vec();
    let f = |t: &Tape<f64>, v: &[Var]| -> Result<Var, NetError> {
        let p = Bound::from_vars(&names, v.to_vec());
        let c = t.constant(code.clone())?;
        let raw = decode_pose_tape(t, &p, c)?;
        pose_loss_tape(t, raw, &gt, &x).map_err(|e| NetError::Layout(e.to_string()))
    };
    let coords = sample_coords(&m, &mut rng, |n| !n.starts_with("pose."));
    let err = max_rel_error_at(f, m.tensors(), &coords);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn end_to_end_joint_loss_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = ModelParams::<f64>::init(Arch::SharedEncoder, small_cfg(), 11);
    let input = cloud::<f64>(&mut rng, 16, Frame::Sensor).to_tensor();
    let gt_complete = cloud::<f64>(&mut rng, 24, Frame::Canonical);
    let gt_pose = PlanarPose::new(0.8, 3.0, -2.0, -2.0);
    let gt_sensor = transform_cloud(&gt_complete, &gt_pose).unwrap().to_tensor();
    let x = gt_complete.to_tensor();
    let names = m.names().to_vec();
    let cfg = m.config.clone();
    let f = |t: &Tape<f64>, v: &[Var]| -> Result<Var, NetError> {
        let p = Bound::from_vars(&names, v.to_vec());
        let pts = t.constant(input.clone())?;
        let code = encode_tape(t, &p, SHARED_ENCODER, pts)?;
        let s = decode_shape_tape(t, &p, &cfg, code)?;
        let raw = decode_pose_tape(t, &p, code)?;
        let wrap = |e: crate::losses::LossError| NetError::Layout(e.to_string());
        let cd = chamfer_tape(t, s.fine, &gt_sensor).map_err(wrap)?;
        let pl = pose_loss_tape(t, raw, &gt_pose, &x).map_err(wrap)?;
        joint_loss_tape(t, cd, pl, p.get(S_CD)?, p.get(S_P)?).map_err(wrap)
    };
    let coords = sample_coords(&m, &mut rng, |_| false);
    let err = max_rel_error_at(f, m.tensors(), &coords);
    assert!(err < 1e-4, "{err}");
}
