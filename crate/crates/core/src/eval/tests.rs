use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{generate, GenConfig};
use crate::networks::NetConfig;
use crate::training::{prepare, run_protocol, TrainConfig};

fn data() -> Dataset {
    generate(&GenConfig {
        models: 2,
        views_per_model: 3,
        n_complete: 64,
        ..GenConfig::default()
    })
    .unwrap()
}

/// Returns each sample's own ground truth.
struct Oracle;

impl Estimator for Oracle {
    fn estimate(&self, s: &Sample) -> Result<Estimate, EvalError> {
        Ok(Estimate {
            pose: s.gt_pose,
            completion: transform_cloud(&s.complete, &s.gt_pose)?.with_frame(Frame::Sensor),
        })
    }
}

/// Forgets to re-pose its completion.
struct CanonicalOutput;

impl Estimator for CanonicalOutput {
    fn estimate(&self, s: &Sample) -> Result<Estimate, EvalError> {
        Ok(Estimate {
            pose: s.gt_pose,
            completion: s.complete.clone(),
        })
    }
}

#[test]
fn oracle_scores_zero() {
    let ds = data();
    let records = evaluate_with(&Oracle, &ds).unwrap();
    assert_eq!(records.len(), ds.len());
    for r in &records {
        assert_eq!((r.cd, r.heading_err, r.trans_err), (0.0, 0.0, 0.0));
    }
    let s = summarize(&records);
    assert_eq!((s.count, s.mean_cd), (ds.len(), 0.0));
}

#[test]
fn records_independent_of_split_order() {
    let ds = data();
    let mut shuffled = ds.samples.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let a = evaluate_with(&Oracle, &ds).unwrap();
    let b = evaluate_with(&Oracle, &Dataset::new(shuffled)).unwrap();
    assert_eq!(a, b);
    assert!(a
        .windows(2)
        .all(|w| (w[0].model_id, w[0].view_id) < (w[1].model_id, w[1].view_id)));
}

#[test]
fn frame_mismatch_and_empty_split_rejected() {
    let ds = data();
    assert!(matches!(
        evaluate_with(&CanonicalOutput, &ds),
        Err(EvalError::FrameMismatch {
            expected: Frame::Sensor,
            got: Frame::Canonical
        })
    ));
    assert!(matches!(
        evaluate_with(&Oracle, &Dataset::new(vec![])),
        Err(EvalError::EmptySplit)
    ));
}

#[test]
fn pose_errors_measured_against_ground_truth() {
    let ds = data();
    let s = &ds.samples[0];
    let off = PlanarPose::new(s.gt_pose.yaw() + 0.5, s.gt_pose.tx + 3.0, s.gt_pose.ty - 4.0, s.gt_pose.tz);
    let est = Estimate {
        pose: off,
        completion: transform_cloud(&s.complete, &s.gt_pose).unwrap().with_frame(Frame::Sensor),
    };
    let r = score(s, &est).unwrap();
    assert!((r.heading_err - 0.5f64.to_degrees()).abs() < 1e-9);
    assert!((r.trans_err - 5.0).abs() < 1e-12);
    assert_eq!(r.cd, 0.0);
}

#[test]
fn threshold_examples() {
    let c = threshold_curve(&[1.0, 2.0, 3.0], &[2.0]).unwrap();
    assert_eq!(c.ratios, vec![2.0 / 3.0]);
    let c = threshold_curve(&[1.0, 2.0, 3.0], &[0.5, 3.0, 10.0]).unwrap();
    assert_eq!(c.ratios, vec![0.0, 1.0, 1.0]);
    assert!(threshold_curve(&[1.0], &[2.0, 1.0]).is_err());
    assert!(threshold_curve(&[], &[1.0]).is_err());
}

#[test]
fn default_grids() {
    let cd = default_cd_grid();
    assert_eq!((cd.len(), cd[0], *cd.last().unwrap()), (41, 0.0, 2.0));
    assert_eq!(cd[3], 3.0 * 0.05);
    let h = default_heading_grid();
    assert_eq!((h.len(), *h.last().unwrap()), (91, 90.0));
    assert_eq!(default_translation_grid(), cd);
}

#[test]
fn csv_reports() {
    let records = evaluate_with(&Oracle, &data()).unwrap();
    let mut out = Vec::new();
    write_records_csv(&mut out, &records).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model_id,view_id,cd,heading_err,trans_err");
    assert_eq!(lines[1], "0,0,0,0,0");
    assert_eq!(lines.len(), records.len() + 1);

    let curves = default_curves(&records).unwrap();
    let mut out = Vec::new();
    write_curves_csv(&mut out, &curves).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1 + 41 + 91 + 41);
    assert!(text.lines().nth(1).unwrap() == "cd,0,1");
    assert_eq!(records_file_name(Protocol::JointSE), "eval-joint.csv");
    assert_eq!(curves_file_name(Protocol::Baseline), "curves-baseline.csv");
}

#[test]
fn trained_checkpoints_evaluate_to_finite_records() {
    let ds = data();
    let net = NetConfig {
        n_coarse: 4,
        grid: 2,
        input_points: 32,
        ..NetConfig::default()
    };
    let prepared = prepare::<f32>(&ds, &net, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 3,
        ..TrainConfig::default()
    };
    for protocol in Protocol::ALL {
        let (ck, _) = run_protocol(protocol, &prepared, &prepared, &net, &cfg).unwrap();
        assert_eq!(protocol_of(&ck), protocol);
        let records = evaluate(&ck, &ds).unwrap();
        assert_eq!(records.len(), ds.len());
        assert!(records
            .iter()
            .all(|r| r.cd >= 0.0 && r.heading_err >= 0.0 && r.trans_err >= 0.0));
        assert_eq!(records, evaluate(&ck, &ds).unwrap());
    }
}

proptest! {
    #[test]
    fn curves_monotone_and_bounded(
        errors in prop::collection::vec(0.0f64..10.0, 1..40),
        mut thresholds in prop::collection::vec(-1.0f64..12.0, 1..20),
    ) {
        thresholds.sort_by(f64::total_cmp);
        let c = threshold_curve(&errors, &thresholds).unwrap();
        prop_assert!(c.ratios.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.ratios.iter().all(|&r| (0.0..=1.0).contains(&r)));
        for (t, r) in thresholds.iter().zip(&c.ratios) {
            let direct = errors.iter().filter(|&&e| e <= *t).count() as f64 / errors.len() as f64;
            prop_assert_eq!(*r, direct);
        }
    }
}
