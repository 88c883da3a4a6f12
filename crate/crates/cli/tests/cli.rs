use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lidar_pose_shape::geometry::{read_obj, read_ply, PointCloud, TriMesh};

const TINY_NET: [&str; 6] = ["--n-coarse", "4", "--grid", "2", "--input-points", "32"];

fn lps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lps"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lps(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    lps(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect()
}

fn small_dataset(dir: &Path) {
    ok(&[
        "gen-dataset",
        "--models",
        "3",
        "--views",
        "4",
        "--holdout",
        "1",
        "--n-complete",
        "128",
        "--seed",
        "3",
        "--out-dir",
        s(dir),
    ]);
}

#[test]
fn help_lists_flags_with_defaults() {
    let gen = ok(&["gen-dataset", "--help"]);
    for needle in [
        "--models <MODELS>",
        "[default: 8]",
        "[default: 16]",
        "[default: 1024]",
        "[default: 5]",
        "[default: 35]",
        "[default: 2]",
        "--seed",
        "--config",
        "--out-dir",
        "--threads",
    ] {
        assert!(gen.contains(needle), "gen-dataset help lacks {needle}");
    }
    let train = ok(&["train", "--help"]);
    for needle in [
        "[default: 0.0001]",
        "[default: 200]",
        "--batch-size <BATCH_SIZE>",
        "[default: 64]",
        "[default: 256]",
        "[default: joint]",
    ] {
        assert!(train.contains(needle), "train help lacks {needle}");
    }
    for cmd in ["eval", "infer", "export-mesh"] {
        let h = ok(&[cmd, "--help"]);
        assert!(h.contains("--seed <SEED>") && h.contains("--out-dir <OUT_DIR>"), "{cmd}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["gen-dataset", "--models", "many"]), 1);
    assert_eq!(code(&["train"]), 1);
    assert_eq!(code(&["train", "--data", "/definitely/not/here"]), 1);
    assert_eq!(code(&["gen-dataset", "--models", "2", "--holdout", "2"]), 1);
    assert_eq!(code(&["gen-dataset", "--threads", "0"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn invalid_flags_have_no_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["gen-dataset", "--min-range", "40", "--out-dir", s(&out)]), 1);
    assert!(!out.exists());
}

#[test]
fn runtime_failure_exits_two_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data);
    fs::write(data.join("train.lsds"), b"garbage").unwrap();
    let out = dir.path().join("models");
    assert_eq!(code(&["train", "--data", s(&data), "--epochs", "1", "--out-dir", s(&out)]), 2);
    assert!(!out.exists() || fs::read_dir(&out).unwrap().count() == 0);
}

#[test]
fn gen_dataset_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "gen-dataset",
            "--models",
            "8",
            "--views",
            "16",
            "--seed",
            "7",
            "--out-dir",
            s(d),
        ]);
    }
    let strip = |m: BTreeMap<PathBuf, Vec<u8>>| {
        m.into_iter()
            .map(|(p, v)| (p.file_name().unwrap().to_owned(), v))
            .collect::<Vec<_>>()
    };
    let (sa, sb) = (strip(snapshot(&a)), strip(snapshot(&b)));
    assert_eq!(sa.len(), 3);
    assert_eq!(sa, sb);

    let c = dir.path().join("c");
    ok(&[
        "gen-dataset",
        "--models",
        "8",
        "--views",
        "16",
        "--seed",
        "8",
        "--out-dir",
        s(&c),
    ]);
    assert_ne!(sa, strip(snapshot(&c)));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# desk run\nmodels = 3\nviews=2\nholdout=1\nseed=5\n").unwrap();
    let a = dir.path().join("a");
    let text = ok(&["gen-dataset", "--config", s(&cfg), "--views", "3", "--out-dir", s(&a)]);
    assert!(text.contains("wrote 6 training and 3 validation samples"), "{text}");
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("gen.seed=5"), "{manifest}");

    fs::write(&cfg, "epochs=2\n").unwrap();
    assert_eq!(code(&["gen-dataset", "--config", s(&cfg), "--out-dir", s(&a)]), 1);
    assert_eq!(code(&["gen-dataset", "--config", s(&dir.path().join("missing.cfg"))]), 1);
}

#[test]
fn pipeline_train_eval_infer_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let models = dir.path().join("models");
    small_dataset(&data);
    let before = snapshot(&data);

    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--arch",
        "all",
        "--epochs",
        "1",
        "--batch-size",
        "4",
        "--out-dir",
        s(&models),
    ];
    args.extend(TINY_NET);
    let text = ok(&args);
    assert!(text.contains("joint joint: best epoch 1"), "{text}");
    for arch in ["baseline", "shared", "joint"] {
        assert!(models.join(format!("model-{arch}.lsck")).is_file());
        let log = fs::read_to_string(models.join(format!("train-{arch}.csv"))).unwrap();
        assert!(log.starts_with("epoch,stage,train_loss,val_loss,s_cd,s_p,wall_ms\n"));
    }

    let reports = dir.path().join("reports");
    let text = ok(&[
        "eval",
        "--data",
        s(&data),
        "--arch",
        "all",
        "--checkpoint-dir",
        s(&models),
        "--out-dir",
        s(&reports),
    ]);
    assert_eq!(text.lines().count(), 3);
    let first = snapshot(&reports);
    assert_eq!(first.len(), 6);
    for arch in ["baseline", "shared", "joint"] {
        let rec = fs::read_to_string(reports.join(format!("eval-{arch}.csv"))).unwrap();
        assert_eq!(rec.lines().count(), 1 + 4);
        assert!(reports.join(format!("curves-{arch}.csv")).is_file());
    }
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint-dir",
        s(&models),
        "--out-dir",
        s(&reports),
    ]);
    assert_eq!(snapshot(&reports), first);
    assert_eq!(snapshot(&data), before, "commands must not modify their inputs");

    let single = dir.path().join("single");
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&models.join("model-shared.lsck")),
        "--split",
        "train",
        "--out-dir",
        s(&single),
    ]);
    let rec = fs::read_to_string(single.join("eval-shared.csv")).unwrap();
    assert_eq!(rec.lines().count(), 1 + 8);

    let mesh_dir = dir.path().join("mesh");
    ok(&["export-mesh", "--model-id", "2", "--seed", "3", "--out-dir", s(&mesh_dir)]);
    let mesh: TriMesh<f64> = read_obj(BufReader::new(fs::File::open(mesh_dir.join("vehicle-2.obj")).unwrap())).unwrap();
    assert!(!mesh.is_empty());

    let scan = dir.path().join("scan.ply");
    fs::write(
        &scan,
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n12 0 -1\n12 0.5 -1\n12 0 -0.5\n",
    )
    .unwrap();
    let inferred = dir.path().join("infer");
    let text = ok(&[
        "infer",
        "--checkpoint",
        s(&models.join("model-joint.lsck")),
        "--input",
        s(&scan),
        "--out-dir",
        s(&inferred),
    ]);
    assert!(text.contains("arch=joint") && text.contains("tz=-2"), "{text}");
    let completion: PointCloud<f64> = read_ply(BufReader::new(fs::File::open(inferred.join("completion.ply")).unwrap())).unwrap();
    assert_eq!(completion.len(), 4 * 2 * 2);
    assert!(inferred.join("pose.txt").is_file());

    assert_eq!(
        code(&[
            "infer",
            "--checkpoint",
            s(&scan),
            "--input",
            s(&scan),
            "--out-dir",
            s(&inferred)
        ]),
        2
    );
    assert_eq!(
        code(&["eval", "--data", s(&data), "--checkpoint-dir", s(&dir.path().join("none"))]),
        1
    );
}
