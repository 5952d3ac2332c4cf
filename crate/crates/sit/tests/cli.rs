use std::path::Path;
use std::process::{Command, Output};

use sit::format::{load_field, load_tri_mesh, pairs_to_string, save_field, save_mesh};
use sit_core::mesh::{Mesh, QuadMesh};
use sit_core::resample::FeatureField;

fn sit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sit"))
        .args(args)
        .current_dir(dir)
        .env_remove("SIT_OUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL_RUN: &str = "[model]\nlayers = 1\nheads = 2\ndim = 8\nmlp_dim = 16\n\n[train]\nbatch_size = 2\niterations = 4\nseed = 3\n";

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--order", "3", "--count", "4", "--seed", "1", "--out", "data"];
    args.extend_from_slice(extra);
    stdout(&sit(dir, &args));
    std::fs::write(dir.join("run.toml"), SMALL_RUN).unwrap();
}

#[test]
fn missing_out_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = sit(d.path(), &["icosphere", "--order", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(sit(d.path(), &["icosphere", "--order", "x"]).status.code(), Some(2));
    assert_eq!(sit(d.path(), &["nonsense"]).status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_with_other_error() {
    let d = tempfile::tempdir().unwrap();
    let o = sit(d.path(), &["patch", "--fine", "nope.surf", "--coarse", "nope.surf", "--out", "t.txt"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn out_dir_env_supplies_default_path() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sit"))
        .args(["icosphere", "--order", "1"])
        .env("SIT_OUT_DIR", d.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(std::fs::read_dir(d.path()).unwrap().count() >= 1);
}

#[test]
fn icosphere_order_six_counts() {
    let d = tempfile::tempdir().unwrap();
    let out = stdout(&sit(d.path(), &["icosphere", "--order", "6", "--out", "ico6.surf"]));
    assert_eq!(out.trim(), "vertices 40962 faces 81920");
    let mesh = load_tri_mesh(&d.path().join("ico6.surf")).unwrap();
    assert_eq!(mesh.vertex_count(), 40962);
}

#[test]
fn icosphere_patch_table() {
    let d = tempfile::tempdir().unwrap();
    stdout(&sit(d.path(), &["icosphere", "--order", "4", "--out", "ico4.surf"]));
    stdout(&sit(d.path(), &["icosphere", "--order", "1", "--out", "ico1.surf"]));
    let out = stdout(&sit(d.path(), &["patch", "--fine", "ico4.surf", "--coarse", "ico1.surf", "--out", "t.txt"]));
    assert_eq!(out.trim(), "patches 80 vertices_per_patch 45");
}

#[test]
fn zero_rotation_matches_plain_resample() {
    let d = tempfile::tempdir().unwrap();
    stdout(&sit(d.path(), &["icosphere", "--order", "3", "--out", "a.surf"]));
    stdout(&sit(d.path(), &["icosphere", "--order", "2", "--out", "b.surf"]));
    let mesh = load_tri_mesh(&d.path().join("a.surf")).unwrap();
    let values = mesh.vertices().iter().map(|v| v[0] * v[1] + v[2]).collect();
    let field = FeatureField::new(mesh.id(), vec!["f".into()], values).unwrap();
    save_field(&Mesh::Tri(mesh), &field, &d.path().join("f.surf")).unwrap();
    let base = ["resample", "--src", "a.surf", "--dst", "b.surf", "--field", "f.surf"];
    stdout(&sit(d.path(), &[&base[..], &["--out", "plain.surf"]].concat()));
    stdout(&sit(d.path(), &[&base[..], &["--rotate", "x:0", "--out", "rot.surf"]].concat()));
    let (_, plain) = load_field(&d.path().join("plain.surf")).unwrap();
    let (_, rot) = load_field(&d.path().join("rot.surf")).unwrap();
    assert_eq!(plain.values(), rot.values());
    assert_eq!(plain.vertex_count(), 162);
}

#[test]
fn bad_rotation_spec_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    stdout(&sit(d.path(), &["icosphere", "--order", "1", "--out", "a.surf"]));
    let o = sit(d.path(), &["resample", "--src", "a.surf", "--dst", "a.surf", "--field", "a.surf", "--rotate", "w:5", "--out", "o.surf"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn quad_pairs_give_one_patch_per_pair() {
    let d = tempfile::tempdir().unwrap();
    let v = vec![
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
        [0.0, 1.0, 1.0],
    ];
    let f = vec![[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]];
    save_mesh(&Mesh::Quad(QuadMesh::new(v, f).unwrap()), &d.path().join("cube.surf")).unwrap();
    std::fs::write(d.path().join("pairs.txt"), pairs_to_string(&[(0, 1), (2, 4), (3, 5)])).unwrap();
    let out = stdout(&sit(
        d.path(),
        &["patch", "--control", "cube.surf", "--pairs", "pairs.txt", "--fine-out", "fine.surf", "--out", "t.txt"],
    ));
    assert_eq!(out.trim(), "patches 3 vertices_per_patch 50");
    let unpaired = stdout(&sit(d.path(), &["patch", "--control", "cube.surf", "--out", "u.txt"]));
    assert_eq!(unpaired.trim(), "patches 6 vertices_per_patch 25");
}

#[test]
fn info_prints_exact_count() {
    let d = tempfile::tempdir().unwrap();
    let out = stdout(&sit(d.path(), &["info", "--profile", "sit-tiny-ico"]));
    assert!(out.lines().any(|l| l == "parameters 5509249"), "{out}");
    let out = stdout(&sit(d.path(), &["info", "--profile", "sit-tiny-ico", "--channels", "115"]));
    assert!(out.lines().any(|l| l == "parameters 8769985"), "{out}");
}

#[test]
fn zero_learning_rate_keeps_initial_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &[]);
    stdout(&sit(d.path(), &["train", "--config", "run.toml", "--data", "data/data.toml", "--lr", "0", "--out", "run"]));
    let read = |f: &str| std::fs::read(d.path().join("run").join(f)).unwrap();
    assert_eq!(read("init.ckpt.bin"), read("final.ckpt.bin"));
    for f in ["history.csv", "metrics.csv", "run.json"] {
        assert!(d.path().join("run").join(f).exists(), "{f}");
    }
    let metrics = String::from_utf8(read("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("metric,value,split,seed"));
}

#[test]
fn pretrain_then_finetune_then_eval_and_attend() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &["--classes"]);
    stdout(&sit(d.path(), &["pretrain", "--config", "run.toml", "--data", "data/data.toml", "--out", "pre"]));
    std::fs::write(d.path().join("cls.toml"), format!("{SMALL_RUN}loss = \"cross-entropy\"\n").replace("[model]\n", "[model]\nhead = \"classification:2\"\n")).unwrap();
    let o = sit(d.path(), &["train", "--config", "cls.toml", "--data", "data/data.toml", "--init", "pre/final.ckpt", "--out", "ft"]);
    stdout(&o);
    stdout(&sit(d.path(), &["eval", "--checkpoint", "ft/final.ckpt", "--data", "data/data.toml", "--out", "eval.csv"]));
    let eval = std::fs::read_to_string(d.path().join("eval.csv")).unwrap();
    assert!(eval.contains("accuracy,"), "{eval}");
    assert!(eval.contains("auc,"), "{eval}");
    stdout(&sit(
        d.path(),
        &["attend", "--checkpoint", "ft/final.ckpt", "--data", "data/data.toml", "--heads", "0,1", "--layers", "0..1", "--out", "maps"],
    ));
    let (_, maps) = load_field(&d.path().join("maps/attention.surf")).unwrap();
    assert_eq!(maps.channel_names(), ["head0", "head1", "average"]);
    for c in 0..3 {
        let col = maps.column(c);
        assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(col.iter().copied().fold(0.0f32, f32::max), 1.0);
    }
    assert!(d.path().join("maps/attention.json").exists());
}

#[test]
fn attend_rejects_bad_layer_range() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &[]);
    stdout(&sit(d.path(), &["train", "--config", "run.toml", "--data", "data/data.toml", "--out", "run"]));
    let o = sit(d.path(), &["attend", "--checkpoint", "run/final.ckpt", "--data", "data/data.toml", "--layers", "0..5", "--out", "m"]);
    assert_ne!(o.status.code(), Some(0));
}
