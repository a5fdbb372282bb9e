use std::path::Path;
use std::process::{Command, Output};

use stable_dyn::cli::{Checkpoint, Table};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stable-dyn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn values(t: &Table, name: &str) -> Vec<f64> {
    let c = t.column(name).unwrap();
    t.rows.iter().map(|r| r[c]).collect()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn randviz_grid_has_minimum_of_v_at_origin() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["randviz", "--resolution", "11", "--bound", "1", "--out", "grid.csv"],
    );
    let t = Table::load(&dir.path().join("grid.csv")).unwrap();
    assert_eq!(t.columns, ["x1", "x2", "fhat1", "fhat2", "f1", "f2", "V"]);
    assert_eq!(t.rows.len(), 121);
    assert_eq!(t.meta_value("command"), Some("randviz"));
    let v = values(&t, "V");
    let x1 = values(&t, "x1");
    let x2 = values(&t, "x2");
    let argmin = (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    assert_eq!((x1[argmin], x2[argmin]), (0.0, 0.0));
    assert_eq!(v[argmin], 0.0);
}

#[test]
fn pendulum_pipeline_produces_consistent_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &[
            "pendulum", "gen-data", "--links", "2", "--count", "300", "--out", "data.csv",
        ],
    );
    let data = Table::load(&p.join("data.csv")).unwrap();
    assert_eq!(
        data.columns,
        ["x_1", "x_2", "x_3", "x_4", "xdot_1", "xdot_2", "xdot_3", "xdot_4"]
    );
    assert_eq!(data.rows.len(), 300);

    ok(
        p,
        &[
            "pendulum",
            "train",
            "--data",
            "data.csv",
            "--epochs",
            "2",
            "--fhat-hidden",
            "8",
            "--icnn-hidden",
            "8",
            "--out",
            "m.ckpt",
        ],
    );
    let ck = Checkpoint::load(&p.join("m.ckpt")).unwrap();
    assert_eq!(ck.get::<usize>("state_dim").unwrap(), 4);
    assert_eq!(ck.get::<usize>("epochs_completed").unwrap(), 2);
    let history = Table::load(&p.join("m.loss.csv")).unwrap();
    assert_eq!(history.rows.len(), 2);

    ok(
        p,
        &[
            "pendulum",
            "eval",
            "--checkpoint",
            "m.ckpt",
            "--horizon",
            "20",
            "--ensemble",
            "5",
            "--out",
            "e.csv",
        ],
    );
    let eval = Table::load(&p.join("e.csv")).unwrap();
    assert_eq!(eval.rows.len(), 20);
    assert_eq!(values(&eval, "mean_error")[0], 0.0);
    assert_eq!(eval.meta_value("diverged_rollouts"), Some("0"));
}

#[test]
fn texture_pipeline_writes_images_and_bound() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &[
            "texture", "synth", "--count", "3", "--length", "6", "--size", "8", "--out", "f.csv",
        ],
    );
    ok(
        p,
        &[
            "texture",
            "train",
            "--data",
            "f.csv",
            "--epochs",
            "2",
            "--latent-dim",
            "3",
            "--out",
            "l.ckpt",
        ],
    );
    ok(
        p,
        &[
            "texture",
            "generate",
            "--checkpoint",
            "l.ckpt",
            "--data",
            "f.csv",
            "--steps",
            "4",
            "--out",
            "n.csv",
            "--pgm-dir",
            "img",
        ],
    );
    let norms = Table::load(&p.join("n.csv")).unwrap();
    assert_eq!(norms.columns, ["t", "norm", "z_1", "z_2", "z_3"]);
    assert_eq!(norms.rows.len(), 5);
    let bound: f64 = norms.meta_parse("norm_bound").unwrap();
    assert!(values(&norms, "norm").iter().all(|n| *n <= bound));
    let pgm = std::fs::read_to_string(p.join("img/frame_0004.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n8 8\n255\n"));
}

#[test]
fn bad_inputs_exit_with_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = run(
        p,
        &["pendulum", "eval", "--checkpoint", "missing.ckpt", "--out", "e.csv"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));

    std::fs::write(p.join("bad.ckpt"), "stable-dyn-checkpoint 7\nend\n").unwrap();
    let out = run(p, &["pendulum", "eval", "--checkpoint", "bad.ckpt", "--out", "e.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 7"));

    let out = run(p, &["randviz", "--fhat-hidden", "0", "--out", "g.csv"]);
    assert!(!out.status.success());
}
