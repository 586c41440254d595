//! End-to-end tests of the `ptcnn` binary: every subcommand, exercised
//! through real processes on a synthetic dataset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptcnn"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_tiny_config(dir: &Path, classes: usize, epochs: usize) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("cfg.json");
    let text = format!(
        r#"{{
  "model": {{"token_dim": 8, "layers_per_stage": [1, 1, 1], "cnn_base_width": 8,
             "cnn_blocks_per_stage": [1, 1, 1], "num_heads": 2,
             "decoder_widths": [16, 8, 8], "num_classes": {classes}, "input_size": 32}},
  "train": {{"epochs": {epochs}, "seed": 1}}
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn synth_dataset(dir: &Path, classes: usize) -> PathBuf {
    ok(&[
        "synth",
        "--cases",
        "2",
        "--slices",
        "2",
        "--classes",
        &classes.to_string(),
        "--size",
        "32",
        "--seed",
        "5",
        "--out",
        path_str(dir),
    ]);
    dir.join("manifest.json")
}

fn train_tiny(dir: &Path, classes: usize) -> (PathBuf, PathBuf) {
    let manifest = synth_dataset(&dir.join("data"), classes);
    let cfg = write_tiny_config(dir, classes, 2);
    let out = dir.join("run");
    ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&manifest),
        "--out",
        path_str(&out),
    ]);
    (out.join("checkpoint.ptckpt"), manifest)
}

#[test]
fn synth_train_eval_roundtrip_with_identical_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, manifest) = train_tiny(dir.path(), 3);
    assert!(ckpt.exists());
    assert!(dir.path().join("run/train_log.csv").exists());
    assert!(dir.path().join("run/config.json").exists());

    let csv_a = dir.path().join("a.csv");
    let csv_b = dir.path().join("b.csv");
    let out = ok(&[
        "eval",
        "--checkpoint",
        path_str(&ckpt),
        "--data",
        path_str(&manifest),
        "--csv",
        path_str(&csv_a),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean"), "{stdout}");
    ok(&[
        "eval",
        "--checkpoint",
        path_str(&ckpt),
        "--data",
        path_str(&manifest),
        "--csv",
        path_str(&csv_b),
    ]);
    assert_eq!(std::fs::read(&csv_a).unwrap(), std::fs::read(&csv_b).unwrap());
    let table = std::fs::read_to_string(&csv_a).unwrap();
    assert!(table.starts_with("case_id,class_id,dsc,hd95\n"));
    assert!(table.lines().last().unwrap().starts_with("mean,all,"));
}

#[test]
fn train_plot_renders_a_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_dataset(&dir.path().join("data"), 3);
    let cfg = write_tiny_config(dir.path(), 3, 2);
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&manifest),
        "--out",
        path_str(&out),
        "--plot",
    ]);
    let plot = std::fs::read(out.join("loss_curves.pgm")).unwrap();
    assert!(plot.starts_with(b"P5\n640 480\n255\n"));
    assert_eq!(plot.len(), b"P5\n640 480\n255\n".len() + 640 * 480);
}

#[test]
fn predict_twice_is_byte_identical_and_matches_extents() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = train_tiny(dir.path(), 3);
    let image = dir.path().join("data/images/case000_slice000.ptcn");

    for out in ["p1", "p2"] {
        ok(&[
            "predict",
            "--checkpoint",
            path_str(&ckpt),
            "--image",
            path_str(&image),
            "--out",
            path_str(&dir.path().join(out)),
        ]);
    }
    let mask_a = std::fs::read(dir.path().join("p1/mask.ptcn")).unwrap();
    let mask_b = std::fs::read(dir.path().join("p2/mask.ptcn")).unwrap();
    assert_eq!(mask_a, mask_b);
    let overlay_a = std::fs::read(dir.path().join("p1/overlay.pgm")).unwrap();
    let overlay_b = std::fs::read(dir.path().join("p2/overlay.pgm")).unwrap();
    assert_eq!(overlay_a, overlay_b);
    assert!(overlay_a.starts_with(b"P5\n32 32\n255\n"));

    let mask = paratranscnn::io::read_tensor(dir.path().join("p1/mask.ptcn"))
        .unwrap()
        .cast::<f32>();
    assert_eq!(mask.shape(), &[32, 32]);
    assert!(mask.to_vec().iter().all(|&v| v >= 0.0 && v < 3.0 && v.fract() == 0.0));
}

#[test]
fn export_attention_writes_per_stage_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = train_tiny(dir.path(), 3);
    let image = dir.path().join("data/images/case001_slice001.ptcn");
    let out = dir.path().join("attn");
    ok(&[
        "export-attention",
        "--checkpoint",
        path_str(&ckpt),
        "--image",
        path_str(&image),
        "--out",
        path_str(&out),
    ]);

    for (stage, width) in [(1, 16), (2, 32), (3, 64)] {
        let weights = paratranscnn::io::read_tensor(out.join(format!("stage{stage}_weights.ptcn")))
            .unwrap()
            .cast::<f32>();
        assert_eq!(weights.shape(), &[width]);
        assert!(weights.to_vec().iter().all(|&v| v > 0.0 && v < 1.0));
        let heat = std::fs::read(out.join(format!("stage{stage}_heatmap.pgm"))).unwrap();
        assert!(heat.starts_with(b"P5\n32 32\n255\n"));
    }
}

#[test]
fn ablated_model_has_no_attention_to_export() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_dataset(&dir.path().join("data"), 3);
    let cfg = write_tiny_config(dir.path(), 3, 1);
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&manifest),
        "--out",
        path_str(&out),
        "--no-channel-attention",
    ]);
    let saved = std::fs::read_to_string(out.join("config.json")).unwrap();
    assert!(saved.contains("\"no_channel_attention\": true"), "{saved}");

    let fail = run(&[
        "export-attention",
        "--checkpoint",
        path_str(&out.join("checkpoint.ptckpt")),
        "--image",
        path_str(&dir.path().join("data/images/case000_slice000.ptcn")),
        "--out",
        path_str(&dir.path().join("attn")),
    ]);
    assert!(!fail.status.success());
}

#[test]
fn gradcheck_passes_on_the_default_minimal_config() {
    let out = ok(&["gradcheck", "--samples", "1"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gradcheck passed"), "{stdout}");
}

#[test]
fn missing_files_and_class_mismatches_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let fail = run(&[
        "eval",
        "--checkpoint",
        path_str(&dir.path().join("absent.ptckpt")),
        "--data",
        path_str(&dir.path().join("absent.json")),
    ]);
    assert!(!fail.status.success());
    assert!(!fail.stderr.is_empty());

    let manifest = synth_dataset(&dir.path().join("data"), 3);
    let fail = run(&[
        "train",
        "--data",
        path_str(&manifest),
        "--out",
        path_str(&dir.path().join("run")),
    ]);
    assert!(!fail.status.success());
    let stderr = String::from_utf8_lossy(&fail.stderr);
    assert!(stderr.contains("classes"), "{stderr}");
}

#[test]
fn resume_continues_the_same_log_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_dataset(&dir.path().join("data"), 3);
    let cfg = write_tiny_config(dir.path(), 3, 2);
    let full = dir.path().join("full");
    ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&manifest),
        "--out",
        path_str(&full),
    ]);

    let split = dir.path().join("split");
    let one_epoch = write_tiny_config(&dir.path().join("phase1"), 3, 1);
    ok(&[
        "train",
        "--config",
        path_str(&one_epoch),
        "--data",
        path_str(&manifest),
        "--out",
        path_str(&split),
    ]);
    ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&manifest),
        "--out",
        path_str(&split),
        "--resume",
        path_str(&split.join("checkpoint.ptckpt")),
    ]);

    let strip_wall = |text: String| -> Vec<String> {
        text.lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect()
    };
    let a = strip_wall(std::fs::read_to_string(full.join("train_log.csv")).unwrap());
    let b = strip_wall(std::fs::read_to_string(split.join("train_log.csv")).unwrap());
    assert_eq!(a, b);
}
