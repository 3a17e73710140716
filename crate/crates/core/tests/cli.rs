use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use spleenlen::cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, RUN_CONFIG_FILE};
use spleenlen::geometry::{BinaryMask, Spacing};
use spleenlen::phantom::read_manifest;
use spleenlen::preprocess::io::{read_image, write_image, write_mask, BitDepth};
use spleenlen::preprocess::GrayImage;

fn spleenlen(args: &[&str]) -> i32 {
    let mut all = vec!["spleenlen"];
    all.extend_from_slice(args);
    run(all)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_spleenlen");
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| Command::new(bin).args(args).current_dir(tmp.path()).output().unwrap().status.code().unwrap();
    assert_eq!(code(&["phantom", "--count", "0"]), EXIT_USAGE);
    assert_eq!(code(&["no-such-command"]), EXIT_USAGE);
    assert_eq!(code(&["phantom", "--count", "3", "--out", "ds"]), EXIT_OK);
    assert_eq!(code(&["measure", "--data", "ds", "--checkpoint", "missing.ckpt"]), EXIT_RUNTIME);
    assert_eq!(code(&["--help"]), EXIT_OK);
}

#[test]
fn phantom_command_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    assert_eq!(spleenlen(&["phantom", "--count", "10", "--seed", "7", "--out", p(&out)]), EXIT_OK);
    let first = snapshot(&out);
    fs::remove_dir_all(&out).unwrap();
    assert_eq!(spleenlen(&["--threads", "2", "phantom", "--count", "10", "--seed", "7", "--out", p(&out)]), EXIT_OK);
    assert_eq!(snapshot(&out), first);
    let (seed, rows) = read_manifest(&out).unwrap();
    assert_eq!((seed, rows.len()), (Some(7), 10));
    assert_eq!(spleenlen(&["phantom", "--count", "0", "--out", p(&out)]), EXIT_USAGE);
}

#[test]
fn oracle_measure_matches_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let out = tmp.path().join("m");
    assert_eq!(spleenlen(&["phantom", "--count", "15", "--seed", "3", "--out", p(&ds)]), EXIT_OK);
    assert_eq!(spleenlen(&["measure", "--data", p(&ds), "--backend", "oracle", "--out", p(&out)]), EXIT_OK);
    let (_, rows) = read_manifest(&ds).unwrap();
    let text = fs::read_to_string(out.join("measurements.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("case_id,length_mm"));
    for (line, row) in lines.zip(&rows) {
        let (id, len) = line.split_once(',').unwrap();
        assert_eq!(id.parse::<u64>().unwrap(), row.case_id);
        let len: f64 = len.parse().unwrap();
        assert!((len - row.length_mm).abs() <= 2.0 * row.sy_mm.max(row.sx_mm), "case {id}");
    }
    assert_eq!(spleenlen(&["measure", "--data", p(&ds), "--out", p(&out)]), EXIT_USAGE);
}

#[test]
fn gradcheck_lists_every_op() {
    assert_eq!(spleenlen(&["gradcheck", "--instances", "2"]), EXIT_OK);
}

#[test]
fn crossval_smoke_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("results");
    let args = [
        "crossval",
        "--count",
        "12",
        "--methods",
        "SB,DE,DEW,VGG",
        "--grouping",
        "by-case",
        "--epochs",
        "1",
        "--base-channels",
        "2",
        "--fc-nodes",
        "8",
        "--vgg-divisor",
        "32",
        "--decays",
        "1e-7",
        "--no-augment",
        "--seed",
        "4",
        "--out",
        p(&out),
    ];
    assert_eq!(spleenlen(&args), EXIT_OK);
    let table = fs::read_to_string(out.join("table1.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("metric,SB,DE,DEW,VGG"));
    assert_eq!(table.lines().count(), 5);
    assert_eq!(fs::read_to_string(out.join("predictions.csv")).unwrap().lines().count(), 1 + 48);
    assert_eq!(fs::read_dir(out.join("folds")).unwrap().count(), 12);
    assert!(out.join("experiment.json").exists() && out.join(RUN_CONFIG_FILE).exists());
}

#[test]
fn train_sb_then_dew() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    assert_eq!(spleenlen(&["phantom", "--count", "6", "--out", p(&ds)]), EXIT_OK);
    let common = ["--epochs", "1", "--base-channels", "2", "--fc-nodes", "8", "--no-augment"];
    let sb = tmp.path().join("sb");
    let mut args = vec!["train", "--data", p(&ds), "--out", p(&sb)];
    args.extend(common);
    assert_eq!(spleenlen(&args), EXIT_OK);
    assert!(sb.join("model.ckpt").exists() && sb.join("loss_curve.csv").exists());
    let dew = tmp.path().join("dew");
    let ckpt = sb.join("model.ckpt");
    let mut args = vec!["train", "--data", p(&ds), "--method", "DEW", "--encoder", p(&ckpt), "--out", p(&dew)];
    args.extend(common);
    assert_eq!(spleenlen(&args), EXIT_OK);
    let mut args = vec!["train", "--data", p(&ds), "--method", "DEW", "--out", p(&dew)];
    args.extend(common);
    assert_eq!(spleenlen(&args), EXIT_USAGE);
    // the encoder of a checkpoint with a different width cannot be transferred
    let mut args =
        vec!["train", "--data", p(&ds), "--method", "DEW", "--encoder", p(&ckpt), "--out", p(&dew), "--base-channels", "3"];
    args.extend(&common[..2]);
    assert_eq!(spleenlen(&args), EXIT_USAGE);
}

#[test]
fn config_file_values_yield_to_flags_and_paper_mode_is_logged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 5, "out": "from_file", "phantom": {"count": 4, "patients": 4}}"#).unwrap();
    assert_eq!(spleenlen(&["--config", p(&cfg), "phantom", "--seed", "9"]), EXIT_OK);
    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("from_file").join(RUN_CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(log["seed"], 9);
    assert_eq!(log["phantom"]["count"], 4);
    assert_eq!(log["paper_faithful"], false);

    let out = tmp.path().join("paper");
    assert_eq!(spleenlen(&["--paper-faithful", "phantom", "--count", "3", "--out", p(&out)]), EXIT_OK);
    let log: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(RUN_CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(log["paper_faithful"], true);
    assert_eq!(log["network"]["sb_learning_rate"], 1e-5);
    assert_eq!(log["network"]["batch_size"], 4);
    assert_eq!(log["network"]["augmentation"]["rotation_deg"], serde_json::json!([0.0, 20.0]));
    assert_eq!(log["experiment"]["decay_grid"], serde_json::json!([1e-6, 1e-7, 1e-8]));

    fs::write(&cfg, r#"{"phantom": {"count": 4, "colour": "red"}}"#).unwrap();
    assert_eq!(spleenlen(&["--config", p(&cfg), "phantom"]), EXIT_USAGE);
}

#[test]
fn inpaint_command_fills_the_mask() {
    let tmp = tempfile::tempdir().unwrap();
    let s = Spacing::unit();
    let img = GrayImage::from_fn(24, 24, s, |r, c| 0.2 + 0.02 * r as f64 + 0.01 * c as f64);
    let mut damaged = img.clone();
    let mask = BinaryMask::from_fn(24, 24, s, |r, c| (9..14).contains(&r) && (8..15).contains(&c));
    for (r, c) in mask.pixels() {
        damaged.set(r, c, 1.0);
    }
    let (ip, mp, op) = (tmp.path().join("in.png"), tmp.path().join("mask.png"), tmp.path().join("out.png"));
    write_image(&damaged, &ip, BitDepth::Sixteen).unwrap();
    write_mask(&mask, &mp).unwrap();
    assert_eq!(spleenlen(&["inpaint", "--image", p(&ip), "--mask", p(&mp), "--out", p(&op)]), EXIT_OK);
    let back = read_image(&op, s).unwrap();
    for (r, c) in mask.pixels() {
        assert!((back.get(r, c) - img.get(r, c)).abs() < 1e-3, "({r},{c})");
    }
}
