use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cpseg::data::{read_image, read_mask, write_volume, Mask};

const TINY: &str = "seed = 2
[model]
channel_scale = 0.25
[train]
total_iters = 3
lr_drops = [2, 3]
patch_size = 32
batch_size = 2
[data]
n_train = 2
n_test = 2
[inference]
patch_size = 32
stride = 32
batch_size = 4
";

fn cpseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpseg")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    cpseg(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn phantom_writes_pairs_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("data");
    assert_eq!(code(&["--config", s(&cfg), "--out", s(&out), "phantom"]), 0);
    let nii = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "nii")).count();
    assert_eq!(nii, 8);
    let manifest: toml::Table = toml::from_str(&fs::read_to_string(out.join("manifest.toml")).unwrap()).unwrap();
    let cases = manifest["cases"].as_array().unwrap();
    let mut seeds: Vec<_> = cases.iter().map(|c| c["seed"].as_integer().unwrap()).collect();
    seeds.sort();
    seeds.dedup();
    assert_eq!(seeds.len(), 4);
    let resolved: toml::Table = toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(2));

    let again = dir.path().join("again");
    assert_eq!(code(&["--config", s(&cfg), "--out", s(&again), "phantom"]), 0);
    for e in fs::read_dir(&out).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(fs::read(out.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&["--config", s(&cfg), "--out", s(&a), "phantom"]), 0);
    assert_eq!(code(&["--config", s(&cfg), "--seed", "9", "--out", s(&b), "phantom"]), 0);
    assert_ne!(fs::read(a.join("train_000_image.nii")).unwrap(), fs::read(b.join("train_000_image.nii")).unwrap());
    assert!(fs::read_to_string(b.join("config.toml")).unwrap().starts_with("seed = 9"));
}

#[test]
fn train_infer_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let c = s(&cfg);
    let d = dir.path();
    let data = d.join("data");
    assert_eq!(code(&["--config", c, "--out", s(&data), "phantom"]), 0);

    let run = d.join("run");
    let out = cpseg(&["--config", c, "--out", s(&run), "train", "--data", s(&data), "--supervision", "output-only"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(run.join("loss_trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,lr,total_loss,final"));
    assert_eq!(lines.count(), 3);
    assert!(run.join("model.ckpt").exists());

    let ckpt = run.join("model.ckpt");
    let image = data.join("test_000_image.nii");
    let (p1, p2) = (d.join("p1"), d.join("p2"));
    assert_eq!(code(&["--config", c, "--out", s(&p1), "infer", "--checkpoint", s(&ckpt), s(&image)]), 0);
    assert_eq!(code(&["--config", c, "--out", s(&p2), "infer", "--checkpoint", s(&ckpt), s(&image)]), 0);
    let prob = read_image(&p1.join("test_000_prob.nii")).unwrap();
    let mask = read_mask(&p1.join("test_000_mask.nii")).unwrap();
    let input = read_image(&image).unwrap();
    assert_eq!(prob.dims, input.dims);
    assert_eq!(mask.dims, input.dims);
    assert!(prob.data.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(fs::read(p1.join("test_000_mask.nii")).unwrap(), fs::read(p2.join("test_000_mask.nii")).unwrap());
    assert!(fs::read_to_string(p1.join("timing.csv")).unwrap().starts_with("case,seconds\ntest_000,"));

    // the resolved config records the checkpoint's model
    let resolved: toml::Table = toml::from_str(&fs::read_to_string(p1.join("config.toml")).unwrap()).unwrap();
    assert_eq!(resolved["model"]["supervision_strategy"].as_str(), Some("output-only"));

    let ev = d.join("eval");
    let out = cpseg(&["--config", c, "--out", s(&ev), "eval", "--pred", s(&p1), "--gt", s(&data), "--error-maps"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("case,dice,hd95_mm,asd_mm\ntest_000,"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping train_000"));
}

#[test]
fn no_attention_with_attention_supervision_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("data");
    assert_eq!(code(&["--config", s(&cfg), "--out", s(&data), "phantom"]), 0);
    let r = dir.path().join("r");
    let args = ["--config", s(&cfg), "--out", s(&r), "train", "--data", s(&data), "--no-attention", "--supervision", "sam"];
    assert_eq!(code(&args), 1);
}

fn write_masks(dir: &Path, masks: &[(&str, Vec<u8>)]) {
    fs::create_dir_all(dir).unwrap();
    for (name, data) in masks {
        let m = Mask::new([4, 4, 4], [0.8; 3], data.clone()).unwrap();
        write_volume(&m, &dir.join(format!("{name}.nii"))).unwrap();
    }
}

fn blob(lo: usize, hi: usize) -> Vec<u8> {
    (0..64).map(|i| (lo..hi).contains(&(i % 4)) as u8).collect()
}

#[test]
fn eval_of_identical_sets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases = [("a", blob(0, 2)), ("b", blob(1, 3)), ("c", blob(0, 3))];
    let gt: Vec<_> = cases.iter().map(|(n, m)| (format!("{n}_label"), m.clone())).collect();
    let pred: Vec<_> = cases.iter().map(|(n, m)| (format!("{n}_mask"), m.clone())).collect();
    write_masks(&d.join("gt"), &gt.iter().map(|(n, m)| (n.as_str(), m.clone())).collect::<Vec<_>>());
    write_masks(&d.join("pred"), &pred.iter().map(|(n, m)| (n.as_str(), m.clone())).collect::<Vec<_>>());
    let out = d.join("ev");
    let (pred_dir, gt_dir) = (d.join("pred"), d.join("gt"));
    let args = ["--out", s(&out), "eval", "--pred", s(&pred_dir), "--gt", s(&gt_dir), "--compare", s(&pred_dir)];
    assert_eq!(code(&args), 0);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    for line in csv.lines().skip(1).take(3) {
        assert!(line.ends_with(",1,0,0"), "{line}");
    }
    let tt = fs::read_to_string(out.join("ttest.csv")).unwrap();
    let rows: Vec<_> = tt.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",1")), "{tt}");
    assert!(fs::read_to_string(out.join("metrics.toml")).unwrap().contains("[aggregate.dice]"));
}

#[test]
fn eval_without_matches_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_masks(&d.join("gt"), &[("x_label", blob(0, 2))]);
    write_masks(&d.join("pred"), &[("y_mask", blob(0, 2))]);
    let out = cpseg(&["--out", s(&d.join("ev")), "eval", "--pred", s(&d.join("pred")), "--gt", s(&d.join("gt"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("skipping y") && err.contains("skipping x"), "{err}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--out", s(d), "bogus"]), 1);
    assert_eq!(code(&["--out", s(d), "train"]), 1);
    fs::write(d.join("bad.toml"), "[train]\ntotal_iters = 0\n").unwrap();
    assert_eq!(code(&["--config", s(&d.join("bad.toml")), "--out", s(d), "phantom"]), 1);
    assert_eq!(code(&["--out", s(d), "train", "--data", s(&d.join("missing"))]), 2);
    assert_eq!(code(&["--out", s(d), "infer", "--checkpoint", s(&d.join("none.ckpt")), "x.nii"]), 2);
    assert_eq!(code(&["--out", s(&d.join("g")), "gradcheck", "--inject-fault", "conv3d"]), 3);
}
