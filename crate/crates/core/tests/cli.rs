use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn crds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crds")).args(args).output().unwrap()
}

fn summary(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stdout);
    let last = text
        .lines()
        .last()
        .unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&o.stderr)));
    serde_json::from_str(last).unwrap()
}

fn ok(args: &[&str]) -> Value {
    let o = crds(args);
    let v = summary(&o);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {v}");
    assert_eq!(v["ok"], true);
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(crds(&["--help"]).status.code(), Some(0));
    assert_eq!(crds(&["--version"]).status.code(), Some(0));
    assert_eq!(crds(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two_with_json() {
    let o = crds(&["codec", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(summary(&o)["ok"], false);

    let dir = tempfile::tempdir().unwrap();
    let o = crds(&["codec", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let v = summary(&o);
    assert!(v["error"].as_str().unwrap().contains("--input"));

    let o = crds(&[
        "codec",
        "--out",
        s(dir.path()),
        "--input",
        s(&dir.path().join("missing.craw")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let v = ok(&[
        "make-dataset",
        "--out",
        s(&data),
        "--clips",
        "2",
        "--frames",
        "4",
        "--height",
        "32",
        "--width",
        "32",
        "--seed",
        "3",
    ]);
    assert_eq!(v["clips"], 2);
    assert!(data.join("manifest.json").exists());
    assert!(data.join("cli_config.json").exists());

    let gt = data.join("gt").join("clip000.craw");
    let v = ok(&["codec", "--input", s(&gt), "--out", s(&d.join("codec")), "--qp", "32"]);
    assert_eq!(v["frames"], 4);
    assert!(v["psnr"].as_f64().unwrap() > 20.0);

    let v = ok(&[
        "noise-stats",
        "--meta",
        s(&d.join("codec/meta.json")),
        "--out",
        s(&d.join("noise")),
    ]);
    assert!(v["count"].as_u64().unwrap() > 0);
    assert!(d.join("noise/noise_histogram.png").exists());

    let v = ok(&[
        "pretrain",
        "--dataset",
        s(&data),
        "--out",
        s(&d.join("pre")),
        "--iters",
        "3",
        "--patches-per-clip",
        "4",
    ]);
    assert!(v["eval_loss"].as_f64().unwrap().is_finite());

    let v = ok(&[
        "train",
        "--dataset",
        s(&data),
        "--ldrae",
        s(&d.join("pre/checkpoint")),
        "--out",
        s(&d.join("run")),
        "--iters",
        "3",
    ]);
    assert_eq!(v["iterations"], 3);
    let ckpt = d.join("run/checkpoint");
    assert!(d.join("run/loss_trace.csv").exists());

    let v = ok(&[
        "eval",
        "--dataset",
        s(&data),
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&d.join("eval")),
    ]);
    assert_eq!(v["stage_psnr"].as_array().unwrap().len(), 5);
    assert!(d.join("eval/metrics.csv").exists());

    let lq = data.join("lq").join("clip000.craw");
    let v = ok(&["enhance", "--input", s(&lq), "--gt", s(&gt), "--out", s(&d.join("enh"))]);
    assert_eq!(v["delta_psnr"], 0.0);
    assert!(d.join("enh/enhanced.craw").exists());

    let v = ok(&[
        "inspect-mv",
        "--clip",
        s(&gt),
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&d.join("mv")),
        "--frame",
        "2",
    ]);
    assert_eq!(v["reference"], 1);
    assert!(d.join("mv/mv_compare.png").exists());
    assert!(d.join("mv/residual_compare.png").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.json");
    std::fs::write(
        &cfg,
        r#"{"clips": 1, "frames": 2, "height": 16, "width": 16, "qp": 30}"#,
    )
    .unwrap();
    let v = ok(&[
        "make-dataset",
        "--config",
        s(&cfg),
        "--qp",
        "41",
        "--out",
        s(&d.join("ds")),
    ]);
    assert_eq!(v["clips"], 1);
    assert_eq!(v["qp"], 41);
}

fn save(clip: &crds_core::media_io::RawClip, path: &Path) {
    crds_core::media_io::save_clip(clip, path).unwrap();
}

#[test]
fn low_qp_is_near_lossless() {
    use crds_core::media_io::{Colorspace, Fps, RawClip};
    let dir = tempfile::tempdir().unwrap();
    let (h, w) = (32, 32);
    let frames = (0..3)
        .map(|t| (0..h * w).map(|p| (60 + (p / w) * 3 + (p % w) * 2 + t) as u8).collect())
        .collect();
    let clip = RawClip::new(frames, h, w, Colorspace::Gray, Fps::default()).unwrap();
    let input = dir.path().join("smooth.craw");
    save(&clip, &input);
    let v = ok(&[
        "codec",
        "--input",
        s(&input),
        "--qp",
        "4",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert!(v["psnr"].as_f64().unwrap() > 45.0, "{v}");
}

#[test]
fn datasets_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let make = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "make-dataset",
            "--out",
            s(&out),
            "--clips",
            "3",
            "--frames",
            "3",
            "--height",
            "16",
            "--width",
            "16",
            "--seed",
            "7",
        ]);
        out
    };
    let (a, b) = (make("a"), make("b"));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let n = manifest["clips"].as_array().unwrap().len();
    assert_eq!(n, 3);
    for sub in ["gt", "lq"] {
        let mut files: Vec<_> = std::fs::read_dir(a.join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        files.sort();
        assert_eq!(files.len(), n);
        for f in files {
            assert_eq!(
                std::fs::read(a.join(sub).join(&f)).unwrap(),
                std::fs::read(b.join(sub).join(&f)).unwrap()
            );
        }
    }
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn static_clip_has_no_motion_angle() {
    let dir = tempfile::tempdir().unwrap();
    let clip = crds_core::synth::global_shift_clip(32, 32, 3, (0, 0), 1);
    let input = dir.path().join("static.craw");
    save(&clip, &input);
    let out = dir.path().join("mv");
    let v = ok(&["inspect-mv", "--clip", s(&input), "--qp", "27", "--out", s(&out)]);
    assert_eq!(v["codec_mean"], serde_json::json!([0.0, 0.0]));
    assert!(v["angular_error_deg"].is_null());
    for f in [
        "mv_compare.png",
        "mv_codec.png",
        "mv_muna.png",
        "residual_codec.png",
        "residual_latent.png",
        "residual_compare.png",
    ] {
        assert!(std::fs::metadata(out.join(f)).unwrap().len() > 0, "{f}");
    }
}
