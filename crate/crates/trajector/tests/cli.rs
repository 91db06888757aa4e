//! End-to-end tests of the command-line binary: exit codes, printed output,
//! and files produced by each subcommand.

use std::path::Path;
use std::process::{Command, Output};

use trajector::eval::{write_pgm, ImagePlane};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajector"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn trajector");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small-but-real settings shared by the pipeline tests below.
const FAST: &[&str] = &[
    "--epochs",
    "1",
    "--hidden",
    "8",
    "--layers",
    "1",
    "--heads",
    "2",
    "--max-len",
    "32",
    "--split",
    "0.6,0.0,0.4",
];

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = dir.path().join("tracks");
    let feat = dir.path().join("features");
    let run = dir.path().join("run");

    let mut args = vec!["synth", "--out", path_str(&tracks), "--n", "10", "--frames", "40"];
    args.extend_from_slice(FAST);
    let out = run_ok(&args);
    assert!(stdout(&out).contains("20 tracks"));
    assert!(tracks.join("manifest.csv").is_file());
    assert!(tracks.join("config.json").is_file());

    let manifest = tracks.join("manifest.csv");
    let mut args = vec![
        "features",
        "--manifest",
        path_str(&manifest),
        "--out",
        path_str(&feat),
    ];
    args.extend_from_slice(FAST);
    let out = run_ok(&args);
    assert!(stdout(&out).contains("extracted 20 tracks (0 skipped)"));
    for f in ["train_fe.csv", "train_hp.csv", "test_fe.csv", "test_hp.csv", "labels.csv"] {
        assert!(feat.join(f).is_file(), "missing {f}");
    }

    let mut args = vec!["train", "--features", path_str(&feat), "--out", path_str(&run)];
    args.extend_from_slice(FAST);
    let out = run_ok(&args);
    assert!(stdout(&out).contains("checkpoints written"));
    let ck_fe = run.join("checkpoint_fe.json");
    let ck_hp = run.join("checkpoint_hp.json");
    assert!(ck_fe.is_file() && ck_hp.is_file());

    let mut args = vec![
        "eval",
        "--features",
        path_str(&feat),
        "--checkpoint-fe",
        path_str(&ck_fe),
        "--checkpoint-hp",
        path_str(&ck_hp),
        "--out",
        path_str(&run),
    ];
    args.extend_from_slice(FAST);
    let out = run_ok(&args);
    let text = stdout(&out);
    assert!(text.contains("fused"), "missing fused summary line: {text}");
    for f in ["report_fe.json", "report_hp.json", "report_fused.json", "roc_fused.csv", "verdicts.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    // Predict one of the synthesized tracks against the trained checkpoints.
    let track_file = std::fs::read_dir(&tracks)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n.to_str().unwrap().starts_with("synth_")))
        .expect("a synthesized track file");
    let mut args = vec![
        "predict",
        "--track",
        path_str(&track_file),
        "--checkpoint-fe",
        path_str(&ck_fe),
        "--checkpoint-hp",
        path_str(&ck_hp),
    ];
    args.extend_from_slice(FAST);
    let out = run_ok(&args);
    let line = stdout(&out);
    assert!(line.contains("p_fe=") && line.contains("p_hp=") && line.contains("label="), "unexpected predict output: {line}");

    // Recurrence plots for a single track and for the whole manifest.
    let rp_dir = dir.path().join("rp_one");
    let out = run_ok(&["rp", "--track", path_str(&track_file), "--out", path_str(&rp_dir)]);
    assert!(stdout(&out).contains("wrote 2 recurrence plots"));
    let pgms = std::fs::read_dir(&rp_dir).unwrap().count();
    assert_eq!(pgms, 2);

    let rp_all = dir.path().join("rp_all");
    let out = run_ok(&["rp", "--manifest", path_str(&manifest), "--out", path_str(&rp_all)]);
    assert!(stdout(&out).contains("wrote 40 recurrence plots"));
    assert_eq!(std::fs::read_dir(&rp_all).unwrap().count(), 40);
}

#[test]
fn quality_reports_metrics_and_sentinels() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pgm");
    let b = dir.path().join("b.pgm");
    let pixels: Vec<f64> = (0..32 * 32).map(|i| ((i * 7) % 200) as f64).collect();
    let img_a = ImagePlane::new(32, 32, pixels.clone()).unwrap();
    let img_b = ImagePlane::new(32, 32, pixels.iter().map(|p| p + 16.0).collect()).unwrap();
    write_pgm(&a, &img_a).unwrap();
    write_pgm(&b, &img_b).unwrap();

    let out = run_ok(&["quality", path_str(&a), path_str(&a)]);
    let text = stdout(&out);
    assert!(text.contains("PSNR: inf dB"), "identical images must hit the PSNR sentinel: {text}");
    assert!(text.contains("SSIM: 1.000000"));
    assert!(text.contains("UQI: 1.000000"));

    let out = run_ok(&["quality", path_str(&a), path_str(&b)]);
    let text = stdout(&out);
    let expected = 10.0 * (65025.0f64 / 256.0).log10();
    assert!(text.contains(&format!("PSNR: {expected:.4} dB")), "offset-16 PSNR: {text}");
    for unsupported in ["IEF: n/a", "VIF: n/a", "RECO: n/a"] {
        assert!(text.contains(unsupported), "missing {unsupported}: {text}");
    }
}

#[test]
fn errors_exit_nonzero_with_message() {
    // Missing manifest file.
    let out = bin()
        .args(["features", "--manifest", "/nonexistent/manifest.csv", "--out", "/tmp/never"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // Invalid configuration: hidden not divisible by heads.
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "synth",
            "--out",
            path_str(&dir.path().join("x")),
            "--n",
            "1",
            "--hidden",
            "9",
            "--heads",
            "2",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // rp requires exactly one input source.
    let out = bin()
        .args(["rp", "--out", path_str(&dir.path().join("rp"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    std::fs::write(&cfg_path, r#"{"seed": 11, "epochs": 3}"#).unwrap();
    let tracks = dir.path().join("tracks");
    // --seed on the command line must beat the config file; the config file
    // must beat the default.
    run_ok(&[
        "synth",
        "--out",
        path_str(&tracks),
        "--n",
        "1",
        "--frames",
        "20",
        "--config",
        path_str(&cfg_path),
        "--seed",
        "99",
    ]);
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tracks.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 99);
    assert_eq!(echoed["epochs"], 3);
}
