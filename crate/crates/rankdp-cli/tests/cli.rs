//! Binary-level behaviour: exit codes, error messages, the zero-noise
//! budget sentinel, and sidecar consistency.

use std::path::{Path, PathBuf};
use std::process::Output;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rankdp")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn rankdp")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "rankdp-cli-{}-{}",
        tag,
        std::process::id()
    ));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn setup_gallery(dir: &Path) {
    let out = run_in(
        dir,
        &[
            "gen-gallery",
            "--out",
            "gallery",
            "--side",
            "32",
            "--identities",
            "8",
            "--seed",
            "5",
        ],
    );
    assert!(out.status.success());
    std::fs::write(
        dir.join("config.txt"),
        "manifest=gallery/manifest.txt\noutput_dir=out\nside=32\nm_f=3\nmethod=rdp_na\n\
         epsilon0=0.5\np=0.02\nseed=7\nrepeats=3\nk_active=48\ntau_w=0.3\n",
    )
    .unwrap();
}

#[test]
fn missing_manifest_exits_2_and_names_the_path() {
    let dir = workdir("missing");
    std::fs::write(
        dir.join("config.txt"),
        "manifest=nowhere/missing.txt\nside=32\nm_f=3\n",
    )
    .unwrap();
    let out = run_in(&dir, &["calibrate", "--config", "config.txt"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("missing.txt"),
        "stderr should name the path: {}",
        err
    );
}

#[test]
fn bad_config_exits_2() {
    let dir = workdir("badcfg");
    std::fs::write(dir.join("config.txt"), "side=10\n").unwrap();
    let out = run_in(&dir, &["calibrate", "--config", "config.txt"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run_in(&dir, &["evaluate", "--config", "does-not-exist.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sanitize_without_bundle_exits_2() {
    let dir = workdir("nobundle");
    setup_gallery(&dir);
    // no calibrate step
    let out = run_in(
        &dir,
        &[
            "sanitize",
            "--config",
            "config.txt",
            "--image",
            "gallery/subject_00.pgm",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bundle"), "stderr: {}", err);
}

#[test]
fn infinite_budget_sentinel_is_identity() {
    let dir = workdir("sentinel");
    setup_gallery(&dir);
    let out = run_in(
        &dir,
        &[
            "calibrate",
            "--config",
            "config.txt",
            "--set",
            "epsilon0=inf",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run_in(
        &dir,
        &[
            "sanitize",
            "--config",
            "config.txt",
            "--set",
            "epsilon0=inf",
            "--image",
            "gallery/subject_01.pgm",
            "--out",
            "out/clean.pgm",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // zero scales: the output is the clamp-rounded input, and the input was
    // already an 8-bit file, so the raster must match byte for byte
    let src = std::fs::read(dir.join("gallery/subject_01.pgm")).unwrap();
    let dst = std::fs::read(dir.join("out/clean.pgm")).unwrap();
    assert_eq!(src, dst);
}

#[test]
fn sidecar_features_match_reprojection() {
    let dir = workdir("sidecar");
    setup_gallery(&dir);
    assert!(run_in(&dir, &["calibrate", "--config", "config.txt"])
        .status
        .success());
    assert!(run_in(
        &dir,
        &[
            "sanitize",
            "--config",
            "config.txt",
            "--image",
            "gallery/subject_00.pgm",
            "--out",
            "out/s.pgm",
        ],
    )
    .status
    .success());
    // reproject the written image against the stored basis
    let basis = rankdp_core::load_basis(&dir.join("out/basis.bin")).unwrap();
    let noisy = rankdp_core::load_image(&dir.join("out/s.pgm")).unwrap();
    let reproj = rankdp_core::project(&basis, &noisy).unwrap();
    let meta = std::fs::read_to_string(dir.join("out/s.pgm.meta.txt")).unwrap();
    let mut stored = Vec::new();
    for line in meta.lines() {
        if let Some(rest) = line.strip_prefix("feature_") {
            let (_, v) = rest.split_once(' ').unwrap();
            stored.push(v.parse::<f64>().unwrap());
        }
    }
    assert_eq!(stored.len(), reproj.len());
    for (a, b) in stored.iter().zip(&reproj.0) {
        assert!((a - b).abs() < 1e-9, "sidecar {} vs reprojection {}", a, b);
    }
}

#[test]
fn attack_control_row_is_zero() {
    let dir = workdir("attack");
    setup_gallery(&dir);
    assert!(run_in(&dir, &["calibrate", "--config", "config.txt"])
        .status
        .success());
    let out = run_in(&dir, &["attack", "--config", "config.txt"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.join("out/attack_fnr.csv")).unwrap();
    let mut control_lines = csv.lines().filter(|l| l.starts_with("control,"));
    assert!(control_lines.all(|l| l.contains(",0.000000,")));
    assert!(csv.lines().any(|l| l.starts_with("paper,")));
}

#[test]
fn selftest_passes() {
    let dir = workdir("selftest");
    let out = run_in(&dir, &["selftest"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all checks passed"));
}
