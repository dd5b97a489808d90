mod common;

use std::process::Command;

use biofuse_core::config::KEYS;
use biofuse_core::imageio::{load_pgm, write_pgm, PgmEncoding};
use biofuse_core::matching::{Metric, TemplateStore};
use biofuse_core::{GrayImage, Modality};
use common::{clean_env, stderr, stdout, Workspace, BIN};

fn biofuse(args: &[&str]) -> std::process::Output {
    clean_env(Command::new(BIN).args(args)).output().unwrap()
}

fn error_json(out: &std::process::Output) -> serde_json::Value {
    let line = stderr(out).lines().last().unwrap_or_default().to_string();
    serde_json::from_str(&line).unwrap_or_else(|_| panic!("stderr is not a JSON line: {line:?}"))
}

#[test]
fn equalize_writes_same_size_image() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    let px = (0..12 * 10).map(|i| (i % 50) as u16 + 20).collect();
    write_pgm(&GrayImage::new(12, 10, 256, px).unwrap(), &input, PgmEncoding::Ascii).unwrap();
    let output = dir.path().join("out.pgm");
    let out = biofuse(&["equalize", input.to_str().unwrap(), output.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let img = load_pgm(&output).unwrap();
    assert_eq!((img.width(), img.height()), (12, 10));
    assert_eq!(img.pixels().iter().max(), Some(&255));
}

#[test]
fn equalize_constant_image_copies_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("flat.pgm");
    write_pgm(&GrayImage::filled(5, 4, 256, 77).unwrap(), &input, PgmEncoding::Ascii).unwrap();
    let output = dir.path().join("out.pgm");
    let out = biofuse(&["equalize", input.to_str().unwrap(), output.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&output).unwrap());
}

#[test]
fn missing_input_names_path() {
    let out = biofuse(&["equalize", "/nonexistent/face.pgm", "/tmp/never.pgm"]);
    assert_eq!(out.status.code(), Some(4));
    let err = error_json(&out);
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("/nonexistent/face.pgm"));
}

#[test]
fn corrupt_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.pgm");
    std::fs::write(&input, b"P5\n4 4\n255\nxx").unwrap();
    let out = biofuse(&["equalize", input.to_str().unwrap(), dir.path().join("o.pgm").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "data");
}

#[test]
fn unknown_key_is_a_config_error_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("out.pgm");
    let out = biofuse(&["--set", "bank.scale=3", "equalize", "/nonexistent.pgm", output.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("bank.scale"));

    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[bank]\nscales = 3\ntypo = 1\n").unwrap();
    let out = biofuse(&["--config", cfg.to_str().unwrap(), "evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());

    let out = clean_env(Command::new(BIN).args(["evaluate"]).env("BIOFUSE_BANK_SCALEZ", "3")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn every_subcommand_help_lists_all_keys() {
    for sub in ["equalize", "gabor-dump", "ingest", "train", "enroll", "identify", "verify", "evaluate"] {
        let out = biofuse(&[sub, "--help"]);
        assert!(out.status.success());
        let text = stdout(&out);
        for k in KEYS {
            assert!(text.contains(k.key), "{sub} --help misses {}", k.key);
        }
        assert!(text.contains("1.4142135623730951"), "{sub} --help misses defaults");
    }
}

#[test]
fn gabor_dump_writes_one_file_per_filter() {
    let ws = Workspace::new();
    let out_dir = ws.path("dump/nested");
    let input = ws.path("faces/s1/1.pgm");
    let out = ws.run(
        &["gabor-dump", input.to_str().unwrap(), out_dir.to_str().unwrap()],
        &["bank.scales=5", "bank.orientations=8", "bank.kernel_radius_cap=15", "image.width=46", "image.height=56"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let mut names: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut want: Vec<String> = (0..5).flat_map(|s| (0..8).map(move |o| format!("s{s}_o{o}.pgm"))).collect();
    want.sort();
    assert_eq!(names, want);
    let img = load_pgm(out_dir.join("s0_o0.pgm")).unwrap();
    assert_eq!((img.width(), img.height(), img.levels()), (46, 56, 256));
    assert_eq!(img.pixels().iter().max(), Some(&255));
    assert_eq!(img.pixels().iter().min(), Some(&0));
}

#[test]
fn ingest_writes_manifests() {
    let ws = Workspace::new();
    let out = ws.run(&["ingest"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let face = std::fs::read_to_string(ws.path("out/face.manifest.json")).unwrap();
    let m = biofuse_core::imageio::DatasetManifest::from_json(&face).unwrap();
    assert_eq!((m.subjects.len(), m.sample_count()), (6, 24));
    assert!(ws.path("out/fingerprint.manifest.json").exists());
}

#[test]
fn train_is_reproducible() {
    let ws = Workspace::new();
    let out = ws.run(&["train"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let names = ["face.pca", "fingerprint.pca", "face.ws", "fingerprint.ws", "bundle.json"];
    let first: Vec<Vec<u8>> = names.iter().map(|n| std::fs::read(ws.path("models").join(n)).unwrap()).collect();
    let out = ws.run(&["--threads", "2", "train"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    for (n, bytes) in names.iter().zip(&first) {
        assert_eq!(&std::fs::read(ws.path("models").join(n)).unwrap(), bytes, "{n} changed");
    }
}

#[test]
fn train_count_too_large_lists_subjects() {
    let ws = Workspace::new();
    let out = ws.run(&["train"], &["split.train_count=5"]);
    assert_eq!(out.status.code(), Some(3));
    let msg = error_json(&out)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("face:s1") && msg.contains("fingerprint:u05"), "{msg}");
}

#[test]
fn tampered_model_is_rejected() {
    let ws = Workspace::new();
    assert!(ws.run(&["train"], &[]).status.success());
    let path = ws.path("models/face.ws");
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let face = ws.path("faces/s1/1.pgm");
    let out = ws.run(
        &["enroll", "--subject", "a", "--store", ws.path("s.bfts").to_str().unwrap(), "--face", face.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("digest"));
}

#[test]
fn enroll_identify_verify_round_trip() {
    let ws = Workspace::new();
    assert!(ws.run(&["train"], &[]).status.success());
    let store = ws.path("fused.bfts");
    let store = store.to_str().unwrap();
    let pairs = [("alice", "faces/s1/1.pgm", "prints/u01_1.pgm"), ("bob", "faces/s2/1.pgm", "prints/u02_1.pgm")];
    for (who, f, p) in pairs {
        let (f, p) = (ws.path(f), ws.path(p));
        let out = ws.run(
            &["enroll", "--subject", who, "--store", store, "--face", f.to_str().unwrap(), "--fingerprint", p.to_str().unwrap()],
            &[],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let (f, p) = (ws.path(pairs[1].1), ws.path(pairs[1].2));
    let probe = ["--store", store, "--face", f.to_str().unwrap(), "--fingerprint", p.to_str().unwrap()];

    let out = ws.run(&[&["identify"][..], &probe].concat(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("subject bob"));
    assert_eq!(lines.next(), Some("1\tbob\t0.0"));

    let out = ws.run(&[&["verify", "--subject", "bob", "--threshold", "0"][..], &probe].concat(), &[]);
    assert_eq!(stdout(&out).trim(), "accept 0.0");
    let out = ws.run(&[&["verify", "--subject", "alice", "--threshold", "0"][..], &probe].concat(), &[]);
    assert!(stdout(&out).starts_with("reject"));
    let out = ws.run(&[&["verify", "--subject", "carol", "--threshold", "1"][..], &probe].concat(), &[]);
    assert_eq!(out.status.code(), Some(3));

    // a face-only probe does not fit a fused store
    let out = ws.run(&["identify", "--store", store, "--face", f.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unimodal_mahalanobis_store() {
    let ws = Workspace::new();
    assert!(ws.run(&["train"], &[]).status.success());
    let store = ws.path("face.bfts");
    let face = ws.path("faces/s3/2.pgm");
    let args = ["--store", store.to_str().unwrap(), "--face", face.to_str().unwrap()];
    let out = ws.run(&[&["enroll", "--subject", "s3"][..], &args].concat(), &["match.metric=mahalanobis"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = ws.run(&[&["identify"][..], &args].concat(), &[]);
    assert!(stdout(&out).starts_with("subject s3\n1\ts3\t0.0"), "{}", stdout(&out));
}

#[test]
fn identify_against_empty_store_fails() {
    let ws = Workspace::new();
    assert!(ws.run(&["train"], &[]).status.success());
    let store = ws.path("empty.bfts");
    let bundle = biofuse_core::pipeline::ModelBundle::load(&ws.path("models"), 0.01).unwrap();
    let k = bundle.face_pca.components();
    TemplateStore::new(Modality::Face, k, Metric::Euclidean).unwrap().save(&store).unwrap();
    let face = ws.path("faces/s1/1.pgm");
    let out = ws.run(&["identify", "--store", store.to_str().unwrap(), "--face", face.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "data");
}

#[test]
fn evaluate_reports_three_rates_with_digest() {
    let ws = Workspace::new();
    let out = ws.run(&["evaluate"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = biofuse_core::eval::EvalReport::from_json(&std::fs::read_to_string(ws.path("out/report.json")).unwrap()).unwrap();
    assert!(report.face_rate.is_some() && report.fingerprint_rate.is_some() && report.fused_rate.is_some());
    assert_eq!(report.probes, 12);
    let csv = std::fs::read_to_string(ws.path("out/report.csv")).unwrap();
    assert!(csv.contains(&report.config_digest));
    assert_eq!(biofuse_core::eval::EvalReport::from_csv(&csv).unwrap(), report);

    let out = ws.run(&["evaluate"], &["pairing.mode=shuffled", "pairing.seed=9"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let shuffled = biofuse_core::eval::EvalReport::from_json(&std::fs::read_to_string(ws.path("out/report.json")).unwrap()).unwrap();
    let out = ws.run(&["evaluate"], &["pairing.mode=shuffled", "pairing.seed=10"]);
    assert!(out.status.success());
    let reseeded = biofuse_core::eval::EvalReport::from_json(&std::fs::read_to_string(ws.path("out/report.json")).unwrap()).unwrap();
    assert_ne!(shuffled.config_digest, reseeded.config_digest);
    assert_ne!(report.config_digest, shuffled.config_digest);
}

#[test]
fn environment_overrides_file_and_flag_overrides_environment() {
    let ws = Workspace::new();
    let cfg = ws.path("c.toml");
    std::fs::write(&cfg, "[pca]\ncomponents = 2\n").unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(BIN);
        clean_env(&mut cmd);
        cmd.args(["--config", cfg.to_str().unwrap(), "evaluate"]);
        for s in ws.sets().iter().map(String::as_str).chain(extra.iter().copied()) {
            cmd.arg("--set").arg(s);
        }
        if let Some(v) = env {
            cmd.env("BIOFUSE_PCA_COMPONENTS", v);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        let json = std::fs::read_to_string(ws.path("out/report.json")).unwrap();
        biofuse_core::eval::EvalReport::from_json(&json).unwrap().components
    };
    assert_eq!(run(None, &[]), 2);
    assert_eq!(run(Some("3"), &[]), 3);
    assert_eq!(run(Some("3"), &["pca.components=4"]), 4);
}
