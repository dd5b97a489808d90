#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biofuse_core::imageio::{write_pgm, PgmEncoding};
use biofuse_core::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BIN: &str = env!("CARGO_BIN_EXE_biofuse");

/// Small working size and bank so the full pipeline runs in well under a
/// second per command in debug builds.
pub const SMALL: &[&str] = &[
    "image.width=24",
    "image.height=28",
    "bank.scales=2",
    "bank.orientations=4",
    "bank.kernel_radius_cap=5",
    "features.downsample=16",
];

/// One noisy image per (subject, sample): a fixed per-subject pattern plus
/// independent per-sample noise.
pub fn synthetic_images(subjects: usize, samples: usize, w: usize, h: usize, noise: f64, seed: u64) -> Vec<Vec<GrayImage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..subjects)
        .map(|_| {
            let base: Vec<f64> = (0..w * h).map(|_| rng.random_range(40.0..216.0)).collect();
            (0..samples)
                .map(|_| {
                    let px = base
                        .iter()
                        .map(|b| (b + rng.random_range(-noise..=noise)).round().clamp(0.0, 255.0) as u16)
                        .collect();
                    GrayImage::new(w, h, 256, px).unwrap()
                })
                .collect()
        })
        .collect()
}

/// `root/s{i}/{j}.pgm`, numbered from 1.
pub fn write_orl(root: &Path, images: &[Vec<GrayImage>]) {
    for (i, subject) in images.iter().enumerate() {
        let dir = root.join(format!("s{}", i + 1));
        std::fs::create_dir_all(&dir).unwrap();
        for (j, img) in subject.iter().enumerate() {
            write_pgm(img, dir.join(format!("{}.pgm", j + 1)), PgmEncoding::Binary).unwrap();
        }
    }
}

/// `root/{id}_{j}.pgm`, numbered from 1.
pub fn write_flat(root: &Path, images: &[Vec<GrayImage>]) {
    std::fs::create_dir_all(root).unwrap();
    for (i, subject) in images.iter().enumerate() {
        for (j, img) in subject.iter().enumerate() {
            write_pgm(img, root.join(format!("u{:02}_{}.pgm", i + 1, j + 1)), PgmEncoding::Binary).unwrap();
        }
    }
}

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    /// Face set of 6 subjects x 4 samples and fingerprint set of 5 x 4.
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_orl(&dir.path().join("faces"), &synthetic_images(6, 4, 30, 36, 20.0, 1));
        write_flat(&dir.path().join("prints"), &synthetic_images(5, 4, 28, 28, 20.0, 2));
        Workspace { dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// `--set` arguments for the datasets, the small pipeline and the
    /// workspace output directories.
    pub fn sets(&self) -> Vec<String> {
        let mut s: Vec<String> = SMALL.iter().map(|s| s.to_string()).collect();
        s.push(format!("face.root={}", self.path("faces").display()));
        s.push(format!("fingerprint.root={}", self.path("prints").display()));
        s.push(format!("output.dir={}", self.path("out").display()));
        s.push(format!("model.dir={}", self.path("models").display()));
        s
    }

    pub fn run(&self, args: &[&str], extra_sets: &[&str]) -> Output {
        let mut cmd = Command::new(BIN);
        cmd.args(args);
        for s in self.sets().iter().map(String::as_str).chain(extra_sets.iter().copied()) {
            cmd.arg("--set").arg(s);
        }
        clean_env(&mut cmd).output().unwrap()
    }
}

/// Drops any `BIOFUSE_*` variables inherited from the test environment.
pub fn clean_env(cmd: &mut Command) -> &mut Command {
    for (k, _) in std::env::vars() {
        if k.starts_with("BIOFUSE_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}
