#![allow(dead_code)]

use std::path::{Path, PathBuf};

use opcap::toy::{self, ToyPaths};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI in-process.
pub fn opcap(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("opcap").chain(args.iter().copied());
    let code = opcap::cli::run(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn toy_dataset(dir: &Path, n: usize, seed: u64) -> ToyPaths {
    toy::write_dataset(dir, &toy::generate(n, seed)).unwrap()
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// `--captions`, `--instances` and `--images` flags for a toy dataset.
pub fn dataset_args(t: &ToyPaths) -> Vec<&str> {
    vec![
        "--captions",
        s(&t.captions),
        "--instances",
        s(&t.instances),
        "--images",
        s(&t.images),
    ]
}
