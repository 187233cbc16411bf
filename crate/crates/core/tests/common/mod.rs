#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sarcam::{FeatureBundle, Grid, Scalar, Stack};

use oracle::Img;

pub fn img<T: Scalar>(g: &Grid<T>) -> Img {
    assert_eq!(g.height(), g.width());
    Img::new(
        g.height(),
        g.as_slice().iter().map(|v| v.to_f64().unwrap()).collect(),
    )
}

pub fn imgs<T: Scalar>(s: &Stack<T>) -> Vec<Img> {
    s.iter().map(img).collect()
}

pub fn wide<T: Scalar>(g: &Grid<T>) -> Vec<f64> {
    g.as_slice().iter().map(|v| v.to_f64().unwrap()).collect()
}

/// Oracle MS-CAM on a bundle.
pub fn oracle_ms_cam<T: Scalar>(b: &FeatureBundle<T>, m: usize) -> Img {
    oracle::ms_cam(&img(&b.image), &imgs(&b.features), &imgs(&b.grads), m)
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures_dir().join(name)
}

pub fn sarcam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarcam"))
        .args(args)
        .env_remove("SARCAM_THREADS")
        .output()
        .expect("spawn sarcam")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Exit code plus a check that failures lead with the error line.
pub fn exit_code(o: &Output) -> i32 {
    let code = o.status.code().expect("exited normally");
    if code != 0 {
        let err = stderr(o);
        assert!(
            err.starts_with(&format!("ERROR:{code}:")),
            "stderr does not start with ERROR:{code}: {err}"
        );
    }
    code
}
