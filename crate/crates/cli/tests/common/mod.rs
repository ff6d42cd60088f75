#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lcc_core::ObservationSet;

pub fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn lcc(args: &[&str]) -> i32 {
    lcc_cli::main_with_args(std::iter::once("lcc").chain(args.iter().copied()))
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Feature columns `x1..xp` then `y`, with `render` applied to each feature.
pub fn write_csv_with(path: &Path, data: &ObservationSet, render: impl Fn(f64) -> String) {
    let mut out = String::new();
    for j in 1..=data.p() {
        write!(out, "x{j},").unwrap();
    }
    out.push_str("y\n");
    for i in 0..data.n() {
        for v in data.row(i) {
            out.push_str(&render(*v));
            out.push(',');
        }
        out.push_str(if data.labels()[i] { "1\n" } else { "0\n" });
    }
    std::fs::write(path, out).unwrap();
}

pub fn write_csv(path: &Path, data: &ObservationSet) {
    write_csv_with(path, data, lcc_cli::io::fmt17);
}

pub fn names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn count_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}
