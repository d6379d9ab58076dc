#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub const CUBIC: &str = "system = cubic_scalar\n[solver]\nradius = 0.5\ngrid = 41\n";

pub const BROCKETT: &str = "[system]\nsystem = brockett_integrator\n[solver]\nradius = 0.5\ngrid = 9\n";

/// The slow mode needs a longer horizon than the default to reach the 1e-4 ratio.
pub const EXAMPLE: &str = "\
[system]
system = example_2d

[target]
g1 = x1^2 + x2^2 + x2
g2 = -2*x2 - x1/2

[solver]
radius = 0.2
grid = 15

[simulate]
t_final = 40
";

pub const STATE_ONLY: &str = "system = state_only\n";

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn nlstab(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_nlstab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

pub fn read_report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// The report with `meta.timestamp` removed, re-serialized.
pub fn without_timestamp(path: &Path) -> String {
    let mut v = read_report(path);
    v["meta"].as_object_mut().unwrap().remove("timestamp");
    serde_json::to_string_pretty(&v).unwrap()
}

/// Data rows of a CSV file as numbers.
pub fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|s| s.parse().unwrap()).collect())
        .collect();
    (header, rows)
}
