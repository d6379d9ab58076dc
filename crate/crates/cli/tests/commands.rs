mod common;

use common::*;
use nlstab::exit;
use tempfile::tempdir;

#[test]
fn analyze_reports_every_section() {
    let dir = tempdir().unwrap();
    write_config(dir.path(), "b.cfg", BROCKETT);
    let run = nlstab(dir.path(), &["analyze", "b.cfg", "--report", "r.json"]);
    assert_eq!(run.code, exit::OK, "{}", run.stderr);
    let r = read_report(&dir.path().join("r.json"));
    for key in ["linearization", "spectrum_plus", "hautus", "rank", "brockett", "meta"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    assert!(r["meta"]["timestamp"].is_u64());
    assert_eq!(
        r["linearization"]["A"],
        serde_json::json!([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    );
    assert_eq!(
        r["linearization"]["B"],
        serde_json::json!([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    );
    assert_eq!(r["rank"]["rank"], 2);

    // without --report the tree goes to stdout
    let run = nlstab(dir.path(), &["analyze", "b.cfg"]);
    let r: serde_json::Value = serde_json::from_str(&run.stdout).unwrap();
    assert_eq!(r["brockett"]["verdict"], "violation");
}

#[test]
fn report_keys_are_sorted() {
    let dir = tempdir().unwrap();
    write_config(dir.path(), "c.cfg", CUBIC);
    nlstab(dir.path(), &["analyze", "c.cfg", "--report", "r.json"]);
    let text = std::fs::read_to_string(dir.path().join("r.json")).unwrap();
    let top: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("  \"") && !l.starts_with("   "))
        .map(|l| l.trim().split('"').nth(1).unwrap())
        .collect();
    let mut sorted = top.clone();
    sorted.sort();
    assert_eq!(top, sorted);
}

#[test]
fn section_exit_codes() {
    let dir = tempdir().unwrap();
    for (name, text, code) in [
        ("c.cfg", CUBIC, exit::OK),
        ("s.cfg", STATE_ONLY, exit::OK),
        ("b.cfg", BROCKETT, exit::OBSTRUCTION),
    ] {
        write_config(dir.path(), name, text);
        let run = nlstab(dir.path(), &["section", name, "--out", "t.csv", "--report", "r.json"]);
        assert_eq!(run.code, code, "{name}: {}", run.stderr);
        let (header, rows) = read_rows(&dir.path().join("t.csv"));
        assert_eq!(header.last().unwrap(), "residual");
        assert!(rows.iter().all(|r| *r.last().unwrap() <= 1e-8));
        let r = read_report(&dir.path().join("r.json"));
        assert_eq!(r["section"]["complete"], code == exit::OK);
        assert_eq!(
            r["section"]["unsolved"].as_u64().unwrap() as usize + rows.len(),
            r["section"]["nodes"].as_u64().unwrap() as usize
        );
    }
}

#[test]
fn synthesize_exit_codes() {
    let dir = tempdir().unwrap();
    for (name, text, code) in [
        ("c.cfg", CUBIC, exit::OK),
        ("e.cfg", EXAMPLE, exit::OK),
        ("s.cfg", STATE_ONLY, exit::OBSTRUCTION),
        ("b.cfg", BROCKETT, exit::OBSTRUCTION),
    ] {
        write_config(dir.path(), name, text);
        let run = nlstab(
            dir.path(),
            &["synthesize", name, "--out", "t.csv", "--report", "r.json"],
        );
        assert_eq!(run.code, code, "{name}: {}", run.stderr);
    }
    // f1 does not depend on u, so the default target -x is out of reach
    write_config(
        dir.path(),
        "d.cfg",
        "system = example_2d\n[solver]\nradius = 0.2\ngrid = 5\n",
    );
    let run = nlstab(dir.path(), &["synthesize", "d.cfg", "--out", "t.csv"]);
    assert_eq!(run.code, exit::OBSTRUCTION);
}

#[test]
fn unstable_target_is_an_obstruction() {
    let dir = tempdir().unwrap();
    write_config(
        dir.path(),
        "u.cfg",
        "system = cubic_scalar\n[target]\ng1 = x1\n[solver]\ngrid = 11\n",
    );
    let run = nlstab(
        dir.path(),
        &["synthesize", "u.cfg", "--out", "t.csv", "--report", "r.json"],
    );
    assert_eq!(run.code, exit::OBSTRUCTION);
    let r = read_report(&dir.path().join("r.json"));
    assert_eq!(r["stability"]["classification"], "diverged");
    assert_eq!(r["synthesis"]["exponential_condition"], false);
}

#[test]
fn state_only_symbol_table_is_written() {
    let dir = tempdir().unwrap();
    write_config(dir.path(), "s.cfg", STATE_ONLY);
    let run = nlstab(
        dir.path(),
        &[
            "synthesize",
            "s.cfg",
            "--out",
            "f.csv",
            "--symbol-out",
            "h.csv",
            "--report",
            "r.json",
        ],
    );
    assert_eq!(run.code, exit::OBSTRUCTION);
    let (header, rows) = read_rows(&dir.path().join("h.csv"));
    assert_eq!(header, vec!["x1", "hx1", "hu1", "residual"]);
    assert_eq!(rows.len(), 21);
    for r in &rows {
        assert!((r[1] + r[0]).abs() <= 1e-10);
    }
    // only the origin has a feedback value
    let (_, rows) = read_rows(&dir.path().join("f.csv"));
    assert_eq!(rows, vec![vec![0.0, 0.0, 0.0]]);
    let r = read_report(&dir.path().join("r.json"));
    assert_eq!(r["synthesis"]["composition_symbol"]["complete"], true);
}

#[test]
fn simulate_exit_codes() {
    let dir = tempdir().unwrap();
    write_config(dir.path(), "c.cfg", CUBIC);
    write_config(dir.path(), "s.cfg", STATE_ONLY);
    write_config(dir.path(), "blow.cfg", "n = 1\nm = 0\nf1 = x1^2\n");
    write_config(dir.path(), "bad.cfg", "system = cubic_scalar\n[solver]\ngrid = 4\n");

    let run = nlstab(dir.path(), &["simulate", "c.cfg", "--x0", "0.3", "--out", "t.csv"]);
    assert_eq!(run.code, exit::OK, "{}", run.stderr);
    let (header, rows) = read_rows(&dir.path().join("t.csv"));
    assert_eq!(header, vec!["t", "x1"]);
    assert_eq!(rows.len(), 200);

    assert_eq!(nlstab(dir.path(), &["simulate", "c.cfg"]).code, exit::USAGE);
    assert_eq!(
        nlstab(dir.path(), &["simulate", "c.cfg", "--x0", "0.1,0.2"]).code,
        exit::USAGE
    );
    assert_eq!(
        nlstab(dir.path(), &["simulate", "c.cfg", "--x0", "abc"]).code,
        exit::USAGE
    );
    assert_eq!(
        nlstab(dir.path(), &["simulate", "bad.cfg", "--x0", "0.1"]).code,
        exit::USAGE
    );
    assert_eq!(
        nlstab(dir.path(), &["simulate", "missing.cfg", "--x0", "0.1"]).code,
        exit::USAGE
    );
    assert_eq!(
        nlstab(dir.path(), &["simulate", "s.cfg", "--x0", "0.1"]).code,
        exit::OBSTRUCTION
    );
    // x' = x^2 blows up at t = 1
    assert_eq!(
        nlstab(dir.path(), &["simulate", "blow.cfg", "--x0", "1", "--t-final", "2"]).code,
        exit::NUMERIC
    );
    // negative entries are values, not flags
    let run = nlstab(dir.path(), &["simulate", "c.cfg", "--x0", "-0.2", "--t-final", "1"]);
    assert_eq!(run.code, exit::OK, "{}", run.stderr);
    assert!(run
        .stdout
        .starts_with("t,x1\n0.0000000000000000e0,-2.0000000000000001e-1\n"));
}

#[test]
fn usage_errors() {
    let dir = tempdir().unwrap();
    assert_eq!(nlstab(dir.path(), &[]).code, exit::USAGE);
    assert_eq!(nlstab(dir.path(), &["frobnicate"]).code, exit::USAGE);
    assert_eq!(nlstab(dir.path(), &["analyze"]).code, exit::USAGE);
    write_config(dir.path(), "e.cfg", "system = cubic_scalar\n[solver]\ngrid = 10\n");
    let run = nlstab(dir.path(), &["analyze", "e.cfg"]);
    assert_eq!(run.code, exit::USAGE);
    assert!(run.stderr.contains("line 3"), "{}", run.stderr);
}
