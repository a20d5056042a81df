use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blockveil(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockveil"))
        .current_dir(dir)
        .env_remove("BLOCKVEIL_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = blockveil(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn compile_writes_pattern_listing_and_cost() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["compile", "sample:modexp", "--out-dir", "o"]);
    let pattern = read(dir.path().join("o/pattern.txt"));
    assert_eq!(pattern, "c1-c1-c1-c1-c1-ld-c1-c2-c1-c1-st-sfx\n");
    assert!(read(dir.path().join("o/listing.txt")).starts_with("; variant V-Ciphertext"));
    assert!(read(dir.path().join("o/cost.txt")).contains("search brute cost="));
}

#[test]
fn variant_one_has_no_pattern_stage() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["compile", "sample:modexp", "--variant", "I", "--out-dir", "o"]);
    assert!(!dir.path().join("o/pattern.txt").exists());
    assert_eq!(read(dir.path().join("o/cost.txt")), "pattern none\n");
}

#[test]
fn unprotected_program_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.s"), "func f\n    ret\n").unwrap();
    let out = blockveil(dir.path(), &["compile", "p.s"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no protected roots"));
}

#[test]
fn run_prints_the_final_state() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run", "sample:modexp", "--set", "base=3", "--set", "exp=5", "--set", "modulus=7", "--trace", "t.txt"];
    let out = ok(dir.path(), &args);
    // 3^5 mod 7 = 243 mod 7 = 5.
    assert!(out.contains("global result 0500000000000000"), "{out}");
    assert!(read(dir.path().join("t.txt")).starts_with("block "));
}

#[test]
fn zero_repetitions_give_empty_metrics() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["bench", "sample:matmul", "--repetitions", "0", "--report", "m.txt"]);
    assert_eq!(read(dir.path().join("m.txt")), "");
}

fn metric(line: &str, key: &str) -> f64 {
    line.split_whitespace().find_map(|kv| kv.strip_prefix(&format!("{key}="))).unwrap().parse().unwrap()
}

#[test]
fn bench_counts_cost_drivers() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["bench", "sample:modexp", "--repetitions", "3", "--report", "m.txt"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 5);
    let (one, three) = (lines[0], lines[2]);
    assert!(one.starts_with("variant=I ") && three.starts_with("variant=III "));
    assert!(metric(three, "dummy_entries") < metric(one, "dummy_entries"));
    assert!(metric(lines[4], "data_touches") >= metric(lines[3], "data_touches"));
    assert_eq!(read(dir.path().join("m.txt")), out);
}

#[test]
fn identical_manifests_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "program = \"sample:modexp\"\nvariant = \"II\"\nseed = 11\nexecutions = 200\n",
    )
    .unwrap();
    for tag in ["a", "b"] {
        let report = format!("{tag}.txt");
        let hist = format!("{tag}.csv");
        ok(dir.path(), &["attack", "--manifest", "run.toml", "--report", &report, "--histogram", &hist]);
    }
    assert_eq!(read(dir.path().join("a.txt")), read(dir.path().join("b.txt")));
    assert_eq!(read(dir.path().join("a.csv")), read(dir.path().join("b.csv")));
    let report = read(dir.path().join("a.txt"));
    assert!(report.contains("latency success"), "{report}");
    assert!(report.contains("count failure"));
}

#[test]
fn attack_on_the_ciphertext_variant_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["attack", "sample:modexp", "--executions", "200", "--report", "r.txt"]);
    assert!(out.contains("no attack succeeded"), "{out}");
    assert!(read(dir.path().join("r.txt")).contains("succeeded none"));
}

#[test]
fn classify_partitions_opcodes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ok(dir.path(), &["classify", "--samples", "20000", "--out", "c.txt"]).starts_with("2 classes"));
    assert!(read(dir.path().join("c.txt")).contains("class 1: div"));
    assert!(ok(dir.path(), &["classify", "--opcodes", "mov", "--samples", "100", "--out", "one.txt"]).starts_with("1 classes"));
    fs::write(
        dir.path().join("m.toml"),
        "[overrides.imul]\nmean = 200.0\nsigma = 40.0\n",
    )
    .unwrap();
    let three = ok(dir.path(), &["classify", "--model", "m.toml", "--samples", "20000", "--out", "three.txt"]);
    assert!(three.starts_with("3 classes"), "{three}");
}
