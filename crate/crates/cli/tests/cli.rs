use std::path::Path;
use std::process::{Command, Output};

use aqf_core::AdaptiveFilter;

fn aqf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aqf")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_keys(path: &Path, keys: impl Iterator<Item = u64>) {
    std::fs::write(path, keys.flat_map(|k| k.to_le_bytes()).collect::<Vec<_>>()).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&aqf(&["--help"])), 0);
    assert_eq!(code(&aqf(&["--version"])), 0);
    assert_eq!(code(&aqf(&["trace", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&aqf(&["trace", "--bogus"])), 1);
    assert_eq!(code(&aqf(&["trace", "--count", "lots"])), 1);
    assert_eq!(code(&aqf(&[])), 1);
    let o = aqf(&["trace", "--qbits", "8", "--dist", "zipf:0.5:100"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let o = aqf(&["build", "--load", "1.5", "--qbits", "8"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn over_capacity_keys_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let keys = dir.path().join("keys.bin");
    write_keys(&keys, 0..300);
    let o = aqf(&["build", "--qbits", "8", "--rbits", "4", "--keys-file", keys.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    write_keys(&keys, 0..200);
    let o = aqf(&["build", "--qbits", "8", "--rbits", "4", "--keys-file", keys.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn build_and_merge_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, m) = (dir.path().join("a.aqf"), dir.path().join("b.aqf"), dir.path().join("m.aqf"));
    let ka = dir.path().join("a.bin");
    let kb = dir.path().join("b.bin");
    write_keys(&ka, 0..400);
    write_keys(&kb, 1000..1400);
    for (keys, out) in [(&ka, &a), (&kb, &b)] {
        let o = aqf(&[
            "build", "--qbits", "10", "--rbits", "6", "--seed", "3", "--keys-file",
            keys.to_str().unwrap(), "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = aqf(&["merge", a.to_str().unwrap(), b.to_str().unwrap(), "--out", m.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let merged = AdaptiveFilter::load(&m).unwrap();
    assert_eq!(merged.len(), 800);
    assert!((0..400).chain(1000..1400).all(|k| merged.may_contain(k)));

    std::fs::write(&b, b"not a filter").unwrap();
    let o = aqf(&["merge", a.to_str().unwrap(), b.to_str().unwrap(), "--out", m.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn trace_csv_is_deterministic_apart_from_timing() {
    let args = [
        "trace", "--qbits", "12", "--rbits", "6", "--count", "20000", "--dist", "zipf:1.5:50000",
        "--probe-sets", "2", "--probe-size", "5000",
    ];
    let strip = |o: Output| -> Vec<String> {
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
            .collect()
    };
    let a = strip(aqf(&args));
    let b = strip(aqf(&args));
    assert_eq!(a, b);
    assert!(a[0].starts_with("# "));
    assert_eq!(a[1], "ops,fpr,extra_bits_per_item,map_accesses");
    assert_eq!(a.len(), 2 + 11);
}

#[test]
fn yesno_reports_zero_errors() {
    let o = aqf(&["yesno", "--n", "128", "--m", "4096", "--epsilon", "0.001953125", "--seeds", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().filter(|l| l.contains(" ok ")).all(|l| l.ends_with("errors=0")), "{text}");
    assert!(text.contains("successes="), "{text}");
}
