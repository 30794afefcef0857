use std::process::Command;

use wordlab::expcli::ExperimentConfig;

fn wordlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wordlab")).args(args).output().expect("binary runs")
}

#[test]
fn exit_codes() {
    assert_eq!(wordlab(&["--help"]).status.code(), Some(0));
    assert_eq!(wordlab(&["--version"]).status.code(), Some(0));
    assert_eq!(wordlab(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(wordlab(&["word-measure", "--p", "5", "--word", "xyz"]).status.code(), Some(64));
    assert_eq!(wordlab(&["word-measure", "--p", "4", "--word", "ab"]).status.code(), Some(64));
    let out = wordlab(&["word-measure", "--p", "5", "--word", "abAB", "--budget", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn mixing_time_at_13() {
    let out = wordlab(&["mixing-time", "--group", "sl2", "--p", "13", "--word", "abAB", "--q", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "1\n");
    let out = wordlab(&["mixing-time", "--group", "sl2", "--p", "13", "--word", "abAB", "--q", "inf"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "2\n");
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let dir = std::env::temp_dir().join(format!("wordlab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut texts = Vec::new();
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let path = dir.join(format!("k{i}.csv"));
        let out = Command::new(env!("CARGO_BIN_EXE_wordlab"))
            .args(["kesten", "--lmax", "16", "--trials", "50000", "--seed", "7", "--format", "csv", "--out"])
            .arg(&path)
            .env("WORDLAB_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        texts.push(std::fs::read_to_string(&path).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    assert!(texts[0].starts_with("# schema_version: 1\n"));
    let cfg = ExperimentConfig::from_artifact(&texts[0]).unwrap();
    assert_eq!(cfg.command, "kesten");
    assert_eq!(cfg.options.seed, Some(7));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn trace_poly_of_commutator() {
    let out = wordlab(&["trace-poly", "--word", "abAB"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "P[abAB] = -x*y*z + x^2 + y^2 + z^2 - 2\n");
}

#[test]
fn figure_eight_counts_grow_linearly() {
    let out = wordlab(&["charvariety-dim", "--word", "figure-eight", "--primes", "5:97"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("dimension 1"));
}
