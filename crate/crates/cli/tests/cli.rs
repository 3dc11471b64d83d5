use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmr-mscm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn xmr-mscm")
}

fn generate(dir: &Path) {
    let out = run(
        &[
            "gen",
            "--depth",
            "3",
            "--branch",
            "8",
            "--dim",
            "100",
            "--labels",
            "64",
            "--nnz",
            "10",
            "--overlap",
            "0.8",
            "--seed",
            "7",
            "--out",
            "m",
            "--num-queries",
            "40",
            "--queries",
            "q.txt",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn infer(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["infer", "--model", "m", "--queries", "q.txt"];
    args.extend_from_slice(extra);
    run(&args, dir)
}

#[test]
fn gen_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let out = run(&["validate", "m"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let out = run(
        &["validate", "--model", "m", "--queries", "q.txt"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn infer_respects_topk() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let out = infer(
        dir.path(),
        &[
            "--beam", "10", "--topk", "5", "--method", "hash", "--mscm", "on",
        ],
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut per_query = vec![0usize; 40];
    for line in text.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 3);
        per_query[f[0].parse::<usize>().unwrap()] += 1;
        assert!(f[1].parse::<u32>().unwrap() < 64);
        f[2].parse::<f32>().unwrap();
    }
    assert!(per_query.iter().all(|&c| c <= 5));
}

#[test]
fn mscm_on_and_off_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    for method in ["march", "bsearch", "hash", "dense"] {
        let on = infer(
            dir.path(),
            &["--topk", "5", "--method", method, "--mscm", "on"],
        );
        let off = infer(
            dir.path(),
            &[
                "--topk",
                "5",
                "--method",
                method,
                "--mscm",
                "off",
                "--threads",
                "3",
            ],
        );
        assert!(on.status.success() && off.status.success());
        assert!(!on.stdout.is_empty());
        assert_eq!(on.stdout, off.stdout, "{method}");
    }
}

#[test]
fn identical_flags_and_seed_give_identical_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(a.path());
    generate(b.path());
    assert_eq!(
        std::fs::read(a.path().join("m/layer_3.mat")).unwrap(),
        std::fs::read(b.path().join("m/layer_3.mat")).unwrap()
    );
    let x = infer(a.path(), &[]);
    let y = infer(b.path(), &[]);
    assert_eq!(x.stdout, y.stdout);
}

#[test]
fn auto_method_reports_choice_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let out = infer(dir.path(), &["--method", "auto"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("method: "));
    let explicit = infer(dir.path(), &["--method", "bsearch"]);
    assert_eq!(out.stdout, explicit.stdout);
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let out = infer(dir.path(), &["--out", "p.tsv"]);
    assert!(out.status.success() && out.stdout.is_empty());
    let stdout = infer(dir.path(), &[]).stdout;
    assert_eq!(std::fs::read(dir.path().join("p.tsv")).unwrap(), stdout);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["infer", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(
        run(
            &[
                "infer",
                "--model",
                "m",
                "--queries",
                "q",
                "--method",
                "fast"
            ],
            dir.path()
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(run(&[], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&["validate", "missing"], dir.path()).status.code(),
        Some(2)
    );
    generate(dir.path());
    assert_eq!(infer(dir.path(), &["--topk", "11"]).status.code(), Some(2));
    std::fs::write(
        dir.path().join("m/layer_2.chunks"),
        "XMRCHUNKS v1\n2\n0\n8\n",
    )
    .unwrap();
    assert_eq!(run(&["validate", "m"], dir.path()).status.code(), Some(2));
    let bad = run(
        &[
            "gen",
            "--depth",
            "2",
            "--branch",
            "2",
            "--dim",
            "10",
            "--labels",
            "64",
            "--nnz",
            "3",
            "--overlap",
            "0.5",
            "--out",
            "x",
        ],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn stats_and_bench_run() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let out = run(&["stats", "--model", "m"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("shared_fraction"));
    let out = run(&["stats", "--model", "m", "--json"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["layers"].as_array().unwrap().len(), 2);

    let out = run(
        &[
            "bench",
            "--model",
            "m",
            "--queries",
            "q.txt",
            "--method",
            "bsearch",
            "--measured",
            "3",
            "--json",
            "--out",
            "r.tsv",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["speedup"].as_f64().unwrap() > 0.0);
    let tsv = std::fs::read_to_string(dir.path().join("r.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 3);
    let short = run(
        &[
            "bench",
            "--model",
            "m",
            "--queries",
            "q.txt",
            "--measured",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(short.status.code(), Some(2));
}
