use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bitstorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitstorm")).args(args).env_remove("BITSTORM_WORKERS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path and bytes of every file below `dir`.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn campaign(dir: &Path, extra: &[&str]) {
    let mut args = vec!["campaign", "--preset", "dot8", "--seed", "7", "-o", path(dir)];
    args.extend(extra);
    let o = bitstorm(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn golden_happy_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let o = bitstorm(&["golden", "--preset", "nano-gpt2", "--prompt", "3,1,4", "--steps", "2", "-o", path(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("golden.bfgt").is_file());
    let side: serde_json::Value = serde_json::from_slice(&fs::read(out.join("golden.json")).unwrap()).unwrap();
    assert_eq!(side["schema"], "bitstorm.golden/1");
    assert_eq!(side["tokens"].as_array().unwrap().len(), 2);
}

#[test]
fn config_errors_exit_1() {
    assert_eq!(code(&bitstorm(&["campaign", "--preset", "dot8", "--trials", "0"])), 1);
    assert_eq!(code(&bitstorm(&["campaign", "--preset", "dot8", "--bit", "FIXED(32)"])), 1);
    assert_eq!(code(&bitstorm(&["campaign", "--preset", "gpt-7"])), 1);
    assert_eq!(code(&bitstorm(&["frobnicate"])), 1);
    assert_eq!(code(&bitstorm(&["campaign", "--no-such-flag"])), 1);
    assert_eq!(code(&bitstorm(&["enumerate", "--preset", "dot4", "--n", "3"])), 1);

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, "[model]\npreset = dot8\n[faults]\n  colour = red\n").unwrap();
    let o = bitstorm(&["campaign", "-c", path(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("4:3"), "{}", stderr(&o));
    assert_eq!(code(&bitstorm(&["campaign", "-c", path(&tmp.path().join("missing.cfg"))])), 1);
}

#[test]
fn execution_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&bitstorm(&["analyze", path(&tmp.path().join("nothing"))])), 2);
    // filters that leave no site to inject
    let o = bitstorm(&["campaign", "--preset", "dot8", "--opcodes", "HFMA2", "-o", path(tmp.path())]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn flags_override_the_file_and_workers_env_is_a_default() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, "preset = dot8\nn_grid = [1, 2]\ntrials = 20\n").unwrap();
    let out = tmp.path().join("run");
    let o = bitstorm(&["campaign", "-c", path(&cfg), "--n", "1", "-o", path(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["sub_campaigns"].as_array().unwrap().len(), 1);

    let env = |val: &str, extra: &[&str]| {
        let mut args = vec!["campaign", "-c", path(&cfg), "-o", path(&out)];
        args.extend(extra);
        Command::new(env!("CARGO_BIN_EXE_bitstorm")).args(args).env("BITSTORM_WORKERS", val).output().unwrap()
    };
    assert_eq!(code(&env("0", &[])), 1);
    assert_eq!(code(&env("0", &["--workers", "2"])), 0);
    assert_eq!(code(&env("3", &[])), 0);
}

#[test]
fn reports_are_byte_identical_across_runs_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let grid = ["--trials", "150", "--n-grid", "1,2,4", "--bits", "RANDOM,30"];
    campaign(&a, &[&grid[..], &["--workers", "1"]].concat());
    campaign(&b, &[&grid[..], &["--workers", "8"]].concat());
    for d in [&a, &b] {
        assert_eq!(code(&bitstorm(&["report", path(d)])), 0);
    }
    assert_eq!(tree(&a), tree(&b));

    // regenerating from disk reproduces the same bytes
    let again = tmp.path().join("again");
    assert_eq!(code(&bitstorm(&["report", path(&a), "-o", path(&again)])), 0);
    assert_eq!(tree(&a.join("report")), tree(&again));

    let o = bitstorm(&["analyze", path(&a)]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for t in ["== ivf ==", "== mvf ==", "== multifault ==", "n4-bit30"] {
        assert!(text.contains(t), "{t}");
    }
}

#[test]
fn empty_records_give_headers_only() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    campaign(&dir, &["--trials", "5"]);
    fs::write(dir.join("n1-random.jsonl"), "").unwrap();
    let mpath = dir.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
    m["sub_campaigns"][0]["trials"] = 0.into();
    fs::write(&mpath, serde_json::to_string_pretty(&m).unwrap()).unwrap();

    let o = bitstorm(&["report", path(&dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = dir.join("report");
    for (name, header) in [
        ("ivf.csv", "sub_campaign,opcode,group,trials,sdc_rate,due_rate,ivf,p_i,std_dev,low_confidence\n"),
        ("operator.csv", "sub_campaign,operator,n_error,n_inconsistent,v_operator\n"),
        ("multifault.csv", "bit,n,trials,masked_rate,sdc_rate,due_rate\n"),
        ("plot/mvf.csv", "series,x,y\n"),
    ] {
        assert_eq!(fs::read_to_string(report.join(name)).unwrap(), header, "{name}");
    }
}

/// Rewrites every record's outcome, as a sampler biased toward one class
/// would have produced.
fn bias(dir: &Path, outcome: &str) {
    let f = dir.join("n1-random.jsonl");
    let mut out = String::new();
    for line in fs::read_to_string(&f).unwrap().lines() {
        let mut r: serde_json::Value = serde_json::from_str(line).unwrap();
        r["outcome"] = outcome.into();
        out += &serde_json::to_string(&r).unwrap();
        out.push('\n');
    }
    fs::write(f, out).unwrap();
}

#[test]
fn compare_verdicts_set_the_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    campaign(&dir, &["--trials", "2000"]);
    let o = bitstorm(&["compare", path(&dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    // a precomputed exact result gives the same verdict
    let ex = tmp.path().join("ex");
    assert_eq!(code(&bitstorm(&["enumerate", "--preset", "dot8", "-o", path(&ex)])), 0);
    let o2 = bitstorm(&["compare", path(&dir), "--exact", path(&ex.join("exact"))]);
    assert_eq!(code(&o2), 0);
    assert_eq!(o.stdout, o2.stdout);

    bias(&dir, "DUE");
    let o = bitstorm(&["compare", path(&dir)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("verdict: FAIL"));
}

#[test]
fn enumerate_writes_binary_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bitstorm(&["enumerate", "--preset", "dot4", "--n-grid", "1,2", "--bit", "30", "-o", path(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let exact = tmp.path().join("exact");
    assert!(fs::read(exact.join("n1-bit30.bin")).unwrap().starts_with(b"BFEX"));
    for f in ["ivf.csv", "mvf.csv", "operator.csv", "layer.csv", "bitsweep.csv"] {
        assert!(exact.join("n1-bit30").join(f).is_file(), "{f}");
    }
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("n2-bit30") && text.contains("pairs"), "{text}");
}

#[test]
fn trace_prints_the_distribution() {
    let o = bitstorm(&["trace", "--preset", "dot8"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("dot8: 77 dynamic instructions\n"));
    assert!(text.contains("LDG      MEM              16  0.207792208"));
}
