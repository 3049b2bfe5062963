use std::fs;
use std::path::Path;

use bitstorm_core::config::CampaignConfig;
use bitstorm_core::report::{Analysis, Campaign, IVF_HEADER, MULTIFAULT_HEADER};

fn config(extra: &str) -> CampaignConfig {
    let trials = if extra.contains("trials") { "" } else { "trials = 200\n" };
    CampaignConfig::parse(&format!("preset = dot8\n{trials}seed = 5\nrepeats = 4\n{extra}")).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        out.push((e.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&e).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn campaign_round_trips_through_disk_and_reports_are_stable() {
    let cfg = config("n_grid = [1, 2]\nbits = [RANDOM, 30]\n");
    let c = Campaign::run(&cfg).unwrap();
    assert_eq!(c.logs.len(), 4);
    let names: Vec<_> = c.manifest.sub_campaigns.iter().map(|e| e.file.as_str()).collect();
    assert_eq!(names, ["n1-random.jsonl", "n1-bit30.jsonl", "n2-random.jsonl", "n2-bit30.jsonl"]);

    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    c.save(&run).unwrap();
    let back = Campaign::load(&run).unwrap();
    assert_eq!(back, c);

    // the manifest alone re-creates the campaign
    let again = Campaign::run(&CampaignConfig::parse(&back.manifest.config).unwrap()).unwrap();
    assert_eq!(again, c);

    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    Analysis::new(&c).unwrap().write(&a).unwrap();
    Analysis::new(&back).unwrap().write(&b).unwrap();
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta, tb);
    let files: Vec<_> = ta.iter().map(|f| f.0.as_str()).collect();
    for f in ["ivf.csv", "mvf.csv", "approx_mvf.csv", "operator.csv", "layer.csv", "bitsweep.csv", "multifault.csv"] {
        assert!(files.contains(&f), "{f}");
    }
    assert!(files.contains(&"report.json"));
    assert_eq!(files.iter().filter(|f| f.starts_with("plot")).count(), 7);
    for (_, bytes) in &ta {
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(!text.contains('\r'));
    }

    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "bitstorm.report/1");
    assert_eq!(report["config_digest"], cfg.digest());
    assert_eq!(report["counts"]["trials"], 800);
    assert_eq!(report["tables"]["mvf"].as_array().unwrap().len(), 4);
}

#[test]
fn multifault_rows_partition() {
    let c = Campaign::run(&config("n_grid = [1, 2, 3]\n")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    Analysis::new(&c).unwrap().write(dir.path()).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("multifault.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), MULTIFAULT_HEADER);
    let mut n = 0;
    for row in rdr.records() {
        let row = row.unwrap();
        let sum: f64 = (3..6).map(|i| row[i].parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-8, "{row:?}");
        n += 1;
    }
    assert_eq!(n, 3);
}

#[test]
fn empty_logs_give_headers_only() {
    let mut c = Campaign::run(&config("trials = 1\n")).unwrap();
    c.logs[0].clear();
    c.manifest.sub_campaigns[0].trials = 0;
    let dir = tempfile::tempdir().unwrap();
    let a = Analysis::new(&c).unwrap();
    a.write(dir.path()).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("ivf.csv")).unwrap(), IVF_HEADER.join(",") + "\n");
    for t in a.tables().iter().chain(&a.plots()) {
        assert!(t.rows.is_empty(), "{}", t.name);
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["counts"]["mvf"], serde_json::Value::Null);
}

#[test]
fn truncated_log_is_rejected() {
    let c = Campaign::run(&config("trials = 10\n")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    c.save(dir.path()).unwrap();
    let f = dir.path().join("n1-random.jsonl");
    let text = fs::read_to_string(&f).unwrap();
    fs::write(&f, text.lines().take(9).collect::<Vec<_>>().join("\n")).unwrap();
    assert!(Campaign::load(dir.path()).is_err());
}
