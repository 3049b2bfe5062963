//! Campaign artifacts. A campaign directory holds one JSONL log per
//! sub-campaign plus `manifest.json`, which carries everything analysis
//! needs besides the records: the canonical config, the golden summary and
//! the opcode weights. Reports are a pure function of that directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use bitstorm_forge::{golden_run, GoldenSidecar};
use bitstorm_isa::Opcode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytics::{
    approx_mvf, bit_sweep, cause_breakdown, ivf_table, layer_vulnerability, multi_fault_curve, mvf,
    operator_vulnerability, BitSweepRow, Counts, IvfEntry, LayerVuln, MultiFaultRow, MvfEstimate, MvfSummary,
    OperatorVuln,
};
use crate::campaign::{run_on_space, CampaignParams};
use crate::config::CampaignConfig;
use crate::error::{CoreError, Result};
use crate::inject::{Engine, Limits};
use crate::oracle::ExactResult;
use crate::record::{read_jsonl, write_jsonl, TrialRecord};
use crate::sites::enumerate_sites;

pub const MANIFEST_SCHEMA: &str = "bitstorm.manifest/1";
pub const REPORT_SCHEMA: &str = "bitstorm.report/1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

/// Formats like C's `%.9g`: nine significant digits, trailing zeros
/// dropped, exponent form outside [1e-4, 1e9).
pub fn g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{x:.*}", (8 - exp) as usize))
    }
}

/// `x` rounded to nine significant digits, for JSON output.
fn r9(x: f64) -> Value {
    if x.is_finite() {
        json!(g9(x).parse::<f64>().unwrap())
    } else {
        Value::Null
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(g9).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubEntry {
    pub index: u64,
    pub name: String,
    pub seed: u64,
    pub n: u32,
    pub bit: String,
    pub trials: u64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub tool_version: String,
    pub config_digest: String,
    /// Canonical config text; parsing it re-runs the identical campaign.
    pub config: String,
    pub layers: u8,
    pub golden: GoldenSidecar,
    /// Share of each opcode among eligible dynamic instructions.
    pub weights: BTreeMap<String, f64>,
    pub sub_campaigns: Vec<SubEntry>,
}

impl Manifest {
    pub fn weights(&self) -> Result<Vec<(Opcode, f64)>> {
        self.weights.iter().map(|(k, &p)| Ok((k.parse::<Opcode>().map_err(CoreError::Record)?, p))).collect()
    }
}

/// A manifest and its logs, in sub-campaign order.
#[derive(Clone, Debug, PartialEq)]
pub struct Campaign {
    pub manifest: Manifest,
    pub logs: Vec<Vec<TrialRecord>>,
}

impl Campaign {
    /// Builds the target, runs it fault-free and then every sub-campaign.
    pub fn run(cfg: &CampaignConfig) -> Result<Campaign> {
        cfg.validate()?;
        let target = cfg.build()?;
        let golden = golden_run(&target.program)?;
        let engine = Engine::new(&target.program, &golden, Limits { hang_multiplier: cfg.hang_multiplier })?;
        let params = |seed| CampaignParams { trials: cfg.trials, seed, repeats: cfg.repeats, workers: cfg.workers };
        let mut entries = Vec::new();
        let mut logs = Vec::new();
        let mut weights = BTreeMap::new();
        for sub in cfg.plan() {
            sub.spec.validate()?;
            let space = enumerate_sites(&target.program, &golden, &sub.spec)?;
            if weights.is_empty() {
                weights = space.opcode_weights().into_iter().map(|(o, p)| (o.mnemonic().to_string(), p)).collect();
            }
            logs.push(run_on_space(&engine, &space, &sub.spec, params(sub.seed))?);
            entries.push(SubEntry {
                index: sub.index,
                file: format!("{}.jsonl", sub.name),
                name: sub.name,
                seed: sub.seed,
                n: sub.spec.n,
                bit: sub.spec.bit.to_string(),
                trials: cfg.trials,
            });
        }
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA.into(),
            tool_version: TOOL_VERSION.into(),
            config_digest: cfg.digest(),
            config: cfg.canonical_text(),
            layers: target.layers,
            golden: golden.sidecar(&target.program),
            weights,
            sub_campaigns: entries,
        };
        Ok(Campaign { manifest, logs })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (e, log) in self.manifest.sub_campaigns.iter().zip(&self.logs) {
            let mut f = std::io::BufWriter::new(fs::File::create(dir.join(&e.file))?);
            write_jsonl(&mut f, log)?;
            std::io::Write::flush(&mut f)?;
        }
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Campaign> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        if manifest.schema != MANIFEST_SCHEMA {
            return Err(CoreError::Record(format!("unknown manifest schema `{}`", manifest.schema)));
        }
        let mut logs = Vec::new();
        for e in &manifest.sub_campaigns {
            let log = read_jsonl(BufReader::new(fs::File::open(dir.join(&e.file))?))?;
            if log.len() as u64 != e.trials {
                return Err(CoreError::Record(format!(
                    "{} holds {} records, manifest says {}",
                    e.file,
                    log.len(),
                    e.trials
                )));
            }
            logs.push(log);
        }
        Ok(Campaign { manifest, logs })
    }

    pub fn records(&self) -> impl Iterator<Item = &TrialRecord> {
        self.logs.iter().flatten()
    }
}

/// A named CSV table with a fixed column order.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &'static str, header: &[&'static str]) -> Self {
        Table { name, header: header.to_vec(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| CoreError::Io(e.into_error()))
    }

    /// Space-aligned text for terminals.
    pub fn render(&self) -> String {
        let mut width: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: Vec<&str>| {
            let s: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
            s.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = format!("== {} ==\n", self.name);
        out += &line(self.header.clone());
        for r in &self.rows {
            out += &line(r.iter().map(String::as_str).collect());
        }
        out
    }
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Io(e.into())
}

pub const IVF_HEADER: [&str; 10] =
    ["sub_campaign", "opcode", "group", "trials", "sdc_rate", "due_rate", "ivf", "p_i", "std_dev", "low_confidence"];
pub const MVF_HEADER: [&str; 13] = [
    "sub_campaign",
    "n",
    "bit",
    "trials",
    "masked",
    "sdc",
    "due",
    "mvf",
    "sdc_rate",
    "due_rate",
    "masked_rate",
    "std_dev",
    "repeats",
];
pub const APPROX_HEADER: [&str; 10] =
    ["sub_campaign", "measured", "unmeasured", "v_avg", "v_min", "v_max", "mvf", "rel_dev", "in_bounds", "note"];
pub const OPERATOR_HEADER: [&str; 5] = ["sub_campaign", "operator", "n_error", "n_inconsistent", "v_operator"];
pub const LAYER_HEADER: [&str; 6] = ["sub_campaign", "bucket", "layer", "n_error", "n_inconsistent", "v_layer"];
pub const BITSWEEP_HEADER: [&str; 6] = ["n", "bit", "trials", "sdc_rate", "due_rate", "masked_rate"];
pub const MULTIFAULT_HEADER: [&str; 6] = ["bit", "n", "trials", "masked_rate", "sdc_rate", "due_rate"];

fn ivf_row(sub: &str, e: &IvfEntry) -> Vec<String> {
    vec![
        sub.into(),
        e.opcode.mnemonic().into(),
        e.group.name().into(),
        e.trials.to_string(),
        g9(e.sdc_rate),
        g9(e.due_rate),
        g9(e.ivf),
        g9(e.p_i),
        opt(e.std_dev),
        e.low_confidence.to_string(),
    ]
}

fn mvf_row(sub: &str, n: u32, bit: &str, s: &MvfSummary) -> Vec<String> {
    let c = s.counts;
    vec![
        sub.into(),
        n.to_string(),
        bit.into(),
        c.trials.to_string(),
        c.masked.to_string(),
        c.sdc.to_string(),
        c.due.to_string(),
        g9(s.mvf),
        g9(s.sdc_rate),
        g9(s.due_rate),
        g9(s.masked_rate),
        opt(s.std_dev),
        s.repeats.to_string(),
    ]
}

fn operator_row(sub: &str, v: &OperatorVuln) -> Vec<String> {
    vec![sub.into(), v.kind.name().into(), v.n_error.to_string(), v.n_inconsistent.to_string(), opt(v.v)]
}

fn layer_row(sub: &str, v: &LayerVuln) -> Vec<String> {
    vec![
        sub.into(),
        v.bucket.clone(),
        v.layer.map(|l| l.to_string()).unwrap_or_default(),
        v.n_error.to_string(),
        v.n_inconsistent.to_string(),
        opt(v.v),
    ]
}

fn bit_row(n: u32, r: &BitSweepRow) -> Vec<String> {
    vec![n.to_string(), r.bit.to_string(), r.trials.to_string(), g9(r.sdc_rate), g9(r.due_rate), g9(r.masked_rate)]
}

/// Group-wise estimate for one single-fault sub-campaign, measured on the
/// opcodes it sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxRow {
    pub sub: String,
    pub mvf: f64,
    pub estimate: std::result::Result<MvfEstimate, String>,
}

impl ApproxRow {
    pub fn rel_dev(&self) -> Option<f64> {
        let e = self.estimate.as_ref().ok()?;
        (self.mvf != 0.0).then(|| (e.v_avg - self.mvf).abs() / self.mvf)
    }

    fn row(&self) -> Vec<String> {
        match &self.estimate {
            Ok(e) => vec![
                self.sub.clone(),
                e.measured.len().to_string(),
                e.unmeasured.len().to_string(),
                g9(e.v_avg),
                g9(e.v_min),
                g9(e.v_max),
                g9(self.mvf),
                opt(self.rel_dev()),
                e.brackets(self.mvf).to_string(),
                String::new(),
            ],
            Err(msg) => {
                let mut r = vec![self.sub.clone()];
                r.extend(std::iter::repeat_n(String::new(), 5));
                r.extend([g9(self.mvf), String::new(), String::new(), msg.clone()]);
                r
            }
        }
    }
}

struct SubAnalysis {
    entry: SubEntry,
    summary: Option<MvfSummary>,
    ivf: Vec<IvfEntry>,
    approx: Option<ApproxRow>,
    operator: Vec<OperatorVuln>,
    layer: Vec<LayerVuln>,
}

/// Every analytics table of a campaign.
pub struct Analysis {
    manifest: Manifest,
    subs: Vec<SubAnalysis>,
    bitsweep: Vec<(u32, BitSweepRow)>,
    multifault: Vec<(String, MultiFaultRow)>,
    counts: Counts,
    causes: crate::analytics::CauseBreakdown,
}

impl Analysis {
    pub fn new(c: &Campaign) -> Result<Analysis> {
        let weights = c.manifest.weights()?;
        let mut subs = Vec::new();
        for (entry, log) in c.manifest.sub_campaigns.iter().zip(&c.logs) {
            let summary = if log.is_empty() { None } else { Some(mvf(log)?) };
            let ivf = if entry.n == 1 { ivf_table(log, &weights)? } else { Vec::new() };
            let approx = match &summary {
                Some(s) if entry.n == 1 => Some(ApproxRow {
                    sub: entry.name.clone(),
                    mvf: s.mvf,
                    estimate: approx_mvf(&ivf, &weights).map_err(|e| e.to_string()),
                }),
                _ => None,
            };
            subs.push(SubAnalysis {
                entry: entry.clone(),
                summary,
                ivf,
                approx,
                operator: operator_vulnerability(log),
                layer: layer_vulnerability(log, c.manifest.layers),
            });
        }
        let all: Vec<TrialRecord> = c.records().cloned().collect();
        let mut by_n: BTreeMap<u32, Vec<TrialRecord>> = BTreeMap::new();
        let mut by_bit: BTreeMap<String, Vec<TrialRecord>> = BTreeMap::new();
        for r in &all {
            by_n.entry(r.n_faults).or_default().push(r.clone());
            by_bit.entry(r.bit_policy.to_string()).or_default().push(r.clone());
        }
        let bitsweep = by_n.iter().flat_map(|(&n, rs)| bit_sweep(rs).into_iter().map(move |r| (n, r))).collect();
        let multifault =
            by_bit.iter().flat_map(|(b, rs)| multi_fault_curve(rs).into_iter().map(move |r| (b.clone(), r))).collect();
        let mut counts = Counts::default();
        for r in &all {
            counts.add(r.outcome);
        }
        Ok(Analysis { manifest: c.manifest.clone(), subs, bitsweep, multifault, counts, causes: cause_breakdown(&all) })
    }

    pub fn counts(&self) -> Counts {
        self.counts
    }

    pub fn approx(&self) -> impl Iterator<Item = &ApproxRow> {
        self.subs.iter().filter_map(|s| s.approx.as_ref())
    }

    pub fn tables(&self) -> Vec<Table> {
        let mut ivf = Table::new("ivf", &IVF_HEADER);
        let mut mvf = Table::new("mvf", &MVF_HEADER);
        let mut approx = Table::new("approx_mvf", &APPROX_HEADER);
        let mut operator = Table::new("operator", &OPERATOR_HEADER);
        let mut layer = Table::new("layer", &LAYER_HEADER);
        let mut bitsweep = Table::new("bitsweep", &BITSWEEP_HEADER);
        let mut multifault = Table::new("multifault", &MULTIFAULT_HEADER);
        for s in &self.subs {
            let name = s.entry.name.as_str();
            let Some(summary) = &s.summary else { continue };
            mvf.rows.push(mvf_row(name, s.entry.n, &s.entry.bit, summary));
            ivf.rows.extend(s.ivf.iter().map(|e| ivf_row(name, e)));
            approx.rows.extend(s.approx.iter().map(ApproxRow::row));
            operator.rows.extend(s.operator.iter().map(|v| operator_row(name, v)));
            layer.rows.extend(s.layer.iter().map(|v| layer_row(name, v)));
        }
        bitsweep.rows.extend(self.bitsweep.iter().map(|(n, r)| bit_row(*n, r)));
        for (b, r) in &self.multifault {
            multifault.rows.push(vec![
                b.clone(),
                r.n.to_string(),
                r.trials.to_string(),
                g9(r.masked_rate),
                g9(r.sdc_rate),
                g9(r.due_rate),
            ]);
        }
        vec![ivf, mvf, approx, operator, layer, bitsweep, multifault]
    }

    /// (series, x, y) points for each figure-style plot.
    pub fn plots(&self) -> Vec<Table> {
        let header = ["series", "x", "y"];
        let mut out = Vec::new();
        let mut add = |name, rows: Vec<Vec<String>>| {
            let mut t = Table::new(name, &header);
            t.rows = rows;
            out.push(t);
        };
        let point = |s: &str, x: String, y: f64| vec![s.to_string(), x, g9(y)];
        let live = || self.subs.iter().filter(|s| s.summary.is_some());

        let mut rows = Vec::new();
        for (b, r) in &self.multifault {
            for (k, y) in [("masked", r.masked_rate), ("sdc", r.sdc_rate), ("due", r.due_rate)] {
                rows.push(point(&format!("{b}:{k}"), r.n.to_string(), y));
            }
        }
        add("multifault", rows);
        add(
            "mvf",
            live().map(|s| point(&s.entry.bit, s.entry.n.to_string(), s.summary.as_ref().unwrap().mvf)).collect(),
        );
        add(
            "ivf",
            live()
                .flat_map(|s| s.ivf.iter().map(|e| point(&s.entry.name, e.opcode.mnemonic().into(), e.ivf)))
                .collect(),
        );
        let mut rows = Vec::new();
        for a in self.approx() {
            rows.push(point("mvf", a.sub.clone(), a.mvf));
            if let Ok(e) = &a.estimate {
                for (k, y) in [("v_avg", e.v_avg), ("v_min", e.v_min), ("v_max", e.v_max)] {
                    rows.push(point(k, a.sub.clone(), y));
                }
            }
        }
        add("approx", rows);
        let mut rows = Vec::new();
        for (n, r) in &self.bitsweep {
            for (k, y) in [("sdc", r.sdc_rate), ("due", r.due_rate), ("masked", r.masked_rate)] {
                rows.push(point(&format!("n{n}:{k}"), r.bit.to_string(), y));
            }
        }
        add("bitsweep", rows);
        add(
            "operator",
            live()
                .flat_map(|s| s.operator.iter().filter_map(|v| Some(point(&s.entry.name, v.kind.name().into(), v.v?))))
                .collect(),
        );
        add(
            "layer",
            live()
                .flat_map(|s| s.layer.iter().filter_map(|v| Some(point(&s.entry.name, v.bucket.clone(), v.v?))))
                .collect(),
        );
        out
    }

    pub fn to_json(&self) -> Value {
        let m = &self.manifest;
        let g = &m.golden;
        let c = self.counts;
        let rate = |x: f64| if c.trials == 0 { Value::Null } else { r9(x) };
        let tables: serde_json::Map<String, Value> = self
            .tables()
            .into_iter()
            .map(|t| {
                let rows: Vec<Value> = t
                    .rows
                    .iter()
                    .map(|r| {
                        let obj: serde_json::Map<String, Value> =
                            t.header.iter().zip(r).map(|(h, v)| (h.to_string(), cell(v))).collect();
                        Value::Object(obj)
                    })
                    .collect();
                (t.name.to_string(), Value::Array(rows))
            })
            .collect();
        json!({
            "schema": REPORT_SCHEMA,
            "tool_version": TOOL_VERSION,
            "config_digest": m.config_digest,
            "config": m.config,
            "golden": {
                "program": g.program,
                "program_digest": g.program_digest,
                "dyn_count": g.dyn_count,
                "tokens": g.tokens,
                "histogram": g.histogram,
                "p_i": g.proportions.iter().map(|(k, &v)| (k.clone(), r9(v))).collect::<serde_json::Map<_, _>>(),
                "eligible_p_i": m.weights.iter().map(|(k, &v)| (k.clone(), r9(v))).collect::<serde_json::Map<_, _>>(),
            },
            "counts": {
                "trials": c.trials,
                "masked": c.masked,
                "sdc": c.sdc,
                "due": c.due,
                "mvf": rate(c.mvf()),
                "sdc_rate": rate(c.sdc_rate()),
                "due_rate": rate(c.due_rate()),
            },
            "causes": self.causes,
            "tables": tables,
        })
    }

    /// Writes every CSV, `report.json` and `plot/*.csv` into `dir`, and
    /// returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir.join("plot"))?;
        let mut written = Vec::new();
        for t in self.tables() {
            written.push(write_table(dir, &t)?);
        }
        let mut json = serde_json::to_string_pretty(&self.to_json())?;
        json.push('\n');
        let path = dir.join("report.json");
        fs::write(&path, json)?;
        written.push(path);
        for t in self.plots() {
            written.push(write_table(&dir.join("plot"), &t)?);
        }
        Ok(written)
    }

    pub fn render(&self) -> String {
        let c = self.counts;
        let mut out = format!(
            "trials {}  masked {}  sdc {}  due {}  mvf {}\n",
            c.trials,
            c.masked,
            c.sdc,
            c.due,
            if c.trials == 0 { "-".into() } else { g9(c.mvf()) }
        );
        for t in self.tables() {
            out.push('\n');
            out += &t.render();
        }
        out
    }
}

/// A CSV cell as JSON: numbers and booleans typed, empty cells null.
fn cell(v: &str) -> Value {
    if v.is_empty() {
        return Value::Null;
    }
    if let Ok(b) = v.parse::<bool>() {
        return Value::Bool(b);
    }
    if let Ok(i) = v.parse::<u64>() {
        return json!(i);
    }
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() && v.bytes().any(|b| b.is_ascii_digit()) => json!(x),
        _ => Value::String(v.into()),
    }
}

fn write_table(dir: &Path, t: &Table) -> Result<PathBuf> {
    let path = dir.join(format!("{}.csv", t.name));
    fs::write(&path, t.to_csv()?)?;
    Ok(path)
}

/// CSV summaries of an exhaustive result, with the same headers as the
/// sampled tables. `label` fills the sub-campaign column.
pub fn exact_tables(exact: &ExactResult, weights: &[(Opcode, f64)], layers: u8, label: &str) -> Vec<Table> {
    let c = exact.counts();
    let summary = MvfSummary {
        counts: c,
        mvf: c.mvf(),
        sdc_rate: c.sdc_rate(),
        due_rate: c.due_rate(),
        masked_rate: c.masked_rate(),
        std_dev: None,
        repeats: 1,
    };
    let mut mvf = Table::new("mvf", &MVF_HEADER);
    mvf.rows.push(mvf_row(label, 1, &exact.bit_policy.to_string(), &summary));
    let mut ivf = Table::new("ivf", &IVF_HEADER);
    ivf.rows = exact.ivf_table(weights).iter().map(|e| ivf_row(label, e)).collect();
    let mut operator = Table::new("operator", &OPERATOR_HEADER);
    operator.rows = exact.operator_vulnerability().iter().map(|v| operator_row(label, v)).collect();
    let mut layer = Table::new("layer", &LAYER_HEADER);
    layer.rows = exact.layer_vulnerability(layers).iter().map(|v| layer_row(label, v)).collect();
    let mut bits = Table::new("bitsweep", &BITSWEEP_HEADER);
    bits.rows = exact.bit_table().iter().map(|r| bit_row(1, r)).collect();
    vec![ivf, mvf, operator, layer, bits]
}

pub fn write_tables(dir: &Path, tables: &[Table]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    tables.iter().map(|t| write_table(dir, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.1, "0.1"),
            (0.30000000000000004, "0.3"),
            (1.0 / 3.0, "0.333333333"),
            (2.0 / 3.0, "0.666666667"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001, "1e-05"),
            (6.8129e37, "6.8129e+37"),
            (-2.5, "-2.5"),
            (99999999.95, "100000000"),
        ];
        for (x, want) in cases {
            assert_eq!(g9(x), want, "{x}");
        }
        assert_eq!(g9(f64::INFINITY), "inf");
        assert_eq!(g9(f64::NAN), "nan");
    }

    #[test]
    fn nine_digits_reparse_to_the_same_text() {
        for x in [0.1, 1.0 / 7.0, 12345.678901234, 3.0e-9, 0.999999999] {
            let s = g9(x);
            assert_eq!(g9(s.parse().unwrap()), s);
        }
    }

    #[test]
    fn csv_uses_newlines_and_quotes_when_needed() {
        let mut t = Table::new("t", &["a", "b"]);
        t.rows.push(vec!["x,y".into(), "1".into()]);
        assert_eq!(String::from_utf8(t.to_csv().unwrap()).unwrap(), "a,b\n\"x,y\",1\n");
    }

    #[test]
    fn cells_are_typed() {
        assert_eq!(cell(""), Value::Null);
        assert_eq!(cell("true"), json!(true));
        assert_eq!(cell("12"), json!(12));
        assert_eq!(cell("0.5"), json!(0.5));
        assert_eq!(cell("FADD"), json!("FADD"));
        assert_eq!(cell("inf"), json!("inf"));
        assert_eq!(cell("n1-random"), json!("n1-random"));
    }
}
