//! `bitstorm`: build, trace, inject, enumerate, analyze and report.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bitstorm_core::config::CampaignConfig;
use bitstorm_core::oracle::{compare, exact_pairwise, exact_single, ExactResult};
use bitstorm_core::report::{exact_tables, g9, write_tables, Analysis, Campaign};
use bitstorm_core::{approx_mvf, enumerate_sites, ivf_table, CoreError, Engine, Limits};
use bitstorm_forge::golden_run;
use bitstorm_isa::{Opcode, OperatorKind};
use clap::{Args, Parser, Subcommand};

/// `println!` into the command's output buffer.
macro_rules! outln {
    ($o:expr) => {
        $o.push('\n')
    };
    ($o:expr, $($t:tt)*) => {{
        $o.push_str(&format!($($t)*));
        $o.push('\n');
    }};
}

const EXIT_CONFIG: u8 = 1;
const EXIT_EXEC: u8 = 2;
const EXIT_VERDICT: u8 = 3;

#[derive(Parser)]
#[command(name = "bitstorm", version, about = "Bit-flip fault injection for tiny transformer inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the model fault-free and save the golden trace.
    Golden(ConfigArgs),
    /// Print the dynamic instruction distribution.
    Trace(ConfigArgs),
    /// Run injection campaigns and write JSONL logs with a manifest.
    Campaign(ConfigArgs),
    /// Enumerate every single-fault site (or site pair for n = 2).
    Enumerate(ConfigArgs),
    /// Print analytics tables folded from a campaign directory.
    Analyze {
        /// Campaign directory holding manifest.json.
        dir: PathBuf,
    },
    /// Write CSV, JSON and plot-data reports for a campaign directory.
    Report {
        dir: PathBuf,
        /// Output directory [default: DIR/report].
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Check sampled single-fault statistics against exhaustive values.
    Compare {
        dir: PathBuf,
        /// Directory of `<sub-campaign>.bin` files from `enumerate`; computed
        /// from the manifest when absent.
        #[arg(long)]
        exact: Option<PathBuf>,
        /// Allowed deviation in binomial standard errors.
        #[arg(long, default_value_t = 3.0)]
        sigma: f64,
    },
}

/// Config file plus per-key overrides. Flags win over the file; the
/// BITSTORM_WORKERS variable applies when neither sets `workers`.
#[derive(Args)]
struct ConfigArgs {
    /// Config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Prompt tokens, comma separated.
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    /// VALUE or ENCODING.
    #[arg(long)]
    mode: Option<String>,
    /// Faults per trial.
    #[arg(short, long)]
    n: Option<String>,
    /// Fault counts, comma separated, one sub-campaign each.
    #[arg(long)]
    n_grid: Option<String>,
    /// RANDOM, FIXED(b) or a bit number.
    #[arg(long)]
    bit: Option<String>,
    /// Bit policies, comma separated, one sub-campaign each.
    #[arg(long)]
    bits: Option<String>,
    #[arg(long)]
    opcodes: Option<String>,
    #[arg(long)]
    operators: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    hang_multiplier: Option<String>,
    #[arg(long)]
    exhaustive_cap: Option<String>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// An error in the user's input rather than in execution.
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let keys: [(&str, &Option<String>); 17] = [
            ("preset", &self.preset),
            ("prompt", &self.prompt),
            ("steps", &self.steps),
            ("mode", &self.mode),
            ("n", &self.n),
            ("n_grid", &self.n_grid),
            ("bit", &self.bit),
            ("bits", &self.bits),
            ("opcodes", &self.opcodes),
            ("operators", &self.operators),
            ("layers", &self.layers),
            ("trials", &self.trials),
            ("repeats", &self.repeats),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("hang_multiplier", &self.hang_multiplier),
            ("exhaustive_cap", &self.exhaustive_cap),
        ];
        keys.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }

    fn resolve(&self) -> Result<CampaignConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
                CampaignConfig::parse_unvalidated(&text).with_context(|| path.display().to_string())?
            }
            None => CampaignConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(k, v)?;
        }
        if let Some(dir) = &self.out {
            cfg.out_dir = dir.clone();
        }
        if !cfg.explicit.contains("workers") {
            if let Ok(w) = std::env::var("BITSTORM_WORKERS") {
                cfg.set("workers", &w).context("BITSTORM_WORKERS")?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn golden(o: &mut String, a: &ConfigArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let target = cfg.build()?;
    let g = golden_run(&target.program)?;
    g.save(&target.program, &cfg.out_dir)?;
    outln!(
        o,
        "{}: {} static, {} dynamic instructions, tokens {:?}, digest {:016x}",
        target.program.name,
        target.program.len(),
        g.dyn_count,
        g.tokens,
        g.program_digest
    );
    outln!(o, "wrote {} and {}", cfg.out_dir.join("golden.bfgt").display(), cfg.out_dir.join("golden.json").display());
    Ok(())
}

fn trace(o: &mut String, a: &ConfigArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let target = cfg.build()?;
    let g = golden_run(&target.program)?;
    let p = g.proportions();
    let mut rows: Vec<(Opcode, u64)> =
        Opcode::all().iter().map(|&op| (op, g.histogram[op.ordinal() as usize])).filter(|r| r.1 > 0).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.mnemonic().cmp(b.0.mnemonic())));
    outln!(o, "{}: {} dynamic instructions", target.program.name, g.dyn_count);
    outln!(o, "{:<8} {:<8} {:>10} {:>12}", "opcode", "group", "count", "p_i");
    for (op, n) in rows {
        outln!(o, "{:<8} {:<8} {:>10} {:>12}", op.mnemonic(), op.group().name(), n, g9(p[op.ordinal() as usize]));
    }
    outln!(o);
    outln!(o, "{:<10} {:>10}", "operator", "count");
    let ops = g.operator_histogram(&target.program);
    for k in OperatorKind::ALL {
        if let Some(n) = ops.get(&k) {
            outln!(o, "{:<10} {:>10}", k.name(), n);
        }
    }
    Ok(())
}

fn campaign(o: &mut String, a: &ConfigArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let c = Campaign::run(&cfg)?;
    c.save(&cfg.out_dir)?;
    for (e, log) in c.manifest.sub_campaigns.iter().zip(&c.logs) {
        let s = bitstorm_core::mvf(log)?;
        outln!(
            o,
            "{:<14} trials {:>7}  masked {:>7}  sdc {:>7}  due {:>7}  mvf {}",
            e.name,
            s.counts.trials,
            s.counts.masked,
            s.counts.sdc,
            s.counts.due,
            g9(s.mvf)
        );
    }
    outln!(o, "wrote {}", cfg.out_dir.display());
    Ok(())
}

fn enumerate(o: &mut String, a: &ConfigArgs) -> Result<()> {
    let cfg = a.resolve()?;
    if let Some(n) = cfg.n_grid.iter().find(|&&n| n > 2) {
        return Err(config_error(format!("exhaustive enumeration supports n = 1 or 2, not {n}")));
    }
    let target = cfg.build()?;
    let g = golden_run(&target.program)?;
    let engine = Engine::new(&target.program, &g, Limits { hang_multiplier: cfg.hang_multiplier })?;
    let dir = cfg.out_dir.join("exact");
    fs::create_dir_all(&dir)?;
    for sub in cfg.plan() {
        let space = enumerate_sites(&target.program, &g, &sub.spec)?;
        if sub.spec.n == 2 {
            let r = exact_pairwise(&engine, &space, cfg.exhaustive_cap)?;
            outln!(
                o,
                "{:<14} pairs {:>9}  masked {:>9}  sdc {:>9}  due {:>9}  abnormal {}",
                sub.name,
                r.pairs,
                r.counts.masked,
                r.counts.sdc,
                r.counts.due,
                g9(r.counts.mvf())
            );
            continue;
        }
        let exact = exact_single(&engine, &space, cfg.exhaustive_cap)?;
        fs::write(dir.join(format!("{}.bin", sub.name)), exact.to_bytes())?;
        write_tables(&dir.join(&sub.name), &exact_tables(&exact, &space.opcode_weights(), target.layers, &sub.name))?;
        let c = exact.counts();
        outln!(
            o,
            "{:<14} sites {:>9}  masked {:>9}  sdc {:>9}  due {:>9}  mvf {}",
            sub.name,
            c.trials,
            c.masked,
            c.sdc,
            c.due,
            g9(c.mvf())
        );
    }
    outln!(o, "wrote {}", dir.display());
    Ok(())
}

fn analyze(o: &mut String, dir: &Path) -> Result<()> {
    let c = Campaign::load(dir).with_context(|| format!("loading {}", dir.display()))?;
    o.push_str(&Analysis::new(&c)?.render());
    Ok(())
}

fn report(o: &mut String, dir: &Path, out: Option<&Path>) -> Result<()> {
    let c = Campaign::load(dir).with_context(|| format!("loading {}", dir.display()))?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("report"));
    let written = Analysis::new(&c)?.write(&out)?;
    outln!(o, "wrote {} files to {}", written.len(), out.display());
    Ok(())
}

/// Returns whether every single-fault sub-campaign passed.
fn compare_cmd(o: &mut String, dir: &Path, exact_dir: Option<&Path>, sigma: f64) -> Result<bool> {
    let c = Campaign::load(dir).with_context(|| format!("loading {}", dir.display()))?;
    let cfg = CampaignConfig::parse(&c.manifest.config).context("manifest config")?;
    let target = cfg.build()?;
    let g = golden_run(&target.program)?;
    if format!("{:016x}", g.program_digest) != c.manifest.golden.program_digest {
        bail!("program digest differs from the manifest");
    }
    let engine = Engine::new(&target.program, &g, Limits { hang_multiplier: cfg.hang_multiplier })?;
    let weights = c.manifest.weights()?;
    let mut pass = true;
    let mut any = false;
    for (sub, (entry, log)) in cfg.plan().iter().zip(c.manifest.sub_campaigns.iter().zip(&c.logs)) {
        if entry.n != 1 || log.is_empty() {
            continue;
        }
        any = true;
        let exact = match exact_dir {
            Some(d) => {
                let path = d.join(format!("{}.bin", entry.name));
                ExactResult::from_bytes(&fs::read(&path).with_context(|| path.display().to_string())?)?
            }
            None => {
                let space = enumerate_sites(&target.program, &g, &sub.spec)?;
                exact_single(&engine, &space, cfg.exhaustive_cap)?
            }
        };
        if exact.program_digest != g.program_digest {
            bail!("exact result for {} belongs to another program", entry.name);
        }
        let r = compare(log, &exact, sigma)?;
        outln!(o, "== {} ({} sigma) ==", entry.name, g9(sigma));
        outln!(
            o,
            "{:<12} {:>12} {:>12} {:>8} {:>12} {:>12}  verdict",
            "statistic",
            "estimate",
            "exact",
            "trials",
            "abs_dev",
            "se"
        );
        for d in &r.rows {
            outln!(
                o,
                "{:<12} {:>12} {:>12} {:>8} {:>12} {:>12}  {}",
                d.statistic,
                g9(d.estimate),
                g9(d.exact),
                d.trials,
                g9(d.abs_dev),
                g9(d.se),
                if d.pass { "pass" } else { "FAIL" }
            );
        }
        // group-wise bounds from the sampled IVFs, checked against the exact MVF
        match approx_mvf(&ivf_table(log, &weights)?, &weights) {
            Ok(e) => outln!(
                o,
                "approx: v_avg {}, bounds [{}, {}], exact mvf {} {}",
                g9(e.v_avg),
                g9(e.v_min),
                g9(e.v_max),
                g9(exact.mvf()),
                if e.brackets(exact.mvf()) { "inside bounds" } else { "OUTSIDE bounds" }
            ),
            Err(e) => outln!(o, "approx: {e}"),
        }
        pass &= r.pass;
    }
    if !any {
        return Err(config_error("compare needs a single-fault sub-campaign with records"));
    }
    outln!(o, "verdict: {}", if pass { "pass" } else { "FAIL" });
    Ok(pass)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(CoreError::Parse { .. } | CoreError::Validation { .. }) = cause.downcast_ref::<CoreError>() {
            return EXIT_CONFIG;
        }
    }
    EXIT_EXEC
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut o = String::new();
    let result = match &cli.command {
        Command::Golden(a) => golden(&mut o, a).map(|_| true),
        Command::Trace(a) => trace(&mut o, a).map(|_| true),
        Command::Campaign(a) => campaign(&mut o, a).map(|_| true),
        Command::Enumerate(a) => enumerate(&mut o, a).map(|_| true),
        Command::Analyze { dir } => analyze(&mut o, dir).map(|_| true),
        Command::Report { dir, out } => report(&mut o, dir, out.as_deref()).map(|_| true),
        Command::Compare { dir, exact, sigma } => compare_cmd(&mut o, dir, exact.as_deref(), *sigma),
    };
    // a closed pipe (`bitstorm trace | head`) is not an error
    let _ = std::io::stdout().write_all(o.as_bytes());
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERDICT),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
