//! Campaign configuration: a flat, sectioned key-value format.
//!
//! ```text
//! # comment
//! [model]
//! preset = "nano-gpt2"      # or a fixture: dot1..dot8, abs1..abs8
//! prompt = [3, 1, 4]
//! steps = 2
//! [faults]
//! mode = VALUE              # VALUE | ENCODING
//! n = 1                     # or n_grid = [1, 2, 4, 8]
//! bit = RANDOM              # RANDOM | FIXED(b) | b, or bits = [0, 4, 30]
//! opcodes = [FADD, FFMA]    # optional filters
//! operators = [ATTENTION]
//! layers = [0]
//! [campaign]
//! trials = 1000
//! repeats = 10
//! seed = 1
//! workers = 1
//! hang_multiplier = 10
//! exhaustive_cap = 2000000
//! [output]
//! dir = "out"
//! ```
//!
//! A value is a double-quoted string, a bare word, or a bracketed list of
//! either. Keys are case-insensitive, may appear before any section header
//! (they are resolved by name) and may be given once. Unknown keys are an
//! error.

use std::collections::BTreeSet;
use std::path::PathBuf;

use bitstorm_forge::{build_model, lower, preset};
use bitstorm_isa::{fnv1a64, Opcode, OperatorKind, Program};

use crate::error::{CoreError, Result};
use crate::fixtures::{abs_product, dot_product};
use crate::inject::DEFAULT_HANG_MULTIPLIER;
use crate::oracle::DEFAULT_CAP;
use crate::rng::sub_campaign_seed;
use crate::spec::{BitPolicy, FaultSpec, Filters, Mode};

const SECTIONS: [(&str, &[&str]); 4] = [
    ("model", &["preset", "prompt", "steps"]),
    ("faults", &["mode", "n", "n_grid", "bit", "bits", "opcodes", "operators", "layers"]),
    ("campaign", &["trials", "repeats", "seed", "workers", "hang_multiplier", "exhaustive_cap"]),
    ("output", &["dir"]),
];

pub const DEFAULT_PROMPT: [u32; 3] = [3, 1, 4];
pub const DEFAULT_STEPS: u32 = 2;
pub const DEFAULT_TRIALS: u64 = 1000;
pub const DEFAULT_REPEATS: u32 = 10;
pub const DEFAULT_OUT_DIR: &str = "bitstorm-out";

#[derive(Clone, Debug, PartialEq)]
enum Value {
    Str(String),
    Word(String),
    List(Vec<Value>),
}

impl Value {
    fn scalar(&self) -> Option<&str> {
        match self {
            Value::Str(s) | Value::Word(s) => Some(s),
            Value::List(_) => None,
        }
    }

    /// A list, or a single scalar as a one-element list.
    fn items(&self) -> Vec<&Value> {
        match self {
            Value::List(v) => v.iter().collect(),
            v => vec![v],
        }
    }
}

fn section_of(key: &str) -> Option<&'static str> {
    SECTIONS.iter().find(|(_, keys)| keys.contains(&key)).map(|(s, _)| *s)
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn parse_err(line: usize, col: usize, msg: impl Into<String>) -> CoreError {
    CoreError::Parse { line, col, msg: msg.into() }
}

fn invalid(field: &str, msg: impl Into<String>) -> CoreError {
    CoreError::Validation { field: field.into(), msg: msg.into() }
}

/// Byte-level value parser over one line. Columns are 1-based characters.
struct Scanner<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    line: usize,
    text: &'a str,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str, line: usize) -> Self {
        Scanner { chars: text.char_indices().collect(), pos: 0, line, text }
    }

    fn col(&self) -> usize {
        self.pos + 1
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c == ' ' || c == '\t') {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        matches!(self.peek(), None | Some('#'))
    }

    fn err(&self, msg: impl Into<String>) -> CoreError {
        parse_err(self.line, self.col(), msg)
    }

    fn value(&mut self, in_list: bool) -> Result<Value> {
        self.skip_ws();
        match self.peek() {
            Some('"') => {
                self.pos += 1;
                let mut s = String::new();
                loop {
                    match self.peek() {
                        None => return Err(self.err("unterminated string")),
                        Some('"') => {
                            self.pos += 1;
                            return Ok(Value::Str(s));
                        }
                        Some('\\') => {
                            self.pos += 1;
                            match self.peek() {
                                Some(c @ ('"' | '\\')) => s.push(c),
                                _ => return Err(self.err("only \\\" and \\\\ escapes are allowed")),
                            }
                            self.pos += 1;
                        }
                        Some(c) => {
                            s.push(c);
                            self.pos += 1;
                        }
                    }
                }
            }
            Some('[') => {
                if in_list {
                    return Err(self.err("nested lists are not allowed"));
                }
                self.pos += 1;
                let mut items = Vec::new();
                self.skip_ws();
                if self.peek() == Some(']') {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.value(true)?);
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(']') => {
                            self.pos += 1;
                            return Ok(Value::List(items));
                        }
                        _ => return Err(self.err("expected `,` or `]`")),
                    }
                }
            }
            _ => {
                let start = self.pos;
                let stop = |c: char| c == '#' || (in_list && (c == ',' || c == ']'));
                while self.peek().is_some_and(|c| !stop(c)) {
                    self.pos += 1;
                }
                let from = self.chars.get(start).map_or(self.text.len(), |c| c.0);
                let to = self.chars.get(self.pos).map_or(self.text.len(), |c| c.0);
                let word = self.text[from..to].trim_end();
                if word.is_empty() {
                    self.pos = start;
                    return Err(self.err("expected a value"));
                }
                Ok(Value::Word(word.to_string()))
            }
        }
    }
}

/// Fully resolved campaign configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CampaignConfig {
    pub preset: String,
    pub prompt: Vec<u32>,
    pub steps: u32,
    pub mode: Mode,
    /// Faults per trial, one sub-campaign per entry.
    pub n_grid: Vec<u32>,
    /// Bit policies, one sub-campaign per entry.
    pub bits: Vec<BitPolicy>,
    pub filters: Filters,
    pub trials: u64,
    pub repeats: u32,
    pub seed: u64,
    pub workers: usize,
    pub hang_multiplier: u64,
    pub exhaustive_cap: u64,
    pub out_dir: PathBuf,
    /// Keys set explicitly, by file or override.
    pub explicit: BTreeSet<String>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            preset: String::new(),
            prompt: DEFAULT_PROMPT.to_vec(),
            steps: DEFAULT_STEPS,
            mode: Mode::Value,
            n_grid: vec![1],
            bits: vec![BitPolicy::Random],
            filters: Filters::default(),
            trials: DEFAULT_TRIALS,
            repeats: DEFAULT_REPEATS,
            seed: 0,
            workers: 1,
            hang_multiplier: DEFAULT_HANG_MULTIPLIER,
            exhaustive_cap: DEFAULT_CAP,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            explicit: BTreeSet::new(),
        }
    }
}

/// One (fault count, bit policy) cell of the campaign plan.
#[derive(Clone, Debug, PartialEq)]
pub struct SubCampaign {
    pub index: u64,
    pub name: String,
    pub seed: u64,
    pub spec: FaultSpec,
}

/// What a config builds: the program and its model depth.
pub struct Target {
    pub program: Program,
    pub layers: u8,
}

fn word<'v>(field: &str, v: &'v Value) -> Result<&'v str> {
    v.scalar().ok_or_else(|| invalid(field, "expected a single value, not a list"))
}

fn number<T: std::str::FromStr>(field: &str, v: &Value) -> Result<T> {
    let s = word(field, v)?;
    s.trim().parse().map_err(|_| invalid(field, format!("`{s}` is not a valid number")))
}

fn numbers<T: std::str::FromStr>(field: &str, v: &Value) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for item in v.items() {
        // "3,1,4" in a bare word or string is accepted as a list
        for part in word(field, item)?.split(',') {
            let p = part.trim();
            out.push(p.parse().map_err(|_| invalid(field, format!("`{p}` is not a valid number")))?);
        }
    }
    Ok(out)
}

fn names(field: &str, v: &Value) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for item in v.items() {
        for part in word(field, item)?.split(',') {
            if !part.trim().is_empty() {
                out.push(part.trim().to_string());
            }
        }
    }
    Ok(out)
}

impl CampaignConfig {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<CampaignConfig> {
        let cfg = Self::parse_unvalidated(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses with defaults applied but without cross-field validation, so
    /// that overrides can still be layered on.
    pub fn parse_unvalidated(text: &str) -> Result<CampaignConfig> {
        let mut cfg = CampaignConfig::default();
        let mut section: Option<&'static str> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let mut sc = Scanner::new(raw, line);
            if sc.at_end() {
                continue;
            }
            if sc.peek() == Some('[') {
                let open = sc.col();
                let close = raw.find(']').ok_or_else(|| parse_err(line, open, "unterminated section header"))?;
                let name = raw[raw.find('[').unwrap() + 1..close].trim().to_ascii_lowercase();
                section = Some(
                    SECTIONS
                        .iter()
                        .find(|s| s.0 == name)
                        .map(|s| s.0)
                        .ok_or_else(|| parse_err(line, open, format!("unknown section [{name}]")))?,
                );
                let mut rest = Scanner::new(&raw[close + 1..], line);
                if !rest.at_end() {
                    return Err(parse_err(
                        line,
                        raw[..close + 1].chars().count() + rest.col(),
                        "trailing text after section header",
                    ));
                }
                continue;
            }
            let key_col = sc.col();
            let eq = raw.find('=').ok_or_else(|| parse_err(line, key_col, "expected `key = value`"))?;
            let key = normalize(&raw[..eq]);
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(parse_err(line, key_col, format!("bad key `{}`", raw[..eq].trim())));
            }
            let home = section_of(&key);
            match (home, section) {
                (None, _) => return Err(parse_err(line, key_col, format!("unknown key `{key}`"))),
                (Some(h), Some(s)) if h != s => {
                    return Err(parse_err(line, key_col, format!("key `{key}` belongs in [{h}], not [{s}]")))
                }
                _ => {}
            }
            if cfg.explicit.contains(&key) {
                return Err(parse_err(line, key_col, format!("duplicate key `{key}`")));
            }
            let vstart = raw[..eq + 1].chars().count();
            let mut vs = Scanner::new(raw, line);
            vs.pos = vstart;
            let value = vs.value(false)?;
            if !vs.at_end() {
                return Err(vs.err("trailing text after value"));
            }
            cfg.set_value(&key, &value)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its textual value, as a command-line flag would.
    pub fn set(&mut self, key: &str, text: &str) -> Result<()> {
        let key = normalize(key);
        if section_of(&key).is_none() {
            return Err(invalid(&key, "unknown key"));
        }
        let mut sc = Scanner::new(text, 0);
        let value = match sc.value(false) {
            Ok(v) if sc.at_end() => v,
            // anything else is taken verbatim as one word
            _ => Value::Word(text.trim().to_string()),
        };
        self.set_value(&key, &value)?;
        // an override replaces its alternative form
        let sibling = match key.as_str() {
            "n" => "n_grid",
            "n_grid" => "n",
            "bit" => "bits",
            "bits" => "bit",
            _ => return Ok(()),
        };
        self.explicit.remove(sibling);
        Ok(())
    }

    fn set_value(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "preset" => self.preset = word(key, v)?.trim().to_string(),
            "prompt" => self.prompt = numbers(key, v)?,
            "steps" => self.steps = number(key, v)?,
            "mode" => self.mode = word(key, v)?.parse().map_err(|e: String| invalid(key, e))?,
            "n" => self.n_grid = vec![number(key, v)?],
            "n_grid" => self.n_grid = numbers(key, v)?,
            "bit" => self.bits = vec![word(key, v)?.parse().map_err(|e: String| invalid(key, e))?],
            "bits" => {
                self.bits = names(key, v)?
                    .iter()
                    .map(|s| s.parse().map_err(|e: String| invalid(key, e)))
                    .collect::<Result<_>>()?
            }
            "opcodes" => {
                self.filters.opcodes = Some(
                    names(key, v)?
                        .iter()
                        .map(|s| s.parse::<Opcode>().map_err(|e| invalid(key, e)))
                        .collect::<Result<_>>()?,
                )
            }
            "operators" => {
                self.filters.operators = Some(
                    names(key, v)?
                        .iter()
                        .map(|s| {
                            OperatorKind::from_name(s).ok_or_else(|| invalid(key, format!("unknown operator `{s}`")))
                        })
                        .collect::<Result<_>>()?,
                )
            }
            "layers" => self.filters.layers = Some(numbers::<u8>(key, v)?.into_iter().collect()),
            "trials" => self.trials = number(key, v)?,
            "repeats" => self.repeats = number(key, v)?,
            "seed" => self.seed = number(key, v)?,
            "workers" => self.workers = number(key, v)?,
            "hang_multiplier" => self.hang_multiplier = number(key, v)?,
            "exhaustive_cap" => self.exhaustive_cap = number(key, v)?,
            "dir" => self.out_dir = PathBuf::from(word(key, v)?),
            _ => return Err(invalid(key, "unknown key")),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.preset.is_empty() {
            return Err(invalid("preset", "a preset is required"));
        }
        let layers =
            model_layers(&self.preset).ok_or_else(|| invalid("preset", format!("unknown preset `{}`", self.preset)))?;
        if self.explicit.contains("n") && self.explicit.contains("n_grid") {
            return Err(invalid("n_grid", "give either n or n_grid"));
        }
        if self.explicit.contains("bit") && self.explicit.contains("bits") {
            return Err(invalid("bits", "give either bit or bits"));
        }
        let grid_field = if self.explicit.contains("n_grid") { "n_grid" } else { "n" };
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(invalid(grid_field, "fault counts must be at least 1"));
        }
        if self.bits.is_empty() {
            return Err(invalid("bits", "at least one bit policy is required"));
        }
        if let Some(BitPolicy::Fixed(b)) = self.bits.iter().find(|b| matches!(b, BitPolicy::Fixed(x) if *x > 31)) {
            return Err(invalid("bit", format!("bit {b} out of range 0..=31")));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "at least one trial is required"));
        }
        if self.repeats == 0 {
            return Err(invalid("repeats", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        if self.hang_multiplier == 0 {
            return Err(invalid("hang_multiplier", "must be at least 1"));
        }
        if let Some(l) = self.filters.layers.as_ref().and_then(|s| s.iter().find(|&&l| l >= layers)) {
            return Err(invalid("layers", format!("layer {l} outside a {layers}-layer model")));
        }
        if let Ok(m) = preset(&self.preset) {
            m.validate_request(&self.prompt, self.steps).map_err(|e| invalid("prompt", e.to_string()))?;
        }
        Ok(())
    }

    /// Sub-campaigns: every fault count crossed with every bit policy, in
    /// that order. Sub-campaign `k` uses seed `seed ^ (k << 32)`.
    pub fn plan(&self) -> Vec<SubCampaign> {
        let mut out = Vec::new();
        for &n in &self.n_grid {
            for &bit in &self.bits {
                let k = out.len() as u64;
                let bit_name = match bit {
                    BitPolicy::Random => "random".to_string(),
                    BitPolicy::Fixed(b) => format!("bit{b:02}"),
                };
                out.push(SubCampaign {
                    index: k,
                    name: format!("n{n}-{bit_name}"),
                    seed: sub_campaign_seed(self.seed, k),
                    spec: FaultSpec { mode: self.mode, n, bit, filters: self.filters.clone() },
                });
            }
        }
        out
    }

    /// Builds and lowers the configured model, or the named fixture.
    pub fn build(&self) -> Result<Target> {
        if let Some(p) = fixture(&self.preset) {
            return Ok(Target { program: p, layers: 1 });
        }
        let cfg = preset(&self.preset)?;
        let m = build_model(&cfg)?;
        Ok(Target { program: lower(&m, &self.prompt, self.steps)?, layers: cfg.layers as u8 })
    }

    /// (section, key, canonical value) for every key, in schema order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let list = |v: Vec<String>| format!("[{}]", v.join(", "));
        let quoted = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
        let mut e = vec![
            ("model", "preset", quoted(&self.preset)),
            ("model", "prompt", list(self.prompt.iter().map(u32::to_string).collect())),
            ("model", "steps", self.steps.to_string()),
            ("faults", "mode", self.mode.name().to_string()),
            ("faults", "n_grid", list(self.n_grid.iter().map(u32::to_string).collect())),
            ("faults", "bits", list(self.bits.iter().map(BitPolicy::to_string).collect())),
        ];
        if let Some(s) = &self.filters.opcodes {
            e.push(("faults", "opcodes", list(s.iter().map(|o| o.mnemonic().to_string()).collect())));
        }
        if let Some(s) = &self.filters.operators {
            e.push(("faults", "operators", list(s.iter().map(|o| o.name().to_string()).collect())));
        }
        if let Some(s) = &self.filters.layers {
            e.push(("faults", "layers", list(s.iter().map(u8::to_string).collect())));
        }
        e.extend([
            ("campaign", "trials", self.trials.to_string()),
            ("campaign", "repeats", self.repeats.to_string()),
            ("campaign", "seed", self.seed.to_string()),
            ("campaign", "workers", self.workers.to_string()),
            ("campaign", "hang_multiplier", self.hang_multiplier.to_string()),
            ("campaign", "exhaustive_cap", self.exhaustive_cap.to_string()),
            ("output", "dir", quoted(&self.out_dir.to_string_lossy())),
        ]);
        e
    }

    /// Canonical text; parsing it gives back this configuration.
    pub fn to_text(&self) -> String {
        render(self.entries())
    }

    /// Canonical text without `workers` and the output directory, which do
    /// not change results. Parsing it re-runs the identical campaign.
    pub fn canonical_text(&self) -> String {
        render(self.entries().into_iter().filter(|(_, k, _)| !NEUTRAL_KEYS.contains(k)).collect())
    }

    /// Digest of the canonical text.
    pub fn digest(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_text().as_bytes()))
    }
}

/// Keys that never change results.
const NEUTRAL_KEYS: [&str; 2] = ["workers", "dir"];

fn render(entries: Vec<(&'static str, &'static str, String)>) -> String {
    let mut out = String::new();
    let mut current = "";
    for (s, k, v) in entries {
        if s != current {
            if !current.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{s}]\n"));
            current = s;
        }
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

/// `dotN` and `absN` fixtures, N in 1..=8.
fn fixture(name: &str) -> Option<Program> {
    let n = |rest: &str| rest.parse::<usize>().ok().filter(|n| (1..=8).contains(n));
    if let Some(k) = name.strip_prefix("dot").and_then(n) {
        return Some(dot_product(k));
    }
    name.strip_prefix("abs").and_then(n).map(abs_product)
}

fn model_layers(name: &str) -> Option<u8> {
    if fixture(name).is_some() {
        return Some(1);
    }
    preset(name).ok().map(|c| c.layers as u8)
}
