//! Fault-free reference execution and its persisted form.

use std::collections::BTreeMap;
use std::path::Path;

use bitstorm_isa::machine::TRACE_SKIPPED;
use bitstorm_isa::{run, NoHook, Opcode, OperatorKind, OperatorTag, Program, RunConfig, SnapshotRecord};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

pub const GOLDEN_MAGIC: &[u8; 4] = b"BFGT";
pub const GOLDEN_VERSION: u16 = 1;
pub const GOLDEN_SCHEMA: &str = "bitstorm.golden/1";

/// Everything recorded from the fault-free run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldenTrace {
    pub program_digest: u64,
    pub tokens: Vec<u32>,
    /// fp32 logits rows as bit patterns.
    pub logits: Vec<Vec<u32>>,
    /// Raw bytes of the program's output region.
    pub output: Vec<u8>,
    pub snapshots: Vec<SnapshotRecord>,
    pub dyn_count: u64,
    pub histogram: [u64; 32],
    /// pc of each dynamic instruction, [`TRACE_SKIPPED`] set when the guard
    /// was false.
    pub trace: Vec<u32>,
}

impl GoldenTrace {
    /// Dynamic share of each opcode, indexed by ordinal.
    pub fn proportions(&self) -> [f64; 32] {
        let mut p = [0.0; 32];
        if self.dyn_count > 0 {
            for (i, &c) in self.histogram.iter().enumerate() {
                p[i] = c as f64 / self.dyn_count as f64;
            }
        }
        p
    }

    pub fn pc_at(&self, dyn_index: u64) -> u32 {
        self.trace[dyn_index as usize] & !TRACE_SKIPPED
    }

    pub fn skipped_at(&self, dyn_index: u64) -> bool {
        self.trace[dyn_index as usize] & TRACE_SKIPPED != 0
    }

    /// Dynamic count per operator kind.
    pub fn operator_histogram(&self, program: &Program) -> BTreeMap<OperatorKind, u64> {
        let code = program.decoded();
        let mut h = BTreeMap::new();
        for &e in &self.trace {
            *h.entry(code[(e & !TRACE_SKIPPED) as usize].tag.kind).or_insert(0) += 1;
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(GOLDEN_MAGIC);
        b.extend_from_slice(&GOLDEN_VERSION.to_le_bytes());
        let u32s = |b: &mut Vec<u8>, v: &[u32]| {
            b.extend_from_slice(&(v.len() as u32).to_le_bytes());
            for x in v {
                b.extend_from_slice(&x.to_le_bytes());
            }
        };
        b.extend_from_slice(&self.program_digest.to_le_bytes());
        b.extend_from_slice(&self.dyn_count.to_le_bytes());
        for c in self.histogram {
            b.extend_from_slice(&c.to_le_bytes());
        }
        u32s(&mut b, &self.tokens);
        b.extend_from_slice(&(self.logits.len() as u32).to_le_bytes());
        for row in &self.logits {
            u32s(&mut b, row);
        }
        b.extend_from_slice(&(self.output.len() as u32).to_le_bytes());
        b.extend_from_slice(&self.output);
        b.extend_from_slice(&(self.snapshots.len() as u32).to_le_bytes());
        for s in &self.snapshots {
            b.push(OperatorKind::ALL.iter().position(|k| *k == s.tag.kind).unwrap() as u8);
            b.push(s.tag.layer.unwrap_or(0xff));
            b.extend_from_slice(&s.pc.to_le_bytes());
            b.extend_from_slice(&s.dyn_count.to_le_bytes());
            b.extend_from_slice(&s.digest.to_le_bytes());
            let bytes = s.bytes.as_deref().unwrap_or(&[]);
            b.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            b.extend_from_slice(bytes);
        }
        u32s(&mut b, &self.trace);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<GoldenTrace> {
        let mut r = Cursor { b: bytes, pos: 0 };
        if r.take(4)? != GOLDEN_MAGIC {
            return Err(ForgeError::Container("bad magic".into()));
        }
        let v = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if v != GOLDEN_VERSION {
            return Err(ForgeError::Container(format!("unsupported version {v}")));
        }
        let program_digest = r.u64()?;
        let dyn_count = r.u64()?;
        let mut histogram = [0u64; 32];
        for h in histogram.iter_mut() {
            *h = r.u64()?;
        }
        let tokens = r.u32s()?;
        let n = r.u32()?;
        let logits = (0..n).map(|_| r.u32s()).collect::<Result<Vec<_>>>()?;
        let n = r.u32()? as usize;
        let output = r.take(n)?.to_vec();
        let n = r.u32()?;
        let mut snapshots = Vec::new();
        for _ in 0..n {
            let kind = r.take(1)?[0];
            let kind = *OperatorKind::ALL
                .get(kind as usize)
                .ok_or_else(|| ForgeError::Container(format!("bad operator kind {kind}")))?;
            let layer = match r.take(1)?[0] {
                0xff => None,
                l => Some(l),
            };
            let pc = r.u32()?;
            let dc = r.u64()?;
            let digest = r.u64()?;
            let len = r.u32()? as usize;
            let data = r.take(len)?.to_vec();
            snapshots.push(SnapshotRecord {
                tag: OperatorTag::new(kind, layer),
                pc,
                dyn_count: dc,
                digest,
                bytes: Some(data),
            });
        }
        let trace = r.u32s()?;
        if r.pos != bytes.len() {
            return Err(ForgeError::Container("trailing bytes".into()));
        }
        Ok(GoldenTrace { program_digest, tokens, logits, output, snapshots, dyn_count, histogram, trace })
    }

    pub fn sidecar(&self, program: &Program) -> GoldenSidecar {
        let p = self.proportions();
        let mut histogram = BTreeMap::new();
        let mut proportions = BTreeMap::new();
        for op in Opcode::all() {
            let i = op.ordinal() as usize;
            if self.histogram[i] > 0 {
                histogram.insert(op.mnemonic().to_string(), self.histogram[i]);
                proportions.insert(op.mnemonic().to_string(), p[i]);
            }
        }
        GoldenSidecar {
            schema: GOLDEN_SCHEMA.to_string(),
            program: program.name.clone(),
            program_digest: format!("{:016x}", self.program_digest),
            static_instructions: program.len(),
            dyn_count: self.dyn_count,
            histogram,
            proportions,
            tokens: self.tokens.clone(),
            snapshots: self
                .snapshots
                .iter()
                .map(|s| SnapshotDigest { operator: s.tag.to_string(), digest: format!("{:016x}", s.digest) })
                .collect(),
        }
    }

    /// Writes `golden.bfgt` and `golden.json` into `dir`.
    pub fn save(&self, program: &Program, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("golden.bfgt"), self.to_bytes())?;
        let mut json = serde_json::to_string_pretty(&self.sidecar(program))?;
        json.push('\n');
        std::fs::write(dir.join("golden.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<GoldenTrace> {
        GoldenTrace::from_bytes(&std::fs::read(dir.join("golden.bfgt"))?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDigest {
    pub operator: String,
    pub digest: String,
}

/// Human-readable summary written next to the binary trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenSidecar {
    pub schema: String,
    pub program: String,
    pub program_digest: String,
    pub static_instructions: usize,
    pub dyn_count: u64,
    pub histogram: BTreeMap<String, u64>,
    pub proportions: BTreeMap<String, f64>,
    pub tokens: Vec<u32>,
    pub snapshots: Vec<SnapshotDigest>,
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.b.len())
            .ok_or_else(|| ForgeError::Container(format!("truncated at byte {}", self.pos)))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.u32()? as usize;
        if n > self.b.len() {
            return Err(ForgeError::Container("length exceeds container".into()));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

/// Reads the output region as little-endian u32 tokens.
pub fn output_tokens(bytes: &[u8]) -> Vec<u32> {
    bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()
}

/// Runs `program` fault-free and records its trace.
pub fn golden_run(program: &Program) -> Result<GoldenTrace> {
    program.validate()?;
    let cfg = RunConfig { max_dyn: u64::MAX, snapshot_bytes: true, record_trace: true };
    let res = run(program, cfg, &mut NoHook);
    if let Some(t) = res.trap() {
        return Err(ForgeError::GoldenTrapped(t));
    }
    let lay = &program.layout;
    let out = &lay.output;
    let output = res.state.global[out.offset as usize..out.end() as usize].to_vec();
    let logits = match lay.logits {
        Some(l) => (0..l.rows)
            .map(|row| {
                let start = (l.offset + row * l.cols * 4) as usize;
                output_tokens(&res.state.global[start..start + l.cols as usize * 4])
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(GoldenTrace {
        program_digest: program.digest(),
        tokens: output_tokens(&output),
        logits,
        output,
        snapshots: res.snapshots,
        dyn_count: res.state.dyn_count,
        histogram: res.histogram,
        trace: res.trace.unwrap_or_default(),
    })
}
