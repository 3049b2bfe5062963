//! Lowering of greedy decoding to an ISA program.
//!
//! Memory map. Global: weights (binary16, matrices `[out][in]` so each
//! output column reads consecutive packed pairs), the key/value cache
//! `[layer][position][HS]` fp32, the logits rows, and the token sequence as
//! u32 words (the generated tail of which is the program output). Shared:
//! the fp32 residual stream `X`, packed normalized activations `A`, query
//! `Q`, sublayer output `Y`, MLP hidden `F` (and `U` for the up
//! projection), packed MLP activations `B`, and attention scores `S`.
//! Scalar constants sit in the constant bank.
//!
//! Positions run in a real loop; layers, heads and short vectors are
//! unrolled. Every instruction carries the tag of the operator it belongs
//! to, and a SNAPSHOT follows each operator.

use bitstorm_isa::program::{MAX_INSTRUCTIONS, MAX_SEGMENT_BYTES};
use bitstorm_isa::{
    CmpOp, Dest, Guard, InitSegment, Instruction, LogitsRegion, MemWidth, MemoryLayout, Opcode, Operand, OperatorKind,
    OperatorTag, Program, Region, SnapshotRegion, Space, PT, RZ,
};

use crate::config::{MlpKind, NormKind};
use crate::error::{ForgeError, Result};
use crate::reference::{schedule, Consts};
use crate::weights::{ModelWeights, NormParams};

pub const REG_BUDGET: u8 = 128;

/// Position counter.
const T: u8 = 0;
/// Position counter plus one, the number of cached rows.
const N: u8 = 1;
/// Number of positions to run.
const NPOS: u8 = 15;
/// First of 64 vector registers.
const V: u8 = 16;
/// Largest number of activation pairs held in registers by one GEMM pass.
const GEMM_CHUNK: u32 = 32;

// constant bank offsets
const C_NPOS: u32 = 0;
const C_LAST_PROMPT: u32 = 4;
const C_INV_HS: u32 = 8;
const C_EPS: u32 = 12;
const C_SCALE: u32 = 16;
const C_LOG2E: u32 = 20;
const C_GELU_K: u32 = 24;
const C_NEG_LOG2E: u32 = 28;
const C_ONE: u32 = 32;
const C_NEG_INF: u32 = 36;

const SIGN: u32 = 0x8000_0000;
/// LOP3 table for `a ^ b`.
const LUT_XOR: u8 = 0x3c;

fn r(x: u8) -> Operand {
    Operand::Reg(x)
}

fn imm(v: u32) -> Operand {
    Operand::Imm(v)
}

fn cb(off: u32) -> Operand {
    Operand::Const(off)
}

const RZO: Operand = Operand::Reg(RZ);
const NONE: Operand = Operand::None;

struct Asm {
    code: Vec<Instruction>,
    tag: OperatorTag,
}

impl Asm {
    fn push(&mut self, mut i: Instruction) -> u32 {
        i.tag = self.tag;
        self.code.push(i);
        self.code.len() as u32 - 1
    }

    fn here(&self) -> u32 {
        self.code.len() as u32
    }

    fn op(&mut self, op: Opcode, d: u8, a: Operand, b: Operand, c: Operand) {
        let mut i = Instruction::new(op);
        i.dest = Dest::Reg(d);
        i.srcs = [a, b, c];
        self.push(i);
    }

    fn op1(&mut self, op: Opcode, d: u8, a: Operand) {
        self.op(op, d, a, NONE, NONE);
    }

    fn op2(&mut self, op: Opcode, d: u8, a: Operand, b: Operand) {
        self.op(op, d, a, b, NONE);
    }

    fn mov(&mut self, d: u8, a: Operand) {
        self.op1(Opcode::Mov, d, a);
    }

    fn add(&mut self, d: u8, a: u8, k: u32) {
        self.op(Opcode::Iadd3, d, r(a), imm(k), RZO);
    }

    fn lop3(&mut self, d: u8, a: Operand, b: Operand, c: Operand, lut: u8) {
        let mut i = Instruction::new(Opcode::Lop3);
        i.dest = Dest::Reg(d);
        i.srcs = [a, b, c];
        i.lut = Some(lut);
        self.push(i);
    }

    fn lea(&mut self, d: u8, a: u8, b: u32, shift: u8) {
        let mut i = Instruction::new(Opcode::Lea);
        i.dest = Dest::Reg(d);
        i.srcs = [r(a), imm(b), NONE];
        i.shift = Some(shift);
        self.push(i);
    }

    fn sel(&mut self, d: u8, a: Operand, b: Operand, p: u8) {
        self.op(Opcode::Sel, d, a, b, Operand::Pred(p));
    }

    fn setp(&mut self, op: Opcode, p: u8, cmp: CmpOp, a: Operand, b: Operand) {
        let mut i = Instruction::new(op);
        i.dest = Dest::Pred(p);
        i.cmp = Some(cmp);
        i.srcs = [a, b, NONE];
        self.push(i);
    }

    fn load(&mut self, op: Opcode, d: u8, base: u8, off: u32) {
        let mut i = Instruction::new(op);
        i.dest = Dest::Reg(d);
        i.srcs[0] = r(base);
        i.mem_width = Some(MemWidth::W32);
        i.mem_offset = off as i32;
        self.push(i);
    }

    fn store(&mut self, op: Opcode, base: u8, off: u32, val: u8) {
        let mut i = Instruction::new(op);
        i.srcs = [r(base), r(val), NONE];
        i.mem_width = Some(MemWidth::W32);
        i.mem_offset = off as i32;
        self.push(i);
    }

    fn lds(&mut self, d: u8, off: u32) {
        self.load(Opcode::Lds, d, RZ, off);
    }

    fn sts(&mut self, off: u32, val: u8) {
        self.store(Opcode::Sts, RZ, off, val);
    }

    fn bra_if(&mut self, pred: u8, target: u32) -> u32 {
        let mut i = Instruction::new(Opcode::Bra);
        i.branch_target = Some(target);
        i.guard = (pred != PT).then_some(Guard { pred, negate: false });
        self.push(i)
    }

    /// Counted loop tail: `ctr += 1; if ctr < bound goto top`.
    fn loop_back(&mut self, ctr: u8, bound: Operand, top: u32) {
        self.add(ctr, ctr, 1);
        self.setp(Opcode::Isetp, 0, CmpOp::Lt, r(ctr), bound);
        self.bra_if(0, top);
    }

    fn snapshot(&mut self, space: Space, offset: u32, len: u32) {
        let mut i = Instruction::new(Opcode::Snapshot);
        i.snapshot = Some(SnapshotRegion { space, offset, len });
        self.push(i);
    }
}

#[derive(Clone, Copy)]
struct NormAt {
    gain: u32,
    bias: u32,
}

struct LayerAt {
    attn_norm: NormAt,
    attn_post: Option<NormAt>,
    wq: u32,
    wk: u32,
    wv: u32,
    wo: u32,
    mlp_norm: NormAt,
    mlp_post: Option<NormAt>,
    w1: u32,
    w3: Option<u32>,
    w2: u32,
    k_cache: u32,
    v_cache: u32,
}

struct Shared {
    x: u32,
    a: u32,
    q: u32,
    y: u32,
    f: u32,
    u: u32,
    b: u32,
    s: u32,
}

/// Destination of GEMM outputs: a fixed shared buffer or a global address
/// held in a register.
#[derive(Clone, Copy)]
enum Out {
    Shared(u32),
    GlobalAt(u8),
}

struct Lowering<'a> {
    m: &'a ModelWeights,
    asm: Asm,
    norm: NormKind,
    hs: u32,
    sh: Shared,
}

impl Lowering<'_> {
    fn tag(&mut self, kind: OperatorKind, layer: Option<u32>) {
        self.asm.tag = OperatorTag::new(kind, layer.map(|l| l as u8));
    }

    /// `out[j] = sum_k a[k] * W[j][k]` over packed pairs, `k_pairs` pairs in
    /// shared memory at `a`, weights at global `w`.
    fn gemm(&mut self, a: u32, k_pairs: u32, w: u32, n_out: u32, out: Out) {
        let (j, wptr, optr, acc, wreg) = (10, 11, 12, 13, 14);
        let chunks = k_pairs.div_ceil(GEMM_CHUNK);
        for c in 0..chunks {
            let k0 = c * GEMM_CHUNK;
            let kc = GEMM_CHUNK.min(k_pairs - k0);
            let asm = &mut self.asm;
            for k in 0..kc {
                asm.lds(V + k as u8, a + (k0 + k) * 4);
            }
            asm.mov(j, RZO);
            asm.mov(wptr, imm(w + k0 * 4));
            let (ld, st) = match out {
                Out::Shared(off) => {
                    asm.mov(optr, imm(off));
                    (Opcode::Lds, Opcode::Sts)
                }
                Out::GlobalAt(reg) => {
                    asm.mov(optr, r(reg));
                    (Opcode::Ldg, Opcode::Stg)
                }
            };
            let top = asm.here();
            if c == 0 {
                asm.mov(acc, RZO);
            } else {
                asm.load(ld, acc, optr, 0);
            }
            for k in 0..kc {
                asm.load(Opcode::Ldg, wreg, wptr, k * 4);
                asm.op(Opcode::HmmaStep, acc, r(V + k as u8), r(wreg), r(acc));
            }
            asm.store(st, optr, 0, acc);
            asm.add(wptr, wptr, k_pairs * 4);
            asm.add(optr, optr, 4);
            asm.loop_back(j, imm(n_out), top);
        }
    }

    /// Normalizes the fp32 vector at shared `input` into packed pairs at `A`.
    fn norm(&mut self, input: u32, p: NormAt, layer: Option<u32>) {
        self.tag(OperatorKind::Norm, layer);
        let hs = self.hs as u8;
        let a_off = self.sh.a;
        let kind = self.norm;
        let asm = &mut self.asm;
        for i in 0..hs {
            asm.lds(V + i, input + i as u32 * 4);
        }
        let (sum, mean, neg_mean, acc, rs) = (2, 3, 4, 5, 6);
        if kind == NormKind::LayernormPrePost {
            asm.op2(Opcode::Fadd, sum, r(V), r(V + 1));
            for i in 2..hs {
                asm.op2(Opcode::Fadd, sum, r(sum), r(V + i));
            }
            asm.op2(Opcode::Fmul, mean, r(sum), cb(C_INV_HS));
            asm.lop3(neg_mean, r(mean), imm(SIGN), RZO, LUT_XOR);
            for i in 0..hs {
                asm.op2(Opcode::Fadd, V + i, r(V + i), r(neg_mean));
            }
        }
        asm.op(Opcode::Ffma, acc, r(V), r(V), RZO);
        for i in 1..hs {
            asm.op(Opcode::Ffma, acc, r(V + i), r(V + i), r(acc));
        }
        asm.op2(Opcode::Fmul, acc, r(acc), cb(C_INV_HS));
        asm.op2(Opcode::Fadd, acc, r(acc), cb(C_EPS));
        asm.op1(Opcode::MufuRsq, rs, r(acc));
        let (y0, y1, packed, g, b, o) = (7, 8, 9, 10, 11, 12);
        for k in 0..hs / 2 {
            let k32 = k as u32;
            asm.op2(Opcode::Fmul, y0, r(V + 2 * k), r(rs));
            asm.op2(Opcode::Fmul, y1, r(V + 2 * k + 1), r(rs));
            asm.op2(Opcode::F2h2, packed, r(y0), r(y1));
            asm.load(Opcode::Ldg, g, RZ, p.gain + k32 * 4);
            match kind {
                NormKind::LayernormPrePost => {
                    asm.load(Opcode::Ldg, b, RZ, p.bias + k32 * 4);
                    asm.op(Opcode::Hfma2, o, r(packed), r(g), r(b));
                }
                NormKind::RmsnormPre => asm.op2(Opcode::Hmul2, o, r(packed), r(g)),
            }
            asm.sts(a_off + k32 * 4, o);
        }
        asm.snapshot(Space::Shared, a_off, self.hs * 2);
    }

    fn embedding(&mut self, tok_emb: u32, pos_emb: u32, seq: u32) {
        self.tag(OperatorKind::Embedding, None);
        let row_bytes = self.hs * 2;
        let x = self.sh.x;
        let asm = &mut self.asm;
        let (addr, tok, trow, prow, a, b, s, lo, hi) = (2, 3, 4, 5, 6, 7, 8, 9, 10);
        asm.lea(addr, T, seq, 2);
        asm.load(Opcode::Ldg, tok, addr, 0);
        asm.op(Opcode::Imad, trow, r(tok), imm(row_bytes), imm(tok_emb));
        asm.op(Opcode::Imad, prow, r(T), imm(row_bytes), imm(pos_emb));
        for k in 0..self.hs / 2 {
            asm.load(Opcode::Ldg, a, trow, k * 4);
            asm.load(Opcode::Ldg, b, prow, k * 4);
            asm.op2(Opcode::Hadd2, s, r(a), r(b));
            asm.op1(Opcode::H2fLo, lo, r(s));
            asm.op1(Opcode::H2fHi, hi, r(s));
            asm.sts(x + k * 8, lo);
            asm.sts(x + k * 8 + 4, hi);
        }
        asm.snapshot(Space::Shared, x, self.hs * 4);
    }

    fn attention(&mut self, l: u32, at: &LayerAt) {
        self.tag(OperatorKind::Attention, Some(l));
        let hs = self.hs;
        let heads = self.m.config.heads;
        let dh = hs / heads;
        let Shared { a, q, y, s: s_off, .. } = self.sh;
        self.gemm(a, hs / 2, at.wq, hs, Out::Shared(q));
        for (w, cache) in [(at.wk, at.k_cache), (at.wv, at.v_cache)] {
            self.asm.op(Opcode::Imad, 2, r(T), imm(hs * 4), imm(cache));
            self.gemm(a, hs / 2, w, hs, Out::GlobalAt(2));
        }
        let (vptr, m, neg_m, sum, inv, e, s, kptr, sptr, sc, kd) = (4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14);
        let asm = &mut self.asm;
        for h in 0..heads {
            let col = h * dh;
            for d in 0..dh {
                asm.lds(V + d as u8, q + (col + d) * 4);
            }
            asm.mov(m, cb(C_NEG_INF));
            asm.mov(s, RZO);
            asm.mov(kptr, imm(at.k_cache + col * 4));
            asm.mov(sptr, imm(s_off));
            let top = asm.here();
            for d in 0..dh {
                asm.load(Opcode::Ldg, kd, kptr, d * 4);
                if d == 0 {
                    asm.op2(Opcode::Fmul, sc, r(V), r(kd));
                } else {
                    asm.op(Opcode::Ffma, sc, r(V + d as u8), r(kd), r(sc));
                }
            }
            asm.op2(Opcode::Fmul, sc, r(sc), cb(C_SCALE));
            asm.store(Opcode::Sts, sptr, 0, sc);
            asm.setp(Opcode::Fsetp, 0, CmpOp::Gt, r(sc), r(m));
            asm.sel(m, r(sc), r(m), 0);
            asm.add(kptr, kptr, hs * 4);
            asm.add(sptr, sptr, 4);
            asm.loop_back(s, r(N), top);

            asm.lop3(neg_m, r(m), imm(SIGN), RZO, LUT_XOR);
            asm.mov(sum, RZO);
            asm.mov(s, RZO);
            asm.mov(sptr, imm(s_off));
            let top = asm.here();
            asm.load(Opcode::Lds, e, sptr, 0);
            asm.op2(Opcode::Fadd, e, r(e), r(neg_m));
            asm.op2(Opcode::Fmul, e, r(e), cb(C_LOG2E));
            asm.op1(Opcode::MufuEx2, e, r(e));
            asm.store(Opcode::Sts, sptr, 0, e);
            asm.op2(Opcode::Fadd, sum, r(sum), r(e));
            asm.add(sptr, sptr, 4);
            asm.loop_back(s, r(N), top);
            asm.op1(Opcode::MufuRcp, inv, r(sum));

            for d in 0..dh {
                asm.mov(V + d as u8, RZO);
            }
            asm.mov(s, RZO);
            asm.mov(sptr, imm(s_off));
            asm.mov(vptr, imm(at.v_cache + col * 4));
            let top = asm.here();
            asm.load(Opcode::Lds, e, sptr, 0);
            for d in 0..dh {
                asm.load(Opcode::Ldg, kd, vptr, d * 4);
                asm.op(Opcode::Ffma, V + d as u8, r(e), r(kd), r(V + d as u8));
            }
            asm.add(vptr, vptr, hs * 4);
            asm.add(sptr, sptr, 4);
            asm.loop_back(s, r(N), top);
            for k in 0..dh / 2 {
                let (v0, v1) = (V + 2 * k as u8, V + 2 * k as u8 + 1);
                asm.op2(Opcode::Fmul, v0, r(v0), r(inv));
                asm.op2(Opcode::Fmul, v1, r(v1), r(inv));
                asm.op2(Opcode::F2h2, e, r(v0), r(v1));
                asm.sts(a + (col / 2 + k) * 4, e);
            }
        }
        self.gemm(a, hs / 2, at.wo, hs, Out::Shared(y));
        self.asm.snapshot(Space::Shared, y, hs * 4);
    }

    fn mlp(&mut self, l: u32, at: &LayerAt) {
        self.tag(OperatorKind::Mlp, Some(l));
        let hs = self.hs;
        let ff = self.m.config.ffn();
        let Shared { a, f, u, b, y, .. } = self.sh;
        self.gemm(a, hs / 2, at.w1, ff, Out::Shared(f));
        if let Some(w3) = at.w3 {
            self.gemm(a, hs / 2, w3, ff, Out::Shared(u));
        }
        let gated = at.w3.is_some();
        let asm = &mut self.asm;
        let (x, t, packed, up) = (2, 3, 6, 7);
        for k in 0..ff / 2 {
            for e in 0..2u32 {
                let i = 2 * k + e;
                let dst = 4 + e as u8;
                asm.lds(x, f + i * 4);
                let kconst = if gated { C_NEG_LOG2E } else { C_GELU_K };
                asm.op2(Opcode::Fmul, t, r(x), cb(kconst));
                asm.op1(Opcode::MufuEx2, t, r(t));
                asm.op2(Opcode::Fadd, t, r(t), cb(C_ONE));
                asm.op1(Opcode::MufuRcp, t, r(t));
                if gated {
                    asm.lds(up, u + i * 4);
                    asm.op2(Opcode::Fmul, t, r(x), r(t));
                    asm.op2(Opcode::Fmul, dst, r(t), r(up));
                } else {
                    asm.op2(Opcode::Fmul, dst, r(x), r(t));
                }
            }
            asm.op2(Opcode::F2h2, packed, r(4), r(5));
            asm.sts(b + k * 4, packed);
        }
        self.gemm(b, ff / 2, at.w2, hs, Out::Shared(y));
        self.asm.snapshot(Space::Shared, y, hs * 4);
    }

    /// Adds `Y` into the residual stream `X`, through the post norm if any.
    fn residual(&mut self, l: u32, post: Option<NormAt>) {
        let Shared { x, y, a, .. } = self.sh;
        let hs = self.hs;
        if let Some(p) = post {
            self.norm(y, p, Some(l));
        }
        self.tag(OperatorKind::Other, Some(l));
        let asm = &mut self.asm;
        match post {
            Some(_) => {
                let (w, lo, hi, x0, x1) = (2, 3, 4, 5, 6);
                for k in 0..hs / 2 {
                    asm.lds(w, a + k * 4);
                    asm.op1(Opcode::H2fLo, lo, r(w));
                    asm.op1(Opcode::H2fHi, hi, r(w));
                    asm.lds(x0, x + k * 8);
                    asm.lds(x1, x + k * 8 + 4);
                    asm.op2(Opcode::Fadd, x0, r(x0), r(lo));
                    asm.op2(Opcode::Fadd, x1, r(x1), r(hi));
                    asm.sts(x + k * 8, x0);
                    asm.sts(x + k * 8 + 4, x1);
                }
            }
            None => {
                for i in 0..hs {
                    asm.lds(2, x + i * 4);
                    asm.lds(3, y + i * 4);
                    asm.op2(Opcode::Fadd, 2, r(2), r(3));
                    asm.sts(x + i * 4, 2);
                }
            }
        }
        asm.snapshot(Space::Shared, x, hs * 4);
    }
}

struct GlobalAlloc {
    size: u32,
    bytes: Vec<u8>,
}

impl GlobalAlloc {
    /// Places initialized binary16 data, returns its byte offset.
    fn data(&mut self, v: &[u16]) -> u32 {
        let off = self.size;
        for h in v {
            self.bytes.extend_from_slice(&h.to_le_bytes());
        }
        self.size += v.len() as u32 * 2;
        self.align();
        off
    }

    fn norm(&mut self, p: &NormParams) -> NormAt {
        let gain = self.data(&p.gain);
        let bias = if p.bias.is_empty() { 0 } else { self.data(&p.bias) };
        NormAt { gain, bias }
    }

    fn align(&mut self) {
        while !self.size.is_multiple_of(4) {
            self.size += 1;
            self.bytes.push(0);
        }
    }

    fn reserve(&mut self, bytes: u64) -> Result<u32> {
        let off = self.size;
        let end = off as u64 + bytes;
        if end > MAX_SEGMENT_BYTES as u64 {
            return Err(ForgeError::ProgramTooLarge(format!(
                "global memory needs more than {MAX_SEGMENT_BYTES} bytes"
            )));
        }
        self.size = end as u32;
        self.align_size();
        Ok(off)
    }

    fn align_size(&mut self) {
        self.size = self.size.div_ceil(4) * 4;
    }
}

/// Lowers greedy decoding of `gen_steps` tokens after `prompt`.
pub fn lower(m: &ModelWeights, prompt: &[u32], gen_steps: u32) -> Result<Program> {
    let cfg = &m.config;
    cfg.validate_request(prompt, gen_steps)?;
    let hs = cfg.hidden;
    let ff = cfg.ffn();
    let vs = cfg.vocab;
    let p_len = prompt.len() as u32;
    let (positions, rows) = schedule(prompt.len(), gen_steps);

    let mut g = GlobalAlloc { size: 0, bytes: Vec::new() };
    let tok_emb = g.data(&m.tok_emb);
    let pos_emb = g.data(&m.pos_emb);
    let mut layers_at = Vec::new();
    for lw in &m.layers {
        let attn_norm = g.norm(&lw.attn_norm);
        let attn_post = lw.attn_post_norm.as_ref().map(|p| g.norm(p));
        let wq = g.data(&lw.wq);
        let wk = g.data(&lw.wk);
        let wv = g.data(&lw.wv);
        let wo = g.data(&lw.wo);
        let mlp_norm = g.norm(&lw.mlp_norm);
        let mlp_post = lw.mlp_post_norm.as_ref().map(|p| g.norm(p));
        let w1 = g.data(&lw.w1);
        let w3 = lw.w3.as_ref().map(|w| g.data(w));
        let w2 = g.data(&lw.w2);
        layers_at.push(LayerAt {
            attn_norm,
            attn_post,
            wq,
            wk,
            wv,
            wo,
            mlp_norm,
            mlp_post,
            w1,
            w3,
            w2,
            k_cache: 0,
            v_cache: 0,
        });
    }
    let final_norm = g.norm(&m.final_norm);
    let lm_head = g.data(&m.lm_head);
    let weight_bytes = std::mem::take(&mut g.bytes);

    let cache_bytes = cfg.context as u64 * hs as u64 * 4;
    let kv_start = g.size;
    for at in layers_at.iter_mut() {
        at.k_cache = g.reserve(cache_bytes)?;
        at.v_cache = g.reserve(cache_bytes)?;
    }
    let kv_len = g.size - kv_start;
    let logits_off = g.reserve(rows as u64 * vs as u64 * 4)?;
    let seq = g.reserve(cfg.context as u64 * 4)?;
    let global_size = g.size.div_ceil(256) * 256;

    let mut shared_size = 0u32;
    let mut sh_alloc = |bytes: u32| {
        let off = shared_size;
        shared_size += bytes.div_ceil(4) * 4;
        off
    };
    let sh = Shared {
        x: sh_alloc(hs * 4),
        a: sh_alloc(hs * 2),
        q: sh_alloc(hs * 4),
        y: sh_alloc(hs * 4),
        f: sh_alloc(ff * 4),
        u: if cfg.mlp == MlpKind::SiluGated { sh_alloc(ff * 4) } else { 0 },
        b: sh_alloc(ff * 2),
        s: sh_alloc(cfg.context * 4),
    };

    let c = Consts::new(cfg);
    let consts =
        [positions as u32, p_len - 1, c.inv_hs, c.eps, c.attn_scale, c.log2e, c.gelu_k, c.neg_log2e, c.one, c.neg_inf];
    let const_bank: Vec<u8> = consts.iter().flat_map(|v| v.to_le_bytes()).collect();

    let mut lw = Lowering { m, asm: Asm { code: Vec::new(), tag: OperatorTag::OTHER }, norm: cfg.norm, hs, sh };
    lw.asm.load(Opcode::Ldc, NPOS, RZ, C_NPOS);
    lw.asm.mov(T, RZO);
    lw.asm.mov(N, imm(1));
    let top = lw.asm.here();
    lw.embedding(tok_emb, pos_emb, seq);
    for (l, at) in layers_at.iter().enumerate() {
        let l = l as u32;
        lw.norm(lw.sh.x, at.attn_norm, Some(l));
        lw.attention(l, at);
        lw.residual(l, at.attn_post);
        lw.norm(lw.sh.x, at.mlp_norm, Some(l));
        lw.mlp(l, at);
        lw.residual(l, at.mlp_post);
    }

    lw.tag(OperatorKind::Other, None);
    lw.asm.setp(Opcode::Isetp, 1, CmpOp::Lt, r(T), cb(C_LAST_PROMPT));
    let skip = lw.asm.bra_if(1, 0);
    lw.norm(lw.sh.x, final_norm, None);
    lw.tag(OperatorKind::LmHead, None);
    let row = 2;
    lw.asm.op(Opcode::Iadd3, row, r(T), imm((p_len - 1).wrapping_neg()), RZO);
    lw.asm.op(Opcode::Imad, row, r(row), imm(vs * 4), imm(logits_off));
    lw.gemm(lw.sh.a, hs / 2, lm_head, vs, Out::GlobalAt(row));
    lw.asm.snapshot(Space::Global, logits_off, rows as u32 * vs * 4);
    if gen_steps > 0 {
        let asm = &mut lw.asm;
        let (best, idx, i, ptr, v, addr) = (3, 4, 5, 6, 7, 8);
        asm.load(Opcode::Ldg, best, row, 0);
        asm.mov(idx, RZO);
        asm.mov(i, imm(1));
        asm.add(ptr, row, 4);
        let scan = asm.here();
        asm.load(Opcode::Ldg, v, ptr, 0);
        asm.setp(Opcode::Fsetp, 0, CmpOp::Gt, r(v), r(best));
        asm.sel(best, r(v), r(best), 0);
        asm.sel(idx, r(i), r(idx), 0);
        asm.add(ptr, ptr, 4);
        asm.add(i, i, 1);
        asm.setp(Opcode::Isetp, 2, CmpOp::Lt, r(i), imm(vs));
        asm.bra_if(2, scan);
        asm.lea(addr, T, seq + 4, 2);
        asm.store(Opcode::Stg, addr, 0, idx);
        asm.snapshot(Space::Global, seq + p_len * 4, gen_steps * 4);
    }
    lw.tag(OperatorKind::Other, None);
    let after = lw.asm.here();
    lw.asm.code[skip as usize].branch_target = Some(after);
    lw.asm.add(T, T, 1);
    lw.asm.add(N, N, 1);
    lw.asm.setp(Opcode::Isetp, 3, CmpOp::Lt, r(T), r(NPOS));
    lw.asm.bra_if(3, top);
    lw.asm.push(Instruction::new(Opcode::Exit));

    let code = lw.asm.code;
    if code.len() > MAX_INSTRUCTIONS {
        return Err(ForgeError::ProgramTooLarge(format!(
            "{} instructions exceed the cap of {MAX_INSTRUCTIONS}",
            code.len()
        )));
    }
    let prompt_bytes: Vec<u8> = prompt.iter().flat_map(|t| t.to_le_bytes()).collect();
    let layout = MemoryLayout {
        global_size,
        shared_size,
        output: Region::global(seq + p_len * 4, gen_steps * 4),
        logits: Some(LogitsRegion { offset: logits_off, rows: rows as u32, cols: vs }),
        kv_cache: Some(Region::global(kv_start, kv_len)),
    };
    let init = vec![
        InitSegment { space: Space::Global, offset: 0, bytes: weight_bytes },
        InitSegment { space: Space::Global, offset: seq, bytes: prompt_bytes },
    ];
    let program = Program::from_instructions(cfg.name.clone(), &code, const_bank, layout, init, REG_BUDGET);
    program.validate()?;
    Ok(program)
}
