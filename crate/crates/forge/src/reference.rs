//! Bit-exact reference evaluator.
//!
//! Computes the same arithmetic as the lowered program, operation for
//! operation, through the interpreter's floating-point primitives. All values
//! are raw bit patterns: fp32 activations as `u32`, packed fp16 pairs as
//! `u32` with element `2k` in the low half.

use bitstorm_isa::fp;
use bitstorm_isa::{OperatorKind, OperatorTag};

use crate::config::{MlpKind, ModelConfig, NormKind};
use crate::error::Result;
use crate::weights::{ModelWeights, NormParams};

pub const LN_EPS: f32 = 1e-5;

/// Scalar constants shared by the lowering and the reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Consts {
    pub inv_hs: u32,
    pub eps: u32,
    pub attn_scale: u32,
    pub log2e: u32,
    /// `-1.702 * log2(e)`, the sigmoid prescale of the GELU approximation.
    pub gelu_k: u32,
    pub neg_log2e: u32,
    pub one: u32,
    pub neg_inf: u32,
}

impl Consts {
    pub fn new(c: &ModelConfig) -> Self {
        Consts {
            inv_hs: ((1.0 / c.hidden as f64) as f32).to_bits(),
            eps: LN_EPS.to_bits(),
            attn_scale: ((1.0 / (c.head_dim() as f64).sqrt()) as f32).to_bits(),
            log2e: std::f32::consts::LOG2_E.to_bits(),
            gelu_k: ((-1.702 * std::f64::consts::LOG2_E) as f32).to_bits(),
            neg_log2e: (-std::f32::consts::LOG2_E).to_bits(),
            one: 1f32.to_bits(),
            neg_inf: f32::NEG_INFINITY.to_bits(),
        }
    }
}

pub(crate) fn pair(w: &[u16], k: usize) -> u32 {
    w[2 * k] as u32 | (w[2 * k + 1] as u32) << 16
}

/// Output `j` is `hmma_step` folded over the pairs of row `j`, from +0.0.
pub fn gemm(a: &[u32], w: &[u16], n_out: usize) -> Vec<u32> {
    let k_pairs = a.len();
    (0..n_out)
        .map(|j| {
            let row = &w[j * 2 * k_pairs..(j + 1) * 2 * k_pairs];
            (0..k_pairs).fold(0u32, |acc, k| fp::hmma_step(a[k], pair(row, k), acc))
        })
        .collect()
}

pub fn embed(m: &ModelWeights, tok: u32, pos: u32) -> Vec<u32> {
    let hs = m.config.hidden as usize;
    let trow = &m.tok_emb[tok as usize * hs..][..hs];
    let prow = &m.pos_emb[pos as usize * hs..][..hs];
    let mut x = Vec::with_capacity(hs);
    for k in 0..hs / 2 {
        let s = fp::hadd2(pair(trow, k), pair(prow, k));
        x.push(fp::h2f_lo(s));
        x.push(fp::h2f_hi(s));
    }
    x
}

/// Normalizes `x` and returns packed fp16 pairs.
pub fn norm(kind: NormKind, x: &[u32], p: &NormParams, c: &Consts) -> Vec<u32> {
    let (vals, r) = match kind {
        NormKind::LayernormPrePost => {
            let sum = x[1..].iter().fold(x[0], |s, &v| fp::fadd(s, v));
            let mean = fp::fmul(sum, c.inv_hs);
            let neg_mean = mean ^ 0x8000_0000;
            let d: Vec<u32> = x.iter().map(|&v| fp::fadd(v, neg_mean)).collect();
            let acc = d.iter().fold(0u32, |a, &v| fp::ffma(v, v, a));
            (d, variance_rsq(acc, c))
        }
        NormKind::RmsnormPre => {
            let acc = x.iter().fold(0u32, |a, &v| fp::ffma(v, v, a));
            (x.to_vec(), variance_rsq(acc, c))
        }
    };
    (0..x.len() / 2)
        .map(|k| {
            let y0 = fp::fmul(vals[2 * k], r);
            let y1 = fp::fmul(vals[2 * k + 1], r);
            let packed = fp::f2h2(y0, y1);
            match kind {
                NormKind::LayernormPrePost => fp::hfma2(packed, pair(&p.gain, k), pair(&p.bias, k)),
                NormKind::RmsnormPre => fp::hmul2(packed, pair(&p.gain, k)),
            }
        })
        .collect()
}

fn variance_rsq(acc: u32, c: &Consts) -> u32 {
    let var = fp::fmul(acc, c.inv_hs);
    fp::rsq(fp::fadd(var, c.eps))
}

pub fn pack(v: &[u32]) -> Vec<u32> {
    v.chunks_exact(2).map(|p| fp::f2h2(p[0], p[1])).collect()
}

/// `x * sigmoid(z)` where `sigmoid(z) = 1 / (1 + 2^(x * k))`.
fn sigmoid_gate(x: u32, k: u32, c: &Consts) -> u32 {
    let e = fp::ex2(fp::fmul(x, k));
    let s = fp::rcp(fp::fadd(e, c.one));
    fp::fmul(x, s)
}

pub fn gelu(x: u32, c: &Consts) -> u32 {
    sigmoid_gate(x, c.gelu_k, c)
}

pub fn silu_gated(gate: u32, up: u32, c: &Consts) -> u32 {
    fp::fmul(sigmoid_gate(gate, c.neg_log2e, c), up)
}

/// First index of the strictly greatest value under ordered comparison.
pub fn argmax(row: &[u32]) -> u32 {
    let mut best = row[0];
    let mut idx = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if f32::from_bits(v) > f32::from_bits(best) {
            best = v;
            idx = i as u32;
        }
    }
    idx
}

/// Per-layer key/value rows, `[position][HS]` fp32.
#[derive(Clone, Debug, Default)]
pub struct KvCache {
    pub k: Vec<Vec<Vec<u32>>>,
    pub v: Vec<Vec<Vec<u32>>>,
}

impl KvCache {
    pub fn new(layers: usize) -> Self {
        KvCache { k: vec![Vec::new(); layers], v: vec![Vec::new(); layers] }
    }
}

/// Causal attention of one query against cached rows `0..=t`, all heads.
/// Returns the concatenated head outputs as packed pairs.
pub fn attend(q: &[u32], keys: &[Vec<u32>], values: &[Vec<u32>], heads: usize, c: &Consts) -> Vec<u32> {
    let hs = q.len();
    let dh = hs / heads;
    let mut out = Vec::with_capacity(hs / 2);
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        let mut m = c.neg_inf;
        let mut scores = Vec::with_capacity(keys.len());
        for krow in keys {
            let kh = &krow[h * dh..(h + 1) * dh];
            let mut s = fp::fmul(qh[0], kh[0]);
            for d in 1..dh {
                s = fp::ffma(qh[d], kh[d], s);
            }
            let s = fp::fmul(s, c.attn_scale);
            if f32::from_bits(s) > f32::from_bits(m) {
                m = s;
            }
            scores.push(s);
        }
        let neg_m = m ^ 0x8000_0000;
        let mut sum = 0u32;
        for s in scores.iter_mut() {
            *s = fp::ex2(fp::fmul(fp::fadd(*s, neg_m), c.log2e));
            sum = fp::fadd(sum, *s);
        }
        let inv = fp::rcp(sum);
        let mut o = vec![0u32; dh];
        for (e, vrow) in scores.iter().zip(values) {
            let vh = &vrow[h * dh..(h + 1) * dh];
            for d in 0..dh {
                o[d] = fp::ffma(*e, vh[d], o[d]);
            }
        }
        let o: Vec<u32> = o.iter().map(|&v| fp::fmul(v, inv)).collect();
        out.extend(pack(&o));
    }
    out
}

fn f32_bytes(v: &[u32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Result of a reference decode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceOutput {
    pub tokens: Vec<u32>,
    /// One fp32 row of `VS` logits per decoding step.
    pub logits: Vec<Vec<u32>>,
    /// Operator outputs in the order the lowered program snapshots them.
    pub activations: Vec<(OperatorTag, Vec<u8>)>,
}

/// Number of positions the decode runs through and logits rows it keeps.
pub fn schedule(prompt_len: usize, gen_steps: u32) -> (usize, usize) {
    let g = gen_steps as usize;
    let positions = if g == 0 { prompt_len } else { prompt_len + g - 1 };
    (positions, g.max(1))
}

struct Decoder<'a> {
    m: &'a ModelWeights,
    c: Consts,
    record: bool,
    activations: Vec<(OperatorTag, Vec<u8>)>,
}

impl<'a> Decoder<'a> {
    fn snap(&mut self, kind: OperatorKind, layer: Option<usize>, bytes: impl FnOnce() -> Vec<u8>) {
        if self.record {
            self.activations.push((OperatorTag::new(kind, layer.map(|l| l as u8)), bytes()));
        }
    }

    fn norm(&mut self, x: &[u32], p: &NormParams, layer: Option<usize>) -> Vec<u32> {
        let a = norm(self.m.config.norm, x, p, &self.c);
        self.snap(OperatorKind::Norm, layer, || f32_bytes(&a));
        a
    }

    /// Adds a sublayer output into the residual stream, through the post
    /// norm when the architecture has one.
    fn residual(&mut self, x: &mut [u32], y: &[u32], post: Option<&NormParams>, l: usize) {
        match post {
            Some(p) => {
                let a = self.norm(y, p, Some(l));
                for (k, &w) in a.iter().enumerate() {
                    x[2 * k] = fp::fadd(x[2 * k], fp::h2f_lo(w));
                    x[2 * k + 1] = fp::fadd(x[2 * k + 1], fp::h2f_hi(w));
                }
            }
            None => {
                for (xi, &yi) in x.iter_mut().zip(y) {
                    *xi = fp::fadd(*xi, yi);
                }
            }
        }
        self.snap(OperatorKind::Other, Some(l), || f32_bytes(x));
    }

    /// Runs one position through every layer, appending to `cache`.
    fn position(&mut self, tok: u32, t: usize, cache: &mut KvCache) -> Vec<u32> {
        let m = self.m;
        let cfg = &m.config;
        let hs = cfg.hidden as usize;
        let ff = cfg.ffn() as usize;
        let mut x = embed(m, tok, t as u32);
        self.snap(OperatorKind::Embedding, None, || f32_bytes(&x));
        for (l, lw) in m.layers.iter().enumerate() {
            let a = self.norm(&x, &lw.attn_norm, Some(l));
            let q = gemm(&a, &lw.wq, hs);
            cache.k[l].push(gemm(&a, &lw.wk, hs));
            cache.v[l].push(gemm(&a, &lw.wv, hs));
            let o = attend(&q, &cache.k[l], &cache.v[l], cfg.heads as usize, &self.c);
            let y = gemm(&o, &lw.wo, hs);
            self.snap(OperatorKind::Attention, Some(l), || f32_bytes(&y));
            self.residual(&mut x, &y, lw.attn_post_norm.as_ref(), l);

            let a = self.norm(&x, &lw.mlp_norm, Some(l));
            let h1 = gemm(&a, &lw.w1, ff);
            let act: Vec<u32> = match (cfg.mlp, &lw.w3) {
                (MlpKind::SiluGated, Some(w3)) => {
                    let up = gemm(&a, w3, ff);
                    h1.iter().zip(&up).map(|(&g, &u)| silu_gated(g, u, &self.c)).collect()
                }
                _ => h1.iter().map(|&v| gelu(v, &self.c)).collect(),
            };
            let y = gemm(&pack(&act), &lw.w2, hs);
            self.snap(OperatorKind::Mlp, Some(l), || f32_bytes(&y));
            self.residual(&mut x, &y, lw.mlp_post_norm.as_ref(), l);
        }
        x
    }

    fn head(&mut self, x: &[u32]) -> Vec<u32> {
        let a = self.norm(x, &self.m.final_norm, None);
        gemm(&a, &self.m.lm_head, self.m.config.vocab as usize)
    }
}

/// Greedy decode with a KV cache, mirroring the lowered program.
pub fn reference_forward(m: &ModelWeights, prompt: &[u32], gen_steps: u32) -> Result<ReferenceOutput> {
    m.config.validate_request(prompt, gen_steps)?;
    let p = prompt.len();
    let g = gen_steps as usize;
    let vs = m.config.vocab as usize;
    let (positions, rows) = schedule(p, gen_steps);
    let mut d = Decoder { m, c: Consts::new(&m.config), record: true, activations: Vec::new() };
    let mut seq = prompt.to_vec();
    seq.resize(p + g, 0);
    let mut logits = vec![vec![0u32; vs]; rows];
    let mut cache = KvCache::new(m.layers.len());
    for t in 0..positions {
        let x = d.position(seq[t], t, &mut cache);
        if t + 1 >= p {
            let r = t + 1 - p;
            logits[r] = d.head(&x);
            let all: Vec<u32> = logits.concat();
            d.snap(OperatorKind::LmHead, None, || f32_bytes(&all));
            if g > 0 {
                seq[t + 1] = argmax(&logits[r]);
                let out = &seq[p..];
                d.snap(OperatorKind::LmHead, None, || f32_bytes(out));
            }
        }
    }
    Ok(ReferenceOutput { tokens: seq[p..].to_vec(), logits, activations: d.activations })
}

/// Greedy decode that recomputes every position from scratch at each step
/// instead of reusing cached keys and values.
pub fn reference_forward_uncached(
    m: &ModelWeights,
    prompt: &[u32],
    gen_steps: u32,
) -> Result<(Vec<u32>, Vec<Vec<u32>>)> {
    m.config.validate_request(prompt, gen_steps)?;
    let p = prompt.len();
    let (positions, _) = schedule(p, gen_steps);
    let mut d = Decoder { m, c: Consts::new(&m.config), record: false, activations: Vec::new() };
    let mut seq = prompt.to_vec();
    let mut tokens = Vec::new();
    let mut logits = Vec::new();
    for t in p - 1..positions {
        let mut cache = KvCache::new(m.layers.len());
        let mut x = Vec::new();
        for (s, &tok) in seq.iter().enumerate().take(t + 1) {
            x = d.position(tok, s, &mut cache);
        }
        let row = d.head(&x);
        if gen_steps > 0 {
            let tok = argmax(&row);
            seq.push(tok);
            tokens.push(tok);
        }
        logits.push(row);
    }
    Ok((tokens, logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_takes_first_of_ties_and_skips_nan() {
        let b = |v: f32| v.to_bits();
        assert_eq!(argmax(&[b(1.0), b(3.0), b(3.0), b(2.0)]), 1);
        assert_eq!(argmax(&[b(1.0), f32::NAN.to_bits(), b(0.5)]), 0);
        assert_eq!(argmax(&[f32::NAN.to_bits(), b(0.5)]), 0);
    }

    #[test]
    fn gemm_of_unit_pairs() {
        // a = (1, 2), w rows: (1, 1) and (0.5, -1)
        let a = [fp::f2h2(1f32.to_bits(), 2f32.to_bits())];
        let w = [0x3c00, 0x3c00, 0x3800, 0xbc00];
        let out = gemm(&a, &w, 2);
        assert_eq!(f32::from_bits(out[0]), 3.0);
        assert_eq!(f32::from_bits(out[1]), -1.5);
    }

    #[test]
    fn schedule_counts() {
        assert_eq!(schedule(3, 2), (4, 2));
        assert_eq!(schedule(3, 0), (3, 1));
        assert_eq!(schedule(1, 1), (1, 1));
    }
}
