//! Seeded weight generation.
//!
//! One SplitMix64 stream seeded with the model seed fills every matrix in a
//! fixed order: token embedding, position embedding, then per layer Wq, Wk,
//! Wv, Wo, W1, W3 (gated MLP only), W2, and finally the LM head. Each value
//! is `(u - 0.5) / sqrt(HS)` with `u = (next_u64 >> 11) * 2^-53`, rounded to
//! binary16. Norm gains are 1.0 and biases 0.0.
//!
//! Matrices are stored row-major as `[out][in]`, so row `j` holds the input
//! weights of output `j`.

use bitstorm_isa::fnv1a64;
use bitstorm_isa::fp::f64_to_f16;
use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::config::{MlpKind, ModelConfig, NormKind};
use crate::error::Result;

pub const F16_ONE: u16 = 0x3c00;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormParams {
    pub gain: Vec<u16>,
    /// Empty for RMSNorm.
    pub bias: Vec<u16>,
}

impl NormParams {
    fn new(kind: NormKind, n: usize) -> Self {
        NormParams {
            gain: vec![F16_ONE; n],
            bias: match kind {
                NormKind::LayernormPrePost => vec![0; n],
                NormKind::RmsnormPre => Vec::new(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerWeights {
    pub attn_norm: NormParams,
    pub attn_post_norm: Option<NormParams>,
    pub wq: Vec<u16>,
    pub wk: Vec<u16>,
    pub wv: Vec<u16>,
    pub wo: Vec<u16>,
    pub mlp_norm: NormParams,
    pub mlp_post_norm: Option<NormParams>,
    /// `[FF][HS]`; the gate projection for gated MLPs.
    pub w1: Vec<u16>,
    /// `[FF][HS]` up projection, gated MLPs only.
    pub w3: Option<Vec<u16>>,
    /// `[HS][FF]`.
    pub w2: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub tok_emb: Vec<u16>,
    pub pos_emb: Vec<u16>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: NormParams,
    pub lm_head: Vec<u16>,
}

struct Filler {
    rng: SplitMix64,
    scale: f64,
}

impl Filler {
    fn matrix(&mut self, rows: u32, cols: u32) -> Vec<u16> {
        (0..rows as usize * cols as usize)
            .map(|_| {
                let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                f64_to_f16((u - 0.5) * self.scale)
            })
            .collect()
    }
}

pub fn build_model(config: &ModelConfig) -> Result<ModelWeights> {
    config.validate()?;
    let hs = config.hidden;
    let ff = config.ffn();
    let mut f = Filler { rng: SplitMix64::seed_from_u64(config.seed), scale: 1.0 / (hs as f64).sqrt() };
    let tok_emb = f.matrix(config.vocab, hs);
    let pos_emb = f.matrix(config.context, hs);
    let post = |kind: NormKind| match kind {
        NormKind::LayernormPrePost => Some(NormParams::new(kind, hs as usize)),
        NormKind::RmsnormPre => None,
    };
    let layers = (0..config.layers)
        .map(|_| {
            let wq = f.matrix(hs, hs);
            let wk = f.matrix(hs, hs);
            let wv = f.matrix(hs, hs);
            let wo = f.matrix(hs, hs);
            let w1 = f.matrix(ff, hs);
            let w3 = (config.mlp == MlpKind::SiluGated).then(|| f.matrix(ff, hs));
            let w2 = f.matrix(hs, ff);
            LayerWeights {
                attn_norm: NormParams::new(config.norm, hs as usize),
                attn_post_norm: post(config.norm),
                wq,
                wk,
                wv,
                wo,
                mlp_norm: NormParams::new(config.norm, hs as usize),
                mlp_post_norm: post(config.norm),
                w1,
                w3,
                w2,
            }
        })
        .collect();
    let lm_head = f.matrix(config.vocab, hs);
    Ok(ModelWeights {
        config: config.clone(),
        tok_emb,
        pos_emb,
        layers,
        final_norm: NormParams::new(config.norm, hs as usize),
        lm_head,
    })
}

impl ModelWeights {
    /// Every tensor in generation order, norms interleaved where they sit in
    /// the network.
    pub fn tensors(&self) -> Vec<&[u16]> {
        let mut v: Vec<&[u16]> = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            v.push(&l.attn_norm.gain);
            v.push(&l.attn_norm.bias);
            if let Some(n) = &l.attn_post_norm {
                v.push(&n.gain);
                v.push(&n.bias);
            }
            v.extend([&l.wq[..], &l.wk, &l.wv, &l.wo]);
            v.push(&l.mlp_norm.gain);
            v.push(&l.mlp_norm.bias);
            if let Some(n) = &l.mlp_post_norm {
                v.push(&n.gain);
                v.push(&n.bias);
            }
            v.push(&l.w1);
            if let Some(w3) = &l.w3 {
                v.push(w3);
            }
            v.push(&l.w2);
        }
        v.push(&self.final_norm.gain);
        v.push(&self.final_norm.bias);
        v.push(&self.lm_head);
        v
    }

    /// FNV-1a over all tensors as little-endian binary16.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::new();
        for t in self.tensors() {
            for h in t {
                bytes.extend_from_slice(&h.to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;
    use bitstorm_isa::fp::f16_to_f32;

    #[test]
    fn values_are_scaled_uniform() {
        let w = build_model(&preset("nano-gpt2").unwrap()).unwrap();
        let bound = 0.5 / 32f32.sqrt();
        let vals: Vec<f32> = w.wq_all().map(|h| f32::from_bits(f16_to_f32(h))).collect();
        assert!(vals.iter().all(|v| v.abs() <= bound * 1.001));
        let mean = vals.iter().sum::<f32>() / vals.len() as f32;
        assert!(mean.abs() < 0.01, "{mean}");
        let max = vals.iter().fold(0f32, |m, v| m.max(v.abs()));
        assert!(max > bound * 0.9);
    }

    impl ModelWeights {
        fn wq_all(&self) -> impl Iterator<Item = u16> + '_ {
            self.layers.iter().flat_map(|l| l.wq.iter().copied())
        }
    }

    #[test]
    fn shapes() {
        let w = build_model(&preset("nano-rms").unwrap()).unwrap();
        assert_eq!(w.tok_emb.len(), 64 * 32);
        assert_eq!(w.pos_emb.len(), 32 * 32);
        assert_eq!(w.layers[0].w1.len(), 128 * 32);
        assert_eq!(w.layers[0].w3.as_ref().unwrap().len(), 128 * 32);
        assert_eq!(w.layers[0].w2.len(), 32 * 128);
        assert!(w.layers[0].attn_post_norm.is_none());
        assert!(w.final_norm.bias.is_empty());
    }
}
