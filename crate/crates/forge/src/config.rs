//! Model configuration and the preset registry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

/// Largest hidden size the lowering supports; a full hidden vector is held
/// in registers during normalization.
pub const MAX_HIDDEN: u32 = 64;
pub const MAX_CONTEXT: u32 = 1024;
pub const MAX_LAYERS: u32 = 32;
pub const MAX_VOCAB: u32 = 65536;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NormKind {
    /// LayerNorm before each sublayer and again on its output.
    LayernormPrePost,
    /// RMSNorm before each sublayer only.
    RmsnormPre,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MlpKind {
    /// `x * sigmoid(1.702 x)`.
    Gelu,
    /// `silu(gate) * up`.
    SiluGated,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::LayernormPrePost => "LAYERNORM_PRE_POST",
            NormKind::RmsnormPre => "RMSNORM_PRE",
        }
    }
}

impl MlpKind {
    pub fn name(self) -> &'static str {
        match self {
            MlpKind::Gelu => "GELU",
            MlpKind::SiluGated => "SILU_GATED",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for MlpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LAYERNORM_PRE_POST" => Ok(NormKind::LayernormPrePost),
            "RMSNORM_PRE" => Ok(NormKind::RmsnormPre),
            _ => Err(format!("unknown norm kind `{s}`")),
        }
    }
}

impl FromStr for MlpKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GELU" => Ok(MlpKind::Gelu),
            "SILU_GATED" => Ok(MlpKind::SiluGated),
            _ => Err(format!("unknown mlp kind `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub layers: u32,
    pub hidden: u32,
    pub heads: u32,
    pub vocab: u32,
    pub context: u32,
    pub norm: NormKind,
    pub mlp: MlpKind,
    pub seed: u64,
}

impl ModelConfig {
    /// Feed-forward width, four times the hidden size.
    pub fn ffn(&self) -> u32 {
        4 * self.hidden
    }

    pub fn head_dim(&self) -> u32 {
        self.hidden / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ForgeError::ConfigInvalid(m));
        if self.layers == 0 || self.layers > MAX_LAYERS {
            return bad(format!("layers must be in 1..={MAX_LAYERS}"));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden size {} not divisible by {} heads", self.hidden, self.heads));
        }
        if self.hidden < 2 || self.hidden > MAX_HIDDEN || !self.hidden.is_multiple_of(2) {
            return bad(format!("hidden size must be even and in 2..={MAX_HIDDEN}"));
        }
        if !self.head_dim().is_multiple_of(2) {
            return bad("head dimension must be even".into());
        }
        if self.vocab < 2 || self.vocab > MAX_VOCAB {
            return bad(format!("vocabulary must be in 2..={MAX_VOCAB}"));
        }
        if self.context == 0 || self.context > MAX_CONTEXT {
            return bad(format!("context length must be in 1..={MAX_CONTEXT}"));
        }
        Ok(())
    }

    /// Checks a decoding request against this configuration.
    pub fn validate_request(&self, prompt: &[u32], gen_steps: u32) -> Result<()> {
        self.validate()?;
        if prompt.is_empty() {
            return Err(ForgeError::ConfigInvalid("prompt is empty".into()));
        }
        if prompt.len() as u64 + gen_steps as u64 > self.context as u64 {
            return Err(ForgeError::ConfigInvalid(format!(
                "prompt length {} + {} steps exceeds context {}",
                prompt.len(),
                gen_steps,
                self.context
            )));
        }
        if let Some(t) = prompt.iter().find(|&&t| t >= self.vocab) {
            return Err(ForgeError::ConfigInvalid(format!("token {t} outside vocabulary of {}", self.vocab)));
        }
        Ok(())
    }
}

pub const PRESET_NAMES: [&str; 2] = ["nano-gpt2", "nano-rms"];

pub fn preset(name: &str) -> Result<ModelConfig> {
    let base = |norm, mlp| ModelConfig {
        name: name.to_string(),
        layers: 2,
        hidden: 32,
        heads: 2,
        vocab: 64,
        context: 32,
        norm,
        mlp,
        seed: 7,
    };
    match name {
        "nano-gpt2" => Ok(base(NormKind::LayernormPrePost, MlpKind::Gelu)),
        "nano-rms" => Ok(base(NormKind::RmsnormPre, MlpKind::SiluGated)),
        _ => Err(ForgeError::UnknownPreset(name.to_string())),
    }
}
