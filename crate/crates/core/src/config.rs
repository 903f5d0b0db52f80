//! Flat `key=value` model configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{hex, ContextSchema};
use crate::error::{Error, Result};

/// How a self-attention block is wired around its two sub-layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// `FFL(SAL(X))` exactly, no residual, normalization or dropout.
    Literal,
    /// Residual connection, layer normalization and dropout around both
    /// sub-layers.
    Compat,
}

impl AttentionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Literal => "literal",
            Self::Compat => "compat",
        }
    }
}

impl FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "literal" => Ok(Self::Literal),
            "compat" => Ok(Self::Compat),
            other => Err(format!(
                "attention_mode must be literal or compat, got {other:?}"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MojitoConfig {
    /// Embedding width; the encoder works on `2 * d` columns.
    pub d: usize,
    /// Sequence length L.
    pub seq_len: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Number of sampled history items for the long-term representation.
    pub fism_items: usize,
    /// Weight of the short-term score/loss; `1 - lambda` goes to long-term.
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub schema: ContextSchema,
    pub attention_mode: AttentionMode,
    /// Early-stopping patience in epochs without validation NDCG@10 gain.
    pub patience: usize,
    /// Dropout rate, only used in compat attention mode.
    pub dropout: f64,
    /// Ablation: zero context embeddings and pin every head to the item
    /// component.
    pub no_context: bool,
    /// Sampled negatives per evaluated user.
    pub eval_negatives: usize,
}

impl Default for MojitoConfig {
    fn default() -> Self {
        Self {
            d: 64,
            seq_len: 50,
            blocks: 2,
            heads: 2,
            fism_items: 20,
            lambda: 0.5,
            lr: 0.001,
            batch_size: 512,
            epochs: 100,
            seed: 42,
            schema: ContextSchema::default(),
            attention_mode: AttentionMode::Literal,
            patience: 10,
            dropout: 0.2,
            no_context: false,
            eval_negatives: 1000,
        }
    }
}

const KEYS: [&str; 16] = [
    "d",
    "L",
    "B",
    "H",
    "N",
    "lambda",
    "lr",
    "batch",
    "epochs",
    "seed",
    "schema",
    "attention_mode",
    "patience",
    "dropout",
    "no_context",
    "eval_negatives",
];

fn parse_field<T: FromStr>(key: &str, raw: &str, errors: &mut Vec<String>) -> Option<T> {
    match raw.parse::<T>() {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(format!("{key}: cannot parse {raw:?}"));
            None
        }
    }
}

impl MojitoConfig {
    /// Parses `key=value` lines (`#` comments allowed). Missing keys take
    /// their defaults and are reported in the returned notices; every
    /// invalid key is reported at once.
    pub fn parse(text: &str) -> Result<(Self, Vec<String>)> {
        let mut cfg = Self::default();
        let mut errors = Vec::new();
        let mut seen = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, raw)) = line.split_once('=') else {
                errors.push(format!("line {}: expected key=value, got {line:?}", n + 1));
                continue;
            };
            let (key, raw) = (key.trim(), raw.trim());
            if !KEYS.contains(&key) {
                errors.push(format!("{key}: unknown key"));
                continue;
            }
            seen.push(key.to_string());
            let e = &mut errors;
            match key {
                "d" => cfg.d = parse_field(key, raw, e).unwrap_or(cfg.d),
                "L" => cfg.seq_len = parse_field(key, raw, e).unwrap_or(cfg.seq_len),
                "B" => cfg.blocks = parse_field(key, raw, e).unwrap_or(cfg.blocks),
                "H" => cfg.heads = parse_field(key, raw, e).unwrap_or(cfg.heads),
                "N" => cfg.fism_items = parse_field(key, raw, e).unwrap_or(cfg.fism_items),
                "lambda" => cfg.lambda = parse_field(key, raw, e).unwrap_or(cfg.lambda),
                "lr" => cfg.lr = parse_field(key, raw, e).unwrap_or(cfg.lr),
                "batch" => cfg.batch_size = parse_field(key, raw, e).unwrap_or(cfg.batch_size),
                "epochs" => cfg.epochs = parse_field(key, raw, e).unwrap_or(cfg.epochs),
                "seed" => cfg.seed = parse_field(key, raw, e).unwrap_or(cfg.seed),
                "patience" => cfg.patience = parse_field(key, raw, e).unwrap_or(cfg.patience),
                "dropout" => cfg.dropout = parse_field(key, raw, e).unwrap_or(cfg.dropout),
                "no_context" => cfg.no_context = parse_field(key, raw, e).unwrap_or(cfg.no_context),
                "eval_negatives" => {
                    cfg.eval_negatives = parse_field(key, raw, e).unwrap_or(cfg.eval_negatives)
                }
                "schema" => match raw.parse::<ContextSchema>() {
                    Ok(s) => cfg.schema = s,
                    Err(err) => errors.push(format!("schema: {err}")),
                },
                "attention_mode" => match raw.parse() {
                    Ok(m) => cfg.attention_mode = m,
                    Err(err) => errors.push(err),
                },
                _ => unreachable!("key list checked above"),
            }
        }
        errors.extend(cfg.problems());
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let notices = KEYS
            .iter()
            .filter(|k| !seen.iter().any(|s| s == *k))
            .map(|k| format!("{k} not set, using default {}", cfg.value_of(k)))
            .collect();
        Ok((cfg, notices))
    }

    /// Every violated constraint, as messages.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (key, v) in [
            ("d", self.d),
            ("L", self.seq_len),
            ("B", self.blocks),
            ("H", self.heads),
            ("N", self.fism_items),
            ("batch", self.batch_size),
            ("eval_negatives", self.eval_negatives),
        ] {
            if v == 0 {
                out.push(format!("{key} must be >= 1"));
            }
        }
        if self.seq_len == 1 {
            out.push("L must be >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            out.push("lambda must be in [0,1]".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push("lr must be a positive number".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            out.push("dropout must be in [0,1)".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "d" => self.d.to_string(),
            "L" => self.seq_len.to_string(),
            "B" => self.blocks.to_string(),
            "H" => self.heads.to_string(),
            "N" => self.fism_items.to_string(),
            "lambda" => format!("{:?}", self.lambda),
            "lr" => format!("{:?}", self.lr),
            "batch" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "schema" => self.schema.to_string(),
            "attention_mode" => self.attention_mode.as_str().to_string(),
            "patience" => self.patience.to_string(),
            "dropout" => format!("{:?}", self.dropout),
            "no_context" => self.no_context.to_string(),
            "eval_negatives" => self.eval_negatives.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Canonical `key=value` text; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            writeln!(out, "{k}={}", self.value_of(k)).expect("write");
        }
        out
    }

    /// Short content hash of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex(&digest[..8])
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.value_of(k)))
            .collect()
    }
}
