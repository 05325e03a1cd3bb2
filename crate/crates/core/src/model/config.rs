use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;

/// How many times the bottleneck embedding is repeated at the head of the
/// decoder input. `Inf` repeats it over the whole sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Multiplier {
    Finite(usize),
    Inf,
}

impl Multiplier {
    /// Number of leading decoder rows that carry the embedding for length `n`.
    pub fn copies(self, n: usize) -> usize {
        match self {
            Multiplier::Finite(m) => m.min(n),
            Multiplier::Inf => n,
        }
    }
}

impl fmt::Display for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Multiplier::Finite(m) => write!(f, "{m}"),
            Multiplier::Inf => f.write_str("inf"),
        }
    }
}

impl FromStr for Multiplier {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        if s.eq_ignore_ascii_case("inf") {
            return Ok(Multiplier::Inf);
        }
        match s.parse::<usize>() {
            Ok(m) if m >= 1 => Ok(Multiplier::Finite(m)),
            _ => Err(ModelError::InvalidConfig(format!(
                "multiplier must be a positive integer or \"inf\", got {s:?}"
            ))),
        }
    }
}

impl Serialize for Multiplier {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Multiplier::Finite(m) => s.serialize_u64(*m as u64),
            Multiplier::Inf => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Multiplier {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Multiplier;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive integer or \"inf\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Multiplier, E> {
                if v == 0 {
                    return Err(E::custom("multiplier must be >= 1"));
                }
                Ok(Multiplier::Finite(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Multiplier, E> {
                if v < 1 {
                    return Err(E::custom("multiplier must be >= 1"));
                }
                Ok(Multiplier::Finite(v as usize))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Multiplier, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub ell: usize,
    pub m: Multiplier,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout_p: f64,
    pub max_seq_len: usize,
    pub vocab_size: usize,
}

pub const DEFAULT_MAX_SEQ_LEN: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const INIT_STD: f64 = 0.02;

/// 12 heads when `d` is divisible by 12, otherwise 16.
pub fn default_heads(d: usize) -> usize {
    if d.is_multiple_of(12) {
        12
    } else {
        16
    }
}

impl ModelConfig {
    pub fn new(d: usize, ell: usize, m: Multiplier, vocab_size: usize) -> Self {
        Self {
            d,
            ell,
            m,
            n_heads: default_heads(d),
            ffn_dim: 4 * d,
            dropout_p: DEFAULT_DROPOUT,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            vocab_size,
        }
    }

    /// Checks the shape constraints needed to build a model. `ell == 0` is
    /// accepted here (an embedding-only stack); [`ModelConfig::validate`]
    /// rejects it.
    pub fn validate_shapes(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.d == 0 || self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) {
            return bad(format!("d={} is not divisible by n_heads={}", self.d, self.n_heads));
        }
        if self.ffn_dim == 0 || self.max_seq_len < 2 || self.vocab_size < 6 {
            return bad(format!(
                "ffn_dim={}, max_seq_len={}, vocab_size={} out of range",
                self.ffn_dim, self.max_seq_len, self.vocab_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p={} not in [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.ell == 0 {
            return Err(ModelError::InvalidConfig("ell must be >= 1".into()));
        }
        self.validate_shapes()
    }
}
