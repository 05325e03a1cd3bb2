use std::fmt;

use serde::Serialize;

use super::{param_shapes, ModelConfig, ParamGroup};

/// Published part sizes in millions for `d ∈ {768, 1024, 2048}`:
/// `(d, embedding table, body for ℓ = 1, 2, 3, LM head)`.
pub const PUBLISHED_SIZES: [(usize, f64, [f64; 3], f64); 3] = [
    (768, 23.44, [5.36, 10.72, 16.08], 23.44),
    (1024, 31.25, [7.41, 14.82, 22.23], 31.25),
    (2048, 62.51, [17.04, 34.09, 51.13], 62.51),
];

/// Parameter counts by model part, enumerated from the instantiated shapes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub embedding_table: usize,
    pub position_table: usize,
    /// One group of ℓ layers; encoder and decoder bodies are the same size.
    pub body_per_group: usize,
    pub encoder_body: usize,
    pub decoder_body: usize,
    pub lm_head: usize,
    pub total: usize,
    #[serde(skip)]
    d: usize,
    #[serde(skip)]
    ell: usize,
}

pub fn count_params(config: &ModelConfig) -> ParamReport {
    let mut r = ParamReport {
        embedding_table: 0,
        position_table: 0,
        body_per_group: 0,
        encoder_body: 0,
        decoder_body: 0,
        lm_head: 0,
        total: 0,
        d: config.d,
        ell: config.ell,
    };
    for (_, shape, group) in param_shapes(config) {
        let n: usize = shape.iter().product();
        match group {
            ParamGroup::TokenEmbedding => r.embedding_table += n,
            ParamGroup::PositionEmbedding => r.position_table += n,
            ParamGroup::Encoder => r.encoder_body += n,
            ParamGroup::Decoder => r.decoder_body += n,
            ParamGroup::LmHead => r.lm_head += n,
        }
        r.total += n;
    }
    r.body_per_group = r.encoder_body;
    r
}

fn millions(n: usize) -> f64 {
    n as f64 / 1e6
}

impl ParamReport {
    /// Published reference row for this `(d, ℓ)`, when one exists.
    pub fn reference(&self) -> Option<(f64, f64, f64)> {
        PUBLISHED_SIZES
            .iter()
            .find(|r| r.0 == self.d)
            .and_then(|r| (1..=3).contains(&self.ell).then(|| (r.1, r.2[self.ell - 1], r.3)))
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let reference = self.reference();
        let rows = [
            ("token embedding table", self.embedding_table, reference.map(|r| r.0)),
            ("position embedding table", self.position_table, None),
            ("body per group", self.body_per_group, reference.map(|r| r.1)),
            ("encoder body", self.encoder_body, None),
            ("decoder body", self.decoder_body, None),
            ("language modelling head", self.lm_head, reference.map(|r| r.2)),
            ("total", self.total, None),
        ];
        writeln!(f, "{:<26}{:>14}{:>12}{:>12}", "part", "count", "millions", "reference")?;
        for (name, n, r) in rows {
            let r = r.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
            writeln!(f, "{name:<26}{n:>14}{:>12.2}{r:>12}", millions(n))?;
        }
        Ok(())
    }
}
