//! Linear projection head.
//!
//! File layout (text):
//!
//! ```text
//! katsql-projection-head v1
//! dim_in 256
//! dim_out 256
//! temperature 0.05
//! provider hash-v1:256
//! lineage <hash|->
//! <dim_out lines, each dim_in space-separated weights>
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{l2_normalize, RetrieverError};

const MAGIC: &str = "katsql-projection-head v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    dim_in: usize,
    dim_out: usize,
    /// Row-major `dim_out × dim_in`.
    weights: Vec<f64>,
    temperature: f64,
    pub provider_fingerprint: Option<String>,
    pub lineage: Option<String>,
}

impl ProjectionHead {
    pub fn identity(dim: usize, temperature: f64) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self::from_weights(dim, dim, weights, temperature).expect("identity head is valid")
    }

    /// Uniform weights in `±sqrt(3 / dim_in)`, seeded.
    pub fn random(dim_in: usize, dim_out: usize, temperature: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (3.0 / dim_in.max(1) as f64).sqrt();
        let weights = (0..dim_in * dim_out).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::from_weights(dim_in, dim_out, weights, temperature).expect("random head is valid")
    }

    pub fn from_weights(dim_in: usize, dim_out: usize, weights: Vec<f64>, temperature: f64) -> Result<Self, RetrieverError> {
        if dim_in == 0 || dim_out == 0 || weights.len() != dim_in * dim_out {
            return Err(RetrieverError::Config(format!(
                "head of {dim_out}x{dim_in} needs {} weights, got {}",
                dim_in * dim_out,
                weights.len()
            )));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(RetrieverError::Config(format!("temperature must be > 0, got {temperature}")));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(RetrieverError::Config("head weights must be finite".into()));
        }
        Ok(ProjectionHead {
            dim_in,
            dim_out,
            weights,
            temperature,
            provider_fingerprint: None,
            lineage: None,
        })
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// `W·v` without normalization.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim_in)
            .map(|row| row.iter().zip(v).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// `W·v` scaled to unit length.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, RetrieverError> {
        if v.len() != self.dim_in {
            return Err(RetrieverError::DimensionMismatch {
                expected: self.dim_in,
                got: v.len(),
            });
        }
        let mut out = self.apply(v);
        l2_normalize(&mut out);
        Ok(out)
    }

    /// Content hash of dims, temperature and weights.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.dim_in as u64).to_le_bytes());
        h.update((self.dim_out as u64).to_le_bytes());
        h.update(self.temperature.to_le_bytes());
        for w in &self.weights {
            h.update(w.to_le_bytes());
        }
        let mut s = hex::encode(h.finalize());
        s.truncate(16);
        format!("head-{s}")
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrieverError> {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&format!("dim_in {}\n", self.dim_in));
        out.push_str(&format!("dim_out {}\n", self.dim_out));
        out.push_str(&format!("temperature {:?}\n", self.temperature));
        out.push_str(&format!("provider {}\n", self.provider_fingerprint.as_deref().unwrap_or("-")));
        out.push_str(&format!("lineage {}\n", self.lineage.as_deref().unwrap_or("-")));
        for row in self.weights.chunks_exact(self.dim_in) {
            let cells: Vec<String> = row.iter().map(|w| format!("{w:?}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| RetrieverError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, RetrieverError> {
        let text = fs::read_to_string(path).map_err(|e| RetrieverError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines();
        let bad = |m: &str| RetrieverError::Parse(format!("{}: {m}", path.display()));
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a projection head file"));
        }
        let mut field = |name: &str| -> Result<String, RetrieverError> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {name}")))?;
            line.strip_prefix(name)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{name} ...`, got `{line}`")))
        };
        let dim_in: usize = field("dim_in")?.parse().map_err(|_| bad("bad dim_in"))?;
        let dim_out: usize = field("dim_out")?.parse().map_err(|_| bad("bad dim_out"))?;
        let temperature: f64 = field("temperature")?.parse().map_err(|_| bad("bad temperature"))?;
        let provider = field("provider")?;
        let lineage = field("lineage")?;
        let mut weights = Vec::with_capacity(dim_in * dim_out);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad("bad weight"))?;
            if row.len() != dim_in {
                return Err(bad(&format!("row has {} weights, expected {dim_in}", row.len())));
            }
            weights.extend(row);
        }
        let mut head = Self::from_weights(dim_in, dim_out, weights, temperature)?;
        head.provider_fingerprint = (provider != "-").then_some(provider);
        head.lineage = (lineage != "-").then_some(lineage);
        Ok(head)
    }
}
