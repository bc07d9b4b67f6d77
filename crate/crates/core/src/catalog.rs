//! Content universe: contents split into chunks, each chunk carried in a
//! base and an enhancement layer. Every (content, chunk, layer) triple is a
//! [`ContentUnit`], the atomic object that gets cached and transmitted.
//!
//! Request popularity is the product of three independent factors:
//! Zipf over contents, a truncated discretized Weibull session length over
//! chunks, and a per-layer factor (base always, enhancement with `p_hq`).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MBIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitId(pub u32);

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Base,
    Enhancement,
}

impl Layer {
    pub const ALL: [Layer; 2] = [Layer::Base, Layer::Enhancement];

    pub fn index(self) -> usize {
        match self {
            Layer::Base => 0,
            Layer::Enhancement => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Base => "base",
            Layer::Enhancement => "enh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentUnit {
    /// 1-based content index.
    pub content: u32,
    /// 1-based chunk index.
    pub chunk: u32,
    pub layer: Layer,
    pub id: UnitId,
    pub size_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    pub contents: u32,
    pub chunks: u32,
    /// Base-layer size of one content (whole video), Mbit.
    pub base_mbits: f64,
    /// Enhancement-layer size of one content, Mbit.
    pub enh_mbits: f64,
    pub zipf_s: f64,
    pub weibull_lambda: f64,
    pub weibull_k: f64,
    pub p_hq: f64,
    /// Half-width of the optional per-content size multiplier, `0` disables it.
    pub size_spread: f64,
    pub size_seed: u64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            contents: 100,
            chunks: 100,
            base_mbits: 322.0,
            enh_mbits: 152.0,
            zipf_s: 1.0,
            weibull_lambda: 5.0,
            weibull_k: 0.8,
            p_hq: 1.0,
            size_spread: 0.0,
            size_seed: 0,
        }
    }
}

impl CatalogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.contents < 1 {
            return Err(Error::config("catalog.contents", "must be at least 1"));
        }
        if self.chunks < 1 {
            return Err(Error::config("catalog.chunks", "must be at least 1"));
        }
        for (field, v) in [("catalog.base_mbits", self.base_mbits), ("catalog.enh_mbits", self.enh_mbits)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be a positive size, got {v}")));
            }
        }
        if !(self.zipf_s >= 0.0 && self.zipf_s.is_finite()) {
            return Err(Error::config("catalog.zipf_s", "must be a finite non-negative skew"));
        }
        if !(self.weibull_lambda > 0.0 && self.weibull_lambda.is_finite()) {
            return Err(Error::config("catalog.weibull_lambda", "must be positive"));
        }
        if !(self.weibull_k > 0.0 && self.weibull_k.is_finite()) {
            return Err(Error::config("catalog.weibull_k", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_hq) {
            return Err(Error::config("catalog.p_hq", "must be a probability in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.size_spread) {
            return Err(Error::config("catalog.size_spread", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One user's ordered request stream for a single content.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub content: u32,
    pub high_quality: bool,
    /// Number of chunks watched.
    pub length: u32,
    pub units: Vec<UnitId>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    cfg: CatalogConfig,
    units: Vec<ContentUnit>,
    content_pmf: Vec<f64>,
    content_cdf: Vec<f64>,
    length_pmf: Vec<f64>,
    length_cdf: Vec<f64>,
    chunk_survival: Vec<f64>,
    total_bits: f64,
}

fn cumulative(pmf: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = pmf
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    cdf
}

fn sample_index(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Builds the full catalog. Pure in `cfg`.
pub fn build_catalog(cfg: &CatalogConfig) -> Result<Catalog> {
    cfg.validate()?;
    let n = cfg.contents as usize;
    let j_max = cfg.chunks as usize;

    let weights: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-cfg.zipf_s)).collect();
    let norm: f64 = weights.iter().sum();
    let content_pmf: Vec<f64> = weights.iter().map(|w| w / norm).collect();

    // Session length L: Weibull discretized as F(m) - F(m-1), truncated to 1..=J.
    let survival = |x: f64| (-(x / cfg.weibull_lambda).powf(cfg.weibull_k)).exp();
    let tail = survival(j_max as f64);
    let mass = 1.0 - tail;
    let length_pmf: Vec<f64> = (1..=j_max)
        .map(|m| (survival(m as f64 - 1.0) - survival(m as f64)) / mass)
        .collect();
    // P(L >= j), evaluated from the closed form rather than summing the pmf.
    let chunk_survival: Vec<f64> = (1..=j_max)
        .map(|j| if j == 1 { 1.0 } else { ((survival(j as f64 - 1.0) - tail) / mass).clamp(0.0, 1.0) })
        .collect();

    let multipliers: Vec<f64> = if cfg.size_spread > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.size_seed);
        (0..n)
            .map(|_| 1.0 + cfg.size_spread * (2.0 * rng.random::<f64>() - 1.0))
            .collect()
    } else {
        vec![1.0; n]
    };

    let mut units = Vec::with_capacity(2 * n * j_max);
    for (ci, mult) in multipliers.iter().enumerate() {
        let base = cfg.base_mbits * MBIT * mult / j_max as f64;
        let enh = cfg.enh_mbits * MBIT * mult / j_max as f64;
        for chunk in 1..=j_max as u32 {
            for (layer, size_bits) in [(Layer::Base, base), (Layer::Enhancement, enh)] {
                let id = UnitId(units.len() as u32 + 1);
                units.push(ContentUnit {
                    content: ci as u32 + 1,
                    chunk,
                    layer,
                    id,
                    size_bits,
                });
            }
        }
    }
    let total_bits = units.iter().map(|u| u.size_bits).sum();

    Ok(Catalog {
        cfg: cfg.clone(),
        content_cdf: cumulative(&content_pmf),
        content_pmf,
        length_cdf: cumulative(&length_pmf),
        length_pmf,
        chunk_survival,
        units,
        total_bits,
    })
}

impl Catalog {
    pub fn config(&self) -> &CatalogConfig {
        &self.cfg
    }

    pub fn units(&self) -> &[ContentUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Sum of all unit sizes in the catalog, bits.
    pub fn total_bits(&self) -> f64 {
        self.total_bits
    }

    pub fn unit(&self, id: UnitId) -> Option<&ContentUnit> {
        (id.0 as usize).checked_sub(1).and_then(|i| self.units.get(i))
    }

    pub fn unit_id(&self, content: u32, chunk: u32, layer: Layer) -> Result<UnitId> {
        if content < 1 || content > self.cfg.contents || chunk < 1 || chunk > self.cfg.chunks {
            return Err(Error::Domain(format!(
                "no unit for content {content}, chunk {chunk}"
            )));
        }
        let idx = ((content - 1) * self.cfg.chunks + (chunk - 1)) * 2 + layer.index() as u32;
        Ok(UnitId(idx + 1))
    }

    pub fn content_prob(&self, content: u32) -> Result<f64> {
        (content as usize)
            .checked_sub(1)
            .and_then(|i| self.content_pmf.get(i).copied())
            .ok_or_else(|| Error::Domain(format!("content id {content} outside 1..={}", self.cfg.contents)))
    }

    /// Probability that chunk `j` is part of a session, `P(L >= j)`.
    pub fn chunk_prob(&self, chunk: u32) -> Result<f64> {
        (chunk as usize)
            .checked_sub(1)
            .and_then(|i| self.chunk_survival.get(i).copied())
            .ok_or_else(|| Error::Domain(format!("chunk id {chunk} outside 1..={}", self.cfg.chunks)))
    }

    pub fn layer_prob(&self, layer: Layer) -> f64 {
        match layer {
            Layer::Base => 1.0,
            Layer::Enhancement => self.cfg.p_hq,
        }
    }

    /// `p_i * p_j * p_k` for a unit of this catalog.
    pub fn request_prob(&self, unit: &ContentUnit) -> f64 {
        self.content_pmf[unit.content as usize - 1]
            * self.chunk_survival[unit.chunk as usize - 1]
            * self.layer_prob(unit.layer)
    }

    /// Session-length pmf over `1..=J`.
    pub fn length_pmf(&self) -> &[f64] {
        &self.length_pmf
    }

    pub fn sample_session(&self, rng: &mut impl Rng) -> Session {
        let content = sample_index(&self.content_cdf, rng) as u32 + 1;
        let high_quality = rng.random::<f64>() < self.cfg.p_hq;
        let length = sample_index(&self.length_cdf, rng) as u32 + 1;
        let per_chunk = if high_quality { 2 } else { 1 };
        let mut units = Vec::with_capacity((length * per_chunk) as usize);
        for chunk in 1..=length {
            let base = ((content - 1) * self.cfg.chunks + (chunk - 1)) * 2 + 1;
            units.push(UnitId(base));
            if high_quality {
                units.push(UnitId(base + 1));
            }
        }
        Session {
            content,
            high_quality,
            length,
            units,
        }
    }
}
