//! Synthetic trace sets with planted sensitive layers.
//!
//! Every random draw is keyed on its coordinates (seed, style, image, layer,
//! timestep, projection) rather than on a running stream, so a record's
//! values do not depend on the order in which records are generated.
//!
//! For a record of style `s`, image `i` at cell `(l, t, p)` and channel `c`:
//!
//! ```text
//! mu[c]    = base[l,t,p][c] + sep_l * base_sigma * dir[s,l,t,p][c]
//!            + intra_spread * base_sigma * noise[s,i,l,t,p][c]
//! sigma[c] = base_sigma * exp(sigma_jitter * noise'[s,i,l,t,p][c])
//! ```
//!
//! with all of `base`, `dir`, `noise`, `noise'` standard normal and `sep_l`
//! zero for layers that are not planted.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{GaussianSummary, Projection, TraceHeader, TraceRecord, TraceSet, SCHEMA_VERSION};

fn default_collection() -> String {
    "synthetic".into()
}
fn default_base_sigma() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    0.05
}
fn default_spread() -> f64 {
    0.1
}
fn default_projections() -> Vec<Projection> {
    vec![Projection::Key]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_collection")]
    pub collection_id: String,
    pub m: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub layers: u32,
    pub timesteps: Vec<u32>,
    pub d: usize,
    pub seed: u64,
    /// Layer -> cross-cluster mean offset, in units of `base_sigma`.
    #[serde(default)]
    pub planted: BTreeMap<u32, f64>,
    #[serde(default = "default_base_sigma")]
    pub base_sigma: f64,
    #[serde(default = "default_jitter")]
    pub sigma_jitter: f64,
    /// Within-cluster spread of the means, in units of `base_sigma`.
    #[serde(default = "default_spread")]
    pub intra_spread: f64,
    #[serde(default = "default_projections")]
    pub projections: Vec<Projection>,
}

impl SynthConfig {
    /// Config with default spreads and no planted layers.
    pub fn new(m: usize, n: usize, layers: u32, timesteps: Vec<u32>, d: usize, seed: u64) -> Self {
        Self {
            collection_id: default_collection(),
            m,
            n,
            layers,
            timesteps,
            d,
            seed,
            planted: BTreeMap::new(),
            base_sigma: default_base_sigma(),
            sigma_jitter: default_jitter(),
            intra_spread: default_spread(),
            projections: default_projections(),
        }
    }

    pub fn with_planted(mut self, layers: impl IntoIterator<Item = u32>, separation: f64) -> Self {
        self.planted.extend(layers.into_iter().map(|l| (l, separation)));
        self
    }

    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::contract(m));
        if self.m < 1 || self.n < 1 || self.layers < 1 || self.d < 1 {
            return fail("m, n, L and d must be at least 1".into());
        }
        let unique: BTreeSet<u32> = self.timesteps.iter().copied().collect();
        if unique.is_empty() || unique.len() != self.timesteps.len() {
            return fail("timesteps must be non-empty and distinct".into());
        }
        let projections: BTreeSet<Projection> = self.projections.iter().copied().collect();
        if projections.is_empty() || projections.len() != self.projections.len() {
            return fail("projections must be non-empty and distinct".into());
        }
        for (&layer, &sep) in &self.planted {
            if layer >= self.layers {
                return fail(format!("planted layer {layer} outside [0, {})", self.layers));
            }
            if !(sep >= 0.0 && sep.is_finite()) {
                return fail(format!("separation for layer {layer} must be finite and >= 0"));
            }
        }
        if !(self.base_sigma > 0.0 && self.base_sigma.is_finite()) {
            return fail("base_sigma must be positive".into());
        }
        if !(self.sigma_jitter >= 0.0 && self.intra_spread >= 0.0) {
            return fail("sigma_jitter and intra_spread must be >= 0".into());
        }
        Ok(())
    }

    fn style_id(&self, s: usize) -> String {
        let width = (self.m.saturating_sub(1)).to_string().len().max(2);
        format!("style{s:0width$}")
    }
}

/// The planted layers a ranking should recover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub sensitive_layers: BTreeSet<u32>,
    pub separations: BTreeMap<u32, f64>,
}

impl GroundTruth {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = serde_json::to_string_pretty(self).expect("truth serializes");
        text.push('\n');
        text.into_bytes()
    }
}

pub fn write_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, truth.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn read_config(path: impl AsRef<Path>) -> Result<SynthConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: SynthConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    cfg.check()?;
    Ok(cfg)
}

const TAG_BASE: u64 = 1;
const TAG_DIRECTION: u64 = 2;
const TAG_IMAGE: u64 = 3;

// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_key(seed: u64, tag: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix(seed ^ mix(tag)), |h, &c| mix(h ^ c))
}

fn normals(key: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..count).map(|_| rng.sample(StandardNormal)).collect()
}

fn proj_code(p: Projection) -> u64 {
    match p {
        Projection::Key => 0,
        Projection::Query => 1,
        Projection::Value => 2,
    }
}

fn generate(cfg: &SynthConfig, planted: &BTreeMap<u32, f64>) -> Result<TraceSet> {
    cfg.check()?;
    let d = cfg.d;
    let mut records = Vec::with_capacity(cfg.m * cfg.n * cfg.layers as usize * cfg.timesteps.len());
    for layer in 0..cfg.layers {
        let separation = planted.get(&layer).copied().unwrap_or(0.0);
        for &t in &cfg.timesteps {
            for &p in &cfg.projections {
                let cell = [u64::from(layer), u64::from(t), proj_code(p)];
                let base = normals(stream_key(cfg.seed, TAG_BASE, &cell), d);
                for s in 0..cfg.m {
                    let offset: Vec<f64> = if separation > 0.0 {
                        let key = stream_key(cfg.seed, TAG_DIRECTION, &[s as u64, cell[0], cell[1], cell[2]]);
                        normals(key, d)
                            .into_iter()
                            .map(|z| separation * cfg.base_sigma * z)
                            .collect()
                    } else {
                        vec![0.0; d]
                    };
                    let style_id = cfg.style_id(s);
                    for i in 0..cfg.n {
                        let key = stream_key(cfg.seed, TAG_IMAGE, &[s as u64, i as u64, cell[0], cell[1], cell[2]]);
                        let z = normals(key, 2 * d);
                        let mu = (0..d)
                            .map(|c| base[c] + offset[c] + cfg.intra_spread * cfg.base_sigma * z[c])
                            .collect();
                        let sigma = (0..d)
                            .map(|c| cfg.base_sigma * (cfg.sigma_jitter * z[d + c]).exp())
                            .collect();
                        records.push(TraceRecord {
                            collection_id: cfg.collection_id.clone(),
                            style_id: style_id.clone(),
                            image_index: i as u32,
                            layer_id: layer,
                            timestep: t,
                            projection: p,
                            summary: GaussianSummary { mu, sigma },
                        });
                    }
                }
            }
        }
    }
    let header = TraceHeader {
        schema_version: SCHEMA_VERSION,
        layers: cfg.layers,
        t_max: cfg.timesteps.iter().copied().max().unwrap_or(0),
        d,
        m: cfg.m,
        n: cfg.n,
        projections: cfg.projections.clone(),
    };
    let mut set = TraceSet::new(header, records);
    set.canonicalize();
    Ok(set)
}

/// Trace set whose planted layers separate styles by their configured offset.
pub fn generate_planted(cfg: &SynthConfig) -> Result<(TraceSet, GroundTruth)> {
    let set = generate(cfg, &cfg.planted)?;
    let truth = GroundTruth {
        sensitive_layers: cfg.planted.keys().copied().collect(),
        separations: cfg.planted.clone(),
    };
    Ok((set, truth))
}

/// Trace set whose summaries ignore style labels everywhere; `planted` is
/// not consulted.
pub fn generate_null(cfg: &SynthConfig) -> Result<TraceSet> {
    generate(cfg, &BTreeMap::new())
}
