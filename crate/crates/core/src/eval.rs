//! Content/style tradeoff curves from precomputed similarity scores, and
//! recovery metrics for rankings against synthetic ground truth.
//!
//! Similarity tables are CSV with the header
//!
//! ```text
//! image_id,method_tag,k_layers,conditioning,prompt_class,content_sim,style_sim
//! ```
//!
//! where `conditioning` is one of `text_only`, `canny`, `depth` and
//! `prompt_class` is `easy` or `complex`. The embeddings behind the two
//! similarity columns are computed elsewhere.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::LayerRanking;
use crate::synth::GroundTruth;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    TextOnly,
    Canny,
    Depth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptClass {
    Easy,
    Complex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityRecord {
    pub image_id: String,
    pub method_tag: String,
    pub k_layers: u32,
    pub conditioning: Conditioning,
    pub prompt_class: PromptClass,
    pub content_sim: f64,
    pub style_sim: f64,
}

pub fn read_similarity_from(reader: impl Read) -> Result<Vec<SimilarityRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let expected = [
        "image_id",
        "method_tag",
        "k_layers",
        "conditioning",
        "prompt_class",
        "content_sim",
        "style_sim",
    ];
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().ne(expected) {
        return Err(Error::Schema {
            line: 1,
            message: format!("expected columns {}", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<SimilarityRecord>() {
        let rec = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        for (name, v) in [("content_sim", rec.content_sim), ("style_sim", rec.style_sim)] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Schema {
                    line: out.len() + 2,
                    message: format!("{name} = {v} outside [-1, 1]"),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_similarity(path: impl AsRef<Path>) -> Result<Vec<SimilarityRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_similarity_from(file)
}

/// Optional equality filters over similarity records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurveFilter {
    pub method_tag: Option<String>,
    pub conditioning: Option<Conditioning>,
    pub prompt_class: Option<PromptClass>,
}

impl CurveFilter {
    pub fn matches(&self, r: &SimilarityRecord) -> bool {
        self.method_tag.as_ref().is_none_or(|m| *m == r.method_tag)
            && self.conditioning.is_none_or(|c| c == r.conditioning)
            && self.prompt_class.is_none_or(|p| p == r.prompt_class)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub k_layers: u32,
    pub mean_content: f64,
    pub mean_style: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TradeoffCurve {
    /// One point per distinct `k_layers`, ascending.
    pub points: Vec<TradeoffPoint>,
}

/// Mean content and style similarity per stylized-layer count.
pub fn tradeoff_curve<F>(records: &[SimilarityRecord], filter: F) -> Result<TradeoffCurve>
where
    F: Fn(&SimilarityRecord) -> bool,
{
    let mut groups: BTreeMap<u32, (f64, f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| filter(r)) {
        let g = groups.entry(r.k_layers).or_insert((0.0, 0.0, 0));
        g.0 += r.content_sim;
        g.1 += r.style_sim;
        g.2 += 1;
    }
    if groups.is_empty() {
        return Err(Error::contract("no similarity records match the filter"));
    }
    Ok(TradeoffCurve {
        points: groups
            .into_iter()
            .map(|(k_layers, (c, s, count))| TradeoffPoint {
                k_layers,
                mean_content: c / count as f64,
                mean_style: s / count as f64,
                count,
            })
            .collect(),
    })
}

impl TradeoffCurve {
    /// CSV with columns `k_layers,mean_content,mean_style,count`.
    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::io("<curve stream>", std::io::Error::other(e));
        for p in &self.points {
            w.serialize(p).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<curve stream>", e))
    }
}

pub fn write_curve(curve: &TradeoffCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    curve.write_to(file)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryMetrics {
    /// `|top-k ∩ planted| / min(k, |planted|)`; 0 when that minimum is 0.
    pub precision_at_k: f64,
    /// Mean 0-based rank position of the planted layers.
    pub mean_rank_of_planted: Option<f64>,
}

pub fn recovery_metrics(ranking: &LayerRanking, truth: &GroundTruth, k: usize) -> Result<RecoveryMetrics> {
    if k > ranking.layers() {
        return Err(Error::contract(format!(
            "k = {k} exceeds the {} ranked layers",
            ranking.layers()
        )));
    }
    let positions = ranking.positions();
    let planted = &truth.sensitive_layers;
    if let Some(l) = planted.iter().find(|l| !positions.contains_key(l)) {
        return Err(Error::contract(format!("planted layer {l} is not ranked")));
    }
    let top: BTreeSet<u32> = ranking.order[..k].iter().copied().collect();
    let hits = top.intersection(planted).count();
    let denom = k.min(planted.len());
    let precision_at_k = if denom == 0 { 0.0 } else { hits as f64 / denom as f64 };
    let mean_rank_of_planted = (!planted.is_empty()).then(|| {
        planted.iter().map(|l| positions[l] as f64).sum::<f64>() / planted.len() as f64
    });
    Ok(RecoveryMetrics {
        precision_at_k,
        mean_rank_of_planted,
    })
}
