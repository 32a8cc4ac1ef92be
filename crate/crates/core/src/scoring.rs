//! Inner/outer cluster distances and the clustering score per cell.
//!
//! For a cell with `m` style clusters of `n` images each:
//!
//! - inner distance: mean over clusters of the mean JSD over the `C(n, 2)`
//!   unordered pairs inside the cluster
//! - outer distance: mean JSD over the `C(m, 2) * n^2` pairs drawn from two
//!   different clusters
//! - score `g = inner / outer`; lower means the layer separates styles better
//!
//! A cell whose outer distance is zero carries a [`Degeneracy`] flag instead
//! of a score and always ranks after every scored cell.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{jsd, DivergenceConfig};
use crate::error::{Error, Result};
use crate::numeric::mean;
use crate::trace::{all_cells, validate, CellView, GaussianSummary, Projection, TraceSet};

pub const TABLE_SCHEMA_VERSION: u32 = 1;

/// Projection slot a score belongs to. `Mean` marks scores combined over
/// every projection of the cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreProjection {
    Key,
    Query,
    Value,
    Mean,
}

impl From<Projection> for ScoreProjection {
    fn from(p: Projection) -> Self {
        match p {
            Projection::Key => ScoreProjection::Key,
            Projection::Query => ScoreProjection::Query,
            Projection::Value => ScoreProjection::Value,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProjectionPolicy {
    /// One score per declared projection.
    PerProjection,
    /// Each projection scored on its own, then the scores averaged.
    #[default]
    MeanOverProjections,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// Inner and outer distances both zero.
    Uninformative,
    /// Outer distance zero, inner distance positive.
    AntiClustered,
}

impl fmt::Display for Degeneracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Degeneracy::Uninformative => "uninformative",
            Degeneracy::AntiClustered => "anti_clustered",
        })
    }
}

/// Score of one (layer, timestep, projection) cell.
///
/// For single-projection cells `g == d_in / d_out`. For `Mean` cells `g` is
/// the mean of the per-projection scores and `d_in`, `d_out` are the means
/// of the per-projection distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellScore {
    pub layer_id: u32,
    pub timestep: u32,
    pub projection: ScoreProjection,
    pub d_in: f64,
    pub d_out: f64,
    pub g: Option<f64>,
    pub flag: Option<Degeneracy>,
}

impl CellScore {
    pub fn is_degenerate(&self) -> bool {
        self.flag.is_some()
    }

    fn key(&self) -> (u32, u32, ScoreProjection) {
        (self.layer_id, self.timestep, self.projection)
    }
}

fn require_uniform(cell: &CellView) -> Result<usize> {
    let n = cell.clusters.first().map_or(0, |c| c.members.len());
    if cell.clusters.iter().any(|c| c.members.len() != n) {
        return Err(Error::contract(format!(
            "cell {} has clusters of unequal size",
            cell.key
        )));
    }
    Ok(n)
}

/// Inner distance with a caller-supplied pair divergence.
pub fn inner_distance_with<F>(cell: &CellView, mut divergence: F) -> Result<f64>
where
    F: FnMut(&GaussianSummary, &GaussianSummary) -> Result<f64>,
{
    let n = require_uniform(cell)?;
    if cell.m() < 1 || n < 2 {
        return Err(Error::contract(format!(
            "inner distance needs m >= 1 and n >= 2, got m = {}, n = {n}",
            cell.m()
        )));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut per_cluster = Vec::with_capacity(cell.m());
    for cluster in &cell.clusters {
        let mut sum = 0.0;
        for (i, a) in cluster.members.iter().enumerate() {
            for b in &cluster.members[i + 1..] {
                sum += divergence(a, b)?;
            }
        }
        per_cluster.push(sum / pairs);
    }
    Ok(mean(&per_cluster))
}

/// Outer distance with a caller-supplied pair divergence.
pub fn outer_distance_with<F>(cell: &CellView, mut divergence: F) -> Result<f64>
where
    F: FnMut(&GaussianSummary, &GaussianSummary) -> Result<f64>,
{
    let n = require_uniform(cell)?;
    let m = cell.m();
    if m < 2 || n < 1 {
        return Err(Error::contract(format!(
            "outer distance needs m >= 2 and n >= 1, got m = {m}, n = {n}"
        )));
    }
    let pairs = (m * (m - 1) / 2 * n * n) as f64;
    let mut sum = 0.0;
    for (s1, c1) in cell.clusters.iter().enumerate() {
        for c2 in &cell.clusters[s1 + 1..] {
            for a in &c1.members {
                for b in &c2.members {
                    sum += divergence(a, b)?;
                }
            }
        }
    }
    Ok(sum / pairs)
}

pub fn inner_distance(cell: &CellView, cfg: &DivergenceConfig) -> Result<f64> {
    inner_distance_with(cell, |a, b| jsd(a, b, cfg))
}

pub fn outer_distance(cell: &CellView, cfg: &DivergenceConfig) -> Result<f64> {
    outer_distance_with(cell, |a, b| jsd(a, b, cfg))
}

/// Clustering score with a caller-supplied pair divergence.
pub fn clustering_score_with<F>(cell: &CellView, mut divergence: F) -> Result<CellScore>
where
    F: FnMut(&GaussianSummary, &GaussianSummary) -> Result<f64>,
{
    if cell.m() < 2 || cell.n() < 2 {
        return Err(Error::contract(format!(
            "clustering score needs m >= 2 and n >= 2, got m = {}, n = {}",
            cell.m(),
            cell.n()
        )));
    }
    let d_in = inner_distance_with(cell, &mut divergence)?;
    let d_out = outer_distance_with(cell, &mut divergence)?;
    let (g, flag) = if d_out > 0.0 {
        (Some(d_in / d_out), None)
    } else if d_in > 0.0 {
        (None, Some(Degeneracy::AntiClustered))
    } else {
        (None, Some(Degeneracy::Uninformative))
    };
    Ok(CellScore {
        layer_id: cell.key.layer,
        timestep: cell.key.timestep,
        projection: cell.key.projection.into(),
        d_in,
        d_out,
        g,
        flag,
    })
}

pub fn clustering_score(cell: &CellView, cfg: &DivergenceConfig) -> Result<CellScore> {
    clustering_score_with(cell, |a, b| jsd(a, b, cfg))
}

/// Combines scores of the same (layer, timestep) into one `Mean` score.
///
/// Flagged inputs are left out of the mean; the result is flagged only when
/// every input is.
pub fn combine_projections(scores: &[CellScore]) -> Result<CellScore> {
    let first = scores
        .first()
        .ok_or_else(|| Error::contract("cannot combine an empty score list"))?;
    if scores
        .iter()
        .any(|s| s.layer_id != first.layer_id || s.timestep != first.timestep)
    {
        return Err(Error::contract("combined scores must share layer and timestep"));
    }
    let gs: Vec<f64> = scores.iter().filter_map(|s| s.g).collect();
    let d_in = mean(&scores.iter().map(|s| s.d_in).collect::<Vec<_>>());
    let d_out = mean(&scores.iter().map(|s| s.d_out).collect::<Vec<_>>());
    let (g, flag) = if gs.is_empty() {
        let anti = scores.iter().any(|s| s.flag == Some(Degeneracy::AntiClustered));
        let flag = if anti {
            Degeneracy::AntiClustered
        } else {
            Degeneracy::Uninformative
        };
        (None, Some(flag))
    } else {
        (Some(mean(&gs)), None)
    };
    Ok(CellScore {
        layer_id: first.layer_id,
        timestep: first.timestep,
        projection: ScoreProjection::Mean,
        d_in,
        d_out,
        g,
        flag,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableHeader {
    pub schema_version: u32,
    pub collection_ids: Vec<String>,
    #[serde(rename = "L")]
    pub layers: u32,
    pub timesteps: Vec<u32>,
    pub projections: Vec<ScoreProjection>,
    pub m: usize,
    pub n: usize,
}

impl TableHeader {
    /// True when two headers describe the same (layer, timestep, projection) grid.
    pub fn same_grid(&self, other: &TableHeader) -> bool {
        self.layers == other.layers
            && self.timesteps == other.timesteps
            && self.projections == other.projections
    }
}

/// Clustering score of every cell of a collection.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityTable {
    pub header: TableHeader,
    pub cells: BTreeMap<(u32, u32, ScoreProjection), CellScore>,
}

impl SensitivityTable {
    pub fn new(header: TableHeader, scores: impl IntoIterator<Item = CellScore>) -> Result<Self> {
        let mut cells = BTreeMap::new();
        for score in scores {
            if cells.insert(score.key(), score.clone()).is_some() {
                return Err(Error::contract(format!(
                    "duplicate cell layer={} t={} proj={:?}",
                    score.layer_id, score.timestep, score.projection
                )));
            }
        }
        Ok(Self { header, cells })
    }

    pub fn get(&self, layer: u32, timestep: u32, projection: ScoreProjection) -> Option<&CellScore> {
        self.cells.get(&(layer, timestep, projection))
    }

    /// Cells absent from the header's full layer x timestep x projection grid.
    pub fn missing_cells(&self) -> Vec<(u32, u32, ScoreProjection)> {
        let mut missing = Vec::new();
        for layer in 0..self.header.layers {
            for &t in &self.header.timesteps {
                for &p in &self.header.projections {
                    if !self.cells.contains_key(&(layer, t, p)) {
                        missing.push((layer, t, p));
                    }
                }
            }
        }
        missing
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::io("<table stream>", e);
        let header = serde_json::to_string(&self.header).expect("header serializes");
        writeln!(out, "{header}").map_err(io)?;
        for cell in self.cells.values() {
            if cell.g.is_none() == cell.flag.is_none() || cell.g.is_some_and(|g| !g.is_finite()) {
                return Err(Error::contract(format!(
                    "cell layer={} t={} has inconsistent score/flag",
                    cell.layer_id, cell.timestep
                )));
            }
            let line = serde_json::to_string(cell).expect("cell serializes");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let parse = |line: usize, e: &dyn fmt::Display| Error::Parse {
            line,
            message: e.to_string(),
        };
        let mut lines = reader.lines().enumerate();
        let header_line = match lines.next() {
            Some((_, l)) => l.map_err(|e| parse(1, &e))?,
            None => return Err(parse(1, &"missing header line")),
        };
        let header: TableHeader = serde_json::from_str(&header_line).map_err(|e| parse(1, &e))?;
        if header.schema_version != TABLE_SCHEMA_VERSION {
            return Err(Error::Schema {
                line: 1,
                message: format!("unsupported schema_version {}", header.schema_version),
            });
        }
        let timesteps: BTreeSet<u32> = header.timesteps.iter().copied().collect();
        let mut cells = BTreeMap::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| parse(lineno, &e))?;
            let cell: CellScore = serde_json::from_str(&line).map_err(|e| parse(lineno, &e))?;
            let schema = |message: &str| Error::Schema {
                line: lineno,
                message: message.to_owned(),
            };
            if cell.layer_id >= header.layers {
                return Err(schema("layer_id out of range"));
            }
            if !timesteps.contains(&cell.timestep) {
                return Err(schema("timestep not declared in header"));
            }
            if !header.projections.contains(&cell.projection) {
                return Err(schema("projection not declared in header"));
            }
            if cell.g.is_none() == cell.flag.is_none() {
                return Err(schema("exactly one of g and flag must be set"));
            }
            if cells.insert(cell.key(), cell).is_some() {
                return Err(schema("duplicate cell"));
            }
        }
        Ok(Self { header, cells })
    }
}

pub fn read_table(path: impl AsRef<Path>) -> Result<SensitivityTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    SensitivityTable::read_from(BufReader::new(file))
}

pub fn write_table(table: &SensitivityTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = table.to_bytes()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn sensitivity_table(
    set: &TraceSet,
    cfg: &DivergenceConfig,
    policy: ProjectionPolicy,
) -> Result<SensitivityTable> {
    sensitivity_table_with_threads(set, cfg, policy, None)
}

/// Scores every cell of `set`, fanning cells out over `threads` workers
/// (the global pool when `None`). Output does not depend on the worker count.
pub fn sensitivity_table_with_threads(
    set: &TraceSet,
    cfg: &DivergenceConfig,
    policy: ProjectionPolicy,
    threads: Option<usize>,
) -> Result<SensitivityTable> {
    let report = validate(set);
    if !report.ok {
        return Err(Error::Validation(report));
    }
    let views = all_cells(set)?;
    let score_all = || -> Result<Vec<CellScore>> {
        views.par_iter().map(|v| clustering_score(v, cfg)).collect()
    };
    let scores = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::contract(format!("cannot build worker pool: {e}")))?
            .install(score_all)?,
        None => score_all()?,
    };

    let declared: Vec<Projection> = {
        let mut p = set.header.projections.clone();
        p.sort();
        p
    };
    let (projections, scores) = match policy {
        ProjectionPolicy::PerProjection => (declared.iter().map(|&p| p.into()).collect(), scores),
        ProjectionPolicy::MeanOverProjections => {
            let mut grouped: BTreeMap<(u32, u32), Vec<CellScore>> = BTreeMap::new();
            for s in scores {
                grouped.entry((s.layer_id, s.timestep)).or_default().push(s);
            }
            let combined = grouped
                .values()
                .map(|group| combine_projections(group))
                .collect::<Result<Vec<_>>>()?;
            (vec![ScoreProjection::Mean], combined)
        }
    };

    let header = TableHeader {
        schema_version: TABLE_SCHEMA_VERSION,
        collection_ids: set.collection_ids(),
        layers: set.header.layers,
        timesteps: set.timesteps(),
        projections,
        m: set.header.m,
        n: set.header.n,
    };
    SensitivityTable::new(header, scores)
}
