//! Aggregation over repeated collections and layer ranking.
//!
//! Repeated analyses (different subjects, same styles) are merged per cell by
//! dropping the single lowest and highest score and averaging the rest. The
//! merged table is then ranked ascending by score: the first layers of a
//! [`LayerRanking`] are the most sensitive to the analyzed aspect.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{mean, round_half_up};
use crate::scoring::{combine_projections, CellScore, Degeneracy, ScoreProjection, SensitivityTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RankScope {
    PerTimestep(u32),
    TimeAveraged,
}

impl fmt::Display for RankScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankScope::PerTimestep(t) => write!(f, "per_timestep:{t}"),
            RankScope::TimeAveraged => f.write_str("time_averaged"),
        }
    }
}

impl std::str::FromStr for RankScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "time_averaged" {
            return Ok(RankScope::TimeAveraged);
        }
        s.strip_prefix("per_timestep:")
            .and_then(|t| t.parse().ok())
            .map(RankScope::PerTimestep)
            .ok_or_else(|| Error::contract(format!("unknown ranking scope '{s}'")))
    }
}

/// Layers ordered from most to least sensitive.
///
/// `scores[layer]` is `None` for layers whose score is degenerate; those sit
/// after every scored layer. Ties are broken by ascending layer id and
/// recorded in `tie_breaks`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRanking {
    pub scope: RankScope,
    pub order: Vec<u32>,
    pub scores: BTreeMap<u32, Option<f64>>,
    pub tie_breaks: Vec<Vec<u32>>,
}

fn cmp_scores(a: (Option<f64>, u32), b: (Option<f64>, u32)) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    let by_score = match (a.0, b.0) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_score.then(a.1.cmp(&b.1))
}

impl LayerRanking {
    /// Sorts layers by score (degenerate last, ties by layer id).
    pub fn from_scores(scope: RankScope, scores: BTreeMap<u32, Option<f64>>) -> Self {
        let mut order: Vec<u32> = scores.keys().copied().collect();
        order.sort_by(|&a, &b| cmp_scores((scores[&a], a), (scores[&b], b)));

        let mut tie_breaks = Vec::new();
        let mut group: Vec<u32> = Vec::new();
        for &layer in &order {
            match group.last() {
                Some(prev) if scores[prev] == scores[&layer] => group.push(layer),
                _ => {
                    if group.len() > 1 {
                        tie_breaks.push(std::mem::take(&mut group));
                    }
                    group = vec![layer];
                }
            }
        }
        if group.len() > 1 {
            tie_breaks.push(group);
        }
        Self {
            scope,
            order,
            scores,
            tie_breaks,
        }
    }

    pub fn layers(&self) -> usize {
        self.order.len()
    }

    /// Position (0 = most sensitive) of every layer.
    pub fn positions(&self) -> BTreeMap<u32, usize> {
        self.order.iter().enumerate().map(|(pos, &l)| (l, pos)).collect()
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::io("<ranking stream>", e);
        writeln!(out, "# layerscope ranking scope={} layers={}", self.scope, self.order.len()).map_err(io)?;
        writeln!(out, "rank\tlayer_id\tscore\tflag").map_err(io)?;
        for (rank, layer) in self.order.iter().enumerate() {
            match self.scores[layer] {
                Some(g) => writeln!(out, "{rank}\t{layer}\t{g}\t-"),
                None => writeln!(out, "{rank}\t{layer}\t-\tdegenerate"),
            }
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let parse = |line: usize, message: String| Error::Parse { line, message };
        let lines: Vec<String> = reader
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| parse(0, e.to_string()))?;
        let header = lines.first().ok_or_else(|| parse(1, "missing header".into()))?;
        let rest = header
            .strip_prefix("# layerscope ranking scope=")
            .ok_or_else(|| parse(1, "not a ranking report".into()))?;
        let (scope, layers) = rest
            .split_once(" layers=")
            .ok_or_else(|| parse(1, "header lacks layer count".into()))?;
        let scope: RankScope = scope.parse().map_err(|e: Error| parse(1, e.to_string()))?;
        let layers: usize = layers.parse().map_err(|_| parse(1, "bad layer count".into()))?;
        if lines.get(1).map(String::as_str) != Some("rank\tlayer_id\tscore\tflag") {
            return Err(parse(2, "missing column header".into()));
        }

        let mut order = Vec::with_capacity(layers);
        let mut scores = BTreeMap::new();
        for (idx, line) in lines.iter().enumerate().skip(2) {
            let lineno = idx + 1;
            let cols: Vec<&str> = line.split('\t').collect();
            let [rank, layer, score, flag] = cols[..] else {
                return Err(parse(lineno, "expected 4 tab-separated columns".into()));
            };
            let rank: usize = rank.parse().map_err(|_| parse(lineno, "bad rank".into()))?;
            let layer: u32 = layer.parse().map_err(|_| parse(lineno, "bad layer_id".into()))?;
            let score = match (score, flag) {
                ("-", "degenerate") => None,
                (s, "-") => Some(s.parse::<f64>().map_err(|_| parse(lineno, "bad score".into()))?),
                _ => return Err(parse(lineno, "score and flag disagree".into())),
            };
            if rank != order.len() {
                return Err(Error::Schema {
                    line: lineno,
                    message: format!("rank {rank} out of sequence"),
                });
            }
            if scores.insert(layer, score).is_some() {
                return Err(Error::Schema {
                    line: lineno,
                    message: format!("layer {layer} listed twice"),
                });
            }
            order.push(layer);
        }
        if order.len() != layers || order.iter().any(|&l| l as usize >= layers) {
            return Err(Error::Schema {
                line: lines.len(),
                message: format!("order is not a permutation of 0..{layers}"),
            });
        }
        let ranking = Self::from_scores(scope, scores);
        if ranking.order != order {
            return Err(Error::Schema {
                line: lines.len(),
                message: "rows are not sorted by score".into(),
            });
        }
        Ok(ranking)
    }
}

pub fn read_ranking(path: impl AsRef<Path>) -> Result<LayerRanking> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    LayerRanking::read_from(BufReader::new(file))
}

pub fn write_ranking(ranking: &LayerRanking, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    ranking.write_to(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean of `values` without the single smallest and single largest entry;
/// plain mean for two or fewer values.
pub fn trimmed_mean(values: &[f64]) -> Option<f64> {
    match values.len() {
        0 => None,
        1 | 2 => Some(mean(values)),
        _ => {
            let mut lo = 0;
            let mut hi = 0;
            for (i, v) in values.iter().enumerate() {
                if v.total_cmp(&values[lo]).is_lt() {
                    lo = i;
                }
                if v.total_cmp(&values[hi]).is_ge() {
                    hi = i;
                }
            }
            if lo == hi {
                // all equal
                hi = if lo == 0 { 1 } else { 0 };
            }
            let kept: Vec<f64> = values
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != lo && i != hi)
                .map(|(_, &v)| v)
                .collect();
            Some(mean(&kept))
        }
    }
}

/// Merges repeated tables cell by cell with [`trimmed_mean`].
///
/// Degenerate inputs are left out; a merged cell is degenerate only when all
/// of its inputs are. Distances are merged the same way as scores.
pub fn trimmed_aggregate(tables: &[SensitivityTable]) -> Result<SensitivityTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::contract("trimmed aggregation needs at least one table"))?;
    for t in &tables[1..] {
        if !t.header.same_grid(&first.header) {
            return Err(Error::contract(
                "tables disagree on layers, timesteps or projections",
            ));
        }
        if t.cells.len() != first.cells.len() || t.cells.keys().ne(first.cells.keys()) {
            return Err(Error::contract("tables do not cover the same cells"));
        }
    }

    let mut header = first.header.clone();
    header.collection_ids = tables
        .iter()
        .flat_map(|t| t.header.collection_ids.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let merged = first.cells.keys().map(|key| {
        let inputs: Vec<&CellScore> = tables.iter().map(|t| &t.cells[key]).collect();
        let gs: Vec<f64> = inputs.iter().filter_map(|c| c.g).collect();
        let d_in = trimmed_mean(&inputs.iter().map(|c| c.d_in).collect::<Vec<_>>()).unwrap_or(0.0);
        let d_out = trimmed_mean(&inputs.iter().map(|c| c.d_out).collect::<Vec<_>>()).unwrap_or(0.0);
        let (g, flag) = match trimmed_mean(&gs) {
            Some(g) => (Some(g), None),
            None if inputs.iter().any(|c| c.flag == Some(Degeneracy::AntiClustered)) => {
                (None, Some(Degeneracy::AntiClustered))
            }
            None => (None, Some(Degeneracy::Uninformative)),
        };
        CellScore {
            layer_id: key.0,
            timestep: key.1,
            projection: key.2,
            d_in,
            d_out,
            g,
            flag,
        }
    });
    SensitivityTable::new(header, merged.collect::<Vec<_>>())
}

/// Score of (layer, timestep), combining projection slots when the table
/// holds more than one.
fn layer_score(table: &SensitivityTable, layer: u32, t: u32, slot: Option<ScoreProjection>) -> Result<Option<f64>> {
    let missing = || Error::contract(format!("table has no cell for layer {layer} at t = {t}"));
    match slot {
        Some(p) => Ok(table.get(layer, t, p).ok_or_else(missing)?.g),
        None => {
            let cells: Vec<CellScore> = table
                .header
                .projections
                .iter()
                .map(|&p| table.get(layer, t, p).cloned().ok_or_else(missing))
                .collect::<Result<_>>()?;
            if cells.len() == 1 {
                Ok(cells[0].g)
            } else {
                Ok(combine_projections(&cells)?.g)
            }
        }
    }
}

/// Ranks all layers, combining projection slots by their mean.
pub fn rank_layers(table: &SensitivityTable, scope: RankScope) -> Result<LayerRanking> {
    rank_layers_inner(table, scope, None)
}

/// Ranks all layers on a single projection slot of the table.
pub fn rank_layers_for(
    table: &SensitivityTable,
    scope: RankScope,
    projection: ScoreProjection,
) -> Result<LayerRanking> {
    if !table.header.projections.contains(&projection) {
        return Err(Error::lookup(format!("table has no {projection:?} scores")));
    }
    rank_layers_inner(table, scope, Some(projection))
}

fn rank_layers_inner(
    table: &SensitivityTable,
    scope: RankScope,
    slot: Option<ScoreProjection>,
) -> Result<LayerRanking> {
    let layers = table.header.layers;
    let timesteps: Vec<u32> = match scope {
        RankScope::PerTimestep(t) => {
            if !table.header.timesteps.contains(&t) {
                return Err(Error::lookup(format!("timestep {t} not in table")));
            }
            vec![t]
        }
        RankScope::TimeAveraged => table.header.timesteps.clone(),
    };
    if timesteps.is_empty() {
        return Err(Error::contract("table has no timesteps"));
    }

    let mut scores = BTreeMap::new();
    for layer in 0..layers {
        let per_t = timesteps
            .iter()
            .map(|&t| layer_score(table, layer, t, slot))
            .collect::<Result<Vec<_>>>()?;
        // any degenerate cell sends the whole layer to the back
        let score = per_t
            .iter()
            .copied()
            .collect::<Option<Vec<f64>>>()
            .map(|gs| mean(&gs));
        scores.insert(layer, score);
    }
    Ok(LayerRanking::from_scores(scope, scores))
}

/// `round_half_up(lambda_s * layers)`: number of layers a style fraction selects.
pub fn top_k_size(lambda_s: f64, layers: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&lambda_s) {
        return Err(Error::contract(format!("lambda_s must lie in [0, 1], got {lambda_s}")));
    }
    Ok(round_half_up(lambda_s * layers as f64) as usize)
}

/// The `round_half_up(lambda_s * layers)` most sensitive layers, in rank order.
pub fn select_top_k(ranking: &LayerRanking, lambda_s: f64, layers: usize) -> Result<Vec<u32>> {
    let k = top_k_size(lambda_s, layers)?.min(ranking.order.len());
    Ok(ranking.order[..k].to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankStat {
    pub layer: u32,
    pub mean_rank: f64,
    pub std_rank: f64,
}

/// Mean and population standard deviation of each layer's position across runs.
pub fn rank_statistics(runs: &[LayerRanking]) -> Result<Vec<RankStat>> {
    let positions = collect_positions(runs)?;
    Ok(positions
        .into_iter()
        .map(|(layer, ps)| {
            let mu = mean(&ps);
            let var = mean(&ps.iter().map(|p| (p - mu) * (p - mu)).collect::<Vec<_>>());
            RankStat {
                layer,
                mean_rank: mu,
                std_rank: var.sqrt(),
            }
        })
        .collect())
}

fn collect_positions(runs: &[LayerRanking]) -> Result<BTreeMap<u32, Vec<f64>>> {
    let first = runs
        .first()
        .ok_or_else(|| Error::contract("rank statistics need at least one ranking"))?;
    let layers = first.layers();
    let mut positions: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for run in runs {
        if run.layers() != layers {
            return Err(Error::contract(format!(
                "rankings cover {} and {} layers",
                layers,
                run.layers()
            )));
        }
        for (pos, &layer) in run.order.iter().enumerate() {
            positions.entry(layer).or_default().push(pos as f64);
        }
    }
    if positions.len() != layers || positions.values().any(|p| p.len() != runs.len()) {
        return Err(Error::contract("rankings do not share one layer set"));
    }
    Ok(positions)
}

/// Alternative merge for repeated runs: trims each layer's best and worst
/// rank position (instead of its scores) and re-ranks by the trimmed mean
/// position. The scope of the first run is kept.
pub fn rank_position_consensus(runs: &[LayerRanking]) -> Result<LayerRanking> {
    let positions = collect_positions(runs)?;
    let scores = positions
        .into_iter()
        .map(|(layer, ps)| (layer, trimmed_mean(&ps)))
        .collect();
    Ok(LayerRanking::from_scores(runs[0].scope, scores))
}
