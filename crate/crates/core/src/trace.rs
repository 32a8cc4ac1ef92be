//! Trace data model: per-image Gaussian summaries of attention projections.
//!
//! A trace file is UTF-8 and line-delimited. The first line is a header
//! object, every following line is one record object:
//!
//! ```text
//! {"schema_version":1,"L":2,"T_max":1,"d":2,"m":1,"n":1,"projections":["key"]}
//! {"collection_id":"c0","style_id":"monet","image_index":0,"layer_id":0,"timestep":1,"projection":"key","mu":[0.5,-1.0],"sigma":[1.0,0.25]}
//! ```
//!
//! Reals are written in shortest round-trip form, unknown fields are
//! rejected, and records are written in canonical order so that a given
//! [`TraceSet`] always produces the same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Attention projection a summary was taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Key,
    Query,
    Value,
}

impl Projection {
    pub const ALL: [Projection; 3] = [Projection::Key, Projection::Query, Projection::Value];

    pub fn as_str(self) -> &'static str {
        match self {
            Projection::Key => "key",
            Projection::Query => "query",
            Projection::Value => "value",
        }
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-channel mean and standard deviation of one image's features, read as
/// a diagonal Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianSummary {
    /// Checked constructor: equal non-zero lengths, finite entries, sigma >= 0.
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || mu.len() != sigma.len() {
            return Err(Error::contract(format!(
                "summary needs equal non-empty mu/sigma, got {} and {}",
                mu.len(),
                sigma.len()
            )));
        }
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::contract("summary contains a non-finite value"));
        }
        if sigma.iter().any(|&s| s < 0.0) {
            return Err(Error::contract("summary contains a negative sigma"));
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Identifies one (layer, timestep, projection) cell of a collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub layer: u32,
    pub timestep: u32,
    pub projection: Projection,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer={} t={} proj={}", self.layer, self.timestep, self.projection)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub collection_id: String,
    pub style_id: String,
    pub image_index: u32,
    pub layer_id: u32,
    pub timestep: u32,
    pub projection: Projection,
    pub summary: GaussianSummary,
}

impl TraceRecord {
    pub fn cell(&self) -> CellKey {
        CellKey {
            layer: self.layer_id,
            timestep: self.timestep,
            projection: self.projection,
        }
    }

    fn sort_key(&self) -> (&str, u32, u32, u32, Projection) {
        (
            &self.style_id,
            self.image_index,
            self.layer_id,
            self.timestep,
            self.projection,
        )
    }

    fn location(&self) -> String {
        format!(
            "style={} image={} {}",
            self.style_id,
            self.image_index,
            self.cell()
        )
    }
}

/// Authoritative shape of a collection; records must conform to it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub schema_version: u32,
    #[serde(rename = "L")]
    pub layers: u32,
    #[serde(rename = "T_max")]
    pub t_max: u32,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub projections: Vec<Projection>,
}

/// An m x n labeled image collection summarized at every declared cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    collection_id: String,
    style_id: String,
    image_index: u32,
    layer_id: u32,
    timestep: u32,
    projection: Projection,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl TraceSet {
    pub fn new(header: TraceHeader, records: Vec<TraceRecord>) -> Self {
        Self { header, records }
    }

    /// Sorts records into canonical order.
    pub fn canonicalize(&mut self) {
        self.records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    }

    /// Distinct cells present in the records, sorted.
    pub fn cells(&self) -> Vec<CellKey> {
        self.records
            .iter()
            .map(TraceRecord::cell)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Distinct timesteps present in the records, ascending.
    pub fn timesteps(&self) -> Vec<u32> {
        self.records
            .iter()
            .map(|r| r.timestep)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Distinct collection ids present in the records, sorted.
    pub fn collection_ids(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.collection_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header_line = match lines.next() {
            Some((_, line)) => line.map_err(|e| parse_err(1, e))?,
            None => return Err(parse_err(1, "missing header line")),
        };
        let header: TraceHeader = serde_json::from_str(&header_line).map_err(|e| parse_err(1, e))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                line: 1,
                message: format!(
                    "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                    header.schema_version
                ),
            });
        }

        let mut records = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| parse_err(lineno, e))?;
            let raw: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
            let schema = |message: String| Error::Schema {
                line: lineno,
                message,
            };
            if raw.layer_id >= header.layers {
                return Err(schema(format!(
                    "layer_id {} outside [0, {})",
                    raw.layer_id, header.layers
                )));
            }
            if raw.timestep > header.t_max {
                return Err(schema(format!(
                    "timestep {} exceeds T_max {}",
                    raw.timestep, header.t_max
                )));
            }
            if !header.projections.contains(&raw.projection) {
                return Err(schema(format!(
                    "projection {} not declared in header",
                    raw.projection
                )));
            }
            if raw.mu.len() != header.d || raw.sigma.len() != header.d {
                return Err(schema(format!(
                    "mu/sigma lengths {}/{} do not match d = {}",
                    raw.mu.len(),
                    raw.sigma.len(),
                    header.d
                )));
            }
            records.push(TraceRecord {
                collection_id: raw.collection_id,
                style_id: raw.style_id,
                image_index: raw.image_index,
                layer_id: raw.layer_id,
                timestep: raw.timestep,
                projection: raw.projection,
                summary: GaussianSummary {
                    mu: raw.mu,
                    sigma: raw.sigma,
                },
            });
        }
        Ok(Self { header, records })
    }

    /// Writes the canonical encoding. The set must validate.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let report = validate(self);
        if !report.ok {
            return Err(Error::Validation(report));
        }
        let mut order: Vec<&TraceRecord> = self.records.iter().collect();
        order.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

        let io = |e: std::io::Error| Error::io("<trace stream>", e);
        let header = serde_json::to_string(&self.header).expect("header serializes");
        writeln!(out, "{header}").map_err(io)?;
        for rec in order {
            let line = RecordLine {
                collection_id: rec.collection_id.clone(),
                style_id: rec.style_id.clone(),
                image_index: rec.image_index,
                layer_id: rec.layer_id,
                timestep: rec.timestep,
                projection: rec.projection,
                mu: rec.summary.mu.clone(),
                sigma: rec.summary.sigma.clone(),
            };
            let text = serde_json::to_string(&line).expect("record serializes");
            writeln!(out, "{text}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }
}

fn parse_err(line: usize, e: impl fmt::Display) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<TraceSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    TraceSet::read_from(BufReader::new(file))
}

pub fn write_traces(set: &TraceSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = set.to_bytes()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Issue {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn from_issues(mut issues: Vec<Issue>) -> Self {
        issues.sort();
        let ok = !issues.iter().any(|i| i.severity == Severity::Error);
        Self { ok, issues }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn summary(&self) -> String {
        let errors: Vec<String> = self
            .errors()
            .take(5)
            .map(|i| format!("{} ({})", i.message, i.location))
            .collect();
        let total = self.errors().count();
        if total == 0 {
            "no errors".to_owned()
        } else if total > errors.len() {
            format!("{}; and {} more", errors.join("; "), total - errors.len())
        } else {
            errors.join("; ")
        }
    }
}

/// Checks a set against its header and the full m x n grid requirement.
///
/// Issues are sorted, so the report does not depend on record order.
pub fn validate(set: &TraceSet) -> ValidationReport {
    let h = &set.header;
    let mut issues = Vec::new();
    let mut error = |location: String, message: String| {
        issues.push(Issue {
            severity: Severity::Error,
            location,
            message,
        })
    };

    if h.schema_version != SCHEMA_VERSION {
        error("header".into(), format!("unsupported schema_version {}", h.schema_version));
    }
    if h.layers == 0 || h.d == 0 || h.m == 0 || h.n == 0 {
        error("header".into(), "L, d, m and n must be at least 1".into());
    }
    let declared: BTreeSet<Projection> = h.projections.iter().copied().collect();
    if declared.is_empty() || declared.len() != h.projections.len() {
        error("header".into(), "projections must be non-empty and unique".into());
    }

    let mut seen: BTreeMap<(&str, u32, CellKey), usize> = BTreeMap::new();
    let mut styles: BTreeSet<&str> = BTreeSet::new();
    for rec in &set.records {
        let loc = rec.location();
        if rec.layer_id >= h.layers {
            error(loc.clone(), "layer out of range".into());
        }
        if rec.timestep > h.t_max {
            error(loc.clone(), "timestep out of range".into());
        }
        if !declared.contains(&rec.projection) {
            error(loc.clone(), "undeclared projection".into());
        }
        if rec.image_index as usize >= h.n {
            error(loc.clone(), "image index out of range".into());
        }
        let s = &rec.summary;
        if s.mu.len() != h.d || s.sigma.len() != h.d {
            error(loc.clone(), "dimension mismatch".into());
        }
        if s.mu.iter().chain(&s.sigma).any(|v| !v.is_finite()) {
            error(loc.clone(), "non-finite value".into());
        }
        if s.sigma.iter().any(|&v| v < 0.0) {
            error(loc.clone(), "negative sigma".into());
        }
        let count = seen
            .entry((rec.style_id.as_str(), rec.image_index, rec.cell()))
            .or_insert(0);
        *count += 1;
        if *count == 2 {
            error(loc, "duplicate key".into());
        }
        styles.insert(rec.style_id.as_str());
    }

    if !set.records.is_empty() {
        if styles.len() != h.m {
            error(
                "collection".into(),
                format!("style count mismatch: found {}, header declares m = {}", styles.len(), h.m),
            );
        }

        let mut present: BTreeMap<CellKey, BTreeSet<(&str, u32)>> = BTreeMap::new();
        for rec in &set.records {
            present
                .entry(rec.cell())
                .or_default()
                .insert((rec.style_id.as_str(), rec.image_index));
        }
        let timesteps = set.timesteps();
        for layer in 0..h.layers {
            for &timestep in &timesteps {
                for &projection in &declared {
                    let key = CellKey {
                        layer,
                        timestep,
                        projection,
                    };
                    let Some(members) = present.get(&key) else {
                        error(key.to_string(), "missing cell".into());
                        continue;
                    };
                    for &style in &styles {
                        for image in 0..h.n as u32 {
                            if !members.contains(&(style, image)) {
                                error(
                                    format!("style={style} image={image} {key}"),
                                    "incomplete grid".into(),
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    ValidationReport::from_issues(issues)
}

/// One style cluster of a cell, members ordered by image index.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub style_id: String,
    pub members: Vec<GaussianSummary>,
}

/// The m clusters of n summaries observed at one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellView {
    pub key: CellKey,
    pub clusters: Vec<Cluster>,
}

impl CellView {
    /// Builds a view from unlabeled clusters; styles are named by position.
    pub fn from_clusters(key: CellKey, clusters: Vec<Vec<GaussianSummary>>) -> Self {
        Self {
            key,
            clusters: clusters
                .into_iter()
                .enumerate()
                .map(|(i, members)| Cluster {
                    style_id: format!("s{i:03}"),
                    members,
                })
                .collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    /// Images per cluster; clusters of unequal size report the smallest.
    pub fn n(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).min().unwrap_or(0)
    }
}

fn build_view<'a>(
    key: CellKey,
    header: &TraceHeader,
    records: impl Iterator<Item = &'a TraceRecord>,
) -> Result<CellView> {
    let mut by_style: BTreeMap<&str, BTreeMap<u32, &GaussianSummary>> = BTreeMap::new();
    for rec in records {
        by_style
            .entry(rec.style_id.as_str())
            .or_default()
            .insert(rec.image_index, &rec.summary);
    }
    if by_style.is_empty() {
        return Err(Error::lookup(format!("no records for cell {key}")));
    }
    if by_style.len() != header.m || by_style.values().any(|imgs| imgs.len() != header.n) {
        return Err(Error::contract(format!(
            "cell {key} is not a complete {}x{} grid",
            header.m, header.n
        )));
    }
    Ok(CellView {
        key,
        clusters: by_style
            .into_iter()
            .map(|(style, imgs)| Cluster {
                style_id: style.to_owned(),
                members: imgs.into_values().cloned().collect(),
            })
            .collect(),
    })
}

/// Materializes the style clusters of one cell, ordered by (style_id, image_index).
pub fn group_by_cell(
    set: &TraceSet,
    layer: u32,
    timestep: u32,
    projection: Projection,
) -> Result<CellView> {
    let key = CellKey {
        layer,
        timestep,
        projection,
    };
    build_view(key, &set.header, set.records.iter().filter(|r| r.cell() == key))
}

/// Every cell of the set grouped in one pass, sorted by cell key.
pub fn all_cells(set: &TraceSet) -> Result<Vec<CellView>> {
    let mut index: BTreeMap<CellKey, Vec<&TraceRecord>> = BTreeMap::new();
    for rec in &set.records {
        index.entry(rec.cell()).or_default().push(rec);
    }
    index
        .into_iter()
        .map(|(key, recs)| build_view(key, &set.header, recs.into_iter()))
        .collect()
}
