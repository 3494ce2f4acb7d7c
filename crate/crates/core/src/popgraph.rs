//! Population graphs whose edge weights measure metadata agreement.
//!
//! Seven channels enter the weight: three categorical (sex, anatomical site,
//! source dataset) compared by equality, and four numeric (age, area,
//! perimeter, radius of gyration) compared through a z-scored, tanh-squashed
//! pairwise difference.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const N_CHANNELS: usize = 7;
pub const CHANNEL_NAMES: [&str; N_CHANNELS] = ["sex", "site", "source", "age", "area_mm2", "perimeter_mm", "rg_mm"];
pub const METADATA_HEADER: &str = "id,label,age,sex,site,source,area_mm2,perimeter_mm,rg_mm";
pub const EDGE_HEADER: &str = "u,v,weight";
pub const FEATURE_MAGIC: &[u8; 4] = b"GDFM";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeRecord {
    pub id: String,
    pub label: Option<usize>,
    pub age: Option<f64>,
    pub sex: Option<String>,
    pub site: Option<String>,
    pub source: Option<String>,
    pub area_mm2: Option<f64>,
    pub perimeter_mm: Option<f64>,
    pub rg_mm: Option<f64>,
}

impl NodeRecord {
    fn categorical(&self, c: usize) -> Option<&str> {
        match c {
            0 => self.sex.as_deref(),
            1 => self.site.as_deref(),
            2 => self.source.as_deref(),
            _ => None,
        }
    }

    /// Numeric channel `c` in `0..4`: age, area, perimeter, radius of gyration.
    pub fn numeric(&self, c: usize) -> Option<f64> {
        match c {
            0 => self.age,
            1 => self.area_mm2,
            2 => self.perimeter_mm,
            3 => self.rg_mm,
            _ => None,
        }
    }
}

/// Node metadata plus an `N × d` feature matrix, rows aligned with records.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub records: Vec<NodeRecord>,
    pub features: Array2<f64>,
}

impl Cohort {
    pub fn new(records: Vec<NodeRecord>, features: Array2<f64>) -> Result<Self> {
        if records.len() != features.nrows() {
            return Err(Error::Cohort(format!(
                "{} metadata rows but {} feature rows",
                records.len(),
                features.nrows()
            )));
        }
        Ok(Self { records, features })
    }

    /// Builds the feature matrix from per-node vectors, which must share a length.
    pub fn from_rows(records: Vec<NodeRecord>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::Cohort(format!(
                "feature row {i} has length {}, expected {d}",
                r.len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::Cohort(e.to_string()))?;
        Self::new(records, features)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Labels, failing if any node is unlabeled or outside `0..n_classes`.
    pub fn labels(&self, n_classes: usize) -> Result<Vec<usize>> {
        self.records
            .iter()
            .map(|r| match r.label {
                Some(l) if l < n_classes => Ok(l),
                Some(l) => Err(Error::Cohort(format!("node {} has label {l} ≥ {n_classes}", r.id))),
                None => Err(Error::Cohort(format!("node {} is unlabeled", r.id))),
            })
            .collect()
    }
}

pub fn gamma_categorical(a: &str, b: &str) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Clipping bounds and pairwise-difference statistics of one numeric channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPrep {
    pub lo: f64,
    pub hi: f64,
    pub mean: f64,
    pub std: f64,
    /// Fewer than two distinct values or zero spread: γ is always 0.
    pub constant: bool,
    /// No node has a value; the channel takes no part in any weight.
    pub disabled: bool,
}

/// Nearest-rank percentile of sorted data, `p` in percent.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

pub fn prepare_numeric_channel(values: &[Option<f64>]) -> ChannelPrep {
    let mut present: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    if present.is_empty() {
        log::warn!("numeric channel has no values; disabled");
        return ChannelPrep {
            lo: 0.0,
            hi: 0.0,
            mean: 0.0,
            std: 0.0,
            constant: true,
            disabled: true,
        };
    }
    let mut sorted = present.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = nearest_rank(&sorted, 1.0);
    let hi = nearest_rank(&sorted, 99.0);
    for v in &mut present {
        *v = v.clamp(lo, hi);
    }
    let n = present.len();
    let pairs = n * (n - 1) / 2;
    if pairs == 0 {
        return ChannelPrep {
            lo,
            hi,
            mean: 0.0,
            std: 0.0,
            constant: true,
            disabled: false,
        };
    }
    let pair_sum = |f: &(dyn Fn(f64) -> f64 + Sync)| -> f64 {
        (0..n)
            .into_par_iter()
            .map(|i| present[i + 1..].iter().map(|b| f((present[i] - b).abs())).sum::<f64>())
            .collect::<Vec<_>>()
            .into_iter()
            .sum()
    };
    let mean = pair_sum(&|d| d) / pairs as f64;
    let std = (pair_sum(&|d| (d - mean) * (d - mean)) / pairs as f64).sqrt();
    ChannelPrep {
        lo,
        hi,
        mean,
        std,
        constant: !(std > 0.0),
        disabled: false,
    }
}

/// `−tanh(z)` of the clipped absolute difference's z-score.
pub fn gamma_numeric(prep: &ChannelPrep, a: f64, b: f64) -> f64 {
    if prep.constant {
        return 0.0;
    }
    let d = (a.clamp(prep.lo, prep.hi) - b.clamp(prep.lo, prep.hi)).abs();
    -((d - prep.mean) / prep.std).tanh()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelNorm {
    /// Divide by the weight of the channels present on both nodes.
    #[default]
    Mean,
    /// Plain weighted sum over present channels.
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeightConfig {
    /// Impact weight per channel, ordered as [`CHANNEL_NAMES`].
    pub channel_weights: [f64; N_CHANNELS],
    pub norm: ChannelNorm,
}

impl Default for EdgeWeightConfig {
    fn default() -> Self {
        Self {
            channel_weights: [1.0; N_CHANNELS],
            norm: ChannelNorm::Mean,
        }
    }
}

/// Numeric channel preparations for a whole cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortPrep {
    pub numeric: [ChannelPrep; 4],
}

impl CohortPrep {
    pub fn new(records: &[NodeRecord]) -> Self {
        let numeric = std::array::from_fn(|c| {
            let values: Vec<Option<f64>> = records.iter().map(|r| r.numeric(c)).collect();
            prepare_numeric_channel(&values)
        });
        Self { numeric }
    }
}

/// Edge weight, or `None` when the two nodes share no available channel.
pub fn edge_weight(v: &NodeRecord, w: &NodeRecord, prep: &CohortPrep, cfg: &EdgeWeightConfig) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for c in 0..3 {
        if let (Some(a), Some(b)) = (v.categorical(c), w.categorical(c)) {
            num += cfg.channel_weights[c] * gamma_categorical(a, b);
            den += cfg.channel_weights[c];
        }
    }
    for (c, p) in prep.numeric.iter().enumerate() {
        if p.disabled {
            continue;
        }
        if let (Some(a), Some(b)) = (v.numeric(c), w.numeric(c)) {
            num += cfg.channel_weights[3 + c] * gamma_numeric(p, a, b);
            den += cfg.channel_weights[3 + c];
        }
    }
    if den == 0.0 {
        return None;
    }
    Some(match cfg.norm {
        ChannelNorm::Mean => num / den,
        ChannelNorm::Sum => num,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeScheme {
    Full,
    Threshold,
    Random,
    Identical,
}

impl EdgeScheme {
    pub fn name(self) -> &'static str {
        match self {
            EdgeScheme::Full => "full",
            EdgeScheme::Threshold => "threshold",
            EdgeScheme::Random => "random",
            EdgeScheme::Identical => "identical",
        }
    }
}

impl std::str::FromStr for EdgeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(EdgeScheme::Full),
            "threshold" => Ok(EdgeScheme::Threshold),
            "random" => Ok(EdgeScheme::Random),
            "identical" => Ok(EdgeScheme::Identical),
            _ => Err(Error::Config(format!(
                "unknown edge scheme {s:?} (expected full, threshold, random or identical)"
            ))),
        }
    }
}

/// Upper-triangular edge list sorted by `(u, v)` with `u < v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationGraph {
    pub n_nodes: usize,
    pub edges: Vec<(u32, u32, f64)>,
}

impl PopulationGraph {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Dense symmetric adjacency with zero diagonal.
    pub fn dense(&self) -> Array2<f64> {
        let mut w = Array2::zeros((self.n_nodes, self.n_nodes));
        for &(u, v, x) in &self.edges {
            w[[u as usize, v as usize]] = x;
            w[[v as usize, u as usize]] = x;
        }
        w
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        if u == v {
            return 0.0;
        }
        let key = (u.min(v) as u32, u.max(v) as u32);
        self.edges
            .binary_search_by(|e| (e.0, e.1).cmp(&key))
            .map_or(0.0, |i| self.edges[i].2)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{EDGE_HEADER}")?;
        for &(u, v, x) in &self.edges {
            writeln!(out, "{u},{v},{x}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads an edge list; `n_nodes` must be given since isolated nodes are implicit.
    pub fn load_csv(path: &Path, n_nodes: usize) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header = lines.next().transpose().map_err(|e| Error::io(path, e))?;
        if header.as_deref().map(str::trim) != Some(EDGE_HEADER) {
            return Err(Error::format(path, 1, format!("expected header {EDGE_HEADER:?}")));
        }
        let mut edges = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let ln = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.trim().split(',').collect();
            if parts.len() != 3 {
                return Err(Error::format(path, ln, "expected 3 fields"));
            }
            let u: u32 = parts[0].parse().map_err(|_| Error::format(path, ln, "bad u"))?;
            let v: u32 = parts[1].parse().map_err(|_| Error::format(path, ln, "bad v"))?;
            let x: f64 = parts[2].parse().map_err(|_| Error::format(path, ln, "bad weight"))?;
            if u >= v || v as usize >= n_nodes {
                return Err(Error::format(path, ln, format!("edge ({u},{v}) violates u < v < {n_nodes}")));
            }
            if let Some(&(pu, pv, _)) = edges.last() {
                if (pu, pv) >= (u, v) {
                    return Err(Error::format(path, ln, "edges must be sorted by (u, v) without repeats"));
                }
            }
            edges.push((u, v, x));
        }
        Ok(Self { n_nodes, edges })
    }
}

/// Every pair weighted by [`edge_weight`]; pairs without shared channels get 0.
pub fn build_full_weighted(cohort: &Cohort, prep: &CohortPrep, cfg: &EdgeWeightConfig) -> Result<PopulationGraph> {
    let n = cohort.len();
    let recs = &cohort.records;
    let rows: Vec<(Vec<(u32, u32, f64)>, usize)> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut missing = 0;
            let row = (u + 1..n)
                .map(|v| {
                    let w = edge_weight(&recs[u], &recs[v], prep, cfg).unwrap_or_else(|| {
                        missing += 1;
                        0.0
                    });
                    (u as u32, v as u32, w)
                })
                .collect();
            (row, missing)
        })
        .collect();
    let missing: usize = rows.iter().map(|r| r.1).sum();
    if missing > 0 {
        log::warn!("{missing} node pairs share no metadata channel; weighted 0");
    }
    Ok(PopulationGraph {
        n_nodes: n,
        edges: rows.into_iter().flat_map(|r| r.0).collect(),
    })
}

/// Keeps edges with `W ≥ t`, each with weight 1.
pub fn apply_threshold(graph: &PopulationGraph, t: f64) -> PopulationGraph {
    PopulationGraph {
        n_nodes: graph.n_nodes,
        edges: graph
            .edges
            .iter()
            .filter(|e| e.2 >= t)
            .map(|&(u, v, _)| (u, v, 1.0))
            .collect(),
    }
}

pub fn n_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Uniform `[-1, 1]` weights on every pair; the `n_edges` largest survive with weight 1.
pub fn build_random(n: usize, n_edges: usize, seed: u64) -> Result<PopulationGraph> {
    let total = n_pairs(n);
    if n_edges > total {
        return Err(Error::Parameter(format!(
            "{n_edges} random edges requested but only {total} pairs exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn: Vec<(f64, u32, u32)> = Vec::with_capacity(total);
    for u in 0..n {
        for v in u + 1..n {
            drawn.push((rng.random_range(-1.0..=1.0), u as u32, v as u32));
        }
    }
    if n_edges < total {
        drawn.select_nth_unstable_by(n_edges, |a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    }
    let mut edges: Vec<(u32, u32, f64)> = drawn[..n_edges].iter().map(|&(_, u, v)| (u, v, 1.0)).collect();
    edges.sort_unstable_by_key(|e| (e.0, e.1));
    Ok(PopulationGraph { n_nodes: n, edges })
}

pub fn build_identical(n: usize) -> PopulationGraph {
    PopulationGraph {
        n_nodes: n,
        edges: (0..n as u32)
            .flat_map(|u| (u + 1..n as u32).map(move |v| (u, v, 1.0)))
            .collect(),
    }
}

/// Edge count kept at each threshold.
pub fn sweep_thresholds(graph: &PopulationGraph, thresholds: &[f64]) -> Vec<(f64, usize)> {
    let mut weights: Vec<f64> = graph.edges.iter().map(|e| e.2).collect();
    weights.sort_by(f64::total_cmp);
    thresholds
        .iter()
        .map(|&t| (t, weights.len() - weights.partition_point(|&w| w < t)))
        .collect()
}

/// Thresholds 0.0, 0.05, …, 1.0.
pub fn default_sweep() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

fn parse_opt_f64(s: &str, path: &Path, line: usize, col: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::format(path, line, format!("{col}: not a finite number: {s:?}")))
}

fn opt_str(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

pub fn read_metadata(path: &Path) -> Result<Vec<NodeRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_metadata(f, path)
}

pub fn parse_metadata<R: Read>(input: R, path: &Path) -> Result<Vec<NodeRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::format(path, 1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != METADATA_HEADER {
        return Err(Error::format(path, 1, format!("expected header {METADATA_HEADER:?}, got {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::format(path, line, e.to_string()))?;
        if rec.len() != 9 {
            return Err(Error::format(path, line, format!("expected 9 fields, got {}", rec.len())));
        }
        let label = if rec[1].is_empty() {
            None
        } else {
            Some(
                rec[1]
                    .parse::<usize>()
                    .map_err(|_| Error::format(path, line, format!("label: not a class index: {:?}", &rec[1])))?,
            )
        };
        if rec[0].is_empty() {
            return Err(Error::format(path, line, "empty id"));
        }
        out.push(NodeRecord {
            id: rec[0].to_string(),
            label,
            age: parse_opt_f64(&rec[2], path, line, "age")?,
            sex: opt_str(&rec[3]),
            site: opt_str(&rec[4]),
            source: opt_str(&rec[5]),
            area_mm2: parse_opt_f64(&rec[6], path, line, "area_mm2")?,
            perimeter_mm: parse_opt_f64(&rec[7], path, line, "perimeter_mm")?,
            rg_mm: parse_opt_f64(&rec[8], path, line, "rg_mm")?,
        });
    }
    Ok(out)
}

pub fn write_metadata<W: Write>(out: W, records: &[NodeRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Cohort(format!("writing metadata: {e}"));
    wtr.write_record(METADATA_HEADER.split(',')).map_err(to_err)?;
    let num = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in records {
        wtr.write_record([
            r.id.clone(),
            r.label.map_or(String::new(), |l| l.to_string()),
            num(r.age),
            r.sex.clone().unwrap_or_default(),
            r.site.clone().unwrap_or_default(),
            r.source.clone().unwrap_or_default(),
            num(r.area_mm2),
            num(r.perimeter_mm),
            num(r.rg_mm),
        ])
        .map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::Cohort(format!("writing metadata: {e}")))
}

/// `GDFM` feature matrix: magic, `u32` N, `u32` d, then `f32` row-major, little-endian.
pub fn write_features<W: Write>(mut out: W, features: &Array2<f64>) -> std::io::Result<()> {
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&(features.nrows() as u32).to_le_bytes())?;
    out.write_all(&(features.ncols() as u32).to_le_bytes())?;
    for v in features.iter() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn parse_features(data: &[u8], path: &Path) -> Result<Array2<f64>> {
    if data.len() < 12 || &data[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, 0, "not a GDFM feature file"));
    }
    let n = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(12))
        .ok_or_else(|| Error::format(path, 0, "feature dimensions overflow"))?;
    if data.len() != expected {
        return Err(Error::format(
            path,
            0,
            format!("GDFM header says {n}×{d} ({expected} bytes) but file has {} bytes", data.len()),
        ));
    }
    let vals: Vec<f64> = data[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((n, d), vals).map_err(|e| Error::format(path, 0, e.to_string()))
}

/// Feature CSV: header `f0,f1,…`, one row of reals per node.
pub fn parse_feature_csv<R: Read>(input: R, path: &Path) -> Result<Array2<f64>> {
    let mut lines = BufReader::new(input).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| Error::format(path, 1, "empty feature CSV"))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.iter().enumerate().any(|(i, c)| *c != format!("f{i}")) {
        return Err(Error::format(path, 1, "expected header f0,f1,…"));
    }
    let d = cols.len();
    let mut vals = Vec::new();
    let mut n = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .trim()
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, i + 2, "non-numeric feature"))?;
        if row.len() != d {
            return Err(Error::format(path, i + 2, format!("expected {d} features, got {}", row.len())));
        }
        vals.extend(row);
        n += 1;
    }
    Array2::from_shape_vec((n, d), vals).map_err(|e| Error::format(path, 0, e.to_string()))
}

pub fn write_feature_csv<W: Write>(mut out: W, features: &Array2<f64>) -> std::io::Result<()> {
    let header: Vec<String> = (0..features.ncols()).map(|i| format!("f{i}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in features.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Loads features as `GDFM`, or as CSV when the extension is `.csv`.
pub fn load_features(path: &Path) -> Result<Array2<f64>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        parse_feature_csv(&data[..], path)
    } else {
        parse_features(&data, path)
    }
}

pub fn save_features(path: &Path, features: &Array2<f64>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_features(&mut w, features)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Metadata CSV and feature file together; row counts must agree.
pub fn load_cohort(metadata: &Path, features: &Path) -> Result<Cohort> {
    let records = read_metadata(metadata)?;
    let x = load_features(features)?;
    Cohort::new(records, x)
}
