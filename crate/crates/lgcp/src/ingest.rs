//! Loading and preparing pixel-level count data.
//!
//! Input is a delimited text table, one row per pixel, with response counts,
//! covariate columns, and one membership column per mapping-unit partition
//! (slope units, catchments, ...). This module validates the table, derives
//! partitions and their adjacency graphs from the grid geometry, standardizes
//! covariates, and bins continuous covariates into equidistant classes.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// How a covariate enters the model.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateRole {
    /// Continuous, used as a linear fixed effect.
    Linear,
    /// Continuous, split into `bins` equidistant classes with a random-walk
    /// prior over class effects.
    BinnedRw1 { bins: usize },
    /// Unordered labels with independent per-level effects.
    CategoricalIid,
}

/// Declares one covariate column and its role.
#[derive(Debug, Clone)]
pub struct CovariateSpec {
    pub name: String,
    pub role: CovariateRole,
}

impl CovariateSpec {
    pub fn linear(name: impl Into<String>) -> Self {
        CovariateSpec { name: name.into(), role: CovariateRole::Linear }
    }

    pub fn binned(name: impl Into<String>, bins: usize) -> Self {
        CovariateSpec { name: name.into(), role: CovariateRole::BinnedRw1 { bins } }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        CovariateSpec { name: name.into(), role: CovariateRole::CategoricalIid }
    }
}

/// Column layout of a pixel table: covariates plus partition columns.
#[derive(Debug, Clone, Default)]
pub struct TableSchema {
    pub covariates: Vec<CovariateSpec>,
    pub partitions: Vec<String>,
}

impl TableSchema {
    pub fn new(covariates: Vec<CovariateSpec>, partitions: Vec<String>) -> Self {
        TableSchema { covariates, partitions }
    }
}

/// Validated per-pixel table: counts, covariates, and unit memberships.
#[derive(Debug, Clone)]
pub struct PixelTable {
    pub pixel_ids: Vec<u64>,
    /// Integer grid coordinates.
    pub x: Vec<i64>,
    pub y: Vec<i64>,
    /// Observed event count per pixel.
    pub counts: Vec<u64>,
    continuous: Vec<(String, Vec<f64>)>,
    categorical: Vec<(String, Vec<String>)>,
    partitions: Vec<(String, Vec<u64>)>,
}

impl PixelTable {
    pub fn n_pixels(&self) -> usize {
        self.pixel_ids.len()
    }

    pub fn continuous(&self, name: &str) -> Option<&[f64]> {
        self.continuous.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn categorical(&self, name: &str) -> Option<&[String]> {
        self.categorical.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn partition_column(&self, name: &str) -> Option<&[u64]> {
        self.partitions.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn continuous_names(&self) -> impl Iterator<Item = &str> {
        self.continuous.iter().map(|(n, _)| n.as_str())
    }

    pub fn categorical_names(&self) -> impl Iterator<Item = &str> {
        self.categorical.iter().map(|(n, _)| n.as_str())
    }

    pub fn partition_names(&self) -> impl Iterator<Item = &str> {
        self.partitions.iter().map(|(n, _)| n.as_str())
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn continuous_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.continuous.iter_mut().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// Assemble a table directly from columns (used by the simulator).
    pub fn from_columns(
        pixel_ids: Vec<u64>,
        x: Vec<i64>,
        y: Vec<i64>,
        counts: Vec<u64>,
        continuous: Vec<(String, Vec<f64>)>,
        categorical: Vec<(String, Vec<String>)>,
        partitions: Vec<(String, Vec<u64>)>,
    ) -> Result<Self> {
        let table = PixelTable { pixel_ids, x, y, counts, continuous, categorical, partitions };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        let n = self.pixel_ids.len();
        let mut seen = HashMap::with_capacity(n);
        for (i, &id) in self.pixel_ids.iter().enumerate() {
            if let Some(prev) = seen.insert(id, i) {
                return Err(Error::data(format!(
                    "duplicate pixel_id {id} (rows {} and {})",
                    prev + 1,
                    i + 1
                )));
            }
        }
        for (name, col) in &self.continuous {
            if col.len() != n {
                return Err(Error::data(format!("column `{name}` length mismatch")));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::data(format!(
                    "non-finite value in covariate `{name}` at row {}",
                    i + 1
                )));
            }
        }
        for (name, col) in self
            .categorical
            .iter()
            .map(|(n, c)| (n, c.len()))
            .chain(self.partitions.iter().map(|(n, c)| (n, c.len())))
        {
            if col != n {
                return Err(Error::data(format!("column `{name}` length mismatch")));
            }
        }
        if self.x.len() != n || self.y.len() != n || self.counts.len() != n {
            return Err(Error::data("coordinate/count column length mismatch".to_string()));
        }
        Ok(())
    }

    /// Return a copy containing only the given rows (order preserved).
    pub fn subset(&self, rows: &[usize]) -> PixelTable {
        let take_u64 = |v: &Vec<u64>| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        PixelTable {
            pixel_ids: take_u64(&self.pixel_ids),
            x: rows.iter().map(|&r| self.x[r]).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            counts: take_u64(&self.counts),
            continuous: self
                .continuous
                .iter()
                .map(|(n, v)| (n.clone(), rows.iter().map(|&r| v[r]).collect()))
                .collect(),
            categorical: self
                .categorical
                .iter()
                .map(|(n, v)| (n.clone(), rows.iter().map(|&r| v[r].clone()).collect()))
                .collect(),
            partitions: self
                .partitions
                .iter()
                .map(|(n, v)| (n.clone(), rows.iter().map(|&r| v[r]).collect()))
                .collect(),
        }
    }
}

/// A total assignment of pixels to the units of one partition.
#[derive(Debug, Clone)]
pub struct MappingPartition {
    pub name: String,
    /// Distinct unit ids, ascending; unit indices refer to this order.
    pub unit_ids: Vec<u64>,
    /// Per-pixel index into `unit_ids`.
    pub unit_index: Vec<usize>,
}

impl MappingPartition {
    pub fn from_table(table: &PixelTable, name: &str) -> Result<Self> {
        let col = table
            .partition_column(name)
            .ok_or_else(|| Error::data(format!("missing column `{name}`")))?;
        let unit_ids: Vec<u64> = col.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let index: HashMap<u64, usize> =
            unit_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let unit_index = col.iter().map(|u| index[u]).collect();
        Ok(MappingPartition { name: name.to_string(), unit_ids, unit_index })
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    /// Pixel count per unit.
    pub fn unit_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_units()];
        for &u in &self.unit_index {
            sizes[u] += 1;
        }
        sizes
    }
}

/// Symmetric neighborhood graph over the units of a partition.
#[derive(Debug, Clone)]
pub struct AdjacencyGraph {
    pub n_units: usize,
    /// Unit-index pairs `(a, b)` with `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub degrees: Vec<usize>,
    /// Connected-component id per unit (isolated units are singletons).
    pub component_of: Vec<usize>,
    pub n_components: usize,
}

impl AdjacencyGraph {
    pub fn from_edges(n_units: usize, edge_set: BTreeSet<(usize, usize)>) -> Self {
        let edges: Vec<(usize, usize)> = edge_set.into_iter().collect();
        let mut degrees = vec![0usize; n_units];
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n_units];
        for &(a, b) in &edges {
            degrees[a] += 1;
            degrees[b] += 1;
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        // Connected components by BFS.
        let mut component_of = vec![usize::MAX; n_units];
        let mut n_components = 0;
        for start in 0..n_units {
            if component_of[start] != usize::MAX {
                continue;
            }
            let comp = n_components;
            n_components += 1;
            let mut queue = vec![start];
            component_of[start] = comp;
            while let Some(u) = queue.pop() {
                for &v in &neighbors[u] {
                    if component_of[v] == usize::MAX {
                        component_of[v] = comp;
                        queue.push(v);
                    }
                }
            }
        }
        AdjacencyGraph { n_units, edges, degrees, component_of, n_components }
    }

    pub fn is_connected(&self) -> bool {
        self.n_components <= 1
    }

    pub fn neighbors_of(&self, unit: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.degrees[unit]);
        for &(a, b) in &self.edges {
            if a == unit {
                out.push(b);
            } else if b == unit {
                out.push(a);
            }
        }
        out
    }

    /// Export as a two-column edge list of unit ids.
    pub fn write_edge_csv(&self, partition: &MappingPartition, path: &Path) -> Result<()> {
        let mut out = String::from("unit_a,unit_b\n");
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{},{}", partition.unit_ids[a], partition.unit_ids[b]);
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Import from a two-column edge list of unit ids.
    pub fn read_edge_csv(path: &Path, unit_ids: &[u64]) -> Result<Self> {
        let index: HashMap<u64, usize> =
            unit_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::data(format!("cannot open `{}`: {e}", path.display())))?;
        let mut edge_set = BTreeSet::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::data(format!("edge list: {e}")))?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let parse = |field: Option<&str>| -> Result<usize> {
                let raw = field
                    .ok_or_else(|| Error::data(format!("edge list line {line}: missing field")))?;
                let id: u64 = raw.parse().map_err(|_| {
                    Error::data(format!("edge list line {line}: `{raw}` is not a unit id"))
                })?;
                index.get(&id).copied().ok_or_else(|| {
                    Error::data(format!("edge list line {line}: unknown unit id {id}"))
                })
            };
            let a = parse(record.get(0))?;
            let b = parse(record.get(1))?;
            if a == b {
                return Err(Error::data(format!("edge list line {line}: self-loop on unit")));
            }
            edge_set.insert((a.min(b), a.max(b)));
        }
        Ok(AdjacencyGraph::from_edges(unit_ids.len(), edge_set))
    }
}

/// Load and validate a pixel table against a schema.
///
/// Required columns: `pixel_id,x,y,count` plus every covariate and partition
/// the schema declares. Lines starting with `#` are metadata and skipped.
pub fn load_pixel_table(path: &Path, schema: &TableSchema) -> Result<PixelTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("cannot open `{}`: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("missing column `{name}`")))
    };

    let id_col = col("pixel_id")?;
    let x_col = col("x")?;
    let y_col = col("y")?;
    let count_col = col("count")?;
    let mut cont_cols = Vec::new();
    let mut cat_cols = Vec::new();
    for spec in &schema.covariates {
        match spec.role {
            CovariateRole::CategoricalIid => cat_cols.push((spec.name.clone(), col(&spec.name)?)),
            _ => cont_cols.push((spec.name.clone(), col(&spec.name)?)),
        }
    }
    let mut part_cols = Vec::new();
    for name in &schema.partitions {
        part_cols.push((name.clone(), col(name)?));
    }

    let mut table = PixelTable {
        pixel_ids: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        counts: Vec::new(),
        continuous: cont_cols.iter().map(|(n, _)| (n.clone(), Vec::new())).collect(),
        categorical: cat_cols.iter().map(|(n, _)| (n.clone(), Vec::new())).collect(),
        partitions: part_cols.iter().map(|(n, _)| (n.clone(), Vec::new())).collect(),
    };

    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::data(format!("row {}: {e}", row_idx + 1)))?;
        let row = row_idx + 1;
        let field = |c: usize| -> Result<&str> {
            record
                .get(c)
                .ok_or_else(|| Error::data(format!("row {row}: too few fields")))
        };
        let parse_f64 = |c: usize, name: &str| -> Result<f64> {
            let raw = field(c)?;
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::data(format!("row {row}: `{raw}` in column `{name}` is not numeric")))?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "row {row}: non-finite value in column `{name}`"
                )));
            }
            Ok(v)
        };
        let parse_i64 = |c: usize, name: &str| -> Result<i64> {
            let raw = field(c)?;
            raw.parse().map_err(|_| {
                Error::data(format!("row {row}: `{raw}` in column `{name}` is not an integer"))
            })
        };

        table.pixel_ids.push(parse_i64(id_col, "pixel_id")? as u64);
        table.x.push(parse_i64(x_col, "x")?);
        table.y.push(parse_i64(y_col, "y")?);
        let count = parse_i64(count_col, "count")?;
        if count < 0 {
            return Err(Error::data(format!("row {row}: negative count {count}")));
        }
        table.counts.push(count as u64);

        for (i, (name, c)) in cont_cols.iter().enumerate() {
            let v = parse_f64(*c, name)?;
            table.continuous[i].1.push(v);
        }
        for (i, (_, c)) in cat_cols.iter().enumerate() {
            table.categorical[i].1.push(field(*c)?.to_string());
        }
        for (i, (name, c)) in part_cols.iter().enumerate() {
            let unit = parse_i64(*c, name)?;
            if unit < 0 {
                return Err(Error::data(format!("row {row}: negative unit id in `{name}`")));
            }
            table.partitions[i].1.push(unit as u64);
        }
    }

    if table.pixel_ids.is_empty() {
        return Err(Error::data(format!("`{}` contains no data rows", path.display())));
    }
    table.validate()?;
    Ok(table)
}

/// Write a pixel table in the same format `load_pixel_table` reads.
///
/// Floats are printed with shortest round-trip precision, so a write/load
/// cycle reproduces the table exactly. `header` lines, if any, are emitted
/// first as `#`-prefixed metadata.
pub fn write_pixel_table(table: &PixelTable, path: &Path, header: &[String]) -> Result<()> {
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("pixel_id,x,y,count");
    for (name, _) in &table.continuous {
        let _ = write!(out, ",{name}");
    }
    for (name, _) in &table.categorical {
        let _ = write!(out, ",{name}");
    }
    for (name, _) in &table.partitions {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for i in 0..table.n_pixels() {
        let _ = write!(out, "{},{},{},{}", table.pixel_ids[i], table.x[i], table.y[i], table.counts[i]);
        for (_, v) in &table.continuous {
            let _ = write!(out, ",{}", v[i]);
        }
        for (_, v) in &table.categorical {
            let _ = write!(out, ",{}", v[i]);
        }
        for (_, v) in &table.partitions {
            let _ = write!(out, ",{}", v[i]);
        }
        out.push('\n');
    }
    crate::cli::write_atomic(path, out.as_bytes())
}

/// Per-covariate location/scale recorded at training time so held-out data
/// is transformed with the same parameters.
#[derive(Debug, Clone)]
pub struct Standardization {
    /// `(name, mean, sd)` per standardized covariate.
    pub params: Vec<(String, f64, f64)>,
}

impl Standardization {
    pub fn lookup(&self, name: &str) -> Option<(f64, f64)> {
        self.params.iter().find(|(n, _, _)| n == name).map(|(_, m, s)| (*m, *s))
    }

    /// Apply the recorded transform to a (possibly held-out) table.
    pub fn apply(&self, table: &PixelTable) -> Result<PixelTable> {
        let mut out = table.clone();
        for (name, mean, sd) in &self.params {
            let col = out
                .continuous_mut(name)
                .ok_or_else(|| Error::data(format!("missing column `{name}`")))?;
            for v in col.iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
        Ok(out)
    }

    /// Undo the transform (diagnostic round-trips).
    pub fn destandardize(&self, table: &PixelTable) -> Result<PixelTable> {
        let mut out = table.clone();
        for (name, mean, sd) in &self.params {
            let col = out
                .continuous_mut(name)
                .ok_or_else(|| Error::data(format!("missing column `{name}`")))?;
            for v in col.iter_mut() {
                *v = *v * sd + mean;
            }
        }
        Ok(out)
    }
}

/// Center and scale the named continuous covariates to sample mean 0, sd 1.
///
/// Returns the transformed table and the recorded `(mean, sd)` parameters.
pub fn standardize_covariates(
    table: &PixelTable,
    names: &[String],
) -> Result<(PixelTable, Standardization)> {
    let mut params = Vec::with_capacity(names.len());
    for name in names {
        let col = table
            .continuous(name)
            .ok_or_else(|| Error::data(format!("missing column `{name}`")))?;
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::data(format!("covariate `{name}` has zero variance")));
        }
        params.push((name.clone(), mean, sd));
    }
    let std = Standardization { params };
    let out = std.apply(table)?;
    Ok((out, std))
}

/// Split `[min, max]` into `k` equal-width intervals and assign classes
/// `1..=k`. Intervals are half-open `[lo, hi)`; the last is closed, so the
/// maximum lands in class `k`.
pub fn bin_equidistant(column: &[f64], k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if k < 2 {
        return Err(Error::config(format!("bin count must be >= 2, got {k}")));
    }
    let min = column.iter().copied().fold(f64::INFINITY, f64::min);
    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(min < max) {
        return Err(Error::data(format!(
            "cannot bin a constant column (min = max = {min})"
        )));
    }
    let edges: Vec<f64> = (0..=k)
        .map(|i| min + (max - min) * i as f64 / k as f64)
        .collect();
    let classes = assign_bins(column, &edges);
    Ok((classes, edges))
}

/// Assign classes using previously computed edges; values outside the edge
/// range are clamped into the first/last class (held-out data in CV).
pub fn assign_bins(column: &[f64], edges: &[f64]) -> Vec<usize> {
    let k = edges.len() - 1;
    let min = edges[0];
    let max = edges[k];
    let width = (max - min) / k as f64;
    column
        .iter()
        .map(|&v| {
            let idx = ((v - min) / width).floor() as i64;
            (idx.clamp(0, k as i64 - 1) + 1) as usize
        })
        .collect()
}

/// Unit neighborhood graph from pixel contiguity: units are neighbors iff
/// some pixel of one shares a grid edge (4-connectivity) with a pixel of the
/// other.
pub fn build_adjacency(
    table: &PixelTable,
    partition: &MappingPartition,
    spacing: i64,
) -> Result<AdjacencyGraph> {
    if spacing <= 0 {
        return Err(Error::config("grid spacing must be positive".to_string()));
    }
    let mut by_pos: HashMap<(i64, i64), usize> = HashMap::with_capacity(table.n_pixels());
    for i in 0..table.n_pixels() {
        if by_pos.insert((table.x[i], table.y[i]), i).is_some() {
            return Err(Error::data(format!(
                "two pixels share grid position ({}, {})",
                table.x[i], table.y[i]
            )));
        }
    }
    let mut edge_set = BTreeSet::new();
    for i in 0..table.n_pixels() {
        let here = partition.unit_index[i];
        for (dx, dy) in [(spacing, 0), (0, spacing)] {
            if let Some(&j) = by_pos.get(&(table.x[i] + dx, table.y[i] + dy)) {
                let there = partition.unit_index[j];
                if here != there {
                    edge_set.insert((here.min(there), here.max(there)));
                }
            }
        }
    }
    Ok(AdjacencyGraph::from_edges(partition.n_units(), edge_set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom as _;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn demo_schema() -> TableSchema {
        TableSchema::new(vec![CovariateSpec::linear("slope")], vec!["slope_unit".to_string()])
    }

    #[test]
    fn load_sums_counts() {
        let f = write_tmp(
            "pixel_id,x,y,count,slope,slope_unit\n1,0,0,0,0.1,1\n2,1,0,1,0.2,1\n3,2,0,2,0.3,2\n",
        );
        let table = load_pixel_table(f.path(), &demo_schema()).unwrap();
        assert_eq!(table.total_count(), 3);
        assert_eq!(table.n_pixels(), 3);
        assert_eq!(table.pixel_ids, vec![1, 2, 3]);
    }

    #[test]
    fn missing_partition_column_is_named() {
        let f = write_tmp("pixel_id,x,y,count,slope\n1,0,0,0,0.1\n");
        let err = load_pixel_table(f.path(), &demo_schema()).unwrap_err();
        assert!(err.to_string().contains("slope_unit"), "got: {err}");
    }

    #[test]
    fn negative_count_reports_row() {
        let f = write_tmp(
            "pixel_id,x,y,count,slope,slope_unit\n1,0,0,0,0.1,1\n2,1,0,-1,0.2,1\n",
        );
        let err = load_pixel_table(f.path(), &demo_schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("negative count"), "got: {msg}");
    }

    #[test]
    fn duplicate_pixel_id_rejected() {
        let f = write_tmp(
            "pixel_id,x,y,count,slope,slope_unit\n1,0,0,0,0.1,1\n1,1,0,1,0.2,1\n",
        );
        let err = load_pixel_table(f.path(), &demo_schema()).unwrap_err();
        assert!(err.to_string().contains("duplicate pixel_id"), "got: {err}");
    }

    #[test]
    fn non_numeric_value_reports_row_and_column() {
        let f = write_tmp(
            "pixel_id,x,y,count,slope,slope_unit\n1,0,0,0,abc,1\n",
        );
        let err = load_pixel_table(f.path(), &demo_schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("slope"), "got: {msg}");
    }

    #[test]
    fn standardize_symmetric_column() {
        let table = PixelTable::from_columns(
            vec![1, 2, 3],
            vec![0, 1, 2],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![("c".to_string(), vec![1.0, 2.0, 3.0])],
            vec![],
            vec![],
        )
        .unwrap();
        let (out, std) = standardize_covariates(&table, &["c".to_string()]).unwrap();
        assert_eq!(out.continuous("c").unwrap(), &[-1.0, 0.0, 1.0]);
        let (mean, sd) = std.lookup("c").unwrap();
        assert_eq!((mean, sd), (2.0, 1.0));
    }

    #[test]
    fn constant_column_is_zero_variance_error() {
        let table = PixelTable::from_columns(
            vec![1, 2, 3],
            vec![0, 1, 2],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![("c".to_string(), vec![5.0, 5.0, 5.0])],
            vec![],
            vec![],
        )
        .unwrap();
        let err = standardize_covariates(&table, &["c".to_string()]).unwrap_err();
        assert!(err.to_string().contains("`c`"), "got: {err}");
    }

    #[test]
    fn held_out_data_uses_training_parameters() {
        let train = PixelTable::from_columns(
            vec![1, 2, 3],
            vec![0, 1, 2],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![("c".to_string(), vec![1.0, 2.0, 3.0])],
            vec![],
            vec![],
        )
        .unwrap();
        let heldout = PixelTable::from_columns(
            vec![4, 5],
            vec![3, 4],
            vec![0, 0],
            vec![0, 0],
            vec![("c".to_string(), vec![4.0, 6.0])],
            vec![],
            vec![],
        )
        .unwrap();
        let (_, std) = standardize_covariates(&train, &["c".to_string()]).unwrap();
        let out = std.apply(&heldout).unwrap();
        // (4-2)/1 and (6-2)/1, not the held-out column's own moments.
        assert_eq!(out.continuous("c").unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn bin_boundary_goes_to_upper_class() {
        let (classes, edges) = bin_equidistant(&[0.0, 0.5, 1.0], 2).unwrap();
        assert_eq!(classes, vec![1, 2, 2]);
        assert_eq!(edges, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn uniform_draws_fill_all_twenty_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let column: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let (classes, _) = bin_equidistant(&column, 20).unwrap();
        let mut seen = vec![false; 20];
        for c in classes {
            assert!((1..=20).contains(&c));
            seen[c - 1] = true;
        }
        assert!(seen.iter().all(|&s| s), "some of the 20 classes are empty");
    }

    #[test]
    fn constant_column_cannot_be_binned() {
        assert!(bin_equidistant(&[1.0, 1.0], 4).is_err());
    }

    fn grid_table(assign: &[(i64, i64, u64)]) -> (PixelTable, MappingPartition) {
        let n = assign.len();
        let table = PixelTable::from_columns(
            (1..=n as u64).collect(),
            assign.iter().map(|&(x, _, _)| x).collect(),
            assign.iter().map(|&(_, y, _)| y).collect(),
            vec![0; n],
            vec![],
            vec![],
            vec![("u".to_string(), assign.iter().map(|&(_, _, u)| u).collect())],
        )
        .unwrap();
        let part = MappingPartition::from_table(&table, "u").unwrap();
        (table, part)
    }

    #[test]
    fn two_adjacent_pixels_two_units() {
        let (table, part) = grid_table(&[(0, 0, 1), (1, 0, 2)]);
        let g = build_adjacency(&table, &part, 1).unwrap();
        assert_eq!(g.edges, vec![(0, 1)]);
        assert_eq!(g.degrees, vec![1, 1]);
    }

    #[test]
    fn single_unit_grid_has_no_edges() {
        let (table, part) = grid_table(&[(0, 0, 7), (1, 0, 7), (0, 1, 7), (1, 1, 7)]);
        let g = build_adjacency(&table, &part, 1).unwrap();
        assert_eq!(g.n_units, 1);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn three_vertical_strips_form_a_path() {
        let mut cells = Vec::new();
        for y in 0..3 {
            for x in 0..3 {
                cells.push((x, y, (x + 1) as u64)); // units 1,2,3 by column
            }
        }
        let (table, part) = grid_table(&cells);
        let g = build_adjacency(&table, &part, 1).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(g.degrees[1], 2);
        assert!(g.is_connected());
    }

    #[test]
    fn adjacency_invariant_under_row_permutation() {
        let mut cells = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for y in 0..6i64 {
            for x in 0..6i64 {
                cells.push((x, y, rng.gen_range(1..5u64)));
            }
        }
        let (table, part) = grid_table(&cells);
        let base = build_adjacency(&table, &part, 1).unwrap();

        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.shuffle(&mut rng);
        let shuffled_table = table.subset(&order);
        let shuffled_part = MappingPartition::from_table(&shuffled_table, "u").unwrap();
        let shuffled = build_adjacency(&shuffled_table, &shuffled_part, 1).unwrap();

        assert_eq!(base.edges, shuffled.edges);
        assert_eq!(base.degrees, shuffled.degrees);
    }

    #[test]
    fn unit_sizes_sum_to_pixel_count() {
        let mut cells = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for y in 0..5i64 {
            for x in 0..7i64 {
                cells.push((x, y, rng.gen_range(1..4u64)));
            }
        }
        let (_, part) = grid_table(&cells);
        assert_eq!(part.unit_sizes().iter().sum::<usize>(), cells.len());
    }

    proptest! {
        #[test]
        fn write_load_roundtrip_is_exact(
            values in proptest::collection::vec(
                (any::<u32>(), -1.0e12f64..1.0e12, 0u32..40), 1..40,
            )
        ) {
            let n = values.len();
            let table = PixelTable::from_columns(
                (0..n as u64).collect(),
                (0..n as i64).collect(),
                vec![0; n],
                values.iter().map(|&(c, _, _)| (c % 7) as u64).collect(),
                vec![("v".to_string(), values.iter().map(|&(_, v, _)| v).collect())],
                vec![],
                vec![("u".to_string(), values.iter().map(|&(_, _, u)| u as u64).collect())],
            ).unwrap();

            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.csv");
            write_pixel_table(&table, &path, &["roundtrip test".to_string()]).unwrap();
            let schema = TableSchema::new(
                vec![CovariateSpec::linear("v")],
                vec!["u".to_string()],
            );
            let back = load_pixel_table(&path, &schema).unwrap();

            prop_assert_eq!(&back.counts, &table.counts);
            prop_assert_eq!(back.continuous("v").unwrap(), table.continuous("v").unwrap());
            prop_assert_eq!(back.partition_column("u").unwrap(), table.partition_column("u").unwrap());
        }

        #[test]
        fn standardize_destandardize_recovers_column(
            raw in proptest::collection::vec(-1.0e6f64..1.0e6, 3..60)
        ) {
            let distinct = raw.iter().any(|&v| (v - raw[0]).abs() > 1e-6);
            prop_assume!(distinct);
            let n = raw.len();
            let table = PixelTable::from_columns(
                (0..n as u64).collect(),
                (0..n as i64).collect(),
                vec![0; n],
                vec![0; n],
                vec![("c".to_string(), raw.clone())],
                vec![],
                vec![],
            ).unwrap();
            let (std_table, std) = standardize_covariates(&table, &["c".to_string()]).unwrap();
            let back = std.destandardize(&std_table).unwrap();
            for (orig, rec) in raw.iter().zip(back.continuous("c").unwrap()) {
                let scale = orig.abs().max(1.0);
                prop_assert!((orig - rec).abs() <= 1e-10 * scale);
            }
        }
    }
}
