//! Matrix ingestion, synthetic tagged datasets and deterministic splits.
//!
//! Dense matrices are `d × n` with one sample per column (column-major), so a
//! sample is a contiguous slice. Tag and label matrices are sparse binary with
//! one sorted index list per sample.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Column-major real matrix; columns are samples.
pub type DenseMatrix = DMatrix<f64>;

pub const DENSE_MAGIC: &[u8; 6] = b"DMAT1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseFormat {
    Csv,
    Binary,
}

impl DenseFormat {
    /// Picks the format from a file extension: `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DenseFormat::Csv,
            _ => DenseFormat::Binary,
        }
    }
}

pub(crate) fn ensure_finite(m: &DenseMatrix, what: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::MalformedFile(format!(
            "{what}: non-finite entry at flat position {pos}"
        )));
    }
    Ok(())
}

pub fn load_dense_matrix(path: &Path, format: DenseFormat) -> Result<DenseMatrix> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    match format {
        DenseFormat::Csv => read_dense_csv(reader),
        DenseFormat::Binary => read_dense_binary(reader),
    }
}

pub fn write_dense_matrix(path: &Path, m: &DenseMatrix, format: DenseFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        DenseFormat::Csv => write_dense_csv(&mut w, m)?,
        DenseFormat::Binary => write_dense_binary(&mut w, m)?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_dense_csv<R: BufRead>(reader: R) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|e| {
                    Error::MalformedFile(format!("line {}: bad number {tok:?}: {e}", lineno + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::MalformedFile(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MalformedFile("empty CSV matrix".into()));
    }
    let ncols = rows[0].len();
    let m = DenseMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    ensure_finite(&m, "csv")?;
    Ok(m)
}

pub fn write_dense_csv<W: Write>(w: &mut W, m: &DenseMatrix) -> Result<()> {
    for i in 0..m.nrows() {
        let line = (0..m.ncols())
            .map(|j| format!("{}", m[(i, j)]))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_dense_binary<R: Read>(mut reader: R) -> Result<DenseMatrix> {
    let mut magic = [0u8; 6];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::MalformedFile("truncated header".into()))?;
    if &magic != DENSE_MAGIC {
        return Err(Error::MalformedFile("bad magic (expected DMAT1)".into()));
    }
    let rows = read_u64(&mut reader)? as usize;
    let cols = read_u64(&mut reader)? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::MalformedFile("dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(Error::MalformedFile(format!(
            "expected {} payload bytes for {rows}x{cols}, found {}",
            len * 8,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let m = DenseMatrix::from_vec(rows, cols, values);
    ensure_finite(&m, "binary matrix")?;
    Ok(m)
}

pub fn write_dense_binary<W: Write>(w: &mut W, m: &DenseMatrix) -> Result<()> {
    w.write_all(DENSE_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::MalformedFile("truncated header".into()))?;
    Ok(u64::from_le_bytes(buf))
}

/// Binary matrix stored as sorted per-column row-index lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseBinaryMatrix {
    rows: usize,
    columns: Vec<Vec<u32>>,
}

impl SparseBinaryMatrix {
    /// Builds from per-column index lists; indices are sorted and deduplicated.
    pub fn new(rows: usize, mut columns: Vec<Vec<u32>>) -> Result<Self> {
        for (j, col) in columns.iter_mut().enumerate() {
            col.sort_unstable();
            col.dedup();
            if let Some(&last) = col.last() {
                if last as usize >= rows {
                    return Err(Error::MalformedFile(format!(
                        "column {j}: row index {last} out of range (rows = {rows})"
                    )));
                }
            }
        }
        Ok(Self { rows, columns })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            columns: vec![Vec::new(); cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[u32] {
        &self.columns[j]
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.columns[j].binary_search(&(i as u32)).is_ok()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols());
        for (j, col) in self.columns.iter().enumerate() {
            for &i in col {
                m[(i as usize, j)] = 1.0;
            }
        }
        m
    }

    /// Columns picked by `indices`, in that order.
    pub fn select_columns(&self, indices: &[usize]) -> Self {
        Self {
            rows: self.rows,
            columns: indices.iter().map(|&j| self.columns[j].clone()).collect(),
        }
    }
}

/// True when two sorted index lists share an element.
pub fn sorted_intersect(a: &[u32], b: &[u32]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

pub fn load_sparse_binary(path: &Path) -> Result<SparseBinaryMatrix> {
    read_sparse_binary(BufReader::new(File::open(path)?))
}

pub fn read_sparse_binary<R: BufRead>(reader: R) -> Result<SparseBinaryMatrix> {
    let mut lines = reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::MalformedFile("empty triplet file".into()))?;
    let header = header?;
    let (rows, cols) = parse_pair(&header, 1)?;
    let rows = usize::try_from(rows)
        .map_err(|_| Error::MalformedFile("negative row count in header".into()))?;
    let cols = usize::try_from(cols)
        .map_err(|_| Error::MalformedFile("negative column count in header".into()))?;
    let mut columns = vec![Vec::new(); cols];
    for (lineno, line) in lines {
        let (i, j) = parse_pair(&line?, lineno + 1)?;
        if i < 0 || j < 0 {
            return Err(Error::MalformedFile(format!(
                "line {}: negative index",
                lineno + 1
            )));
        }
        let (i, j) = (i as usize, j as usize);
        if i >= rows || j >= cols {
            return Err(Error::MalformedFile(format!(
                "line {}: entry ({i}, {j}) outside {rows}x{cols}",
                lineno + 1
            )));
        }
        columns[j].push(i as u32);
    }
    SparseBinaryMatrix::new(rows, columns)
}

fn parse_pair(line: &str, lineno: usize) -> Result<(i64, i64)> {
    let mut it = line.split_whitespace();
    let mut next = || -> Result<i64> {
        let tok = it
            .next()
            .ok_or_else(|| Error::MalformedFile(format!("line {lineno}: expected two integers")))?;
        tok.parse::<i64>()
            .map_err(|e| Error::MalformedFile(format!("line {lineno}: bad integer {tok:?}: {e}")))
    };
    let a = next()?;
    let b = next()?;
    if it.next().is_some() {
        return Err(Error::MalformedFile(format!(
            "line {lineno}: trailing tokens"
        )));
    }
    Ok((a, b))
}

pub fn write_sparse_binary(path: &Path, m: &SparseBinaryMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sparse_to(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn write_sparse_to<W: Write>(w: &mut W, m: &SparseBinaryMatrix) -> Result<()> {
    writeln!(w, "{} {}", m.rows(), m.cols())?;
    for j in 0..m.cols() {
        for &i in m.column(j) {
            writeln!(w, "{i} {j}")?;
        }
    }
    Ok(())
}

/// Features plus tags, with optional ground-truth labels for evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub tags: SparseBinaryMatrix,
    pub labels: Option<SparseBinaryMatrix>,
}

impl Dataset {
    pub fn new(
        features: DenseMatrix,
        tags: SparseBinaryMatrix,
        labels: Option<SparseBinaryMatrix>,
    ) -> Result<Self> {
        let n = features.ncols();
        if tags.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "features have {n} samples but tags have {}",
                tags.cols()
            )));
        }
        if let Some(l) = &labels {
            if l.cols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "features have {n} samples but labels have {}",
                    l.cols()
                )));
            }
        }
        ensure_finite(&features, "features")?;
        Ok(Self {
            features,
            tags,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.features.nrows()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_columns(indices),
            tags: self.tags.select_columns(indices),
            labels: self.labels.as_ref().map(|l| l.select_columns(indices)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub n_clusters: usize,
    pub c: usize,
    pub tag_noise_rate: f64,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// n = 4000, d = 32, c = 40, 8 clusters, tag noise 0.2.
    pub fn synth_small(seed: u64) -> Self {
        Self {
            n: 4000,
            d: 32,
            n_clusters: 8,
            c: 40,
            tag_noise_rate: 0.2,
            cluster_spread: 2.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(0.0..=1.0).contains(&self.tag_noise_rate) {
            return bad("tag_noise_rate must lie in [0, 1]");
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread >= 0.0) {
            return bad("cluster_spread must be finite and non-negative");
        }
        if self.n == 0 || self.d == 0 || self.c == 0 || self.n_clusters == 0 {
            return bad("n, d, c and n_clusters must be positive");
        }
        if self.n_clusters > self.n {
            return bad("n_clusters must not exceed n");
        }
        if self.n_clusters > self.c {
            return bad("n_clusters must not exceed the tag vocabulary size c");
        }
        Ok(())
    }

    /// Tags owned by each cluster.
    pub fn tags_per_cluster(&self) -> usize {
        self.c.div_ceil(self.n_clusters)
    }

    /// Tag indices owned by `cluster`, wrapping around the vocabulary.
    pub fn cluster_tags(&self, cluster: usize) -> Vec<u32> {
        let t = self.tags_per_cluster();
        let mut tags: Vec<u32> = (0..t)
            .map(|j| ((cluster * t + j) % self.c) as u32)
            .collect();
        tags.sort_unstable();
        tags.dedup();
        tags
    }
}

/// Generates a tagged dataset with planted cluster structure.
///
/// Sample `i` belongs to cluster `i mod n_clusters`. A noisy tag slot is
/// resampled from a Bernoulli with the clean tag density, so at noise 1.0 the
/// observed tags carry no cluster information.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.n_clusters;

    let centers = DenseMatrix::from_fn(cfg.d, k, |_, _| {
        4.0 * rng.sample::<f64, _>(StandardNormal)
    });
    let cluster_tags: Vec<Vec<u32>> = (0..k).map(|g| cfg.cluster_tags(g)).collect();
    let density = cfg.tags_per_cluster().min(cfg.c) as f64 / cfg.c as f64;

    let mut features = DenseMatrix::zeros(cfg.d, cfg.n);
    let mut tags = Vec::with_capacity(cfg.n);
    let mut labels = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let g = i % k;
        for r in 0..cfg.d {
            let noise: f64 = rng.sample(StandardNormal);
            features[(r, i)] = centers[(r, g)] + cfg.cluster_spread * noise;
        }
        let truth = &cluster_tags[g];
        let mut observed = Vec::new();
        for slot in 0..cfg.c as u32 {
            let clean = truth.binary_search(&slot).is_ok();
            let value = if rng.random::<f64>() < cfg.tag_noise_rate {
                rng.random::<f64>() < density
            } else {
                clean
            };
            if value {
                observed.push(slot);
            }
        }
        tags.push(observed);
        labels.push(vec![g as u32]);
    }

    Dataset::new(
        features,
        SparseBinaryMatrix::new(cfg.c, tags)?,
        Some(SparseBinaryMatrix::new(k, labels)?),
    )
}

/// Train / retrieval / query partition of one dataset, with source indices.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub retrieval: Dataset,
    pub query: Dataset,
    pub train_idx: Vec<usize>,
    pub retrieval_idx: Vec<usize>,
    pub query_idx: Vec<usize>,
}

/// Splits into disjoint query and retrieval sets; the training set is drawn
/// from the retrieval set. Index lists are returned in ascending order.
pub fn split_dataset(ds: &Dataset, train_n: usize, query_n: usize, seed: u64) -> Result<Split> {
    let n = ds.len();
    if train_n + query_n > n {
        return Err(Error::InvalidSplit(format!(
            "train_n ({train_n}) + query_n ({query_n}) exceeds n ({n})"
        )));
    }
    if query_n >= n {
        return Err(Error::InvalidSplit("retrieval set would be empty".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut query_idx = perm[..query_n].to_vec();
    let mut train_idx = perm[query_n..query_n + train_n].to_vec();
    let mut retrieval_idx = perm[query_n..].to_vec();
    query_idx.sort_unstable();
    train_idx.sort_unstable();
    retrieval_idx.sort_unstable();

    Ok(Split {
        train: ds.select(&train_idx),
        retrieval: ds.select(&retrieval_idx),
        query: ds.select(&query_idx),
        train_idx,
        retrieval_idx,
        query_idx,
    })
}
