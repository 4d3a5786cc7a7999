//! Image-concept hypergraph over stacked feature and tag vectors.
//!
//! Vertices are samples, hyperedges are k-means concepts of `[X; Y]`, and the
//! incidence is a Gaussian of the sample-to-concept distance. The normalized
//! kernel `K = D_v^{-1/2} H D_w D_e^{-1} Hᵀ D_v^{-1/2}` is only applied through
//! staged `r × a` products.

use crate::dataio::{DenseMatrix, SparseBinaryMatrix};
use crate::error::{dim_err, Error, Result};
use crate::kmeans::{self, sq_dist};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypergraphParams {
    pub a: usize,
    /// Overrides the data-driven bandwidth σ² when set.
    pub sigma_sq: Option<f64>,
    /// Multiplier applied to tag rows before stacking.
    pub tag_scale: f64,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
}

impl HypergraphParams {
    pub fn new(a: usize) -> Self {
        Self {
            a,
            sigma_sq: None,
            tag_scale: 1.0,
            kmeans_iters: kmeans::DEFAULT_MAX_ITERS,
            kmeans_tol: kmeans::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hypergraph {
    /// Incidence, `n × a`.
    pub h: DenseMatrix,
    h_t: DenseMatrix,
    /// Vertex degrees, length n.
    pub dv: Vec<f64>,
    /// Hyperedge degrees, length a.
    pub de: Vec<f64>,
    /// Hyperedge weights, length a (all ones).
    pub dw: Vec<f64>,
    /// `(d + c) × a` (or `d × a` without tags).
    pub concepts: DenseMatrix,
    /// Bandwidth σ².
    pub sigma_sq: f64,
}

/// Stacks `X` over `scale · dense(Y)`; returns `X` alone when tags are absent.
pub fn stack_features(x: &DenseMatrix, tags: Option<&SparseBinaryMatrix>, scale: f64) -> Result<DenseMatrix> {
    let Some(y) = tags else {
        return Ok(x.clone());
    };
    if y.cols() != x.ncols() {
        return Err(dim_err!("features have {} samples, tags {}", x.ncols(), y.cols()));
    }
    let d = x.nrows();
    let mut out = DenseMatrix::zeros(d + y.rows(), x.ncols());
    out.rows_mut(0, d).copy_from(x);
    for j in 0..y.cols() {
        for &t in y.column(j) {
            out[(d + t as usize, j)] = scale;
        }
    }
    Ok(out)
}

pub fn build_hypergraph(
    x: &DenseMatrix,
    tags: Option<&SparseBinaryMatrix>,
    a: usize,
    seed: u64,
) -> Result<Hypergraph> {
    build_hypergraph_with(x, tags, &HypergraphParams::new(a), seed)
}

pub fn build_hypergraph_with(
    x: &DenseMatrix,
    tags: Option<&SparseBinaryMatrix>,
    params: &HypergraphParams,
    seed: u64,
) -> Result<Hypergraph> {
    let n = x.ncols();
    let a = params.a;
    if a == 0 || a > n {
        return Err(Error::InvalidConfig(format!("hyperedge count a = {a} with n = {n}")));
    }
    if let Some(s) = params.sigma_sq {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma override must be positive, got {s}")));
        }
    }
    let stacked = stack_features(x, tags, params.tag_scale)?;
    let concepts = kmeans::kmeans(&stacked, a, params.kmeans_iters, params.kmeans_tol, seed)?;
    let sigma_sq = params.sigma_sq.unwrap_or(concepts.inertia / n as f64);
    let centers = concepts.centers;

    let mut h = DenseMatrix::zeros(n, a);
    for j in 0..a {
        let e = centers.column(j);
        for i in 0..n {
            let d = sq_dist(stacked.column(i).as_slice(), e.as_slice());
            let v = if sigma_sq > 0.0 {
                (-d / (2.0 * sigma_sq)).exp()
            } else if d == 0.0 {
                1.0
            } else {
                0.0
            };
            h[(i, j)] = v.max(f64::MIN_POSITIVE);
        }
    }
    let dw = vec![1.0; a];
    let de: Vec<f64> = (0..a).map(|j| h.column(j).sum()).collect();
    let dv: Vec<f64> = (0..n)
        .map(|i| (0..a).map(|j| dw[j] * h[(i, j)]).sum())
        .collect();
    debug_assert!(dv.iter().chain(&de).all(|&v| v > 0.0));

    Ok(Hypergraph {
        h_t: h.transpose(),
        h,
        dv,
        de,
        dw,
        concepts: centers,
        sigma_sq,
    })
}

impl Hypergraph {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn a(&self) -> usize {
        self.h.ncols()
    }

    /// `M D_v^{-1/2} H`, shape `r × a`.
    fn project(&self, mat: &DenseMatrix) -> Result<DenseMatrix> {
        let n = self.n();
        if mat.ncols() != n {
            return Err(dim_err!("hyperkernel expects {n} columns, got {}", mat.ncols()));
        }
        let mut scaled = mat.clone();
        for (i, mut col) in scaled.column_iter_mut().enumerate() {
            col /= self.dv[i].sqrt();
        }
        Ok(scaled * &self.h)
    }

    /// `M · K` for `M` of shape `r × n`.
    pub fn apply(&self, mat: &DenseMatrix) -> Result<DenseMatrix> {
        let mut t = self.project(mat)?;
        for (j, mut col) in t.column_iter_mut().enumerate() {
            col *= self.dw[j] / self.de[j];
        }
        let mut out = t * &self.h_t;
        for (i, mut col) in out.column_iter_mut().enumerate() {
            col /= self.dv[i].sqrt();
        }
        Ok(out)
    }

    /// Tr(Z K Zᵀ) via the `r × a` projection.
    pub fn quadratic_trace(&self, z: &DenseMatrix) -> Result<f64> {
        let t = self.project(z)?;
        Ok(t.column_iter()
            .enumerate()
            .map(|(j, col)| col.norm_squared() * self.dw[j] / self.de[j])
            .sum())
    }

    /// Dense `n × n` kernel K. Quadratic in n; tests only.
    pub fn dense_kernel(&self) -> DenseMatrix {
        let n = self.n();
        let mut left = self.h.clone();
        for i in 0..n {
            let mut row = left.row_mut(i);
            row /= self.dv[i].sqrt();
        }
        let mut right = left.clone();
        for j in 0..self.a() {
            let mut col = right.column_mut(j);
            col *= self.dw[j] / self.de[j];
        }
        right * left.transpose()
    }
}
