//! Anchor-graph approximation of the visual affinity matrix.
//!
//! The affinity `S = V Λ⁻¹ Vᵀ` is never formed; [`AnchorGraph::apply`] computes
//! `M S` with two sparse products in `O(r n s)`.

use crate::dataio::DenseMatrix;
use crate::error::{dim_err, Error, Result};
use crate::kmeans::{self, sq_dist};

pub const DEFAULT_NEAREST: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorParams {
    pub m: usize,
    pub s: usize,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
}

impl AnchorParams {
    pub fn new(m: usize, s: usize) -> Self {
        Self {
            m,
            s,
            kmeans_iters: kmeans::DEFAULT_MAX_ITERS,
            kmeans_tol: kmeans::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnchorGraph {
    /// `d × m`.
    pub anchors: DenseMatrix,
    s: usize,
    /// Row `i` of V lives at `[i*s, (i+1)*s)`.
    nbr_idx: Vec<u32>,
    nbr_w: Vec<f64>,
    /// Diagonal of Λ = diag(Vᵀ 1).
    lambda: Vec<f64>,
    /// Gaussian bandwidth σ².
    pub bandwidth: f64,
}

pub fn build_anchor_graph(x: &DenseMatrix, m: usize, s: usize, seed: u64) -> Result<AnchorGraph> {
    build_anchor_graph_with(x, &AnchorParams::new(m, s), seed)
}

pub fn build_anchor_graph_with(
    x: &DenseMatrix,
    params: &AnchorParams,
    seed: u64,
) -> Result<AnchorGraph> {
    let n = x.ncols();
    let AnchorParams { m, s, .. } = *params;
    if m == 0 || m > n {
        return Err(Error::InvalidConfig(format!("anchor count m = {m} with n = {n}")));
    }
    if s == 0 || s > m {
        return Err(Error::InvalidConfig(format!("nearest anchors s = {s} with m = {m}")));
    }
    let anchors = kmeans::kmeans(x, m, params.kmeans_iters, params.kmeans_tol, seed)?.centers;

    // s nearest anchors per sample, ascending distance, ties to the lower index.
    let mut nbr_idx = Vec::with_capacity(n * s);
    let mut nbr_d = Vec::with_capacity(n * s);
    let mut dists: Vec<(f64, u32)> = Vec::with_capacity(m);
    for i in 0..n {
        let xi = x.column(i);
        dists.clear();
        dists.extend(
            anchors
                .column_iter()
                .enumerate()
                .map(|(j, a)| (sq_dist(xi.as_slice(), a.as_slice()), j as u32)),
        );
        let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if s < m {
            dists.select_nth_unstable_by(s - 1, cmp);
        }
        let nearest = &mut dists[..s];
        nearest.sort_unstable_by(cmp);
        for &(d, j) in nearest.iter() {
            nbr_idx.push(j);
            nbr_d.push(d);
        }
    }

    let bandwidth = (0..n).map(|i| nbr_d[i * s + s - 1]).sum::<f64>() / n as f64;

    let mut nbr_w = vec![0.0; n * s];
    for i in 0..n {
        let row = &nbr_d[i * s..(i + 1) * s];
        let out = &mut nbr_w[i * s..(i + 1) * s];
        let dmin = row[0];
        for (w, &d) in out.iter_mut().zip(row) {
            *w = if bandwidth > 0.0 {
                (-(d - dmin) / (2.0 * bandwidth)).exp()
            } else if d == dmin {
                1.0
            } else {
                0.0
            };
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|w| *w /= total);
    }

    let mut lambda = vec![0.0; m];
    for (&j, &w) in nbr_idx.iter().zip(&nbr_w) {
        lambda[j as usize] += w;
    }
    let unused = lambda.iter().filter(|&&l| l == 0.0).count();
    if unused > 0 {
        log::warn!("{unused} anchors receive no similarity mass and are ignored");
    }

    Ok(AnchorGraph {
        anchors,
        s,
        nbr_idx,
        nbr_w,
        lambda,
        bandwidth,
    })
}

impl AnchorGraph {
    pub fn n(&self) -> usize {
        self.nbr_w.len() / self.s
    }

    pub fn m(&self) -> usize {
        self.lambda.len()
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Nonzero pattern of row `i` of V as `(anchor, weight)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = i * self.s..(i + 1) * self.s;
        self.nbr_idx[range.clone()]
            .iter()
            .zip(&self.nbr_w[range])
            .map(|(&j, &w)| (j as usize, w))
    }

    fn inv_lambda(&self, j: usize) -> f64 {
        let l = self.lambda[j];
        if l > 0.0 {
            1.0 / l
        } else {
            0.0
        }
    }

    /// Dense `n × m` V, for small-instance checks.
    pub fn dense_v(&self) -> DenseMatrix {
        let mut v = DenseMatrix::zeros(self.n(), self.m());
        for i in 0..self.n() {
            for (j, w) in self.row(i) {
                v[(i, j)] += w;
            }
        }
        v
    }

    /// Dense `n × n` affinity S = V Λ⁻¹ Vᵀ. Quadratic in n; tests only.
    pub fn dense_affinity(&self) -> DenseMatrix {
        let v = self.dense_v();
        let mut scaled = v.clone();
        for j in 0..self.m() {
            let mut col = scaled.column_mut(j);
            col *= self.inv_lambda(j);
        }
        &scaled * v.transpose()
    }

    /// `M · V Λ⁻¹ Vᵀ` for `M` of shape `r × n`.
    pub fn apply(&self, mat: &DenseMatrix) -> Result<DenseMatrix> {
        let n = self.n();
        if mat.ncols() != n {
            return Err(dim_err!("affinity expects {n} columns, got {}", mat.ncols()));
        }
        let r = mat.nrows();
        let mut mv = DenseMatrix::zeros(r, self.m());
        for i in 0..n {
            let src = mat.column(i);
            for (j, w) in self.row(i) {
                mv.column_mut(j).axpy(w, &src, 1.0);
            }
        }
        for j in 0..self.m() {
            let mut col = mv.column_mut(j);
            col *= self.inv_lambda(j);
        }
        let mut out = DenseMatrix::zeros(r, n);
        for i in 0..n {
            let mut dst = out.column_mut(i);
            for (j, w) in self.row(i) {
                dst.axpy(w, &mv.column(j), 1.0);
            }
        }
        Ok(out)
    }

    /// Tr(Z S Zᵀ) without forming S: Σ_j ‖(Z V)_j‖² / Λ_j.
    pub fn quadratic_trace(&self, z: &DenseMatrix) -> Result<f64> {
        let n = self.n();
        if z.ncols() != n {
            return Err(dim_err!("affinity expects {n} columns, got {}", z.ncols()));
        }
        let mut zv = DenseMatrix::zeros(z.nrows(), self.m());
        for i in 0..n {
            for (j, w) in self.row(i) {
                zv.column_mut(j).axpy(w, &z.column(i), 1.0);
            }
        }
        Ok((0..self.m())
            .map(|j| zv.column(j).norm_squared() * self.inv_lambda(j))
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn own_anchor_gives_identity() {
        let x = random(3, 9, 2);
        let g = build_anchor_graph(&x, 9, 1, 0).unwrap();
        let s = g.dense_affinity();
        assert!((s - DenseMatrix::identity(9, 9)).amax() < 1e-12);
        assert!(g.lambda().iter().all(|&l| (l - 1.0).abs() < 1e-12));
        let m = random(2, 9, 5);
        assert!((g.apply(&m).unwrap() - &m).amax() < 1e-12);
    }

    #[test]
    fn rows_normalized_and_lambda_matches() {
        let x = random(4, 60, 3);
        let g = build_anchor_graph(&x, 10, 5, 1).unwrap();
        let v = g.dense_v();
        for i in 0..60 {
            let row = v.row(i);
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().filter(|&&w| w > 0.0).count() >= 1);
        }
        for j in 0..10 {
            assert!((v.column(j).sum() - g.lambda()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn small_laplacian_is_psd() {
        let x = random(2, 6, 7);
        let g = build_anchor_graph(&x, 2, 2, 3).unwrap();
        let s = g.dense_affinity();
        let lap = DenseMatrix::identity(6, 6) - &s;
        let eig = SymmetricEigen::new(lap.clone());
        assert!(eig.eigenvalues.min() >= -1e-8);
        let ones = nalgebra::DVector::from_element(6, 1.0);
        assert!((lap * ones).amax() < 1e-9);
    }

    #[test]
    fn apply_matches_dense_and_is_linear() {
        let x = random(2, 6, 7);
        let g = build_anchor_graph(&x, 2, 2, 3).unwrap();
        let m = random(3, 6, 8);
        let dense = &m * g.dense_affinity();
        assert!((g.apply(&m).unwrap() - dense).amax() < 1e-10);
        assert_eq!(g.apply(&DenseMatrix::zeros(3, 6)).unwrap(), DenseMatrix::zeros(3, 6));

        let m2 = random(3, 6, 9);
        let lhs = g.apply(&(&m * 2.5 - &m2 * 0.75)).unwrap();
        let rhs = g.apply(&m).unwrap() * 2.5 - g.apply(&m2).unwrap() * 0.75;
        assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn trace_matches_apply() {
        let x = random(3, 40, 1);
        let g = build_anchor_graph(&x, 8, 3, 2).unwrap();
        let z = random(4, 40, 3);
        let via_apply = z.component_mul(&g.apply(&z).unwrap()).sum();
        assert!((g.quadratic_trace(&z).unwrap() - via_apply).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let x = random(2, 5, 0);
        assert!(matches!(build_anchor_graph(&x, 6, 1, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(build_anchor_graph(&x, 3, 4, 0), Err(Error::InvalidConfig(_))));
        let g = build_anchor_graph(&x, 3, 2, 0).unwrap();
        assert!(matches!(
            g.apply(&DenseMatrix::zeros(2, 4)),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
