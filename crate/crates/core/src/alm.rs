//! Discrete hash-code learning with an augmented Lagrangian solver.
//!
//! The learned codes minimize
//!
//! ```text
//! ‖Z − PᵀY‖₂,₁ − α Tr(Z S Zᵀ) − β Tr(Z K Zᵀ) + ν ‖Φ(X) − Z‖²_F,   Z ∈ {−1, +1}^{r×n}
//! ```
//!
//! where `S` is the anchor-graph affinity, `K` the normalized hypergraph kernel
//! and `Φ` a linear feature model. Splitting `A = Z − PᵀY` and `B = Z` gives an
//! augmented Lagrangian in which every block has a closed-form update,
//! including a single sign operation for `Z`.
//!
//! The ℓ2,1 norm here is the sum of column norms (one column per sample).

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchorgraph::AnchorGraph;
use crate::dataio::{DenseMatrix, SparseBinaryMatrix};
use crate::error::{dim_err, Error, Result};
use crate::hashmodel::{sgn, FeatureFitter, FeatureModel, FitOptions};
use crate::hypergraph::Hypergraph;

/// Ablation variants of the learning objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    /// All terms.
    #[default]
    Full,
    /// Drops the ℓ2,1 tag-regression term (and A, P, E_A).
    NoDirect,
    /// Drops the hypergraph term (β = 0).
    NoIndirect,
    /// No tags anywhere: no tag regression, hypergraph built on features only.
    NoTags,
    /// Squared Frobenius tag regression instead of ℓ2,1 (no A).
    NoDenoise,
    /// Continuous codes during optimization, mean-thresholded at the end.
    Relaxed,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoDirect,
        Variant::NoIndirect,
        Variant::NoTags,
        Variant::NoDenoise,
        Variant::Relaxed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDirect => "no_direct",
            Variant::NoIndirect => "no_indirect",
            Variant::NoTags => "no_tags",
            Variant::NoDenoise => "no_denoise",
            Variant::Relaxed => "relaxed",
        }
    }

    /// Whether the tag-regression term (P) is active.
    pub fn uses_direct(self) -> bool {
        !matches!(self, Variant::NoDirect | Variant::NoTags)
    }

    /// Whether the hypergraph term is active.
    pub fn uses_indirect(self) -> bool {
        self != Variant::NoIndirect
    }

    /// Whether the hypergraph is built over stacked features and tags.
    pub fn hypergraph_uses_tags(self) -> bool {
        self != Variant::NoTags
    }

    /// Whether the residual goes through the ℓ2,1 shrinkage (A block).
    pub fn uses_shrinkage(self) -> bool {
        self.uses_direct() && self != Variant::NoDenoise
    }

    pub fn is_relaxed(self) -> bool {
        self == Variant::Relaxed
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" | "dstdh" => Variant::Full,
            "no_direct" | "dstdh_d" => Variant::NoDirect,
            "no_indirect" | "dstdh_i" => Variant::NoIndirect,
            "no_tags" | "dstdh_nt" => Variant::NoTags,
            "no_denoise" | "dstdh_t" => Variant::NoDenoise,
            "relaxed" | "dstdh_r" => Variant::Relaxed,
            _ => return Err(Error::InvalidConfig(format!("unknown variant {s:?}"))),
        };
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub rho: f64,
    pub mu0: f64,
    pub mu_max: f64,
    pub bits: usize,
    pub max_outer_iters: usize,
    pub rel_tol: f64,
    pub ridge_eps: f64,
    pub seed: u64,
    pub variant: Variant,
    pub fit: FitOptions,
}

impl Default for TrainParams {
    /// Weights tuned for MIR-Flickr-like data.
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.001,
            nu: 0.001,
            rho: 1.1,
            mu0: 0.01,
            mu_max: 1e6,
            bits: 32,
            max_outer_iters: 50,
            rel_tol: 1e-5,
            ridge_eps: 1e-6,
            seed: 0,
            variant: Variant::Full,
            fit: FitOptions::default(),
        }
    }
}

impl TrainParams {
    /// Weights tuned for NUS-WIDE-like data.
    pub fn nus_wide() -> Self {
        Self {
            alpha: 10.0,
            beta: 1e-4,
            nu: 10.0,
            rho: 2.0,
            mu0: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("nu", self.nu)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.rho.is_finite() && self.rho > 1.0) {
            return bad(format!("rho must exceed 1, got {}", self.rho));
        }
        if !(self.mu0.is_finite() && self.mu0 > 0.0) {
            return bad(format!("mu0 must be positive, got {}", self.mu0));
        }
        if !(self.mu_max.is_finite() && self.mu_max >= self.mu0) {
            return bad(format!("mu_max must be at least mu0, got {}", self.mu_max));
        }
        if self.bits == 0 {
            return bad("code length must be at least 1".into());
        }
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters must be at least 1".into());
        }
        if !(self.rel_tol.is_finite() && self.rel_tol >= 0.0) {
            return bad(format!("rel_tol must be non-negative, got {}", self.rel_tol));
        }
        if !(self.ridge_eps.is_finite() && self.ridge_eps >= 0.0) {
            return bad(format!("ridge_eps must be non-negative, got {}", self.ridge_eps));
        }
        Ok(())
    }

    fn beta_eff(&self) -> f64 {
        if self.variant.uses_indirect() {
            self.beta
        } else {
            0.0
        }
    }
}

/// Solver variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmState {
    /// Codes, `r × n`; ±1 except for the relaxed variant.
    pub z: DenseMatrix,
    /// Shrunk tag residual, `r × n`.
    pub a: DenseMatrix,
    /// Graph-term copy of Z, `r × n`.
    pub b: DenseMatrix,
    /// Transfer matrix, `c × r`.
    pub p: DenseMatrix,
    pub e_a: DenseMatrix,
    pub e_b: DenseMatrix,
    pub mu: f64,
    pub iter: usize,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Final ±1 codes, `r × n`.
    pub z: DenseMatrix,
    pub p: DenseMatrix,
    pub feature_model: FeatureModel,
    pub objective_history: Vec<f64>,
    pub converged: bool,
    pub iters_used: usize,
    /// Pre-threshold codes of the relaxed variant.
    pub continuous: Option<DenseMatrix>,
}

/// Column-wise group shrinkage: each column `t` maps to
/// `(‖t‖ − λ)/‖t‖ · t` when `‖t‖ > λ` and to zero otherwise.
pub fn prox_l21_columns(t: &DenseMatrix, lambda: f64) -> DenseMatrix {
    let mut out = t.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        if norm > lambda {
            col *= (norm - lambda) / norm;
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// Sum of column Euclidean norms.
pub fn l21_columns(m: &DenseMatrix) -> f64 {
    m.column_iter().map(|c| c.norm()).sum()
}

/// `+1` where a value exceeds its row mean, `−1` otherwise.
pub fn mean_threshold(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        let mean = m.row(r).mean();
        row.apply(|v| *v = if *v > mean { 1.0 } else { -1.0 });
    }
    out
}

fn frob_dot(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// One training problem: data, graphs and parameters, with cached
/// factorizations for the P and Φ least-squares solves.
pub struct AlmSolver<'a> {
    params: TrainParams,
    n: usize,
    /// Dense tags `c × n`; present when the tag regression is active.
    y: Option<DenseMatrix>,
    p_chol: Option<Cholesky<f64, Dyn>>,
    graph: &'a AnchorGraph,
    hyper: Option<&'a Hypergraph>,
    fitter: FeatureFitter,
    x: &'a DenseMatrix,
}

impl<'a> AlmSolver<'a> {
    pub fn new(
        x: &'a DenseMatrix,
        tags: Option<&SparseBinaryMatrix>,
        graph: &'a AnchorGraph,
        hyper: Option<&'a Hypergraph>,
        params: TrainParams,
    ) -> Result<Self> {
        params.validate()?;
        let n = x.ncols();
        if graph.n() != n {
            return Err(dim_err!("anchor graph has {} vertices, features {n}", graph.n()));
        }
        if params.beta_eff() > 0.0 {
            match hyper {
                Some(h) if h.n() != n => {
                    return Err(dim_err!("hypergraph has {} vertices, features {n}", h.n()))
                }
                Some(_) => {}
                None => {
                    return Err(Error::InvalidConfig(
                        "the hypergraph term is active but no hypergraph was supplied".into(),
                    ))
                }
            }
        }
        let (y, p_chol) = if params.variant.uses_direct() {
            let tags = tags.ok_or_else(|| {
                Error::InvalidConfig(format!("variant {} requires tags", params.variant))
            })?;
            if tags.cols() != n {
                return Err(dim_err!("tags have {} samples, features {n}", tags.cols()));
            }
            let y = tags.to_dense();
            let c = y.nrows();
            let gram = &y * y.transpose() + DenseMatrix::identity(c, c) * params.ridge_eps;
            let chol = Cholesky::new(gram).ok_or_else(|| {
                Error::SingularSystem("tag Gram matrix Y Yᵀ + εI is singular".into())
            })?;
            (Some(y), Some(chol))
        } else {
            (None, None)
        };
        let fitter = FeatureFitter::new(
            x,
            &FitOptions {
                ridge_eps: params.ridge_eps,
                ..params.fit
            },
        )?;
        Ok(Self {
            params,
            n,
            y,
            p_chol,
            graph,
            hyper,
            fitter,
            x,
        })
    }

    pub fn params(&self) -> &TrainParams {
        &self.params
    }

    fn bits(&self) -> usize {
        self.params.bits
    }

    fn tag_count(&self) -> usize {
        self.y.as_ref().map_or(0, |y| y.nrows())
    }

    /// Random ±1 codes with `B = Z`; everything else zero.
    pub fn init_state(&self) -> AlmState {
        let (r, n) = (self.bits(), self.n);
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        let z = DenseMatrix::from_fn(r, n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        AlmState {
            b: z.clone(),
            z,
            a: DenseMatrix::zeros(r, n),
            p: DenseMatrix::zeros(self.tag_count(), r),
            e_a: DenseMatrix::zeros(r, n),
            e_b: DenseMatrix::zeros(r, n),
            mu: self.params.mu0,
            iter: 0,
        }
    }

    fn check_codes(&self, m: &DenseMatrix, what: &str) -> Result<()> {
        if m.shape() != (self.bits(), self.n) {
            return Err(dim_err!(
                "{what} is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                self.bits(),
                self.n
            ));
        }
        Ok(())
    }

    /// `PᵀY`, or zero when the tag regression is off.
    pub fn pty(&self, p: &DenseMatrix) -> Result<DenseMatrix> {
        match &self.y {
            Some(y) => {
                if p.shape() != (y.nrows(), self.bits()) {
                    return Err(dim_err!("P is {}x{}, expected {}x{}", p.nrows(), p.ncols(), y.nrows(), self.bits()));
                }
                Ok(p.tr_mul(y))
            }
            None => Ok(DenseMatrix::zeros(self.bits(), self.n)),
        }
    }

    fn affinity(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        if self.params.alpha == 0.0 {
            return Ok(DenseMatrix::zeros(m.nrows(), m.ncols()));
        }
        self.graph.apply(m)
    }

    fn hyperkernel(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        match self.hyper {
            Some(h) if self.params.beta_eff() > 0.0 => h.apply(m),
            _ => Ok(DenseMatrix::zeros(m.nrows(), m.ncols())),
        }
    }

    /// `A = prox(Z − PᵀY + E_A/μ, 1/μ)`.
    pub fn update_a(&self, st: &AlmState) -> Result<DenseMatrix> {
        self.check_codes(&st.z, "Z")?;
        let mut t = &st.z - self.pty(&st.p)?;
        t += &st.e_a / st.mu;
        Ok(prox_l21_columns(&t, 1.0 / st.mu))
    }

    /// `P = (YYᵀ + εI)⁻¹ Y (Z − A + E_A/μ)ᵀ`.
    pub fn update_p(&self, st: &AlmState) -> Result<DenseMatrix> {
        let (Some(y), Some(chol)) = (&self.y, &self.p_chol) else {
            return Ok(st.p.clone());
        };
        self.check_codes(&st.z, "Z")?;
        let target = &st.z - &st.a + &st.e_a / st.mu;
        Ok(chol.solve(&(y * target.transpose())))
    }

    /// `B = Z + E_B/μ + (α/μ) Z S + (β/μ) Z K`.
    pub fn update_b(&self, st: &AlmState) -> Result<DenseMatrix> {
        self.check_codes(&st.z, "Z")?;
        let mu = st.mu;
        let mut b = &st.z + &st.e_b / mu;
        if self.params.alpha > 0.0 {
            b += self.affinity(&st.z)? * (self.params.alpha / mu);
        }
        if self.params.beta_eff() > 0.0 {
            b += self.hyperkernel(&st.z)? * (self.params.beta_eff() / mu);
        }
        Ok(b)
    }

    /// The matrix whose sign is the optimal code update:
    /// `μA + μPᵀY + μB − E_A − E_B + α B S + β B K + 2ν Φ`.
    pub fn z_argument(&self, st: &AlmState, phi: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_codes(&st.b, "B")?;
        self.check_codes(phi, "Phi")?;
        let mu = st.mu;
        let mut arg = &st.b * mu - &st.e_b;
        if self.params.variant.uses_shrinkage() {
            arg += (&st.a + self.pty(&st.p)?) * mu - &st.e_a;
        } else if self.params.variant.uses_direct() {
            // Unsplit ‖Z − PᵀY‖²: only the cross term depends on ±1 codes.
            arg += self.pty(&st.p)? * 2.0;
        }
        if self.params.alpha > 0.0 {
            arg += self.affinity(&st.b)? * self.params.alpha;
        }
        if self.params.beta_eff() > 0.0 {
            arg += self.hyperkernel(&st.b)? * self.params.beta_eff();
        }
        if self.params.nu > 0.0 {
            arg += phi * (2.0 * self.params.nu);
        }
        Ok(arg)
    }

    /// Discrete code update `Z = sgn(argument)` with `sgn(0) = −1`.
    pub fn update_z(&self, st: &AlmState, phi: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.z_argument(st, phi)?.map(sgn))
    }

    /// Stationary point of the code subproblem without the binary constraint.
    pub fn update_z_relaxed(&self, st: &AlmState, phi: &DenseMatrix) -> Result<DenseMatrix> {
        let direct = if self.params.variant.uses_shrinkage() {
            st.mu
        } else if self.params.variant.uses_direct() {
            2.0
        } else {
            0.0
        };
        let denom = direct + st.mu + 2.0 * self.params.nu;
        Ok(self.z_argument(st, phi)? / denom)
    }

    /// Dual ascent on both constraints and `μ ← min(ρμ, μ_max)`.
    pub fn update_multipliers(&self, st: &mut AlmState) -> Result<()> {
        let mu = st.mu;
        if self.params.variant.uses_shrinkage() {
            let resid = &st.z - self.pty(&st.p)? - &st.a;
            st.e_a += resid * mu;
        }
        st.e_b += (&st.z - &st.b) * mu;
        st.mu = (self.params.rho * mu).min(self.params.mu_max);
        Ok(())
    }

    /// The original (non-augmented) objective for codes `z`, transfer `p` and
    /// feature-model outputs `phi`, with disabled terms omitted.
    pub fn objective_raw(&self, z: &DenseMatrix, p: &DenseMatrix, phi: &DenseMatrix) -> Result<f64> {
        self.check_codes(z, "Z")?;
        self.check_codes(phi, "Phi")?;
        let mut f = 0.0;
        if self.params.variant.uses_direct() {
            let resid = z - self.pty(p)?;
            f += if self.params.variant.uses_shrinkage() {
                l21_columns(&resid)
            } else {
                resid.norm_squared()
            };
        }
        if self.params.alpha > 0.0 {
            f -= self.params.alpha * self.graph.quadratic_trace(z)?;
        }
        if let (Some(h), true) = (self.hyper, self.params.beta_eff() > 0.0) {
            f -= self.params.beta_eff() * h.quadratic_trace(z)?;
        }
        if self.params.nu > 0.0 {
            f += self.params.nu * (phi - z).norm_squared();
        }
        Ok(f)
    }

    /// The augmented Lagrangian at the current state, including the
    /// `(μ/2) ε ‖P‖²` ridge the P-step actually minimizes.
    pub fn augmented_objective(&self, st: &AlmState, phi: &DenseMatrix) -> Result<f64> {
        let mu = st.mu;
        let mut f = 0.0;
        if self.params.variant.uses_shrinkage() {
            let mut r = &st.z - self.pty(&st.p)? - &st.a;
            r += &st.e_a / mu;
            f += l21_columns(&st.a) + 0.5 * mu * r.norm_squared();
            f += 0.5 * mu * self.params.ridge_eps * st.p.norm_squared();
        } else if self.params.variant.uses_direct() {
            f += (&st.z - self.pty(&st.p)?).norm_squared() + self.params.ridge_eps * st.p.norm_squared();
        }
        let mut r = &st.z - &st.b;
        r += &st.e_b / mu;
        f += 0.5 * mu * r.norm_squared();
        if self.params.alpha > 0.0 {
            f -= self.params.alpha * frob_dot(&self.affinity(&st.b)?, &st.z);
        }
        if self.params.beta_eff() > 0.0 {
            f -= self.params.beta_eff() * frob_dot(&self.hyperkernel(&st.b)?, &st.z);
        }
        if self.params.nu > 0.0 {
            f += self.params.nu * (phi - &st.z).norm_squared();
        }
        Ok(f)
    }

    /// One outer iteration: A, P, B, Z (+Φ refit), multipliers. Returns the
    /// refreshed Φ outputs.
    pub fn step(&self, st: &mut AlmState, phi: &DenseMatrix) -> Result<DenseMatrix> {
        let variant = self.params.variant;
        let check = cfg!(debug_assertions) && !variant.is_relaxed();
        let mut before = if check { self.augmented_objective(st, phi)? } else { 0.0 };
        let mut assert_descent = |st: &AlmState, what: &str| -> Result<()> {
            if check {
                let after = self.augmented_objective(st, phi)?;
                debug_assert!(
                    after <= before + 1e-9 * before.abs().max(1.0),
                    "{what} increased the augmented objective: {before} -> {after}"
                );
                before = after;
            }
            Ok(())
        };

        if variant.uses_shrinkage() {
            st.a = self.update_a(st)?;
            assert_descent(st, "A-step")?;
        }
        if variant.uses_direct() {
            st.p = self.update_p(st)?;
            assert_descent(st, "P-step")?;
        }
        st.b = self.update_b(st)?;
        assert_descent(st, "B-step")?;
        st.z = if variant.is_relaxed() {
            self.update_z_relaxed(st, phi)?
        } else {
            self.update_z(st, phi)?
        };
        assert_descent(st, "Z-step")?;

        let phi = if self.params.nu > 0.0 {
            self.fitter.fit(&st.z)?.outputs(self.x)?
        } else {
            phi.clone()
        };
        self.update_multipliers(st)?;
        st.iter += 1;
        Ok(phi)
    }

    /// Runs outer iterations until the objective's relative change drops below
    /// `rel_tol` or `max_outer_iters` is reached.
    pub fn train(&self) -> Result<TrainResult> {
        let mut st = self.init_state();
        // The feature model starts untrained: Φ = 0.
        let mut phi = DenseMatrix::zeros(self.bits(), self.n);
        let mut history = Vec::new();
        let mut converged = false;
        for _ in 0..self.params.max_outer_iters {
            phi = self.step(&mut st, &phi)?;
            let f = self.objective_raw(&st.z, &st.p, &phi)?;
            if !f.is_finite() {
                return Err(Error::Numerical(format!(
                    "objective became non-finite at iteration {}",
                    st.iter
                )));
            }
            if let Some(&prev) = history.last() {
                let prev: f64 = prev;
                if (f - prev).abs() <= self.params.rel_tol * prev.abs().max(f64::MIN_POSITIVE) {
                    converged = true;
                }
            }
            history.push(f);
            log::debug!("iteration {}: objective {f:.6e}, mu {:.3e}", st.iter, st.mu);
            if converged {
                break;
            }
        }

        let (z, continuous) = if self.params.variant.is_relaxed() {
            (mean_threshold(&st.z), Some(st.z.clone()))
        } else {
            (st.z.clone(), None)
        };
        let feature_model = self.fitter.fit(&z)?;
        Ok(TrainResult {
            z,
            p: st.p,
            feature_model,
            iters_used: history.len(),
            objective_history: history,
            converged,
            continuous,
        })
    }
}

/// Trains codes and the out-of-sample feature model. Labels never enter here.
pub fn train(
    x: &DenseMatrix,
    tags: Option<&SparseBinaryMatrix>,
    graph: &AnchorGraph,
    hyper: Option<&Hypergraph>,
    params: TrainParams,
) -> Result<TrainResult> {
    AlmSolver::new(x, tags, graph, hyper, params)?.train()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchorgraph::build_anchor_graph;
    use crate::dataio::{generate_synthetic, SynthConfig};
    use crate::hypergraph::build_hypergraph;

    #[test]
    fn prox_basic_cases() {
        let t = DenseMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        assert_eq!(prox_l21_columns(&t, 0.0), t);
        let out = prox_l21_columns(&t, 1.0);
        assert!((out[0] - 2.4).abs() < 1e-12 && (out[1] - 3.2).abs() < 1e-12);
        // ‖t‖ = λ falls in the zero branch.
        assert_eq!(prox_l21_columns(&t, 5.0), DenseMatrix::zeros(2, 1));
    }

    #[test]
    fn mean_threshold_ties_and_shift() {
        let m = DenseMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 0.0, 2.0, 1.0]);
        let t = mean_threshold(&m);
        assert_eq!(t.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0; 3]);
        assert_eq!(t.row(1).iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0, -1.0]);
        let shifted = m.map(|v| v + 7.25);
        assert_eq!(mean_threshold(&shifted), t);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("DSTDH-R".parse::<Variant>().unwrap(), Variant::Relaxed);
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn params_validation() {
        assert!(TrainParams::default().validate().is_ok());
        assert!(TrainParams::nus_wide().validate().is_ok());
        for bad in [
            TrainParams { rho: 1.0, ..Default::default() },
            TrainParams { mu0: 0.0, ..Default::default() },
            TrainParams { bits: 0, ..Default::default() },
            TrainParams { alpha: -1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    fn fixture(n: usize, seed: u64) -> (crate::dataio::Dataset, AnchorGraph, Hypergraph) {
        let ds = generate_synthetic(&SynthConfig {
            n,
            d: 6,
            n_clusters: 3,
            c: 9,
            tag_noise_rate: 0.2,
            cluster_spread: 1.0,
            seed,
        })
        .unwrap();
        let g = build_anchor_graph(&ds.features, 6, 3, seed).unwrap();
        let h = build_hypergraph(&ds.features, Some(&ds.tags), 4, seed).unwrap();
        (ds, g, h)
    }

    #[test]
    fn multiplier_update_scales_mu_and_caps() {
        let (ds, g, h) = fixture(20, 1);
        let params = TrainParams { bits: 4, ..Default::default() };
        let solver = AlmSolver::new(&ds.features, Some(&ds.tags), &g, Some(&h), params).unwrap();
        let mut st = solver.init_state();
        // Z = PᵀY + A (P = 0, A = Z) and B = Z: zero residuals.
        st.a = st.z.clone();
        let before = st.clone();
        solver.update_multipliers(&mut st).unwrap();
        assert_eq!(st.e_a, before.e_a);
        assert_eq!(st.e_b, before.e_b);
        assert!((st.mu - 0.011).abs() < 1e-15);

        st.mu = params.mu_max;
        solver.update_multipliers(&mut st).unwrap();
        assert_eq!(st.mu, params.mu_max);
    }

    #[test]
    fn update_a_limits() {
        let (ds, g, h) = fixture(20, 2);
        let params = TrainParams { bits: 4, ..Default::default() };
        let solver = AlmSolver::new(&ds.features, Some(&ds.tags), &g, Some(&h), params).unwrap();
        let mut st = solver.init_state();
        // Threshold 1/μ = 100 exceeds every column norm √4.
        assert_eq!(solver.update_a(&st).unwrap(), DenseMatrix::zeros(4, 20));
        st.mu = 1e12;
        assert!((solver.update_a(&st).unwrap() - &st.z).amax() < 1e-10);
    }

    #[test]
    fn update_b_reduces_to_z_without_graph_terms() {
        let (ds, g, h) = fixture(20, 3);
        let params = TrainParams { bits: 4, alpha: 0.0, beta: 0.0, ..Default::default() };
        let solver = AlmSolver::new(&ds.features, Some(&ds.tags), &g, Some(&h), params).unwrap();
        let st = solver.init_state();
        assert_eq!(solver.update_b(&st).unwrap(), st.z);

        let params = TrainParams { bits: 4, ..Default::default() };
        let solver = AlmSolver::new(&ds.features, Some(&ds.tags), &g, Some(&h), params).unwrap();
        let mut st = solver.init_state();
        st.mu = 1e14;
        assert!((solver.update_b(&st).unwrap() - &st.z).amax() < 1e-12);
    }

    #[test]
    fn z_sign_convention() {
        let (ds, g, h) = fixture(10, 4);
        let params = TrainParams { bits: 2, alpha: 0.0, beta: 0.0, nu: 0.0, variant: Variant::NoDirect, ..Default::default() };
        let solver = AlmSolver::new(&ds.features, None, &g, Some(&h), params).unwrap();
        let mut st = solver.init_state();
        st.b = DenseMatrix::from_element(2, 10, 0.5);
        let phi = DenseMatrix::zeros(2, 10);
        assert_eq!(solver.update_z(&st, &phi).unwrap(), DenseMatrix::from_element(2, 10, 1.0));
        st.b[(1, 3)] = 0.0;
        let z = solver.update_z(&st, &phi).unwrap();
        assert_eq!(z[(1, 3)], -1.0);
    }

    #[test]
    fn p_closed_form_one_tag_two_samples() {
        // c = 1, n = 2, Y = [1, 1]: P = s / (2 + ε) where s is the row sum of Z − A + E_A/μ.
        let x = DenseMatrix::from_column_slice(1, 2, &[0.0, 1.0]);
        let tags = SparseBinaryMatrix::new(1, vec![vec![0], vec![0]]).unwrap();
        let g = build_anchor_graph(&x, 2, 1, 0).unwrap();
        let eps = 0.5;
        let params = TrainParams { bits: 3, ridge_eps: eps, beta: 0.0, ..Default::default() };
        let solver = AlmSolver::new(&x, Some(&tags), &g, None, params).unwrap();
        let mut st = solver.init_state();
        st.a = DenseMatrix::from_fn(3, 2, |i, j| 0.1 * (i + j) as f64);
        st.e_a = DenseMatrix::from_fn(3, 2, |i, j| 0.01 * (i as f64 - j as f64));
        let p = solver.update_p(&st).unwrap();
        let target = &st.z - &st.a + &st.e_a / st.mu;
        for b in 0..3 {
            let s = target.row(b).sum();
            assert!((p[(0, b)] - s / (2.0 + eps)).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_zero_and_constant_code_cases() {
        let (ds, g, h) = fixture(24, 5);
        // Z = Φ, PᵀY = Z (no tag term), α = β = 0.
        let params = TrainParams { bits: 3, alpha: 0.0, beta: 0.0, variant: Variant::NoDirect, ..Default::default() };
        let solver = AlmSolver::new(&ds.features, None, &g, Some(&h), params).unwrap();
        let z = solver.init_state().z;
        let p = DenseMatrix::zeros(0, 3);
        assert_eq!(solver.objective_raw(&z, &p, &z).unwrap(), 0.0);

        // α only, Z all +1: Tr(Z S Zᵀ) = r n.
        let params = TrainParams { bits: 3, alpha: 0.7, beta: 0.0, nu: 0.0, variant: Variant::NoDirect, ..Default::default() };
        let solver = AlmSolver::new(&ds.features, None, &g, None, params).unwrap();
        let ones = DenseMatrix::from_element(3, 24, 1.0);
        let f = solver.objective_raw(&ones, &p, &ones).unwrap();
        assert!((f + 0.7 * 3.0 * 24.0).abs() < 1e-9);
    }

    #[test]
    fn steps_never_increase_augmented_objective() {
        let (ds, g, h) = fixture(40, 6);
        for variant in [Variant::Full, Variant::NoDirect, Variant::NoIndirect, Variant::NoDenoise] {
            let params = TrainParams { bits: 5, nu: 0.1, alpha: 0.5, beta: 0.3, variant, ..Default::default() };
            let tags = variant.uses_direct().then_some(&ds.tags);
            let solver = AlmSolver::new(&ds.features, tags, &g, Some(&h), params).unwrap();
            let mut st = solver.init_state();
            let mut phi = DenseMatrix::zeros(5, 40);
            for _ in 0..8 {
                // step() asserts per-block descent in debug builds.
                phi = solver.step(&mut st, &phi).unwrap();
            }
        }
    }

    #[test]
    fn single_iteration_accounting_and_determinism() {
        let (ds, g, h) = fixture(60, 7);
        let params = TrainParams { bits: 8, max_outer_iters: 1, ..Default::default() };
        let res = train(&ds.features, Some(&ds.tags), &g, Some(&h), params).unwrap();
        assert_eq!(res.objective_history.len(), 1);
        assert_eq!(res.iters_used, 1);
        assert!(!res.converged);

        let params = TrainParams { bits: 8, ..Default::default() };
        let a = train(&ds.features, Some(&ds.tags), &g, Some(&h), params).unwrap();
        let b = train(&ds.features, Some(&ds.tags), &g, Some(&h), params).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.objective_history, b.objective_history);
        assert!(a.z.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn relaxed_codes_are_thresholded() {
        let (ds, g, h) = fixture(60, 8);
        let params = TrainParams { bits: 6, variant: Variant::Relaxed, ..Default::default() };
        let res = train(&ds.features, Some(&ds.tags), &g, Some(&h), params).unwrap();
        let cont = res.continuous.as_ref().unwrap();
        assert_eq!(res.z, mean_threshold(cont));
    }

    #[test]
    fn missing_inputs_are_rejected() {
        let (ds, g, h) = fixture(20, 9);
        let params = TrainParams { bits: 4, ..Default::default() };
        assert!(matches!(
            AlmSolver::new(&ds.features, None, &g, Some(&h), params),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            AlmSolver::new(&ds.features, Some(&ds.tags), &g, None, params),
            Err(Error::InvalidConfig(_))
        ));
    }
}
