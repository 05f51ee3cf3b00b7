//! Null distribution of the quadratic-form statistic.
//!
//! Under the null, `Q` converges to `sum_l (A_l' eps)^2` with
//! `eps ~ N(0, D)`, `D = U'WU / n`, `U_i = (X_i', V_i')` and
//! `A = [-D_XV' D_XX^-1, I]`. That limit is a weighted sum of independent
//! chi-square(1) variables with weights equal to the eigenvalues of `ADA'`.
//! Three engines turn an observed `Q` into a p-value: a moment-matched
//! scaled chi-square, characteristic-function inversion, and perturbation
//! resampling of `eps`.

pub mod davies;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::datamodel::{Dataset, InteractionMatrix};
use crate::error::{Error, Result};
use crate::exec::{map_indices_with, Execution};
use crate::glm::{weighted_crossprod, NullFit};
use crate::vctest::{kernel_columns, Variant, Weights};

pub const DEFAULT_EIGEN_REL_TOL: f64 = 1e-8;
pub const DEFAULT_DAVIES_ACCURACY: f64 = 1e-6;
pub const DAVIES_TERM_LIMIT: usize = 10_000;
/// Smallest p-value reported by the inversion engine.
pub const P_FLOOR: f64 = 1e-16;
pub const DEFAULT_PERTURBATIONS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Satterthwaite,
    Davies,
    Perturbation,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::Satterthwaite, Engine::Davies, Engine::Perturbation];
}

/// The projected covariance of the limiting score vector, plus the
/// per-subject contributions used for perturbation.
#[derive(Clone, Debug)]
pub struct ProjectedKernel {
    /// `D = U'WU / n`, `(q + m) x (q + m)`.
    pub d_mat: DMatrix<f64>,
    /// `A = [-D_XV' D_XX^-1, I_m]`, `m x (q + m)`.
    pub a_mat: DMatrix<f64>,
    pub m: usize,
    /// Columns of the null design (`q` plus any extra null columns).
    pub q: usize,
    /// Column `i` is `A U_i (y_i - mu_i) / sqrt(n)`; a perturbation draw is
    /// `||contrib * N||^2` for a standard normal vector `N`.
    contrib: DMatrix<f64>,
}

impl ProjectedKernel {
    /// Builds the kernel for an explicit null design and kernel design `v`.
    pub fn new(null_design: &DMatrix<f64>, v: &DMatrix<f64>, mu0: &DVector<f64>, y: &DVector<f64>, ridge: Option<f64>) -> Result<Self> {
        let n = y.len();
        if null_design.nrows() != n || v.nrows() != n || mu0.len() != n {
            return Err(Error::Dimension("kernel inputs disagree on n".into()));
        }
        let (q, m) = (null_design.ncols(), v.ncols());
        let u = crate::glm::hstack(&[null_design, v]);
        let w = mu0.map(|mu| mu * (1.0 - mu));
        let d_mat = weighted_crossprod(&u, &w) / n as f64;

        let mut dxx = d_mat.view((0, 0), (q, q)).into_owned();
        if let Some(lambda) = ridge {
            for j in 1..q {
                dxx[(j, j)] += lambda / n as f64;
            }
        }
        let dxv = d_mat.view((0, q), (q, m)).into_owned();
        let chol = dxx
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("D_XX is singular (collinear null covariates)".into()))?;
        let proj = chol.solve(&dxv); // D_XX^-1 D_XV
        let mut a_mat = DMatrix::zeros(m, q + m);
        a_mat.view_mut((0, 0), (m, q)).copy_from(&(-proj.transpose()));
        for l in 0..m {
            a_mat[(l, q + l)] = 1.0;
        }

        let r = y - mu0;
        let mut scaled = u.transpose(); // (q+m) x n
        let inv_sqrt_n = 1.0 / (n as f64).sqrt();
        for (i, mut col) in scaled.column_iter_mut().enumerate() {
            col *= r[i] * inv_sqrt_n;
        }
        let contrib = &a_mat * scaled;
        Ok(ProjectedKernel { d_mat, a_mat, m, q, contrib })
    }

    /// Kernel for one of the statistic variants; `nf` must be the null fit
    /// matching that variant (covariate-only for S/SG/SGC).
    pub fn for_variant(d: &Dataset, c: &InteractionMatrix, nf: &NullFit, w: &Weights, v: Variant) -> Result<Self> {
        nf.require_converged()?;
        let vmat = kernel_columns(d, c, w, v);
        Self::new(&nf.design, &vmat, &nf.mu0, d.y(), nf.ridge)
    }

    pub fn n(&self) -> usize {
        self.contrib.ncols()
    }

    /// `A D A'`.
    pub fn projected_covariance(&self) -> DMatrix<f64> {
        let mut cov = &self.a_mat * &self.d_mat * self.a_mat.transpose();
        symmetrize(&mut cov);
        cov
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in i + 1..k {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Mixture weights of the limiting chi-square(1) sum, descending.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    pub lambdas: Vec<f64>,
}

impl Spectrum {
    pub fn from_lambdas(mut lambdas: Vec<f64>) -> Result<Self> {
        lambdas.retain(|&l| l > 0.0);
        if lambdas.is_empty() {
            return Err(Error::Degenerate("no positive eigenvalues".into()));
        }
        lambdas.sort_by(|a, b| b.total_cmp(a));
        Ok(Spectrum { lambdas })
    }

    pub fn mean(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.lambdas.iter().map(|l| l * l).sum::<f64>()
    }
}

/// Eigenvalues of a symmetric matrix, dropping those below
/// `rel_tol * lambda_max`.
pub fn spectrum_of(sym: &DMatrix<f64>, rel_tol: f64) -> Result<Spectrum> {
    let eig = sym.clone().symmetric_eigenvalues();
    let max = eig.max();
    if !(max > 0.0) {
        return Err(Error::Degenerate("all eigenvalues are non-positive".into()));
    }
    let kept: Vec<f64> = eig.iter().copied().filter(|&l| l >= rel_tol * max).collect();
    Spectrum::from_lambdas(kept)
}

pub fn spectrum(pk: &ProjectedKernel, rel_tol: f64) -> Result<Spectrum> {
    spectrum_of(&pk.projected_covariance(), rel_tol)
}

/// Scaled chi-square `kappa * chi2_nu` matching the spectrum's mean and
/// variance.
pub fn pvalue_satterthwaite(spec: &Spectrum, q_obs: f64) -> Result<f64> {
    let (mean, var) = (spec.mean(), spec.variance());
    if !(mean > 0.0) {
        return Err(Error::Degenerate("E(Q) is zero".into()));
    }
    if !(var > 0.0) {
        return Err(Error::Degenerate("Var(Q) is zero".into()));
    }
    let kappa = var / (2.0 * mean);
    let nu = 2.0 * mean * mean / var;
    let dist = ChiSquared::new(nu).map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(dist.sf(q_obs / kappa).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DaviesPValue {
    pub p: f64,
    /// Inversion failed and the scaled chi-square value was substituted.
    pub fell_back: bool,
}

/// Tail probability by characteristic-function inversion; on failure falls
/// back to the scaled chi-square with a warning.
pub fn pvalue_davies(spec: &Spectrum, q_obs: f64, accuracy: f64) -> Result<DaviesPValue> {
    if spec.lambdas.is_empty() {
        return Err(Error::Degenerate("empty spectrum".into()));
    }
    let k = spec.lambdas.len();
    let res = davies::qf(&spec.lambdas, &vec![0.0; k], &vec![1; k], 0.0, q_obs, DAVIES_TERM_LIMIT, accuracy);
    let hard_fault = matches!(
        res.fault,
        Some(davies::Fault::TermLimit | davies::Fault::Budget | davies::Fault::InvalidInput)
    );
    let out_of_range = !res.cdf.is_finite() || res.cdf < -10.0 * accuracy || res.cdf > 1.0 + 10.0 * accuracy;
    if hard_fault || out_of_range {
        warn!("characteristic-function inversion failed ({:?}); using the scaled chi-square", res.fault);
        return Ok(DaviesPValue { p: pvalue_satterthwaite(spec, q_obs)?, fell_back: true });
    }
    Ok(DaviesPValue { p: (1.0 - res.cdf).clamp(P_FLOOR, 1.0), fell_back: false })
}

/// Standard-normal multipliers, one row of length n per replicate.
#[derive(Clone, Debug)]
pub enum Noise {
    /// Explicit `B x n` matrix.
    Matrix(DMatrix<f64>),
    /// Row `b` drawn from ChaCha8 stream `b` of `seed`, so any subset of
    /// rows can be regenerated independently and in any order.
    Seeded { seed: u64, replicates: usize, n: usize },
}

impl Noise {
    pub fn seeded(seed: u64, replicates: usize, n: usize) -> Self {
        Noise::Seeded { seed, replicates, n }
    }

    pub fn replicates(&self) -> usize {
        match self {
            Noise::Matrix(m) => m.nrows(),
            Noise::Seeded { replicates, .. } => *replicates,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Noise::Matrix(m) => m.ncols(),
            Noise::Seeded { n, .. } => *n,
        }
    }

    pub fn fill_row(&self, b: usize, out: &mut [f64]) {
        match self {
            Noise::Matrix(m) => {
                for (i, v) in out.iter_mut().enumerate() {
                    *v = m[(b, i)];
                }
            }
            Noise::Seeded { seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(b as u64);
                for v in out.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
        }
    }
}

/// Perturbation draws for several kernels sharing the same noise rows.
/// Returns one vector of `B` draws per kernel.
pub fn shared_perturbation_draws(kernels: &[&ProjectedKernel], noise: &Noise, exec: Execution) -> Result<Vec<Vec<f64>>> {
    let n = noise.n();
    if let Some(k) = kernels.iter().find(|k| k.n() != n) {
        return Err(Error::Dimension(format!("noise has {n} columns, kernel has {} subjects", k.n())));
    }
    let per_replicate = map_indices_with(
        noise.replicates(),
        exec,
        || (vec![0.0; n], Vec::new()),
        |(row, proj): &mut (Vec<f64>, Vec<f64>), b| {
            noise.fill_row(b, row);
            kernels
                .iter()
                .map(|k| {
                    proj.clear();
                    proj.resize(k.m, 0.0);
                    for (i, &z) in row.iter().enumerate() {
                        if z != 0.0 {
                            for (l, acc) in proj.iter_mut().enumerate() {
                                *acc += k.contrib[(l, i)] * z;
                            }
                        }
                    }
                    proj.iter().map(|v| v * v).sum::<f64>()
                })
                .collect::<Vec<f64>>()
        },
    );
    let mut out = vec![Vec::with_capacity(noise.replicates()); kernels.len()];
    for row in per_replicate {
        for (k, v) in row.into_iter().enumerate() {
            out[k].push(v);
        }
    }
    Ok(out)
}

pub fn perturbation_null_draws(pk: &ProjectedKernel, noise: &Noise, exec: Execution) -> Result<Vec<f64>> {
    Ok(shared_perturbation_draws(&[pk], noise, exec)?.remove(0))
}

/// Add-one empirical tail probability `(1 + #{draws >= q}) / (B + 1)`.
pub fn pvalue_perturbation(draws: &[f64], q_obs: f64) -> f64 {
    let exceed = draws.iter().filter(|&&d| d >= q_obs).count();
    (1 + exceed) as f64 / (draws.len() + 1) as f64
}
