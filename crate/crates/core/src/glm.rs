//! Logistic (IRLS / Newton-Raphson) and least-squares fits for the null,
//! outcome, and expression models.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::datamodel::{Dataset, InteractionMatrix};
use crate::error::{Error, Result};

/// Max absolute score component at convergence.
pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 25;
const SEPARATION_EPS: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

/// Default ridge penalty for the direct/indirect-effect null models.
pub fn default_ridge(n: usize) -> f64 {
    1e-4 * n as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Fixed ridge penalty on every non-intercept coefficient.
    pub ridge: Option<f64>,
    /// Refit with [`default_ridge`] if the unpenalized design is rank
    /// deficient.
    pub ridge_fallback: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol: SCORE_TOL, max_iter: MAX_ITER, ridge: None, ridge_fallback: false }
    }
}

impl FitOptions {
    pub fn with_ridge(lambda: f64) -> Self {
        FitOptions { ridge: Some(lambda), ..Default::default() }
    }
}

#[derive(Clone, Debug)]
pub struct LogisticFit {
    pub coef: DVector<f64>,
    pub mu: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized log-likelihood at each accepted iterate, starting from
    /// the initial value.
    pub loglik_trace: Vec<f64>,
    pub ridge: Option<f64>,
}

impl LogisticFit {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap_or(&f64::NAN)
    }
}

/// The fitted null logistic model. `design` is the null design matrix: the
/// covariates, optionally followed by the extra columns a restricted null
/// keeps (expression for the direct-effect test, SNPs for the
/// indirect-effect test).
#[derive(Clone, Debug)]
pub struct NullFit {
    pub alpha0: DVector<f64>,
    pub mu0: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
    pub ridge: Option<f64>,
    pub design: DMatrix<f64>,
}

impl NullFit {
    pub fn residuals(&self, y: &DVector<f64>) -> DVector<f64> {
        y - &self.mu0
    }

    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged { iterations: self.iterations })
        }
    }
}

/// Coefficients of the outcome model and the expression model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MediationCoefficients {
    pub alpha: Vec<f64>,
    pub beta_s: Vec<f64>,
    pub beta_g: f64,
    pub gamma: Vec<f64>,
    pub phi: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma2_g: f64,
}

impl MediationCoefficients {
    pub fn p(&self) -> usize {
        self.beta_s.len()
    }
    pub fn q(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.gamma.len() != p || self.delta.len() != p {
            return Err(Error::Dimension("beta_s, gamma and delta must have equal length".into()));
        }
        if self.phi.len() != self.q() {
            return Err(Error::Dimension("alpha and phi must have equal length".into()));
        }
        if !(self.sigma2_g > 0.0) {
            return Err(Error::InvalidArgument("sigma2_g must be positive".into()));
        }
        Ok(())
    }
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^eta) without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

pub fn logistic_loglik(design: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>) -> f64 {
    let eta = design * coef;
    eta.iter().zip(y.iter()).map(|(&e, &yi)| yi * e - softplus(e)).sum()
}

fn penalty(coef: &DVector<f64>, ridge: Option<f64>) -> f64 {
    ridge.map_or(0.0, |lambda| 0.5 * lambda * coef.iter().skip(1).map(|b| b * b).sum::<f64>())
}

/// Checks numerical full column rank via the eigenvalues of the
/// column-scaled cross-product matrix.
pub fn check_full_rank(design: &DMatrix<f64>) -> Result<()> {
    let xtx = design.transpose() * design;
    let k = xtx.nrows();
    let scale: Vec<f64> = (0..k).map(|j| xtx[(j, j)].sqrt()).collect();
    if let Some(j) = scale.iter().position(|&s| s == 0.0) {
        return Err(Error::RankDeficient(format!("column {j} is identically zero")));
    }
    let corr = DMatrix::from_fn(k, k, |i, j| xtx[(i, j)] / (scale[i] * scale[j]));
    let eig = corr.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= RANK_TOL * max {
        return Err(Error::RankDeficient(format!("scaled condition ratio {:.3e}", min / max)));
    }
    Ok(())
}

/// Maximum-likelihood logistic regression by Newton-Raphson with step
/// halving, so the (penalized) log-likelihood never decreases.
pub fn fit_logistic(design: &DMatrix<f64>, y: &DVector<f64>, opts: &FitOptions) -> Result<LogisticFit> {
    if design.nrows() != y.len() {
        return Err(Error::Dimension("design rows must match outcome length".into()));
    }
    let ridge = match opts.ridge {
        Some(lambda) => Some(lambda),
        None => match check_full_rank(design) {
            Ok(()) => None,
            Err(_) if opts.ridge_fallback => Some(default_ridge(y.len())),
            Err(e) => return Err(e),
        },
    };
    let k = design.ncols();
    let mut coef = DVector::zeros(k);
    let objective = |c: &DVector<f64>| logistic_loglik(design, y, c) - penalty(c, ridge);
    let mut current = objective(&coef);
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..=opts.max_iter {
        let mu = (design * &coef).map(expit);
        let mut score = design.transpose() * (y - &mu);
        if let Some(lambda) = ridge {
            for j in 1..k {
                score[j] -= lambda * coef[j];
            }
        }
        if score.amax() < opts.tol {
            converged = true;
            iterations = iter;
            break;
        }
        if iter == opts.max_iter {
            iterations = iter;
            break;
        }
        let mut info = weighted_crossprod(design, &mu.map(|m| m * (1.0 - m)));
        if let Some(lambda) = ridge {
            for j in 1..k {
                info[(j, j)] += lambda;
            }
        }
        let step = info
            .cholesky()
            .map(|ch| ch.solve(&score))
            .ok_or_else(|| separation_or_rank(&mu))?;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &coef + &step * t;
            let value = objective(&candidate);
            if value.is_finite() && value >= current - 1e-12 * current.abs().max(1.0) {
                coef = candidate;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        trace.push(current);
        iterations = iter + 1;
        if !accepted {
            break;
        }
    }

    let mu = (design * &coef).map(expit);
    if mu.iter().any(|&m| m < SEPARATION_EPS || m > 1.0 - SEPARATION_EPS) {
        return Err(Error::Separation);
    }
    Ok(LogisticFit { coef, mu, converged, iterations, loglik_trace: trace, ridge })
}

fn separation_or_rank(mu: &DVector<f64>) -> Error {
    if mu.iter().any(|&m| m < SEPARATION_EPS || m > 1.0 - SEPARATION_EPS) {
        Error::Separation
    } else {
        Error::RankDeficient("information matrix is not positive definite".into())
    }
}

/// `Z^T diag(w) Z`.
pub fn weighted_crossprod(z: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = z.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= w[i];
    }
    z.transpose() * scaled
}

pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.first().map_or(0, |b| b.nrows());
    let width = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, width);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (n, b.ncols())).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Fits the null logistic model on `[X | extra_columns]`.
pub fn fit_null_logistic(d: &Dataset, extra_columns: Option<&DMatrix<f64>>, opts: &FitOptions) -> Result<NullFit> {
    let design = match extra_columns {
        Some(extra) => {
            if extra.nrows() != d.n() {
                return Err(Error::Dimension("extra null columns must have n rows".into()));
            }
            hstack(&[d.x(), extra])
        }
        None => d.x().clone(),
    };
    let fit = fit_logistic(&design, d.y(), opts)?;
    let loglik = fit.loglik();
    Ok(NullFit {
        alpha0: fit.coef,
        mu0: fit.mu,
        converged: fit.converged,
        iterations: fit.iterations,
        loglik,
        ridge: fit.ridge,
        design,
    })
}

#[derive(Clone, Debug)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
}

/// Least squares (optionally ridge-penalized, intercept excluded) via the
/// normal equations with a QR fallback.
pub fn fit_ols(design: &DMatrix<f64>, response: &DVector<f64>, ridge: Option<f64>) -> Result<OlsFit> {
    if design.nrows() != response.len() {
        return Err(Error::Dimension("design rows must match response length".into()));
    }
    let coef = match ridge {
        Some(lambda) => {
            let mut xtx = design.transpose() * design;
            for j in 1..xtx.ncols() {
                xtx[(j, j)] += lambda;
            }
            let rhs = design.transpose() * response;
            xtx.cholesky()
                .map(|ch| ch.solve(&rhs))
                .ok_or_else(|| Error::RankDeficient("penalized normal equations".into()))?
        }
        None => {
            check_full_rank(design)?;
            let qr = design.clone().qr();
            let qty = qr.q().transpose() * response;
            qr.r()
                .solve_upper_triangular(&qty)
                .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))?
        }
    };
    let residuals = response - design * &coef;
    let rss = residuals.norm_squared();
    Ok(OlsFit { coef, residuals, rss })
}

/// Fits the outcome model `logit P(Y=1) = X a + S b_S + G b_G + C g` and the
/// expression model `G = X phi + S delta + e`.
pub fn fit_full_models(d: &Dataset, ridge: Option<f64>) -> Result<MediationCoefficients> {
    let (n, p, q) = (d.n(), d.p(), d.q());
    let InteractionMatrix { c } = d.interaction_matrix();
    let g_col = DMatrix::from_column_slice(n, 1, d.g().as_slice());
    let outcome_design = hstack(&[d.x(), d.s(), &g_col, &c]);
    let opts = FitOptions { ridge, ..Default::default() };
    let outcome = fit_logistic(&outcome_design, d.y(), &opts)?;
    if !outcome.converged {
        return Err(Error::NotConverged { iterations: outcome.iterations });
    }

    if n <= q + p {
        return Err(Error::Dimension(format!("need n > q + p for the expression model (n={n}, q+p={})", q + p)));
    }
    let expr_design = hstack(&[d.x(), d.s()]);
    let expr = fit_ols(&expr_design, d.g(), ridge)?;
    let sigma2_g = expr.rss / (n - q - p) as f64;

    let oc = outcome.coef.as_slice();
    let ec = expr.coef.as_slice();
    let mc = MediationCoefficients {
        alpha: oc[..q].to_vec(),
        beta_s: oc[q..q + p].to_vec(),
        beta_g: oc[q + p],
        gamma: oc[q + p + 1..].to_vec(),
        phi: ec[..q].to_vec(),
        delta: ec[q..].to_vec(),
        sigma2_g,
    };
    mc.validate()?;
    Ok(mc)
}
