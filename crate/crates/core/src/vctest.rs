//! Scores, variance-based weights, and the weighted quadratic-form
//! statistics.
//!
//! With residuals `r = y - mu0` the three scores are `U_tauS = r'SS'r`,
//! `U_betaG = G'r` and `U_tauI = r'CC'r`, and the statistic is
//! `Q = (a1 U_tauS + a2 U_betaG^2 + a3 U_tauI) / n`, restricted to the terms
//! a variant keeps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, InteractionMatrix};
use crate::error::{Error, Result};
use crate::glm::NullFit;

/// A kernel component of the statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Snp,
    Expression,
    Interaction,
}

/// Which terms enter the statistic. `S`, `SG`, `SGC` test the total effect
/// against the covariate-only null; `DE` and `IE` test the direct and
/// indirect effects against their restricted nulls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    S,
    SG,
    SGC,
    DE,
    IE,
}

impl Variant {
    pub const TOTAL: [Variant; 3] = [Variant::S, Variant::SG, Variant::SGC];

    pub fn terms(self) -> &'static [Term] {
        match self {
            Variant::S => &[Term::Snp],
            Variant::SG => &[Term::Snp, Term::Expression],
            Variant::SGC => &[Term::Snp, Term::Expression, Term::Interaction],
            Variant::DE => &[Term::Snp, Term::Interaction],
            Variant::IE => &[Term::Expression, Term::Interaction],
        }
    }

    /// Number of kernel columns for `p` SNPs.
    pub fn kernel_width(self, p: usize) -> usize {
        self.terms()
            .iter()
            .map(|t| match t {
                Term::Expression => 1,
                _ => p,
            })
            .sum()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::S => "S",
            Variant::SG => "SG",
            Variant::SGC => "SGC",
            Variant::DE => "DE",
            Variant::IE => "IE",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(Variant::S),
            "sg" => Ok(Variant::SG),
            "sgc" => Ok(Variant::SGC),
            "de" => Ok(Variant::DE),
            "ie" => Ok(Variant::IE),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Weighted,
    Unweighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoreComponents {
    pub u_tau_s: f64,
    pub u_beta_g: f64,
    pub u_tau_i: f64,
    pub i_tau_s: f64,
    pub i_g: f64,
    pub i_tau_i: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Weights {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub mode: Weighting,
}

impl Weights {
    pub fn unweighted() -> Self {
        Weights { a1: 1.0, a2: 1.0, a3: 1.0, mode: Weighting::Unweighted }
    }

    /// `a1 = 1`, `a2 = (I_G / I_tauS)^(-1/2)`, `a3 = (I_tauI / I_tauS)^(-1/2)`.
    pub fn weighted(sc: &ScoreComponents) -> Result<Self> {
        if !(sc.i_tau_s > 0.0) {
            return Err(Error::UndefinedWeights("I_tauS is zero".into()));
        }
        if !(sc.i_g > 0.0) {
            return Err(Error::UndefinedWeights("I_G is zero (constant expression)".into()));
        }
        if !(sc.i_tau_i > 0.0) {
            return Err(Error::UndefinedWeights("I_tauI is zero".into()));
        }
        Ok(Weights {
            a1: 1.0,
            a2: (sc.i_tau_s / sc.i_g).sqrt(),
            a3: (sc.i_tau_s / sc.i_tau_i).sqrt(),
            mode: Weighting::Weighted,
        })
    }

    pub fn compute(sc: &ScoreComponents, mode: Weighting) -> Result<Self> {
        match mode {
            Weighting::Weighted => Self::weighted(sc),
            Weighting::Unweighted => Ok(Self::unweighted()),
        }
    }

    pub fn of(&self, term: Term) -> f64 {
        match term {
            Term::Snp => self.a1,
            Term::Expression => self.a2,
            Term::Interaction => self.a3,
        }
    }
}

/// Diagonal entry of the fourth-moment kernel: `-4m^4 + 8m^3 - 5m^2 + m`.
pub fn k_diag(mu: f64) -> f64 {
    let mu2 = mu * mu;
    -4.0 * mu2 * mu2 + 8.0 * mu2 * mu - 5.0 * mu2 + mu
}

/// The n x n kernel with `k_ii` on the diagonal and
/// `2 mu_i(1-mu_i) mu_j(1-mu_j)` off it. Only for small n; the variance terms
/// in [`score_components`] never materialize it.
pub fn k_matrix(mu0: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_mu(mu0)?;
    let w = mu0.map(|m| m * (1.0 - m));
    let n = mu0.len();
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { k_diag(mu0[i]) } else { 2.0 * w[i] * w[j] }))
}

fn check_mu(mu0: &DVector<f64>) -> Result<()> {
    match mu0.iter().position(|&m| !(m > 0.0 && m < 1.0)) {
        Some(i) => Err(Error::InvalidArgument(format!("fitted mean {} at row {i} is outside (0,1)", mu0[i]))),
        None => Ok(()),
    }
}

/// `1' (ZZ' o K o ZZ') 1` in O(n k^2).
///
/// Splitting K into its diagonal and the rank-one off-diagonal part
/// `2 w w'` gives `sum_i M_ii^2 (k_ii - 2 w_i^2) + 2 ||Z' W Z||_F^2` with
/// `M = ZZ'`.
pub fn kernel_variance(z: &DMatrix<f64>, mu0: &DVector<f64>) -> f64 {
    let n = z.nrows();
    let mut diag_part = 0.0;
    let mut zw = z.clone();
    for i in 0..n {
        let m = mu0[i];
        let w = m * (1.0 - m);
        let mii = z.row(i).norm_squared();
        diag_part += mii * mii * (k_diag(m) - 2.0 * w * w);
        zw.row_mut(i).scale_mut(w);
    }
    let ztwz = z.transpose() * zw;
    diag_part + 2.0 * ztwz.norm_squared()
}

pub fn score_components(d: &Dataset, c: &InteractionMatrix, nf: &NullFit) -> Result<ScoreComponents> {
    nf.require_converged()?;
    check_mu(&nf.mu0)?;
    if nf.mu0.len() != d.n() {
        return Err(Error::Dimension("null fit and dataset disagree on n".into()));
    }
    let r = nf.residuals(d.y());
    let u_tau_s = (d.s().transpose() * &r).norm_squared();
    let u_beta_g = d.g().dot(&r);
    let u_tau_i = (c.c.transpose() * &r).norm_squared();
    let g_col = DMatrix::from_column_slice(d.n(), 1, d.g().as_slice());
    Ok(ScoreComponents {
        u_tau_s,
        u_beta_g,
        u_tau_i,
        i_tau_s: kernel_variance(d.s(), &nf.mu0),
        i_g: kernel_variance(&g_col, &nf.mu0),
        i_tau_i: kernel_variance(&c.c, &nf.mu0),
    })
}

pub fn q_statistic(sc: &ScoreComponents, w: &Weights, v: Variant, n: usize) -> Result<f64> {
    if w.mode == Weighting::Weighted && !(sc.i_tau_s > 0.0) {
        return Err(Error::UndefinedWeights("I_tauS is zero".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let total: f64 = v
        .terms()
        .iter()
        .map(|t| match t {
            Term::Snp => w.a1 * sc.u_tau_s,
            Term::Expression => w.a2 * sc.u_beta_g * sc.u_beta_g,
            Term::Interaction => w.a3 * sc.u_tau_i,
        })
        .sum();
    Ok(total / n as f64)
}

/// The kernel design `V` for a variant: the term blocks scaled by the
/// square roots of their weights.
pub fn kernel_columns(d: &Dataset, c: &InteractionMatrix, w: &Weights, v: Variant) -> DMatrix<f64> {
    let n = d.n();
    let width = v.kernel_width(d.p());
    let mut out = DMatrix::zeros(n, width);
    let mut at = 0;
    for &term in v.terms() {
        let scale = w.of(term).sqrt();
        match term {
            Term::Snp => {
                out.view_mut((0, at), (n, d.p())).copy_from(&(d.s() * scale));
                at += d.p();
            }
            Term::Expression => {
                out.column_mut(at).copy_from(&(d.g() * scale));
                at += 1;
            }
            Term::Interaction => {
                out.view_mut((0, at), (n, d.p())).copy_from(&(&c.c * scale));
                at += d.p();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{fit_null_logistic, FitOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = DMatrix::from_fn(n, p, |_, _| f64::from(rng.random_range(0u8..3)));
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 1.2);
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y = DVector::from_fn(n, |i, _| f64::from(i % 2 == 0));
        Dataset::new(y, s, g, x).unwrap()
    }

    fn fitted(d: &Dataset) -> (InteractionMatrix, NullFit) {
        let nf = fit_null_logistic(d, None, &FitOptions::default()).unwrap();
        (d.interaction_matrix(), nf)
    }

    #[test]
    fn k_entries_at_half() {
        assert_eq!(k_diag(0.5), 0.0);
        let k = k_matrix(&DVector::from_vec(vec![0.5, 0.5])).unwrap();
        assert_eq!(k[(0, 1)], 0.125);
        assert_eq!(k[(0, 0)], 0.0);
    }

    #[test]
    fn k_matrix_matches_formula_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = DVector::from_fn(7, |_, _| rng.random_range(0.05..0.95));
        let k = k_matrix(&mu).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let (a, b) = (mu[i], mu[j]);
                let expect = if i == j {
                    -4.0 * a.powi(4) + 8.0 * a.powi(3) - 5.0 * a * a + a
                } else {
                    2.0 * a * (1.0 - a) * b * (1.0 - b)
                };
                assert!((k[(i, j)] - expect).abs() < 1e-15);
                assert_eq!(k[(i, j)], k[(j, i)]);
                if i != j {
                    assert!(k[(i, j)] >= 0.0);
                }
            }
        }
        assert!(k_matrix(&DVector::from_vec(vec![0.0, 0.5])).is_err());
    }

    #[test]
    fn variance_terms_match_dense_oracle() {
        let d = random_dataset(30, 4, 9);
        let (c, nf) = fitted(&d);
        let sc = score_components(&d, &c, &nf).unwrap();
        let k = k_matrix(&nf.mu0).unwrap();
        let dense = |z: &DMatrix<f64>| {
            let m = z * z.transpose();
            let mut total = 0.0;
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    total += m[(i, j)] * k[(i, j)] * m[(i, j)];
                }
            }
            total
        };
        let g = DMatrix::from_column_slice(d.n(), 1, d.g().as_slice());
        for (fast, slow) in [(sc.i_tau_s, dense(d.s())), (sc.i_g, dense(&g)), (sc.i_tau_i, dense(&c.c))] {
            assert!((fast - slow).abs() <= 1e-10 * slow.abs(), "{fast} vs {slow}");
        }
    }

    #[test]
    fn zero_residuals_give_zero_scores() {
        let d = random_dataset(20, 3, 1);
        let c = d.interaction_matrix();
        let mut nf = fit_null_logistic(&d, None, &FitOptions::default()).unwrap();
        // Pretend the fit is perfect by evaluating the scores at y itself,
        // pulled just inside (0,1).
        nf.mu0 = d.y().map(|v| if v == 1.0 { 1.0 - f64::EPSILON } else { f64::EPSILON });
        let sc = score_components(&d, &c, &nf).unwrap();
        assert!(sc.u_tau_s < 1e-20 && sc.u_beta_g.abs() < 1e-10 && sc.u_tau_i < 1e-20);
        for v in [Variant::S, Variant::SG, Variant::SGC, Variant::DE, Variant::IE] {
            let q = q_statistic(&sc, &Weights::unweighted(), v, d.n()).unwrap();
            assert!(q.abs() < 1e-20);
        }
    }

    #[test]
    fn all_ones_snp_has_zero_score_under_intercept_null() {
        let mut d = random_dataset(20, 1, 2);
        d = Dataset::without_covariates(d.y().clone(), DMatrix::from_element(20, 1, 1.0), d.g().clone()).unwrap();
        let (c, nf) = fitted(&d);
        let sc = score_components(&d, &c, &nf).unwrap();
        assert!(sc.u_tau_s < 1e-20);
    }

    #[test]
    fn per_snp_factorization() {
        let d = random_dataset(20, 5, 3);
        let (c, nf) = fitted(&d);
        let sc = score_components(&d, &c, &nf).unwrap();
        let r = nf.residuals(d.y());
        let per_snp: f64 = (0..d.p())
            .map(|j| {
                let mut dot = 0.0;
                for i in 0..d.n() {
                    dot += d.s()[(i, j)] * r[i];
                }
                dot * dot
            })
            .sum();
        assert!((sc.u_tau_s - per_snp).abs() <= 1e-12 * per_snp.max(1.0));
    }

    #[test]
    fn q_arithmetic() {
        let sc = ScoreComponents { u_tau_s: 8.0, u_beta_g: 0.0, u_tau_i: 0.0, i_tau_s: 1.0, i_g: 1.0, i_tau_i: 1.0 };
        let w = Weights { a1: 1.0, a2: 1.0, a3: 1.0, mode: Weighting::Weighted };
        assert_eq!(q_statistic(&sc, &w, Variant::S, 4).unwrap(), 2.0);
        let degenerate = ScoreComponents { i_tau_s: 0.0, ..sc };
        assert!(matches!(q_statistic(&degenerate, &w, Variant::S, 4), Err(Error::UndefinedWeights(_))));
        assert!(Weights::weighted(&degenerate).is_err());
    }

    #[test]
    fn kernel_form_equals_score_form() {
        for seed in 0..5 {
            let d = random_dataset(40, 4, 100 + seed);
            let (c, nf) = fitted(&d);
            let sc = score_components(&d, &c, &nf).unwrap();
            let r = nf.residuals(d.y());
            for mode in [Weighting::Weighted, Weighting::Unweighted] {
                let w = Weights::compute(&sc, mode).unwrap();
                for v in [Variant::S, Variant::SG, Variant::SGC, Variant::DE, Variant::IE] {
                    let q = q_statistic(&sc, &w, v, d.n()).unwrap();
                    let vmat = kernel_columns(&d, &c, &w, v);
                    let kernel = (vmat.transpose() * &r).norm_squared();
                    assert!((d.n() as f64 * q - kernel).abs() <= 1e-10 * kernel.max(1e-300));
                }
            }
        }
    }

    #[test]
    fn weighted_sg_invariant_to_expression_scale() {
        let d = random_dataset(50, 3, 77);
        let scaled = Dataset::new(d.y().clone(), d.s().clone(), d.g() * -3.7, d.x().clone()).unwrap();
        let q_of = |d: &Dataset, mode| {
            let (c, nf) = fitted(d);
            let sc = score_components(d, &c, &nf).unwrap();
            let w = Weights::compute(&sc, mode).unwrap();
            (sc, q_statistic(&sc, &w, Variant::SG, d.n()).unwrap())
        };
        let (sc0, qw0) = q_of(&d, Weighting::Weighted);
        let (sc1, qw1) = q_of(&scaled, Weighting::Weighted);
        assert!((qw0 - qw1).abs() <= 1e-9 * qw0);
        assert!((sc1.i_g / sc0.i_g - 3.7f64.powi(4)).abs() < 1e-9 * 3.7f64.powi(4));
        let (_, qu0) = q_of(&d, Weighting::Unweighted);
        let (_, qu1) = q_of(&scaled, Weighting::Unweighted);
        assert!((qu0 - qu1).abs() > 1e-6 * qu0);
    }

    #[test]
    fn sgc_dominates_subsums() {
        let d = random_dataset(60, 3, 5);
        let (c, nf) = fitted(&d);
        let sc = score_components(&d, &c, &nf).unwrap();
        let w = Weights::weighted(&sc).unwrap();
        let q = |v| q_statistic(&sc, &w, v, d.n()).unwrap();
        assert!(q(Variant::SGC) >= q(Variant::SG));
        assert!(q(Variant::SG) >= q(Variant::S));
        assert!(q(Variant::SGC) >= q(Variant::DE));
        assert!(q(Variant::SGC) >= q(Variant::IE));
    }

    #[test]
    fn constant_expression() {
        let d = random_dataset(30, 2, 6);
        let d = Dataset::new(d.y().clone(), d.s().clone(), DVector::from_element(30, 2.5), d.x().clone()).unwrap();
        let (c, nf) = fitted(&d);
        let sc = score_components(&d, &c, &nf).unwrap();
        // G is collinear with the intercept, so its score vanishes.
        assert!(sc.u_beta_g.abs() < 1e-8);
        let q = q_statistic(&sc, &Weights::unweighted(), Variant::SG, d.n()).unwrap();
        let qs = q_statistic(&sc, &Weights::unweighted(), Variant::S, d.n()).unwrap();
        assert!((q - qs).abs() < 1e-12);
    }
}
