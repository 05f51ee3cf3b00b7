//! Single-variant tests, the shared-noise min-p omnibus test, and the
//! direct- and indirect-effect tests.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::datamodel::{Dataset, InteractionMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::glm::{fit_null_logistic, FitOptions, NullFit};
use crate::nulldist::{
    pvalue_davies, pvalue_perturbation, pvalue_satterthwaite, shared_perturbation_draws, spectrum, Engine, Noise,
    ProjectedKernel, Spectrum, DEFAULT_DAVIES_ACCURACY, DEFAULT_EIGEN_REL_TOL, DEFAULT_PERTURBATIONS,
};
use crate::vctest::{q_statistic, score_components, ScoreComponents, Variant, Weighting, Weights};

/// Outcome of one statistic under one weighting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestResult {
    pub variant: Variant,
    pub weighting: Weighting,
    pub statistic: f64,
    pub weights: Weights,
    pub p_satterthwaite: Option<f64>,
    pub p_davies: Option<f64>,
    pub davies_fallback: bool,
    pub p_perturbation: Option<f64>,
    pub perturbations: Option<usize>,
    pub spectrum_mean: f64,
    pub spectrum_variance: f64,
    pub lambdas: Vec<f64>,
}

impl TestResult {
    pub fn pvalue(&self, engine: Engine) -> Option<f64> {
        match engine {
            Engine::Satterthwaite => self.p_satterthwaite,
            Engine::Davies => self.p_davies,
            Engine::Perturbation => self.p_perturbation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmnibusResult {
    pub p_s: f64,
    pub p_sg: f64,
    pub p_sgc: f64,
    pub p_min_observed: f64,
    pub p_omnibus: f64,
    pub b: usize,
    pub per_variant: Vec<TestResult>,
}

#[derive(Clone, Debug)]
pub struct TestOptions {
    pub engines: Vec<Engine>,
    pub b: usize,
    pub seed: u64,
    pub exec: Execution,
    pub davies_accuracy: f64,
    pub eigen_rel_tol: f64,
    pub fit: FitOptions,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            engines: Engine::ALL.to_vec(),
            b: DEFAULT_PERTURBATIONS,
            seed: 0,
            exec: Execution::default(),
            davies_accuracy: DEFAULT_DAVIES_ACCURACY,
            eigen_rel_tol: DEFAULT_EIGEN_REL_TOL,
            fit: FitOptions::default(),
        }
    }
}

impl TestOptions {
    fn wants(&self, e: Engine) -> bool {
        self.engines.contains(&e)
    }
}

/// Everything about one variant that does not depend on the noise.
#[derive(Clone, Debug)]
pub struct PreparedTest {
    pub variant: Variant,
    pub weights: Weights,
    pub statistic: f64,
    pub kernel: ProjectedKernel,
    pub spectrum: Spectrum,
}

impl PreparedTest {
    pub fn new(
        d: &Dataset,
        c: &InteractionMatrix,
        nf: &NullFit,
        sc: &ScoreComponents,
        weights: Weights,
        variant: Variant,
        rel_tol: f64,
    ) -> Result<Self> {
        let statistic = q_statistic(sc, &weights, variant, d.n())?;
        let kernel = ProjectedKernel::for_variant(d, c, nf, &weights, variant)?;
        let spectrum = spectrum(&kernel, rel_tol)?;
        Ok(PreparedTest { variant, weights, statistic, kernel, spectrum })
    }

    /// Analytic p-values for the requested engines plus, when `draws` is
    /// given, the perturbation p-value.
    pub fn finish(&self, opts: &TestOptions, draws: Option<&[f64]>) -> Result<TestResult> {
        let p_satterthwaite =
            if opts.wants(Engine::Satterthwaite) { Some(pvalue_satterthwaite(&self.spectrum, self.statistic)?) } else { None };
        let (p_davies, davies_fallback) = if opts.wants(Engine::Davies) {
            let r = pvalue_davies(&self.spectrum, self.statistic, opts.davies_accuracy)?;
            (Some(r.p), r.fell_back)
        } else {
            (None, false)
        };
        let p_perturbation = draws.map(|d| pvalue_perturbation(d, self.statistic));
        Ok(TestResult {
            variant: self.variant,
            weighting: self.weights.mode,
            statistic: self.statistic,
            weights: self.weights,
            p_satterthwaite,
            p_davies,
            davies_fallback,
            p_perturbation,
            perturbations: draws.map(<[f64]>::len),
            spectrum_mean: self.spectrum.mean(),
            spectrum_variance: self.spectrum.variance(),
            lambdas: self.spectrum.lambdas.clone(),
        })
    }
}

fn run_prepared(tests: &[PreparedTest], d: &Dataset, opts: &TestOptions) -> Result<Vec<TestResult>> {
    let draws = if opts.wants(Engine::Perturbation) {
        let kernels: Vec<&ProjectedKernel> = tests.iter().map(|t| &t.kernel).collect();
        Some(shared_perturbation_draws(&kernels, &Noise::seeded(opts.seed, opts.b, d.n()), opts.exec)?)
    } else {
        None
    };
    tests
        .iter()
        .enumerate()
        .map(|(k, t)| t.finish(opts, draws.as_ref().map(|dr| dr[k].as_slice())))
        .collect()
}

/// Tests the total effect with `Q_S`, `Q_SG`, or `Q_SGC`.
pub fn total_effect_test(d: &Dataset, variant: Variant, weighting: Weighting, opts: &TestOptions) -> Result<TestResult> {
    if !Variant::TOTAL.contains(&variant) {
        return Err(Error::InvalidArgument(format!(
            "{} is not a total-effect variant; use direct_effect_test or indirect_effect_test",
            variant.name()
        )));
    }
    let c = d.interaction_matrix();
    let nf = fit_null_logistic(d, None, &opts.fit)?;
    nf.require_converged()?;
    let sc = score_components(d, &c, &nf)?;
    let w = Weights::compute(&sc, weighting)?;
    let prep = PreparedTest::new(d, &c, &nf, &sc, w, variant, opts.eigen_rel_tol)?;
    Ok(run_prepared(&[prep], d, opts)?.remove(0))
}

fn restricted_test(d: &Dataset, variant: Variant, extra: DMatrix<f64>, weighting: Weighting, opts: &TestOptions) -> Result<TestResult> {
    let fit = FitOptions { ridge_fallback: true, ..opts.fit };
    let nf = fit_null_logistic(d, Some(&extra), &fit)?;
    nf.require_converged()?;
    let c = d.interaction_matrix();
    let sc = score_components(d, &c, &nf)?;
    let w = Weights::compute(&sc, weighting)?;
    let prep = PreparedTest::new(d, &c, &nf, &sc, w, variant, opts.eigen_rel_tol)?;
    Ok(run_prepared(&[prep], d, opts)?.remove(0))
}

/// `Q_DE = (a1 U_tauS + a3 U_tauI) / n` against the null logistic model on
/// `[X | G]`; tests `beta_S = 0, gamma = 0`.
pub fn direct_effect_test(d: &Dataset, weighting: Weighting, opts: &TestOptions) -> Result<TestResult> {
    let g = DMatrix::from_column_slice(d.n(), 1, d.g().as_slice());
    restricted_test(d, Variant::DE, g, weighting, opts)
}

/// `Q_IE = (a2 U_betaG^2 + a3 U_tauI) / n` against the null logistic model
/// on `[X | S]`, ridge-fitted when the SNPs are collinear; tests
/// `beta_G = 0, gamma = 0`.
pub fn indirect_effect_test(d: &Dataset, weighting: Weighting, opts: &TestOptions) -> Result<TestResult> {
    restricted_test(d, Variant::IE, d.s().clone(), weighting, opts)
}

/// Survival of each draw within its own sample: `#{b' : x_b' >= x_b} / B`.
pub fn self_survival(draws: &[f64]) -> Vec<f64> {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = draws.len() as f64;
    draws
        .iter()
        .map(|&x| {
            let below = sorted.partition_point(|&v| v < x);
            (sorted.len() - below) as f64 / b
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinP {
    pub observed: Vec<f64>,
    pub p_min_observed: f64,
    pub p_omnibus: f64,
}

/// Min-p combination: `observed[v]` is the statistic of variant `v` and
/// `draws[v]` its perturbation draws, all generated from the same noise
/// rows.
pub fn min_p_combination(observed: &[f64], draws: &[Vec<f64>]) -> Result<MinP> {
    let b = draws.first().map_or(0, Vec::len);
    if b == 0 || observed.len() != draws.len() || draws.iter().any(|d| d.len() != b) {
        return Err(Error::InvalidArgument("min-p needs equal-length draws for every statistic".into()));
    }
    let p_obs: Vec<f64> = observed.iter().zip(draws).map(|(&q, d)| pvalue_perturbation(d, q)).collect();
    let p_min_observed = p_obs.iter().copied().fold(f64::INFINITY, f64::min);
    let survivals: Vec<Vec<f64>> = draws.iter().map(|d| self_survival(d)).collect();
    let hits = (0..b)
        .filter(|&r| survivals.iter().map(|s| s[r]).fold(f64::INFINITY, f64::min) <= p_min_observed)
        .count();
    Ok(MinP { observed: p_obs, p_min_observed, p_omnibus: (1 + hits) as f64 / (b + 1) as f64 })
}

#[derive(Clone, Debug)]
pub struct OmnibusOptions {
    pub b: usize,
    pub seed: u64,
    /// Weighting of `Q_SG` and `Q_SGC` (`Q_S` is the same either way).
    pub weighting: Weighting,
    pub exec: Execution,
    pub fit: FitOptions,
}

impl Default for OmnibusOptions {
    fn default() -> Self {
        OmnibusOptions {
            b: DEFAULT_PERTURBATIONS,
            seed: 0,
            weighting: Weighting::Weighted,
            exec: Execution::default(),
            fit: FitOptions::default(),
        }
    }
}

pub fn omnibus_test(d: &Dataset, b: usize, seed: u64) -> Result<OmnibusResult> {
    omnibus_test_with(d, &OmnibusOptions { b, seed, ..Default::default() })
}

pub fn omnibus_test_with(d: &Dataset, opts: &OmnibusOptions) -> Result<OmnibusResult> {
    let c = d.interaction_matrix();
    let nf = fit_null_logistic(d, None, &opts.fit)?;
    nf.require_converged()?;
    let sc = score_components(d, &c, &nf)?;
    let w = Weights::compute(&sc, opts.weighting)?;
    let prepared = Variant::TOTAL
        .iter()
        .map(|&v| PreparedTest::new(d, &c, &nf, &sc, w, v, DEFAULT_EIGEN_REL_TOL))
        .collect::<Result<Vec<_>>>()?;
    let test_opts = TestOptions { b: opts.b, seed: opts.seed, exec: opts.exec, ..Default::default() };
    omnibus_from_prepared(&prepared, d.n(), &test_opts)
}

fn omnibus_from_prepared(prepared: &[PreparedTest], n: usize, opts: &TestOptions) -> Result<OmnibusResult> {
    let kernels: Vec<&ProjectedKernel> = prepared.iter().map(|t| &t.kernel).collect();
    let draws = shared_perturbation_draws(&kernels, &Noise::seeded(opts.seed, opts.b, n), opts.exec)?;
    let observed: Vec<f64> = prepared.iter().map(|t| t.statistic).collect();
    let minp = min_p_combination(&observed, &draws)?;
    let per_variant = prepared
        .iter()
        .zip(&draws)
        .map(|(t, dr)| t.finish(opts, Some(dr)))
        .collect::<Result<Vec<_>>>()?;
    Ok(OmnibusResult {
        p_s: minp.observed[0],
        p_sg: minp.observed[1],
        p_sgc: minp.observed[2],
        p_min_observed: minp.p_min_observed,
        p_omnibus: minp.p_omnibus,
        b: opts.b,
        per_variant,
    })
}

/// Identifies one statistic of a [`Panel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct PanelKey {
    pub variant: Variant,
    pub weighting: Weighting,
}

/// Every total-effect statistic (both weightings), the omnibus test, and
/// optionally the direct/indirect-effect tests, all from one null fit and
/// one shared noise matrix.
#[derive(Clone, Debug)]
pub struct Panel {
    pub results: Vec<TestResult>,
    pub omnibus: OmnibusResult,
}

impl Panel {
    pub fn get(&self, variant: Variant, weighting: Weighting) -> Option<&TestResult> {
        self.results.iter().find(|r| r.variant == variant && r.weighting == weighting)
    }
}

#[derive(Clone, Debug)]
pub struct PanelOptions {
    pub test: TestOptions,
    pub include_effect_tests: bool,
}

pub fn test_panel(d: &Dataset, opts: &PanelOptions) -> Result<Panel> {
    let topts = &opts.test;
    let c = d.interaction_matrix();
    let nf = fit_null_logistic(d, None, &topts.fit)?;
    nf.require_converged()?;
    let sc = score_components(d, &c, &nf)?;
    let weighted = Weights::weighted(&sc)?;
    let unweighted = Weights::unweighted();
    let tol = topts.eigen_rel_tol;

    // Q_S does not depend on the weighting (a1 = 1 in both modes).
    let mut prepared = vec![
        PreparedTest::new(d, &c, &nf, &sc, weighted, Variant::S, tol)?,
        PreparedTest::new(d, &c, &nf, &sc, weighted, Variant::SG, tol)?,
        PreparedTest::new(d, &c, &nf, &sc, weighted, Variant::SGC, tol)?,
        PreparedTest::new(d, &c, &nf, &sc, unweighted, Variant::SG, tol)?,
        PreparedTest::new(d, &c, &nf, &sc, unweighted, Variant::SGC, tol)?,
    ];
    if opts.include_effect_tests {
        let fit = FitOptions { ridge_fallback: true, ..topts.fit };
        let g = DMatrix::from_column_slice(d.n(), 1, d.g().as_slice());
        for (variant, extra) in [(Variant::DE, g), (Variant::IE, d.s().clone())] {
            let nf_r = fit_null_logistic(d, Some(&extra), &fit)?;
            nf_r.require_converged()?;
            let sc_r = score_components(d, &c, &nf_r)?;
            let w_r = Weights::weighted(&sc_r)?;
            prepared.push(PreparedTest::new(d, &c, &nf_r, &sc_r, w_r, variant, tol)?);
        }
    }

    let kernels: Vec<&ProjectedKernel> = prepared.iter().map(|t| &t.kernel).collect();
    let draws = shared_perturbation_draws(&kernels, &Noise::seeded(topts.seed, topts.b, d.n()), topts.exec)?;
    let results = prepared
        .iter()
        .zip(&draws)
        .map(|(t, dr)| t.finish(topts, Some(dr)))
        .collect::<Result<Vec<_>>>()?;

    let observed: Vec<f64> = prepared[..3].iter().map(|t| t.statistic).collect();
    let minp = min_p_combination(&observed, &draws[..3])?;
    let omnibus = OmnibusResult {
        p_s: minp.observed[0],
        p_sg: minp.observed[1],
        p_sgc: minp.observed[2],
        p_min_observed: minp.p_min_observed,
        p_omnibus: minp.p_omnibus,
        b: topts.b,
        per_variant: results[..3].to_vec(),
    };
    Ok(Panel { results, omnibus })
}
