//! Case-control simulation: correlated genotypes, an eQTL-driven expression,
//! and a binary outcome, plus size/power experiments over many replicates.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::exec::{derive_seed, map_indices, Execution};
use crate::glm::expit;
use crate::nulldist::Engine;
use crate::omnibus::{test_panel, Panel, PanelOptions, TestOptions};
use crate::vctest::{Variant, Weighting};

/// The bundled 120 x 99 haplotype pool.
pub const BUNDLED_POOL: &str = include_str!("../data/haplotype_pool.txt");
/// Seed that [`synthetic_pool`] uses to produce [`BUNDLED_POOL`].
pub const BUNDLED_POOL_SEED: u64 = 20_120_901;
/// The ten genotyped loci of the bundled pool.
pub const DEFAULT_TYPED: [usize; 10] = [38, 40, 42, 44, 46, 49, 51, 53, 55, 57];
/// Default causal locus of the bundled pool (one of the typed loci).
pub const DEFAULT_CAUSAL: usize = 49;

const POOL_BLOCKS: [usize; 9] = [12, 9, 15, 8, 11, 14, 10, 9, 11];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HaplotypePool {
    h: usize,
    l: usize,
    bits: Vec<u8>,
}

impl HaplotypePool {
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let h = rows.len();
        if h == 0 {
            return Err(Error::Simulation("haplotype pool is empty".into()));
        }
        let l = rows[0].len();
        if l == 0 || rows.iter().any(|r| r.len() != l) {
            return Err(Error::Simulation("haplotype rows must share a nonzero length".into()));
        }
        if rows.iter().flatten().any(|&b| b > 1) {
            return Err(Error::Simulation("haplotype entries must be 0 or 1".into()));
        }
        Ok(HaplotypePool { h, l, bits: rows.concat() })
    }

    /// Parses the `H L` header followed by `H` rows of `L` bits.
    pub fn parse(text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse { path: "<haplotype pool>".into(), line, message };
        let mut lines = text.lines().enumerate().filter(|(_, s)| !s.trim().is_empty());
        let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(hl + 1, format!("bad header token {t:?}"))))
            .collect::<Result<_>>()?;
        let [h, l] = dims[..] else {
            return Err(parse_err(hl + 1, "header must be `H L`".into()));
        };
        let mut rows = Vec::with_capacity(h);
        for (i, line) in lines {
            let row: Vec<u8> = line
                .split_whitespace()
                .map(|t| match t {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(parse_err(i + 1, format!("bad bit {t:?}"))),
                })
                .collect::<Result<_>>()?;
            if row.len() != l {
                return Err(parse_err(i + 1, format!("expected {l} bits, found {}", row.len())));
            }
            rows.push(row);
        }
        if rows.len() != h {
            return Err(parse_err(0, format!("expected {h} haplotypes, found {}", rows.len())));
        }
        Self::from_rows(&rows)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_POOL).expect("bundled pool is well formed")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.h, self.l);
        for r in 0..self.h {
            let row: Vec<&str> = self.row(r).iter().map(|&b| if b == 1 { "1" } else { "0" }).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn haplotypes(&self) -> usize {
        self.h
    }

    pub fn loci(&self) -> usize {
        self.l
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.bits[r * self.l..(r + 1) * self.l]
    }

    pub fn allele_frequencies(&self) -> Vec<f64> {
        (0..self.l).map(|j| (0..self.h).map(|r| f64::from(self.row(r)[j])).sum::<f64>() / self.h as f64).collect()
    }
}

/// Block-structured haplotypes: each block copies one of a few founder
/// haplotypes with 2% mutation, the founder choice is sticky across block
/// boundaries, and every locus is recoded so that allele 1 is the minor one.
pub fn synthetic_pool(seed: u64, h: usize) -> HaplotypePool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l: usize = POOL_BLOCKS.iter().sum();
    let founders: Vec<Vec<Vec<u8>>> = POOL_BLOCKS
        .iter()
        .map(|&len| {
            let k = rng.random_range(3..=6);
            (0..k).map(|_| (0..len).map(|_| u8::from(rng.random_bool(0.5))).collect()).collect()
        })
        .collect();
    let mut rows = vec![Vec::with_capacity(l); h];
    for row in rows.iter_mut() {
        let mut prev = 0usize;
        for (b, block) in founders.iter().enumerate() {
            let f = if b > 0 && rng.random_bool(0.35) { prev % block.len() } else { rng.random_range(0..block.len()) };
            prev = f;
            row.extend(block[f].iter().map(|&bit| if rng.random_bool(0.02) { 1 - bit } else { bit }));
        }
    }
    for j in 0..l {
        let ones = rows.iter().filter(|r| r[j] == 1).count();
        if 2 * ones > h {
            rows.iter_mut().for_each(|r| r[j] = 1 - r[j]);
        }
        if ones == 0 || ones == h {
            rows[j % h][j] = 1;
        }
    }
    HaplotypePool::from_rows(&rows).expect("generated rows are valid")
}

#[derive(Clone, Debug, PartialEq)]
pub enum LdKind {
    HaplotypePool(HaplotypePool),
    LatentGaussian { rho: f64, mafs: Vec<f64> },
}

/// Where genotypes come from, which loci are genotyped, and which are
/// causal.
#[derive(Clone, Debug, PartialEq)]
pub struct LdModel {
    pub kind: LdKind,
    pub typed: Vec<usize>,
    pub causal: Vec<usize>,
    /// Per-causal-locus weights in the causal score; all ones when absent.
    pub causal_weights: Option<Vec<f64>>,
}

impl LdModel {
    pub fn bundled() -> Self {
        LdModel {
            kind: LdKind::HaplotypePool(HaplotypePool::bundled()),
            typed: DEFAULT_TYPED.to_vec(),
            causal: vec![DEFAULT_CAUSAL],
            causal_weights: None,
        }
    }

    pub fn loci(&self) -> usize {
        match &self.kind {
            LdKind::HaplotypePool(p) => p.loci(),
            LdKind::LatentGaussian { mafs, .. } => mafs.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.loci();
        if let LdKind::LatentGaussian { rho, mafs } = &self.kind {
            if !(rho.abs() < 1.0) {
                return Err(Error::Simulation(format!("AR(1) correlation {rho} outside (-1, 1)")));
            }
            if mafs.is_empty() {
                return Err(Error::Simulation("no loci".into()));
            }
            if let Some(m) = mafs.iter().find(|m| !(**m > 0.0 && **m <= 0.5)) {
                return Err(Error::Simulation(format!("minor allele frequency {m} outside (0, 0.5]")));
            }
        }
        if self.typed.is_empty() || self.causal.is_empty() {
            return Err(Error::Simulation("typed and causal loci must be non-empty".into()));
        }
        if let Some(j) = self.typed.iter().chain(&self.causal).find(|&&j| j >= l) {
            return Err(Error::Simulation(format!("locus index {j} out of range for {l} loci")));
        }
        if let Some(w) = &self.causal_weights {
            if w.len() != self.causal.len() || w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Simulation("causal weights must be finite, one per causal locus".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Link {
    Logit,
    Probit,
    /// `logit P = -shift^exponent + (shift + eta)^exponent`.
    PowerLink { exponent: f64, shift: f64 },
}

impl Link {
    pub const fn power_default() -> Self {
        Link::PowerLink { exponent: 0.9, shift: 100.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpressionNoise {
    Normal,
    NormalPlusUniform { half_width: f64 },
}

fn default_intercept() -> f64 {
    -0.2
}
fn default_sigma2() -> f64 {
    1.44
}
fn default_link() -> Link {
    Link::Logit
}
fn default_noise() -> ExpressionNoise {
    ExpressionNoise::Normal
}

/// Expression `G = delta * S_c + e` and outcome
/// `link(P(Y = 1)) = intercept + beta_s S_c + beta_g G + gamma G S_c`,
/// where `S_c` is the (weighted) causal dosage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerativeModel {
    #[serde(default)]
    pub beta_s: f64,
    #[serde(default)]
    pub beta_g: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_intercept")]
    pub intercept_y: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2_g: f64,
    #[serde(default = "default_link")]
    pub link: Link,
    #[serde(default = "default_noise")]
    pub expression_noise: ExpressionNoise,
}

impl Default for GenerativeModel {
    fn default() -> Self {
        GenerativeModel {
            beta_s: 0.0,
            beta_g: 0.0,
            gamma: 0.0,
            delta: 0.0,
            intercept_y: default_intercept(),
            sigma2_g: default_sigma2(),
            link: Link::Logit,
            expression_noise: ExpressionNoise::Normal,
        }
    }
}

impl GenerativeModel {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.beta_s, self.beta_g, self.gamma, self.delta, self.intercept_y, self.sigma2_g];
        if vals.iter().any(|v| !v.is_finite()) || self.sigma2_g < 0.0 {
            return Err(Error::Simulation("generative parameters must be finite with sigma2_g >= 0".into()));
        }
        if let Link::PowerLink { exponent, shift } = self.link {
            if !(exponent.is_finite() && exponent > 0.0 && shift.is_finite() && shift > 0.0) {
                return Err(Error::Simulation("power link needs positive exponent and shift".into()));
            }
        }
        if let ExpressionNoise::NormalPlusUniform { half_width } = self.expression_noise {
            if !(half_width.is_finite() && half_width >= 0.0) {
                return Err(Error::Simulation("uniform half-width must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    /// Probability of disease given the causal dosage and expression.
    pub fn risk(&self, s_causal: f64, g: f64) -> Result<f64> {
        let eta = self.beta_s * s_causal + self.beta_g * g + self.gamma * g * s_causal;
        match self.link {
            Link::Logit => Ok(expit(self.intercept_y + eta)),
            Link::Probit => Ok(NormalDist::standard().cdf(self.intercept_y + eta)),
            Link::PowerLink { exponent, shift } => {
                let base = shift + eta;
                if base <= 0.0 {
                    return Err(Error::Simulation(format!("power link undefined: shift + eta = {base}")));
                }
                Ok(expit(base.powf(exponent) - shift.powf(exponent)))
            }
        }
    }
}

/// A simulated cohort over all loci.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub genotypes: DMatrix<f64>,
    pub g: DVector<f64>,
    pub y: DVector<f64>,
    pub typed: Vec<usize>,
}

impl Cohort {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn cases(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1.0).count()
    }
}

fn draw_genotypes(ld: &LdModel, n: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let l = ld.loci();
    let mut out = DMatrix::zeros(n, l);
    match &ld.kind {
        LdKind::HaplotypePool(pool) => {
            for i in 0..n {
                let a = pool.row(rng.random_range(0..pool.haplotypes()));
                let b = pool.row(rng.random_range(0..pool.haplotypes()));
                for j in 0..l {
                    out[(i, j)] = f64::from(a[j] + b[j]);
                }
            }
        }
        LdKind::LatentGaussian { rho, mafs } => {
            let std = NormalDist::standard();
            let cut: Vec<f64> = mafs.iter().map(|&m| std.inverse_cdf(m)).collect();
            let innov = (1.0 - rho * rho).sqrt();
            for i in 0..n {
                for _ in 0..2 {
                    let mut z: f64 = rng.sample(StandardNormal);
                    for j in 0..l {
                        if j > 0 {
                            z = rho * z + innov * rng.sample::<f64, _>(StandardNormal);
                        }
                        if z < cut[j] {
                            out[(i, j)] += 1.0;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn generate_cohort(ld: &LdModel, gm: &GenerativeModel, cohort_n: usize, seed: u64) -> Result<Cohort> {
    ld.validate()?;
    gm.validate()?;
    if cohort_n == 0 {
        return Err(Error::Simulation("cohort size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genotypes = draw_genotypes(ld, cohort_n, &mut rng)?;
    let ones = vec![1.0; ld.causal.len()];
    let weights = ld.causal_weights.as_deref().unwrap_or(&ones);
    let noise = Normal::new(0.0, gm.sigma2_g.sqrt()).map_err(|e| Error::Simulation(e.to_string()))?;
    let mut g = DVector::zeros(cohort_n);
    let mut y = DVector::zeros(cohort_n);
    for i in 0..cohort_n {
        let sc: f64 = ld.causal.iter().zip(weights).map(|(&j, w)| w * genotypes[(i, j)]).sum();
        let mut e: f64 = rng.sample(noise);
        if let ExpressionNoise::NormalPlusUniform { half_width } = gm.expression_noise {
            if half_width > 0.0 {
                e += rng.random_range(-half_width..half_width);
            }
        }
        g[i] = gm.delta * sc + e;
        let p = gm.risk(sc, g[i])?;
        y[i] = f64::from(rng.random::<f64>() < p);
    }
    Ok(Cohort { genotypes, g, y, typed: ld.typed.clone() })
}

/// Draws cases and controls without replacement within class; cases come
/// first in the returned dataset. Only the typed loci are kept.
pub fn sample_case_control(cohort: &Cohort, n_cases: usize, n_controls: usize, seed: u64) -> Result<Dataset> {
    let case_idx: Vec<usize> = (0..cohort.n()).filter(|&i| cohort.y[i] == 1.0).collect();
    let ctrl_idx: Vec<usize> = (0..cohort.n()).filter(|&i| cohort.y[i] != 1.0).collect();
    if case_idx.len() < n_cases || ctrl_idx.len() < n_controls {
        return Err(Error::Simulation(format!(
            "requested {n_cases} cases and {n_controls} controls, cohort has {} and {}",
            case_idx.len(),
            ctrl_idx.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample_indices(&mut rng, case_idx.len(), n_cases).iter().map(|k| case_idx[k]).collect();
    picked.extend(sample_indices(&mut rng, ctrl_idx.len(), n_controls).iter().map(|k| ctrl_idx[k]));
    let n = picked.len();
    let s = DMatrix::from_fn(n, cohort.typed.len(), |r, c| cohort.genotypes[(picked[r], cohort.typed[c])]);
    let g = DVector::from_fn(n, |r, _| cohort.g[picked[r]]);
    let y = DVector::from_fn(n, |r, _| cohort.y[picked[r]]);
    Dataset::without_covariates(y, s, g)
}

/// One statistic reported by an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    S,
    SgWeighted,
    SgUnweighted,
    SgcWeighted,
    SgcUnweighted,
    Omnibus,
    De,
    Ie,
}

impl TestKind {
    pub const TABLE: [TestKind; 6] = [
        TestKind::S,
        TestKind::SgUnweighted,
        TestKind::SgWeighted,
        TestKind::SgcUnweighted,
        TestKind::SgcWeighted,
        TestKind::Omnibus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::S => "s",
            TestKind::SgWeighted => "sg_weighted",
            TestKind::SgUnweighted => "sg_unweighted",
            TestKind::SgcWeighted => "sgc_weighted",
            TestKind::SgcUnweighted => "sgc_unweighted",
            TestKind::Omnibus => "omnibus",
            TestKind::De => "de",
            TestKind::Ie => "ie",
        }
    }

    fn key(self) -> Option<(Variant, Weighting)> {
        match self {
            TestKind::S => Some((Variant::S, Weighting::Weighted)),
            TestKind::SgWeighted => Some((Variant::SG, Weighting::Weighted)),
            TestKind::SgUnweighted => Some((Variant::SG, Weighting::Unweighted)),
            TestKind::SgcWeighted => Some((Variant::SGC, Weighting::Weighted)),
            TestKind::SgcUnweighted => Some((Variant::SGC, Weighting::Unweighted)),
            TestKind::De => Some((Variant::DE, Weighting::Weighted)),
            TestKind::Ie => Some((Variant::IE, Weighting::Weighted)),
            TestKind::Omnibus => None,
        }
    }

    /// The omnibus test only has a perturbation p-value.
    pub fn p_value(self, panel: &Panel, engine: Engine) -> Option<f64> {
        match self.key() {
            None => (engine == Engine::Perturbation).then_some(panel.omnibus.p_omnibus),
            Some((v, w)) => panel.get(v, w).and_then(|r| r.pvalue(engine)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub model: GenerativeModel,
}

#[derive(Clone, Debug)]
pub struct ExperimentDesign {
    pub cohort_n: usize,
    pub n_cases: usize,
    pub n_controls: usize,
    pub replications: usize,
    pub alpha: f64,
    pub b: usize,
    pub seed: u64,
    pub tests: Vec<TestKind>,
    pub engines: Vec<Engine>,
    pub exec: Execution,
}

impl Default for ExperimentDesign {
    fn default() -> Self {
        ExperimentDesign {
            cohort_n: 1000,
            n_cases: 100,
            n_controls: 100,
            replications: 2000,
            alpha: 0.05,
            b: 500,
            seed: 0,
            tests: TestKind::TABLE.to_vec(),
            engines: vec![Engine::Perturbation],
            exec: Execution::default(),
        }
    }
}

impl ExperimentDesign {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 100 {
            return Err(Error::InvalidArgument(format!("need at least 100 replications, got {}", self.replications)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.tests.is_empty() || self.engines.is_empty() {
            return Err(Error::InvalidArgument("no tests or engines selected".into()));
        }
        if self.n_cases == 0 || self.n_controls == 0 || self.n_cases + self.n_controls > self.cohort_n {
            return Err(Error::InvalidArgument("case-control sizes do not fit in the cohort".into()));
        }
        Ok(())
    }
}

/// Seeds of replicate `rep` of scenario `scenario`: cohort, subsample,
/// perturbation noise.
pub fn replicate_seeds(seed: u64, scenario: usize, rep: usize) -> [u64; 3] {
    let base = derive_seed(seed, &[scenario as u64, rep as u64]);
    [derive_seed(base, &[0]), derive_seed(base, &[1]), derive_seed(base, &[2])]
}

/// Generates and tests one replicate.
pub fn run_replicate(ld: &LdModel, gm: &GenerativeModel, design: &ExperimentDesign, seeds: [u64; 3]) -> Result<Panel> {
    let cohort = generate_cohort(ld, gm, design.cohort_n, seeds[0])?;
    let d = sample_case_control(&cohort, design.n_cases, design.n_controls, seeds[1])?;
    let opts = PanelOptions {
        test: TestOptions {
            engines: design.engines.clone(),
            b: design.b,
            seed: seeds[2],
            exec: Execution::Sequential,
            ..Default::default()
        },
        include_effect_tests: design.tests.iter().any(|t| matches!(t, TestKind::De | TestKind::Ie)),
    };
    test_panel(&d, &opts)
}

/// Per-replicate p-values of every requested test and engine for one
/// scenario. Replicates run in parallel; output is in replicate order.
pub fn replicate_pvalues(
    ld: &LdModel,
    gm: &GenerativeModel,
    design: &ExperimentDesign,
    scenario_index: usize,
) -> Vec<Result<Vec<Vec<Option<f64>>>>> {
    map_indices(design.replications, design.exec, |rep| {
        let panel = run_replicate(ld, gm, design, replicate_seeds(design.seed, scenario_index, rep))?;
        Ok(design.tests.iter().map(|t| design.engines.iter().map(|&e| t.p_value(&panel, e)).collect()).collect())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub scenario: String,
    pub test: TestKind,
    pub engine: Engine,
    pub rejections: usize,
    pub valid: usize,
    pub rate: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioFailures {
    pub scenario: String,
    pub failures: usize,
    /// Error codes of failed replicates with their counts, sorted by code.
    pub codes: Vec<(String, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentTable {
    pub replications: usize,
    pub alpha: f64,
    pub b: usize,
    pub seed: u64,
    pub rows: Vec<RateRow>,
    pub failures: Vec<ScenarioFailures>,
}

impl ExperimentTable {
    pub fn rate(&self, scenario: &str, test: TestKind, engine: Engine) -> Option<f64> {
        self.rows.iter().find(|r| r.scenario == scenario && r.test == test && r.engine == engine).map(|r| r.rate)
    }
}

/// Rejection rates at `alpha` for every scenario, test and engine, with
/// binomial standard errors. Failed replicates are counted per scenario and
/// excluded from the rate denominators.
pub fn size_power_experiment(ld: &LdModel, scenarios: &[Scenario], design: &ExperimentDesign) -> Result<ExperimentTable> {
    design.validate()?;
    ld.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (si, sc) in scenarios.iter().enumerate() {
        sc.model.validate()?;
        let reps = replicate_pvalues(ld, &sc.model, design, si);
        let mut codes = std::collections::BTreeMap::<String, usize>::new();
        for r in &reps {
            if let Err(e) = r {
                *codes.entry(e.code().to_string()).or_default() += 1;
            }
        }
        let ok: Vec<&Vec<Vec<Option<f64>>>> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
        for (ti, &test) in design.tests.iter().enumerate() {
            for (ei, &engine) in design.engines.iter().enumerate() {
                let ps: Vec<f64> = ok.iter().filter_map(|r| r[ti][ei]).collect();
                if ps.is_empty() {
                    continue;
                }
                let rejections = ps.iter().filter(|&&p| p <= design.alpha).count();
                let rate = rejections as f64 / ps.len() as f64;
                rows.push(RateRow {
                    scenario: sc.name.clone(),
                    test,
                    engine,
                    rejections,
                    valid: ps.len(),
                    rate,
                    se: (rate * (1.0 - rate) / ps.len() as f64).sqrt(),
                });
            }
        }
        failures.push(ScenarioFailures {
            scenario: sc.name.clone(),
            failures: reps.len() - ok.len(),
            codes: codes.into_iter().collect(),
        });
    }
    Ok(ExperimentTable {
        replications: design.replications,
        alpha: design.alpha,
        b: design.b,
        seed: design.seed,
        rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Uniform};

    #[test]
    fn bundled_pool_matches_generator() {
        let generated = synthetic_pool(BUNDLED_POOL_SEED, 120);
        assert_eq!(generated.to_text(), BUNDLED_POOL);
        let pool = HaplotypePool::bundled();
        assert_eq!((pool.haplotypes(), pool.loci()), (120, 99));
        assert!(pool.allele_frequencies().iter().all(|&f| f > 0.0 && f <= 0.5));
    }

    #[test]
    fn pool_parse_errors() {
        assert!(HaplotypePool::parse("").is_err());
        assert!(HaplotypePool::parse("2 2\n0 1\n").is_err());
        assert!(HaplotypePool::parse("1 2\n0 2\n").is_err());
        assert!(HaplotypePool::parse("1 2\n0 1 1\n").is_err());
        let p = HaplotypePool::parse("2 3\n0 1 1\n1 0 0\n").unwrap();
        assert_eq!(HaplotypePool::parse(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn bundled_typed_loci_are_correlated_with_causal() {
        let pool = HaplotypePool::bundled();
        let col = |j: usize| (0..pool.haplotypes()).map(|r| f64::from(pool.row(r)[j])).collect::<Vec<_>>();
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        let c = col(DEFAULT_CAUSAL);
        let best = DEFAULT_TYPED
            .iter()
            .filter(|&&j| j != DEFAULT_CAUSAL)
            .map(|&j| corr(&c, &col(j)).abs())
            .fold(0.0, f64::max);
        assert!(best > 0.8, "max |r| = {best}");
    }

    #[test]
    fn null_prevalence() {
        let ld = LdModel {
            kind: LdKind::LatentGaussian { rho: 0.5, mafs: vec![0.3; 2] },
            typed: vec![0, 1],
            causal: vec![0],
            causal_weights: None,
        };
        let c = generate_cohort(&ld, &GenerativeModel::default(), 1_000_000, 1).unwrap();
        let prev = c.cases() as f64 / c.n() as f64;
        assert!((prev - expit(-0.2)).abs() < 0.002, "{prev}");
    }

    #[test]
    fn single_haplotype_pool() {
        let pool = HaplotypePool::from_rows(&[vec![1, 0, 1, 1]]).unwrap();
        let ld = LdModel { kind: LdKind::HaplotypePool(pool), typed: vec![0, 1, 2], causal: vec![3], causal_weights: None };
        let c = generate_cohort(&ld, &GenerativeModel::default(), 50, 3).unwrap();
        for i in 0..50 {
            assert_eq!(c.genotypes.row(i).iter().copied().collect::<Vec<_>>(), vec![2.0, 0.0, 2.0, 2.0]);
        }
    }

    #[test]
    fn latent_gaussian_independence_and_frequency() {
        let ld = LdModel {
            kind: LdKind::LatentGaussian { rho: 0.0, mafs: vec![0.2, 0.4, 0.1] },
            typed: vec![0, 1, 2],
            causal: vec![0],
            causal_weights: None,
        };
        let c = generate_cohort(&ld, &GenerativeModel::default(), 100_000, 5).unwrap();
        let n = c.n() as f64;
        for j in 0..2 {
            let a = c.genotypes.column(j);
            let b = c.genotypes.column(j + 1);
            let (ma, mb) = (a.mean(), b.mean());
            let cov = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
            let r = cov / (a.variance() * b.variance()).sqrt();
            assert!(r.abs() < 0.01, "locus {j}: r = {r}");
        }
        for (j, maf) in [0.2, 0.4, 0.1].iter().enumerate() {
            let f = c.genotypes.column(j).mean() / 2.0;
            let se = (maf * (1.0 - maf) / (2.0 * n)).sqrt();
            assert!((f - maf).abs() < 4.0 * se);
        }
    }

    #[test]
    fn pool_dosage_frequencies() {
        let ld = LdModel::bundled();
        let LdKind::HaplotypePool(pool) = &ld.kind else { unreachable!() };
        let freq = pool.allele_frequencies();
        let c = generate_cohort(&ld, &GenerativeModel::default(), 100_000, 11).unwrap();
        let n = c.n() as f64;
        for j in 0..pool.loci() {
            let f = c.genotypes.column(j).mean() / 2.0;
            let se = (freq[j] * (1.0 - freq[j]) / (2.0 * n)).sqrt();
            // 3.9 SE keeps the familywise miss rate over 99 loci under 1%.
            assert!((f - freq[j]).abs() <= 3.9 * se, "locus {j}: {f} vs {}", freq[j]);
        }
    }

    #[test]
    fn invalid_models() {
        let mut ld = LdModel::bundled();
        ld.typed.push(99);
        assert!(ld.validate().is_err());
        let ld = LdModel {
            kind: LdKind::LatentGaussian { rho: 0.1, mafs: vec![0.0, 0.2] },
            typed: vec![0, 1],
            causal: vec![0],
            causal_weights: None,
        };
        assert!(matches!(generate_cohort(&ld, &GenerativeModel::default(), 10, 1), Err(Error::Simulation(_))));
        let gm = GenerativeModel { beta_g: -500.0, link: Link::power_default(), ..Default::default() };
        assert!(generate_cohort(&LdModel::bundled(), &gm, 100, 1).is_err());
    }

    #[test]
    fn case_control_sampling() {
        let ld = LdModel::bundled();
        let c = generate_cohort(&ld, &GenerativeModel::default(), 300, 2).unwrap();
        let (nc, nk) = (c.cases(), c.n() - c.cases());
        assert!(sample_case_control(&c, nc + 1, 1, 0).is_err());
        let all = sample_case_control(&c, nc, nk, 0).unwrap();
        assert_eq!(all.n(), 300);
        assert_eq!(all.cases(), nc);
        let mut sums_full: Vec<f64> = (0..10).map(|k| c.genotypes.column(DEFAULT_TYPED[k]).sum()).collect();
        let mut sums_sub: Vec<f64> = (0..10).map(|k| all.s().column(k).sum()).collect();
        sums_full.sort_by(f64::total_cmp);
        sums_sub.sort_by(f64::total_cmp);
        assert_eq!(sums_full, sums_sub);
        for seed in 0..20 {
            let d = sample_case_control(&c, 30, 40, seed).unwrap();
            assert!(d.y().rows(0, 30).iter().all(|&v| v == 1.0));
            assert!(d.y().rows(30, 40).iter().all(|&v| v == 0.0));
            assert_eq!(d.p(), 10);
        }
    }

    #[test]
    fn cohort_reproducible() {
        let ld = LdModel::bundled();
        let gm = GenerativeModel { beta_s: 0.3, delta: 1.0, ..Default::default() };
        assert_eq!(generate_cohort(&ld, &gm, 500, 7).unwrap(), generate_cohort(&ld, &gm, 500, 7).unwrap());
        assert_ne!(generate_cohort(&ld, &gm, 500, 7).unwrap(), generate_cohort(&ld, &gm, 500, 8).unwrap());
    }

    #[test]
    fn links() {
        let gm = GenerativeModel::default();
        assert!((gm.risk(0.0, 0.0).unwrap() - expit(-0.2)).abs() < 1e-15);
        let probit = GenerativeModel { link: Link::Probit, ..gm };
        assert!((probit.risk(0.0, 0.0).unwrap() - NormalDist::standard().cdf(-0.2)).abs() < 1e-15);
        let power = GenerativeModel { link: Link::power_default(), beta_s: 1.0, ..gm };
        assert_eq!(power.risk(0.0, 0.0).unwrap(), 0.5);
        let expect = expit(101f64.powf(0.9) - 100f64.powf(0.9));
        assert!((power.risk(1.0, 0.0).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn experiment_rejects_few_replications() {
        let design = ExperimentDesign { replications: 99, ..Default::default() };
        assert!(size_power_experiment(&LdModel::bundled(), &[], &design).is_err());
    }

    #[test]
    fn experiment_reproducible_and_uniform_under_null() {
        let design = ExperimentDesign {
            replications: 200,
            b: 200,
            seed: 17,
            tests: vec![TestKind::S, TestKind::SgcWeighted, TestKind::Omnibus],
            engines: vec![Engine::Perturbation, Engine::Davies],
            ..Default::default()
        };
        let sc = [Scenario { name: "null".into(), model: GenerativeModel { delta: 1.0, ..Default::default() } }];
        let ld = LdModel::bundled();
        let a = size_power_experiment(&ld, &sc, &design).unwrap();
        let seq = ExperimentDesign { exec: Execution::Sequential, ..design.clone() };
        assert_eq!(a, size_power_experiment(&ld, &sc, &seq).unwrap());
        assert_eq!(a.failures[0].failures, 0);
        // Omnibus only exists for the perturbation engine.
        assert_eq!(a.rows.len(), 5);
        for r in &a.rows {
            assert!((r.se - (r.rate * (1.0 - r.rate) / r.valid as f64).sqrt()).abs() < 1e-15);
            assert!(r.rate < 0.12, "{r:?}");
        }

        let ps: Vec<f64> = replicate_pvalues(&ld, &sc[0].model, &design, 0)
            .into_iter()
            .map(|r| r.unwrap()[0][0].unwrap())
            .collect();
        assert_eq!(ps.len(), 200);
        let mut sorted = ps.clone();
        sorted.sort_by(f64::total_cmp);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let ks = sorted
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let f = u.cdf(p);
                (f - i as f64 / 200.0).abs().max(((i + 1) as f64 / 200.0 - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic, 1.628 / sqrt(n).
        assert!(ks < 1.628 / 200f64.sqrt(), "KS = {ks}");
    }
}
