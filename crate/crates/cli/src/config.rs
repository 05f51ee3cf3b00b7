//! Experiment configuration files for `simulate` and `power`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tegene::simulate::{
    ExperimentDesign, HaplotypePool, LdKind, LdModel, Scenario, TestKind, DEFAULT_CAUSAL, DEFAULT_TYPED,
};
use tegene::{Engine, Execution};

use crate::ConfigError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LdConfig {
    HaplotypePool {
        /// Pool file; the bundled pool when absent.
        pool: Option<PathBuf>,
        typed: Option<Vec<usize>>,
        causal: Option<Vec<usize>>,
        causal_weights: Option<Vec<f64>>,
    },
    LatentGaussian {
        rho: f64,
        mafs: Vec<f64>,
        typed: Vec<usize>,
        causal: Vec<usize>,
        causal_weights: Option<Vec<f64>>,
    },
}

impl Default for LdConfig {
    fn default() -> Self {
        LdConfig::HaplotypePool { pool: None, typed: None, causal: None, causal_weights: None }
    }
}

fn d_cohort() -> usize {
    1000
}
fn d_arm() -> usize {
    100
}
fn d_reps() -> usize {
    2000
}
fn d_alpha() -> f64 {
    0.05
}
fn d_b() -> usize {
    500
}
fn d_tests() -> Vec<TestKind> {
    TestKind::TABLE.to_vec()
}
fn d_engines() -> Vec<Engine> {
    vec![Engine::Perturbation]
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "d_cohort")]
    pub cohort_n: usize,
    #[serde(default = "d_arm")]
    pub n_cases: usize,
    #[serde(default = "d_arm")]
    pub n_controls: usize,
    #[serde(default = "d_reps")]
    pub replications: usize,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_b")]
    pub b: usize,
    #[serde(default = "d_tests")]
    pub tests: Vec<TestKind>,
    #[serde(default = "d_engines")]
    pub engines: Vec<Engine>,
    #[serde(default)]
    pub ld: LdConfig,
    pub scenarios: Vec<Scenario>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        if let LdConfig::HaplotypePool { pool: Some(p), .. } = &mut cfg.ld {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        if cfg.scenarios.is_empty() {
            return Err(ConfigError("config defines no scenarios".into()).into());
        }
        Ok(cfg)
    }

    pub fn needs_perturbation(&self) -> bool {
        self.engines.contains(&Engine::Perturbation) || self.tests.contains(&TestKind::Omnibus)
    }

    pub fn design(&self, exec: Execution) -> ExperimentDesign {
        ExperimentDesign {
            cohort_n: self.cohort_n,
            n_cases: self.n_cases,
            n_controls: self.n_controls,
            replications: self.replications,
            alpha: self.alpha,
            b: self.b,
            seed: self.seed,
            tests: self.tests.clone(),
            engines: self.engines.clone(),
            exec,
        }
    }

    pub fn ld_model(&self) -> Result<LdModel> {
        let model = match &self.ld {
            LdConfig::HaplotypePool { pool, typed, causal, causal_weights } => {
                let pool = match pool {
                    None => HaplotypePool::bundled(),
                    Some(p) => {
                        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                        HaplotypePool::parse(&text)?
                    }
                };
                LdModel {
                    kind: LdKind::HaplotypePool(pool),
                    typed: typed.clone().unwrap_or_else(|| DEFAULT_TYPED.to_vec()),
                    causal: causal.clone().unwrap_or_else(|| vec![DEFAULT_CAUSAL]),
                    causal_weights: causal_weights.clone(),
                }
            }
            LdConfig::LatentGaussian { rho, mafs, typed, causal, causal_weights } => LdModel {
                kind: LdKind::LatentGaussian { rho: *rho, mafs: mafs.clone() },
                typed: typed.clone(),
                causal: causal.clone(),
                causal_weights: causal_weights.clone(),
            },
        };
        model.validate()?;
        Ok(model)
    }
}
