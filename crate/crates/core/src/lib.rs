//! Gene-level association testing that combines a SNP set and a gene's
//! expression in one variance-component score statistic for a binary
//! outcome.
//!
//! The pipeline is:
//!
//! 1. [`datamodel`]: load and validate the aligned subject arrays.
//! 2. [`glm`]: fit the covariate-only null logistic model (and, for the
//!    mediation calculators, the full outcome and expression models).
//! 3. [`vctest`]: scores, variance-based weights, and the `Q_S`, `Q_SG`,
//!    `Q_SGC` statistics.
//! 4. [`nulldist`]: p-values from the moment-matched scaled chi-square,
//!    characteristic-function inversion, or perturbation resampling.
//! 5. [`omnibus`]: min-p combination of the three statistics under shared
//!    perturbation noise, plus the direct- and indirect-effect tests.
//!
//! [`mediation`] turns fitted coefficients into total, direct and indirect
//! effects, [`simulate`] reproduces the case-control simulation designs, and
//! [`scan`] runs many SNP-set/expression pairs with FDR control.

pub mod datamodel;
pub mod error;
pub mod exec;
pub mod glm;
pub mod mediation;
pub mod nulldist;
pub mod omnibus;
pub mod scan;
pub mod simulate;
pub mod vctest;

pub use datamodel::{Dataset, GenotypeCoding, InteractionMatrix, LoadOptions};
pub use error::{Error, Result};
pub use exec::Execution;
pub use glm::{MediationCoefficients, NullFit};
pub use nulldist::{Engine, Noise, ProjectedKernel, Spectrum};
pub use omnibus::{OmnibusResult, TestResult};
pub use vctest::{ScoreComponents, Variant, Weighting, Weights};
