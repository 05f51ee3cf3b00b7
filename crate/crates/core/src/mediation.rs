//! Total, direct and indirect effects of a SNP contrast on the log-odds
//! scale, and the SNP-only model induced by integrating out expression.
//!
//! All closed forms are rare-disease approximations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::glm::MediationCoefficients;

/// Constant of the logistic-normal approximation
/// `E[expit(a + bZ)] ~ expit(a / sqrt(1 + 0.35 b^2))`.
pub const LOGISTIC_NORMAL_CONST: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectDecomposition {
    pub te: f64,
    pub de: f64,
    pub ie: f64,
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
    pub x: Vec<f64>,
    pub rare_disease_approximation: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(mc: &MediationCoefficients, s: &[&[f64]], x: &[f64]) -> Result<()> {
    mc.validate()?;
    if let Some(bad) = s.iter().find(|v| v.len() != mc.p()) {
        return Err(Error::Dimension(format!("SNP vector has length {}, expected {}", bad.len(), mc.p())));
    }
    if x.len() != mc.q() {
        return Err(Error::Dimension(format!("covariate vector has length {}, expected {}", x.len(), mc.q())));
    }
    Ok(())
}

pub fn direct_effect(mc: &MediationCoefficients, s0: &[f64], s1: &[f64], x: &[f64]) -> f64 {
    let diff: Vec<f64> = s1.iter().zip(s0).map(|(a, b)| a - b).collect();
    let sum: Vec<f64> = s1.iter().zip(s0).map(|(a, b)| a + b).collect();
    let shift = dot(x, &mc.phi) + dot(s0, &mc.delta) + mc.beta_g * mc.sigma2_g;
    let main: f64 = diff.iter().enumerate().map(|(j, dj)| dj * (mc.beta_s[j] + mc.gamma[j] * shift)).sum();
    main + 0.5 * mc.sigma2_g * dot(&sum, &mc.gamma) * dot(&diff, &mc.gamma)
}

pub fn indirect_effect(mc: &MediationCoefficients, s0: &[f64], s1: &[f64]) -> f64 {
    let diff: Vec<f64> = s1.iter().zip(s0).map(|(a, b)| a - b).collect();
    dot(&diff, &mc.delta) * (mc.beta_g + dot(s1, &mc.gamma))
}

/// The total effect evaluated directly from its own closed form rather than
/// as `DE + IE`.
pub fn total_effect(mc: &MediationCoefficients, s0: &[f64], s1: &[f64], x: &[f64]) -> f64 {
    let diff: Vec<f64> = s1.iter().zip(s0).map(|(a, b)| a - b).collect();
    let sum: Vec<f64> = s1.iter().zip(s0).map(|(a, b)| a + b).collect();
    let shift = dot(x, &mc.phi) + dot(s0, &mc.delta) + mc.beta_g * mc.sigma2_g;
    let s1_gamma = dot(s1, &mc.gamma);
    let linear: f64 = diff
        .iter()
        .enumerate()
        .map(|(j, dj)| dj * (mc.beta_s[j] + mc.beta_g * mc.delta[j] + mc.gamma[j] * shift + mc.delta[j] * s1_gamma))
        .sum();
    linear + 0.5 * mc.sigma2_g * dot(&sum, &mc.gamma) * dot(&diff, &mc.gamma)
}

/// Effects of moving the SNP set from `s0` to `s1` at covariates `x`.
pub fn effects(mc: &MediationCoefficients, s0: &[f64], s1: &[f64], x: &[f64]) -> Result<EffectDecomposition> {
    check(mc, &[s0, s1], x)?;
    let de = direct_effect(mc, s0, s1, x);
    let ie = indirect_effect(mc, s0, s1);
    Ok(EffectDecomposition {
        te: de + ie,
        de,
        ie,
        s0: s0.to_vec(),
        s1: s1.to_vec(),
        x: x.to_vec(),
        rare_disease_approximation: true,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalSnpModel {
    /// Attenuation `(1 + 0.35 sigma2_G beta_G^2)^(-1/2)`.
    pub c: f64,
    pub beta_star: Vec<f64>,
    pub alpha_star: Vec<f64>,
}

/// Coefficients of the SNP-only logistic model implied by the outcome and
/// expression models when there is no SNP-by-expression interaction.
pub fn marginal_snp_coefficients(mc: &MediationCoefficients) -> Result<MarginalSnpModel> {
    mc.validate()?;
    if mc.gamma.iter().any(|&g| g != 0.0) {
        return Err(Error::InvalidArgument(
            "interaction coefficients are nonzero; use marginal_snp_linpred".into(),
        ));
    }
    let c = attenuation(mc.sigma2_g, mc.beta_g);
    let beta_star = mc.beta_s.iter().zip(&mc.delta).map(|(bs, d)| c * (bs + mc.beta_g * d)).collect();
    let alpha_star = mc.alpha.iter().zip(&mc.phi).map(|(a, f)| c * (a + mc.beta_g * f)).collect();
    Ok(MarginalSnpModel { c, beta_star, alpha_star })
}

pub fn attenuation(sigma2_g: f64, slope: f64) -> f64 {
    (1.0 + LOGISTIC_NORMAL_CONST * sigma2_g * slope * slope).powf(-0.5)
}

/// Approximate log-odds of the induced SNP-only model for one subject,
/// allowing SNP-by-expression interaction.
pub fn marginal_snp_linpred(mc: &MediationCoefficients, s: &[f64], x: &[f64]) -> Result<f64> {
    check(mc, &[s], x)?;
    let s_gamma = dot(s, &mc.gamma);
    let x_phi = dot(x, &mc.phi);
    let s_delta = dot(s, &mc.delta);
    let c_star = attenuation(mc.sigma2_g, mc.beta_g + s_gamma);
    let x_part: f64 = x.iter().enumerate().map(|(k, xk)| xk * (mc.alpha[k] + mc.phi[k] * mc.beta_g)).sum();
    let s_part: f64 = s.iter().enumerate().map(|(j, sj)| sj * (mc.beta_s[j] + mc.delta[j] * mc.beta_g)).sum();
    Ok(c_star * (x_part + s_part + x_phi * s_gamma + s_delta * s_gamma))
}
