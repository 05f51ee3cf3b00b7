//! Many SNP-set/expression pairs at once, with Benjamini-Hochberg control of
//! the false discovery rate.

use serde::Serialize;

use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::exec::{derive_seed, map_indices, Execution};
use crate::omnibus::{omnibus_test_with, OmnibusOptions};

pub const FDR_PROCEDURE: &str = "benjamini-hochberg";

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn fdr_adjust(pvalues: &[f64]) -> Result<Vec<f64>> {
    if pvalues.is_empty() {
        return Err(Error::InvalidArgument("no p-values to adjust".into()));
    }
    if let Some(p) = pvalues.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidArgument(format!("p-value {p} outside (0, 1]")));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(pvalues[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub index: usize,
    pub name: String,
    pub p_s: Option<f64>,
    pub p_sg: Option<f64>,
    pub p_sgc: Option<f64>,
    pub p_omnibus: Option<f64>,
    pub q_omnibus: Option<f64>,
    pub discovery: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanResult {
    pub procedure: &'static str,
    pub fdr: f64,
    pub b: usize,
    pub seed: u64,
    pub discoveries: usize,
    pub failures: usize,
    pub rows: Vec<ScanRow>,
}

#[derive(Clone, Debug)]
pub struct ScanOptions {
    pub b: usize,
    pub seed: u64,
    pub fdr: f64,
    pub exec: Execution,
}

/// Runs the omnibus test on every pair and adjusts the omnibus p-values.
///
/// Pair `k` uses the noise seed `derive_seed(seed, [k])`. Pairs that fail
/// are reported with their error and left out of the adjustment.
pub fn scan(pairs: &[(String, Dataset)], opts: &ScanOptions) -> Result<ScanResult> {
    if !(opts.fdr > 0.0 && opts.fdr < 1.0) {
        return Err(Error::InvalidArgument(format!("FDR level {} outside (0, 1)", opts.fdr)));
    }
    // Parallelism is across pairs; each pair runs its draws sequentially.
    let outcomes = map_indices(pairs.len(), opts.exec, |k| {
        let o = OmnibusOptions {
            b: opts.b,
            seed: derive_seed(opts.seed, &[k as u64]),
            exec: Execution::Sequential,
            ..Default::default()
        };
        omnibus_test_with(&pairs[k].1, &o)
    });

    let mut rows: Vec<ScanRow> = outcomes
        .iter()
        .enumerate()
        .map(|(k, r)| match r {
            Ok(o) => ScanRow {
                index: k,
                name: pairs[k].0.clone(),
                p_s: Some(o.p_s),
                p_sg: Some(o.p_sg),
                p_sgc: Some(o.p_sgc),
                p_omnibus: Some(o.p_omnibus),
                q_omnibus: None,
                discovery: false,
                error: None,
            },
            Err(e) => ScanRow {
                index: k,
                name: pairs[k].0.clone(),
                p_s: None,
                p_sg: None,
                p_sgc: None,
                p_omnibus: None,
                q_omnibus: None,
                discovery: false,
                error: Some(format!("{}: {e}", e.code())),
            },
        })
        .collect();

    let ok: Vec<usize> = rows.iter().filter(|r| r.p_omnibus.is_some()).map(|r| r.index).collect();
    if !ok.is_empty() {
        let p: Vec<f64> = ok.iter().map(|&k| rows[k].p_omnibus.unwrap()).collect();
        for (&k, q) in ok.iter().zip(fdr_adjust(&p)?) {
            rows[k].q_omnibus = Some(q);
            rows[k].discovery = q <= opts.fdr;
        }
    }
    Ok(ScanResult {
        procedure: FDR_PROCEDURE,
        fdr: opts.fdr,
        b: opts.b,
        seed: opts.seed,
        discoveries: rows.iter().filter(|r| r.discovery).count(),
        failures: rows.len() - ok.len(),
        rows,
    })
}
