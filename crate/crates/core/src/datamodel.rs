//! Subject-aligned input arrays, validation, and delimited-text ingestion.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenotypeCoding {
    /// Number of copies of the minor allele (0/1/2).
    #[default]
    Additive,
    /// Carrier indicator: dosage d becomes min(d, 1).
    Dominant,
}

impl GenotypeCoding {
    pub fn recode(self, dosage: f64) -> f64 {
        match self {
            GenotypeCoding::Additive => dosage,
            GenotypeCoding::Dominant => dosage.min(1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    pub coding: GenotypeCoding,
    /// Replace missing genotypes by the per-SNP mean of the observed
    /// dosages. Off by default: missing values are rejected.
    pub impute_missing: bool,
}

/// Aligned per-subject data: outcome `y`, genotypes `s` (n x p),
/// expression `g`, and covariates `x` (n x q, intercept in column 0).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    s: DMatrix<f64>,
    g: DVector<f64>,
    x: DMatrix<f64>,
    snp_ids: Option<Vec<String>>,
}

impl Dataset {
    /// Validates and assembles a dataset. Genotypes must be in {0,1,2}.
    pub fn new(y: DVector<f64>, s: DMatrix<f64>, g: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        Self::build(y, s, g, x, None, false)
    }

    /// Intercept-only convenience constructor.
    pub fn without_covariates(y: DVector<f64>, s: DMatrix<f64>, g: DVector<f64>) -> Result<Self> {
        let x = DMatrix::from_element(y.len(), 1, 1.0);
        Self::new(y, s, g, x)
    }

    fn build(
        y: DVector<f64>,
        s: DMatrix<f64>,
        g: DVector<f64>,
        x: DMatrix<f64>,
        snp_ids: Option<Vec<String>>,
        allow_fractional_dosage: bool,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Dimension("no subjects".into()));
        }
        if s.nrows() != n || g.len() != n || x.nrows() != n {
            return Err(Error::Dimension(format!(
                "row counts differ: phenotype {n}, genotypes {}, expression {}, covariates {}",
                s.nrows(),
                g.len(),
                x.nrows()
            )));
        }
        if s.ncols() == 0 {
            return Err(Error::Dimension("genotype matrix has no SNP columns".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::Covariates("covariate matrix has no columns".into()));
        }
        if let Some(ids) = &snp_ids {
            if ids.len() != s.ncols() {
                return Err(Error::Dimension(format!(
                    "{} SNP identifiers for {} genotype columns",
                    ids.len(),
                    s.ncols()
                )));
            }
        }
        for (i, &v) in y.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidPhenotype { row: i, value: v.to_string() });
            }
        }
        let cases = y.iter().filter(|&&v| v == 1.0).count();
        if cases == 0 || cases == n {
            return Err(Error::SingleClass);
        }
        for j in 0..s.ncols() {
            for i in 0..n {
                let v = s[(i, j)];
                let valid = if allow_fractional_dosage {
                    v.is_finite() && (0.0..=2.0).contains(&v)
                } else {
                    v == 0.0 || v == 1.0 || v == 2.0
                };
                if !valid {
                    return Err(Error::InvalidDosage { row: i, col: j, value: v.to_string() });
                }
            }
        }
        for (i, v) in g.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { field: "expression", row: i });
            }
        }
        for i in 0..n {
            if x[(i, 0)] != 1.0 {
                return Err(Error::Covariates(format!("column 0 must be the intercept (row {i} is {})", x[(i, 0)])));
            }
            for j in 1..x.ncols() {
                if !x[(i, j)].is_finite() {
                    return Err(Error::NonFinite { field: "covariates", row: i });
                }
            }
        }
        for j in 0..s.ncols() {
            let col = s.column(j);
            if col.iter().all(|&v| v == col[0]) {
                warn!("SNP column {j} is monomorphic; kept (contributes no signal)");
            }
        }
        Ok(Dataset { y, s, g, x, snp_ids })
    }

    pub fn with_snp_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.s.ncols() {
            return Err(Error::Dimension(format!(
                "{} SNP identifiers for {} genotype columns",
                ids.len(),
                self.s.ncols()
            )));
        }
        self.snp_ids = Some(ids);
        Ok(self)
    }

    /// Applies a genotype coding; dominant coding is idempotent.
    pub fn recoded(mut self, coding: GenotypeCoding) -> Self {
        self.s.apply(|v| *v = coding.recode(*v));
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn p(&self) -> usize {
        self.s.ncols()
    }
    pub fn q(&self) -> usize {
        self.x.ncols()
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }
    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn snp_ids(&self) -> Option<&[String]> {
        self.snp_ids.as_deref()
    }

    pub fn cases(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1.0).count()
    }

    /// Column means of the covariates (the default reference covariate
    /// vector for effect decomposition).
    pub fn covariate_means(&self) -> DVector<f64> {
        DVector::from_iterator(self.q(), self.x.column_iter().map(|c| c.mean()))
    }

    pub fn interaction_matrix(&self) -> InteractionMatrix {
        interaction_matrix(self)
    }

    /// Writes the dataset back out in the ingestion format.
    pub fn write_files(
        &self,
        genotype_path: &Path,
        expression_path: &Path,
        phenotype_path: &Path,
        covariate_path: Option<&Path>,
    ) -> Result<()> {
        let mut out = String::new();
        if let Some(ids) = &self.snp_ids {
            out.push_str(&ids.join("\t"));
            out.push('\n');
        }
        for i in 0..self.n() {
            let row: Vec<String> = self.s.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        fs::write(genotype_path, out)?;
        fs::write(expression_path, column_text(self.g.iter()))?;
        fs::write(phenotype_path, column_text(self.y.iter()))?;
        if let Some(path) = covariate_path {
            let mut out = String::new();
            for i in 0..self.n() {
                let row: Vec<String> = (1..self.q()).map(|j| self.x[(i, j)].to_string()).collect();
                let _ = writeln!(out, "{}", row.join("\t"));
            }
            fs::write(path, out)?;
        }
        Ok(())
    }
}

fn column_text<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut out = String::new();
    for v in values {
        let _ = writeln!(out, "{v}");
    }
    out
}

/// Row i holds `G_i * S_i`, the SNP-by-expression interaction covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMatrix {
    pub c: DMatrix<f64>,
}

pub fn interaction_matrix(d: &Dataset) -> InteractionMatrix {
    let mut c = d.s.clone();
    for (i, mut row) in c.row_iter_mut().enumerate() {
        row *= d.g[i];
    }
    InteractionMatrix { c }
}

pub fn load_dataset(
    genotype_path: &Path,
    expression_path: &Path,
    phenotype_path: &Path,
    covariate_path: Option<&Path>,
    opts: LoadOptions,
) -> Result<Dataset> {
    let (ids, geno) = read_genotypes(genotype_path)?;
    let expression = read_column(expression_path)?;
    let phenotype = read_column(phenotype_path)?;
    let n = phenotype.len();
    if geno.len() != n || expression.len() != n {
        return Err(Error::Dimension(format!(
            "row counts differ: phenotype {n}, genotypes {}, expression {}",
            geno.len(),
            expression.len()
        )));
    }

    let mut y = DVector::zeros(n);
    for (i, tok) in phenotype.iter().enumerate() {
        y[i] = match tok.as_str() {
            "0" | "0.0" => 0.0,
            "1" | "1.0" => 1.0,
            _ => return Err(Error::InvalidPhenotype { row: i, value: tok.clone() }),
        };
    }
    let mut g = DVector::zeros(n);
    for (i, tok) in expression.iter().enumerate() {
        g[i] = parse_real(tok).ok_or(Error::NonFinite { field: "expression", row: i })?;
    }

    let p = geno.first().map_or(0, Vec::len);
    let mut s = DMatrix::zeros(n, p);
    let mut missing = Vec::new();
    for (i, row) in geno.iter().enumerate() {
        for (j, tok) in row.iter().enumerate() {
            if is_missing(tok) {
                if !opts.impute_missing {
                    return Err(Error::MissingGenotype { row: i, col: j });
                }
                missing.push((i, j));
                continue;
            }
            s[(i, j)] = match tok.parse::<u8>() {
                Ok(v @ 0..=2) => opts.coding.recode(f64::from(v)),
                _ => return Err(Error::InvalidDosage { row: i, col: j, value: tok.clone() }),
            };
        }
    }
    if !missing.is_empty() {
        impute_column_means(&mut s, &missing)?;
    }

    let x = match covariate_path {
        None => DMatrix::from_element(n, 1, 1.0),
        Some(path) => {
            let rows = read_rows(path)?;
            if rows.len() != n {
                return Err(Error::Dimension(format!("covariate file has {} rows, expected {n}", rows.len())));
            }
            let extra = rows.first().map_or(0, Vec::len);
            let mut x = DMatrix::from_element(n, extra + 1, 1.0);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != extra {
                    return Err(Error::Dimension(format!("covariate row {i} has {} fields, expected {extra}", row.len())));
                }
                for (j, tok) in row.iter().enumerate() {
                    x[(i, j + 1)] = parse_real(tok).ok_or(Error::NonFinite { field: "covariates", row: i })?;
                }
            }
            x
        }
    };

    Dataset::build(y, s, g, x, ids, !missing.is_empty())
}

fn impute_column_means(s: &mut DMatrix<f64>, missing: &[(usize, usize)]) -> Result<()> {
    let n = s.nrows();
    let mut is_missing = vec![false; n * s.ncols()];
    for &(i, j) in missing {
        is_missing[j * n + i] = true;
    }
    for j in 0..s.ncols() {
        let observed: Vec<f64> = (0..n).filter(|&i| !is_missing[j * n + i]).map(|i| s[(i, j)]).collect();
        if observed.is_empty() {
            return Err(Error::MissingGenotype { row: 0, col: j });
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        for i in 0..n {
            if is_missing[j * n + i] {
                s[(i, j)] = mean;
            }
        }
    }
    Ok(())
}

fn is_missing(tok: &str) -> bool {
    matches!(tok, "NA" | "na" | "NaN" | "nan" | "." | "-9")
}

fn parse_real(tok: &str) -> Option<f64> {
    tok.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn split_fields(line: &str) -> Vec<String> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(split_fields).filter(|r| !r.is_empty()).collect())
}

fn read_column(path: &Path) -> Result<Vec<String>> {
    let rows = read_rows(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            if r.len() != 1 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("expected 1 field, found {}", r.len()),
                });
            }
            Ok(r.pop().unwrap_or_default())
        })
        .collect()
}

type GenotypeRows = (Option<Vec<String>>, Vec<Vec<String>>);

fn read_genotypes(path: &Path) -> Result<GenotypeRows> {
    let mut rows = read_rows(path)?;
    if rows.is_empty() {
        return Err(Error::Dimension(format!("{} is empty", path.display())));
    }
    let header_row = rows[0].iter().any(|t| t.parse::<f64>().is_err() && !is_missing(t));
    let ids = if header_row { Some(rows.remove(0)) } else { None };
    let width = ids.as_ref().map_or_else(|| rows.first().map_or(0, Vec::len), Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1 + usize::from(header_row),
                message: format!("expected {width} genotype fields, found {}", row.len()),
            });
        }
    }
    Ok((ids, rows))
}
