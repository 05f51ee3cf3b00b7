//! `tegene`: joint SNP-set and expression association tests from the
//! command line.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tegene::datamodel::load_dataset;
use tegene::glm::fit_full_models;
use tegene::mediation::{effects, EffectDecomposition};
use tegene::omnibus::{direct_effect_test, indirect_effect_test, omnibus_test_with, total_effect_test, OmnibusOptions, TestOptions};
use tegene::scan::{scan, ScanOptions, ScanResult};
use tegene::simulate::{generate_cohort, sample_case_control, size_power_experiment, ExperimentTable};
use tegene::{Dataset, Engine, Execution, GenotypeCoding, LoadOptions, MediationCoefficients, OmnibusResult, TestResult, Variant, Weighting};

use config::ExperimentConfig;
use report::{fmt_opt, write_tsv, Provenance, Report};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "TEGENE_THREADS";
const MIN_PERTURBATIONS: usize = 100;

/// Invalid command-line or configuration input.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser)]
#[command(name = "tegene", version, about = "Variance-component tests of a SNP set and a gene expression on a binary outcome")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One statistic with p-values from the selected engines.
    Test(TestArgs),
    /// Min-p omnibus test over Q_S, Q_SG and Q_SGC.
    Omnibus(OmnibusArgs),
    /// Fitted total, direct and indirect effects of a SNP contrast.
    Effects(EffectsArgs),
    /// Draw one case-control dataset from an experiment configuration.
    Simulate(SimulateArgs),
    /// Empirical size and power over many simulated replicates.
    Power(PowerArgs),
    /// Omnibus test over many SNP-set/expression pairs with FDR control.
    Scan(ScanArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CodingArg {
    Additive,
    Dominant,
}

impl From<CodingArg> for GenotypeCoding {
    fn from(c: CodingArg) -> Self {
        match c {
            CodingArg::Additive => GenotypeCoding::Additive,
            CodingArg::Dominant => GenotypeCoding::Dominant,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    S,
    Sg,
    Sgc,
    De,
    Ie,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::S => Variant::S,
            VariantArg::Sg => Variant::SG,
            VariantArg::Sgc => Variant::SGC,
            VariantArg::De => Variant::DE,
            VariantArg::Ie => Variant::IE,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum EngineArg {
    Satterthwaite,
    Davies,
    Perturbation,
    All,
}

impl EngineArg {
    fn engines(self) -> Vec<Engine> {
        match self {
            EngineArg::Satterthwaite => vec![Engine::Satterthwaite],
            EngineArg::Davies => vec![Engine::Davies],
            EngineArg::Perturbation => vec![Engine::Perturbation],
            EngineArg::All => Engine::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    genotypes: PathBuf,
    #[arg(long)]
    expression: PathBuf,
    #[arg(long)]
    phenotype: PathBuf,
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "additive")]
    coding: CodingArg,
    /// Fill missing genotypes with the SNP mean instead of failing.
    #[arg(long)]
    impute_missing: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let opts = LoadOptions { coding: self.coding.into(), impute_missing: self.impute_missing };
        Ok(load_dataset(&self.genotypes, &self.expression, &self.phenotype, self.covariates.as_deref(), opts)?)
    }

    fn provenance(&self, seed: Option<u64>, b: Option<usize>) -> Provenance {
        Provenance::new(seed, b)
            .input("genotypes", Some(&self.genotypes))
            .input("expression", Some(&self.expression))
            .input("phenotype", Some(&self.phenotype))
            .input("covariates", self.covariates.as_deref())
            .option("coding", coding_name(self.coding))
            .option("impute_missing", self.impute_missing)
    }
}

fn coding_name(c: CodingArg) -> &'static str {
    match c {
        CodingArg::Additive => "additive",
        CodingArg::Dominant => "dominant",
    }
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "sgc")]
    variant: VariantArg,
    #[arg(long, conflicts_with = "unweighted")]
    weighted: bool,
    #[arg(long)]
    unweighted: bool,
    #[arg(long, value_enum, default_value = "all")]
    engine: EngineArg,
    #[arg(long, default_value_t = 1000)]
    b: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OmnibusArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, conflicts_with = "unweighted")]
    weighted: bool,
    #[arg(long)]
    unweighted: bool,
    #[arg(long, default_value_t = 1000)]
    b: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EffectsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Reference SNP values, comma separated (default all 0).
    #[arg(long, value_delimiter = ',')]
    s0: Option<Vec<f64>>,
    /// Comparison SNP values, comma separated (default all 1).
    #[arg(long, value_delimiter = ',')]
    s1: Option<Vec<f64>>,
    /// Covariate values including the leading intercept 1 (default: means).
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Scenario to draw from (default: the first one).
    #[arg(long)]
    scenario: Option<String>,
    /// Directory that receives genotypes.tsv, expression.tsv, phenotype.tsv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional tab-separated copy of the rate table.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    /// Tab-separated `name genotypes expression` per line; relative paths
    /// resolve against the manifest's directory.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    phenotype: PathBuf,
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "additive")]
    coding: CodingArg,
    #[arg(long, default_value_t = 0.1)]
    fdr: f64,
    #[arg(long, default_value_t = 1000)]
    b: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn weighting(weighted: bool, unweighted: bool) -> Weighting {
    let _ = weighted;
    if unweighted {
        Weighting::Unweighted
    } else {
        Weighting::Weighted
    }
}

fn check_b(b: usize) -> Result<()> {
    if b < MIN_PERTURBATIONS {
        bail!(ConfigError(format!("--b must be at least {MIN_PERTURBATIONS} for perturbation p-values, got {b}")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!(ConfigError(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct Decision {
    engine: Engine,
    p: f64,
    significant: bool,
}

fn decisions(r: &TestResult, alpha: f64) -> Vec<Decision> {
    Engine::ALL
        .iter()
        .filter_map(|&e| r.pvalue(e).map(|p| Decision { engine: e, p, significant: p <= alpha }))
        .collect()
}

#[derive(Serialize)]
struct TestOutput {
    alpha: f64,
    test: TestResult,
    decisions: Vec<Decision>,
}

fn run_test(a: &TestArgs) -> Result<()> {
    let engines = a.engine.engines();
    let perturb = engines.contains(&Engine::Perturbation);
    if perturb {
        check_b(a.b)?;
        if a.seed.is_none() {
            bail!(ConfigError("--seed is required when perturbation p-values are requested".into()));
        }
    }
    check_alpha(a.alpha)?;
    let d = a.data.load()?;
    let w = weighting(a.weighted, a.unweighted);
    let opts = TestOptions { engines, b: a.b, seed: a.seed.unwrap_or(0), ..Default::default() };
    let variant: Variant = a.variant.into();
    let r = match variant {
        Variant::DE => direct_effect_test(&d, w, &opts)?,
        Variant::IE => indirect_effect_test(&d, w, &opts)?,
        v => total_effect_test(&d, v, w, &opts)?,
    };
    let prov = a
        .data
        .provenance(a.seed.filter(|_| perturb), perturb.then_some(a.b))
        .option("variant", variant.name())
        .option("weighting", weighting_name(w));
    let out = TestOutput { alpha: a.alpha, decisions: decisions(&r, a.alpha), test: r };
    Report::new("test", prov, out).emit(a.out.as_deref())
}

fn weighting_name(w: Weighting) -> &'static str {
    match w {
        Weighting::Weighted => "weighted",
        Weighting::Unweighted => "unweighted",
    }
}

#[derive(Serialize)]
struct OmnibusOutput {
    alpha: f64,
    significant: bool,
    omnibus: OmnibusResult,
}

fn run_omnibus(a: &OmnibusArgs) -> Result<()> {
    check_b(a.b)?;
    check_alpha(a.alpha)?;
    let d = a.data.load()?;
    let w = weighting(a.weighted, a.unweighted);
    let r = omnibus_test_with(&d, &OmnibusOptions { b: a.b, seed: a.seed, weighting: w, ..Default::default() })?;
    let prov = a.data.provenance(Some(a.seed), Some(a.b)).option("weighting", weighting_name(w));
    let out = OmnibusOutput { alpha: a.alpha, significant: r.p_omnibus <= a.alpha, omnibus: r };
    Report::new("omnibus", prov, out).emit(a.out.as_deref())
}

#[derive(Serialize)]
struct EffectsOutput {
    coefficients: MediationCoefficients,
    effects: EffectDecomposition,
}

fn run_effects(a: &EffectsArgs) -> Result<()> {
    let d = a.data.load()?;
    let p = d.p();
    let s0 = a.s0.clone().unwrap_or_else(|| vec![0.0; p]);
    let s1 = a.s1.clone().unwrap_or_else(|| vec![1.0; p]);
    let x = a.x.clone().unwrap_or_else(|| d.covariate_means().as_slice().to_vec());
    let mc = fit_full_models(&d, None)?;
    let e = effects(&mc, &s0, &s1, &x)?;
    Report::new("effects", a.data.provenance(None, None), EffectsOutput { coefficients: mc, effects: e })
        .emit(a.out.as_deref())
}

#[derive(Serialize)]
struct SimulateOutput {
    scenario: String,
    cohort_n: usize,
    cohort_cases: usize,
    n: usize,
    cases: usize,
    p: usize,
    typed: Vec<usize>,
    causal: Vec<usize>,
    files: Vec<String>,
}

fn run_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let sc = match &a.scenario {
        None => &cfg.scenarios[0],
        Some(name) => cfg
            .scenarios
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| ConfigError(format!("no scenario named {name:?}")))?,
    };
    let ld = cfg.ld_model()?;
    let seeds = tegene::simulate::replicate_seeds(cfg.seed, 0, 0);
    let cohort = generate_cohort(&ld, &sc.model, cfg.cohort_n, seeds[0])?;
    let d = sample_case_control(&cohort, cfg.n_cases, cfg.n_controls, seeds[1])?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let names = ["genotypes.tsv", "expression.tsv", "phenotype.tsv"];
    let paths: Vec<PathBuf> = names.iter().map(|f| a.out_dir.join(f)).collect();
    d.write_files(&paths[0], &paths[1], &paths[2], None)?;
    let out = SimulateOutput {
        scenario: sc.name.clone(),
        cohort_n: cohort.n(),
        cohort_cases: cohort.cases(),
        n: d.n(),
        cases: d.cases(),
        p: d.p(),
        typed: ld.typed.clone(),
        causal: ld.causal.clone(),
        files: names.iter().map(|s| s.to_string()).collect(),
    };
    let prov = Provenance::new(Some(cfg.seed), None).input("config", Some(&a.config));
    Report::new("simulate", prov, out).emit(a.out.as_deref())
}

fn run_power(a: &PowerArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if cfg.needs_perturbation() {
        check_b(cfg.b)?;
    }
    check_alpha(cfg.alpha)?;
    let ld = cfg.ld_model()?;
    let table: ExperimentTable = size_power_experiment(&ld, &cfg.scenarios, &cfg.design(Execution::Parallel))?;
    if let Some(path) = &a.table {
        let rows: Vec<Vec<String>> = table
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.scenario.clone(),
                    r.test.name().to_string(),
                    engine_name(r.engine).to_string(),
                    r.rejections.to_string(),
                    r.valid.to_string(),
                    r.rate.to_string(),
                    r.se.to_string(),
                ]
            })
            .collect();
        write_tsv(path, &["scenario", "test", "engine", "rejections", "valid", "rate", "se"], &rows)?;
    }
    let prov = Provenance::new(Some(cfg.seed), Some(cfg.b)).input("config", Some(&a.config));
    Report::new("power", prov, table).emit(a.out.as_deref())
}

fn engine_name(e: Engine) -> &'static str {
    match e {
        Engine::Satterthwaite => "satterthwaite",
        Engine::Davies => "davies",
        Engine::Perturbation => "perturbation",
    }
}

fn read_pairs(manifest: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            bail!(ConfigError(format!("{} line {}: expected `name<TAB>genotypes<TAB>expression`", manifest.display(), i + 1)));
        }
        out.push((f[0].to_string(), base.join(f[1]), base.join(f[2])));
    }
    if out.is_empty() {
        bail!(ConfigError(format!("{} lists no pairs", manifest.display())));
    }
    Ok(out)
}

fn run_scan(a: &ScanArgs) -> Result<()> {
    check_b(a.b)?;
    if !(a.fdr > 0.0 && a.fdr < 1.0) {
        bail!(ConfigError(format!("--fdr must lie in (0, 1), got {}", a.fdr)));
    }
    let opts = LoadOptions { coding: a.coding.into(), impute_missing: false };
    let pairs = read_pairs(&a.pairs)?
        .into_iter()
        .map(|(name, geno, expr)| {
            let d = load_dataset(&geno, &expr, &a.phenotype, a.covariates.as_deref(), opts)
                .with_context(|| format!("pair {name}"))?;
            Ok((name, d))
        })
        .collect::<Result<Vec<(String, Dataset)>>>()?;
    let r: ScanResult = scan(&pairs, &ScanOptions { b: a.b, seed: a.seed, fdr: a.fdr, exec: Execution::Parallel })?;
    if let Some(path) = &a.table {
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .map(|row| {
                vec![
                    row.name.clone(),
                    fmt_opt(row.p_s),
                    fmt_opt(row.p_sg),
                    fmt_opt(row.p_sgc),
                    fmt_opt(row.p_omnibus),
                    fmt_opt(row.q_omnibus),
                    row.discovery.to_string(),
                ]
            })
            .collect();
        write_tsv(path, &["name", "p_s", "p_sg", "p_sgc", "p_omnibus", "q_omnibus", "discovery"], &rows)?;
    }
    let prov = Provenance::new(Some(a.seed), Some(a.b))
        .input("pairs", Some(&a.pairs))
        .input("phenotype", Some(&a.phenotype))
        .input("covariates", a.covariates.as_deref())
        .option("coding", coding_name(a.coding));
    Report::new("scan", prov, r).emit(a.out.as_deref())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ConfigError(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

fn error_code(e: &anyhow::Error) -> (&'static str, u8) {
    for cause in e.chain() {
        if let Some(t) = cause.downcast_ref::<tegene::Error>() {
            return (t.code(), 1);
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return ("E_CONFIG", 2);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("E_IO", 1);
        }
    }
    ("E_INTERNAL", 1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Test(a) => run_test(a),
        Command::Omnibus(a) => run_omnibus(a),
        Command::Effects(a) => run_effects(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Power(a) => run_power(a),
        Command::Scan(a) => run_scan(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, status) = error_code(&e);
            let body = ErrorReport { error: ErrorBody { code, message: format!("{e:#}") } };
            eprintln!("{}", serde_json::to_string(&body).unwrap_or_else(|_| format!("{e:#}")));
            ExitCode::from(status)
        }
    }
}
