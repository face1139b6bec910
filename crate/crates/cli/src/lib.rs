//! Command-line front end: CSV ingestion, run-spec parsing, model assembly,
//! fitting, and report writing.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use survlap::assemble::{
    assemble, AssocKind, Assembled, Baseline, LongDataset, LongFamily, LongFormula, LongRecord,
    ModelSpec, PriorOverrides, SurvFormula, SymbolTarget, Term,
};
use survlap::fit::{fit, priors_used, FitConfig, FitResult};
use survlap::likelihoods::{EventKind, SurvPayload};
use survlap::postprocess::{
    baseline_curve, hazard_ratios, hyper_marginal_user, prior_vs_posterior, summary_table,
    SummaryRow,
};
use survlap::survdata::{SurvDataset, SurvRecord};
use survlap::theta::Strategy;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model error: {0}")]
    Model(#[from] survlap::Error),
    #[error("{0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Input(msg.into()))
}

// ---------------------------------------------------------------------------
// Data frames
// ---------------------------------------------------------------------------

/// A rectangular CSV table; every cell kept as text, parsed on demand.
#[derive(Clone, Debug)]
pub struct DataFrame {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl DataFrame {
    pub fn read(path: &Path) -> Result<DataFrame> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let columns: Vec<String> =
            reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if columns.is_empty() {
            return input_err(format!("{}: missing header row", path.display()));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() != columns.len() {
                return input_err(format!(
                    "{}: row {} has {} fields, header has {}",
                    path.display(),
                    rows.len() + 2,
                    record.len(),
                    columns.len()
                ));
            }
            rows.push(record.iter().map(|c| c.trim().to_string()).collect());
        }
        if rows.is_empty() {
            return input_err(format!("{}: no data rows", path.display()));
        }
        Ok(DataFrame { columns, rows })
    }

    pub fn col(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| {
            CliError::Input(format!(
                "column '{name}' not found (available: {})",
                self.columns.join(", ")
            ))
        })
    }

    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let ci = self.col(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(ri, row)| {
                row[ci].parse::<f64>().map_err(|_| {
                    CliError::Input(format!(
                        "column '{name}' row {}: '{}' is not a number",
                        ri + 1,
                        row[ci]
                    ))
                })
            })
            .collect()
    }

    pub fn text(&self, name: &str) -> Result<Vec<String>> {
        let ci = self.col(name)?;
        Ok(self.rows.iter().map(|r| r[ci].clone()).collect())
    }

    fn is_numeric(&self, name: &str) -> Result<bool> {
        let ci = self.col(name)?;
        Ok(self.rows.iter().all(|r| r[ci].parse::<f64>().is_ok()))
    }
}

/// Expand one covariate column into numeric columns: the column itself when
/// numeric, or one dummy per non-reference level (lexicographically first
/// level as reference) when categorical. `force` treats a numeric column as
/// categorical.
fn expand_column(df: &DataFrame, name: &str, force: bool) -> Result<Vec<(String, Vec<f64>)>> {
    if !force && df.is_numeric(name)? {
        return Ok(vec![(name.to_string(), df.numeric(name)?)]);
    }
    let values = df.text(name)?;
    let mut levels: Vec<String> = values.clone();
    levels.sort();
    levels.dedup();
    if levels.len() < 2 {
        return input_err(format!("categorical column '{name}' has a single level"));
    }
    // First level is the reference and gets no column.
    Ok(levels[1..]
        .iter()
        .map(|level| {
            let col: Vec<f64> =
                values.iter().map(|v| if v == level { 1.0 } else { 0.0 }).collect();
            (format!("{name}{level}"), col)
        })
        .collect())
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd > 0.0 {
        for v in values.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
}

/// Numeric design columns after categorical expansion and optional
/// standardization, keyed by expanded column name (insertion-ordered).
struct DesignColumns {
    names: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl DesignColumns {
    fn build(
        df: &DataFrame,
        wanted: &[String],
        standardized: &[String],
        factors: &[String],
    ) -> Result<Self> {
        let mut names = Vec::new();
        let mut data = Vec::new();
        for name in wanted {
            let force = factors.iter().any(|f| f == name);
            for (expanded, mut col) in expand_column(df, name, force)? {
                if names.contains(&expanded) {
                    continue;
                }
                if standardized.iter().any(|s| s == name) {
                    standardize(&mut col);
                }
                names.push(expanded);
                data.push(col);
            }
        }
        Ok(DesignColumns { names, data })
    }

    /// Expand a term over the generated columns: a numeric term maps to
    /// itself; a categorical term maps to each of its dummies.
    fn expand_term(&self, df: &DataFrame, term: &Term, factors: &[String]) -> Result<Vec<Term>> {
        let expand_main = |name: &str| -> Result<Vec<String>> {
            if !factors.iter().any(|f| f == name) && df.is_numeric(name)? {
                Ok(vec![name.to_string()])
            } else {
                Ok(self
                    .names
                    .iter()
                    .filter(|c| c.starts_with(name) && c.len() > name.len())
                    .cloned()
                    .collect())
            }
        };
        match term {
            Term::Main(name) => Ok(expand_main(name)?.into_iter().map(Term::Main).collect()),
            Term::Interaction(a, b) => {
                let mut out = Vec::new();
                for ea in expand_main(a)? {
                    for eb in expand_main(b)? {
                        out.push(Term::Interaction(ea.clone(), eb));
                    }
                }
                Ok(out)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Run specification
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize)]
pub struct SurvEntry {
    /// Dataset name, resolved through the --data bindings.
    pub data: String,
    pub time: String,
    #[serde(default)]
    pub time2: Option<String>,
    pub event: String,
    /// Left-truncation (delayed entry) column.
    #[serde(default)]
    pub trunc: Option<String>,
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub covariates: Vec<Term>,
    /// Frailty grouping column; implies an iid frailty block.
    #[serde(default)]
    pub frailty: Option<String>,
    #[serde(default)]
    pub cure: Vec<String>,
    pub baseline: Baseline,
    #[serde(default)]
    pub n_cutpoints: Option<usize>,
    #[serde(default)]
    pub cutpoints: Option<Vec<f64>>,
    #[serde(default)]
    pub strata: Option<String>,
    #[serde(default)]
    pub standardize: Vec<String>,
    /// Columns forced to categorical even when numeric.
    #[serde(default)]
    pub factors: Vec<String>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct LongEntry {
    pub data: String,
    pub response: String,
    pub subject: String,
    pub family: LongFamily,
    #[serde(default)]
    pub covariates: Vec<Term>,
    #[serde(default)]
    pub re_slopes: Vec<String>,
    #[serde(default = "default_true")]
    pub cor_re: bool,
    #[serde(default)]
    pub time_col: Option<String>,
    #[serde(default)]
    pub standardize: Vec<String>,
    /// Columns forced to categorical even when numeric.
    #[serde(default)]
    pub factors: Vec<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
pub struct RunSpec {
    pub spec_version: u32,
    #[serde(default)]
    pub surv: Vec<SurvEntry>,
    #[serde(default)]
    pub long: Vec<LongEntry>,
    #[serde(default)]
    pub assoc: Vec<Vec<AssocKind>>,
    #[serde(default)]
    pub assoc_surv: Vec<Option<usize>>,
    #[serde(default)]
    pub cor_long: bool,
    #[serde(default)]
    pub priors: PriorOverrides,
    #[serde(default)]
    pub strategy: Option<Strategy>,
}

/// Everything the run needs besides the spec document.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub spec_path: PathBuf,
    pub data: BTreeMap<String, PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub samples: usize,
    pub strategy: Option<Strategy>,
    pub hr: bool,
    pub sdcor: bool,
    pub priors: bool,
    pub validate_only: bool,
}

fn term_columns(term: &Term, into: &mut Vec<String>) {
    match term {
        Term::Main(c) => into.push(c.clone()),
        Term::Interaction(a, b) => {
            into.push(a.clone());
            into.push(b.clone());
        }
    }
}

fn event_kind(code: f64, has_time2: bool) -> Result<EventKind> {
    match code as i64 {
        0 => Ok(EventKind::RightCensored),
        1 => Ok(EventKind::Exact),
        2 if has_time2 => Ok(EventKind::IntervalCensored),
        2 => input_err("event code 2 (interval) requires a time2 column"),
        other => input_err(format!("unknown event code {other} (expected 0, 1 or 2)")),
    }
}

/// Build one survival dataset and its core formula from a spec entry.
fn build_surv(
    entry: &SurvEntry,
    df: &DataFrame,
) -> Result<(SurvFormula, SurvDataset)> {
    let n = df.rows.len();
    let time = df.numeric(&entry.time)?;
    let event = df.numeric(&entry.event)?;
    let time2 = entry.time2.as_ref().map(|c| df.numeric(c)).transpose()?;
    let trunc = entry.trunc.as_ref().map(|c| df.numeric(c)).transpose()?;
    let strata = entry.strata.as_ref().map(|c| df.text(c)).transpose()?;
    let subject_col = entry.frailty.as_ref().or(entry.subject.as_ref());
    let subjects: Vec<String> = match subject_col {
        Some(c) => df.text(c)?,
        None => (0..n).map(|i| format!("r{i}")).collect(),
    };

    // Collect all raw covariate columns referenced by terms and cure.
    let mut raw = Vec::new();
    for term in &entry.covariates {
        term_columns(term, &mut raw);
    }
    raw.extend(entry.cure.iter().cloned());
    raw.dedup();
    let design = DesignColumns::build(df, &raw, &entry.standardize, &entry.factors)?;

    // Expand formula terms over dummies.
    let mut covariates = Vec::new();
    for term in &entry.covariates {
        covariates.extend(design.expand_term(df, term, &entry.factors)?);
    }
    let mut cure = Vec::new();
    for c in &entry.cure {
        for t in design.expand_term(df, &Term::Main(c.clone()), &entry.factors)? {
            match t {
                Term::Main(name) => cure.push(name),
                Term::Interaction(..) => unreachable!("main term expands to main terms"),
            }
        }
    }

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let kind = event_kind(event[i], time2.is_some())?;
        let payload = SurvPayload {
            time: time[i],
            time2: if kind == EventKind::IntervalCensored {
                time2.as_ref().map(|t2| t2[i])
            } else {
                None
            },
            event: kind,
            trunc_left: trunc.as_ref().map(|t| t[i]).filter(|t| *t > 0.0),
            trunc_right: None,
        };
        records.push(SurvRecord {
            subject: subjects[i].clone(),
            payload,
            covariates: design.data.iter().map(|col| col[i]).collect(),
            strata: strata.as_ref().map(|s| s[i].clone()),
            cure_covariates: None,
        });
    }
    let dataset = SurvDataset { schema: design.names.clone(), records };
    let formula = SurvFormula {
        covariates,
        frailty: entry.frailty.is_some(),
        cure,
        baseline: entry.baseline,
        n_cutpoints: entry.n_cutpoints,
        cutpoints: entry.cutpoints.clone(),
        strata: entry.strata.is_some(),
    };
    Ok((formula, dataset))
}

fn build_long(entry: &LongEntry, df: &DataFrame) -> Result<(LongFormula, LongDataset)> {
    let n = df.rows.len();
    let response = df.numeric(&entry.response)?;
    let subjects = df.text(&entry.subject)?;
    let mut raw = Vec::new();
    for term in &entry.covariates {
        term_columns(term, &mut raw);
    }
    raw.extend(entry.re_slopes.iter().cloned());
    if let Some(t) = &entry.time_col {
        raw.push(t.clone());
    }
    raw.dedup();
    let design = DesignColumns::build(df, &raw, &entry.standardize, &entry.factors)?;
    let mut covariates = Vec::new();
    for term in &entry.covariates {
        covariates.extend(design.expand_term(df, term, &entry.factors)?);
    }
    let records = (0..n)
        .map(|i| LongRecord {
            subject: subjects[i].clone(),
            response: response[i],
            covariates: design.data.iter().map(|col| col[i]).collect(),
        })
        .collect();
    let dataset = LongDataset { schema: design.names.clone(), records };
    let formula = LongFormula {
        family: entry.family,
        covariates,
        re_slopes: entry.re_slopes.clone(),
        cor_re: entry.cor_re,
        time_col: entry.time_col.clone(),
    };
    Ok((formula, dataset))
}

/// Assemble the model described by a run spec against its bound datasets.
pub fn assemble_run(spec: &RunSpec, config: &RunConfig) -> Result<Assembled> {
    let mut frames: HashMap<String, DataFrame> = HashMap::new();
    let mut frame = |name: &str| -> Result<DataFrame> {
        if let Some(df) = frames.get(name) {
            return Ok(df.clone());
        }
        let path = config.data.get(name).ok_or_else(|| {
            CliError::Input(format!("dataset '{name}' not bound; pass --data {name}=<path>"))
        })?;
        let df = DataFrame::read(path)?;
        frames.insert(name.to_string(), df.clone());
        Ok(df)
    };

    let mut surv_formulas = Vec::new();
    let mut surv_data = Vec::new();
    for entry in &spec.surv {
        let df = frame(&entry.data)?;
        let (f, d) = build_surv(entry, &df)?;
        surv_formulas.push(f);
        surv_data.push(d);
    }
    let mut long_formulas = Vec::new();
    let mut long_data = Vec::new();
    for entry in &spec.long {
        let df = frame(&entry.data)?;
        let (f, d) = build_long(entry, &df)?;
        long_formulas.push(f);
        long_data.push(d);
    }
    let model_spec = ModelSpec {
        spec_version: spec.spec_version,
        surv: surv_formulas,
        long: long_formulas,
        assoc: spec.assoc.clone(),
        assoc_surv: spec.assoc_surv.clone(),
        cor_long: spec.cor_long,
        priors: spec.priors.clone(),
        strategy: spec.strategy,
    };
    Ok(assemble(&model_spec, &surv_data, &long_data)?)
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SummaryDoc {
    spec_version: u32,
    strategy_used: Strategy,
    seed: u64,
    samples: usize,
    log_mlik: f64,
    dic: f64,
    waic: f64,
    mlik_approximate: bool,
    summary: Vec<SummaryRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hazard_ratios: Option<Vec<SummaryRow>>,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

fn write_marginal_csv(path: &Path, xs: &[f64], density: &[f64]) -> Result<()> {
    let mut out = String::from("x,density\n");
    for (x, d) in xs.iter().zip(density) {
        out.push_str(&format!("{},{}\n", fmt(*x), fmt(*d)));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Execute a full run: assemble, fit, and write all reports into the output
/// directory. Returns the fit result for callers that post-process further.
pub fn run(config: &RunConfig) -> Result<Option<FitResult>> {
    let spec: RunSpec = serde_json::from_str(&fs::read_to_string(&config.spec_path)?)?;
    if spec.spec_version != 1 {
        return input_err(format!("unsupported spec_version {}", spec.spec_version));
    }
    let assembled = assemble_run(&spec, config)?;

    if config.validate_only {
        println!(
            "spec ok: {} latent coordinates in {} blocks, {} hyperparameters, {} data rows",
            assembled.model.latent_dim(),
            assembled.model.blocks.len(),
            assembled.model.theta_dim(),
            assembled.model.rows.len()
        );
        return Ok(None);
    }

    let strategy = config
        .strategy
        .or(spec.strategy)
        .unwrap_or(Strategy::Auto);
    let fit_config = FitConfig {
        strategy,
        seed: config.seed,
        samples: config.samples,
        keep_config: true,
    };
    let result = fit(&assembled.model, &fit_config)?;

    fs::create_dir_all(&config.out_dir)?;
    let table = summary_table(&assembled, &result.theta, config.sdcor)?;
    let hr = if config.hr { Some(hazard_ratios(&assembled, &result.theta)?) } else { None };
    let doc = SummaryDoc {
        spec_version: spec.spec_version,
        strategy_used: result.theta.strategy_used,
        seed: config.seed,
        samples: config.samples,
        log_mlik: result.criteria.log_mlik,
        dic: result.criteria.dic,
        waic: result.criteria.waic,
        mlik_approximate: result.criteria.mlik_approximate,
        summary: table,
        hazard_ratios: hr,
    };
    fs::write(config.out_dir.join("summary.json"), serde_json::to_string_pretty(&doc)?)?;
    fs::write(
        config.out_dir.join("diagnostics.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "warnings": result.warnings }))?,
    )?;
    fs::write(
        config.out_dir.join("priors.json"),
        serde_json::to_string_pretty(&priors_used(&assembled.model))?,
    )?;

    // Per-symbol marginal densities.
    let mdir = config.out_dir.join("marginals");
    fs::create_dir_all(&mdir)?;
    for sym in &assembled.symbols {
        let m = match sym.target {
            SymbolTarget::Latent(i) => result.latent[i].clone(),
            SymbolTarget::Hyper(h) => {
                hyper_marginal_user(&assembled, &result.theta, h, config.sdcor)?
            }
        };
        write_marginal_csv(&mdir.join(format!("{}.csv", sanitize(&sym.name))), &m.xs, &m.density)?;
    }

    // Baseline risk curves for piecewise submodels.
    let piecewise: Vec<usize> = assembled
        .meta
        .surv
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.baseline.is_parametric())
        .map(|(i, _)| i)
        .collect();
    if !piecewise.is_empty() {
        let cdir = config.out_dir.join("curves");
        fs::create_dir_all(&cdir)?;
        for si in piecewise {
            for curve in baseline_curve(&assembled, &result.theta, si, false)? {
                let mut out = String::from("t,mean,lower,upper\n");
                for j in 0..curve.t.len() {
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        fmt(curve.t[j]),
                        fmt(curve.mean[j]),
                        fmt(curve.lower[j]),
                        fmt(curve.upper[j])
                    ));
                }
                fs::write(
                    cdir.join(format!("{}_S{}.csv", sanitize(&curve.name), si + 1)),
                    out,
                )?;
            }
        }
    }

    // Prior/posterior overlays for scalar-prior hyperparameters.
    if config.priors {
        let pdir = config.out_dir.join("priors");
        fs::create_dir_all(&pdir)?;
        for (h, decl) in assembled.model.hypers.iter().enumerate() {
            if decl.prior.is_none() {
                continue;
            }
            let pp = prior_vs_posterior(&assembled, &result.theta, h)?;
            let mut out = String::from("x,prior,posterior\n");
            for j in 0..pp.xs.len() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    fmt(pp.xs[j]),
                    fmt(pp.prior[j]),
                    fmt(pp.posterior[j])
                ));
            }
            fs::write(pdir.join(format!("{}.csv", sanitize(&pp.name))), out)?;
        }
    }

    Ok(Some(result))
}
