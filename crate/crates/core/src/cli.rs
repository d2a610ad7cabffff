//! The `psalm` command line: argument parsing, orchestration and reporting.
//!
//! Exit codes are 0 on success, 1 for usage errors and 2 for runtime
//! failures. Failures print a JSON object on standard error:
//! `{"error": {"kind": "usage" | "runtime", "exit_code": n, "message": "..."}}`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classify::{run_experiment, ClassificationExperiment};
use crate::error::{PsalmError, Result};
use crate::estim::{fit, AnnealSchedule, FitConfig, FitResult};
use crate::family::{ModelCode, PsalmSpec, ScaleMatrix};
use crate::io::{
    pca_project, read_labels, read_table, standardize, write_labels, write_results, write_table,
    Dataset, Evaluation, FailureRecord, Format, ModelRecord, PcaSummary, Provenance, ReadOptions,
    ResultsDocument,
};
use crate::metrics::{adjusted_rand_index, confusion_matrix, rand_index, ConfusionMatrix, Partition};
use crate::sal::{sample_sal_mixture, SalParams};
use crate::select::{grid_search, Criterion, SearchGrid};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "psalm",
    version,
    about = "Clustering and classification with parsimonious shifted asymmetric Laplace mixtures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a single model
    Fit(FitCommand),
    /// Fit every model of a grid and rank them by BIC or ICL
    Search(SearchCommand),
    /// Semi-supervised classification with repeated random labelled subsets
    Classify(ClassifyCommand),
    /// Principal component scores
    Pca(PcaCommand),
    /// Draw a synthetic data set from a SAL mixture
    Sample(SampleCommand),
    /// Agreement between two label files
    Score(ScoreCommand),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input table
    #[arg(long)]
    data: PathBuf,
    /// csv or whitespace
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Whether the first line holds column names [default: true for csv, false for whitespace]
    #[arg(long)]
    header: Option<bool>,
    /// Column names for files without a header line
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    /// Feature columns by name or zero-based index [default: all but the label column]
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Column holding class labels
    #[arg(long)]
    label_column: Option<String>,
    /// Keep only rows with these labels
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    /// Scale every feature to mean 0 and unit population variance
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        if self.classes.is_some() && self.label_column.is_none() {
            return usage("--classes needs --label-column");
        }
        let options = ReadOptions {
            format: self.format,
            header: self.header,
            column_names: self.columns.clone(),
            label_column: self.label_column.clone(),
            features: self.features.clone(),
            classes: self.classes.clone(),
        };
        let data = read_table(&self.data, &options)?;
        if self.standardize {
            standardize(&data)
        } else {
            Ok(data)
        }
    }
}

#[derive(Debug, Args)]
struct EstimationArgs {
    /// Random starts per model
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Offset applied to the latent weight expectation while annealing
    #[arg(long)]
    psi: Option<f64>,
    /// Number of equally spaced annealing values from 0 to 1
    #[arg(long)]
    anneal_steps: Option<usize>,
    /// Sweeps at each annealing value
    #[arg(long)]
    anneal_sweeps: Option<usize>,
    /// Maximum extra sweeps at the end of annealing
    #[arg(long)]
    anneal_hold: Option<usize>,
    /// Aitken convergence tolerance
    #[arg(long)]
    epsilon: Option<f64>,
    /// Iteration cap of the AECM phase
    #[arg(long)]
    max_iters: Option<usize>,
    /// Keep updating locations after annealing
    #[arg(long)]
    update_location: bool,
}

impl EstimationArgs {
    fn config(&self) -> Result<FitConfig> {
        let base = FitConfig::default();
        let schedule = if self.anneal_steps.is_some() || self.anneal_sweeps.is_some() || self.anneal_hold.is_some() {
            let d = &base.schedule;
            AnnealSchedule::linear(
                self.anneal_steps.unwrap_or(d.values().len()),
                self.anneal_sweeps.unwrap_or(d.iters_per_v()),
            )
            .map_err(as_usage)?
            .with_hold(self.anneal_hold.unwrap_or(d.hold()))
        } else {
            base.schedule.clone()
        };
        let config = FitConfig {
            n_starts: self.starts.unwrap_or(base.n_starts),
            seed: self.seed.unwrap_or(base.seed),
            psi: self.psi.unwrap_or(base.psi),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            update_location: self.update_location,
            schedule,
            ..base
        };
        config.validate().map_err(as_usage)?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Comma-separated model codes, or `all`
    #[arg(long, default_value = "all")]
    models: String,
    /// Component counts, `a..b` (inclusive) or a single number
    #[arg(long, default_value = "1..9")]
    g_range: String,
    /// Factor counts, `a..b` (inclusive) or a single number
    #[arg(long, default_value = "1..1")]
    q_range: String,
}

impl ModelArgs {
    fn codes(&self) -> Result<Vec<ModelCode>> {
        parse_models(&self.models)
    }

    fn groups(&self) -> Result<RangeInclusive<usize>> {
        parse_range(&self.g_range, "--g-range")
    }

    fn factors(&self) -> Result<RangeInclusive<usize>> {
        parse_range(&self.q_range, "--q-range")
    }
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Write the JSON results here instead of standard output
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the MAP labels of the selected model as CSV
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitCommand {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    estimation: EstimationArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SearchCommand {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    models: ModelArgs,
    /// bic or icl
    #[arg(long, default_value = "bic")]
    criterion: Criterion,
    #[command(flatten)]
    estimation: EstimationArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct ClassifyCommand {
    #[command(flatten)]
    data: DataArgs,
    /// A single model code
    #[arg(long)]
    models: String,
    /// Factor count, a single number or `q..q`
    #[arg(long, default_value = "1")]
    q_range: String,
    /// Fraction of observations whose labels are revealed in each replicate
    #[arg(long, default_value_t = 0.25)]
    known_frac: f64,
    #[arg(long, default_value_t = 50)]
    replicates: usize,
    #[command(flatten)]
    estimation: EstimationArgs,
    /// Write the JSON results here instead of standard output
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PcaCommand {
    #[command(flatten)]
    data: DataArgs,
    /// One-based component numbers [default: all]
    #[arg(long, value_delimiter = ',')]
    components: Option<Vec<usize>>,
    /// Decompose the covariance instead of the correlation matrix
    #[arg(long)]
    use_covariance: bool,
    /// Write the scores as CSV here; a JSON summary then goes to standard output
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleCommand {
    /// JSON list of components `{weight, mu, alpha, loadings, psi}`;
    /// a built-in two-component bivariate mixture when absent
    #[arg(long)]
    mixture: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of standard output
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreCommand {
    /// Reference labels, one per line
    #[arg(long)]
    truth: PathBuf,
    /// Labels to compare, one per line
    #[arg(long)]
    predicted: PathBuf,
    /// Write the JSON report here instead of standard output
    #[arg(long)]
    output: Option<PathBuf>,
}

/// One component of a mixture description read by `sample`.
///
/// `loadings` lists the rows of the `p × q` loading matrix and `psi` the
/// diagonal of `ωΔ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    pub loadings: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
}

impl MixtureComponent {
    pub fn params(&self) -> Result<SalParams> {
        let p = self.mu.len();
        if self.loadings.len() != p {
            return usage(format!("loadings need {p} rows, got {}", self.loadings.len()));
        }
        let q = self.loadings.first().map_or(0, Vec::len);
        if q == 0 || self.loadings.iter().any(|r| r.len() != q) {
            return usage("loading rows must be nonempty and of equal length");
        }
        let loadings = DMatrix::from_fn(p, q, |i, j| self.loadings[i][j]);
        let scale = ScaleMatrix::from_psi(loadings, &DVector::from_vec(self.psi.clone()))?;
        SalParams::new(
            DVector::from_vec(self.mu.clone()),
            DVector::from_vec(self.alpha.clone()),
            scale,
        )
    }
}

/// Mixture drawn by `sample` without `--mixture`.
pub fn default_mixture() -> Vec<MixtureComponent> {
    vec![
        MixtureComponent {
            weight: 0.5,
            mu: vec![0.0, 0.0],
            alpha: vec![1.0, 0.5],
            loadings: vec![vec![0.5], vec![0.3]],
            psi: vec![0.5, 0.5],
        },
        MixtureComponent {
            weight: 0.5,
            mu: vec![8.0, 6.0],
            alpha: vec![-0.5, 1.0],
            loadings: vec![vec![0.5], vec![0.3]],
            psi: vec![0.5, 0.5],
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub n: usize,
    pub ari: f64,
    pub rand_index: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    pub source: String,
    pub components: Vec<usize>,
    pub use_correlation: bool,
    pub summary: PcaSummary,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    exit_code: i32,
    message: String,
}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(PsalmError::Usage(msg.into()))
}

fn as_usage(e: PsalmError) -> PsalmError {
    match e {
        PsalmError::Domain(m) => PsalmError::Usage(m),
        other => other,
    }
}

/// `a..b`, `a..=b` or `a`, inclusive.
pub fn parse_range(text: &str, flag: &str) -> Result<RangeInclusive<usize>> {
    let bad = || PsalmError::Usage(format!("{flag} expects `a..b` or a number, got `{text}`"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let range = match text.split_once("..") {
        Some((a, b)) => num(a)?..=num(b.strip_prefix('=').unwrap_or(b))?,
        None => {
            let v = num(text)?;
            v..=v
        }
    };
    if range.is_empty() || *range.start() == 0 {
        return usage(format!("{flag} must be a nonempty range of positive counts, got `{text}`"));
    }
    Ok(range)
}

/// A comma-separated list of model codes, or `all`.
pub fn parse_models(text: &str) -> Result<Vec<ModelCode>> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(ModelCode::ALL.to_vec());
    }
    let mut codes = Vec::new();
    for part in text.split(',').filter(|s| !s.trim().is_empty()) {
        let code = ModelCode::parse(part).map_err(|e| PsalmError::Usage(e.to_string()))?;
        if !codes.contains(&code) {
            codes.push(code);
        }
    }
    if codes.is_empty() {
        return usage("--models lists no model codes");
    }
    Ok(codes)
}

fn single<T: Copy + PartialEq + std::fmt::Debug>(range: &RangeInclusive<T>, flag: &str) -> Result<T> {
    if range.start() != range.end() {
        return usage(format!("{flag} must name a single value for this command, got {range:?}"));
    }
    Ok(*range.start())
}

fn evaluate(data: &Dataset, result: &FitResult) -> Result<Option<Evaluation>> {
    let Some(labels) = &data.labels else {
        return Ok(None);
    };
    let truth = Partition::new(labels.clone())?;
    let predicted = Partition::new(result.map_labels.iter().map(|g| g + 1).collect::<Vec<_>>())?;
    Ok(Some(Evaluation {
        ari: adjusted_rand_index(&truth, &predicted)?,
        confusion: confusion_matrix(&truth, &predicted)?,
    }))
}

fn write_or_print(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(path) => fs::write(path, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn finish(out: &mut dyn Write, doc: &ResultsDocument, output: &OutputArgs) -> Result<()> {
    if let (Some(path), Some(best)) = (&output.labels_out, doc.models.first()) {
        let labels: Vec<usize> = best.fit.map_labels.iter().map(|g| g + 1).collect();
        write_labels(&labels, path)?;
    }
    match &output.output {
        Some(path) => {
            write_results(doc, path)?;
            for (rank, m) in doc.models.iter().enumerate().take(10) {
                let ari = m.evaluation.as_ref().map_or(String::new(), |e| format!("  ARI {:.3}", e.ari));
                writeln!(
                    out,
                    "{:>3}  {:<16} loglik {:>12.3}  BIC {:>12.3}  ICL {:>12.3}{ari}",
                    rank + 1,
                    m.fit.spec.to_string(),
                    m.fit.loglik,
                    m.fit.bic,
                    m.fit.icl
                )?;
            }
            if !doc.failures.is_empty() {
                writeln!(out, "{} model(s) failed; see {}", doc.failures.len(), path.display())?;
            }
        }
        None => {
            out.write_all(doc.to_json()?.as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn run_fit(cmd: &FitCommand, out: &mut dyn Write) -> Result<()> {
    let codes = cmd.models.codes()?;
    if codes.len() != 1 {
        return usage("fit takes exactly one model code; use search for several");
    }
    let groups = single(&cmd.models.groups()?, "--g-range")?;
    let factors = single(&cmd.models.factors()?, "--q-range")?;
    let spec = PsalmSpec::new(codes[0], groups, factors).map_err(as_usage)?;
    let config = cmd.estimation.config()?;
    let data = cmd.data.load()?;
    let result = fit(&data.matrix, &spec, &config)?;
    let mut doc = ResultsDocument::new("fit", &config, &data);
    doc.models.push(ModelRecord {
        evaluation: evaluate(&data, &result)?,
        fit: result,
    });
    finish(out, &doc, &cmd.output)
}

fn run_search(cmd: &SearchCommand, out: &mut dyn Write) -> Result<()> {
    let grid = SearchGrid::new(
        cmd.models.codes()?,
        cmd.models.groups()?,
        cmd.models.factors()?,
        cmd.criterion,
    )
    .map_err(as_usage)?;
    let config = cmd.estimation.config()?;
    let data = cmd.data.load()?;
    let search = grid_search(&data.matrix, &grid, &config)?;
    let mut doc = ResultsDocument::new("search", &config, &data);
    doc.criterion = Some(cmd.criterion);
    for result in search.ranked {
        doc.models.push(ModelRecord {
            evaluation: evaluate(&data, &result)?,
            fit: result,
        });
    }
    doc.failures = search
        .failures
        .into_iter()
        .map(|f| FailureRecord {
            spec: f.spec,
            seed: f.seed,
            error: f.result.err().unwrap_or_default(),
        })
        .collect();
    finish(out, &doc, &cmd.output)
}

fn run_classify(cmd: &ClassifyCommand, out: &mut dyn Write) -> Result<()> {
    let codes = parse_models(&cmd.models)?;
    if codes.len() != 1 {
        return usage("classify takes exactly one model code");
    }
    if cmd.data.label_column.is_none() {
        return usage("classify needs --label-column");
    }
    let factors = single(&parse_range(&cmd.q_range, "--q-range")?, "--q-range")?;
    let config = cmd.estimation.config()?;
    let data = cmd.data.load()?;
    let (names, truth) = data.label_codes().expect("labels were requested");
    if names.len() < 2 {
        return usage("classify needs at least two classes");
    }
    let spec = PsalmSpec::new(codes[0], names.len(), factors).map_err(as_usage)?;
    let experiment = ClassificationExperiment {
        known_fraction: cmd.known_frac,
        replicates: cmd.replicates,
        seed: config.seed,
    };
    let result = run_experiment(&data.matrix, &truth, &names, &spec, &experiment, &config)?;
    let mut doc = ResultsDocument::new("classify", &config, &data);
    let summary = format!(
        "{spec}: {} replicates, {:.0}% labelled, held-out ARI {:.3}, accuracy {:.3}\n{}",
        result.replicates.len(),
        100.0 * cmd.known_frac,
        result.ari,
        result.accuracy,
        result.confusion
    );
    doc.experiment = Some(result);
    match &cmd.output {
        Some(path) => {
            write_results(&doc, path)?;
            out.write_all(summary.as_bytes())?;
        }
        None => {
            out.write_all(doc.to_json()?.as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn run_pca(cmd: &PcaCommand, out: &mut dyn Write) -> Result<()> {
    let data = cmd.data.load()?;
    let components: Vec<usize> = match &cmd.components {
        Some(list) => {
            if list.iter().any(|&c| c == 0 || c > data.p()) {
                return usage(format!("--components must lie in 1..={}", data.p()));
            }
            list.iter().map(|c| c - 1).collect()
        }
        None => (0..data.p()).collect(),
    };
    let (scores, summary) = pca_project(&data, &components, !cmd.use_covariance)?;
    match &cmd.output {
        Some(path) => {
            write_table(&scores, fs::File::create(path)?)?;
            let report = PcaReport {
                source: data.provenance.source.clone(),
                components: components.iter().map(|c| c + 1).collect(),
                use_correlation: !cmd.use_covariance,
                summary,
                provenance: scores.provenance,
            };
            out.write_all(serde_json::to_string_pretty(&report)?.as_bytes())?;
            out.write_all(b"\n")?;
        }
        None => write_table(&scores, out)?,
    }
    Ok(())
}

fn run_sample(cmd: &SampleCommand, out: &mut dyn Write) -> Result<()> {
    let mixture: Vec<MixtureComponent> = match &cmd.mixture {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => default_mixture(),
    };
    let components = mixture
        .iter()
        .map(|c| Ok((c.weight, c.params()?)))
        .collect::<Result<Vec<_>>>()?;
    let (matrix, labels) = sample_sal_mixture(&components, cmd.n, cmd.seed)?;
    let p = matrix.ncols();
    let data = Dataset {
        matrix,
        feature_names: (1..=p).map(|j| format!("x{j}")).collect(),
        labels: Some(labels.iter().map(|g| (g + 1).to_string()).collect()),
        provenance: Provenance {
            source: format!("sample n={} seed={}", cmd.n, cmd.seed),
            transforms: Vec::new(),
        },
    };
    match &cmd.output {
        Some(path) => write_table(&data, fs::File::create(path)?),
        None => write_table(&data, out),
    }
}

/// ARI, Rand index and confusion matrix of two label sequences.
pub fn score_labels(truth: &[String], predicted: &[String]) -> Result<ScoreReport> {
    let t = Partition::new(truth.to_vec())?;
    let p = Partition::new(predicted.to_vec())?;
    Ok(ScoreReport {
        n: truth.len(),
        ari: adjusted_rand_index(&t, &p)?,
        rand_index: rand_index(&t, &p)?,
        confusion: confusion_matrix(&t, &p)?,
    })
}

fn run_score(cmd: &ScoreCommand, out: &mut dyn Write) -> Result<()> {
    let report = score_labels(&read_labels(&cmd.truth)?, &read_labels(&cmd.predicted)?)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    write_or_print(out, cmd.output.as_deref(), &text)
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Fit(c) => run_fit(c, out),
        Command::Search(c) => run_search(c, out),
        Command::Classify(c) => run_classify(c, out),
        Command::Pca(c) => run_pca(c, out),
        Command::Sample(c) => run_sample(c, out),
        Command::Score(c) => run_score(c, out),
    }
}

fn report_error(err: &mut dyn Write, kind: &str, exit_code: i32, message: String) -> i32 {
    let report = ErrorReport {
        error: ErrorBody {
            kind,
            exit_code,
            message,
        },
    };
    let text = serde_json::to_string(&report).unwrap_or_else(|_| "{}".into());
    let _ = writeln!(err, "{text}");
    exit_code
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code, writing results to `out` and errors to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(out, "{}", e.render());
            return EXIT_SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
        Err(e) => return report_error(err, "usage", EXIT_USAGE, e.render().to_string().trim().to_string()),
    };
    let outcome = dispatch(&cli, out).and_then(|()| Ok(out.flush()?));
    match outcome {
        Ok(()) => EXIT_SUCCESS,
        Err(PsalmError::Usage(m)) => report_error(err, "usage", EXIT_USAGE, m),
        Err(e) => report_error(err, "runtime", EXIT_FAILURE, e.to_string()),
    }
}

/// [`run_with`] on the process's standard streams.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..9", "--g").unwrap(), 1..=9);
        assert_eq!(parse_range("2..=3", "--g").unwrap(), 2..=3);
        assert_eq!(parse_range("4", "--g").unwrap(), 4..=4);
        for bad in ["0..2", "3..1", "x", "1..y", ""] {
            assert!(matches!(parse_range(bad, "--g"), Err(PsalmError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn model_lists() {
        assert_eq!(parse_models("all").unwrap().len(), 12);
        assert_eq!(parse_models("uccc,UCCC,CCCC").unwrap().len(), 2);
        assert!(matches!(parse_models("UCUX"), Err(PsalmError::Usage(_))));
        assert!(parse_models(",").is_err());
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(["psalm", "score", "--bogus"], &mut out, &mut err);
        assert_eq!(code, EXIT_USAGE);
        let v: serde_json::Value = serde_json::from_slice(&err).unwrap();
        assert_eq!(v["error"]["kind"], "usage");
    }

    #[test]
    fn fit_rejects_several_models() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv = ["psalm", "fit", "--data", "x.csv", "--models", "all", "--g-range", "2"];
        assert_eq!(run_with(argv, &mut out, &mut err), EXIT_USAGE);
    }

    #[test]
    fn missing_file_is_runtime_error() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv = ["psalm", "score", "--truth", "/nonexistent/a", "--predicted", "/nonexistent/b"];
        assert_eq!(run_with(argv, &mut out, &mut err), EXIT_FAILURE);
        let v: serde_json::Value = serde_json::from_slice(&err).unwrap();
        assert_eq!(v["error"]["exit_code"], 2);
    }

    #[test]
    fn help_succeeds() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run_with(["psalm", "--help"], &mut out, &mut err), EXIT_SUCCESS);
        assert!(String::from_utf8(out).unwrap().contains("search"));
    }
}
