//! Data ingestion, preprocessing with a replayable transform log, and the
//! versioned JSON results document.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::classify::ExperimentResult;
use crate::error::{domain, PsalmError, Result};
use crate::estim::{DataMatrix, FitConfig, FitResult};
use crate::family::PsalmSpec;
use crate::metrics::ConfusionMatrix;
use crate::select::Criterion;

/// Version of the results document layout written by [`write_results`].
pub const SCHEMA_VERSION: u32 = 1;

/// Column names of the UCI yeast file, which has no header line.
pub const YEAST_COLUMNS: [&str; 10] = [
    "name", "mcg", "gvh", "alm", "mit", "erl", "pox", "vac", "nuc", "class",
];

const MISSING: [&str; 5] = ["", "NA", "?", "nan", "NaN"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Whitespace,
}

impl FromStr for Format {
    type Err = PsalmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "whitespace" | "ws" => Ok(Format::Whitespace),
            _ => Err(PsalmError::Usage(format!(
                "unknown format `{s}`, expected csv or whitespace"
            ))),
        }
    }
}

/// One preprocessing step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Transform {
    SelectFeatures {
        features: Vec<String>,
    },
    FilterClasses {
        classes: Vec<String>,
        kept: usize,
        dropped: usize,
    },
    DropMissing {
        rows: usize,
    },
    Standardize {
        means: Vec<f64>,
        sds: Vec<f64>,
    },
    /// Scores `((x − center) / scale) · rotation`.
    Project {
        components: Vec<usize>,
        use_correlation: bool,
        center: Vec<f64>,
        scale: Vec<f64>,
        /// One inner vector per retained component.
        rotation: Vec<Vec<f64>>,
        explained: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub transforms: Vec<Transform>,
}

impl Provenance {
    /// Reapplies the numeric steps to a matrix read with the same options.
    pub fn replay(&self, raw: &DataMatrix) -> Result<DataMatrix> {
        let mut m = raw.clone();
        for t in &self.transforms {
            match t {
                Transform::Standardize { means, sds } => {
                    m = affine(&m, means, sds)?;
                }
                Transform::Project {
                    center,
                    scale,
                    rotation,
                    ..
                } => {
                    let scaled = affine(&m, center, scale)?;
                    let rot = DMatrix::from_fn(center.len(), rotation.len(), |i, j| rotation[j][i]);
                    m = scaled * rot;
                }
                _ => {}
            }
        }
        Ok(m)
    }
}

fn affine(m: &DataMatrix, center: &[f64], scale: &[f64]) -> Result<DataMatrix> {
    if center.len() != m.ncols() || scale.len() != m.ncols() {
        return domain("transform does not match the number of columns");
    }
    Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        (m[(i, j)] - center[j]) / scale[j]
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub matrix: DataMatrix,
    pub feature_names: Vec<String>,
    pub labels: Option<Vec<String>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn p(&self) -> usize {
        self.matrix.ncols()
    }

    /// Distinct labels in sorted order and each row's index into them.
    pub fn label_codes(&self) -> Option<(Vec<String>, Vec<usize>)> {
        let labels = self.labels.as_ref()?;
        let mut names = labels.clone();
        names.sort();
        names.dedup();
        let codes = labels
            .iter()
            .map(|l| names.binary_search(l).expect("name is present"))
            .collect();
        Some((names, codes))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReadOptions {
    pub format: Format,
    /// Whether the first line names the columns; defaults to true for CSV
    /// and false for whitespace files.
    pub header: Option<bool>,
    /// Column names for files without a header.
    pub column_names: Option<Vec<String>>,
    pub label_column: Option<String>,
    /// Feature columns by name, or by zero-based index; all non-label
    /// columns when absent.
    pub features: Option<Vec<String>>,
    /// Keep only rows whose label is in this list.
    pub classes: Option<Vec<String>>,
}

fn resolve(name: &str, columns: &[String]) -> Result<usize> {
    if let Some(j) = columns.iter().position(|c| c == name) {
        return Ok(j);
    }
    match name.parse::<usize>() {
        Ok(j) if j < columns.len() => Ok(j),
        _ => domain(format!(
            "unknown column `{name}`; available columns: {}",
            columns.join(", ")
        )),
    }
}

fn read_records(text: &str, format: Format, header: bool) -> Result<(Option<Vec<String>>, Vec<Vec<String>>)> {
    let mut records: Vec<Vec<String>> = match format {
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            reader
                .records()
                .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
                .collect::<std::result::Result<_, _>>()?
        }
        Format::Whitespace => text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect(),
    };
    let names = if header && !records.is_empty() {
        Some(records.remove(0))
    } else {
        None
    };
    Ok((names, records))
}

/// Reads a delimited table into a [`Dataset`].
pub fn read_table(path: impl AsRef<Path>, options: &ReadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut ds = parse_table(&text, options)?;
    ds.provenance.source = path.display().to_string();
    Ok(ds)
}

/// As [`read_table`], from text already in memory.
pub fn parse_table(text: &str, options: &ReadOptions) -> Result<Dataset> {
    let header = options.header.unwrap_or(options.format == Format::Csv);
    let (names, records) = read_records(text, options.format, header)?;
    let width = names
        .as_ref()
        .map(|n| n.len())
        .or_else(|| records.first().map(|r| r.len()))
        .unwrap_or(0);
    let columns: Vec<String> = match (&options.column_names, names) {
        (Some(given), _) => given.clone(),
        (None, Some(n)) => n,
        (None, None) => (0..width).map(|j| format!("V{}", j + 1)).collect(),
    };
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != columns.len() {
            return Err(PsalmError::Parse {
                row: r + 1,
                column: String::new(),
                reason: format!("expected {} fields, found {}", columns.len(), rec.len()),
            });
        }
    }
    let label_idx = options
        .label_column
        .as_deref()
        .map(|l| resolve(l, &columns))
        .transpose()?;
    let feature_idx: Vec<usize> = match &options.features {
        Some(fs) => fs.iter().map(|f| resolve(f, &columns)).collect::<Result<_>>()?,
        None => (0..columns.len()).filter(|&j| Some(j) != label_idx).collect(),
    };
    if feature_idx.is_empty() {
        return domain("no feature columns selected");
    }
    let feature_names: Vec<String> = feature_idx.iter().map(|&j| columns[j].clone()).collect();
    let mut transforms = vec![Transform::SelectFeatures {
        features: feature_names.clone(),
    }];

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut missing = 0;
    let mut dropped = 0;
    'rows: for (r, rec) in records.iter().enumerate() {
        if let Some(l) = label_idx {
            if let Some(keep) = &options.classes {
                if !keep.contains(&rec[l]) {
                    dropped += 1;
                    continue;
                }
            }
        }
        let mut row = Vec::with_capacity(feature_idx.len());
        for &j in &feature_idx {
            let cell = rec[j].as_str();
            if MISSING.contains(&cell) {
                missing += 1;
                continue 'rows;
            }
            let v: f64 = cell.parse().map_err(|_| PsalmError::Parse {
                row: r + 1,
                column: columns[j].clone(),
                reason: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                missing += 1;
                continue 'rows;
            }
            row.push(v);
        }
        if let Some(l) = label_idx {
            if MISSING.contains(&rec[l].as_str()) {
                missing += 1;
                continue;
            }
            labels.push(rec[l].clone());
        }
        values.push(row);
    }
    if let Some(keep) = &options.classes {
        if label_idx.is_none() {
            return Err(PsalmError::Usage("class filtering needs a label column".into()));
        }
        transforms.push(Transform::FilterClasses {
            classes: keep.clone(),
            kept: values.len() + missing,
            dropped,
        });
    }
    if missing > 0 {
        transforms.push(Transform::DropMissing { rows: missing });
    }
    if values.is_empty() {
        return domain("no complete rows remain");
    }
    let p = feature_idx.len();
    let matrix = DMatrix::from_fn(values.len(), p, |i, j| values[i][j]);
    Ok(Dataset {
        matrix,
        feature_names,
        labels: label_idx.map(|_| labels),
        provenance: Provenance {
            source: String::new(),
            transforms,
        },
    })
}

/// Column means and population standard deviations (divisor `n`).
fn column_moments(m: &DataMatrix, names: &[String]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = m.nrows() as f64;
    let means: Vec<f64> = m.column_iter().map(|c| c.sum() / n).collect();
    let mut sds = Vec::with_capacity(m.ncols());
    for (j, c) in m.column_iter().enumerate() {
        let var = c.iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / n;
        if !(var > 0.0) {
            return domain(format!("column `{}` has zero variance", names[j]));
        }
        sds.push(var.sqrt());
    }
    Ok((means, sds))
}

/// Centres each column and scales it to unit population variance.
pub fn standardize(data: &Dataset) -> Result<Dataset> {
    let (means, sds) = column_moments(&data.matrix, &data.feature_names)?;
    let matrix = affine(&data.matrix, &means, &sds)?;
    let mut out = data.clone();
    out.matrix = matrix;
    out.provenance
        .transforms
        .push(Transform::Standardize { means, sds });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    /// Fraction of total variance carried by every component, largest first.
    pub explained: Vec<f64>,
    /// Unit eigenvectors as columns, one per component, largest first.
    pub rotation: DMatrix<f64>,
}

/// Principal component scores on the requested zero-based components.
///
/// Eigenvectors are signed so that their largest-magnitude entry is
/// positive.
pub fn pca_project(
    data: &Dataset,
    components: &[usize],
    use_correlation: bool,
) -> Result<(Dataset, PcaSummary)> {
    let p = data.p();
    if components.is_empty() {
        return domain("select at least one component");
    }
    if let Some(&c) = components.iter().find(|&&c| c >= p) {
        return domain(format!("component index {c} out of range for {p} variables"));
    }
    let (center, sds) = column_moments(&data.matrix, &data.feature_names)?;
    let scale = if use_correlation {
        sds
    } else {
        vec![1.0; p]
    };
    let x = affine(&data.matrix, &center, &scale)?;
    let cov = x.transpose() * &x / data.n() as f64;
    let eig = SymmetricEigen::new((&cov + cov.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut rotation = DMatrix::zeros(p, p);
    for (k, &j) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(j).into_owned();
        if v[v.iamax()] < 0.0 {
            v.neg_mut();
        }
        rotation.set_column(k, &v);
    }
    let explained: Vec<f64> = order
        .iter()
        .map(|&j| eig.eigenvalues[j].max(0.0) / total)
        .collect();
    let chosen = DMatrix::from_fn(p, components.len(), |i, k| rotation[(i, components[k])]);
    let mut out = data.clone();
    out.matrix = &x * &chosen;
    out.feature_names = components.iter().map(|c| format!("PC{}", c + 1)).collect();
    out.provenance.transforms.push(Transform::Project {
        components: components.to_vec(),
        use_correlation,
        center,
        scale,
        rotation: chosen.column_iter().map(|c| c.iter().copied().collect()).collect(),
        explained: components.iter().map(|&c| explained[c]).collect(),
    });
    Ok((out, PcaSummary { explained, rotation }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub n: usize,
    pub p: usize,
    pub feature_names: Vec<String>,
    pub transforms: Vec<Transform>,
}

impl From<&Dataset> for DataSummary {
    fn from(d: &Dataset) -> Self {
        Self {
            source: d.provenance.source.clone(),
            n: d.n(),
            p: d.p(),
            feature_names: d.feature_names.clone(),
            transforms: d.provenance.transforms.clone(),
        }
    }
}

/// Agreement of a fitted partition with known labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ari: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub fit: FitResult,
    pub evaluation: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub spec: PsalmSpec,
    pub seed: u64,
    pub error: String,
}

/// Everything written by the command-line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub schema_version: u32,
    pub command: String,
    pub config: FitConfig,
    pub data: DataSummary,
    pub criterion: Option<Criterion>,
    /// Fitted models, best first under `criterion`.
    pub models: Vec<ModelRecord>,
    pub failures: Vec<FailureRecord>,
    pub experiment: Option<ExperimentResult>,
}

impl ResultsDocument {
    pub fn new(command: &str, config: &FitConfig, data: &Dataset) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config: config.clone(),
            data: data.into(),
            criterion: None,
            models: Vec::new(),
            failures: Vec::new(),
            experiment: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => Ok(serde_json::from_value(value)?),
            Some(v) => domain(format!(
                "results schema version {v} is not supported (expected {SCHEMA_VERSION})"
            )),
            None => domain("results document has no schema_version"),
        }
    }
}

pub fn write_results(doc: &ResultsDocument, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, doc.to_json()? + "\n")?;
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<ResultsDocument> {
    ResultsDocument::from_json(&fs::read_to_string(path)?)
}

/// One label per line under a `label` header.
pub fn write_labels<T: ToString>(labels: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("label\n");
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the features, and the labels under a `label` column when present,
/// as CSV with a header. Values use the shortest round-trip representation.
pub fn write_table<W: std::io::Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = data.feature_names.clone();
    if data.labels.is_some() {
        header.push("label".to_string());
    }
    out.write_record(&header)?;
    for i in 0..data.n() {
        let mut record: Vec<String> = data.matrix.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(labels) = &data.labels {
            record.push(labels[i].clone());
        }
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a single-column label file, with or without a `label` header.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).peekable();
    if lines.peek() == Some(&"label") {
        lines.next();
    }
    Ok(lines.map(str::to_string).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn opts() -> ReadOptions {
        ReadOptions::default()
    }

    #[test]
    fn csv_with_labels_and_subset() {
        let text = "a,b,cls\n1,2,x\n3,4,y\n5,6,x\n";
        let ds = parse_table(
            text,
            &ReadOptions {
                label_column: Some("cls".into()),
                features: Some(vec!["b".into()]),
                ..opts()
            },
        )
        .unwrap();
        assert_eq!(ds.matrix.shape(), (3, 1));
        assert_eq!(ds.matrix[(2, 0)], 6.0);
        assert_eq!(ds.labels.as_deref().unwrap(), ["x", "y", "x"]);
        let (names, codes) = ds.label_codes().unwrap();
        assert_eq!(names, ["x", "y"]);
        assert_eq!(codes, [0, 1, 0]);
    }

    #[test]
    fn bad_cell_is_named() {
        let err = parse_table("a,b\n1,2\n3,oops\n", &opts()).unwrap_err();
        match err {
            PsalmError::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other}"),
        }
        let err = parse_table(
            "a,b\n1,2\n",
            &ReadOptions {
                features: Some(vec!["c".into()]),
                ..opts()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("a, b"));
    }

    #[test]
    fn whitespace_with_class_filter_and_missing() {
        let text = "s1 0.1 0.2 CYT\ns2 0.3 ? ME3\ns3 0.5 0.6 NUC\ns4 0.7 0.8 ME3\n";
        let ds = parse_table(
            text,
            &ReadOptions {
                format: Format::Whitespace,
                column_names: Some(vec!["name".into(), "u".into(), "v".into(), "class".into()]),
                label_column: Some("class".into()),
                features: Some(vec!["u".into(), "v".into()]),
                classes: Some(vec!["CYT".into(), "ME3".into()]),
                ..opts()
            },
        )
        .unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.labels.unwrap(), ["CYT", "ME3"]);
        assert!(ds
            .provenance
            .transforms
            .contains(&Transform::DropMissing { rows: 1 }));
    }

    #[test]
    fn standardize_examples() {
        let ds = parse_table("x\n0\n2\n", &opts()).unwrap();
        let s = standardize(&ds).unwrap();
        assert_eq!(s.matrix.column(0).as_slice(), [-1.0, 1.0]);
        let again = standardize(&s).unwrap();
        assert!((again.matrix.clone() - s.matrix.clone()).amax() < 1e-12);
        assert!(standardize(&parse_table("x,y\n1,3\n2,3\n", &opts()).unwrap()).is_err());
    }

    #[test]
    fn pca_preserves_distances_and_replays() {
        let text = "a,b,c\n1,2,0.5\n2,1,1.5\n4,3,-1\n0,5,2\n3,3,3\n";
        let ds = parse_table(text, &opts()).unwrap();
        let (proj, summary) = pca_project(&ds, &[0, 1, 2], false).unwrap();
        assert_relative_eq!(summary.explained.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        for i in 0..ds.n() {
            for k in 0..ds.n() {
                let d0 = (ds.matrix.row(i) - ds.matrix.row(k)).norm();
                let d1 = (proj.matrix.row(i) - proj.matrix.row(k)).norm();
                assert_relative_eq!(d0, d1, epsilon = 1e-10);
            }
        }
        let replayed = proj.provenance.replay(&ds.matrix).unwrap();
        assert!((replayed - &proj.matrix).amax() < 1e-12);
        assert!(pca_project(&ds, &[3], true).is_err());
    }
}
