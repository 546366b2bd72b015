//! Tabular datasets with a misclassification indicator.
//!
//! A [`Dataset`] is a set of typed feature columns plus the boolean column
//! `theta` (true = the model misclassified the row). Numeric columns hold
//! `Option<f64>`, categorical columns hold `Option<u32>` codes into the
//! schema's category table; `None` is a missing value.
//!
//! On disk a dataset is a CSV file (header row required) paired with a JSON
//! schema sidecar:
//!
//! ```json
//! {
//!   "features": [{"name": "age", "kind": "numeric"}, {"name": "region", "kind": "categorical"}],
//!   "indicator": "misclassified",
//!   "categories": {"region": ["west", "east"]}
//! }
//! ```
//!
//! Category codes are positions in the `categories` label list. Labels not
//! yet present are appended in first-seen order while loading, so loading a
//! deployment file with the baseline's sidecar keeps codes aligned.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureKind::Numeric => f.write_str("numeric"),
            FeatureKind::Categorical => f.write_str("categorical"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
        }
    }
}

/// Ordered feature list, indicator column name and category code tables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub indicator: String,
    #[serde(default)]
    pub categories: BTreeMap<String, Vec<String>>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, indicator: impl Into<String>) -> Result<Self> {
        let schema = Self {
            features,
            indicator: indicator.into(),
            categories: BTreeMap::new(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_categories(mut self, feature: &str, labels: Vec<String>) -> Result<Self> {
        self.categories.insert(feature.to_string(), labels);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature `{}`", f.name)));
            }
        }
        if seen.contains(self.indicator.as_str()) {
            return Err(Error::Schema(format!(
                "indicator column `{}` is also a feature",
                self.indicator
            )));
        }
        for (name, labels) in &self.categories {
            match self.feature(name) {
                Some((_, FeatureKind::Categorical)) => {}
                Some(_) => {
                    return Err(Error::Schema(format!(
                        "category table given for numeric feature `{name}`"
                    )))
                }
                None => {
                    return Err(Error::Schema(format!(
                        "category table given for unknown feature `{name}`"
                    )))
                }
            }
            let distinct: HashSet<_> = labels.iter().collect();
            if distinct.len() != labels.len() {
                return Err(Error::Schema(format!(
                    "duplicate category labels for `{name}`"
                )));
            }
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Index and kind of the named feature.
    pub fn feature(&self, name: &str) -> Option<(usize, FeatureKind)> {
        self.features
            .iter()
            .enumerate()
            .find(|(_, f)| f.name == name)
            .map(|(i, f)| (i, f.kind))
    }

    pub fn labels(&self, feature: &str) -> &[String] {
        self.categories
            .get(feature)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let schema: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<u32>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            Column::Numeric(_) => FeatureKind::Numeric,
            Column::Categorical(_) => FeatureKind::Categorical,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_none(),
            Column::Categorical(v) => v[row].is_none(),
        }
    }

    /// Whether rows `a` and `b` hold the same value (missing equals missing).
    pub fn same_value(&self, a: usize, b: usize) -> bool {
        match self {
            Column::Numeric(v) => match (v[a], v[b]) {
                (Some(x), Some(y)) => x.to_bits() == y.to_bits() || x == y,
                (None, None) => true,
                _ => false,
            },
            Column::Categorical(v) => v[a] == v[b],
        }
    }

    pub fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Categorical(v) => Column::Categorical(rows.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Move values so that `row_targets[j]` receives the old value at `row_sources[j]`.
    pub(crate) fn scatter(&mut self, row_targets: &[usize], row_sources: &[usize]) {
        fn apply<T: Copy>(v: &mut [T], targets: &[usize], sources: &[usize]) {
            let taken: Vec<T> = sources.iter().map(|&s| v[s]).collect();
            for (&t, x) in targets.iter().zip(taken) {
                v[t] = x;
            }
        }
        match self {
            Column::Numeric(v) => apply(v, row_targets, row_sources),
            Column::Categorical(v) => apply(v, row_targets, row_sources),
        }
    }
}

/// A feature table with an optional misclassification indicator.
///
/// `theta` is `None` for deployment data loaded without labels. Datasets are
/// immutable once built; transformations return new datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Arc<FeatureSchema>,
    columns: Vec<Column>,
    theta: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, columns: Vec<Column>, theta: Option<Vec<bool>>) -> Result<Self> {
        schema.validate()?;
        Self::from_parts(Arc::new(schema), columns, theta)
    }

    fn from_parts(
        schema: Arc<FeatureSchema>,
        columns: Vec<Column>,
        theta: Option<Vec<bool>>,
    ) -> Result<Self> {
        if columns.len() != schema.num_features() {
            return Err(Error::Schema(format!(
                "expected {} columns, got {}",
                schema.num_features(),
                columns.len()
            )));
        }
        let n = theta
            .as_ref()
            .map(Vec::len)
            .or_else(|| columns.first().map(Column::len))
            .unwrap_or(0);
        for (spec, col) in schema.features.iter().zip(&columns) {
            if spec.kind != col.kind() {
                return Err(Error::Schema(format!(
                    "column `{}` is {} but schema says {}",
                    spec.name,
                    col.kind(),
                    spec.kind
                )));
            }
            if col.len() != n {
                return Err(Error::Schema(format!(
                    "column `{}` has {} rows, expected {n}",
                    spec.name,
                    col.len()
                )));
            }
        }
        Ok(Self {
            schema,
            columns,
            theta,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [Column] {
        &mut self.columns
    }

    /// Number of rows, `N`.
    pub fn len(&self) -> usize {
        match (&self.theta, self.columns.first()) {
            (Some(t), _) => t.len(),
            (None, Some(c)) => c.len(),
            (None, None) => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self) -> Option<&[bool]> {
        self.theta.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.theta.is_some()
    }

    /// The indicator column, or [`Error::Unlabeled`].
    pub fn labels(&self) -> Result<&[bool]> {
        self.theta.as_deref().ok_or(Error::Unlabeled)
    }

    /// Number of misclassified rows, `M`.
    pub fn num_misclassified(&self) -> Result<usize> {
        Ok(self.labels()?.iter().filter(|&&t| t).count())
    }

    pub fn misclassification_rate(&self) -> Result<f64> {
        let m = self.num_misclassified()?;
        if self.is_empty() {
            return Err(Error::DegenerateInput("empty dataset has no MCR".into()));
        }
        Ok(m as f64 / self.len() as f64)
    }

    /// Rows at `indices`, in that order; indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            columns: self.columns.iter().map(|c| c.select(indices)).collect(),
            theta: self
                .theta
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }

    /// Copy with the indicator column removed.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            columns: self.columns.clone(),
            theta: None,
        }
    }

    /// Copy with the indicator column replaced.
    pub fn with_labels(&self, theta: Vec<bool>) -> Result<Dataset> {
        if theta.len() != self.len() {
            return Err(Error::Schema(format!(
                "indicator has {} rows, dataset has {}",
                theta.len(),
                self.len()
            )));
        }
        Ok(Dataset {
            schema: Arc::clone(&self.schema),
            columns: self.columns.clone(),
            theta: Some(theta),
        })
    }

    /// Drop features whose minority count (non-missing values that differ
    /// from the column's most frequent value) is below `min_minority_count`.
    pub fn drop_low_variance(&self, min_minority_count: usize) -> Result<Dataset> {
        let keep: Vec<usize> = (0..self.columns.len())
            .filter(|&i| minority_count(&self.columns[i]) >= min_minority_count)
            .collect();
        if keep.is_empty() {
            return Err(Error::DegenerateInput(format!(
                "every feature has fewer than {min_minority_count} minority values"
            )));
        }
        let features: Vec<FeatureSpec> = keep
            .iter()
            .map(|&i| self.schema.features[i].clone())
            .collect();
        let categories = self
            .schema
            .categories
            .iter()
            .filter(|(name, _)| features.iter().any(|f| &f.name == *name))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let schema = FeatureSchema {
            features,
            indicator: self.schema.indicator.clone(),
            categories,
        };
        let columns = keep.iter().map(|&i| self.columns[i].clone()).collect();
        Dataset::new(schema, columns, self.theta.clone())
    }
}

fn minority_count(col: &Column) -> usize {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    let mut present = 0;
    match col {
        Column::Numeric(v) => {
            for x in v.iter().flatten() {
                // +0.0 and -0.0 count as one value
                let key = if *x == 0.0 { 0 } else { x.to_bits() };
                *counts.entry(key).or_default() += 1;
                present += 1;
            }
        }
        Column::Categorical(v) => {
            for x in v.iter().flatten() {
                *counts.entry(u64::from(*x)).or_default() += 1;
                present += 1;
            }
        }
    }
    present - counts.values().copied().max().unwrap_or(0)
}

fn parse_indicator(field: &str, row: usize) -> Result<bool> {
    match field.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::Parse {
            row,
            message: format!("indicator value `{other}` is not one of 0/1/true/false"),
        }),
    }
}

fn parse_numeric(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok().filter(|x| !x.is_nan())
}

/// Load a labeled dataset. The indicator column must be present.
///
/// Numeric fields that do not parse become missing; empty categorical
/// fields are missing. Error rows are 0-based data-row indices.
pub fn load_dataset(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    read_csv(path.as_ref(), schema, true)
}

/// Load a dataset without reading the indicator column, even if present.
pub fn load_unlabeled(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    read_csv(path.as_ref(), schema, false)
}

fn read_csv(path: &Path, schema: &FeatureSchema, labeled: bool) -> Result<Dataset> {
    schema.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));
    let headers = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` missing from {}", path.display())))
    };
    let feature_pos: Vec<usize> = schema
        .features
        .iter()
        .map(|f| position(&f.name))
        .collect::<Result<_>>()?;
    let indicator_pos = if labeled {
        Some(position(&schema.indicator)?)
    } else {
        None
    };

    let mut schema = schema.clone();
    let mut lookups: Vec<HashMap<String, u32>> = schema
        .features
        .iter()
        .map(|f| {
            schema
                .labels(&f.name)
                .iter()
                .enumerate()
                .map(|(i, l)| (l.clone(), i as u32))
                .collect()
        })
        .collect();
    let mut columns: Vec<Column> = schema
        .features
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Numeric => Column::Numeric(Vec::new()),
            FeatureKind::Categorical => Column::Categorical(Vec::new()),
        })
        .collect();
    let mut theta = Vec::new();

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (j, &pos) in feature_pos.iter().enumerate() {
            let field = record.get(pos).unwrap_or("");
            match &mut columns[j] {
                Column::Numeric(v) => v.push(parse_numeric(field)),
                Column::Categorical(v) => {
                    if field.is_empty() {
                        v.push(None);
                        continue;
                    }
                    let lookup = &mut lookups[j];
                    let code = match lookup.get(field) {
                        Some(&c) => c,
                        None => {
                            let name = &schema.features[j].name;
                            let labels = schema.categories.entry(name.clone()).or_default();
                            let c = labels.len() as u32;
                            labels.push(field.to_string());
                            lookup.insert(field.to_string(), c);
                            c
                        }
                    };
                    v.push(Some(code));
                }
            }
        }
        if let Some(pos) = indicator_pos {
            theta.push(parse_indicator(record.get(pos).unwrap_or(""), row)?);
        }
    }
    let theta = labeled.then_some(theta);
    Dataset::new(schema, columns, theta)
}

/// Write `d` as CSV (features, then the indicator when labeled) plus its
/// schema sidecar.
pub fn save_dataset(d: &Dataset, csv_path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<()> {
    write_csv(d, csv_path.as_ref())?;
    d.schema().to_json_file(schema_path)
}

pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let schema = d.schema();
    let mut header: Vec<&str> = schema.features.iter().map(|f| f.name.as_str()).collect();
    if d.is_labeled() {
        header.push(&schema.indicator);
    }
    w.write_record(&header)?;
    let labels: Vec<&[String]> = schema.features.iter().map(|f| schema.labels(&f.name)).collect();
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for row in 0..d.len() {
        record.clear();
        for (j, col) in d.columns().iter().enumerate() {
            record.push(match col {
                Column::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
                Column::Categorical(v) => v[row]
                    .map(|c| labels[j].get(c as usize).cloned().unwrap_or_else(|| c.to_string()))
                    .unwrap_or_default(),
            });
        }
        if let Some(t) = d.theta() {
            record.push(if t[row] { "1".into() } else { "0".into() });
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Baseline/deployment halves of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPair {
    pub baseline: Dataset,
    pub deployment: Dataset,
    pub seed: u64,
    pub split_index: usize,
}

/// Stratified 50-50 split on the indicator.
///
/// Each stratum is shuffled and halved; when a stratum has odd size its
/// extra row goes to a side picked by a seeded coin. If both strata are odd
/// the two extras go to opposite sides so the halves differ by at most one
/// row. Each side is then shuffled.
pub fn stratified_split(d: &Dataset, seed: u64) -> Result<SplitPair> {
    let theta = d.labels()?;
    if d.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "stratified split needs at least 2 rows, got {}",
            d.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let (mut wrong, mut right): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| theta[i]);
    wrong.shuffle(&mut rng);
    right.shuffle(&mut rng);
    let wrong_extra_first: bool = rng.random();
    let mut right_extra_first: bool = rng.random();
    if wrong.len() % 2 == 1 && right.len() % 2 == 1 {
        right_extra_first = !wrong_extra_first;
    }
    let cut = |len: usize, extra_first: bool| {
        if len % 2 == 1 && extra_first {
            len / 2 + 1
        } else {
            len / 2
        }
    };
    let wc = cut(wrong.len(), wrong_extra_first);
    let rc = cut(right.len(), right_extra_first);

    let mut first: Vec<usize> = wrong[..wc].iter().chain(&right[..rc]).copied().collect();
    let mut second: Vec<usize> = wrong[wc..].iter().chain(&right[rc..]).copied().collect();
    first.shuffle(&mut rng);
    second.shuffle(&mut rng);

    Ok(SplitPair {
        baseline: d.select_rows(&first),
        deployment: d.select_rows(&second),
        seed,
        split_index: 0,
    })
}

/// Draw `N` rows uniformly with replacement.
pub fn resample_rows(d: &Dataset, seed: u64) -> Result<Dataset> {
    let n = d.len();
    if n == 0 {
        return Err(Error::DegenerateInput("cannot resample an empty dataset".into()));
    }
    let mut rng = rng_from_seed(seed);
    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    Ok(d.select_rows(&rows))
}
