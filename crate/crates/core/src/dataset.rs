//! Tabular loan data: schema, CSV ingestion, missing-row filtering, one-hot
//! encoding and stratified splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
    /// Present in the file but not used as a feature (free text, dates).
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    pub allowed_categories: Option<Vec<String>>,
}

impl ColumnSchema {
    pub fn numeric(name: &str) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Numeric,
            allowed_categories: None,
        }
    }

    pub fn categorical(name: &str, allowed: Option<&[&str]>) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Categorical,
            allowed_categories: allowed.map(|a| a.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn label(name: &str) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Label,
            allowed_categories: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self> {
        let labels = columns.iter().filter(|c| c.kind == ColumnKind::Label).count();
        if labels != 1 {
            return Err(Error::Schema(format!(
                "exactly one label column required, found {labels}"
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name {}", c.name)));
            }
            if c.allowed_categories.is_some() && c.kind != ColumnKind::Categorical {
                return Err(Error::Schema(format!(
                    "column {} lists categories but is not categorical",
                    c.name
                )));
            }
        }
        Ok(Schema { columns })
    }

    /// Parses `name,kind[,cat1|cat2|...]` lines. Blank lines and `#` comments
    /// are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut columns = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let name = parts.next().unwrap_or("").trim();
            let kind = parts
                .next()
                .map(str::trim)
                .ok_or_else(|| Error::Schema(format!("line {}: expected name,kind", lineno + 1)))?;
            if name.is_empty() {
                return Err(Error::Schema(format!("line {}: empty column name", lineno + 1)));
            }
            let kind = match kind.to_ascii_lowercase().as_str() {
                "numeric" => ColumnKind::Numeric,
                "categorical" => ColumnKind::Categorical,
                "label" => ColumnKind::Label,
                "skip" => ColumnKind::Skip,
                other => return Err(Error::Schema(format!("line {}: unknown kind {other:?}", lineno + 1))),
            };
            let allowed_categories = parts.next().map(|cats| {
                cats.split('|')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect::<Vec<_>>()
            });
            columns.push(ColumnSchema {
                name: name.to_string(),
                kind,
                allowed_categories,
            });
        }
        Schema::new(columns)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::parse(&text)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.columns {
            let kind = match c.kind {
                ColumnKind::Numeric => "numeric",
                ColumnKind::Categorical => "categorical",
                ColumnKind::Label => "label",
                ColumnKind::Skip => "skip",
            };
            match &c.allowed_categories {
                Some(cats) => writeln!(out, "{},{},{}", c.name, kind, cats.join("|")),
                None => writeln!(out, "{},{}", c.name, kind),
            }
            .expect("write to string");
        }
        out
    }

    pub fn label_column(&self) -> &ColumnSchema {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .expect("validated schema has a label column")
    }
}

/// Maps the two label strings onto {0, 1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub negative: String,
    pub positive: String,
}

impl Default for LabelMapping {
    fn default() -> Self {
        LabelMapping {
            negative: "Charged Off".to_string(),
            positive: "Fully Paid".to_string(),
        }
    }
}

impl LabelMapping {
    fn map(&self, raw: &str) -> Result<u8> {
        let v = raw.trim();
        if v == self.negative {
            Ok(0)
        } else if v == self.positive {
            Ok(1)
        } else {
            Err(Error::UnknownLabel(v.to_string()))
        }
    }
}

/// Empty string, `NA`, `NaN` or `null`, case-insensitively.
pub fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnData {
    fn is_missing(&self, i: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[i].is_none(),
            ColumnData::Categorical(v) => v[i].is_none(),
        }
    }

    fn retain(&self, keep: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(keep.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => ColumnData::Categorical(keep.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

/// Column-typed loan table. Feature columns are stored in schema order with
/// skipped and label columns removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub features: Vec<(ColumnSchema, ColumnData)>,
    pub label: Vec<Option<u8>>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.label.len()
    }

    pub fn row_has_missing(&self, i: usize) -> bool {
        self.label[i].is_none() || self.features.iter().any(|(_, c)| c.is_missing(i))
    }

    pub fn labels(&self) -> Result<Vec<u8>> {
        self.label
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::Empty(format!("row {i} has no label"))))
            .collect()
    }
}

pub fn ingest_csv(path: &Path, schema: &Schema, mapping: &LabelMapping) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, schema, mapping)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &Schema, mapping: &LabelMapping) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let expected: BTreeSet<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    let found: BTreeSet<&str> = header.iter().map(String::as_str).collect();
    if expected != found || header.len() != schema.columns.len() {
        return Err(Error::HeaderMismatch {
            expected: schema.columns.iter().map(|c| c.name.clone()).collect(),
            found: header,
        });
    }
    let position: BTreeMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();

    let feature_cols: Vec<&ColumnSchema> = schema
        .columns
        .iter()
        .filter(|c| matches!(c.kind, ColumnKind::Numeric | ColumnKind::Categorical))
        .collect();
    let mut data: Vec<ColumnData> = feature_cols
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Numeric => ColumnData::Numeric(Vec::new()),
            _ => ColumnData::Categorical(Vec::new()),
        })
        .collect();
    let label_pos = position[schema.label_column().name.as_str()];
    let mut label = Vec::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (col, store) in feature_cols.iter().zip(data.iter_mut()) {
            let cell = record.get(position[col.name.as_str()]).unwrap_or("");
            match store {
                ColumnData::Numeric(v) => {
                    if is_missing(cell) {
                        v.push(None);
                    } else {
                        let parsed: f64 = cell.trim().parse().map_err(|_| Error::BadCell {
                            row,
                            column: col.name.clone(),
                            value: cell.to_string(),
                        })?;
                        if !parsed.is_finite() {
                            return Err(Error::BadCell {
                                row,
                                column: col.name.clone(),
                                value: cell.to_string(),
                            });
                        }
                        v.push(Some(parsed));
                    }
                }
                ColumnData::Categorical(v) => {
                    v.push((!is_missing(cell)).then(|| cell.trim().to_string()));
                }
            }
        }
        let raw = record.get(label_pos).unwrap_or("");
        label.push(if is_missing(raw) { None } else { Some(mapping.map(raw)?) });
    }

    Ok(Dataset {
        schema: schema.clone(),
        features: feature_cols.into_iter().cloned().zip(data).collect(),
        label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropSummary {
    pub rows_before: usize,
    pub rows_after: usize,
}

impl DropSummary {
    pub fn retained_fraction(&self) -> f64 {
        if self.rows_before == 0 {
            0.0
        } else {
            self.rows_after as f64 / self.rows_before as f64
        }
    }
}

/// Removes every row with a missing cell (label included).
pub fn drop_missing(d: &Dataset) -> Result<(Dataset, DropSummary)> {
    let keep: Vec<usize> = (0..d.n_rows()).filter(|&i| !d.row_has_missing(i)).collect();
    if keep.is_empty() {
        return Err(Error::Empty("all rows contain missing values".into()));
    }
    let summary = DropSummary {
        rows_before: d.n_rows(),
        rows_after: keep.len(),
    };
    log::info!(
        "drop_missing retained {}/{} rows ({:.2}%)",
        summary.rows_after,
        summary.rows_before,
        100.0 * summary.retained_fraction()
    );
    Ok((
        Dataset {
            schema: d.schema.clone(),
            features: d.features.iter().map(|(s, c)| (s.clone(), c.retain(&keep))).collect(),
            label: keep.iter().map(|&i| d.label[i]).collect(),
        },
        summary,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroupKind {
    Numeric,
    Categorical { categories: Vec<String> },
}

/// Contiguous block of encoded columns originating from one raw column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub column: String,
    pub kind: GroupKind,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatrix {
    pub x: Matrix,
    pub feature_names: Vec<String>,
    pub y: Vec<u8>,
    pub groups: Vec<FeatureGroup>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn select_rows(&self, indices: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            x: self.x.select_rows(indices),
            feature_names: self.feature_names.clone(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            groups: self.groups.clone(),
        }
    }

    /// Encoded column indices holding raw numeric features.
    pub fn numeric_columns(&self) -> Vec<usize> {
        self.groups
            .iter()
            .filter(|g| g.kind == GroupKind::Numeric)
            .map(|g| g.start)
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.feature_names.clone();
        header.push("label".into());
        w.write_record(&header)?;
        for (i, row) in self.x.iter_rows().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Artifact(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Artifact(e.to_string()))
    }
}

/// Fitted one-hot layout. Categories are sorted lexicographically so column
/// order does not depend on row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub groups: Vec<FeatureGroup>,
    pub feature_names: Vec<String>,
}

impl Encoder {
    pub fn fit(d: &Dataset) -> Result<Encoder> {
        let mut groups = Vec::new();
        let mut feature_names = Vec::new();
        for (schema, data) in &d.features {
            let start = feature_names.len();
            match data {
                ColumnData::Numeric(_) => {
                    feature_names.push(schema.name.clone());
                    groups.push(FeatureGroup {
                        column: schema.name.clone(),
                        kind: GroupKind::Numeric,
                        start,
                        len: 1,
                    });
                }
                ColumnData::Categorical(values) => {
                    let observed: BTreeSet<&str> = values.iter().flatten().map(String::as_str).collect();
                    let categories: Vec<String> = match &schema.allowed_categories {
                        Some(allowed) => {
                            let allowed_set: BTreeSet<&str> = allowed.iter().map(String::as_str).collect();
                            if let Some(bad) = observed.iter().find(|v| !allowed_set.contains(*v)) {
                                return Err(Error::UnknownCategory {
                                    column: schema.name.clone(),
                                    value: bad.to_string(),
                                });
                            }
                            allowed_set.into_iter().map(str::to_string).collect()
                        }
                        None => observed.into_iter().map(str::to_string).collect(),
                    };
                    for c in &categories {
                        feature_names.push(format!("{}={}", schema.name, c));
                    }
                    groups.push(FeatureGroup {
                        column: schema.name.clone(),
                        kind: GroupKind::Categorical {
                            categories: categories.clone(),
                        },
                        start,
                        len: categories.len(),
                    });
                }
            }
        }
        Ok(Encoder { groups, feature_names })
    }

    /// Encodes a missing-free dataset. Categories unseen at fit time produce
    /// an all-zero indicator group.
    pub fn transform(&self, d: &Dataset) -> Result<EncodedMatrix> {
        let n = d.n_rows();
        let dim = self.feature_names.len();
        let mut x = Matrix::zeros(n, dim);
        if d.features.len() != self.groups.len() {
            return Err(Error::DimensionMismatch {
                expected: self.groups.len(),
                found: d.features.len(),
            });
        }
        for ((schema, data), group) in d.features.iter().zip(&self.groups) {
            if schema.name != group.column {
                return Err(Error::Schema(format!(
                    "column {} does not match encoder column {}",
                    schema.name, group.column
                )));
            }
            match (data, &group.kind) {
                (ColumnData::Numeric(values), GroupKind::Numeric) => {
                    for (i, v) in values.iter().enumerate() {
                        let v = v.ok_or_else(|| Error::Empty(format!("missing value in {} row {i}", schema.name)))?;
                        x.set(i, group.start, v);
                    }
                }
                (ColumnData::Categorical(values), GroupKind::Categorical { categories }) => {
                    for (i, v) in values.iter().enumerate() {
                        let v = v
                            .as_deref()
                            .ok_or_else(|| Error::Empty(format!("missing value in {} row {i}", schema.name)))?;
                        if let Ok(k) = categories.binary_search_by(|c| c.as_str().cmp(v)) {
                            x.set(i, group.start + k, 1.0);
                        }
                    }
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "column {} changed kind since fitting",
                        schema.name
                    )))
                }
            }
        }
        Ok(EncodedMatrix {
            x,
            feature_names: self.feature_names.clone(),
            y: d.labels()?,
            groups: self.groups.clone(),
        })
    }
}

pub fn encode(d: &Dataset) -> Result<EncodedMatrix> {
    Encoder::fit(d)?.transform(d)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

impl Split {
    pub fn render(&self) -> String {
        let mut out = String::from("train:\n");
        for i in &self.train_indices {
            writeln!(out, "{i}").expect("write to string");
        }
        out.push_str("test:\n");
        for i in &self.test_indices {
            writeln!(out, "{i}").expect("write to string");
        }
        out
    }

    pub fn parse(text: &str, seed: u64) -> Result<Split> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut section: Option<bool> = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match line {
                "train:" => section = Some(true),
                "test:" => section = Some(false),
                _ => {
                    let idx: usize = line
                        .parse()
                        .map_err(|_| Error::Artifact(format!("bad split index {line:?}")))?;
                    match section {
                        Some(true) => train.push(idx),
                        Some(false) => test.push(idx),
                        None => return Err(Error::Artifact("index before section header".into())),
                    }
                }
            }
        }
        Ok(Split {
            train_indices: train,
            test_indices: test,
            seed,
        })
    }
}

fn class_indices(y: &[u8]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &l) in y.iter().enumerate() {
        out[usize::from(l != 0)].push(i);
    }
    out
}

/// Stratified train/test partition. The total test size is round(N·fraction);
/// per-class quotas are allocated by largest remainder.
pub fn split(d: &EncodedMatrix, test_fraction: f64, seed: u64) -> Result<Split> {
    stratified_split(&d.y, test_fraction, seed)
}

pub fn stratified_split(y: &[u8], test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let classes = class_indices(y);
    for (c, idx) in classes.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::DegenerateLabels(format!(
                "class {c} has {} rows; at least 2 required",
                idx.len()
            )));
        }
    }
    let total = (y.len() as f64 * test_fraction).round() as usize;
    let exact: Vec<f64> = classes.iter().map(|c| c.len() as f64 * test_fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &c in &order {
        if quota.iter().sum::<usize>() < total && quota[c] < classes[c].len() {
            quota[c] += 1;
        }
    }

    let mut rng = rng::stream(seed, 0x5_9117);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, idx) in classes.iter().enumerate() {
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng);
        test.extend_from_slice(&shuffled[..quota[c]]);
        train.extend_from_slice(&shuffled[quota[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train_indices: train,
        test_indices: test,
        seed,
    })
}

/// Stratified k-fold assignment: returns the held-out indices of each fold.
pub fn stratified_folds(y: &[u8], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::invalid("at least 2 folds required"));
    }
    let mut rng = rng::stream(seed, 0xf01d);
    let mut out = vec![Vec::new(); folds];
    let mut offset = 0;
    for idx in class_indices(y) {
        let mut shuffled = idx;
        shuffled.shuffle(&mut rng);
        for (k, i) in shuffled.into_iter().enumerate() {
            out[(k + offset) % folds].push(i);
        }
        offset += 1;
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Complement of `held_out` within `0..n`. `held_out` must be sorted.
pub fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - held_out.len());
    let mut it = held_out.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}
