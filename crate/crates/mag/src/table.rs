//! Date-indexed feature tables: loading, alignment and gap filling.
//!
//! Missing values are held as `NaN` until [`align_and_impute`] forward-fills
//! everything after a column's first observation. Leading gaps stay `NaN`;
//! window construction replaces them with zero after normalization.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Stats,
    Trends,
    News,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Stats => "stats",
            Source::Trends => "trends",
            Source::News => "news",
        }
    }
}

/// Search keywords, in trends file column order.
pub const TRENDS_KEYWORDS: [&str; 13] = [
    "covid",
    "case",
    "death",
    "fever",
    "vaccine",
    "wave",
    "precaution",
    "pandemic",
    "delta",
    "corona",
    "coronavirus",
    "sars_cov_2",
    "omicron",
];

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub source: Source,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub dates: Vec<NaiveDate>,
    /// Model inputs, ordered by source and then by file order.
    pub columns: Vec<Column>,
    /// Columns removed from the inputs but still readable, e.g. the target
    /// after its group has been left out.
    pub held_out: Vec<Column>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Input or held-out column by name.
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().chain(&self.held_out).find(|c| c.name == name)
    }

    pub fn width(&self, source: Source) -> usize {
        self.columns.iter().filter(|c| c.source == source).count()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Bit-level equality, treating identical `NaN`s as equal.
    pub fn same_bits(&self, other: &FeatureTable) -> bool {
        let cols = |a: &[Column], b: &[Column]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.name == y.name
                        && x.source == y.source
                        && x.values.len() == y.values.len()
                        && x.values.iter().zip(&y.values).all(|(u, v)| u.to_bits() == v.to_bits())
                })
        };
        self.dates == other.dates && cols(&self.columns, &other.columns) && cols(&self.held_out, &other.held_out)
    }
}

fn check_header(path: &Path, source: Source, names: &[String]) -> Result<()> {
    match source {
        Source::Stats => {
            if names.is_empty() {
                return Err(AppError::format(path, Some(1), "stats file has no data columns"));
            }
        }
        Source::Trends => {
            if names != TRENDS_KEYWORDS {
                return Err(AppError::format(
                    path,
                    Some(1),
                    format!("trends header must be `date,{}`", TRENDS_KEYWORDS.join(",")),
                ));
            }
        }
        Source::News => {
            let ok = !names.is_empty() && names.iter().enumerate().all(|(i, n)| *n == format!("e{i}"));
            if !ok {
                return Err(AppError::format(path, Some(1), "news header must be `date,e0,e1,...`"));
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if n.is_empty() || !seen.insert(n.as_str()) {
            return Err(AppError::format(path, Some(1), format!("empty or repeated column name `{n}`")));
        }
    }
    Ok(())
}

/// Read one source file: header `date,<columns…>`, ISO dates, empty cells missing.
pub fn load_table(path: &Path, source: Source) -> Result<FeatureTable> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| AppError::format(path, Some(1), e.to_string()))?
        .clone();
    if header.get(0).map(str::trim) != Some("date") {
        return Err(AppError::format(path, Some(1), "first column must be `date`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    check_header(path, source, &names)?;

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    let mut seen: HashMap<NaiveDate, u64> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            AppError::format(path, line, format!("malformed row: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let raw_date = record.get(0).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(raw_date, DATE_FORMAT)
            .map_err(|_| AppError::format(path, Some(line), format!("bad date `{raw_date}`")))?;
        if let Some(first) = seen.insert(date, line) {
            return Err(AppError::format(
                path,
                Some(line),
                format!("duplicate date {date} (first on line {first})"),
            ));
        }
        let mut values = Vec::with_capacity(names.len());
        for (cell, name) in record.iter().skip(1).zip(&names) {
            let cell = cell.trim();
            if cell.is_empty() {
                values.push(f64::NAN);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(AppError::format(
                        path,
                        Some(line),
                        format!("non-numeric value `{cell}` in column `{name}`"),
                    ))
                }
            }
        }
        rows.push((date, values));
    }
    rows.sort_by_key(|(d, _)| *d);

    let columns = names
        .iter()
        .enumerate()
        .map(|(j, name)| Column {
            name: name.clone(),
            source,
            values: rows.iter().map(|(_, v)| v[j]).collect(),
        })
        .collect();
    Ok(FeatureTable {
        dates: rows.into_iter().map(|(d, _)| d).collect(),
        columns,
        held_out: Vec::new(),
    })
}

/// Gap-filling counts for one column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnImputation {
    pub name: String,
    /// Missing values after the first observation, filled with the last one.
    pub forward_filled: usize,
    /// Missing values before the first observation, left for zero fill.
    pub leading: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ImputationReport {
    pub columns: Vec<ColumnImputation>,
}

impl ImputationReport {
    pub fn forward_filled(&self) -> usize {
        self.columns.iter().map(|c| c.forward_filled).sum()
    }

    pub fn leading(&self) -> usize {
        self.columns.iter().map(|c| c.leading).sum()
    }
}

fn impute(values: &mut [f64]) -> (usize, usize) {
    let mut last = None;
    let (mut filled, mut leading) = (0, 0);
    for v in values.iter_mut() {
        if v.is_nan() {
            match last {
                Some(prev) => {
                    *v = prev;
                    filled += 1;
                }
                None => leading += 1,
            }
        } else {
            last = Some(*v);
        }
    }
    (filled, leading)
}

/// Merge tables over their common date range, one row per calendar day.
///
/// Days absent from a table count as missing for each of its columns. Columns
/// are ordered by source (stats, trends, news) and then by input order.
pub fn align_and_impute(tables: &[FeatureTable]) -> Result<(FeatureTable, ImputationReport)> {
    if tables.is_empty() {
        return Err(AppError::Alignment("no tables to align".into()));
    }
    let mut start = NaiveDate::MIN;
    let mut end = NaiveDate::MAX;
    for t in tables {
        let (Some(&first), Some(&last)) = (t.dates.first(), t.dates.last()) else {
            return Err(AppError::Alignment("a table has no rows".into()));
        };
        start = start.max(first);
        end = end.min(last);
    }
    if start > end {
        return Err(AppError::Alignment("the tables share no dates".into()));
    }
    let dates: Vec<NaiveDate> = start.iter_days().take_while(|d| *d <= end).collect();

    let mut columns: Vec<Column> = Vec::new();
    let mut held_out: Vec<Column> = Vec::new();
    let mut report = ImputationReport::default();
    for t in tables {
        let rows: Vec<Option<usize>> = dates.iter().map(|&d| t.index_of(d)).collect();
        for (src, dst) in [(&t.columns, &mut columns), (&t.held_out, &mut held_out)] {
            for c in src {
                let mut values: Vec<f64> = rows.iter().map(|r| r.map_or(f64::NAN, |i| c.values[i])).collect();
                let (forward_filled, leading) = impute(&mut values);
                report.columns.push(ColumnImputation {
                    name: c.name.clone(),
                    forward_filled,
                    leading,
                });
                dst.push(Column {
                    name: c.name.clone(),
                    source: c.source,
                    values,
                });
            }
        }
    }
    let mut names = std::collections::HashSet::new();
    for c in columns.iter().chain(&held_out) {
        if !names.insert(c.name.as_str()) {
            return Err(AppError::Alignment(format!("column `{}` appears in more than one table", c.name)));
        }
    }
    columns.sort_by_key(|c| c.source);
    held_out.sort_by_key(|c| c.source);
    Ok((
        FeatureTable {
            dates,
            columns,
            held_out,
        },
        report,
    ))
}
