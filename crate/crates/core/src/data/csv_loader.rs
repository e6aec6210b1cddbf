use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

/// How to interpret the columns of a delimited file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    /// Feature columns to integer-encode by order of first appearance.
    pub categorical: Vec<String>,
    /// Columns to ignore entirely.
    pub drop: Vec<String>,
    /// Cell values treated as missing (after trimming).
    pub missing_tokens: Vec<String>,
    pub delimiter: char,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            categorical: Vec::new(),
            drop: Vec::new(),
            missing_tokens: vec![String::new(), "NA".into(), "?".into(), "NaN".into()],
            delimiter: ',',
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// Load a headed delimited file. Rows with a missing cell in any used column are dropped.
///
/// Labels are factorized: if every label parses as an integer they are ordered
/// numerically, otherwise by first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, schema: &CsvSchema) -> Result<CsvLoad, DataError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DataError::Csv(e),
        })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingColumn(label_column.to_owned()))?;
    for name in schema.categorical.iter().chain(&schema.drop) {
        if !header.contains(name) {
            return Err(DataError::MissingColumn(name.clone()));
        }
    }
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| i != label_idx && !schema.drop.contains(&header[i]))
        .collect();

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record?;
        let missing = feature_cols
            .iter()
            .chain(std::iter::once(&label_idx))
            .any(|&i| record.get(i).is_none_or(|c| schema.missing_tokens.iter().any(|m| m == c)));
        if missing {
            dropped += 1;
            continue;
        }
        rows.push(record.iter().map(str::to_owned).collect());
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    let mut features = Array2::<f64>::zeros((rows.len(), feature_cols.len()));
    for (j, &col) in feature_cols.iter().enumerate() {
        let name = &header[col];
        if schema.categorical.contains(name) {
            let mut codes: HashMap<&str, usize> = HashMap::new();
            for (r, row) in rows.iter().enumerate() {
                let next = codes.len();
                let code = *codes.entry(row[col].as_str()).or_insert(next);
                features[[r, j]] = code as f64;
            }
        } else {
            for (r, row) in rows.iter().enumerate() {
                let v: f64 = row[col].parse().map_err(|_| DataError::NonNumeric {
                    column: name.clone(),
                    value: row[col].clone(),
                })?;
                features[[r, j]] = v;
            }
        }
    }

    let raw_labels: Vec<&str> = rows.iter().map(|r| r[label_idx].as_str()).collect();
    let (labels, class_names) = factorize(&raw_labels);
    if dropped > 0 {
        log::info!("{}: dropped {dropped} rows with missing values", path.display());
    }
    let dataset = Dataset {
        features,
        labels,
        n_classes: class_names.len(),
        feature_names: feature_cols.iter().map(|&i| header[i].clone()).collect(),
        class_names,
        normalization: None,
    };
    dataset.validate()?;
    Ok(CsvLoad {
        dataset,
        dropped_rows: dropped,
    })
}

fn factorize(raw: &[&str]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = Vec::new();
    let numeric: Option<Vec<i64>> = raw.iter().map(|s| s.parse::<i64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut distinct = nums.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let labels = nums
            .iter()
            .map(|n| distinct.binary_search(n).expect("value present"))
            .collect();
        names.extend(distinct.iter().map(i64::to_string));
        return (labels, names);
    }
    let mut codes: HashMap<&str, usize> = HashMap::new();
    let labels = raw
        .iter()
        .map(|&s| {
            *codes.entry(s).or_insert_with(|| {
                names.push(s.to_owned());
                names.len() - 1
            })
        })
        .collect();
    (labels, names)
}
