//! Labeled column datasets.
//!
//! Two interchange formats are supported:
//!
//! - JSON lines, one column per line: `{"label": "day", "values": ["1", "2"]}`
//!   with an optional `"id"` key.
//! - Long CSV with a `column_id,label,value` header, one cell per row. Rows
//!   sharing a `column_id` form one column, in order of first appearance.
//!
//! Cell values containing the literal separator marker `<SEP>` are escaped to
//! `<\SEP>` on the way in so that constructed sequences can always be split
//! back into their source values.

mod split;
mod synth;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use split::{make_split, DatasetSplit, SplitRatios, DEFAULT_RATIOS};
pub use synth::{generate_synthetic_corpus, ClassSpec, Generator, SynthSpec};

use crate::augment::{SEP_ESCAPED, SEP_MARKER};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: column has no values")]
    EmptyColumn { line: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("unknown class label {0:?}")]
    UnknownLabel(String),
}

/// One data column: its cell values in file order plus an optional class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInstance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub values: Vec<String>,
}

impl ColumnInstance {
    pub fn new<S: Into<String>>(values: impl IntoIterator<Item = S>, label: Option<&str>) -> Self {
        ColumnInstance {
            id: None,
            label: label.map(str::to_owned),
            values: values.into_iter().map(|v| escape_value(v.into())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Escape separator markers inside a raw cell value.
pub fn escape_value(value: String) -> String {
    if value.contains(SEP_MARKER) {
        value.replace(SEP_MARKER, SEP_ESCAPED)
    } else {
        value
    }
}

/// Sorted, gap-free mapping between class names and ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassVocabulary {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut names: Vec<String> = labels.into_iter().map(str::to_owned).collect();
        names.sort();
        names.dedup();
        Self::from_sorted(names)
    }

    /// Rebuild from an already ordered name list (as stored in a model bundle).
    pub fn from_names(names: Vec<String>) -> Result<Self, IngestError> {
        if names.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IngestError::Format(
                "class names must be strictly increasing".into(),
            ));
        }
        Ok(Self::from_sorted(names))
    }

    fn from_sorted(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        ClassVocabulary { names, index }
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// A loaded dataset. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub instances: Vec<ColumnInstance>,
    pub classes: ClassVocabulary,
}

impl Dataset {
    pub fn new(instances: Vec<ColumnInstance>) -> Self {
        let classes =
            ClassVocabulary::from_labels(instances.iter().filter_map(|i| i.label.as_deref()));
        Dataset { instances, classes }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Class id per instance; `None` for unlabeled instances.
    pub fn label_ids(&self) -> Vec<Option<usize>> {
        self.instances
            .iter()
            .map(|i| i.label.as_deref().and_then(|l| self.classes.id(l)))
            .collect()
    }

    /// Display name for instance `i`: its id when present, else its index.
    pub fn source(&self, i: usize) -> String {
        self.instances[i]
            .id
            .clone()
            .unwrap_or_else(|| i.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Jsonl,
    CsvLong,
}

impl DataFormat {
    /// Guess from the file extension; anything that is not `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::CsvLong,
            _ => DataFormat::Jsonl,
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let instances = match format {
        DataFormat::Jsonl => read_jsonl(BufReader::new(file))?,
        DataFormat::CsvLong => read_csv_long(file)?,
    };
    Ok(Dataset::new(instances))
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<ColumnInstance>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IngestError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ColumnInstance =
            serde_json::from_str(&line).map_err(|e| IngestError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if record.values.is_empty() {
            return Err(IngestError::EmptyColumn { line: line_no });
        }
        out.push(ColumnInstance {
            values: record.values.into_iter().map(escape_value).collect(),
            ..record
        });
    }
    Ok(out)
}

pub fn read_csv_long<R: Read>(reader: R) -> Result<Vec<ColumnInstance>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let position = |name: &str| -> Result<usize, IngestError> {
        let hits: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.trim() == name)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [one] => Ok(*one),
            [] => Err(IngestError::Format(format!("missing header {name:?}"))),
            _ => Err(IngestError::Format(format!("duplicate header {name:?}"))),
        }
    };
    let (id_col, label_col, value_col) = (
        position("column_id")?,
        position("label")?,
        position("value")?,
    );

    let mut order: Vec<ColumnInstance> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let line_no = i + 2;
        let row = row.map_err(|e| IngestError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let field = |c: usize| row.get(c).unwrap_or_default();
        let id = field(id_col).to_owned();
        let label = Some(field(label_col).to_owned()).filter(|l| !l.is_empty());
        let value = escape_value(field(value_col).to_owned());
        match by_id.get(&id) {
            Some(&slot) => {
                if order[slot].label != label {
                    return Err(IngestError::Format(format!(
                        "line {line_no}: column {id:?} has conflicting labels"
                    )));
                }
                order[slot].values.push(value);
            }
            None => {
                by_id.insert(id.clone(), order.len());
                order.push(ColumnInstance {
                    id: Some(id),
                    label,
                    values: vec![value],
                });
            }
        }
    }
    Ok(order)
}

pub fn write_jsonl<W: Write>(mut writer: W, instances: &[ColumnInstance]) -> std::io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut writer, inst)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_dataset(path: &Path, instances: &[ColumnInstance]) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.to_owned(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_jsonl(BufWriter::new(file), instances).map_err(io_err)
}
