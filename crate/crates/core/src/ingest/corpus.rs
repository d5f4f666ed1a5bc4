//! Labeled text corpora in csv (`text,label,split` columns) or jsonl
//! (`text`, `label`, `split` fields).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::SplitKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    /// Guesses from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(CorpusFormat::Csv),
            "jsonl" | "ndjson" => Some(CorpusFormat::Jsonl),
            _ => None,
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Csv => "csv",
            CorpusFormat::Jsonl => "jsonl",
        })
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CorpusFormat::Csv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub text: String,
    pub label: u8,
    pub split: SplitKind,
}

/// Records in file order, separated by split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub train: Vec<CorpusRecord>,
    pub test: Vec<CorpusRecord>,
}

impl Corpus {
    pub fn from_records(records: impl IntoIterator<Item = CorpusRecord>) -> Self {
        let mut corpus = Corpus::default();
        for r in records {
            match r.split {
                SplitKind::Train => corpus.train.push(r),
                SplitKind::Test => corpus.test.push(r),
            }
        }
        corpus
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn parse_label(raw: &str) -> std::result::Result<u8, String> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(format!("label must be 0 or 1, got {other:?}")),
    }
}

fn parse_split(raw: &str) -> std::result::Result<SplitKind, String> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "train" => Ok(SplitKind::Train),
        "test" => Ok(SplitKind::Test),
        other => Err(format!("split must be train or test, got {other:?}")),
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = match format {
        CorpusFormat::Csv => parse_csv(path, &raw)?,
        CorpusFormat::Jsonl => parse_jsonl(path, &raw)?,
    };
    let corpus = Corpus::from_records(records);
    log::info!(
        "loaded {}: {} train, {} test records",
        path.display(),
        corpus.train.len(),
        corpus.test.len()
    );
    Ok(corpus)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn parse_csv(path: &Path, raw: &str) -> Result<Vec<CorpusRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw.as_bytes());
    let headers = reader.headers().map_err(|e| parse_error(path, 1, e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_error(path, 1, format!("missing column {name:?}")))
    };
    let (text_col, label_col, split_col) = (column("text")?, column("label")?, column("split")?);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize| row.get(col).unwrap_or("");
        out.push(CorpusRecord {
            text: field(text_col).to_string(),
            label: parse_label(field(label_col)).map_err(|m| parse_error(path, line, m))?,
            split: parse_split(field(split_col)).map_err(|m| parse_error(path, line, m))?,
        });
    }
    Ok(out)
}

pub fn parse_jsonl(path: &Path, raw: &str) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| parse_error(path, line_no, m);
        let value: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let text = match value.get("text") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) => String::new(),
            Some(_) => return Err(err("field \"text\" must be a string".into())),
            None => return Err(err("missing field \"text\"".into())),
        };
        let label = match value.get("label") {
            Some(Value::Number(n)) => parse_label(&n.to_string()),
            Some(Value::String(s)) => parse_label(s),
            Some(_) => Err("field \"label\" must be 0 or 1".into()),
            None => Err("missing field \"label\"".into()),
        }
        .map_err(err)?;
        let split = match value.get("split") {
            Some(Value::String(s)) => parse_split(s),
            Some(_) => Err("field \"split\" must be a string".into()),
            None => Err("missing field \"split\"".into()),
        }
        .map_err(err)?;
        out.push(CorpusRecord { text, label, split });
    }
    Ok(out)
}
