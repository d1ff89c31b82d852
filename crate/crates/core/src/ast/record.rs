use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AstTree, Trace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One labeled program: a classification record carries `label`, a naming
/// record carries `name_subwords`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_deserializing)]
    pub ast: AstTree,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_subwords: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_inputs: Option<Vec<Vec<i64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_traces: Option<Vec<Trace>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Default for AstTree {
    fn default() -> Self {
        AstTree {
            source_lang: super::MINIC_LANG.to_string(),
            root: 0,
            nodes: Vec::new(),
        }
    }
}

impl ProgramRecord {
    pub fn new(id: impl Into<String>, ast: AstTree) -> Self {
        ProgramRecord {
            id: id.into(),
            source: None,
            ast,
            label: None,
            class_name: None,
            name_subwords: None,
            test_inputs: None,
            gold_traces: None,
            split: None,
        }
    }

    fn from_line(line: &str, base: &Path) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(line)?;
        let ast_value = value
            .as_object_mut()
            .and_then(|o| o.remove("ast"))
            .ok_or_else(|| Error::Schema("manifest record is missing `ast`".into()))?;
        let ast = match ast_value {
            serde_json::Value::String(rel) => {
                let path = base.join(rel);
                let bytes = fs::read(&path).map_err(|e| Error::file(&path, e))?;
                AstTree::from_json(&bytes)?
            }
            other => AstTree::from_value(other)?,
        };
        let mut record: ProgramRecord =
            serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        record.ast = ast;
        if record.label.is_some() && record.name_subwords.is_some() {
            return Err(Error::Schema(format!(
                "record `{}` has both a label and name sub-words",
                record.id
            )));
        }
        Ok(record)
    }
}

/// Reads a JSON-lines manifest. `ast` may be inline or a path relative to
/// the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ProgramRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = ProgramRecord::from_line(&line, base).map_err(|e| {
            Error::Schema(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(records)
}

pub fn save_manifest(path: &Path, records: &[ProgramRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let mut value = serde_json::to_value(r)?;
        value["ast"] = serde_json::to_value(&r.ast)?;
        serde_json::to_writer(&mut w, &value)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
