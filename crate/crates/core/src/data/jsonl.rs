use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Example, Input};

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub features: Option<Vec<f64>>,
    pub tokens: Option<Vec<u32>>,
    pub labels: Vec<u8>,
    pub counterfactual_of: Option<String>,
    pub split: String,
}

impl Record {
    fn into_example(self, line: usize) -> Result<Example> {
        let input = match (self.features, self.tokens) {
            (Some(f), None) => Input::Features(f),
            (None, Some(t)) => Input::Tokens(t),
            _ => {
                return Err(Error::MalformedRecord {
                    line,
                    detail: format!("{:?}: exactly one of features/tokens must be set", self.id),
                })
            }
        };
        Ok(Example {
            id: self.id,
            input,
            labels: self.labels,
            counterfactual_of: self.counterfactual_of,
            split: self.split,
        })
    }
}

impl From<&Example> for Record {
    fn from(e: &Example) -> Self {
        let (features, tokens) = match &e.input {
            Input::Features(f) => (Some(f.clone()), None),
            Input::Tokens(t) => (None, Some(t.clone())),
        };
        Record {
            id: e.id.clone(),
            features,
            tokens,
            labels: e.labels.clone(),
            counterfactual_of: e.counterfactual_of.clone(),
            split: e.split.clone(),
        }
    }
}

/// Reads and validates a dataset, one JSON record per line. Blank lines are
/// ignored.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord { line: n + 1, detail: e.to_string() })?;
        examples.push(record.into_example(n + 1)?);
    }
    Dataset::new(examples)
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ex in dataset.examples() {
        serde_json::to_writer(&mut out, &Record::from(ex))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Sidecar describing how a set of dataset files was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub files: Vec<String>,
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_linked_pair() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"id":"a","features":[1.0,2.0],"tokens":null,"labels":[1],"counterfactual_of":null,"split":"train"}"#,
                "\n",
                r#"{"id":"b","features":[1.0,-2.0],"tokens":null,"labels":[0],"counterfactual_of":"a","split":"train"}"#,
                "\n"
            ),
        )
        .unwrap();
        let d = load_jsonl(&path).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(crate::data::pair_index(&d).len(), 1);
    }

    #[test]
    fn reports_missing_link_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(
            &path,
            r#"{"id":"a","features":[1.0],"tokens":null,"labels":[1],"counterfactual_of":"ghost","split":"train"}"#,
        )
        .unwrap();
        let err = load_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains("ghost"), "{err}");
    }

    #[test]
    fn rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "{\"id\": 3}\n").unwrap();
        assert!(matches!(load_jsonl(&path), Err(Error::MalformedRecord { line: 1, .. })));

        fs::write(
            &path,
            r#"{"id":"a","features":[1.0],"tokens":[1],"labels":[1],"counterfactual_of":null,"split":"train"}"#,
        )
        .unwrap();
        assert!(matches!(load_jsonl(&path), Err(Error::MalformedRecord { .. })));
    }

    #[test]
    fn field_names_and_order_are_fixed() {
        let e = Example::features("x", vec![0.5], vec![1], "train");
        let line = serde_json::to_string(&Record::from(&e)).unwrap();
        assert_eq!(
            line,
            r#"{"id":"x","features":[0.5],"tokens":null,"labels":[1],"counterfactual_of":null,"split":"train"}"#
        );
    }
}
