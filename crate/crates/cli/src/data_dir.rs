//! Dataset directories: `train.jsonl`, `validation.jsonl` and any number of
//! test splits, each a JSONL file named after its split.

use std::path::{Path, PathBuf};

use anyhow::Context;
use gradsup::data::load_jsonl;
use gradsup::Dataset;

use crate::UsageError;

pub const TRAIN: &str = "train";
pub const VALIDATION: &str = "validation";

pub fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

pub fn require_dir(dir: &Path) -> anyhow::Result<()> {
    if !dir.is_dir() {
        return Err(UsageError(format!("data directory {} does not exist", dir.display())).into());
    }
    Ok(())
}

pub fn load_split(dir: &Path, split: &str) -> anyhow::Result<Dataset> {
    let path = split_path(dir, split);
    if !path.is_file() {
        return Err(UsageError(format!("missing split file {}", path.display())).into());
    }
    let data = load_jsonl(&path).with_context(|| format!("loading {}", path.display()))?;
    if data.has_tokens() {
        anyhow::bail!("{} holds token inputs; encode them to features (BowEncoder) before training", path.display());
    }
    Ok(data)
}

/// Every split in `dir` other than training data: validation first, then the
/// rest by file name.
pub fn evaluation_splits(dir: &Path) -> anyhow::Result<Vec<(String, Dataset)>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if stem != TRAIN {
                    names.push(stem.to_string());
                }
            }
        }
    }
    names.sort_by_key(|n| (n != VALIDATION, n.clone()));
    names.into_iter().map(|n| Ok((n.clone(), load_split(dir, &n)?))).collect()
}
