//! Examples, datasets with counterfactual links, and the JSONL interchange
//! format.

mod jsonl;
mod split;
mod synth;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gs::CounterfactualPair;
use crate::tensor::Tensor;

pub use jsonl::{load_jsonl, save_jsonl, write_manifest, Manifest, Record};
pub use split::split;
pub use synth::{
    default_cooccurrence, gen_masked_multilabel, gen_spurious_ood, MultilabelConfig, MultilabelSplits, RemovalMode,
    SpuriousConfig, SpuriousSplits,
};

#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Features(Vec<f64>),
    Tokens(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub input: Input,
    pub labels: Vec<u8>,
    pub counterfactual_of: Option<String>,
    pub split: String,
}

impl Example {
    pub fn features(id: impl Into<String>, features: Vec<f64>, labels: Vec<u8>, split: impl Into<String>) -> Self {
        Example {
            id: id.into(),
            input: Input::Features(features),
            labels,
            counterfactual_of: None,
            split: split.into(),
        }
    }

    pub fn with_counterfactual_of(mut self, id: impl Into<String>) -> Self {
        self.counterfactual_of = Some(id.into());
        self
    }

    pub fn feature_slice(&self) -> Option<&[f64]> {
        match &self.input {
            Input::Features(f) => Some(f),
            Input::Tokens(_) => None,
        }
    }
}

/// How labels are read and scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// One logit, label vector of length 1.
    Binary,
    /// One-hot labels, softmax over logits.
    Multiclass,
    /// Independent binary labels per class.
    Multilabel,
}

/// An ordered, validated collection of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    index: HashMap<String, usize>,
    label_arity: usize,
}

impl Dataset {
    /// Validates ids, labels, input widths and counterfactual links.
    ///
    /// Every problem found is reported, naming the offending ids.
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let mut problems = Vec::new();
        let mut index = HashMap::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if index.insert(ex.id.clone(), i).is_some() {
                problems.push(format!("duplicate id {:?}", ex.id));
            }
        }

        let label_arity = examples.first().map_or(0, |e| e.labels.len());
        let width = examples.first().map(|e| match &e.input {
            Input::Features(f) => Some(f.len()),
            Input::Tokens(_) => None,
        });
        for ex in &examples {
            if ex.labels.is_empty() || ex.labels.len() != label_arity {
                problems.push(format!("{:?}: label arity {} (expected {label_arity})", ex.id, ex.labels.len()));
            }
            if ex.labels.iter().any(|&l| l > 1) {
                problems.push(format!("{:?}: labels must be 0 or 1", ex.id));
            }
            let this_width = match &ex.input {
                Input::Features(f) => Some(f.len()),
                Input::Tokens(_) => None,
            };
            if Some(this_width) != width {
                problems.push(format!("{:?}: input kind or feature width differs from first example", ex.id));
            }
            if let Input::Features(f) = &ex.input {
                if f.iter().any(|v| !v.is_finite()) {
                    problems.push(format!("{:?}: non-finite feature", ex.id));
                }
            }
        }

        for ex in &examples {
            let Some(target) = &ex.counterfactual_of else { continue };
            match index.get(target) {
                None => problems.push(format!("{:?}: counterfactual_of refers to missing id {target:?}", ex.id)),
                Some(&j) => {
                    let other = &examples[j];
                    if other.id == ex.id {
                        problems.push(format!("{:?}: linked to itself", ex.id));
                    } else if other.labels == ex.labels {
                        problems.push(format!("{:?} and {:?}: linked examples have equal labels", ex.id, other.id));
                    } else if other.input == ex.input {
                        problems.push(format!("{:?} and {:?}: linked examples have identical inputs", ex.id, other.id));
                    }
                }
            }
        }

        if !problems.is_empty() {
            return Err(Error::InvalidDataset(problems.join("; ")));
        }
        Ok(Dataset { examples, index, label_arity })
    }

    pub fn empty() -> Self {
        Dataset { examples: Vec::new(), index: HashMap::new(), label_arity: 0 }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    pub fn get(&self, i: usize) -> Option<&Example> {
        self.examples.get(i)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn label_arity(&self) -> usize {
        self.label_arity
    }

    /// Feature width, or `None` for token datasets and empty datasets.
    pub fn feature_width(&self) -> Option<usize> {
        self.examples.first().and_then(|e| e.feature_slice()).map(<[f64]>::len)
    }

    pub fn has_tokens(&self) -> bool {
        matches!(self.examples.first(), Some(Example { input: Input::Tokens(_), .. }))
    }

    pub fn features(&self, i: usize) -> Result<&[f64]> {
        let ex = self.examples.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.len() })?;
        ex.feature_slice().ok_or_else(|| Error::InvalidDataset(format!("{:?} holds tokens, not features", ex.id)))
    }

    pub fn labels(&self, i: usize) -> &[u8] {
        &self.examples[i].labels
    }

    /// `Binary` for one label; `Multiclass` when every label vector is
    /// one-hot; otherwise `Multilabel`.
    pub fn infer_task(&self) -> Task {
        if self.label_arity <= 1 {
            Task::Binary
        } else if self.examples.iter().all(|e| e.labels.iter().filter(|&&l| l == 1).count() == 1) {
            Task::Multiclass
        } else {
            Task::Multilabel
        }
    }

    /// Rows of the selected examples' features.
    pub fn feature_matrix(&self, indices: &[usize]) -> Result<Tensor> {
        let rows = indices.iter().map(|&i| self.features(i)).collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Tensor::zeros(0, self.feature_width().unwrap_or(0)));
        }
        Tensor::from_rows(&rows)
    }

    pub fn label_matrix(&self, indices: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(indices.len(), self.label_arity);
        for (r, &i) in indices.iter().enumerate() {
            for (c, &l) in self.examples[i].labels.iter().enumerate() {
                t.set(r, c, f64::from(l));
            }
        }
        t
    }

    /// Keeps the examples for which `keep` holds, dropping links that would dangle.
    pub fn filter(&self, mut keep: impl FnMut(&Example) -> bool) -> Result<Dataset> {
        let kept: Vec<Example> = self.examples.iter().filter(|e| keep(e)).cloned().collect();
        let ids: HashSet<&str> = kept.iter().map(|e| e.id.as_str()).collect();
        let kept = kept
            .iter()
            .cloned()
            .map(|mut e| {
                if e.counterfactual_of.as_deref().is_some_and(|t| !ids.contains(t)) {
                    e.counterfactual_of = None;
                }
                e
            })
            .collect();
        Dataset::new(kept)
    }

    /// Replaces token inputs by their encodings (feature inputs pass through).
    pub fn map_inputs(&self, mut f: impl FnMut(&Input) -> Vec<f64>) -> Result<Dataset> {
        let examples =
            self.examples.iter().map(|e| Example { input: Input::Features(f(&e.input)), ..e.clone() }).collect();
        Dataset::new(examples)
    }
}

/// One undirected pair per counterfactual link, in order of first appearance.
pub fn pair_index(dataset: &Dataset) -> Vec<CounterfactualPair> {
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (i, ex) in dataset.examples().iter().enumerate() {
        let Some(j) = ex.counterfactual_of.as_deref().and_then(|t| dataset.position(t)) else {
            continue;
        };
        if let Ok(pair) = CounterfactualPair::new(i, j) {
            if seen.insert(pair) {
                pairs.push(pair);
            }
        }
    }
    pairs
}

/// Copy of `x` with the coordinates in `mask` set to zero.
pub fn mask_features(x: &[f64], mask: &[usize]) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    for &i in mask {
        *out.get_mut(i).ok_or(Error::IndexOutOfRange { index: i, len: x.len() })? = 0.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, x: f64, y: u8) -> Example {
        Example::features(id, vec![x, 1.0], vec![y], "train")
    }

    #[test]
    fn links_become_pairs() {
        let d = Dataset::new(vec![ex("a", 0.0, 1), ex("b", 1.0, 0).with_counterfactual_of("a")]).unwrap();
        let pairs = pair_index(&d);
        assert_eq!(pairs, vec![CounterfactualPair::new(0, 1).unwrap()]);

        let both = Dataset::new(vec![
            ex("a", 0.0, 1).with_counterfactual_of("b"),
            ex("b", 1.0, 0).with_counterfactual_of("a"),
        ])
        .unwrap();
        assert_eq!(pair_index(&both).len(), 1);

        let none = Dataset::new(vec![ex("a", 0.0, 1), ex("b", 1.0, 0)]).unwrap();
        assert!(pair_index(&none).is_empty());
    }

    #[test]
    fn validation_names_offenders() {
        let err = Dataset::new(vec![ex("a", 0.0, 1).with_counterfactual_of("zzz")]).unwrap_err();
        assert!(err.to_string().contains("zzz"), "{err}");

        let err = Dataset::new(vec![ex("a", 0.0, 1), ex("b", 1.0, 1).with_counterfactual_of("a")]).unwrap_err();
        assert!(err.to_string().contains("equal labels"), "{err}");

        let err = Dataset::new(vec![ex("a", 0.0, 1), ex("b", 0.0, 0).with_counterfactual_of("a")]).unwrap_err();
        assert!(err.to_string().contains("identical inputs"), "{err}");

        let err = Dataset::new(vec![ex("a", 0.0, 1), ex("a", 1.0, 0)]).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let err = Dataset::new(vec![ex("a", 0.0, 2)]).unwrap_err();
        assert!(err.to_string().contains("0 or 1"), "{err}");
    }

    #[test]
    fn mask_examples() {
        assert_eq!(mask_features(&[1.0, 2.0, 3.0], &[1]).unwrap(), vec![1.0, 0.0, 3.0]);
        assert_eq!(mask_features(&[1.0, 2.0, 3.0], &[]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(mask_features(&[1.0, 2.0, 3.0], &[0, 1, 2]).unwrap(), vec![0.0; 3]);
        assert!(mask_features(&[1.0], &[1]).is_err());
    }

    #[test]
    fn task_inference() {
        let bin = Dataset::new(vec![ex("a", 0.0, 1)]).unwrap();
        assert_eq!(bin.infer_task(), Task::Binary);
        let mc = Dataset::new(vec![
            Example::features("a", vec![0.0], vec![1, 0, 0], "t"),
            Example::features("b", vec![1.0], vec![0, 0, 1], "t"),
        ])
        .unwrap();
        assert_eq!(mc.infer_task(), Task::Multiclass);
        let ml = Dataset::new(vec![
            Example::features("a", vec![0.0], vec![1, 1, 0], "t"),
            Example::features("b", vec![1.0], vec![0, 0, 0], "t"),
        ])
        .unwrap();
        assert_eq!(ml.infer_task(), Task::Multilabel);
    }

    #[test]
    fn filter_drops_dangling_links() {
        let d = Dataset::new(vec![ex("a", 0.0, 1), ex("b", 1.0, 0).with_counterfactual_of("a")]).unwrap();
        let only_b = d.filter(|e| e.id == "b").unwrap();
        assert_eq!(only_b.len(), 1);
        assert!(only_b.examples()[0].counterfactual_of.is_none());
    }
}
