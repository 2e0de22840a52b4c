//! Synthetic benchmarks with counterfactual pairs.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Example};

/// Binary task whose training data carries a spurious shortcut that reverses
/// at test time.
///
/// Coordinate 0 is the core signal: the label's sign (flipped with
/// probability `sigma`) plus `N(0, sigma^2)` jitter. Coordinate 1 is the
/// spurious signal: `+-1`, agreeing with the label with probability `rho`
/// in train/validation and `1 - rho` in the OOD test. The remaining
/// `d - 2` coordinates are standard normal noise.
///
/// A `pair_fraction` share of the training examples receives a counterfactual
/// partner with the core coordinate negated and the label flipped, so the
/// difference vector lies on the core axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpuriousConfig {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub rho: f64,
    pub pair_fraction: f64,
    pub n_validation: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SpuriousConfig {
    fn default() -> Self {
        SpuriousConfig {
            n: 2000,
            d: 10,
            sigma: 0.1,
            rho: 0.95,
            pair_fraction: 0.1,
            n_validation: 500,
            n_test: 2000,
            seed: 0,
        }
    }
}

impl SpuriousConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.rho > 0.5 && self.rho <= 1.0) {
            return bad(format!("rho must be in (0.5, 1], got {}", self.rho));
        }
        if self.d < 3 {
            return bad(format!("d must be at least 3, got {}", self.d));
        }
        if !(0.0..0.5).contains(&self.sigma) {
            return bad(format!("sigma must be in [0, 0.5), got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.pair_fraction) {
            return bad(format!("pair_fraction must be in [0, 1], got {}", self.pair_fraction));
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpuriousSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub ood_test: Dataset,
}

pub fn gen_spurious_ood(config: &SpuriousConfig) -> Result<SpuriousSplits> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n_pairs = (config.pair_fraction * config.n as f64).round() as usize;
    let mut train = Vec::with_capacity(config.n + n_pairs);
    for i in 0..config.n {
        let (x, y) = spurious_draw(config, config.rho, &mut rng);
        let id = format!("train-{i:05}");
        if i < n_pairs {
            let mut partner = x.clone();
            partner[0] = -partner[0];
            train.push(Example::features(id.clone(), x, vec![y], "train"));
            train.push(Example::features(format!("{id}-cf"), partner, vec![1 - y], "train").with_counterfactual_of(id));
        } else {
            train.push(Example::features(id, x, vec![y], "train"));
        }
    }

    let mut held_out = |count: usize, agree: f64, tag: &str| {
        let examples = (0..count)
            .map(|i| {
                let (x, y) = spurious_draw(config, agree, &mut rng);
                Example::features(format!("{tag}-{i:05}"), x, vec![y], tag)
            })
            .collect();
        Dataset::new(examples)
    };
    let validation = held_out(config.n_validation, config.rho, "validation")?;
    let ood_test = held_out(config.n_test, 1.0 - config.rho, "test_ood")?;

    Ok(SpuriousSplits { train: Dataset::new(train)?, validation, ood_test })
}

fn spurious_draw(config: &SpuriousConfig, agree: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, u8) {
    let y: u8 = rng.random_range(0..2);
    let sign = if y == 1 { 1.0 } else { -1.0 };
    let core_sign = if rng.random::<f64>() < config.sigma { -sign } else { sign };
    let jitter: f64 = rng.sample(StandardNormal);
    let spurious = if rng.random::<f64>() < agree { sign } else { -sign };
    let mut x = Vec::with_capacity(config.d);
    x.push(core_sign + config.sigma * jitter);
    x.push(spurious);
    for _ in 2..config.d {
        x.push(rng.sample(StandardNormal));
    }
    (x, y)
}

/// What a masked counterfactual removes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalMode {
    /// One present class, chosen uniformly.
    #[default]
    Single,
    /// Every present class; the counterfactual has no positive label.
    AllClear,
}

/// Multilabel task built from class prototypes whose co-occurrence is
/// predictable in training.
///
/// Each example picks a primary class uniformly and adds every other class
/// `j` with probability `cooccurrence[primary][j]`. Features are the sum of
/// the present classes' prototypes plus `N(0, noise^2)` per coordinate.
/// A masked counterfactual subtracts removed prototypes and clears their labels.
/// `removal` applies to training counterfactuals; test edits always remove a
/// single class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultilabelConfig {
    pub n: usize,
    pub classes: usize,
    pub cooccurrence: Vec<Vec<f64>>,
    pub prototype_dim: usize,
    pub noise: f64,
    pub pair_fraction: f64,
    pub n_test: usize,
    pub removal: RemovalMode,
    pub seed: u64,
}

impl Default for MultilabelConfig {
    fn default() -> Self {
        MultilabelConfig {
            n: 2000,
            classes: 10,
            cooccurrence: default_cooccurrence(10),
            prototype_dim: 64,
            noise: 0.3,
            pair_fraction: 0.1,
            n_test: 1000,
            removal: RemovalMode::Single,
            seed: 0,
        }
    }
}

/// Classes come in adjacent couples `(2k, 2k+1)` that co-occur with
/// probability 0.9; any other combination has probability 0.05.
pub fn default_cooccurrence(classes: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|i| {
            (0..classes)
                .map(|j| {
                    if i == j {
                        1.0
                    } else if i / 2 == j / 2 {
                        0.9
                    } else {
                        0.05
                    }
                })
                .collect()
        })
        .collect()
}

impl MultilabelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.cooccurrence.len() != self.classes || self.cooccurrence.iter().any(|r| r.len() != self.classes) {
            return bad(format!("co-occurrence matrix must be {0}x{0}", self.classes));
        }
        for i in 0..self.classes {
            for j in 0..self.classes {
                let v = self.cooccurrence[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("co-occurrence [{i}][{j}] = {v} outside [0, 1]"));
                }
                if v != self.cooccurrence[j][i] {
                    return bad(format!("co-occurrence matrix not symmetric at [{i}][{j}]"));
                }
            }
        }
        if self.prototype_dim == 0 || self.n == 0 || self.n_test == 0 {
            return bad("n, n_test and prototype_dim must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.pair_fraction) {
            return bad(format!("pair_fraction must be in [0, 1], got {}", self.pair_fraction));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultilabelSplits {
    pub train: Dataset,
    pub test_original: Dataset,
    pub test_edited: Dataset,
    /// Edited test examples whose label pattern never occurs in `train`.
    pub test_hard_edited: Dataset,
    /// `classes x prototype_dim`, row per class.
    pub prototypes: Vec<Vec<f64>>,
}

struct Draw {
    labels: Vec<u8>,
    noise: Vec<f64>,
}

impl Draw {
    fn features(&self, prototypes: &[Vec<f64>]) -> Vec<f64> {
        let mut x = self.noise.clone();
        for (k, _) in self.labels.iter().enumerate().filter(|(_, &l)| l == 1) {
            for (v, p) in x.iter_mut().zip(&prototypes[k]) {
                *v += p;
            }
        }
        x
    }

    fn present(&self) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == 1).map(|(k, _)| k).collect()
    }

    /// Labels with the chosen classes cleared; `None` if nothing can be removed.
    fn masked(&self, mode: RemovalMode, rng: &mut ChaCha8Rng) -> Option<Draw> {
        let present = self.present();
        if present.is_empty() {
            return None;
        }
        let mut labels = self.labels.clone();
        match mode {
            RemovalMode::Single => labels[present[rng.random_range(0..present.len())]] = 0,
            RemovalMode::AllClear => labels.iter_mut().for_each(|l| *l = 0),
        }
        Some(Draw { labels, noise: self.noise.clone() })
    }
}

pub fn gen_masked_multilabel(config: &MultilabelConfig) -> Result<MultilabelSplits> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.prototype_dim;
    let proto_dist = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive sd");
    let prototypes: Vec<Vec<f64>> =
        (0..config.classes).map(|_| (0..dim).map(|_| proto_dist.sample(&mut rng)).collect()).collect();

    let draw = |rng: &mut ChaCha8Rng| {
        let primary = rng.random_range(0..config.classes);
        let labels = (0..config.classes)
            .map(|j| u8::from(j == primary || rng.random::<f64>() < config.cooccurrence[primary][j]))
            .collect();
        let noise = (0..dim).map(|_| config.noise * rng.sample::<f64, _>(StandardNormal)).collect();
        Draw { labels, noise }
    };

    let n_pairs = (config.pair_fraction * config.n as f64).round() as usize;
    let mut train = Vec::new();
    let mut seen_patterns: HashSet<Vec<u8>> = HashSet::new();
    for i in 0..config.n {
        let original = draw(&mut rng);
        let id = format!("train-{i:05}");
        seen_patterns.insert(original.labels.clone());
        train.push(Example::features(id.clone(), original.features(&prototypes), original.labels.clone(), "train"));
        if i < n_pairs {
            let cf = original.masked(config.removal, &mut rng).expect("primary class is present");
            seen_patterns.insert(cf.labels.clone());
            train.push(
                Example::features(format!("{id}-cf"), cf.features(&prototypes), cf.labels, "train")
                    .with_counterfactual_of(id),
            );
        }
    }

    let mut original = Vec::with_capacity(config.n_test);
    let mut edited = Vec::with_capacity(config.n_test);
    for i in 0..config.n_test {
        let d = draw(&mut rng);
        let e = d.masked(RemovalMode::Single, &mut rng).expect("primary class is present");
        original.push(Example::features(format!("test-{i:05}"), d.features(&prototypes), d.labels, "test_original"));
        edited.push(Example::features(format!("edited-{i:05}"), e.features(&prototypes), e.labels, "test_edited"));
    }

    let mut hard = Vec::new();
    let max_attempts = 200 * config.n_test;
    for _ in 0..max_attempts {
        if hard.len() == config.n_test {
            break;
        }
        let e = draw(&mut rng).masked(RemovalMode::Single, &mut rng).expect("primary class is present");
        if seen_patterns.contains(&e.labels) {
            continue;
        }
        hard.push(Example::features(
            format!("hard-{:05}", hard.len()),
            e.features(&prototypes),
            e.labels,
            "test_hard_edited",
        ));
    }
    if hard.is_empty() {
        return Err(Error::InvalidConfig(
            "co-occurrence model never produces an edited label pattern unseen in training".into(),
        ));
    }

    Ok(MultilabelSplits {
        train: Dataset::new(train)?,
        test_original: Dataset::new(original)?,
        test_edited: Dataset::new(edited)?,
        test_hard_edited: Dataset::new(hard)?,
        prototypes,
    })
}
