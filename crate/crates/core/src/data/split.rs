use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::Dataset;

/// Splits `dataset` into `fractions.len()` disjoint parts.
///
/// Examples connected by counterfactual links always land in the same part.
/// Groups are shuffled with `seed` and dealt out until each part reaches its
/// share; within a part the original order is kept.
pub fn split(dataset: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidConfig(format!("invalid split fractions {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split fractions sum to {total}, not 1")));
    }

    let n = dataset.len();
    let mut groups = link_groups(dataset);
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut bounds = Vec::with_capacity(fractions.len());
    let mut cumulative = 0.0;
    for f in fractions {
        cumulative += f;
        bounds.push((cumulative * n as f64).round() as usize);
    }

    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    let mut assigned = 0usize;
    let mut k = 0usize;
    for group in groups {
        while k + 1 < parts.len() && assigned >= bounds[k] {
            k += 1;
        }
        assigned += group.len();
        parts[k].extend(group);
    }

    parts
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            let examples = idx.iter().map(|&i| dataset.examples()[i].clone()).collect();
            Dataset::new(examples)
        })
        .collect()
}

/// Connected components of the counterfactual-link graph, each sorted, in
/// order of their smallest member.
fn link_groups(dataset: &Dataset) -> Vec<Vec<usize>> {
    let n = dataset.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (i, ex) in dataset.examples().iter().enumerate() {
        if let Some(j) = ex.counterfactual_of.as_deref().and_then(|t| dataset.position(t)) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = find(&mut parent, i);
        by_root[r].push(i);
    }
    by_root.into_iter().filter(|g| !g.is_empty()).collect()
}
