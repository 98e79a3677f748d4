use std::collections::BTreeSet;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::schema::{AnnotatedDocument, RelationInventory, NO_RELATION};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub test_ratio: f64,
    pub validation_ratio: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// 75% train, 10% test, 15% validation.
    pub fn standard(seed: u64) -> Self {
        SplitSpec {
            train_ratio: 0.75,
            test_ratio: 0.10,
            validation_ratio: 0.15,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train_ratio, self.test_ratio, self.validation_ratio];
        if r.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::config(format!("split ratios must be positive, got {r:?}")));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub validation: Vec<T>,
}

/// Index-level split: shuffle under the seed, cut test and validation at
/// their rounded sizes, give the remainder to train. Each part is returned in
/// original order.
fn split_indices(n: usize, spec: &SplitSpec) -> Result<Splits<usize>> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(spec.seed, Stream::Split));
    let n_test = ((spec.test_ratio * n as f64).round() as usize).min(n);
    let n_val = ((spec.validation_ratio * n as f64).round() as usize).min(n - n_test);
    let n_train = n - n_test - n_val;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..n_train + n_test].to_vec();
    let mut validation = order[n_train + n_test..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    validation.sort_unstable();
    Ok(Splits {
        train,
        test,
        validation,
    })
}

fn gather<T: Clone>(items: &[T], idx: &Splits<usize>) -> Splits<T> {
    let pick = |v: &[usize]| v.iter().map(|&i| items[i].clone()).collect();
    Splits {
        train: pick(&idx.train),
        test: pick(&idx.test),
        validation: pick(&idx.validation),
    }
}

/// Deterministic document-level partition into (train, test, validation).
pub fn split_dataset<T: Clone>(docs: &[T], spec: &SplitSpec) -> Result<Splits<T>> {
    Ok(gather(docs, &split_indices(docs.len(), spec)?))
}

/// [`split_dataset`] followed by a greedy repair pass: while some relation
/// label is absent from train, the held-out document covering the most
/// missing labels (earliest on ties) moves into train.
pub fn stratified_relation_split(
    docs: &[AnnotatedDocument],
    spec: &SplitSpec,
) -> Result<Splits<AnnotatedDocument>> {
    let mut idx = split_indices(docs.len(), spec)?;
    let labels: Vec<BTreeSet<&str>> = docs.iter().map(|d| d.relation_labels()).collect();
    let all: BTreeSet<&str> = labels.iter().flatten().copied().collect();
    let mut missing: BTreeSet<&str> = all.clone();
    for &i in &idx.train {
        for l in &labels[i] {
            missing.remove(l);
        }
    }

    let mut moved = 0;
    while !missing.is_empty() {
        let held_out = idx.test.iter().chain(&idx.validation).copied();
        let best = held_out
            .map(|i| (labels[i].intersection(&missing).count(), i))
            .filter(|(cover, _)| *cover > 0)
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let Some((_, i)) = best else {
            // unreachable: every label occurs in some document
            break;
        };
        idx.test.retain(|&j| j != i);
        idx.validation.retain(|&j| j != i);
        idx.train.push(i);
        for l in &labels[i] {
            missing.remove(l);
        }
        moved += 1;
    }
    idx.train.sort_unstable();
    if moved > 0 {
        info!("stratified split moved {moved} documents into train to cover every relation label");
    }
    Ok(gather(docs, &idx))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub documents: usize,
    pub entities: usize,
    pub relation_instances: usize,
    pub relation_labels: usize,
}

/// Document, entity and relation-instance counts per split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train: SplitCounts,
    pub test: SplitCounts,
    pub validation: SplitCounts,
}

/// Relation instances exclude `NO_RELATION` and, when an inventory is given,
/// labels outside it.
pub fn split_report(splits: &Splits<AnnotatedDocument>, inventory: Option<&RelationInventory>) -> SplitReport {
    let count = |docs: &[AnnotatedDocument]| {
        let keep = |l: &str| l != NO_RELATION && inventory.is_none_or(|inv| inv.id(l).is_some());
        let mut labels = BTreeSet::new();
        let mut relation_instances = 0;
        for d in docs {
            for r in d.relations.iter().filter(|r| keep(&r.label)) {
                relation_instances += 1;
                labels.insert(r.label.as_str());
            }
        }
        SplitCounts {
            documents: docs.len(),
            entities: docs.iter().map(|d| d.mentions.len()).sum(),
            relation_instances,
            relation_labels: labels.len(),
        }
    };
    SplitReport {
        train: count(&splits.train),
        test: count(&splits.test),
        validation: count(&splits.validation),
    }
}
