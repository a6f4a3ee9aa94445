use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StaticError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_size: f64,
    pub shuffle: bool,
    pub seed: u64,
    pub stratify: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_size: 0.3,
            shuffle: true,
            seed: 42,
            stratify: true,
        }
    }
}

fn test_count(test_size: f64, n: usize) -> usize {
    ((test_size * n as f64).round() as usize).clamp(1, n - 1)
}

/// Splits entities into (train, test).
///
/// Stratified splits take `round(test_size * |class|)` members of every
/// class (at least one, at most all but one). The candidate order is a
/// seeded shuffle when `shuffle` is set, otherwise input order; test members
/// are taken from its tail. Both returned lists keep input order.
pub fn stratified_split(
    entities: &[String],
    labels: &BTreeMap<String, usize>,
    spec: &SplitSpec,
) -> Result<(Vec<String>, Vec<String>), StaticError> {
    let n = entities.len();
    if !(spec.test_size > 0.0 && spec.test_size < 1.0) {
        return Err(StaticError::DegenerateSplit(format!(
            "test_size {} outside (0, 1)",
            spec.test_size
        )));
    }
    if n < 2 {
        return Err(StaticError::DegenerateSplit(format!("{n} entities")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if spec.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        order.shuffle(&mut rng);
    }

    let mut test: HashSet<usize> = HashSet::new();
    if spec.stratify {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &order {
            let class = labels
                .get(&entities[i])
                .ok_or_else(|| StaticError::UnlabeledEntity(entities[i].clone()))?;
            by_class.entry(*class).or_default().push(i);
        }
        for (class, members) in by_class {
            if members.len() < 2 {
                return Err(StaticError::ClassTooSmall(class));
            }
            let k = test_count(spec.test_size, members.len());
            test.extend(&members[members.len() - k..]);
        }
    } else {
        let k = test_count(spec.test_size, n);
        test.extend(&order[n - k..]);
    }

    let (test_list, train_list): (Vec<_>, Vec<_>) =
        entities.iter().enumerate().partition(|(i, _)| test.contains(i));
    Ok((
        train_list.into_iter().map(|(_, e)| e.clone()).collect(),
        test_list.into_iter().map(|(_, e)| e.clone()).collect(),
    ))
}
