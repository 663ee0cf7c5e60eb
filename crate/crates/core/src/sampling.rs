//! Training-set construction under label uncertainty: every high-risk
//! element is kept, while the uncertain "no observable risk" class is
//! downsampled.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Label, LabelTable};
use crate::nn::seeded;

pub const DEFAULT_SAMPLE_RATE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet<K = String> {
    /// All high-risk keys, sorted.
    pub positives: Vec<K>,
    /// Sampled no-observable-risk keys, sorted.
    pub negatives: Vec<K>,
    pub sample_rate: f64,
    pub seed: u64,
}

impl<K: Clone> TrainingSet<K> {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positives then negatives, with their binary targets.
    pub fn examples(&self) -> impl Iterator<Item = (&K, bool)> {
        self.positives.iter().map(|k| (k, true)).chain(self.negatives.iter().map(|k| (k, false)))
    }
}

/// Keeps every `HighRisk` key and draws exactly
/// `floor(sample_rate * |NoObservableRisk|)` others without replacement.
/// Unlabeled keys are never drawn.
pub fn sample_keys<K: Clone + Ord>(
    entries: impl IntoIterator<Item = (K, Label)>,
    sample_rate: f64,
    seed: u64,
) -> Result<TrainingSet<K>> {
    if !(sample_rate > 0.0 && sample_rate <= 1.0) {
        return Err(Error::usage("sample_rate must be in (0, 1]"));
    }
    let mut positives = Vec::new();
    let mut regular = Vec::new();
    for (k, label) in entries {
        match label {
            Label::HighRisk => positives.push(k),
            Label::NoObservableRisk => regular.push(k),
            Label::Unlabeled => {}
        }
    }
    if positives.is_empty() {
        return Err(Error::usage("no high-risk examples to learn from"));
    }
    positives.sort();
    regular.sort();
    let take = (sample_rate * regular.len() as f64).floor() as usize;
    let mut picked = sample(&mut seeded(seed), regular.len(), take).into_vec();
    picked.sort_unstable();
    let negatives = picked.into_iter().map(|i| regular[i].clone()).collect();
    Ok(TrainingSet { positives, negatives, sample_rate, seed })
}

pub fn sample_training_set(labels: &LabelTable, sample_rate: f64, seed: u64) -> Result<TrainingSet> {
    sample_keys(labels.iter().map(|(k, l)| (k.to_string(), l)), sample_rate, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(pos: usize, neg: usize, unl: usize) -> LabelTable {
        let mut t = LabelTable::new();
        for i in 0..pos {
            t.insert(format!("p{i:05}"), Label::HighRisk).unwrap();
        }
        for i in 0..neg {
            t.insert(format!("n{i:05}"), Label::NoObservableRisk).unwrap();
        }
        for i in 0..unl {
            t.insert(format!("u{i:05}"), Label::Unlabeled).unwrap();
        }
        t
    }

    #[test]
    fn quarter_of_regular_accounts() {
        let s = sample_training_set(&table(30, 1000, 50), 0.25, 1).unwrap();
        assert_eq!(s.negatives.len(), 250);
        assert_eq!(s.positives.len(), 30);
        assert!(s.negatives.iter().all(|k| k.starts_with('n')));
        assert_eq!(s, sample_training_set(&table(30, 1000, 50), 0.25, 1).unwrap());
    }

    #[test]
    fn full_rate_and_errors() {
        let s = sample_training_set(&table(2, 7, 1), 1.0, 0).unwrap();
        assert_eq!(s.negatives.len(), 7);
        assert!(matches!(sample_training_set(&table(0, 7, 1), 1.0, 0), Err(Error::Usage(_))));
        assert!(matches!(sample_training_set(&table(1, 7, 1), 0.0, 0), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn positives_do_not_depend_on_rate(pos in 1usize..20, neg in 0usize..200, rate in 0.01f64..=1.0, seed: u64) {
            let t = table(pos, neg, 3);
            let s = sample_training_set(&t, rate, seed).unwrap();
            let all = sample_training_set(&t, 1.0, seed).unwrap();
            prop_assert_eq!(&s.positives, &all.positives);
            prop_assert_eq!(s.negatives.len(), (rate * neg as f64).floor() as usize);
            prop_assert!(s.negatives.iter().all(|k| !s.positives.contains(k)));
        }
    }
}
