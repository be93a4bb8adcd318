use rand::seq::SliceRandom;

use super::{Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::{stream, SplitMix64};

/// Train/validation/test proportions.
pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

/// Disjoint id lists covering a dataset, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(name, ids)` for the three parts in order.
    pub fn parts(&self) -> [(&'static str, &[u64]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Stratified split: each class is shuffled with its own stream and cut at
/// `round(r_train·n)` and `round(r_val·n)`; the test part takes the rest.
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split ratios {ratios:?} must be in [0,1] and sum to 1"
        )));
    }
    let mut out = DatasetSplit::default();
    for label in Label::ALL {
        let mut ids: Vec<u64> = dataset
            .samples()
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.id)
            .collect();
        if ids.len() < 3 {
            return Err(Error::input(format!(
                "class {label} has {} samples; a split needs at least 3 per class",
                ids.len()
            )));
        }
        let mut rng = SplitMix64::derived(seed, &[stream::SPLIT, label.index() as u64]);
        ids.shuffle(&mut rng);
        let n = ids.len() as f64;
        let n_train = (ratios[0] * n).round() as usize;
        let n_val = ((ratios[1] * n).round() as usize).min(ids.len() - n_train);
        out.train.extend_from_slice(&ids[..n_train]);
        out.val.extend_from_slice(&ids[n_train..n_train + n_val]);
        out.test.extend_from_slice(&ids[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, PhantomConfig};

    fn data(per_class: usize) -> Dataset {
        generate(
            &PhantomConfig {
                size: 16,
                benign_radius: (1.0, 1.5),
                malignant_radius: (2.0, 2.5),
                per_class,
                ..Default::default()
            },
            1,
        )
        .unwrap()
    }

    fn per_class(d: &Dataset, ids: &[u64]) -> [usize; 3] {
        let mut c = [0; 3];
        for s in d.select(ids).unwrap() {
            c[s.label.index()] += 1;
        }
        c
    }

    #[test]
    fn exact_counts_for_divisible_sizes() {
        for (n, want) in [(100, [60, 20, 20]), (10, [6, 2, 2])] {
            let d = data(n);
            let s = split(&d, DEFAULT_RATIOS, 3).unwrap();
            assert_eq!(per_class(&d, &s.train), [want[0]; 3]);
            assert_eq!(per_class(&d, &s.val), [want[1]; 3]);
            assert_eq!(per_class(&d, &s.test), [want[2]; 3]);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let d = data(10);
        assert_eq!(
            split(&d, DEFAULT_RATIOS, 1).unwrap(),
            split(&d, DEFAULT_RATIOS, 1).unwrap()
        );
        assert_ne!(
            split(&d, DEFAULT_RATIOS, 1).unwrap(),
            split(&d, DEFAULT_RATIOS, 2).unwrap()
        );
    }

    #[test]
    fn too_few_samples_is_an_input_error() {
        assert!(matches!(split(&data(2), DEFAULT_RATIOS, 0), Err(Error::Input(_))));
        assert!(matches!(split(&data(5), [0.5, 0.5, 0.5], 0), Err(Error::Config(_))));
    }
}
