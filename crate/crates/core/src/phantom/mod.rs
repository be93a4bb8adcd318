//! Synthetic lung CT phantoms with exact lesion masks.
//!
//! Each image is a bright thorax ellipse holding two dark elliptical lung
//! fields. Benign samples carry one small smooth disc inside a lung, and
//! malignant samples one larger lesion whose boundary is perturbed
//! sinusoidally (spiculation). Because the lesion support is known exactly,
//! it doubles as the ground-truth mask for localization scoring.
//!
//! The module also provides stratified train/val/test splitting, the `GFDS`
//! dataset container and ingestion of user-supplied PGM images.

mod container;
mod generate;
mod ingest;
mod split;

use std::collections::HashMap;
use std::fmt;

pub use container::{decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use generate::{generate, PhantomConfig};
pub use ingest::{load_grayscale_dir, IngestError, IngestReport};
pub use split::{split, DatasetSplit, DEFAULT_RATIOS};

use crate::error::{Error, Result};
use crate::faithfulness::BinaryMask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Normal = 0,
    Benign = 1,
    Malignant = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Normal, Label::Benign, Label::Malignant];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }

    /// Accepts a class index or a case-insensitive class name.
    pub fn parse(s: &str) -> Option<Label> {
        let s = s.trim();
        if let Ok(i) = s.parse::<usize>() {
            return Label::from_index(i);
        }
        Label::ALL.into_iter().find(|l| l.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One grayscale image (`1×H×W`, values in `[0,1]`), its label and lesion mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub label: Label,
    pub image: Tensor,
    pub mask: BinaryMask,
}

/// Samples of one image size with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    height: usize,
    width: usize,
    samples: Vec<Sample>,
    index: HashMap<u64, usize>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, samples: Vec<Sample>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::config(format!(
                "dataset size {height}×{width} has a zero dimension"
            )));
        }
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.image.shape() != [1, height, width] {
                return Err(Error::shape(format!(
                    "sample {} has image shape {:?}, expected [1, {height}, {width}]",
                    s.id,
                    s.image.shape()
                )));
            }
            if s.mask.dims() != (height, width) {
                return Err(Error::shape(format!(
                    "sample {} has mask {:?}, expected {height}×{width}",
                    s.id,
                    s.mask.dims()
                )));
            }
            if index.insert(s.id, i).is_some() {
                return Err(Error::input(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            height,
            width,
            samples,
            index,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.index.get(&id).map(|&i| &self.samples[i])
    }

    /// Looks up every id, failing on the first unknown one.
    pub fn select(&self, ids: &[u64]) -> Result<Vec<&Sample>> {
        ids.iter()
            .map(|&id| {
                self.get(id)
                    .ok_or_else(|| Error::input(format!("sample id {id} not in dataset")))
            })
            .collect()
    }

    /// Per-class sample counts, indexed by [`Label::index`].
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    /// Mean pixel intensity over all samples (the dataset-mean fill value).
    pub fn mean_intensity(&self) -> f64 {
        let n: usize = self.samples.iter().map(|s| s.image.len()).sum();
        if n == 0 {
            return 0.0;
        }
        self.samples.iter().map(|s| s.image.sum()).sum::<f64>() / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_parsing() {
        assert_eq!(Label::parse("2"), Some(Label::Malignant));
        assert_eq!(Label::parse("Benign"), Some(Label::Benign));
        assert_eq!(Label::parse("3"), None);
        assert_eq!(Label::parse("tumour"), None);
    }

    #[test]
    fn dataset_rejects_duplicates_and_bad_shapes() {
        let s = Sample {
            id: 1,
            label: Label::Normal,
            image: Tensor::zeros([1, 2, 2]),
            mask: BinaryMask::empty(2, 2),
        };
        assert!(Dataset::new(2, 2, vec![s.clone(), s.clone()]).is_err());
        assert!(Dataset::new(3, 2, vec![s.clone()]).is_err());
        let d = Dataset::new(2, 2, vec![s]).unwrap();
        assert!(d.get(1).is_some());
        assert!(d.select(&[1, 5]).is_err());
    }
}
