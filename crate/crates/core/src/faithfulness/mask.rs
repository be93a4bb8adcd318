use crate::error::{Error, Result};

/// `H×W` pixel set, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    count: usize,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "mask of {} pixels does not match {height}×{width}",
                bits.len()
            )));
        }
        let count = bits.iter().filter(|&&b| b).count();
        Ok(Self {
            height,
            width,
            bits,
            count,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
            count: 0,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, bits).expect("sized by construction")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::input(format!(
                "mask dimensions differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count())
    }

    pub fn union_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a || b).count())
    }

    /// True when every set pixel of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        Ok(self.intersection_count(other)? == self.count)
    }

    /// Run lengths of alternating values, starting with a (possibly empty)
    /// run of `false`.
    pub fn runs(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    /// Inverse of [`BinaryMask::runs`].
    pub fn from_runs(height: usize, width: usize, runs: &[u32]) -> Result<Self> {
        let total: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        if total != (height * width) as u64 {
            return Err(Error::shape(format!(
                "mask runs cover {total} pixels, expected {}",
                height * width
            )));
        }
        let mut bits = Vec::with_capacity(height * width);
        for (i, &r) in runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        Self::new(height, width, bits)
    }
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}×{}, {} set)", self.height, self.width, self.count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_length_round_trip() {
        for bits in [
            vec![false, false, true, true, false],
            vec![true, true, true],
            vec![false; 4],
            vec![true, false, true, false],
        ] {
            let m = BinaryMask::new(1, bits.len(), bits).unwrap();
            assert_eq!(BinaryMask::from_runs(1, m.width(), &m.runs()).unwrap(), m);
        }
        assert_eq!(BinaryMask::new(1, 3, vec![true; 3]).unwrap().runs(), vec![0, 3]);
    }

    #[test]
    fn counts_and_dimension_checks() {
        let a = BinaryMask::from_fn(2, 2, |r, _| r == 0);
        let b = BinaryMask::from_fn(2, 2, |_, c| c == 0);
        assert_eq!(a.count(), 2);
        assert_eq!(a.intersection_count(&b).unwrap(), 1);
        assert_eq!(a.union_count(&b).unwrap(), 3);
        assert!(matches!(a.union_count(&BinaryMask::empty(2, 3)), Err(Error::Input(_))));
        assert!(BinaryMask::from_runs(2, 2, &[1, 2]).is_err());
    }
}
