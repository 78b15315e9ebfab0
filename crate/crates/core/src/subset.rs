use std::fmt;

use serde::{Deserialize, Serialize};

/// A subset of the coordinate axes `{0, .., d-1}` stored as a bitmask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubsetMask(pub u32);

impl SubsetMask {
    pub const EMPTY: SubsetMask = SubsetMask(0);

    pub fn full(dim: usize) -> Self {
        SubsetMask(((1u64 << dim) - 1) as u32)
    }

    pub fn singleton(axis: usize) -> Self {
        SubsetMask(1 << axis)
    }

    pub fn from_axes(axes: &[usize]) -> Self {
        SubsetMask(axes.iter().fold(0, |acc, &a| acc | (1 << a)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, axis: usize) -> bool {
        self.0 & (1 << axis) != 0
    }

    pub fn fits(self, dim: usize) -> bool {
        (self.0 as u64) < (1u64 << dim)
    }

    /// Axes in increasing order.
    pub fn axes(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32).filter(move |a| bits & (1 << a) != 0)
    }

    /// All nonempty subsets of `{0, .., dim-1}` in increasing bit order.
    pub fn nonempty(dim: usize) -> impl Iterator<Item = SubsetMask> {
        (1..(1u32 << dim)).map(SubsetMask)
    }
}

impl fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, a) in self.axes().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", a + 1)?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerates_nonempty_subsets() {
        let all: Vec<_> = SubsetMask::nonempty(3).collect();
        assert_eq!(all.len(), 7);
        assert_eq!(all[0], SubsetMask::singleton(0));
        assert_eq!(*all.last().unwrap(), SubsetMask::full(3));
    }

    #[test]
    fn axes_and_display() {
        let s = SubsetMask::from_axes(&[0, 2]);
        assert_eq!(s.axes().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.to_string(), "{1,3}");
        assert!(s.fits(3));
        assert!(!s.fits(2));
    }
}
