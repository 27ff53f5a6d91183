//! Sufficient-statistic states of a two-arm trial and their dense layer indexing.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    C,
    D,
}

/// `((s_c, s_d), (n_c, n_d))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct TrialState {
    pub s_c: u32,
    pub s_d: u32,
    pub n_c: u32,
    pub n_d: u32,
}

impl TrialState {
    pub const fn new(s_c: u32, s_d: u32, n_c: u32, n_d: u32) -> Self {
        TrialState { s_c, s_d, n_c, n_d }
    }

    pub fn is_valid(&self) -> bool {
        self.s_c <= self.n_c && self.s_d <= self.n_d
    }

    pub fn epoch(&self) -> u32 {
        self.n_c + self.n_d
    }

    /// Total successes `s(x)`.
    pub fn successes(&self) -> u32 {
        self.s_c + self.s_d
    }

    pub fn f_c(&self) -> u32 {
        self.n_c - self.s_c
    }

    pub fn f_d(&self) -> u32 {
        self.n_d - self.s_d
    }

    /// Exchange the arms.
    pub fn swap(&self) -> Self {
        TrialState::new(self.s_d, self.s_c, self.n_d, self.n_c)
    }

    /// `(success, failure)` successors after allocating to `arm`.
    pub fn successors(&self, arm: Arm) -> (TrialState, TrialState) {
        let x = *self;
        match arm {
            Arm::C => (
                TrialState { s_c: x.s_c + 1, n_c: x.n_c + 1, ..x },
                TrialState { n_c: x.n_c + 1, ..x },
            ),
            Arm::D => (
                TrialState { s_d: x.s_d + 1, n_d: x.n_d + 1, ..x },
                TrialState { n_d: x.n_d + 1, ..x },
            ),
        }
    }

    /// Predecessor that reached `self` by an allocation to `arm` with the given outcome.
    pub fn predecessor(&self, arm: Arm, success: bool) -> Option<TrialState> {
        let x = *self;
        let p = match (arm, success) {
            (Arm::C, true) if x.s_c > 0 => TrialState { s_c: x.s_c - 1, n_c: x.n_c - 1, ..x },
            (Arm::C, false) if x.n_c > x.s_c => TrialState { n_c: x.n_c - 1, ..x },
            (Arm::D, true) if x.s_d > 0 => TrialState { s_d: x.s_d - 1, n_d: x.n_d - 1, ..x },
            (Arm::D, false) if x.n_d > x.s_d => TrialState { n_d: x.n_d - 1, ..x },
            _ => return None,
        };
        Some(p)
    }
}

impl fmt::Display for TrialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(({},{}),({},{}))", self.s_c, self.s_d, self.n_c, self.n_d)
    }
}

/// Dense index of the admissible states at epoch `t` under burn-in `b`.
///
/// States are ordered by ascending `n_c`, then `s_c`, then `s_d`. Before the
/// burn-in completes the arms alternate C, D, C, D, so `n_c = ⌈t/2⌉`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerIndex {
    t: u32,
    burn_in: u32,
    nc_lo: u32,
    nc_hi: u32,
    /// `offsets[k]` is the first index of the block `n_c = nc_lo + k`;
    /// the final entry is the layer size.
    offsets: Vec<usize>,
}

impl LayerIndex {
    pub fn new(t: u32, burn_in: u32) -> Self {
        let (nc_lo, nc_hi) = if t >= 2 * burn_in {
            (burn_in, t - burn_in)
        } else {
            let c = t.div_ceil(2);
            (c, c)
        };
        let mut offsets = Vec::with_capacity((nc_hi - nc_lo + 2) as usize);
        let mut acc = 0usize;
        for n_c in nc_lo..=nc_hi {
            offsets.push(acc);
            acc += (n_c as usize + 1) * ((t - n_c) as usize + 1);
        }
        offsets.push(acc);
        LayerIndex { t, burn_in, nc_lo, nc_hi, offsets }
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn burn_in(&self) -> u32 {
        self.burn_in
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nc_range(&self) -> std::ops::RangeInclusive<u32> {
        self.nc_lo..=self.nc_hi
    }

    /// First index and size of the `n_c` block.
    pub fn block(&self, n_c: u32) -> (usize, usize) {
        let k = (n_c - self.nc_lo) as usize;
        (self.offsets[k], self.offsets[k + 1] - self.offsets[k])
    }

    pub fn contains(&self, x: &TrialState) -> bool {
        x.is_valid() && x.epoch() == self.t && (self.nc_lo..=self.nc_hi).contains(&x.n_c)
    }

    /// Canonical index; the caller guarantees admissibility.
    #[inline]
    pub fn index_unchecked(&self, x: &TrialState) -> usize {
        self.offsets[(x.n_c - self.nc_lo) as usize]
            + x.s_c as usize * (x.n_d as usize + 1)
            + x.s_d as usize
    }

    pub fn index(&self, x: &TrialState) -> Result<usize> {
        if self.contains(x) {
            Ok(self.index_unchecked(x))
        } else {
            Err(Error::Inadmissible(format!("{x} at epoch {}", self.t)))
        }
    }

    pub fn state(&self, i: usize) -> TrialState {
        assert!(i < self.len(), "index {i} out of range");
        let k = self.offsets.partition_point(|&o| o <= i) - 1;
        let n_c = self.nc_lo + k as u32;
        let n_d = self.t - n_c;
        let r = i - self.offsets[k];
        let w = n_d as usize + 1;
        TrialState::new((r / w) as u32, (r % w) as u32, n_c, n_d)
    }

    /// All states in canonical order.
    pub fn states(&self) -> impl Iterator<Item = TrialState> + '_ {
        let t = self.t;
        self.nc_range().flat_map(move |n_c| {
            let n_d = t - n_c;
            (0..=n_c).flat_map(move |s_c| (0..=n_d).map(move |s_d| TrialState::new(s_c, s_d, n_c, n_d)))
        })
    }
}

/// Layer at epoch `t` of a trial with horizon `n` and burn-in `b` per arm.
pub fn layer(n: u32, t: u32, b: u32) -> Result<LayerIndex> {
    if t > n {
        return Err(Error::Domain(format!("epoch {t} exceeds horizon {n}")));
    }
    if 2 * b > n {
        return Err(Error::Domain(format!("burn-in {b} per arm does not fit horizon {n}")));
    }
    Ok(LayerIndex::new(t, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_layers() {
        let l = LayerIndex::new(0, 0);
        assert_eq!(l.len(), 1);
        assert_eq!(l.state(0), TrialState::default());
        let l = LayerIndex::new(12, 6);
        assert_eq!(l.len(), 49);
        assert!(l.states().all(|x| x.n_c == 6 && x.n_d == 6));
        assert_eq!(LayerIndex::new(2, 0).len(), 10);
    }

    #[test]
    fn layer_one_order() {
        let l = LayerIndex::new(1, 0);
        assert_eq!(l.index(&TrialState::new(0, 0, 0, 1)).unwrap(), 0);
        assert_eq!(l.index(&TrialState::new(0, 1, 0, 1)).unwrap(), 1);
        assert_eq!(l.index(&TrialState::new(0, 0, 1, 0)).unwrap(), 2);
        assert_eq!(l.index(&TrialState::new(1, 0, 1, 0)).unwrap(), 3);
    }

    #[test]
    fn successor_examples() {
        let (s, f) = TrialState::default().successors(Arm::C);
        assert_eq!(s, TrialState::new(1, 0, 1, 0));
        assert_eq!(f, TrialState::new(0, 0, 1, 0));
        let (s, f) = TrialState::new(1, 2, 2, 2).successors(Arm::D);
        assert_eq!(s, TrialState::new(1, 3, 2, 3));
        assert_eq!(f, TrialState::new(1, 2, 2, 3));
    }

    #[test]
    fn layer_bounds() {
        assert!(layer(10, 11, 0).is_err());
        assert!(layer(10, 4, 6).is_err());
        assert!(layer(10, 10, 5).is_ok());
        let l = LayerIndex::new(3, 2);
        assert!(l.index(&TrialState::new(0, 0, 1, 2)).is_err());
        assert!(l.index(&TrialState::new(0, 0, 2, 1)).is_ok());
    }
}
