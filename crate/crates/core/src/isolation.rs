//! Which subarray pairs of a bank share no bitline or sense amplifier.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// How a map was produced. Carried along for reports and file headers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapOrigin {
    /// Open-bitline layout: neighbouring subarrays share sense amplifiers.
    AdjacentShare,
    /// Random symmetric map calibrated to an average coverage.
    TargetCoverage { coverage: f64, seed: u64 },
    /// Loaded from an explicit pair list.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IsolationError {
    #[error("a subarray cannot be isolated from itself (subarray {0})")]
    Reflexive(u32),
    #[error("subarray index {index} out of range for {subarrays} subarrays")]
    OutOfRange { index: u32, subarrays: u32 },
    #[error("isolation relation is not symmetric at ({0}, {1})")]
    Asymmetric(u32, u32),
    #[error("a map needs at least one subarray")]
    Empty,
}

/// Symmetric, irreflexive relation over the subarrays of a bank.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationMap {
    subarrays: u32,
    words: usize,
    bits: Vec<u64>,
    origin: MapOrigin,
}

impl IsolationMap {
    /// A map where no pair is isolated.
    pub fn none(subarrays: u32, origin: MapOrigin) -> Result<Self, IsolationError> {
        if subarrays == 0 {
            return Err(IsolationError::Empty);
        }
        let words = (subarrays as usize).div_ceil(64);
        Ok(Self {
            subarrays,
            words,
            bits: vec![0; words * subarrays as usize],
            origin,
        })
    }

    /// `isolated(i, j)` iff `|i - j| >= 2`.
    pub fn adjacent_share(subarrays: u32) -> Result<Self, IsolationError> {
        let mut m = Self::none(subarrays, MapOrigin::AdjacentShare)?;
        for i in 0..subarrays {
            for j in (i + 2)..subarrays {
                m.set_raw(i, j, true);
                m.set_raw(j, i, true);
            }
        }
        Ok(m)
    }

    /// Random symmetric map whose expected per-row coverage is `coverage`
    /// for banks with `rows_per_subarray` rows in each subarray.
    ///
    /// Coverage counts partner rows over all other rows of the bank, so each
    /// off-diagonal pair is drawn isolated with probability
    /// `coverage * (n*R - 1) / ((n - 1) * R)`, clamped to [0, 1].
    pub fn target_coverage(
        subarrays: u32,
        rows_per_subarray: u32,
        coverage: f64,
        seed: u64,
    ) -> Result<Self, IsolationError> {
        let mut m = Self::none(subarrays, MapOrigin::TargetCoverage { coverage, seed })?;
        if subarrays < 2 {
            return Ok(m);
        }
        let n = subarrays as f64;
        let r = rows_per_subarray as f64;
        let p = (coverage * (n * r - 1.0) / ((n - 1.0) * r)).clamp(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..subarrays {
            for j in (i + 1)..subarrays {
                if rng.gen::<f64>() < p {
                    m.set_raw(i, j, true);
                    m.set_raw(j, i, true);
                }
            }
        }
        Ok(m)
    }

    /// Builds a map from unordered isolated pairs.
    pub fn from_pairs<I>(subarrays: u32, pairs: I) -> Result<Self, IsolationError>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut m = Self::none(subarrays, MapOrigin::Explicit)?;
        for (i, j) in pairs {
            m.set_pair(i, j, true)?;
        }
        Ok(m)
    }

    pub fn subarrays(&self) -> u32 {
        self.subarrays
    }

    pub fn origin(&self) -> MapOrigin {
        self.origin
    }

    fn set_raw(&mut self, i: u32, j: u32, v: bool) {
        let idx = i as usize * self.words + j as usize / 64;
        let mask = 1u64 << (j % 64);
        if v {
            self.bits[idx] |= mask;
        } else {
            self.bits[idx] &= !mask;
        }
    }

    fn check_index(&self, index: u32) -> Result<(), IsolationError> {
        if index >= self.subarrays {
            return Err(IsolationError::OutOfRange {
                index,
                subarrays: self.subarrays,
            });
        }
        Ok(())
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set_pair(&mut self, i: u32, j: u32, isolated: bool) -> Result<(), IsolationError> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i == j {
            if isolated {
                return Err(IsolationError::Reflexive(i));
            }
            return Ok(());
        }
        self.set_raw(i, j, isolated);
        self.set_raw(j, i, isolated);
        Ok(())
    }

    /// Out-of-range indices are reported as not isolated.
    pub fn isolated(&self, i: u32, j: u32) -> bool {
        if i >= self.subarrays || j >= self.subarrays {
            return false;
        }
        let idx = i as usize * self.words + j as usize / 64;
        self.bits[idx] & (1u64 << (j % 64)) != 0
    }

    /// Subarrays isolated from `i`, ascending.
    pub fn partners(&self, i: u32) -> impl Iterator<Item = u32> + '_ {
        (0..self.subarrays).filter(move |&j| self.isolated(i, j))
    }

    /// Unordered isolated pairs with `i < j`, in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.subarrays).flat_map(move |i| {
            ((i + 1)..self.subarrays)
                .filter(move |&j| self.isolated(i, j))
                .map(move |j| (i, j))
        })
    }

    /// Re-checks symmetry and irreflexivity.
    pub fn check(&self) -> Result<(), IsolationError> {
        for i in 0..self.subarrays {
            if self.isolated(i, i) {
                return Err(IsolationError::Reflexive(i));
            }
            for j in (i + 1)..self.subarrays {
                if self.isolated(i, j) != self.isolated(j, i) {
                    return Err(IsolationError::Asymmetric(i, j));
                }
            }
        }
        Ok(())
    }

    /// Fraction of the other rows of a bank that a row in subarray `i` can
    /// pair with, for `rows_per_subarray`-row subarrays.
    pub fn row_coverage(&self, i: u32, rows_per_subarray: u32) -> f64 {
        let total = self.subarrays as u64 * rows_per_subarray as u64;
        if total <= 1 {
            return 0.0;
        }
        let partners = self.partners(i).count() as u64 * rows_per_subarray as u64;
        partners as f64 / (total - 1) as f64
    }

    pub fn mean_coverage(&self, rows_per_subarray: u32) -> f64 {
        let sum: f64 = (0..self.subarrays)
            .map(|i| self.row_coverage(i, rows_per_subarray))
            .sum();
        sum / self.subarrays as f64
    }
}
