//! Copy-variable expectations.
//!
//! Every copy term in the moment-coupled family factorizes as a coefficient
//! attached to the original particle times a quantity of the copy particle.
//! The per-copy quantities are collected in a [`CopyTable`]; the copy index
//! decides whether a particle sees the full ensemble average or a single
//! re-indexed partner.

use crate::error::{invalid, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CopyMode {
    /// Exact average over every particle (O(N) through the factorization).
    #[default]
    Full,
    /// One independent uniformly permuted partner per particle and copy.
    Reindexed { seed: u64 },
}

/// Realization of the tilde and bar copies for an ensemble of `n` particles.
#[derive(Clone, Debug, PartialEq)]
pub struct CopyIndex {
    mode: CopyMode,
    tilde: Vec<usize>,
    bar: Vec<usize>,
}

impl CopyIndex {
    pub fn new(mode: CopyMode, n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("copy index over an empty ensemble");
        }
        let (tilde, bar) = match mode {
            CopyMode::Full => (Vec::new(), Vec::new()),
            CopyMode::Reindexed { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut tilde: Vec<usize> = (0..n).collect();
                tilde.shuffle(&mut rng);
                let mut bar: Vec<usize> = (0..n).collect();
                bar.shuffle(&mut rng);
                (tilde, bar)
            }
        };
        Ok(CopyIndex { mode, tilde, bar })
    }

    pub fn full() -> Self {
        CopyIndex {
            mode: CopyMode::Full,
            tilde: Vec::new(),
            bar: Vec::new(),
        }
    }

    pub fn mode(&self) -> CopyMode {
        self.mode
    }

    pub fn tilde_partner(&self, j: usize) -> Option<usize> {
        self.tilde.get(j).copied()
    }

    pub fn bar_partner(&self, j: usize) -> Option<usize> {
        self.bar.get(j).copied()
    }
}

/// Row-major table of per-particle copy quantities with their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct CopyTable {
    width: usize,
    rows: Vec<f64>,
    mean: Vec<f64>,
}

impl CopyTable {
    pub fn from_rows(width: usize, rows: Vec<f64>) -> Self {
        let n = rows.len().checked_div(width).unwrap_or(0);
        let mut mean = vec![0.0; width];
        for j in 0..n {
            for (m, x) in mean.iter_mut().zip(&rows[j * width..(j + 1) * width]) {
                *m += x;
            }
        }
        if n > 0 {
            mean.iter_mut().for_each(|m| *m /= n as f64);
        }
        CopyTable { width, rows, mean }
    }

    /// Builds the table by filling one row per particle.
    pub fn build(n: usize, width: usize, mut fill: impl FnMut(usize, &mut [f64])) -> Self {
        let mut rows = vec![0.0; n * width];
        if width > 0 {
            for (j, row) in rows.chunks_mut(width).enumerate() {
                fill(j, row);
            }
        }
        Self::from_rows(width, rows)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.width..(j + 1) * self.width]
    }

    /// Tilde-copy expectation seen by particle `j`.
    pub fn tilde(&self, copies: &CopyIndex, j: usize) -> &[f64] {
        match copies.tilde_partner(j) {
            Some(l) => self.row(l),
            None => &self.mean,
        }
    }

    /// Bar-copy expectation seen by particle `j`.
    pub fn bar(&self, copies: &CopyIndex, j: usize) -> &[f64] {
        match copies.bar_partner(j) {
            Some(l) => self.row(l),
            None => &self.mean,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_mode_returns_mean() {
        let t = CopyTable::from_rows(2, vec![1.0, 2.0, 3.0, 6.0]);
        let c = CopyIndex::full();
        assert_eq!(t.tilde(&c, 0), &[2.0, 4.0]);
        assert_eq!(t.bar(&c, 1), &[2.0, 4.0]);
    }

    #[test]
    fn reindexed_mode_uses_permutations() {
        let c = CopyIndex::new(CopyMode::Reindexed { seed: 7 }, 50).unwrap();
        let mut seen: Vec<usize> = (0..50).map(|j| c.tilde_partner(j).unwrap()).collect();
        seen.sort();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
        let again = CopyIndex::new(CopyMode::Reindexed { seed: 7 }, 50).unwrap();
        assert_eq!(c, again);
    }
}
