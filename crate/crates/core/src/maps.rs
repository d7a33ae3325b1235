//! Layer maps from virtual layers to bank slots, and bank expansion.
//!
//! Entries are 1-based slot indices. For a source depth `L1` and virtual
//! depth `L2 >= L1`:
//!
//! ```text
//! stack:          g(l) = ((l - 1) mod L1) + 1           3→6: 1 2 3 1 2 3
//! interpolation:  g(l) = max(1, round_half_up(l·L1/L2))  3→6: 1 1 2 2 3 3
//! ```

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::WeightBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapKind {
    Stack,
    Interpolation,
    Identity,
}

/// How a bank grows at a stage boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Expansion {
    Stack,
    #[default]
    Interpolation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMap {
    entries: Vec<usize>,
    source_depth: usize,
    kind: MapKind,
}

fn check_range(from: usize, to: usize) -> Result<()> {
    if from == 0 || from > to {
        return Err(Error::MapRange { from, to });
    }
    Ok(())
}

impl LayerMap {
    pub fn identity(depth: usize) -> Self {
        Self {
            entries: (1..=depth).collect(),
            source_depth: depth,
            kind: MapKind::Identity,
        }
    }

    pub fn stack(from: usize, to: usize) -> Result<Self> {
        check_range(from, to)?;
        Ok(Self {
            entries: (1..=to).map(|l| (l - 1) % from + 1).collect(),
            source_depth: from,
            kind: MapKind::Stack,
        })
    }

    pub fn interpolation(from: usize, to: usize) -> Result<Self> {
        check_range(from, to)?;
        // round_half_up(l·from/to) = floor((2·l·from + to) / (2·to))
        let entries = (1..=to)
            .map(|l| ((2 * l * from + to) / (2 * to)).max(1))
            .collect();
        Ok(Self {
            entries,
            source_depth: from,
            kind: MapKind::Interpolation,
        })
    }

    pub fn build(expansion: Expansion, from: usize, to: usize) -> Result<Self> {
        match expansion {
            Expansion::Stack => Self::stack(from, to),
            Expansion::Interpolation => Self::interpolation(from, to),
        }
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    /// Number of virtual layers.
    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    pub fn source_depth(&self) -> usize {
        self.source_depth
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }
}

/// Grows `bank` to `n_new` slots; slot `n` becomes a deep copy of old slot
/// `g(n)`, optimizer moments included. Embeddings and final norm are kept.
pub fn expand_bank(bank: WeightBank, n_new: usize, expansion: Expansion) -> Result<WeightBank> {
    let n_old = bank.n_slots();
    if n_new < n_old {
        return Err(Error::Shrink {
            from: n_old,
            to: n_new,
        });
    }
    if n_new > bank.config().depth {
        return Err(Error::SlotCount {
            n_slots: n_new,
            depth: bank.config().depth,
        });
    }
    if n_new == n_old {
        return Ok(bank);
    }
    let map = LayerMap::build(expansion, n_old, n_new)?;
    let mut bank = bank;
    let old = core::mem::take(&mut bank.slots);
    bank.slots = map.entries().iter().map(|&g| old[g - 1].clone()).collect();
    bank.clear_gradients();
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn reference_patterns() {
        assert_eq!(LayerMap::stack(3, 6).unwrap().entries(), &[1, 2, 3, 1, 2, 3]);
        assert_eq!(LayerMap::stack(2, 5).unwrap().entries(), &[1, 2, 1, 2, 1]);
        assert_eq!(LayerMap::interpolation(3, 6).unwrap().entries(), &[1, 1, 2, 2, 3, 3]);
        assert_eq!(LayerMap::interpolation(5, 7).unwrap().entries(), &[1, 1, 2, 3, 4, 4, 5]);
    }

    #[test]
    fn invalid_ranges() {
        assert_eq!(LayerMap::stack(4, 3), Err(Error::MapRange { from: 4, to: 3 }));
        assert_eq!(LayerMap::interpolation(0, 3), Err(Error::MapRange { from: 0, to: 3 }));
    }

    #[test]
    fn equal_depth_is_identity() {
        for l in 1..=64 {
            let id: Vec<usize> = (1..=l).collect();
            assert_eq!(LayerMap::stack(l, l).unwrap().entries(), &id[..]);
            assert_eq!(LayerMap::interpolation(l, l).unwrap().entries(), &id[..]);
        }
    }

    #[test]
    fn interpolation_is_monotone_surjective_and_stack_periodic() {
        for to in 1..=64 {
            for from in 1..=to {
                let m = LayerMap::interpolation(from, to).unwrap();
                let e = m.entries();
                assert_eq!(e[0], 1);
                assert_eq!(*e.last().unwrap(), from);
                assert!(e.windows(2).all(|w| w[1] >= w[0] && w[1] - w[0] <= 1));
                let mut seen = vec![false; from];
                e.iter().for_each(|&g| seen[g - 1] = true);
                assert!(seen.iter().all(|&s| s), "{from}->{to} not surjective");

                let s = LayerMap::stack(from, to).unwrap();
                let e = s.entries();
                assert!(e.iter().all(|&g| (1..=from).contains(&g)));
                for l in 0..to.saturating_sub(from) {
                    assert_eq!(e[l], e[l + from]);
                }
            }
        }
    }
}
