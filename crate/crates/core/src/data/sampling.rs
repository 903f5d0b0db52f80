use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::dataset::ItemSet;
use crate::error::{Error, Result};

/// One item drawn uniformly from `1..=item_count` outside `history`.
pub fn sample_negative<R: Rng + ?Sized>(
    rng: &mut R,
    history: &ItemSet,
    item_count: usize,
) -> Result<usize> {
    let excluded = history
        .as_slice()
        .iter()
        .filter(|&&i| (1..=item_count).contains(&i))
        .count();
    if item_count <= excluded {
        return Err(Error::Domain(format!(
            "no negative available: {item_count} items, {excluded} in history"
        )));
    }
    loop {
        let cand = rng.random_range(1..=item_count);
        if !history.contains(cand) {
            return Ok(cand);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalNegatives {
    pub items: Vec<usize>,
    /// Fewer than the requested number of eligible items existed.
    pub exhausted: bool,
}

/// `n` distinct items outside `history`, or every eligible item when fewer
/// than `n` exist (ascending order in that case).
pub fn sample_eval_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    history: &ItemSet,
    item_count: usize,
    n: usize,
) -> EvalNegatives {
    let eligible_count = item_count
        - history
            .as_slice()
            .iter()
            .filter(|&&i| (1..=item_count).contains(&i))
            .count();
    if eligible_count <= n {
        let items = (1..=item_count).filter(|&i| !history.contains(i)).collect();
        return EvalNegatives {
            items,
            exhausted: eligible_count < n,
        };
    }
    if eligible_count >= 2 * n {
        let mut seen = HashSet::with_capacity(n);
        let mut items = Vec::with_capacity(n);
        while items.len() < n {
            let cand = rng.random_range(1..=item_count);
            if !history.contains(cand) && seen.insert(cand) {
                items.push(cand);
            }
        }
        return EvalNegatives {
            items,
            exhausted: false,
        };
    }
    let eligible: Vec<usize> = (1..=item_count).filter(|&i| !history.contains(i)).collect();
    let items = eligible.choose_multiple(rng, n).copied().collect();
    EvalNegatives {
        items,
        exhausted: false,
    }
}

/// `n` items from `history` for the long-term aggregation: without
/// replacement when the history is large enough, with replacement otherwise.
pub fn sample_fism_items<R: Rng + ?Sized>(
    rng: &mut R,
    history: &[usize],
    n: usize,
) -> Result<Vec<usize>> {
    if history.is_empty() {
        return Err(Error::Domain(
            "cannot sample long-term items from an empty history".into(),
        ));
    }
    if history.len() < n {
        Ok((0..n)
            .map(|_| history[rng.random_range(0..history.len())])
            .collect())
    } else {
        Ok(history.choose_multiple(rng, n).copied().collect())
    }
}
