//! Reviewer assignment with a shared overlap for agreement statistics.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssignError {
    #[error("{needed} pairs needed, {available} given")]
    InsufficientPairs { needed: usize, available: usize },
    #[error("overlap fraction must be between 0 and 1")]
    BadOverlap,
    #[error("reviewer names must be unique")]
    DuplicateReviewer,
}

/// Gives each reviewer `per_reviewer` pairs of their own (disjoint across
/// reviewers) plus `ceil(overlap · per_reviewer)` pairs drawn from every
/// other reviewer's own set. Deterministic for a given `seed`.
pub fn assign_reviews(
    pair_ids: &[String],
    reviewers: &[String],
    per_reviewer: usize,
    overlap: f64,
    seed: u64,
) -> Result<BTreeMap<String, Vec<String>>, AssignError> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(AssignError::BadOverlap);
    }
    let needed = reviewers.len() * per_reviewer;
    if pair_ids.len() < needed {
        return Err(AssignError::InsufficientPairs {
            needed,
            available: pair_ids.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = pair_ids.to_vec();
    shuffled.shuffle(&mut rng);
    let base: Vec<&[String]> = shuffled[..needed].chunks(per_reviewer.max(1)).collect();
    // Guard against floating-point noise such as 0.1 · 100 = 10.000000000000002.
    let shared = ((overlap * per_reviewer as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, reviewer) in reviewers.iter().enumerate() {
        let own = base.get(i).map_or(&[][..], |b| *b);
        if out.insert(reviewer.clone(), own.to_vec()).is_some() {
            return Err(AssignError::DuplicateReviewer);
        }
    }
    for (i, _) in reviewers.iter().enumerate() {
        let own = base.get(i).map_or(&[][..], |b| *b);
        for (j, other) in reviewers.iter().enumerate() {
            if i == j || own.is_empty() {
                continue;
            }
            let picks = index::sample(&mut rng, own.len(), shared.min(own.len()));
            out.get_mut(other)
                .unwrap()
                .extend(picks.into_iter().map(|k| own[k].clone()));
        }
    }
    Ok(out)
}
