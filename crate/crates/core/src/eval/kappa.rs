//! Cohen's and Light's kappa.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KappaError {
    #[error("label lists differ in length ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("no labels to compare")]
    EmptyInput,
    #[error("no two reviewers rated a common item")]
    NoOverlap,
}

/// Cohen's kappa of two raters over the same items.
///
/// Computed in integers as `(n·agree - Σ a_k·b_k) / (n² - Σ a_k·b_k)`,
/// where `a_k`, `b_k` are the raters' counts for label `k`. When both
/// raters use one and the same label throughout, chance agreement is 1 and
/// the result is 1 by convention.
pub fn cohen_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64, KappaError> {
    if a.len() != b.len() {
        return Err(KappaError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(KappaError::EmptyInput);
    }
    let n = a.len() as i128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as i128;
    let mut counts: HashMap<&T, (i128, i128)> = HashMap::new();
    for x in a {
        counts.entry(x).or_default().0 += 1;
    }
    for y in b {
        counts.entry(y).or_default().1 += 1;
    }
    let chance: i128 = counts.values().map(|(ca, cb)| ca * cb).sum();
    let denominator = n * n - chance;
    if denominator == 0 {
        return Ok(1.0);
    }
    Ok((n * agree - chance) as f64 / denominator as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairKappa {
    pub rater_a: String,
    pub rater_b: String,
    /// Number of commonly rated items.
    pub items: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightsKappa {
    pub kappa: f64,
    pub pairwise: Vec<PairKappa>,
}

/// Light's kappa: the mean Cohen's kappa over all rater pairs, each pair
/// restricted to the items both rated. Pairs without common items are left
/// out.
pub fn lights_kappa<L: Eq + Hash>(ratings: &BTreeMap<String, BTreeMap<String, L>>) -> Result<LightsKappa, KappaError> {
    let raters: Vec<(&String, &BTreeMap<String, L>)> = ratings.iter().collect();
    let mut pairwise = Vec::new();
    for (i, (name_a, items_a)) in raters.iter().enumerate() {
        for (name_b, items_b) in &raters[i + 1..] {
            let (la, lb): (Vec<&L>, Vec<&L>) = items_a
                .iter()
                .filter_map(|(item, label)| Some((label, items_b.get(item)?)))
                .unzip();
            if la.is_empty() {
                continue;
            }
            pairwise.push(PairKappa {
                rater_a: (*name_a).clone(),
                rater_b: (*name_b).clone(),
                items: la.len(),
                kappa: cohen_kappa(&la, &lb)?,
            });
        }
    }
    if pairwise.is_empty() {
        return Err(KappaError::NoOverlap);
    }
    let kappa = pairwise.iter().map(|p| p.kappa).sum::<f64>() / pairwise.len() as f64;
    Ok(LightsKappa { kappa, pairwise })
}

/// Agreement bands of Landis and Koch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgreementBand {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl AgreementBand {
    pub fn of(kappa: f64) -> Self {
        match kappa {
            k if k < 0.0 => AgreementBand::Poor,
            k if k <= 0.20 => AgreementBand::Slight,
            k if k <= 0.40 => AgreementBand::Fair,
            k if k <= 0.60 => AgreementBand::Moderate,
            k if k <= 0.80 => AgreementBand::Substantial,
            _ => AgreementBand::AlmostPerfect,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgreementBand::Poor => "poor",
            AgreementBand::Slight => "slight",
            AgreementBand::Fair => "fair",
            AgreementBand::Moderate => "moderate",
            AgreementBand::Substantial => "substantial",
            AgreementBand::AlmostPerfect => "almost perfect",
        }
    }
}
