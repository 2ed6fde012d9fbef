//! Exact and sampled forms of the weighted ranking objective.
//!
//! Two violation counts appear here. [`rank_count`] is the strict count of
//! contrast labels scoring above `l`; [`margin_violation_count`] counts
//! contrast labels inside the unit margin (`f_j > f_l - 1`), which is the
//! test the sampler uses. The hinge surrogate normalizes by the margin count
//! so that its expectation under the sampler is exact.

use crate::error::{MimlError, Result};
use crate::scoring::BagEmbedding;
use crate::types::{Bag, LabelSpace, Model};

/// Hinge margin between a relevant label and a contrast label.
pub const MARGIN: f64 = 1.0;

/// `H_n = 1 + 1/2 + ... + 1/n`, zero for `n = 0`.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

/// Contrast labels for `(bag, y)`: every irrelevant real label, plus the
/// dummy when `y` is a real label.
pub fn build_ybar_pool(bag: &Bag, y: usize, label_space: LabelSpace) -> Result<Vec<usize>> {
    let dummy = label_space.dummy();
    assert!(
        y == dummy || bag.is_relevant(y),
        "label {y} is neither the dummy nor relevant to bag {}",
        bag.id
    );
    let mut pool: Vec<usize> =
        (0..label_space.num_labels).filter(|&l| !bag.is_relevant(l)).collect();
    if y != dummy {
        pool.push(dummy);
    }
    if pool.is_empty() {
        return Err(MimlError::NoContrast { bag: bag.id.clone() });
    }
    Ok(pool)
}

/// A label `y`, its contrast pool and the bag scores of every label id.
#[derive(Debug, Clone)]
pub struct ViolationContext<'a> {
    pub y: usize,
    pub pool: &'a [usize],
    pub scores: &'a [f64],
}

impl ViolationContext<'_> {
    #[inline]
    pub fn f_y(&self) -> f64 {
        self.scores[self.y]
    }

    pub fn rank_count(&self) -> usize {
        let f_y = self.f_y();
        self.pool.iter().filter(|&&j| self.scores[j] > f_y).count()
    }

    pub fn violation_count(&self) -> usize {
        let f_y = self.f_y();
        self.pool.iter().filter(|&&j| self.scores[j] > f_y - MARGIN).count()
    }

    #[inline]
    pub fn hinge(&self, j: usize) -> f64 {
        (MARGIN + self.scores[j] - self.f_y()).max(0.0)
    }

    /// `Σ_j ε(V) |1 + f_j − f_y|₊ / V`, zero when nothing violates.
    pub fn psi(&self) -> f64 {
        let v = self.violation_count();
        if v == 0 {
            return 0.0;
        }
        let total: f64 = self.pool.iter().map(|&j| self.hinge(j)).sum();
        ranking_error(v) * total / v as f64
    }
}

fn with_context<T>(model: &Model, bag: &Bag, l: usize, f: impl FnOnce(&ViolationContext) -> T, empty: T) -> T {
    let Ok(pool) = build_ybar_pool(bag, l, model.label_space()) else {
        return empty;
    };
    let scores = BagEmbedding::new(model, bag).all_scores(model);
    f(&ViolationContext { y: l, pool: &pool, scores: &scores })
}

/// Number of contrast labels strictly out-scoring `l` on `bag`.
pub fn rank_count(model: &Model, bag: &Bag, l: usize) -> usize {
    with_context(model, bag, l, |c| c.rank_count(), 0)
}

/// Number of contrast labels with `f_j > f_l − 1`.
pub fn margin_violation_count(model: &Model, bag: &Bag, l: usize) -> usize {
    with_context(model, bag, l, |c| c.violation_count(), 0)
}

/// Ranking error `ε = H_R`.
pub fn ranking_error(r: usize) -> f64 {
    harmonic(r)
}

/// Hinge surrogate Ψ of the ranking error of `l` on `bag`.
pub fn surrogate_psi(model: &Model, bag: &Bag, l: usize) -> f64 {
    with_context(model, bag, l, |c| c.psi(), 0.0)
}

/// `weight · |1 + f_ybar(X) − f_y(X)|₊` with bag-level scores.
pub fn triplet_loss(model: &Model, bag: &Bag, y: usize, y_bar: usize, weight: f64) -> f64 {
    assert!(weight >= 0.0, "negative triplet weight");
    let emb = BagEmbedding::new(model, bag);
    let f_y = emb.score(model, y).score;
    let f_bar = emb.score(model, y_bar).score;
    weight * (MARGIN + f_bar - f_y).max(0.0)
}

/// `S_{Ȳ,v} = H_{⌊|Ȳ|/v⌋}`.
pub fn harmonic_weight(pool_size: usize, v: usize) -> f64 {
    assert!(v >= 1 && v <= pool_size, "sampling step {v} outside [1, {pool_size}]");
    harmonic(pool_size / v)
}

/// Closed form of `E[1/ξ]` for `ξ` geometric with success probability `p`:
/// `−p ln p / (1 − p)`.
pub fn estimate_rank_expectation(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p = {p} outside (0, 1)");
    -p * p.ln() / (1.0 - p)
}
