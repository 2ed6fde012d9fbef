//! Stochastic training loop: triplet sampling with violation search, the
//! simultaneous three-parameter update, norm projection and validation-based
//! early stopping.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MimlError, Result};
use crate::evaluation::dataset_ranking_loss;
use crate::objective::{build_ybar_pool, harmonic_weight, MARGIN};
use crate::scoring::{BagEmbedding, BagScore};
use crate::types::{new_model, Bag, Dataset, Model, TrainConfig, Triplet, Variant};

/// `γ_t = γ0 / (1 + η γ0 t)`.
pub fn step_size(cfg: &TrainConfig, t: u64) -> f64 {
    cfg.gamma0 / (1.0 + cfg.eta * cfg.gamma0 * t as f64)
}

/// Draws a bag uniformly, then `y` uniformly from its relevant labels plus
/// the dummy.
pub fn sample_training_pair<R: Rng + ?Sized>(dataset: &Dataset, rng: &mut R) -> (usize, usize) {
    assert!(!dataset.is_empty(), "cannot sample from an empty dataset");
    let i = rng.random_range(0..dataset.len());
    let labels = &dataset.bags[i].labels;
    let j = rng.random_range(0..=labels.len());
    let y = labels.get(j).copied().unwrap_or(dataset.label_space.dummy());
    (i, y)
}

/// A violation found by the sampler, with the contrast label's bag score.
struct Violation {
    triplet: Triplet,
    f_bar: f64,
}

fn search_violation<R: Rng + ?Sized>(
    model: &Model,
    emb: &BagEmbedding,
    bag_index: usize,
    y_score: &BagScore,
    pool: &[usize],
    rng: &mut R,
) -> Option<Violation> {
    let threshold = y_score.score - MARGIN;
    for attempt in 1..=pool.len() {
        let y_bar = pool[rng.random_range(0..pool.len())];
        let bar = emb.score(model, y_bar);
        if bar.score > threshold {
            return Some(Violation {
                triplet: Triplet {
                    bag_index,
                    y: y_score.label,
                    y_bar,
                    key: y_score.key(),
                    key_bar: bar.key(),
                    v: attempt,
                    s_weight: harmonic_weight(pool.len(), attempt),
                },
                f_bar: bar.score,
            });
        }
    }
    None
}

/// Samples contrast labels uniformly with replacement, at most `|pool|`
/// times, and returns the first one inside the margin of `y`.
pub fn find_violation<R: Rng + ?Sized>(
    model: &Model,
    bag: &Bag,
    bag_index: usize,
    y: usize,
    pool: &[usize],
    rng: &mut R,
) -> Option<Triplet> {
    let emb = BagEmbedding::new(model, bag);
    let y_score = emb.score(model, y);
    search_violation(model, &emb, bag_index, &y_score, pool, rng).map(|v| v.triplet)
}

/// Gradient step on one triplet, all three gradients taken at the current
/// parameters, followed by projection of `W0` and the two touched heads.
pub fn sgd_update(model: &mut Model, bag: &Bag, triplet: &Triplet, gamma: f64) {
    let x = bag.instance(triplet.key.instance);
    let x_bar = bag.instance(triplet.key_bar.instance);
    let e = model.embed(x);
    let e_bar = model.embed(x_bar);
    apply_update(model, x, x_bar, &e, &e_bar, triplet, gamma);
}

fn apply_update(
    model: &mut Model,
    x: &[f64],
    x_bar: &[f64],
    e: &[f64],
    e_bar: &[f64],
    triplet: &Triplet,
    gamma: f64,
) {
    assert!(triplet.y != triplet.y_bar, "triplet labels must differ");
    let step = gamma * triplet.s_weight;
    if step == 0.0 {
        return;
    }
    let (y, k) = (triplet.y, triplet.key.sub_concept);
    let (yb, kb) = (triplet.y_bar, triplet.key_bar.sub_concept);

    if model.variant.has_shared_space() {
        let d = model.feature_dim;
        let oy = model.head_offset(y, k);
        let ob = model.head_offset(yb, kb);
        let Model { w0, heads, embed_dim, .. } = model;
        let w_y = &heads[oy..oy + *embed_dim];
        let w_b = &heads[ob..ob + *embed_dim];
        for ((row, &a), &b) in w0.chunks_exact_mut(d).zip(w_b).zip(w_y) {
            let (a, b) = (step * a, step * b);
            for ((w, &xb), &xv) in row.iter_mut().zip(x_bar).zip(x) {
                *w -= a * xb - b * xv;
            }
        }
    }
    for (w, &v) in model.head_mut(y, k).iter_mut().zip(e) {
        *w += step * v;
    }
    for (w, &v) in model.head_mut(yb, kb).iter_mut().zip(e_bar) {
        *w -= step * v;
    }

    model.project_w0_columns();
    model.project_head(y, k);
    model.project_head(yb, kb);
}

/// One recorded validation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub iteration: u64,
    /// `None` when there is no validation set or no bag defines the loss.
    pub val_ranking_loss: Option<f64>,
    /// Sum of sampled triplet losses over iterations `0..iteration`.
    pub cumulative_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    /// Last iterate (the returned model is the best validation checkpoint).
    pub model: Model,
    pub t: u64,
    pub rng: ChaCha8Rng,
    pub best_val_rankloss: f64,
    pub evals_since_improvement: u32,
    pub history: Vec<HistoryPoint>,
    pub cumulative_loss: f64,
    /// Iterations that found a violation and updated the model.
    pub updates: u64,
    pub validation_bags: usize,
}

impl TrainState {
    /// Mean sampled loss per iteration between two recorded history points.
    pub fn mean_loss_between(&self, from: u64, to: u64) -> Option<f64> {
        let at = |t: u64| self.history.iter().find(|h| h.iteration == t).map(|h| h.cumulative_loss);
        if to <= from {
            return None;
        }
        Some((at(to)? - at(from)?) / (to - from) as f64)
    }
}

/// Running mean of the sampled losses at every history point.
pub fn cumulative_loss_curve(state: &TrainState) -> Vec<(u64, f64)> {
    state
        .history
        .iter()
        .map(|h| {
            let mean = if h.iteration == 0 { 0.0 } else { h.cumulative_loss / h.iteration as f64 };
            (h.iteration, mean)
        })
        .collect()
}

/// `r` for top-r prediction: mean training label cardinality, rounded,
/// at least one.
pub fn top_r(dataset: &Dataset) -> usize {
    (dataset.mean_label_cardinality().round() as usize).max(1)
}

/// Runs the full training procedure and returns the best validation
/// checkpoint together with the final loop state.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainState)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(MimlError::Config("training set is empty".into()));
    }
    dataset.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    let n = dataset.len();
    let n_val = (n as f64 * cfg.validation_fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let validation = dataset.subset(&order[..n_val]);
    let train_set = dataset.subset(&order[n_val..]);

    let mut model = new_model(dataset.feature_dim, dataset.label_space, cfg, &mut rng)?;
    if cfg.variant == Variant::V2TopR {
        model.top_r = Some(top_r(&train_set));
    }

    let validate = |m: &Model| if validation.is_empty() { None } else { dataset_ranking_loss(m, &validation) };
    let initial = validate(&model);
    let mut best = model.clone();
    let mut state = TrainState {
        model,
        t: 0,
        rng,
        best_val_rankloss: initial.unwrap_or(f64::INFINITY),
        evals_since_improvement: 0,
        history: vec![HistoryPoint { iteration: 0, val_ranking_loss: initial, cumulative_loss: 0.0 }],
        cumulative_loss: 0.0,
        updates: 0,
        validation_bags: validation.len(),
    };
    let uses_validation = initial.is_some();

    while state.t < cfg.max_iters {
        let (bi, y) = sample_training_pair(&train_set, &mut state.rng);
        let bag = &train_set.bags[bi];
        let mut loss = 0.0;
        if let Ok(pool) = build_ybar_pool(bag, y, train_set.label_space) {
            let emb = BagEmbedding::new(&state.model, bag);
            let y_score = emb.score(&state.model, y);
            if let Some(v) = search_violation(&state.model, &emb, bi, &y_score, &pool, &mut state.rng) {
                let tr = v.triplet;
                loss = tr.s_weight * (MARGIN + v.f_bar - y_score.score);
                let gamma = step_size(cfg, state.t);
                apply_update(
                    &mut state.model,
                    bag.instance(tr.key.instance),
                    bag.instance(tr.key_bar.instance),
                    emb.instance(tr.key.instance),
                    emb.instance(tr.key_bar.instance),
                    &tr,
                    gamma,
                );
                state.updates += 1;
            }
        }
        state.cumulative_loss += loss;
        state.t += 1;

        if state.t.is_multiple_of(cfg.eval_every) || state.t == cfg.max_iters {
            let val = validate(&state.model);
            state.history.push(HistoryPoint {
                iteration: state.t,
                val_ranking_loss: val,
                cumulative_loss: state.cumulative_loss,
            });
            if let (true, Some(v)) = (uses_validation, val) {
                if v < state.best_val_rankloss {
                    state.best_val_rankloss = v;
                    state.evals_since_improvement = 0;
                    best.clone_from(&state.model);
                } else {
                    state.evals_since_improvement += 1;
                    if state.evals_since_improvement >= cfg.patience {
                        break;
                    }
                }
            }
        }
    }

    if !uses_validation {
        best.clone_from(&state.model);
    }
    Ok((best, state))
}
