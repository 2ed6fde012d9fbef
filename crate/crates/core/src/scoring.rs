//! Forward pass: instance scores per (label, sub-concept), bag scores with
//! their key instance, label rankings and the relevant-label decision.
//!
//! Ties are always broken towards the smallest index (instance, then
//! sub-concept, then label id).

use crate::types::{Bag, KeyChoice, Model, Variant};

/// Score of a bag on one label together with the arg-max that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BagScore {
    pub label: usize,
    pub score: f64,
    pub key_instance: usize,
    pub sub_concept: usize,
}

impl BagScore {
    pub fn key(&self) -> KeyChoice {
        KeyChoice { instance: self.key_instance, sub_concept: self.sub_concept }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Model {
    /// Writes the shared-space image `W0 x` of `x` into `out` (or copies `x`
    /// under V1).
    pub fn embed_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.feature_dim, "instance dimension mismatch");
        assert_eq!(out.len(), self.embed_dim);
        if self.variant.has_shared_space() {
            for (o, row) in out.iter_mut().zip(self.w0.chunks_exact(self.feature_dim)) {
                *o = dot(row, x);
            }
        } else {
            out.copy_from_slice(x);
        }
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.embed_dim];
        self.embed_into(x, &mut out);
        out
    }

    /// Best sub-concept score for an already embedded instance.
    #[inline]
    pub(crate) fn label_score_embedded(&self, e: &[f64], label: usize) -> (f64, usize) {
        let m = self.embed_dim;
        let base = self.head_offset(label, 0);
        let heads = &self.heads[base..base + self.sub_concepts * m];
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, h) in heads.chunks_exact(m).enumerate() {
            let s = dot(h, e);
            if s > best.0 {
                best = (s, k);
            }
        }
        best
    }
}

/// Shared-space images of every instance of one bag, computed once and
/// reused for all labels.
#[derive(Debug, Clone)]
pub struct BagEmbedding {
    embed_dim: usize,
    data: Vec<f64>,
}

impl BagEmbedding {
    pub fn new(model: &Model, bag: &Bag) -> Self {
        assert!(!bag.is_empty(), "bag {} is empty", bag.id);
        let m = model.embed_dim;
        let mut data = vec![0.0; m * bag.len()];
        for (out, x) in data.chunks_exact_mut(m).zip(bag.instances()) {
            model.embed_into(x, out);
        }
        BagEmbedding { embed_dim: m, data }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.embed_dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn instance(&self, i: usize) -> &[f64] {
        &self.data[i * self.embed_dim..(i + 1) * self.embed_dim]
    }

    pub fn score(&self, model: &Model, label: usize) -> BagScore {
        let mut best = BagScore { label, score: f64::NEG_INFINITY, key_instance: 0, sub_concept: 0 };
        for (i, e) in self.data.chunks_exact(self.embed_dim).enumerate() {
            let (s, k) = model.label_score_embedded(e, label);
            if s > best.score {
                best.score = s;
                best.key_instance = i;
                best.sub_concept = k;
            }
        }
        best
    }

    /// Bag scores for every label id, dummy last.
    pub fn all_scores(&self, model: &Model) -> Vec<f64> {
        (0..model.label_space.with_dummy()).map(|l| self.score(model, l).score).collect()
    }
}

/// `w_{l,k}ᵀ W0 x`.
pub fn instance_score(model: &Model, x: &[f64], label: usize, k: usize) -> f64 {
    let e = model.embed(x);
    dot(model.head(label, k), &e)
}

/// `max_k w_{l,k}ᵀ W0 x` and the smallest maximizing `k`.
pub fn instance_label_score(model: &Model, x: &[f64], label: usize) -> (f64, usize) {
    assert!(label < model.label_space.with_dummy(), "label {label} out of range");
    let e = model.embed(x);
    model.label_score_embedded(&e, label)
}

/// Maximum over instances of [`instance_label_score`].
pub fn bag_score(model: &Model, bag: &Bag, label: usize) -> BagScore {
    assert!(label < model.label_space.with_dummy(), "label {label} out of range");
    BagEmbedding::new(model, bag).score(model, label)
}

/// Sorts a score vector (indexed by label id) into descending order, ties by
/// ascending id.
pub fn rank_scores(scores: &[f64]) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Every label, dummy included, by descending bag score.
pub fn rank_labels(model: &Model, bag: &Bag) -> Vec<(usize, f64)> {
    rank_scores(&BagEmbedding::new(model, bag).all_scores(model))
}

/// Relevant real labels from a full score vector (dummy score last).
///
/// The dummy rule keeps `l` when `1 + f_l > f_dummy`; under
/// [`Variant::V2TopR`] the `r` best real labels are kept instead.
pub fn relevant_from_scores(model: &Model, scores: &[f64]) -> Vec<usize> {
    let ls = model.label_space;
    assert_eq!(scores.len(), ls.with_dummy());
    match (model.variant, model.top_r) {
        (Variant::V2TopR, Some(r)) => {
            let mut top: Vec<usize> =
                rank_scores(&scores[..ls.num_labels]).into_iter().take(r).map(|(l, _)| l).collect();
            top.sort_unstable();
            top
        }
        _ => {
            let threshold = scores[ls.dummy()];
            (0..ls.num_labels).filter(|&l| 1.0 + scores[l] > threshold).collect()
        }
    }
}

/// Predicted relevant real labels of a bag, sorted by id.
pub fn predict_relevant(model: &Model, bag: &Bag) -> Vec<usize> {
    relevant_from_scores(model, &BagEmbedding::new(model, bag).all_scores(model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{new_model, LabelSpace, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_model(d: usize, labels: usize, k: usize) -> Model {
        let mut w0 = vec![0.0; d * d];
        for i in 0..d {
            w0[i * d + i] = 1.0;
        }
        let heads = vec![0.0; (labels + 1) * k * d];
        Model::from_parts(Variant::Full, d, d, LabelSpace::new(labels).unwrap(), k, 100.0, w0, heads)
            .unwrap()
    }

    fn random_model(seed: u64, d: usize, m: usize, labels: usize, k: usize) -> Model {
        let cfg = TrainConfig { m, k, c: 10.0, ..TrainConfig::default() };
        new_model(d, LabelSpace::new(labels).unwrap(), &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_bag(rng: &mut ChaCha8Rng, z: usize, d: usize) -> Bag {
        let inst = (0..z).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        Bag::new("b", inst, vec![]).unwrap()
    }

    #[test]
    fn identity_projection_picks_coordinate() {
        let mut model = identity_model(2, 1, 1);
        model.head_mut(0, 0).copy_from_slice(&[1.0, 0.0]);
        assert_eq!(instance_score(&model, &[3.0, -1.0], 0, 0), 3.0);
        assert_eq!(instance_score(&model, &[3.0, -1.0], 1, 0), 0.0);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn instance_score_matches_double_loop() {
        let model = random_model(5, 5, 3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        for l in 0..3 {
            for k in 0..2 {
                let w = model.head(l, k);
                let mut expected = 0.0;
                for j in 0..5 {
                    for i in 0..3 {
                        expected += w[i] * model.w0()[i * 5 + j] * x[j];
                    }
                }
                assert!((instance_score(&model, &x, l, k) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sub_concept_ties_pick_smallest_k() {
        let mut model = identity_model(1, 1, 3);
        model.head_mut(0, 0)[0] = 0.2;
        model.head_mut(0, 1)[0] = 0.9;
        model.head_mut(0, 2)[0] = 0.9;
        assert_eq!(instance_label_score(&model, &[1.0], 0), (0.9, 1));
    }

    #[test]
    fn label_score_is_max_over_sub_concepts() {
        let model = random_model(8, 4, 3, 2, 5);
        let x = [0.3, -0.7, 1.1, 0.05];
        let (s, k) = instance_label_score(&model, &x, 1);
        let all: Vec<f64> = (0..5).map(|k| instance_score(&model, &x, 1, k)).collect();
        let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(s, max);
        assert_eq!(all[k], max);
        assert_eq!(all.iter().position(|&v| v == max), Some(k));
    }

    #[test]
    fn bag_score_picks_key_instance() {
        let mut model = identity_model(1, 1, 1);
        model.head_mut(0, 0)[0] = 1.0;
        let bag = Bag::new("b", vec![vec![-1.0], vec![2.0], vec![0.5]], vec![]).unwrap();
        let s = bag_score(&model, &bag, 0);
        assert_eq!((s.score, s.key_instance, s.sub_concept), (2.0, 1, 0));
        let single = Bag::new("s", vec![vec![0.5]], vec![]).unwrap();
        assert_eq!(bag_score(&model, &single, 0).score, instance_label_score(&model, &[0.5], 0).0);
    }

    #[test]
    fn bag_score_matches_enumeration() {
        let model = random_model(21, 6, 4, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bag = random_bag(&mut rng, 7, 6);
        for l in 0..4 {
            let mut best = (f64::NEG_INFINITY, 0, 0);
            for i in 0..7 {
                for k in 0..4 {
                    let s = instance_score(&model, bag.instance(i), l, k);
                    if s > best.0 {
                        best = (s, i, k);
                    }
                }
            }
            let got = bag_score(&model, &bag, l);
            assert!((got.score - best.0).abs() < 1e-12);
            assert_eq!((got.key_instance, got.sub_concept), (best.1, best.2));
        }
    }

    #[test]
    fn ranking_orders_and_breaks_ties() {
        assert_eq!(
            rank_scores(&[0.3, 0.9, 0.5]).iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![1, 2, 0]
        );
        assert_eq!(
            rank_scores(&[0.1; 4]).iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn ranking_consistent_with_pairwise_scores() {
        let model = random_model(30, 5, 3, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let bag = random_bag(&mut rng, 4, 5);
        let ranked = rank_labels(&model, &bag);
        assert_eq!(ranked.len(), 7);
        for w in ranked.windows(2) {
            let a = bag_score(&model, &bag, w[0].0).score;
            let b = bag_score(&model, &bag, w[1].0).score;
            assert!(a > b || (a == b && w[0].0 < w[1].0));
        }
    }

    #[test]
    fn dummy_threshold_rule() {
        let model = identity_model(1, 3, 1);
        assert_eq!(relevant_from_scores(&model, &[0.6, -0.6, -0.4, 0.5]), vec![0, 2]);
        assert!(relevant_from_scores(&model, &[-0.5, -1.0, -2.0, 0.5]).is_empty());
    }

    #[test]
    fn predict_relevant_matches_rank_filter() {
        let model = random_model(77, 4, 3, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let bag = random_bag(&mut rng, 3, 4);
            let ranked = rank_labels(&model, &bag);
            let dummy = ranked.iter().find(|p| p.0 == 5).unwrap().1;
            let mut expected: Vec<usize> =
                ranked.iter().filter(|p| p.0 != 5 && 1.0 + p.1 > dummy).map(|p| p.0).collect();
            expected.sort_unstable();
            assert_eq!(predict_relevant(&model, &bag), expected);
        }
    }

    #[test]
    fn top_r_rule_takes_exactly_r() {
        let mut model = identity_model(1, 4, 1);
        model.set_prediction_rule(Variant::V2TopR, Some(2)).unwrap();
        assert_eq!(relevant_from_scores(&model, &[0.1, 0.9, 0.9, -3.0, 100.0]), vec![1, 2]);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn wrong_dimension_panics() {
        let model = identity_model(2, 1, 1);
        instance_score(&model, &[1.0], 0, 0);
    }

    #[test]
    fn v1_scores_on_raw_features() {
        let ls = LabelSpace::new(1).unwrap();
        let model =
            Model::from_parts(Variant::V1NoSharedSpace, 2, 2, ls, 1, 1.0, vec![], vec![0.5, 2.0, 0.0, 0.0])
                .unwrap();
        assert_eq!(instance_score(&model, &[2.0, 1.0], 0, 0), 3.0);
    }
}
