//! MIML evaluation criteria, key-instance detection accuracy and sub-concept
//! usage.
//!
//! All criteria work on real labels only. Rank positions are taken by
//! descending score with ties broken by ascending label id. Bags whose truth
//! set makes a criterion undefined are skipped and counted.

use serde::{Deserialize, Serialize};

use crate::error::{MimlError, Result};
use crate::scoring::{rank_scores, relevant_from_scores, BagEmbedding};
use crate::types::{Dataset, Model};

/// A criterion averaged over the bags where it is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averaged {
    pub value: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

impl Averaged {
    fn from_terms(terms: impl Iterator<Item = Option<f64>>) -> Self {
        let (mut sum, mut evaluated, mut skipped) = (0.0, 0, 0);
        for t in terms {
            match t {
                Some(v) => {
                    sum += v;
                    evaluated += 1;
                }
                None => skipped += 1,
            }
        }
        let value = if evaluated == 0 { 0.0 } else { sum / evaluated as f64 };
        Averaged { value, evaluated, skipped }
    }
}

fn check_lengths<A, B>(a: &[A], b: &[B]) {
    assert_eq!(a.len(), b.len(), "prediction and truth counts differ");
}

/// Position (0-based) of every label in the ranking induced by `scores`.
fn positions(scores: &[f64]) -> Vec<usize> {
    let mut pos = vec![0; scores.len()];
    for (p, (l, _)) in rank_scores(scores).into_iter().enumerate() {
        pos[l] = p;
    }
    pos
}

/// Mean over bags of `|predicted Δ truth| / L`.
pub fn hamming_loss(predictions: &[Vec<usize>], truths: &[Vec<usize>], num_labels: usize) -> f64 {
    check_lengths(predictions, truths);
    assert!(num_labels > 0);
    if truths.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (pred, truth) in predictions.iter().zip(truths) {
        let mut p = vec![false; num_labels];
        let mut t = vec![false; num_labels];
        for &l in pred {
            assert!(l < num_labels, "label {l} out of range");
            p[l] = true;
        }
        for &l in truth {
            assert!(l < num_labels, "label {l} out of range");
            t[l] = true;
        }
        let diff = p.iter().zip(&t).filter(|(a, b)| a != b).count();
        total += diff as f64 / num_labels as f64;
    }
    total / truths.len() as f64
}

/// Fraction of bags whose top-ranked label is irrelevant.
pub fn one_error(rankings: &[Vec<f64>], truths: &[Vec<usize>]) -> Averaged {
    check_lengths(rankings, truths);
    Averaged::from_terms(rankings.iter().zip(truths).map(|(scores, truth)| {
        if truth.is_empty() {
            return None;
        }
        let top = rank_scores(scores)[0].0;
        Some(if truth.contains(&top) { 0.0 } else { 1.0 })
    }))
}

/// Depth of the deepest relevant label, normalized by `L − 1`.
pub fn coverage(rankings: &[Vec<f64>], truths: &[Vec<usize>]) -> Averaged {
    check_lengths(rankings, truths);
    Averaged::from_terms(rankings.iter().zip(truths).map(|(scores, truth)| {
        if truth.is_empty() {
            return None;
        }
        let l = scores.len();
        if l <= 1 {
            return Some(0.0);
        }
        let pos = positions(scores);
        let depth = truth.iter().map(|&t| pos[t]).max().unwrap_or(0);
        Some(depth as f64 / (l - 1) as f64)
    }))
}

/// Fraction of (relevant, irrelevant) pairs ordered wrongly; ties count 1/2.
pub fn ranking_loss(rankings: &[Vec<f64>], truths: &[Vec<usize>]) -> Averaged {
    check_lengths(rankings, truths);
    Averaged::from_terms(rankings.iter().zip(truths).map(|(scores, truth)| {
        let mut relevant = vec![false; scores.len()];
        truth.iter().for_each(|&t| relevant[t] = true);
        let irrelevant: Vec<f64> =
            scores.iter().zip(&relevant).filter(|(_, &r)| !r).map(|(&s, _)| s).collect();
        if truth.is_empty() || irrelevant.is_empty() {
            return None;
        }
        let mut bad = 0.0;
        for &t in truth {
            let s = scores[t];
            for &u in &irrelevant {
                if u > s {
                    bad += 1.0;
                } else if u == s {
                    bad += 0.5;
                }
            }
        }
        Some(bad / (truth.len() * irrelevant.len()) as f64)
    }))
}

/// Mean precision at the rank of each relevant label.
pub fn average_precision(rankings: &[Vec<f64>], truths: &[Vec<usize>]) -> Averaged {
    check_lengths(rankings, truths);
    Averaged::from_terms(rankings.iter().zip(truths).map(|(scores, truth)| {
        if truth.is_empty() {
            return None;
        }
        let pos = positions(scores);
        let sum: f64 = truth
            .iter()
            .map(|&l| {
                let above = truth.iter().filter(|&&o| pos[o] <= pos[l]).count();
                above as f64 / (pos[l] + 1) as f64
            })
            .sum();
        Some(sum / truth.len() as f64)
    }))
}

/// The five criteria plus optional key-instance and sub-concept figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hamming_loss: f64,
    pub one_error: f64,
    pub coverage: f64,
    pub ranking_loss: f64,
    pub average_precision: f64,
    pub n_bags: usize,
    /// Bags with no relevant label; skipped by the ranking criteria.
    pub empty_truth_bags: usize,
    /// Bags relevant to every label; skipped by ranking loss.
    pub full_truth_bags: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub key_instance_accuracy: Option<f64>,
    /// Winning sub-concept counts, `[label][k]`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sub_concept_histogram: Option<Vec<Vec<usize>>>,
}

impl EvalReport {
    /// Builds a report from per-bag real-label scores and predicted sets.
    pub fn from_predictions(
        rankings: &[Vec<f64>],
        predictions: &[Vec<usize>],
        truths: &[Vec<usize>],
        num_labels: usize,
    ) -> Self {
        let rl = ranking_loss(rankings, truths);
        let oe = one_error(rankings, truths);
        EvalReport {
            hamming_loss: hamming_loss(predictions, truths, num_labels),
            one_error: oe.value,
            coverage: coverage(rankings, truths).value,
            ranking_loss: rl.value,
            average_precision: average_precision(rankings, truths).value,
            n_bags: truths.len(),
            empty_truth_bags: oe.skipped,
            full_truth_bags: rl.skipped - oe.skipped,
            key_instance_accuracy: None,
            sub_concept_histogram: None,
        }
    }

    /// Flat `key value` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "hamming_loss {:.6}\none_error {:.6}\ncoverage {:.6}\nranking_loss {:.6}\naverage_precision {:.6}\nn_bags {}\nempty_truth_bags {}\nfull_truth_bags {}\n",
            self.hamming_loss,
            self.one_error,
            self.coverage,
            self.ranking_loss,
            self.average_precision,
            self.n_bags,
            self.empty_truth_bags,
            self.full_truth_bags,
        );
        if let Some(acc) = self.key_instance_accuracy {
            out.push_str(&format!("key_instance_accuracy {acc:.6}\n"));
        }
        if let Some(hist) = &self.sub_concept_histogram {
            for (l, row) in hist.iter().enumerate() {
                let counts: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                out.push_str(&format!("sub_concepts[{l}] {}\n", counts.join(" ")));
            }
        }
        out
    }

    /// One JSON object on a single line.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Per-bag real-label scores and predicted relevant sets.
pub fn score_dataset(model: &Model, dataset: &Dataset) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let l = model.label_space().num_labels;
    dataset
        .bags
        .iter()
        .map(|bag| {
            let scores = BagEmbedding::new(model, bag).all_scores(model);
            let predicted = relevant_from_scores(model, &scores);
            (scores[..l].to_vec(), predicted)
        })
        .unzip()
}

/// Ranking loss of `model` on `dataset`, or `None` when no bag defines it.
pub fn dataset_ranking_loss(model: &Model, dataset: &Dataset) -> Option<f64> {
    let (rankings, _) = score_dataset(model, dataset);
    let truths: Vec<Vec<usize>> = dataset.bags.iter().map(|b| b.labels.clone()).collect();
    let rl = ranking_loss(&rankings, &truths);
    (rl.evaluated > 0).then_some(rl.value)
}

pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<EvalReport> {
    check_compatible(model, dataset)?;
    let (rankings, predictions) = score_dataset(model, dataset);
    let truths: Vec<Vec<usize>> = dataset.bags.iter().map(|b| b.labels.clone()).collect();
    Ok(EvalReport::from_predictions(
        &rankings,
        &predictions,
        &truths,
        dataset.label_space.num_labels,
    ))
}

pub(crate) fn check_compatible(model: &Model, dataset: &Dataset) -> Result<()> {
    if model.feature_dim() != dataset.feature_dim {
        return Err(MimlError::Dimension { expected: model.feature_dim(), found: dataset.feature_dim });
    }
    if model.label_space() != dataset.label_space {
        return Err(MimlError::Dimension {
            expected: model.label_space().num_labels,
            found: dataset.label_space.num_labels,
        });
    }
    Ok(())
}

/// Fraction of (bag, relevant label) pairs whose detected key instance
/// carries that label in the instance annotations.
pub fn key_instance_accuracy(model: &Model, dataset: &Dataset) -> Result<f64> {
    check_compatible(model, dataset)?;
    let (mut hits, mut pairs) = (0usize, 0usize);
    for bag in &dataset.bags {
        let Some(annotations) = &bag.instance_labels else {
            return Err(MimlError::Config(format!("bag {} has no instance annotations", bag.id)));
        };
        let emb = BagEmbedding::new(model, bag);
        for &l in &bag.labels {
            pairs += 1;
            let key = emb.score(model, l).key_instance;
            if annotations[key].binary_search(&l).is_ok() {
                hits += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(MimlError::Config("dataset has no (bag, relevant label) pairs".into()));
    }
    Ok(hits as f64 / pairs as f64)
}

/// Winning sub-concept counts over every (bag, relevant label) pair,
/// indexed `[label][k]`.
pub fn sub_concept_report(model: &Model, dataset: &Dataset) -> Result<Vec<Vec<usize>>> {
    check_compatible(model, dataset)?;
    let mut hist = vec![vec![0usize; model.sub_concepts()]; dataset.label_space.num_labels];
    for bag in &dataset.bags {
        let emb = BagEmbedding::new(model, bag);
        for &l in &bag.labels {
            hist[l][emb.score(model, l).sub_concept] += 1;
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamming_cases() {
        let truth = vec![vec![0, 1], vec![2]];
        assert_eq!(hamming_loss(&truth, &truth, 4), 0.0);
        let complement = vec![vec![2, 3], vec![0, 1, 3]];
        assert_eq!(hamming_loss(&complement, &truth, 4), 1.0);
        assert_eq!(hamming_loss(&[vec![1, 2]], &[vec![0, 1]], 4), 0.5);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn hamming_rejects_bad_label() {
        hamming_loss(&[vec![7]], &[vec![0]], 4);
    }

    #[test]
    fn one_error_cases() {
        let r = vec![vec![0.9, 0.1, 0.0], vec![0.1, 0.9, 0.0], vec![0.0, 0.1, 0.9]];
        let good = vec![vec![0], vec![1], vec![2]];
        assert_eq!(one_error(&r, &good).value, 0.0);
        let bad = vec![vec![1], vec![2], vec![0]];
        assert_eq!(one_error(&r, &bad).value, 1.0);
        let mixed = vec![vec![0], vec![1], vec![0, 1]];
        assert!((one_error(&r, &mixed).value - 1.0 / 3.0).abs() < 1e-15);
        let with_empty = vec![vec![0], vec![], vec![2]];
        let a = one_error(&r, &with_empty);
        assert_eq!((a.value, a.evaluated, a.skipped), (0.0, 2, 1));
    }

    #[test]
    fn coverage_cases() {
        let r = vec![vec![0.9, 0.8, 0.1, 0.0]];
        assert!((coverage(&r, &[vec![0, 1]]).value - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(coverage(&r, &[vec![3]]).value, 1.0);
        assert_eq!(coverage(&r, &[vec![0]]).value, 0.0);
    }

    #[test]
    fn ranking_loss_cases() {
        let r = vec![vec![0.9, 0.8, 0.1, 0.0]];
        assert_eq!(ranking_loss(&r, &[vec![0, 1]]).value, 0.0);
        assert_eq!(ranking_loss(&r, &[vec![2, 3]]).value, 1.0);
        assert_eq!(ranking_loss(&r, &[vec![0, 2]]).value, 0.25);
        let tie = vec![vec![0.5, 0.5]];
        assert_eq!(ranking_loss(&tie, &[vec![0]]).value, 0.5);
        assert_eq!(ranking_loss(&tie, &[vec![0, 1]]).skipped, 1);
    }

    #[test]
    fn average_precision_cases() {
        let r = vec![vec![0.9, 0.8, 0.1, 0.0]];
        assert_eq!(average_precision(&r, &[vec![0, 1]]).value, 1.0);
        assert_eq!(average_precision(&[vec![0.9, 0.1]], &[vec![1]]).value, 0.5);
        // relevant at ranks 1 and 3: (1/1 + 2/3) / 2
        assert!((average_precision(&r, &[vec![0, 2]]).value - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ties_rank_by_ascending_id() {
        let r = vec![vec![0.5, 0.5, 0.5]];
        assert_eq!(one_error(&r, &[vec![0]]).value, 0.0);
        assert_eq!(one_error(&r, &[vec![1]]).value, 1.0);
        assert_eq!(coverage(&r, &[vec![2]]).value, 1.0);
    }

    #[test]
    fn report_text_and_record() {
        let r = vec![vec![0.9, 0.1]];
        let mut rep = EvalReport::from_predictions(&r, &[vec![0]], &[vec![0]], 2);
        rep.key_instance_accuracy = Some(0.5);
        let text = rep.to_text();
        assert!(text.contains("hamming_loss 0.000000"));
        assert!(text.contains("average_precision 1.000000"));
        assert!(text.contains("key_instance_accuracy 0.500000"));
        let back: EvalReport = serde_json::from_str(&rep.to_record()).unwrap();
        assert_eq!(back, rep);
        assert!(!rep.to_record().contains('\n'));
    }
}
